//! Quantum state tomography for photon-induced near-field electron
//! microscopy (PINEM).
//!
//! The measurement model maps a density matrix `rho` on the truncated
//! energy ladder `{0, .., N-1}` to a spectrogram `y(theta, l)`, the
//! electron energy distribution after interaction with a light field of
//! coupling strength `g`, recorded for a set of mixing angles `theta`.
//! This crate provides
//!
//! * the truncated forward operator, both as a direct quadratic-cost sum
//!   and as an FFT decomposition over off-diagonals ([`operator`]),
//! * generators for the instability sequences that witness the
//!   ill-posedness of the inversion ([`sequences`]),
//! * unconstrained (CG) and density-constrained (projected gradient)
//!   reconstruction solvers ([`solvers`]),
//! * injectivity, conditioning and rate diagnostics plus the experiment
//!   drivers behind the `pinem-tomo` CLI ([`analysis`]).

pub mod analysis;
pub mod density;
pub mod dft;
mod error;
pub mod io;
pub mod operator;
pub mod sequences;
pub mod solvers;
pub mod special;

pub use error::{Error, Result};

/// Maps the storage index `n` in `{0, .., 2N-2}` to the signed
/// off-diagonal (or frequency) index in `{-N+1, .., N-1}`.
///
/// The first `N` slots keep their value, the remaining `N-1` wrap to the
/// negative range: `phi_index(4, 3) == -1`. The map is a bijection and is
/// its own inverse up to the `mod 2N-1` identification used by the DFT.
///
/// # Panics
/// Panics if `n >= 2N-1`.
pub fn phi_index(n: usize, size: usize) -> i64 {
    let l = 2 * size - 1;
    assert!(n < l, "index {n} outside 0..{l}");
    if n < size {
        n as i64
    } else {
        n as i64 - l as i64
    }
}

/// Inverse of [`phi_index`]: storage row of the signed index `d`.
pub fn row_of(d: i64, size: usize) -> usize {
    let l = (2 * size - 1) as i64;
    debug_assert!(d.abs() < size as i64);
    if d >= 0 {
        d as usize
    } else {
        (d + l) as usize
    }
}
