//! Discrete Fourier transforms in the conventions used by the operator
//! decomposition.
//!
//! Three scalings appear in the chain and are easy to mix up, so they are
//! pinned here once:
//!
//! * plain forward: `(F v)_k = sum_j v_j e^{-2 pi i jk/L}`,
//! * plain inverse: `(B v)_k = sum_j v_j e^{+2 pi i jk/L}` (no `1/L`),
//! * unitary: plain forward/inverse divided by `sqrt(L)`.
//!
//! `rustfft` computes exactly the two plain sums; mixed-radix and Bluestein
//! plans make arbitrary (always odd here) lengths cheap.

use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::sync::Arc;

/// Precomputed forward/inverse plans for one transform length.
#[derive(Clone)]
pub struct FftPair {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            len,
            fwd: planner.plan_fft(len, FftDirection::Forward),
            inv: planner.plan_fft(len, FftDirection::Inverse),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place plain forward transform of each `len`-sized chunk.
    pub fn forward_inplace(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len() % self.len, 0);
        self.fwd.process(data_chunks(data, self.len));
    }

    /// In-place plain (unnormalized) inverse transform of each chunk.
    pub fn inverse_inplace(&self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len() % self.len, 0);
        self.inv.process(data_chunks(data, self.len));
    }
}

impl std::fmt::Debug for FftPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPair").field("len", &self.len).finish()
    }
}

fn data_chunks(data: &mut [Complex64], _len: usize) -> &mut [Complex64] {
    // rustfft's process() treats the buffer as contiguous chunks itself.
    data
}

/// Unitary DFT `(1/sqrt(L)) sum_j v_j e^{-2 pi i jk/L}`.
///
/// Errors on empty input; preserves the 2-norm to rounding.
pub fn unitary_dft(v: &[Complex64]) -> Result<Vec<Complex64>> {
    if v.is_empty() {
        return Err(Error::Parameter("unitary_dft: empty input".into()));
    }
    let mut out = v.to_vec();
    FftPair::new(v.len()).forward_inplace(&mut out);
    let s = 1.0 / (v.len() as f64).sqrt();
    out.iter_mut().for_each(|z| *z *= s);
    Ok(out)
}

/// Unitary inverse DFT, the exact inverse of [`unitary_dft`].
pub fn unitary_idft(v: &[Complex64]) -> Result<Vec<Complex64>> {
    if v.is_empty() {
        return Err(Error::Parameter("unitary_idft: empty input".into()));
    }
    let mut out = v.to_vec();
    FftPair::new(v.len()).inverse_inplace(&mut out);
    let s = 1.0 / (v.len() as f64).sqrt();
    out.iter_mut().for_each(|z| *z *= s);
    Ok(out)
}
