//! Structured state pairs that witness the operator's instability.
//!
//! Each generator returns a pair (rho, sigma) of states whose difference
//! is supported on the +-k off-diagonals alone and whose separation has a
//! closed form. Pushing the pairs through the reduced operator produces
//! the decay curves the experiments measure: the uniform pair pins the
//! failure of uniform continuity, the hat family realizes any band-limited
//! modulus of continuity, the dyadic polynomial family any polynomial
//! rate, and the corner probe lower-bounds the inverse norm.
//!
//! The hat and uniform members are exact density matrices. The polynomial
//! members keep the truncated geometric trace (slightly below one): the
//! separation identity here is exact only without renormalization, so the
//! pair is returned as plain Hermitian matrices like the others.

use crate::density::{gershgorin_psd_check, HermitianMatrix};
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Which construction produced an [`InstabilityPair`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Hat,
    Polynomial,
    Uniform,
}

/// A pair of states with closed-form separation, plus the parameters that
/// generated it.
#[derive(Debug, Clone)]
pub struct InstabilityPair {
    pub rho: HermitianMatrix,
    pub sigma: HermitianMatrix,
    pub family: Family,
    /// Off-diagonal index carrying the difference (the matrix offset, so
    /// `2^k` for the polynomial family's parameter k).
    pub offset: usize,
    /// Hat width parameter.
    pub n: Option<f64>,
    /// Hat tail exponent.
    pub eps: Option<f64>,
    /// Polynomial decay exponent.
    pub mu: Option<f64>,
    /// Closed-form Frobenius separation: exact for the uniform and
    /// polynomial families, the untruncated-lattice identity for the hat
    /// family (truncation error decays like (n/N)^3).
    pub separation: f64,
}

impl InstabilityPair {
    /// Frobenius norm of sigma - rho computed from the entries.
    pub fn measured_separation(&self) -> f64 {
        let a = self.sigma.entries();
        let b = self.rho.entries();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// The difference sigma - rho of any pair family, stored as the single
/// off-diagonal that carries it: `entries[j] = (sigma - rho)_{j, j+offset}`.
/// This is the whole difference in O(N) storage, which is what lets the
/// norm experiments run at sizes where the dense pair would not fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceProfile {
    pub offset: usize,
    pub size: usize,
    pub entries: Vec<f64>,
}

impl DifferenceProfile {
    /// Frobenius norm of the full Hermitian difference; the mirrored
    /// off-diagonal doubles the energy.
    pub fn norm(&self) -> f64 {
        (2.0 * self.entries.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// The difference as a dense Hermitian matrix.
    pub fn to_matrix(&self) -> HermitianMatrix {
        let mut m = DMatrix::<Complex64>::zeros(self.size, self.size);
        for (j, &v) in self.entries.iter().enumerate() {
            m[(j, j + self.offset)] = Complex64::new(v, 0.0);
            m[(j + self.offset, j)] = Complex64::new(v, 0.0);
        }
        HermitianMatrix::hermitized(m)
    }
}

/// Fourier coefficient of the unit triangular hat of half-width 1/n:
/// `(2n/sqrt(2 pi)) (1 - cos(l/n)) / l^2` for `l != 0` and
/// `1/(sqrt(2 pi) n)` at `l = 0`, evaluated in the cancellation-free
/// `sin^2` form. Nonnegative and symmetric in `l`; the coefficients sum
/// to `sqrt(2 pi)` and their squares to `2/(3n)`.
pub fn hat_fourier(n: f64, l: i64) -> Result<f64> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Parameter(format!(
            "hat width must be positive and finite, got {n}"
        )));
    }
    Ok(hat_value(n, l))
}

fn hat_value(n: f64, l: i64) -> f64 {
    let s2pi = (2.0 * PI).sqrt();
    if l == 0 {
        return 1.0 / (s2pi * n);
    }
    let lf = l as f64;
    let sin_half = (lf / (2.0 * n)).sin();
    4.0 * n * sin_half * sin_half / (s2pi * lf * lf)
}

/// Diagonal of the reference state before normalization:
/// `(4/sqrt(2 pi)) |l|^{-1-eps}` away from zero and `4/sqrt(2 pi)` at it.
fn tau_diag(eps: f64, l: i64) -> f64 {
    let c = 4.0 / (2.0 * PI).sqrt();
    if l == 0 {
        c
    } else {
        c * (l.unsigned_abs() as f64).powf(-1.0 - eps)
    }
}

fn check_hat_params(n: f64, k: usize, eps: f64, size: usize) -> Result<()> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Parameter(format!("width must be positive, got {n}")));
    }
    if k == 0 {
        return Err(Error::Parameter("off-diagonal index must be positive".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Parameter(format!(
            "tail exponent must lie in (0,1), got {eps}"
        )));
    }
    if k >= size {
        return Err(Error::Parameter(format!(
            "off-diagonal {k} does not fit in size {size}"
        )));
    }
    Ok(())
}

/// Truncated trace of the reference state, with the lattice centered so
/// site 0 sits at row `size/2`.
fn hat_truncated_trace(eps: f64, size: usize) -> f64 {
    let c = (size / 2) as i64;
    (0..size as i64).map(|j| tau_diag(eps, j - c)).sum()
}

/// Off-diagonal profile of the hat pair difference without materializing
/// the matrices. Entry j is `(1/(2 tr tau)) (2k)^{-1-eps} n^{-eps}
/// hhat^{(n)}(j - size/2)`.
pub fn hat_difference_profile(
    n: f64,
    k: usize,
    eps: f64,
    size: usize,
) -> Result<DifferenceProfile> {
    check_hat_params(n, k, eps, size)?;
    let c = (size / 2) as i64;
    let trace = hat_truncated_trace(eps, size);
    let cfac = 0.5 * (2.0 * k as f64).powf(-1.0 - eps) * n.powf(-eps) / trace;
    let entries = (0..size - k)
        .map(|j| cfac * hat_value(n, j as i64 - c))
        .collect();
    Ok(DifferenceProfile {
        offset: k,
        size,
        entries,
    })
}

/// The hat pair: reference state `tau(eps)` with polynomial diagonal decay
/// and perturbed state `tau + eta(n,k,eps)`, both normalized by the
/// truncated trace of tau, with the lattice centered in `{0, .., size-1}`.
/// The separation obeys
///
/// `|sigma - rho|_F = (1/tr tau) (1/sqrt(3)) (2k)^{-1-eps} n^{-1/2-eps}`
///
/// up to lattice truncation; both members are exact density matrices and
/// pass the diagonal-dominance certificate.
pub fn make_hat_pair(n: f64, k: usize, eps: f64, size: usize) -> Result<InstabilityPair> {
    let profile = hat_difference_profile(n, k, eps, size)?;
    let c = (size / 2) as i64;
    let trace = hat_truncated_trace(eps, size);
    let mut rho = DMatrix::<Complex64>::zeros(size, size);
    for j in 0..size {
        rho[(j, j)] = Complex64::new(tau_diag(eps, j as i64 - c) / trace, 0.0);
    }
    let mut sigma = rho.clone();
    for (j, &v) in profile.entries.iter().enumerate() {
        sigma[(j, j + k)] = Complex64::new(v, 0.0);
        sigma[(j + k, j)] = Complex64::new(v, 0.0);
    }
    let separation = (2.0 * k as f64).powf(-1.0 - eps) * n.powf(-0.5 - eps) / (3f64.sqrt() * trace);
    Ok(InstabilityPair {
        rho: HermitianMatrix::hermitized(rho),
        sigma: HermitianMatrix::hermitized(sigma),
        family: Family::Hat,
        offset: k,
        n: Some(n),
        eps: Some(eps),
        mu: None,
        separation,
    })
}

/// Width schedule `n(k) = b^{-k/eps}` that turns the hat family's
/// polynomial decay in n into exponential decay in k.
pub fn exponential_schedule(k: i64, b: f64, eps: f64) -> Result<f64> {
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::Parameter(format!(
            "base must lie in (0,1), got {b}"
        )));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Parameter(format!(
            "exponent must be positive, got {eps}"
        )));
    }
    Ok(b.powf(-(k as f64) / eps))
}

fn dyadic_sites(size: usize) -> Vec<(usize, u32)> {
    // Site 0 carries exponent 0; site 2^l carries exponent l for l >= 1.
    let mut sites = vec![(0usize, 0u32)];
    let mut l = 1u32;
    while (1usize << l) < size {
        sites.push((1usize << l, l));
        l += 1;
    }
    sites
}

/// Off-diagonal profile of the polynomial pair difference: the single
/// entry `(1 - 2^{-mu}) 2^{-mu k}` at `(0, 2^k)`.
pub fn poly_difference_profile(k: u32, mu: f64, size: usize) -> Result<DifferenceProfile> {
    if k == 0 {
        return Err(Error::Parameter("dyadic index must be positive".into()));
    }
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Parameter(format!(
            "decay exponent must be positive, got {mu}"
        )));
    }
    if k as usize >= usize::BITS as usize - 1 || (1usize << k) >= size {
        return Err(Error::Parameter(format!(
            "dyadic site 2^{k} does not fit in size {size}"
        )));
    }
    let offset = 1usize << k;
    let mut entries = vec![0.0; size - offset];
    entries[0] = (1.0 - 2f64.powf(-mu)) * 2f64.powf(-mu * k as f64);
    Ok(DifferenceProfile {
        offset,
        size,
        entries,
    })
}

/// The dyadic polynomial pair: diagonal weights `(1 - 2^{-mu}) 2^{-mu l}`
/// on sites `2^l` (site 0 carries `l = 0`), perturbed by one symmetric
/// entry at `(0, 2^k)`. The members keep the truncated geometric trace
/// `1 - 2^{-mu(floor(log2(size-1)) + 1)}`, and the separation
///
/// `|sigma - rho|_F = sqrt(2) (1 - 2^{-mu}) 2^{-mu k}`
///
/// is exact.
pub fn make_poly_pair(k: u32, mu: f64, size: usize) -> Result<InstabilityPair> {
    let profile = poly_difference_profile(k, mu, size)?;
    let head = 1.0 - 2f64.powf(-mu);
    let mut rho = DMatrix::<Complex64>::zeros(size, size);
    for (site, l) in dyadic_sites(size) {
        rho[(site, site)] = Complex64::new(head * 2f64.powf(-mu * l as f64), 0.0);
    }
    let mut sigma = rho.clone();
    let v = profile.entries[0];
    sigma[(0, profile.offset)] = Complex64::new(v, 0.0);
    sigma[(profile.offset, 0)] = Complex64::new(v, 0.0);
    Ok(InstabilityPair {
        rho: HermitianMatrix::hermitized(rho),
        sigma: HermitianMatrix::hermitized(sigma),
        family: Family::Polynomial,
        offset: profile.offset,
        n: None,
        eps: None,
        mu: Some(mu),
        separation: 2f64.sqrt() * v,
    })
}

/// Off-diagonal profile of the uniform pair difference: the single entry
/// 1/2 at `(0, k)`.
pub fn uniform_difference_profile(k: usize, size: usize) -> Result<DifferenceProfile> {
    if k == 0 {
        return Err(Error::Parameter("off-diagonal index must be positive".into()));
    }
    if k >= size {
        return Err(Error::Parameter(format!(
            "off-diagonal {k} does not fit in size {size}"
        )));
    }
    let mut entries = vec![0.0; size - k];
    entries[0] = 0.5;
    Ok(DifferenceProfile {
        offset: k,
        size,
        entries,
    })
}

/// The equal-weight pair: rho puts mass 1/2 on levels 0 and k, sigma is
/// the rank-one state constant on the same block. Their separation is
/// `1/sqrt(2)` for every k, while the forward images approach each other
/// as k grows; this is the failure of uniform continuity in its simplest
/// form.
pub fn make_uniform_pair(k: usize, size: usize) -> Result<InstabilityPair> {
    uniform_difference_profile(k, size)?;
    let mut rho = DMatrix::<Complex64>::zeros(size, size);
    rho[(0, 0)] = Complex64::new(0.5, 0.0);
    rho[(k, k)] = Complex64::new(0.5, 0.0);
    let mut sigma = rho.clone();
    sigma[(0, k)] = Complex64::new(0.5, 0.0);
    sigma[(k, 0)] = Complex64::new(0.5, 0.0);
    Ok(InstabilityPair {
        rho: HermitianMatrix::hermitized(rho),
        sigma: HermitianMatrix::hermitized(sigma),
        family: Family::Uniform,
        offset: k,
        n: None,
        eps: None,
        mu: None,
        separation: 0.5f64.sqrt(),
    })
}

/// The corner probe: unit entries at `(0, size-1)` and `(size-1, 0)`,
/// Frobenius norm `sqrt(2)`, eigenvalues +-1 (not a state). Its forward
/// image collapses with size, which turns into the inverse-norm lower
/// bound.
pub fn make_corner_probe(size: usize) -> Result<HermitianMatrix> {
    if size < 2 {
        return Err(Error::Parameter(format!(
            "corner probe needs size >= 2, got {size}"
        )));
    }
    let mut m = DMatrix::<Complex64>::zeros(size, size);
    m[(0, size - 1)] = Complex64::new(1.0, 0.0);
    m[(size - 1, 0)] = Complex64::new(1.0, 0.0);
    Ok(HermitianMatrix::hermitized(m))
}

/// True when sigma's diagonal dominance certificate holds; re-exported
/// assertion used across the generator tests.
pub fn pair_is_certified(pair: &InstabilityPair) -> bool {
    gershgorin_psd_check(&pair.rho) && gershgorin_psd_check(&pair.sigma)
}
