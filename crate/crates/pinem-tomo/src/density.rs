//! Density matrices, the Frobenius projection onto them, and the state
//! generators used in the reconstruction experiments.

use crate::special::bessel_j_seq;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use statrs::distribution::{ContinuousCDF, Normal};

const HERMITIAN_REL_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// A Hermitian `N x N` matrix; the domain of the forward operator.
///
/// Construction verifies `||H - H*||_F <= 1e-12 ||H||_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    entries: DMatrix<Complex64>,
}

/// A density matrix: Hermitian, positive semidefinite (eigenvalues above
/// `-1e-10`) and unit trace. The feasible set of the constrained solver.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    entries: DMatrix<Complex64>,
}

fn hermitian_defect(m: &DMatrix<Complex64>) -> (f64, f64) {
    let mut defect = 0.0f64;
    let mut norm = 0.0f64;
    for j in 0..m.nrows() {
        for k in 0..m.ncols() {
            norm += m[(j, k)].norm_sqr();
            defect += (m[(j, k)] - m[(k, j)].conj()).norm_sqr();
        }
    }
    (defect.sqrt() / 2.0, norm.sqrt())
}

impl HermitianMatrix {
    /// Validates Hermiticity and wraps the matrix.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::Shape(format!(
                "expected square nonempty matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Matrix("non-finite entries".into()));
        }
        let (defect, norm) = hermitian_defect(&entries);
        if defect > HERMITIAN_REL_TOL * norm {
            return Err(Error::Matrix(format!(
                "not Hermitian: defect {defect:e} vs norm {norm:e}"
            )));
        }
        Ok(HermitianMatrix { entries })
    }

    /// Symmetrizes `(H + H*)/2` and wraps without further checks; used for
    /// solver iterates whose Hermiticity only drifts by rounding.
    pub fn hermitized(mut entries: DMatrix<Complex64>) -> Self {
        let n = entries.nrows();
        for j in 0..n {
            entries[(j, j)] = Complex64::new(entries[(j, j)].re, 0.0);
            for k in j + 1..n {
                let avg = 0.5 * (entries[(j, k)] + entries[(k, j)].conj());
                entries[(j, k)] = avg;
                entries[(k, j)] = avg.conj();
            }
        }
        HermitianMatrix { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<Complex64> {
        self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

impl DensityMatrix {
    /// Validates all density-matrix invariants.
    ///
    /// Positive semidefiniteness is certified by the cheap diagonal
    /// dominance test first and by an eigendecomposition only when that
    /// fails, so generator outputs of moderate size stay O(N^2) to check.
    pub fn new(entries: DMatrix<Complex64>) -> Result<Self> {
        let h = HermitianMatrix::new(entries)?;
        let trace = h.entries.diagonal().iter().map(|z| z.re).sum::<f64>();
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::Matrix(format!("trace {trace} is not 1")));
        }
        if !gershgorin_psd_check(&h) {
            let eigs = nalgebra::SymmetricEigen::new(h.entries.clone()).eigenvalues;
            let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < -PSD_TOL {
                return Err(Error::Matrix(format!("smallest eigenvalue {min:e}")));
            }
        }
        Ok(DensityMatrix { entries: h.entries })
    }

    /// Wraps entries whose invariants are guaranteed by construction
    /// (projection output, convex mixtures of projectors).
    pub(crate) fn from_verified(entries: DMatrix<Complex64>) -> Self {
        DensityMatrix { entries }
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        self.entries.diagonal().iter().map(|z| z.re).sum()
    }

    /// `tr(rho^2)`; equals 1 exactly for pure states.
    pub fn purity(&self) -> f64 {
        // tr(rho^2) = ||rho||_F^2 for Hermitian rho.
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn as_hermitian(&self) -> HermitianMatrix {
        HermitianMatrix {
            entries: self.entries.clone(),
        }
    }
}

impl From<DensityMatrix> for HermitianMatrix {
    fn from(d: DensityMatrix) -> Self {
        HermitianMatrix { entries: d.entries }
    }
}

/// Diagonal-dominance certificate for positive semidefiniteness:
/// `H_jj >= sum_{k != j} |H_jk|` for every row.
///
/// Sufficient but not necessary; e.g. the flat window states fail it while
/// being rank-one projectors.
pub fn gershgorin_psd_check(h: &HermitianMatrix) -> bool {
    let n = h.n();
    for j in 0..n {
        let diag = h.entries[(j, j)].re;
        if diag < 0.0 {
            return false;
        }
        let off: f64 = (0..n)
            .filter(|&k| k != j)
            .map(|k| h.entries[(j, k)].norm())
            .sum();
        if diag < off {
            return false;
        }
    }
    true
}

/// Euclidean projection of the eigenvalue vector onto the probability
/// simplex, by sort and threshold.
fn project_simplex(lambda: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = lambda.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &mu) in sorted.iter().enumerate() {
        cumsum += mu;
        let cand = (cumsum - 1.0) / (i + 1) as f64;
        if mu - cand > 0.0 {
            theta = cand;
        }
    }
    lambda.map(|v| (v - theta).max(0.0))
}

/// Frobenius-nearest density matrix: eigendecompose the Hermitized input,
/// project the spectrum onto the simplex, recompose. Idempotent and
/// non-expansive.
pub fn project_to_density(h: &HermitianMatrix) -> Result<DensityMatrix> {
    if h.entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Matrix("non-finite entries".into()));
    }
    let sym = HermitianMatrix::hermitized(h.entries.clone());
    let eig = nalgebra::SymmetricEigen::new(sym.entries);
    let lambda = project_simplex(&eig.eigenvalues);
    let n = lambda.len();
    // V diag(lambda) V^*
    let mut scaled = eig.eigenvectors.clone();
    for c in 0..n {
        let s = Complex64::new(lambda[c], 0.0);
        for r in 0..n {
            scaled[(r, c)] *= s;
        }
    }
    let out = scaled * eig.eigenvectors.adjoint();
    // Recomposition drifts off Hermitian by rounding only.
    let sym = HermitianMatrix::hermitized(out);
    Ok(DensityMatrix::from_verified(sym.entries))
}

/// Model of the electron state after a PINEM pump of coupling `g_pump`,
/// with phase jitter making it slightly mixed.
///
/// The pure state at phase `phi` has amplitudes
/// `psi_k = e^{i k phi} J_{k-c}(2 g_pump)` around the centered index
/// `c = (N-1)/2`; the output mixes `n_mix` such projectors with equal
/// weights over the Gaussian quantile nodes
/// `phi_m = jitter_sigma * Phi^{-1}((m + 1/2) / n_mix)`, a deterministic
/// equal-weight quadrature of the jitter distribution. The result is
/// normalized to unit trace (the window truncates a tail of at most the
/// same order as machine rounding for the parameters of interest).
///
/// Requires odd `N` so the zero-energy index sits in the middle.
pub fn simulate_pinem_state(
    g_pump: f64,
    jitter_sigma: f64,
    n_mix: usize,
    n: usize,
) -> Result<DensityMatrix> {
    if !(g_pump >= 0.0) || !(jitter_sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "couplings must be nonnegative, got g_pump={g_pump}, jitter_sigma={jitter_sigma}"
        )));
    }
    if n_mix == 0 {
        return Err(Error::Parameter("n_mix must be at least 1".into()));
    }
    if n % 2 == 0 {
        return Err(Error::Parameter(format!(
            "N = {n} has no centered index; N must be odd"
        )));
    }
    let c = (n - 1) / 2;
    let js = bessel_j_seq(n, 2.0 * g_pump);
    let amp = |k: usize| -> f64 {
        let d = k as i64 - c as i64;
        let v = js[d.unsigned_abs() as usize];
        if d < 0 && d % 2 != 0 {
            -v
        } else {
            v
        }
    };

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rho = DMatrix::<Complex64>::zeros(n, n);
    for m in 0..n_mix {
        let q = (m as f64 + 0.5) / n_mix as f64;
        let phi = jitter_sigma * normal.inverse_cdf(q);
        let psi: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(amp(k), k as f64 * phi))
            .collect();
        for j in 0..n {
            for k in 0..n {
                rho[(j, k)] += psi[j] * psi[k].conj();
            }
        }
    }
    let trace: f64 = rho.diagonal().iter().map(|z| z.re).sum();
    let rho = rho.map(|z| z / trace);
    // Equal-weight mixture of projectors, normalized: PSD and unit trace
    // hold by construction.
    let sym = HermitianMatrix::hermitized(rho);
    Ok(DensityMatrix::from_verified(sym.entries))
}

/// The flat window state: value `1/w` on the centered `w x w` block
/// starting at `floor((N-w)/2)`, zero elsewhere. Rank one with unit trace.
pub fn square_state(n: usize, w: usize) -> Result<DensityMatrix> {
    if w == 0 || w > n {
        return Err(Error::Parameter(format!(
            "window width {w} outside 1..={n}"
        )));
    }
    let a = (n - w) / 2;
    let mut rho = DMatrix::<Complex64>::zeros(n, n);
    let v = Complex64::new(1.0 / w as f64, 0.0);
    for j in a..a + w {
        for k in a..a + w {
            rho[(j, k)] = v;
        }
    }
    Ok(DensityMatrix::from_verified(rho))
}
