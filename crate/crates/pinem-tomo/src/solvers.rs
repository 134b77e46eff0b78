//! Reconstruction from spectrogram data.
//!
//! Two solvers for `argmin |forward(rho) - y|`: conjugate gradients on the
//! normal equations over the unconstrained Hermitian space, and projected
//! gradient descent over the density set. Both stop on the discrepancy
//! rule (residual within 1.1 of the noise level), on stagnation, or at the
//! iteration cap. CG works directly on Hermitian matrices under the real
//! Frobenius pairing `<a, b> = Re tr(a* b)`, which is the same inner
//! product space as the real coordinate basis used by the dense assembly.

use crate::density::{project_to_density, DensityMatrix, HermitianMatrix};
use crate::operator::{ForwardOperator, Spectrogram};
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::Normal;

/// Iterations of the stagnation window: stop when the residual drops by
/// less than [`STAGNATION_TOL`] relative over this many iterations.
const STAGNATION_WINDOW: usize = 10;
const STAGNATION_TOL: f64 = 1e-14;

/// Residual threshold factor for the discrepancy rule.
const DISCREPANCY_FACTOR: f64 = 1.1;

/// Fixed seed for the power-iteration start so auto step sizes are
/// bit-reproducible.
const POWER_ITERATION_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const POWER_ITERATIONS: usize = 30;

/// Why a solver returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Residual reached 1.1 times the noise level.
    Discrepancy,
    /// Iteration cap reached.
    MaxIter,
    /// Residual decrease below 1e-14 relative over ten iterations.
    Stagnation,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Discrepancy => "discrepancy",
            StopReason::MaxIter => "max_iter",
            StopReason::Stagnation => "stagnation",
        }
    }
}

/// Solver output: unconstrained estimates are plain Hermitian, constrained
/// ones carry the density certificate.
#[derive(Debug, Clone)]
pub enum Estimate {
    Unconstrained(HermitianMatrix),
    Constrained(DensityMatrix),
}

impl Estimate {
    pub fn entries(&self) -> &DMatrix<Complex64> {
        match self {
            Estimate::Unconstrained(h) => h.entries(),
            Estimate::Constrained(d) => d.entries(),
        }
    }

    pub fn to_hermitian(&self) -> HermitianMatrix {
        match self {
            Estimate::Unconstrained(h) => h.clone(),
            Estimate::Constrained(d) => d.as_hermitian(),
        }
    }
}

/// Everything a solve produces: the estimate, the residual trajectory
/// `|forward(rho_i) - y|` (entry 0 is the initial iterate, the final entry
/// re-evaluated from the returned estimate), and why it stopped.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub estimate: Estimate,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub stop_reason: StopReason,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history is never empty")
    }
}

/// Additive Gaussian white noise of exact strength: `level` is the
/// Frobenius norm delta of the realized perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    GaussianWhite,
}

impl NoiseModel {
    pub fn gaussian(level: f64, seed: u64) -> Self {
        NoiseModel {
            kind: NoiseKind::GaussianWhite,
            level,
            seed,
        }
    }

    /// Noise level given relative to the data norm.
    pub fn gaussian_relative(fraction: f64, y: &Spectrogram, seed: u64) -> Self {
        NoiseModel::gaussian(fraction * y.norm(), seed)
    }
}

/// `y + e` with `e` drawn i.i.d. standard normal and rescaled so that
/// `|e| = level` exactly; deterministic in the seed.
pub fn add_noise(y: &Spectrogram, model: &NoiseModel) -> Result<Spectrogram> {
    if !(model.level >= 0.0) || !model.level.is_finite() {
        return Err(Error::Parameter(format!(
            "noise level must be finite and nonnegative, got {}",
            model.level
        )));
    }
    if model.level == 0.0 {
        return Ok(y.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(model.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let draw: Vec<f64> = (0..y.values().len())
        .map(|_| rand::distributions::Distribution::sample(&normal, &mut rng))
        .collect();
    let norm = draw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Matrix("degenerate noise draw".into()));
    }
    let scale = model.level / norm;
    let values = y
        .values()
        .iter()
        .zip(&draw)
        .map(|(v, e)| v + scale * e)
        .collect();
    Spectrogram::new(y.angles().to_vec(), y.n(), values)
}

/// `|estimate - truth|_F / |truth|_F`.
pub fn relative_error(estimate: &HermitianMatrix, truth: &HermitianMatrix) -> Result<f64> {
    if estimate.n() != truth.n() {
        return Err(Error::Shape(format!(
            "estimate is {} but truth is {}",
            estimate.n(),
            truth.n()
        )));
    }
    let denom = truth.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::Parameter("reference state has zero norm".into()));
    }
    let num = estimate
        .entries()
        .iter()
        .zip(truth.entries().iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

fn frob_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn forward_of(op: &ForwardOperator, m: &DMatrix<Complex64>) -> Spectrogram {
    op.forward_fast(&HermitianMatrix::hermitized(m.clone()))
        .expect("shape checked on entry")
}

fn data_sub(a: &Spectrogram, b: &Spectrogram) -> Vec<f64> {
    a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect()
}

fn data_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn stagnated(history: &[f64]) -> bool {
    if history.len() <= STAGNATION_WINDOW {
        return false;
    }
    let prev = history[history.len() - 1 - STAGNATION_WINDOW];
    let last = history[history.len() - 1];
    prev - last < STAGNATION_TOL * prev
}

fn check_solve_inputs(op: &ForwardOperator, y: &Spectrogram, delta: f64) -> Result<()> {
    if y.m() != op.m() || y.n() != op.n() {
        return Err(Error::Shape(format!(
            "data is {}x{} but the operator expects {}x{}",
            y.m(),
            y.n(),
            op.m(),
            op.n()
        )));
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!(
            "noise level must be finite and nonnegative, got {delta}"
        )));
    }
    Ok(())
}

/// Conjugate gradients on the normal equations `T*T rho = T* y`, started
/// at zero, over the unconstrained Hermitian space. One forward and one
/// adjoint application per iteration; the data residual is tracked by the
/// CGLS recurrence and re-evaluated once at exit.
pub fn solve_cg_unconstrained(
    op: &ForwardOperator,
    y: &Spectrogram,
    delta: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    check_solve_inputs(op, y, delta)?;
    let n = op.n();
    let threshold = DISCREPANCY_FACTOR * delta;

    let mut x = DMatrix::<Complex64>::zeros(n, n);
    let mut r: Vec<f64> = y.values().to_vec();
    let mut history = vec![data_norm(&r)];
    let mut reason = StopReason::MaxIter;
    let mut iterations = 0;

    let spec_of = |v: &[f64]| {
        Spectrogram::new(y.angles().to_vec(), n, v.to_vec()).expect("residual stays finite")
    };
    let mut s = op.adjoint_apply(&spec_of(&r))?.into_entries();
    let mut p = s.clone();
    let mut gamma = frob_inner(&s, &s);

    for _ in 0..max_iter {
        if history[history.len() - 1] <= threshold {
            reason = StopReason::Discrepancy;
            break;
        }
        if stagnated(&history) || gamma == 0.0 {
            reason = StopReason::Stagnation;
            break;
        }
        let q = forward_of(op, &p);
        let qq: f64 = q.values().iter().map(|v| v * v).sum();
        if qq == 0.0 {
            reason = StopReason::Stagnation;
            break;
        }
        let alpha = gamma / qq;
        x.zip_apply(&p, |xa, pa| *xa += Complex64::from(alpha) * pa);
        for (ri, qi) in r.iter_mut().zip(q.values()) {
            *ri -= alpha * qi;
        }
        iterations += 1;
        history.push(data_norm(&r));
        s = op.adjoint_apply(&spec_of(&r))?.into_entries();
        let gamma_next = frob_inner(&s, &s);
        let beta = gamma_next / gamma;
        gamma = gamma_next;
        p.zip_apply(&s, |pa, sa| *pa = sa + Complex64::from(beta) * *pa);
    }
    if reason == StopReason::MaxIter && history[history.len() - 1] <= threshold {
        // Cap hit exactly when the discrepancy rule fired.
        reason = StopReason::Discrepancy;
    }

    let estimate = HermitianMatrix::hermitized(x);
    let truth = data_sub(&op.forward_fast(&estimate)?, y);
    *history.last_mut().expect("non-empty") = data_norm(&truth);
    Ok(SolveReport {
        estimate: Estimate::Unconstrained(estimate),
        iterations,
        residual_history: history,
        stop_reason: reason,
    })
}

/// Largest eigenvalue of `T*T` by power iteration from a fixed
/// pseudo-random Hermitian start; 30 iterations are far past convergence
/// for these spectra.
pub fn operator_norm_squared(op: &ForwardOperator) -> Result<f64> {
    let n = op.n();
    let mut rng = ChaCha20Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut b = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            b[(j, k)] = Complex64::new(
                rand::Rng::gen::<f64>(&mut rng) - 0.5,
                rand::Rng::gen::<f64>(&mut rng) - 0.5,
            );
        }
    }
    b = HermitianMatrix::hermitized(b).into_entries();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let norm = frob_inner(&b, &b).sqrt();
        if norm == 0.0 {
            return Err(Error::Matrix("power iteration collapsed".into()));
        }
        b /= Complex64::from(norm);
        b = op.adjoint_apply(&forward_of(op, &b))?.into_entries();
        lambda = frob_inner(&b, &b).sqrt();
    }
    if lambda <= 0.0 {
        return Err(Error::Matrix("operator norm estimate is zero".into()));
    }
    Ok(lambda)
}

/// Projected gradient descent over the density set:
/// `rho_{i+1} = project(rho_i - s T*(T rho_i - y))`, starting from the
/// maximally mixed state. With the auto step `s = 1/lambda_max(T*T)` the
/// objective is non-increasing. Every iterate is a certified density
/// matrix.
pub fn solve_pgd_constrained(
    op: &ForwardOperator,
    y: &Spectrogram,
    delta: f64,
    max_iter: usize,
    step: Option<f64>,
) -> Result<SolveReport> {
    check_solve_inputs(op, y, delta)?;
    let n = op.n();
    let threshold = DISCREPANCY_FACTOR * delta;
    let s = match step {
        Some(v) if v > 0.0 && v.is_finite() => v,
        Some(v) => {
            return Err(Error::Parameter(format!(
                "step size must be positive and finite, got {v}"
            )))
        }
        None => 1.0 / operator_norm_squared(op)?,
    };

    let uniform = DMatrix::<Complex64>::identity(n, n) / Complex64::from(n as f64);
    let mut rho = project_to_density(&HermitianMatrix::hermitized(uniform))?;
    let mut r = data_sub(&op.forward_fast(&rho.as_hermitian())?, y);
    let mut history = vec![data_norm(&r)];
    let mut reason = StopReason::MaxIter;
    let mut iterations = 0;

    let spec_of = |v: &[f64]| {
        Spectrogram::new(y.angles().to_vec(), n, v.to_vec()).expect("residual stays finite")
    };
    for _ in 0..max_iter {
        if history[history.len() - 1] <= threshold {
            reason = StopReason::Discrepancy;
            break;
        }
        if stagnated(&history) {
            reason = StopReason::Stagnation;
            break;
        }
        let grad = op.adjoint_apply(&spec_of(&r))?.into_entries();
        let moved = rho.entries() - grad * Complex64::from(s);
        rho = project_to_density(&HermitianMatrix::hermitized(moved))?;
        r = data_sub(&op.forward_fast(&rho.as_hermitian())?, y);
        iterations += 1;
        history.push(data_norm(&r));
    }
    if reason == StopReason::MaxIter && history[history.len() - 1] <= threshold {
        reason = StopReason::Discrepancy;
    }

    Ok(SolveReport {
        estimate: Estimate::Constrained(rho),
        iterations,
        residual_history: history,
        stop_reason: reason,
    })
}
