//! Diagnostics and experiment drivers.
//!
//! Two groups of tools live here. The diagnostic group quantifies how
//! ill-posed a given truncation is: an injectivity check that scans the
//! multiplier table, a closed-form lower bound on the inverse norm, and
//! dense singular-value/condition reports for sizes where an SVD is
//! affordable. The experiment group reruns the instability and
//! reconstruction studies behind the CLI: each family sweeps a parameter
//! grid, records input/output norms per point, and serializes to CSV.
//!
//! The instability families never build dense operators. The difference
//! of a pair lives on a single off-diagonal, so its reduced transform is
//! one multiplier row times one DFT ([`reduced_difference_norm`]), and
//! the sweeps stay O(N log N) per point up to the largest sizes used in
//! the rate studies.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::density::square_state;
use crate::dft::FftPair;
use crate::operator::{kernel_row, ForwardOperator};
use crate::sequences::{
    exponential_schedule, hat_difference_profile, poly_difference_profile,
    uniform_difference_profile, DifferenceProfile,
};
use crate::solvers::{
    add_noise, relative_error, solve_cg_unconstrained, solve_pgd_constrained, NoiseModel,
};
use crate::special::bessel_j_seq;
use crate::{phi_index, Error, Result};

/// Moduli below this are treated as zeros of the multiplier table.
/// Genuine zeros of the symbol are isolated, so hitting one on the grid
/// is a measure-zero event; everything this small is double underflow.
const ZERO_THRESHOLD: f64 = 1e-300;

/// Scans the full multiplier table and reports whether the equidistant
/// design is injective: `m >= 2N-1` angles and no vanishing entry. The
/// second value is the smallest modulus found, for reporting.
///
/// The scan works row by row (one inverse DFT per off-diagonal), so the
/// table itself is never materialized and memory stays O(N).
pub fn check_injectivity(n: usize, g: f64, m: usize) -> Result<(bool, f64)> {
    if n == 0 || m == 0 {
        return Err(Error::Parameter(format!(
            "need n >= 1 and m >= 1, got n={n}, m={m}"
        )));
    }
    if !g.is_finite() {
        return Err(Error::Parameter(format!("coupling must be finite, got {g}")));
    }
    let l = 2 * n - 1;
    let js = bessel_j_seq(l - 1, 2.0 * g.abs());
    let fft = FftPair::new(l);
    let mut min_abs = f64::INFINITY;
    for r in 0..l {
        let mut row = kernel_row(&js, phi_index(r, n), n);
        fft.inverse_inplace(&mut row);
        for z in &row {
            min_abs = min_abs.min(z.norm());
        }
    }
    Ok((m >= l && min_abs > ZERO_THRESHOLD, min_abs))
}

/// Closed-form lower bound on the norm of the inverse on its range:
/// `((N-1)!)^2 / (|g|^{N-1} sqrt((2N-2)! m))`.
///
/// Evaluated in log-space via `ln Gamma`; the factorials overflow f64
/// beyond N = 86 otherwise. Zero coupling returns infinity: the operator
/// is then not injective and no finite bound exists.
pub fn inverse_norm_lower_bound(n: usize, g: f64, m: usize) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::Parameter(format!(
            "need n >= 1 and m >= 1, got n={n}, m={m}"
        )));
    }
    if !g.is_finite() {
        return Err(Error::Parameter(format!("coupling must be finite, got {g}")));
    }
    if g == 0.0 {
        return Ok(f64::INFINITY);
    }
    let nf = n as f64;
    let ln_bound = 2.0 * ln_gamma(nf) - (nf - 1.0) * g.abs().ln()
        - 0.5 * (ln_gamma(2.0 * nf - 1.0) + (m as f64).ln());
    Ok(ln_bound.exp())
}

/// The bound above grows factorially once the coupling is small next to
/// the truncation size; below roughly `|g| < N/5` it explodes and
/// reconstruction is hopeless in practice. This is a heuristic
/// threshold, not a theorem.
pub fn coupling_below_heuristic(n: usize, g: f64) -> bool {
    g.abs() < n as f64 / 5.0
}

/// Singular values of the dense operator matrix. Tall matrices are
/// reduced by QR first: the triangular factor has the same singular
/// values and the iterative SVD then works on an N^2 x N^2 square
/// instead of an MN x N^2 one.
fn singular_values(op: &ForwardOperator, allow_large: bool) -> Result<DVector<f64>> {
    let dense = op.assemble_dense(allow_large)?;
    let (rows, cols) = dense.shape();
    let square = if rows > cols { dense.qr().unpack_r() } else { dense };
    Ok(square.svd(false, false).singular_values)
}

/// Smallest singular value of the dense operator matrix, guarded at
/// `N <= 64` unless `allow_large`. Together with
/// [`inverse_norm_lower_bound`] this gives the matrix-level check
/// `sigma_min <= 1/bound`.
pub fn smallest_singular_value(op: &ForwardOperator, allow_large: bool) -> Result<f64> {
    Ok(singular_values(op, allow_large)?.min())
}

/// Conditioning of the truncated problem, from one dense SVD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    /// `sigma_max / sigma_min` of the operator matrix.
    pub cond_operator: f64,
    /// Eigenvalue ratio of the normal matrix, the square of the above.
    pub cond_normal: f64,
    /// Set when the smallest normal-matrix eigenvalue sits below the
    /// floor `eps_mach * lambda_max`: digits below that are eigensolver
    /// noise and only the order of magnitude is meaningful.
    pub noise_floored: bool,
}

/// Condition numbers of the dense matrix and of the normal matrix,
/// guarded at `N <= 64` unless `allow_large`. Both are reported because
/// the two conventions differ by a square and published figures do not
/// always say which one they use.
pub fn condition_number(op: &ForwardOperator, allow_large: bool) -> Result<ConditionReport> {
    let s = singular_values(op, allow_large)?;
    let smax = s.max();
    let smin = s.min();
    if !(smax > 0.0) {
        return Err(Error::Matrix("operator matrix is zero".into()));
    }
    let cond_operator = smax / smin;
    Ok(ConditionReport {
        cond_operator,
        cond_normal: cond_operator * cond_operator,
        noise_floored: smin * smin < f64::EPSILON * smax * smax,
    })
}

/// Rate function of the exponential-decay regime:
/// `Phi(t) = exp(sqrt((-ln t)(-ln b)))` for `t, b` in (0, 1).
pub fn phi_exponential(t: f64, b: f64) -> Result<f64> {
    for (name, v) in [("t", t), ("b", b)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Parameter(format!(
                "{name} must lie in the open interval (0, 1), got {v}"
            )));
        }
    }
    Ok(((-t.ln()) * (-b.ln())).sqrt().exp())
}

/// Rate function of the polynomial-decay regime:
/// `Phi~(t) = (-ln t) / ln(-ln t)`, defined for `-ln t > e` so the
/// denominator exceeds 1, i.e. `t < exp(-e) ~ 0.066`.
pub fn phi_polynomial(t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Parameter(format!(
            "t must be positive, got {t}"
        )));
    }
    let u = -t.ln();
    if !(u > std::f64::consts::E) {
        return Err(Error::Parameter(format!(
            "t must be below exp(-e) ~ 0.06599 so that ln(-ln t) exceeds 1, got {t}"
        )));
    }
    Ok(u / u.ln())
}

/// One measured point of an experiment sweep. The five fields are the
/// five CSV columns; run-level constants live in the run's comment line.
/// `param_n` and `transformed` are NaN where the family has no use for
/// them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Off-diagonal index k, dyadic exponent, or truth-state width w.
    pub param_k: f64,
    /// Hat width n, decay exponent mu, or relative noise level.
    pub param_n: f64,
    /// Frobenius norm of the state difference, or the clean data norm.
    pub input_norm: f64,
    /// Norm of the transformed difference, or the relative error.
    pub output_norm: f64,
    /// Family-specific derived column: fitted slope, a rate-function
    /// value, or the solver flag (0 = unconstrained, 1 = constrained).
    pub transformed: f64,
}

/// Least-squares fit of `log(output_norm)` against `log(input_norm)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    /// Width of the abscissa range in decades.
    pub decades: f64,
    /// Set when the abscissae span less than one decade; the slope is
    /// then dominated by noise and should not be trusted.
    pub narrow_spread: bool,
}

/// Fits a power law `output ~ input^slope` to the records with positive
/// finite norms. Needs at least three such records.
pub fn fit_loglog_slope(records: &[ExperimentRecord]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| {
            r.input_norm > 0.0
                && r.output_norm > 0.0
                && r.input_norm.is_finite()
                && r.output_norm.is_finite()
        })
        .map(|r| (r.input_norm.ln(), r.output_norm.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Parameter(format!(
            "slope fit needs at least 3 records with positive norms, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter(
            "slope fit needs distinct input norms".into(),
        ));
    }
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let decades = (hi - lo) / std::f64::consts::LN_10;
    Ok(SlopeFit {
        slope: sxy / sxx,
        decades,
        narrow_spread: decades < 1.0,
    })
}

/// `|reduced(sigma - rho)|_F` for a difference supported on one
/// off-diagonal, in O(N log N) time and O(N) memory.
///
/// Row `+k` of the reduced table is the multiplier row `dtilde(k, .)`
/// times the inverse DFT of the zero-padded profile over `L = 2N-1`
/// bins, divided by `L`; the mirror row `-k` carries the same energy
/// because the profile is real. The large-size sweeps rely on this: the
/// dense multiplier table alone would need O(N^2) storage.
pub fn reduced_difference_norm(g: f64, profile: &DifferenceProfile) -> Result<f64> {
    let n = profile.size;
    if n == 0 {
        return Err(Error::Parameter("profile size must be positive".into()));
    }
    if profile.offset == 0 || profile.offset >= n {
        return Err(Error::Parameter(format!(
            "profile offset {} must lie in 1..{n}",
            profile.offset
        )));
    }
    if profile.entries.len() + profile.offset > n {
        return Err(Error::Shape(format!(
            "profile with offset {} holds {} entries, more than fit in size {n}",
            profile.offset,
            profile.entries.len()
        )));
    }
    if !g.is_finite() {
        return Err(Error::Parameter(format!("coupling must be finite, got {g}")));
    }
    let l = 2 * n - 1;
    let fft = FftPair::new(l);
    let js = bessel_j_seq(l - 1, 2.0 * g.abs());
    let mut drow = kernel_row(&js, profile.offset as i64, n);
    fft.inverse_inplace(&mut drow);
    let mut padded = vec![Complex64::new(0.0, 0.0); l];
    for (c, &v) in profile.entries.iter().enumerate() {
        padded[c] = Complex64::new(v, 0.0);
    }
    fft.inverse_inplace(&mut padded);
    let scale = 1.0 / l as f64;
    let row_energy: f64 = drow
        .iter()
        .zip(&padded)
        .map(|(d, u)| (d * u).norm_sqr())
        .sum::<f64>()
        * scale
        * scale;
    Ok((2.0 * row_energy).sqrt())
}

/// The experiment families exposed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentFamily {
    /// Uniform pairs over an off-diagonal grid: the raw decay of the
    /// transformed difference with k.
    General,
    /// Hat pairs over a width grid per k, with the fitted rate slope.
    Bandlimited,
    /// Hat pairs along the width schedule `b^{-k/eps}`.
    Exponential,
    /// Dyadic-site pairs over a grid of decay exponents.
    Polynomial,
    /// Solver sweeps over truth widths and noise levels.
    Reconstruction,
}

impl ExperimentFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentFamily::General => "general",
            ExperimentFamily::Bandlimited => "bandlimited",
            ExperimentFamily::Exponential => "exponential",
            ExperimentFamily::Polynomial => "polynomial",
            ExperimentFamily::Reconstruction => "reconstruction",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "general" => Ok(ExperimentFamily::General),
            "bandlimited" => Ok(ExperimentFamily::Bandlimited),
            "exponential" => Ok(ExperimentFamily::Exponential),
            "polynomial" => Ok(ExperimentFamily::Polynomial),
            "reconstruction" => Ok(ExperimentFamily::Reconstruction),
            other => Err(Error::Parameter(format!(
                "unknown experiment family {other:?}; expected one of \
                 general, bandlimited, exponential, polynomial, reconstruction"
            ))),
        }
    }
}

impl std::fmt::Display for ExperimentFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Grids and resource limits for [`run_experiment`]. Every field has a
/// default; a config file only needs the ones it overrides. Fields are
/// read per family: `widths` only drives the bandlimited sweep,
/// `mu_values` only the polynomial one, and the solver settings only
/// reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Truncation size N.
    pub size: usize,
    /// Coupling strength.
    pub g: f64,
    /// Angle count for reconstruction sweeps.
    pub angles: usize,
    /// Off-diagonal indices: the k grid of the instability families and
    /// the schedule index of the exponential one.
    pub k_values: Vec<usize>,
    /// Hat widths n for the bandlimited sweep.
    pub widths: Vec<f64>,
    /// Hat tail exponent. Unset picks the family default: 1e-15 for the
    /// bandlimited sweep (the rate slope degrades toward
    /// (k+1/2+eps)/(1/2+eps) otherwise) and 1/2 for the exponential
    /// schedule (the width b^{-k/eps} overflows for tiny eps).
    pub eps: Option<f64>,
    /// Base of the exponential width schedule, in (0, 1).
    pub b: f64,
    /// Decay exponents mu for the polynomial sweep.
    pub mu_values: Vec<f64>,
    /// Truth-state widths w for reconstruction sweeps.
    pub state_widths: Vec<usize>,
    /// Relative noise levels delta/|y|; 0 means exact data.
    pub noise_levels: Vec<f64>,
    /// Base RNG seed; each sweep point offsets it deterministically.
    pub seed: u64,
    pub cg_max_iter: usize,
    pub pgd_max_iter: usize,
    /// Refusal threshold for the estimated working set, in bytes.
    pub memory_cap: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            size: 3000,
            g: 2.7,
            angles: 500,
            k_values: (1..=200).collect(),
            widths: vec![4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            eps: None,
            b: 0.5,
            mu_values: vec![0.2, 0.5, 0.8],
            state_widths: vec![5, 45],
            noise_levels: vec![1e-4, 1e-3, 1e-2, 1e-1],
            seed: 7,
            cg_max_iter: 5000,
            pgd_max_iter: 20000,
            memory_cap: 4 << 30,
        }
    }
}

/// A finished experiment: the family, a `# key=value` comment line with
/// the run-level constants, and one record per sweep point in
/// deterministic parameter-sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub family: ExperimentFamily,
    pub comment: String,
    pub records: Vec<ExperimentRecord>,
}

/// Runs one experiment family over the config's grids.
///
/// The instability families go through [`reduced_difference_norm`], so
/// their cost is O(N log N) per point; reconstruction builds a full
/// operator and runs both solvers per point. Estimated allocations are
/// checked against `memory_cap` up front and the run is refused rather
/// than started when it would not fit.
pub fn run_experiment(
    family: ExperimentFamily,
    config: &ExperimentConfig,
) -> Result<ExperimentRun> {
    if config.size == 0 {
        return Err(Error::Parameter("size must be at least 1".into()));
    }
    if !config.g.is_finite() {
        return Err(Error::Parameter(format!(
            "coupling must be finite, got {}",
            config.g
        )));
    }
    match family {
        ExperimentFamily::General => run_general(config),
        ExperimentFamily::Bandlimited => run_bandlimited(config),
        ExperimentFamily::Exponential => run_exponential(config),
        ExperimentFamily::Polynomial => run_polynomial(config),
        ExperimentFamily::Reconstruction => run_reconstruction(config),
    }
}

fn require_memory(required: u64, cap: u64) -> Result<()> {
    if required > cap {
        return Err(Error::MemoryCap { required, cap });
    }
    Ok(())
}

/// Working set of one sparse instability point: the Bessel table plus
/// four complex scratch rows of length L = 2N-1.
fn instability_bytes(n: usize) -> u64 {
    let l = (2 * n - 1) as u64;
    8 * l + 16 * 4 * l
}

/// Working set of a reconstruction sweep: the multiplier table and two
/// off-diagonal work tables of the fast path, the solver's state
/// matrices, and a few spectrogram-sized vectors.
fn reconstruction_bytes(n: usize, m: usize) -> u64 {
    let l = (2 * n - 1) as u64;
    let (n, m) = (n as u64, m as u64);
    16 * l * l * 3 + 16 * n * n * 8 + 8 * m * n * 4
}

fn sorted_k_grid(config: &ExperimentConfig) -> Result<Vec<usize>> {
    if config.k_values.is_empty() {
        return Err(Error::Parameter("k grid is empty".into()));
    }
    let mut ks = config.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    for &k in &ks {
        if k == 0 || k >= config.size {
            return Err(Error::Parameter(format!(
                "off-diagonal index {k} outside 1..{}",
                config.size
            )));
        }
    }
    Ok(ks)
}

fn sorted_f64(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Parameter(format!("{what} grid is empty")));
    }
    for &v in values {
        if !v.is_finite() {
            return Err(Error::Parameter(format!("{what} grid holds {v}")));
        }
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Ok(sorted)
}

fn run_general(config: &ExperimentConfig) -> Result<ExperimentRun> {
    require_memory(instability_bytes(config.size), config.memory_cap)?;
    let ks = sorted_k_grid(config)?;
    let mut records = Vec::with_capacity(ks.len());
    for &k in &ks {
        let profile = uniform_difference_profile(k, config.size)?;
        let output = reduced_difference_norm(config.g, &profile)?;
        records.push(ExperimentRecord {
            param_k: k as f64,
            param_n: f64::NAN,
            input_norm: profile.norm(),
            output_norm: output,
            transformed: f64::NAN,
        });
    }
    Ok(ExperimentRun {
        family: ExperimentFamily::General,
        comment: format!("# family=general,N={},g={}", config.size, config.g),
        records,
    })
}

fn run_bandlimited(config: &ExperimentConfig) -> Result<ExperimentRun> {
    require_memory(instability_bytes(config.size), config.memory_cap)?;
    let eps = config.eps.unwrap_or(1e-15);
    let ks = sorted_k_grid(config)?;
    let widths = sorted_f64(&config.widths, "width")?;
    let mut records = Vec::with_capacity(ks.len() * widths.len());
    for &k in &ks {
        let mut group = Vec::with_capacity(widths.len());
        for &w in &widths {
            let profile = hat_difference_profile(w, k, eps, config.size)?;
            let output = reduced_difference_norm(config.g, &profile)?;
            group.push(ExperimentRecord {
                param_k: k as f64,
                param_n: w,
                input_norm: profile.norm(),
                output_norm: output,
                transformed: f64::NAN,
            });
        }
        // Every record of the group carries the group's fitted slope, so
        // the rate survives row-level filtering of the CSV.
        let slope = fit_loglog_slope(&group).map_or(f64::NAN, |fit| fit.slope);
        for r in &mut group {
            r.transformed = slope;
        }
        records.extend(group);
    }
    Ok(ExperimentRun {
        family: ExperimentFamily::Bandlimited,
        comment: format!(
            "# family=bandlimited,N={},g={},eps={},transformed=rate-slope-per-k",
            config.size, config.g, eps
        ),
        records,
    })
}

fn run_exponential(config: &ExperimentConfig) -> Result<ExperimentRun> {
    require_memory(instability_bytes(config.size), config.memory_cap)?;
    let eps = config.eps.unwrap_or(0.5);
    let ks = sorted_k_grid(config)?;
    let mut records = Vec::with_capacity(ks.len());
    for &k in &ks {
        let width = exponential_schedule(k as i64, config.b, eps)?;
        if !width.is_finite() {
            return Err(Error::Parameter(format!(
                "width schedule overflows at k={k} (b={}, eps={eps})",
                config.b
            )));
        }
        let profile = hat_difference_profile(width, k, eps, config.size)?;
        let output = reduced_difference_norm(config.g, &profile)?;
        let transformed = if output > 0.0 && output < 1.0 {
            phi_exponential(output, config.b)?
        } else {
            f64::NAN
        };
        records.push(ExperimentRecord {
            param_k: k as f64,
            param_n: width,
            input_norm: profile.norm(),
            output_norm: output,
            transformed,
        });
    }
    Ok(ExperimentRun {
        family: ExperimentFamily::Exponential,
        comment: format!(
            "# family=exponential,N={},g={},eps={},b={},transformed=phi,caveat=truncation-dominated",
            config.size, config.g, eps, config.b
        ),
        records,
    })
}

fn run_polynomial(config: &ExperimentConfig) -> Result<ExperimentRun> {
    require_memory(instability_bytes(config.size), config.memory_cap)?;
    let ks = sorted_k_grid(config)?;
    let mus = sorted_f64(&config.mu_values, "mu")?;
    let mut records = Vec::with_capacity(ks.len() * mus.len());
    for &k in &ks {
        for &mu in &mus {
            let profile = poly_difference_profile(k as u32, mu, config.size)?;
            let output = reduced_difference_norm(config.g, &profile)?;
            let transformed = phi_polynomial(output).unwrap_or(f64::NAN);
            records.push(ExperimentRecord {
                param_k: k as f64,
                param_n: mu,
                input_norm: profile.norm(),
                output_norm: output,
                transformed,
            });
        }
    }
    Ok(ExperimentRun {
        family: ExperimentFamily::Polynomial,
        comment: format!(
            "# family=polynomial,N={},g={},param_k=dyadic-exponent,transformed=phi-tilde",
            config.size, config.g
        ),
        records,
    })
}

fn run_reconstruction(config: &ExperimentConfig) -> Result<ExperimentRun> {
    require_memory(
        reconstruction_bytes(config.size, config.angles),
        config.memory_cap,
    )?;
    if config.state_widths.is_empty() {
        return Err(Error::Parameter("state width grid is empty".into()));
    }
    let mut widths = config.state_widths.clone();
    widths.sort_unstable();
    widths.dedup();
    let noises = sorted_f64(&config.noise_levels, "noise level")?;
    if noises.iter().any(|&v| v < 0.0) {
        return Err(Error::Parameter("noise levels must be nonnegative".into()));
    }
    let op = ForwardOperator::new_equidistant(config.size, config.g, config.angles)?;
    let mut records = Vec::with_capacity(2 * widths.len() * noises.len());
    let mut point = 0u64;
    for &w in &widths {
        let truth = square_state(config.size, w)?.as_hermitian();
        let clean = op.forward_fast(&truth)?;
        let data_norm = clean.norm();
        for &rel in &noises {
            let delta = rel * data_norm;
            let noisy = add_noise(&clean, &NoiseModel::gaussian(delta, config.seed.wrapping_add(point)))?;
            point += 1;
            let cg = solve_cg_unconstrained(&op, &noisy, delta, config.cg_max_iter)?;
            let pgd = solve_pgd_constrained(&op, &noisy, delta, config.pgd_max_iter, None)?;
            let cg_err = relative_error(&cg.estimate.to_hermitian(), &truth)?;
            let pgd_err = relative_error(&pgd.estimate.to_hermitian(), &truth)?;
            for (flag, err) in [(0.0, cg_err), (1.0, pgd_err)] {
                records.push(ExperimentRecord {
                    param_k: w as f64,
                    param_n: rel,
                    input_norm: data_norm,
                    output_norm: err,
                    transformed: flag,
                });
            }
        }
    }
    Ok(ExperimentRun {
        family: ExperimentFamily::Reconstruction,
        comment: format!(
            "# family=reconstruction,N={},g={},M={},seed={},cg_max_iter={},pgd_max_iter={},\
             param_k=width,param_n=noise-level,output_norm=relative-error,transformed=method(0=cg,1=pgd)",
            config.size, config.g, config.angles, config.seed, config.cg_max_iter, config.pgd_max_iter
        ),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::make_corner_probe;
    use crate::special::bessel_j;
    use std::f64::consts::{E, PI};

    #[test]
    fn injectivity_needs_coupling_and_enough_angles() {
        let (ok, min_abs) = check_injectivity(5, 0.0, 9).unwrap();
        assert!(!ok);
        assert_eq!(min_abs, 0.0);

        let (ok, min_abs) = check_injectivity(5, 2.7, 9).unwrap();
        assert!(ok);
        assert!(min_abs > 0.0);

        let (ok, min_abs) = check_injectivity(5, 2.7, 8).unwrap();
        assert!(!ok, "8 angles cannot separate 9 frequencies");
        assert!(min_abs > 0.0);
    }

    #[test]
    fn injectivity_verdict_matches_the_dense_rank() {
        for n in 2..=8usize {
            for &g in &[0.5, 2.7] {
                for m in [2 * n - 2, 2 * n - 1, 2 * n] {
                    let (verdict, _) = check_injectivity(n, g, m).unwrap();
                    let dense = ForwardOperator::new_equidistant(n, g, m)
                        .unwrap()
                        .assemble_dense(false)
                        .unwrap();
                    let sv = dense.svd(false, false).singular_values;
                    let cut = sv.max() * 1e-12;
                    let rank = sv.iter().filter(|&&s| s > cut).count();
                    assert_eq!(
                        verdict,
                        rank == n * n,
                        "n={n} g={g} m={m}: rank {rank} of {}",
                        n * n
                    );
                }
            }
        }
    }

    #[test]
    fn inverse_bound_plug_in_values() {
        let b = inverse_norm_lower_bound(2, 1.0, 3).unwrap();
        assert!((b - 1.0 / 6.0f64.sqrt()).abs() < 1e-15);
        for m in [1usize, 4, 9] {
            for &g in &[0.3, 1.0, 55.0] {
                let b = inverse_norm_lower_bound(1, g, m).unwrap();
                assert!((b - 1.0 / (m as f64).sqrt()).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn inverse_bound_monotone_in_coupling_with_infinite_endpoint() {
        let bounds: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&g| inverse_norm_lower_bound(5, g, 9).unwrap())
            .collect();
        for pair in bounds.windows(2) {
            assert!(pair[0] > pair[1]);
        }
        assert_eq!(inverse_norm_lower_bound(5, 0.0, 9).unwrap(), f64::INFINITY);
        assert!(coupling_below_heuristic(41, 7.5));
        assert!(!coupling_below_heuristic(41, 11.0));
    }

    #[test]
    fn log_space_bound_survives_factorial_overflow_sizes() {
        let b = inverse_norm_lower_bound(200, 10.0, 399).unwrap();
        assert!(b.is_finite());
        assert!(b > 1e100, "bound should be astronomically large, got {b}");
    }

    #[test]
    fn smallest_singular_value_is_bounded_by_the_closed_form() {
        for n in 2..=12usize {
            for &g in &[0.5, 1.0, 2.7] {
                let m = 2 * n - 1;
                let op = ForwardOperator::new_equidistant(n, g, m).unwrap();
                let smin = smallest_singular_value(&op, false).unwrap();
                let cap = 1.0 / inverse_norm_lower_bound(n, g, m).unwrap();
                assert!(
                    smin <= cap + 1e-12,
                    "n={n} g={g}: sigma_min {smin} above 1/bound {cap}"
                );
            }
        }
    }

    #[test]
    fn scalar_operator_has_explicit_singular_value() {
        for m in [1usize, 4, 25] {
            let op = ForwardOperator::new_equidistant(1, 1.3, m).unwrap();
            let smin = smallest_singular_value(&op, false).unwrap();
            let j0 = bessel_j(0, 2.6);
            assert!((smin - (m as f64).sqrt() * j0 * j0).abs() < 1e-13);
        }
    }

    #[test]
    fn duplicating_every_angle_scales_singular_values_by_sqrt_two() {
        let angles: Vec<f64> = (0..7).map(|i| 0.3 + 2.0 * PI * i as f64 / 7.0).collect();
        let doubled: Vec<f64> = angles.iter().chain(angles.iter()).copied().collect();
        let one = ForwardOperator::new_with_angles(3, 1.7, angles).unwrap();
        let two = ForwardOperator::new_with_angles(3, 1.7, doubled).unwrap();
        let s1 = smallest_singular_value(&one, false).unwrap();
        let s2 = smallest_singular_value(&two, false).unwrap();
        assert!((s2 / s1 - 2.0f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn corner_probe_image_norm_has_a_closed_form() {
        // The probe concentrates on the extreme corners, so its image
        // energy is an explicit Bessel sum once the angle average of
        // 4cos^2((N-1)theta) collapses to 2M, which needs M >= 2N-1.
        for &(n, mfac) in &[(4usize, 1usize), (9, 1), (4, 3)] {
            let m = if mfac == 1 { 2 * n - 1 } else { mfac * n };
            let op = ForwardOperator::new_equidistant(n, 2.7, m).unwrap();
            let probe = make_corner_probe(n).unwrap();
            let y = op.forward_fast(&probe).unwrap();
            let lhs = y.norm().powi(2);
            let rhs = 2.0
                * m as f64
                * (0..n)
                    .map(|l| {
                        let w = bessel_j(l as i64 - (n as i64 - 1), 5.4) * bessel_j(l as i64, 5.4);
                        w * w
                    })
                    .sum::<f64>();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300),
                "n={n} m={m}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn condition_report_squares_the_operator_ratio() {
        let op = ForwardOperator::new_equidistant(1, 0.9, 4).unwrap();
        let rep = condition_number(&op, false).unwrap();
        assert_eq!(rep.cond_operator, 1.0);
        assert_eq!(rep.cond_normal, 1.0);
        assert!(!rep.noise_floored);

        let op = ForwardOperator::new_equidistant(5, 2.7, 9).unwrap();
        let rep = condition_number(&op, false).unwrap();
        assert!(rep.cond_operator >= 1.0);
        let rel = (rep.cond_normal - rep.cond_operator * rep.cond_operator).abs();
        assert!(rel <= 1e-12 * rep.cond_normal);
    }

    #[test]
    fn rate_function_plug_in_values() {
        for &b in &[0.3, 0.9] {
            assert!((phi_exponential(b, b).unwrap() - 1.0 / b).abs() < 1e-14 / b);
        }
        let e_inv = (-1.0f64).exp();
        assert!((phi_exponential(e_inv, e_inv).unwrap() - E).abs() < 1e-14);

        let t2 = (-E * E).exp();
        assert!((phi_polynomial(t2).unwrap() - E * E / 2.0).abs() < 1e-13);
        let t3 = (-E * E * E).exp();
        assert!((phi_polynomial(t3).unwrap() - E * E * E / 3.0).abs() < 1e-13);
    }

    #[test]
    fn rate_functions_reject_out_of_domain_arguments() {
        assert!(phi_exponential(0.0, 0.5).is_err());
        assert!(phi_exponential(1.0, 0.5).is_err());
        assert!(phi_exponential(0.5, 1.0).is_err());
        assert!(phi_exponential(-0.1, 0.5).is_err());
        assert!(phi_polynomial(0.5).is_err());
        assert!(phi_polynomial(0.0).is_err());
        assert!(phi_polynomial((-E).exp()).is_err(), "boundary is excluded");
        assert!(phi_polynomial(1e-300).is_ok());
    }

    fn synthetic(xs: &[f64], pow: i32) -> Vec<ExperimentRecord> {
        xs.iter()
            .map(|&x| ExperimentRecord {
                param_k: f64::NAN,
                param_n: f64::NAN,
                input_norm: x,
                output_norm: x.powi(pow),
                transformed: f64::NAN,
            })
            .collect()
    }

    #[test]
    fn slope_fit_recovers_an_exact_power_law() {
        let fit = fit_loglog_slope(&synthetic(&[1e-3, 1e-2, 1e-1, 1.0, 3.0], 3)).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-10);
        assert!(!fit.narrow_spread);
        assert!(fit.decades > 3.0);
    }

    #[test]
    fn slope_fit_flags_narrow_spreads_and_rejects_degenerate_input() {
        let fit = fit_loglog_slope(&synthetic(&[1.0, 1.5, 2.0], 2)).unwrap();
        assert!(fit.narrow_spread);
        assert!((fit.slope - 2.0).abs() < 1e-10);

        assert!(fit_loglog_slope(&synthetic(&[1.0, 2.0], 2)).is_err());
        let mut zeros = synthetic(&[1.0, 2.0, 4.0], 1);
        zeros[1].output_norm = 0.0;
        assert!(fit_loglog_slope(&zeros).is_err(), "only two usable records");
        assert!(fit_loglog_slope(&synthetic(&[2.0, 2.0, 2.0], 1)).is_err());
    }

    #[test]
    fn sparse_norm_matches_the_dense_reduced_table() {
        let cases: Vec<(usize, DifferenceProfile)> = vec![
            (101, hat_difference_profile(4.0, 2, 0.3, 101).unwrap()),
            (64, uniform_difference_profile(7, 64).unwrap()),
            (40, poly_difference_profile(3, 0.5, 40).unwrap()),
        ];
        for (n, profile) in cases {
            let sparse = reduced_difference_norm(2.7, &profile).unwrap();
            let op = ForwardOperator::new_equidistant(n, 2.7, 2 * n - 1).unwrap();
            let dense = op
                .reduced_forward(&profile.to_matrix())
                .unwrap()
                .frobenius_norm();
            assert!(
                (sparse - dense).abs() <= 1e-12 * dense.max(1e-12),
                "offset {}: sparse {sparse} vs dense {dense}",
                profile.offset
            );
        }
    }

    #[test]
    fn sparse_norm_rejects_malformed_profiles() {
        let on_diagonal = DifferenceProfile {
            offset: 0,
            size: 8,
            entries: vec![1.0; 8],
        };
        assert!(reduced_difference_norm(1.0, &on_diagonal).is_err());
        let overfull = DifferenceProfile {
            offset: 3,
            size: 8,
            entries: vec![1.0; 6],
        };
        assert!(reduced_difference_norm(1.0, &overfull).is_err());
    }

    /// Independent oracle for the uniform-pair output norm: by Parseval
    /// the row energy is a plain Bessel sum,
    /// `|T(sigma-rho)|^2 = (pi/L) sum_p (J_{p-k}(2g) J_p(2g))^2`.
    fn uniform_output_oracle(n: usize, g: f64, k: i64) -> f64 {
        let l = (2 * n - 1) as f64;
        let sum: f64 = (-(n as i64 - 1)..n as i64)
            .map(|p| {
                let w = bessel_j(p - k, 2.0 * g) * bessel_j(p, 2.0 * g);
                w * w
            })
            .sum();
        (PI * sum / l).sqrt()
    }

    #[test]
    fn general_family_matches_the_bessel_sum_oracle() {
        let config = ExperimentConfig {
            size: 200,
            k_values: vec![7],
            ..ExperimentConfig::default()
        };
        let run = run_experiment(ExperimentFamily::General, &config).unwrap();
        assert_eq!(run.records.len(), 1);
        let rec = run.records[0];
        assert!((rec.input_norm - 0.5f64.sqrt()).abs() < 1e-15);
        let oracle = uniform_output_oracle(200, 2.7, 7);
        assert!((rec.output_norm - oracle).abs() < 1e-13 * oracle);
        assert!((rec.output_norm - 0.016403269485456264).abs() < 1e-12 * rec.output_norm);
        assert!(rec.param_n.is_nan());
        assert!(rec.transformed.is_nan());
    }

    #[test]
    fn general_family_reference_point_and_underflow_tail() {
        let config = ExperimentConfig {
            size: 3000,
            k_values: vec![7, 17, 157, 200],
            ..ExperimentConfig::default()
        };
        let run = run_experiment(ExperimentFamily::General, &config).unwrap();
        let by_k: Vec<f64> = run.records.iter().map(|r| r.output_norm).collect();
        assert!((by_k[0] - 0.00423036106871031).abs() < 1e-10 * by_k[0]);
        assert!((by_k[1] - 1.2939959040385e-5).abs() < 1e-9 * by_k[1]);
        assert_eq!(by_k[2], 0.0, "k=157 sits in the underflow tail");
        assert_eq!(by_k[3], 0.0);
    }

    #[test]
    fn bandlimited_family_recovers_the_cubic_rate() {
        let config = ExperimentConfig {
            size: 2000,
            k_values: vec![1],
            widths: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            ..ExperimentConfig::default()
        };
        let run = run_experiment(ExperimentFamily::Bandlimited, &config).unwrap();
        assert_eq!(run.records.len(), 5);
        let slope = run.records[0].transformed;
        assert!(
            (slope - 3.0).abs() < 0.3,
            "rate slope for k=1 should be near 3, got {slope}"
        );
        for r in &run.records {
            assert_eq!(r.transformed, slope);
            assert!(r.input_norm > 0.0 && r.output_norm > 0.0);
        }
        // Wider hats have smaller separation, and the output decays
        // faster than the input by the slope factor.
        for pair in run.records.windows(2) {
            assert!(pair[1].input_norm < pair[0].input_norm);
            assert!(pair[1].output_norm < pair[0].output_norm);
        }
    }

    #[test]
    fn exponential_family_follows_the_width_schedule() {
        let config = ExperimentConfig {
            size: 500,
            k_values: vec![1, 2, 3],
            b: 0.5,
            ..ExperimentConfig::default()
        };
        let run = run_experiment(ExperimentFamily::Exponential, &config).unwrap();
        assert!(run.comment.contains("truncation-dominated"));
        assert_eq!(run.records.len(), 3);
        for (i, r) in run.records.iter().enumerate() {
            let k = (i + 1) as f64;
            assert!((r.param_n - 4.0f64.powf(k)).abs() < 1e-9 * r.param_n);
            if r.output_norm > 0.0 && r.output_norm < 1.0 {
                let phi = phi_exponential(r.output_norm, 0.5).unwrap();
                assert_eq!(r.transformed, phi);
            } else {
                assert!(r.transformed.is_nan());
            }
        }
        for pair in run.records.windows(2) {
            assert!(pair[1].input_norm < pair[0].input_norm);
        }
    }

    #[test]
    fn polynomial_family_reports_exact_separations() {
        let config = ExperimentConfig {
            size: 300,
            k_values: vec![1, 2, 3],
            mu_values: vec![0.5],
            ..ExperimentConfig::default()
        };
        let run = run_experiment(ExperimentFamily::Polynomial, &config).unwrap();
        assert_eq!(run.records.len(), 3);
        for (i, r) in run.records.iter().enumerate() {
            let k = (i + 1) as u32;
            let v = (1.0 - 0.5f64.powf(0.5)) * 0.5f64.powf(0.5 * k as f64);
            assert!((r.input_norm - 2.0f64.sqrt() * v).abs() <= 1e-15 * v);
            assert_eq!(r.param_n, 0.5);
            if r.output_norm > 0.0 && r.output_norm < (-E).exp() {
                assert!((r.transformed - phi_polynomial(r.output_norm).unwrap()).abs() == 0.0);
            } else {
                assert!(r.transformed.is_nan());
            }
        }
    }

    #[test]
    fn reconstruction_family_runs_both_solvers_deterministically() {
        let config = ExperimentConfig {
            size: 15,
            g: 1.0,
            angles: 29,
            state_widths: vec![3],
            noise_levels: vec![0.05],
            seed: 11,
            cg_max_iter: 300,
            pgd_max_iter: 600,
            ..ExperimentConfig::default()
        };
        let run = run_experiment(ExperimentFamily::Reconstruction, &config).unwrap();
        assert_eq!(run.records.len(), 2);
        let (cg, pgd) = (run.records[0], run.records[1]);
        assert_eq!(cg.transformed, 0.0);
        assert_eq!(pgd.transformed, 1.0);
        assert_eq!(cg.param_k, 3.0);
        assert_eq!(cg.param_n, 0.05);
        assert!(cg.input_norm > 0.0);
        assert_eq!(cg.input_norm, pgd.input_norm);
        for r in &run.records {
            assert!(r.output_norm.is_finite() && r.output_norm < 1.0);
        }
        let again = run_experiment(ExperimentFamily::Reconstruction, &config).unwrap();
        assert_eq!(run, again);
    }

    #[test]
    fn experiments_refuse_to_start_beyond_the_memory_cap() {
        let config = ExperimentConfig {
            size: 50,
            k_values: vec![1],
            memory_cap: 10,
            ..ExperimentConfig::default()
        };
        match run_experiment(ExperimentFamily::General, &config) {
            Err(Error::MemoryCap { required, cap }) => {
                assert!(required > cap);
                assert_eq!(cap, 10);
            }
            other => panic!("expected a memory cap refusal, got {other:?}"),
        }
        match run_experiment(ExperimentFamily::Reconstruction, &config) {
            Err(Error::MemoryCap { .. }) => {}
            other => panic!("expected a memory cap refusal, got {other:?}"),
        }
    }

    #[test]
    fn experiment_grids_are_validated() {
        let bad_k = ExperimentConfig {
            size: 10,
            k_values: vec![0],
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(ExperimentFamily::General, &bad_k).is_err());
        let too_far = ExperimentConfig {
            size: 10,
            k_values: vec![10],
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(ExperimentFamily::General, &too_far).is_err());
        let empty = ExperimentConfig {
            size: 10,
            k_values: vec![],
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(ExperimentFamily::General, &empty).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in [
            ExperimentFamily::General,
            ExperimentFamily::Bandlimited,
            ExperimentFamily::Exponential,
            ExperimentFamily::Polynomial,
            ExperimentFamily::Reconstruction,
        ] {
            assert_eq!(ExperimentFamily::parse(f.as_str()).unwrap(), f);
            assert_eq!(format!("{f}"), f.as_str());
        }
        assert!(ExperimentFamily::parse("bogus").is_err());
    }
}
