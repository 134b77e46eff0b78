//! Command-line front end for PINEM state tomography: simulate states and
//! their spectrograms, reconstruct density matrices, diagnose operator
//! conditioning, and reproduce the instability experiments as CSV.
//!
//! On-disk formats are defined in `pinem_tomo::io`: PQT1 binary matrices,
//! `theta,l,value` spectrogram CSV, experiment CSV with a `#` provenance
//! line, and JSON solve reports. Every command accepts `--config FILE`
//! with JSON defaults (snake_case keys, unknown keys rejected); explicit
//! flags override file values.
//!
//! Exit codes: 0 success, 2 usage or parameter error, 3 solver stopped at
//! the iteration cap, 4 I/O or file-format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use pinem_tomo::analysis::{
    check_injectivity, condition_number, coupling_below_heuristic, inverse_norm_lower_bound,
    run_experiment, ExperimentConfig, ExperimentFamily,
};
use pinem_tomo::density::{simulate_pinem_state, square_state, DensityMatrix, HermitianMatrix};
use pinem_tomo::io::{
    read_pqt1, read_spectrogram_csv, write_experiment_csv, write_pqt1, write_report_json,
    write_spectrogram_csv, ReportDocument,
};
use pinem_tomo::operator::ForwardOperator;
use pinem_tomo::solvers::{
    add_noise, relative_error, solve_cg_unconstrained, solve_pgd_constrained, NoiseModel,
    SolveReport, StopReason,
};
use pinem_tomo::Error;

/// Reserved thread-count knob. The numerics are currently single-threaded;
/// the value is validated and values above 1 are accepted and ignored.
const THREADS_ENV: &str = "PINEM_TOMO_THREADS";

#[derive(Parser)]
#[command(
    name = "pinem-tomo",
    version,
    about = "PINEM quantum-state tomography: simulation, reconstruction, diagnostics",
    after_help = "Environment: PINEM_TOMO_THREADS caps worker threads (currently single-threaded; \
                  values above 1 are accepted and ignored)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a state and write its measured spectrogram
    Simulate(SimulateArgs),
    /// Reconstruct a density matrix from a spectrogram
    Reconstruct(ReconstructArgs),
    /// Report injectivity, inverse-norm bound and condition numbers
    Diagnose(DiagnoseArgs),
    /// Run an instability or reconstruction sweep and write CSV
    Experiment(ExperimentArgs),
}

enum CliError {
    Usage(String),
    Lib(Error),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Lib(Error::Io { .. }) | CliError::Lib(Error::Parse { .. }) => {
                ExitCode::from(4)
            }
            CliError::Lib(_) => ExitCode::from(2),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Lib(err) => write!(f, "{err}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError::Lib(err)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    validate_thread_env()?;
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Experiment(args) => cmd_experiment(args),
    }
}

fn validate_thread_env() -> Result<(), CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(v) if v >= 1 => Ok(()),
            _ => Err(usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            ))),
        },
        Err(_) => Ok(()),
    }
}

/// CLI value if given, else config-file value, else the default.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn pick_req<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| usage(format!("missing required {name}")))
}

fn load_config<T>(path: &Option<PathBuf>) -> Result<T, CliError>
where
    T: for<'de> Deserialize<'de> + Default,
{
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| {
        CliError::Lib(Error::Io {
            path: path.display().to_string(),
            source,
        })
    })?;
    serde_json::from_str(&text).map_err(|err| {
        CliError::Lib(Error::Parse {
            path: path.display().to_string(),
            line: err.line(),
            message: err.to_string(),
        })
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| {
        CliError::Lib(Error::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

/// JSON number, or null for values outside double range (printed as `inf`
/// in the human-readable report).
fn json_f64(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

// ---------------------------------------------------------------- simulate

#[derive(Args)]
struct SimulateArgs {
    /// simulate the phase-jittered pump state
    #[arg(long)]
    pinem: bool,
    /// simulate the centered square state
    #[arg(long)]
    square: bool,
    /// pump coupling for --pinem
    #[arg(long)]
    g_pump: Option<f64>,
    /// phase-jitter width in radians for --pinem
    #[arg(long)]
    jitter_sigma: Option<f64>,
    /// number of mixture components for --pinem
    #[arg(long)]
    n_mix: Option<usize>,
    /// square side length for --square
    #[arg(long)]
    w: Option<usize>,
    /// matrix size
    #[arg(long = "N")]
    n: Option<usize>,
    /// number of equidistant angles (default 2N-1)
    #[arg(long = "M")]
    m: Option<usize>,
    /// measurement coupling strength
    #[arg(long)]
    g: Option<f64>,
    /// noise level delta added to the data
    #[arg(long)]
    noise: Option<f64>,
    /// interpret --noise as a fraction of the data norm
    #[arg(long)]
    relative_noise: bool,
    /// seed for the noise draw
    #[arg(long)]
    seed: Option<u64>,
    /// output path for the state matrix
    #[arg(long)]
    state_out: Option<PathBuf>,
    /// output path for the spectrogram CSV
    #[arg(long)]
    spectrogram_out: Option<PathBuf>,
    /// JSON file with defaults for any of the above; flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateFile {
    pinem: Option<bool>,
    square: Option<bool>,
    g_pump: Option<f64>,
    jitter_sigma: Option<f64>,
    n_mix: Option<usize>,
    w: Option<usize>,
    n: Option<usize>,
    m: Option<usize>,
    g: Option<f64>,
    noise: Option<f64>,
    relative_noise: Option<bool>,
    seed: Option<u64>,
    state_out: Option<PathBuf>,
    spectrogram_out: Option<PathBuf>,
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, CliError> {
    let file: SimulateFile = load_config(&args.config)?;
    let pinem = args.pinem || file.pinem.unwrap_or(false);
    let square = args.square || file.square.unwrap_or(false);
    if pinem == square {
        return Err(usage("exactly one of --pinem or --square is required"));
    }
    let n = pick_req(args.n, file.n, "--N")?;
    if n == 0 {
        return Err(usage("--N must be at least 1"));
    }
    let m = pick(args.m, file.m, 2 * n - 1);
    let g = pick_req(args.g, file.g, "--g")?;
    let noise = pick(args.noise, file.noise, 0.0);
    if !(noise >= 0.0) {
        return Err(usage(format!("--noise must be nonnegative, got {noise}")));
    }
    let relative = args.relative_noise || file.relative_noise.unwrap_or(false);
    let seed = pick(args.seed, file.seed, 7);
    let state_out = pick(args.state_out, file.state_out, PathBuf::from("state.pqt1"));
    let spectrogram_out = pick(
        args.spectrogram_out,
        file.spectrogram_out,
        PathBuf::from("spectrogram.csv"),
    );

    let state: DensityMatrix = if pinem {
        let g_pump = pick(args.g_pump, file.g_pump, 1.73);
        let jitter_sigma = pick(args.jitter_sigma, file.jitter_sigma, 0.1);
        let n_mix = pick(args.n_mix, file.n_mix, 21);
        simulate_pinem_state(g_pump, jitter_sigma, n_mix, n)?
    } else {
        let w = pick_req(args.w, file.w, "--w")?;
        square_state(n, w)?
    };

    let op = ForwardOperator::new_equidistant(n, g, m)?;
    let clean = op.forward_fast(&state.as_hermitian())?;
    let delta = if relative { noise * clean.norm() } else { noise };
    let y = if delta > 0.0 {
        add_noise(&clean, &NoiseModel::gaussian(delta, seed))?
    } else {
        clean
    };

    write_pqt1(&state_out, state.entries())?;
    write_spectrogram_csv(&spectrogram_out, &y)?;
    println!("state: {}", state_out.display());
    println!("spectrogram: {}", spectrogram_out.display());
    println!("||y|| = {:.16e}", y.norm());
    println!("delta = {:.16e}", delta);
    Ok(ExitCode::SUCCESS)
}

// ------------------------------------------------------------- reconstruct

#[derive(Args)]
struct ReconstructArgs {
    /// spectrogram CSV to invert
    #[arg(long)]
    input: Option<PathBuf>,
    /// coupling strength used for the measurement
    #[arg(long)]
    g: Option<f64>,
    /// solver: cg (unconstrained) or pgd (density-constrained)
    #[arg(long)]
    method: Option<String>,
    /// noise level delta for the discrepancy stop
    #[arg(long)]
    noise: Option<f64>,
    /// interpret --noise as a fraction of the data norm
    #[arg(long)]
    relative_noise: bool,
    /// iteration cap (default 5000 for cg, 20000 for pgd)
    #[arg(long)]
    max_iter: Option<usize>,
    /// gradient step for pgd (default 1/lambda_max)
    #[arg(long)]
    step: Option<f64>,
    /// output path for the estimate matrix
    #[arg(long)]
    estimate_out: Option<PathBuf>,
    /// output path for the JSON solve report
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// reference state (PQT1) for the relative-error field
    #[arg(long)]
    truth: Option<PathBuf>,
    /// JSON file with defaults for any of the above; flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReconstructFile {
    input: Option<PathBuf>,
    g: Option<f64>,
    method: Option<String>,
    noise: Option<f64>,
    relative_noise: Option<bool>,
    max_iter: Option<usize>,
    step: Option<f64>,
    estimate_out: Option<PathBuf>,
    report_out: Option<PathBuf>,
    truth: Option<PathBuf>,
}

/// Angle grids written by `simulate` are 2 pi m / M; anything matching that
/// within 1e-12 takes the FFT fast path, other grids fall back to the
/// per-angle series.
fn is_equidistant(angles: &[f64]) -> bool {
    let step = std::f64::consts::TAU / angles.len() as f64;
    angles
        .iter()
        .enumerate()
        .all(|(i, &a)| (a - i as f64 * step).abs() <= 1e-12)
}

fn cmd_reconstruct(args: ReconstructArgs) -> Result<ExitCode, CliError> {
    let file: ReconstructFile = load_config(&args.config)?;
    let input = pick_req(args.input, file.input, "--input")?;
    let g = pick_req(args.g, file.g, "--g")?;
    let method = pick(args.method, file.method, "pgd".to_string());
    let constrained = match method.as_str() {
        "pgd" => true,
        "cg" => false,
        other => {
            return Err(usage(format!(
                "unknown method `{other}`; expected cg or pgd"
            )))
        }
    };
    let noise = pick(args.noise, file.noise, 0.0);
    if !(noise >= 0.0) {
        return Err(usage(format!("--noise must be nonnegative, got {noise}")));
    }
    let relative = args.relative_noise || file.relative_noise.unwrap_or(false);
    let step = args.step.or(file.step);
    if step.is_some() && !constrained {
        return Err(usage("--step only applies to --method pgd"));
    }
    let max_iter = pick(
        args.max_iter,
        file.max_iter,
        if constrained { 20000 } else { 5000 },
    );
    let estimate_out = pick(
        args.estimate_out,
        file.estimate_out,
        PathBuf::from("estimate.pqt1"),
    );
    let report_out = pick(args.report_out, file.report_out, PathBuf::from("report.json"));
    let truth = args.truth.or(file.truth);

    let y = read_spectrogram_csv(&input)?;
    let op = if is_equidistant(y.angles()) {
        ForwardOperator::new_equidistant(y.n(), g, y.m())?
    } else {
        ForwardOperator::new_with_angles(y.n(), g, y.angles().to_vec())?
    };
    let delta = if relative { noise * y.norm() } else { noise };

    let report: SolveReport = if constrained {
        solve_pgd_constrained(&op, &y, delta, max_iter, step)?
    } else {
        solve_cg_unconstrained(&op, &y, delta, max_iter)?
    };

    write_pqt1(&estimate_out, report.estimate.entries())?;
    let rel_err = match &truth {
        Some(path) => {
            let reference = HermitianMatrix::new(read_pqt1(path)?)?;
            Some(relative_error(&report.estimate.to_hermitian(), &reference)?)
        }
        None => None,
    };

    let mut parameters = Map::new();
    parameters.insert("input".into(), json!(input.display().to_string()));
    parameters.insert("method".into(), json!(method));
    parameters.insert("N".into(), json!(y.n()));
    parameters.insert("M".into(), json!(y.m()));
    parameters.insert("g".into(), json_f64(g));
    parameters.insert("delta".into(), json_f64(delta));
    parameters.insert("max_iter".into(), json!(max_iter));
    if let Some(s) = step {
        parameters.insert("step".into(), json_f64(s));
    }
    let doc = ReportDocument::from_report(&report, parameters, rel_err);
    write_report_json(&report_out, &doc)?;

    println!("estimate: {}", estimate_out.display());
    println!("report: {}", report_out.display());
    println!("iterations = {}", report.iterations);
    println!("stop reason = {}", report.stop_reason.as_str());
    println!("final residual = {:.16e}", report.final_residual());
    if let Some(err) = rel_err {
        println!("relative error = {:.16e}", err);
    }
    match report.stop_reason {
        StopReason::MaxIter => Ok(ExitCode::from(3)),
        _ => Ok(ExitCode::SUCCESS),
    }
}

// ---------------------------------------------------------------- diagnose

#[derive(Args)]
struct DiagnoseArgs {
    /// matrix size
    #[arg(long = "N")]
    n: Option<usize>,
    /// coupling strength
    #[arg(long)]
    g: Option<f64>,
    /// number of equidistant angles (default 2N-1)
    #[arg(long = "M")]
    m: Option<usize>,
    /// run the dense decomposition even above the size guard
    #[arg(long)]
    allow_large: bool,
    /// also write the report as JSON
    #[arg(long)]
    json_out: Option<PathBuf>,
    /// JSON file with defaults for any of the above; flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DiagnoseFile {
    n: Option<usize>,
    g: Option<f64>,
    m: Option<usize>,
    allow_large: Option<bool>,
    json_out: Option<PathBuf>,
}

fn fmt_cond(v: f64) -> String {
    if v.is_finite() {
        format!("{:.6e}", v)
    } else {
        "inf".to_string()
    }
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<ExitCode, CliError> {
    let file: DiagnoseFile = load_config(&args.config)?;
    let n = pick_req(args.n, file.n, "--N")?;
    if n == 0 {
        return Err(usage("--N must be at least 1"));
    }
    let g = pick_req(args.g, file.g, "--g")?;
    let m = pick(args.m, file.m, 2 * n - 1);
    let allow_large = args.allow_large || file.allow_large.unwrap_or(false);
    let json_out = args.json_out.or(file.json_out);

    let (injective, min_modulus) = check_injectivity(n, g, m)?;
    let bound = inverse_norm_lower_bound(n, g, m)?;
    let heuristic = coupling_below_heuristic(n, g);
    let op = ForwardOperator::new_equidistant(n, g, m)?;
    let condition = condition_number(&op, allow_large).map_err(|err| match err {
        Error::SizeGuard { n, guard } => usage(format!(
            "size {n} exceeds the dense diagnostic guard {guard}; pass --allow-large to run anyway"
        )),
        other => CliError::Lib(other),
    })?;

    println!("N = {n}, M = {m}, g = {g}");
    println!("angles sufficient (M >= 2N-1): {}", m >= 2 * n - 1);
    println!("min |dtilde| on the grid = {:.16e}", min_modulus);
    println!("injective: {injective}");
    println!("inverse-norm lower bound = {:.16e}", bound);
    println!(
        "implied smallest singular value <= {:.16e}",
        bound.recip()
    );
    println!("coupling below N/5 heuristic: {heuristic}");
    println!("cond(T) = {}", fmt_cond(condition.cond_operator));
    println!(
        "cond(T*T) = {}{}",
        fmt_cond(condition.cond_normal),
        if condition.noise_floored {
            "  (at or beyond double-precision resolution)"
        } else {
            ""
        }
    );

    if let Some(path) = json_out {
        let report = json!({
            "N": n,
            "M": m,
            "g": json_f64(g),
            "angles_sufficient": m >= 2 * n - 1,
            "min_kernel_modulus": json_f64(min_modulus),
            "injective": injective,
            "inverse_norm_lower_bound": json_f64(bound),
            "coupling_below_heuristic": heuristic,
            "cond_operator": json_f64(condition.cond_operator),
            "cond_normal": json_f64(condition.cond_normal),
            "noise_floored": condition.noise_floored,
        });
        write_json(&path, &report)?;
        println!("report: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// -------------------------------------------------------------- experiment

#[derive(Args)]
struct ExperimentArgs {
    /// family: general, bandlimited, exponential, polynomial or reconstruction
    #[arg(long)]
    family: Option<String>,
    /// matrix size
    #[arg(long = "N")]
    n: Option<usize>,
    /// coupling strength
    #[arg(long)]
    g: Option<f64>,
    /// number of angles for reconstruction sweeps
    #[arg(long = "M")]
    m: Option<usize>,
    /// off-diagonal grid: comma list `1,2,3` or inclusive range `start:end:step`
    #[arg(long)]
    k: Option<String>,
    /// band widths for the bandlimited family, comma list
    #[arg(long = "n")]
    widths: Option<String>,
    /// band-profile regularizer (default 1e-15 bandlimited, 0.5 exponential)
    #[arg(long)]
    eps: Option<f64>,
    /// decay base of the exponential width schedule
    #[arg(long)]
    b: Option<f64>,
    /// Hoelder exponents for the polynomial family, comma list
    #[arg(long)]
    mu: Option<String>,
    /// square-state widths for reconstruction sweeps, comma list
    #[arg(long)]
    w: Option<String>,
    /// relative noise levels for reconstruction sweeps, comma list
    #[arg(long)]
    noise_levels: Option<String>,
    /// seed for noise draws
    #[arg(long)]
    seed: Option<u64>,
    /// iteration cap for the unconstrained solver
    #[arg(long)]
    cg_max_iter: Option<usize>,
    /// iteration cap for the constrained solver
    #[arg(long)]
    pgd_max_iter: Option<usize>,
    /// refuse runs whose working set exceeds this many bytes
    #[arg(long)]
    memory_cap: Option<u64>,
    /// output CSV path (default <family>.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with ExperimentConfig defaults; flags win
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(token: &str, what: &str) -> Result<T, CliError> {
    token
        .trim()
        .parse::<T>()
        .map_err(|_| usage(format!("could not parse `{token}` in {what}")))
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    s.split(',').map(|t| parse_num(t, what)).collect()
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(|t| parse_num(t, what)).collect()
}

/// `start:end:step` (inclusive, step optional) or a comma list.
fn parse_usize_grid(s: &str, what: &str) -> Result<Vec<usize>, CliError> {
    if !s.contains(':') {
        return parse_usize_list(s, what);
    }
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() > 3 {
        return Err(usage(format!(
            "bad range `{s}` in {what}; expected start:end or start:end:step"
        )));
    }
    let start: usize = parse_num(parts[0], what)?;
    let end: usize = parse_num(parts[1], what)?;
    let step: usize = if parts.len() == 3 {
        parse_num(parts[2], what)?
    } else {
        1
    };
    if step == 0 || end < start {
        return Err(usage(format!(
            "bad range `{s}` in {what}; need start <= end and step >= 1"
        )));
    }
    Ok((start..=end).step_by(step).collect())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode, CliError> {
    let family_name = args
        .family
        .ok_or_else(|| usage("missing required --family"))?;
    let family = ExperimentFamily::parse(&family_name).map_err(|_| {
        usage(format!(
            "unknown family `{family_name}`; expected one of general, bandlimited, exponential, \
             polynomial, reconstruction"
        ))
    })?;

    let mut config: ExperimentConfig = load_config(&args.config)?;
    if let Some(v) = args.n {
        config.size = v;
    }
    if let Some(v) = args.g {
        config.g = v;
    }
    if let Some(v) = args.m {
        config.angles = v;
    }
    if let Some(s) = &args.k {
        config.k_values = parse_usize_grid(s, "--k")?;
    }
    if let Some(s) = &args.widths {
        config.widths = parse_f64_list(s, "--n")?;
    }
    if let Some(v) = args.eps {
        config.eps = Some(v);
    }
    if let Some(v) = args.b {
        config.b = v;
    }
    if let Some(s) = &args.mu {
        config.mu_values = parse_f64_list(s, "--mu")?;
    }
    if let Some(s) = &args.w {
        config.state_widths = parse_usize_list(s, "--w")?;
    }
    if let Some(s) = &args.noise_levels {
        config.noise_levels = parse_f64_list(s, "--noise-levels")?;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.cg_max_iter {
        config.cg_max_iter = v;
    }
    if let Some(v) = args.pgd_max_iter {
        config.pgd_max_iter = v;
    }
    if let Some(v) = args.memory_cap {
        config.memory_cap = v;
    }

    let run = run_experiment(family, &config)?;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{family}.csv")));
    write_experiment_csv(&out, &run)?;
    println!("{}", run.comment);
    println!("wrote {} records to {}", run.records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}
