//! The `certibias` command line.
//!
//! Every command checks its numeric flags, computes everything in memory
//! and only then writes its outputs, so a failing run leaves no files.
//! Errors go to stderr as one JSON object.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::biasstats::{bias_profile, shift_matrix};
use crate::compcert::{lipschitz_from_dataset, radius_report, LipschitzParams, RadiusReport};
use crate::csvio::{self, matrix_to_string};
use crate::dataset::{load_dataset, save_dataset, validate_dataset, Dataset};
use crate::debias::ridge::FeatureMap;
use crate::debias::{corrected_shifts, FittedCorrector};
use crate::error::Error;
use crate::margincert::{records_csv, verify_certificates, BridgeParams, Methods, StatsConfig};
use crate::metrics::aggregate::{aggregate, metric_map_from_json, table_csv};
use crate::metrics::bootstrap::BootstrapConfig;
use crate::metrics::{evaluate, radius_contraction};
use crate::pipeline::{alpha_sweep, certify, fit_corrector, Method, PipelineConfig};
use crate::report;
use crate::split::{split_dataset, Proportions, Split};
use crate::synth::{gen_linear_dataset, gen_scenario, NoiseSpec, Panel, ScenarioSpec};

/// Stdout line that tolerates a closed pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

const EXIT_CODES: &str = "\
Exit codes:
  0   success
  1   ingest found invariant violations
  2   invalid flag value or usage
  3   missing file or artifact
  4   malformed or non-finite value
  5   dimension mismatch or label out of range
  6   insufficient data
  7   factorization failure or indefinite Gram matrix
  8   perturbation mass outside box exceeds failure budget
  9   zero margin normalizer
  10  i/o error
  11  json error

Environment:
  CERTIBIAS_THREADS   maximum worker threads";

#[derive(Parser, Debug)]
#[command(name = "certibias", version, about = "Perturbation-induced bias, debiasing and robustness certificates", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate a feature dump.
    Ingest(IngestArgs),
    /// Bias, variance and range bounds on one split.
    Stats(StatsArgs),
    /// Component-wise robustness radii, optionally before and after correction.
    Radius(RadiusArgs),
    /// Fit, apply or sweep debiasing correctors.
    #[command(subcommand)]
    Debias(DebiasCommand),
    /// Per-example and population margin certificates.
    Certify(CertifyArgs),
    /// BAC, damage/recovery and radius contraction on the test split.
    Metrics(MetricsArgs),
    /// Mean, std and BCa intervals over metric reports.
    Aggregate(AggregateArgs),
    /// Write a synthetic fixture dump.
    Simulate(SimulateArgs),
    /// Render CSV tables and SVG figures from command outputs.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum DebiasCommand {
    /// Fit a corrector on the training split.
    Fit(FitArgs),
    /// Write a corrected dump.
    Apply(ApplyArgs),
    /// Gram-penalty sweep over alpha.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct SplitArgs {
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train, test and hold-out fractions.
    #[arg(long, default_value = "0.5,0.35,0.15")]
    proportions: String,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Treat warnings as violations.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long, default_value = "certibias_out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RadiusArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    phi: f64,
    /// Corrector directory.
    #[arg(long)]
    bias_file: Option<PathBuf>,
    /// Lipschitz constants, one per component.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
    /// Per-coordinate perturbation half-width; defaults to the largest observed.
    #[arg(long)]
    noise_c: Option<f64>,
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long, default_value = "certibias_out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    method: String,
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Principal directions for the PCA corrector.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 201)]
    grid_points: usize,
    #[arg(long, default_value_t = 0.9)]
    percentile: f64,
    #[arg(long, default_value_t = 0.05)]
    phi: f64,
    /// `linear` or `with-norm`.
    #[arg(long, default_value = "linear")]
    feature_map: String,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ApplyArgs {
    #[arg(long)]
    corrector: PathBuf,
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,1,10,100,1000")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    phi: f64,
    #[arg(long, default_value_t = 0.05)]
    psi: f64,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long, default_value = "certibias_out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    phi: f64,
    #[arg(long, default_value_t = 0.05)]
    psi: f64,
    #[arg(long)]
    corrector: Option<PathBuf>,
    #[arg(long, default_value = "hoeffding,bernstein,cantelli")]
    methods: String,
    /// Histogram bins of the density-ratio estimate.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    #[arg(long, default_value_t = 0.5)]
    calibration_fraction: f64,
    /// Fixed out-of-box mass instead of the per-example estimate.
    #[arg(long)]
    eps_box: Option<f64>,
    /// Fixed density-ratio constant instead of the histogram estimate.
    #[arg(long)]
    cvb: Option<f64>,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long, default_value = "certibias_out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    corrector: Option<PathBuf>,
    /// Failure probability of the reported radii.
    #[arg(long, default_value_t = 0.05)]
    phi: f64,
    #[command(flatten)]
    split_args: SplitArgs,
    #[arg(long, default_value = "metrics_report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    /// Glob matching metric report JSON files.
    #[arg(long)]
    reports: String,
    #[arg(long)]
    out: PathBuf,
    /// Add BCa intervals.
    #[arg(long)]
    ci: bool,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// `a`, `b`, `c`, `d` or `linear`.
    #[arg(long)]
    panel: String,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 40)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value = "uniform:0.05")]
    noise: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding outputs of earlier commands (searched recursively).
    #[arg(long)]
    artifacts: PathBuf,
    #[arg(long, default_value = "certibias_report")]
    out: PathBuf,
    /// Histogram bins for certification changes.
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

/// Failure of a command, with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    InvalidDataset(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Lib(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::InvalidDataset(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Lib(e) => match e {
                Error::MissingFile(_) | Error::MissingArtifact(_) => 3,
                Error::Parse { .. } | Error::NonFinite { .. } => 4,
                Error::DimensionMismatch(_) | Error::LabelOutOfRange { .. } => 5,
                Error::InsufficientData(_) => 6,
                Error::Factorization { .. } | Error::IndefiniteGram { .. } => 7,
                Error::BudgetExceeded { .. } => 8,
                Error::ZeroNormalizer { .. } => 9,
                Error::Io { .. } => 10,
                Error::Json(_) => 11,
                Error::InvalidArgument(_) => 2,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::InvalidDataset(_) => "invalid_dataset",
            CliError::Lib(e) => e.kind(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::InvalidDataset(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.kind(), "message": self.message(), "exit_code": self.exit_code()}).to_string()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(msg()))
    }
}

fn check_prob(name: &str, v: f64) -> CliResult<()> {
    check(v > 0.0 && v < 1.0, || format!("--{name} must lie in (0, 1), got {v}"))
}

fn parse_proportions(s: &str) -> CliResult<Proportions> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--proportions expects three numbers, got {s:?}")))?;
    let [train, test, holdout] = parts[..] else {
        return Err(CliError::Usage(format!("--proportions expects three numbers, got {s:?}")));
    };
    let p = Proportions { train, test, holdout };
    p.validate()?;
    Ok(p)
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> CliResult<T> {
    Ok(s.parse::<T>()?)
}

fn feature_map(s: &str) -> CliResult<FeatureMap> {
    match s {
        "linear" => Ok(FeatureMap::Linear),
        "with-norm" => Ok(FeatureMap::WithNorm),
        _ => Err(CliError::Usage(format!("--feature-map must be linear or with-norm, got {s:?}"))),
    }
}

/// Files produced by a command, written together at the end.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, String)>,
}

impl Outputs {
    fn add(&mut self, path: PathBuf, contents: String) {
        self.files.push((path, contents));
    }

    fn json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> CliResult<()> {
        let s = serde_json::to_string_pretty(value).map_err(Error::from)?;
        self.add(path, s + "\n");
        Ok(())
    }

    fn write(self) -> CliResult<()> {
        for (path, contents) in self.files {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            csvio::write_string(&path, &contents)?;
        }
        Ok(())
    }
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn guard_out(dump: &Path, out: &Path) -> CliResult<()> {
    check(!same_dir(dump, out), || format!("output directory {} is the input dump", out.display()))
}

fn load(dir: &Path) -> CliResult<Dataset> {
    Ok(load_dataset(dir)?)
}

fn load_corrected(d: &Dataset, corrector: &Path) -> CliResult<(FittedCorrector, Dataset)> {
    let c = FittedCorrector::load(corrector)?;
    let corrected = c.corrector.apply_dataset(d)?;
    Ok((c, corrected))
}

fn run_ingest(a: IngestArgs) -> CliResult<()> {
    let d = load(&a.dir)?;
    let r = validate_dataset(&d);
    let violations: Vec<String> = r.violations.iter().map(|v| v.to_string()).collect();
    let valid = violations.is_empty() && !(a.strict && !r.warnings.is_empty());
    say!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "task_id": d.task_id,
            "valid": valid,
            "m": d.n_examples(),
            "k": d.n_perturbations(),
            "violations": violations,
            "warnings": r.warnings,
        }))
        .map_err(Error::from)?
    );
    if valid {
        Ok(())
    } else {
        Err(CliError::InvalidDataset(format!(
            "{} violations, {} warnings",
            r.violations.len(),
            r.warnings.len()
        )))
    }
}

fn run_stats(a: StatsArgs) -> CliResult<()> {
    check(a.bins >= 2, || format!("--bins must be at least 2, got {}", a.bins))?;
    let split: Split = parse(&a.split)?;
    let props = parse_proportions(&a.split_args.proportions)?;
    guard_out(&a.dir, &a.out)?;
    let d = load(&a.dir)?;
    let sa = split_dataset(&d, &props, a.split_args.seed)?;
    let s = shift_matrix(&d).select(sa.examples(split), sa.perturbations(split));
    let mut profile = bias_profile(&s, a.bins)?;
    profile.example_ids = sa.examples(split).to_vec();
    let mut out = Outputs::default();
    out.json(a.out.join("bias_profile.json"), &profile)?;
    out.add(a.out.join("per_example_means.csv"), matrix_to_string(profile.per_example_mean.view()));
    out.write()?;
    say!(
        "stats: {} examples, {} perturbations, max C {:.6}, max V {:.6}, eps_box {:.4}, cvb {:.4}",
        profile.n_examples,
        profile.n_perturbations,
        profile.c.iter().cloned().fold(0.0, f64::max),
        profile.v.iter().cloned().fold(0.0, f64::max),
        profile.eps_box,
        profile.cvb
    );
    Ok(())
}

fn radius_lip(d: &Dataset, examples: &[usize], gamma: &Option<Vec<f64>>, noise_c: Option<f64>) -> Option<LipschitzParams> {
    let observed = lipschitz_from_dataset(d, examples);
    match gamma {
        Some(g) => {
            let c = noise_c.unwrap_or_else(|| {
                examples
                    .iter()
                    .flat_map(|&j| {
                        let clean = d.clean.row(j);
                        d.perturbed
                            .index_axis(ndarray::Axis(0), j)
                            .rows()
                            .into_iter()
                            .map(move |r| (&r - &clean).iter().fold(0.0f64, |a, v| a.max(v.abs())))
                            .collect::<Vec<_>>()
                    })
                    .fold(0.0, f64::max)
            });
            Some(LipschitzParams { noise_c: c, input_dim: d.width(), gammas: g.clone() })
        }
        None => observed.map(|mut l| {
            if let Some(c) = noise_c {
                l.noise_c = c;
            }
            l
        }),
    }
}

fn run_radius(a: RadiusArgs) -> CliResult<()> {
    check_prob("phi", a.phi)?;
    if let Some(g) = &a.gamma {
        check(g.iter().all(|v| v.is_finite() && *v >= 0.0), || "--gamma values must be non-negative".into())?;
    }
    if let Some(c) = a.noise_c {
        check(c.is_finite() && c >= 0.0, || format!("--noise-c must be non-negative, got {c}"))?;
    }
    let split: Split = parse(&a.split)?;
    let props = parse_proportions(&a.split_args.proportions)?;
    guard_out(&a.dir, &a.out)?;
    let d = load(&a.dir)?;
    let sa = split_dataset(&d, &props, a.split_args.seed)?;
    let (ex, perts) = (sa.examples(split), sa.perturbations(split));
    let lip = radius_lip(&d, ex, &a.gamma, a.noise_c);
    let radii = |s: &crate::biasstats::ShiftTensor| -> CliResult<RadiusReport> {
        let p = bias_profile(&s.select(ex, perts), 10)?;
        Ok(radius_report(&p.c, &p.v, ex.len(), a.phi, lip.as_ref())?)
    };
    let before = radii(&shift_matrix(&d))?;
    let (after, p_eps_l, p_eps_v) = match &a.bias_file {
        Some(dir) => {
            let (_, corrected) = load_corrected(&d, dir)?;
            let after = radii(&corrected_shifts(&d, &corrected)?)?;
            let pv = radius_contraction(&before.epsilon_v(), &after.epsilon_v())?;
            let pl = match (before.epsilon_l(), after.epsilon_l()) {
                (Some(b), Some(x)) => Some(radius_contraction(&b, &x)?),
                _ => None,
            };
            (Some(after), pl, Some(pv))
        }
        None => (None, None, None),
    };
    let report = json!({
        "phi": a.phi,
        "split": split.to_string(),
        "m": ex.len(),
        "lipschitz": lip.is_some(),
        "before": before,
        "after": after,
        "p_eps_l": p_eps_l,
        "p_eps_v": p_eps_v,
    });
    let mut out = Outputs::default();
    out.json(a.out.join("radius_report.json"), &report)?;
    out.write()?;
    say!(
        "radius: mean epsilon_V {:.6}, mean epsilon_L {}{}",
        before.mean_epsilon_v(),
        before.mean_epsilon_l().map_or("n/a (no gamma)".into(), |v| format!("{v:.6}")),
        p_eps_v.map_or(String::new(), |p| format!(", p_eps_V {p:.2}%"))
    );
    Ok(())
}

fn run_fit(a: FitArgs) -> CliResult<()> {
    let method: Method = parse(&a.method)?;
    check(a.lambda.is_finite() && a.lambda >= 0.0, || format!("--lambda must be non-negative, got {}", a.lambda))?;
    check(a.alpha.is_finite(), || "--alpha must be finite".into())?;
    check(a.k >= 1, || "--k must be at least 1".into())?;
    check(a.grid_points >= 3, || "--grid-points must be at least 3".into())?;
    check_prob("percentile", a.percentile)?;
    check_prob("phi", a.phi)?;
    let fm = feature_map(&a.feature_map)?;
    let props = parse_proportions(&a.split_args.proportions)?;
    guard_out(&a.dir, &a.out)?;
    let d = load(&a.dir)?;
    let sa = split_dataset(&d, &props, a.split_args.seed)?;
    let mut cfg = PipelineConfig {
        proportions: props,
        seed: a.split_args.seed,
        lambda: a.lambda,
        alpha: a.alpha,
        feature_map: fm,
        pca_k: a.k,
        ..PipelineConfig::default()
    };
    cfg.search.grid_points = a.grid_points;
    cfg.search.percentile = a.percentile;
    cfg.search.phi = a.phi;
    let (fitted, search) = fit_corrector(&d, &sa, method, &cfg)?;
    let mut out = Outputs::default();
    if let Some(s) = &search {
        out.json(a.out.join("bias_search.json"), s)?;
        out.add(a.out.join("bias_sweep.csv"), report::bias_sweep_csv(&s.grid));
    }
    out.write()?;
    fitted.save(&a.out)?;
    match &search {
        Some(s) => say!("debias fit: constant, found {}, b {}", s.found, csvio::fmt_float(s.b)),
        None => say!("debias fit: {} on {} training examples", fitted.variant(), sa.train_examples.len()),
    }
    Ok(())
}

fn run_apply(a: ApplyArgs) -> CliResult<()> {
    guard_out(&a.dir, &a.out)?;
    let d = load(&a.dir)?;
    let (c, corrected) = load_corrected(&d, &a.corrector)?;
    save_dataset(&corrected, &a.out)?;
    say!("debias apply: {} corrector, {} examples written", c.variant(), corrected.n_examples());
    Ok(())
}

fn run_sweep(a: SweepArgs) -> CliResult<()> {
    check(!a.alphas.is_empty(), || "--alphas must not be empty".into())?;
    check(a.alphas.iter().all(|v| v.is_finite()), || "--alphas must be finite".into())?;
    check(a.lambda.is_finite() && a.lambda >= 0.0, || "--lambda must be non-negative".into())?;
    check_prob("phi", a.phi)?;
    check_prob("psi", a.psi)?;
    let props = parse_proportions(&a.split_args.proportions)?;
    guard_out(&a.dir, &a.out)?;
    let d = load(&a.dir)?;
    let cfg = PipelineConfig {
        proportions: props,
        seed: a.split_args.seed,
        lambda: a.lambda,
        phi: a.phi,
        psi: a.psi,
        ..PipelineConfig::default()
    };
    let sa = cfg.split(&d)?;
    let rows = alpha_sweep(&d, &sa, &a.alphas, &cfg)?;
    let mut out = Outputs::default();
    out.json(a.out.join("alpha_sweep.json"), &rows)?;
    out.add(a.out.join("alpha_sweep.csv"), report::alpha_sweep_csv(&rows));
    out.write()?;
    let green = rows.iter().filter(|r| r.delta_clean >= 0.0 && r.delta_pert > 0.0).count();
    say!("debias sweep: {} alphas, {} with delta_clean >= 0 and delta_pert > 0", rows.len(), green);
    Ok(())
}

fn run_certify(a: CertifyArgs) -> CliResult<()> {
    check_prob("phi", a.phi)?;
    check_prob("psi", a.psi)?;
    check(a.bins >= 2, || format!("--bins must be at least 2, got {}", a.bins))?;
    check_prob("calibration-fraction", a.calibration_fraction)?;
    if let Some(e) = a.eps_box {
        check((0.0..1.0).contains(&e), || format!("--eps-box must lie in [0, 1), got {e}"))?;
    }
    if let Some(c) = a.cvb {
        check(c.is_finite() && c >= 1.0, || format!("--cvb must be at least 1, got {c}"))?;
    }
    let methods: Methods = parse(&a.methods)?;
    let props = parse_proportions(&a.split_args.proportions)?;
    guard_out(&a.dir, &a.out)?;
    let d = load(&a.dir)?;
    let cfg = PipelineConfig {
        proportions: props,
        seed: a.split_args.seed,
        phi: a.phi,
        psi: a.psi,
        stats: StatsConfig { calibration_fraction: a.calibration_fraction, bins: a.bins },
        methods,
        bridge: BridgeParams { eps_box: a.eps_box, cvb: a.cvb },
        ..PipelineConfig::default()
    };
    let sa = cfg.split(&d)?;
    let before = certify(&d, &sa, &cfg)?;
    let ver_before = verify_certificates(&d, &before.stats, &before.records)?;
    let after = match &a.corrector {
        Some(dir) => {
            let (_, corrected) = load_corrected(&d, dir)?;
            let c = certify(&corrected, &sa, &cfg)?;
            let v = verify_certificates(&corrected, &c.stats, &c.records)?;
            Some((c, v))
        }
        None => None,
    };
    let s = &before.summary;
    let sa_ = after.as_ref().map(|(c, _)| &c.summary);
    let summary = json!({
        "phi": a.phi,
        "psi": a.psi,
        "methods": a.methods,
        "cvb_estimator": if a.cvb.is_some() { "fixed" } else { "histogram" },
        "bins": a.bins,
        "calibration_fraction": a.calibration_fraction,
        "p_C": s.p_c,
        "p_H": s.p_h,
        "P_C": s.population_c,
        "P_H": s.population_h,
        "p_C_corrected": sa_.and_then(|x| x.p_c),
        "p_H_corrected": sa_.and_then(|x| x.p_h),
        "P_C_corrected": sa_.and_then(|x| x.population_c),
        "P_H_corrected": sa_.and_then(|x| x.population_h),
        "before": s,
        "after": sa_,
        "verification_before": ver_before,
        "verification_after": after.as_ref().map(|(_, v)| v),
    });
    let mut out = Outputs::default();
    out.add(a.out.join("cert_records.csv"), records_csv(&before.records));
    if let Some((c, _)) = &after {
        out.add(a.out.join("cert_records_corrected.csv"), records_csv(&c.records));
    }
    out.json(a.out.join("cert_summary.json"), &summary)?;
    out.write()?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    say!(
        "certify: p_C {}, p_H {}, P_C {}, P_H {}{}",
        fmt(s.p_c),
        fmt(s.p_h),
        fmt(s.population_c),
        fmt(s.population_h),
        sa_.map_or(String::new(), |x| format!(" | corrected p_C {}, P_C {}", fmt(x.p_c), fmt(x.population_c)))
    );
    Ok(())
}

fn run_metrics(a: MetricsArgs) -> CliResult<()> {
    check_prob("phi", a.phi)?;
    let props = parse_proportions(&a.split_args.proportions)?;
    if let Some(parent) = a.out.parent() {
        guard_out(&a.dir, parent)?;
    }
    let d = load(&a.dir)?;
    let mut cfg = PipelineConfig { proportions: props, seed: a.split_args.seed, ..PipelineConfig::default() };
    cfg.search.phi = a.phi;
    let sa = cfg.split(&d)?;
    let (name, corrected) = match &a.corrector {
        Some(dir) => {
            let (c, corrected) = load_corrected(&d, dir)?;
            (Some(c.variant().to_string()), corrected)
        }
        None => (None, d.clone()),
    };
    let mut r = match &a.corrector {
        Some(_) => crate::pipeline::evaluate_corrector(&d, &corrected, &sa, &cfg)?,
        None => {
            let mut r = evaluate(&d, &corrected, &sa.test_examples, &sa.test_perts, None, None)?;
            r.split = Split::Test.to_string();
            r
        }
    };
    r.corrector = name;
    let mut out = Outputs::default();
    out.json(a.out.clone(), &r)?;
    out.write()?;
    say!(
        "metrics: clean BAC {:.4}, pert BAC {:.4}, delta_drop {:.2}, p_damage {:.2}",
        r.bac_clean_before, r.bac_pert_before, r.delta_drop, r.p_damage
    );
    Ok(())
}

fn run_aggregate(a: AggregateArgs) -> CliResult<()> {
    check_prob("level", a.level)?;
    check(a.resamples >= 100, || "--resamples must be at least 100".into())?;
    let mut paths: Vec<PathBuf> = glob::glob(&a.reports)
        .map_err(|e| CliError::Usage(format!("bad glob {:?}: {e}", a.reports)))?
        .filter_map(|p| p.ok())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingArtifact(format!("no reports match {:?}", a.reports)).into());
    }
    let maps = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
            Ok(metric_map_from_json(&v))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = BootstrapConfig { resamples: a.resamples, level: a.level, seed: a.seed };
    let rows = aggregate(&maps, a.ci.then_some(&cfg))?;
    let mut out = Outputs::default();
    out.add(a.out.clone(), table_csv(&rows));
    out.write()?;
    say!("aggregate: {} reports, {} metrics", maps.len(), rows.len());
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> CliResult<()> {
    let noise: NoiseSpec = parse(&a.noise)?;
    check(a.n >= 1 && a.d >= 1, || "--n and --d must be positive".into())?;
    check(a.m >= 4, || format!("--m must be at least 4, got {}", a.m))?;
    check(a.k >= 1, || "--k must be at least 1".into())?;
    let (d, truth) = if a.panel == "linear" {
        let (d, _, t) = gen_linear_dataset(a.n, a.d, a.m, a.k, &noise, a.seed)?;
        (d, t)
    } else {
        let panel: Panel = parse(&a.panel)?;
        let spec = ScenarioSpec { panel, n: a.n, d: a.d, m: a.m, k: a.k, noise, scale: None, seed: a.seed };
        gen_scenario(&spec)?
    };
    let mut out = Outputs::default();
    out.json(a.out.join("ground_truth.json"), &truth)?;
    save_dataset(&d, &a.out)?;
    out.write()?;
    say!("simulate: {} with m = {}, k = {}, n = {}", d.task_id, a.m, a.k, a.n);
    Ok(())
}

fn find_files(root: &Path, name: &str) -> CliResult<Vec<PathBuf>> {
    let pattern = root.join("**").join(name);
    let mut v: Vec<PathBuf> = glob::glob(&pattern.to_string_lossy())
        .map_err(|e| CliError::Usage(e.to_string()))?
        .filter_map(|p| p.ok())
        .collect();
    v.sort();
    Ok(v)
}

fn read_json(p: &Path) -> CliResult<serde_json::Value> {
    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn run_report(a: ReportArgs) -> CliResult<()> {
    check(a.bins >= 1, || "--bins must be at least 1".into())?;
    if !a.artifacts.is_dir() {
        return Err(Error::MissingArtifact(format!("{} is not a directory", a.artifacts.display())).into());
    }
    let mut out = Outputs::default();

    let grid = match find_files(&a.artifacts, "bias_search.json")?.first() {
        Some(p) => {
            let s: crate::debias::constant::BiasSearchResult = serde_json::from_value(read_json(p)?).map_err(Error::from)?;
            s.grid
        }
        None => Vec::new(),
    };
    out.add(a.out.join("bias_sweep.csv"), report::bias_sweep_csv(&grid));
    out.add(a.out.join("bias_sweep.svg"), report::bias_sweep_svg(&grid));

    let summaries = find_files(&a.artifacts, "cert_summary.json")?;
    let mut deltas = Vec::new();
    let mut verification = None;
    for p in &summaries {
        let v = read_json(p)?;
        if let (Some(b), Some(x)) = (v["p_C"].as_f64(), v["p_C_corrected"].as_f64()) {
            deltas.push(x - b);
        }
        if verification.is_none() {
            let key = if v["verification_after"].is_null() { "verification_before" } else { "verification_after" };
            verification = serde_json::from_value::<crate::margincert::Verification>(v[key].clone()).ok();
        }
    }
    out.add(a.out.join("cert_delta.svg"), report::cert_delta_histogram_svg(&deltas, a.bins));
    out.add(a.out.join("cert_bac.svg"), report::cert_bac_bars_svg(verification.as_ref()));

    let rows = match find_files(&a.artifacts, "alpha_sweep.json")?.first() {
        Some(p) => serde_json::from_value(read_json(p)?).map_err(Error::from)?,
        None => Vec::new(),
    };
    out.add(a.out.join("alpha_sweep.csv"), report::alpha_sweep_csv(&rows));
    out.add(a.out.join("alpha_sweep.svg"), report::alpha_sweep_svg(&rows));
    out.write()?;
    say!(
        "report: {} grid points, {} certification summaries, {} sweep rows",
        grid.len(),
        summaries.len(),
        rows.len()
    );
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("CERTIBIAS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| CliError::Usage(format!("CERTIBIAS_THREADS must be a positive integer, got {v:?}")))?;
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            say!("{}", e.to_string().trim_end());
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string().trim().to_string())),
    };
    configure_threads()?;
    match cli.command {
        Command::Ingest(a) => run_ingest(a),
        Command::Stats(a) => run_stats(a),
        Command::Radius(a) => run_radius(a),
        Command::Debias(DebiasCommand::Fit(a)) => run_fit(a),
        Command::Debias(DebiasCommand::Apply(a)) => run_apply(a),
        Command::Debias(DebiasCommand::Sweep(a)) => run_sweep(a),
        Command::Certify(a) => run_certify(a),
        Command::Metrics(a) => run_metrics(a),
        Command::Aggregate(a) => run_aggregate(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Report(a) => run_report(a),
    }
}

pub fn main() -> ExitCode {
    match run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
