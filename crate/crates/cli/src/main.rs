//! `skewshift` command-line front end.
//!
//! Exit codes: 0 on success, 2 on validation errors (a JSON error object is
//! written to stderr), 3 when a job is refused for exceeding the work budget.

mod plot;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use skewshift::archive::write_archive;
use skewshift::avalanche::{
    avalanche_check_mats, avalanche_on_cocycle, diagonal_sequence, random_hyperbolic_sequence, BlockOptions,
    DEFAULT_AVALANCHE_CONSTANT,
};
use skewshift::cocycle::CocycleKind;
use skewshift::deviation::{deviation_measure, Threshold};
use skewshift::lyapunov::{lyapunov_profile_with_budget, write_jsonl, Sampler, DEFAULT_WORK_BUDGET};
use skewshift::model::{AdmissionMode, JacobiModel, ModelSpec};
use skewshift::multiscale::{continuity_probe, induction_step, ContinuityOptions, InductionOptions};
use skewshift::pipeline::{theorem_mode_run, RunSettings};
use skewshift::torus::{diophantine_check, Frequency, TorusPoint};

const THREADS_ENV: &str = "SKEWSHIFT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "skewshift", version, about = "Lyapunov exponents and large deviations for skew-shift Jacobi operators")]
struct Cli {
    /// Worker threads (`auto` or a count); SKEWSHIFT_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<String>,

    /// Maximum number of 2×2 matrix products a command may perform.
    #[arg(long, global = true)]
    work_budget: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Finite-scale Lyapunov exponents over a list of scales (JSON lines).
    Lyapunov(LyapunovArgs),
    /// Empirical measure of the large-deviation set at one scale.
    Deviation(DeviationArgs),
    /// Avalanche-principle check on a demo family or on cocycle blocks.
    Avalanche(AvalancheArgs),
    /// One induction step from scales (n, 2n) to (N, 2N).
    Induction(InductionArgs),
    /// Regularity of L(E) under small energy shifts.
    Continuity(ContinuityArgs),
    /// Diophantine scan of a frequency.
    Diophantine(DiophantineArgs),
    /// Full theorem-mode run into an archive directory.
    Run(RunArgs),
    /// Plot tables and SVG figures from an archive.
    Plotdata(PlotArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model description (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Apply the theorem-mode admission rules.
    #[arg(long)]
    theorem: bool,
}

impl ModelArgs {
    fn load(&self) -> Result<JacobiModel, CliError> {
        let mode = if self.theorem { AdmissionMode::Theorem } else { AdmissionMode::General };
        Ok(JacobiModel::load(&self.model, mode)?)
    }
}

#[derive(Args, Debug)]
struct SamplerArgs {
    /// Monte Carlo sample count (scientific notation accepted).
    #[arg(long, conflicts_with = "grid")]
    mc: Option<f64>,
    /// Grid sampler as GXxGY, e.g. 256x256.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SamplerArgs {
    fn sampler(&self, default_mc: u64) -> Result<Sampler, CliError> {
        if let Some(g) = &self.grid {
            let (gx, gy) = g
                .split_once('x')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| CliError::usage(format!("grid must look like 64x64, got `{g}`")))?;
            return Ok(Sampler::grid(gx, gy)?);
        }
        let count = match self.mc {
            None => default_mc,
            Some(c) if c.is_finite() && c >= 0.0 && c.fract() == 0.0 && c <= u64::MAX as f64 => c as u64,
            Some(c) => return Err(CliError::usage(format!("--mc must be a nonnegative integer, got {c}"))),
        };
        Ok(Sampler::monte_carlo(count, self.seed)?)
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| s.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage(format!("could not parse {what} list `{text}`")))
}

fn parse_kind(text: &str) -> Result<CocycleKind, CliError> {
    Ok(text.parse::<CocycleKind>()?)
}

#[derive(Args, Debug)]
struct LyapunovArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "E", allow_hyphen_values = true)]
    energy: f64,
    /// Comma-separated scales.
    #[arg(long)]
    scales: String,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value = "unimodular")]
    kind: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DeviationArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "E", allow_hyphen_values = true)]
    energy: f64,
    #[arg(long)]
    n: usize,
    /// Deviation size, in units of S unless --absolute.
    #[arg(long)]
    threshold: f64,
    #[arg(long)]
    absolute: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value = "unimodular")]
    kind: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Demo {
    /// `diag(μ, 1/μ)` repeated: the combination cancels exactly.
    Diag,
    /// Randomly rotated hyperbolic matrices with norms in [μ, 2μ].
    Hyperbolic,
}

#[derive(Args, Debug)]
struct AvalancheArgs {
    /// Built-in matrix family instead of cocycle blocks.
    #[arg(long, conflicts_with = "model")]
    demo: Option<Demo>,
    #[arg(long)]
    mu: Option<f64>,
    /// Sequence length (demo) or block length (cocycle).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_AVALANCHE_CONSTANT)]
    constant: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    max_angle: f64,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long = "E", allow_hyphen_values = true, default_value_t = 0.0)]
    energy: f64,
    #[arg(long, default_value_t = 50)]
    blocks: usize,
    /// Base point as X,Y.
    #[arg(long, default_value = "0,0")]
    base: String,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InductionArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "E", allow_hyphen_values = true)]
    energy: f64,
    #[arg(long)]
    n: usize,
    #[arg(long = "N")]
    big_n: usize,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    ldt_proxy: f64,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ContinuityArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "E", allow_hyphen_values = true)]
    energy: f64,
    /// Comma-separated, strictly descending offsets.
    #[arg(long, default_value = "1e-1,1e-2,1e-3,1e-4,1e-6")]
    deltas: String,
    #[arg(long = "N", default_value_t = 8)]
    big_n: usize,
    #[arg(long, default_value = "4,8")]
    proxy_scales: String,
    #[arg(long, default_value_t = 1.0 / 25.0)]
    sigma: f64,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiophantineArgs {
    #[arg(long)]
    omega: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    nmax: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Archive directory; overrides `output_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Archive directory written by `run`.
    #[arg(long)]
    archive: PathBuf,
    /// Where to write the figures; defaults to `<archive>/plots`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Thread setting: `"auto"` or a positive count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Threads {
    Count(usize),
    Auto(String),
}

impl Default for Threads {
    fn default() -> Self {
        Threads::Auto("auto".into())
    }
}

/// On-disk configuration of `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// Relative paths are resolved against the config file's directory.
    model_path: PathBuf,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    threads: Threads,
    #[serde(default = "default_budget")]
    work_budget: u64,
    #[serde(default)]
    run: RunSettings,
}

fn default_budget() -> u64 {
    DEFAULT_WORK_BUDGET
}

/// The part of the resolved config that determines the archive's contents.
/// Threads and the output location are execution details and are left out
/// so that archives compare byte-for-byte across them.
#[derive(Debug, Serialize)]
struct EmbeddedConfig<'a> {
    model_path: &'a Path,
    seed: u64,
    work_budget: u64,
    run: &'a RunSettings,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    kind: &'static str,
    message: String,
    stage: Option<String>,
}

impl CliError {
    fn usage(message: String) -> Self {
        CliError {
            code: 2,
            kind: "usage",
            message,
            stage: None,
        }
    }
}

impl From<skewshift::Error> for CliError {
    fn from(err: skewshift::Error) -> Self {
        use skewshift::Error as E;
        let stage = match &err {
            E::Stage { stage, .. } => Some(stage.clone()),
            _ => None,
        };
        let (code, kind) = match err.root() {
            E::BudgetExceeded { .. } => (3, "budget_exceeded"),
            E::Admission(_) => (2, "admission"),
            E::InvalidInput(_) => (2, "invalid_input"),
            E::ReferenceTooNoisy { .. } => (2, "reference_too_noisy"),
            E::NoiseFloor { .. } => (2, "noise_floor"),
            E::Io(_) => (2, "io"),
            E::Json(_) => (2, "json"),
            E::Stage { .. } => (2, "stage"),
        };
        CliError {
            code,
            kind,
            message: err.to_string(),
            stage,
        }
    }
}

impl From<io::Error> for CliError {
    fn from(err: io::Error) -> Self {
        skewshift::Error::from(err).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        skewshift::Error::from(err).into()
    }
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, bytes)?;
        }
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    emit(out, &bytes)
}

fn cmd_lyapunov(args: &LyapunovArgs, budget: u64) -> Result<(), CliError> {
    let model = args.model.load()?;
    let mut scales: Vec<usize> = parse_list(&args.scales, "scale")?;
    scales.sort_unstable();
    let sampler = args.sampler.sampler(10_000)?;
    let kind = parse_kind(&args.kind)?;
    let profile = lyapunov_profile_with_budget(&model, args.energy, &scales, &sampler, kind, budget)?;
    let mut bytes = Vec::new();
    write_jsonl(&mut bytes, &profile.estimates)?;
    emit(&args.out, &bytes)
}

fn cmd_deviation(args: &DeviationArgs) -> Result<(), CliError> {
    let model = args.model.load()?;
    let sampler = args.sampler.sampler(10_000)?;
    let threshold = if args.absolute {
        Threshold::absolute(args.threshold)
    } else {
        Threshold::in_s(args.threshold)
    };
    let kind = parse_kind(&args.kind)?;
    let report = deviation_measure(&model, args.energy, args.n, threshold, &sampler, kind, None)?;
    emit_json(&args.out, &report)
}

fn cmd_avalanche(args: &AvalancheArgs) -> Result<(), CliError> {
    let report = match (&args.demo, &args.model) {
        (Some(demo), _) => {
            let mu = args.mu.ok_or_else(|| CliError::usage("--demo needs --mu".into()))?;
            let seq = match demo {
                Demo::Diag => diagonal_sequence(args.n, mu),
                Demo::Hyperbolic => random_hyperbolic_sequence(args.n, mu, args.max_angle, args.seed),
            };
            avalanche_check_mats(&seq, mu, args.constant)?
        }
        (None, Some(path)) => {
            let model = JacobiModel::load(path, AdmissionMode::Theorem)?;
            let xy: Vec<f64> = parse_list(&args.base, "coordinate")?;
            if xy.len() != 2 {
                return Err(CliError::usage("--base takes X,Y".into()));
            }
            let options = BlockOptions {
                gamma: args.gamma,
                constant: args.constant,
            };
            avalanche_on_cocycle(&model, TorusPoint::new(xy[0], xy[1]), args.energy, args.n, args.blocks, options)?
        }
        (None, None) => return Err(CliError::usage("give either --demo or --model".into())),
    };
    emit_json(&args.out, &report)
}

fn cmd_induction(args: &InductionArgs, budget: u64) -> Result<(), CliError> {
    let model = args.model.load()?;
    let sampler = args.sampler.sampler(1000)?;
    let options = InductionOptions {
        ldt_proxy: args.ldt_proxy,
        budget,
        ..Default::default()
    };
    let record = induction_step(&model, args.energy, args.n, args.big_n, args.gamma, &sampler, options)?;
    emit_json(&args.out, &record)
}

fn cmd_continuity(args: &ContinuityArgs) -> Result<(), CliError> {
    let model = args.model.load()?;
    let sampler = if args.sampler.mc.is_none() && args.sampler.grid.is_none() {
        Sampler::grid(64, 64)?
    } else {
        args.sampler.sampler(0)?
    };
    let options = ContinuityOptions {
        proxy_scales: parse_list(&args.proxy_scales, "scale")?,
        sigma: args.sigma,
    };
    let deltas: Vec<f64> = parse_list(&args.deltas, "offset")?;
    let report = continuity_probe(&model, args.energy, &deltas, args.big_n, &sampler, &options)?;
    emit_json(&args.out, &report)
}

fn cmd_diophantine(args: &DiophantineArgs) -> Result<(), CliError> {
    let freq = Frequency::new(args.omega, args.epsilon)?;
    let report = diophantine_check(&freq, args.nmax)?;
    emit_json(&args.out, &report)
}

fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_run(args: &RunArgs, budget_flag: Option<u64>) -> Result<(), CliError> {
    let config = load_run_config(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let model_file = base.join(&config.model_path);
    let spec = ModelSpec::load(&model_file)?;
    let work_budget = budget_flag.unwrap_or(config.work_budget);
    let settings = RunSettings {
        seed: config.seed,
        work_budget,
        ..config.run.clone()
    };
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|d| base.join(d)))
        .ok_or_else(|| CliError::usage("no archive directory: set output_dir or pass --out".into()))?;
    let run = theorem_mode_run(&spec, &settings)?;
    let embedded = EmbeddedConfig {
        model_path: &config.model_path,
        seed: config.seed,
        work_budget,
        run: &settings,
    };
    write_archive(&out, &embedded, &run)?;
    emit_json(&None, &run.summary)
}

/// Resolve the worker count: environment, then flag, then config, then all
/// cores.
fn thread_count(flag: Option<&str>, config: Option<&Threads>) -> Result<Option<usize>, CliError> {
    let parse = |s: &str| -> Result<Option<usize>, CliError> {
        match s.trim() {
            "auto" | "" => Ok(None),
            t => match t.parse::<usize>() {
                Ok(0) | Err(_) => Err(CliError::usage(format!("threads must be `auto` or a positive count, got `{t}`"))),
                Ok(k) => Ok(Some(k)),
            },
        }
    };
    if let Ok(env) = std::env::var(THREADS_ENV) {
        return parse(&env);
    }
    if let Some(f) = flag {
        return parse(f);
    }
    match config {
        Some(Threads::Count(0)) => Err(CliError::usage("threads must be positive".into())),
        Some(Threads::Count(k)) => Ok(Some(*k)),
        Some(Threads::Auto(s)) => parse(s),
        None => Ok(None),
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let config_threads = match &cli.command {
        Command::Run(args) => Some(load_run_config(&args.config)?.threads),
        _ => None,
    };
    if let Some(k) = thread_count(cli.threads.as_deref(), config_threads.as_ref())? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let budget = cli.work_budget.unwrap_or(DEFAULT_WORK_BUDGET);
    match &cli.command {
        Command::Lyapunov(a) => cmd_lyapunov(a, budget),
        Command::Deviation(a) => cmd_deviation(a),
        Command::Avalanche(a) => cmd_avalanche(a),
        Command::Induction(a) => cmd_induction(a, budget),
        Command::Continuity(a) => cmd_continuity(a),
        Command::Diophantine(a) => cmd_diophantine(a),
        Command::Run(a) => cmd_run(a, cli.work_budget),
        Command::Plotdata(a) => plot::cmd_plotdata(&a.archive, a.out.as_deref()),
    }
}

fn report(err: &CliError) -> ExitCode {
    let mut obj = serde_json::json!({
        "error": err.kind,
        "message": err.message,
        "exit_code": err.code,
    });
    if let Some(stage) = &err.stage {
        obj["stage"] = serde_json::Value::String(stage.clone());
    }
    eprintln!("{obj}");
    ExitCode::from(err.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::usage(e.render().to_string().trim().to_string())),
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
