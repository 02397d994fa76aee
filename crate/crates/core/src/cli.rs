//! Command-line interface.
//!
//! Every option can come from a flag or from a JSON file passed with
//! `--config`; flags win. Exit codes: 0 on success, 2 for bad input, 3 when
//! sampling or a numerical check fails.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::cat::{self, AbilitySource, CatConfig, CatError};
use crate::information::{self, AbilityGrid, CurveSet, InformationError};
use crate::ingest::{self, IngestError, ResponseMatrix, SuccessCriterion};
use crate::model::{self, ModelError, ParameterPoint, Posterior, PriorConfig};
use crate::report::{self, PlotSpec, ReportError};
use crate::sampler::{self, ParameterSummary, PosteriorDraws, PosteriorSummary, SamplerConfig, SamplerError};

#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input; exit code 2.
    Input(String),
    /// Sampling or numerical failure; exit code 3.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

fn input(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(msg.to_string())
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        input(e)
    }
}

impl From<InformationError> for CliError {
    fn from(e: InformationError) -> Self {
        input(e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        input(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        input(e)
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Initialization { .. } | SamplerError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            _ => input(e),
        }
    }
}

impl From<CatError> for CliError {
    fn from(e: CatError) -> Self {
        match e {
            CatError::DegeneratePosterior => CliError::Numerical(e.to_string()),
            _ => input(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "irtbench", version, about = "Item response theory analysis of benchmark results")]
pub struct Cli {
    /// JSON file with default values for any option
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a response matrix from a CSV of benchmark runs
    Convert(ConvertArgs),
    /// Sample the posterior of the 2PL model
    Fit(FitArgs),
    /// Information curves from a posterior summary or draws
    Curves(CurvesArgs),
    /// Simulate adaptive testing against a fitted item bank
    Cat(CatArgs),
    /// Gradient and prior-recovery self test
    Check(CheckArgs),
    /// Simulate a response matrix from known parameters
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// File name prefix for every output
    #[arg(long)]
    pub prefix: Option<String>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Precision a run must reach to count as a success
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    pub dimension: Option<u32>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    #[arg(long)]
    pub a_scale: Option<f64>,
    #[arg(long)]
    pub b_scale: Option<f64>,
    #[arg(long)]
    pub theta_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Post-warmup draws per chain
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long)]
    pub max_leapfrog_steps: Option<usize>,
    #[arg(long)]
    pub divergence_threshold: Option<f64>,
    #[command(flatten)]
    pub priors: PriorArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long, conflicts_with = "draws_file")]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub draws_file: Option<PathBuf>,
    /// Add pointwise 90% bands across draws (needs --draws-file)
    #[arg(long)]
    pub envelope: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CatArgs {
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    pub sem_stop: Option<f64>,
    #[arg(long)]
    pub max_items: Option<usize>,
    #[arg(long)]
    pub attempts_per_item: Option<u32>,
    #[arg(long)]
    pub prior_scale: Option<f64>,
    /// Run one session for this ability
    #[arg(long, allow_hyphen_values = true, conflicts_with = "replications")]
    pub true_theta: Option<f64>,
    /// Run this many sessions with abilities drawn from the truncated prior
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_hi: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub priors: PriorArgs,
    /// Test hook: perturb the analytic gradient so the check must fail
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// CSV with columns parameter,value (a[item], b[item], theta[person])
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Attempts per item and person
    #[arg(long)]
    pub attempts: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Contents of the `--config` file. Keys mirror the flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub runs: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub draws_file: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub dimension: Option<u32>,
    pub target: Option<f64>,
    pub a_scale: Option<f64>,
    pub b_scale: Option<f64>,
    pub theta_scale: Option<f64>,
    pub chains: Option<usize>,
    pub draws: Option<usize>,
    pub warmup: Option<usize>,
    pub target_accept: Option<f64>,
    pub max_leapfrog_steps: Option<usize>,
    pub divergence_threshold: Option<f64>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_step: Option<f64>,
    pub envelope: Option<bool>,
    pub sem_stop: Option<f64>,
    pub max_items: Option<usize>,
    pub attempts_per_item: Option<u32>,
    pub prior_scale: Option<f64>,
    pub true_theta: Option<f64>,
    pub replications: Option<usize>,
    pub theta_lo: Option<f64>,
    pub theta_hi: Option<f64>,
    pub attempts: Option<u32>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub prefix: Option<String>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn required<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| input(format!("missing required option --{name}")))
}

struct Output {
    dir: PathBuf,
    prefix: String,
}

impl Output {
    fn new(args: &OutputArgs, cfg: &RunConfig) -> Result<Self, CliError> {
        let dir = args.out_dir.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| ".".into());
        let prefix = args.prefix.clone().or_else(|| cfg.prefix.clone()).unwrap_or_else(|| "irt".into());
        if prefix.is_empty() || prefix.contains(['/', '\\']) {
            return Err(input(format!("invalid output prefix {prefix:?}")));
        }
        fs::create_dir_all(&dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir, prefix })
    }

    fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{suffix}", self.prefix))
    }

    fn write(&self, suffix: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.path(suffix);
        fs::write(&path, contents).map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }

    fn write_with(
        &self,
        suffix: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    ) -> Result<PathBuf, CliError> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(suffix, buf)
    }
}

fn priors(args: &PriorArgs, cfg: &RunConfig) -> Result<PriorConfig, CliError> {
    let d = PriorConfig::default();
    let p = PriorConfig {
        a_scale: args.a_scale.or(cfg.a_scale).unwrap_or(d.a_scale),
        b_scale: args.b_scale.or(cfg.b_scale).unwrap_or(d.b_scale),
        theta_scale: args.theta_scale.or(cfg.theta_scale).unwrap_or(d.theta_scale),
    };
    p.validate()?;
    Ok(p)
}

fn grid(args: &GridArgs, cfg: &RunConfig, default: AbilityGrid) -> Result<AbilityGrid, CliError> {
    Ok(AbilityGrid::new(
        args.grid_lo.or(cfg.grid_lo).unwrap_or(default.lo),
        args.grid_hi.or(cfg.grid_hi).unwrap_or(default.hi),
        args.grid_step.or(cfg.grid_step).unwrap_or(default.step),
    )?)
}

fn read_matrix(path: &Path) -> Result<ResponseMatrix, CliError> {
    ResponseMatrix::from_json(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_summary(path: &Path) -> Result<PosteriorSummary, CliError> {
    let text = read_text(path)?;
    PosteriorSummary::read_csv(text.as_bytes()).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Convert(args) => cmd_convert(&args, &cfg),
        Command::Fit(args) => cmd_fit(&args, &cfg),
        Command::Curves(args) => cmd_curves(&args, &cfg),
        Command::Cat(args) => cmd_cat(&args, &cfg),
        Command::Check(args) => cmd_check(&args, &cfg),
        Command::Simulate(args) => cmd_simulate(&args, &cfg),
    }
}

fn cmd_convert(args: &ConvertArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let runs = required(args.runs.clone().or_else(|| cfg.runs.clone()), "runs")?;
    let target = required(args.target.or(cfg.target), "target")?;
    let dimension = required(args.dimension.or(cfg.dimension), "dimension")?;
    let records = ingest::parse_run_csv(read_text(&runs)?.as_bytes())
        .map_err(|e| input(format!("{}: {e}", runs.display())))?;
    let matrix = ingest::build_response_matrix(&records, SuccessCriterion::new(target)?, dimension)?;
    let out = Output::new(&args.output, cfg)?;
    let path = out.write("matrix.json", matrix.to_json()?)?;
    println!(
        "{} items x {} persons -> {}",
        matrix.n_items(),
        matrix.n_persons(),
        path.display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let matrix_path = required(args.matrix.clone().or_else(|| cfg.matrix.clone()), "matrix")?;
    let seed = required(args.seed.or(cfg.seed), "seed")?;
    let d = SamplerConfig::default();
    let config = SamplerConfig {
        chains: args.chains.or(cfg.chains).unwrap_or(d.chains),
        draws_per_chain: args.draws.or(cfg.draws).unwrap_or(d.draws_per_chain),
        warmup: args.warmup.or(cfg.warmup).unwrap_or(d.warmup),
        target_accept: args.target_accept.or(cfg.target_accept).unwrap_or(d.target_accept),
        max_leapfrog_steps: args.max_leapfrog_steps.or(cfg.max_leapfrog_steps).unwrap_or(d.max_leapfrog_steps),
        master_seed: seed,
        divergence_energy_threshold: args
            .divergence_threshold
            .or(cfg.divergence_threshold)
            .unwrap_or(d.divergence_energy_threshold),
        step_size_scale: 1.0,
    };
    config.validate()?;
    let priors = priors(&args.priors, cfg)?;
    let matrix = read_matrix(&matrix_path)?;
    let out = Output::new(&args.output, cfg)?;

    let draws = sampler::sample(&matrix, &priors, &config)?;
    let summary = sampler::summarize(&draws)?;
    out.write_with("draws.csv", |buf| Ok(draws.write_csv(buf)?))?;
    out.write_with("summary.csv", |buf| Ok(summary.write_csv(buf)?))?;
    write_parameter_plots(&out, &summary)?;
    out.write("convergence.html", report::convergence_report(&summary, &draws)?)?;

    let verdict = report::verdict(&summary);
    println!(
        "{} chains x {} draws, {} divergent; convergence {}",
        config.chains,
        config.draws_per_chain,
        summary.divergence_count,
        if verdict.pass { "PASS" } else { "WARN" }
    );
    Ok(())
}

fn write_parameter_plots(out: &Output, summary: &PosteriorSummary) -> Result<(), CliError> {
    for (kind, suffix, title) in [
        ("b", "difficulty.svg", "Difficulty"),
        ("a", "discrimination.svg", "Discrimination"),
        ("theta", "ability.svg", "Ability"),
    ] {
        let params: Vec<ParameterSummary> = summary.of_kind(kind).cloned().collect();
        out.write(suffix, report::render_interval_plot(&params, &PlotSpec::new(title))?)?;
    }
    Ok(())
}

/// File-name-safe version of an item label.
fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn cmd_curves(args: &CurvesArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let grid = grid(&args.grid, cfg, AbilityGrid::default())?;
    let envelope = args.envelope || cfg.envelope.unwrap_or(false);
    let summary_path = args.summary.clone().or_else(|| cfg.summary.clone());
    let draws_path = args.draws_file.clone().or_else(|| cfg.draws_file.clone());
    let (set, abilities): (CurveSet, Vec<(String, f64)>) = match (summary_path, draws_path) {
        (_, Some(path)) => {
            let text = read_text(&path)?;
            let draws = PosteriorDraws::read_csv(text.as_bytes()).map_err(|e| input(format!("{}: {e}", path.display())))?;
            let set = information::median_curves(&draws, &grid, envelope)?;
            let abilities = draws
                .parameter_names()
                .iter()
                .enumerate()
                .filter_map(|(k, name)| match sampler::split_parameter_name(name) {
                    Some(("theta", label)) => {
                        Some((label.to_string(), ParameterSummary::from_draws(name.clone(), &draws.pooled(k)).median))
                    }
                    _ => None,
                })
                .collect();
            (set, abilities)
        }
        (Some(path), None) => {
            if envelope {
                return Err(input("--envelope needs --draws-file"));
            }
            let summary = read_summary(&path)?;
            let set = information::curves_for_items(information::items_from_summary(&summary)?, &grid)?;
            let abilities = summary
                .of_kind("theta")
                .map(|p| {
                    let (_, label) = sampler::split_parameter_name(&p.name).expect("filtered by kind");
                    (label.to_string(), p.median)
                })
                .collect();
            (set, abilities)
        }
        (None, None) => return Err(input("missing required option --summary or --draws-file")),
    };

    let out = Output::new(&args.output, cfg)?;
    for (item, curve) in set.items.iter().zip(&set.item_curves) {
        out.write_with(&format!("item_info_{}.csv", sanitize(&item.label)), |buf| Ok(curve.write_csv(buf)?))?;
    }
    out.write_with("test_info.csv", |buf| Ok(set.test_info.write_csv(buf)?))?;
    out.write_with("sem.csv", |buf| Ok(set.sem.write_csv(buf)?))?;
    if let Some(env) = &set.test_envelope {
        out.write_with("test_info_envelope.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["theta", "lower", "median", "upper"]).map_err(input)?;
            for (k, t) in set.test_info.grid.iter().enumerate() {
                w.write_record([t, &env.lower[k], &env.median[k], &env.upper[k]].map(f64::to_string))
                    .map_err(input)?;
            }
            w.flush().map_err(input)?;
            Ok(())
        })?;
    }
    let labelled: Vec<(String, information::InformationCurve)> = set
        .items
        .iter()
        .zip(&set.item_curves)
        .map(|(it, c)| (it.label.clone(), c.clone()))
        .collect();
    out.write(
        "item_info.svg",
        report::render_curve_grid(&labelled, set.item_envelopes.as_deref(), &PlotSpec::new("Item information"))?,
    )?;
    out.write(
        "test_info.svg",
        report::render_test_info(&set.test_info, &abilities, &PlotSpec::new("Test information"))?,
    )?;
    println!("{} item curves on {} grid points", set.items.len(), grid.len());
    Ok(())
}

fn cmd_cat(args: &CatArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let summary_path = required(args.summary.clone().or_else(|| cfg.summary.clone()), "summary")?;
    let seed = required(args.seed.or(cfg.seed), "seed")?;
    let d = CatConfig::default();
    let config = CatConfig {
        sem_stop: args.sem_stop.or(cfg.sem_stop).unwrap_or(d.sem_stop),
        max_items: args.max_items.or(cfg.max_items),
        attempts_per_item: args.attempts_per_item.or(cfg.attempts_per_item).unwrap_or(d.attempts_per_item),
        estimator_grid: grid(&args.grid, cfg, d.estimator_grid)?,
        prior_scale: args.prior_scale.or(cfg.prior_scale).unwrap_or(d.prior_scale),
    };
    let bank = cat::bank_from_summary(&read_summary(&summary_path)?)?;
    config.validate(&bank)?;
    let out = Output::new(&args.output, cfg)?;

    let true_theta = args.true_theta.or(cfg.true_theta);
    let replications = args.replications.or(cfg.replications);
    match (true_theta, replications) {
        (Some(theta), None) => {
            let session = cat::run_cat(&bank, theta, &config, seed)?;
            out.write_with("cat_session.csv", |buf| Ok(session.write_csv(buf)?))?;
            println!(
                "{} items, estimate {:.3} (se {:.3}), {}",
                session.items_used(),
                session.theta_estimate,
                session.theta_se,
                session.stopped_reason.as_str()
            );
        }
        (None, Some(n)) => {
            let source = AbilitySource::TruncatedPrior {
                lo: args.theta_lo.or(cfg.theta_lo).unwrap_or(-3.0),
                hi: args.theta_hi.or(cfg.theta_hi).unwrap_or(3.0),
            };
            let rows = cat::run_batch(&bank, &config, source, n, seed)?;
            out.write_with("cat_batch.csv", |buf| Ok(cat::write_batch_csv(&rows, buf)?))?;
            let mean_items = rows.iter().map(|r| r.items_used as f64).sum::<f64>() / n.max(1) as f64;
            println!("{n} sessions, {mean_items:.1} items on average");
        }
        (Some(_), Some(_)) => return Err(input("--true-theta and --replications are mutually exclusive")),
        (None, None) => return Err(input("missing required option --true-theta or --replications")),
    }
    Ok(())
}

/// Largest `|fd − g| / max(|g|, 1)` over the points, with central
/// differences of step `h`.
pub fn max_gradient_error(
    log_density: impl Fn(&[f64]) -> f64,
    gradient: impl Fn(&[f64]) -> Vec<f64>,
    points: &[Vec<f64>],
    h: f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for q in points {
        let g = gradient(q);
        let mut x = q.clone();
        for k in 0..q.len() {
            x[k] = q[k] + h;
            let up = log_density(&x);
            x[k] = q[k] - h;
            let down = log_density(&x);
            x[k] = q[k];
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    worst
}

const CHECK_GRADIENT_TOLERANCE: f64 = 1e-6;

fn cmd_check(args: &CheckArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let matrix_path = required(args.matrix.clone().or_else(|| cfg.matrix.clone()), "matrix")?;
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let priors = priors(&args.priors, cfg)?;
    let matrix = read_matrix(&matrix_path)?;
    matrix.validate_shape()?;
    let posterior = Posterior::new(&matrix, priors)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..posterior.dim()).map(|_| rng.random_range(-2.0..=2.0)).collect())
        .collect();
    let corrupt = args.corrupt_gradient;
    let gradient = |q: &[f64]| {
        let mut g = vec![0.0; q.len()];
        posterior.log_density_and_gradient(q, &mut g);
        if corrupt {
            g[0] += 1e-3;
        }
        g
    };
    let grad_error = max_gradient_error(|q| posterior.log_density(q), gradient, &points, 1e-5);
    let grad_ok = grad_error < CHECK_GRADIENT_TOLERANCE;
    println!(
        "gradient: max relative error {grad_error:.3e} over {} points: {}",
        points.len(),
        if grad_ok { "PASS" } else { "FAIL" }
    );

    // prior-only refit of the same shape
    let empty = matrix.empty_like();
    let config = SamplerConfig {
        chains: 4,
        draws_per_chain: 1000,
        warmup: 500,
        master_seed: seed,
        ..SamplerConfig::default()
    };
    let draws = sampler::sample(&empty, &priors, &config)?;
    let summary = sampler::summarize(&draws)?;
    let worst_median = summary
        .of_kind("b")
        .chain(summary.of_kind("theta"))
        .map(|p| p.median.abs())
        .fold(0.0, f64::max);
    let mut worst_sd_ratio: f64 = 0.0;
    for (k, name) in draws.parameter_names().iter().enumerate() {
        if name.starts_with("b[") {
            let pooled = draws.pooled(k);
            let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
            let sd = (pooled.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (pooled.len() - 1) as f64).sqrt();
            worst_sd_ratio = worst_sd_ratio.max((sd / priors.b_scale - 1.0).abs());
        }
    }
    // loose bounds: this is a smoke test at 4000 draws
    let prior_ok = worst_median < 0.5 * priors.b_scale.min(priors.theta_scale) && worst_sd_ratio < 0.2;
    println!(
        "prior recovery: max |median| {worst_median:.3}, worst sd(b) deviation {:.1}%: {}",
        100.0 * worst_sd_ratio,
        if prior_ok { "PASS" } else { "FAIL" }
    );
    if grad_ok && prior_ok {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Numerical("self check failed".into()))
    }
}

/// Reads `parameter,value` rows into a point and the item/person labels.
fn read_truth(text: &str) -> Result<(ParameterPoint, Vec<String>, Vec<String>), CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(input)?.clone();
    if headers.iter().ne(["parameter", "value"]) {
        return Err(input("truth file header must be `parameter,value`"));
    }
    let (mut a, mut b, mut theta) = (Vec::new(), Vec::new(), Vec::new());
    for row in reader.deserialize::<(String, f64)>() {
        let (name, value) = row.map_err(input)?;
        let (kind, label) = sampler::split_parameter_name(&name)
            .ok_or_else(|| input(format!("bad parameter name {name:?}")))?;
        let target = match kind {
            "a" => &mut a,
            "b" => &mut b,
            "theta" => &mut theta,
            _ => return Err(input(format!("unknown parameter kind in {name:?}"))),
        };
        target.push((label.to_string(), value));
    }
    let items: Vec<String> = a.iter().map(|(l, _)| l.clone()).collect();
    let b_values = items
        .iter()
        .map(|l| {
            b.iter()
                .find(|(bl, _)| bl == l)
                .map(|(_, v)| *v)
                .ok_or_else(|| input(format!("truth has a[{l}] but no b[{l}]")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if b.len() != items.len() {
        return Err(input("truth has b entries without matching a entries"));
    }
    let persons: Vec<String> = theta.iter().map(|(l, _)| l.clone()).collect();
    let a_values: Vec<f64> = a.iter().map(|(_, v)| *v).collect();
    let point = ParameterPoint::from_constrained(&a_values, b_values, theta.into_iter().map(|(_, v)| v).collect())?;
    Ok((point, items, persons))
}

fn cmd_simulate(args: &SimulateArgs, cfg: &RunConfig) -> Result<(), CliError> {
    let truth_path = required(args.truth.clone().or_else(|| cfg.truth.clone()), "truth")?;
    let attempts = required(args.attempts.or(cfg.attempts), "attempts")?;
    let seed = required(args.seed.or(cfg.seed), "seed")?;
    let (truth, items, persons) =
        read_truth(&read_text(&truth_path)?).map_err(|e| input(format!("{}: {e}", truth_path.display())))?;
    let cells = items.len() * persons.len();
    let template = ResponseMatrix::new(items, persons, vec![attempts; cells], vec![0; cells])?;
    template.validate_shape()?;
    let matrix = model::simulate_responses(&truth, &template, seed)?;
    let out = Output::new(&args.output, cfg)?;
    let path = out.write("matrix.json", matrix.to_json()?)?;
    println!("simulated {} x {} -> {}", matrix.n_items(), matrix.n_persons(), path.display());
    Ok(())
}
