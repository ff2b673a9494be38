//! The `fairthresh` command line.
//!
//! Every subcommand takes `--config FILE`, a JSON object whose keys are the
//! long flag names in snake case. Flags given on the command line win.
//! Exit codes: 0 success, 1 runtime failure, 2 bad input.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analysis::{
    estimate_bound_constants, sweep_lambda, verify_gap_bound, write_frontier_csv, AnalysisError,
    SweepOptions,
};
use crate::data::{read_table, write_samples, CellMap, GroupedLogits, Sample, SampleTable};
use crate::density::{Family, KdeOptions, DEFAULT_KERNEL_SD};
use crate::metrics::{apply_thresholds, ConfusionCounts, Metric, MetricSummary};
use crate::objective::{
    fair_loss, perf_loss, rates, DensityBundle, ObjectiveError, ObjectiveSpec, ThresholdPair,
};
use crate::optimizer::{optimize, optimize_unified, OptimError, OptimOptions, SweepOrder};
use crate::output;
use crate::synth::{generate, MixtureConfig, Split};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::InvalidOptions(_) | OptimError::Objective(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::EmptyLambdas
            | AnalysisError::GridTooSmall { .. }
            | AnalysisError::Objective(_) => CliError::Input(e.to_string()),
            AnalysisError::Optim(o) => o.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "fairthresh",
    version,
    about = "Group-specific decision thresholds under fairness constraints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one density per (label, group) cell of a logit CSV.
    Fit(FitCmd),
    /// Find thresholds minimizing the error-rate plus fairness objective.
    Optimize(OptimizeCmd),
    /// Optimize over a list of λ values and report the frontier.
    Sweep(SweepCmd),
    /// Accuracy and fairness metrics of predictions or thresholds.
    Evaluate(EvaluateCmd),
    /// Estimate the CDF-gap bound constants and check the bounds.
    Bounds(BoundsCmd),
    /// Generate the synthetic mixture benchmark.
    Synth(SynthCmd),
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub densities: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub families: Option<Vec<Family>>,
    pub kde_bins: Option<usize>,
    pub kernel_sd: Option<f64>,
    pub constraints: Option<String>,
    pub lambda: Option<f64>,
    pub unified: Option<bool>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub cut_factor: Option<f64>,
    pub max_cuts: Option<usize>,
    pub sweep_order: Option<SweepOrder>,
    pub theta0: Option<f64>,
    pub theta1: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub warm_start: Option<bool>,
    pub trace: Option<bool>,
    pub trials: Option<usize>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    pub scale: Option<f64>,
    pub mixture: Option<MixtureConfig>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }
}

fn flag(cli: bool, file: Option<bool>) -> bool {
    cli || file.unwrap_or(false)
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArg {
    /// JSON file with default values for any of the flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SourceArgs {
    /// CSV with columns `logit,label,group`.
    #[arg(long, value_name = "CSV")]
    pub input: Option<PathBuf>,
    /// Fitted-density JSON, used instead of raw logits.
    #[arg(long, value_name = "JSON")]
    pub densities: Option<PathBuf>,
    /// Candidate density families [default: gaussian,student_t,gamma].
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub families: Option<Vec<Family>>,
    /// Number of KDE bins [default: ⌈√n⌉ per cell].
    #[arg(long)]
    pub kde_bins: Option<usize>,
    /// Gaussian kernel standard deviation of the KDE.
    #[arg(long)]
    pub kernel_sd: Option<f64>,
}

impl SourceArgs {
    fn merge(mut self, f: &RunConfig) -> Self {
        self.input = self.input.or_else(|| f.input.clone());
        self.densities = self.densities.or_else(|| f.densities.clone());
        self.families = self.families.or_else(|| f.families.clone());
        self.kde_bins = self.kde_bins.or(f.kde_bins);
        self.kernel_sd = self.kernel_sd.or(f.kernel_sd);
        self
    }

    fn candidates(&self) -> Vec<Family> {
        self.families
            .clone()
            .unwrap_or_else(|| Family::PARAMETRIC.to_vec())
    }

    fn kde(&self) -> Result<KdeOptions, CliError> {
        let kernel_sd = self.kernel_sd.unwrap_or(DEFAULT_KERNEL_SD);
        if !(kernel_sd.is_finite() && kernel_sd > 0.0) {
            return Err(CliError::Input(format!(
                "--kernel-sd must be positive, got {kernel_sd}"
            )));
        }
        if self.kde_bins == Some(0) {
            return Err(CliError::Input("--kde-bins must be positive".into()));
        }
        Ok(KdeOptions {
            num_bins: self.kde_bins,
            kernel_sd,
        })
    }

    /// Densities from `--densities` if given, otherwise fitted to `--input`.
    fn bundle(&self) -> Result<DensityBundle, CliError> {
        if let Some(path) = &self.densities {
            return read_bundle(path);
        }
        let Some(path) = &self.input else {
            return Err(CliError::Input(
                "one of --input or --densities is required".into(),
            ));
        };
        let table = read_csv(path)?;
        let grouped = GroupedLogits::from_samples(&table.samples);
        Ok(DensityBundle::fit(&grouped, &self.candidates(), &self.kde()?)?.bundle)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ObjectiveArgs {
    /// Fairness constraints, e.g. `EOd,DP`. None means accuracy only.
    #[arg(long, value_name = "LIST")]
    pub constraints: Option<String>,
    /// Weight λ shared by all constraints [default: 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// One threshold for both groups.
    #[arg(long)]
    pub unified: bool,
}

impl ObjectiveArgs {
    fn merge(mut self, f: &RunConfig) -> Self {
        self.constraints = self.constraints.or_else(|| f.constraints.clone());
        self.lambda = self.lambda.or(f.lambda);
        self.unified = flag(self.unified, f.unified);
        self
    }

    fn spec(&self) -> Result<ObjectiveSpec, CliError> {
        match self.constraints.as_deref().map(str::trim) {
            None | Some("") | Some("none") => Ok(ObjectiveSpec::accuracy_only()),
            Some(list) => {
                let kinds = ObjectiveSpec::parse_kinds(list)?;
                Ok(ObjectiveSpec::shared(&kinds, self.lambda.unwrap_or(1.0))?)
            }
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Step length below which a group counts as settled.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Factor applied to a step that fails to decrease the loss.
    #[arg(long)]
    pub cut_factor: Option<f64>,
    #[arg(long)]
    pub max_cuts: Option<usize>,
    /// `simultaneous` or `alternating`.
    #[arg(long, value_parser = parse_sweep_order)]
    pub sweep_order: Option<SweepOrder>,
    /// Starting θ0 [default: 0].
    #[arg(long)]
    pub theta0: Option<f64>,
    /// Starting θ1 [default: 0].
    #[arg(long)]
    pub theta1: Option<f64>,
}

fn parse_sweep_order(s: &str) -> Result<SweepOrder, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "simultaneous" => Ok(SweepOrder::Simultaneous),
        "alternating" => Ok(SweepOrder::Alternating),
        other => Err(format!(
            "unknown sweep order `{other}` (simultaneous|alternating)"
        )),
    }
}

impl OptimArgs {
    fn merge(mut self, f: &RunConfig) -> Self {
        self.max_iter = self.max_iter.or(f.max_iter);
        self.tol = self.tol.or(f.tol);
        self.cut_factor = self.cut_factor.or(f.cut_factor);
        self.max_cuts = self.max_cuts.or(f.max_cuts);
        self.sweep_order = self.sweep_order.or(f.sweep_order);
        self.theta0 = self.theta0.or(f.theta0);
        self.theta1 = self.theta1.or(f.theta1);
        self
    }

    fn options(&self) -> Result<OptimOptions, CliError> {
        let d = OptimOptions::default();
        let o = OptimOptions {
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            tol: self.tol.unwrap_or(d.tol),
            cut_factor: self.cut_factor.unwrap_or(d.cut_factor),
            max_cuts: self.max_cuts.unwrap_or(d.max_cuts),
            init: ThresholdPair::new(self.theta0.unwrap_or(0.0), self.theta1.unwrap_or(0.0)),
            sweep: self.sweep_order.unwrap_or(d.sweep),
        };
        o.validate()?;
        Ok(o)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitCmd {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeCmd {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Labeled CSV on which to report metrics.
    #[arg(long, value_name = "CSV")]
    pub eval: Option<PathBuf>,
    /// Include the per-iteration trace.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub lambdas: Option<Vec<f64>>,
    /// Labeled CSV for the metrics [default: --input].
    #[arg(long, value_name = "CSV")]
    pub eval: Option<PathBuf>,
    /// Start each λ from the previous solution.
    #[arg(long)]
    pub warm_start: bool,
    /// Also write the frontier as CSV.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateCmd {
    #[command(flatten)]
    pub config: ConfigArg,
    /// CSV with `logit,label,group` and optionally `prediction`.
    #[arg(long, value_name = "CSV")]
    pub input: Option<PathBuf>,
    /// Threshold of group 0; needed when there is no prediction column.
    #[arg(long)]
    pub theta0: Option<f64>,
    #[arg(long)]
    pub theta1: Option<f64>,
    /// Print a plain table instead of JSON.
    #[arg(long)]
    pub text: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BoundsCmd {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub source: SourceArgs,
    /// Threshold pairs checked per bound.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Grid points for the constant estimates.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthCmd {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplier on every cell count.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(c) => cmd_fit(c),
        Command::Optimize(c) => cmd_optimize(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Bounds(c) => cmd_bounds(c),
        Command::Synth(c) => cmd_synth(c),
    }
}

fn read_csv(path: &Path) -> Result<SampleTable, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    read_table(file).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_bundle(path: &Path) -> Result<DensityBundle, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize + ?Sized>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let text = output::to_json(value).map_err(runtime)?;
    write_text(&text, out)
}

fn write_text(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(runtime),
    }
}

#[derive(Serialize)]
struct CandidateRow {
    family: Family,
    #[serde(skip_serializing_if = "Option::is_none")]
    nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn cmd_fit(c: FitCmd) -> Result<(), CliError> {
    let file = RunConfig::load(c.config.config.as_deref())?;
    let source = c.source.merge(&file);
    let out = c.out.or(file.out);
    let Some(path) = &source.input else {
        return Err(CliError::Input("--input is required".into()));
    };
    let table = read_csv(path)?;
    let grouped = GroupedLogits::from_samples(&table.samples);
    let fit = DensityBundle::fit(&grouped, &source.candidates(), &source.kde()?)?;
    let mut scores = fit.scores;
    let candidates = CellMap::from_fn(|y, a| {
        std::mem::take(&mut scores[y][a])
            .into_iter()
            .map(|s| CandidateRow {
                family: s.family,
                nll: s.nll(),
                error: s.outcome.err().map(|e| e.to_string()),
            })
            .collect::<Vec<_>>()
    });
    let mut value = output::to_value(&fit.bundle).map_err(runtime)?;
    value["candidates"] = output::to_value(&candidates).map_err(runtime)?;
    emit(&value, out.as_deref())
}

fn load_eval(path: Option<&Path>) -> Result<Option<Vec<Sample>>, CliError> {
    path.map(|p| read_csv(p).map(|t| t.samples)).transpose()
}

fn summary(samples: &[Sample], theta: ThresholdPair) -> Result<MetricSummary, CliError> {
    let counts = ConfusionCounts::from_predictions(samples, &apply_thresholds(samples, theta))
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(MetricSummary::from_counts(&counts))
}

fn cmd_optimize(c: OptimizeCmd) -> Result<(), CliError> {
    let file = RunConfig::load(c.config.config.as_deref())?;
    let source = c.source.merge(&file);
    let objective = c.objective.merge(&file);
    let optim = c.optim.merge(&file);
    let trace = flag(c.trace, file.trace);
    let out = c.out.or(file.out);
    let eval = load_eval(c.eval.or(file.eval).as_deref())?;

    let spec = objective.spec()?;
    let opts = optim.options()?;
    let bundle = source.bundle()?;
    let run = if objective.unified {
        optimize_unified
    } else {
        optimize
    };
    let (result, status, failure) = match run(&bundle, &spec, &opts) {
        Ok(r) => (r, "converged", None),
        Err(e @ (OptimError::Stalled(_) | OptimError::MaxIterations(_))) => {
            let status = if matches!(e, OptimError::Stalled(_)) {
                "stalled"
            } else {
                "max_iterations"
            };
            let hint = if matches!(e, OptimError::MaxIterations(_)) {
                "; raise --max-iter"
            } else {
                ""
            };
            let msg = format!("{e} (partial result written{hint})");
            (
                e.into_partial().expect("carries a partial result"),
                status,
                Some(msg),
            )
        }
        Err(e) => return Err(e.into()),
    };

    let r = rates(&bundle, result.theta);
    let counts = bundle.counts();
    let fairness = spec
        .constraints()
        .iter()
        .map(|k| Ok((k.kind.to_string(), json!(fair_loss(k.kind, &r, counts)?))))
        .collect::<Result<serde_json::Map<_, _>, ObjectiveError>>()?;
    let mut value = json!({
        "theta": result.theta,
        "loss": result.loss,
        "perf_loss": perf_loss(&r, counts),
        "fair_loss": fairness,
        "rates": r,
        "iterations": result.iterations,
        "status": status,
        "unified": result.unified,
        "objective": spec,
    });
    if let Some(samples) = &eval {
        value["report"] = serde_json::to_value(summary(samples, result.theta)?).map_err(runtime)?;
        value["baseline_report"] =
            serde_json::to_value(summary(samples, ThresholdPair::default())?).map_err(runtime)?;
    }
    if trace {
        value["trace"] = serde_json::to_value(&result.trace).map_err(runtime)?;
    }
    emit(&value, out.as_deref())?;
    match failure {
        Some(msg) => Err(CliError::Runtime(msg)),
        None => Ok(()),
    }
}

fn cmd_sweep(c: SweepCmd) -> Result<(), CliError> {
    let file = RunConfig::load(c.config.config.as_deref())?;
    let source = c.source.merge(&file);
    let objective = c.objective.merge(&file);
    let optim = c.optim.merge(&file);
    let lambdas = c
        .lambdas
        .or(file.lambdas)
        .ok_or_else(|| CliError::Input("--lambdas is required".into()))?;
    let warm_start = flag(c.warm_start, file.warm_start);
    let csv_path = c.csv.or(file.csv);
    let out = c.out.or(file.out);

    let template = objective.spec()?;
    if template.constraints().is_empty() {
        return Err(CliError::Input(
            "sweep needs at least one constraint (--constraints)".into(),
        ));
    }
    let opts = SweepOptions {
        optim: optim.options()?,
        unified: objective.unified,
        warm_start,
    };
    let eval_path = c.eval.or(file.eval).or_else(|| source.input.clone());
    let Some(samples) = load_eval(eval_path.as_deref())? else {
        return Err(CliError::Input(
            "metrics need labeled data: pass --eval or --input".into(),
        ));
    };
    let bundle = source.bundle()?;
    let points = sweep_lambda(&bundle, &template, &lambdas, &samples, &opts)?;
    if let Some(path) = &csv_path {
        let f = File::create(path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        write_frontier_csv(&points, f)?;
    }
    emit(&points, out.as_deref())
}

fn cmd_evaluate(c: EvaluateCmd) -> Result<(), CliError> {
    let file = RunConfig::load(c.config.config.as_deref())?;
    let out = c.out.or(file.out);
    let input = c
        .input
        .or(file.input)
        .ok_or_else(|| CliError::Input("--input is required".into()))?;
    let table = read_csv(&input)?;
    let preds = match (c.theta0.or(file.theta0), c.theta1.or(file.theta1)) {
        (Some(t0), Some(t1)) => apply_thresholds(&table.samples, ThresholdPair::new(t0, t1)),
        (None, None) => table.predictions.clone().ok_or_else(|| {
            CliError::Input("no `prediction` column; pass --theta0 and --theta1".into())
        })?,
        _ => return Err(CliError::Input("--theta0 and --theta1 go together".into())),
    };
    let counts = ConfusionCounts::from_predictions(&table.samples, &preds)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let metrics = MetricSummary::from_counts(&counts);
    if c.text {
        let mut s = String::new();
        for m in Metric::ALL {
            let v = metrics
                .get(m)
                .map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
            s.push_str(&format!("{:<7}{v}\n", m.to_string()));
        }
        return write_text(&s, out.as_deref());
    }
    emit(
        &json!({"counts": counts, "metrics": metrics}),
        out.as_deref(),
    )
}

fn cmd_bounds(c: BoundsCmd) -> Result<(), CliError> {
    let file = RunConfig::load(c.config.config.as_deref())?;
    let source = c.source.merge(&file);
    let trials = c.trials.or(file.trials).unwrap_or(100);
    let grid = c.grid.or(file.grid).unwrap_or(1000);
    let out = c.out.or(file.out);
    if trials == 0 {
        return Err(CliError::Input("--trials must be positive".into()));
    }
    let bundle = source.bundle()?;
    let constants = estimate_bound_constants(&bundle, grid)?;
    let reports = verify_gap_bound(&bundle, &constants, trials)?;
    let pass = reports.iter().all(|r| r.pass);
    emit(
        &json!({"constants": constants, "reports": reports, "pass": pass}),
        out.as_deref(),
    )?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Runtime(
            "an observed gap exceeds its bound".into(),
        ))
    }
}

fn cmd_synth(c: SynthCmd) -> Result<(), CliError> {
    let file = RunConfig::load(c.config.config.as_deref())?;
    let seed = c.seed.or(file.seed).unwrap_or(0);
    let scale = c.scale.or(file.scale).unwrap_or(1.0);
    let dir = c
        .out
        .or(file.out)
        .ok_or_else(|| CliError::Input("--out DIR is required".into()))?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(CliError::Input(format!(
            "--scale must be positive, got {scale}"
        )));
    }
    let mut config = file
        .mixture
        .unwrap_or_else(|| MixtureConfig::benchmark(seed));
    config.seed = seed;
    let config = config.scaled(scale);
    let data = generate(&config).map_err(|e| CliError::Input(e.to_string()))?;

    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let write = |name: &str, samples: &[Sample]| -> Result<(), CliError> {
        let path = dir.join(name);
        let f = File::create(&path)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        write_samples(f, samples).map_err(runtime)
    };
    write("full.csv", &data.samples)?;
    let mut sizes = serde_json::Map::new();
    sizes.insert("full".into(), json!(data.samples.len()));
    for split in Split::ALL {
        let samples = data.split(split);
        write(&format!("{}.csv", split.as_str()), &samples)?;
        sizes.insert(
            split.as_str().into(),
            json!(GroupedLogits::from_samples(&samples).counts()),
        );
    }
    sizes.insert("full_counts".into(), json!(data.grouped().counts()));
    emit(
        &json!({"seed": seed, "scale": scale, "config": config, "counts": sizes}),
        Some(&dir.join("synth.json")),
    )
}
