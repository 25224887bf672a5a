use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dlor::construct::{self, evaluation_grid, parse_h_grid, PlanFile, PlanKind, SourceLayer};
use dlor::decompose::{self, multiplicative_factorize, DlorComponent};
use dlor::experiments::{
    self, create_run_dir, make_sawtooth, run_and_save, write_atomic, write_json, ExperimentName,
    ExperimentOptions, SawtoothSpec, Scale, TrainingSetup,
};
use dlor::rank1::{self, Rank1Net};
use dlor::train::{self, Checkpoint, NetKind, TrainConfig, TrainableNet};
use dlor::{ActivationKind, ActivationSpec, Matrix, Vector};

/// Tolerance a multiplicative factorization must meet to be written.
const MUL_RESIDUAL_TOL: f64 = 1e-8;
/// Tolerance on reconstructing `W` from an additive split.
const ADD_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

impl From<construct::ConstructError> for CliError {
    fn from(e: construct::ConstructError) -> Self {
        use construct::ConstructError as E;
        match e {
            E::InvalidH(_) | E::DimensionMismatch(_) | E::Activation(_) => input(e),
            E::Decompose(_) | E::Linalg(_) => numerical(e),
        }
    }
}

impl From<decompose::DecomposeError> for CliError {
    fn from(e: decompose::DecomposeError) -> Self {
        use decompose::DecomposeError as E;
        match e {
            E::NotSquare(..) | E::InvalidAlpha(_) | E::InvalidRank { .. } | E::InvalidParts => input(e),
            _ => numerical(e),
        }
    }
}

impl From<rank1::Rank1Error> for CliError {
    fn from(e: rank1::Rank1Error) -> Self {
        use rank1::Rank1Error as E;
        match e {
            E::EvaluationMatrixSingular { .. } | E::Linalg(_) => numerical(e),
            _ => input(e),
        }
    }
}

impl From<train::TrainError> for CliError {
    fn from(e: train::TrainError) -> Self {
        use train::TrainError as E;
        match e {
            E::DivergedAt(_) => numerical(e),
            _ => input(e),
        }
    }
}

impl From<experiments::ExperimentError> for CliError {
    fn from(e: experiments::ExperimentError) -> Self {
        use experiments::ExperimentError as E;
        match e {
            E::Train(t) => t.into(),
            E::Construct(c) => c.into(),
            E::Linalg(_) => numerical(e),
            E::Io { .. } | E::Json(_) | E::Config(_) => input(e),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dlor", version, about = "Diagonal-plus-low-rank network laboratory")]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Where run manifests and experiment artifacts go.
    #[arg(long, global = true, env = "DLOR_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// JSON object of flag defaults for the subcommand, e.g. {"rank": 6}.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker cap for sweeps and multi-seed runs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
enum Command {
    /// Fit a rank-1 network through a CSV dataset (columns x_1..x_d, z).
    Interpolate(InterpolateArgs),
    /// Split a square weight additively or factor it multiplicatively.
    Decompose(DecomposeArgs),
    /// Sweep h for one layer and record the sup error of its construction.
    Sweep(SweepArgs),
    /// Evaluate a stored plan, optionally rebuilt over an h grid.
    Simulate(SimulateArgs),
    /// Train one network on the sawtooth task.
    Train(TrainArgs),
    /// Run a named experiment.
    Experiment(ExperimentArgs),
    /// Train deep and wide nets and report their spectral split.
    Spectral(SpectralArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum InterpMode {
    Scalar,
    Thermometer,
}

#[derive(Args, Debug, Serialize)]
struct InterpolateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "scalar")]
    mode: InterpMode,
    /// Ignored by thermometer mode, which always uses heaviside.
    #[arg(long, default_value = "softplus", value_parser = parse_activation)]
    activation: ActivationKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum DecomposeMode {
    Add,
    Mul,
}

#[derive(Args, Debug, Serialize)]
struct DecomposeArgs {
    #[arg(long, value_enum)]
    mode: DecomposeMode,
    /// Rank cap per factor (mul) or number of summands (add).
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = decompose::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SweepKind {
    Deep,
    Wide,
    Augmented,
}

impl From<SweepKind> for PlanKind {
    fn from(k: SweepKind) -> Self {
        match k {
            SweepKind::Deep => PlanKind::Deep,
            SweepKind::Wide => PlanKind::Wide,
            SweepKind::Augmented => PlanKind::Augmented,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Layer JSON {w, b}; w as nested rows or {rows, cols, data}.
    #[arg(long = "in")]
    input: PathBuf,
    /// "start:end:count", log-spaced.
    #[arg(long, default_value = "1e-1:1e-6:6")]
    grid: String,
    /// Deep: rank cap per factor. Wide: rank per branch.
    #[arg(long, default_value_t = 1)]
    rank: usize,
    #[arg(long, default_value_t = decompose::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value = "softplus", value_parser = parse_activation)]
    activation: ActivationKind,
    #[arg(long)]
    out: PathBuf,
    /// Also store the plan built at the first h of the grid.
    #[arg(long)]
    plan_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Rebuild the plan at each h of "start:end:count" instead of
    /// evaluating it as stored.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TrainKind {
    Dense,
    Deep,
    Wide,
}

impl From<TrainKind> for NetKind {
    fn from(k: TrainKind) -> Self {
        match k {
            TrainKind::Dense => NetKind::DenseMlp,
            TrainKind::Deep => NetKind::DeepDlor,
            TrainKind::Wide => NetKind::WideDlor,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: TrainKind,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Substructures (deep/wide) or hidden layers (dense).
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    /// Stop once the training MSE drops below this.
    #[arg(long)]
    threshold: Option<f64>,
    /// Checkpoint output; a loss-curve CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ExperimentArgs {
    #[arg(long, value_parser = parse_experiment)]
    #[serde(serialize_with = "ser_experiment")]
    name: ExperimentName,
    #[command(flatten)]
    common: ScaleArgs,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Construction sweeps: "start:end:count".
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args, Debug, Serialize)]
struct ScaleArgs {
    /// Full-size budgets instead of the reduced defaults.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct SpectralArgs {
    #[command(flatten)]
    common: ScaleArgs,
}

fn ser_experiment<S: serde::Serializer>(n: &ExperimentName, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(n.as_str())
}

fn parse_activation(s: &str) -> std::result::Result<ActivationKind, String> {
    ActivationKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown activation '{s}'"))
}

fn parse_experiment(s: &str) -> std::result::Result<ExperimentName, String> {
    ExperimentName::parse(s).ok_or_else(|| {
        let names: Vec<&str> = ExperimentName::ALL.iter().map(|n| n.as_str()).collect();
        format!("unknown experiment '{s}' (expected one of {})", names.join(", "))
    })
}

fn grid(spec: &str) -> Result<Vec<f64>> {
    parse_h_grid(spec).ok_or_else(|| input(format!("bad grid '{spec}', expected start:end:count with positive bounds")))
}

/// Either nested rows or the `{rows, cols, data}` form.
#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixInput {
    Rows(Vec<Vec<f64>>),
    Flat(Matrix),
}

impl MatrixInput {
    fn into_matrix(self) -> Result<Matrix> {
        match self {
            MatrixInput::Rows(rows) => Matrix::from_rows(&rows).map_err(input),
            MatrixInput::Flat(m) => Ok(m),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightFile {
    Layer { w: MatrixInput, b: Option<Vec<f64>> },
    Bare(MatrixInput),
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| input(format!("bad JSON in {}: {e}", path.display())))
}

fn read_weight(path: &Path) -> Result<(Matrix, Option<Vector>)> {
    match read_json::<WeightFile>(path)? {
        WeightFile::Layer { w, b } => Ok((w.into_matrix()?, b.map(Vector::new))),
        WeightFile::Bare(w) => Ok((w.into_matrix()?, None)),
    }
}

/// Writes `value` as JSON, then reads it back and hands the parsed copy to
/// `verify`.
fn write_verified<T, F>(path: &Path, value: &T, verify: F) -> Result<()>
where
    T: Serialize + serde::de::DeserializeOwned,
    F: FnOnce(&T) -> Result<()>,
{
    write_json(path, value)?;
    let back: T = read_json(path)?;
    verify(&back)
}

fn write_csv(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

fn fmt_f(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Serialize, Deserialize)]
struct FactorFile {
    alpha: f64,
    components: Vec<FactorPair>,
    order: String,
    residual: f64,
}

#[derive(Serialize, Deserialize)]
struct FactorPair {
    u: Matrix,
    v: Matrix,
}

impl FactorFile {
    fn product(&self, n: usize) -> Matrix {
        self.components.iter().fold(Matrix::identity(n), |acc, c| {
            DlorComponent::new(self.alpha, c.u.clone(), c.v.clone()).apply_matrix(&acc)
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    summands: Vec<Matrix>,
    betas: Option<Vector>,
    residual: f64,
}

fn relative_residual(approx: &Matrix, w: &Matrix) -> f64 {
    let norm = w.frob_norm();
    let diff = approx.sub(w).frob_norm();
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

fn cmd_decompose(a: &DecomposeArgs, seed: u64) -> Result<Value> {
    let (w, _) = read_weight(&a.input)?;
    let n = w.rows();
    match a.mode {
        DecomposeMode::Mul => {
            let f = multiplicative_factorize(&w, a.rank, a.alpha, seed)?;
            let file = FactorFile {
                alpha: f.alpha,
                components: f
                    .components
                    .iter()
                    .map(|c| FactorPair { u: c.u.clone(), v: c.v.clone() })
                    .collect(),
                order: "left-applied-last".into(),
                residual: f.residual,
            };
            let expected_len = n.div_ceil(a.rank);
            write_verified(&a.out, &file, |back| {
                let residual = relative_residual(&back.product(n), &w);
                if back.components.len() != expected_len {
                    return Err(numerical(format!(
                        "{} factors, expected {expected_len}",
                        back.components.len()
                    )));
                }
                if residual.is_nan() || residual > MUL_RESIDUAL_TOL {
                    return Err(numerical(format!("factorization residual {residual:e} exceeds {MUL_RESIDUAL_TOL:e}")));
                }
                Ok(())
            })?;
            Ok(json!({ "factors": file.components.len(), "residual": file.residual }))
        }
        DecomposeMode::Add => {
            let split = decompose::additive_split(&w, a.rank)?;
            let file = SplitFile {
                residual: relative_residual(&split.sum(), &w),
                summands: split.summands,
                betas: split.betas,
            };
            write_verified(&a.out, &file, |back| {
                let sum = back.summands[1..].iter().fold(back.summands[0].clone(), |acc, m| acc.add(m));
                let residual = relative_residual(&sum, &w);
                if residual.is_nan() || residual > ADD_RESIDUAL_TOL {
                    return Err(numerical(format!("split residual {residual:e} exceeds {ADD_RESIDUAL_TOL:e}")));
                }
                if let Some(b) = &back.betas {
                    if b.iter().sum::<f64>() != 0.0 {
                        return Err(numerical("branch weights do not sum to zero"));
                    }
                }
                Ok(())
            })?;
            Ok(json!({ "parts": file.summands.len(), "residual": file.residual }))
        }
    }
}

/// Reads `x_1,…,x_d,z` rows (header required) into `d × M` inputs and targets.
fn read_dataset(path: &Path) -> Result<(Matrix, Vec<f64>)> {
    let text = read_text(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| input("empty dataset"))?.split(',').map(str::trim).collect();
    if header.len() < 2 || header.last() != Some(&"z") {
        return Err(input("dataset header must be x_1,...,x_d,z"));
    }
    let d = header.len() - 1;
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut z = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| input(format!("dataset row {}: {e}", i + 1)))?;
        if vals.len() != d + 1 {
            return Err(input(format!("dataset row {} has {} fields, expected {}", i + 1, vals.len(), d + 1)));
        }
        for (col, v) in xs.iter_mut().zip(&vals) {
            col.push(*v);
        }
        z.push(vals[d]);
    }
    if z.is_empty() {
        return Err(input("dataset has no rows"));
    }
    Ok((Matrix::from_rows(&xs).map_err(input)?, z))
}

fn max_residual(net: &Rank1Net, x: &Matrix, z: &[f64]) -> f64 {
    net.forward_batch(x)
        .iter()
        .zip(z)
        .map(|(f, t)| (f - t).abs())
        .fold(0.0, f64::max)
}

fn cmd_interpolate(a: &InterpolateArgs, seed: u64) -> Result<Value> {
    let (x, z) = read_dataset(&a.data)?;
    let net = match a.mode {
        InterpMode::Scalar => {
            let act = ActivationSpec::new(a.activation, a.activation.default_expansion_point().unwrap_or(0.0))
                .map_err(input)?;
            rank1::scalar_interpolate(&x, &z, act, seed)?
        }
        InterpMode::Thermometer => rank1::thermometer_interpolate(&x, &z)?,
    };
    let residual = max_residual(&net, &x, &z);
    write_verified(&a.out, &net, |back| {
        let again = max_residual(back, &x, &z);
        if again.to_bits() != residual.to_bits() {
            return Err(numerical("reloaded network disagrees with the one written"));
        }
        Ok(())
    })?;
    let scale = z.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    Ok(json!({
        "points": z.len(),
        "input_dim": x.rows(),
        "hidden_width": net.width(),
        "max_abs_residual": residual,
        "relative_residual": residual / scale,
    }))
}

fn sweep_csv(rows: &[(f64, f64)]) -> String {
    let mut s = String::from("h,sup_error\n");
    for (h, e) in rows {
        s.push_str(&format!("{},{}\n", fmt_f(*h), fmt_f(*e)));
    }
    s
}

fn plan_rows(plan: &PlanFile, hs: &[f64], seed: u64) -> Result<Vec<(f64, f64)>> {
    let pts = evaluation_grid(plan.in_dim(), seed);
    Ok(construct::h_sweep(hs, |h| plan.rebuild(h)?.sup_error(&pts))?)
}

fn cmd_sweep(a: &SweepArgs, seed: u64) -> Result<Value> {
    let (w, b) = read_weight(&a.input)?;
    let b = b.unwrap_or_else(|| Vector::zeros(w.rows()));
    let act = ActivationSpec::with_default(a.activation);
    let hs = grid(&a.grid)?;
    let source = SourceLayer { w, b };
    let plan = PlanFile::build(a.kind.into(), &source, a.rank, a.alpha, hs[0], &act, seed)?;
    let rows = plan_rows(&plan, &hs, seed)?;
    write_csv(&a.out, &sweep_csv(&rows))?;
    if let Some(p) = &a.plan_out {
        write_verified(p, &plan, |back| {
            if back != &plan {
                return Err(numerical("reloaded plan differs from the one written"));
            }
            Ok(())
        })?;
    }
    Ok(json!({ "rows": rows.len(), "layers": plan.layers.len() }))
}

fn cmd_simulate(a: &SimulateArgs, seed: u64) -> Result<Value> {
    let plan: PlanFile = read_json(&a.plan)?;
    let rows = match &a.grid {
        Some(g) => plan_rows(&plan, &grid(g)?, seed)?,
        None => {
            let pts = evaluation_grid(plan.in_dim(), seed);
            vec![(plan.h, plan.sup_error(&pts)?)]
        }
    };
    write_csv(&a.out, &sweep_csv(&rows))?;
    Ok(json!({ "rows": rows.len() }))
}

fn cmd_train(a: &TrainArgs, seed: u64) -> Result<Value> {
    let data = make_sawtooth(&SawtoothSpec::default());
    let mut net = TrainableNet::new(a.kind.into(), a.width, a.k, ActivationSpec::softplus(), seed)?;
    let setup = TrainingSetup::default();
    let cfg = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        scheduler: setup.scheduler,
        seed,
        stop_threshold: a.threshold,
        record_every: setup.record_every,
    };
    let result = train::train(&mut net, &data, &cfg)?;
    let ck = net.to_checkpoint();
    write_verified(&a.out, &ck, |back: &Checkpoint| {
        let reloaded = TrainableNet::from_checkpoint(back)?;
        if reloaded.params() != net.params() {
            return Err(numerical("reloaded checkpoint differs from the trained net"));
        }
        Ok(())
    })?;
    let mut curve = String::from("epoch,train_mse,test_mse,lr\n");
    for p in &result.loss_curve {
        curve.push_str(&format!("{},{},{},{}\n", p.epoch, fmt_f(p.train_mse), fmt_f(p.test_mse), fmt_f(p.lr)));
    }
    write_csv(&a.out.with_extension("curve.csv"), &curve)?;
    Ok(json!({
        "param_count": net.param_count(),
        "final_train_mse": result.final_train_mse,
        "final_test_mse": result.final_test_mse,
        "epochs_run": result.epochs_run,
        "reached_threshold": result.reached_threshold,
    }))
}

fn scale_options(c: &ScaleArgs) -> ExperimentOptions {
    ExperimentOptions {
        scale: if c.full { Scale::Full } else { Scale::Reduced },
        epochs: c.epochs,
        seeds: c.seeds,
        ..ExperimentOptions::default()
    }
}

fn run_experiment(name: ExperimentName, opts: &ExperimentOptions, cli: &Cli, resolved: &Value) -> Result<Value> {
    let dir = run_and_save(name, cli.seed, opts, &cli.out_dir)?;
    write_manifest_in(&dir, resolved)?;
    let summary: Value = read_json(&dir.join("summary.json"))?;
    Ok(json!({ "dir": dir, "summary": summary }))
}

fn write_manifest_in(dir: &Path, resolved: &Value) -> Result<()> {
    write_verified(&dir.join("manifest.json"), resolved, |back| {
        if back != resolved {
            return Err(numerical("manifest did not round-trip"));
        }
        Ok(())
    })
}

fn resolved_config(cli: &Cli) -> Value {
    json!({
        "seed": cli.seed,
        "out_dir": cli.out_dir,
        "config": cli.config,
        "jobs": cli.jobs,
        "command": cli.command,
        "parallel": cfg!(feature = "parallel"),
    })
}

fn sub_name(c: &Command) -> &'static str {
    match c {
        Command::Interpolate(_) => "interpolate",
        Command::Decompose(_) => "decompose",
        Command::Sweep(_) => "sweep",
        Command::Simulate(_) => "simulate",
        Command::Train(_) => "train",
        Command::Experiment(_) => "experiment",
        Command::Spectral(_) => "spectral",
    }
}

fn dispatch(cli: &Cli) -> Result<Value> {
    if cli.jobs == Some(0) {
        return Err(input("--jobs must be at least 1"));
    }
    let resolved = resolved_config(cli);
    let seed = cli.seed;
    let report = match &cli.command {
        Command::Interpolate(a) => cmd_interpolate(a, seed)?,
        Command::Decompose(a) => cmd_decompose(a, seed)?,
        Command::Sweep(a) => cmd_sweep(a, seed)?,
        Command::Simulate(a) => cmd_simulate(a, seed)?,
        Command::Train(a) => cmd_train(a, seed)?,
        Command::Experiment(a) => {
            let mut opts = scale_options(&a.common);
            opts.ks = a.ks.clone();
            opts.threshold = a.threshold;
            opts.hs = a.grid.as_deref().map(grid).transpose()?;
            return run_experiment(a.name, &opts, cli, &resolved);
        }
        Command::Spectral(a) => {
            return run_experiment(ExperimentName::Spectral, &scale_options(&a.common), cli, &resolved);
        }
    };
    let dir = create_run_dir(&cli.out_dir, sub_name(&cli.command))?;
    write_manifest_in(&dir, &resolved)?;
    write_verified(&dir.join("report.json"), &report, |_| Ok(()))?;
    Ok(json!({ "dir": dir, "report": report }))
}

const SUBCOMMANDS: [&str; 7] = [
    "interpolate",
    "decompose",
    "sweep",
    "simulate",
    "train",
    "experiment",
    "spectral",
];

/// Splices the `--config` file's entries in as flags right after the
/// subcommand; flags given on the command line take precedence.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let strs: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strs.iter().enumerate() {
        if a == "--config" {
            path = strs.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let cfg: Value = read_json(Path::new(&path))?;
    let obj = cfg
        .as_object()
        .ok_or_else(|| input(format!("{path}: config must be a JSON object")))?;
    let mut extra: Vec<OsString> = Vec::new();
    for (key, value) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        let given = strs.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        let scalar = |v: &Value| -> Result<String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(input(format!("{path}: unsupported value for '{key}'"))),
            }
        };
        match value {
            Value::Bool(true) => extra.push(flag.into()),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let joined: Result<Vec<String>> = items.iter().map(scalar).collect();
                extra.push(flag.into());
                extra.push(joined?.join(",").into());
            }
            v => {
                extra.push(flag.into());
                extra.push(scalar(v)?.into());
            }
        }
    }
    let at = strs
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map_or(args.len(), |i| i + 1);
    let mut out = args;
    out.splice(at..at, extra);
    Ok(out)
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dlor::par::with_jobs(cli.jobs, || dispatch(&cli)) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            // A closed stdout (e.g. piped into `head`) is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
