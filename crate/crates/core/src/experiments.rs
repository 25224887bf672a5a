//! Sawtooth experiments: construction sweeps, training comparisons between
//! deep and wide DLoR nets, a parameter-matched dense baseline and the
//! spectral split of trained layers. Every experiment is a pure function of
//! its config and seeds; artifacts are CSV and JSON.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationSpec;
use crate::construct::{
    self, dense_forward, transfer_network_with, ConstructError, Simulate, TransferConfig,
    TransferMode,
};
use crate::decompose::PadStrategy;
use crate::linalg::{svd, LinalgError, Matrix};
use crate::par;
use crate::train::{
    self, param_count, NetKind, SchedulerConfig, TrainConfig, TrainError, TrainResult, TrainableNet,
};

pub use crate::train::Dataset;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Construct(#[from] ConstructError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("invalid experiment config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SawtoothSpec {
    pub lambda: f64,
    pub domain: [f64; 2],
    pub n_points: usize,
}

impl Default for SawtoothSpec {
    fn default() -> Self {
        SawtoothSpec {
            lambda: 3.7,
            domain: [-2.0, 2.0],
            n_points: 400,
        }
    }
}

/// `|(λx mod 2) − 1|` with the remainder taken in `[0, 2)`.
pub fn sawtooth(x: f64, lambda: f64) -> f64 {
    ((lambda * x).rem_euclid(2.0) - 1.0).abs()
}

/// Evenly spaced points over the domain; even indices train, odd test.
pub fn make_sawtooth(spec: &SawtoothSpec) -> Dataset {
    let [lo, hi] = spec.domain;
    let n = spec.n_points;
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let mut d = Dataset {
        x_train: Vec::new(),
        y_train: Vec::new(),
        x_test: Vec::new(),
        y_test: Vec::new(),
    };
    for i in 0..n {
        let x = lo + step * i as f64;
        let y = sawtooth(x, spec.lambda);
        if i % 2 == 0 {
            d.x_train.push(x);
            d.y_train.push(y);
        } else {
            d.x_test.push(x);
            d.y_test.push(y);
        }
    }
    d
}

/// Experiment size: `Reduced` divides epochs by 10 and uses 3 seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Reduced,
    Full,
}

impl Scale {
    pub fn epochs(self, full: usize) -> usize {
        match self {
            Scale::Full => full,
            Scale::Reduced => (full / 10).max(1),
        }
    }

    pub fn seeds(self, full: usize) -> usize {
        match self {
            Scale::Full => full,
            Scale::Reduced => full.min(3),
        }
    }
}

// ---------------------------------------------------------------------------
// Construction sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub mode: TransferMode,
    pub seed: u64,
    pub rank: usize,
    pub alpha: f64,
    pub hs: Vec<f64>,
    pub baseline_epochs: usize,
    pub baseline_lr: f64,
    pub sawtooth: SawtoothSpec,
}

impl ConstructionConfig {
    /// Deep: `h = 10⁻², …, 10⁻⁸`; wide: `h = 10⁻¹, …, 10⁻⁶`; rank 6, α = 0.8.
    pub fn new(mode: TransferMode, seed: u64) -> Self {
        let hs = match mode {
            TransferMode::Deep => construct::decades(2, 8),
            TransferMode::Wide => construct::decades(1, 6),
        };
        ConstructionConfig {
            mode,
            seed,
            rank: 6,
            alpha: 0.8,
            hs,
            baseline_epochs: 2000,
            baseline_lr: 0.01,
            sawtooth: SawtoothSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub h: f64,
    pub err_to_dense: f64,
    pub err_to_function: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by `h`, largest first.
    pub rows: Vec<SweepRow>,
    /// Sup-norm error of the trained dense net against the sawtooth.
    pub baseline_sup_error: f64,
    pub baseline_test_mse: f64,
    /// Error strictly decreases over the first three `h` values.
    pub monotone_top3: bool,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,err_to_dense,err_to_function\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:e},{:e},{:e}", r.h, r.err_to_dense, r.err_to_function);
        }
        s
    }

    /// `err_to_function ≤ err_to_dense + baseline_sup_error` on every row
    /// (with a relative slack of `1e-12`).
    pub fn triangle_holds(&self) -> bool {
        self.rows.iter().all(|r| {
            let bound = r.err_to_dense + self.baseline_sup_error;
            r.err_to_function <= bound * (1.0 + 1e-12)
        })
    }
}

/// The construction baseline: a width-16 softplus MLP with three
/// `16 × 16` hidden layers trained on the sawtooth.
pub fn train_construction_baseline(cfg: &ConstructionConfig) -> Result<(TrainableNet, Dataset, TrainResult)> {
    let data = make_sawtooth(&cfg.sawtooth);
    let mut net = TrainableNet::new(NetKind::DenseMlp, 16, 3, ActivationSpec::softplus(), cfg.seed)?;
    let tc = TrainConfig::new(cfg.baseline_lr, cfg.baseline_epochs, cfg.seed);
    let result = train::train(&mut net, &data, &tc)?;
    Ok((net, data, result))
}

/// Trains the baseline, transfers it at every `h` and measures the
/// sup-norm error on the test points against the dense net and against
/// the sawtooth itself.
pub fn run_construction_sweep(cfg: &ConstructionConfig) -> Result<SweepResult> {
    let (net, data, trained) = train_construction_baseline(cfg)?;
    sweep_trained_baseline(cfg, &net, &data, &trained)
}

/// The sweep of [`run_construction_sweep`] on an already trained baseline,
/// so deep and wide sweeps can share one.
pub fn sweep_trained_baseline(
    cfg: &ConstructionConfig,
    net: &TrainableNet,
    data: &Dataset,
    trained: &TrainResult,
) -> Result<SweepResult> {
    let act = net.activation;
    let layers = net.to_affine_layers()?;
    let grid = Matrix::from_vec(1, data.x_test.len(), data.x_test.clone())?;
    let lambda = cfg.sawtooth.lambda;
    let target = |x: &[f64]| Ok(crate::linalg::Vector::new(vec![sawtooth(x[0], lambda)]));
    let dense = |x: &[f64]| dense_forward(&layers, &act, x);
    let baseline_sup_error = construct::sup_error(dense, target, &grid)?;

    let mut hs = cfg.hs.clone();
    hs.sort_by(|a, b| b.total_cmp(a));
    let rows: Vec<Result<SweepRow>> = par::map(&hs, |&h| {
        let tc = TransferConfig {
            mode: cfg.mode,
            rank_cap: cfg.rank,
            alpha: cfg.alpha,
            h,
            seed: cfg.seed,
            pad: PadStrategy::default(),
        };
        let tn = transfer_network_with(&layers, &act, &tc)?;
        Ok(SweepRow {
            h,
            err_to_dense: construct::sup_error(|x| tn.simulate(x), dense, &grid)?,
            err_to_function: construct::sup_error(|x| tn.simulate(x), target, &grid)?,
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let monotone_top3 = rows.len() >= 3 && rows[..3].windows(2).all(|w| w[1].err_to_dense < w[0].err_to_dense);
    Ok(SweepResult {
        rows,
        baseline_sup_error,
        baseline_test_mse: trained.final_test_mse,
        monotone_top3,
    })
}

// ---------------------------------------------------------------------------
// Training experiments

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Dense,
    Deep,
    Wide,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Dense => "dense",
            Arch::Deep => "deep",
            Arch::Wide => "wide",
        }
    }
}

/// One training run. Dense runs are two-hidden-layer MLPs of size `width`;
/// their `k` is only a table key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub arch: Arch,
    pub k: usize,
    pub width: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arch: Arch,
    pub k: usize,
    pub width: usize,
    pub seed: u64,
    pub params: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub epochs_run: usize,
    pub reached_threshold: bool,
    /// Epoch at which the loss became non-finite.
    pub diverged_at: Option<usize>,
    #[serde(skip)]
    pub curve: Vec<train::CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetup {
    pub lr: f64,
    pub scheduler: SchedulerConfig,
    pub record_every: usize,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        TrainingSetup {
            lr: 0.005,
            scheduler: SchedulerConfig::default(),
            record_every: 50,
        }
    }
}

fn build_net(spec: &RunSpec) -> Result<TrainableNet> {
    let act = ActivationSpec::softplus();
    Ok(match spec.arch {
        Arch::Dense => TrainableNet::new(NetKind::DenseMlp, spec.width, 1, act, spec.seed)?,
        Arch::Deep => TrainableNet::new(NetKind::DeepDlor, spec.width, spec.k, act, spec.seed)?,
        Arch::Wide => TrainableNet::new(NetKind::WideDlor, spec.width, spec.k, act, spec.seed)?,
    })
}

/// Trains one net; divergence is recorded rather than returned as an error.
pub fn run_one(
    spec: &RunSpec,
    data: &Dataset,
    setup: &TrainingSetup,
    epochs: usize,
    threshold: Option<f64>,
) -> Result<RunRecord> {
    let mut net = build_net(spec)?;
    let cfg = TrainConfig {
        lr: setup.lr,
        epochs,
        scheduler: setup.scheduler,
        seed: spec.seed,
        stop_threshold: threshold,
        record_every: setup.record_every,
    };
    let mut rec = RunRecord {
        arch: spec.arch,
        k: spec.k,
        width: spec.width,
        seed: spec.seed,
        params: net.param_count(),
        train_mse: f64::NAN,
        test_mse: f64::NAN,
        epochs_run: epochs,
        reached_threshold: false,
        diverged_at: None,
        curve: Vec::new(),
    };
    match train::train(&mut net, data, &cfg) {
        Ok(r) => {
            rec.train_mse = r.final_train_mse;
            rec.test_mse = r.final_test_mse;
            rec.epochs_run = r.epochs_run;
            rec.reached_threshold = r.reached_threshold;
            rec.curve = r.loss_curve;
        }
        Err(TrainError::DivergedAt(e)) => {
            rec.epochs_run = e;
            rec.diverged_at = Some(e);
        }
        Err(e) => return Err(e.into()),
    }
    Ok(rec)
}

/// Runs every spec on the worker pool; records come back in spec order.
pub fn run_many(
    specs: &[RunSpec],
    data: &Dataset,
    setup: &TrainingSetup,
    epochs: usize,
    threshold: Option<f64>,
) -> Result<Vec<RunRecord>> {
    par::map(specs, |s| run_one(s, data, setup, epochs, threshold))
        .into_iter()
        .collect()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Spread> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Spread {
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arch: Arch,
    pub k: usize,
    pub runs: usize,
    /// Test MSE over runs that did not diverge.
    pub test_mse: Option<Spread>,
    /// Epochs to threshold over successful runs.
    pub epochs_to_threshold: Option<Spread>,
    pub success_rate: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rows: Vec<SummaryRow>,
}

impl ExperimentSummary {
    /// Groups records by `(arch, k)` in sorted key order.
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut keys: Vec<(Arch, usize)> = records.iter().map(|r| (r.arch, r.k)).collect();
        keys.sort();
        keys.dedup();
        let rows = keys
            .into_iter()
            .map(|(arch, k)| {
                let group: Vec<&RunRecord> = records.iter().filter(|r| r.arch == arch && r.k == k).collect();
                let mse: Vec<f64> = group.iter().filter(|r| r.diverged_at.is_none()).map(|r| r.test_mse).collect();
                let ok: Vec<f64> = group
                    .iter()
                    .filter(|r| r.reached_threshold)
                    .map(|r| r.epochs_run as f64)
                    .collect();
                SummaryRow {
                    arch,
                    k,
                    runs: group.len(),
                    test_mse: Spread::of(&mse),
                    epochs_to_threshold: Spread::of(&ok),
                    success_rate: ok.len() as f64 / group.len() as f64,
                    diverged: group.iter().filter(|r| r.diverged_at.is_some()).count(),
                }
            })
            .collect();
        ExperimentSummary { rows }
    }

    pub fn row(&self, arch: Arch, k: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.arch == arch && r.k == k)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "arch,k,runs,median_test_mse,q1_test_mse,q3_test_mse,median_epochs,q1_epochs,q3_epochs,success_rate,diverged\n",
        );
        let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let t = r.test_mse;
            let e = r.epochs_to_threshold;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.arch.name(),
                r.k,
                r.runs,
                f(t.map(|t| t.median)),
                f(t.map(|t| t.q1)),
                f(t.map(|t| t.q3)),
                f(e.map(|e| e.median)),
                f(e.map(|e| e.q1)),
                f(e.map(|e| e.q3)),
                r.success_rate,
                r.diverged
            );
        }
        s
    }
}

/// Tally of a deep-versus-wide comparison over `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub deep_wins: usize,
    pub compared: usize,
    pub holds: bool,
}

impl MajorityVote {
    fn tally(wins: impl Iterator<Item = bool>) -> Self {
        let (mut deep_wins, mut compared) = (0, 0);
        for w in wins {
            compared += 1;
            deep_wins += usize::from(w);
        }
        MajorityVote {
            deep_wins,
            compared,
            holds: compared > 0 && 2 * deep_wins > compared,
        }
    }
}

fn ks_of(summary: &ExperimentSummary) -> Vec<usize> {
    let mut ks: Vec<usize> = summary.rows.iter().filter(|r| r.arch == Arch::Deep).map(|r| r.k).collect();
    ks.dedup();
    ks
}

/// Deep median test error ≤ wide median test error, counted over `k`.
pub fn deep_lower_error_vote(summary: &ExperimentSummary) -> MajorityVote {
    MajorityVote::tally(ks_of(summary).into_iter().filter_map(|k| {
        let d = summary.row(Arch::Deep, k)?.test_mse?;
        let w = summary.row(Arch::Wide, k)?.test_mse?;
        Some(d.median <= w.median)
    }))
}

/// Deep success rate ≥ wide success rate, counted over `k`.
pub fn deep_success_vote(summary: &ExperimentSummary) -> MajorityVote {
    MajorityVote::tally(ks_of(summary).into_iter().filter_map(|k| {
        let d = summary.row(Arch::Deep, k)?;
        let w = summary.row(Arch::Wide, k)?;
        Some(d.success_rate >= w.success_rate)
    }))
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("arch,k,width,seed,params,train_mse,test_mse,epochs_run,reached_threshold,diverged_at\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:e},{:e},{},{},{}",
            r.arch.name(),
            r.k,
            r.width,
            r.seed,
            r.params,
            r.train_mse,
            r.test_mse,
            r.epochs_run,
            r.reached_threshold,
            r.diverged_at.map(|e| e.to_string()).unwrap_or_default()
        );
    }
    s
}

pub fn curves_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("arch,k,seed,epoch,train_mse,test_mse,lr\n");
    for r in records {
        for p in &r.curve {
            let _ = writeln!(
                s,
                "{},{},{},{},{:e},{:e},{:e}",
                r.arch.name(),
                r.k,
                r.seed,
                p.epoch,
                p.train_mse,
                p.test_mse,
                p.lr
            );
        }
    }
    s
}

/// Deep and wide nets for every `(k, seed)` plus one width-16 dense
/// baseline per seed (reported under `k = 0`).
pub fn training_specs(ks: &[usize], seeds: &[u64]) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &seed in seeds {
        specs.push(RunSpec {
            arch: Arch::Dense,
            k: 0,
            width: 16,
            seed,
        });
    }
    for &k in ks {
        for arch in [Arch::Deep, Arch::Wide] {
            for &seed in seeds {
                specs.push(RunSpec { arch, k, width: 16, seed });
            }
        }
    }
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExperimentConfig {
    pub epochs: usize,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Early-stop threshold on the training MSE.
    pub threshold: Option<f64>,
    pub setup: TrainingSetup,
    pub sawtooth: SawtoothSpec,
}

impl TrainingExperimentConfig {
    /// Fixed budget of `epochs` (full scale 5000 or 50000).
    pub fn fixed_budget(epochs: usize, scale: Scale, base_seed: u64) -> Self {
        Self::build(scale.epochs(epochs), None, scale.seeds(10), base_seed)
    }

    /// Early stop at training MSE `threshold` within `max_epochs`.
    pub fn time_to_threshold(threshold: f64, max_epochs: usize, scale: Scale, base_seed: u64) -> Self {
        Self::build(scale.epochs(max_epochs), Some(threshold), scale.seeds(10), base_seed)
    }

    fn build(epochs: usize, threshold: Option<f64>, n_seeds: usize, base_seed: u64) -> Self {
        TrainingExperimentConfig {
            epochs,
            ks: (1..=16).collect(),
            seeds: (0..n_seeds as u64).map(|i| base_seed + i).collect(),
            threshold,
            setup: TrainingSetup::default(),
            sawtooth: SawtoothSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExperiment {
    pub records: Vec<RunRecord>,
    pub summary: ExperimentSummary,
}

pub fn run_training_experiment(cfg: &TrainingExperimentConfig) -> Result<TrainingExperiment> {
    if cfg.seeds.is_empty() || cfg.ks.is_empty() {
        return Err(ExperimentError::Config("ks and seeds must be non-empty".into()));
    }
    let data = make_sawtooth(&cfg.sawtooth);
    let specs = training_specs(&cfg.ks, &cfg.seeds);
    let records = run_many(&specs, &data, &cfg.setup, cfg.epochs, cfg.threshold)?;
    let summary = ExperimentSummary::from_records(&records);
    Ok(TrainingExperiment { records, summary })
}

pub fn run_fixed_budget(cfg: &TrainingExperimentConfig) -> Result<TrainingExperiment> {
    run_training_experiment(cfg)
}

pub fn run_time_to_threshold(cfg: &TrainingExperimentConfig) -> Result<TrainingExperiment> {
    if cfg.threshold.is_none() {
        return Err(ExperimentError::Config("time-to-threshold needs a threshold".into()));
    }
    run_training_experiment(cfg)
}

// ---------------------------------------------------------------------------
// Parameter-matched comparison

/// Parameters of a `1 → w → w → 1` MLP: `w² + 4w + 1`.
pub fn dense_two_layer_count(w: usize) -> usize {
    w * w + 4 * w + 1
}

/// Width whose two-hidden-layer count is nearest `target` (ties go to the
/// smaller width).
pub fn matched_dense_width(target: usize) -> usize {
    let mut best = 1;
    for w in 1.. {
        let c = dense_two_layer_count(w);
        if c.abs_diff(target) < dense_two_layer_count(best).abs_diff(target) {
            best = w;
        }
        if c > target {
            break;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub k: usize,
    pub dense_width: usize,
    pub dense: usize,
    pub deep: usize,
    pub wide: usize,
}

pub fn param_table(ks: &[usize]) -> Vec<ParamRow> {
    ks.iter()
        .map(|&k| {
            let wide = param_count(NetKind::WideDlor, 16, k);
            let dense_width = matched_dense_width(wide);
            ParamRow {
                k,
                dense_width,
                dense: dense_two_layer_count(dense_width),
                deep: param_count(NetKind::DeepDlor, 16, k),
                wide,
            }
        })
        .collect()
}

pub fn param_table_csv(rows: &[ParamRow]) -> String {
    let mut s = String::from("k,dense_width,dense,deep,wide\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.k, r.dense_width, r.dense, r.deep, r.wide);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMatchedConfig {
    pub epochs: usize,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub setup: TrainingSetup,
    pub sawtooth: SawtoothSpec,
}

impl ParamMatchedConfig {
    /// 5 seeds at a 5000-epoch budget (full scale).
    pub fn new(scale: Scale, base_seed: u64) -> Self {
        ParamMatchedConfig {
            epochs: scale.epochs(5000),
            ks: vec![1, 2, 4, 8, 16],
            seeds: (0..scale.seeds(5) as u64).map(|i| base_seed + i).collect(),
            setup: TrainingSetup::default(),
            sawtooth: SawtoothSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamMatchedResult {
    pub table: Vec<ParamRow>,
    pub records: Vec<RunRecord>,
    pub summary: ExperimentSummary,
}

/// Deep, wide and a count-matched two-hidden-layer dense net per `k`; the
/// dense rows carry the `k` they were matched to.
pub fn run_param_matched(cfg: &ParamMatchedConfig) -> Result<ParamMatchedResult> {
    let table = param_table(&cfg.ks);
    let mut specs = Vec::new();
    for row in &table {
        for (arch, width) in [(Arch::Dense, row.dense_width), (Arch::Deep, 16), (Arch::Wide, 16)] {
            for &seed in &cfg.seeds {
                specs.push(RunSpec {
                    arch,
                    k: row.k,
                    width,
                    seed,
                });
            }
        }
    }
    let data = make_sawtooth(&cfg.sawtooth);
    let records = run_many(&specs, &data, &cfg.setup, cfg.epochs, None)?;
    let summary = ExperimentSummary::from_records(&records);
    Ok(ParamMatchedResult {
        table,
        records,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Spectral split

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSpectrum {
    pub sigma: Vec<f64>,
    pub lowrank_contrib: Vec<f64>,
    pub identity_contrib: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WideSpectrum {
    pub sigma_total: Vec<f64>,
    /// `|diag(PᵀW_iQ)|` per branch.
    pub branch_contribs: Vec<Vec<f64>>,
    /// The same before taking absolute values.
    pub branch_signed: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub deep: DeepSpectrum,
    pub wide: WideSpectrum,
}

fn projected_diag(p: &Matrix, a: &Matrix, q_t: &Matrix) -> Vec<f64> {
    // diag(Pᵀ A Q)_i = p_iᵀ A q_i with q_i the i-th row of Qᵀ.
    (0..q_t.rows())
        .map(|i| {
            let aq = a.matvec(q_t.row(i));
            (0..p.rows()).map(|r| p.get(r, i) * aq[r]).sum()
        })
        .collect()
}

/// Splits the spectrum of `W = αI + UVᵀ` into identity and low-rank parts
/// along the singular vectors of `W`.
pub fn deep_spectrum(alpha: f64, lowrank: &Matrix) -> Result<DeepSpectrum> {
    let n = lowrank.rows();
    let w = lowrank.add_scaled_identity(alpha);
    let s = svd(&w)?;
    Ok(DeepSpectrum {
        sigma: s.sigma.into_vec(),
        lowrank_contrib: projected_diag(&s.u, lowrank, &s.vt),
        identity_contrib: projected_diag(&s.u, &Matrix::scaled_identity(n, alpha), &s.vt),
    })
}

/// Projects every branch map `W_i` onto the singular vectors of `Σ W_i`.
pub fn wide_spectrum(branches: &[Matrix]) -> Result<WideSpectrum> {
    let mut total = branches
        .first()
        .ok_or_else(|| ExperimentError::Config("no branches".into()))?
        .clone();
    for b in &branches[1..] {
        total = total.add(b);
    }
    let s = svd(&total)?;
    let signed: Vec<Vec<f64>> = branches.iter().map(|b| projected_diag(&s.u, b, &s.vt)).collect();
    Ok(WideSpectrum {
        sigma_total: s.sigma.into_vec(),
        branch_contribs: signed.iter().map(|v| v.iter().map(|x| x.abs()).collect()).collect(),
        branch_signed: signed,
    })
}

/// Spectral report of a deep net's substructure `layer` and of all
/// branches `α_l U_l V_lᵀ` of a wide net.
pub fn spectral_report(deep: &TrainableNet, layer: usize, wide: &TrainableNet) -> Result<SpectralReport> {
    let (u, v) = deep.factors(layer);
    let alpha = deep.alpha_values()[0];
    let deep = deep_spectrum(alpha, &u.matmul(&v.transpose()))?;
    let alphas = wide.alpha_values();
    let branches: Vec<Matrix> = (0..wide.k)
        .map(|l| {
            let (u, v) = wide.factors(l);
            u.matmul(&v.transpose()).scale(alphas[l])
        })
        .collect();
    Ok(SpectralReport {
        deep,
        wide: wide_spectrum(&branches)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub width: usize,
    pub rank: usize,
    /// Deep substructures; the report uses the second.
    pub deep_k: usize,
    pub wide_k: usize,
    pub epochs: usize,
    pub seed: u64,
    pub setup: TrainingSetup,
    pub sawtooth: SawtoothSpec,
}

impl SpectralConfig {
    pub fn new(scale: Scale, seed: u64) -> Self {
        SpectralConfig {
            width: 64,
            rank: 4,
            deep_k: 2,
            wide_k: 16,
            epochs: scale.epochs(2000),
            seed,
            setup: TrainingSetup::default(),
            sawtooth: SawtoothSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRun {
    pub report: SpectralReport,
    pub deep_net: TrainableNet,
    pub wide_net: TrainableNet,
}

/// Trains width-`width`, rank-`rank` deep and wide nets and reports their
/// spectral split.
pub fn run_spectral(cfg: &SpectralConfig) -> Result<SpectralRun> {
    if cfg.deep_k < 2 {
        return Err(ExperimentError::Config("deep_k must be at least 2".into()));
    }
    let act = ActivationSpec::softplus();
    let data = make_sawtooth(&cfg.sawtooth);
    let kinds = [(NetKind::DeepDlor, cfg.deep_k), (NetKind::WideDlor, cfg.wide_k)];
    let nets: Vec<Result<TrainableNet>> = par::map(&kinds, |&(kind, k)| {
        let mut net = TrainableNet::with_rank(kind, cfg.width, k, cfg.rank, act, cfg.seed)?;
        let tc = TrainConfig {
            lr: cfg.setup.lr,
            epochs: cfg.epochs,
            scheduler: cfg.setup.scheduler,
            seed: cfg.seed,
            stop_threshold: None,
            record_every: cfg.setup.record_every,
        };
        train::train(&mut net, &data, &tc)?;
        Ok(net)
    });
    let mut nets = nets.into_iter();
    let deep_net = nets.next().expect("two nets")?;
    let wide_net = nets.next().expect("two nets")?;
    Ok(SpectralRun {
        report: spectral_report(&deep_net, 1, &wide_net)?,
        deep_net,
        wide_net,
    })
}

impl SpectralReport {
    pub fn deep_csv(&self) -> String {
        let d = &self.deep;
        let mut s = String::from("index,sigma,lowrank,identity\n");
        for i in 0..d.sigma.len() {
            let _ = writeln!(s, "{i},{:e},{:e},{:e}", d.sigma[i], d.lowrank_contrib[i], d.identity_contrib[i]);
        }
        s
    }

    pub fn wide_csv(&self) -> String {
        let w = &self.wide;
        let mut s = String::from("index,sigma_total");
        for b in 0..w.branch_contribs.len() {
            let _ = write!(s, ",branch_{b}");
        }
        s.push('\n');
        for i in 0..w.sigma_total.len() {
            let _ = write!(s, "{i},{:e}", w.sigma_total[i]);
            for b in &w.branch_contribs {
                let _ = write!(s, ",{:e}", b[i]);
            }
            s.push('\n');
        }
        s
    }

    /// Largest `|σ_i − (lowrank_i + identity_i)|`.
    pub fn deep_additivity_error(&self) -> f64 {
        let d = &self.deep;
        (0..d.sigma.len())
            .map(|i| (d.sigma[i] - d.lowrank_contrib[i] - d.identity_contrib[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|σ_total,i − Σ_b signed_b,i|`.
    pub fn wide_additivity_error(&self) -> f64 {
        let w = &self.wide;
        (0..w.sigma_total.len())
            .map(|i| (w.sigma_total[i] - w.branch_signed.iter().map(|b| b[i]).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Artifacts

/// Writes `contents` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io_err = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Creates `base/<experiment>/<timestamp>/`, adding a numeric suffix if the
/// directory already exists.
pub fn create_run_dir(base: &Path, experiment: &str) -> Result<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
    let parent = base.join(experiment);
    fs::create_dir_all(&parent).map_err(|source| ExperimentError::Io {
        path: parent.clone(),
        source,
    })?;
    for n in 0.. {
        let dir = if n == 0 {
            parent.join(&stamp)
        } else {
            parent.join(format!("{stamp}-{n}"))
        };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(source) => return Err(ExperimentError::Io { path: dir, source }),
        }
    }
    unreachable!("unbounded suffix search")
}

/// Named experiments runnable from a config file or the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    ConstructionDeep,
    ConstructionWide,
    FixedBudget,
    TimeToThreshold,
    ParamMatched,
    Spectral,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::ConstructionDeep,
        ExperimentName::ConstructionWide,
        ExperimentName::FixedBudget,
        ExperimentName::TimeToThreshold,
        ExperimentName::ParamMatched,
        ExperimentName::Spectral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::ConstructionDeep => "construction-deep",
            ExperimentName::ConstructionWide => "construction-wide",
            ExperimentName::FixedBudget => "fixed-budget",
            ExperimentName::TimeToThreshold => "time-to-threshold",
            ExperimentName::ParamMatched => "param-matched",
            ExperimentName::Spectral => "spectral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s)
    }
}

/// Options shared by every named experiment; unset fields take the
/// experiment's defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    pub scale: Scale,
    /// Training budget override (already scaled).
    pub epochs: Option<usize>,
    pub ks: Option<Vec<usize>>,
    pub seeds: Option<usize>,
    pub threshold: Option<f64>,
    /// Construction sweeps: `h` values override.
    pub hs: Option<Vec<f64>>,
}

/// Runs `name`, writes its artifacts into `dir` and returns the resolved
/// configuration plus a JSON summary.
pub fn run_named(
    name: ExperimentName,
    seed: u64,
    opts: &ExperimentOptions,
    dir: &Path,
) -> Result<(serde_json::Value, serde_json::Value)> {
    let csv = |file: &str, text: String| write_atomic(&dir.join(file), text.as_bytes());
    let seed_list = |n: usize| -> Vec<u64> { (0..n as u64).map(|i| seed + i).collect() };
    match name {
        ExperimentName::ConstructionDeep | ExperimentName::ConstructionWide => {
            let mode = if name == ExperimentName::ConstructionDeep {
                TransferMode::Deep
            } else {
                TransferMode::Wide
            };
            let mut cfg = ConstructionConfig::new(mode, seed);
            if let Some(hs) = &opts.hs {
                cfg.hs = hs.clone();
            }
            if let Some(e) = opts.epochs {
                cfg.baseline_epochs = e;
            }
            let res = run_construction_sweep(&cfg)?;
            csv("sweep.csv", res.to_csv())?;
            let summary = serde_json::json!({
                "baseline_sup_error": res.baseline_sup_error,
                "baseline_test_mse": res.baseline_test_mse,
                "monotone_top3": res.monotone_top3,
                "triangle_holds": res.triangle_holds(),
                "rows": res.rows,
            });
            Ok((serde_json::to_value(&cfg)?, summary))
        }
        ExperimentName::FixedBudget | ExperimentName::TimeToThreshold => {
            let mut cfg = if name == ExperimentName::FixedBudget {
                TrainingExperimentConfig::fixed_budget(5000, opts.scale, seed)
            } else {
                TrainingExperimentConfig::time_to_threshold(opts.threshold.unwrap_or(1e-3), 50_000, opts.scale, seed)
            };
            if let Some(e) = opts.epochs {
                cfg.epochs = e;
            }
            if let Some(ks) = &opts.ks {
                cfg.ks = ks.clone();
            }
            if let Some(n) = opts.seeds {
                cfg.seeds = seed_list(n);
            }
            if name == ExperimentName::FixedBudget {
                cfg.threshold = opts.threshold;
            }
            let res = run_training_experiment(&cfg)?;
            csv("runs.csv", records_csv(&res.records))?;
            csv("curves.csv", curves_csv(&res.records))?;
            csv("summary.csv", res.summary.to_csv())?;
            let summary = serde_json::json!({
                "summary": res.summary,
                "deep_lower_error": deep_lower_error_vote(&res.summary),
                "deep_higher_success": deep_success_vote(&res.summary),
            });
            Ok((serde_json::to_value(&cfg)?, summary))
        }
        ExperimentName::ParamMatched => {
            let mut cfg = ParamMatchedConfig::new(opts.scale, seed);
            if let Some(e) = opts.epochs {
                cfg.epochs = e;
            }
            if let Some(ks) = &opts.ks {
                cfg.ks = ks.clone();
            }
            if let Some(n) = opts.seeds {
                cfg.seeds = seed_list(n);
            }
            let res = run_param_matched(&cfg)?;
            csv("param_counts.csv", param_table_csv(&res.table))?;
            csv("runs.csv", records_csv(&res.records))?;
            csv("summary.csv", res.summary.to_csv())?;
            let summary = serde_json::json!({ "param_counts": res.table, "summary": res.summary });
            Ok((serde_json::to_value(&cfg)?, summary))
        }
        ExperimentName::Spectral => {
            let mut cfg = SpectralConfig::new(opts.scale, seed);
            if let Some(e) = opts.epochs {
                cfg.epochs = e;
            }
            let run = run_spectral(&cfg)?;
            csv("deep_spectrum.csv", run.report.deep_csv())?;
            csv("wide_spectrum.csv", run.report.wide_csv())?;
            let summary = serde_json::json!({
                "deep_additivity_error": run.report.deep_additivity_error(),
                "wide_additivity_error": run.report.wide_additivity_error(),
                "report": run.report,
            });
            Ok((serde_json::to_value(&cfg)?, summary))
        }
    }
}

/// Creates the timestamped directory under `base`, runs the experiment and
/// writes `config.json` and `summary.json` next to its CSVs.
pub fn run_and_save(name: ExperimentName, seed: u64, opts: &ExperimentOptions, base: &Path) -> Result<PathBuf> {
    let dir = create_run_dir(base, name.as_str())?;
    let (config, summary) = run_named(name, seed, opts, &dir)?;
    let echoed = serde_json::json!({
        "experiment": name.as_str(),
        "seed": seed,
        "options": opts,
        "resolved": config,
    });
    write_json(&dir.join("config.json"), &echoed)?;
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sawtooth_values() {
        assert_eq!(sawtooth(0.0, 3.7), 1.0);
        let period = 2.0 / 3.7;
        for i in 0..50 {
            let x = -2.0 + 0.073 * i as f64;
            assert!((sawtooth(x, 3.7) - sawtooth(x + period, 3.7)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&sawtooth(x, 3.7)));
        }
        let d = make_sawtooth(&SawtoothSpec::default());
        assert_eq!((d.x_train.len(), d.x_test.len()), (200, 200));
        assert_eq!(d.x_train[0], -2.0);
        assert_eq!(*d.x_test.last().unwrap(), 2.0);
    }

    #[test]
    fn dense_matching_reproduces_table() {
        let t = param_table(&[1, 2, 4, 8, 16]);
        let dense: Vec<usize> = t.iter().map(|r| r.dense).collect();
        assert_eq!(dense, vec![573, 622, 622, 726, 838]);
        assert!(t.windows(2).all(|w| w[0].dense_width <= w[1].dense_width));
    }

    #[test]
    fn quantiles_match_linear_rule() {
        let s = Spread::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.median, s.q1, s.q3), (2.5, 1.75, 3.25));
        assert!(Spread::of(&[f64::NAN]).is_none());
    }

    #[test]
    fn untrained_deep_spectrum_is_identity() {
        let d = deep_spectrum(0.7, &Matrix::zeros(5, 5)).unwrap();
        assert!(d.identity_contrib.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(d.lowrank_contrib.iter().all(|&v| v.abs() < 1e-15));
        assert!(d.sigma.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn spectral_identities_hold_on_random_nets() {
        let act = ActivationSpec::softplus();
        let deep = TrainableNet::with_rank(NetKind::DeepDlor, 12, 2, 3, act, 4).unwrap();
        let wide = TrainableNet::with_rank(NetKind::WideDlor, 12, 5, 3, act, 4).unwrap();
        let r = spectral_report(&deep, 1, &wide).unwrap();
        assert!(r.deep_additivity_error() < 1e-12);
        assert!(r.wide_additivity_error() < 1e-12);
    }

    #[test]
    fn summary_and_votes() {
        let rec = |arch, k, seed, mse: f64, ok| RunRecord {
            arch,
            k,
            width: 16,
            seed,
            params: 0,
            train_mse: mse,
            test_mse: mse,
            epochs_run: 10,
            reached_threshold: ok,
            diverged_at: None,
            curve: Vec::new(),
        };
        let records = vec![
            rec(Arch::Deep, 1, 0, 0.1, true),
            rec(Arch::Deep, 1, 1, 0.3, false),
            rec(Arch::Wide, 1, 0, 0.5, false),
            rec(Arch::Wide, 1, 1, 0.7, false),
            rec(Arch::Deep, 2, 0, 0.9, false),
            rec(Arch::Wide, 2, 0, 0.2, true),
        ];
        let s = ExperimentSummary::from_records(&records);
        assert_eq!(s.row(Arch::Deep, 1).unwrap().success_rate, 0.5);
        let v = deep_lower_error_vote(&s);
        assert_eq!((v.deep_wins, v.compared, v.holds), (1, 2, false));
        let csv = s.to_csv();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn atomic_write_and_run_dirs() {
        let tmp = tempfile::tempdir().unwrap();
        let a = create_run_dir(tmp.path(), "x").unwrap();
        let b = create_run_dir(tmp.path(), "x").unwrap();
        assert_ne!(a, b);
        let f = a.join("data.csv");
        write_atomic(&f, b"h\n1\n").unwrap();
        assert_eq!(fs::read_to_string(&f).unwrap(), "h\n1\n");
        assert_eq!(fs::read_dir(&a).unwrap().count(), 1);
    }
}
