//! Experiment runner: configuration, data wiring, metrics, baselines and
//! persisted artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{terminal_cost, Batch, CostModel, RunningTarget, TerminalKind};
use crate::data::{
    generate_heston_grid, load_csv, sample_support, toy_linear3, toy_sine, CsvOptions, Dataset, FeatureStats,
    FftSettings, HestonRanges, Task,
};
use crate::error::{check_dim, Error, Result};
use crate::operators::make_operator_bank;
use crate::optimize::{
    fit, min_norm_least_squares, solve_ridge_subproblem, Algorithm, ControlSystem, FittedModel, Model, ModelSpec,
    OptimizerConfig, StopReason,
};
use crate::rkhs::{KernelSpec, Points, SupportSet};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Sine,
    Linear3,
    Heston,
    CsvClassify,
    Custom,
}

impl TaskKind {
    pub fn task(self) -> Task {
        match self {
            TaskKind::CsvClassify => Task::BinaryClassification,
            _ => Task::Regression,
        }
    }

    fn default_sizes(self) -> (usize, usize) {
        match self {
            TaskKind::Sine => (10_000, 1000),
            TaskKind::Linear3 => (10_000, 10_000),
            TaskKind::Heston => (1000, 1000),
            TaskKind::CsvClassify | TaskKind::Custom => (0, 1000),
        }
    }

    fn default_source(self) -> DataSource {
        match self {
            TaskKind::Sine | TaskKind::Linear3 | TaskKind::Heston => DataSource::Generated,
            TaskKind::CsvClassify | TaskKind::Custom => DataSource::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Generated,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub scale: f64,
}

fn default_q() -> usize {
    2
}

fn default_offset() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default = "default_q")]
    pub q: usize,
    pub m: usize,
    #[serde(default = "default_offset")]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

impl Default for InitSection {
    fn default() -> Self {
        Self { mu: 0.0, sigma: 1.0 }
    }
}

fn default_learning_rate() -> f64 {
    0.01
}

fn default_lambda() -> f64 {
    1e-3
}

fn default_rel_tol() -> f64 {
    1e-8
}

fn default_check_every() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub algorithm: Algorithm,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_tol: Option<f64>,
    #[serde(default = "default_check_every")]
    pub check_every: usize,
}

fn default_terminal() -> TerminalKind {
    TerminalKind::SquaredError
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "default_terminal")]
    pub terminal: TerminalKind,
    #[serde(default)]
    pub control_penalty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running: Option<RunningTarget>,
}

impl Default for CostSection {
    fn default() -> Self {
        Self {
            terminal: TerminalKind::SquaredError,
            control_penalty: 0.0,
            running: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default)]
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub metrics_path: PathBuf,
    pub predictions_path: PathBuf,
    pub model_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    pub kernel: KernelSection,
    pub system: SystemSection,
    #[serde(default)]
    pub init: InitSection,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.kernel.scale > 0.0 && self.kernel.scale.is_finite()) {
            return bad("kernel.scale must be positive");
        }
        if self.system.horizon == 0 || self.system.m == 0 || self.system.q == 0 {
            return bad("system.T, system.m and system.q must be positive");
        }
        if self.system.q > 2 {
            return bad("system.q larger than 2 needs an explicit operator list");
        }
        if !self.system.offset.is_finite() {
            return bad("system.offset must be finite");
        }
        if self.cost.control_penalty.is_nan() || self.cost.control_penalty < 0.0 {
            return bad("cost.control_penalty must be >= 0");
        }
        if self.baseline.ridge.is_nan() || self.baseline.ridge < 0.0 {
            return bad("baseline.ridge must be >= 0");
        }
        if self.source() == DataSource::Csv && self.data.path.is_none() {
            return bad("data.path is required for csv data");
        }
        if self.source() == DataSource::Csv && matches!(self.task, TaskKind::Sine | TaskKind::Linear3) {
            return bad("sine and linear3 tasks generate their own data");
        }
        if self.source() == DataSource::Generated && matches!(self.task, TaskKind::CsvClassify | TaskKind::Custom) {
            return bad("csv-classify and custom tasks need csv data");
        }
        self.optimizer_config().validate()
    }

    pub fn source(&self) -> DataSource {
        self.data.source.unwrap_or_else(|| self.task.default_source())
    }

    pub fn standardize(&self) -> bool {
        self.data
            .standardize
            .unwrap_or(matches!(self.task, TaskKind::Heston | TaskKind::CsvClassify))
    }

    pub fn label_column(&self) -> &str {
        self.data.label_column.as_deref().unwrap_or("target")
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        let o = &self.optimizer;
        OptimizerConfig {
            algorithm: o.algorithm,
            learning_rate: o.learning_rate,
            lambda: o.lambda,
            batch_size: o.batch_size,
            max_iterations: o.max_iterations,
            rel_tol: o.rel_tol,
            grad_tol: o.grad_tol,
            init_mean: self.init.mu,
            init_std: self.init.sigma,
            seed: self.seeds().optimizer,
            check_every: o.check_every,
        }
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        CostModel::new(self.cost.terminal, self.cost.running, self.cost.control_penalty)
    }
}

/// Independent seeds for each random stage, derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub split: u64,
    pub support: u64,
    pub operators: u64,
    pub optimizer: u64,
}

impl Seeds {
    pub fn derive(seed: u64) -> Self {
        let k = |i: u64| seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self {
            data: seed,
            split: k(1),
            support: k(2),
            operators: k(3),
            optimizer: k(4),
        }
    }
}

/// Error metrics; absent entries do not apply to the task.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

/// Decision threshold on the raw score `h`: `1/2` for squared error, `0`
/// (that is `sigma(h) = 1/2`) for cross-entropy.
pub fn class_threshold(terminal: TerminalKind) -> f64 {
    match terminal {
        TerminalKind::SquaredError => 0.5,
        TerminalKind::CrossEntropy => 0.0,
    }
}

pub fn compute_metrics(
    predictions: &DVector<f64>,
    targets: &DVector<f64>,
    task: Task,
    terminal: TerminalKind,
) -> Result<MetricValues> {
    check_dim(targets.len(), predictions.len())?;
    if targets.is_empty() {
        return Err(Error::input("metrics need at least one prediction"));
    }
    let n = targets.len() as f64;
    match task {
        Task::Regression => {
            let rmse = ((predictions - targets).norm_squared() / n).sqrt();
            let rel: Vec<f64> = predictions
                .iter()
                .zip(targets.iter())
                .filter(|(_, y)| y.abs() > 1e-12)
                .map(|(p, y)| (p - y).abs() / y.abs())
                .collect();
            let mape = (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64);
            Ok(MetricValues {
                rmse: Some(rmse),
                mape,
                ..Default::default()
            })
        }
        Task::BinaryClassification => {
            let thr = class_threshold(terminal);
            let (mut tp, mut fp, mut fneg, mut correct) = (0.0, 0.0, 0.0, 0.0);
            for (&p, &y) in predictions.iter().zip(targets.iter()) {
                let label = p >= thr;
                let truth = y == 1.0;
                match (label, truth) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fneg += 1.0,
                    (false, false) => {}
                }
                if label == truth {
                    correct += 1.0;
                }
            }
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            Ok(MetricValues {
                accuracy: Some(correct / n),
                f1: Some(f1),
                ..Default::default()
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// Test cost of the initial control.
    pub naive_cost: f64,
    /// Test cost of the fitted model.
    pub test_cost: f64,
    /// Not persisted, so reruns produce identical files.
    #[serde(skip)]
    pub wall_time_s: f64,
    pub naive: MetricValues,
    pub checkpoints: Vec<f64>,
    pub config: ExperimentConfig,
}

impl MetricsReport {
    pub fn metrics(&self) -> MetricValues {
        MetricValues {
            rmse: self.rmse,
            mape: self.mape,
            accuracy: self.accuracy,
            f1: self.f1,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Everything a run produced, kept in memory.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub model: Model,
    pub saved: SavedModel,
    pub test: Dataset,
    pub predictions: DVector<f64>,
}

/// Versioned on-disk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub task: TaskKind,
    pub terminal: TerminalKind,
    pub seeds: Seeds,
    pub feature_stats: Option<FeatureStats>,
    pub label_column: String,
    pub model: ModelSpec,
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: Self = serde_json::from_str(text).map_err(|e| Error::Schema(format!("model file: {e}")))?;
        if saved.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                saved.format_version
            )));
        }
        Ok(saved)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn build(&self) -> Result<Model> {
        Model::from_spec(&self.model)
    }

    /// Predictions for inputs in original units.
    pub fn predict_raw(&self, model: &Model, raw: &Points) -> Result<DVector<f64>> {
        match &self.feature_stats {
            Some(st) => model.predict_points(&st.transform(raw)?),
            None => model.predict_points(raw),
        }
    }
}

/// Train and test splits in model units.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let seeds = cfg.seeds();
    let (train_default, test_default) = cfg.task.default_sizes();
    let test_size = cfg.data.test_size.unwrap_or(test_default);
    let (train, test) = match cfg.source() {
        DataSource::Generated => {
            let train_size = cfg.data.train_size.unwrap_or(train_default);
            if train_size == 0 || test_size == 0 {
                return Err(Error::Config("train_size and test_size must be positive".into()));
            }
            let n = train_size + test_size;
            let all = match cfg.task {
                TaskKind::Sine => toy_sine(n, seeds.data)?,
                TaskKind::Linear3 => toy_linear3(n, seeds.data)?,
                TaskKind::Heston => generate_heston_grid(&HestonRanges::default(), n, seeds.data, &FftSettings::default())?,
                TaskKind::CsvClassify | TaskKind::Custom => unreachable!("validated"),
            };
            let idx: Vec<usize> = (0..n).collect();
            (all.select(&idx[..train_size]), all.select(&idx[train_size..]))
        }
        DataSource::Csv => {
            let path = cfg.data.path.as_ref().expect("validated");
            let opts = CsvOptions::new(cfg.label_column(), cfg.task.task());
            let all = load_csv(path, &opts)?;
            let test_size = test_size.min(all.len() / 2).max(1);
            let train_size = cfg.data.train_size.unwrap_or(all.len().saturating_sub(test_size));
            all.split(train_size, test_size, seeds.split)?
        }
    };
    if cfg.standardize() {
        let stats = FeatureStats::fit(&train.inputs)?;
        Ok(PreparedData {
            train: train.standardized_with(&stats)?,
            test: test.standardized_with(&stats)?,
        })
    } else {
        Ok(PreparedData { train, test })
    }
}

fn build_system(cfg: &ExperimentConfig, train: &Dataset) -> Result<ControlSystem> {
    let seeds = cfg.seeds();
    let kernel = KernelSpec::new(cfg.kernel.scale)?;
    let support = Arc::new(sample_support(&train.inputs, cfg.system.m, kernel, seeds.support)?);
    let bank = make_operator_bank(seeds.operators, cfg.system.m, cfg.system.q)?;
    ControlSystem::new(bank, support, cfg.system.offset, cfg.system.horizon)
}

/// Runs one experiment end to end and writes the configured artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let outcome = run_experiment_in_memory(cfg)?;
    if let Some(out) = &cfg.output {
        write_artifacts(out, &outcome)?;
    }
    Ok(outcome.report)
}

/// Runs one experiment without touching the filesystem (other than reading data).
pub fn run_experiment_in_memory(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let PreparedData { train, test } = prepare_data(cfg)?;
    let system = build_system(cfg, &train)?;
    let cost = cfg.cost_model()?;
    let train_batch = Batch::new(&system.support, train.inputs.clone(), train.targets.clone())?;
    let test_batch = Batch::new(&system.support, test.inputs.clone(), test.targets.clone())?;

    let model = fit(&cfg.optimizer_config(), &cost, &train_batch, &system)?;
    let base = model.base();
    let predictions = model.predict_points(&test.inputs)?;
    let metrics = compute_metrics(&predictions, &test.targets, test.task, cost.terminal)?;

    let initial = Model::Fitted(FittedModel::clone(base));
    let naive_model = naive_model(&initial)?;
    let naive_pred = naive_model.predict_points(&test.inputs)?;
    let naive = compute_metrics(&naive_pred, &test.targets, test.task, cost.terminal)?;

    let report = MetricsReport {
        rmse: metrics.rmse,
        mape: metrics.mape,
        accuracy: metrics.accuracy,
        f1: metrics.f1,
        iterations: base.iterations,
        stop_reason: base.stop_reason,
        naive_cost: terminal_cost(cost.terminal, &naive_pred, &test_batch)?,
        test_cost: terminal_cost(cost.terminal, &predictions, &test_batch)?,
        wall_time_s: start.elapsed().as_secs_f64(),
        naive,
        checkpoints: base.checkpoints.iter().map(|c| c.cost).collect(),
        config: cfg.clone(),
    };
    let saved = SavedModel {
        format_version: MODEL_FORMAT_VERSION,
        task: cfg.task,
        terminal: cost.terminal,
        seeds: cfg.seeds(),
        feature_stats: train.feature_stats.clone(),
        label_column: cfg.label_column().to_string(),
        model: model.to_spec(),
    };
    Ok(ExperimentOutcome {
        report,
        model,
        saved,
        test,
        predictions,
    })
}

/// The model at the initial control `u^(0)`.
fn naive_model(model: &Model) -> Result<Model> {
    let base = model.base();
    let mut spec = model.to_spec();
    spec.control = base.initial_control.as_flat().to_vec();
    spec.beta = None;
    Model::from_spec(&spec)
}

/// `x_0.., y, prediction, error` with inputs in original units; classification
/// adds the thresholded `class`.
pub fn predictions_csv(
    raw_inputs: &Points,
    targets: &DVector<f64>,
    predictions: &DVector<f64>,
    class_threshold: Option<f64>,
) -> Result<String> {
    check_dim(targets.len(), raw_inputs.len())?;
    check_dim(targets.len(), predictions.len())?;
    let mut header: Vec<String> = (0..raw_inputs.dim()).map(|i| format!("x_{i}")).collect();
    header.extend(["y", "prediction", "error"].map(String::from));
    if class_threshold.is_some() {
        header.push("class".into());
    }
    let mut out = header.join(",");
    out.push('\n');
    for ((x, y), p) in raw_inputs.rows().zip(targets.iter()).zip(predictions.iter()) {
        let mut cells: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        cells.push(y.to_string());
        cells.push(p.to_string());
        cells.push((p - y).to_string());
        if let Some(t) = class_threshold {
            cells.push(if *p >= t { "1" } else { "0" }.into());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Writes every file to a sibling temporary and renames them only once all
/// writes succeeded; on failure nothing is left behind.
pub fn write_atomically(files: &[(&Path, &str)]) -> Result<()> {
    let temp = |p: &Path| {
        let mut name = p.as_os_str().to_owned();
        name.push(".partial");
        PathBuf::from(name)
    };
    let mut written: Vec<PathBuf> = Vec::new();
    for (path, body) in files {
        let t = temp(path);
        if let Err(e) = fs::write(&t, body) {
            for w in &written {
                let _ = fs::remove_file(w);
            }
            let _ = fs::remove_file(&t);
            return Err(Error::io(*path, e));
        }
        written.push(t);
    }
    let mut renamed: Vec<&Path> = Vec::new();
    for ((path, _), t) in files.iter().zip(&written) {
        if let Err(e) = fs::rename(t, path) {
            for r in &renamed {
                let _ = fs::remove_file(r);
            }
            for w in &written {
                let _ = fs::remove_file(w);
            }
            return Err(Error::io(*path, e));
        }
        renamed.push(path);
    }
    Ok(())
}

fn write_artifacts(out: &OutputSection, outcome: &ExperimentOutcome) -> Result<()> {
    let threshold = (outcome.test.task == Task::BinaryClassification).then(|| class_threshold(outcome.saved.terminal));
    let preds = predictions_csv(
        &outcome.test.raw_inputs()?,
        &outcome.test.targets,
        &outcome.predictions,
        threshold,
    )?;
    let metrics = outcome.report.to_toml()?;
    let model = outcome.saved.to_json()?;
    write_atomically(&[
        (out.metrics_path.as_path(), metrics.as_str()),
        (out.predictions_path.as_path(), preds.as_str()),
        (out.model_path.as_path(), model.as_str()),
    ])
}

/// Regression of the targets on the kernel features `k(xi_j, x)`. With
/// `ridge = 0` the minimum-norm least-squares solution is used.
pub fn kernel_ridge_baseline(
    train: &Dataset,
    test: &Dataset,
    support: &SupportSet,
    ridge: f64,
    terminal: TerminalKind,
) -> Result<MetricValues> {
    let features = support.cross_gram(&train.inputs)?.transpose();
    let coef = if ridge == 0.0 {
        min_norm_least_squares(&features, &train.targets, f64::EPSILON)?
    } else {
        solve_ridge_subproblem(&features, &-&train.targets, ridge)?
    };
    let test_features: DMatrix<f64> = support.cross_gram(&test.inputs)?.transpose();
    compute_metrics(&(test_features * coef), &test.targets, test.task, terminal)
}

/// The baseline on the same data and support as a full run.
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<MetricValues> {
    cfg.validate()?;
    let PreparedData { train, test } = prepare_data(cfg)?;
    let system = build_system(cfg, &train)?;
    kernel_ridge_baseline(&train, &test, &system.support, cfg.baseline.ridge, cfg.cost.terminal)
}

/// Scores a saved model on a CSV file given in original units.
pub fn evaluate_saved(saved: &SavedModel, data_path: &Path, label_column: Option<&str>) -> Result<MetricValues> {
    let task = saved.task.task();
    let opts = CsvOptions::new(label_column.unwrap_or(&saved.label_column), task);
    let ds = load_csv(data_path, &opts)?;
    let model = saved.build()?;
    check_dim(model.dim(), ds.dim())?;
    let preds = saved.predict_raw(&model, &ds.inputs)?;
    compute_metrics(&preds, &ds.targets, task, saved.terminal)
}
