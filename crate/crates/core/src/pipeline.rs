//! End-to-end workflow: estimate labels, extract heterophilous information,
//! rewire, and train the two-channel model over the δ and λ grids. Also the
//! ablation table and the raw hyperparameter sweep.
//!
//! Every split is an independent job seeded from `(seed, split)`, so results
//! do not depend on how jobs are scheduled.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gnn::{self, Channel, EpochRecord, GraphInputs, ModelConfig, TrainConfig, TrainResult};
use crate::graph::{load_dataset, Dataset, DatasetPaths, Graph};
use crate::homophily::{build_hi_adjacency, edge_homophily, hetero_info, HeteroInfoMatrix};
use crate::par;
use crate::synth::{generate, SynthSpec};

pub const DEFAULT_DELTA_GRID: [f64; 4] = [0.5, 0.8, 0.9, 1.0];
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [1.0, 0.5, 0.1, 0.05, 0.01];

/// Model used to predict the labels that drive the rewiring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// GCN with the high-pass branch.
    #[default]
    GcnHp,
    Gcn,
    Mlp,
    /// Ground truth for every node.
    TrueLabels,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::GcnHp, Estimator::Gcn, Estimator::Mlp, Estimator::TrueLabels];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::GcnHp => "gcn_hp",
            Estimator::Gcn => "gcn",
            Estimator::Mlp => "mlp",
            Estimator::TrueLabels => "true_labels",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// A directory holding `edges.csv`, `features.csv`, `labels.csv` and `splits.json`.
    Files {
        dir: PathBuf,
        #[serde(default)]
        n_classes: Option<usize>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthSpec::default())
    }
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Synthetic(spec) => generate(spec),
            DataSource::Files { dir, n_classes } => load_dataset(&DatasetPaths::in_dir(dir), *n_classes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub estimator: Estimator,
    /// Use predictions for training nodes too instead of their known labels.
    pub pure_predictions: bool,
    pub delta_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub model: ModelConfig,
    /// `train.seed` is replaced per job by a seed derived from `seed`.
    pub train: TrainConfig,
    /// Split indices to run; all splits when absent.
    pub splits: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            estimator: Estimator::default(),
            pure_predictions: false,
            delta_grid: DEFAULT_DELTA_GRID.to_vec(),
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            splits: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_grid.is_empty() || self.lambda_grid.is_empty() {
            return Err(Error::InvalidParam("delta and lambda grids must be nonempty".into()));
        }
        if let Some(&d) = self.delta_grid.iter().find(|d| !(-1.0..=1.0).contains(*d)) {
            return Err(Error::InvalidParam(format!("delta = {d} not in [-1, 1]")));
        }
        if let Some(&l) = self.lambda_grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidParam(format!("lambda = {l} must be >= 0")));
        }
        if matches!(&self.splits, Some(s) if s.is_empty()) {
            return Err(Error::InvalidParam("split list must be nonempty".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Split indices to run against a dataset with `available` splits.
    pub fn split_indices(&self, available: usize) -> Result<Vec<usize>> {
        let indices = self.splits.clone().unwrap_or_else(|| (0..available).collect());
        if indices.is_empty() {
            return Err(Error::InvalidSplit("dataset has no splits".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= available) {
            return Err(Error::InvalidSplit(format!(
                "split {bad} requested, {available} available"
            )));
        }
        Ok(indices)
    }
}

/// Hex SHA-256 of a value's JSON form.
pub fn json_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_string(value).expect("value serializes");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    json_hash(config)
}

#[derive(Clone, Copy)]
enum Role {
    Estimator = 1,
    Model = 2,
}

fn job_seed(seed: u64, split: usize, role: Role) -> u64 {
    let mut x = seed ^ ((split as u64) << 8 | role as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn with_seed(train: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..train.clone() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    /// Largest softmax probability per node; 1 for known labels.
    pub confidence: Vec<f64>,
    pub estimator: Estimator,
    pub split: usize,
    pub train_overridden: bool,
}

impl PseudoLabels {
    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        let hits = self.labels.iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / truth.len().max(1) as f64
    }
}

/// Trains `estimator` on the split and predicts every node. Unless
/// `pure_predictions` is set, training nodes keep their true labels.
pub fn estimate_labels(
    ds: &Dataset,
    split: usize,
    estimator: Estimator,
    model: &ModelConfig,
    train: &TrainConfig,
    pure_predictions: bool,
) -> Result<PseudoLabels> {
    let sp = ds.split(split)?;
    if estimator == Estimator::TrueLabels {
        return Ok(PseudoLabels {
            labels: ds.labels.clone(),
            confidence: vec![1.0; ds.n_nodes()],
            estimator,
            split,
            train_overridden: false,
        });
    }
    let mut cfg = model.clone();
    cfg.use_high_pass = estimator == Estimator::GcnHp;
    let channel = match estimator {
        Estimator::Mlp => Channel::identity(ds.n_nodes()),
        _ => Channel::from_graph(&ds.graph, cfg.use_high_pass),
    };
    let inputs = GraphInputs::single(channel);
    let fit = gnn::train(&ds.features, &ds.labels, ds.n_classes, sp, &inputs, &cfg, train)?;
    let probs = gnn::forward(&fit.params, &ds.features, &inputs, &cfg)?.row_softmax();
    let mut labels = probs.argmax_rows();
    let mut confidence: Vec<f64> = labels.iter().enumerate().map(|(i, &l)| probs.get(i, l)).collect();
    if !pure_predictions {
        for &i in &sp.train {
            labels[i] = ds.labels[i];
            confidence[i] = 1.0;
        }
    }
    Ok(PseudoLabels {
        labels,
        confidence,
        estimator,
        split,
        train_overridden: !pure_predictions,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewiredStats {
    pub delta: f64,
    pub n_edges: usize,
    /// Edge homophily of `A'` under the true labels.
    pub h_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub lambda: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta,lambda,val_acc,test_acc\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.delta, r.lambda, r.val_acc, r.test_acc).unwrap();
    }
    out
}

/// Everything computed once per split before training.
struct Prepared {
    split: usize,
    pseudo: PseudoLabels,
    old: Channel,
    rewired: Vec<(f64, Graph)>,
    stats: Vec<RewiredStats>,
}

/// The configured estimator's labels for one split, seeded as in [`run_hignn_on`].
pub fn pseudo_labels(ds: &Dataset, split: usize, cfg: &ExperimentConfig) -> Result<PseudoLabels> {
    let est_train = with_seed(&cfg.train, job_seed(cfg.seed, split, Role::Estimator));
    estimate_labels(ds, split, cfg.estimator, &cfg.model, &est_train, cfg.pure_predictions)
}

fn prepare(ds: &Dataset, split: usize, cfg: &ExperimentConfig) -> Result<Prepared> {
    let pseudo = pseudo_labels(ds, split, cfg)?;
    let hetero: HeteroInfoMatrix = hetero_info(&ds.graph, &pseudo.labels, ds.n_classes)?;
    let mut rewired = Vec::with_capacity(cfg.delta_grid.len());
    let mut stats = Vec::with_capacity(cfg.delta_grid.len());
    for &delta in &cfg.delta_grid {
        let g = build_hi_adjacency(&hetero, delta)?;
        stats.push(RewiredStats {
            delta,
            n_edges: g.n_edges(),
            h_hat: edge_homophily(&g, &ds.labels)?,
        });
        rewired.push((delta, g));
    }
    Ok(Prepared {
        split,
        pseudo,
        old: Channel::from_graph(&ds.graph, cfg.model.use_high_pass),
        rewired,
        stats,
    })
}

fn fit(
    ds: &Dataset,
    split: usize,
    inputs: &GraphInputs,
    model: &ModelConfig,
    cfg: &ExperimentConfig,
) -> Result<TrainResult> {
    let train = with_seed(&cfg.train, job_seed(cfg.seed, split, Role::Model));
    gnn::train(
        &ds.features,
        &ds.labels,
        ds.n_classes,
        ds.split(split)?,
        inputs,
        model,
        &train,
    )
}

struct GridOutcome {
    rows: Vec<SweepRow>,
    delta: f64,
    lambda: f64,
    best: TrainResult,
}

/// Trains every (δ, λ) cell with the same seed; the cell with the highest
/// validation accuracy wins, earliest in grid order on ties.
fn run_grid(ds: &Dataset, prep: &Prepared, cfg: &ExperimentConfig) -> Result<GridOutcome> {
    let mut rows = Vec::new();
    let mut best: Option<(f64, f64, TrainResult)> = None;
    for (delta, g) in &prep.rewired {
        let inputs = GraphInputs::fused(prep.old.clone(), Channel::from_graph(g, cfg.model.use_high_pass));
        for &lambda in &cfg.lambda_grid {
            let model = ModelConfig {
                lambda,
                ..cfg.model.clone()
            };
            let res = fit(ds, prep.split, &inputs, &model, cfg)?;
            rows.push(SweepRow {
                delta: *delta,
                lambda,
                val_acc: res.best_val_acc,
                test_acc: res.test_acc,
            });
            if best.as_ref().is_none_or(|b| res.best_val_acc > b.2.best_val_acc) {
                best = Some((*delta, lambda, res));
            }
        }
    }
    let (delta, lambda, best) = best.expect("grids are nonempty");
    Ok(GridOutcome {
        rows,
        delta,
        lambda,
        best,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split: usize,
    /// Accuracy of the pseudo-labels over all nodes.
    pub estimator_accuracy: f64,
    pub delta: f64,
    pub lambda: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub train_seed: u64,
    pub rewired: Vec<RewiredStats>,
    #[serde(skip)]
    pub trace: Vec<EpochRecord>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub estimator: Estimator,
    pub splits: Vec<SplitResult>,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

/// Runs `job` for every configured split, wrapping failures with the split id.
fn per_split<T: Send>(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    job: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let indices = cfg.split_indices(ds.splits.len())?;
    par::map_range(indices.len(), |k| {
        job(indices[k]).map_err(|e| Error::Split {
            split: indices[k],
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect()
}

pub fn run_hignn_on(ds: &Dataset, cfg: &ExperimentConfig) -> Result<RunReport> {
    let splits = per_split(ds, cfg, |split| {
        let prep = prepare(ds, split, cfg)?;
        let out = run_grid(ds, &prep, cfg)?;
        Ok(SplitResult {
            split,
            estimator_accuracy: prep.pseudo.accuracy(&ds.labels),
            delta: out.delta,
            lambda: out.lambda,
            val_acc: out.best.best_val_acc,
            test_acc: out.best.test_acc,
            best_epoch: out.best.best_epoch,
            train_seed: out.best.seed,
            rewired: prep.stats,
            trace: out.best.trace,
        })
    })?;
    let accs: Vec<f64> = splits.iter().map(|s| s.test_acc).collect();
    let (mean_test_acc, std_test_acc) = mean_std(&accs);
    Ok(RunReport {
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        estimator: cfg.estimator,
        splits,
        mean_test_acc,
        std_test_acc,
    })
}

pub fn run_hignn(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_hignn_on(&cfg.data.load()?, cfg)
}

/// Single-channel model on the original graph, seeded like the full model.
pub fn gcn_baseline(ds: &Dataset, split: usize, cfg: &ExperimentConfig) -> Result<TrainResult> {
    let inputs = GraphInputs::single(Channel::from_graph(&ds.graph, cfg.model.use_high_pass));
    fit(ds, split, &inputs, &cfg.model, cfg)
}

/// One two-channel model at a fixed δ and λ, seeded as in [`run_hignn_on`].
pub fn train_cell(ds: &Dataset, split: usize, cfg: &ExperimentConfig, delta: f64, lambda: f64) -> Result<TrainResult> {
    let pseudo = pseudo_labels(ds, split, cfg)?;
    let rewired = build_hi_adjacency(&hetero_info(&ds.graph, &pseudo.labels, ds.n_classes)?, delta)?;
    let hp = cfg.model.use_high_pass;
    let inputs = GraphInputs::fused(Channel::from_graph(&ds.graph, hp), Channel::from_graph(&rewired, hp));
    fit(
        ds,
        split,
        &inputs,
        &ModelConfig {
            lambda,
            ..cfg.model.clone()
        },
        cfg,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    WithoutANew,
    WithoutA,
    EarlyFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::WithoutANew,
        Variant::WithoutA,
        Variant::EarlyFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutANew => "without_A_new",
            Variant::WithoutA => "without_A",
            Variant::EarlyFusion => "early_fusion",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub split: usize,
    pub delta: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    #[serde(skip)]
    pub trace: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub runs: Vec<AblationRun>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: Variant) -> &AblationRow {
        self.rows
            .iter()
            .find(|r| r.variant == variant)
            .expect("every variant present")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,mean_test_acc,std_test_acc\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.variant.name(), r.mean_test_acc, r.std_test_acc).unwrap();
        }
        out
    }
}

/// The full model picks δ and λ on validation as in [`run_hignn_on`]; the
/// single-channel variants on `A'` and on the edge union reuse that δ.
pub fn ablate_on(ds: &Dataset, cfg: &ExperimentConfig) -> Result<AblationTable> {
    let hp = cfg.model.use_high_pass;
    let per = per_split(ds, cfg, |split| {
        let prep = prepare(ds, split, cfg)?;
        let full = run_grid(ds, &prep, cfg)?;
        let (delta, rewired) = prep
            .rewired
            .iter()
            .find(|(d, _)| *d == full.delta)
            .expect("selected delta is in the grid");
        let run = |res: TrainResult| AblationRun {
            split,
            delta: *delta,
            test_acc: res.test_acc,
            best_epoch: res.best_epoch,
            trace: res.trace,
        };
        let without_new = gcn_baseline(ds, split, cfg)?;
        let without_a = fit(
            ds,
            split,
            &GraphInputs::single(Channel::from_graph(rewired, hp)),
            &cfg.model,
            cfg,
        )?;
        let union = ds.graph.union(rewired)?;
        let early = fit(
            ds,
            split,
            &GraphInputs::single(Channel::from_graph(&union, hp)),
            &cfg.model,
            cfg,
        )?;
        Ok([run(full.best), run(without_new), run(without_a), run(early)])
    })?;
    let rows = Variant::ALL
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let runs: Vec<AblationRun> = per.iter().map(|r| r[k].clone()).collect();
            let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
            let (mean_test_acc, std_test_acc) = mean_std(&accs);
            AblationRow {
                variant,
                mean_test_acc,
                std_test_acc,
                runs,
            }
        })
        .collect();
    Ok(AblationTable {
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        rows,
    })
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<AblationTable> {
    ablate_on(&cfg.data.load()?, cfg)
}

/// Every (δ, λ) cell on the first configured split, δ-major.
pub fn hyperparam_sweep_on(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let split = cfg.split_indices(ds.splits.len())?[0];
    let run = || -> Result<Vec<SweepRow>> {
        let prep = prepare(ds, split, cfg)?;
        Ok(run_grid(ds, &prep, cfg)?.rows)
    };
    run().map_err(|e| Error::Split {
        split,
        source: Box::new(e),
    })
}

pub fn hyperparam_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    hyperparam_sweep_on(&cfg.data.load()?, cfg)
}
