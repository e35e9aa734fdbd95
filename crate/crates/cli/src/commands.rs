use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hignn_core::gnn::trace_csv;
use hignn_core::graph::{read_edges, read_features, read_labels, save_dataset, write_edges, DatasetPaths};
use hignn_core::homophily::{
    build_hi_adjacency, hetero_info, homophily_improvement, homophily_report, improvement_csv, sigma_bar,
};
use hignn_core::pipeline::{
    ablate_on, gcn_baseline, hyperparam_sweep_on, pseudo_labels, run_hignn_on, sweep_csv, train_cell, DataSource,
    ExperimentConfig,
};
use hignn_core::synth::{generate, SynthSpec};
use hignn_core::theory::{closed_form_hhat, mc_csv, mc_simulate_hhat, sweep, sweep_csv as theory_csv, TheoryParams};

use crate::run_dir::RunDir;
use crate::{CliError, Command, Common, PipelineArgs};

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_value(value: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("config serializes")
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnalyzeConfig {
    data: Option<PathBuf>,
    n_classes: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TheorySweepConfig {
    h_grid: Vec<f64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    c: Vec<usize>,
}

impl Default for TheorySweepConfig {
    fn default() -> Self {
        Self {
            h_grid: (0..=20).map(|k| k as f64 / 20.0).collect(),
            sigma: vec![0.1],
            delta: vec![0.9],
            c: vec![5],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    h: Vec<f64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    c: Vec<usize>,
    pairs: usize,
    seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            h: vec![0.3],
            sigma: vec![0.2],
            delta: vec![0.8],
            c: vec![5],
            pairs: 100_000,
            seed: 0,
        }
    }
}

fn experiment(common: &Common, p: PipelineArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg: ExperimentConfig = load_config(common.config.as_deref())?;
    if let Some(dir) = p.data {
        cfg.data = DataSource::Files {
            dir,
            n_classes: p.n_classes,
        };
    } else if let (DataSource::Files { n_classes, .. }, Some(k)) = (&mut cfg.data, p.n_classes) {
        *n_classes = Some(k);
    }
    set(&mut cfg.estimator, p.estimator);
    cfg.pure_predictions |= p.pure_predictions;
    set(&mut cfg.delta_grid, p.delta);
    set(&mut cfg.lambda_grid, p.lambda);
    if p.splits.is_some() {
        cfg.splits = p.splits;
    }
    set(&mut cfg.model.hidden_dim, p.hidden_dim);
    set(&mut cfg.model.n_layers, p.n_layers);
    cfg.model.use_high_pass |= p.high_pass;
    set(&mut cfg.train.lr, p.lr);
    set(&mut cfg.train.max_epochs, p.max_epochs);
    set(&mut cfg.train.patience, p.patience);
    set(&mut cfg.seed, common.seed);
    cfg.validate()?;
    Ok(cfg)
}

/// The requested split, else the first configured one.
fn pick_split(cfg: &ExperimentConfig, available: usize, split: Option<usize>) -> Result<usize, CliError> {
    let indices = cfg.split_indices(available)?;
    match split {
        None => Ok(indices[0]),
        Some(s) if s < available => Ok(s),
        Some(s) => Err(CliError::Data(format!(
            "invalid split: split {s} requested, {available} available"
        ))),
    }
}

pub fn execute(command: Command, argv: Vec<String>) -> Result<PathBuf, CliError> {
    match command {
        Command::Analyze {
            common,
            data,
            n_classes,
        } => {
            let mut cfg: AnalyzeConfig = load_config(common.config.as_deref())?;
            if data.is_some() {
                cfg.data = data;
            }
            if n_classes.is_some() {
                cfg.n_classes = n_classes;
            }
            let dir = cfg
                .data
                .clone()
                .ok_or_else(|| CliError::Config("analyze needs --data or a config with \"data\"".into()))?;
            let paths = DatasetPaths::in_dir(&dir);
            let n = read_features(&paths.features)?.rows();
            let graph = read_edges(&paths.edges, n)?;
            let labels = read_labels(&paths.labels, n)?;
            let c = cfg
                .n_classes
                .unwrap_or_else(|| labels.iter().max().map_or(1, |&m| m + 1));
            let report = homophily_report(&graph, &labels)?;
            let sigma = sigma_bar(&hetero_info(&graph, &labels, c)?, &labels)?;
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "analyze", &config)?;
            let mut csv = String::from("n_nodes,n_edges,n_classes,h_edge,h_node,sigma_bar\n");
            writeln!(
                csv,
                "{n},{},{c},{},{},{sigma}",
                graph.n_edges(),
                report.h_edge,
                report.h_node
            )
            .unwrap();
            run.write("analyze.csv", &csv)?;
            run.finish(&argv, "analyze", &config, common.seed)
        }
        Command::TheorySweep {
            common,
            h_grid,
            sigma,
            delta,
            c,
        } => {
            let mut cfg: TheorySweepConfig = load_config(common.config.as_deref())?;
            set(&mut cfg.h_grid, h_grid);
            set(&mut cfg.sigma, sigma);
            set(&mut cfg.delta, delta);
            set(&mut cfg.c, c);
            let rows = sweep(&cfg.h_grid, &cfg.sigma, &cfg.delta, &cfg.c)?;
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "theory-sweep", &config)?;
            run.write("theory_sweep.csv", &theory_csv(&rows))?;
            run.finish(&argv, "theory-sweep", &config, common.seed)
        }
        Command::Simulate {
            common,
            h,
            sigma,
            delta,
            c,
            pairs,
        } => {
            let mut cfg: SimulateConfig = load_config(common.config.as_deref())?;
            set(&mut cfg.h, h);
            set(&mut cfg.sigma, sigma);
            set(&mut cfg.delta, delta);
            set(&mut cfg.c, c);
            set(&mut cfg.pairs, pairs);
            set(&mut cfg.seed, common.seed);
            let mut rows = Vec::new();
            for &h in &cfg.h {
                for &sigma in &cfg.sigma {
                    for &delta in &cfg.delta {
                        for &c in &cfg.c {
                            let params = TheoryParams::new(h, sigma, delta, c)?;
                            rows.push((
                                closed_form_hhat(params)?,
                                mc_simulate_hhat(params, cfg.pairs, cfg.seed)?,
                            ));
                        }
                    }
                }
            }
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "simulate", &config)?;
            run.write("simulate.csv", &mc_csv(&rows))?;
            run.finish(&argv, "simulate", &config, Some(cfg.seed))
        }
        Command::Synth {
            common,
            n_nodes,
            c,
            h,
            avg_degree,
            feature_dim,
            feature_separation,
            n_splits,
        } => {
            let mut spec: SynthSpec = load_config(common.config.as_deref())?;
            set(&mut spec.n_nodes, n_nodes);
            set(&mut spec.c, c);
            set(&mut spec.h, h);
            set(&mut spec.avg_degree, avg_degree);
            set(&mut spec.feature_dim, feature_dim);
            set(&mut spec.feature_separation, feature_separation);
            set(&mut spec.n_splits, n_splits);
            set(&mut spec.seed, common.seed);
            let ds = generate(&spec)?;
            let report = homophily_report(&ds.graph, &ds.labels)?;
            let sigma = sigma_bar(&hetero_info(&ds.graph, &ds.labels, ds.n_classes)?, &ds.labels)?;
            let config = to_value(&spec);
            let mut run = RunDir::create(common.out, "synth", &config)?;
            save_dataset(&DatasetPaths::in_dir(run.path()), &ds)?;
            for name in ["edges.csv", "features.csv", "labels.csv", "splits.json"] {
                run.record(name);
            }
            let stats = format!("h_edge,h_node,sigma_bar\n{},{},{sigma}\n", report.h_edge, report.h_node);
            run.write("stats.csv", &stats)?;
            run.finish(&argv, "synth", &config, Some(spec.seed))
        }
        Command::BuildAdj {
            common,
            pipeline,
            split,
        } => {
            let cfg = experiment(&common, pipeline)?;
            let ds = cfg.data.load()?;
            let split = pick_split(&cfg, ds.splits.len(), split)?;
            let pseudo = pseudo_labels(&ds, split, &cfg)?;
            let hetero = hetero_info(&ds.graph, &pseudo.labels, ds.n_classes)?;
            let rows = homophily_improvement(&ds.graph, &hetero, &ds.labels, &cfg.delta_grid)?;
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "build-adj", &config)?;
            run.write("improvement.csv", &improvement_csv(&rows))?;
            for (k, &delta) in cfg.delta_grid.iter().enumerate() {
                let name = format!("rewired_{k}.csv");
                write_edges(run.path().join(&name), &build_hi_adjacency(&hetero, delta)?)?;
                run.record(&name);
            }
            run.finish(&argv, "build-adj", &config, Some(cfg.seed))
        }
        Command::EstimateLabels {
            common,
            pipeline,
            split,
        } => {
            let cfg = experiment(&common, pipeline)?;
            let ds = cfg.data.load()?;
            let split = pick_split(&cfg, ds.splits.len(), split)?;
            let pseudo = pseudo_labels(&ds, split, &cfg)?;
            let mut csv = String::from("node_id,label,confidence\n");
            for (i, (l, p)) in pseudo.labels.iter().zip(&pseudo.confidence).enumerate() {
                writeln!(csv, "{i},{l},{p}").unwrap();
            }
            let summary = serde_json::json!({
                "estimator": pseudo.estimator,
                "split": split,
                "accuracy": pseudo.accuracy(&ds.labels),
                "train_overridden": pseudo.train_overridden,
            });
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "estimate-labels", &config)?;
            run.write("pseudo_labels.csv", &csv)?;
            run.write_json("estimate.json", &summary)?;
            run.finish(&argv, "estimate-labels", &config, Some(cfg.seed))
        }
        Command::Train {
            common,
            pipeline,
            split,
            baseline,
        } => {
            let cfg = experiment(&common, pipeline)?;
            let ds = cfg.data.load()?;
            let split = pick_split(&cfg, ds.splits.len(), split)?;
            let res = if baseline {
                gcn_baseline(&ds, split, &cfg)?
            } else {
                train_cell(&ds, split, &cfg, cfg.delta_grid[0], cfg.lambda_grid[0])?
            };
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "train", &config)?;
            run.write("trace.csv", &trace_csv(&res.trace))?;
            run.write_json("result.json", &res.summary())?;
            run.finish(&argv, "train", &config, Some(cfg.seed))
        }
        Command::Run { common, pipeline } => {
            let cfg = experiment(&common, pipeline)?;
            let report = run_hignn_on(&cfg.data.load()?, &cfg)?;
            let mut csv = String::from("split,delta,lambda,val_acc,test_acc,best_epoch,estimator_accuracy\n");
            for s in &report.splits {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    s.split, s.delta, s.lambda, s.val_acc, s.test_acc, s.best_epoch, s.estimator_accuracy
                )
                .unwrap();
            }
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "run", &config)?;
            run.write("splits.csv", &csv)?;
            run.write_json("report.json", &report)?;
            run.finish(&argv, "run", &config, Some(cfg.seed))
        }
        Command::Ablate { common, pipeline } => {
            let cfg = experiment(&common, pipeline)?;
            let table = ablate_on(&cfg.data.load()?, &cfg)?;
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "ablate", &config)?;
            run.write("ablation.csv", &table.to_csv())?;
            run.write_json("ablation.json", &table)?;
            run.finish(&argv, "ablate", &config, Some(cfg.seed))
        }
        Command::Sweep { common, pipeline } => {
            let cfg = experiment(&common, pipeline)?;
            let rows = hyperparam_sweep_on(&cfg.data.load()?, &cfg)?;
            let config = to_value(&cfg);
            let mut run = RunDir::create(common.out, "sweep", &config)?;
            run.write("sweep.csv", &sweep_csv(&rows))?;
            run.finish(&argv, "sweep", &config, Some(cfg.seed))
        }
    }
}
