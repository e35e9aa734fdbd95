//! `hignn`: batch frontend writing CSV and JSON into a run directory.

mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hignn_core::pipeline::Estimator;
use hignn_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "hignn",
    version,
    about = "Homophily analysis, heterophily-aware rewiring and two-channel GCN training"
)]
#[command(after_help = "Set HIGNN_THREADS to cap the number of worker threads.\n\
Every run writes manifest.json (command, config, seed, outputs, versions) next to its outputs.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Random seed; overrides the config file
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: runs/<config-hash>-<unix-time>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Grid of reals: a comma list (`0.5,0.8`) or an inclusive range `start:end:step`.
fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("invalid number {s:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, end, step] => {
            let (start, end, step) = (num(start)?, num(end)?, num(step)?);
            if !(step > 0.0) || end < start {
                return Err(format!("invalid range {text:?}"));
            }
            let n = ((end - start) / step + 1e-9).floor() as usize;
            if n == 0 {
                return Ok(vec![start]);
            }
            let span = n as f64 * step;
            Ok((0..=n).map(|k| start + span * k as f64 / n as f64).collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(format!("expected a list or start:end:step, got {text:?}")),
    }
}

fn parse_counts(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("invalid count {s:?}")))
        .collect()
}

fn parse_estimator(text: &str) -> Result<Estimator, String> {
    Estimator::from_name(text).ok_or_else(|| {
        let names: Vec<&str> = Estimator::ALL.iter().map(|e| e.name()).collect();
        format!("unknown estimator {text:?}; expected one of {}", names.join(", "))
    })
}

/// Experiment settings shared by the pipeline subcommands.
#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    /// Dataset directory (edges.csv, features.csv, labels.csv, splits.json);
    /// without it the config's data source is used, by default a synthetic graph
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of classes [default: largest label + 1]
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Label estimator: gcn_hp, gcn, mlp or true_labels
    #[arg(long, value_parser = parse_estimator)]
    pub estimator: Option<Estimator>,
    /// Use predictions for training nodes instead of their known labels
    #[arg(long)]
    pub pure_predictions: bool,
    /// Similarity thresholds δ (list or start:end:step)
    #[arg(long, value_parser = parse_grid)]
    pub delta: Option<::std::vec::Vec<f64>>,
    /// Fusion weights λ (list or start:end:step)
    #[arg(long, value_parser = parse_grid)]
    pub lambda: Option<::std::vec::Vec<f64>>,
    /// Comma-separated split indices [default: all]
    #[arg(long, value_parser = parse_counts)]
    pub splits: Option<::std::vec::Vec<usize>>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// Add the high-pass branch to every layer
    #[arg(long)]
    pub high_pass: bool,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Edge and node homophily of a labelled graph
    #[command(after_help = "Writes analyze.csv: n_nodes,n_edges,n_classes,h_edge,h_node,sigma_bar")]
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Directory holding edges.csv, features.csv and labels.csv
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n_classes: Option<usize>,
    },
    /// Closed-form rewired homophily over a parameter grid
    #[command(
        after_help = "Writes theory_sweep.csv: h,sigma,delta,c,t_plus,t_minus,p_intra,p_inter,h_hat\n\
Rows run h slowest, then sigma, delta, c."
    )]
    TheorySweep {
        #[command(flatten)]
        common: Common,
        /// Homophily grid (list or start:end:step)
        #[arg(long, value_parser = parse_grid)]
        h_grid: Option<::std::vec::Vec<f64>>,
        #[arg(long, value_parser = parse_grid)]
        sigma: Option<::std::vec::Vec<f64>>,
        #[arg(long, value_parser = parse_grid)]
        delta: Option<::std::vec::Vec<f64>>,
        /// Class counts (comma list)
        #[arg(long, value_parser = parse_counts)]
        c: Option<::std::vec::Vec<usize>>,
    },
    /// Monte-Carlo estimate of rewired homophily next to the closed form
    #[command(
        after_help = "Writes simulate.csv: h,sigma,delta,c,t_plus,t_minus,p_intra,p_inter,h_hat,h_hat_mc,std_err,n_pairs,seed"
    )]
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_grid)]
        h: Option<::std::vec::Vec<f64>>,
        #[arg(long, value_parser = parse_grid)]
        sigma: Option<::std::vec::Vec<f64>>,
        #[arg(long, value_parser = parse_grid)]
        delta: Option<::std::vec::Vec<f64>>,
        #[arg(long, value_parser = parse_counts)]
        c: Option<::std::vec::Vec<usize>>,
        /// Sampled pairs per grid point
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Generate a block-model dataset with Gaussian class features
    #[command(
        after_help = "Writes edges.csv (u,v), features.csv, labels.csv (node_id,label), splits.json and stats.csv (h_edge,h_node,sigma_bar)"
    )]
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_nodes: Option<usize>,
        #[arg(long)]
        c: Option<usize>,
        /// Target edge homophily
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        avg_degree: Option<f64>,
        #[arg(long)]
        feature_dim: Option<usize>,
        #[arg(long)]
        feature_separation: Option<f64>,
        #[arg(long)]
        n_splits: Option<usize>,
    },
    /// Build the rewired graph A' for each δ and measure its homophily
    #[command(
        after_help = "Writes improvement.csv (delta,h_hat,h_hat_minus_h,sigma_bar) and rewired_<k>.csv \
(u,v edges of A' for the k-th δ). Homophily is measured with the true labels."
    )]
    BuildAdj {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Split whose training labels drive the estimator
        #[arg(long)]
        split: Option<usize>,
    },
    /// Predict labels for every node with the configured estimator
    #[command(
        after_help = "Writes pseudo_labels.csv (node_id,label,confidence) and estimate.json \
(estimator, split, accuracy, train_overridden)"
    )]
    EstimateLabels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        split: Option<usize>,
    },
    /// Train one model: the two-channel model at the first δ and λ, or the baseline
    #[command(after_help = "Writes trace.csv (epoch,train_loss,val_acc) and result.json (test_acc, best_epoch, seed)")]
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long)]
        split: Option<usize>,
        /// Single-channel model on the original graph
        #[arg(long)]
        baseline: bool,
    },
    /// Full workflow with δ and λ chosen on validation accuracy per split
    #[command(
        after_help = "Writes splits.csv (split,delta,lambda,val_acc,test_acc,best_epoch,estimator_accuracy) \
and report.json (config, per-split results, mean and std of test accuracy)"
    )]
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Ablation over full, without_A_new, without_A and early_fusion
    #[command(after_help = "Writes ablation.csv (variant,mean_test_acc,std_test_acc) and ablation.json")]
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Every (δ, λ) cell on the first configured split
    #[command(after_help = "Writes sweep.csv: delta,lambda,val_acc,test_acc (δ-major)")]
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

/// Failure classes; each has its own message prefix.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Config(String),
    Data(String),
    Run(String),
}

impl CliError {
    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Io(m) => ("io", m),
            CliError::Config(m) => ("config", m),
            CliError::Data(m) => ("data", m),
            CliError::Run(m) => ("run", m),
        };
        let msg: Vec<&str> = msg.split_whitespace().collect();
        format!("error[{kind}]: {}", msg.join(" "))
    }
}

fn classify(e: &Error) -> fn(String) -> CliError {
    match e {
        Error::Io { .. } => CliError::Io,
        Error::InvalidParam(_) | Error::Infeasible(_) | Error::Json(_) => CliError::Config,
        Error::Parse { .. }
        | Error::NodeOutOfRange { .. }
        | Error::DuplicateLabel(_)
        | Error::MissingLabel(_)
        | Error::LabelOutOfRange { .. }
        | Error::InvalidSplit(_)
        | Error::Shape(_)
        | Error::EmptyMask => CliError::Data,
        Error::Split { source, .. } => classify(source),
        _ => CliError::Run,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        classify(&e)(e.to_string())
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("HIGNN_THREADS") else {
        return Ok(());
    };
    match value.trim().parse::<usize>() {
        Ok(n) if n >= 1 => {
            hignn_core::par::init_threads(n);
            Ok(())
        }
        _ => Err(CliError::Usage(format!(
            "HIGNN_THREADS must be a positive integer, got {value:?}"
        ))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let first = first.trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return ExitCode::FAILURE;
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    match init_threads().and_then(|()| commands::execute(cli.command, argv)) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:1:0.05").unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[4], 0.2);
        assert_eq!(g[20], 1.0);
        assert_eq!(parse_grid("0.5,0.8, 1").unwrap(), [0.5, 0.8, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("a,b").is_err());
        assert_eq!(parse_counts("3,5").unwrap(), [3, 5]);
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = CliError::Config("bad\nvalue  here".into());
        assert_eq!(e.line(), "error[config]: bad value here");
        let wrapped = Error::Split {
            split: 2,
            source: Box::new(Error::MissingLabel(4)),
        };
        assert!(matches!(CliError::from(wrapped), CliError::Data(m) if m.starts_with("split 2")));
    }
}
