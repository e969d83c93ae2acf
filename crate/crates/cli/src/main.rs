mod commands;
mod records;

use bam_core::active::Strategy;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Uncertainty-aware equivariant interatomic potentials: training,
/// prediction, calibration and active learning as batch commands.
///
/// Exit status: 0 on success, 1 on usage errors, 2 on runtime errors.
#[derive(Parser, Debug)]
#[command(name = "bam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Run configuration (JSON: model, train, eval, extxyz, seed).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labelled training structures (extended XYZ).
    #[arg(long, value_name = "XYZ")]
    pub data: PathBuf,
    /// Labelled validation structures monitored by the LR scheduler.
    #[arg(long, value_name = "XYZ", conflicts_with = "val_count")]
    pub val: Option<PathBuf>,
    /// Hold out this many structures of --data for validation (seeded split).
    #[arg(long)]
    pub val_count: Option<usize>,
    /// Checkpoint to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Training log CSV (epoch, train_loss, val_loss, lr).
    #[arg(long, value_name = "CSV")]
    pub log: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct PredictionInput {
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Posterior draws per prediction (default: config eval.n_samples).
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Energy,
    Forces,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ForceAgg {
    #[default]
    Max,
    Mean,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train with the posterior the config asks for (default: a single model).
    Train(TrainArgs),
    /// Train a deep ensemble of independently initialized members.
    EnsembleTrain {
        #[command(flatten)]
        args: TrainArgs,
        /// Number of members (default: config value, else 10).
        #[arg(long)]
        members: Option<usize>,
    },
    /// Train one model while collecting SWAG moments.
    SwagTrain {
        #[command(flatten)]
        args: TrainArgs,
        /// Maximum number of stored deviations K (default: config, else 20).
        #[arg(long)]
        rank: Option<usize>,
        /// Fraction of epochs before collection starts (default: config, else 0.6).
        #[arg(long)]
        start_fraction: Option<f64>,
        /// Collect every this many epochs (default: config, else 1).
        #[arg(long)]
        collect_every: Option<usize>,
    },
    /// Train with the IVON variational optimizer.
    IvonTrain {
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Fit a last-layer Laplace posterior around a trained single model.
    LaplaceFit {
        #[command(flatten)]
        common: Common,
        /// Checkpoint of the MAP model (posterior kind `point`).
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "XYZ")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Gaussian prior precision (default: config, else 1.0).
        #[arg(long)]
        prior_precision: Option<f64>,
    },
    /// Predictive means and standard deviations as JSON lines.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: PredictionInput,
        #[arg(long, value_name = "XYZ")]
        data: PathBuf,
        /// Output file (default: stdout).
        #[arg(long, value_name = "JSONL")]
        out: Option<PathBuf>,
    },
    /// Accuracy and calibration metrics on a labelled test set.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: PredictionInput,
        #[arg(long, value_name = "XYZ")]
        data: PathBuf,
        /// Out-of-distribution set; adds the σ_E AUROC.
        #[arg(long, value_name = "XYZ")]
        ood: Option<PathBuf>,
        /// Metric records, one JSON object per line (default: stdout).
        #[arg(long, value_name = "JSONL")]
        metrics: Option<PathBuf>,
        /// Calibration levels (default: config eval.levels).
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long, value_name = "CSV")]
        reliability_energy: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        reliability_forces: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        scatter_energy: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        scatter_forces: Option<PathBuf>,
    },
    /// AUROC of σ_E separating in-distribution from OOD structures.
    OodScore {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: PredictionInput,
        #[arg(long = "id", value_name = "XYZ")]
        id_data: PathBuf,
        #[arg(long, value_name = "XYZ")]
        ood: PathBuf,
        /// Per-structure scores CSV (set, index, sigma_e).
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        /// Metric records (default: stdout).
        #[arg(long, value_name = "JSONL")]
        metrics: Option<PathBuf>,
    },
    /// Reliability curve and CE of a labelled predictions file.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Output of `bam predict` on labelled structures.
        #[arg(long, value_name = "JSONL")]
        predictions: PathBuf,
        #[arg(long, value_enum, default_value = "energy")]
        channel: Channel,
        #[arg(long)]
        levels: Option<usize>,
        /// Reliability CSV (level, observed).
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "JSONL")]
        metrics: Option<PathBuf>,
    },
    /// Fit an isotonic recalibration map and report CE before and after.
    Recalibrate {
        #[command(flatten)]
        common: Common,
        /// Labelled predictions the map is fitted on.
        #[arg(long, value_name = "JSONL")]
        fit: PathBuf,
        /// Labelled predictions to assess the map on (default: the fitting set).
        #[arg(long, value_name = "JSONL")]
        apply: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "energy")]
        channel: Channel,
        #[arg(long)]
        levels: Option<usize>,
        /// The fitted map (JSON knots).
        #[arg(long, value_name = "JSON")]
        map_out: PathBuf,
        /// Recalibrated reliability CSV.
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "JSONL")]
        metrics: Option<PathBuf>,
    },
    /// Score a pool by BALD and write the selection manifest.
    AlSelect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: PredictionInput,
        #[arg(long, value_name = "XYZ")]
        pool: PathBuf,
        /// random, bald_e, bald_f or bald_ef.
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        budget: usize,
        #[arg(long, value_enum, default_value_t)]
        force_agg: ForceAgg,
        /// Manifest CSV (id, bald_e, bald_f, strategy); default stdout.
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Select from the pool, move the picks to the training set and retrain.
    AlRound {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: PredictionInput,
        #[arg(long, value_name = "XYZ")]
        train: PathBuf,
        #[arg(long, value_name = "XYZ")]
        pool: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        budget: usize,
        #[arg(long, value_enum, default_value_t)]
        force_agg: ForceAgg,
        /// Receives manifest.csv, train.xyz, pool.xyz, model.bam, train_log.csv.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Composite score of several models from their metric files.
    Score {
        #[command(flatten)]
        common: Common,
        /// Metric files (from `bam evaluate`), one per model of the cohort.
        #[arg(long = "metrics", value_name = "JSONL", required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// CSV (source, score); default stdout.
        #[arg(long, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint's header as JSON.
    InspectCheckpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
    },
}

/// Bad flag combinations found after parsing; reported with exit status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
