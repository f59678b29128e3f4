//! `trajod`: fit, score and evaluate trajectory-based OOD detectors.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trajod_core::baselines::{BaselineKind, DEFAULT_KNN_ALPHA, DEFAULT_KNN_K};
use trajod_core::diagnostics::DEFAULT_DIRECTIONS;
use trajod_core::metrics::DEFAULT_TPR;
use trajod_core::trajectory::DEFAULT_SUBSAMPLE;
use trajod_core::LayerScoreKind;

use crate::io::CliError;

#[derive(Parser, Debug)]
#[command(name = "trajod", version, about = "Out-of-distribution detection from layer-wise score trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a detector on labeled training features and write an FTRM model.
    Fit(FitArgs),
    /// Score every sample of a feature file, writing CSV.
    Score(ScoreArgs),
    /// AUROC and TNR at a fixed TPR for an in/out pair of feature files.
    Evaluate(EvaluateArgs),
    /// Evaluate one of the comparison detectors.
    Baseline(BaselineArgs),
    /// Generate seeded synthetic train/in/out feature files.
    Synth(SynthArgs),
    /// Depth, mean/median gap and layer correlation diagnostics as JSON.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Layer score: `projection` or `mahalanobis`.
    #[arg(long, default_value = "projection")]
    pub kind: LayerScoreKind,
    /// Fraction of training samples used for the reference trajectory.
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
    pub subsample: f64,
    #[arg(long)]
    pub seed: u64,
    /// Also store the threshold keeping this fraction of training scores.
    #[arg(long)]
    pub tpr: Option<f64>,
    /// Fit every baseline and store it in the model file.
    #[arg(long)]
    pub with_baselines: bool,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report the plain inner product instead of the projection coefficient.
    #[arg(long)]
    pub inner_product: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub in_data: PathBuf,
    #[arg(long)]
    pub out_data: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TPR)]
    pub tpr: f64,
    /// Dataset label in the report; defaults to the OOD file name.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Also write every score as CSV (set,index,score).
    #[arg(long)]
    pub raw_scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// One of msp, max_logit, energy, mahalanobis_penultimate, knn,
    /// traj_euclidean, traj_mahalanobis.
    #[arg(long)]
    pub kind: BaselineKind,
    /// Training features to fit the baseline on.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Model file whose stored baseline state (or reference model) is used.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "in")]
    pub in_data: PathBuf,
    #[arg(long)]
    pub out_data: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, default_value_t = DEFAULT_TPR)]
    pub tpr: f64,
    /// Required when fitting a randomized baseline.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_KNN_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_KNN_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
    pub subsample: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Writes `<prefix>.train.ftx`, `<prefix>.in.ftx`, `<prefix>.out.ftx`.
    #[arg(long)]
    pub out_prefix: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Flat key=value config file, applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_DIRECTIONS)]
    pub directions: usize,
    /// Training fraction whose trajectories feed the correlation matrix.
    #[arg(long, default_value_t = 1.0)]
    pub subsample: f64,
    /// Cap on samples per class for the depth table.
    #[arg(long, default_value_t = 200)]
    pub max_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("TRAJOD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage("TRAJOD_THREADS", format!("expected a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage("TRAJOD_THREADS", e))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Score(a) => commands::score(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Synth(a) => commands::synth(a),
        Command::Diagnose(a) => commands::diagnose(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
