//! Command-line surface. Every flag can also be set through an `MTAM_*`
//! environment variable.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "mtam",
    version,
    about = "Time-aware attentive memory recommender"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, index and split an event log into a dataset directory.
    Preprocess(PreprocessArgs),
    /// Train a model on a dataset directory and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint or a popularity baseline on the test pairs.
    Eval(EvalArgs),
    /// Top-K items for one behavior history.
    Recommend(RecommendArgs),
    /// Finite-difference gradient checks on micro-instances.
    Gradcheck(GradcheckArgs),
    /// Write the planted temporal-rule event log.
    Synth(SynthArgs),
    /// Train and evaluate the full model at several hop counts.
    SweepHops(SweepArgs),
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long, env = "MTAM_INPUT")]
    pub input: PathBuf,
    /// Dataset directory to create.
    #[arg(long, env = "MTAM_OUTPUT")]
    pub output: PathBuf,
    #[arg(long, env = "MTAM_MIN_USER_LEN", default_value_t = 10)]
    pub min_user_len: usize,
    #[arg(long, env = "MTAM_MIN_ITEM_COUNT", default_value_t = 30)]
    pub min_item_count: usize,
    /// Keep this fraction of users, drawn with `--seed`.
    #[arg(long, env = "MTAM_SAMPLE_USERS")]
    pub sample_users: Option<f64>,
    #[arg(long, env = "MTAM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Largest tolerated fraction of malformed input rows.
    #[arg(long, env = "MTAM_MAX_MALFORMED", default_value_t = 0.01)]
    pub max_malformed: f64,
    /// Move each user's last training pair into a validation set.
    #[arg(long, env = "MTAM_HOLDOUT_VALIDATION")]
    pub holdout_validation: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, env = "MTAM_VARIANT", default_value = "mtam")]
    pub variant: String,
    /// Memory read hops.
    #[arg(long, env = "MTAM_HOPS", default_value_t = 4)]
    pub hops: usize,
    /// Embedding and hidden width.
    #[arg(long, env = "MTAM_D", default_value_t = 128)]
    pub d: usize,
    #[arg(long, env = "MTAM_MAX_LEN", default_value_t = 50)]
    pub max_len: usize,
    /// Memory slots.
    #[arg(long, env = "MTAM_CAPACITY", default_value_t = 50)]
    pub capacity: usize,
    /// Seconds per time unit fed to the gates.
    #[arg(long, env = "MTAM_TIME_DIVISOR", default_value_t = 1.0)]
    pub time_divisor: f64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, env = "MTAM_LR", default_value_t = 1e-3)]
    pub lr: f64,
    /// Learning-rate multiplier applied every `--decay-every` iterations.
    #[arg(long, env = "MTAM_DECAY", default_value_t = 0.995)]
    pub decay: f64,
    #[arg(long, env = "MTAM_DECAY_EVERY", default_value_t = 100)]
    pub decay_every: usize,
    #[arg(long, env = "MTAM_BATCH_SIZE", default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, env = "MTAM_EPOCHS", default_value_t = 30)]
    pub epochs: usize,
    /// Early-stop threshold on the relative epoch-loss improvement.
    #[arg(long, env = "MTAM_MIN_REL_IMPROVEMENT", default_value_t = 1e-4)]
    pub min_rel_improvement: f64,
    #[arg(long, env = "MTAM_DROPOUT", default_value_t = 0.5)]
    pub dropout: f64,
    #[arg(long, env = "MTAM_L2", default_value_t = 1e-5)]
    pub l2: f64,
    #[arg(long, env = "MTAM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Use Adam instead of plain SGD.
    #[arg(long, env = "MTAM_ADAM")]
    pub adam: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `preprocess`.
    #[arg(long, env = "MTAM_DATA")]
    pub data: PathBuf,
    /// Checkpoint path; the loss trace and config echo are written beside it.
    #[arg(long, env = "MTAM_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Print every n-th iteration's loss to standard error (0: quiet).
    #[arg(long, env = "MTAM_LOG_EVERY", default_value_t = 0)]
    pub log_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    TopPop,
    PPop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Test,
    Valid,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, env = "MTAM_DATA")]
    pub data: PathBuf,
    #[arg(
        long,
        env = "MTAM_CKPT",
        required_unless_present = "baseline",
        conflicts_with = "baseline"
    )]
    pub ckpt: Option<PathBuf>,
    #[arg(long, env = "MTAM_BASELINE", value_enum)]
    pub baseline: Option<Baseline>,
    /// Cutoffs, comma-separated.
    #[arg(long, env = "MTAM_K", value_delimiter = ',', default_values_t = [5, 10, 20])]
    pub k: Vec<usize>,
    #[arg(long, env = "MTAM_SPLIT", value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Metrics file; the config echo is written beside it.
    #[arg(long, env = "MTAM_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (0: one per core).
    #[arg(long, env = "MTAM_THREADS", default_value_t = 0)]
    pub threads: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct RecommendArgs {
    #[arg(long, env = "MTAM_CKPT")]
    pub ckpt: PathBuf,
    /// Lines of `item,category,timestamp` using external ids.
    #[arg(long, env = "MTAM_HISTORY")]
    pub history: PathBuf,
    /// Time of the recommendation.
    #[arg(long, env = "MTAM_TIME")]
    pub time: f64,
    #[arg(long, env = "MTAM_K", default_value_t = 10)]
    pub k: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// all, rnn, attention, memory or model.
    #[arg(long, env = "MTAM_SCOPE", default_value = "all")]
    pub scope: String,
    /// Corrupt one backward rule (op name) to exercise the checker.
    #[arg(long, env = "MTAM_INJECT_FAULT", hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Event-log file to write.
    #[arg(long, env = "MTAM_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "MTAM_USERS", default_value_t = 2000)]
    pub users: usize,
    #[arg(long, env = "MTAM_SYNTH_MIN_LEN", default_value_t = 10)]
    pub min_len: usize,
    #[arg(long, env = "MTAM_SYNTH_MAX_LEN", default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, env = "MTAM_FILLERS", default_value_t = 20)]
    pub fillers: usize,
    /// Gap, in seconds, separating the two target items.
    #[arg(long, env = "MTAM_THRESHOLD", default_value_t = 3600.0)]
    pub threshold: f64,
    #[arg(long, env = "MTAM_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, env = "MTAM_DATA")]
    pub data: PathBuf,
    /// Directory for per-hop checkpoints and metrics.
    #[arg(long, env = "MTAM_OUT")]
    pub out: PathBuf,
    /// Hop counts, comma-separated.
    #[arg(long = "hop-list", env = "MTAM_HOP_LIST", value_delimiter = ',', default_values_t = [0, 1, 2, 4])]
    pub hop_list: Vec<usize>,
    #[arg(long, env = "MTAM_K", value_delimiter = ',', default_values_t = [1, 5, 10])]
    pub k: Vec<usize>,
    /// Test examples used for the residual check.
    #[arg(long, env = "MTAM_RESIDUAL_SAMPLE", default_value_t = 200)]
    pub residual_sample: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, env = "MTAM_THREADS", default_value_t = 0)]
    pub threads: usize,
}
