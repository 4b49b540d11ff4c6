//! Commands behind the `handtrack` binary. Every command communicates only
//! through files and writes a `run.json` that can be replayed with
//! `handtrack rerun`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use handtrack_core::forest::TrainingConfig;
use handtrack_core::metrics::AbsentPartRule;
use handtrack_core::proposals::{PerPart, ProposalConfig};

mod evaluate;
mod synth;
mod sweep;
mod track;
mod train;

pub use evaluate::{cmd_classify, cmd_evaluate, cmd_propose, EvaluateReport};
pub use sweep::{cmd_sweep, SweepRow};
pub use synth::cmd_synth;
pub use track::{cmd_track, TrackReport};
pub use train::{cmd_train, TrainSummary};

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments: exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Bad or missing data, or a failed computation: exit code 2.
    #[error(transparent)]
    Data(#[from] handtrack_core::Error),
    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "handtrack", version, about = "Depth-image body-part forest, part proposals and hand-washing step tracking")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Generate synthetic trials.
    Synth(SynthArgs),
    /// Train a forest on trial directories.
    Train(TrainArgs),
    /// Label the foreground pixels of one depth image.
    Classify(ClassifyArgs),
    /// Part proposals for every frame of a trial.
    Propose(ProposeArgs),
    /// Per-pixel UAR and proposal PR curves on holdout trials.
    Evaluate(EvaluateArgs),
    /// Retrain while varying one training parameter.
    Sweep(SweepArgs),
    /// Activity timelines and step scores for trials.
    Track(TrackArgs),
    /// Replay a recorded run.json.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of trials.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    /// `canonical`, `varied`, or a template JSON file.
    #[arg(long, default_value = "canonical")]
    pub template: String,
    /// Depth noise standard deviation in meters.
    #[arg(long, default_value_t = handtrack_core::synth::DEFAULT_NOISE_SIGMA)]
    pub noise_sigma: f64,
    /// Image scale relative to 640x480.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

/// Training parameters; unset ones come from the default (or optimal)
/// preset.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainingFlags {
    /// Start from the optimal preset instead of the defaults.
    #[arg(long)]
    pub optimal: bool,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_gain: Option<f64>,
    #[arg(long)]
    pub samples_per_image: Option<usize>,
    #[arg(long)]
    pub theta_max: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Candidate offset pairs per tree.
    #[arg(long)]
    pub offsets: Option<usize>,
    /// Candidate thresholds per tree.
    #[arg(long)]
    pub thresholds: Option<usize>,
}

impl TrainingFlags {
    pub fn resolve(&self, seed: u64) -> Result<TrainingConfig> {
        let mut c = if self.optimal {
            TrainingConfig::optimal()
        } else {
            TrainingConfig::default()
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag {
                    c.$field = v;
                }
            )*};
        }
        set!(trees => n_trees, max_depth => max_depth, min_gain => min_gain,
             samples_per_image => samples_per_image, theta_max => theta_max, tau_max => tau_max,
             offsets => count_offsets, thresholds => count_thresholds);
        c.rng_seed = seed;
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Trial directories, or directories of trials.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProposalFlags {
    /// Pixels sampled per frame.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub bandwidth_hand: f64,
    #[arg(long, default_value_t = 0.10)]
    pub bandwidth_head: f64,
    #[arg(long, default_value_t = 0.01)]
    pub merge_radius: f64,
    #[arg(long, default_value_t = 500)]
    pub max_seeds: usize,
    /// Normalize mean shift by the unweighted kernel sum.
    #[arg(long)]
    pub unweighted_denominator: bool,
}

impl ProposalFlags {
    pub fn resolve(&self) -> Result<ProposalConfig> {
        let c = ProposalConfig {
            bandwidth: PerPart {
                left_hand: self.bandwidth_hand,
                right_hand: self.bandwidth_hand,
                head: self.bandwidth_head,
            },
            merge_radius: self.merge_radius,
            max_seeds: self.max_seeds,
            weighted_denominator: !self.unweighted_denominator,
            ..ProposalConfig::default()
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.samples == 0 {
            return Err(CliError::Usage("--samples must be positive".into()));
        }
        Ok(c)
    }
}

/// Distances within which a proposal matches the truth.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScoringFlags {
    #[arg(long, default_value_t = 0.05)]
    pub delta_hand: f64,
    #[arg(long, default_value_t = 0.10)]
    pub delta_head: f64,
    /// Count proposals for absent parts as false positives rather than
    /// false negatives.
    #[arg(long)]
    pub absent_as_false_positive: bool,
}

impl ScoringFlags {
    pub fn deltas(&self) -> Result<PerPart<f64>> {
        if !(self.delta_hand > 0.0 && self.delta_head > 0.0) {
            return Err(CliError::Usage("distance thresholds must be positive".into()));
        }
        Ok(PerPart {
            left_hand: self.delta_hand,
            right_hand: self.delta_hand,
            head: self.delta_head,
        })
    }

    pub fn rule(&self) -> AbsentPartRule {
        if self.absent_as_false_positive {
            AbsentPartRule::FalsePositive
        } else {
            AbsentPartRule::FalseNegative
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// 16-bit depth PGM in millimeters.
    #[arg(long)]
    pub depth: PathBuf,
    /// Output 8-bit label PGM.
    #[arg(long)]
    pub out: PathBuf,
    /// Raw depths at or beyond this (meters) are background.
    #[arg(long)]
    pub background_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProposeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub trial: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub proposals: ProposalFlags,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub holdout: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Points on the seed-threshold grid of each PR curve.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    #[command(flatten)]
    pub proposals: ProposalFlags,
    #[command(flatten)]
    pub scoring: ScoringFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    Trees,
    MaxDepth,
    MinGain,
    SamplesPerImage,
    ThetaMax,
    TauMax,
    /// Fraction of the training frames used (nested subsets).
    ImageFraction,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
    pub values: Vec<f64>,
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub holdout: Vec<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub training: TrainingFlags,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub trials: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Activity region JSON (default: the built-in sink layout).
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Step precedence JSON (default ordering when omitted).
    #[arg(long)]
    pub ordering: Option<PathBuf>,
    #[command(flatten)]
    pub proposals: ProposalFlags,
    #[command(flatten)]
    pub scoring: ScoringFlags,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// A run.json written by an earlier command.
    pub record: PathBuf,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool_version: String,
    pub seed: u64,
    pub command: Command,
    /// Fully resolved configuration, for reading; replay uses `command`.
    pub resolved: serde_json::Value,
}

pub(crate) fn write_run_record(path: &Path, seed: u64, command: Command, resolved: serde_json::Value) -> Result<()> {
    let record = RunRecord {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        command,
        resolved,
    };
    write_text(path, &(serde_json::to_string_pretty(&record)? + "\n"))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// `model.json` -> `model.json.run.json`: the run record of a command whose
/// output is a single file.
pub fn sidecar_run_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".run.json");
    output.with_file_name(name)
}

/// Expands each path to itself when it is a trial, or else to the trials
/// directly inside it, sorted by name.
pub fn expand_trials(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    use handtrack_core::dataset::MANIFEST_FILE;
    let mut out = Vec::new();
    for p in paths {
        if p.join(MANIFEST_FILE).is_file() {
            out.push(p.clone());
            continue;
        }
        let entries = std::fs::read_dir(p).map_err(|e| CliError::io(p, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join(MANIFEST_FILE).is_file())
            .collect();
        if found.is_empty() {
            return Err(handtrack_core::Error::InvalidInput(format!("no trials found in {}", p.display())).into());
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

/// Formats an optional metric for CSV: empty when undefined.
pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs one command with `seed`, writing its outputs and `run.json`.
pub fn execute(command: &Command, seed: u64) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a, seed).map(drop),
        Command::Train(a) => cmd_train(a, seed).map(drop),
        Command::Classify(a) => cmd_classify(a, seed),
        Command::Propose(a) => cmd_propose(a, seed),
        Command::Evaluate(a) => cmd_evaluate(a, seed).map(drop),
        Command::Sweep(a) => cmd_sweep(a, seed).map(drop),
        Command::Track(a) => cmd_track(a, seed).map(drop),
        Command::Rerun(a) => {
            let text = std::fs::read_to_string(&a.record).map_err(|e| CliError::io(&a.record, e))?;
            let record: RunRecord = serde_json::from_str(&text)?;
            if matches!(record.command, Command::Rerun(_)) {
                return Err(CliError::Usage("a run record cannot replay another rerun".into()));
            }
            execute(&record.command, record.seed)
        }
    }
}

/// Entry point shared by the binary and tests.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    execute(&cli.command, cli.seed)
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
