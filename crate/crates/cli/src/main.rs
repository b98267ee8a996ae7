//! `fuma`: simulate cohorts, discover behavior clusters, mine rules, classify
//! and evaluate.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "fuma", version, about = "Behavior discovery and rule-based classification for MOOC video logs")]
pub struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "FUMA_JOBS")]
    pub jobs: Option<usize>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort: event log, catalog, outcomes and planted labels.
    Simulate(SimulateArgs),
    /// Validate an event log against a catalog.
    Ingest(IngestArgs),
    /// Extract the 21 behavior features at a week cutoff.
    Featurize(FeaturizeArgs),
    /// Cluster students, label clusters by outcome and mine rules into a model file.
    Discover(DiscoverArgs),
    /// Print the rules stored in a model.
    Rules(RulesArgs),
    /// Assign students to clusters by membership score.
    Classify(ClassifyArgs),
    /// Suggest behavior changes for students classified into the Low cluster.
    Intervene(InterveneArgs),
    /// Week-sliced discovery, outcome statistics and nested cross-validation.
    Evaluate(EvaluateArgs),
    /// Extract a comma-separated plot series from an evaluation report.
    Plotdata(PlotdataArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Cohort config (TOML). Built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n_students: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    /// Event log (tab-separated).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub outcomes: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// Planted archetype per student.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct LogArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// Abort on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    /// Course start, epoch seconds; weeks are 7-day windows from here.
    #[arg(long, default_value_t = 1_700_000_000.0)]
    pub course_start: f64,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub log: LogArgs,
    /// Write the accepted, catalog-checked events here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write reconstructed watch records (one JSON object per line).
    #[arg(long)]
    pub dump_sessions: Option<PathBuf>,
    /// Week cutoff for --dump-sessions (default: the whole course).
    #[arg(long)]
    pub week: Option<u32>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Basis {
    ActiveHour,
    Video,
    Week,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub log: LogArgs,
    #[arg(long)]
    pub week: u32,
    /// Keep only students still active at --week.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Basis::ActiveHour)]
    pub frequency_basis: Basis,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct OutcomeArgs {
    #[arg(long, default_value_t = 0.8)]
    pub pass_threshold: f64,
    /// Course length in weeks.
    #[arg(long, default_value_t = 6)]
    pub course_weeks: u32,
}

#[derive(Args, Debug, Clone)]
pub struct GaArgs {
    #[arg(long, default_value_t = 30)]
    pub population: usize,
    #[arg(long, default_value_t = 100)]
    pub generations: usize,
    #[arg(long, default_value_t = 0.05)]
    pub mutation_prob: f64,
    #[arg(long, default_value_t = 2)]
    pub elitism: usize,
}

#[derive(Args, Debug, Clone)]
pub struct RuleArgs {
    #[arg(long, default_value_t = 0.1)]
    pub min_support: f64,
    #[arg(long, default_value_t = 0.01)]
    pub min_confidence_improvement: f64,
    #[arg(long, default_value_t = 3)]
    pub max_len: usize,
    /// 0 for no limit.
    #[arg(long, default_value_t = 3)]
    pub max_branching: usize,
}

#[derive(Args, Debug)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub outcomes: PathBuf,
    /// Candidate cluster counts, e.g. 2..6.
    #[arg(long, value_parser = parse_k_range, default_value = "2..6", conflicts_with = "k")]
    pub k_range: (usize, usize),
    /// Fixed cluster count instead of index-vote selection.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub k: Option<u64>,
    #[arg(long)]
    pub seed: u64,
    /// Week the features were cut at; dropout is "no activity after this week".
    #[arg(long, default_value_t = 2)]
    pub week: u32,
    #[command(flatten)]
    pub outcome: OutcomeArgs,
    #[command(flatten)]
    pub ga: GaArgs,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RulesArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Students with fewer logged actions stay unclassified.
    #[arg(long, default_value_t = 0.0)]
    pub min_actions: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InterveneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub min_actions: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub log: LogArgs,
    #[arg(long)]
    pub outcomes: PathBuf,
    /// Planted labels from `simulate --truth`, for ARI and planted accuracy.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Week cutoffs, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub weeks: Vec<u32>,
    /// Outer cross-validation folds; 0 skips cross-validation.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 3)]
    pub inner_folds: usize,
    #[arg(long, value_parser = parse_k_range, default_value = "2..6")]
    pub k_range: (usize, usize),
    /// Support floors tried by the inner folds.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
    pub support_grid: Vec<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub pass_threshold: f64,
    #[command(flatten)]
    pub ga: GaArgs,
    #[command(flatten)]
    pub rules: RuleArgs,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotdataArgs {
    #[arg(long)]
    pub report: PathBuf,
    /// One of: active-per-week, cluster-outcomes, k-selection, feature-ranking, cv-folds.
    #[arg(long)]
    pub figure: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_k_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..=")
        .or_else(|| s.split_once(".."))
        .or_else(|| s.split_once('-'))
        .ok_or_else(|| format!("expected MIN..MAX, got {s:?}"))?;
    let lo: usize = a.trim().parse().map_err(|_| format!("bad lower bound {a:?}"))?;
    let hi: usize = b.trim().parse().map_err(|_| format!("bad upper bound {b:?}"))?;
    if lo < 2 {
        return Err(format!("k must be at least 2 (got {lo})"));
    }
    if hi < lo {
        return Err(format!("empty k range {lo}..{hi}"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("fuma: {msg}");
            ExitCode::from(2)
        }
        // `fuma rules ... | head` closing the pipe early is not an error
        Err(commands::Failure::Data(e))
            if e.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)) =>
        {
            ExitCode::SUCCESS
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("fuma: {e:#}");
            ExitCode::from(1)
        }
    }
}
