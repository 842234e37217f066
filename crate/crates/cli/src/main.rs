//! `foramslice`: batch entry points over the slice toolkit.
//!
//! Exit status is 0 on success, 1 when the pipeline reports an error and 2
//! for usage errors (unknown flags, malformed values, conflicting options).

mod analysis;
mod corpus;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use foramslice_core::Axis;

use crate::util::{error_chain, parse_axis, parse_dims, parse_fractions, UsageError};

#[derive(Debug, Parser)]
#[command(name = "foramslice", version, about = "Micro-CT foraminifera slice toolkit")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic phantom corpus and its manifest.
    Phantom(PhantomArgs),
    /// Load manifest volumes and count usable slices.
    Ingest(IngestArgs),
    /// Filter, segment, crop and resize slices to PNG.
    Preprocess(PreprocessArgs),
    /// Assign specimens to train/val/test with balanced species counts.
    Split(SplitArgs),
    /// Build (or reuse) the corpus index used for slice matching.
    Index(IndexArgs),
    /// Find the corpus slices most similar to a query image.
    Match(MatchArgs),
    /// Combine classifier predictions into ranked labels.
    Classify(ClassifyArgs),
    /// Accuracy, per-class P/R/F1, top-k accuracy and ROC AUC.
    Eval(EvalArgs),
    /// Score two PNG slices with one similarity metric.
    Metric(MetricArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Volume size as NX,NY,NZ.
    #[arg(long, value_parser = parse_dims, default_value = "128,128,96")]
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, Args)]
pub struct SliceFilterArgs {
    /// Slicing axes, comma separated.
    #[arg(long, value_parser = parse_axis, value_delimiter = ',', default_value = "Z")]
    pub axes: Vec<Axis>,
    /// Minimum foreground fraction for a slice to count as usable.
    #[arg(long, default_value_t = 0.01)]
    pub min_content: f64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub filter: SliceFilterArgs,
    /// Write per-specimen usable counts here (input for `split --stats`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PreprocessOpts {
    #[arg(long, default_value_t = 0.0)]
    pub sensitivity: f64,
    /// Output side in pixels.
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    /// Median filter radius.
    #[arg(long, default_value_t = 1)]
    pub denoise: usize,
    /// Crop margin as a fraction of the bounding box.
    #[arg(long, default_value_t = 0.05)]
    pub margin: f64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// A NIfTI volume, a PNG/JPEG slice, or a directory of them.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: PreprocessOpts,
    #[command(flatten)]
    pub filter: SliceFilterArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Manifest to ingest for usable slice counts.
    #[arg(long, conflicts_with = "stats", required_unless_present = "stats")]
    pub manifest: Option<PathBuf>,
    /// Counts written by `ingest --out`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Train,val,test slice fractions.
    #[arg(long, value_parser = parse_fractions, default_value = "0.4,0.13,0.47")]
    pub targets: [f64; 3],
    /// Train,val,test CV weights.
    #[arg(long, value_parser = parse_fractions, default_value = "1,1,1")]
    pub weights: [f64; 3],
    /// Allowed deviation of each split fraction from its target.
    #[arg(long, default_value_t = 0.10)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub filter: SliceFilterArgs,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: PreprocessOpts,
    #[command(flatten)]
    pub filter: SliceFilterArgs,
    /// Rebuild even when the cache matches.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Unprocessed slice image; it is segmented and framed like the corpus.
    #[arg(long)]
    pub query: PathBuf,
    /// Index written by `foramslice index`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Restrict to these volume ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub subset: Option<Vec<String>>,
    /// Restrict to these axes.
    #[arg(long, value_parser = parse_axis, value_delimiter = ',')]
    pub axes: Option<Vec<Axis>>,
    /// Results to report.
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    /// Candidates kept by the coarse stage.
    #[arg(long, default_value_t = 50)]
    pub coarse_k: usize,
    /// Coarse rotation sweep step in degrees.
    #[arg(long, default_value_t = 15)]
    pub rotation_step: u32,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Prediction table as ID=PATH (slice_id then one column per species).
    #[arg(long = "pred", value_parser = util::parse_named_path)]
    pub preds: Vec<(String, PathBuf)>,
    /// Classify one image; its file stem is the slice id.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Corpus index enabling the nearest-Hu baseline (needs --image).
    #[arg(long, requires = "image")]
    pub index: Option<PathBuf>,
    /// Ensemble config (JSON); default is the first provider with majority fallback.
    #[arg(long, conflicts_with = "majority")]
    pub ensemble: Option<PathBuf>,
    /// Plurality vote over all providers instead of the patch ensemble.
    #[arg(long)]
    pub majority: bool,
    /// Labels to list per slice.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Write combined probabilities as a prediction table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction table: slice_id then one probability column per species.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: slice_id<TAB>species.
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(long, value_parser = util::parse_metric_kind)]
    pub kind: foramslice_core::metrics::MetricKind,
    pub a: PathBuf,
    pub b: PathBuf,
    /// Segmentation sensitivity for the mask-based metrics (dice, hu).
    #[arg(long, default_value_t = 0.0)]
    pub sensitivity: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Corpus index to serve.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Phantom(a) => corpus::phantom(g, a),
        Command::Ingest(a) => corpus::ingest(g, a),
        Command::Preprocess(a) => corpus::preprocess(g, a),
        Command::Split(a) => corpus::split(g, a),
        Command::Index(a) => corpus::index(g, a),
        Command::Match(a) => analysis::match_query(g, a),
        Command::Classify(a) => analysis::classify(g, a),
        Command::Eval(a) => analysis::eval(g, a),
        Command::Metric(a) => analysis::metric(g, a),
        Command::Serve(a) => analysis::serve(g, a),
    }
}

fn subcommand_name(cli: &Cli) -> &'static str {
    match cli.command {
        Command::Phantom(_) => "phantom",
        Command::Ingest(_) => "ingest",
        Command::Preprocess(_) => "preprocess",
        Command::Split(_) => "split",
        Command::Index(_) => "index",
        Command::Match(_) => "match",
        Command::Classify(_) => "classify",
        Command::Eval(_) => "eval",
        Command::Metric(_) => "metric",
        Command::Serve(_) => "serve",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.global.verbose);
    let name = subcommand_name(&cli);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            let mut cmd = Cli::command();
            cmd.build();
            if let Some(sub) = cmd.find_subcommand_mut(name) {
                eprintln!("\n{}", sub.render_usage());
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::from(1)
        }
    }
}
