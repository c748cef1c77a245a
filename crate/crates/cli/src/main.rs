//! `genesel` command-line tool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use genesel::{LabelColumn, Protocol, ZeroPolicy};

mod commands;
mod output;
mod settings;

#[derive(Parser, Debug)]
#[command(
    name = "genesel",
    version,
    about = "Two-stage gene selection: boosted-tree ranking followed by a genetic wrapper search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with planted informative genes as CSV
    Synth(SynthArgs),
    /// Rank genes by total boosting gain (stage 1 only)
    Rank(RankArgs),
    /// Run both stages and the evaluation, writing a JSON report
    Select(SelectArgs),
    /// Cross-validate the evaluation classifiers on a given gene subset
    Evaluate(EvaluateArgs),
    /// Wilcoxon signed-rank comparison of two directories of reports
    Compare(CompareArgs),
    /// Run the selection and write the genetic search trace as CSV
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV: header of gene ids plus one label column
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_name = "first|last")]
    label_column: Option<LabelColumn>,
    /// Cell value treated as missing, besides the empty string [default: NA]
    #[arg(long)]
    missing_token: Option<String>,
    /// Neighbours used to fill missing cells [default: 5]
    #[arg(long)]
    impute_neighbors: Option<usize>,
    /// Settings file (JSON object or key = value lines); flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct BoostArgs {
    /// Boosting rounds [default: 100]
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Row fraction drawn per round [default: 0.75]
    #[arg(long)]
    subsample: Option<f64>,
    /// Learning rate [default: 0.3]
    #[arg(long)]
    eta: Option<f64>,
    /// L2 penalty on leaf weights [default: 1]
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum split gain [default: 0]
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct GaArgs {
    /// Population size [default: 100]
    #[arg(long)]
    pop: Option<usize>,
    /// Generations [default: 50]
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long)]
    cx_prob: Option<f64>,
    /// Per-bit flip probability [default: 0.01]
    #[arg(long)]
    mut_prob: Option<f64>,
    #[arg(long)]
    tournament: Option<usize>,
    #[arg(long)]
    elitism: Option<usize>,
    /// Independent GA runs; the best is kept [default: 1]
    #[arg(long)]
    restarts: Option<usize>,
    /// Internal folds of the fitness estimate [default: 5]
    #[arg(long)]
    fitness_folds: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct EvalArgs {
    /// Neighbours for the KNN fitness and the knn classifier [default: 5]
    #[arg(long)]
    knn_k: Option<usize>,
    /// Cross-validation folds [default: 10]
    #[arg(long)]
    cv_k: Option<usize>,
    /// Cross-validation repetitions [default: 10]
    #[arg(long)]
    cv_rounds: Option<usize>,
    /// Comma-separated: linear_svm, gaussian_nb, knn [default: linear_svm,gaussian_nb]
    #[arg(long)]
    classifiers: Option<String>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    samples: usize,
    #[arg(long, default_value_t = 500)]
    genes: usize,
    #[arg(long, default_value_t = 10)]
    informative: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Fraction of cells written as missing
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "NA")]
    missing_token: String,
    #[arg(long)]
    out: PathBuf,
    /// Also write the planted gene indices and ids as JSON
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RankFormat {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct RankArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    boost: BoostArgs,
    #[arg(long, value_enum, default_value_t = RankFormat::Json)]
    format: RankFormat,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "paper|nested")]
    protocol: Option<Protocol>,
    #[command(flatten)]
    boost: BoostArgs,
    #[command(flatten)]
    ga: GaArgs,
    #[command(flatten)]
    eval: EvalArgs,
    /// JSON report path [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Markdown summary path [default: stdout when --out is given]
    #[arg(long)]
    markdown_out: Option<PathBuf>,
    /// GA trace CSV of the full-data selection
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Store stage wall-clock times in the JSON report (makes it run-dependent)
    #[arg(long)]
    record_timings: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Gene subset: indices or ids separated by commas or whitespace, or a report JSON
    #[arg(long)]
    genes: PathBuf,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Directory of reports for method A
    #[arg(long)]
    a: PathBuf,
    /// Directory of reports for method B
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = ZeroArg::Discard)]
    zero_policy: ZeroArg,
    /// Also write the results as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ZeroArg {
    Discard,
    Pratt,
}

impl From<ZeroArg> for ZeroPolicy {
    fn from(z: ZeroArg) -> Self {
        match z {
            ZeroArg::Discard => ZeroPolicy::Discard,
            ZeroArg::Pratt => ZeroPolicy::Pratt,
        }
    }
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    boost: BoostArgs,
    #[command(flatten)]
    ga: GaArgs,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error with the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<genesel::Error> for Failure {
    fn from(e: genesel::Error) -> Self {
        if e.is_io() {
            Failure::io(e.to_string())
        } else {
            Failure::invalid(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Rank(a) => commands::rank(a),
        Command::Select(a) => commands::select(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Trace(a) => commands::trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
