//! Command line front end: solve problems, run ablation variants, re-render
//! stored sessions and grade mark sheets.
//!
//! Exit codes: 0 on success (every session converged), 2 when a run finished
//! cleanly but exhausted its iteration budget, 1 on any fault.

mod commands;
mod provider_setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const FORMATS_HELP: &str = "\
File format versions:
  problem         loca-problem/1
  config          loca-config/1
  chain           loca-chain/1
  interpretation  loca-interpretation/1
  report          loca-report/1
  summary         loca-summary/1
  exchange log    loca-exchanges/1
  cassette        loca-cassette/1
  mock script     loca-script/1
  rubric          loca-rubric/1
  mark sheet      loca-marks/1
  scorecard       loca-scorecard/1

The live provider reads its credential from the LOCA_API_KEY environment
variable.";

#[derive(Parser)]
#[command(
    name = "loca",
    about = "Augment-and-review engine for hard scientific problems",
    after_long_help = FORMATS_HELP,
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one or more problems, writing a session directory per problem.
    Solve(SolveArgs),
    /// Run ablation variants of the engine on one problem.
    Ablate(AblateArgs),
    /// Render a stored session directory as a human-readable report.
    Replay(ReplayArgs),
    /// Grade mark sheets against rubrics and print the ranking table.
    Score(ScoreArgs),
    /// Resume an interrupted session from its directory.
    Resume(ResumeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ReviewModeArg {
    Atomic,
    Holistic,
}

#[derive(Clone, Copy, ValueEnum)]
enum AugmentModeArg {
    Structured,
    Generic,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Live,
    Replay,
    Mock,
}

/// Flags shared by the solving subcommands. Values given here override the
/// config file.
#[derive(Args)]
struct EngineFlags {
    /// Config file (TOML, loca-config/1).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Iteration budget for the augment-and-review loop.
    #[arg(long)]
    max_iterations: Option<u32>,
    /// Review the chain step by step or as a whole.
    #[arg(long, value_enum)]
    review_mode: Option<ReviewModeArg>,
    /// Structured step chains or generic prose refinement.
    #[arg(long, value_enum)]
    augment_mode: Option<AugmentModeArg>,
    /// Run the problem interpretation stage.
    #[arg(long, value_enum)]
    interpretation: Option<OnOff>,
    /// Completion backend.
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    /// Cassette file to replay (or record, in live mode with record = true).
    #[arg(long)]
    cassette: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Problem file(s) (loca-problem/1).
    #[arg(long = "problem", required = true)]
    problems: Vec<PathBuf>,
    /// Output directory; each session writes to <out>/<problem-id>.
    #[arg(long, default_value = "sessions")]
    out: PathBuf,
    /// Concurrent sessions when solving several problems.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args)]
struct AblateArgs {
    /// Problem file (loca-problem/1).
    #[arg(long)]
    problem: PathBuf,
    /// Variants to run: full, no-structured-augmentation,
    /// no-structured-review, no-atomic-review.
    #[arg(long = "variant", required = true)]
    variants: Vec<String>,
    /// Output directory; each variant writes to <out>/<variant>.
    #[arg(long, default_value = "ablation")]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineFlags,
}

#[derive(Args)]
struct ReplayArgs {
    /// Session directory to render.
    trace_dir: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Rubric file(s) (loca-rubric/1).
    #[arg(long = "rubric", required = true)]
    rubrics: Vec<PathBuf>,
    /// Mark sheets, one set per method: either `name=path,path` or bare
    /// paths for a single unnamed set.
    #[arg(long = "marks", required = true)]
    marks: Vec<String>,
}

#[derive(Args)]
struct ResumeArgs {
    /// Session directory to continue.
    trace_dir: PathBuf,
    #[command(flatten)]
    engine: EngineFlags,
}

fn main() -> ExitCode {
    // exit code 2 is reserved for clean-but-unconverged runs, so usage
    // errors map to 1 instead of clap's default 2
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let result = match cli.command {
        Command::Solve(args) => commands::solve(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Replay(args) => commands::replay(args),
        Command::Score(args) => commands::score(args),
        Command::Resume(args) => commands::resume(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
