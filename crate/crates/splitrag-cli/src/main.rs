use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splitrag::config::PipelineConfig;
use splitrag::pipeline;
use splitrag::SplitRagError;

#[derive(Parser)]
#[command(
    name = "splitrag",
    version,
    about = "Partition a knowledge graph, allocate subgraphs to agents, and answer questions over it"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline configuration (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Dataset directory (kb.txt, schema.json, qa_*.jsonl).
    #[arg(long = "in", value_name = "DIR")]
    in_dir: PathBuf,
    /// Artifact directory, shared by all stages.
    #[arg(long = "out", value_name = "DIR")]
    out_dir: PathBuf,
    /// Write binary artifacts instead of JSON.
    #[arg(long)]
    compact: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Split the graph into question-aligned subgraphs.
    Partition(StageArgs),
    /// Group subgraphs under agents.
    Allocate(StageArgs),
    /// Build retrieval plans for the test questions.
    Route(StageArgs),
    /// Retrieve, fuse and answer.
    Answer(StageArgs),
    /// Score answers and measure search space.
    Eval(StageArgs),
}

fn run(command: &Command) -> splitrag::Result<pipeline::StageReport> {
    let (stage, args): (_, &StageArgs) = match command {
        Command::Partition(a) => (pipeline::cmd_partition as StageFn, a),
        Command::Allocate(a) => (pipeline::cmd_allocate as StageFn, a),
        Command::Route(a) => (pipeline::cmd_route as StageFn, a),
        Command::Answer(a) => (pipeline::cmd_answer as StageFn, a),
        Command::Eval(a) => (pipeline::cmd_eval as StageFn, a),
    };
    let cfg = PipelineConfig::load(&args.config)?;
    stage(&cfg, &args.in_dir, &args.out_dir, args.compact)
}

type StageFn = fn(
    &PipelineConfig,
    &std::path::Path,
    &std::path::Path,
    bool,
) -> splitrag::Result<pipeline::StageReport>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(report) => {
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            println!("{}", report.summary);
            println!("config hash: {}", report.config_hash);
            ExitCode::SUCCESS
        }
        Err(e @ SplitRagError::MissingArtifact { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ SplitRagError::ConfigHashMismatch { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
