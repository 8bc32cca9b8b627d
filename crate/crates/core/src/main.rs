use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use citecontrast::eval_harness::Report;
use citecontrast::pipeline::{self, Pipeline, PipelineConfig, Stage};
use citecontrast::{Error, Result};

#[derive(Parser)]
#[command(
    name = "citecontrast",
    version,
    about = "Citation-neighborhood triple mining and encoder training"
)]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for stage artifacts; overrides `paths.work_dir`.
    #[arg(long, global = true)]
    stage_dir: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the edge list into a graph artifact.
    Ingest,
    /// Train citation-graph embeddings and score held-out edges.
    GraphTrain,
    /// Mine triples from graph-embedding neighborhoods.
    Mine,
    /// Train the document encoder on mined triples.
    EncodeTrain,
    /// Evaluate document vectors.
    Eval,
    /// Run every stage in order.
    All,
    /// Write the synthetic corpus and a matching config.
    Fixture {
        #[arg(long, default_value = "fixture")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let stage = match cli.command {
        Command::Fixture { out } => {
            let config = pipeline::write_fixture(&out, cli.seed.unwrap_or(0))?;
            println!("{}", config.display());
            return Ok(());
        }
        Command::Ingest => Stage::Ingest,
        Command::GraphTrain => Stage::GraphTrain,
        Command::Mine => Stage::Mine,
        Command::EncodeTrain => Stage::EncodeTrain,
        Command::Eval => Stage::Eval,
        Command::All => Stage::All,
    };
    let config_path = cli
        .config
        .ok_or_else(|| Error::Argument("--config is required for pipeline stages".into()))?;
    let mut cfg = PipelineConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let pipeline = Pipeline::new(cfg, base, cli.stage_dir.as_deref())?;
    for artifact in pipeline.run(stage)? {
        eprintln!("wrote {}", artifact.display());
    }
    if matches!(stage, Stage::Eval | Stage::All) {
        let path = pipeline.artifact(pipeline::REPORT);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let metrics = serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()))?;
        print!("{}", Report { metrics }.to_text());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
