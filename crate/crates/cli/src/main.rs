//! Subcommand orchestration of the full pipeline.
//!
//! Exit codes: 0 success, 2 config error, 3 stage failure, 4 corrupt run.
//! Failures print a single machine-parsable JSON line on stderr. Every
//! subcommand is re-runnable: with unchanged inputs a completed stage is a
//! no-op, and partial runs resume from the recorded stage hashes.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use recsaver::runstore::{RunStore, StoreError};

use config::PipelineConfig;
use stages::DumpKind;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Stage { stage: String, message: String },
    CorruptRun(String),
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::CorruptRun { stage } => CliError::CorruptRun(stage),
            StoreError::ConfigMismatch => CliError::Config(e.to_string()),
            other => CliError::Stage {
                stage: "runstore".to_string(),
                message: other.to_string(),
            },
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::CorruptRun(_) => 4,
        }
    }

    fn report(&self) -> String {
        let (kind, stage, message) = match self {
            CliError::Config(m) => ("config", None, m.clone()),
            CliError::Stage { stage, message } => ("stage", Some(stage.clone()), message.clone()),
            CliError::CorruptRun(stage) => (
                "corrupt-run",
                Some(stage.clone()),
                format!("stage '{stage}' fails its hash check"),
            ),
        };
        serde_json::json!({
            "error": {
                "kind": kind,
                "code": self.exit_code(),
                "stage": stage,
                "message": message,
            }
        })
        .to_string()
    }
}

#[derive(Parser)]
#[command(
    name = "recsaver",
    about = "Reasoning-augmented rating prediction pipeline",
    version
)]
struct Cli {
    /// Pipeline config file (TOML). Everything result-affecting lives here.
    #[arg(long, global = true, default_value = "recsaver.toml")]
    config: PathBuf,

    /// Run identifier; stages accumulate under <run-root>/<run-id>/.
    #[arg(long, global = true, default_value = "default")]
    run_id: String,

    /// Directory holding run directories.
    #[arg(long, global = true, default_value = "runs")]
    run_root: PathBuf,

    /// Resume an existing run (runs always resume safely; this flag makes
    /// the intent explicit).
    #[arg(long, global = true)]
    resume: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PromptKind {
    Task,
    Posthoc,
    Verification,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest review and metadata records into a history-filtered corpus.
    Ingest,
    /// Produce the balanced, user-disjoint train/test split.
    Split,
    /// Run rating prediction over the test split and compute task metrics.
    Predict,
    /// Generate the self-verified reference pool.
    GenRefs,
    /// Score predicted reasoning against the reference pool.
    ScoreReasoning,
    /// Collect teacher samples, filter them, and export fine-tuning records.
    ExportFt,
    /// Join human annotations with reasoning scores into alignment tables.
    Align,
    /// Assemble the summary report table.
    Report,
    /// Print a rendered prompt for inspection.
    DumpPrompt {
        #[arg(long)]
        example_id: String,
        #[arg(long, value_enum, default_value = "task")]
        kind: PromptKind,
        /// Which stage to look the example up in: train, test, or corpus.
        #[arg(long, default_value = "test")]
        split: String,
        /// Explanation text for kind=verification (scrubbed before render).
        #[arg(long)]
        explanation: Option<String>,
    },
}

fn open_store(cli: &Cli, config: &PipelineConfig) -> Result<RunStore, CliError> {
    Ok(RunStore::begin_or_resume(
        &cli.run_root,
        &cli.run_id,
        config.snapshot(),
    )?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = PipelineConfig::load(&cli.config).map_err(CliError::Config)?;
    let mut store = open_store(&cli, &config)?;
    match &cli.command {
        Command::Ingest => stages::run_ingest(&mut store, &config),
        Command::Split => stages::run_split(&mut store, &config),
        Command::Predict => stages::run_predict(&mut store, &config),
        Command::GenRefs => stages::run_gen_refs(&mut store, &config),
        Command::ScoreReasoning => stages::run_score_reasoning(&mut store, &config),
        Command::ExportFt => stages::run_export_ft(&mut store, &config),
        Command::Align => stages::run_align(&mut store, &config),
        Command::Report => stages::run_report(&mut store, &config),
        Command::DumpPrompt {
            example_id,
            kind,
            split,
            explanation,
        } => {
            let kind = match kind {
                PromptKind::Task => DumpKind::Task,
                PromptKind::Posthoc => DumpKind::Posthoc,
                PromptKind::Verification => DumpKind::Verification,
            };
            stages::run_dump_prompt(
                &store,
                &config,
                example_id,
                kind,
                split,
                explanation.as_deref(),
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}
