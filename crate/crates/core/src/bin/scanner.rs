use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use scanner::runner::{parse_seeds, Command, ExecOptions, RunConfig, Workspace};

#[derive(Parser)]
#[command(name = "scanner", version, about = "Two-stage span-candidate entity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file, or a preset name: conll2003, twitter2015, twitter2017, twitter_gmner, desk.
    #[arg(long, short, default_value = "desk")]
    config: String,
    /// Override a config field, e.g. `--set stage1.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Comma-separated seeds, e.g. `1,2,3,4,5`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Allow live Wikipedia lookups.
    #[arg(long, conflicts_with = "offline")]
    online: bool,
    /// Snapshot and cache only (the default).
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the BIO span detector.
    TrainStage1(Common),
    /// Collect cross-fold false candidates as non-entity examples.
    Harvest(Common),
    /// Attach wiki summaries and ranked objects to the training candidates.
    FetchKnowledge(Common),
    /// Train the prompt classifier and grounding head.
    TrainStage2(Common),
    /// Train students against the frozen models.
    Distill(Common),
    /// Detect, gather knowledge and recognize on the test split.
    Predict(Common),
    /// Score predictions; summarizes across seeds.
    Evaluate(Common),
    /// Label-noise benchmark for the distillation modes.
    NoiseBench {
        #[command(flatten)]
        common: Common,
        /// Exit nonzero unless the expected orderings hold.
        #[arg(long)]
        check: bool,
    },
    /// Finite-difference gradient checks of every head.
    GradCheck(Common),
    /// train-stage1 through evaluate.
    Run(Common),
    /// Print the resolved configuration.
    ShowConfig(Common),
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut overrides = common.set.clone();
    if let Some(s) = &common.seeds {
        overrides.push(format!("seeds={}", serde_json::to_string(&parse_seeds(s)?)?));
    }
    if let Some(o) = &common.output {
        overrides.push(format!("output_dir={}", serde_json::to_string(o)?));
    }
    if common.online {
        overrides.push("knowledge.online=true".into());
    }
    if common.offline {
        overrides.push("knowledge.online=false".into());
    }
    if let Some(t) = common.threads {
        overrides.push(format!("threads={t}"));
    }
    RunConfig::load(&common.config, &overrides).with_context(|| format!("loading config `{}`", common.config))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(lines: &[String]) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    for line in lines {
        match writeln!(out, "{line}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r?,
        }
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (command, common, check) = match cli.command {
        Cmd::TrainStage1(c) => (Command::TrainStage1, c, false),
        Cmd::Harvest(c) => (Command::Harvest, c, false),
        Cmd::FetchKnowledge(c) => (Command::FetchKnowledge, c, false),
        Cmd::TrainStage2(c) => (Command::TrainStage2, c, false),
        Cmd::Distill(c) => (Command::Distill, c, false),
        Cmd::Predict(c) => (Command::Predict, c, false),
        Cmd::Evaluate(c) => (Command::Evaluate, c, false),
        Cmd::NoiseBench { common, check } => (Command::NoiseBench, common, check),
        Cmd::GradCheck(c) => (Command::GradCheck, c, false),
        Cmd::Run(c) => (Command::Run, c, false),
        Cmd::ShowConfig(c) => {
            emit(&[serde_json::to_string_pretty(&resolve(&c)?)?])?;
            return Ok(true);
        }
    };
    let workspace = Workspace::new(resolve(&common)?)?;
    let outcome = workspace.execute(command, ExecOptions { check })?;
    emit(&outcome.lines)?;
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
