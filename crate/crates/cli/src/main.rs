//! `groundqa` runs, tunes and scores the grounded clinical QA pipelines.
//!
//! Exit status: 0 on success, 1 on unusable input or configuration,
//! 2 when some cases (or trials) failed and the rest were written.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groundqa::Subtask;

use commands::{Invocation, OptimizeArgs, ReportFormat, RunArgs, Status};
use settings::{BackendArg, GatewayArgs, Settings};

#[derive(Debug, Parser)]
#[command(name = "groundqa", version, about = "Grounded clinical question answering pipelines")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Model backend.
    #[arg(long, global = true, value_enum, env = "GROUNDQA_BACKEND")]
    backend: Option<BackendArg>,
    /// Script file or directory for the scripted backend.
    #[arg(long, global = true, env = "GROUNDQA_SCRIPT")]
    script: Option<PathBuf>,
    /// Response cache directory; required for cache-only replay.
    #[arg(long, global = true, env = "GROUNDQA_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// TOML file with pipeline settings and optional [optimizer] and [gateway] tables.
    #[arg(long, global = true, env = "GROUNDQA_CONFIG")]
    config: Option<PathBuf>,
    /// Cases processed concurrently (default: number of processors).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Model identifier sent upstream and used in cache keys.
    #[arg(long, global = true, env = "LLM_MODEL")]
    model: Option<String>,
    /// Override one setting, e.g. `tau_c=0.85` or `optimizer.max_trials=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn subtask(n: u8) -> Subtask {
    Subtask::from_number(n).expect("range checked by clap")
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one subtask over a dataset and write a submission.
    Run {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        subtask: u8,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of program overrides (`<name>.json`, `<stN>.optimized`).
        #[arg(long)]
        programs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Provenance directory (default: `runs/` next to the output).
        #[arg(long)]
        runs_dir: Option<PathBuf>,
        /// Essential sentences for subtask 3: `gold`, `predict`, or a subtask 2 submission path.
        #[arg(long, default_value = "gold")]
        evidence: String,
    },
    /// Search instructions and demos for one subtask on a development set.
    Optimize {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        subtask: u8,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        programs: Option<PathBuf>,
        #[arg(long, default_value = "programs")]
        out_dir: PathBuf,
        #[arg(long)]
        max_trials: Option<usize>,
        #[arg(long)]
        num_instruction_candidates: Option<usize>,
        #[arg(long)]
        num_demo_subsets: Option<usize>,
        #[arg(long)]
        judge_temperature: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a submission against gold annotations.
    Evaluate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        subtask: u8,
        #[arg(long)]
        submission: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        /// Also write the JSON report here.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Check a dataset's schema and/or a submission's output format.
    Validate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, requires = "subtask")]
        submission: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        subtask: Option<u8>,
    },
}

fn execute(cli: Cli, command_line: String) -> anyhow::Result<Status> {
    let mut sets = cli.common.set.clone();
    if let Command::Optimize {
        max_trials,
        num_instruction_candidates,
        num_demo_subsets,
        judge_temperature,
        seed,
        ..
    } = &cli.command
    {
        let flags = [
            ("max_trials", max_trials.map(|v| v.to_string())),
            ("num_instruction_candidates", num_instruction_candidates.map(|v| v.to_string())),
            ("num_demo_subsets", num_demo_subsets.map(|v| v.to_string())),
            ("judge_temperature", judge_temperature.map(|v| format!("{v:?}"))),
            ("seed", seed.map(|v| v.to_string())),
        ];
        sets.extend(
            flags
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| format!("optimizer.{k}={v}"))),
        );
    }
    let args = GatewayArgs {
        backend: cli.common.backend,
        script: cli.common.script.clone(),
        cache_dir: cli.common.cache_dir.clone(),
        model: cli.common.model.clone(),
        jobs: cli.common.jobs,
    };
    let settings = Settings::resolve(cli.common.config.as_deref(), args, &sets, &|k| std::env::var(k).ok())?;
    let inv = Invocation {
        settings: &settings,
        command_line,
    };
    match &cli.command {
        Command::Run {
            subtask: n,
            dataset,
            programs,
            out,
            runs_dir,
            evidence,
        } => commands::run(
            &inv,
            RunArgs {
                subtask: subtask(*n),
                dataset,
                programs: programs.as_deref(),
                out,
                runs_dir: runs_dir.as_deref(),
                evidence,
            },
        ),
        Command::Optimize {
            subtask: n,
            dev,
            programs,
            out_dir,
            ..
        } => commands::optimize(
            &inv,
            OptimizeArgs {
                subtask: subtask(*n),
                dev,
                programs: programs.as_deref(),
                out_dir,
            },
        ),
        Command::Evaluate {
            subtask: n,
            submission,
            gold,
            format,
            json_out,
        } => commands::evaluate(subtask(*n), submission, gold, *format, json_out.as_deref()),
        Command::Validate {
            dataset,
            submission,
            subtask: n,
        } => commands::validate(
            &settings,
            dataset.as_deref(),
            submission.as_deref().zip(n.map(subtask)),
        ),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Status::Failed as u8 } else { 0 });
        }
    };
    match execute(cli, command_line) {
        Ok(status) => ExitCode::from(status as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(Status::Failed as u8)
        }
    }
}
