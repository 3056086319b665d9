use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tnt_cli::ablation::cmd_ablation;
use tnt_cli::analyze::{cmd_analyze, cmd_report};
use tnt_cli::train::cmd_train;
use tnt_cli::{CliError, ConfigError, RunConfig};
use tnt_core::ReportFormat;

/// Log filter variable, e.g. `TNT_LOG=info`.
const LOG_ENV: &str = "TNT_LOG";

#[derive(Parser)]
#[command(name = "tnt", version, about = "Budget-shaped GRPO simulator and reward-hacking analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy; writes step logs, checkpoints and a final report
    Train(RunArgs),
    /// Train under both reward modes with one seed and compare the runs
    Ablation(RunArgs),
    /// Compute metrics for a JSONL response corpus
    Analyze(AnalyzeArgs),
    /// Re-render a saved JSON report in another format
    Report(ReportArgs),
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: tnt_core::analysis::AnalysisError| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides train.seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Report formats, comma separated (overrides output.formats)
    #[arg(long, value_delimiter = ',', value_parser = parse_format)]
    format: Vec<ReportFormat>,
    /// Write every sampled trajectory to trajectories.jsonl
    #[arg(long)]
    dump_trajectories: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// JSONL corpus
    corpus: PathBuf,
    /// TOML configuration; only the [analysis] and [output] sections matter
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write reports into this directory instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report formats, comma separated (overrides output.formats)
    #[arg(long, value_delimiter = ',', value_parser = parse_format)]
    format: Vec<ReportFormat>,
}

#[derive(Args)]
struct ReportArgs {
    /// Report saved as JSON by `train`, `ablation` or `analyze`
    input: PathBuf,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
    /// Output file (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: Option<&PathBuf>) -> Result<(RunConfig, String), CliError> {
    match path {
        Some(p) => Ok((RunConfig::load(p)?, p.display().to_string())),
        None => Ok((RunConfig::default(), "<defaults>".to_string())),
    }
}

/// Applies command-line overrides and re-checks the result.
fn with_overrides(
    mut config: RunConfig,
    path: &str,
    out: Option<PathBuf>,
    seed: Option<u64>,
    formats: Vec<ReportFormat>,
    dump: bool,
) -> Result<RunConfig, CliError> {
    if let Some(out) = out {
        config.output.dir = out;
    }
    if let (Some(seed), Some(train)) = (seed, config.train.as_mut()) {
        train.seed = seed;
    }
    if !formats.is_empty() {
        config.output.formats = formats;
    }
    config.output.dump_trajectories |= dump;
    let problems = config.problems();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Invalid { path: path.to_string(), problems }.into())
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => {
            let (config, path) = load(Some(&a.config))?;
            let config = with_overrides(config, &path, a.out, a.seed, a.format, a.dump_trajectories)?;
            let run = cmd_train(&config, &path)?;
            log::info!("finished {} steps; outputs in {}", run.output.logs.len(), config.output.dir.display());
            Ok(())
        }
        Command::Ablation(a) => {
            let (config, path) = load(Some(&a.config))?;
            let config = with_overrides(config, &path, a.out, a.seed, a.format, a.dump_trajectories)?;
            let cmp = cmd_ablation(&config, &path)?;
            if let Some(r) = cmp.nonthinking_token_ratio {
                log::info!("naive/tnt non-thinking token ratio over the final window: {r:.2}");
            }
            Ok(())
        }
        Command::Analyze(a) => {
            let (config, path) = load(a.config.as_ref())?;
            let to_dir = a.out.is_some();
            let config = with_overrides(config, &path, a.out, None, a.format, false)?;
            cmd_analyze(&config, &a.corpus, to_dir, &mut io::stdout().lock()).map(|_| ())
        }
        Command::Report(a) => cmd_report(&a.input, a.format, a.out.as_deref(), &mut io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Train(_) => "train",
        Command::Ablation(_) => "ablation",
        Command::Analyze(_) => "analyze",
        Command::Report(_) => "report",
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record(name));
            ExitCode::from(e.exit_code())
        }
    }
}
