use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cropheight::config::{self, PipelineConfig};
use cropheight::pipeline::{Pipeline, Stage, StageFailure};
use cropheight::Error;

#[derive(Parser, Debug)]
#[command(name = "cropheight", version, about = "Tall/short crop maps from lidar heights and optical time series")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Working directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Config override, `section.key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate the synthetic scenes.
    Synth,
    TrainHeight,
    FilterShots,
    ClassifyShots,
    FitHarmonics,
    Grid,
    TrainCells,
    Predict,
    Mosaic,
    Evaluate,
    Aggregate,
    /// Every stage in order.
    All,
    /// Print the resolved config as TOML.
    ShowConfig,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            Command::Synth => Stage::Synth,
            Command::TrainHeight => Stage::TrainHeight,
            Command::FilterShots => Stage::FilterShots,
            Command::ClassifyShots => Stage::ClassifyShots,
            Command::FitHarmonics => Stage::FitHarmonics,
            Command::Grid => Stage::Grid,
            Command::TrainCells => Stage::TrainCells,
            Command::Predict => Stage::Predict,
            Command::Mosaic => Stage::Mosaic,
            Command::Evaluate => Stage::Evaluate,
            Command::Aggregate => Stage::Aggregate,
            Command::All | Command::ShowConfig => return None,
        })
    }
}

fn report(stage: &str, err: &Error) -> ExitCode {
    let msg = err.to_string().replace('"', "'");
    eprintln!("error stage={stage} kind={} msg=\"{msg}\"", err.kind());
    match err {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn resolve(cli: &Cli) -> cropheight::Result<PipelineConfig> {
    let overrides = cli
        .set
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<cropheight::Result<Vec<_>>>()?;
    let mut cfg = config::load(cli.config.as_deref(), overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => return report("config", &e),
    };
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build() {
        Ok(p) => p,
        Err(e) => return report("config", &Error::Config(e.to_string())),
    };
    let pipeline = Pipeline::new(&cfg, cli.out.clone());
    let result: Result<(), StageFailure> = pool.install(|| match cli.command.stage() {
        Some(stage) => pipeline.run(stage),
        None => pipeline.run_all(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f.stage.name(), &f.error),
    }
}
