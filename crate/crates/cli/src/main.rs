use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;
use vig_core::cam::CamMethod;
use vig_core::config::{Preset, RunConfig};
use vig_core::pipeline::{self, RunDir};
use vig_core::Error;

/// Pillar damage classification pipeline: synthetic data, preprocessing,
/// VDCNet training, evaluation and class activation maps.
#[derive(Parser, Debug)]
#[command(name = "vig", version)]
struct Cli {
    /// TOML run configuration; presets fill in everything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; defaults to `$VIG_RUN_ROOT/<config hash>`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Scale preset the configuration is layered over.
    #[arg(long, global = true, value_parser = ["full", "half"])]
    preset: Option<String>,
    /// Worker threads for data generation, preprocessing and cross-validation folds.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Root for default run directories.
    #[arg(long, global = true, env = "VIG_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic pillar dataset.
    Synth,
    /// Crop around each pillar and split into quadrant tiles.
    Preprocess,
    /// Train on a 90/10 parent-grouped split.
    Train,
    /// Stratified k-fold cross-validation with a per-fold report.
    Crossval,
    /// Metrics of the trained model on the test split.
    Evaluate,
    /// Heatmaps, overlays and localization scores.
    Cam {
        #[arg(long, value_parser = ["cam", "grad-cam", "score-cam"])]
        method: Option<String>,
    },
    /// Wall time of Grad-CAM and Score-CAM per image.
    BenchmarkCam,
    /// Contact sheet of augmented tiles.
    AugmentPreview,
    /// Layer table and parameter count of the configured model.
    DescribeModel,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::UnsupportedArchitecture(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let preset: Option<Preset> = cli.preset.as_deref().map(str::parse).transpose()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p, preset)?,
        None => RunConfig::preset(preset.unwrap_or(Preset::Half)),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Value, Error> {
    let cfg = load_config(cli)?;
    if let Command::DescribeModel = cli.command {
        let (table, summary) = pipeline::describe_model(&cfg)?;
        print!("{table}");
        return Ok(summary);
    }
    let root = cli
        .run_dir
        .clone()
        .or_else(|| cfg.run.run_dir.clone())
        .unwrap_or_else(|| cli.run_root.join(cfg.hash()));
    let rd = RunDir::open(&root, cfg)?;
    let jobs = cli.jobs.max(1);
    match &cli.command {
        Command::Synth => pipeline::synth(&rd, jobs),
        Command::Preprocess => pipeline::preprocess(&rd, jobs),
        Command::Train => pipeline::train_cmd(&rd),
        Command::Crossval => {
            let v = pipeline::crossval_cmd(&rd, jobs)?;
            if let Ok(text) = std::fs::read_to_string(rd.crossval_dir().join("report.txt")) {
                print!("{text}");
            }
            Ok(v)
        }
        Command::Evaluate => pipeline::evaluate_cmd(&rd),
        Command::Cam { method } => {
            let m: CamMethod = match method {
                Some(s) => s.parse()?,
                None => rd.cfg.cam.method,
            };
            pipeline::cam_cmd(&rd, m)
        }
        Command::BenchmarkCam => pipeline::benchmark_cam_cmd(&rd),
        Command::AugmentPreview => pipeline::augment_preview_cmd(&rd),
        Command::DescribeModel => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            println!("{}", serde_json::json!({ "status": "error", "exit_code": code, "error": e.to_string() }));
            ExitCode::from(code)
        }
    }
}
