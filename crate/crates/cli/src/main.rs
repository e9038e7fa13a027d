use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::error;

use sinksam::config::{ConfigBuilder, PipelineConfig};
use sinksam::mock_server::{MockBehavior, MockServer};
use sinksam::pipeline;
use sinksam::synth::SynthParams;

/// Sinkhole mapping from elevation or depth rasters with box-prompted segmentation.
#[derive(Parser)]
#[command(name = "sinksam", version)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Pipeline config file (`key = value` lines).
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set tile.patch=256`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Worker threads for patch processing (same as `--set workers=N`).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fill depressions and write the filled surface and depth raster.
    Fill(ConfigArgs),
    /// Filter depressions and write per-patch box prompts.
    Prompts(ConfigArgs),
    /// Segment every patch and write the fused mask mosaic.
    Segment(ConfigArgs),
    /// Score the mask mosaic against ground truth; prints the report.
    Eval(ConfigArgs),
    /// fill, prompts, segment and (with eval.gt_mask set) eval.
    Run(ConfigArgs),
    /// Write a synthetic scene with a ready-to-run scene.conf.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Width and height in pixels.
        #[arg(long, default_value_t = 1024)]
        size: usize,
        /// Number of sinkholes.
        #[arg(short, long, default_value_t = 12)]
        n: usize,
        #[arg(long)]
        noise_amp: Option<f64>,
        #[arg(long)]
        slope: Option<f64>,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
    /// Serve a stand-in segmentation endpoint for testing the http backend.
    MockServer {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        /// box-fill:N, constant:N, drop-mask, wrong-size, wide-maxval,
        /// score-out-of-range, status:N, garbage, fail-first:N or delay-ms:N.
        #[arg(long, default_value = "box-fill:255")]
        behavior: String,
    },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut builder = match &args.config {
        Some(path) => ConfigBuilder::from_file(path)?,
        None => ConfigBuilder::new(),
    };
    let cwd = std::env::current_dir().context("cannot read the working directory")?;
    for o in &args.overrides {
        builder.apply_override(o, &cwd)?;
    }
    if let Some(n) = args.workers {
        builder.set("workers", &n.to_string(), Path::new(""))?;
    }
    Ok(builder.build()?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fill(a) => print_json(&pipeline::cmd_fill(&load_config(&a)?)?),
        Command::Prompts(a) => print_json(&pipeline::cmd_prompts(&load_config(&a)?)?),
        Command::Segment(a) => print_json(&pipeline::cmd_segment(&load_config(&a)?)?),
        Command::Eval(a) => print_json(&pipeline::cmd_eval(&load_config(&a)?)?),
        Command::Run(a) => match pipeline::cmd_run(&load_config(&a)?)? {
            Some(report) => print_json(&report),
            None => Ok(()),
        },
        Command::Synth {
            seed,
            size,
            n,
            noise_amp,
            slope,
            out_dir,
        } => {
            let mut params = SynthParams::new(seed, size, size, n);
            if let Some(a) = noise_amp {
                params.noise_amp = a;
            }
            if let Some(s) = slope {
                params.slope = s;
            }
            let scene = pipeline::cmd_synth(&params, &out_dir)?;
            println!("{}", out_dir.join(pipeline::SCENE_CONFIG_FILE).display());
            log::info!("{} sinkholes", scene.sinkholes.len());
            Ok(())
        }
        Command::MockServer { listen, behavior } => {
            let behavior: MockBehavior = behavior.parse()?;
            let server = MockServer::bind(&listen, behavior)?;
            println!("{}", server.url());
            server.wait();
            Ok(())
        }
    }
}

/// 2 for bad input or configuration, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sinksam::Error>() {
        Some(e) if e.is_input_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "error",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            // logging may be filtered off; the diagnostic must still reach stderr
            if !log::log_enabled!(log::Level::Error) {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
