use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cit3d::pipeline::{run_coarse_cmd, run_export, run_refine_cmd, run_synth, RunConfig};

#[derive(Parser)]
#[command(name = "cit3d", version, about = "Single-image 3D reconstruction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render reference images of the synthetic scene
    Synth(Common),
    /// Fit the voxel field to the reference view
    Coarse(Common),
    /// Extract, texture and refine the point cloud
    Refine(Common),
    /// Write the refined cloud as a colored PLY
    Export(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed-order gradient accumulation for byte-identical outputs
    #[arg(long)]
    deterministic: bool,
}

fn configure_threads() -> cit3d::Result<()> {
    let Ok(v) = std::env::var("CIT3D_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| cit3d::Error::InvalidInput(format!("CIT3D_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| cit3d::Error::InvalidInput(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> cit3d::Result<()> {
    configure_threads()?;
    let (common, stage): (&Common, fn(&RunConfig) -> cit3d::Result<()>) = match &cli.command {
        Command::Synth(c) => (c, run_synth),
        Command::Coarse(c) => (c, |cfg| report(run_coarse_cmd(cfg)?)),
        Command::Refine(c) => (c, |cfg| report(run_refine_cmd(cfg)?)),
        Command::Export(c) => (c, run_export),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.seed = common.seed;
    cfg.deterministic = common.deterministic;
    stage(&cfg)
}

fn report(metrics: cit3d::pipeline::Metrics) -> cit3d::Result<()> {
    print!("{}", metrics.to_text());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error kind={} message=\"{}\"", e.kind(), msg.replace('"', "'"));
            ExitCode::FAILURE
        }
    }
}
