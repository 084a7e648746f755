use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use hvs::datagen::{generate_dataset, DatasetParams, TrajectoryParams};
use hvs::panorama::read_manifest;
use hvs::FoVSpec;
use log::info;

/// Generate single-step imagination training samples from annotated scenes.
#[derive(Parser)]
#[command(name = "datagen", version)]
struct Args {
    /// Scene manifest (JSONL).
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 24)]
    trajectories: usize,
    /// Fraction of trajectories that never look at their designated target.
    #[arg(long, default_value_t = 0.5)]
    avoid_ratio: f64,
    /// Comma-separated prefix lengths; the longest sets the trajectory length.
    #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
    prefixes: Vec<usize>,
    #[arg(long, default_value_t = 100.0)]
    fov: f64,
    #[arg(long, default_value_t = 960)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let Some(&length) = args.prefixes.iter().max() else {
        bail!("--prefixes must not be empty");
    };
    let params = DatasetParams {
        trajectories: TrajectoryParams {
            n_trajectories: args.trajectories,
            avoid_ratio: args.avoid_ratio,
            length,
            fov: FoVSpec::from_horizontal(args.fov, args.width, args.height)?,
            seed: args.seed,
            ..TrajectoryParams::default()
        },
        prefix_lengths: args.prefixes,
    };
    let scenes = read_manifest(&args.scenes).with_context(|| format!("loading {}", args.scenes.display()))?;
    let summary = generate_dataset(&scenes, &params, &args.out)?;
    info!(
        "{} scenes, {} trajectories, {} samples ({:.3} avoiding) -> {}",
        summary.scenes,
        summary.trajectories,
        summary.samples,
        summary.avoiding_fraction,
        args.out.display()
    );
    Ok(())
}
