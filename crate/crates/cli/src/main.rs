use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hvs::actor::{Actor, FollowerPolicy, RemoteActor, SweepPolicy};
use hvs::bench::{read_logs, run_bench, write_outputs};
use hvs::episode::EpisodeConfig;
use hvs::imagination::{Imaginator, OracleImaginator, RemoteImaginator, SamplingSchedule};
use hvs::mock::{MockActorMode, MockServer, MockState};
use hvs::panorama::{load_manifest, load_panorama, read_manifest, Renderer};
use hvs::plots::{build_heatmap, hypothesis_coords, HeatmapConfig, StepHistogram};
use hvs::wire::{ClientConfig, HttpClient};
use hvs::{FoVSpec, ViewPose};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "hvs", version, about = "Active visual search on 360-degree panoramas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the search benchmark over every target of every scene.
    Run(RunArgs),
    /// Density heatmap of hypothesized target directions from episode logs.
    Heatmap {
        #[arg(long)]
        logs: PathBuf,
        /// Kernel standard deviation in degrees.
        #[arg(long, default_value_t = 10.0)]
        sigma: f64,
        #[arg(long, default_value_t = 720)]
        width: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of the step at which successful episodes submitted.
    Hist {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_steps: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the oracle imaginator and a scripted actor over HTTP.
    ServeMock(ServeArgs),
    /// Render one perspective view from an equirectangular panorama.
    Render {
        #[arg(long)]
        pano: PathBuf,
        #[arg(long)]
        phi: f64,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        #[arg(long, default_value_t = 100.0)]
        fov: f64,
        #[arg(long, default_value_t = 960)]
        width: u32,
        #[arg(long, default_value_t = 720)]
        height: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a manifest of procedurally generated scenes.
    Synth {
        #[arg(long, default_value_t = 10)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Panorama width in pixels (height is half).
        #[arg(long, default_value_t = 2048)]
        width: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `oracle`, `none`, or `remote:<url>`.
    #[arg(long, default_value = "oracle")]
    imaginator: String,
    /// `follower`, `sweep`, or `remote:<url>`.
    #[arg(long, default_value = "follower")]
    actor: String,
    #[arg(long, default_value_t = 10)]
    max_steps: u32,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 100.0)]
    fov: f64,
    #[arg(long, default_value_t = 960)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    top_k: u32,
    #[arg(long, default_value_t = 0.7)]
    t1: f64,
    #[arg(long, default_value_t = 0.85)]
    decay: f64,
    #[arg(long, default_value_t = 3)]
    stochastic_steps: u32,
    /// Oracle noise at the reference temperature, in degrees.
    #[arg(long, default_value_t = 20.0)]
    sigma0: f64,
    /// Azimuth stride of the sweep actor.
    #[arg(long, default_value_t = 60.0)]
    stride: f64,
    /// A count `n` (seeds 0..n) or a comma-separated list.
    #[arg(long, default_value = "1")]
    seeds: String,
    /// Let the actor see whether the target is in view.
    #[arg(long)]
    detection: bool,
    /// Skip wall-clock latency so logs are byte-reproducible.
    #[arg(long)]
    no_latency: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MockActor {
    Follower,
    Sweep,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Seed used for requests that carry none.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 0.7)]
    t1: f64,
    #[arg(long, default_value_t = 100.0)]
    fov: f64,
    #[arg(long, default_value_t = 960)]
    width: u32,
    #[arg(long, default_value_t = 720)]
    height: u32,
    #[arg(long, value_enum, default_value_t = MockActor::Follower)]
    mock_actor: MockActor,
    #[arg(long, default_value_t = 60.0)]
    stride: f64,
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if s.contains(',') {
        return s
            .split(',')
            .map(|x| x.trim().parse::<u64>().with_context(|| format!("bad seed '{x}'")))
            .collect();
    }
    let n: u64 = s.parse().with_context(|| format!("bad seed count '{s}'"))?;
    if n == 0 {
        bail!("--seeds must name at least one seed");
    }
    Ok((0..n).collect())
}

fn remote_url(spec: &str) -> Option<&str> {
    spec.strip_prefix("remote:")
}

fn client() -> Result<HttpClient> {
    Ok(HttpClient::new(ClientConfig::from_env())?)
}

fn run(args: RunArgs) -> Result<()> {
    let fov = FoVSpec::from_horizontal(args.fov, args.width, args.height)?;
    let cfg = EpisodeConfig {
        max_steps: args.max_steps,
        fov,
        width: args.width,
        height: args.height,
        schedule: SamplingSchedule {
            k_candidates: args.k,
            top_k: args.top_k,
            t1: args.t1,
            decay: args.decay,
            stochastic_steps: args.stochastic_steps,
        },
        detection: args.detection,
        record_latency: !args.no_latency,
        ..EpisodeConfig::default()
    };
    let seeds = parse_seeds(&args.seeds)?;
    let scenes = load_manifest(&args.manifest).with_context(|| format!("loading {}", args.manifest.display()))?;
    info!("{} scenes, {} seeds", scenes.len(), seeds.len());

    let imaginator: Option<Box<dyn Imaginator>> = match args.imaginator.as_str() {
        "oracle" => Some(Box::new(OracleImaginator::new(args.sigma0, args.t1, fov))),
        "none" => None,
        other => match remote_url(other) {
            Some(url) => Some(Box::new(RemoteImaginator::new(url, client()?))),
            None => bail!("unknown imaginator '{other}'"),
        },
    };
    let actor: Box<dyn Actor> = match args.actor.as_str() {
        "follower" => Box::new(FollowerPolicy),
        "sweep" => Box::new(SweepPolicy { stride: args.stride }),
        other => match remote_url(other) {
            Some(url) => Box::new(RemoteActor::new(url, client()?)),
            None => bail!("unknown actor '{other}'"),
        },
    };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let outcome = run_bench(&scenes, imaginator.as_deref(), actor.as_ref(), &cfg, &seeds, workers)?;
    write_outputs(&outcome, &args.out)?;
    print!("{}", outcome.report.to_table());
    info!("wrote {}", args.out.display());
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let scenes = read_manifest(&args.manifest).with_context(|| format!("loading {}", args.manifest.display()))?;
    let fov = FoVSpec::from_horizontal(args.fov, args.width, args.height)?;
    let actor = match args.mock_actor {
        MockActor::Follower => MockActorMode::Follower,
        MockActor::Sweep => MockActorMode::Sweep { stride: args.stride },
    };
    let state = MockState::new(scenes, OracleImaginator::new(args.sigma0, args.t1, fov), actor, args.seed);
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse()?;
    let server = MockServer::spawn(state, addr)?;
    println!("listening on {}", server.url());
    server.join()?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(args) => run(args)?,
        Command::Heatmap {
            logs,
            sigma,
            width,
            out,
        } => {
            let (records, skipped) = read_logs(&logs)?;
            if skipped > 0 {
                warn!("skipped {skipped} malformed log lines");
            }
            let coords = hypothesis_coords(&records);
            if coords.is_empty() {
                warn!("no hypotheses in {}; heatmap is blank", logs.display());
            }
            let cfg = HeatmapConfig {
                width,
                height: width.div_ceil(2),
                sigma,
            };
            build_heatmap(&coords, &cfg).to_image().save(&out)?;
            info!("{} hypotheses -> {}", coords.len(), out.display());
        }
        Command::Hist { logs, max_steps, out } => {
            let (records, skipped) = read_logs(&logs)?;
            if skipped > 0 {
                warn!("skipped {skipped} malformed log lines");
            }
            let hist = StepHistogram::from_records(&records, max_steps);
            if hist.total() == 0 {
                warn!("no episodes in {}; nothing written", logs.display());
                return Ok(());
            }
            print!("{}", hist.to_csv());
            hist.to_image().save(&out)?;
        }
        Command::ServeMock(args) => serve(args)?,
        Command::Render {
            pano,
            phi,
            gamma,
            fov,
            width,
            height,
            out,
        } => {
            let panorama = load_panorama(&pano)?;
            let renderer = Renderer::new(FoVSpec::from_horizontal(fov, width, height)?, width, height);
            renderer.render(&panorama, &ViewPose::new(phi, gamma)?).save(&out)?;
        }
        Command::Synth {
            scenes,
            seed,
            width,
            out,
        } => {
            let path = hvs::synthetic::write_synthetic_manifest(&out, scenes, seed, width)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
