use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bevswarm::camera::geometry_check;
use bevswarm::config::{RangeSelection, RunConfig};
use bevswarm::hlfdc::{transmission_ratio, HlfdcCodec, PacketHeader, RawMapMessage, WirePose};
use bevswarm::sim::{generate_scene, run_episode, CollabStrategy};
use clap::{Args, Parser, Subcommand};

/// Collaborative BEV perception for camera swarms.
#[derive(Parser, Debug)]
#[command(name = "bevswarm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one seeded episode and write report.csv, ledger.csv, summary.txt and scene.txt.
    Simulate(RunArgs),
    /// Print the transmission ratio for window sizes 1..32.
    CodecBench(RunArgs),
    /// Compare the closed-form depth prior against a ray-marching oracle.
    GeometryCheck {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<CollabStrategy>,
    /// HLFDC window size M.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_range)]
    range: Option<RangeSelection>,
}

fn parse_strategy(s: &str) -> std::result::Result<CollabStrategy, String> {
    CollabStrategy::from_name(s).ok_or_else(|| format!("expected one of none, early, late, full, hlfdc; got {s:?}"))
}

fn parse_range(s: &str) -> std::result::Result<RangeSelection, String> {
    RangeSelection::from_name(s).ok_or_else(|| format!("expected short, long or both; got {s:?}"))
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(m) = self.window {
            cfg.codec.window = m;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(f) = self.frames {
            cfg.scene.frames = f;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(r) = self.range {
            cfg.range = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let platforms = cfg.platforms()?;
    let scene = generate_scene(cfg.seed, &cfg.scene_params(&platforms))?;
    let result = run_episode(&scene, &platforms, cfg.strategy, &cfg.episode_config())?;

    scene.save(&cfg.out.join("scene.txt"))?;
    write(&cfg.out.join("config.toml"), &cfg.to_toml())?;
    result.report.write_csv(&cfg.out.join("report.csv"))?;
    result.ledger.write_csv(&cfg.out.join("ledger.csv"))?;
    let summary = format!(
        "seed: {}\nframes: {}\nplatforms: {}\n{}",
        cfg.seed,
        scene.frames.len(),
        platforms.len(),
        result.report.summary()
    );
    write(&cfg.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("wrote {}", cfg.out.display());
    Ok(())
}

/// Side of the square map encoded to measure wire sizes; 32 is the largest window.
const BENCH_SIDE: usize = 32;
const BENCH_CHANNELS: usize = 32;

fn codec_bench(cfg: &RunConfig) -> Result<()> {
    println!("M,ratio,formula,wire_ratio");
    let map = ndarray::Array3::<f32>::from_shape_fn((BENCH_SIDE, BENCH_SIDE, BENCH_CHANNELS), |(i, j, c)| {
        ((i * 31 + j * 17 + c * 7) % 13) as f32 / 13.0
    });
    let side = BENCH_SIDE as u16;
    let raw_header = PacketHeader::new(0, 0, 1, side, side, BENCH_CHANNELS as u16, WirePose::default())?;
    let raw = RawMapMessage::new(raw_header, map.clone())?;
    for m in [1usize, 2, 4, 8, 16, 32] {
        let codec = HlfdcCodec::seeded(BENCH_CHANNELS, cfg.codec.heads, cfg.codec.head_dim, m, cfg.seed)?;
        let header = PacketHeader::new(0, 0, m as u16, side, side, BENCH_CHANNELS as u16, WirePose::default())?;
        let packet = codec.encode(map.view(), header)?;
        let wire = packet.payload_bytes() as f64 / raw.payload_bytes() as f64;
        let m2 = (m * m) as f64;
        println!("{m},{:.3},{:.6},{:.6}", transmission_ratio(m), (1.0 + 1.0 / m2) / 2.0, wire);
    }
    Ok(())
}

fn geometry(trials: usize, seed: u64) -> ExitCode {
    const TOLERANCE: f64 = 1e-9;
    if trials == 0 {
        eprintln!("warning: zero trials, nothing compared");
        println!("geometry-check: PASS (vacuous)");
        return ExitCode::SUCCESS;
    }
    let r = geometry_check(trials, seed);
    println!(
        "trials {}  compared {}  horizon rays {}  horizon violations {}  max relative error {:.3e}",
        r.trials, r.compared, r.horizon_rays, r.horizon_violations, r.max_relative_error
    );
    if let Some((trial, u, v, h, err)) = r.worst {
        println!("worst: trial {trial} pixel ({u:.3}, {v:.3}) altitude {h:.3} m relative error {err:.3e}");
    }
    if r.passed(TOLERANCE) {
        println!("geometry-check: PASS");
        ExitCode::SUCCESS
    } else {
        println!("geometry-check: FAIL (tolerance {TOLERANCE:e})");
        ExitCode::FAILURE
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("BEVSWARM_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("BEVSWARM_THREADS={v:?} is not a count"))?;
    if n == 0 {
        bail!("BEVSWARM_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    match cli.command {
        Command::Simulate(args) => simulate(&args.resolve()?)?,
        Command::CodecBench(args) => codec_bench(&args.resolve()?)?,
        Command::GeometryCheck { trials, seed } => return Ok(geometry(trials, seed)),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
