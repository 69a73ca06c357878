use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use stitch4d::bench::{
    capture_dataset, evaluate_all, generate_world, write_metrics_csv, Dataset, GenSpec, ModelSet,
};
use stitch4d::bridge::{backend_from_spec, bridge_dataset, BridgeVideos};
use stitch4d::camera::{PinholeCamera, PoseSE3};
use stitch4d::gradcheck::run_seeds;
use stitch4d::optim::write_log_csv;
use stitch4d::pipeline::{run_training, TrainConfig};
use stitch4d::render::render;
use stitch4d::scene_io::{load_scene, save_scene};

/// Minimum fraction of parameters whose analytic gradient must agree.
const GRADCHECK_PASS: f64 = 0.99;

#[derive(Debug, Parser)]
#[command(
    name = "stitch4d",
    version,
    about = "Multi-location panoramic 4D reconstruction toolkit"
)]
struct Cli {
    /// Worker threads for every parallel stage; defaults to all cores.
    #[arg(long, global = true, env = "STITCH4D_THREADS")]
    threads: Option<usize>,
    /// Seed for every random choice of the run; overrides the seed in input files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a teacher world and render the synthetic capture dataset.
    Gen(GenArgs),
    /// Synthesize bridge panoramas between consecutive capture locations.
    Bridge(BridgeArgs),
    /// Train a scene from a JSON training config.
    Train(TrainArgs),
    /// Render a scene at a list of poses.
    Render(RenderArgs),
    /// Evaluate a scene on every benchmark cell.
    Eval(EvalArgs),
    /// Compare analytic render gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Generation spec (JSON); defaults apply to missing fields or a missing file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BridgeArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Bridge positions per pair of locations.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// `reproject` or `external:<command>`.
    #[arg(long, default_value = "reproject")]
    backend: String,
    /// Output directory; defaults to `<data>/bridges`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run directory for `final.stz`, `log.csv` and the resolved config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Scene file (`.stz`).
    #[arg(long)]
    scene: PathBuf,
    /// JSON list of `{"camera": ..., "t": ...}` or `{"pose": ..., "t": ...}` entries.
    #[arg(long)]
    poses: PathBuf,
    /// Output directory for `frame_NNNN.png`.
    #[arg(long)]
    out: PathBuf,
    /// Image size for entries given as a bare pose.
    #[arg(long, default_value_t = 256)]
    res: usize,
    /// Field of view in degrees for entries given as a bare pose.
    #[arg(long, default_value_t = 90.0)]
    fov_deg: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Scene file (`.stz`).
    #[arg(long)]
    scene: PathBuf,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Metrics table (CSV).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Gaussians per random scene.
    #[arg(long, default_value_t = 20)]
    gaussians: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PoseEntry {
    Camera { camera: PinholeCamera, t: f64 },
    Pose { pose: PoseSE3, t: f64 },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn gen(args: &GenArgs, seed: Option<u64>) -> Result<()> {
    let mut spec: GenSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => GenSpec::default(),
    };
    if let Some(s) = seed {
        spec.world.seed = s;
    }
    let teacher = generate_world(&spec.world)?;
    let data = capture_dataset(&teacher, &spec)?;
    create_dir(&args.out)?;
    data.save(&args.out)?;
    println!(
        "gen: {} samples, {} panoramas, {} trajectory samples",
        data.manifest.samples.len(),
        data.manifest.panoramas.len(),
        data.manifest.trajectory.len()
    );
    Ok(())
}

fn bridge(args: &BridgeArgs) -> Result<()> {
    let data = Dataset::load(&args.data)?;
    let backend = backend_from_spec(&args.backend)?;
    let videos = bridge_dataset(&data, args.k, backend.as_ref())?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.data.join("bridges"));
    videos.save(&out)?;
    let holes: f64 = videos
        .frames
        .iter()
        .map(|f| {
            f.mask.data.iter().filter(|&&m| m == 0.0).count() as f64 / f.mask.data.len() as f64
        })
        .sum::<f64>()
        / videos.frames.len().max(1) as f64;
    println!(
        "bridge: {} panoramas, mean hole fraction {:.4}",
        videos.frames.len(),
        holes
    );
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn train(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainConfig = read_json(&args.config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    // paths in the config are relative to the config file
    let base = args.config.parent().unwrap_or(Path::new("."));
    cfg.data = resolve(base, &cfg.data);
    cfg.bridges = cfg.bridges.as_deref().map(|b| resolve(base, b));
    if let stitch4d::pipeline::InitSpec::Scene { path } = &mut cfg.init {
        *path = resolve(base, path);
    }
    let data = Dataset::load(&cfg.data)?;
    let bridges = cfg.bridges.as_deref().map(BridgeVideos::load).transpose()?;
    create_dir(&args.out)?;
    let resolved = serde_json::to_string_pretty(&cfg)?;
    fs::write(args.out.join("config.json"), resolved)?;
    match run_training(&data, bridges.as_ref(), &cfg) {
        Ok(outcome) => {
            save_scene(&outcome.scene, args.out.join("final.stz"))?;
            write_log_csv(&outcome.log, args.out.join("log.csv"))?;
            println!(
                "train: {} iterations, final loss {:.6}, {} Gaussians",
                outcome.losses.len(),
                outcome.losses.last().copied().unwrap_or(f64::NAN),
                outcome.scene.len()
            );
            Ok(())
        }
        Err(stitch4d::Error::Diverged {
            iteration,
            reason,
            last_good,
        }) => {
            save_scene(&last_good, args.out.join("last_good.stz"))?;
            bail!("training diverged at iteration {iteration}: {reason}; last good scene saved as last_good.stz")
        }
        Err(e) => Err(e.into()),
    }
}

fn render_poses(args: &RenderArgs) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let entries: Vec<PoseEntry> = read_json(&args.poses)?;
    create_dir(&args.out)?;
    let jobs: Vec<(PinholeCamera, f64)> = entries
        .into_iter()
        .map(|e| match e {
            PoseEntry::Camera { camera, t } => Ok((camera, t)),
            PoseEntry::Pose { pose, t } => Ok((
                PinholeCamera::square(pose, args.fov_deg.to_radians(), args.res)?,
                t,
            )),
        })
        .collect::<Result<_>>()?;
    use rayon::prelude::*;
    jobs.par_iter()
        .enumerate()
        .try_for_each(|(i, (cam, t))| -> Result<()> {
            render(&scene, cam, *t)
                .rgb
                .save_png(args.out.join(format!("frame_{i:04}.png")))?;
            Ok(())
        })?;
    println!("render: {} frames", jobs.len());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let data = Dataset::load(&args.data)?;
    let cells = evaluate_all(&ModelSet::single(scene), &data)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_metrics_csv(&cells, &args.out)?;
    print!("{}", stitch4d::bench::metrics_csv(&cells));
    Ok(())
}

fn gradcheck(args: &GradcheckArgs, seed: Option<u64>) -> Result<()> {
    let first = seed.unwrap_or(0);
    let report = run_seeds(first..first + args.seeds, args.gaussians, args.size)?;
    println!(
        "gradcheck: {} failures / {} params",
        report.failures, report.checked
    );
    if report.pass_fraction() < GRADCHECK_PASS {
        bail!(
            "gradcheck failed: {:.4} of parameters agree, need {GRADCHECK_PASS}",
            report.pass_fraction()
        );
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Gen(a) => gen(a, cli.seed),
        Command::Bridge(a) => bridge(a),
        Command::Train(a) => train(a, cli.seed),
        Command::Render(a) => render_poses(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a, cli.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
