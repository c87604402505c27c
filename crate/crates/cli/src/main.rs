use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mosaic::experiment::{
    camera_sweep, canvas_sweep, ps_period_sweep, run_experiment, run_sweep, write_csv, Manifest, Mode, RunConfig,
};
use mosaic::pipeline::{compute_max_cameras, effective_throughput};
use mosaic::setcover::AppProfile;
use mosaic::simulation::{generate_scenario, ScenarioSpec};

#[derive(Parser)]
#[command(name = "mosaic", version, about = "Canvas-based multi-camera inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mode over a scenario; writes a results CSV and a manifest.
    Run(RunArgs),
    /// Re-execute a run from its manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy/throughput trade-off table.
    Sweep(SweepArgs),
    /// Scenario files.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Largest camera count the construction budget and sizing bounds allow.
    MaxCameras(MaxCamerasArgs),
    /// Analytic throughput for a configuration.
    Throughput(PipelineArgs),
}

#[derive(Subcommand)]
enum ScenarioCommand {
    Generate {
        #[arg(long, default_value = "okutama-like")]
        preset: String,
        #[arg(long, default_value_t = 6)]
        cameras: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mosaic,
    Fcfs,
    Uniform,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mosaic => Mode::Mosaic,
            ModeArg::Fcfs => Mode::Fcfs,
            ModeArg::Uniform => Mode::Uniform,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Detection,
    Ocr,
}

impl From<ProfileArg> for AppProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Detection => AppProfile::Detection,
            ProfileArg::Ocr => AppProfile::Ocr,
        }
    }
}

/// Pipeline overrides; unset flags keep the config file or default value.
#[derive(Args, Clone, Default)]
struct PipelineArgs {
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    canvas: Option<u32>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    ps_frames: Option<usize>,
    /// Seconds between stabilization windows.
    #[arg(long)]
    ps_period: Option<f64>,
    #[arg(long)]
    stream_fps: Option<f64>,
    /// Seconds per detector batch; overrides the latency table.
    #[arg(long)]
    batch_latency: Option<f64>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    /// Fail instead of dropping cameras when tiles cannot be packed.
    #[arg(long)]
    strict: bool,
    /// Structured config file (TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    #[arg(long)]
    preset: Option<String>,
    /// Scenario file (JSON lines); takes precedence over the preset.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Results CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Cameras,
    Canvas,
    PsPeriod,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "cameras")]
    kind: SweepKind,
    /// Largest camera count in a camera sweep.
    #[arg(long, default_value_t = 6)]
    m_max: usize,
    /// Canvas sides for a canvas sweep.
    #[arg(long, value_delimiter = ',', default_value = "320,640,960")]
    sides: Vec<u32>,
    /// Periods (seconds) for a ps-period sweep.
    #[arg(long, value_delimiter = ',', default_value = "10,30,60")]
    periods: Vec<f64>,
    /// Mode for a canvas sweep.
    #[arg(long, value_enum, default_value = "mosaic")]
    mode: ModeArg,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaxCamerasArgs {
    /// Cameras available to the probe.
    #[arg(long, default_value_t = 8)]
    pool: usize,
    #[arg(long, default_value_t = 3)]
    probe_frames: usize,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn run_config(scenario: &ScenarioArgs, p: &PipelineArgs, mode: Option<ModeArg>) -> Result<RunConfig> {
    let mut cfg = match &p.config {
        Some(path) => RunConfig::from_toml_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(m) = mode {
        cfg.mode = m.into();
    }
    if let Some(v) = &scenario.preset {
        cfg.preset = v.clone();
    }
    if let Some(v) = &scenario.scenario {
        cfg.scenario = Some(v.clone());
    }
    if let Some(v) = scenario.frames {
        cfg.frames = v;
    }
    if let Some(v) = scenario.seed {
        cfg.seed = v;
    }
    let q = &mut cfg.pipeline;
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $(if let Some(v) = p.$flag { q.$field = v.into(); })* };
    }
    set!(cameras => cameras, batch => batch, canvas => canvas, ps_frames => ps_frames, ps_period => ps_period, overlap => overlap);
    if let Some(v) = p.profile {
        q.profile = v.into();
    }
    if p.stream_fps.is_some() {
        q.stream_fps = p.stream_fps;
    }
    if p.batch_latency.is_some() {
        q.batch_latency = p.batch_latency;
    }
    if p.budget.is_some() {
        q.construction_budget = p.budget;
    }
    q.strict |= p.strict;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn manifest_path(out: Option<&Path>, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| out.map(|o| {
        let mut s = o.as_os_str().to_owned();
        s.push(".manifest.json");
        PathBuf::from(s)
    }))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = run_config(&args.scenario, &args.pipeline, args.mode)?;
    let (manifest, out) = run_experiment(&cfg)?;
    if out.row.cameras < cfg.pipeline.cameras {
        log::warn!("admission control served {} of {} cameras", out.row.cameras, cfg.pipeline.cameras);
    }
    write_csv(&[out.row], output(args.out.as_deref())?)?;
    if let Some(path) = manifest_path(args.out.as_deref(), args.manifest.as_deref()) {
        manifest.write(&path)?;
    }
    Ok(())
}

fn cmd_replay(manifest: &Path, out: Option<&Path>) -> Result<()> {
    let m = Manifest::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let run = m.execute()?;
    write_csv(&[run.row], output(out)?)?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = run_config(&args.scenario, &args.pipeline, None)?;
    let pipeline = cfg.effective_pipeline();
    let points = match args.kind {
        SweepKind::Cameras => {
            if args.m_max == 0 {
                bail!("--m-max must be positive");
            }
            cfg.pipeline.cameras = args.m_max;
            camera_sweep(&pipeline, args.m_max)
        }
        SweepKind::Canvas => canvas_sweep(&pipeline, args.mode.into(), &args.sides),
        SweepKind::PsPeriod => ps_period_sweep(&pipeline, &args.periods),
    };
    let scenario = cfg.source().load()?;
    let rows = run_sweep(&scenario, &points)?;
    write_csv(&rows, output(args.out.as_deref())?)?;
    Ok(())
}

fn cmd_max_cameras(args: MaxCamerasArgs) -> Result<()> {
    let mut cfg = run_config(&args.scenario, &args.pipeline, None)?;
    cfg.pipeline.cameras = args.pool;
    let scenario = cfg.source().load()?;
    let r = compute_max_cameras(&scenario, &cfg.effective_pipeline(), args.probe_frames)?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    Ok(())
}

fn cmd_throughput(args: PipelineArgs) -> Result<()> {
    let cfg = run_config(&ScenarioArgs { preset: None, scenario: None, frames: None, seed: None }, &args, None)?;
    let t = effective_throughput(&cfg.pipeline)?;
    println!("{}", serde_json::to_string_pretty(&t)?);
    Ok(())
}

fn cmd_generate(preset: &str, cameras: usize, frames: usize, seed: u64, out: &Path) -> Result<()> {
    let s = generate_scenario(&ScenarioSpec::preset(preset, cameras, frames)?, seed)?;
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    s.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MOSAIC_THREADS") {
        let n: usize = v.parse().with_context(|| format!("MOSAIC_THREADS={v} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads()?;
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Replay { manifest, out } => cmd_replay(&manifest, out.as_deref()),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Scenario { command: ScenarioCommand::Generate { preset, cameras, frames, seed, out } } => {
            cmd_generate(&preset, cameras, frames, seed, &out)
        }
        Command::MaxCameras(a) => cmd_max_cameras(a),
        Command::Throughput(a) => cmd_throughput(a),
    }
}
