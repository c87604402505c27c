//! Experiment runner: one mode over one scenario, results rows, run
//! manifests and replay, parameter sweeps.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::uniform_layout;
use crate::canvas::{CanvasFrame, Detection};
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::metrics::{cer, map50, GtBox, MATCH_IOU};
use crate::pipeline::{
    detect_layout, effective_throughput, full_frame_detect, run_mosaic, FrameDetections, PipelineConfig,
};
use crate::simulation::{generate_scenario, Scenario, ScenarioSpec};
use crate::util::derive_seed;

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_COLUMNS: [&str; 10] =
    ["mode", "M", "b", "C", "map50", "per_camera_fps", "cfps", "cer", "utilization", "relaxations"];
pub const DEFAULT_FRAMES: usize = 40;

const KEY_FCFS: u64 = 0xfcf5;
const KEY_UNIFORM: u64 = 0x0401;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mosaic,
    Fcfs,
    Uniform,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Mosaic, Mode::Fcfs, Mode::Uniform];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mosaic => "mosaic",
            Mode::Fcfs => "fcfs",
            Mode::Uniform => "uniform",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mosaic" => Ok(Mode::Mosaic),
            "fcfs" => Ok(Mode::Fcfs),
            "uniform" => Ok(Mode::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

/// Where a run's scenario comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioSource {
    Preset { name: String, cameras: usize, frames: usize, seed: u64 },
    File { path: PathBuf },
}

impl ScenarioSource {
    pub fn load(&self) -> Result<Scenario> {
        match self {
            ScenarioSource::Preset { name, cameras, frames, seed } => {
                generate_scenario(&ScenarioSpec::preset(name, *cameras, *frames)?, *seed)
            }
            ScenarioSource::File { path } => Scenario::read_jsonl(BufReader::new(File::open(path)?)),
        }
    }
}

/// One results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: Mode,
    #[serde(rename = "M")]
    pub cameras: usize,
    pub b: usize,
    #[serde(rename = "C")]
    pub canvas: u32,
    pub map50: Option<f64>,
    pub per_camera_fps: f64,
    pub cfps: f64,
    pub cer: Option<f64>,
    pub utilization: f64,
    pub relaxations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub row: ResultRow,
    pub stats: crate::pipeline::RunStats,
    /// `[frame]` per camera, source coordinates.
    pub detections: Vec<FrameDetections>,
}

fn gt_boxes(scenario: &Scenario, cam: usize, frame: usize) -> Vec<GtBox> {
    scenario.gt(cam, frame).iter().map(|o| GtBox { bbox: o.bbox, class: o.class.clone() }).collect()
}

/// mAP@0.5 over every (frame, camera) image of the served cameras.
pub fn score_map50(scenario: &Scenario, detections: &[FrameDetections], cams: &[usize]) -> Option<f64> {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for (f, per_cam) in detections.iter().enumerate() {
        for &c in cams {
            dets.push(per_cam.get(&c).cloned().unwrap_or_default());
            gts.push(gt_boxes(scenario, c, f));
        }
    }
    map50(&dets, &gts)
}

/// Mean CER over every plate instance: the best-overlapping same-class
/// detection's text is read, a missed vehicle reads as the empty string.
pub fn score_cer(scenario: &Scenario, detections: &[FrameDetections], cams: &[usize]) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (f, per_cam) in detections.iter().enumerate() {
        for &c in cams {
            let dets: &[Detection] = per_cam.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            for o in scenario.gt(c, f) {
                let Some(plate) = &o.plate else { continue };
                let read = dets
                    .iter()
                    .filter(|d| d.class == o.class)
                    .map(|d| (iou(&d.bbox, &o.bbox), d))
                    .filter(|(v, _)| *v >= MATCH_IOU)
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .and_then(|(_, d)| d.text.as_deref())
                    .unwrap_or("");
                if let Ok(e) = cer(read, &plate.text) {
                    total += e;
                    n += 1;
                }
            }
        }
    }
    (n > 0).then(|| total / n as f64)
}

/// Runs `mode` over the first `cfg.cameras` cameras of `scenario`.
pub fn run_mode(scenario: &Scenario, mode: Mode, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.cameras > scenario.num_cameras() {
        return Err(Error::InvalidConfig(format!(
            "{} cameras requested, scenario has {}",
            cfg.cameras,
            scenario.num_cameras()
        )));
    }
    let m = cfg.cameras;
    let cams: Vec<usize> = (0..m).collect();
    let n = scenario.num_frames();
    let canvas_fps = cfg.batch as f64 / cfg.batch_latency()?;
    let (detections, stats, served, per_camera_fps, utilization, relaxations) = match mode {
        Mode::Mosaic => {
            let run = run_mosaic(scenario, cfg)?;
            let served = run.active.len();
            let tp = effective_throughput(&PipelineConfig { cameras: served, ..cfg.clone() })?;
            let u = &run.stats.utilization;
            let util = if u.is_empty() { 0.0 } else { u.iter().sum::<f64>() / u.len() as f64 };
            let relaxed = run.layouts.iter().flatten().filter(|l| l.relaxed).count();
            (run.detections, run.stats, served, tp.per_camera_fps, util, relaxed)
        }
        Mode::Fcfs => {
            let key = derive_seed(KEY_FCFS, &[cfg.seed]);
            let dets: Vec<FrameDetections> = (0..n)
                .into_par_iter()
                .map(|f| cams.iter().map(|&c| (c, full_frame_detect(scenario, c, f, cfg.canvas, key).0)).collect())
                .collect();
            let util = crate::baselines::fcfs_layout(scenario.frame_dims(0), cfg.canvas).utilization();
            (dets, Default::default(), m, canvas_fps / m as f64, util, 0)
        }
        Mode::Uniform => {
            let layout = uniform_layout(m as u32, scenario.frame_dims(0), cfg.canvas);
            let util = layout.utilization();
            let frame = CanvasFrame::without_raster(layout);
            let dets: Vec<FrameDetections> = (0..n)
                .into_par_iter()
                .map(|f| detect_layout(scenario, f, &frame, derive_seed(KEY_UNIFORM, &[cfg.seed, f as u64])).map(|d| d.0))
                .collect::<Result<_>>()?;
            (dets, Default::default(), m, canvas_fps, util, 0)
        }
    };
    let row = ResultRow {
        mode,
        cameras: served,
        b: cfg.batch,
        canvas: cfg.canvas,
        map50: score_map50(scenario, &detections, &cams),
        per_camera_fps,
        cfps: served as f64 * per_camera_fps,
        cer: score_cer(scenario, &detections, &cams),
        utilization,
        relaxations,
    };
    Ok(RunOutput { row, stats, detections })
}

pub fn write_csv(rows: &[ResultRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(r: impl std::io::Read) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Settings of a single run; mirrors the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub preset: String,
    /// Scenario file; takes precedence over the preset.
    pub scenario: Option<PathBuf>,
    pub frames: usize,
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mosaic,
            preset: "okutama-like".into(),
            scenario: None,
            frames: DEFAULT_FRAMES,
            seed: 0,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn source(&self) -> ScenarioSource {
        match &self.scenario {
            Some(path) => ScenarioSource::File { path: path.clone() },
            None => ScenarioSource::Preset {
                name: self.preset.clone(),
                cameras: self.pipeline.cameras,
                frames: self.frames,
                seed: self.seed,
            },
        }
    }

    /// The pipeline config with the run seed folded in.
    pub fn effective_pipeline(&self) -> PipelineConfig {
        PipelineConfig { seed: self.seed, ..self.pipeline.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub csv_schema_version: u32,
    pub csv_columns: Vec<String>,
    pub mode: Mode,
    pub seed: u64,
    pub scenario: ScenarioSource,
    pub pipeline: PipelineConfig,
}

impl Manifest {
    pub fn for_run(cfg: &RunConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            csv_schema_version: CSV_SCHEMA_VERSION,
            csv_columns: CSV_COLUMNS.iter().map(|c| c.to_string()).collect(),
            mode: cfg.mode,
            seed: cfg.seed,
            scenario: cfg.source(),
            pipeline: cfg.effective_pipeline(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if m.csv_schema_version != CSV_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported CSV schema version {}", m.csv_schema_version)));
        }
        Ok(m)
    }

    pub fn execute(&self) -> Result<RunOutput> {
        let scenario = self.scenario.load()?;
        run_mode(&scenario, self.mode, &self.pipeline)
    }
}

/// Runs the configured experiment; returns the manifest that reproduces it.
pub fn run_experiment(cfg: &RunConfig) -> Result<(Manifest, RunOutput)> {
    let manifest = Manifest::for_run(cfg);
    let out = manifest.execute()?;
    Ok((manifest, out))
}

/// One sweep point: a mode and its pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub mode: Mode,
    pub pipeline: PipelineConfig,
}

/// Runs independent points in parallel over a shared scenario; rows come
/// back in input order.
pub fn run_sweep(scenario: &Scenario, points: &[SweepPoint]) -> Result<Vec<ResultRow>> {
    points.par_iter().map(|p| run_mode(scenario, p.mode, &p.pipeline).map(|o| o.row)).collect()
}

/// Every mode at every camera count `1..=m_max`.
pub fn camera_sweep(base: &PipelineConfig, m_max: usize) -> Vec<SweepPoint> {
    (1..=m_max)
        .flat_map(|m| Mode::ALL.map(|mode| SweepPoint { mode, pipeline: PipelineConfig { cameras: m, ..base.clone() } }))
        .collect()
}

pub fn canvas_sweep(base: &PipelineConfig, mode: Mode, sides: &[u32]) -> Vec<SweepPoint> {
    sides.iter().map(|&c| SweepPoint { mode, pipeline: PipelineConfig { canvas: c, ..base.clone() } }).collect()
}

pub fn ps_period_sweep(base: &PipelineConfig, periods: &[f64]) -> Vec<SweepPoint> {
    periods
        .iter()
        .map(|&p| SweepPoint { mode: Mode::Mosaic, pipeline: PipelineConfig { ps_period: p, ..base.clone() } })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::Plate;
    use crate::geometry::BBox;

    fn small_cfg(m: usize) -> PipelineConfig {
        PipelineConfig { cameras: m, ..PipelineConfig::default() }
    }

    #[test]
    fn mode_round_trips() {
        for m in Mode::ALL {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("tiles".parse::<Mode>().is_err());
    }

    #[test]
    fn csv_header_matches_schema() {
        let row = ResultRow {
            mode: Mode::Fcfs,
            cameras: 1,
            b: 4,
            canvas: 640,
            map50: None,
            per_camera_fps: 23.5,
            cfps: 23.5,
            cer: Some(1.0),
            utilization: 0.5625,
            relaxations: 0,
        };
        let mut buf = Vec::new();
        write_csv(&[row.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), vec![row]);
    }

    #[test]
    fn baseline_throughput() {
        let s = generate_scenario(&ScenarioSpec::okutama_like(3, 3), 1).unwrap();
        let f = run_mode(&s, Mode::Fcfs, &small_cfg(3)).unwrap().row;
        let u = run_mode(&s, Mode::Uniform, &small_cfg(3)).unwrap().row;
        let canvas_fps = 4.0 / 0.17;
        assert!((f.cfps - canvas_fps).abs() < 1e-9);
        assert!((f.per_camera_fps - canvas_fps / 3.0).abs() < 1e-9);
        assert!((u.per_camera_fps - canvas_fps).abs() < 1e-9);
        assert!((u.cfps - 3.0 * canvas_fps).abs() < 1e-9);
    }

    #[test]
    fn cer_reads_matched_text() {
        let mut s = generate_scenario(&ScenarioSpec::ufpr_like(1, 1), 2).unwrap();
        let o = &mut s.objects[0][0][0];
        o.plate = Some(Plate { text: "ABC1234".into(), bbox: o.bbox });
        let gt = o.bbox;
        let mut hit = Detection::new(gt, "vehicle", 0.9, 0);
        hit.text = Some("ABC1234".into());
        let mut frame = FrameDetections::new();
        frame.insert(0, vec![hit.clone()]);
        assert_eq!(score_cer(&s, &[frame.clone()], &[0]), Some(0.0));
        frame.insert(0, vec![Detection::new(BBox::new(0.0, 0.0, 5.0, 5.0), "vehicle", 0.9, 0)]);
        assert_eq!(score_cer(&s, &[frame], &[0]), Some(1.0));
        assert_eq!(score_cer(&s, &[FrameDetections::new()], &[0]), Some(1.0));
    }

    #[test]
    fn too_many_cameras_rejected() {
        let s = generate_scenario(&ScenarioSpec::okutama_like(2, 2), 1).unwrap();
        assert!(matches!(run_mode(&s, Mode::Uniform, &small_cfg(3)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn manifest_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            frames: 14,
            seed: 5,
            pipeline: small_cfg(2),
            ..RunConfig::default()
        };
        let (manifest, out) = run_experiment(&cfg).unwrap();
        let path = dir.path().join("m.json");
        manifest.write(&path).unwrap();
        let again = Manifest::read(&path).unwrap();
        assert_eq!(again, manifest);
        let replay = again.execute().unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&[out.row], &mut a).unwrap();
        write_csv(&[replay.row], &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_file_round_trip() {
        let cfg = RunConfig { mode: Mode::Uniform, frames: 9, ..RunConfig::default() };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: RunConfig = toml::from_str("mode = \"fcfs\"\n[pipeline]\ncameras = 2\n").unwrap();
        assert_eq!(partial.mode, Mode::Fcfs);
        assert_eq!(partial.pipeline.cameras, 2);
        assert_eq!(partial.pipeline.canvas, 640);
    }

    #[test]
    fn camera_sweep_cardinality() {
        assert_eq!(camera_sweep(&PipelineConfig::default(), 6).len(), 18);
    }
}
