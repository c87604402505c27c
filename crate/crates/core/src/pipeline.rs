//! Stabilization / mosaic alternation, canvas construction and detection,
//! the analytic throughput model and the camera-count probe.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::fcfs_layout_for;
use crate::canvas::{compose, dedupe, translate_back, CanvasFrame, Detection, DEDUPE_IOU};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::motion::{
    classify_stationary, estimate_partial_affine, frame_diff_masks, GrayFrame, TrackStatus, Tracker,
    TrackerParams, DEFAULT_MOVE_THRESHOLD,
};
use crate::packer::{inverse_bin_pack, CanvasLayout, DeParams, PackItem};
use crate::scale_profiler::{
    cluster_sizes_seeded, derive_scales, merge_proximal_boxes, ScaleSet, SizeSample, DEFAULT_K_MAX,
    DEFAULT_MERGE_GAP,
};
use crate::setcover::{select_tiles, AppProfile, ProfileTable, Selection, SelectionParams};
use crate::simulation::{mock_detect, project_objects, GtObject, Scenario};
use crate::tiling::{GoodnessCriteria, TileBag, DEFAULT_OVERLAP};
use crate::util::derive_seed;

const KEY_PS: u64 = 0x9501;
const KEY_MOS: u64 = 0x3057;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub canvas: u32,
    pub batch: usize,
    pub seconds: f64,
}

/// Detector latency per batch, keyed by canvas side and batch size.
pub fn default_latency_table() -> Vec<LatencyEntry> {
    [
        (320, 1, 0.030),
        (320, 4, 0.075),
        (640, 1, 0.0526),
        (640, 4, 0.170),
        (960, 1, 0.110),
        (960, 4, 0.380),
        (1280, 1, 0.190),
        (1280, 4, 0.680),
    ]
    .into_iter()
    .map(|(canvas, batch, seconds)| LatencyEntry { canvas, batch, seconds })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub cameras: usize,
    pub canvas: u32,
    pub batch: usize,
    pub ps_frames: usize,
    /// Seconds between stabilization windows.
    pub ps_period: f64,
    /// Camera frame rate used to place stabilization windows; defaults to
    /// the scenario's.
    pub stream_fps: Option<f64>,
    pub latency_table: Vec<LatencyEntry>,
    /// Overrides the table lookup.
    pub batch_latency: Option<f64>,
    /// Defaults to the batch latency.
    pub construction_budget: Option<f64>,
    pub goodness: GoodnessCriteria,
    pub profile: AppProfile,
    pub profile_table: ProfileTable,
    pub de: DeParams,
    pub overlap: f64,
    pub diff_threshold: u8,
    /// Minimum motion blob area, raster pixels.
    pub diff_min_area: usize,
    pub size_merge_gap: f64,
    pub k_max: usize,
    pub gate: f64,
    pub move_threshold: f64,
    pub compose_raster: bool,
    pub strict: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cameras: 6,
            canvas: 640,
            batch: 4,
            ps_frames: 10,
            ps_period: 30.0,
            stream_fps: None,
            latency_table: default_latency_table(),
            batch_latency: None,
            construction_budget: None,
            goodness: GoodnessCriteria::default(),
            profile: AppProfile::Detection,
            profile_table: ProfileTable::default(),
            de: DeParams::default(),
            overlap: DEFAULT_OVERLAP,
            diff_threshold: 12,
            diff_min_area: 2,
            size_merge_gap: DEFAULT_MERGE_GAP,
            k_max: DEFAULT_K_MAX,
            gate: 50.0,
            move_threshold: DEFAULT_MOVE_THRESHOLD,
            compose_raster: true,
            strict: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.cameras == 0 || self.canvas == 0 || self.batch == 0 {
            return bad("cameras, canvas and batch must be positive".into());
        }
        if !(self.ps_period > 0.0) {
            return bad("ps_period must be positive".into());
        }
        if let Some(fps) = self.stream_fps {
            if !(fps > 0.0) {
                return bad("stream_fps must be positive".into());
            }
            if self.ps_frames as f64 > self.ps_period * fps {
                return bad(format!("{} PS frames do not fit a {}s period", self.ps_frames, self.ps_period));
            }
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1)".into());
        }
        if self.k_max == 0 || !(self.gate > 0.0) {
            return bad("k_max and gate must be positive".into());
        }
        self.batch_latency().map(|_| ())
    }

    pub fn batch_latency(&self) -> Result<f64> {
        if let Some(l) = self.batch_latency {
            return if l > 0.0 { Ok(l) } else { Err(Error::InvalidConfig("batch latency must be positive".into())) };
        }
        self.latency_table
            .iter()
            .find(|e| e.canvas == self.canvas && e.batch == self.batch)
            .map(|e| e.seconds)
            .ok_or_else(|| {
                Error::InvalidConfig(format!("no latency entry for canvas {} batch {}", self.canvas, self.batch))
            })
    }

    pub fn budget(&self) -> Result<f64> {
        match self.construction_budget {
            Some(b) => Ok(b),
            None => self.batch_latency(),
        }
    }

    fn selection_params(&self) -> SelectionParams {
        SelectionParams { goodness: self.goodness, profile: self.profile, table: self.profile_table }
    }

    fn tracker_params(&self) -> TrackerParams {
        TrackerParams { gate: self.gate, ..TrackerParams::default() }
    }

    /// Frames between the starts of consecutive stabilization windows.
    pub fn ps_every(&self, scenario_fps: f64) -> usize {
        let fps = self.stream_fps.unwrap_or(scenario_fps);
        ((self.ps_period * fps).round() as usize).max(self.ps_frames + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub canvas_fps: f64,
    pub per_camera_fps: f64,
    pub cfps: f64,
    pub ps_delay: f64,
}

/// Canvas rate `b / latency`; a stabilization window of `ps_frames` full
/// frames per camera costs `ps_frames * M / canvas_fps` seconds per period.
pub fn effective_throughput(cfg: &PipelineConfig) -> Result<Throughput> {
    let canvas_fps = cfg.batch as f64 / cfg.batch_latency()?;
    let m = cfg.cameras as f64;
    let ps_delay = cfg.ps_frames as f64 * m / canvas_fps;
    if ps_delay >= cfg.ps_period {
        return Err(Error::PsOverrun { delay: ps_delay, period: cfg.ps_period });
    }
    let per_camera_fps = (cfg.ps_frames as f64 + (cfg.ps_period - ps_delay) * canvas_fps) / cfg.ps_period;
    Ok(Throughput { canvas_fps, per_camera_fps, cfps: m * per_camera_fps, ps_delay })
}

/// Wall-clock model of the two-stage pipeline: canvases are built one after
/// another; the detector takes batches of `b` once the whole batch is built
/// and it is idle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub wall: f64,
    pub construction: f64,
    pub detector_busy: f64,
    /// Construction time hidden behind detector work.
    pub overlap: f64,
}

pub fn simulate_timeline(construction: &[f64], batch_latency: f64, b: usize) -> Timeline {
    let b = b.max(1);
    let mut built = 0.0;
    let mut det_free: f64 = 0.0;
    let mut busy = 0.0;
    let mut hidden = 0.0;
    for chunk in construction.chunks(b) {
        let start_build = built;
        built += chunk.iter().sum::<f64>();
        // building overlaps the previous batch until the detector frees up
        hidden += (det_free.min(built) - start_build).max(0.0);
        let start = det_free.max(built);
        det_free = start + batch_latency;
        busy += batch_latency;
    }
    let total: f64 = construction.iter().sum();
    Timeline { wall: det_free.max(built), construction: total, detector_busy: busy, overlap: hidden }
}

#[derive(Debug, Clone)]
pub struct CameraState {
    pub camera_id: usize,
    pub scales: ScaleSet,
    pub tracker: Tracker,
    pub bag: TileBag,
    pub prev: Option<GrayFrame>,
}

impl CameraState {
    pub fn fresh(camera_id: usize, dims: (u32, u32), cfg: &PipelineConfig) -> Self {
        let scales = ScaleSet::fallback();
        Self {
            camera_id,
            bag: TileBag::for_camera(camera_id, dims, &scales, cfg.overlap),
            scales,
            tracker: Tracker::new(cfg.tracker_params()),
            prev: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub ps_frames: usize,
    pub mos_frames: usize,
    /// Seconds per mosaic canvas.
    pub construction_times: Vec<f64>,
    pub dropped_detections: usize,
    pub coverage_checks: usize,
    pub coverage_misses: usize,
    pub degraded_masks: usize,
    pub relaxation_events: usize,
    pub admission_events: usize,
    pub utilization: Vec<f64>,
    pub tiles: Vec<usize>,
}

impl RunStats {
    pub fn median_construction(&self) -> Option<f64> {
        let mut v = self.construction_times.clone();
        crate::util::median(&mut v)
    }

    fn absorb(&mut self, o: &RunStats) {
        self.ps_frames += o.ps_frames;
        self.mos_frames += o.mos_frames;
        self.construction_times.extend_from_slice(&o.construction_times);
        self.dropped_detections += o.dropped_detections;
        self.coverage_checks += o.coverage_checks;
        self.coverage_misses += o.coverage_misses;
        self.degraded_masks += o.degraded_masks;
        self.relaxation_events += o.relaxation_events;
        self.admission_events += o.admission_events;
        self.utilization.extend_from_slice(&o.utilization);
        self.tiles.extend_from_slice(&o.tiles);
    }
}

/// Per-camera detections for one frame index, source coordinates.
pub type FrameDetections = BTreeMap<usize, Vec<Detection>>;

fn ego_estimate(scenario: &Scenario, cam: usize, frame: usize) -> Option<crate::geometry::Affine2D> {
    if frame == 0 {
        return None;
    }
    estimate_partial_affine(&scenario.ego_correspondences(cam, frame), true).ok()
}

/// Full-frame inference of one camera frame (letterboxed to the canvas).
pub fn full_frame_detect(scenario: &Scenario, cam: usize, frame: usize, canvas: u32, key: u64) -> (Vec<Detection>, usize) {
    let layout = fcfs_layout_for(cam, scenario.frame_dims(cam), canvas);
    detect_layout(scenario, frame, &CanvasFrame::without_raster(layout), derive_seed(key, &[cam as u64, frame as u64]))
        .map(|(mut d, dropped)| (d.remove(&cam).unwrap_or_default(), dropped))
        .expect("letterbox layout")
}

/// Mock inference over a laid-out canvas, translated back and deduplicated.
pub fn detect_layout(scenario: &Scenario, frame: usize, canvas: &CanvasFrame, key: u64) -> Result<(FrameDetections, usize)> {
    let cams: BTreeSet<usize> = canvas.mapping.iter().map(|m| m.camera_id).collect();
    let gt: BTreeMap<usize, &[GtObject]> = cams.iter().map(|&c| (c, scenario.gt(c, frame))).collect();
    let projections = project_objects(&gt, &canvas.mapping);
    let dets = mock_detect(&projections, &scenario.meta.detector, Some(&scenario.meta.ocr), key);
    let t = translate_back(&dets, canvas);
    Ok((dedupe(&t.per_camera, DEDUPE_IOU), t.dropped))
}

#[derive(Debug, Clone)]
pub struct PsOutcome {
    pub states: BTreeMap<usize, CameraState>,
    /// Indexed by position in the frame range.
    pub detections: Vec<FrameDetections>,
    pub stats: RunStats,
}

/// Stabilization over `frames`: full-frame detection, scale derivation from
/// the merged size samples, tracker rebuild with stationary classification.
pub fn run_ps_cycle(scenario: &Scenario, cams: &[usize], frames: Range<usize>, cfg: &PipelineConfig) -> Result<PsOutcome> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("stabilization frames"));
    }
    let per_cam: Vec<(usize, CameraState, Vec<Vec<Detection>>, usize)> = cams
        .par_iter()
        .map(|&cam| -> Result<_> {
            let mut tracker = Tracker::new(cfg.tracker_params());
            let mut samples: Vec<SizeSample> = Vec::new();
            let mut dets_per_frame = Vec::with_capacity(frames.len());
            let mut dropped = 0;
            for f in frames.clone() {
                let (dets, d) = full_frame_detect(scenario, cam, f, cfg.canvas, derive_seed(KEY_PS, &[cfg.seed]));
                dropped += d;
                let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
                samples.extend(merge_proximal_boxes(&boxes, cfg.size_merge_gap));
                let ego = if f > frames.start { ego_estimate(scenario, cam, f) } else { None };
                tracker.step(&boxes, ego.as_ref());
                dets_per_frame.push(dets);
            }
            let scales = if samples.is_empty() {
                ScaleSet::fallback()
            } else {
                let c = cluster_sizes_seeded(&samples, cfg.k_max, derive_seed(cfg.seed, &[cam as u64]))?;
                derive_scales(&c.centroids)
            };
            for t in &mut tracker.tracks {
                t.status = match classify_stationary(&t.history, cfg.move_threshold) {
                    TrackStatus::Stationary => TrackStatus::Stationary,
                    _ if t.frames_since_update > 0 => TrackStatus::LastSeen,
                    s => s,
                };
                t.extent = Some((t.bbox.width(), t.bbox.height()));
                let last = t.history.last().copied();
                t.history.clear();
                t.history.extend(last);
            }
            let dims = scenario.frame_dims(cam);
            let state = CameraState {
                camera_id: cam,
                bag: TileBag::for_camera(cam, dims, &scales, cfg.overlap),
                scales,
                tracker,
                prev: Some(scenario.render(cam, frames.end - 1)),
            };
            Ok((cam, state, dets_per_frame, dropped))
        })
        .collect::<Result<_>>()?;

    let mut detections = vec![FrameDetections::new(); frames.len()];
    let mut states = BTreeMap::new();
    let mut stats = RunStats { ps_frames: frames.len(), ..RunStats::default() };
    for (cam, state, dets, dropped) in per_cam {
        for (i, d) in dets.into_iter().enumerate() {
            detections[i].insert(cam, d);
        }
        stats.dropped_detections += dropped;
        states.insert(cam, state);
    }
    Ok(PsOutcome { states, detections, stats })
}

/// A built canvas awaiting inference.
#[derive(Debug, Clone)]
pub struct BuiltCanvas {
    pub frame: usize,
    pub canvas: CanvasFrame,
    pub selections: BTreeMap<usize, Selection>,
    pub construction_time: f64,
    pub stats: RunStats,
}

fn pack_cameras(
    selections: &BTreeMap<usize, Selection>,
    active: &mut Vec<usize>,
    cfg: &PipelineConfig,
    frame: usize,
    stats: &mut RunStats,
) -> Result<CanvasLayout> {
    loop {
        let items: Vec<PackItem> = active
            .iter()
            .filter_map(|c| selections.get(c))
            .flat_map(|s| s.choices.iter())
            .map(|c| PackItem::new(c.tile.camera_id, c.tile.id, c.tile.bbox, c.bounds, c.elasticity))
            .collect();
        if items.is_empty() {
            return Ok(CanvasLayout::empty(cfg.canvas));
        }
        let de = DeParams { seed: derive_seed(cfg.seed, &[frame as u64]), ..cfg.de };
        match inverse_bin_pack(&items, cfg.canvas, &de) {
            Ok(layout) => {
                if layout.relaxed {
                    stats.relaxation_events += 1;
                }
                return Ok(layout);
            }
            Err(e @ Error::AdmissionControl { .. }) => {
                if cfg.strict || active.len() <= 1 {
                    return Err(e);
                }
                let dropped = active.pop().expect("non-empty");
                stats.admission_events += 1;
                log::warn!("{e}; dropping camera {dropped}, {} remain", active.len());
            }
            Err(e) => return Err(e),
        }
    }
}

/// Mosaic construction for one frame index: motion masks, tracking, tile
/// selection per camera (in parallel), then packing and composition.
/// `active` may shrink under non-strict admission control.
pub fn build_canvas(
    scenario: &Scenario,
    frame: usize,
    states: &mut BTreeMap<usize, CameraState>,
    active: &mut Vec<usize>,
    cfg: &PipelineConfig,
) -> Result<BuiltCanvas> {
    let rs = scenario.meta.render_scale;
    let renders: BTreeMap<usize, GrayFrame> = active.par_iter().map(|&c| (c, scenario.render(c, frame))).collect();
    let started = Instant::now();
    let params = cfg.selection_params();
    let mut work: Vec<(&usize, &mut CameraState)> = states.iter_mut().filter(|(c, _)| active.contains(c)).collect();
    let results: Vec<(usize, Selection, usize, usize)> = work
        .par_iter_mut()
        .map(|(cam, st)| -> Result<_> {
            let cam = **cam;
            let cur = &renders[&cam];
            let blobs = match &st.prev {
                Some(prev) => frame_diff_masks(prev, cur, cfg.diff_threshold, cfg.diff_min_area)?,
                None => Vec::new(),
            };
            let native: Vec<BBox> = blobs
                .iter()
                .map(|b| BBox::new(b.x_min / rs, b.y_min / rs, b.x_max / rs, b.y_max / rs))
                .collect();
            let ego = ego_estimate(scenario, cam, frame);
            let out = st.tracker.step(&native, ego.as_ref());
            let (w, h) = scenario.frame_dims(cam);
            let bounds = BBox::new(0.0, 0.0, w as f64, h as f64);
            let sel = select_tiles(&st.bag, &st.scales, &bounds, &out.masks, &params)?;
            // every object touching a mask must sit in a chosen tile
            let (mut checks, mut misses) = (0, 0);
            for o in scenario.gt(cam, frame) {
                if sel.masks.iter().any(|m| m.intersects(&o.bbox)) {
                    checks += 1;
                    let shown = sel.choices.iter().any(|c| {
                        c.tile.bbox.intersection_area(&o.bbox) >= 0.5 * o.bbox.area()
                    });
                    misses += (!shown) as usize;
                }
            }
            st.prev = Some(cur.clone());
            Ok((cam, sel, checks, misses))
        })
        .collect::<Result<_>>()?;

    let mut stats = RunStats { mos_frames: 1, ..RunStats::default() };
    let mut selections = BTreeMap::new();
    for (cam, sel, checks, misses) in results {
        stats.coverage_checks += checks;
        stats.coverage_misses += misses;
        stats.degraded_masks += sel.degraded.len();
        selections.insert(cam, sel);
    }
    let layout = pack_cameras(&selections, active, cfg, frame, &mut stats)?;
    let canvas = if cfg.compose_raster {
        compose(&layout, &renders, rs)?
    } else {
        CanvasFrame::without_raster(layout)
    };
    let construction_time = started.elapsed().as_secs_f64();
    stats.construction_times.push(construction_time);
    stats.utilization.push(canvas.layout.utilization());
    stats.tiles.push(canvas.layout.placements.len());
    Ok(BuiltCanvas { frame, canvas, selections, construction_time, stats })
}

pub fn detect_canvas(scenario: &Scenario, built: &BuiltCanvas, cfg: &PipelineConfig) -> Result<(FrameDetections, usize)> {
    detect_layout(scenario, built.frame, &built.canvas, derive_seed(KEY_MOS, &[cfg.seed, built.frame as u64]))
}

/// One mosaic step: build, detect, translate back.
pub fn run_mos_step(
    scenario: &Scenario,
    frame: usize,
    states: &mut BTreeMap<usize, CameraState>,
    active: &mut Vec<usize>,
    cfg: &PipelineConfig,
) -> Result<(FrameDetections, BuiltCanvas)> {
    let mut built = build_canvas(scenario, frame, states, active, cfg)?;
    let (dets, dropped) = detect_canvas(scenario, &built, cfg)?;
    built.stats.dropped_detections += dropped;
    Ok((dets, built))
}

#[derive(Debug, Clone)]
pub struct MosaicRun {
    /// `[frame]`, per camera.
    pub detections: Vec<FrameDetections>,
    pub stats: RunStats,
    pub layouts: Vec<Option<CanvasLayout>>,
    /// Cameras still served at the end.
    pub active: Vec<usize>,
}

enum Job {
    Ready(Vec<FrameDetections>, RunStats),
    Canvas(Box<BuiltCanvas>),
}

/// Full mosaic run over the first `cfg.cameras` cameras. Construction runs on
/// the calling thread and hands canvases to a detector thread through a
/// queue of depth `b`.
pub fn run_mosaic(scenario: &Scenario, cfg: &PipelineConfig) -> Result<MosaicRun> {
    cfg.validate()?;
    let m = cfg.cameras.min(scenario.num_cameras());
    let n = scenario.num_frames();
    let cams: Vec<usize> = (0..m).collect();
    let every = cfg.ps_every(scenario.meta.cameras[0].fps);

    std::thread::scope(|s| -> Result<MosaicRun> {
        let (tx, rx) = sync_channel::<Job>(cfg.batch);
        let consumer = s.spawn(move || -> Result<(Vec<FrameDetections>, RunStats, Vec<Option<CanvasLayout>>)> {
            let mut dets = Vec::with_capacity(n);
            let mut layouts = Vec::with_capacity(n);
            let mut stats = RunStats::default();
            for job in rx {
                match job {
                    Job::Ready(d, st) => {
                        layouts.extend(std::iter::repeat_n(None, d.len()));
                        dets.extend(d);
                        stats.absorb(&st);
                    }
                    Job::Canvas(built) => {
                        let (d, dropped) = detect_canvas(scenario, &built, cfg)?;
                        stats.absorb(&built.stats);
                        stats.dropped_detections += dropped;
                        dets.push(d);
                        layouts.push(Some(built.canvas.layout.clone()));
                    }
                }
            }
            Ok((dets, stats, layouts))
        });

        let produce = || -> Result<Vec<usize>> {
            let mut active = cams.clone();
            let mut states: BTreeMap<usize, CameraState> =
                cams.iter().map(|&c| (c, CameraState::fresh(c, scenario.frame_dims(c), cfg))).collect();
            let mut f = 0;
            while f < n {
                if cfg.ps_frames > 0 && f % every == 0 {
                    let end = (f + cfg.ps_frames).min(n);
                    let ps = run_ps_cycle(scenario, &active, f..end, cfg)?;
                    states.extend(ps.states);
                    if tx.send(Job::Ready(ps.detections, ps.stats)).is_err() {
                        break;
                    }
                    f = end;
                    continue;
                }
                let built = build_canvas(scenario, f, &mut states, &mut active, cfg)?;
                if tx.send(Job::Canvas(Box::new(built))).is_err() {
                    break;
                }
                f += 1;
            }
            Ok(active)
        };
        let produced = produce();
        drop(tx);
        let consumed = consumer.join().expect("detector thread panicked");
        let active = produced?;
        let (detections, stats, layouts) = consumed?;
        Ok(MosaicRun { detections, stats, layouts, active })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraProbe {
    pub cameras: usize,
    pub median_construction: f64,
    pub packed_unrelaxed: bool,
    pub within_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxCameras {
    pub m_max: usize,
    pub probes: Vec<CameraProbe>,
    pub advice: Option<String>,
}

/// Largest M whose `b` canvases build within the budget and whose tiles
/// pack without relaxing any lower bound, probing `probe_frames` mosaic
/// frames after one stabilization window.
pub fn compute_max_cameras(scenario: &Scenario, cfg: &PipelineConfig, probe_frames: usize) -> Result<MaxCameras> {
    let budget = cfg.budget()?;
    let fcfs = Some("serve these streams one frame per inference (FCFS)".to_string());
    if budget <= 0.0 {
        return Ok(MaxCameras { m_max: 0, probes: Vec::new(), advice: fcfs });
    }
    let ps = cfg.ps_frames.max(1);
    if scenario.num_frames() < ps + probe_frames.max(1) {
        return Err(Error::InvalidSpec("probe scenario is too short".into()));
    }
    let mut probes = Vec::new();
    let mut m_max = 0;
    for m in 1..=scenario.num_cameras() {
        let cams: Vec<usize> = (0..m).collect();
        let probe_cfg = PipelineConfig { cameras: m, strict: true, ..cfg.clone() };
        let mut states = run_ps_cycle(scenario, &cams, 0..ps, &probe_cfg)?.states;
        let mut times = Vec::new();
        let mut unrelaxed = true;
        for f in ps..ps + probe_frames.max(1) {
            let mut active = cams.clone();
            match build_canvas(scenario, f, &mut states, &mut active, &probe_cfg) {
                Ok(b) => {
                    unrelaxed &= !b.canvas.layout.relaxed;
                    times.push(b.construction_time);
                }
                Err(Error::AdmissionControl { .. }) => {
                    unrelaxed = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let median = crate::util::median(&mut times).unwrap_or(f64::INFINITY);
        let within = median * cfg.batch as f64 <= budget;
        probes.push(CameraProbe { cameras: m, median_construction: median, packed_unrelaxed: unrelaxed, within_budget: within });
        if !(unrelaxed && within) {
            break;
        }
        m_max = m;
    }
    let advice = if m_max == 0 { fcfs } else { None };
    Ok(MaxCameras { m_max, probes, advice })
}
