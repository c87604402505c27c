//! Synthetic multi-camera scenarios, a geometry-driven mock detector and a
//! size-dependent mock OCR.
//!
//! Scenario files are JSON lines: a header `{"meta": {...}}` followed by one
//! record per (camera, frame), camera-major:
//!
//! ```text
//! {"camera_id":0,"frame_idx":0,"ego":[1.0,0.0,0.0,0.0],
//!  "objects":[{"id":3,"class":"person","bbox":[x0,y0,x1,y1],
//!              "plate":{"text":"ABC1234","bbox":[x0,y0,x1,y1]}}]}
//! ```
//!
//! `ego` is the similarity `[scale, rotation, tx, ty]` taking frame
//! `frame_idx - 1` to `frame_idx` (identity for frame 0). `plate` is
//! omitted when absent.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::canvas::{BinMapping, Detection};
use crate::error::{Error, Result};
use crate::geometry::{Affine2D, BBox};
use crate::motion::{Correspondence, GrayFrame};
use crate::util::{derive_seed, mix, rng_for};

pub const BACKGROUND: u8 = 60;
pub const PLATE_VALUE: u8 = 235;
pub const TEXTURE_CELL: f64 = 4.0;
pub const MIN_VISIBLE_FRACTION: f64 = 0.5;
const PLATE_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Undetectable below this effective height (px).
    pub h0: f64,
    /// Full confidence from this effective height (px).
    pub h1: f64,
    pub p_max: f64,
    pub deterministic: bool,
    pub seed: u64,
    /// Box jitter standard deviation as a fraction of box size.
    pub jitter: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            h0: 12.0,
            h1: 32.0,
            p_max: 0.98,
            deterministic: false,
            seed: 0,
            jitter: 0.02,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.h0 > 0.0 && self.h0 < self.h1) || !(0.0..=1.0).contains(&self.p_max) || self.jitter < 0.0 {
            return Err(Error::InvalidSpec(format!("detector model {self:?}")));
        }
        Ok(())
    }

    pub fn probability(&self, h_eff: f64) -> f64 {
        if h_eff < self.h0 {
            0.0
        } else if h_eff >= self.h1 {
            self.p_max
        } else {
            self.p_max * (h_eff - self.h0) / (self.h1 - self.h0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcrModel {
    /// Plates at least this tall (px) read perfectly.
    pub h_ocr: f64,
}

impl Default for OcrModel {
    fn default() -> Self {
        Self { h_ocr: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plate {
    pub text: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub class: String,
    pub bbox: BBox,
    pub plate: Option<Plate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub camera_id: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub version: u32,
    pub seed: u64,
    pub preset: String,
    /// Raster pixels per native pixel.
    pub render_scale: f64,
    pub frames: usize,
    pub cameras: Vec<CameraSpec>,
    pub detector: DetectorModel,
    pub ocr: OcrModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub meta: ScenarioMeta,
    /// `[camera][frame]`, frame-to-frame camera motion.
    pub ego: Vec<Vec<Affine2D>>,
    /// `[camera][frame]`
    pub objects: Vec<Vec<Vec<GtObject>>>,
}

/// Generation parameters. Sizes, speeds and amplitudes are in native pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub preset: String,
    pub cameras: usize,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub objects_per_camera: usize,
    pub class: String,
    /// `(w, h)` size classes drawn uniformly.
    pub size_clusters: Vec<(f64, f64)>,
    /// Relative half-width of the uniform size perturbation.
    pub size_jitter: f64,
    pub stationary_fraction: f64,
    pub speed: (f64, f64),
    pub ego_amplitude: f64,
    pub plate_fraction: f64,
    pub plate_height: (f64, f64),
    pub render_scale: f64,
    pub detector: DetectorModel,
    pub ocr: OcrModel,
}

impl ScenarioSpec {
    pub fn okutama_like(cameras: usize, frames: usize) -> Self {
        Self {
            preset: "okutama-like".into(),
            cameras,
            frames,
            width: 3840,
            height: 2160,
            fps: 30.0,
            objects_per_camera: 6,
            class: "person".into(),
            size_clusters: vec![(36.0, 39.0), (50.0, 54.0), (81.0, 44.0)],
            size_jitter: 0.08,
            stationary_fraction: 0.3,
            speed: (0.5, 2.0),
            ego_amplitude: 2.0,
            plate_fraction: 0.0,
            plate_height: (0.0, 0.0),
            render_scale: 0.25,
            // aerial people are a handful of pixels tall once the 4K frame is
            // letterboxed; the ramp is shifted down so full-frame inference
            // still sees some of them
            detector: DetectorModel { h0: 4.0, h1: 12.0, ..DetectorModel::default() },
            ocr: OcrModel::default(),
        }
    }

    pub fn ufpr_like(cameras: usize, frames: usize) -> Self {
        Self {
            preset: "ufpr-like".into(),
            cameras,
            frames,
            width: 1920,
            height: 1080,
            fps: 30.0,
            objects_per_camera: 1,
            class: "vehicle".into(),
            size_clusters: vec![(220.0, 170.0)],
            size_jitter: 0.09,
            stationary_fraction: 0.0,
            speed: (0.2, 1.0),
            ego_amplitude: 0.0,
            plate_fraction: 1.0,
            plate_height: (18.0, 22.0),
            render_scale: 0.5,
            detector: DetectorModel::default(),
            ocr: OcrModel::default(),
        }
    }

    pub fn preset(name: &str, cameras: usize, frames: usize) -> Result<Self> {
        match name {
            "okutama-like" => Ok(Self::okutama_like(cameras, frames)),
            "ufpr-like" => Ok(Self::ufpr_like(cameras, frames)),
            other => Err(Error::InvalidSpec(format!("unknown preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.cameras == 0 {
            return bad("at least one camera required");
        }
        if self.frames == 0 {
            return bad("at least one frame required");
        }
        if self.width == 0 || self.height == 0 || !(self.fps > 0.0) {
            return bad("frame dimensions and fps must be positive");
        }
        if self.objects_per_camera > 0 && self.size_clusters.is_empty() {
            return bad("size clusters required");
        }
        for &(w, h) in &self.size_clusters {
            let grow = 1.0 + self.size_jitter;
            if !(w > 0.0 && h > 0.0) || w * grow >= self.width as f64 || h * grow >= self.height as f64 {
                return bad("size cluster does not fit the frame");
            }
        }
        if !(0.0..1.0).contains(&self.size_jitter)
            || !(0.0..=1.0).contains(&self.stationary_fraction)
            || !(0.0..=1.0).contains(&self.plate_fraction)
        {
            return bad("fractions must lie in [0, 1]");
        }
        if self.speed.0 < 0.0 || self.speed.1 < self.speed.0 || self.ego_amplitude < 0.0 {
            return bad("speed range / ego amplitude");
        }
        if self.plate_fraction > 0.0 && !(self.plate_height.0 > 0.0 && self.plate_height.1 >= self.plate_height.0) {
            return bad("plate height range");
        }
        if !(self.render_scale > 0.0 && self.render_scale <= 1.0) {
            return bad("render scale must be in (0, 1]");
        }
        self.detector.validate()
    }
}

struct Walker {
    id: u64,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    speed: f64,
    heading: f64,
    plate: Option<(String, f64)>,
}

fn plate_text(rng: &mut impl Rng) -> String {
    (0..7)
        .map(|i| if i < 3 { (b'A' + rng.gen_range(0..26)) as char } else { (b'0' + rng.gen_range(0..10)) as char })
        .collect()
}

impl Walker {
    fn bbox(&self) -> BBox {
        BBox::from_xywh(self.x, self.y, self.w, self.h)
    }

    fn object(&self, class: &str) -> GtObject {
        let bbox = self.bbox();
        let plate = self.plate.as_ref().map(|(text, ph)| {
            let pw = (3.0 * ph).min(0.8 * self.w);
            let px = bbox.x_min + 0.5 * (self.w - pw);
            let py = bbox.y_min + 0.72 * self.h;
            Plate {
                text: text.clone(),
                bbox: BBox::from_xywh(px, py.min(bbox.y_max - ph), pw, *ph),
            }
        });
        GtObject { id: self.id, class: class.to_string(), bbox, plate }
    }

    fn advance(&mut self, rng: &mut impl Rng, turn: &Normal<f64>, shift: (f64, f64), fw: f64, fh: f64) {
        if self.speed > 0.0 {
            self.heading += turn.sample(rng);
            self.x += self.speed * self.heading.cos();
            self.y += self.speed * self.heading.sin();
        }
        self.x += shift.0;
        self.y += shift.1;
        let (max_x, max_y) = (fw - self.w, fh - self.h);
        if self.x < 0.0 || self.x > max_x {
            self.heading = std::f64::consts::PI - self.heading;
            self.x = self.x.clamp(0.0, max_x);
        }
        if self.y < 0.0 || self.y > max_y {
            self.heading = -self.heading;
            self.y = self.y.clamp(0.0, max_y);
        }
    }
}

fn ego_offset(t: usize, amp: f64, phase: f64) -> (f64, f64) {
    let t = t as f64;
    (amp * (0.05 * t + phase).sin(), amp * (0.037 * t + phase).cos())
}

/// Seeded random walks; identical `(spec, seed)` give identical scenarios.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let (fw, fh) = (spec.width as f64, spec.height as f64);
    let mut ego_all = Vec::with_capacity(spec.cameras);
    let mut objects_all = Vec::with_capacity(spec.cameras);
    let turn = Normal::new(0.0, 0.1).expect("valid sigma");
    for cam in 0..spec.cameras {
        let mut rng = rng_for(seed, &[0x5CE7, cam as u64]);
        let mut walkers: Vec<Walker> = Vec::with_capacity(spec.objects_per_camera);
        for k in 0..spec.objects_per_camera {
            let (cw, ch) = spec.size_clusters[rng.gen_range(0..spec.size_clusters.len())];
            let j = spec.size_jitter;
            let w = cw * rng.gen_range(1.0 - j..=1.0 + j);
            let h = ch * rng.gen_range(1.0 - j..=1.0 + j);
            // keep objects apart at spawn when possible
            let mut pos = (0.0, 0.0);
            for _ in 0..100 {
                pos = (rng.gen_range(0.0..fw - w), rng.gen_range(0.0..fh - h));
                let cand = BBox::from_xywh(pos.0, pos.1, w, h);
                if walkers.iter().all(|o| o.bbox().gap(&cand) > 20.0) {
                    break;
                }
            }
            let stationary = rng.gen::<f64>() < spec.stationary_fraction;
            let speed = if stationary || spec.speed.1 == 0.0 {
                0.0
            } else {
                rng.gen_range(spec.speed.0..=spec.speed.1)
            };
            let plate = if rng.gen::<f64>() < spec.plate_fraction {
                let text = plate_text(&mut rng);
                Some((text, rng.gen_range(spec.plate_height.0..=spec.plate_height.1)))
            } else {
                None
            };
            walkers.push(Walker {
                id: (cam * 1000 + k) as u64,
                x: pos.0,
                y: pos.1,
                w,
                h,
                speed,
                heading: rng.gen_range(0.0..std::f64::consts::TAU),
                plate,
            });
        }
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut ego = Vec::with_capacity(spec.frames);
        let mut frames = Vec::with_capacity(spec.frames);
        for f in 0..spec.frames {
            let shift = if f == 0 || spec.ego_amplitude == 0.0 {
                (0.0, 0.0)
            } else {
                let (a, b) = (ego_offset(f, spec.ego_amplitude, phase), ego_offset(f - 1, spec.ego_amplitude, phase));
                (a.0 - b.0, a.1 - b.1)
            };
            ego.push(Affine2D::translation(shift.0, shift.1));
            if f > 0 {
                for wk in &mut walkers {
                    wk.advance(&mut rng, &turn, shift, fw, fh);
                }
            }
            frames.push(walkers.iter().map(|w| w.object(&spec.class)).collect());
        }
        ego_all.push(ego);
        objects_all.push(frames);
    }
    let cameras = (0..spec.cameras)
        .map(|camera_id| CameraSpec { camera_id, width: spec.width, height: spec.height, fps: spec.fps })
        .collect();
    Ok(Scenario {
        meta: ScenarioMeta {
            version: 1,
            seed,
            preset: spec.preset.clone(),
            render_scale: spec.render_scale,
            frames: spec.frames,
            cameras,
            detector: DetectorModel { seed: derive_seed(seed, &[0xDE7]), ..spec.detector },
            ocr: spec.ocr,
        },
        ego: ego_all,
        objects: objects_all,
    })
}

#[derive(Serialize, Deserialize)]
struct PlateRecord {
    text: String,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    id: u64,
    class: String,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plate: Option<PlateRecord>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    camera_id: usize,
    frame_idx: usize,
    ego: [f64; 4],
    objects: Vec<ObjectRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: ScenarioMeta,
}

fn arr(b: &BBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

fn from_arr(a: [f64; 4]) -> BBox {
    BBox::new(a[0], a[1], a[2], a[3])
}

impl Scenario {
    pub fn num_cameras(&self) -> usize {
        self.meta.cameras.len()
    }

    pub fn num_frames(&self) -> usize {
        self.meta.frames
    }

    pub fn frame_dims(&self, camera: usize) -> (u32, u32) {
        let c = &self.meta.cameras[camera];
        (c.width, c.height)
    }

    pub fn gt(&self, camera: usize, frame: usize) -> &[GtObject] {
        &self.objects[camera][frame]
    }

    /// First `m` cameras only.
    pub fn truncated(&self, m: usize) -> Result<Scenario> {
        if m == 0 || m > self.num_cameras() {
            return Err(Error::InvalidSpec(format!("{m} cameras requested, scenario has {}", self.num_cameras())));
        }
        let mut s = self.clone();
        s.meta.cameras.truncate(m);
        s.ego.truncate(m);
        s.objects.truncate(m);
        Ok(s)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &Header { meta: self.meta.clone() })?;
        w.write_all(b"\n")?;
        for (cam, frames) in self.objects.iter().enumerate() {
            for (f, objs) in frames.iter().enumerate() {
                let e = self.ego[cam][f];
                let rec = FrameRecord {
                    camera_id: self.meta.cameras[cam].camera_id,
                    frame_idx: f,
                    ego: [e.scale, e.rotation, e.tx, e.ty],
                    objects: objs
                        .iter()
                        .map(|o| ObjectRecord {
                            id: o.id,
                            class: o.class.clone(),
                            bbox: arr(&o.bbox),
                            plate: o.plate.as_ref().map(|p| PlateRecord { text: p.text.clone(), bbox: arr(&p.bbox) }),
                        })
                        .collect(),
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Scenario> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::EmptyInput("scenario file"))??;
        let Header { meta } = serde_json::from_str(&header)?;
        let n_cam = meta.cameras.len();
        if n_cam == 0 || meta.frames == 0 {
            return Err(Error::InvalidSpec("scenario header lists no cameras or frames".into()));
        }
        let index: BTreeMap<usize, usize> = meta.cameras.iter().enumerate().map(|(i, c)| (c.camera_id, i)).collect();
        let mut ego = vec![vec![None; meta.frames]; n_cam];
        let mut objects = vec![vec![None; meta.frames]; n_cam];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameRecord = serde_json::from_str(&line)?;
            let cam = *index
                .get(&rec.camera_id)
                .ok_or_else(|| Error::InvalidSpec(format!("record for unknown camera {}", rec.camera_id)))?;
            if rec.frame_idx >= meta.frames {
                return Err(Error::InvalidSpec(format!("frame index {} out of range", rec.frame_idx)));
            }
            let [s, r, tx, ty] = rec.ego;
            if !(s > 0.0) {
                return Err(Error::InvalidSpec("ego scale must be positive".into()));
            }
            ego[cam][rec.frame_idx] = Some(Affine2D { scale: s, rotation: r, tx, ty });
            let dims = &meta.cameras[cam];
            let bounds = BBox::new(0.0, 0.0, dims.width as f64, dims.height as f64);
            let objs: Vec<GtObject> = rec
                .objects
                .into_iter()
                .map(|o| GtObject {
                    id: o.id,
                    class: o.class,
                    bbox: from_arr(o.bbox),
                    plate: o.plate.map(|p| Plate { text: p.text, bbox: from_arr(p.bbox) }),
                })
                .collect();
            if let Some(o) = objs.iter().find(|o| !bounds.contains(&o.bbox) || o.bbox.area() <= 0.0) {
                return Err(Error::InvalidSpec(format!("object {} outside its frame", o.id)));
            }
            objects[cam][rec.frame_idx] = Some(objs);
        }
        let missing = || Error::InvalidSpec("scenario is missing (camera, frame) records".into());
        let ego = ego
            .into_iter()
            .map(|v| v.into_iter().collect::<Option<Vec<_>>>().ok_or_else(missing))
            .collect::<Result<Vec<_>>>()?;
        let objects = objects
            .into_iter()
            .map(|v| v.into_iter().collect::<Option<Vec<_>>>().ok_or_else(missing))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario { meta, ego, objects })
    }

    /// Flat background with hash-textured objects and bright plates, at
    /// `render_scale`.
    pub fn render(&self, camera: usize, frame: usize) -> GrayFrame {
        let (w, h) = self.frame_dims(camera);
        let rs = self.meta.render_scale;
        let (rw, rh) = (((w as f64) * rs).round() as usize, ((h as f64) * rs).round() as usize);
        let mut img = GrayFrame::filled(rw, rh, BACKGROUND);
        let span = |lo: f64, hi: f64, n: usize| {
            // raster pixels whose centers fall inside [lo, hi)
            let a = ((lo * rs) - 0.5).ceil().max(0.0) as usize;
            let b = (((hi * rs) - 0.5).ceil().max(0.0) as usize).min(n);
            a..b
        };
        for o in self.gt(camera, frame) {
            let b = o.bbox;
            let seed = mix(o.id ^ self.meta.seed.rotate_left(17));
            for py in span(b.y_min, b.y_max, rh) {
                let ny = (py as f64 + 0.5) / rs;
                let cy = ((ny - b.y_min) / TEXTURE_CELL).floor() as u64;
                for px in span(b.x_min, b.x_max, rw) {
                    let nx = (px as f64 + 0.5) / rs;
                    let cx = ((nx - b.x_min) / TEXTURE_CELL).floor() as u64;
                    let v = 90 + (mix(seed ^ (cx << 20) ^ cy) % 130) as u8;
                    img.set(px, py, v);
                }
            }
            if let Some(p) = &o.plate {
                for py in span(p.bbox.y_min, p.bbox.y_max, rh) {
                    for px in span(p.bbox.x_min, p.bbox.x_max, rw) {
                        img.set(px, py, PLATE_VALUE);
                    }
                }
            }
        }
        img
    }

    /// Noisy point matches between frames `frame - 1` and `frame`, with a
    /// tenth of them gross outliers.
    pub fn ego_correspondences(&self, camera: usize, frame: usize) -> Vec<Correspondence> {
        let (w, h) = self.frame_dims(camera);
        let t = self.ego[camera][frame];
        let mut rng = rng_for(self.meta.seed, &[0xE90, camera as u64, frame as u64]);
        let noise = Normal::new(0.0, 0.25).expect("valid sigma");
        (0..30)
            .map(|i| {
                let src = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
                let dst = if i % 10 == 9 {
                    (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64))
                } else {
                    let (x, y) = t.apply_point(src.0, src.1);
                    (x + noise.sample(&mut rng), y + noise.sample(&mut rng))
                };
                (src, dst)
            })
            .collect()
    }
}

/// A ground-truth object seen through one canvas bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub camera_id: usize,
    pub bin: usize,
    pub object: GtObject,
    /// Visible part of the object, source coordinates.
    pub window: BBox,
    pub canvas_box: BBox,
    pub native_height: f64,
    pub rendered_height: f64,
    /// Vertical bin scale (canvas px per native px).
    pub scale_y: f64,
}

impl Projection {
    pub fn effective_height(&self) -> f64 {
        self.rendered_height.min(self.native_height)
    }
}

/// Maps each camera's objects into every bin that shows at least half of
/// the object.
pub fn project_objects(gt: &BTreeMap<usize, &[GtObject]>, mapping: &[BinMapping]) -> Vec<Projection> {
    let mut out = Vec::new();
    for (bin, m) in mapping.iter().enumerate() {
        let Some(objs) = gt.get(&m.camera_id) else { continue };
        for o in objs.iter() {
            let Some(window) = o.bbox.intersection(&m.source) else { continue };
            if window.area() < MIN_VISIBLE_FRACTION * o.bbox.area() {
                continue;
            }
            let canvas_box = m.forward_box(&window);
            out.push(Projection {
                camera_id: m.camera_id,
                bin,
                object: o.clone(),
                window,
                canvas_box,
                native_height: window.height(),
                rendered_height: canvas_box.height(),
                scale_y: m.dest.height() / m.source.height(),
            });
        }
    }
    out
}

/// Size-driven detections in canvas coordinates. `key` separates the random
/// streams of different canvases.
pub fn mock_detect(projections: &[Projection], model: &DetectorModel, ocr: Option<&OcrModel>, key: u64) -> Vec<Detection> {
    let mut out = Vec::new();
    for p in projections {
        let h_eff = p.effective_height();
        let prob = model.probability(h_eff);
        let mut rng = rng_for(model.seed, &[key, p.camera_id as u64, p.bin as u64, p.object.id]);
        let emit = if model.deterministic {
            h_eff >= model.h0
        } else {
            prob > 0.0 && rng.gen::<f64>() < prob
        };
        if !emit {
            continue;
        }
        let b = p.canvas_box;
        let (sw, sh) = (model.jitter * b.width(), model.jitter * b.height());
        let mut j = |s: f64| if s > 0.0 { Normal::new(0.0, s).expect("positive sigma").sample(&mut rng) } else { 0.0 };
        let (x0, y0, x1, y1) = (b.x_min + j(sw), b.y_min + j(sh), b.x_max + j(sw), b.y_max + j(sh));
        let bbox = BBox::new(x0.min(x1 - 1.0), y0.min(y1 - 1.0), x1.max(x0 + 1.0), y1.max(y0 + 1.0));
        let mut d = Detection::new(bbox, p.object.class.clone(), prob, p.camera_id);
        if let (Some(ocr), Some(plate)) = (ocr, &p.object.plate) {
            if p.window.contains(&plate.bbox) {
                let ph = (plate.bbox.height() * p.scale_y).min(plate.bbox.height());
                d.text = Some(mock_ocr(ph, &plate.text, ocr, &mut rng));
            }
        }
        out.push(d);
    }
    out
}

/// Exact text at or above `h_ocr`, empty at or below half of it, otherwise
/// `ceil(frac * len)` distinct characters substituted.
pub fn mock_ocr(height: f64, truth: &str, model: &OcrModel, rng: &mut impl Rng) -> String {
    if height >= model.h_ocr {
        return truth.to_string();
    }
    if height <= model.h_ocr / 2.0 {
        return String::new();
    }
    let mut chars: Vec<char> = truth.chars().collect();
    let frac = ((model.h_ocr - height) / model.h_ocr).clamp(0.0, 1.0);
    let n = ((frac * chars.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    for i in sample(rng, chars.len(), n.min(chars.len())) {
        let orig = chars[i];
        chars[i] = loop {
            let c = PLATE_ALPHABET[rng.gen_range(0..PLATE_ALPHABET.len())] as char;
            if c != orig {
                break c;
            }
        };
    }
    chars.into_iter().collect()
}
