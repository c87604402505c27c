//! Critical-region estimation: frame differencing, ego-motion fitting, and a
//! per-camera constant-velocity Kalman centroid tracker whose tracks carry an
//! `active` / `stationary` / `last_seen` status.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_affine, Affine2D, BBox};
use crate::util::rng_for;

pub const DEFAULT_DIFF_THRESHOLD: u8 = 25;
pub const DEFAULT_MIN_AREA: usize = 64;
pub const DEFAULT_GATE: f64 = 50.0;
pub const DEFAULT_MOVE_THRESHOLD: f64 = 20.0;

const RANSAC_ITERS: usize = 100;
const RANSAC_INLIER_PX: f64 = 2.0;
const RANSAC_SEED: u64 = 0x5EED_AFF1;

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayFrame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayFrame {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Precondition(format!(
                "raster data length {} != {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

/// Motion masks between two frames: absolute difference above `threshold`,
/// one 3x3 dilation, 4-connected components of at least `min_area` pixels.
/// Boxes use pixel-edge coordinates (a single pixel `(x, y)` is
/// `(x, y, x+1, y+1)`).
pub fn frame_diff_masks(
    prev: &GrayFrame,
    cur: &GrayFrame,
    threshold: u8,
    min_area: usize,
) -> Result<Vec<BBox>> {
    if prev.width != cur.width || prev.height != cur.height {
        return Err(Error::DimensionMismatch(
            prev.width, prev.height, cur.width, cur.height,
        ));
    }
    let (w, h) = (cur.width, cur.height);
    let raw: Vec<u8> = prev
        .data
        .iter()
        .zip(&cur.data)
        .map(|(&a, &b)| (a.abs_diff(b) > threshold) as u8)
        .collect();

    // separable 3x3 dilation
    let mut horiz = vec![0u8; w * h];
    for (src, dst) in raw.chunks_exact(w).zip(horiz.chunks_exact_mut(w)) {
        dst.copy_from_slice(src);
        for x in 1..w {
            dst[x] |= src[x - 1];
            dst[x - 1] |= src[x];
        }
    }
    let mut mask = horiz.clone();
    for y in 1..h {
        let (above, below) = mask.split_at_mut(y * w);
        let row_above = &mut above[(y - 1) * w..];
        let row = &mut below[..w];
        let (h_above, h_row) = (&horiz[(y - 1) * w..y * w], &horiz[y * w..(y + 1) * w]);
        for x in 0..w {
            row[x] |= h_above[x];
            row_above[x] |= h_row[x];
        }
    }
    let mask: Vec<bool> = mask.into_iter().map(|v| v != 0).collect();

    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut boxes = Vec::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0usize;
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if area >= min_area {
            boxes.push(BBox::new(
                x0 as f64,
                y0 as f64,
                (x1 + 1) as f64,
                (y1 + 1) as f64,
            ));
        }
    }
    Ok(boxes)
}

pub type Correspondence = ((f64, f64), (f64, f64));

fn fit_similarity(pairs: &[&Correspondence]) -> Result<Affine2D> {
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut dx, mut dy) = (0.0, 0.0, 0.0, 0.0);
    for ((x, y), (u, v)) in pairs.iter().copied() {
        sx += x;
        sy += y;
        dx += u;
        dy += v;
    }
    let (mx, my, mu, mv) = (sx / n, sy / n, dx / n, dy / n);
    let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
    for ((x, y), (u, v)) in pairs.iter().copied() {
        let (xc, yc, uc, vc) = (x - mx, y - my, u - mu, v - mv);
        num_a += xc * uc + yc * vc;
        num_b += xc * vc - yc * uc;
        den += xc * xc + yc * yc;
    }
    if den <= 1e-12 {
        return Err(Error::DegenerateCorrespondences);
    }
    let (a, b) = (num_a / den, num_b / den);
    let scale = a.hypot(b);
    if scale <= 1e-12 {
        return Err(Error::DegenerateCorrespondences);
    }
    Ok(Affine2D {
        scale,
        rotation: b.atan2(a),
        tx: mu - (a * mx - b * my),
        ty: mv - (b * mx + a * my),
    })
}

fn residual(t: &Affine2D, c: &Correspondence) -> f64 {
    let (px, py) = t.apply_point(c.0 .0, c.0 .1);
    (px - c.1 .0).hypot(py - c.1 .1)
}

/// Least-squares 4-DOF similarity fit; with `ransac`, the best 2-point
/// hypothesis over a fixed number of iterations is refit on its inliers.
pub fn estimate_partial_affine(correspondences: &[Correspondence], ransac: bool) -> Result<Affine2D> {
    if correspondences.len() < 2 {
        return Err(Error::TooFewCorrespondences(correspondences.len()));
    }
    let all: Vec<&Correspondence> = correspondences.iter().collect();
    if !ransac {
        return fit_similarity(&all);
    }
    let mut rng = rng_for(RANSAC_SEED, &[correspondences.len() as u64]);
    let n = correspondences.len();
    let mut best: Option<(usize, Affine2D)> = None;
    for _ in 0..RANSAC_ITERS {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let Ok(model) = fit_similarity(&[&correspondences[i], &correspondences[j]]) else {
            continue;
        };
        let inliers = correspondences
            .iter()
            .filter(|c| residual(&model, c) <= RANSAC_INLIER_PX)
            .count();
        if best.map_or(true, |b| inliers > b.0) {
            best = Some((inliers, model));
        }
    }
    let Some((count, model)) = best else {
        return Err(Error::DegenerateCorrespondences);
    };
    if count < 2 {
        return fit_similarity(&all);
    }
    let inliers: Vec<&Correspondence> = correspondences
        .iter()
        .filter(|c| residual(&model, c) <= RANSAC_INLIER_PX)
        .collect();
    fit_similarity(&inliers).or(Ok(model))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Active,
    Stationary,
    LastSeen,
}

type Mat4 = [[f64; 4]; 4];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    pub process_noise: f64,
    pub measurement_noise: f64,
    pub initial_covariance: f64,
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            process_noise: 0.01,
            measurement_noise: 1.0,
            initial_covariance: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// `(x, y, vx, vy)`
    pub state: [f64; 4],
    pub covariance: Mat4,
    pub bbox: BBox,
    pub status: TrackStatus,
    pub frames_since_update: u32,
    /// Observed centroids since the last refresh.
    pub history: Vec<(f64, f64)>,
    /// Known object size; updates never shrink the box below it.
    pub extent: Option<(f64, f64)>,
}

fn diag(v: f64) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = v;
    }
    m
}

impl Track {
    pub fn new(id: u64, bbox: BBox, params: &KalmanParams) -> Self {
        let (cx, cy) = bbox.center();
        Self {
            id,
            state: [cx, cy, 0.0, 0.0],
            covariance: diag(params.initial_covariance),
            bbox,
            status: TrackStatus::Active,
            frames_since_update: 0,
            history: vec![(cx, cy)],
            extent: None,
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        (self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> (f64, f64) {
        (self.state[2], self.state[3])
    }

    pub fn predict(&mut self, params: &KalmanParams) {
        let s = &mut self.state;
        s[0] += s[2];
        s[1] += s[3];
        // P = F P F^T + Q with F = [I I; 0 I] (2x2 blocks)
        let p = self.covariance;
        let mut fp = p;
        for c in 0..4 {
            fp[0][c] = p[0][c] + p[2][c];
            fp[1][c] = p[1][c] + p[3][c];
        }
        let mut out = fp;
        for row in out.iter_mut() {
            let r = *row;
            row[0] = r[0] + r[2];
            row[1] = r[1] + r[3];
        }
        for (i, row) in out.iter_mut().enumerate() {
            row[i] += params.process_noise;
        }
        self.covariance = out;
    }

    pub fn update(&mut self, observation: BBox, params: &KalmanParams) {
        let (zx, zy) = observation.center();
        let p = self.covariance;
        let s = [
            [p[0][0] + params.measurement_noise, p[0][1]],
            [p[1][0], p[1][1] + params.measurement_noise],
        ];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        let si = [
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ];
        // K = P H^T S^-1, P H^T = first two columns of P
        let mut k = [[0.0; 2]; 4];
        for (r, kr) in k.iter_mut().enumerate() {
            for (c, kc) in kr.iter_mut().enumerate() {
                *kc = p[r][0] * si[0][c] + p[r][1] * si[1][c];
            }
        }
        let innov = [zx - self.state[0], zy - self.state[1]];
        for (r, kr) in k.iter().enumerate() {
            self.state[r] += kr[0] * innov[0] + kr[1] * innov[1];
        }
        // P = (I - K H) P
        let mut np = p;
        for r in 0..4 {
            for c in 0..4 {
                np[r][c] = p[r][c] - (k[r][0] * p[0][c] + k[r][1] * p[1][c]);
            }
        }
        self.covariance = np;
        self.bbox = match self.extent {
            Some((w, h)) if observation.width() < w || observation.height() < h => {
                let (ow, oh) = (observation.width().max(w), observation.height().max(h));
                BBox::from_xywh(zx - ow / 2.0, zy - oh / 2.0, ow, oh)
            }
            _ => observation,
        };
        self.frames_since_update = 0;
        self.history.push((zx, zy));
    }

    fn warp(&mut self, ego: &Affine2D) {
        self.bbox = apply_affine(ego, &self.bbox);
        let (x, y) = ego.apply_point(self.state[0], self.state[1]);
        let (vx, vy) = ego.apply_vector(self.state[2], self.state[3]);
        self.state = [x, y, vx, vy];
    }

    /// Freezes a lost track at its last observed box.
    fn park(&mut self) {
        let (cx, cy) = self.bbox.center();
        self.state = [cx, cy, 0.0, 0.0];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub gate: f64,
    pub kalman: KalmanParams,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            gate: DEFAULT_GATE,
            kalman: KalmanParams::default(),
        }
    }
}

/// One camera's tracker memory.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    pub tracks: Vec<Track>,
    pub params: TrackerParams,
    next_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub masks: Vec<BBox>,
    /// `(track id, observation index)` pairs matched this step.
    pub matches: Vec<(u64, usize)>,
    /// Ids of tracks spawned from unmatched observations.
    pub spawned: Vec<u64>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Self {
        Self {
            tracks: Vec::new(),
            params,
            next_id: 0,
        }
    }

    pub fn spawn(&mut self, bbox: BBox, status: TrackStatus) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let mut t = Track::new(id, bbox, &self.params.kalman);
        t.status = status;
        self.tracks.push(t);
        id
    }

    pub fn step(&mut self, observations: &[BBox], ego: Option<&Affine2D>) -> StepOutput {
        let params = self.params;
        if let Some(t) = ego {
            for tr in &mut self.tracks {
                tr.warp(t);
            }
        }
        for tr in &mut self.tracks {
            tr.predict(&params.kalman);
        }

        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, tr) in self.tracks.iter().enumerate() {
            let (tx, ty) = tr.centroid();
            for (oi, ob) in observations.iter().enumerate() {
                let (ox, oy) = ob.center();
                let d = (tx - ox).hypot(ty - oy);
                if d <= params.gate {
                    pairs.push((d, ti, oi));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; self.tracks.len()];
        let mut obs_used = vec![false; observations.len()];
        let mut matches = Vec::new();
        for (_, ti, oi) in pairs {
            if track_used[ti] || obs_used[oi] {
                continue;
            }
            track_used[ti] = true;
            obs_used[oi] = true;
            let tr = &mut self.tracks[ti];
            tr.update(observations[oi], &params.kalman);
            tr.status = TrackStatus::Active;
            matches.push((tr.id, oi));
        }

        // matched observations report the track box; unmatched ones lying
        // inside a sized track are fragments of it
        let mut absorbed = vec![false; observations.len()];
        let mut masks: Vec<BBox> = Vec::with_capacity(observations.len() + self.tracks.len());
        for (oi, ob) in observations.iter().enumerate() {
            if obs_used[oi] {
                let ti = matches.iter().find(|m| m.1 == oi).map(|m| m.0);
                let tr = self.tracks.iter().find(|t| Some(t.id) == ti).expect("matched track");
                masks.push(tr.bbox);
                continue;
            }
            let (cx, cy) = ob.center();
            if self
                .tracks
                .iter()
                .any(|t| t.extent.is_some() && t.bbox.contains_point(cx, cy))
            {
                absorbed[oi] = true;
                continue;
            }
            masks.push(*ob);
        }
        for (ti, tr) in self.tracks.iter_mut().enumerate() {
            if track_used[ti] {
                continue;
            }
            tr.frames_since_update += 1;
            if tr.status != TrackStatus::Stationary {
                if tr.status == TrackStatus::Active {
                    tr.park();
                }
                tr.status = TrackStatus::LastSeen;
            } else {
                tr.park();
            }
            masks.push(tr.bbox);
        }

        let mut spawned = Vec::new();
        for (oi, ob) in observations.iter().enumerate() {
            if !obs_used[oi] && !absorbed[oi] {
                spawned.push(self.spawn(*ob, TrackStatus::Active));
            }
        }
        StepOutput {
            masks,
            matches,
            spawned,
        }
    }
}

/// Functional form of [`Tracker::step`].
pub fn tracker_step(
    tracker: &Tracker,
    observations: &[BBox],
    gate: f64,
    ego: Option<&Affine2D>,
) -> (Tracker, Vec<BBox>) {
    let mut next = tracker.clone();
    next.params.gate = gate;
    let out = next.step(observations, ego);
    (next, out.masks)
}

/// Stationary iff the summed centroid path length is below `move_threshold`.
/// Fewer than two positions carry no motion evidence and classify as
/// stationary.
pub fn classify_stationary(history: &[(f64, f64)], move_threshold: f64) -> TrackStatus {
    let path: f64 = history
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum();
    if path < move_threshold {
        TrackStatus::Stationary
    } else {
        TrackStatus::Active
    }
}
