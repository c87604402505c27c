//! Canvas rasterization, tile-to-bin mapping, detection translation back to
//! source frames and cross-tile deduplication.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nms_indices, BBox};
use crate::motion::GrayFrame;
use crate::packer::{CanvasLayout, Placement};

pub const GUTTER_VALUE: u8 = 114;
pub const DEDUPE_IOU: f64 = 0.45;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class: String,
    pub confidence: f64,
    /// Source camera; meaningful once translated back from the canvas.
    pub camera_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl Detection {
    pub fn new(bbox: BBox, class: impl Into<String>, confidence: f64, camera_id: usize) -> Self {
        Self {
            bbox,
            class: class.into(),
            confidence: confidence.clamp(0.0, 1.0),
            camera_id,
            text: None,
        }
    }
}

/// Axis-aligned map from a source tile rectangle onto its canvas bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinMapping {
    pub camera_id: usize,
    pub source: BBox,
    pub dest: BBox,
}

impl BinMapping {
    pub fn of(p: &Placement) -> Self {
        Self {
            camera_id: p.camera_id,
            source: p.source,
            dest: p.dest(),
        }
    }

    fn scales(&self) -> (f64, f64) {
        (
            self.dest.width() / self.source.width(),
            self.dest.height() / self.source.height(),
        )
    }

    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = self.scales();
        (
            self.dest.x_min + (x - self.source.x_min) * sx,
            self.dest.y_min + (y - self.source.y_min) * sy,
        )
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let (sx, sy) = self.scales();
        (
            self.source.x_min + (x - self.dest.x_min) / sx,
            self.source.y_min + (y - self.dest.y_min) / sy,
        )
    }

    pub fn forward_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.forward(b.x_min, b.y_min);
        let (x1, y1) = self.forward(b.x_max, b.y_max);
        BBox::new(x0, y0, x1, y1)
    }

    pub fn inverse_box(&self, b: &BBox) -> BBox {
        let (x0, y0) = self.inverse(b.x_min, b.y_min);
        let (x1, y1) = self.inverse(b.x_max, b.y_max);
        BBox::new(x0, y0, x1, y1)
    }

    /// Half-open so a point on a shared bin edge belongs to one bin.
    fn holds(&self, x: f64, y: f64) -> bool {
        x >= self.dest.x_min && x < self.dest.x_max && y >= self.dest.y_min && y < self.dest.y_max
    }
}

#[derive(Debug, Clone)]
pub struct CanvasFrame {
    pub layout: CanvasLayout,
    pub raster: GrayFrame,
    pub mapping: Vec<BinMapping>,
}

impl CanvasFrame {
    /// Layout and mapping only, with an empty raster; enough for translation.
    pub fn without_raster(layout: CanvasLayout) -> Self {
        let mapping = layout.placements.iter().map(BinMapping::of).collect();
        Self {
            raster: GrayFrame::filled(0, 0, GUTTER_VALUE),
            layout,
            mapping,
        }
    }

    pub fn bin_at(&self, x: f64, y: f64) -> Option<&BinMapping> {
        self.mapping.iter().find(|m| m.holds(x, y))
    }
}

fn bilinear(src: &GrayFrame, x: f64, y: f64) -> f64 {
    let xf = x.clamp(0.0, (src.width - 1) as f64);
    let yf = y.clamp(0.0, (src.height - 1) as f64);
    let (x0, y0) = (xf.floor() as usize, yf.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(src.width - 1), (y0 + 1).min(src.height - 1));
    let (tx, ty) = (xf - x0 as f64, yf - y0 as f64);
    let p = |x, y| src.get(x, y) as f64;
    let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
    let bot = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Renders the canvas. `source_scale` is raster pixels per native source
/// pixel (rasters may be stored downsampled).
pub fn compose(
    layout: &CanvasLayout,
    sources: &BTreeMap<usize, GrayFrame>,
    source_scale: f64,
) -> Result<CanvasFrame> {
    let c = layout.canvas as usize;
    let mut raster = GrayFrame::filled(c, c, GUTTER_VALUE);
    for p in &layout.placements {
        let src = sources.get(&p.camera_id).ok_or(Error::MissingSource(p.camera_id))?;
        if src.width == 0 || src.height == 0 {
            return Err(Error::MissingSource(p.camera_id));
        }
        let m = BinMapping::of(p);
        for dy in 0..p.h as usize {
            for dx in 0..p.w as usize {
                let (cx, cy) = (p.x as usize + dx, p.y as usize + dy);
                let (sx, sy) = m.inverse(cx as f64 + 0.5, cy as f64 + 0.5);
                let v = bilinear(src, sx * source_scale - 0.5, sy * source_scale - 0.5);
                raster.set(cx, cy, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let mapping = layout.placements.iter().map(BinMapping::of).collect();
    Ok(CanvasFrame {
        layout: layout.clone(),
        raster,
        mapping,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Translated {
    pub per_camera: BTreeMap<usize, Vec<Detection>>,
    /// Detections whose center fell in the gutter.
    pub dropped: usize,
}

pub fn translate_back(canvas_dets: &[Detection], frame: &CanvasFrame) -> Translated {
    let mut out = Translated::default();
    for d in canvas_dets {
        let (cx, cy) = d.bbox.center();
        let Some(bin) = frame.bin_at(cx, cy) else {
            out.dropped += 1;
            continue;
        };
        let src = bin.inverse_box(&d.bbox);
        let Some(clipped) = src.clip(&bin.source) else {
            out.dropped += 1;
            continue;
        };
        let mut t = d.clone();
        t.bbox = clipped;
        t.camera_id = bin.camera_id;
        out.per_camera.entry(bin.camera_id).or_default().push(t);
    }
    out
}

/// NMS per camera and per class.
pub fn dedupe(
    per_camera: &BTreeMap<usize, Vec<Detection>>,
    iou_threshold: f64,
) -> BTreeMap<usize, Vec<Detection>> {
    per_camera
        .iter()
        .map(|(&cam, dets)| {
            let mut by_class: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
            for d in dets {
                by_class.entry(d.class.as_str()).or_default().push(d);
            }
            let mut kept = Vec::new();
            for group in by_class.values() {
                let boxes: Vec<(BBox, f64)> = group.iter().map(|d| (d.bbox, d.confidence)).collect();
                kept.extend(nms_indices(&boxes, iou_threshold).into_iter().map(|i| group[i].clone()));
            }
            (cam, kept)
        })
        .collect()
}
