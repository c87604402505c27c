//! Multi-scale bag of tiles and mask-to-tile assignment by the goodness
//! criteria (mask coverage and mask:tile height ratio).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, QuadTree};
use crate::scale_profiler::ScaleSet;

pub const DEFAULT_OVERLAP: f64 = 0.5;
pub const DEFAULT_COVERAGE_MIN: f64 = 0.95;
pub const DEFAULT_RATIO_RANGE: (f64, f64) = (0.5, 0.9);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub id: usize,
    pub camera_id: usize,
    pub scale_dim: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoodnessCriteria {
    pub coverage_min: f64,
    /// Exclusive `(low, high)` band for mask height / tile height.
    pub ratio_range: (f64, f64),
}

impl Default for GoodnessCriteria {
    fn default() -> Self {
        Self {
            coverage_min: DEFAULT_COVERAGE_MIN,
            ratio_range: DEFAULT_RATIO_RANGE,
        }
    }
}

fn axis_offsets(len: f64, side: f64, stride: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut pos = 0.0;
    loop {
        if pos + side >= len {
            out.push((len - side).max(0.0));
            break;
        }
        out.push(pos);
        pos += stride;
    }
    out.dedup();
    out
}

/// Grid of `s x s` tiles per scale (catch-all included) with stride
/// `s * (1 - overlap)`; the last row/column is shifted flush with the frame
/// edge. Tiles larger than the frame are clamped to it.
pub fn generate_tiles(
    camera_id: usize,
    frame_dims: (u32, u32),
    scales: &ScaleSet,
    overlap: f64,
) -> Vec<Tile> {
    assert!((0.0..1.0).contains(&overlap), "overlap must be in [0, 1)");
    let (fw, fh) = (frame_dims.0 as f64, frame_dims.1 as f64);
    let mut tiles = Vec::new();
    for dim in scales.all() {
        let s = dim as f64;
        let stride = (s * (1.0 - overlap)).max(1.0);
        let (sw, sh) = (s.min(fw), s.min(fh));
        let xs = axis_offsets(fw, sw, stride);
        let ys = axis_offsets(fh, sh, stride);
        for &y in &ys {
            for &x in &xs {
                tiles.push(Tile {
                    id: tiles.len(),
                    camera_id,
                    scale_dim: dim,
                    bbox: BBox::from_xywh(x, y, sw, sh),
                });
            }
        }
    }
    tiles
}

/// Tiles of one camera together with their spatial index.
#[derive(Debug, Clone)]
pub struct TileBag {
    pub tiles: Vec<Tile>,
    index: QuadTree,
}

impl TileBag {
    pub fn new(frame_dims: (u32, u32), tiles: Vec<Tile>) -> Self {
        let root = BBox::new(0.0, 0.0, frame_dims.0 as f64, frame_dims.1 as f64);
        let index = QuadTree::build(root, tiles.iter().map(|t| (t.bbox, t.id)));
        Self { tiles, index }
    }

    pub fn for_camera(camera_id: usize, frame_dims: (u32, u32), scales: &ScaleSet, overlap: f64) -> Self {
        Self::new(frame_dims, generate_tiles(camera_id, frame_dims, scales, overlap))
    }

    pub fn intersecting(&self, probe: &BBox) -> Vec<usize> {
        self.index.query(probe)
    }

    pub fn tile(&self, id: usize) -> &Tile {
        &self.tiles[id]
    }
}

/// Both views of the mask/tile relation plus the masks with no admissible
/// tile.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assignment {
    /// Indexed by mask; ascending tile ids.
    pub mask_to_tiles: Vec<Vec<usize>>,
    /// Tile id to ascending mask indices.
    pub tile_to_masks: BTreeMap<usize, Vec<usize>>,
    pub unassigned: Vec<usize>,
}

impl Assignment {
    pub fn is_consistent(&self) -> bool {
        let forward: usize = self.mask_to_tiles.iter().map(Vec::len).sum();
        let backward: usize = self.tile_to_masks.values().map(Vec::len).sum();
        forward == backward
            && self.mask_to_tiles.iter().enumerate().all(|(m, ts)| {
                ts.iter()
                    .all(|t| self.tile_to_masks.get(t).is_some_and(|ms| ms.contains(&m)))
            })
    }
}

pub fn is_admissible(tile: &Tile, mask: &BBox, criteria: &GoodnessCriteria) -> bool {
    let Some(inter) = tile.bbox.intersection(mask) else {
        return false;
    };
    let (mw, mh) = (mask.width(), mask.height());
    if inter.width() < criteria.coverage_min * mw || inter.height() < criteria.coverage_min * mh {
        return false;
    }
    let ratio = mh / tile.bbox.height();
    ratio > criteria.ratio_range.0 && ratio < criteria.ratio_range.1
}

pub fn assign_masks(bag: &TileBag, masks: &[BBox], criteria: &GoodnessCriteria) -> Assignment {
    let mut out = Assignment {
        mask_to_tiles: vec![Vec::new(); masks.len()],
        ..Default::default()
    };
    for (mi, mask) in masks.iter().enumerate() {
        for tid in bag.intersecting(mask) {
            if is_admissible(bag.tile(tid), mask, criteria) {
                out.mask_to_tiles[mi].push(tid);
                out.tile_to_masks.entry(tid).or_default().push(mi);
            }
        }
        if out.mask_to_tiles[mi].is_empty() {
            out.unassigned.push(mi);
        }
    }
    out
}
