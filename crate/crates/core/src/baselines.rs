//! Comparison layouts: FCFS (one letterboxed frame per canvas) and
//! Uniform-M (M whole frames in an equal grid).

use serde::{Deserialize, Serialize};

use crate::geometry::BBox;
use crate::packer::{CanvasLayout, Placement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stacking {
    Grid,
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrangement {
    pub kind: Stacking,
    pub rows: u32,
    pub cols: u32,
    /// Uniform per-frame scale factor.
    pub scale: f64,
}

fn fit_scale(frame: (u32, u32), cell: (f64, f64)) -> f64 {
    (cell.0 / frame.0 as f64).min(cell.1 / frame.1 as f64)
}

fn scaled(v: u32, s: f64) -> u32 {
    ((v as f64 * s) + 1e-9).floor().max(1.0) as u32
}

fn letterbox(camera_id: usize, frame: (u32, u32), cell: (f64, f64, f64, f64), s: f64) -> Placement {
    let (cx, cy, cw, ch) = cell;
    let (w, h) = (scaled(frame.0, s), scaled(frame.1, s));
    Placement {
        camera_id,
        tile_id: 0,
        source: BBox::new(0.0, 0.0, frame.0 as f64, frame.1 as f64),
        scale: s,
        x: (cx + ((cw - w as f64) / 2.0).max(0.0)).floor() as u32,
        y: (cy + ((ch - h as f64) / 2.0).max(0.0)).floor() as u32,
        w,
        h,
    }
}

pub fn fcfs_layout(frame: (u32, u32), c: u32) -> CanvasLayout {
    fcfs_layout_for(0, frame, c)
}

pub fn fcfs_layout_for(camera_id: usize, frame: (u32, u32), c: u32) -> CanvasLayout {
    let side = c as f64;
    let s = fit_scale(frame, (side, side));
    CanvasLayout {
        placements: vec![letterbox(camera_id, frame, (0.0, 0.0, side, side), s)],
        ..CanvasLayout::empty(c)
    }
}

/// Every candidate arrangement for `m` frames: near-square grids (one per
/// row count, `cols = ceil(m / rows)`), a single row and a single column.
pub fn uniform_arrangements(m: u32, frame: (u32, u32), c: u32) -> Vec<Arrangement> {
    let side = c as f64;
    let mk = |kind, rows: u32, cols: u32| Arrangement {
        kind,
        rows,
        cols,
        scale: fit_scale(frame, (side / cols as f64, side / rows as f64)),
    };
    let mut out = Vec::new();
    for rows in 2..m {
        let cols = m.div_ceil(rows);
        if cols >= 2 && (rows - 1) * cols < m {
            out.push(mk(Stacking::Grid, rows, cols));
        }
    }
    out.push(mk(Stacking::Horizontal, 1, m));
    out.push(mk(Stacking::Vertical, m, 1));
    out
}

pub fn choose_arrangement(m: u32, frame: (u32, u32), c: u32) -> Arrangement {
    let rank = |k: Stacking| match k {
        Stacking::Grid => 0,
        Stacking::Horizontal => 1,
        Stacking::Vertical => 2,
    };
    uniform_arrangements(m, frame, c)
        .into_iter()
        .reduce(|best, a| {
            let better = a.scale > best.scale + 1e-12
                || ((a.scale - best.scale).abs() <= 1e-12 && rank(a.kind) < rank(best.kind));
            if better {
                a
            } else {
                best
            }
        })
        .expect("at least two arrangements")
}

pub fn uniform_layout(m: u32, frame: (u32, u32), c: u32) -> CanvasLayout {
    assert!(m >= 1, "uniform layout needs at least one camera");
    if m == 1 {
        return fcfs_layout(frame, c);
    }
    let a = choose_arrangement(m, frame, c);
    let side = c as f64;
    let (cw, ch) = (side / a.cols as f64, side / a.rows as f64);
    let placements = (0..m)
        .map(|i| {
            let (r, col) = (i / a.cols, i % a.cols);
            letterbox(i as usize, frame, (col as f64 * cw, r as f64 * ch, cw, ch), a.scale)
        })
        .collect();
    CanvasLayout {
        placements,
        ..CanvasLayout::empty(c)
    }
}
