//! Accuracy and packing-quality metrics: mAP at IoU 0.5, character error
//! rate, canvas utilization.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canvas::Detection;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::packer::CanvasLayout;
use crate::setcover::TileChoice;

pub const MATCH_IOU: f64 = 0.5;

/// Ground-truth box for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub bbox: BBox,
    pub class: String,
}

/// All-point interpolated AP of one class over a set of frames. `None` when
/// the class has no ground truth.
pub fn average_precision(dets: &[Vec<Detection>], gts: &[Vec<GtBox>], class: &str) -> Option<f64> {
    let n_gt: usize = gts.iter().map(|g| g.iter().filter(|b| b.class == class).count()).sum();
    if n_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, &Detection)> = dets
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| ds.iter().filter(|d| d.class == class).map(move |d| (f, d)))
        .collect();
    // order by confidence, then by position so input order does not matter
    ranked.sort_by(|a, b| {
        b.1.confidence
            .total_cmp(&a.1.confidence)
            .then(a.0.cmp(&b.0))
            .then(a.1.bbox.x_min.total_cmp(&b.1.bbox.x_min))
            .then(a.1.bbox.y_min.total_cmp(&b.1.bbox.y_min))
            .then(a.1.bbox.x_max.total_cmp(&b.1.bbox.x_max))
            .then(a.1.bbox.y_max.total_cmp(&b.1.bbox.y_max))
    });
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut tp = Vec::with_capacity(ranked.len());
    for (f, d) in &ranked {
        let frame_gt = gts.get(*f).map(Vec::as_slice).unwrap_or(&[]);
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in frame_gt.iter().enumerate() {
            if g.class != class || used.contains(&(*f, gi)) {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v >= MATCH_IOU && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                used.insert((*f, gi));
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        precision.push(hits as f64 / (i + 1) as f64);
        recall.push(hits as f64 / n_gt as f64);
    }
    // precision envelope, then sum over recall steps
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    Some(ap)
}

/// Mean AP over the classes present in ground truth.
pub fn map50(dets: &[Vec<Detection>], gts: &[Vec<GtBox>]) -> Option<f64> {
    let classes: BTreeSet<&str> = gts.iter().flatten().map(|g| g.class.as_str()).collect();
    if classes.is_empty() {
        return None;
    }
    let aps: Vec<f64> = classes
        .iter()
        .filter_map(|c| average_precision(dets, gts, c))
        .collect();
    Some(aps.iter().sum::<f64>() / aps.len() as f64)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + (a[i - 1] != b[j - 1]) as usize;
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn cer(predicted: &str, truth: &str) -> Result<f64> {
    let n = truth.chars().count();
    if n == 0 {
        return Err(Error::EmptyTruth);
    }
    Ok(levenshtein(predicted, truth) as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PackingStats {
    pub utilization: f64,
    /// Wasted pixels summed over the chosen tiles, in source pixels.
    pub wasted_px: f64,
    pub tiles: usize,
    pub relaxations: u32,
    pub dropped_dets: usize,
}

pub fn packing_stats(layout: &CanvasLayout, chosen: &[TileChoice], dropped_dets: usize) -> PackingStats {
    PackingStats {
        utilization: layout.utilization(),
        wasted_px: chosen.iter().map(|c| c.cost).sum(),
        tiles: layout.placements.len(),
        relaxations: layout.relaxations,
        dropped_dets,
    }
}

/// Per-class AP map, handy for reports.
pub fn per_class_ap(dets: &[Vec<Detection>], gts: &[Vec<GtBox>]) -> BTreeMap<String, f64> {
    let classes: BTreeSet<&str> = gts.iter().flatten().map(|g| g.class.as_str()).collect();
    classes
        .into_iter()
        .filter_map(|c| average_precision(dets, gts, c).map(|ap| (c.to_string(), ap)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packer::Placement;
    use proptest::prelude::*;

    fn det(b: BBox, conf: f64) -> Detection {
        Detection::new(b, "person", conf, 0)
    }

    fn gt(b: BBox) -> GtBox {
        GtBox { bbox: b, class: "person".into() }
    }

    #[test]
    fn map_examples() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        // IoU 0.6: width 10 vs shifted box
        let hit = BBox::new(0.0, 0.0, 10.0, 6.0);
        assert!((iou(&hit, &g) - 0.6).abs() < 1e-12);
        assert_eq!(map50(&[vec![det(hit, 0.9)]], &[vec![gt(g)]]), Some(1.0));
        let miss = BBox::new(0.0, 0.0, 10.0, 4.0);
        assert_eq!(map50(&[vec![det(miss, 0.9)]], &[vec![gt(g)]]), Some(0.0));

        let g2 = BBox::new(50.0, 50.0, 60.0, 60.0);
        let dets = vec![det(g, 0.9), det(BBox::new(100.0, 100.0, 110.0, 110.0), 0.8), det(g2, 0.7)];
        let ap = map50(&[dets], &[vec![gt(g), gt(g2)]]).unwrap();
        assert!((ap - (0.5 + 2.0 / 3.0 * 0.5)).abs() < 1e-12);

        assert_eq!(map50(&[vec![det(g, 0.9)]], &[vec![]]), None);
    }

    #[test]
    fn cer_examples() {
        assert_eq!(cer("ABC123", "ABC123").unwrap(), 0.0);
        assert!((cer("ABC123", "ABC12").unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(cer("", "ABC123").unwrap(), 1.0);
        assert!(matches!(cer("A", ""), Err(Error::EmptyTruth)));
    }

    fn place(x: u32, y: u32, w: u32, h: u32) -> Placement {
        Placement { camera_id: 0, tile_id: 0, source: BBox::from_xywh(0.0, 0.0, w as f64, h as f64), scale: 1.0, x, y, w, h }
    }

    #[test]
    fn packing_stats_examples() {
        assert_eq!(packing_stats(&CanvasLayout::empty(640), &[], 0).utilization, 0.0);
        let l = CanvasLayout {
            placements: vec![place(0, 0, 320, 320), place(320, 0, 320, 320), place(0, 320, 320, 320), place(320, 320, 320, 320)],
            ..CanvasLayout::empty(640)
        };
        assert_eq!(packing_stats(&l, &[], 2).utilization, 1.0);
        assert_eq!(packing_stats(&l, &[], 2).dropped_dets, 2);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 1.0..30.0f64, 1.0..30.0f64).prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h))
    }

    proptest! {
        #[test]
        fn map_is_order_invariant(boxes in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..12), gts in prop::collection::vec(arb_box(), 1..6), seed in any::<u64>()) {
            let dets: Vec<Detection> = boxes.iter().map(|&(b, c)| det(b, c)).collect();
            let g: Vec<GtBox> = gts.iter().map(|&b| gt(b)).collect();
            let mut shuffled = dets.clone();
            let n = shuffled.len();
            if n > 1 {
                for i in 0..n {
                    let j = ((seed >> (i % 32)) as usize + i * 7) % n;
                    shuffled.swap(i, j);
                }
            }
            let a = map50(&[dets.clone()], &[g.clone()]).unwrap();
            let b = map50(&[shuffled], &[g.clone()]).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let mut extra = dets;
            extra.push(det(BBox::new(1000.0, 1000.0, 1001.0, 1001.0), -1.0));
            prop_assert!(map50(&[extra], &[g]).unwrap() <= a + 1e-12);
        }

        #[test]
        fn edit_distance_properties(a in "[A-C0-2]{0,8}", b in "[A-C0-2]{0,8}", c in "[A-C0-2]{0,8}") {
            prop_assert_eq!(levenshtein(&a, &a), 0);
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            if !b.is_empty() {
                let bound = a.len().max(b.len()) as f64 / b.len() as f64;
                prop_assert!(cer(&a, &b).unwrap() <= bound + 1e-12);
            }
        }
    }
}
