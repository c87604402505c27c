//! Tile selection: wasted-pixel cost, greedy min-cost set cover over the
//! admissible tiles, and per-tile sizing bounds / elasticity.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scale_profiler::ScaleSet;
use crate::tiling::{assign_masks, GoodnessCriteria, Tile, TileBag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileChoice {
    pub tile: Tile,
    pub covered_masks: BTreeSet<usize>,
    /// Wasted pixels (tile area not covered by any of its masks).
    pub cost: f64,
    /// `(min_scale, max_scale)` allowed on the canvas.
    pub bounds: (f64, f64),
    pub elasticity: f64,
    /// Holds a mask that had no goodness-admissible tile.
    pub degraded: bool,
}

impl TileChoice {
    pub fn new(tile: Tile, covered_masks: BTreeSet<usize>, cost: f64) -> Self {
        Self {
            tile,
            covered_masks,
            cost,
            bounds: (1.0, 1.0),
            elasticity: 1.0,
            degraded: false,
        }
    }
}

/// Exact area of a union of rectangles by coordinate compression.
pub fn union_area(rects: &[BBox]) -> f64 {
    let rects: Vec<&BBox> = rects.iter().filter(|r| r.area() > 0.0).collect();
    if rects.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = rects.iter().flat_map(|r| [r.x_min, r.x_max]).collect();
    let mut ys: Vec<f64> = rects.iter().flat_map(|r| [r.y_min, r.y_max]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for xi in xs.windows(2) {
        let mx = 0.5 * (xi[0] + xi[1]);
        for yi in ys.windows(2) {
            let my = 0.5 * (yi[0] + yi[1]);
            if rects
                .iter()
                .any(|r| mx > r.x_min && mx < r.x_max && my > r.y_min && my < r.y_max)
            {
                area += (xi[1] - xi[0]) * (yi[1] - yi[0]);
            }
        }
    }
    area
}

pub fn tile_cost(tile: &Tile, masks_in_tile: &[BBox]) -> f64 {
    let clipped: Vec<BBox> = masks_in_tile
        .iter()
        .filter_map(|m| m.intersection(&tile.bbox))
        .collect();
    (tile.bbox.area() - union_area(&clipped)).max(0.0)
}

/// Greedy weighted set cover: repeatedly take the candidate with the lowest
/// cost per newly covered mask (ties: more new masks, lower cost, lower tile
/// id), then drop picks made redundant by later ones.
pub fn greedy_mcmsc(universe: &BTreeSet<usize>, candidates: &[TileChoice]) -> Result<Vec<TileChoice>> {
    let coverable: BTreeSet<usize> = candidates
        .iter()
        .flat_map(|c| c.covered_masks.iter().copied())
        .collect();
    if let Some(&m) = universe.difference(&coverable).next() {
        return Err(Error::Uncoverable(m));
    }

    let mut covered: BTreeSet<usize> = BTreeSet::new();
    let mut picked: Vec<usize> = Vec::new();
    while !universe.is_subset(&covered) {
        let mut best: Option<(usize, f64, usize)> = None;
        for (i, c) in candidates.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            let fresh = c
                .covered_masks
                .iter()
                .filter(|m| universe.contains(m) && !covered.contains(m))
                .count();
            if fresh == 0 {
                continue;
            }
            let ratio = c.cost / fresh as f64;
            let better = match best {
                None => true,
                Some((bi, br, bf)) => {
                    let b = &candidates[bi];
                    ratio
                        .total_cmp(&br)
                        .then(bf.cmp(&fresh))
                        .then(c.cost.total_cmp(&b.cost))
                        .then(c.tile.id.cmp(&b.tile.id))
                        .is_lt()
                }
            };
            if better {
                best = Some((i, ratio, fresh));
            }
        }
        let (i, _, _) = best.expect("coverable universe always has a fresh candidate");
        picked.push(i);
        covered.extend(candidates[i].covered_masks.iter().copied());
    }

    let chosen: Vec<TileChoice> = picked.iter().map(|&i| candidates[i].clone()).collect();
    Ok(prune_redundant(universe, chosen))
}

/// Removes chosen tiles whose universe masks are all covered by the others,
/// most expensive first.
pub fn prune_redundant(universe: &BTreeSet<usize>, mut chosen: Vec<TileChoice>) -> Vec<TileChoice> {
    let mut order: Vec<usize> = (0..chosen.len()).collect();
    order.sort_by(|&a, &b| {
        chosen[b]
            .cost
            .total_cmp(&chosen[a].cost)
            .then(chosen[a].tile.id.cmp(&chosen[b].tile.id))
    });
    let mut removed = vec![false; chosen.len()];
    for i in order {
        let redundant = chosen[i]
            .covered_masks
            .iter()
            .filter(|m| universe.contains(m))
            .all(|m| {
                chosen
                    .iter()
                    .enumerate()
                    .any(|(j, c)| j != i && !removed[j] && c.covered_masks.contains(m))
            });
        if redundant {
            removed[i] = true;
        }
    }
    let mut idx = 0;
    chosen.retain(|_| {
        let keep = !removed[idx];
        idx += 1;
        keep
    });
    chosen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppProfile {
    Detection,
    Ocr,
}

impl FromStr for AppProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detection" => Ok(Self::Detection),
            "ocr" => Ok(Self::Ocr),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }
}

/// Bounds/elasticity per ascending scale rank `r` of `k` ranks.
///
/// Detection: smaller scales shrink less and stretch more; OCR never
/// shrinks. A single rank is treated as the smallest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileTable {
    pub detection_min: (f64, f64),
    pub detection_max: (f64, f64),
    pub detection_elasticity: (f64, f64),
    pub ocr_bounds: (f64, f64),
    pub ocr_elasticity: f64,
}

impl Default for ProfileTable {
    fn default() -> Self {
        Self {
            // (value at largest rank, extra at smallest rank)
            detection_min: (0.5, 0.3),
            // (value at smallest rank, reduction at largest rank)
            detection_max: (1.5, 0.25),
            // (value at smallest rank, increase at largest rank)
            detection_elasticity: (0.5, 0.5),
            ocr_bounds: (1.0, 1.25),
            ocr_elasticity: 0.25,
        }
    }
}

impl ProfileTable {
    pub fn lookup(&self, profile: AppProfile, rank: usize, ranks: usize) -> ((f64, f64), f64) {
        match profile {
            AppProfile::Ocr => (self.ocr_bounds, self.ocr_elasticity),
            AppProfile::Detection => {
                let t = if ranks <= 1 {
                    0.0
                } else {
                    rank.min(ranks - 1) as f64 / (ranks - 1) as f64
                };
                let min = self.detection_min.0 + self.detection_min.1 * (1.0 - t);
                let max = self.detection_max.0 - self.detection_max.1 * t;
                let e = self.detection_elasticity.0 + self.detection_elasticity.1 * t;
                ((min, max), e)
            }
        }
    }
}

pub fn attach_bounds(
    mut choice: TileChoice,
    scale_index: usize,
    ranks: usize,
    profile: AppProfile,
    table: &ProfileTable,
) -> TileChoice {
    let (bounds, e) = table.lookup(profile, scale_index, ranks);
    choice.bounds = bounds;
    choice.elasticity = e;
    choice
}

/// Result of tile selection for one camera frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub masks: Vec<BBox>,
    pub choices: Vec<TileChoice>,
    /// Masks that fell back to a catch-all tile.
    pub degraded: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub goodness: GoodnessCriteria,
    pub profile: AppProfile,
    pub table: ProfileTable,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            goodness: GoodnessCriteria::default(),
            profile: AppProfile::Detection,
            table: ProfileTable::default(),
        }
    }
}

/// Goodness assignment, catch-all fallback, set cover and bounds for one
/// camera frame. Masks are clipped to the frame first; empty ones vanish.
pub fn select_tiles(
    bag: &TileBag,
    scales: &ScaleSet,
    frame: &BBox,
    raw_masks: &[BBox],
    params: &SelectionParams,
) -> Result<Selection> {
    let masks: Vec<BBox> = raw_masks.iter().filter_map(|m| m.clip(frame)).collect();
    if masks.is_empty() {
        return Ok(Selection::default());
    }
    let assignment = assign_masks(bag, &masks, &params.goodness);
    let mut tile_masks: BTreeMap<usize, BTreeSet<usize>> = assignment
        .tile_to_masks
        .iter()
        .map(|(t, ms)| (*t, ms.iter().copied().collect()))
        .collect();
    let mut degraded_tiles: BTreeSet<usize> = BTreeSet::new();
    let mut degraded = Vec::new();
    for &mi in &assignment.unassigned {
        let mask = &masks[mi];
        let best = bag
            .intersecting(mask)
            .into_iter()
            .map(|id| bag.tile(id))
            .filter(|t| t.scale_dim == scales.catch_all)
            .map(|t| (t.id, t.bbox.intersection_area(mask) / mask.area()))
            .filter(|&(_, cov)| cov > 0.0)
            .fold(None::<(usize, f64)>, |acc, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        if let Some((tid, _)) = best {
            tile_masks.entry(tid).or_default().insert(mi);
            degraded_tiles.insert(tid);
            degraded.push(mi);
        }
    }

    let ranks = scales.all().len();
    let candidates: Vec<TileChoice> = tile_masks
        .into_iter()
        .map(|(tid, ms)| {
            let tile = *bag.tile(tid);
            let rects: Vec<BBox> = ms.iter().map(|&m| masks[m]).collect();
            let mut c = TileChoice::new(tile, ms, tile_cost(&tile, &rects));
            c.degraded = degraded_tiles.contains(&tid);
            let rank = scales.rank_of(tile.scale_dim).unwrap_or(ranks - 1);
            attach_bounds(c, rank, ranks, params.profile, &params.table)
        })
        .collect();
    let universe: BTreeSet<usize> = (0..masks.len()).collect();
    let choices = greedy_mcmsc(&universe, &candidates)?;
    Ok(Selection {
        masks,
        choices,
        degraded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tile(id: usize, x: f64, y: f64, s: f64) -> Tile {
        Tile {
            id,
            camera_id: 0,
            scale_dim: s as u32,
            bbox: BBox::from_xywh(x, y, s, s),
        }
    }

    fn cand(id: usize, masks: &[usize], cost: f64) -> TileChoice {
        TileChoice::new(tile(id, 0.0, 0.0, 64.0), masks.iter().copied().collect(), cost)
    }

    fn total(c: &[TileChoice]) -> f64 {
        c.iter().map(|c| c.cost).sum()
    }

    #[test]
    fn cost_examples() {
        let t = tile(0, 0.0, 0.0, 64.0);
        assert_eq!(tile_cost(&t, &[t.bbox]), 0.0);
        assert_eq!(tile_cost(&t, &[BBox::from_xywh(10.0, 10.0, 32.0, 32.0)]), 3072.0);
        let two = [BBox::from_xywh(0.0, 0.0, 32.0, 32.0), BBox::from_xywh(16.0, 16.0, 32.0, 32.0)];
        // inclusion-exclusion: 4096 - (1024 + 1024 - 256)
        assert_eq!(tile_cost(&t, &two), 2304.0);
    }

    #[test]
    fn union_area_matches_inclusion_exclusion() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let mut r = || BBox::from_xywh(rng.gen_range(0.0..50.0), rng.gen_range(0.0..50.0), rng.gen_range(1.0..40.0), rng.gen_range(1.0..40.0));
            let (a, b, c) = (r(), r(), r());
            let i = |x: &BBox, y: &BBox| x.intersection(y);
            let ab = i(&a, &b).map_or(0.0, |v| v.area());
            let ac = i(&a, &c).map_or(0.0, |v| v.area());
            let bc = i(&b, &c).map_or(0.0, |v| v.area());
            let abc = i(&a, &b).and_then(|v| i(&v, &c)).map_or(0.0, |v| v.area());
            let expect = a.area() + b.area() + c.area() - ab - ac - bc + abc;
            assert!((union_area(&[a, b, c]) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn greedy_examples() {
        let u1: BTreeSet<usize> = [1].into();
        let only = greedy_mcmsc(&u1, &[cand(0, &[1], 42.0)]).unwrap();
        assert_eq!(only.len(), 1);

        let u: BTreeSet<usize> = [1, 2, 3].into();
        let picks = greedy_mcmsc(&u, &[cand(1, &[1, 2], 100.0), cand(2, &[2, 3], 100.0), cand(3, &[3], 10.0)]).unwrap();
        let ids: Vec<usize> = picks.iter().map(|c| c.tile.id).collect();
        assert_eq!(ids, vec![3, 1]);
        assert_eq!(total(&picks), 110.0);

        let picks = greedy_mcmsc(&u1, &[cand(1, &[1], 10.0), cand(2, &[1], 5.0)]).unwrap();
        assert_eq!(picks[0].tile.id, 2);
    }

    #[test]
    fn uncoverable_mask_is_error() {
        let u: BTreeSet<usize> = [0, 1].into();
        assert!(matches!(greedy_mcmsc(&u, &[cand(0, &[0], 1.0)]), Err(Error::Uncoverable(1))));
    }

    #[test]
    fn pruning_drops_dominated_pick() {
        // greedy takes t0 then t1 then t2; t2 alone covers both masks later
        let u: BTreeSet<usize> = [0, 1].into();
        let chosen = vec![cand(0, &[0], 5.0), cand(1, &[1], 5.0), cand(2, &[0, 1], 12.0)];
        let pruned = prune_redundant(&u, chosen);
        let ids: Vec<usize> = pruned.iter().map(|c| c.tile.id).collect();
        assert_eq!(ids, vec![0, 1]);
    }

    fn harmonic(n: usize) -> f64 {
        (1..=n).map(|i| 1.0 / i as f64).sum()
    }

    fn brute_optimum(u: &BTreeSet<usize>, cands: &[TileChoice]) -> f64 {
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << cands.len()) {
            let mut cov = BTreeSet::new();
            let mut cost = 0.0;
            for (i, c) in cands.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    cov.extend(c.covered_masks.iter().copied());
                    cost += c.cost;
                }
            }
            if u.is_subset(&cov) {
                best = best.min(cost);
            }
        }
        best
    }

    #[test]
    fn greedy_within_harmonic_bound_of_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for _ in 0..200 {
            let n_masks = rng.gen_range(1..8);
            let n_cands = rng.gen_range(1..=10);
            let u: BTreeSet<usize> = (0..n_masks).collect();
            let mut cands: Vec<TileChoice> = (0..n_cands)
                .map(|i| {
                    let ms: Vec<usize> = (0..n_masks).filter(|_| rng.gen_bool(0.4)).collect();
                    cand(i, &ms, rng.gen_range(0.0..100.0))
                })
                .collect();
            for m in 0..n_masks {
                if !cands.iter().any(|c| c.covered_masks.contains(&m)) {
                    cands[rng.gen_range(0..n_cands)].covered_masks.insert(m);
                }
            }
            cands.retain(|c| !c.covered_masks.is_empty());
            let picks = greedy_mcmsc(&u, &cands).unwrap();
            let cov: BTreeSet<usize> = picks.iter().flat_map(|c| c.covered_masks.iter().copied()).collect();
            assert!(u.is_subset(&cov));
            assert!(total(&picks) <= harmonic(n_masks) * brute_optimum(&u, &cands) + 1e-9);
            assert_eq!(picks, greedy_mcmsc(&u, &cands).unwrap());
            for (i, p) in picks.iter().enumerate() {
                let unique = p.covered_masks.iter().any(|m| {
                    picks.iter().enumerate().all(|(j, q)| j == i || !q.covered_masks.contains(m))
                });
                assert!(unique);
            }
        }
    }

    #[test]
    fn bounds_profile_examples() {
        let t = ProfileTable::default();
        let c = cand(0, &[0], 0.0);
        let small = attach_bounds(c.clone(), 0, 3, AppProfile::Detection, &t);
        assert_eq!(small.bounds, (0.8, 1.5));
        assert_eq!(small.elasticity, 0.5);
        let large = attach_bounds(c.clone(), 2, 3, AppProfile::Detection, &t);
        assert_eq!(large.bounds, (0.5, 1.25));
        assert_eq!(large.elasticity, 1.0);
        for r in 0..3 {
            assert_eq!(attach_bounds(c.clone(), r, 3, AppProfile::Ocr, &t).bounds.0, 1.0);
        }
        assert!(matches!("lpr".parse::<AppProfile>(), Err(Error::UnknownProfile(_))));
    }

    #[test]
    fn select_tiles_falls_back_to_catch_all() {
        let scales = ScaleSet { dims: vec![64], catch_all: 128 };
        let frame = BBox::new(0.0, 0.0, 512.0, 512.0);
        let bag = TileBag::for_camera(0, (512, 512), &scales, 0.25);
        // 120 tall: too tall for 64 (ratio > 0.9) and for 128 (0.94)
        let masks = [BBox::from_xywh(200.0, 200.0, 40.0, 120.0), BBox::from_xywh(20.0, 20.0, 30.0, 40.0)];
        let sel = select_tiles(&bag, &scales, &frame, &masks, &SelectionParams::default()).unwrap();
        assert_eq!(sel.degraded, vec![0]);
        let covered: BTreeSet<usize> = sel.choices.iter().flat_map(|c| c.covered_masks.iter().copied()).collect();
        assert_eq!(covered, [0, 1].into());
        let deg = sel.choices.iter().find(|c| c.covered_masks.contains(&0)).unwrap();
        assert!(deg.degraded);
        assert_eq!(deg.tile.scale_dim, 128);
    }

    proptest::proptest! {
        #[test]
        fn greedy_covers_every_coverable_mask(
            sets in proptest::collection::vec((proptest::collection::btree_set(0usize..8, 0..5), 1.0f64..50.0), 1..10),
        ) {
            let cands: Vec<TileChoice> = sets
                .iter()
                .enumerate()
                .map(|(i, (cov, cost))| TileChoice::new(tile(i, 0.0, 0.0, 64.0), cov.clone(), *cost))
                .collect();
            let universe: BTreeSet<usize> = cands.iter().flat_map(|c| c.covered_masks.iter().copied()).collect();
            let chosen = greedy_mcmsc(&universe, &cands).unwrap();
            let covered: BTreeSet<usize> = chosen.iter().flat_map(|c| c.covered_masks.iter().copied()).collect();
            proptest::prop_assert!(covered.is_superset(&universe));
            // every pick adds something new
            proptest::prop_assert!(chosen.len() <= universe.len());
        }
    }
}
