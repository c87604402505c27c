//! Per-camera tile scales from the object-size distribution observed during
//! stabilization: merge nearby boxes, cluster `(w, h)` with k-means plus an
//! elbow rule, round each centroid's larger side up to a multiple of 32, and
//! add a catch-all scale about 1.5x the largest.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::util::rng_for;

pub const SCALE_QUANTUM: u32 = 32;
pub const DEFAULT_MERGE_GAP: f64 = 8.0;
pub const DEFAULT_K_MAX: usize = 6;
/// Catch-all used when stabilization observed nothing.
pub const FALLBACK_CATCH_ALL: u32 = 128;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSample {
    pub width: f64,
    pub height: f64,
}

impl SizeSample {
    pub fn of(b: &BBox) -> Self {
        Self {
            width: b.width(),
            height: b.height(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet {
    /// Square tile sides, strictly increasing multiples of 32.
    pub dims: Vec<u32>,
    pub catch_all: u32,
}

impl ScaleSet {
    pub fn fallback() -> Self {
        Self {
            dims: Vec::new(),
            catch_all: FALLBACK_CATCH_ALL,
        }
    }

    /// All scales including the catch-all, ascending.
    pub fn all(&self) -> Vec<u32> {
        let mut v = self.dims.clone();
        v.push(self.catch_all);
        v
    }

    /// Rank of `dim` among [`ScaleSet::all`].
    pub fn rank_of(&self, dim: u32) -> Option<usize> {
        self.all().iter().position(|&d| d == dim)
    }

    pub fn is_valid(&self) -> bool {
        self.dims.windows(2).all(|w| w[0] < w[1])
            && self.dims.iter().all(|&d| d > 0 && d % SCALE_QUANTUM == 0)
            && self.catch_all % SCALE_QUANTUM == 0
            && self.catch_all > self.dims.last().copied().unwrap_or(0)
    }
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Original sizes, plus one enclosing-rectangle sample for every group of
/// two or more boxes connected by boundary gaps `<= gap`.
pub fn merge_proximal_boxes(boxes: &[BBox], gap: f64) -> Vec<SizeSample> {
    let mut out: Vec<SizeSample> = boxes.iter().map(SizeSample::of).collect();
    let mut dsu = Dsu((0..boxes.len()).collect());
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes[i].gap(&boxes[j]) <= gap {
                dsu.union(i, j);
            }
        }
    }
    let mut groups: Vec<(usize, BBox, usize)> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        let root = dsu.find(i);
        match groups.iter_mut().find(|g| g.0 == root) {
            Some(g) => {
                g.1 = g.1.union_box(b);
                g.2 += 1;
            }
            None => groups.push((root, *b, 1)),
        }
    }
    out.extend(
        groups
            .into_iter()
            .filter(|g| g.2 > 1)
            .map(|g| SizeSample::of(&g.1)),
    );
    out
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn wcss(points: &[(f64, f64)], centroids: &[(f64, f64)]) -> f64 {
    points
        .iter()
        .map(|&p| {
            centroids
                .iter()
                .map(|&c| dist2(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn kmeans_once(points: &[(f64, f64)], k: usize, rng: &mut impl Rng) -> (Vec<(f64, f64)>, f64) {
    // k-means++ seeding
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    while centroids.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|&p| {
                centroids
                    .iter()
                    .map(|&c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            points[rng.gen_range(0..points.len())]
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            points[chosen]
        };
        centroids.push(next);
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(p, centroids[a]).total_cmp(&dist2(p, centroids[b])))
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (i, &p) in points.iter().enumerate() {
            let s = &mut sums[assign[i]];
            s.0 += p.0;
            s.1 += p.1;
            s.2 += 1;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        if !changed {
            break;
        }
    }
    let cost = wcss(points, &centroids);
    (centroids, cost)
}

fn best_kmeans(points: &[(f64, f64)], k: usize, seed: u64) -> (Vec<(f64, f64)>, f64) {
    let mut rng = rng_for(seed, &[k as u64]);
    let mut best: Option<(Vec<(f64, f64)>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().map_or(true, |b| run.1 < b.1) {
            best = Some(run);
        }
    }
    best.unwrap()
}

/// Index (0-based, so `k - 1`) of the elbow of a non-increasing WCSS curve:
/// the point farthest below the chord joining its endpoints after both axes
/// are normalized to `[0, 1]`. Returns 0 when no point lies below the chord.
pub fn elbow_index(curve: &[f64]) -> usize {
    let n = curve.len();
    if n < 3 {
        return 0;
    }
    let (first, last) = (curve[0], curve[n - 1]);
    let span = first - last;
    if span <= 0.0 {
        return 0;
    }
    let mut best = (0, 0.0);
    for (i, &w) in curve.iter().enumerate() {
        let x = i as f64 / (n - 1) as f64;
        let y = (w - last) / span;
        let below = 1.0 - x - y;
        if below > best.1 + 1e-12 {
            best = (i, below);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    /// Centroids as `(w, h)`, sorted ascending by `max(w, h)` then `w`.
    pub centroids: Vec<(f64, f64)>,
    /// WCSS for `k = 1..=K`.
    pub wcss_curve: Vec<f64>,
}

pub fn cluster_sizes(samples: &[SizeSample], k_max: usize) -> Result<Clustering> {
    cluster_sizes_seeded(samples, k_max, 0)
}

pub fn cluster_sizes_seeded(samples: &[SizeSample], k_max: usize, seed: u64) -> Result<Clustering> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("size samples"));
    }
    if k_max == 0 {
        return Err(Error::Precondition("k_max must be >= 1".into()));
    }
    let points: Vec<(f64, f64)> = samples.iter().map(|s| (s.width, s.height)).collect();
    let mut distinct = points.clone();
    distinct.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    distinct.dedup();
    let k_top = k_max.min(distinct.len());

    let runs: Vec<(Vec<(f64, f64)>, f64)> =
        (1..=k_top).map(|k| best_kmeans(&points, k, seed)).collect();
    let curve: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let idx = elbow_index(&curve);
    let mut centroids = runs[idx].0.clone();
    centroids.sort_by(|a, b| {
        a.0.max(a.1)
            .total_cmp(&b.0.max(b.1))
            .then(a.0.total_cmp(&b.0))
    });
    Ok(Clustering {
        k: idx + 1,
        centroids,
        wcss_curve: curve,
    })
}

fn round_up_quantum(v: f64) -> u32 {
    let q = (v / SCALE_QUANTUM as f64).ceil().max(1.0) as u32;
    q * SCALE_QUANTUM
}

pub fn derive_scales(centroids: &[(f64, f64)]) -> ScaleSet {
    if centroids.is_empty() {
        return ScaleSet::fallback();
    }
    let mut dims: Vec<u32> = centroids
        .iter()
        .map(|&(w, h)| round_up_quantum(w.max(h)))
        .collect();
    dims.sort_unstable();
    dims.dedup();
    let largest = *dims.last().unwrap();
    let target = 1.5 * largest as f64;
    let q = SCALE_QUANTUM as f64;
    let mut catch_all = ((target / q).floor() * q) as u32;
    if catch_all <= largest {
        // next multiple strictly above 1.5x
        catch_all = ((target / q).floor() as u32 + 1) * SCALE_QUANTUM;
    }
    ScaleSet { dims, catch_all }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(w: f64, h: f64) -> SizeSample {
        SizeSample { width: w, height: h }
    }

    #[test]
    fn merge_examples() {
        let far = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(100.0, 100.0, 110.0, 110.0)];
        assert_eq!(merge_proximal_boxes(&far, 8.0).len(), 2);

        let near = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(5.0, 5.0, 15.0, 15.0)];
        let out = merge_proximal_boxes(&near, 0.0);
        assert_eq!(out.len(), 3);
        assert_eq!(out[2], s(15.0, 15.0));

        assert!(merge_proximal_boxes(&[], 8.0).is_empty());
    }

    #[test]
    fn merge_is_transitive() {
        let chain = [
            BBox::new(0.0, 0.0, 10.0, 10.0),
            BBox::new(14.0, 0.0, 24.0, 10.0),
            BBox::new(28.0, 0.0, 38.0, 10.0),
        ];
        let out = merge_proximal_boxes(&chain, 5.0);
        assert_eq!(out.len(), 4);
        assert_eq!(out[3], s(38.0, 10.0));
    }

    #[test]
    fn identical_samples_give_one_cluster() {
        let samples = vec![s(40.0, 50.0); 12];
        let c = cluster_sizes(&samples, 6).unwrap();
        assert_eq!(c.k, 1);
        assert_eq!(c.centroids, vec![(40.0, 50.0)]);
    }

    #[test]
    fn empty_samples_error() {
        assert!(cluster_sizes(&[], 6).is_err());
    }

    /// Exhaustive minimum WCSS over all 2-partitions.
    fn brute_wcss2(points: &[(f64, f64)]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<_> = (0..n)
                    .filter(|&i| ((mask >> i) & 1 == 1) == side)
                    .map(|i| points[i])
                    .collect();
                let m = members.len() as f64;
                let c = (
                    members.iter().map(|p| p.0).sum::<f64>() / m,
                    members.iter().map(|p| p.1).sum::<f64>() / m,
                );
                cost += members.iter().map(|&p| dist2(p, c)).sum::<f64>();
            }
            best = best.min(cost);
        }
        best
    }

    #[test]
    fn two_tight_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut samples = Vec::new();
        for &(cx, cy) in &[(30.0, 30.0), (100.0, 100.0)] {
            for _ in 0..6 {
                samples.push(s(cx + rng.gen_range(-1.0..1.0), cy + rng.gen_range(-1.0..1.0)));
            }
        }
        let c = cluster_sizes(&samples, 6).unwrap();
        assert_eq!(c.k, 2);
        assert!((c.centroids[0].0 - 30.0).abs() < 1.0 && (c.centroids[0].1 - 30.0).abs() < 1.0);
        assert!((c.centroids[1].0 - 100.0).abs() < 1.0 && (c.centroids[1].1 - 100.0).abs() < 1.0);
        let pts: Vec<_> = samples.iter().map(|s| (s.width, s.height)).collect();
        assert!((c.wcss_curve[1] - brute_wcss2(&pts)).abs() < 1e-9);
    }

    #[test]
    fn clustering_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<_> = (0..80)
            .map(|_| s(rng.gen_range(20.0..120.0), rng.gen_range(20.0..120.0)))
            .collect();
        assert_eq!(cluster_sizes(&samples, 6).unwrap(), cluster_sizes(&samples, 6).unwrap());
    }

    #[test]
    fn okutama_like_distribution_yields_64_96_128() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut samples = Vec::new();
        for &(cx, cy) in &[(36.0, 39.0), (50.0, 54.0), (81.0, 44.0)] {
            for _ in 0..40 {
                samples.push(s(cx + rng.gen_range(-3.0..3.0), cy + rng.gen_range(-3.0..3.0)));
            }
        }
        let c = cluster_sizes(&samples, 6).unwrap();
        // the two smaller clusters sit close together; the elbow may fold
        // them into one, which rounds to the same tile scales
        assert!(c.k == 2 || c.k == 3, "k = {}", c.k);
        let scales = derive_scales(&c.centroids);
        assert_eq!(scales.dims, vec![64, 96]);
        assert_eq!(scales.catch_all, 128);
    }

    #[test]
    fn derive_scales_examples() {
        let s1 = derive_scales(&[(36.0, 39.0), (50.0, 54.0), (81.0, 44.0)]);
        assert_eq!(s1, ScaleSet { dims: vec![64, 96], catch_all: 128 });
        let s2 = derive_scales(&[(32.0, 32.0)]);
        assert_eq!(s2, ScaleSet { dims: vec![32], catch_all: 64 });
        let s3 = derive_scales(&[(1.0, 1.0)]);
        assert_eq!(s3, ScaleSet { dims: vec![32], catch_all: 64 });
    }

    #[test]
    fn elbow_on_short_curves() {
        assert_eq!(elbow_index(&[10.0]), 0);
        assert_eq!(elbow_index(&[10.0, 0.0]), 0);
        assert_eq!(elbow_index(&[100.0, 5.0, 4.0, 3.0]), 1);
    }

    #[test]
    fn scale_set_invariants_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10_000 {
            let n = rng.gen_range(1..6);
            let cents: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.5..600.0), rng.gen_range(0.5..600.0)))
                .collect();
            let set = derive_scales(&cents);
            assert!(set.is_valid(), "{set:?}");
            for &(w, h) in &cents {
                assert!(set.dims.iter().any(|&d| d as f64 >= w.max(h)));
            }
        }
    }
}
