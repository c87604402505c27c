//! Rectangle algebra, IoU, greedy NMS, 4-DOF similarity transforms and a
//! rectangle quadtree.
//!
//! All coordinates are real-valued pixels with `y` growing downwards.
//! Rectangles are closed: two boxes sharing only an edge intersect.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, reordering the corners so the invariants hold.
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Closed-rectangle intersection test; touching edges count.
    pub fn intersects(&self, other: &BBox) -> bool {
        self.x_min <= other.x_max
            && other.x_min <= self.x_max
            && self.y_min <= other.y_max
            && other.y_min <= self.y_max
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        if !self.intersects(other) {
            return None;
        }
        Some(BBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        })
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        self.intersection(other).map_or(0.0, |b| b.area())
    }

    pub fn union_box(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.x_max <= self.x_max
            && other.y_min >= self.y_min
            && other.y_max <= self.y_max
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Clamps into `bounds`; `None` when nothing of positive area remains.
    pub fn clip(&self, bounds: &BBox) -> Option<BBox> {
        self.intersection(bounds).filter(|b| b.area() > 0.0)
    }

    /// Gap between the two boundaries; 0 when they touch or overlap.
    pub fn gap(&self, other: &BBox) -> f64 {
        let dx = (other.x_min - self.x_max).max(self.x_min - other.x_max).max(0.0);
        let dy = (other.y_min - self.y_max).max(self.y_min - other.y_max).max(0.0);
        dx.max(dy)
    }
}

/// Intersection over union. Zero when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression. Returns indices into `boxes` of the
/// survivors, ordered by descending confidence (ties by input order).
pub fn nms_indices(boxes: &[(BBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    // stable sort keeps insertion order on ties
    order.sort_by(|&a, &b| boxes[b].1.total_cmp(&boxes[a].1));
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep
            .iter()
            .all(|&k| iou(&boxes[k].0, &boxes[i].0) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

pub fn nms(boxes: &[(BBox, f64)], iou_threshold: f64) -> Vec<(BBox, f64)> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// 4-DOF similarity transform: `p' = scale * R(rotation) * p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine2D {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for Affine2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Affine2D {
    pub fn new(scale: f64, rotation: f64, tx: f64, ty: f64) -> Self {
        assert!(scale > 0.0, "similarity scale must be positive");
        Self {
            scale,
            rotation,
            tx,
            ty,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, tx, ty)
    }

    /// Linear part as `(a, b)` with `[a -b; b a]`.
    pub fn linear(&self) -> (f64, f64) {
        (
            self.scale * self.rotation.cos(),
            self.scale * self.rotation.sin(),
        )
    }

    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (a, b) = self.linear();
        (a * x - b * y + self.tx, b * x + a * y + self.ty)
    }

    /// Applies only the linear part (for velocities).
    pub fn apply_vector(&self, vx: f64, vy: f64) -> (f64, f64) {
        let (a, b) = self.linear();
        (a * vx - b * vy, b * vx + a * vy)
    }

    pub fn inverse(&self) -> Affine2D {
        let inv_scale = 1.0 / self.scale;
        let inv = Affine2D {
            scale: inv_scale,
            rotation: -self.rotation,
            tx: 0.0,
            ty: 0.0,
        };
        let (tx, ty) = inv.apply_vector(-self.tx, -self.ty);
        Affine2D { tx, ty, ..inv }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Affine2D) -> Affine2D {
        let (tx, ty) = self.apply_point(other.tx, other.ty);
        Affine2D {
            scale: self.scale * other.scale,
            rotation: self.rotation + other.rotation,
            tx,
            ty,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.rotation == 0.0 && self.tx == 0.0 && self.ty == 0.0
    }
}

/// Axis-aligned bounding box of the four transformed corners.
pub fn apply_affine(t: &Affine2D, b: &BBox) -> BBox {
    let corners = [
        (b.x_min, b.y_min),
        (b.x_max, b.y_min),
        (b.x_min, b.y_max),
        (b.x_max, b.y_max),
    ];
    let mut out = BBox {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for (x, y) in corners {
        let (px, py) = t.apply_point(x, y);
        out.x_min = out.x_min.min(px);
        out.y_min = out.y_min.min(py);
        out.x_max = out.x_max.max(px);
        out.y_max = out.y_max.max(py);
    }
    out
}

pub const QUADTREE_NODE_CAPACITY: usize = 8;
pub const QUADTREE_MAX_DEPTH: usize = 8;

#[derive(Debug, Clone)]
struct QuadNode {
    region: BBox,
    entries: Vec<(BBox, usize)>,
    children: Option<Box<[QuadNode; 4]>>,
    depth: usize,
}

impl QuadNode {
    fn new(region: BBox, depth: usize) -> Self {
        Self {
            region,
            entries: Vec::new(),
            children: None,
            depth,
        }
    }

    fn child_for(&self, b: &BBox) -> Option<usize> {
        let children = self.children.as_ref()?;
        children.iter().position(|c| c.region.contains(b))
    }

    fn split(&mut self) {
        let r = self.region;
        let (cx, cy) = r.center();
        let d = self.depth + 1;
        self.children = Some(Box::new([
            QuadNode::new(BBox::new(r.x_min, r.y_min, cx, cy), d),
            QuadNode::new(BBox::new(cx, r.y_min, r.x_max, cy), d),
            QuadNode::new(BBox::new(r.x_min, cy, cx, r.y_max), d),
            QuadNode::new(BBox::new(cx, cy, r.x_max, r.y_max), d),
        ]));
        let entries = std::mem::take(&mut self.entries);
        for e in entries {
            self.insert(e);
        }
    }

    fn insert(&mut self, entry: (BBox, usize)) {
        if let Some(i) = self.child_for(&entry.0) {
            self.children.as_mut().unwrap()[i].insert(entry);
            return;
        }
        self.entries.push(entry);
        if self.children.is_none()
            && self.entries.len() > QUADTREE_NODE_CAPACITY
            && self.depth < QUADTREE_MAX_DEPTH
        {
            self.split();
        }
    }

    fn query(&self, probe: &BBox, out: &mut Vec<usize>) {
        for (b, id) in &self.entries {
            if b.intersects(probe) {
                out.push(*id);
            }
        }
        if let Some(children) = &self.children {
            for c in children.iter() {
                if c.region.intersects(probe) {
                    c.query(probe, out);
                }
            }
        }
    }

    fn count(&self) -> usize {
        self.entries.len()
            + self
                .children
                .as_ref()
                .map_or(0, |c| c.iter().map(QuadNode::count).sum())
    }
}

/// Region quadtree over axis-aligned boxes. Entries that straddle a split
/// line stay at the deepest node that fully contains them.
#[derive(Debug, Clone)]
pub struct QuadTree {
    root: QuadNode,
}

impl QuadTree {
    pub fn new(region: BBox) -> Self {
        Self {
            root: QuadNode::new(region, 0),
        }
    }

    pub fn build(region: BBox, entries: impl IntoIterator<Item = (BBox, usize)>) -> Self {
        let mut tree = Self::new(region);
        for e in entries {
            tree.insert(e.0, e.1);
        }
        tree
    }

    pub fn insert(&mut self, b: BBox, id: usize) {
        self.root.insert((b, id));
    }

    pub fn region(&self) -> BBox {
        self.root.region
    }

    pub fn len(&self) -> usize {
        self.root.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ids of all entries intersecting `probe`, sorted ascending.
    pub fn query(&self, probe: &BBox) -> Vec<usize> {
        let mut out = Vec::new();
        // Entries are only ever inside the root region or held at the root,
        // so the root's own entries are always checked.
        for (b, id) in &self.root.entries {
            if b.intersects(probe) {
                out.push(*id);
            }
        }
        if let Some(children) = &self.root.children {
            for c in children.iter() {
                if c.region.intersects(probe) {
                    c.query(probe, &mut out);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn quadtree_query(q: &QuadTree, probe: &BBox) -> Vec<usize> {
    q.query(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.0..80.0f64, 0.0..80.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_xywh(x, y, w, h))
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        // 50 / (100 + 100 - 50)
        assert_abs_diff_eq!(iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_of_points_is_zero() {
        let p = BBox::new(1.0, 1.0, 1.0, 1.0);
        let q = BBox::new(5.0, 5.0, 5.0, 5.0);
        assert_eq!(iou(&p, &q), 0.0);
        assert_eq!(iou(&p, &p), 0.0);
    }

    #[test]
    fn iou_fuzz_bounds_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let mut b = || {
                BBox::from_xywh(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(0.0..40.0),
                    rng.gen_range(0.0..40.0),
                )
            };
            let (a, c) = (b(), b());
            let v = iou(&a, &c);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, iou(&c, &a));
        }
    }

    #[test]
    fn nms_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[(a, 0.5)], 0.5), vec![(a, 0.5)]);
        assert_eq!(nms(&[(a, 0.8), (a, 0.9)], 0.5), vec![(a, 0.9)]);
        let far = BBox::new(50.0, 50.0, 60.0, 60.0);
        assert_eq!(nms(&[(a, 0.9), (far, 0.8)], 0.5).len(), 2);
    }

    #[test]
    fn nms_ties_keep_insertion_order() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(1.0, 0.0, 11.0, 10.0);
        assert_eq!(nms_indices(&[(a, 0.7), (b, 0.7)], 0.5), vec![0]);
        assert_eq!(nms_indices(&[(b, 0.7), (a, 0.7)], 0.5), vec![0]);
    }

    #[test]
    fn affine_examples() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(apply_affine(&Affine2D::identity(), &b), b);
        assert_eq!(
            apply_affine(&Affine2D::translation(5.0, 3.0), &b),
            BBox::new(5.0, 3.0, 15.0, 13.0)
        );
        assert_eq!(
            apply_affine(&Affine2D::new(2.0, 0.0, 0.0, 0.0), &BBox::new(1.0, 1.0, 2.0, 2.0)),
            BBox::new(2.0, 2.0, 4.0, 4.0)
        );
    }

    #[test]
    fn affine_inverse_composes_to_identity() {
        let t = Affine2D::new(1.3, 0.4, -7.0, 12.5);
        let id = t.inverse().compose(&t);
        assert_abs_diff_eq!(id.scale, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id.rotation, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id.tx, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(id.ty, 0.0, epsilon = 1e-9);
    }

    fn linear_scan(entries: &[(BBox, usize)], probe: &BBox) -> Vec<usize> {
        let mut v: Vec<usize> = entries
            .iter()
            .filter(|(b, _)| b.intersects(probe))
            .map(|(_, id)| *id)
            .collect();
        v.sort_unstable();
        v
    }

    fn random_entries(rng: &mut ChaCha8Rng, n: usize, side: f64) -> Vec<(BBox, usize)> {
        (0..n)
            .map(|i| {
                let s = rng.gen_range(4.0..64.0);
                let x = rng.gen_range(0.0..side - s);
                let y = rng.gen_range(0.0..side - s);
                (BBox::from_xywh(x, y, s, s), i)
            })
            .collect()
    }

    #[test]
    fn quadtree_examples() {
        let root = BBox::new(0.0, 0.0, 512.0, 512.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let entries = random_entries(&mut rng, 200, 512.0);
        let tree = QuadTree::build(root, entries.clone());
        assert_eq!(tree.len(), 200);
        assert!(tree.query(&BBox::new(600.0, 600.0, 700.0, 700.0)).is_empty());
        assert_eq!(tree.query(&root), (0..200).collect::<Vec<_>>());
        let probe = BBox::new(100.0, 80.0, 220.0, 300.0);
        assert_eq!(tree.query(&probe), linear_scan(&entries, &probe));
    }

    #[test]
    fn quadtree_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(0..300);
            let entries = random_entries(&mut rng, n, 1024.0);
            let tree = QuadTree::build(BBox::new(0.0, 0.0, 1024.0, 1024.0), entries.clone());
            let x = rng.gen_range(-100.0..1024.0);
            let y = rng.gen_range(-100.0..1024.0);
            let probe = BBox::from_xywh(x, y, rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0));
            assert_eq!(tree.query(&probe), linear_scan(&entries, &probe));
        }
    }

    #[test]
    fn touching_boxes_intersect() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert!(a.intersects(&BBox::new(10.0, 0.0, 20.0, 10.0)));
        assert!(!a.intersects(&BBox::new(10.5, 0.0, 20.0, 10.0)));
    }

    proptest! {
        #[test]
        fn affine_round_trip_encloses(b in arb_box(), s in 0.25..4.0f64, r in -3.2..3.2f64,
                                      tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let t = Affine2D::new(s, r, tx, ty);
            let back = apply_affine(&t.inverse(), &apply_affine(&t, &b));
            prop_assert!(back.x_min <= b.x_min + 1e-6 && back.y_min <= b.y_min + 1e-6);
            prop_assert!(back.x_max >= b.x_max - 1e-6 && back.y_max >= b.y_max - 1e-6);
        }

        #[test]
        fn translation_and_scale_round_trip_exact(b in arb_box(), s in 0.25..4.0f64,
                                                  tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
            let t = Affine2D::new(s, 0.0, tx, ty);
            let back = apply_affine(&t.inverse(), &apply_affine(&t, &b));
            prop_assert!((back.x_min - b.x_min).abs() < 1e-6);
            prop_assert!((back.y_max - b.y_max).abs() < 1e-6);
        }

        #[test]
        fn nms_survivors_are_subset_and_separated(
            raw in prop::collection::vec((arb_box(), 0.0..1.0f64), 0..30),
            thr in 0.1..0.9f64,
        ) {
            let kept = nms(&raw, thr);
            for k in &kept {
                prop_assert!(raw.contains(k));
            }
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    prop_assert!(iou(&kept[i].0, &kept[j].0) <= thr);
                }
            }
        }

        #[test]
        fn iou_self_is_one(b in arb_box()) {
            if b.area() > 0.0 {
                prop_assert!((iou(&b, &b) - 1.0).abs() < 1e-12);
            }
        }
    }
}
