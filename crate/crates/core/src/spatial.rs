//! Spatial primitives: axis-aligned boxes, voxel keys, a coarse hash grid for
//! box queries and a static kd-tree for nearest-neighbour and radius search.

use std::collections::HashMap;

use nalgebra::Point3;

/// Integer voxel coordinates, `floor(position / size)` per axis.
pub type VoxelKey = [i64; 3];

#[inline]
pub fn voxel_key(p: &Point3<f64>, size: f64) -> VoxelKey {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

/// Axis-aligned bounding box with inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Aabb { min: first, max: first };
        for p in it {
            bb.min = bb.min.inf(p);
            bb.max = bb.max.sup(p);
        }
        Some(bb)
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            min: self.min.map(|c| c - margin),
            max: self.max.map(|c| c + margin),
        }
    }

    #[inline]
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }
}

/// Uniform hash grid mapping cells to point indices.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    cells: HashMap<VoxelKey, Vec<u32>>,
}

impl GridIndex {
    pub fn new(cell: f64) -> Self {
        Self { cell, cells: HashMap::new() }
    }

    pub fn insert(&mut self, p: &Point3<f64>, idx: u32) {
        self.cells.entry(voxel_key(p, self.cell)).or_default().push(idx);
    }

    /// Indices stored in cells that intersect `bounds`. A superset of the
    /// points inside `bounds`; callers filter exactly.
    pub fn candidates(&self, bounds: &Aabb) -> impl Iterator<Item = usize> + '_ {
        let lo = voxel_key(&bounds.min, self.cell);
        let hi = voxel_key(&bounds.max, self.cell);
        let span: u128 = (0..3).map(|i| (hi[i] - lo[i] + 1).max(0) as u128).product();
        let in_range = move |k: &VoxelKey| (0..3).all(|i| k[i] >= lo[i] && k[i] <= hi[i]);

        let mut keys: Vec<VoxelKey> = if span > self.cells.len() as u128 {
            self.cells.keys().filter(|k| in_range(k)).copied().collect()
        } else {
            let mut keys = Vec::new();
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let k = [x, y, z];
                        if self.cells.contains_key(&k) {
                            keys.push(k);
                        }
                    }
                }
            }
            keys
        };
        keys.sort_unstable();
        keys.into_iter()
            .flat_map(move |k| self.cells[&k].iter().map(|&i| i as usize))
    }
}

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3D kd-tree over a point slice.
///
/// Queries break distance ties towards the smallest point index, so results
/// do not depend on tree layout.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    perm: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3<f64>]) -> Self {
        Self::from_coords(points.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    pub fn from_coords(points: Vec<[f64; 3]>) -> Self {
        let mut tree = KdTree {
            perm: (0..points.len() as u32).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let node_id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return node_id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.perm[start..end] {
            let p = &self.points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            // all points coincide
            return node_id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.perm[mid] as usize][axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[node_id] = Node::Split { axis, value, left, right };
        node_id
    }

    #[inline]
    fn dist2(&self, i: u32, q: &[f64; 3]) -> f64 {
        let p = &self.points[i as usize];
        let dx = p[0] - q[0];
        let dy = p[1] - q[1];
        let dz = p[2] - q[2];
        dx * dx + dy * dy + dz * dz
    }

    /// Nearest point with distance strictly below `radius`, as
    /// `(index, squared distance)`.
    pub fn nearest_within(&self, q: &Point3<f64>, radius: f64) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let mut best: Option<(f64, u32)> = None;
        self.nearest_rec(0, &q, radius * radius, &mut best);
        best.map(|(d2, i)| (i as usize, d2))
    }

    /// Nearest point overall.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        self.nearest_within(q, f64::INFINITY)
    }

    fn nearest_rec(&self, node: usize, q: &[f64; 3], r2: f64, best: &mut Option<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.perm[start..end] {
                    let d2 = self.dist2(i, q);
                    if d2 < r2 && best.is_none_or(|b| (d2, i) < b) {
                        *best = Some((d2, i));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, r2, best);
                let d2 = diff * diff;
                if d2 < r2 && best.is_none_or(|(b, _)| d2 <= b) {
                    self.nearest_rec(far, q, r2, best);
                }
            }
        }
    }

    /// Indices (ascending) of all points within `radius`, inclusive.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.within_rec(0, &[q.x, q.y, q.z], radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.perm[start..end]
                        .iter()
                        .filter(|&&i| self.dist2(i, q) <= r2)
                        .map(|&i| i as usize),
                );
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.within_rec(near, q, r2, out);
                if diff * diff <= r2 {
                    self.within_rec(far, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize, grid: bool) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                if grid {
                    // many exact ties and repeated coordinates
                    Point3::new(
                        rng.random_range(0..5) as f64 * 0.1,
                        rng.random_range(0..5) as f64 * 0.1,
                        rng.random_range(0..3) as f64 * 0.1,
                    )
                } else {
                    Point3::new(rng.random(), rng.random(), rng.random())
                }
            })
            .collect()
    }

    fn brute_nearest(points: &[Point3<f64>], q: &Point3<f64>, r: f64) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < r * r && best.is_none_or(|b| (d2, i) < b) {
                best = Some((d2, i));
            }
        }
        best.map(|(_, i)| i)
    }

    #[test]
    fn kdtree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..40 {
            let grid = case % 2 == 0;
            let n = rng.random_range(1..400);
            let pts = cloud(&mut rng, n, grid);
            let tree = KdTree::new(&pts);
            for _ in 0..50 {
                let q = cloud(&mut rng, 1, grid)[0];
                let r = rng.random_range(0.01..0.4);
                assert_eq!(tree.nearest_within(&q, r).map(|x| x.0), brute_nearest(&pts, &q, r));
                let expect: Vec<usize> = (0..pts.len())
                    .filter(|&i| (pts[i] - q).norm_squared() <= r * r)
                    .collect();
                assert_eq!(tree.within(&q, r), expect);
            }
        }
    }

    #[test]
    fn coincident_points_pick_smallest_index() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 100];
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Point3::new(1.0, 1.0, 1.0)), Some((0, 0.0)));
        assert_eq!(tree.within(&Point3::new(1.0, 1.0, 1.0), 0.0).len(), 100);
    }

    #[test]
    fn grid_candidates_cover_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3<f64>> = (0..2000)
            .map(|_| Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut grid = GridIndex::new(0.25);
        for (i, p) in pts.iter().enumerate() {
            grid.insert(p, i as u32);
        }
        for big in [false, true] {
            let half = if big { 100.0 } else { 0.7 };
            let bounds = Aabb::new(Point3::new(-half, -0.3, -half), Point3::new(0.4, half, 0.2));
            let mut got: Vec<usize> = grid.candidates(&bounds).filter(|&i| bounds.contains(&pts[i])).collect();
            got.sort_unstable();
            let expect: Vec<usize> = (0..pts.len()).filter(|&i| bounds.contains(&pts[i])).collect();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn voxel_key_floors_negative() {
        assert_eq!(voxel_key(&Point3::new(-0.001, 0.019, 0.02), 0.02), [-1, 0, 1]);
    }
}
