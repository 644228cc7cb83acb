use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{PointCloud, Vec3};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over a point set.
///
/// Results are ordered by ascending squared distance, ties by ascending point
/// index, which makes them identical to an exhaustive scan.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points().to_vec())
    }

    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot index an empty cloud"));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        let n = order.len();
        build_node(&points, &mut order, 0, n, &mut nodes);
        Ok(Self {
            points,
            order,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `min(k, n)` nearest indices, ascending by distance.
    pub fn knn(&self, query: &Vec3, k: usize) -> Vec<usize> {
        self.knn_with_dist2(query, k)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    }

    /// Like [`knn`](Self::knn) but also returns squared distances.
    pub fn knn_with_dist2(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| (c.index, c.dist2)).collect()
    }

    fn knn_visit(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &idx in &self.order[start..end] {
                    let c = Candidate {
                        dist2: dist2(q, &self.points[idx]),
                        index: idx,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_visit(near, q, k, heap);
                // Equal distances must still be visited: a smaller index may win the tie.
                if heap.len() < k || diff * diff <= heap.peek().expect("heap is full").dist2 {
                    self.knn_visit(far, q, k, heap);
                }
            }
        }
    }

    /// All indices within distance `r` (inclusive), ascending by distance.
    pub fn radius_search(&self, query: &Vec3, r: f64) -> Vec<usize> {
        self.radius_search_with_dist2(query, r)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    }

    pub fn radius_search_with_dist2(&self, query: &Vec3, r: f64) -> Vec<(usize, f64)> {
        let mut out: Vec<Candidate> = Vec::new();
        if r < 0.0 || r.is_nan() {
            return Vec::new();
        }
        let r2 = r * r;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &idx in &self.order[start..end] {
                        let d2 = dist2(query, &self.points[idx]);
                        if d2 <= r2 {
                            out.push(Candidate { dist2: d2, index: idx });
                        }
                    }
                }
                Node::Split {
                    axis,
                    value,
                    left,
                    right,
                } => {
                    let diff = query[axis] - value;
                    if diff <= 0.0 || diff * diff <= r2 {
                        stack.push(left);
                    }
                    if diff >= 0.0 || diff * diff <= r2 {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_unstable();
        out.into_iter().map(|c| (c.index, c.dist2)).collect()
    }
}

fn build_node(points: &[Vec3], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let (mut lo, mut hi) = (points[slice[0]], points[slice[0]]);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let extent = hi - lo;
    let axis = extent.imax();
    if extent[axis] == 0.0 {
        // All coincident; no split can separate them.
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    // Left holds coordinates <= value, right holds >= value.
    nodes.push(Node::Leaf { start, end });
    let left = build_node(points, order, start, start + mid, nodes);
    let right = build_node(points, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan(points: &[Vec3], q: &Vec3) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points.iter().enumerate().map(|(i, p)| (i, dist2(q, p))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all
    }

    fn scan_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
        scan(points, q).into_iter().take(k).map(|(i, _)| i).collect()
    }

    fn scan_radius(points: &[Vec3], q: &Vec3, r: f64) -> Vec<usize> {
        scan(points, q)
            .into_iter()
            .filter(|&(_, d2)| d2 <= r * r)
            .map(|(i, _)| i)
            .collect()
    }

    fn cube() -> Vec<Vec3> {
        let mut out = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    out.push(Vec3::new(x, y, z));
                }
            }
        }
        out
    }

    #[test]
    fn cube_examples() {
        let pts = cube();
        let index = SpatialIndex::from_points(pts.clone()).unwrap();
        assert_eq!(index.knn(&pts[0], 1), vec![0]);
        let center = Vec3::new(0.5, 0.5, 0.5);
        let all = index.radius_search(&center, 1.0);
        assert_eq!(all, scan_radius(&pts, &center, 1.0));
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        let sat = index.knn(&Vec3::new(0.1, 0.2, 0.3), 20);
        assert_eq!(sat, scan_knn(&pts, &Vec3::new(0.1, 0.2, 0.3), 8));
    }

    #[test]
    fn collinear_examples() {
        let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let index = SpatialIndex::from_points(pts).unwrap();
        assert_eq!(index.knn(&Vec3::zeros(), 2), vec![0, 1]);
        assert_eq!(index.radius_search(&Vec3::zeros(), 1.5), vec![0, 1]);
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(SpatialIndex::build(&PointCloud::default()).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        // Duplicates force equal distances across leaves.
        let mut pts = Vec::new();
        for _ in 0..5 {
            for p in cube() {
                pts.push(p);
            }
        }
        let index = SpatialIndex::from_points(pts.clone()).unwrap();
        let q = Vec3::new(0.5, 0.5, 0.5);
        assert_eq!(index.knn(&q, 17), scan_knn(&pts, &q, 17));
        assert_eq!(index.radius_search(&q, 0.9), scan_radius(&pts, &q, 0.9));
    }

    #[test]
    fn thousand_random_points_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let index = SpatialIndex::from_points(pts.clone()).unwrap();
        for _ in 0..200 {
            let q = Vec3::new(rng.random_range(-0.2..1.2), rng.random(), rng.random());
            let k = rng.random_range(1..40);
            assert_eq!(index.knn(&q, k), scan_knn(&pts, &q, k));
            let r = rng.random_range(0.0..0.3);
            assert_eq!(index.radius_search(&q, r), scan_radius(&pts, &q, r));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn queries_match_exhaustive_scan(
            seed in any::<u64>(),
            n in 1usize..2000,
            k in 1usize..64,
            r in 0.0f64..0.5,
            grid in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Grid-snapped coordinates produce many exact ties.
            let coord = |rng: &mut ChaCha8Rng| -> f64 {
                if grid { rng.random_range(0..10) as f64 * 0.1 } else { rng.random() }
            };
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng)))
                .collect();
            let index = SpatialIndex::from_points(pts.clone()).unwrap();
            for _ in 0..5 {
                let q = Vec3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng));
                prop_assert_eq!(index.knn(&q, k), scan_knn(&pts, &q, k));
                prop_assert_eq!(index.radius_search(&q, r), scan_radius(&pts, &q, r));
            }
        }
    }
}
