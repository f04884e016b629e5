//! Static 3-D kd-tree for exact nearest-neighbour and fixed-radius queries.
//!
//! Nearest-neighbour ties are resolved toward the lowest point index so that
//! results agree exactly with a linear scan.

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut tree = Self {
            order: (0..points.len()).collect(),
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
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for d in 0..3 {
                lo[d] = lo[d].min(self.points[i][d]);
                hi[d] = hi[d].max(self.points[i][d]);
            }
        }
        let dim = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[dim] - lo[dim] <= 0.0 {
            // all points coincide
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| points[a][dim].total_cmp(&points[b][dim]));
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// Nearest point as `(index, squared distance)`; lowest index on ties.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_in(0, &q, &mut best);
        Some(best)
    }

    fn nearest_in(&self, node: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie rule.
                if diff * diff <= best.1 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// Indices of all points within `radius` (inclusive), ascending.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(query, radius, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Visits every point within `radius` (inclusive) in unspecified order.
    pub fn for_each_within(&self, query: &Vec3, radius: f64, mut f: impl FnMut(usize)) {
        if self.points.is_empty() {
            return;
        }
        let q = [query.x, query.y, query.z];
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if dist2(&self.points[i], &q) <= r2 {
                            f(i);
                        }
                    }
                }
                Node::Split {
                    dim,
                    value,
                    left,
                    right,
                } => {
                    let diff = q[dim] - value;
                    if diff <= radius {
                        stack.push(left);
                    }
                    if diff >= -radius {
                        stack.push(right);
                    }
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

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(&[p.x, p.y, p.z], &[q.x, q.y, q.z]);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn matches_linear_scan_with_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // integer lattice makes exact distance ties common
        let pts: Vec<Vec3> = (0..800)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-5..5) as f64,
                    rng.random_range(-5..5) as f64,
                    rng.random_range(-2..2) as f64,
                )
            })
            .collect();
        let tree = KdTree::new(&pts);
        for _ in 0..500 {
            let q = Vec3::new(
                rng.random_range(-6..6) as f64 * 0.5,
                rng.random_range(-6..6) as f64 * 0.5,
                rng.random_range(-3..3) as f64 * 0.5,
            );
            assert_eq!(tree.nearest(&q), Some(brute_nearest(&pts, &q)));
            let r = 1.5;
            let expected: Vec<usize> = (0..pts.len())
                .filter(|&i| (pts[i] - q).norm_squared() <= r * r)
                .collect();
            assert_eq!(tree.within_radius(&q, r), expected);
        }
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Vec3::zeros()).is_none());
        assert!(tree.within_radius(&Vec3::zeros(), 1.0).is_empty());
    }
}
