//! Static k-d tree for exact nearest-obstacle-point queries.

use crate::geometry::{dist_sq, PointCloud};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Result of a nearest-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    /// Index of the point in the source cloud.
    pub index: usize,
    pub dist: f64,
}

/// Balanced k-d tree over every point in a cloud (obstacle grouping ignored).
///
/// Splits along the axis of largest spread at the median; leaves hold at most
/// eight points. Ties are broken by the lowest point index so results match a
/// linear scan exactly.
#[derive(Debug, Clone)]
pub struct NearestIndex {
    dim: usize,
    points: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl NearestIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.d_space, &cloud.points)
    }

    pub fn from_points(dim: usize, points: &[f64]) -> Self {
        let n = points.len() / dim;
        let mut idx = NearestIndex { dim, points: points.to_vec(), order: (0..n).collect(), nodes: Vec::new() };
        if n > 0 {
            idx.build_node(0, n);
        }
        idx
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let dim = self.dim;
        let mut axis = 0;
        let mut best_spread = -1.0;
        for a in 0..dim {
            let (lo, hi) = self.order[start..end].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.points[i * dim + a];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = a;
            }
        }
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].sort_by(|&a, &b| {
            pts[a * dim + axis].total_cmp(&pts[b * dim + axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * dim + axis];
        self.nodes.push(Node::Split { axis, value, left: 0, right: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Nearest cloud point to `q`, or `None` for an empty index.
    pub fn nearest(&self, q: &[f64]) -> Option<Nearest> {
        if self.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, q, &mut best);
        Some(Nearest { index: best.1, dist: best.0.sqrt() })
    }

    /// Distance to the nearest point, `+inf` for an empty index.
    pub fn nearest_dist(&self, q: &[f64]) -> f64 {
        self.nearest(q).map_or(f64::INFINITY, |n| n.dist)
    }

    fn search(&self, node: usize, q: &[f64], best: &mut (f64, usize)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist_sq(q, self.point(i));
                    if d < best.0 || (d == best.0 && i < best.1) {
                        *best = (d, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // Equality keeps the far side so lower-index ties are found.
                if diff * diff <= best.0 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Linear-scan nearest neighbour; reference for the tree.
pub fn brute_force_nearest(dim: usize, points: &[f64], q: &[f64]) -> Option<Nearest> {
    let mut best: Option<Nearest> = None;
    for (i, p) in points.chunks(dim).enumerate() {
        let d = dist_sq(q, p);
        if best.map_or(true, |b| d < b.dist) {
            best = Some(Nearest { index: i, dist: d });
        }
    }
    best.map(|b| Nearest { index: b.index, dist: b.dist.sqrt() })
}
