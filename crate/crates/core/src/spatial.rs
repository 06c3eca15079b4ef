//! Exact nearest-neighbour queries over 3D points (static k-d tree).
//!
//! Results are deterministic: equal distances are broken by the lower
//! point index, and radius queries return indices in ascending order.

use crate::geometry::Point3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut tree = KdTree {
            points: points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
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
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    fn dist2(&self, i: usize, q: &[f64; 3]) -> f64 {
        let p = &self.points[i];
        let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
        dx * dx + dy * dy + dz * dz
    }

    /// Closest point as `(index, squared distance)`.
    pub fn nearest(&self, query: &Point3) -> Option<(usize, f64)> {
        self.nearest_within(query, f64::INFINITY)
    }

    /// Closest point whose distance does not exceed `max_dist`.
    pub fn nearest_within(&self, query: &Point3, max_dist: f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best: Option<(usize, f64)> = None;
        let mut bound = max_dist * max_dist;
        let mut stack = vec![(0usize, 0.0f64)];
        while let Some((node, plane_d2)) = stack.pop() {
            if plane_d2 > bound {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = self.dist2(i, &q);
                        let better = match best {
                            None => d2 <= bound,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                        };
                        if better {
                            best = Some((i, d2));
                            bound = d2;
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = q[axis] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    stack.push((far, plane_d2.max(diff * diff)));
                    stack.push((near, plane_d2));
                }
            }
        }
        best
    }

    /// All points within `radius` (inclusive) as `(index, squared distance)`,
    /// sorted by index.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let q = [query.x, query.y, query.z];
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let d2 = self.dist2(i, &q);
                        if d2 <= r2 {
                            out.push((i, d2));
                        }
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = q[axis] - value;
                    if diff <= radius {
                        stack.push(left);
                    }
                    if diff >= -radius {
                        stack.push(right);
                    }
                }
            }
        }
        out.sort_unstable_by_key(|&(i, _)| i);
        out
    }

    /// The `k` closest points sorted by (distance, index).
    pub fn k_nearest(&self, query: &Point3, k: usize) -> Vec<(usize, f64)> {
        if self.nodes.is_empty() || k == 0 {
            return Vec::new();
        }
        let q = [query.x, query.y, query.z];
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        let mut stack = vec![(0usize, 0.0f64)];
        let worse = |a: &(usize, f64), b: &(usize, f64)| a.1 > b.1 || (a.1 == b.1 && a.0 > b.0);
        while let Some((node, plane_d2)) = stack.pop() {
            if best.len() == k && plane_d2 > best[k - 1].1 {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let cand = (i, self.dist2(i, &q));
                        if best.len() == k && !worse(&best[k - 1], &cand) {
                            continue;
                        }
                        let pos = best.iter().position(|b| worse(b, &cand)).unwrap_or(best.len());
                        best.insert(pos, cand);
                        best.truncate(k);
                    }
                }
                Node::Split { axis, value, left, right } => {
                    let diff = q[axis] - value;
                    let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                    stack.push((far, plane_d2.max(diff * diff)));
                    stack.push((near, plane_d2));
                }
            }
        }
        best
    }
}
