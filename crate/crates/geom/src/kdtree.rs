//! Axis-aligned k-d tree over 3D points, rebuilt per frame.
//!
//! Queries fall back to an exhaustive scan below 64 points where the tree
//! overhead is not worth paying. Ties on distance are broken by the lowest
//! point index so results are deterministic and match the brute-force oracle.

use crate::types::Vec3;

const EXHAUSTIVE_LIMIT: usize = 64;

enum Node {
    Leaf {
        start: usize,
        len: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

pub struct KdTree {
    points: Vec<Vec3>,
    // permutation of original indices, partitioned per leaf
    order: Vec<u32>,
    nodes: Vec<Node>,
    exhaustive: bool,
}

const LEAF_SIZE: usize = 8;

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = Self {
            points: points.to_vec(),
            order: Vec::new(),
            nodes: Vec::new(),
            exhaustive: points.len() < EXHAUSTIVE_LIMIT,
        };
        if !tree.exhaustive {
            let n = points.len();
            tree.build_node(&mut order, 0, n);
        }
        tree.order = order;
        tree
    }

    fn build_node(&mut self, order: &mut [u32], start: usize, len: usize) -> usize {
        if len <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, len });
            return self.nodes.len() - 1;
        }
        let slice = &mut order[start..start + len];
        let mut lo = self.points[slice[0] as usize];
        let mut hi = lo;
        for &i in slice.iter() {
            lo = lo.inf(&self.points[i as usize]);
            hi = hi.sup(&self.points[i as usize]);
        }
        let extent = hi - lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = len / 2;
        // tie-break by index keeps the partition deterministic
        slice.select_nth_unstable_by(mid, |&a, &b| {
            let ka = (self.points[a as usize][axis], a);
            let kb = (self.points[b as usize][axis], b);
            ka.partial_cmp(&kb).unwrap()
        });
        let value = self.points[slice[mid] as usize][axis];
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { start: 0, len: 0 }); // placeholder
        let left = self.build_node(order, start, mid);
        let right = self.build_node(order, start + mid, len - mid);
        self.nodes[idx] = Node::Split { axis, value, left, right };
        idx
    }

    /// Index of the nearest point; ties broken by lowest index.
    pub fn nearest(&self, query: &Vec3) -> usize {
        debug_assert!(!self.points.is_empty());
        if self.exhaustive {
            return nearest_exhaustive(&self.points, query);
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.nearest_rec(0, query, &mut best);
        best.1 as usize
    }

    fn nearest_rec(&self, node: usize, query: &Vec3, best: &mut (f64, u32)) {
        match &self.nodes[node] {
            Node::Leaf { start, len } => {
                for &i in &self.order[*start..*start + *len] {
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    if (d2, i) < *best {
                        *best = (d2, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta < 0.0 { (*left, *right) } else { (*right, *left) };
                self.nearest_rec(near, query, best);
                if delta * delta <= best.0 {
                    self.nearest_rec(far, query, best);
                }
            }
        }
    }

    /// Nearest point excluding one index (for self-queries).
    pub fn nearest_excluding(&self, query: &Vec3, skip: usize) -> Option<usize> {
        if self.points.len() <= 1 {
            return None;
        }
        if self.exhaustive {
            let mut best = (f64::INFINITY, usize::MAX);
            for (i, p) in self.points.iter().enumerate() {
                if i == skip {
                    continue;
                }
                let d2 = (p - query).norm_squared();
                if (d2, i) < best {
                    best = (d2, i);
                }
            }
            return Some(best.1);
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.nearest_excluding_rec(0, query, skip as u32, &mut best);
        Some(best.1 as usize)
    }

    fn nearest_excluding_rec(&self, node: usize, query: &Vec3, skip: u32, best: &mut (f64, u32)) {
        match &self.nodes[node] {
            Node::Leaf { start, len } => {
                for &i in &self.order[*start..*start + *len] {
                    if i == skip {
                        continue;
                    }
                    let d2 = (self.points[i as usize] - query).norm_squared();
                    if (d2, i) < *best {
                        *best = (d2, i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta < 0.0 { (*left, *right) } else { (*right, *left) };
                self.nearest_excluding_rec(near, query, skip, best);
                if delta * delta <= best.0 {
                    self.nearest_excluding_rec(far, query, skip, best);
                }
            }
        }
    }

    /// Indices of all points with ||p - query|| <= radius, ascending by index.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<u32> {
        let r2 = radius * radius;
        let mut out = Vec::new();
        if self.exhaustive {
            for (i, p) in self.points.iter().enumerate() {
                if (p - query).norm_squared() <= r2 {
                    out.push(i as u32);
                }
            }
            return out;
        }
        self.radius_rec(0, query, radius, r2, &mut out);
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, query: &Vec3, radius: f64, r2: f64, out: &mut Vec<u32>) {
        match &self.nodes[node] {
            Node::Leaf { start, len } => {
                for &i in &self.order[*start..*start + *len] {
                    if (self.points[i as usize] - query).norm_squared() <= r2 {
                        out.push(i);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let delta = query[*axis] - value;
                if delta <= radius {
                    self.radius_rec(*left, query, radius, r2, out);
                }
                if -delta <= radius {
                    self.radius_rec(*right, query, radius, r2, out);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn nearest_exhaustive(points: &[Vec3], query: &Vec3) -> usize {
    let mut best = (f64::INFINITY, usize::MAX);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - query).norm_squared();
        if (d2, i) < best {
            best = (d2, i);
        }
    }
    best.1
}
