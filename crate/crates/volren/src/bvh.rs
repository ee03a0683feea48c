//! Binary BVH over world-space AABBs. A ray query returns exactly the
//! intervals the exhaustive slab test over all boxes would, sorted by entry
//! depth; the tree only culls.

use wigkit_geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn centroid(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Slab test; `None` on miss. Clamps to [t_min, t_max].
    pub fn ray_interval(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let mut near = (self.min[k] - origin[k]) * inv;
            let mut far = (self.max[k] - origin[k]) * inv;
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitInterval {
    pub t_enter: f64,
    pub t_exit: f64,
    pub prim: usize,
}

enum Node {
    Leaf { start: usize, len: usize },
    Inner { left: usize, right: usize, left_box: Aabb, right_box: Aabb },
}

pub struct Bvh {
    aabbs: Vec<Aabb>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root_box: Aabb,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(aabbs: &[Aabb]) -> Self {
        assert!(!aabbs.is_empty(), "BVH over zero primitives");
        let mut order: Vec<u32> = (0..aabbs.len() as u32).collect();
        let mut bvh = Self {
            aabbs: aabbs.to_vec(),
            order: Vec::new(),
            nodes: Vec::new(),
            root_box: aabbs[0],
        };
        let n = aabbs.len();
        bvh.root_box = aabbs.iter().skip(1).fold(aabbs[0], |a, b| a.union(b));
        bvh.build_node(&mut order, 0, n);
        bvh.order = order;
        bvh
    }

    fn bounds_of(&self, order: &[u32]) -> Aabb {
        order
            .iter()
            .skip(1)
            .fold(self.aabbs[order[0] as usize], |a, &i| a.union(&self.aabbs[i as usize]))
    }

    fn build_node(&mut self, order: &mut [u32], start: usize, len: usize) -> usize {
        if len <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, len });
            return self.nodes.len() - 1;
        }
        let slice = &mut order[start..start + len];
        // split on the widest centroid axis at the median
        let mut lo = self.aabbs[slice[0] as usize].centroid();
        let mut hi = lo;
        for &i in slice.iter() {
            let c = self.aabbs[i as usize].centroid();
            lo = lo.inf(&c);
            hi = hi.sup(&c);
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
        slice.select_nth_unstable_by(mid, |&a, &b| {
            let ka = (self.aabbs[a as usize].centroid()[axis], a);
            let kb = (self.aabbs[b as usize].centroid()[axis], b);
            ka.partial_cmp(&kb).unwrap()
        });
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { start: 0, len: 0 }); // placeholder
        let left = self.build_node(order, start, mid);
        let right = self.build_node(order, start + mid, len - mid);
        let left_box = self.bounds_of(&order[start..start + mid]);
        let right_box = self.bounds_of(&order[start + mid..start + len]);
        self.nodes[idx] = Node::Inner { left, right, left_box, right_box };
        idx
    }

    /// All primitive intervals hit by the ray, sorted by (t_enter, prim).
    pub fn ray_intervals(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Vec<HitInterval> {
        let mut out = Vec::new();
        if self.root_box.ray_interval(origin, dir, t_min, t_max).is_some() {
            self.query(0, origin, dir, t_min, t_max, &mut out);
        }
        out.sort_by(|a, b| (a.t_enter, a.prim).partial_cmp(&(b.t_enter, b.prim)).unwrap());
        out
    }

    fn query(
        &self,
        node: usize,
        origin: &Vec3,
        dir: &Vec3,
        t_min: f64,
        t_max: f64,
        out: &mut Vec<HitInterval>,
    ) {
        match &self.nodes[node] {
            Node::Leaf { start, len } => {
                for &i in &self.order[*start..*start + *len] {
                    if let Some((t0, t1)) =
                        self.aabbs[i as usize].ray_interval(origin, dir, t_min, t_max)
                    {
                        out.push(HitInterval { t_enter: t0, t_exit: t1, prim: i as usize });
                    }
                }
            }
            Node::Inner { left, right, left_box, right_box } => {
                if left_box.ray_interval(origin, dir, t_min, t_max).is_some() {
                    self.query(*left, origin, dir, t_min, t_max, out);
                }
                if right_box.ray_interval(origin, dir, t_min, t_max).is_some() {
                    self.query(*right, origin, dir, t_min, t_max, out);
                }
            }
        }
    }
}

/// Brute-force slab test over every box; the oracle the BVH must match.
pub fn slab_intervals_exhaustive(
    aabbs: &[Aabb],
    origin: &Vec3,
    dir: &Vec3,
    t_min: f64,
    t_max: f64,
) -> Vec<HitInterval> {
    let mut out: Vec<HitInterval> = aabbs
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            b.ray_interval(origin, dir, t_min, t_max)
                .map(|(t0, t1)| HitInterval { t_enter: t0, t_exit: t1, prim: i })
        })
        .collect();
    out.sort_by(|a, b| (a.t_enter, a.prim).partial_cmp(&(b.t_enter, b.prim)).unwrap());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(center: Vec3, half: f64) -> Aabb {
        Aabb {
            min: center - Vec3::new(half, half, half),
            max: center + Vec3::new(half, half, half),
        }
    }

    #[test]
    fn single_box_hit_and_miss() {
        let b = unit_box(Vec3::zeros(), 1.0);
        let hit = b.ray_interval(&Vec3::new(-5.0, 0.0, 0.0), &Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0);
        assert_eq!(hit, Some((4.0, 6.0)));
        let miss = b.ray_interval(&Vec3::new(-5.0, 3.0, 0.0), &Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0);
        assert_eq!(miss, None);
    }

    #[test]
    fn disjoint_boxes_sorted_non_overlapping() {
        let boxes = vec![
            unit_box(Vec3::new(8.0, 0.0, 0.0), 1.0),
            unit_box(Vec3::new(4.0, 0.0, 0.0), 1.0),
            unit_box(Vec3::new(12.0, 0.0, 0.0), 1.0),
        ];
        let bvh = Bvh::build(&boxes);
        let hits = bvh.ray_intervals(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0);
        assert_eq!(hits.len(), 3);
        for w in hits.windows(2) {
            assert!(w[0].t_enter <= w[1].t_enter);
            assert!(w[0].t_exit <= w[1].t_enter);
        }
    }

    #[test]
    fn matches_exhaustive_on_random_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let boxes: Vec<Aabb> = (0..100)
            .map(|_| {
                unit_box(
                    Vec3::new(
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                        rng.gen_range(-2.0..2.0),
                    ),
                    rng.gen_range(0.05..0.6),
                )
            })
            .collect();
        let bvh = Bvh::build(&boxes);
        for _ in 0..500 {
            let origin = Vec3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            );
            let dir = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let got = bvh.ray_intervals(&origin, &dir, 0.0, 1e9);
            let want = slab_intervals_exhaustive(&boxes, &origin, &dir, 0.0, 1e9);
            assert_eq!(got, want);
        }
    }
}
