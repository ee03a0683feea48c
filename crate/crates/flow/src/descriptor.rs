//! Line Feature Histograms: a 256-bin descriptor of a point's neighborhood
//! built from the 4-tuple (||d||, theta, alpha, beta) per neighbor, where d
//! is the offset, theta the acute angle between the two line directions and
//! alpha/beta the acute angles between each direction and d. Four linear bins
//! per tuple entry; the histogram is L2-normalized.

use rayon::prelude::*;
use wigkit_geom::{KdTree, PointCloud, Vec3};

pub const ANGLE_BINS: usize = 4;
pub const DESCRIPTOR_SIZE: usize = ANGLE_BINS * ANGLE_BINS * ANGLE_BINS * ANGLE_BINS;

const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Debug, Clone, PartialEq)]
pub struct LfhDescriptor {
    pub bins: [f64; DESCRIPTOR_SIZE],
    /// No neighbor within the radius: all-zero bins.
    pub isolated: bool,
}

impl LfhDescriptor {
    pub fn distance(&self, other: &LfhDescriptor) -> f64 {
        self.bins
            .iter()
            .zip(&other.bins)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Acute angle between two lines given unit-ish vectors, in [0, pi/2].
fn acute_angle(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b).abs() / (na * nb)).min(1.0).acos()
}

fn dist_bin(d: f64, radius: f64) -> usize {
    // right-closed: values at exactly `radius` land in the last bin
    ((d / radius * ANGLE_BINS as f64) as usize).min(ANGLE_BINS - 1)
}

fn angle_bin(a: f64) -> usize {
    ((a / HALF_PI * ANGLE_BINS as f64) as usize).min(ANGLE_BINS - 1)
}

/// Descriptor of `index` over neighbors within `radius` (self and degenerate
/// zero offsets excluded).
pub fn lfh_descriptor(cloud: &PointCloud, index: usize, radius: f64) -> LfhDescriptor {
    let tree = KdTree::build(cloud.positions());
    lfh_descriptor_with_tree(cloud, &tree, index, radius)
}

fn lfh_descriptor_with_tree(
    cloud: &PointCloud,
    tree: &KdTree,
    index: usize,
    radius: f64,
) -> LfhDescriptor {
    assert!(radius > 0.0, "radius must be positive");
    let p = &cloud.positions()[index];
    let dir = &cloud.directions()[index];
    let mut bins = [0.0f64; DESCRIPTOR_SIZE];
    let mut count = 0usize;
    for j in tree.within_radius(p, radius) {
        let j = j as usize;
        if j == index {
            continue;
        }
        let offset = cloud.positions()[j] - p;
        let dist = offset.norm();
        if dist < 1e-9 {
            // coincident point: offset carries no orientation
            continue;
        }
        let theta = acute_angle(dir, &cloud.directions()[j]);
        let alpha = acute_angle(dir, &offset);
        let beta = acute_angle(&cloud.directions()[j], &offset);
        let idx = ((dist_bin(dist, radius) * ANGLE_BINS + angle_bin(theta)) * ANGLE_BINS
            + angle_bin(alpha))
            * ANGLE_BINS
            + angle_bin(beta);
        bins[idx] += 1.0;
        count += 1;
    }
    if count == 0 {
        return LfhDescriptor { bins, isolated: true };
    }
    let norm = bins.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut bins {
        *v /= norm;
    }
    LfhDescriptor { bins, isolated: false }
}

/// Descriptors for every point, sharing one k-d tree.
pub fn lfh_cloud(cloud: &PointCloud, radius: f64) -> Vec<LfhDescriptor> {
    let tree = KdTree::build(cloud.positions());
    (0..cloud.count())
        .into_par_iter()
        .map(|i| lfh_descriptor_with_tree(cloud, &tree, i, radius))
        .collect()
}
