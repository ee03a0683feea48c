//! Core domain types: unordered observed clouds, tracked clouds, flow fields
//! and rigid head states.

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("direction at index {0} has norm {1}, expected unit within 1e-3")]
    NonUnitDirection(usize, f64),
    #[error("scale at index {0} must be positive, got {1}")]
    NonPositiveScale(usize, f64),
    #[error("vertex count mismatch: {0} vs {1}")]
    VertexCountMismatch(usize, usize),
    #[error("zero gravity direction")]
    ZeroGravity,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Flips `d` into the canonical hemisphere: z > 0, ties broken by y then x.
///
/// Line directions are sign-ambiguous; fixing the hemisphere at ingestion
/// makes the signed cosine in the Chamfer loss deterministic.
pub fn canonicalize_direction(d: Vec3) -> Vec3 {
    if d.z > 0.0 {
        d
    } else if d.z < 0.0 {
        -d
    } else if d.y > 0.0 {
        d
    } else if d.y < 0.0 {
        -d
    } else if d.x >= 0.0 {
        d
    } else {
        -d
    }
}

/// Unordered per-frame hair reconstruction: positions plus tangential line
/// directions. Count varies frame to frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    positions: Vec<Vec3>,
    directions: Vec<Vec3>,
}

impl PointCloud {
    /// Validates, renormalizes directions (rejecting deviations beyond 1e-3)
    /// and canonicalizes them to the z >= 0 hemisphere.
    pub fn new(positions: Vec<Vec3>, directions: Vec<Vec3>) -> Result<Self, GeomError> {
        if positions.len() != directions.len() {
            return Err(GeomError::LengthMismatch(positions.len(), directions.len()));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(GeomError::NonFinite(i));
            }
        }
        let mut dirs = Vec::with_capacity(directions.len());
        for (i, d) in directions.into_iter().enumerate() {
            if !d.iter().all(|c| c.is_finite()) {
                return Err(GeomError::NonFinite(i));
            }
            let n = d.norm();
            if (n - 1.0).abs() > 1e-3 {
                return Err(GeomError::NonUnitDirection(i, n));
            }
            // idempotent: re-ingesting already-unit directions is bit-exact
            let unit = if (n - 1.0).abs() <= 1e-9 { d } else { d / n };
            dirs.push(canonicalize_direction(unit));
        }
        Ok(Self { positions, directions: dirs })
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    /// Diagonal of the axis-aligned bounding box; 0 for a single point.
    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.positions)
    }
}

/// Decoded tracked cloud: fixed length, fixed point identity across frames,
/// with a per-point scale factor for the volumetric primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedPointCloud {
    positions: Vec<Vec3>,
    directions: Vec<Vec3>,
    scales: Vec<f64>,
}

impl TrackedPointCloud {
    pub fn new(
        positions: Vec<Vec3>,
        directions: Vec<Vec3>,
        scales: Vec<f64>,
    ) -> Result<Self, GeomError> {
        if positions.len() != directions.len() {
            return Err(GeomError::LengthMismatch(positions.len(), directions.len()));
        }
        if positions.len() != scales.len() {
            return Err(GeomError::LengthMismatch(positions.len(), scales.len()));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(GeomError::NonFinite(i));
            }
        }
        let mut dirs = Vec::with_capacity(directions.len());
        for (i, d) in directions.into_iter().enumerate() {
            if !d.iter().all(|c| c.is_finite()) {
                return Err(GeomError::NonFinite(i));
            }
            let n = d.norm();
            if (n - 1.0).abs() > 1e-3 {
                return Err(GeomError::NonUnitDirection(i, n));
            }
            dirs.push(if (n - 1.0).abs() <= 1e-9 { d } else { d / n });
        }
        for (i, &s) in scales.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(GeomError::NonPositiveScale(i, s));
            }
        }
        Ok(Self { positions, directions: dirs, scales })
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn bbox_diagonal(&self) -> f64 {
        bbox_diagonal(&self.positions)
    }

    /// View of positions/directions as an observed cloud (directions are
    /// re-canonicalized); used when feeding tracked clouds back to the encoder.
    pub fn as_point_cloud(&self) -> PointCloud {
        PointCloud::new(self.positions.clone(), self.directions.clone())
            .expect("tracked cloud is always a valid point cloud")
    }
}

/// Per-point forward/backward flow. `None` marks entries removed by the
/// outlier filters; losses skip them and renormalize.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub forward: Vec<Option<Vec3>>,
    pub backward: Vec<Option<Vec3>>,
}

impl FlowField {
    pub fn absent(count: usize) -> Self {
        Self { forward: vec![None; count], backward: vec![None; count] }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn matches_cloud(&self, cloud: &PointCloud) -> bool {
        self.forward.len() == cloud.count() && self.backward.len() == cloud.count()
    }
}

/// Rigid head state for one frame: tracked vertices, head center and the
/// gravity direction expressed in the head frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState {
    pub vertices: Vec<Vec3>,
    pub center: Vec3,
    pub gravity_dir: Vec3,
}

impl HeadState {
    pub fn new(vertices: Vec<Vec3>, center: Vec3, gravity_dir: Vec3) -> Result<Self, GeomError> {
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(GeomError::NonFinite(i));
            }
        }
        let n = gravity_dir.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeomError::ZeroGravity);
        }
        Ok(Self { vertices, center, gravity_dir: gravity_dir / n })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }
}

fn bbox_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalization_hemisphere() {
        let d = canonicalize_direction(Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(d, Vec3::new(0.0, 0.0, 1.0));
        let d = canonicalize_direction(Vec3::new(1.0, -2.0, 0.0));
        assert_eq!(d, Vec3::new(-1.0, 2.0, 0.0));
        let d = canonicalize_direction(Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(d, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn cloud_rejects_bad_directions() {
        let e = PointCloud::new(vec![Vec3::zeros()], vec![Vec3::new(0.5, 0.0, 0.0)]);
        assert!(matches!(e, Err(GeomError::NonUnitDirection(0, _))));
        // small deviation renormalizes
        let c =
            PointCloud::new(vec![Vec3::zeros()], vec![Vec3::new(1.0005, 0.0, 0.0)]).unwrap();
        assert!((c.directions()[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cloud_rejects_nan() {
        let e = PointCloud::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], vec![Vec3::z()]);
        assert!(matches!(e, Err(GeomError::NonFinite(0))));
    }

    #[test]
    fn tracked_rejects_nonpositive_scale() {
        let e = TrackedPointCloud::new(vec![Vec3::zeros()], vec![Vec3::z()], vec![0.0]);
        assert!(matches!(e, Err(GeomError::NonPositiveScale(0, _))));
    }

    #[test]
    fn bbox_diagonal_of_unit_cube() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)];
        let dirs = vec![Vec3::z(); 2];
        let c = PointCloud::new(pts, dirs).unwrap();
        assert!((c.bbox_diagonal() - 3f64.sqrt()).abs() < 1e-12);
    }
}
