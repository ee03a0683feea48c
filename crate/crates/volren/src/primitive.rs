//! Oriented, scaled voxel payloads and the hair-point pose construction.

use nalgebra::Matrix3;
use thiserror::Error;
use wigkit_geom::Vec3;

#[derive(Debug, Error)]
pub enum VolrenError {
    #[error("rotation is not orthonormal (max deviation {0})")]
    NotOrthonormal(f64),
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("payload length {0} does not match 4*m^3 = {1}")]
    PayloadSize(usize, usize),
    #[error("non-finite payload value")]
    NonFinitePayload,
    #[error("camera: {0}")]
    Camera(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// One volumetric primitive. `rotation` rows are the local axes expressed in
/// world space, so local = R * (world - translation) / scale. The payload is
/// voxel-interleaved RGBA over an m^3 grid spanning local [-1,1]^3; trilinear
/// interpolation fades to zero over a one-voxel ghost band outside the grid,
/// keeping the sampled field continuous (and hence differentiable in the
/// primitive pose).
#[derive(Debug, Clone)]
pub struct Primitive {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub scale: f64,
    /// RGBA per voxel: payload[4*(x + m*(y + m*z)) + c].
    pub payload: Vec<f64>,
    pub is_hair: bool,
}

impl Primitive {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vec3,
        scale: f64,
        resolution: usize,
        payload: Vec<f64>,
        is_hair: bool,
    ) -> Result<Self, VolrenError> {
        let dev = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        if dev > 1e-5 {
            return Err(VolrenError::NotOrthonormal(dev));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(VolrenError::BadScale(scale));
        }
        let want = 4 * resolution * resolution * resolution;
        if payload.len() != want {
            return Err(VolrenError::PayloadSize(payload.len(), want));
        }
        if payload.iter().any(|v| !v.is_finite()) {
            return Err(VolrenError::NonFinitePayload);
        }
        Ok(Self { rotation, translation, scale, payload, is_hair })
    }

    /// Half-extent of the interpolation support along each local axis,
    /// including the ghost band.
    pub fn support_half_extent(&self, resolution: usize) -> f64 {
        self.scale * (1.0 + 1.0 / resolution as f64)
    }
}

/// A renderable scene: primitives sharing one voxel resolution.
#[derive(Debug, Clone)]
pub struct PrimitiveSet {
    pub resolution: usize,
    pub prims: Vec<Primitive>,
}

impl PrimitiveSet {
    pub fn new(resolution: usize, prims: Vec<Primitive>) -> Self {
        Self { resolution, prims }
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }
}

fn normalize(v: Vec3) -> Vec3 {
    v / v.norm()
}

/// Orientation of a hair primitive from its tangential direction and the
/// offset from the head center. Rows: the direction itself, then the two
/// normalized cross products dir x h and dir x (dir x h); always a proper
/// rotation. Falls back to a deterministic perpendicular when dir and h are
/// parallel (or h vanishes).
pub fn primitive_pose(position: &Vec3, dir: &Vec3, head_center: &Vec3) -> Matrix3<f64> {
    let a = normalize(*dir);
    let h = position - head_center;
    let cross = a.cross(&h);
    let degenerate = {
        let hn = h.norm();
        hn < 1e-12 || cross.norm() < 1e-6 * hn
    };
    let (r1, r2) = if degenerate {
        // axis least aligned with a, projected to its orthogonal plane
        let pick = {
            let ax = a.x.abs();
            let ay = a.y.abs();
            let az = a.z.abs();
            if ax <= ay && ax <= az {
                Vec3::x()
            } else if ay <= az {
                Vec3::y()
            } else {
                Vec3::z()
            }
        };
        let u = normalize(pick - a * pick.dot(&a));
        (u, a.cross(&u))
    } else {
        let r1 = normalize(cross);
        (r1, normalize(a.cross(&cross)))
    };
    Matrix3::from_rows(&[a.transpose(), r1.transpose(), r2.transpose()])
}
