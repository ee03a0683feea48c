//! Pinhole cameras and the plain-text rig file.

use crate::primitive::VolrenError;
use nalgebra::Matrix3;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use wigkit_geom::Vec3;

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

/// World-to-camera convention: x_cam = R * x_world + t.
#[derive(Debug, Clone)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vec3,
        width: usize,
        height: usize,
    ) -> Result<Self, VolrenError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(VolrenError::Camera(format!("non-positive focal length {fx}, {fy}")));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-5 {
            return Err(VolrenError::Camera(format!(
                "rotation determinant {} != +1",
                rotation.determinant()
            )));
        }
        Ok(Self { fx, fy, cx, cy, rotation, translation, width, height })
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Ray through the center of pixel (px, py).
    pub fn pixel_ray(&self, px: usize, py: usize) -> Ray {
        let x = (px as f64 + 0.5 - self.cx) / self.fx;
        let y = (py as f64 + 0.5 - self.cy) / self.fy;
        let dir_cam = Vec3::new(x, y, 1.0);
        let dir = (self.rotation.transpose() * dir_cam).normalize();
        Ray { origin: self.position(), dir }
    }

    /// Projects a world point to pixel coordinates; None behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let c = self.rotation * p + self.translation;
        if c.z <= 0.0 {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }
}

pub fn write_rig(path: &Path, cameras: &[Camera]) -> Result<(), VolrenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "cameras {}", cameras.len())?;
    for (i, c) in cameras.iter().enumerate() {
        writeln!(w, "camera {i}")?;
        writeln!(w, "size {} {}", c.width, c.height)?;
        writeln!(w, "intrinsics {} {} {} {}", c.fx, c.fy, c.cx, c.cy)?;
        let r = &c.rotation;
        writeln!(
            w,
            "rotation {} {} {} {} {} {} {} {} {}",
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)]
        )?;
        writeln!(w, "translation {} {} {}", c.translation.x, c.translation.y, c.translation.z)?;
    }
    Ok(())
}

pub fn read_rig(path: &Path) -> Result<Vec<Camera>, VolrenError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let head = lines
        .next()
        .ok_or_else(|| VolrenError::Parse("empty rig".into()))?
        .map_err(VolrenError::Io)?;
    let count: usize = head
        .strip_prefix("cameras ")
        .ok_or_else(|| VolrenError::Parse("missing cameras header".into()))?
        .trim()
        .parse()
        .map_err(|e: std::num::ParseIntError| VolrenError::Parse(e.to_string()))?;
    let mut cams = Vec::with_capacity(count);
    let mut next_line = || -> Result<Vec<String>, VolrenError> {
        let line = lines
            .next()
            .ok_or_else(|| VolrenError::Parse("truncated rig".into()))?
            .map_err(VolrenError::Io)?;
        Ok(line.split_whitespace().map(str::to_string).collect())
    };
    for _ in 0..count {
        let cam_line = next_line()?;
        if cam_line.first().map(String::as_str) != Some("camera") {
            return Err(VolrenError::Parse(format!("expected camera line, got {cam_line:?}")));
        }
        let size = next_line()?;
        let intr = next_line()?;
        let rot = next_line()?;
        let trans = next_line()?;
        let f = |v: &str| v.parse::<f64>().map_err(|e| VolrenError::Parse(e.to_string()));
        let width: usize =
            size[1].parse().map_err(|e: std::num::ParseIntError| VolrenError::Parse(e.to_string()))?;
        let height: usize =
            size[2].parse().map_err(|e: std::num::ParseIntError| VolrenError::Parse(e.to_string()))?;
        let rotation = Matrix3::new(
            f(&rot[1])?, f(&rot[2])?, f(&rot[3])?,
            f(&rot[4])?, f(&rot[5])?, f(&rot[6])?,
            f(&rot[7])?, f(&rot[8])?, f(&rot[9])?,
        );
        cams.push(Camera::new(
            f(&intr[1])?,
            f(&intr[2])?,
            f(&intr[3])?,
            f(&intr[4])?,
            rotation,
            Vec3::new(f(&trans[1])?, f(&trans[2])?, f(&trans[3])?),
            width,
            height,
        )?);
    }
    Ok(cams)
}

/// A camera on a ring around `target`, looking inward. `azimuth` in radians,
/// `elevation` above the horizontal plane.
pub fn look_at_camera(
    target: Vec3,
    distance: f64,
    azimuth: f64,
    elevation: f64,
    fov_y: f64,
    width: usize,
    height: usize,
) -> Camera {
    let eye = target
        + Vec3::new(
            distance * elevation.cos() * azimuth.cos(),
            distance * elevation.cos() * azimuth.sin(),
            distance * elevation.sin(),
        );
    // camera axes: z toward target, x right, y down (z-up world)
    let z = (target - eye).normalize();
    let up = Vec3::new(0.0, 0.0, 1.0);
    let x = z.cross(&up);
    let x = if x.norm() < 1e-9 { Vec3::new(1.0, 0.0, 0.0) } else { x.normalize() };
    let y = z.cross(&x).normalize();
    let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let translation = -(rotation * eye);
    let fy = height as f64 / (2.0 * (fov_y / 2.0).tan());
    Camera::new(fy, fy, width as f64 / 2.0, height as f64 / 2.0, rotation, translation, width, height)
        .expect("look_at_camera produces a valid camera")
}
