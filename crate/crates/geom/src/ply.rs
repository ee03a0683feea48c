//! ASCII PLY I/O for point clouds.
//!
//! Layout: `element vertex N` with float properties x y z dx dy dz, plus `s`
//! for tracked clouds. Directions deviating from unit norm by more than 1e-3
//! are rejected; smaller deviations are renormalized on read.

use crate::types::{GeomError, PointCloud, TrackedPointCloud, Vec3};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const BASE_PROPS: [&str; 6] = ["x", "y", "z", "dx", "dy", "dz"];

fn write_header(w: &mut impl Write, count: usize, with_scale: bool) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {count}")?;
    for p in BASE_PROPS {
        writeln!(w, "property float {p}")?;
    }
    if with_scale {
        writeln!(w, "property float s")?;
    }
    writeln!(w, "end_header")
}

pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<(), GeomError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, cloud.count(), false)?;
    for (p, d) in cloud.positions().iter().zip(cloud.directions()) {
        writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, d.x, d.y, d.z)?;
    }
    Ok(())
}

pub fn write_tracked_cloud(path: &Path, cloud: &TrackedPointCloud) -> Result<(), GeomError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, cloud.count(), true)?;
    for ((p, d), s) in cloud.positions().iter().zip(cloud.directions()).zip(cloud.scales()) {
        writeln!(w, "{} {} {} {} {} {} {}", p.x, p.y, p.z, d.x, d.y, d.z, s)?;
    }
    Ok(())
}

struct PlyBody {
    rows: Vec<Vec<f64>>,
    props: Vec<String>,
}

fn parse_body(path: &Path) -> Result<PlyBody, GeomError> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut lines = r.lines();
    let magic = lines.next().ok_or_else(|| GeomError::Parse("empty file".into()))??;
    if magic.trim() != "ply" {
        return Err(GeomError::Parse("missing ply magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        let line = line?;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] | ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| GeomError::Parse(e.to_string()))?)
            }
            ["element", ..] => {
                return Err(GeomError::Parse("only vertex elements supported".into()))
            }
            ["property", "float", name] => props.push(name.to_string()),
            ["property", ..] => return Err(GeomError::Parse("only float properties".into())),
            ["end_header"] => break,
            _ => return Err(GeomError::Parse(format!("unexpected header line: {line}"))),
        }
    }
    let count = count.ok_or_else(|| GeomError::Parse("missing element vertex".into()))?;
    let mut rows = Vec::with_capacity(count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| GeomError::Parse(e.to_string()))?;
        if row.len() != props.len() {
            return Err(GeomError::Parse(format!(
                "row with {} values, expected {}",
                row.len(),
                props.len()
            )));
        }
        rows.push(row);
    }
    if rows.len() != count {
        return Err(GeomError::Parse(format!("{} rows, header says {count}", rows.len())));
    }
    Ok(PlyBody { rows, props })
}

fn check_props(props: &[String], with_scale: bool) -> Result<(), GeomError> {
    let mut want: Vec<&str> = BASE_PROPS.to_vec();
    if with_scale {
        want.push("s");
    }
    if props.len() != want.len() || props.iter().zip(&want).any(|(a, b)| a != b) {
        return Err(GeomError::Parse(format!("unexpected properties {props:?}")));
    }
    Ok(())
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud, GeomError> {
    let body = parse_body(path)?;
    check_props(&body.props, false)?;
    let positions = body.rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect();
    let directions = body.rows.iter().map(|r| Vec3::new(r[3], r[4], r[5])).collect();
    PointCloud::new(positions, directions)
}

pub fn read_tracked_cloud(path: &Path) -> Result<TrackedPointCloud, GeomError> {
    let body = parse_body(path)?;
    check_props(&body.props, true)?;
    let positions = body.rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect();
    let directions = body.rows.iter().map(|r| Vec3::new(r[3], r[4], r[5])).collect();
    let scales = body.rows.iter().map(|r| r[6]).collect();
    TrackedPointCloud::new(positions, directions, scales)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn roundtrip_point_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        let c = PointCloud::new(
            vec![Vec3::new(0.125, -3.5, 7.0), Vec3::new(1e-8, 2.0, -0.75)],
            vec![Vec3::z(), Vec3::new(0.6, 0.8, 0.0)],
        )
        .unwrap();
        write_point_cloud(&path, &c).unwrap();
        let back = read_point_cloud(&path).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn roundtrip_tracked_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ply");
        let c = TrackedPointCloud::new(
            vec![Vec3::new(0.5, 0.25, -1.0)],
            vec![Vec3::new(0.0, 1.0, 0.0)],
            vec![0.125],
        )
        .unwrap();
        write_tracked_cloud(&path, &c).unwrap();
        let back = read_tracked_cloud(&path).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn reader_rejects_non_unit_direction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ply");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "ply\nformat ascii 1.0\nelement vertex 1").unwrap();
        for p in BASE_PROPS {
            writeln!(f, "property float {p}").unwrap();
        }
        writeln!(f, "end_header\n0 0 0 0.5 0 0").unwrap();
        assert!(matches!(read_point_cloud(&path), Err(GeomError::NonUnitDirection(0, _))));
    }

    #[test]
    fn reader_renormalizes_small_deviation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("close.ply");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "ply\nformat ascii 1.0\nelement vertex 1").unwrap();
        for p in BASE_PROPS {
            writeln!(f, "property float {p}").unwrap();
        }
        writeln!(f, "end_header\n0 0 0 0 0 1.0004").unwrap();
        let c = read_point_cloud(&path).unwrap();
        assert!((c.directions()[0].norm() - 1.0).abs() < 1e-12);
    }
}
