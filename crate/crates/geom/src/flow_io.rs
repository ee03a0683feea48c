//! Binary flow-field files: u32 LE point count, then per point and per flow
//! direction (forward first) a presence byte followed by three f32 LE
//! components. Absent entries store zeros.

use crate::types::{FlowField, GeomError, Vec3};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

fn write_entry(w: &mut impl Write, e: &Option<Vec3>) -> std::io::Result<()> {
    match e {
        Some(v) => {
            w.write_all(&[1u8])?;
            for c in [v.x, v.y, v.z] {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        None => {
            w.write_all(&[0u8])?;
            w.write_all(&[0u8; 12])?;
        }
    }
    Ok(())
}

pub fn write_flow_field(path: &Path, flow: &FlowField) -> Result<(), GeomError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(flow.len() as u32).to_le_bytes())?;
    for i in 0..flow.len() {
        write_entry(&mut w, &flow.forward[i])?;
        write_entry(&mut w, &flow.backward[i])?;
    }
    Ok(())
}

fn read_entry(r: &mut impl Read) -> Result<Option<Vec3>, GeomError> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let mut buf = [0u8; 12];
    r.read_exact(&mut buf)?;
    if tag[0] == 0 {
        return Ok(None);
    }
    let f = |k: usize| f32::from_le_bytes(buf[4 * k..4 * k + 4].try_into().unwrap()) as f64;
    Ok(Some(Vec3::new(f(0), f(1), f(2))))
}

pub fn read_flow_field(path: &Path) -> Result<FlowField, GeomError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut cnt = [0u8; 4];
    r.read_exact(&mut cnt)?;
    let count = u32::from_le_bytes(cnt) as usize;
    let mut flow = FlowField { forward: Vec::with_capacity(count), backward: Vec::with_capacity(count) };
    for _ in 0..count {
        flow.forward.push(read_entry(&mut r)?);
        flow.backward.push(read_entry(&mut r)?);
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flow");
        let flow = FlowField {
            forward: vec![Some(Vec3::new(0.5, -0.25, 1.0)), None, Some(Vec3::zeros())],
            backward: vec![None, Some(Vec3::new(-1.0, 2.0, 3.0)), None],
        };
        write_flow_field(&path, &flow).unwrap();
        let back = read_flow_field(&path).unwrap();
        assert_eq!(flow, back);
    }
}
