//! Checkpoint file format.
//!
//! Layout: magic `NWGK`, version u32 LE, tensor count u32 LE, then per tensor
//! a record of name length u16 LE, name bytes, rank u8, dims u32 LE * rank and
//! the f32 LE payload. Round-trips bit-exactly.

use crate::adam::ParamStore;
use crate::scalar::Scalar;
use crate::tape::NnError;
use crate::tensor::TensorData;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"NWGK";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<(), NnError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(NnError::Format(format!("name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        if tensor.shape.len() > u8::MAX as usize {
            return Err(NnError::Format("rank exceeds u8".into()));
        }
        w.write_all(&[tensor.shape.len() as u8])?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &tensor.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>, NnError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let mut u16buf = [0u8; 2];
        r.read_exact(&mut u16buf)?;
        let name_len = u16::from_le_bytes(u16buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| NnError::Format(e.to_string()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u32buf)?;
            values.push(f32::from_le_bytes(u32buf));
        }
        store.insert(&name, TensorData::new(shape, values));
    }
    Ok(store)
}

/// Loads a checkpoint into any scalar type (used by the f64 shadow mode).
pub fn load_checkpoint_as<S: Scalar>(path: &Path) -> Result<ParamStore<S>, NnError> {
    let f32_store = load_checkpoint(path)?;
    let mut store = ParamStore::new();
    for (name, tensor) in f32_store.iter() {
        store.insert(name, tensor.cast::<S>());
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nwgk");
        let mut store = ParamStore::new();
        store.insert("layer0/w", TensorData::new(vec![2, 3], vec![0.1, -2.5, 3e-8, 1.0, f32::MIN_POSITIVE, 7.25]));
        store.insert("layer0/b", TensorData::new(vec![3], vec![0.0, -0.0, 42.0]));
        store.insert("scalar", TensorData::scalar(0.123456789f32));
        save_checkpoint(&path, &store).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(store.names(), back.names());
        for (name, t) in store.iter() {
            let bt = back.get(name).unwrap();
            assert_eq!(t.shape, bt.shape);
            // bit-exact comparison, including signed zero
            let a: Vec<u32> = t.values.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = bt.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }

        // byte-identical re-serialization
        let path2 = dir.path().join("m2.nwgk");
        save_checkpoint(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nwgk");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NnError::Format(_))));
    }
}
