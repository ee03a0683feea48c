//! Image files: binary PPM (P6) for RGB, PGM (P5) for single channels, and
//! PFM float planes (little-endian, negative scale) for metric computation.

use crate::primitive::VolrenError;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Channel-major float RGB image, values nominally in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// [3*H*W], plane c at c*H*W.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<(), VolrenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let plane = img.width * img.height;
    let mut buf = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            buf.push(quantize(img.data[c * plane + i]));
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<(), VolrenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    let buf: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    w.write_all(&buf)?;
    Ok(())
}

fn read_pnm_header(r: &mut impl Read, magic: &str) -> Result<(usize, usize), VolrenError> {
    // header tokens separated by whitespace: magic, width, height, maxval
    let mut tokens = Vec::new();
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    while tokens.len() < 4 {
        r.read_exact(&mut byte)?;
        let ch = byte[0] as char;
        if ch.is_whitespace() {
            if !tok.is_empty() {
                tokens.push(std::mem::take(&mut tok));
            }
        } else if ch == '#' {
            // comment to end of line
            loop {
                r.read_exact(&mut byte)?;
                if byte[0] == b'\n' {
                    break;
                }
            }
        } else {
            tok.push(ch);
        }
    }
    if tokens[0] != magic {
        return Err(VolrenError::Parse(format!("expected {magic}, got {}", tokens[0])));
    }
    if tokens[3] != "255" {
        return Err(VolrenError::Parse(format!("unsupported maxval {}", tokens[3])));
    }
    let w = tokens[1].parse().map_err(|_| VolrenError::Parse("bad width".into()))?;
    let h = tokens[2].parse().map_err(|_| VolrenError::Parse("bad height".into()))?;
    Ok((w, h))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage, VolrenError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (width, height) = read_pnm_header(&mut r, "P6")?;
    let plane = width * height;
    let mut buf = vec![0u8; 3 * plane];
    r.read_exact(&mut buf)?;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = buf[3 * i + c] as f64 / 255.0;
        }
    }
    Ok(RgbImage { width, height, data })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage, VolrenError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (width, height) = read_pnm_header(&mut r, "P5")?;
    let mut buf = vec![0u8; width * height];
    r.read_exact(&mut buf)?;
    Ok(GrayImage { width, height, data: buf.iter().map(|&b| b as f64 / 255.0).collect() })
}

pub fn write_pfm_color(path: &Path, img: &RgbImage) -> Result<(), VolrenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "PF\n{} {}\n-1.0\n", img.width, img.height)?;
    let plane = img.width * img.height;
    // PFM scanlines run bottom-to-top
    for py in (0..img.height).rev() {
        for px in 0..img.width {
            for c in 0..3 {
                let v = img.data[c * plane + py * img.width + px] as f32;
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_pfm_gray(path: &Path, img: &GrayImage) -> Result<(), VolrenError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write!(w, "Pf\n{} {}\n-1.0\n", img.width, img.height)?;
    for py in (0..img.height).rev() {
        for px in 0..img.width {
            let v = img.data[py * img.width + px] as f32;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_pfm_header(r: &mut impl Read, magic: &str) -> Result<(usize, usize), VolrenError> {
    let mut tokens = Vec::new();
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    while tokens.len() < 4 {
        r.read_exact(&mut byte)?;
        let ch = byte[0] as char;
        if ch.is_whitespace() {
            if !tok.is_empty() {
                tokens.push(std::mem::take(&mut tok));
            }
        } else {
            tok.push(ch);
        }
    }
    if tokens[0] != magic {
        return Err(VolrenError::Parse(format!("expected {magic}, got {}", tokens[0])));
    }
    let scale: f64 = tokens[3].parse().map_err(|_| VolrenError::Parse("bad scale".into()))?;
    if scale >= 0.0 {
        return Err(VolrenError::Parse("big-endian PFM not supported".into()));
    }
    let w = tokens[1].parse().map_err(|_| VolrenError::Parse("bad width".into()))?;
    let h = tokens[2].parse().map_err(|_| VolrenError::Parse("bad height".into()))?;
    Ok((w, h))
}

pub fn read_pfm_color(path: &Path) -> Result<RgbImage, VolrenError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (width, height) = read_pfm_header(&mut r, "PF")?;
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    let mut buf = [0u8; 4];
    for py in (0..height).rev() {
        for px in 0..width {
            for c in 0..3 {
                r.read_exact(&mut buf)?;
                data[c * plane + py * width + px] = f32::from_le_bytes(buf) as f64;
            }
        }
    }
    Ok(RgbImage { width, height, data })
}

pub fn read_pfm_gray(path: &Path) -> Result<GrayImage, VolrenError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let (width, height) = read_pfm_header(&mut r, "Pf")?;
    let mut data = vec![0.0; width * height];
    let mut buf = [0u8; 4];
    for py in (0..height).rev() {
        for px in 0..width {
            r.read_exact(&mut buf)?;
            data[py * width + px] = f32::from_le_bytes(buf) as f64;
        }
    }
    Ok(GrayImage { width, height, data })
}
