//! KITTI velodyne `.bin` (little-endian f32 quadruples, no header) and a
//! whitespace text format (`x y z intensity` per line, `#` comments).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::PointCloud;
use crate::error::{Error, Result};

const RECORD: usize = 16;

pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Format(format!("{} holds no points", path.display())));
    }
    if bytes.len() % RECORD != 0 {
        return Err(Error::Format(format!(
            "{}: size {} is not a multiple of {RECORD}",
            path.display(),
            bytes.len()
        )));
    }
    let mut xyz = Vec::with_capacity(bytes.len() / RECORD);
    let mut intensity = Vec::with_capacity(bytes.len() / RECORD);
    for rec in bytes.chunks_exact(RECORD) {
        let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap()) as f64;
        xyz.push([f(0), f(1), f(2)]);
        intensity.push(f(3));
    }
    PointCloud::new(xyz, intensity)
}

/// Writes points as f32; values are rounded to the nearest f32.
pub fn write_kitti_bin(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(pc.len() * RECORD);
    for (p, i) in pc.xyz.iter().zip(&pc.intensity) {
        for v in [p[0], p[1], p[2], *i] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut xyz = Vec::new();
    let mut intensity = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        let [x, y, z, i] = vals[..] else {
            return Err(Error::Format(format!(
                "{}:{}: expected 4 values, got {}",
                path.display(),
                lineno + 1,
                vals.len()
            )));
        };
        xyz.push([x, y, z]);
        intensity.push(i);
    }
    if xyz.is_empty() {
        return Err(Error::Format(format!("{} holds no points", path.display())));
    }
    PointCloud::new(xyz, intensity)
}

pub fn write_text(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("# x y z intensity\n");
    for (p, i) in pc.xyz.iter().zip(&pc.intensity) {
        writeln!(out, "{} {} {} {}", p[0], p[1], p[2], i).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
