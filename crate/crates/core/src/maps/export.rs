//! Map and profile export.

use std::fs;
use std::path::Path;

use super::profile::ProfileMeasurement;
use crate::acoustics::grid::Image;
use crate::{Error, Result};

/// 8-bit binary PGM scaled to the image maximum; NaN renders black.
/// Rows are axial, columns lateral.
pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    let top = img.data.iter().copied().filter(|v| v.is_finite()).fold(0.0f32, f32::max);
    let mut bytes = format!("P5\n{} {}\n255\n", img.nx, img.nz).into_bytes();
    for i in 0..img.nz {
        for j in 0..img.nx {
            let v = img.get(i, j);
            let b = if v.is_finite() && top > 0.0 {
                (v.max(0.0) / top * 255.0).round() as u8
            } else {
                0
            };
            bytes.push(b);
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Comma-separated matrix, one axial row per line.
pub fn write_csv_matrix(path: &Path, img: &Image) -> Result<()> {
    let mut s = String::with_capacity(img.data.len() * 8);
    for i in 0..img.nz {
        for j in 0..img.nx {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&format!("{:.6}", img.get(i, j)));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_profile_csv(path: &Path, m: &ProfileMeasurement) -> Result<()> {
    let mut s = String::from("distance_um,intensity\n");
    for (d, v) in m.distance_um.iter().zip(&m.intensity) {
        s.push_str(&format!("{d:.3},{v:.6}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let img = Image::from_fn(2, 3, |i, j| (i * 3 + j) as f32);
        write_pgm(&p, &img).unwrap();
        let b = fs::read(&p).unwrap();
        assert!(b.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(b.len(), 11 + 6);
        assert_eq!(*b.last().unwrap(), 255);
    }
}
