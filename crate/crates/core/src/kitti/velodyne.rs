use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::tensor::Tensor;

/// Decodes little-endian `f32` quadruples `(x, y, z, intensity)`. Intensity
/// becomes a one-column feature tensor (absent for an empty scan).
pub fn read_velodyne(bytes: &[u8]) -> Result<PointSet> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Format(format!("velodyne buffer of {} bytes is not a multiple of 16", bytes.len())));
    }
    let f = |c: &[u8]| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut coords = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        coords.push([f(&rec[0..4]), f(&rec[4..8]), f(&rec[8..12])]);
        intensity.push(f(&rec[12..16]));
    }
    let feats = if coords.is_empty() {
        None
    } else {
        Some(Tensor::new(vec![coords.len(), 1], intensity)?)
    };
    PointSet::new(coords, feats)
}

/// Encodes points (and the first feature column as intensity, else 0) as `f32` quadruples.
pub fn write_velodyne(points: &PointSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 16);
    for (i, p) in points.coords.iter().enumerate() {
        let intensity = points.feats.as_ref().map_or(0.0, |f| f.row(i)[0]);
        for v in [p[0], p[1], p[2], intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_and_bad_length() {
        let p = read_velodyne(&[0u8; 16]).unwrap();
        assert_eq!(p.coords, vec![[0.0; 3]]);
        assert_eq!(p.feats.unwrap().data(), &[0.0]);
        assert!(matches!(read_velodyne(&[0u8; 15]), Err(Error::Format(_))));
    }

    #[test]
    fn handcrafted_buffer() {
        let mut b = Vec::new();
        for v in [1.5f32, -2.25, 0.125, 0.5, 10.0, 20.0, -1.0, 1.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let p = read_velodyne(&b).unwrap();
        assert_eq!(p.coords, vec![[1.5, -2.25, 0.125], [10.0, 20.0, -1.0]]);
        assert_eq!(write_velodyne(&p), b);
    }
}
