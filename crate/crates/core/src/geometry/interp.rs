use super::sampling::{knn_group, sq_dist};
use super::{Point3, PointSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Distance below which a target is considered coincident with a neighbor.
pub const IDW_EPS: f64 = 1e-10;

/// Sparse interpolation stencil: `(source row, weight)` pairs plus whether the
/// query had to be clamped into the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub weights: Vec<(usize, f64)>,
    pub clamped: bool,
}

impl Sample {
    /// Applies the stencil to a row-major table of rows.
    pub fn apply(&self, table: &Tensor) -> Vec<f64> {
        let mut out = vec![0.0; table.cols()];
        for &(j, w) in &self.weights {
            for (o, v) in out.iter_mut().zip(table.row(j)) {
                *o += w * v;
            }
        }
        out
    }
}

/// Normalized inverse-distance weights `w_j ∝ 1/d^p` over the `k` nearest
/// neighbors. A neighbor closer than [`IDW_EPS`] takes the full weight.
pub fn idw_weights(target: &Point3, neighbors: &[Point3], k: usize, p: f64) -> Result<Vec<(usize, f64)>> {
    if neighbors.is_empty() {
        return Err(Error::EmptyInput("idw_interpolate"));
    }
    let k = k.min(neighbors.len());
    let near = knn_group(std::slice::from_ref(target), neighbors, k)?.remove(0);
    let dists: Vec<f64> = near.iter().map(|&j| sq_dist(target, &neighbors[j]).sqrt()).collect();
    if let Some(pos) = dists.iter().position(|&d| d < IDW_EPS) {
        return Ok(vec![(near[pos], 1.0)]);
    }
    let raw: Vec<f64> = dists.iter().map(|d| 1.0 / d.powf(p)).collect();
    let total: f64 = raw.iter().sum();
    Ok(near.into_iter().zip(raw).map(|(j, w)| (j, w / total)).collect())
}

/// Inverse-distance weighted feature average at `target`.
pub fn idw_interpolate(target: &Point3, neighbors: &PointSet, k: usize, p: f64) -> Result<Vec<f64>> {
    let feats = neighbors
        .feats
        .as_ref()
        .ok_or_else(|| Error::Contract("idw_interpolate needs neighbor features".into()))?;
    let w = idw_weights(target, &neighbors.coords, k, p)?;
    Ok(Sample {
        weights: w,
        clamped: false,
    }
    .apply(feats))
}

/// Lower lattice index and fraction along one axis of extent `n`, clamped to `[0, n-1]`.
fn axis(x: f64, n: usize) -> (usize, f64, bool) {
    let hi = (n - 1) as f64;
    let clamped = !(0.0..=hi).contains(&x);
    let x = x.clamp(0.0, hi);
    if n == 1 {
        return (0, 0.0, clamped);
    }
    let i0 = (x.floor() as usize).min(n - 2);
    (i0, x - i0 as f64, clamped)
}

fn push(weights: &mut Vec<(usize, f64)>, idx: usize, w: f64) {
    if w == 0.0 {
        return;
    }
    match weights.iter_mut().find(|(j, _)| *j == idx) {
        Some((_, acc)) => *acc += w,
        None => weights.push((idx, w)),
    }
}

/// Bilinear stencil on an `h × w` lattice; `u` runs along the width, `v` along
/// the height. Rows are indexed `y·w + x`.
pub fn bilinear_weights(h: usize, w: usize, u: f64, v: f64) -> Sample {
    let (x0, fx, cx) = axis(u, w);
    let (y0, fy, cy) = axis(v, h);
    let mut weights = Vec::with_capacity(4);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (x, y) = ((x0 + dx).min(w - 1), (y0 + dy).min(h - 1));
            push(&mut weights, y * w + x, wy * wx);
        }
    }
    Sample {
        weights,
        clamped: cx || cy,
    }
}

/// Trilinear stencil on an `h × w × d` lattice; rows are indexed `(y·w + x)·d + z`.
pub fn trilinear_weights(h: usize, w: usize, d: usize, u: f64, v: f64, z: f64) -> Sample {
    let (x0, fx, cx) = axis(u, w);
    let (y0, fy, cy) = axis(v, h);
    let (z0, fz, cz) = axis(z, d);
    let mut weights = Vec::with_capacity(8);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            for (dz, wz) in [(0, 1.0 - fz), (1, fz)] {
                let (x, y, zz) = ((x0 + dx).min(w - 1), (y0 + dy).min(h - 1), (z0 + dz).min(d - 1));
                push(&mut weights, (y * w + x) * d + zz, wy * wx * wz);
            }
        }
    }
    Sample {
        weights,
        clamped: cx || cy || cz,
    }
}

/// Samples an `[H×W×C]` grid at fractional pixel `(u, v)`.
pub fn bilinear_sample(grid: &Tensor, u: f64, v: f64) -> Result<(Vec<f64>, bool)> {
    let s = grid.shape();
    if s.len() != 3 {
        return Err(Error::dim("bilinear_sample", format!("grid {s:?}")));
    }
    let st = bilinear_weights(s[0], s[1], u, v);
    let table = grid.clone().reshaped(&[s[0] * s[1], s[2]])?;
    Ok((st.apply(&table), st.clamped))
}

/// Samples an `[H×W×D×C]` volume at fractional `(u, v, d)`.
pub fn trilinear_sample(volume: &Tensor, u: f64, v: f64, d: f64) -> Result<(Vec<f64>, bool)> {
    let s = volume.shape();
    if s.len() != 4 {
        return Err(Error::dim("trilinear_sample", format!("volume {s:?}")));
    }
    let st = trilinear_weights(s[0], s[1], s[2], u, v, d);
    let table = volume.clone().reshaped(&[s[0] * s[1] * s[2], s[3]])?;
    Ok((st.apply(&table), st.clamped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(coords: Vec<Point3>, f: Vec<f64>) -> PointSet {
        let n = coords.len();
        PointSet::new(coords, Some(Tensor::new(vec![n, 1], f).unwrap())).unwrap()
    }

    #[test]
    fn idw_equidistant_is_mean() {
        let nb = set(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vec![1.0, 2.0, 3.0]);
        let f = idw_interpolate(&[0.0; 3], &nb, 3, 2.0).unwrap();
        assert!((f[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn idw_coincident_returns_neighbor() {
        let nb = set(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vec![1.0, 2.0, 3.0]);
        assert_eq!(idw_interpolate(&[0.0, 1.0, 0.0], &nb, 3, 2.0).unwrap(), vec![2.0]);
    }

    #[test]
    fn idw_two_neighbors_hand_value() {
        // weights 1/1² and 1/2² → (0·1 + 3·0.25) / 1.25
        let nb = set(vec![[1.0, 0.0, 0.0], [-2.0, 0.0, 0.0]], vec![0.0, 3.0]);
        let f = idw_interpolate(&[0.0; 3], &nb, 2, 2.0).unwrap();
        assert!((f[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn idw_requires_features() {
        let nb = PointSet::from_coords(vec![[1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(idw_interpolate(&[0.0; 3], &nb, 3, 2.0), Err(Error::Contract(_))));
    }

    #[test]
    fn bilinear_hand_cases() {
        // 2×2 grid, values 0,1 / 2,3
        let g = Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(bilinear_sample(&g, 0.5, 0.5).unwrap(), (vec![1.5], false));
        assert_eq!(bilinear_sample(&g, 1.0, 0.0).unwrap(), (vec![1.0], false));
        let (v, clamped) = bilinear_sample(&g, 3.0, -1.0).unwrap();
        assert_eq!(v, vec![1.0]);
        assert!(clamped);
    }

    #[test]
    fn trilinear_center_of_binary_cube() {
        // value at (x, y, z) = 4y + 2x + z, i.e. the row index
        let v = Tensor::new(vec![2, 2, 2, 1], (0..8).map(f64::from).collect()).unwrap();
        let (f, _) = trilinear_sample(&v, 0.5, 0.5, 0.5).unwrap();
        assert!((f[0] - 3.5).abs() < 1e-15);
        assert_eq!(trilinear_sample(&v, 1.0, 0.0, 1.0).unwrap().0, vec![3.0]);
    }

    #[test]
    fn single_cell_axes() {
        let g = Tensor::new(vec![1, 1, 2], vec![4.0, 5.0]).unwrap();
        assert_eq!(bilinear_sample(&g, 0.0, 0.0).unwrap(), (vec![4.0, 5.0], false));
        assert!(bilinear_sample(&g, 0.3, 0.0).unwrap().1);
    }
}
