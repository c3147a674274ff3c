use super::{DepthPrediction, FrustumGrid, ImageFeatureGrid, OffsetGrid, SamplingMode};
use crate::error::{Error, Result};
use crate::geometry::{
    bilinear_weights, farthest_point_sampling, trilinear_weights, Calibration, LidBinning, Point3, PointSet, Sample,
};
use crate::tensor::{Rng, Tensor};

/// Boolean image mask, row-major `[H × W]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForegroundMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("mask", format!("{height}×{width} with {} values", data.len())));
        }
        Ok(ForegroundMask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        ForegroundMask {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Pixel `(⌊u⌋, ⌊v⌋)` when `(u, v)` falls inside the image.
    pub fn pixel(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Selected point indices: the first `num_foreground` are mask hits in index
/// order, the rest are background padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForegroundSelection {
    pub indices: Vec<usize>,
    pub num_foreground: usize,
}

impl ForegroundSelection {
    pub fn foreground(&self) -> &[usize] {
        &self.indices[..self.num_foreground]
    }
}

/// Picks `n` points whose image projection lands on the mask, padding with
/// randomly chosen background points when there are fewer than `n` hits.
pub fn select_foreground(
    points: &PointSet,
    mask: &ForegroundMask,
    calib: &Calibration,
    n: usize,
    rng: &mut Rng,
) -> Result<ForegroundSelection> {
    if n > points.len() {
        return Err(Error::Argument(format!("select {n} of {} points", points.len())));
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut any_inside = false;
    for (i, p) in points.coords.iter().enumerate() {
        let hit = match calib.lidar_to_image(p) {
            Ok((u, v, _)) => mask.pixel(u, v).map(|(x, y)| {
                any_inside = true;
                mask.get(x, y)
            }),
            Err(_) => None,
        };
        if hit == Some(true) {
            fg.push(i);
        } else {
            bg.push(i);
        }
    }
    if !any_inside {
        return Err(Error::EmptyForeground);
    }
    if fg.len() >= n {
        fg.truncate(n);
        return Ok(ForegroundSelection {
            num_foreground: n,
            indices: fg,
        });
    }
    let num_foreground = fg.len();
    rng.shuffle(&mut bg);
    fg.extend_from_slice(&bg[..n - num_foreground]);
    Ok(ForegroundSelection {
        indices: fg,
        num_foreground,
    })
}

/// Continuous feature-grid coordinate of an image pixel coordinate; cell `i`
/// covers pixels `[i·stride, (i+1)·stride)` and its lattice point is the cell center.
pub fn pixel_to_grid(u: f64, stride: usize) -> f64 {
    (u + 0.5) / stride as f64 - 0.5
}

/// Bilinearly interpolated keypoint offsets at image pixels.
pub fn sample_keypoint_offsets(og: &OffsetGrid, pixels: &[[f64; 2]], stride: usize) -> Result<Vec<[f64; 2]>> {
    let s = og.offsets.shape();
    if s.len() != 3 || s[2] != 2 {
        return Err(Error::dim("sample_keypoint_offsets", format!("offset grid {s:?}")));
    }
    let table = og.offsets.clone().reshaped(&[s[0] * s[1], 2])?;
    Ok(pixels
        .iter()
        .map(|&[u, v]| {
            let st = bilinear_weights(s[0], s[1], pixel_to_grid(u, stride), pixel_to_grid(v, stride));
            let o = st.apply(&table);
            [o[0], o[1]]
        })
        .collect())
}

/// Pseudo points lifted from image keypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoPointSet {
    /// LiDAR-frame coordinates.
    pub coords: Vec<Point3>,
    /// Frustum features sampled at each point, `[M × C]`.
    pub feats: Tensor,
    /// Image pixel each point was lifted from (after any keypoint shift).
    pub pixel_uv: Vec<[f64; 2]>,
    /// Depth the point was lifted at.
    pub source_depth: Vec<f64>,
    /// Index into the scene points of the foreground point each one started from.
    pub source_index: Vec<usize>,
    /// Trilinear stencil into the flattened frustum volume `[H_F·W_F·D × C]`.
    pub stencils: Vec<Sample>,
    /// Number of shifted pixels that had to be clamped into the image.
    pub clamped: usize,
}

impl PseudoPointSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Everything pseudo-point placement needs from the image branch.
pub struct ImageEvidence<'a> {
    pub features: &'a ImageFeatureGrid,
    pub depth: &'a DepthPrediction,
    pub offsets: &'a OffsetGrid,
    pub frustum: &'a FrustumGrid,
}

/// Samples `m` foreground points by FPS, optionally shifts their projections
/// by the predicted keypoint offsets, reads depth from the depth head at the
/// (shifted) pixel, lifts back into LiDAR space and samples frustum features.
#[allow(clippy::too_many_arguments)]
pub fn generate_pseudo_points(
    points: &PointSet,
    selection: &ForegroundSelection,
    calib: &Calibration,
    evidence: &ImageEvidence,
    binning: &LidBinning,
    image_size: (usize, usize),
    m: usize,
    mode: SamplingMode,
) -> Result<PseudoPointSet> {
    let fg = selection.foreground();
    if m == 0 || m > fg.len() {
        return Err(Error::Contract(format!("{m} pseudo points from {} foreground points", fg.len())));
    }
    let fs = evidence.frustum.feats.shape();
    let (hf, wf, d, c) = (fs[0], fs[1], fs[2], fs[3]);
    let ds = evidence.depth.bin_logits.shape();
    if ds[0] != hf || ds[1] != wf || ds[2] != d || d != binning.bins {
        return Err(Error::dim("generate_pseudo_points", format!("frustum {fs:?} vs depth {ds:?}")));
    }
    let stride = evidence.features.stride;
    let (img_h, img_w) = image_size;

    let fg_coords: Vec<Point3> = fg.iter().map(|&i| points.coords[i]).collect();
    let picks = farthest_point_sampling(&fg_coords, m, 0)?;
    let source_index: Vec<usize> = picks.iter().map(|&k| fg[k]).collect();

    let mut pixels = Vec::with_capacity(m);
    for &i in &source_index {
        let (u, v, _) = calib.lidar_to_image(&points.coords[i])?;
        pixels.push([u, v]);
    }
    let shifts = match mode {
        SamplingMode::Kps => sample_keypoint_offsets(evidence.offsets, &pixels, stride)?,
        SamplingMode::Fps => vec![[0.0, 0.0]; m],
    };

    let table = evidence.frustum.feats.clone().reshaped(&[hf * wf * d, c])?;
    let mut out = PseudoPointSet {
        coords: Vec::with_capacity(m),
        feats: Tensor::zeros(&[m, c]),
        pixel_uv: Vec::with_capacity(m),
        source_depth: Vec::with_capacity(m),
        source_index,
        stencils: Vec::with_capacity(m),
        clamped: 0,
    };
    for (k, ([u, v], [du, dv])) in pixels.iter().zip(&shifts).enumerate() {
        let (mut su, mut sv) = (u + du, v + dv);
        let max_u = (img_w.max(1) - 1) as f64;
        let max_v = (img_h.max(1) - 1) as f64;
        if !(0.0..=max_u).contains(&su) || !(0.0..=max_v).contains(&sv) {
            out.clamped += 1;
            su = su.clamp(0.0, max_u);
            sv = sv.clamp(0.0, max_v);
        }
        let (gx, gy) = (pixel_to_grid(su, stride), pixel_to_grid(sv, stride));
        let cx = (gx.round().max(0.0) as usize).min(wf - 1);
        let cy = (gy.round().max(0.0) as usize).min(hf - 1);
        let (bin, res) = evidence.depth.argmax_at(cx, cy);
        let depth = binning.decode(bin, res.clamp(0.0, 1.0));
        let cam = calib.unproject(su, sv, depth);
        out.coords.push(calib.camera_to_lidar(&cam));
        out.pixel_uv.push([su, sv]);
        out.source_depth.push(depth);
        let st = trilinear_weights(hf, wf, d, gx, gy, binning.continuous_index(depth));
        let f = st.apply(&table);
        out.feats.data_mut()[k * c..(k + 1) * c].copy_from_slice(&f);
        out.stencils.push(st);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_points(n: usize) -> PointSet {
        PointSet::from_coords((0..n).map(|i| [0.5 + i as f64 * 0.1, 0.2, 5.0]).collect()).unwrap()
    }

    #[test]
    fn all_true_mask_takes_first_points() {
        let pts = line_points(6);
        let mask = ForegroundMask::filled(10, 10, true);
        let sel = select_foreground(&pts, &mask, &Calibration::identity(), 4, &mut Rng::new(1)).unwrap();
        assert_eq!(sel.indices, vec![0, 1, 2, 3]);
        assert_eq!(sel.num_foreground, 4);
    }

    #[test]
    fn all_false_mask_pads_deterministically() {
        let pts = line_points(6);
        let mask = ForegroundMask::filled(10, 10, false);
        let calib = Calibration::identity();
        let a = select_foreground(&pts, &mask, &calib, 3, &mut Rng::new(9)).unwrap();
        let b = select_foreground(&pts, &mask, &calib, 3, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_foreground, 0);
        assert_eq!(a.indices.len(), 3);
    }

    #[test]
    fn nothing_in_view_is_an_error() {
        let pts = PointSet::from_coords(vec![[0.0, 0.0, -1.0], [50.0, 50.0, 1.0]]).unwrap();
        let mask = ForegroundMask::filled(4, 4, true);
        let r = select_foreground(&pts, &mask, &Calibration::identity(), 1, &mut Rng::new(0));
        assert!(matches!(r, Err(Error::EmptyForeground)));
    }

    #[test]
    fn constant_offsets_everywhere() {
        let og = OffsetGrid {
            offsets: Tensor::new(vec![2, 2, 2], [1.0, 2.0].repeat(4)).unwrap(),
        };
        let out = sample_keypoint_offsets(&og, &[[0.3, 0.9], [7.0, -2.0]], 4).unwrap();
        assert_eq!(out, vec![[1.0, 2.0], [1.0, 2.0]]);
    }

    #[test]
    fn integer_pixel_hits_grid_value() {
        let og = OffsetGrid {
            offsets: Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap(),
        };
        let out = sample_keypoint_offsets(&og, &[[1.0, 0.0], [0.0, 1.0]], 1).unwrap();
        assert_eq!(out, vec![[2.0, 3.0], [4.0, 5.0]]);
    }
}
