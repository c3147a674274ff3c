//! Pseudo point cloud generation: a small image encoder with depth and
//! keypoint-offset heads, the depth-weighted frustum feature volume, and the
//! lifting of sampled foreground pixels into LiDAR space.

mod encoder;
mod pseudo;

pub use encoder::{EncoderConfig, EncoderOutput, ImageEncoder};
pub use pseudo::{
    generate_pseudo_points, pixel_to_grid, sample_keypoint_offsets, select_foreground, ForegroundMask,
    ForegroundSelection, ImageEvidence, PseudoPointSet,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Session, Tensor, Var};

/// Image features `[H_F × W_F × C]` and the pixel stride of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatureGrid {
    pub feats: Tensor,
    pub stride: usize,
}

/// Per-cell depth-bin logits and normalized residuals, both `[H_F × W_F × D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPrediction {
    pub bin_logits: Tensor,
    pub residuals: Tensor,
}

/// Per-cell keypoint offsets `[H_F × W_F × 2]` in pixels, `(Δu, Δv)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetGrid {
    pub offsets: Tensor,
}

/// Frustum features `[H_F × W_F × D × C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrustumGrid {
    pub feats: Tensor,
}

impl ImageFeatureGrid {
    pub fn new(feats: Tensor, stride: usize) -> Result<Self> {
        if feats.shape().len() != 3 || stride == 0 {
            return Err(Error::dim("image_feature_grid", format!("{:?} stride {stride}", feats.shape())));
        }
        Ok(ImageFeatureGrid { feats, stride })
    }

    pub fn height(&self) -> usize {
        self.feats.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.feats.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.feats.shape()[2]
    }
}

impl DepthPrediction {
    pub fn new(bin_logits: Tensor, residuals: Tensor) -> Result<Self> {
        if bin_logits.shape().len() != 3 || bin_logits.shape() != residuals.shape() {
            return Err(Error::dim(
                "depth_prediction",
                format!("{:?} vs {:?}", bin_logits.shape(), residuals.shape()),
            ));
        }
        Ok(DepthPrediction { bin_logits, residuals })
    }

    pub fn bins(&self) -> usize {
        self.bin_logits.shape()[2]
    }

    /// First maximal bin of cell `(x, y)` and the residual predicted for it.
    pub fn argmax_at(&self, x: usize, y: usize) -> (usize, f64) {
        let (w, d) = (self.bin_logits.shape()[1], self.bins());
        let base = (y * w + x) * d;
        let logits = &self.bin_logits.data()[base..base + d];
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        (best, self.residuals.data()[base + best])
    }
}

/// How pseudo points are placed on the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Kps,
    Fps,
}

/// `F_T[h,w,d,c] = softmax_d(logits)[h,w,d] · F_I[h,w,c]`.
pub fn build_frustum(fi: &ImageFeatureGrid, dp: &DepthPrediction) -> Result<FrustumGrid> {
    let (h, w, c) = (fi.height(), fi.width(), fi.channels());
    let ls = dp.bin_logits.shape();
    if ls[0] != h || ls[1] != w {
        return Err(Error::dim("build_frustum", format!("features {:?} vs depth {ls:?}", fi.feats.shape())));
    }
    let d = ls[2];
    let store = crate::tensor::ParamStore::new();
    let mut s = Session::new(&store);
    let f = s.constant(fi.feats.clone().reshaped(&[h * w, c])?)?;
    let l = s.constant(dp.bin_logits.clone().reshaped(&[h * w, d])?)?;
    let ft = frustum_var(&mut s, f, l)?;
    let feats = s.g.value(ft).clone().reshaped(&[h, w, d, c])?;
    Ok(FrustumGrid { feats })
}

/// Differentiable frustum construction on cell rows: `[R×C]`, `[R×D]` → `[R×D×C]`.
pub fn frustum_var(s: &mut Session, feats: Var, bin_logits: Var) -> Result<Var> {
    let p = s.g.softmax(bin_logits, 1)?;
    s.g.outer_rows(p, feats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn uniform_logits_split_evenly() {
        let fi = ImageFeatureGrid::new(Tensor::full(&[1, 1, 3], 4.0), 1).unwrap();
        let dp = DepthPrediction::new(Tensor::zeros(&[1, 1, 2]), Tensor::zeros(&[1, 1, 2])).unwrap();
        let ft = build_frustum(&fi, &dp).unwrap();
        assert_eq!(ft.feats.shape(), &[1, 1, 2, 3]);
        assert!(ft.feats.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn peaked_logits_weight() {
        let fi = ImageFeatureGrid::new(Tensor::full(&[1, 1, 1], 1.0), 1).unwrap();
        let dp = DepthPrediction::new(
            Tensor::new(vec![1, 1, 2], vec![10.0, 0.0]).unwrap(),
            Tensor::zeros(&[1, 1, 2]),
        )
        .unwrap();
        let ft = build_frustum(&fi, &dp).unwrap();
        let expected = 1.0 / (1.0 + (-10f64).exp());
        assert!((ft.feats.data()[0] - expected).abs() < 1e-15);
        assert!((ft.feats.data()[0] - 0.9999546).abs() < 1e-7);
    }

    #[test]
    fn depth_marginal_recovers_features() {
        let mut rng = Rng::new(11);
        let fi = ImageFeatureGrid::new(Tensor::uniform(&[3, 4, 5], 2.0, &mut rng), 4).unwrap();
        let dp = DepthPrediction::new(
            Tensor::uniform(&[3, 4, 7], 3.0, &mut rng),
            Tensor::zeros(&[3, 4, 7]),
        )
        .unwrap();
        let ft = build_frustum(&fi, &dp).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                for c in 0..5 {
                    let s: f64 = (0..7).map(|d| ft.feats.at(&[y, x, d, c])).sum();
                    assert!((s - fi.feats.at(&[y, x, c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let fi = ImageFeatureGrid::new(Tensor::zeros(&[2, 2, 1]), 1).unwrap();
        let dp = DepthPrediction::new(Tensor::zeros(&[2, 3, 4]), Tensor::zeros(&[2, 3, 4])).unwrap();
        assert!(build_frustum(&fi, &dp).is_err());
        assert!(DepthPrediction::new(Tensor::zeros(&[2, 3, 4]), Tensor::zeros(&[2, 3, 5])).is_err());
    }
}
