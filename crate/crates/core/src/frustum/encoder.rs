use serde::{Deserialize, Serialize};

use super::{DepthPrediction, ImageFeatureGrid, OffsetGrid};
use crate::error::{Error, Result};
use crate::tensor::{Linear, ParamStore, Rng, Session, Tensor, Var};

/// Tiny strided image encoder standing in for a large CNN backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Space-to-depth factor of each trunk block; their product is the stride.
    pub block_strides: Vec<usize>,
    /// Output width of each trunk block.
    pub block_channels: Vec<usize>,
    /// Channels `C` of the image feature grid.
    pub feat_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            block_strides: vec![2, 2, 1],
            block_channels: vec![16, 16, 16],
            feat_channels: 16,
        }
    }
}

impl EncoderConfig {
    pub fn stride(&self) -> usize {
        self.block_strides.iter().product()
    }

    /// Feature-grid size for an `h × w` image.
    pub fn grid_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let s = self.stride();
        if s == 0 || !h.is_multiple_of(s) || !w.is_multiple_of(s) || h == 0 || w == 0 {
            return Err(Error::Config(format!("image {w}×{h} is not divisible by stride {s}")));
        }
        Ok((h / s, w / s))
    }
}

/// Shared trunk plus feature, depth-bin, depth-residual and offset heads.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub config: EncoderConfig,
    pub bins: usize,
    pub blocks: Vec<Linear>,
    pub feat_head: Linear,
    pub bin_head: Linear,
    pub res_head: Linear,
    pub offset_head: Linear,
}

/// Encoder outputs as rows over the `h × w` feature cells.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    pub feats: Var,
    pub bin_logits: Var,
    pub residuals: Var,
    pub offsets: Var,
    pub height: usize,
    pub width: usize,
}

impl ImageEncoder {
    pub fn new(store: &mut ParamStore, config: EncoderConfig, bins: usize, rng: &mut Rng) -> Result<Self> {
        if config.block_strides.len() != config.block_channels.len() || config.block_strides.is_empty() {
            return Err(Error::Config("encoder needs one stride and one width per block".into()));
        }
        if config.block_strides.contains(&0) || config.block_channels.contains(&0) || config.feat_channels == 0 || bins == 0 {
            return Err(Error::Config("encoder widths and strides must be positive".into()));
        }
        let mut c_in = 3;
        let mut blocks = Vec::new();
        for (i, (&f, &c)) in config.block_strides.iter().zip(&config.block_channels).enumerate() {
            blocks.push(Linear::new(store, &format!("encoder.block{i}"), c_in * f * f, c, rng));
            c_in = c;
        }
        Ok(ImageEncoder {
            feat_head: Linear::new(store, "encoder.feat_head", c_in, config.feat_channels, rng),
            bin_head: Linear::new(store, "encoder.bin_head", c_in, bins, rng),
            res_head: Linear::new(store, "encoder.res_head", c_in, bins, rng),
            offset_head: Linear::new(store, "encoder.offset_head", c_in, 2, rng),
            config,
            bins,
            blocks,
        })
    }

    /// Image `[H×W×3]` → per-cell heads.
    pub fn forward(&self, s: &mut Session, image: &Tensor) -> Result<EncoderOutput> {
        let shape = image.shape();
        if shape.len() != 3 || shape[2] != 3 {
            return Err(Error::dim("encode_image", format!("image {shape:?}")));
        }
        let (mut h, mut w) = (shape[0], shape[1]);
        self.config.grid_size(h, w)?;
        let mut x = s.constant(image.clone().reshaped(&[h * w, 3])?)?;
        for (block, &f) in self.blocks.iter().zip(&self.config.block_strides) {
            x = space_to_depth(s, x, h, w, f)?;
            h /= f;
            w /= f;
            x = block.forward(s, x)?;
            x = s.g.relu(x)?;
        }
        Ok(EncoderOutput {
            feats: self.feat_head.forward(s, x)?,
            bin_logits: self.bin_head.forward(s, x)?,
            residuals: self.res_head.forward(s, x)?,
            offsets: self.offset_head.forward(s, x)?,
            height: h,
            width: w,
        })
    }

    /// Zeroes all four heads.
    pub fn zero_heads(&self, store: &mut ParamStore) {
        for head in [&self.feat_head, &self.bin_head, &self.res_head, &self.offset_head] {
            for id in [head.weight, head.bias] {
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
}

impl EncoderOutput {
    pub fn feature_grid(&self, s: &Session, stride: usize) -> Result<ImageFeatureGrid> {
        let t = s.g.value(self.feats);
        ImageFeatureGrid::new(t.clone().reshaped(&[self.height, self.width, t.cols()])?, stride)
    }

    pub fn depth(&self, s: &Session) -> Result<DepthPrediction> {
        let l = s.g.value(self.bin_logits);
        let d = l.cols();
        DepthPrediction::new(
            l.clone().reshaped(&[self.height, self.width, d])?,
            s.g.value(self.residuals).clone().reshaped(&[self.height, self.width, d])?,
        )
    }

    pub fn offset_grid(&self, s: &Session) -> Result<OffsetGrid> {
        Ok(OffsetGrid {
            offsets: s.g.value(self.offsets).clone().reshaped(&[self.height, self.width, 2])?,
        })
    }
}

/// Rows of an `h × w` grid regrouped into `f × f` patches: `[h·w × C]` → `[(h/f)(w/f) × f²C]`.
fn space_to_depth(s: &mut Session, x: Var, h: usize, w: usize, f: usize) -> Result<Var> {
    if f == 1 {
        return Ok(x);
    }
    let c = s.g.value(x).cols();
    let (oh, ow) = (h / f, w / f);
    let mut order = Vec::with_capacity(h * w);
    for oy in 0..oh {
        for ox in 0..ow {
            for dy in 0..f {
                for dx in 0..f {
                    order.push((oy * f + dy) * w + ox * f + dx);
                }
            }
        }
    }
    let g = s.g.gather_rows(x, &order)?;
    s.g.reshape(g, &[oh * ow, f * f * c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_arithmetic_for_full_resolution() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.stride(), 4);
        assert_eq!(cfg.grid_size(384, 1280).unwrap(), (96, 320));
        assert!(cfg.grid_size(383, 1280).is_err());
    }

    #[test]
    fn zero_image_gives_zero_features_and_uniform_depth() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(5);
        let enc = ImageEncoder::new(&mut store, EncoderConfig::default(), 6, &mut rng).unwrap();
        enc.zero_heads(&mut store);
        let mut s = Session::new(&store);
        let out = enc.forward(&mut s, &Tensor::zeros(&[8, 12, 3])).unwrap();
        assert_eq!((out.height, out.width), (2, 3));
        let fi = out.feature_grid(&s, 4).unwrap();
        assert!(fi.feats.data().iter().all(|&v| v == 0.0));
        let p = s.g.softmax(out.bin_logits, 1).unwrap();
        assert!(s.g.value(p).data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn space_to_depth_patch_order() {
        let store = ParamStore::new();
        let mut s = Session::new(&store);
        // 2×4 grid with one channel holding the row index
        let x = s.constant(Tensor::new(vec![8, 1], (0..8).map(f64::from).collect()).unwrap()).unwrap();
        let y = space_to_depth(&mut s, x, 2, 4, 2).unwrap();
        assert_eq!(s.g.value(y).shape(), &[2, 4]);
        assert_eq!(s.g.value(y).data(), &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
    }
}
