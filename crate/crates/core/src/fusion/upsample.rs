use super::{AttentionBlock, AttnMode};
use crate::error::{Error, Result};
use crate::geometry::{idw_weights, knn_group, Point3};
use crate::tensor::{LbrLayer, NormMode, ParamStore, Rng, Session, Var};

/// Neighbors used by inverse-distance interpolation.
pub const INTERP_K: usize = 3;
/// Inverse-distance exponent.
pub const INTERP_POWER: f64 = 2.0;

/// Interpolation stencils from `coarse` onto every `target` point.
pub fn interpolation_weights(targets: &[Point3], coarse: &[Point3]) -> Result<Vec<Vec<(usize, f64)>>> {
    if coarse.is_empty() {
        return Err(Error::Contract("interpolation from an empty point set".into()));
    }
    targets
        .iter()
        .map(|t| idw_weights(t, coarse, INTERP_K, INTERP_POWER))
        .collect()
}

fn check_sizes(op: &str, coarse: &[Point3], skip: &[Point3]) -> Result<()> {
    if coarse.is_empty() {
        return Err(Error::Contract(format!("{op}: empty coarse set")));
    }
    if skip.len() < coarse.len() {
        return Err(Error::Contract(format!(
            "{op}: {} skip points fewer than {} coarse points",
            skip.len(),
            coarse.len()
        )));
    }
    Ok(())
}

/// Upsampling stage: interpolate coarse features onto the skip points, add
/// the transformed skip features, then neighborhood self-attention.
#[derive(Clone, Debug)]
pub struct PtuStage {
    pub channels: usize,
    pub l_group: usize,
    pub skip_lbr: LbrLayer,
    pub attention: AttentionBlock,
}

impl PtuStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_coarse: usize,
        c_skip: usize,
        l_group: usize,
        mode: AttnMode,
        norm: NormMode,
        rng: &mut Rng,
    ) -> Self {
        PtuStage {
            channels: c_coarse,
            l_group,
            skip_lbr: LbrLayer::new(store, &format!("{name}.skip_lbr"), c_skip, c_coarse, norm, rng),
            attention: AttentionBlock::new(store, &format!("{name}.attn"), c_coarse, mode, norm, rng),
        }
    }

    /// Returns `[N_skip × channels]`.
    pub fn forward(&self, s: &mut Session, coarse: &[Point3], coarse_feats: Var, skip: &[Point3], skip_feats: Var) -> Result<Var> {
        check_sizes("ptu", coarse, skip)?;
        let f_int = s.g.mix_rows(coarse_feats, interpolation_weights(skip, coarse)?)?;
        let f_skip = self.skip_lbr.forward(s, skip_feats)?;
        let f = s.g.add(f_int, f_skip)?;
        let groups = knn_group(skip, skip, self.l_group.min(skip.len()))?;
        self.attention.forward(s, skip, f, &groups)
    }
}

/// Feature propagation: interpolate, concatenate skip features, shared LBR stack.
#[derive(Clone, Debug)]
pub struct FpLayer {
    pub layers: Vec<LbrLayer>,
}

impl FpLayer {
    /// `widths` are the LBR output widths; the input width is `c_coarse + c_skip`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_coarse: usize,
        c_skip: usize,
        widths: &[usize],
        norm: NormMode,
        rng: &mut Rng,
    ) -> Self {
        let mut c = c_coarse + c_skip;
        let layers = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let l = LbrLayer::new(store, &format!("{name}.lbr{i}"), c, w, norm, rng);
                c = w;
                l
            })
            .collect();
        FpLayer { layers }
    }

    pub fn c_out(&self) -> usize {
        self.layers.last().map_or(0, LbrLayer::c_out)
    }

    pub fn forward(&self, s: &mut Session, coarse: &[Point3], coarse_feats: Var, skip: &[Point3], skip_feats: Var) -> Result<Var> {
        check_sizes("fp", coarse, skip)?;
        let f_int = s.g.mix_rows(coarse_feats, interpolation_weights(skip, coarse)?)?;
        let mut x = s.g.concat_cols(&[f_int, skip_feats])?;
        for l in &self.layers {
            x = l.forward(s, x)?;
        }
        Ok(x)
    }
}
