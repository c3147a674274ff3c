use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::tensor::{LbrLayer, Mlp2, NormMode, ParamId, ParamStore, Rng, Session, Tensor, Var};

/// Bias-free `[C_in × C_out]` weight, uniform in `±sqrt(1/C_in)`.
pub(crate) fn projection(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut Rng) -> ParamId {
    let bound = (1.0 / c_in as f64).sqrt();
    store.add(name, Tensor::uniform(&[c_in, c_out], bound, rng))
}

/// How query and key interact inside an attention block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttnMode {
    /// Channel-wise `Q − K` relation (vector attention).
    #[default]
    Subtract,
    /// Dot product `Q·K`, one scalar per pair shared by all channels.
    Multiply,
}

/// Vector self-attention over fixed neighborhoods with a learned relative
/// position encoding and a residual feed-forward output.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub channels: usize,
    pub qkv_lbr: LbrLayer,
    /// `[C × 3C]` projection producing Q, K and V.
    pub w_e: ParamId,
    pub theta: Mlp2,
    pub alpha: Mlp2,
    pub beta: LbrLayer,
    pub mode: AttnMode,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, mode: AttnMode, norm: NormMode, rng: &mut Rng) -> Self {
        let qkv_lbr = LbrLayer::new(store, &format!("{name}.qkv_lbr"), c, c, norm, rng);
        let w_e = projection(store, &format!("{name}.w_e"), c, 3 * c, rng);
        AttentionBlock {
            channels: c,
            qkv_lbr,
            w_e,
            theta: Mlp2::new(store, &format!("{name}.theta"), 3, c, c, rng),
            alpha: Mlp2::new(store, &format!("{name}.alpha"), c, c, c, rng),
            beta: LbrLayer::new(store, &format!("{name}.beta"), c, c, norm, rng),
            mode,
        }
    }

    /// `x: [M × C]` features at `coords`; `groups[i]` lists the neighbors of
    /// point `i`. Members are visited in ascending index order, so the result
    /// does not depend on how each group is ordered.
    pub fn forward(&self, s: &mut Session, coords: &[Point3], x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        Ok(self.forward_detailed(s, coords, x, groups)?.0)
    }

    /// As [`Self::forward`], also returning the `[M × L × C]` attention weights
    /// (neighbors in ascending index order along axis 1).
    pub fn forward_detailed(&self, s: &mut Session, coords: &[Point3], x: Var, groups: &[Vec<usize>]) -> Result<(Var, Var)> {
        let c = self.channels;
        let xv = s.g.value(x);
        let m = xv.rows();
        if xv.cols() != c || m != coords.len() || groups.len() != m {
            return Err(Error::dim(
                "attention",
                format!("features {:?}, {} coords, {} groups, width {c}", xv.shape(), coords.len(), groups.len()),
            ));
        }
        let l = groups.first().map_or(0, Vec::len);
        if l == 0 || groups.iter().any(|g| g.len() != l || g.iter().any(|&j| j >= m)) {
            return Err(Error::Contract("attention groups must be equal-sized and in range".into()));
        }
        let mut centers = Vec::with_capacity(m * l);
        let mut members = Vec::with_capacity(m * l);
        let mut rel = Vec::with_capacity(m * l * 3);
        for (i, g) in groups.iter().enumerate() {
            let mut g = g.clone();
            g.sort_unstable();
            for j in g {
                centers.push(i);
                members.push(j);
                rel.extend((0..3).map(|a| coords[i][a] - coords[j][a]));
            }
        }

        let h = self.qkv_lbr.forward(s, x)?;
        let w = s.param(self.w_e)?;
        let qkv = s.g.matmul(h, w)?;
        let q = s.g.slice_cols(qkv, 0, c)?;
        let k = s.g.slice_cols(qkv, c, 2 * c)?;
        let v = s.g.slice_cols(qkv, 2 * c, 3 * c)?;
        let q = s.g.gather_rows(q, &centers)?;
        let k = s.g.gather_rows(k, &members)?;
        let v = s.g.gather_rows(v, &members)?;

        let rel = s.constant(Tensor::new(vec![m * l, 3], rel)?)?;
        let delta = self.theta.forward(s, rel)?;
        let relation = match self.mode {
            AttnMode::Subtract => s.g.sub(q, k)?,
            AttnMode::Multiply => {
                let qk = s.g.mul(q, k)?;
                let dot = s.g.sum_axis(qk, 1)?;
                let dot = s.g.reshape(dot, &[m * l, 1])?;
                let ones = s.constant(Tensor::full(&[1, c], 1.0))?;
                s.g.matmul(dot, ones)?
            }
        };
        let pre = s.g.add(relation, delta)?;
        let logits = self.alpha.forward(s, pre)?;
        let logits = s.g.reshape(logits, &[m, l, c])?;
        let attn = s.g.softmax(logits, 1)?;
        let vd = s.g.add(v, delta)?;
        let vd = s.g.reshape(vd, &[m, l, c])?;
        let weighted = s.g.mul(attn, vd)?;
        let agg = s.g.sum_axis(weighted, 1)?;
        let out = self.beta.forward(s, agg)?;
        Ok((s.g.add(out, x)?, attn))
    }
}
