use serde::{Deserialize, Serialize};

use super::attention::projection;
use super::AttnMode;
use crate::error::{Error, Result};
use crate::tensor::{LbrLayer, Linear, Mlp2, NormMode, ParamId, ParamStore, Rng, Session, Var};

/// How a modality's projected input is merged with the attended features of
/// the other modality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    #[default]
    Subtract,
    Add,
    Concat,
}

/// One direction of the fusion block. Stored per modality so the stage can be
/// mirrored by swapping the two sides.
#[derive(Clone, Debug)]
struct Side {
    c_in: usize,
    /// Number of points on this side.
    n: usize,
    /// `[C_in × 3C_e]` producing this side's Q, K, V.
    w_qkv: ParamId,
    /// `C_in → C_e` projection of the input used in the combine step.
    input_proj: Linear,
    /// Relation transform applied to this side's attention logits.
    mix: Mlp2,
    out_lbr: LbrLayer,
}

/// Bidirectional cross-attention between raw-point and pseudo-point features.
#[derive(Clone, Debug)]
pub struct PftStage {
    pub c_e: usize,
    pub combine: CombineMode,
    pub attn_mode: AttnMode,
    raw: Side,
    pseu: Side,
}

#[derive(Clone, Copy, Debug)]
pub struct PftOutput {
    /// `[N × C_e]`.
    pub raw: Var,
    /// `[M × C_e]`.
    pub pseu: Var,
    /// Cross attention of the raw side, normalized over axis 1: `[N × M]`
    /// with products, `[N × M × C_e]` with differences.
    pub attn_raw: Var,
    /// Cross attention of the pseudo side, `[M × N]` or `[M × N × C_e]`.
    pub attn_pseu: Var,
}

impl PftStage {
    /// `n`/`m` are the raw/pseudo point counts; they size the relation
    /// transforms when attention uses products.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (c_raw, n): (usize, usize),
        (c_pseu, m): (usize, usize),
        c_e: usize,
        combine: CombineMode,
        attn_mode: AttnMode,
        norm: NormMode,
        rng: &mut Rng,
    ) -> Self {
        let mut side = |tag: &str, c_in: usize, own: usize, other: usize, rng: &mut Rng| {
            let mix_width = match attn_mode {
                AttnMode::Multiply => other,
                AttnMode::Subtract => c_e,
            };
            let out_in = match combine {
                CombineMode::Concat => 2 * c_e,
                _ => c_e,
            };
            Side {
                c_in,
                n: own,
                w_qkv: projection(store, &format!("{name}.w_{tag}"), c_in, 3 * c_e, rng),
                input_proj: Linear::new(store, &format!("{name}.in_{tag}"), c_in, c_e, rng),
                mix: Mlp2::new(store, &format!("{name}.mix_{tag}"), mix_width, mix_width, mix_width, rng),
                out_lbr: LbrLayer::new(store, &format!("{name}.out_lbr_{tag}"), out_in, c_e, norm, rng),
            }
        };
        let raw = side("raw", c_raw, n, m, rng);
        let pseu = side("pseu", c_pseu, m, n, rng);
        PftStage {
            c_e,
            combine,
            attn_mode,
            raw,
            pseu,
        }
    }

    /// The same stage with the roles of the two modalities exchanged.
    pub fn swapped(&self) -> Self {
        PftStage {
            c_e: self.c_e,
            combine: self.combine,
            attn_mode: self.attn_mode,
            raw: self.pseu.clone(),
            pseu: self.raw.clone(),
        }
    }

    pub fn forward(&self, s: &mut Session, f_raw: Var, f_pseu: Var) -> Result<PftOutput> {
        let (n, m) = (s.g.value(f_raw).rows(), s.g.value(f_pseu).rows());
        if n == 0 || m == 0 {
            return Err(Error::Contract(format!("fusion of {n} raw and {m} pseudo points")));
        }
        for (side, x) in [(&self.raw, f_raw), (&self.pseu, f_pseu)] {
            let v = s.g.value(x);
            if v.cols() != side.c_in {
                return Err(Error::dim("pft", format!("input {:?}, expected width {}", v.shape(), side.c_in)));
            }
            if self.attn_mode == AttnMode::Multiply && v.rows() != side.n {
                return Err(Error::dim("pft", format!("{} points, stage built for {}", v.rows(), side.n)));
            }
        }
        let raw = self.qkv(s, &self.raw, f_raw)?;
        let pseu = self.qkv(s, &self.pseu, f_pseu)?;
        let (out_raw, attn_raw) = self.cross(s, &self.raw, f_raw, raw, pseu)?;
        let (out_pseu, attn_pseu) = self.cross(s, &self.pseu, f_pseu, pseu, raw)?;
        Ok(PftOutput {
            raw: out_raw,
            pseu: out_pseu,
            attn_raw,
            attn_pseu,
        })
    }

    fn qkv(&self, s: &mut Session, side: &Side, x: Var) -> Result<[Var; 3]> {
        let c = self.c_e;
        let w = s.param(side.w_qkv)?;
        let qkv = s.g.matmul(x, w)?;
        Ok([
            s.g.slice_cols(qkv, 0, c)?,
            s.g.slice_cols(qkv, c, 2 * c)?,
            s.g.slice_cols(qkv, 2 * c, 3 * c)?,
        ])
    }

    /// Attends from `own` to `other`; returns the combined output and the attention.
    fn cross(&self, s: &mut Session, side: &Side, x: Var, own: [Var; 3], other: [Var; 3]) -> Result<(Var, Var)> {
        let [_, k_own, _] = own;
        let [q_other, _, v_other] = other;
        let n = s.g.value(k_own).rows();
        let m = s.g.value(q_other).rows();
        let c = self.c_e;
        let (attn, agg) = match self.attn_mode {
            AttnMode::Multiply => {
                let qt = s.g.transpose(q_other)?;
                let scores = s.g.matmul(k_own, qt)?;
                let logits = side.mix.forward(s, scores)?;
                let attn = s.g.softmax(logits, 1)?;
                let agg = s.g.matmul(attn, v_other)?;
                (attn, agg)
            }
            AttnMode::Subtract => {
                let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();
                let tile: Vec<usize> = (0..n).flat_map(|_| 0..m).collect();
                let q = s.g.gather_rows(q_other, &tile)?;
                let k = s.g.gather_rows(k_own, &rep)?;
                let rel = s.g.sub(q, k)?;
                let logits = side.mix.forward(s, rel)?;
                let logits = s.g.reshape(logits, &[n, m, c])?;
                let attn = s.g.softmax(logits, 1)?;
                let v = s.g.gather_rows(v_other, &tile)?;
                let v = s.g.reshape(v, &[n, m, c])?;
                let weighted = s.g.mul(attn, v)?;
                (attn, s.g.sum_axis(weighted, 1)?)
            }
        };
        let proj = side.input_proj.forward(s, x)?;
        let merged = match self.combine {
            CombineMode::Subtract => s.g.sub(proj, agg)?,
            CombineMode::Add => s.g.add(proj, agg)?,
            CombineMode::Concat => s.g.concat_cols(&[proj, agg])?,
        };
        Ok((side.out_lbr.forward(s, merged)?, attn))
    }
}
