use super::{AttentionBlock, AttnMode};
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sampling, knn_group, Point3};
use crate::tensor::{LbrLayer, NormMode, ParamStore, Rng, Session, Var};

/// Downsampling stage: FPS centers, k-NN grouping with LBR and max-pool,
/// then (optionally) neighborhood self-attention among the centers.
#[derive(Clone, Debug)]
pub struct PtdStage {
    pub m_out: usize,
    pub l_group: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub local_lbr: LbrLayer,
    /// `None` reduces the stage to plain set abstraction.
    pub attention: Option<AttentionBlock>,
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    /// Indices of the sampled centers in the stage input.
    pub centers: Vec<usize>,
    pub coords: Vec<Point3>,
    /// `[m_out × c_out]`.
    pub feats: Var,
}

impl PtdStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        m_out: usize,
        l_group: usize,
        c_in: usize,
        c_out: usize,
        attention: Option<AttnMode>,
        norm: NormMode,
        rng: &mut Rng,
    ) -> Self {
        PtdStage {
            m_out,
            l_group,
            c_in,
            c_out,
            local_lbr: LbrLayer::new(store, &format!("{name}.local_lbr"), c_in, c_out, norm, rng),
            attention: attention.map(|mode| AttentionBlock::new(store, &format!("{name}.attn"), c_out, mode, norm, rng)),
        }
    }

    pub fn forward(&self, s: &mut Session, coords: &[Point3], feats: Var) -> Result<StageOutput> {
        if self.m_out > coords.len() || self.l_group > coords.len() {
            return Err(Error::Config(format!(
                "stage samples {} points in groups of {} from {}",
                self.m_out,
                self.l_group,
                coords.len()
            )));
        }
        let centers = farthest_point_sampling(coords, self.m_out, 0)?;
        let center_coords: Vec<Point3> = centers.iter().map(|&i| coords[i]).collect();
        let local = knn_group(&center_coords, coords, self.l_group)?;
        let attn = if self.attention.is_some() {
            knn_group(&center_coords, &center_coords, self.l_group)?
        } else {
            Vec::new()
        };
        let feats = self.forward_grouped(s, &center_coords, feats, &local, &attn)?;
        Ok(StageOutput {
            centers,
            coords: center_coords,
            feats,
        })
    }

    /// Stage body with explicit groups: `local[i]` indexes the stage input,
    /// `attn[i]` indexes the centers. Member order within a group is irrelevant.
    pub fn forward_grouped(
        &self,
        s: &mut Session,
        center_coords: &[Point3],
        feats: Var,
        local: &[Vec<usize>],
        attn: &[Vec<usize>],
    ) -> Result<Var> {
        let m = center_coords.len();
        let l = local.first().map_or(0, Vec::len);
        let n_in = s.g.value(feats).rows();
        if local.len() != m || l == 0 || local.iter().any(|g| g.len() != l || g.iter().any(|&j| j >= n_in)) {
            return Err(Error::Contract("local groups must be equal-sized and index the stage input".into()));
        }
        let flat: Vec<usize> = local
            .iter()
            .flat_map(|g| {
                let mut g = g.clone();
                g.sort_unstable();
                g
            })
            .collect();
        let grouped = s.g.gather_rows(feats, &flat)?;
        let h = self.local_lbr.forward(s, grouped)?;
        let h = s.g.reshape(h, &[m, l, self.c_out])?;
        let f_local = s.g.max_axis(h, 1)?;
        match &self.attention {
            Some(block) => block.forward(s, center_coords, f_local, attn),
            None => Ok(f_local),
        }
    }
}
