use serde::{Deserialize, Serialize};

use super::{AttnMode, CombineMode};
use crate::error::{Error, Result};
use crate::tensor::NormMode;

/// Attention relation per module group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionModes {
    pub ptd: AttnMode,
    pub ptu: AttnMode,
    pub pft: AttnMode,
}

impl Default for AttentionModes {
    fn default() -> Self {
        AttentionModes {
            ptd: AttnMode::Subtract,
            ptu: AttnMode::Subtract,
            pft: AttnMode::Multiply,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Raw points entering the point branch.
    pub raw_points: usize,
    /// Point count after each point-branch downsampling stage.
    pub raw_stages: Vec<usize>,
    /// Pseudo points entering the pseudo-point branch.
    pub ppc_points: usize,
    pub ppc_stages: Vec<usize>,
    /// Width of the raw point input features.
    pub raw_in_channels: usize,
    /// Width of the pseudo-point input features.
    pub ppc_in_channels: usize,
    /// Output width of each encoder stage (both branches).
    pub channels: Vec<usize>,
    /// Neighborhood size for grouping and self-attention.
    pub l_group: usize,
    pub norm_mode: NormMode,
    /// Transformer downsampling; off gives plain set abstraction (group, LBR, max-pool).
    pub use_ptd: bool,
    /// Transformer upsampling in the point branch; off gives FP layers.
    pub use_ptu: bool,
    /// Cross-modal fusion links; off keeps the branches independent.
    pub use_pft: bool,
    /// Per-stage fusion link switches (only read when `use_pft` is on).
    pub pft_links: Vec<bool>,
    pub combine_mode: CombineMode,
    pub attn_modes: AttentionModes,
    /// Hidden width of the proposal heads.
    pub rpn_hidden: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            raw_points: 1600,
            raw_stages: vec![800, 400, 200, 100],
            ppc_points: 480,
            ppc_stages: vec![240, 120, 60, 30],
            raw_in_channels: 4,
            ppc_in_channels: 16,
            channels: vec![32, 64, 96, 128],
            l_group: 16,
            norm_mode: NormMode::PerPointStandardize,
            use_ptd: true,
            use_ptu: true,
            use_pft: true,
            pft_links: vec![true; 4],
            combine_mode: CombineMode::Subtract,
            attn_modes: AttentionModes::default(),
            rpn_hidden: 64,
        }
    }
}

fn check_stages(name: &str, input: usize, stages: &[usize], l_group: usize) -> Result<()> {
    let mut prev = input;
    for &n in stages {
        if n == 0 || n >= prev {
            return Err(Error::Config(format!("{name} stage sizes must strictly decrease from {input}: {stages:?}")));
        }
        prev = n;
    }
    if l_group > prev {
        return Err(Error::Config(format!(
            "l_group {l_group} exceeds the smallest {name} stage ({prev} points)"
        )));
    }
    Ok(())
}

impl NetworkConfig {
    /// Laptop-sized network: 256 raw and 128 pseudo points, four stages.
    pub fn desk() -> Self {
        NetworkConfig {
            raw_points: 256,
            raw_stages: vec![128, 64, 32, 16],
            ppc_points: 128,
            ppc_stages: vec![64, 32, 16, 8],
            channels: vec![16, 24, 32, 32],
            l_group: 8,
            rpn_hidden: 32,
            ..Self::default()
        }
    }

    /// Two-stage network over 32 raw and 16 pseudo points for gradient checks.
    pub fn miniature() -> Self {
        NetworkConfig {
            raw_points: 32,
            raw_stages: vec![16, 8],
            ppc_points: 16,
            ppc_stages: vec![8, 4],
            channels: vec![6, 8],
            l_group: 4,
            pft_links: vec![true; 2],
            rpn_hidden: 8,
            ..Self::default()
        }
    }

    pub fn num_stages(&self) -> usize {
        self.channels.len()
    }

    /// Width of the decoder and of the fused per-point output.
    pub fn output_channels(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    /// Whether the fusion link after stage `s` is active.
    pub fn link_active(&self, s: usize) -> bool {
        self.use_pft && self.pft_links[s]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_stages();
        if n == 0 {
            return Err(Error::Config("at least one stage is required".into()));
        }
        if self.raw_stages.len() != n || self.ppc_stages.len() != n || self.pft_links.len() != n {
            return Err(Error::Config(format!(
                "{n} channel widths but {} raw stages, {} pseudo stages, {} fusion links",
                self.raw_stages.len(),
                self.ppc_stages.len(),
                self.pft_links.len()
            )));
        }
        if self.channels.contains(&0) || self.raw_in_channels == 0 || self.ppc_in_channels == 0 || self.rpn_hidden == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.l_group == 0 {
            return Err(Error::Config("l_group must be positive".into()));
        }
        check_stages("raw", self.raw_points, &self.raw_stages, self.l_group)?;
        check_stages("pseudo", self.ppc_points, &self.ppc_stages, self.l_group)
    }
}
