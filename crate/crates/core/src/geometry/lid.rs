use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest normalized residual handed out by [`LidBinning::encode`], keeping
/// residuals inside `[0, 1)`.
const MAX_RESIDUAL: f64 = 1.0 - 1e-12;

/// Linear-increasing depth discretization: bin widths grow linearly with depth,
/// `edge(i) = d_min + (d_max − d_min)·i(i+1) / (D(D+1))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidBinning {
    pub d_min: f64,
    pub d_max: f64,
    pub bins: usize,
}

/// Bin index, residual as a fraction of that bin's width, and whether the
/// depth had to be clamped into range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidCode {
    pub bin: usize,
    pub residual: f64,
    pub clamped: bool,
}

impl Default for LidBinning {
    fn default() -> Self {
        LidBinning {
            d_min: 0.0,
            d_max: 70.4,
            bins: 80,
        }
    }
}

impl LidBinning {
    pub fn new(d_min: f64, d_max: f64, bins: usize) -> Result<Self> {
        let b = LidBinning { d_min, d_max, bins };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min.is_finite() && self.d_max.is_finite() && self.d_min < self.d_max) || self.bins == 0 {
            return Err(Error::Config(format!(
                "depth binning needs d_min < d_max and D ≥ 1, got [{}, {}] D={}",
                self.d_min, self.d_max, self.bins
            )));
        }
        Ok(())
    }

    pub fn edge(&self, i: usize) -> f64 {
        let d = self.bins as f64;
        let i = i as f64;
        self.d_min + (self.d_max - self.d_min) * i * (i + 1.0) / (d * (d + 1.0))
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|i| self.edge(i)).collect()
    }

    pub fn width(&self, bin: usize) -> f64 {
        self.edge(bin + 1) - self.edge(bin)
    }

    pub fn encode(&self, depth: f64) -> LidCode {
        let clamped = !(self.d_min..=self.d_max).contains(&depth);
        let depth = depth.clamp(self.d_min, self.d_max);
        let d = self.bins as f64;
        let t = (depth - self.d_min) / (self.d_max - self.d_min) * d * (d + 1.0);
        let mut bin = (((1.0 + 4.0 * t).sqrt() - 1.0) / 2.0).floor().max(0.0) as usize;
        bin = bin.min(self.bins - 1);
        // fix-up for rounding in the closed form
        while bin > 0 && depth < self.edge(bin) {
            bin -= 1;
        }
        while bin + 1 < self.bins && depth >= self.edge(bin + 1) {
            bin += 1;
        }
        let residual = ((depth - self.edge(bin)) / self.width(bin)).clamp(0.0, MAX_RESIDUAL);
        LidCode { bin, residual, clamped }
    }

    pub fn decode(&self, bin: usize, residual: f64) -> f64 {
        let bin = bin.min(self.bins - 1);
        self.edge(bin) + residual * self.width(bin)
    }

    /// Continuous position along the depth axis of a per-bin volume whose
    /// lattice points sit at bin centers.
    pub fn continuous_index(&self, depth: f64) -> f64 {
        let c = self.encode(depth);
        (c.bin as f64 + c.residual - 0.5).clamp(0.0, (self.bins - 1) as f64)
    }
}
