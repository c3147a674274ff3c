use serde::{Deserialize, Serialize};

use super::{ParamId, ParamStore, Rng, Session, Tensor, Var};
use crate::error::{Error, Result};

/// Standardization epsilon of the LBR normalization.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// Per-channel standardization over the point rows.
    PerPointStandardize,
    Identity,
}

/// Fully connected layer `y = x·W + b` with `W: [C_in × C_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    /// Weights uniform in `±sqrt(1/C_in)`, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut Rng) -> Self {
        let bound = (1.0 / c_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(&[c_in, c_out], bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Linear {
            weight,
            bias,
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let width = s.g.value(x).cols();
        if width != self.c_in || s.g.value(x).shape().len() != 2 {
            return Err(Error::dim(
                "linear",
                format!("input {:?}, layer expects {} channels", s.g.value(x).shape(), self.c_in),
            ));
        }
        let w = s.param(self.weight)?;
        let b = s.param(self.bias)?;
        let y = s.g.matmul(x, w)?;
        s.g.add_row(y, b)
    }
}

/// Linear, normalization over points, ReLU.
#[derive(Clone, Debug)]
pub struct LbrLayer {
    pub linear: Linear,
    pub norm_scale: ParamId,
    pub norm_shift: ParamId,
    pub norm_mode: NormMode,
}

impl LbrLayer {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, norm_mode: NormMode, rng: &mut Rng) -> Self {
        let linear = Linear::new(store, name, c_in, c_out, rng);
        let norm_scale = store.add(format!("{name}.norm_scale"), Tensor::full(&[c_out], 1.0));
        let norm_shift = store.add(format!("{name}.norm_shift"), Tensor::zeros(&[c_out]));
        LbrLayer {
            linear,
            norm_scale,
            norm_shift,
            norm_mode,
        }
    }

    pub fn c_out(&self) -> usize {
        self.linear.c_out
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        if s.g.value(x).rows() == 0 {
            return Err(Error::EmptyInput("lbr"));
        }
        let mut y = self.linear.forward(s, x)?;
        if self.norm_mode == NormMode::PerPointStandardize {
            y = s.g.standardize_cols(y, NORM_EPS)?;
        }
        let scale = s.param(self.norm_scale)?;
        let shift = s.param(self.norm_shift)?;
        let y = s.g.mul_row(y, scale)?;
        let y = s.g.add_row(y, shift)?;
        s.g.relu(y)
    }
}

/// `Linear → ReLU → Linear`.
#[derive(Clone, Debug)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, hidden: usize, c_out: usize, rng: &mut Rng) -> Self {
        Mlp2 {
            first: Linear::new(store, &format!("{name}.0"), c_in, hidden, rng),
            second: Linear::new(store, &format!("{name}.1"), hidden, c_out, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.first.forward(s, x)?;
        let h = s.g.relu(h)?;
        self.second.forward(s, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_with(store: &mut ParamStore, w: Tensor, b: Tensor, mode: NormMode) -> LbrLayer {
        let mut rng = Rng::new(0);
        let (ci, co) = (w.shape()[0], w.shape()[1]);
        let l = LbrLayer::new(store, "l", ci, co, mode, &mut rng);
        *store.get_mut(l.linear.weight) = w;
        *store.get_mut(l.linear.bias) = b;
        l
    }

    #[test]
    fn linear_identity_and_hand_sum() {
        let mut store = ParamStore::new();
        let l = layer_with(
            &mut store,
            Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            Tensor::zeros(&[1]),
            NormMode::Identity,
        );
        let mut s = Session::new(&store);
        let x = s.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let y = l.linear.forward(&mut s, x).unwrap();
        assert_eq!(s.g.value(y).data(), &[3.0]);

        let mut store = ParamStore::new();
        let l = layer_with(
            &mut store,
            Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            Tensor::zeros(&[2]),
            NormMode::Identity,
        );
        let mut s = Session::new(&store);
        let xt = Tensor::from_rows(&[vec![0.5, -3.0], vec![2.0, 7.0]]).unwrap();
        let x = s.constant(xt.clone()).unwrap();
        let y = l.linear.forward(&mut s, x).unwrap();
        assert_eq!(s.g.value(y), &xt);
    }

    #[test]
    fn lbr_identity_clamps_negative() {
        let mut store = ParamStore::new();
        let l = layer_with(
            &mut store,
            Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            Tensor::zeros(&[2]),
            NormMode::Identity,
        );
        let mut s = Session::new(&store);
        let x = s.constant(Tensor::from_rows(&[vec![2.0]]).unwrap()).unwrap();
        let y = l.forward(&mut s, x).unwrap();
        assert_eq!(s.g.value(y).data(), &[2.0, 0.0]);
    }

    #[test]
    fn lbr_single_row_standardize_is_shift_only() {
        let mut store = ParamStore::new();
        let l = layer_with(
            &mut store,
            Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap(),
            Tensor::from_rows(&[vec![0.5, 0.1]]).unwrap().reshaped(&[2]).unwrap(),
            NormMode::PerPointStandardize,
        );
        *store.get_mut(l.norm_shift) = Tensor::new(vec![2], vec![0.7, -0.3]).unwrap();
        let mut s = Session::new(&store);
        let x = s.constant(Tensor::from_rows(&[vec![4.0]]).unwrap()).unwrap();
        let y = l.forward(&mut s, x).unwrap();
        assert_eq!(s.g.value(y).data(), &[0.7, 0.0]);
    }

    #[test]
    fn lbr_empty_and_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let l = LbrLayer::new(&mut store, "l", 3, 2, NormMode::Identity, &mut rng);
        let mut s = Session::new(&store);
        let x = s.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        assert!(matches!(l.forward(&mut s, x), Err(Error::Dimension { .. })));
    }
}
