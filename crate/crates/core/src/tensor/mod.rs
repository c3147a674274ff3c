//! Dense float64 tensors with a reverse-mode tape.
//!
//! [`Tensor`] is a plain value type. Differentiation happens on a [`Graph`],
//! which records every op applied to its [`Var`] handles and replays them in
//! reverse from a scalar loss. Learned parameters live in a [`ParamStore`] and
//! are bound into a graph through a [`Session`].

mod checkpoint;
mod gradcheck;
mod graph;
mod nn;
mod optim;
mod params;
mod rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradcheck, GradcheckReport, GroupError, FD_STEP};
pub use graph::{Graph, Var};
pub(crate) use graph::{sigmoid, smooth_l1};
pub use nn::{LbrLayer, Linear, Mlp2, NormMode};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Session};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Dense row-major float64 array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero extent in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Builds an `[rows.len() × width]` matrix. All rows must share one width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyInput("from_rows"));
        }
        let c = rows[0].len();
        let mut data = Vec::with_capacity(n * c);
        for r in rows {
            if r.len() != c {
                return Err(Error::dim("from_rows", "ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![n, c], data)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row count of a matrix view: leading extent, 1 for scalars.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Width of a matrix view: product of trailing extents.
    pub fn cols(&self) -> usize {
        self.numel() / self.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &d) in idx.iter().zip(&self.shape) {
            off = off * d + i;
        }
        self.data[off]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
