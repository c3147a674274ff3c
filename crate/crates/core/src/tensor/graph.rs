use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Powf(Var, f64),
    SmoothL1(Var),
    Clamp(Var, f64, f64),
    Softmax { x: Var, axis: usize },
    SumAll(Var),
    SumAxis { x: Var, axis: usize },
    MaxAxis { x: Var, axis: usize, argmax: Vec<usize> },
    Gather { x: Var, rows: Vec<usize> },
    Mix { x: Var, rows: Vec<Vec<(usize, f64)>> },
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Standardize { x: Var, inv_std: Vec<f64> },
    OuterRows(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep. Gradients are
/// retained on leaves created with `requires_grad` and accumulate across
/// `backward` calls until [`Graph::zero_grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Softmax/reduction view of a shape around `axis`: (outer, len, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn last_dim(t: &Tensor) -> usize {
    t.shape().last().copied().unwrap_or(1)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = &mut n.grad {
                g.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// Leaf that is differentiated.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    /// Leaf that is treated as data.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::NonFinite("leaf"));
        }
        let grad = requires_grad.then(|| Tensor::zeros(t.shape()));
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
            grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn map(&mut self, name: &'static str, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(name, t, op, &[x])
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(name, t, op, &[a, b])
    }

    /// `[n×k] · [k×m] -> [n×m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::dim("matmul", format!("{:?} · {:?}", av.shape(), bv.shape())));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let out = matmul_raw(av.data(), bv.data(), n, k, m);
        let t = Tensor::new(vec![n, m], out)?;
        self.push("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::dim("transpose", format!("{:?}", xv.shape())));
        }
        let (n, m) = (xv.shape()[0], xv.shape()[1]);
        let t = Tensor::new(vec![m, n], transpose_raw(xv.data(), n, m))?;
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a `[C]` vector to every trailing-axis fiber of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("add_row", x, row, false)
    }

    /// Multiplies every trailing-axis fiber of `x` by a `[C]` vector.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_op("mul_row", x, row, true)
    }

    fn row_op(&mut self, name: &'static str, x: Var, row: Var, mul: bool) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        let c = last_dim(xv);
        if rv.numel() != c {
            return Err(Error::dim(name, format!("{:?} with row {:?}", xv.shape(), rv.shape())));
        }
        let r = rv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mul { v * r[i % c] } else { v + r[i % c] })
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        let op = if mul { Op::MulRow(x, row) } else { Op::AddRow(x, row) };
        self.push(name, t, op, &[x, row])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("scale", x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.map("add_scalar", x, Op::AddScalar(x), |v| v + s)
    }

    /// ReLU with derivative 0 at 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map("log", x, Op::Log(x), f64::ln)
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.map("powf", x, Op::Powf(x, p), |v| v.powf(p))
    }

    /// Elementwise Smooth-L1: `0.5 x²` for `|x| < 1`, `|x| - 0.5` otherwise.
    pub fn smooth_l1(&mut self, x: Var) -> Result<Var> {
        self.map("smooth_l1", x, Op::SmoothL1(x), smooth_l1)
    }

    /// Clamp with unit gradient strictly inside `[lo, hi]` and zero outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map("clamp", x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(Error::dim("softmax", format!("axis {axis} of {:?}", xv.shape())));
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mut m = f64::NEG_INFINITY;
                for l in 0..len {
                    m = m.max(src[at(l)]);
                }
                let mut s = 0.0;
                for l in 0..len {
                    let e = (src[at(l)] - m).exp();
                    out[at(l)] = e;
                    s += e;
                }
                for l in 0..len {
                    out[at(l)] /= s;
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("softmax", t, Op::Softmax { x, axis }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} of {:?}", xv.shape())));
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, out)?;
        self.push("sum_axis", t, Op::SumAxis { x, axis }, &[x])
    }

    /// Max over `axis`; the subgradient goes to the first maximal entry.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.shape().len() {
            return Err(Error::dim("max_axis", format!("axis {axis} of {:?}", xv.shape())));
        }
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        if len == 0 {
            return Err(Error::EmptyInput("max_axis"));
        }
        let src = xv.data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut bv = src[o * len * inner + i];
                for l in 1..len {
                    let v = src[(o * len + l) * inner + i];
                    if v > bv {
                        bv = v;
                        best = l;
                    }
                }
                out[o * inner + i] = bv;
                argmax[o * inner + i] = best;
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        let t = Tensor::new(shape, out)?;
        self.push("max_axis", t, Op::MaxAxis { x, axis, argmax }, &[x])
    }

    /// Selects leading-axis rows (with repetition).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if rows.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::dim("gather_rows", format!("row {r} of {n}")));
            }
            out.extend_from_slice(xv.row(r));
        }
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        shape[0] = rows.len();
        let t = Tensor::new(shape, out)?;
        self.push("gather_rows", t, Op::Gather { x, rows: rows.to_vec() }, &[x])
    }

    /// Output row `i` is `Σ w · x[j]` over the `(j, w)` pairs of `rows[i]`.
    ///
    /// Covers inverse-distance interpolation and bilinear/trilinear sampling,
    /// whose weights depend only on coordinates.
    pub fn mix_rows(&mut self, x: Var, rows: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if rows.is_empty() {
            return Err(Error::EmptyInput("mix_rows"));
        }
        let mut out = vec![0.0; rows.len() * c];
        for (i, row) in rows.iter().enumerate() {
            let dst = &mut out[i * c..(i + 1) * c];
            for &(j, w) in row {
                if j >= n {
                    return Err(Error::dim("mix_rows", format!("row {j} of {n}")));
                }
                for (d, s) in dst.iter_mut().zip(xv.row(j)) {
                    *d += w * s;
                }
            }
        }
        let t = Tensor::new(vec![rows.len(), c], out)?;
        self.push("mix_rows", t, Op::Mix { x, rows }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Concatenates matrices along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::EmptyInput("concat_cols"));
        }
        let n = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).cols()).collect();
        for &v in xs {
            if self.value(v).rows() != n {
                return Err(Error::dim("concat_cols", "row counts differ"));
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &v in xs {
                out.extend_from_slice(self.value(v).row(r));
            }
        }
        let t = Tensor::new(vec![n, total], out)?;
        self.push("concat_cols", t, Op::ConcatCols(xs.to_vec()), xs)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if start >= end || end > c {
            return Err(Error::dim("slice_cols", format!("{start}..{end} of {c}")));
        }
        let mut out = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            out.extend_from_slice(&xv.row(r)[start..end]);
        }
        let t = Tensor::new(vec![n, end - start], out)?;
        self.push("slice_cols", t, Op::SliceCols { x, start }, &[x])
    }

    /// Standardizes each column over the rows: `(x - mean) / sqrt(var + eps)`
    /// with the biased variance.
    pub fn standardize_cols(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if n == 0 {
            return Err(Error::EmptyInput("standardize_cols"));
        }
        let src = xv.data();
        let mut mean = vec![0.0; c];
        for r in 0..n {
            for j in 0..c {
                mean[j] += src[r * c + j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for r in 0..n {
            for j in 0..c {
                let d = src[r * c + j] - mean[j];
                var[j] += d * d;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / n as f64 + eps).sqrt()).collect();
        let out = src
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i % c]) * inv_std[i % c])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("standardize_cols", t, Op::Standardize { x, inv_std }, &[x])
    }

    /// Row-wise outer product: `[R×D] ⊗ [R×C] -> [R×D×C]`.
    pub fn outer_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.rows() != bv.rows() {
            return Err(Error::dim("outer_rows", format!("{:?} ⊗ {:?}", av.shape(), bv.shape())));
        }
        let (r, d, c) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(r * d * c);
        for i in 0..r {
            let brow = bv.row(i);
            for &w in av.row(i) {
                out.extend(brow.iter().map(|&f| w * f));
            }
        }
        let t = Tensor::new(vec![r, d, c], out)?;
        self.push("outer_rows", t, Op::OuterRows(a, b), &[a, b])
    }

    /// Propagates from a scalar `loss` and accumulates into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if let Some(acc) = &mut self.nodes[i].grad {
                for (a, b) in acc.data_mut().iter_mut().zip(&g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let mut send = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !wants(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                send(*a, &|s| {
                    // dA = G · Bᵀ
                    let bt = transpose_raw(bv.data(), k, m);
                    add_into(s, &matmul_raw(g, &bt, n, m, k));
                });
                send(*b, &|s| {
                    // dB = Aᵀ · G
                    let at = transpose_raw(av.data(), n, k);
                    add_into(s, &matmul_raw(&at, g, k, n, m));
                });
            }
            Op::Transpose(x) => {
                let (n, m) = (val(*x).shape()[0], val(*x).shape()[1]);
                send(*x, &|s| add_into(s, &transpose_raw(g, m, n)));
            }
            Op::Add(a, b) => {
                send(*a, &|s| add_into(s, g));
                send(*b, &|s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                send(*a, &|s| add_into(s, g));
                send(*b, &|s| s.iter_mut().zip(g).for_each(|(d, &v)| *d -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                send(*a, &|s| (0..s.len()).for_each(|j| s[j] += g[j] * bv[j]));
                send(*b, &|s| (0..s.len()).for_each(|j| s[j] += g[j] * av[j]));
            }
            Op::AddRow(x, r) => {
                let c = val(*r).numel();
                send(*x, &|s| add_into(s, g));
                send(*r, &|s| g.iter().enumerate().for_each(|(j, &v)| s[j % c] += v));
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (val(*x).data(), val(*r).data());
                let c = rv.len();
                send(*x, &|s| (0..s.len()).for_each(|j| s[j] += g[j] * rv[j % c]));
                send(*r, &|s| g.iter().enumerate().for_each(|(j, &v)| s[j % c] += v * xv[j]));
            }
            Op::Scale(x, k) => send(*x, &|s| s.iter_mut().zip(g).for_each(|(d, &v)| *d += k * v)),
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, &|s| add_into(s, g)),
            Op::Relu(x) => {
                let xv = val(*x).data();
                send(*x, &|s| (0..s.len()).for_each(|j| if xv[j] > 0.0 { s[j] += g[j] }));
            }
            Op::Sigmoid(x) => send(*x, &|s| (0..s.len()).for_each(|j| s[j] += g[j] * out[j] * (1.0 - out[j]))),
            Op::Exp(x) => send(*x, &|s| (0..s.len()).for_each(|j| s[j] += g[j] * out[j])),
            Op::Log(x) => {
                let xv = val(*x).data();
                send(*x, &|s| (0..s.len()).for_each(|j| s[j] += g[j] / xv[j]));
            }
            Op::Powf(x, p) => {
                let xv = val(*x).data();
                send(*x, &|s| (0..s.len()).for_each(|j| s[j] += g[j] * p * xv[j].powf(p - 1.0)));
            }
            Op::SmoothL1(x) => {
                let xv = val(*x).data();
                send(*x, &|s| {
                    (0..s.len()).for_each(|j| {
                        let v = xv[j];
                        s[j] += g[j] * if v.abs() < 1.0 { v } else { v.signum() };
                    })
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = val(*x).data();
                send(*x, &|s| (0..s.len()).for_each(|j| if xv[j] > *lo && xv[j] < *hi { s[j] += g[j] }));
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                send(*x, &|s| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + ii;
                            let dot: f64 = (0..len).map(|l| out[at(l)] * g[at(l)]).sum();
                            for l in 0..len {
                                s[at(l)] += out[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => send(*x, &|s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(val(*x).shape(), *axis);
                send(*x, &|s| {
                    for o in 0..outer {
                        for l in 0..len {
                            for ii in 0..inner {
                                s[(o * len + l) * inner + ii] += g[o * inner + ii];
                            }
                        }
                    }
                });
            }
            Op::MaxAxis { x, axis, argmax } => {
                let (outer, len, inner) = axis_split(val(*x).shape(), *axis);
                send(*x, &|s| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let k = o * inner + ii;
                            s[(o * len + argmax[k]) * inner + ii] += g[k];
                        }
                    }
                });
            }
            Op::Gather { x, rows } => {
                let c = val(*x).cols();
                send(*x, &|s| {
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut s[r * c..(r + 1) * c], &g[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::Mix { x, rows } => {
                let c = val(*x).cols();
                send(*x, &|s| {
                    for (i, row) in rows.iter().enumerate() {
                        let gi = &g[i * c..(i + 1) * c];
                        for &(j, w) in row {
                            s[j * c..(j + 1) * c].iter_mut().zip(gi).for_each(|(d, &v)| *d += w * v);
                        }
                    }
                });
            }
            Op::ConcatCols(xs) => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut off = 0;
                for &v in xs {
                    let w = val(v).cols();
                    send(v, &|s| {
                        for r in 0..n {
                            add_into(&mut s[r * w..(r + 1) * w], &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = val(*x).cols();
                let (n, w) = (node.value.rows(), node.value.cols());
                send(*x, &|s| {
                    for r in 0..n {
                        add_into(&mut s[r * c + start..r * c + start + w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::Standardize { x, inv_std } => {
                let (n, c) = (node.value.rows(), node.value.cols());
                send(*x, &|s| {
                    // dx = inv/N · (N·dy − Σdy − y·Σ(dy·y)), per column
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gy = vec![0.0; c];
                    for r in 0..n {
                        for j in 0..c {
                            sum_g[j] += g[r * c + j];
                            sum_gy[j] += g[r * c + j] * out[r * c + j];
                        }
                    }
                    let nf = n as f64;
                    for r in 0..n {
                        for j in 0..c {
                            let k = r * c + j;
                            s[k] += inv_std[j] / nf * (nf * g[k] - sum_g[j] - out[k] * sum_gy[j]);
                        }
                    }
                });
            }
            Op::OuterRows(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (r, d, c) = (av.rows(), av.cols(), bv.cols());
                send(*a, &|s| {
                    for i in 0..r {
                        for k in 0..d {
                            let base = (i * d + k) * c;
                            s[i * d + k] += (0..c).map(|j| g[base + j] * bv.data()[i * c + j]).sum::<f64>();
                        }
                    }
                });
                send(*b, &|s| {
                    for i in 0..r {
                        for k in 0..d {
                            let w = av.data()[i * d + k];
                            let base = (i * d + k) * c;
                            for j in 0..c {
                                s[i * c + j] += g[base + j] * w;
                            }
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn smooth_l1(v: f64) -> f64 {
    if v.abs() < 1.0 {
        0.5 * v * v
    } else {
        v.abs() - 0.5
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn transpose_raw(src: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = src[i * m + j];
        }
    }
    out
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut g = Graph::new();
        let x = g.param(t2(&[&[1.0, -2.0], &[3.0, 4.0]])).unwrap();
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_sum_backward_is_two_x() {
        let mut g = Graph::new();
        let x = g.param(t2(&[&[1.5, -2.0, 0.25]])).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, -4.0, 0.5]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0)).unwrap();
        let y = g.scale(x, 3.0).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
        g.zero_grad();
        assert_eq!(g.grad(x).unwrap().item(), 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(t2(&[&[1.0, 2.0]])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut g = Graph::new();
        let x = g.constant(t2(&[&[0.0, 0.0], &[0.0, 2f64.ln()]])).unwrap();
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y).data().to_vec();
        assert_eq!(&v[..2], &[0.5, 0.5]);
        assert!((v[2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[3] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariant() {
        let mut g = Graph::new();
        let a = g.constant(t2(&[&[0.3, -1.2, 2.5]])).unwrap();
        let b = g.add_scalar(a, 17.0).unwrap();
        let sa = g.softmax(a, 1).unwrap();
        let sb = g.softmax(b, 1).unwrap();
        for (x, y) in g.value(sa).data().iter().zip(g.value(sb).data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut g = Graph::new();
        let a = g.constant(t2(&[&[0.3, -1.2]])).unwrap();
        assert!(g.softmax(a, 2).is_err());
    }

    #[test]
    fn max_axis_routes_to_first_argmax() {
        let mut g = Graph::new();
        let x = g
            .param(Tensor::new(vec![1, 3, 2], vec![1.0, 5.0, 3.0, 2.0, 3.0, 5.0]).unwrap())
            .unwrap();
        let m = g.max_axis(x, 1).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 5.0]);
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(g.log(x), Err(Error::NonFinite("log"))));
        assert!(g.constant(Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(t2(&[&[1.0, 2.0]])).unwrap();
        let b = g.constant(t2(&[&[1.0, 2.0]])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn standardize_single_row_is_zero() {
        let mut g = Graph::new();
        let a = g.constant(t2(&[&[4.0, -7.0]])).unwrap();
        let y = g.standardize_cols(a, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }
}
