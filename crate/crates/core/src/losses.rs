//! Depth, proposal and total training objectives, as scalar reference
//! functions and as differentiable graph builders.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{assign_proposals, Box3D, ClsLabel, ObjectClass};
use crate::fusion::{encode_box, ProposalSet, RpnOutput, REG_CHANNELS};
use crate::geometry::Point3;
use crate::tensor::{Session, Tensor, Var};

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
/// Probabilities are clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub depth: f64,
    pub rpn: f64,
    /// Refinement-stage weight; must stay 0.
    pub rcnn: f64,
    /// Residual weight inside the depth loss.
    pub depth_residual: f64,
    /// Regression weight inside the proposal loss.
    pub box_regression: f64,
    /// Vote-offset weight inside the proposal loss.
    pub vote: f64,
    /// Extra multiplier on the depth loss of foreground pixels.
    pub foreground_depth: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            depth: 1.0,
            rpn: 1.0,
            rcnn: 0.0,
            depth_residual: 10.0,
            box_regression: 1.0,
            vote: 1.0,
            foreground_depth: 1.0,
            focal_alpha: FOCAL_ALPHA,
            focal_gamma: FOCAL_GAMMA,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.depth,
            self.rpn,
            self.rcnn,
            self.depth_residual,
            self.box_regression,
            self.vote,
            self.foreground_depth,
            self.focal_alpha,
            self.focal_gamma,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.rcnn != 0.0 {
            return Err(Error::Config("the refinement loss is not part of this model; rcnn weight must be 0".into()));
        }
        if self.focal_alpha > 1.0 {
            return Err(Error::Config("focal alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Focal loss of one probability. Returns the loss and whether `p` had to be clamped.
pub fn focal_loss(p: f64, is_foreground: bool, alpha: f64, gamma: f64) -> (f64, bool) {
    let clamped = !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p);
    let p = if p.is_nan() { 0.5 } else { p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP) };
    let (c_t, a_t) = if is_foreground { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    (-a_t * (1.0 - c_t).powf(gamma) * c_t.ln(), clamped)
}

/// `0.5·x²` for `|x| < 1`, `|x| − 0.5` otherwise.
pub fn smooth_l1(x: f64) -> f64 {
    crate::tensor::smooth_l1(x)
}

/// `−α_t (1 − c_t)^γ log c_t` elementwise, `c_t` being the probability of the true outcome.
fn focal_from_ct(s: &mut Session, c_t: Var, alpha_t: Var, gamma: f64) -> Result<Var> {
    let c_t = s.g.clamp(c_t, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let miss = s.g.scale(c_t, -1.0)?;
    let miss = s.g.add_scalar(miss, 1.0)?;
    let modulator = s.g.powf(miss, gamma)?;
    let log = s.g.log(c_t)?;
    let l = s.g.mul(modulator, log)?;
    let l = s.g.mul(l, alpha_t)?;
    s.g.scale(l, -1.0)
}

/// Ground truth for the depth heads at selected feature cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthTargets {
    /// Feature-grid cells `(x, y)`.
    pub cells: Vec<[usize; 2]>,
    pub gt_bin: Vec<usize>,
    pub gt_res: Vec<f64>,
}

impl DepthTargets {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DepthLoss {
    pub bin: Var,
    pub residual: Var,
    pub total: Var,
}

/// Depth loss over the target cells. `bin_logits` and `residuals` are
/// `[H_F·W_F × D]` with rows in row-major cell order.
pub fn depth_loss(
    s: &mut Session,
    bin_logits: Var,
    residuals: Var,
    grid_width: usize,
    targets: &DepthTargets,
    w: &LossWeights,
) -> Result<DepthLoss> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::Contract("depth loss needs at least one target".into()));
    }
    if targets.gt_bin.len() != n || targets.gt_res.len() != n {
        return Err(Error::dim("depth_loss", format!("{n} cells, {} bins, {} residuals", targets.gt_bin.len(), targets.gt_res.len())));
    }
    let lv = s.g.value(bin_logits);
    let (cells, d) = (lv.rows(), lv.cols());
    let rows: Vec<usize> = targets.cells.iter().map(|&[x, y]| y * grid_width + x).collect();
    if rows.iter().any(|&r| r >= cells) || targets.gt_bin.iter().any(|&b| b >= d) {
        return Err(Error::Contract("depth target outside the prediction grid".into()));
    }
    let mut one_hot = Tensor::zeros(&[n, d]);
    for (i, &b) in targets.gt_bin.iter().enumerate() {
        one_hot.data_mut()[i * d + b] = 1.0;
    }
    let one_hot = s.constant(one_hot)?;

    let logits = s.g.gather_rows(bin_logits, &rows)?;
    let probs = s.g.softmax(logits, 1)?;
    let picked = s.g.mul(probs, one_hot)?;
    let c_t = s.g.sum_axis(picked, 1)?;
    let alpha = s.constant(Tensor::full(&[n], w.focal_alpha))?;
    let focal = focal_from_ct(s, c_t, alpha, w.focal_gamma)?;
    let bin = s.g.mean(focal)?;

    let res = s.g.gather_rows(residuals, &rows)?;
    let res = s.g.mul(res, one_hot)?;
    let res = s.g.sum_axis(res, 1)?;
    let gt = s.constant(Tensor::new(vec![n], targets.gt_res.clone())?)?;
    let err = s.g.sub(res, gt)?;
    let err = s.g.smooth_l1(err)?;
    let residual = s.g.mean(err)?;

    let weighted = s.g.scale(residual, w.depth_residual)?;
    let total = s.g.add(bin, weighted)?;
    let total = s.g.scale(total, w.foreground_depth)?;
    Ok(DepthLoss { bin, residual, total })
}

/// Per-point supervision for the proposal head.
#[derive(Clone, Debug, PartialEq)]
pub struct RpnTargets {
    /// One-hot class rows `[N × K]`; all zeros for background.
    pub cls: Tensor,
    /// Whether each point takes part in the classification loss.
    pub cls_active: Vec<bool>,
    /// Box residual targets `[N × 8]`, meaningful on foreground rows.
    pub reg: Tensor,
    /// Vote offset targets `[N × 3]` (object center minus point).
    pub vote: Tensor,
    pub foreground: Vec<bool>,
}

impl RpnTargets {
    /// Foreground points are those inside a ground-truth box (first match
    /// wins). Residuals are encoded relative to each point's current vote.
    /// Background points whose candidate box already overlaps a ground truth
    /// beyond the negative band are left out of the classification loss.
    pub fn build(
        coords: &[Point3],
        votes: &[Point3],
        gts: &[(Box3D, ObjectClass)],
        candidates: Option<&ProposalSet>,
    ) -> Result<Self> {
        let n = coords.len();
        if votes.len() != n {
            return Err(Error::dim("rpn_targets", format!("{n} points, {} votes", votes.len())));
        }
        let k = ObjectClass::ALL.len();
        let mut t = RpnTargets {
            cls: Tensor::zeros(&[n, k]),
            cls_active: vec![true; n],
            reg: Tensor::zeros(&[n, REG_CHANNELS]),
            vote: Tensor::zeros(&[n, 3]),
            foreground: vec![false; n],
        };
        for (i, p) in coords.iter().enumerate() {
            let Some((b, class)) = gts.iter().find(|(b, _)| b.contains(p, 0.0)) else {
                continue;
            };
            t.foreground[i] = true;
            t.cls.data_mut()[i * k + class.index()] = 1.0;
            t.reg.data_mut()[i * REG_CHANNELS..(i + 1) * REG_CHANNELS].copy_from_slice(&encode_box(b, &votes[i], *class));
            for a in 0..3 {
                t.vote.data_mut()[i * 3 + a] = b.center[a] - p[a];
            }
        }
        if let Some(props) = candidates {
            let boxes: Vec<Box3D> = gts.iter().map(|g| g.0).collect();
            for (a, &i) in assign_proposals(&props.boxes, &boxes)?.iter().zip(&props.point_index) {
                if !t.foreground[i] && a.cls != ClsLabel::Negative {
                    t.cls_active[i] = false;
                }
            }
        }
        Ok(t)
    }

    pub fn num_foreground(&self) -> usize {
        self.foreground.iter().filter(|&&f| f).count()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RpnLoss {
    pub cls: Var,
    pub reg: Var,
    pub vote: Var,
    pub total: Var,
    /// Set when there was no foreground point, so regression and votes contribute 0.
    pub no_foreground: bool,
}

fn masked_rows(n: usize, width: usize, keep: &[bool]) -> Tensor {
    let mut m = Tensor::zeros(&[n, width]);
    for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        m.data_mut()[i * width..(i + 1) * width].fill(1.0);
    }
    m
}

/// Focal classification over active points plus smooth-L1 regression and
/// vote terms averaged over foreground points.
pub fn rpn_loss(s: &mut Session, out: &RpnOutput, t: &RpnTargets, w: &LossWeights) -> Result<RpnLoss> {
    let lv = s.g.value(out.cls_logits);
    let (n, k) = (lv.rows(), lv.cols());
    if t.cls.shape() != [n, k] || t.reg.rows() != n || t.vote.rows() != n {
        return Err(Error::dim("rpn_loss", format!("head {:?}, targets {:?}", lv.shape(), t.cls.shape())));
    }
    let active = t.cls_active.iter().filter(|&&a| a).count().max(1) as f64;
    let labels = t.cls.data();
    let sign = Tensor::new(vec![n, k], labels.iter().map(|&y| 2.0 * y - 1.0).collect())?;
    let offset = Tensor::new(vec![n, k], labels.iter().map(|&y| 1.0 - y).collect())?;
    let mut alpha = Tensor::new(
        vec![n, k],
        labels.iter().map(|&y| if y > 0.5 { w.focal_alpha } else { 1.0 - w.focal_alpha }).collect(),
    )?;
    for (i, &a) in t.cls_active.iter().enumerate() {
        if !a {
            alpha.data_mut()[i * k..(i + 1) * k].fill(0.0);
        }
    }
    let p = s.g.sigmoid(out.cls_logits)?;
    let sign = s.constant(sign)?;
    let offset = s.constant(offset)?;
    let alpha = s.constant(alpha)?;
    let c_t = s.g.mul(p, sign)?;
    let c_t = s.g.add(c_t, offset)?;
    let focal = focal_from_ct(s, c_t, alpha, w.focal_gamma)?;
    let cls = s.g.sum(focal)?;
    let cls = s.g.scale(cls, 1.0 / active)?;

    let fg = t.num_foreground();
    let norm = 1.0 / fg.max(1) as f64;
    let term = |s: &mut Session, pred: Var, target: &Tensor| -> Result<Var> {
        let width = target.cols();
        let target = s.constant(target.clone())?;
        let mask = s.constant(masked_rows(n, width, &t.foreground))?;
        let e = s.g.sub(pred, target)?;
        let e = s.g.smooth_l1(e)?;
        let e = s.g.mul(e, mask)?;
        let e = s.g.sum(e)?;
        s.g.scale(e, norm)
    };
    let reg = term(s, out.reg, &t.reg)?;
    let vote = term(s, out.vote_offsets, &t.vote)?;

    let r = s.g.scale(reg, w.box_regression)?;
    let v = s.g.scale(vote, w.vote)?;
    let total = s.g.add(cls, r)?;
    let total = s.g.add(total, v)?;
    Ok(RpnLoss {
        cls,
        reg,
        vote,
        total,
        no_foreground: fg == 0,
    })
}

/// `λ_depth·L_depth + λ_rpn·L_rpn`.
pub fn total_loss(s: &mut Session, depth: Var, rpn: Var, w: &LossWeights) -> Result<Var> {
    let d = s.g.scale(depth, w.depth)?;
    let r = s.g.scale(rpn, w.rpn)?;
    s.g.add(d, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    #[test]
    fn focal_reference_values() {
        let (l, clamped) = focal_loss(0.9, true, 0.25, 2.0);
        assert!((l - 0.25 * 0.01 * -(0.9f64.ln())).abs() < 1e-15);
        assert!(!clamped);
        assert!((focal_loss(0.3, false, 0.0, 0.0).0 + 0.7f64.ln()).abs() < 1e-15);
        assert!(focal_loss(1.0, true, 0.25, 2.0).1);
        assert!(focal_loss(1.0 - 1e-9, true, 0.25, 2.0).0 < 1e-20);
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(1.0), 0.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn weighted_sum() {
        let store = ParamStore::new();
        let mut s = Session::new(&store);
        let d = s.constant(Tensor::scalar(0.5)).unwrap();
        let r = s.constant(Tensor::scalar(0.25)).unwrap();
        let t = total_loss(&mut s, d, r, &LossWeights::default()).unwrap();
        assert_eq!(s.g.value(t).item(), 0.75);
    }

    #[test]
    fn weights_reject_refinement_term() {
        let w = LossWeights {
            rcnn: 0.5,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        LossWeights::default().validate().unwrap();
    }
}
