use crate::error::{Error, Result};
use crate::eval::{Box3D, ObjectClass};
use crate::geometry::Point3;
use crate::tensor::{Mlp2, ParamStore, Rng, Session, Tensor, Var};

/// Regression channels: center (3), log size (3), sin and cos of yaw.
pub const REG_CHANNELS: usize = 8;
/// Bound on decoded log-size residuals.
const MAX_LOG_SIZE: f64 = 10.0;

fn anchor_diagonal(size: [f64; 3]) -> f64 {
    size[0].hypot(size[1])
}

/// Regression target of `gt` seen from a point voting at `vote`, relative to
/// the anchor of `class`.
pub fn encode_box(gt: &Box3D, vote: &Point3, class: ObjectClass) -> [f64; REG_CHANNELS] {
    let anchor = class.mean_size();
    let diag = anchor_diagonal(anchor);
    [
        (gt.center[0] - vote[0]) / diag,
        (gt.center[1] - vote[1]) / diag,
        (gt.center[2] - vote[2]) / diag,
        (gt.size[0] / anchor[0]).ln(),
        (gt.size[1] / anchor[1]).ln(),
        (gt.size[2] / anchor[2]).ln(),
        gt.yaw.sin(),
        gt.yaw.cos(),
    ]
}

/// Inverse of [`encode_box`].
pub fn decode_box(res: &[f64], vote: &Point3, class: ObjectClass) -> Result<Box3D> {
    if res.len() != REG_CHANNELS {
        return Err(Error::dim("decode_box", format!("{} residuals", res.len())));
    }
    let anchor = class.mean_size();
    let diag = anchor_diagonal(anchor);
    let center = std::array::from_fn(|a| vote[a] + res[a] * diag);
    let size = std::array::from_fn(|a| anchor[a] * res[3 + a].clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE).exp());
    Box3D::new(center, size, res[6].atan2(res[7]))
}

/// Vote, classification and box-regression heads over per-point features.
#[derive(Clone, Debug)]
pub struct RpnHead {
    pub c_in: usize,
    pub vote: Mlp2,
    pub cls: Mlp2,
    pub reg: Mlp2,
}

#[derive(Clone, Copy, Debug)]
pub struct RpnOutput {
    /// Predicted offset from each point to its object center, `[N × 3]`.
    pub vote_offsets: Var,
    /// Per-class foreground logits, `[N × 3]`.
    pub cls_logits: Var,
    /// `[N × 8]` box residuals.
    pub reg: Var,
}

/// Candidate boxes, one per point whose best class score clears the threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalSet {
    pub boxes: Vec<Box3D>,
    pub scores: Vec<f64>,
    pub classes: Vec<ObjectClass>,
    /// Point each candidate came from.
    pub point_index: Vec<usize>,
    /// Vote of every input point, `[N]`.
    pub votes: Vec<Point3>,
}

impl RpnHead {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        let classes = ObjectClass::ALL.len();
        RpnHead {
            c_in,
            vote: Mlp2::new(store, &format!("{name}.vote"), c_in, hidden, 3, rng),
            cls: Mlp2::new(store, &format!("{name}.cls"), c_in + 3, hidden, classes, rng),
            reg: Mlp2::new(store, &format!("{name}.reg"), c_in + 3, hidden, REG_CHANNELS, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, feats: Var) -> Result<RpnOutput> {
        let vote_offsets = self.vote.forward(s, feats)?;
        let x = s.g.concat_cols(&[feats, vote_offsets])?;
        Ok(RpnOutput {
            vote_offsets,
            cls_logits: self.cls.forward(s, x)?,
            reg: self.reg.forward(s, x)?,
        })
    }

    /// Decodes the head outputs at `coords` into candidate boxes.
    pub fn proposals(&self, s: &Session, out: &RpnOutput, coords: &[Point3], threshold: f64) -> Result<ProposalSet> {
        proposals_from(
            s.g.value(out.vote_offsets),
            s.g.value(out.cls_logits),
            s.g.value(out.reg),
            coords,
            threshold,
        )
    }
}

fn proposals_from(offsets: &Tensor, logits: &Tensor, reg: &Tensor, coords: &[Point3], threshold: f64) -> Result<ProposalSet> {
    let n = coords.len();
    if offsets.rows() != n || logits.rows() != n || reg.rows() != n {
        return Err(Error::dim("proposals", format!("{n} points, head rows {}", logits.rows())));
    }
    let mut out = ProposalSet {
        boxes: Vec::new(),
        scores: Vec::new(),
        classes: Vec::new(),
        point_index: Vec::new(),
        votes: Vec::with_capacity(n),
    };
    for (i, p) in coords.iter().enumerate() {
        let o = offsets.row(i);
        let vote = [p[0] + o[0], p[1] + o[1], p[2] + o[2]];
        out.votes.push(vote);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, &z) in logits.row(i).iter().enumerate() {
            if z > best.1 {
                best = (k, z);
            }
        }
        let score = crate::tensor::sigmoid(best.1);
        if score < threshold {
            continue;
        }
        let class = ObjectClass::from_index(best.0).ok_or_else(|| Error::dim("proposals", "class count"))?;
        out.boxes.push(decode_box(reg.row(i), &vote, class)?);
        out.scores.push(score);
        out.classes.push(class);
        out.point_index.push(i);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_residual_decode() {
        let mut r = [0.0; 8];
        r[7] = 1.0;
        let b = decode_box(&r, &[1.0, 2.0, 3.0], ObjectClass::Car).unwrap();
        assert_eq!(b.center, [1.0, 2.0, 3.0]);
        assert_eq!(b.size, [3.9, 1.6, 1.56]);
        assert_eq!(b.yaw, 0.0);
        r[6] = 1.0;
        r[7] = 0.0;
        let b = decode_box(&r, &[0.0; 3], ObjectClass::Car).unwrap();
        assert!((b.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn encode_decode_round_trip() {
        let gt = Box3D::new([10.0, -2.0, -0.8], [4.2, 1.7, 1.5], -2.3).unwrap();
        let vote = [9.0, -1.5, -1.0];
        let d = decode_box(&encode_box(&gt, &vote, ObjectClass::Cyclist), &vote, ObjectClass::Cyclist).unwrap();
        for (a, b) in d.to_array().iter().zip(gt.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_filters_points() {
        let coords = [[0.0; 3], [5.0, 0.0, 0.0]];
        let offsets = Tensor::zeros(&[2, 3]);
        let logits = Tensor::from_rows(&[vec![-5.0, 2.0, 0.0], vec![-5.0, -5.0, -5.0]]).unwrap();
        let mut reg = Tensor::zeros(&[2, 8]);
        reg.data_mut()[7] = 1.0;
        reg.data_mut()[15] = 1.0;
        let p = proposals_from(&offsets, &logits, &reg, &coords, 0.3).unwrap();
        assert_eq!(p.point_index, vec![0]);
        assert_eq!(p.classes, vec![ObjectClass::Pedestrian]);
        assert_eq!(p.votes.len(), 2);
    }
}
