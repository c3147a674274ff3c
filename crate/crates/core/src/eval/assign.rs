use super::{iou_3d, Box3D};
use crate::error::Result;

/// IoU above which a proposal is a classification positive.
pub const CLS_POS_ABOVE: f64 = 0.6;
/// IoU below which a proposal is a classification negative.
pub const CLS_NEG_BELOW: f64 = 0.45;
/// IoU above which a proposal contributes to box regression.
pub const REG_ABOVE: f64 = 0.55;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClsLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub cls: ClsLabel,
    pub regress: bool,
    /// Best-overlapping ground truth, if any overlaps at all.
    pub gt: Option<usize>,
    pub iou: f64,
}

/// Labels each proposal by its best 3D IoU against the ground truths.
pub fn assign_proposals(proposals: &[Box3D], gts: &[Box3D]) -> Result<Vec<Assignment>> {
    proposals
        .iter()
        .map(|p| {
            let mut best = (None, 0.0);
            for (j, g) in gts.iter().enumerate() {
                let iou = iou_3d(p, g)?;
                if iou > best.1 {
                    best = (Some(j), iou);
                }
            }
            let iou = best.1;
            let cls = if iou > CLS_POS_ABOVE {
                ClsLabel::Positive
            } else if iou < CLS_NEG_BELOW {
                ClsLabel::Negative
            } else {
                ClsLabel::Ignore
            };
            Ok(Assignment {
                cls,
                regress: iou > REG_ABOVE,
                gt: best.0,
                iou,
            })
        })
        .collect()
}
