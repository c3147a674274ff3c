use super::{iou_3d, iou_bev, Box3D, Difficulty, ObjectClass};
use crate::error::Result;

/// Number of equally spaced recall sample points.
pub const RECALL_POSITIONS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OverlapMetric {
    Bev,
    ThreeD,
}

impl OverlapMetric {
    fn iou(self, a: &Box3D, b: &Box3D) -> Result<f64> {
        match self {
            OverlapMetric::Bev => iou_bev(a, b),
            OverlapMetric::ThreeD => iou_3d(a, b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalDetection {
    pub frame: usize,
    pub class: ObjectClass,
    pub bbox: Box3D,
    pub score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalGroundTruth {
    pub frame: usize,
    pub class: ObjectClass,
    pub bbox: Box3D,
    /// Image-plane 2D box height in pixels.
    pub bbox_height: f64,
    pub occlusion: u8,
    pub truncation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApResult {
    /// Mean interpolated precision over the recall points; NaN when undefined.
    pub ap: f64,
    pub num_gt: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// Set when there is no valid ground truth and AP is undefined.
    pub undefined: bool,
}

/// AP over 40 recall positions for one class, metric and difficulty.
///
/// Ground truths of the class that the difficulty does not admit are
/// "don't care": detections matching them count neither way.
pub fn average_precision_40(
    dets: &[EvalDetection],
    gts: &[EvalGroundTruth],
    class: ObjectClass,
    metric: OverlapMetric,
    difficulty: Difficulty,
    iou_threshold: f64,
) -> Result<ApResult> {
    let gts: Vec<(&EvalGroundTruth, bool)> = gts
        .iter()
        .filter(|g| g.class == class)
        .map(|g| (g, difficulty.admits(g.bbox_height, g.occlusion, g.truncation)))
        .collect();
    let num_gt = gts.iter().filter(|(_, valid)| *valid).count();

    let mut order: Vec<&EvalDetection> = dets.iter().filter(|d| d.class == class).collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut matched = vec![false; gts.len()];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (j, (g, valid)) in gts.iter().enumerate() {
            if g.frame != d.frame || matched[j] {
                continue;
            }
            let iou = metric.iou(&d.bbox, &g.bbox)?;
            if iou < iou_threshold {
                continue;
            }
            if *valid {
                if best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            } else {
                hits_ignored = true;
            }
        }
        match best {
            Some((j, _)) => {
                matched[j] = true;
                tp += 1;
            }
            None if hits_ignored => continue,
            None => fp += 1,
        }
        curve.push((tp, fp));
    }

    if num_gt == 0 {
        return Ok(ApResult {
            ap: f64::NAN,
            num_gt,
            true_positives: tp,
            false_positives: fp,
            undefined: true,
        });
    }
    let mut sum = 0.0;
    for i in 1..=RECALL_POSITIONS {
        let best = curve
            .iter()
            .filter(|(t, _)| t * RECALL_POSITIONS >= i * num_gt)
            .map(|&(t, f)| t as f64 / (t + f) as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    Ok(ApResult {
        ap: sum / RECALL_POSITIONS as f64,
        num_gt,
        true_positives: tp,
        false_positives: fp,
        undefined: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64) -> Box3D {
        Box3D::new([x, 0.0, 0.0], [2.0, 2.0, 1.0], 0.0).unwrap()
    }

    fn gt(x: f64) -> EvalGroundTruth {
        EvalGroundTruth {
            frame: 0,
            class: ObjectClass::Car,
            bbox: bx(x),
            bbox_height: 100.0,
            occlusion: 0,
            truncation: 0.0,
        }
    }

    fn det(x: f64, score: f64) -> EvalDetection {
        EvalDetection {
            frame: 0,
            class: ObjectClass::Car,
            bbox: bx(x),
            score,
        }
    }

    fn ap(dets: &[EvalDetection], gts: &[EvalGroundTruth]) -> ApResult {
        average_precision_40(dets, gts, ObjectClass::Car, OverlapMetric::Bev, Difficulty::Hard, 0.7).unwrap()
    }

    #[test]
    fn perfect_detector() {
        let r = ap(&[det(0.0, 0.9), det(10.0, 0.8)], &[gt(0.0), gt(10.0)]);
        assert_eq!(r.ap, 1.0);
    }

    #[test]
    fn hit_miss_hit_is_five_sixths() {
        let r = ap(&[det(0.0, 0.9), det(50.0, 0.8), det(10.0, 0.7)], &[gt(0.0), gt(10.0)]);
        assert!((r.ap - 5.0 / 6.0).abs() < 1e-12, "{}", r.ap);
    }

    #[test]
    fn no_ground_truth_is_undefined() {
        let r = ap(&[det(0.0, 0.9)], &[]);
        assert!(r.undefined && r.ap.is_nan());
    }

    #[test]
    fn ignored_ground_truth_absorbs_detection() {
        let mut hard = gt(10.0);
        hard.occlusion = 3;
        let r = ap(&[det(0.0, 0.9), det(10.0, 0.95)], &[gt(0.0), hard]);
        assert_eq!(r.num_gt, 1);
        assert_eq!(r.false_positives, 0);
        assert_eq!(r.ap, 1.0);
    }
}
