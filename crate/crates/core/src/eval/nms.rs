use super::{iou_bev, DetectionResult};
use crate::error::Result;

/// Greedy BEV NMS. Visits detections by descending score (ties keep input
/// order) and drops any whose IoU with an already kept box exceeds
/// `threshold`. Returns kept indices in visiting order.
pub fn nms(dets: &[DetectionResult], threshold: f64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou_bev(&dets[i].bbox, &dets[j].bbox)? > threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Box3D, ObjectClass};

    fn det(x: f64, score: f64) -> DetectionResult {
        DetectionResult {
            bbox: Box3D::new([x, 0.0, 0.0], [2.0, 2.0, 1.0], 0.0).unwrap(),
            score,
            class: ObjectClass::Car,
        }
    }

    #[test]
    fn suppresses_overlap_keeps_far() {
        let d = vec![det(0.0, 0.5), det(0.1, 0.9), det(10.0, 0.1)];
        assert_eq!(nms(&d, 0.5).unwrap(), vec![1, 2]);
    }

    #[test]
    fn equal_scores_keep_earlier() {
        let d = vec![det(0.0, 0.5), det(0.0, 0.5)];
        assert_eq!(nms(&d, 0.5).unwrap(), vec![0]);
    }

    #[test]
    fn threshold_is_strict() {
        // IoU exactly 1/3 at offset 1.0 with 2x2 boxes
        let d = vec![det(0.0, 0.9), det(1.0, 0.8)];
        assert_eq!(nms(&d, 1.0 / 3.0 + 1e-9).unwrap(), vec![0, 1]);
        assert_eq!(nms(&d, 0.3).unwrap(), vec![0]);
    }
}
