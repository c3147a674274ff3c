use std::f64::consts::PI;

use fusiondet::eval::{
    average_precision_40, iou_3d, iou_bev, nms, parse_detections, format_detections, Box3D, DetectionResult,
    Difficulty, EvalDetection, EvalGroundTruth, ObjectClass, OverlapMetric,
};
use fusiondet::tensor::Rng;
use proptest::prelude::*;

fn random_box(rng: &mut Rng, spread: f64) -> Box3D {
    Box3D::new(
        [rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-0.5, 0.5)],
        [rng.uniform(0.5, 4.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)],
        rng.uniform(-PI, PI),
    )
    .unwrap()
}

fn monte_carlo_iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut Rng) -> f64 {
    let corners: Vec<[f64; 3]> = a.corners().into_iter().chain(b.corners()).collect();
    let lo: Vec<f64> = (0..3).map(|k| corners.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..3).map(|k| corners.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..samples {
        let p = [rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]), rng.uniform(lo[2], hi[2])];
        let (ia, ib) = (a.contains(&p, 0.0), b.contains(&p, 0.0));
        both += (ia && ib) as usize;
        either += (ia || ib) as usize;
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

#[test]
fn iou_agrees_with_monte_carlo() {
    let mut rng = Rng::new(21);
    for _ in 0..10 {
        let a = random_box(&mut rng, 1.0);
        let b = random_box(&mut rng, 1.0);
        let mc = monte_carlo_iou(&a, &b, 200_000, &mut rng);
        assert!((iou_3d(&a, &b).unwrap() - mc).abs() < 0.01);
    }
}

#[test]
fn iou_reference_values() {
    let a = Box3D::new([0.0, 0.0, 0.0], [2.0, 2.0, 2.0], 0.0).unwrap();
    let b = Box3D::new([1.0, 0.0, 0.0], [2.0, 2.0, 2.0], 0.0).unwrap();
    assert!((iou_bev(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let c = Box3D::new([0.0, 0.0, 1.0], [2.0, 2.0, 2.0], 0.0).unwrap();
    assert!((iou_3d(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    let d = Box3D::new([0.0, 0.0, 0.0], [2.0, 2.0, 2.0], PI / 4.0).unwrap();
    let inter = 8.0 * (2.0f64.sqrt() - 1.0);
    assert!((iou_bev(&a, &d).unwrap() - inter / (8.0 - inter)).abs() < 1e-12);
    let far = Box3D::new([10.0, 0.0, 0.0], [2.0, 2.0, 2.0], 0.0).unwrap();
    assert_eq!(iou_3d(&a, &far).unwrap(), 0.0);
}

fn nms_oracle(dets: &[DetectionResult], thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for &i in &order {
        if keep.iter().all(|&k| iou_bev(&dets[i].bbox, &dets[k].bbox).unwrap() <= thr) {
            keep.push(i);
        }
    }
    keep
}

fn random_dets(rng: &mut Rng, n: usize) -> Vec<DetectionResult> {
    (0..n)
        .map(|_| DetectionResult {
            bbox: random_box(rng, 2.0),
            score: (rng.uniform(0.0, 1.0) * 8.0).round() / 8.0,
            class: ObjectClass::Car,
        })
        .collect()
}

#[test]
fn nms_matches_brute_force() {
    let mut rng = Rng::new(4);
    for _ in 0..50 {
        let n = rng.index(25);
        let dets = random_dets(&mut rng, n);
        let thr = rng.uniform(0.05, 0.9);
        assert_eq!(nms(&dets, thr).unwrap(), nms_oracle(&dets, thr));
    }
}

#[test]
fn nms_duplicates_and_ties() {
    let b = Box3D::new([0.0, 0.0, 0.0], [4.0, 2.0, 1.5], 0.3).unwrap();
    let d = |score| DetectionResult { bbox: b, score, class: ObjectClass::Car };
    assert_eq!(nms(&[d(0.5), d(0.9), d(0.9)], 0.8).unwrap(), vec![1]);
    assert!(nms(&[], 0.5).unwrap().is_empty());
}

fn gt(frame: usize, x: f64) -> EvalGroundTruth {
    EvalGroundTruth {
        frame,
        class: ObjectClass::Car,
        bbox: Box3D::new([x, 0.0, 0.0], [4.0, 1.8, 1.5], 0.0).unwrap(),
        bbox_height: 60.0,
        occlusion: 0,
        truncation: 0.0,
    }
}

fn det(frame: usize, x: f64, score: f64) -> EvalDetection {
    EvalDetection {
        frame,
        class: ObjectClass::Car,
        bbox: Box3D::new([x, 0.0, 0.0], [4.0, 1.8, 1.5], 0.0).unwrap(),
        score,
    }
}

fn ap(dets: &[EvalDetection], gts: &[EvalGroundTruth]) -> fusiondet::eval::ApResult {
    average_precision_40(dets, gts, ObjectClass::Car, OverlapMetric::ThreeD, Difficulty::Moderate, 0.7).unwrap()
}

#[test]
fn ap_golden_hit_miss_hit() {
    let gts = [gt(0, 10.0), gt(0, 30.0)];
    let dets = [det(0, 10.0, 0.9), det(0, 50.0, 0.8), det(0, 30.0, 0.7)];
    let r = ap(&dets, &gts);
    assert!((r.ap - 5.0 / 6.0).abs() < 1e-12, "{}", r.ap);
    assert_eq!((r.true_positives, r.false_positives), (2, 1));
}

#[test]
fn ap_edge_cases() {
    let gts = [gt(0, 10.0), gt(1, 10.0)];
    assert_eq!(ap(&[], &gts).ap, 0.0);
    assert_eq!(ap(&[det(0, 10.0, 0.5), det(1, 10.0, 0.4)], &gts).ap, 1.0);
    let none = ap(&[det(0, 10.0, 0.5)], &[]);
    assert!(none.undefined && none.ap.is_nan());
}

#[test]
fn ap_ignores_detections_on_dont_care() {
    let mut hard = gt(0, 30.0);
    hard.bbox_height = 10.0;
    let with = ap(&[det(0, 10.0, 0.9), det(0, 30.0, 0.95)], &[gt(0, 10.0), hard]);
    assert_eq!(with.num_gt, 1);
    assert_eq!(with.false_positives, 0);
    assert_eq!(with.ap, 1.0);
}

#[test]
fn detection_dump_round_trips() {
    let mut rng = Rng::new(2);
    let dets = random_dets(&mut rng, 7);
    assert_eq!(parse_detections(&format_detections(&dets)).unwrap(), dets);
}

proptest! {
    #[test]
    fn iou_symmetric_bounded_and_self_one(seed in 0u64..2000) {
        let mut rng = Rng::new(seed);
        let a = random_box(&mut rng, 1.5);
        let b = random_box(&mut rng, 1.5);
        let ab = iou_3d(&a, &b).unwrap();
        prop_assert!((ab - iou_3d(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((iou_bev(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iou_invariant_to_joint_rotation(seed in 0u64..2000, theta in -PI..PI) {
        let mut rng = Rng::new(seed);
        let a = random_box(&mut rng, 1.5);
        let b = random_box(&mut rng, 1.5);
        let rot = |x: &Box3D| {
            let (s, c) = theta.sin_cos();
            let p = x.center;
            Box3D::new([c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]], x.size, x.yaw + theta).unwrap()
        };
        prop_assert!((iou_bev(&a, &b).unwrap() - iou_bev(&rot(&a), &rot(&b)).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn nms_survivors_overlap_below_threshold(seed in 0u64..1000, thr in 0.05f64..0.95) {
        let mut rng = Rng::new(seed);
        let dets = random_dets(&mut rng, 15);
        let keep = nms(&dets, thr).unwrap();
        for (x, &i) in keep.iter().enumerate() {
            for &j in &keep[x + 1..] {
                prop_assert!(iou_bev(&dets[i].bbox, &dets[j].bbox).unwrap() <= thr);
            }
        }
    }

    #[test]
    fn removing_a_false_positive_never_lowers_ap(seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let gts: Vec<EvalGroundTruth> = (0..4).map(|i| gt(0, 10.0 * i as f64)).collect();
        let mut dets = Vec::new();
        for _ in 0..4 {
            if rng.uniform(0.0, 1.0) < 0.7 {
                dets.push(det(0, 10.0 * rng.index(4) as f64, rng.uniform(0.0, 1.0)));
            }
        }
        let fp_pos = dets.len();
        dets.push(det(0, 200.0, rng.uniform(0.0, 1.0)));
        let before = ap(&dets, &gts).ap;
        dets.remove(fp_pos);
        prop_assert!(ap(&dets, &gts).ap >= before);
    }
}
