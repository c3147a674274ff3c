//! Oracle comparisons, round trips and structural invariants.
//!
//! Each function runs one check at the given size and reports the worst
//! deviation it saw.

use std::f64::consts::PI;

use fusiondet::eval::{
    average_precision_40, iou_3d, iou_bev, nms, Box3D, DetectionResult, Difficulty, EvalDetection, EvalGroundTruth,
    ObjectClass, OverlapMetric,
};
use fusiondet::frustum::{
    build_frustum, generate_pseudo_points, pixel_to_grid, select_foreground, DepthPrediction, ForegroundMask,
    ImageEvidence, ImageFeatureGrid, OffsetGrid, SamplingMode,
};
use fusiondet::fusion::{
    AttentionBlock, AttnMode, CombineMode, NetworkConfig, PftStage, PtdStage, TwoStreamNet,
};
use fusiondet::geometry::{
    bilinear_sample, farthest_point_sampling, knn_group, sq_dist, trilinear_sample, Calibration, LidBinning, Point3,
    PointSet,
};
use fusiondet::kitti::{
    format_calib, format_labels, generate_scene, parse_calib, parse_labels, read_ppm, read_velodyne, write_ppm,
    write_velodyne, SyntheticSceneSpec,
};
use fusiondet::losses::{depth_loss, focal_loss, DepthTargets, LossWeights};
use fusiondet::pipeline::{overfit, prepare_frame, Detector, PipelineConfig};
use fusiondet::tensor::{read_checkpoint, write_checkpoint, AdamConfig, NormMode, ParamStore, Rng, Session, Tensor};

use super::CheckRow;

fn cloud(rng: &mut Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(-2.0, 2.0)])
        .collect()
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).expect("non-empty shape")
}

fn random_box(rng: &mut Rng, spread: f64) -> Box3D {
    Box3D::new(
        [rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-0.6, 0.6)],
        [rng.uniform(0.6, 4.5), rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)],
        rng.uniform(-PI, PI),
    )
    .expect("positive sizes")
}

/// Greedy max-min selection recomputing every distance from scratch.
fn fps_reference(points: &[Point3], m: usize) -> Vec<usize> {
    let mut chosen = vec![0];
    while chosen.len() < m {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate().filter(|(i, _)| !chosen.contains(i)) {
            let d = chosen.iter().map(|&c| sq_dist(p, &points[c])).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

pub fn fps_oracle(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1001);
    let mut mismatches = 0;
    for _ in 0..cases {
        let n = 2 + rng.index(80);
        let mut pts = cloud(&mut rng, n);
        if rng.index(4) == 0 {
            let k = rng.index(n);
            pts.push(pts[k]);
        }
        let m = 1 + rng.index(pts.len());
        match farthest_point_sampling(&pts, m, 0) {
            Ok(got) if got == fps_reference(&pts, m) => {}
            _ => mismatches += 1,
        }
    }
    CheckRow::within("geometry", "fps_vs_greedy_oracle", mismatches as f64, 0.0, format!("{cases} cases"))
}

pub fn knn_oracle(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1002);
    let mut mismatches = 0;
    for _ in 0..cases {
        let pts = cloud(&mut rng, 30);
        let qs = cloud(&mut rng, 4);
        let k = 1 + rng.index(30);
        let got = knn_group(&qs, &pts, k).unwrap_or_default();
        for (q, g) in qs.iter().zip(&got) {
            let mut all: Vec<usize> = (0..pts.len()).collect();
            all.sort_by(|&a, &b| sq_dist(q, &pts[a]).total_cmp(&sq_dist(q, &pts[b])).then(a.cmp(&b)));
            mismatches += usize::from(g[..] != all[..k]);
        }
        mismatches += usize::from(got.len() != qs.len());
    }
    CheckRow::within("geometry", "knn_vs_sorted_oracle", mismatches as f64, 0.0, format!("{cases} cases"))
}

pub fn affine_reproduction(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1003);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (h, w, d) = (2 + rng.index(6), 2 + rng.index(6), 2 + rng.index(8));
        let a: Vec<f64> = (0..4).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let field = |x: f64, y: f64, z: f64| a[0] + a[1] * x + a[2] * y + a[3] * z;
        let grid: Vec<f64> = (0..h * w).map(|i| field((i % w) as f64, (i / w) as f64, 0.0)).collect();
        let grid = Tensor::new(vec![h, w, 1], grid).expect("sized");
        let mut vol = Vec::with_capacity(h * w * d);
        for y in 0..h {
            for x in 0..w {
                for z in 0..d {
                    vol.push(field(x as f64, y as f64, z as f64));
                }
            }
        }
        let vol = Tensor::new(vec![h, w, d, 1], vol).expect("sized");
        let (u, v, z) = (rng.uniform(0.0, (w - 1) as f64), rng.uniform(0.0, (h - 1) as f64), rng.uniform(0.0, (d - 1) as f64));
        match (bilinear_sample(&grid, u, v), trilinear_sample(&vol, u, v, z)) {
            (Ok((b, _)), Ok((t, _))) => {
                worst = worst.max((b[0] - field(u, v, 0.0)).abs()).max((t[0] - field(u, v, z)).abs());
            }
            _ => worst = f64::INFINITY,
        }
    }
    CheckRow::within("geometry", "bilinear_trilinear_affine", worst, 1e-12, format!("{cases} fields"))
}

fn nms_reference(dets: &[DetectionResult], thr: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut keep: Vec<usize> = Vec::new();
    for &i in &order {
        let clear = keep
            .iter()
            .all(|&k| iou_bev(&dets[i].bbox, &dets[k].bbox).map(|o| o <= thr).unwrap_or(false));
        if clear {
            keep.push(i);
        }
    }
    keep
}

pub fn nms_oracle(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1004);
    let mut mismatches = 0;
    for _ in 0..cases {
        let n = rng.index(30);
        let dets: Vec<DetectionResult> = (0..n)
            .map(|_| DetectionResult {
                bbox: random_box(&mut rng, 3.0),
                score: (rng.uniform(0.0, 1.0) * 10.0).round() / 10.0,
                class: ObjectClass::Car,
            })
            .collect();
        let thr = rng.uniform(0.05, 0.9);
        match nms(&dets, thr) {
            Ok(keep) if keep == nms_reference(&dets, thr) => {}
            _ => mismatches += 1,
        }
    }
    CheckRow::within("eval", "nms_vs_quadratic_oracle", mismatches as f64, 0.0, format!("{cases} cases"))
}

/// Intersection volume estimated from uniform samples inside each box.
fn monte_carlo_iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut Rng) -> f64 {
    let mut inside_fraction = |from: &Box3D, to: &Box3D, n: usize| {
        let (s, c) = from.yaw.sin_cos();
        let mut hit = 0usize;
        for _ in 0..n {
            let l = [
                rng.uniform(-0.5, 0.5) * from.size[0],
                rng.uniform(-0.5, 0.5) * from.size[1],
                rng.uniform(-0.5, 0.5) * from.size[2],
            ];
            let p = [
                from.center[0] + c * l[0] - s * l[1],
                from.center[1] + s * l[0] + c * l[1],
                from.center[2] + l[2],
            ];
            hit += usize::from(to.contains(&p, 0.0));
        }
        hit as f64 / n as f64
    };
    let half = samples / 2;
    let from_a = a.volume() * inside_fraction(a, b, half);
    let from_b = b.volume() * inside_fraction(b, a, samples - half);
    let inter = 0.5 * (from_a + from_b);
    inter / (a.volume() + b.volume() - inter)
}

pub fn iou_monte_carlo(pairs: usize, samples: usize) -> CheckRow {
    let mut rng = Rng::new(1005);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let a = random_box(&mut rng, 1.2);
        let b = random_box(&mut rng, 1.2);
        let mc = monte_carlo_iou(&a, &b, samples, &mut rng);
        worst = worst.max(iou_3d(&a, &b).map_or(f64::INFINITY, |v| (v - mc).abs()));
    }
    CheckRow::within("eval", "iou_vs_monte_carlo", worst, 0.003, format!("{pairs} pairs x {samples} samples"))
}

pub fn iou_symmetry(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1006);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let a = random_box(&mut rng, 1.5);
        let b = random_box(&mut rng, 1.5);
        let theta = rng.uniform(-PI, PI);
        let rot = |x: &Box3D| {
            let (s, c) = theta.sin_cos();
            Box3D::new([c * x.center[0] - s * x.center[1], s * x.center[0] + c * x.center[1], x.center[2]], x.size, x.yaw + theta)
        };
        let err = (|| -> fusiondet::Result<f64> {
            let ab = iou_3d(&a, &b)?;
            let rotated = iou_3d(&rot(&a)?, &rot(&b)?)?;
            Ok((ab - iou_3d(&b, &a)?).abs().max((ab - rotated).abs()).max((iou_3d(&a, &a)? - 1.0).abs()))
        })();
        worst = worst.max(err.unwrap_or(f64::INFINITY));
    }
    CheckRow::within("eval", "iou_symmetry_rotation_self", worst, 1e-9, format!("{cases} pairs"))
}

fn ap_gt(x: f64) -> EvalGroundTruth {
    EvalGroundTruth {
        frame: 0,
        class: ObjectClass::Car,
        bbox: Box3D::new([x, 0.0, -0.9], [3.9, 1.6, 1.5], 0.0).expect("positive sizes"),
        bbox_height: 50.0,
        occlusion: 0,
        truncation: 0.0,
    }
}

fn ap_det(x: f64, score: f64) -> EvalDetection {
    EvalDetection {
        frame: 0,
        class: ObjectClass::Car,
        bbox: Box3D::new([x, 0.0, -0.9], [3.9, 1.6, 1.5], 0.0).expect("positive sizes"),
        score,
    }
}

/// Three detections ranked hit, miss, hit against two ground truths: the
/// precision envelope is 1 up to recall 1/2 and 2/3 beyond, so AP-40 = 5/6.
pub fn ap_golden() -> CheckRow {
    let gts = [ap_gt(12.0), ap_gt(25.0)];
    let dets = [ap_det(12.0, 0.9), ap_det(40.0, 0.8), ap_det(25.0, 0.6)];
    match average_precision_40(&dets, &gts, ObjectClass::Car, OverlapMetric::ThreeD, Difficulty::Moderate, 0.7) {
        Ok(r) => CheckRow::within("eval", "ap40_golden_example", (r.ap - 5.0 / 6.0).abs(), 1e-9, format!("ap={}", r.ap)),
        Err(e) => CheckRow::errored("eval", "ap40_golden_example", e),
    }
}

pub fn ap_edge_cases() -> CheckRow {
    let gts = [ap_gt(12.0), ap_gt(25.0)];
    let run = |dets: &[EvalDetection], gts: &[EvalGroundTruth]| {
        average_precision_40(dets, gts, ObjectClass::Car, OverlapMetric::Bev, Difficulty::Easy, 0.7)
    };
    let ok = (|| -> fusiondet::Result<bool> {
        let perfect = run(&[ap_det(12.0, 0.9), ap_det(25.0, 0.8)], &gts)?;
        let empty = run(&[], &gts)?;
        let no_gt = run(&[ap_det(12.0, 0.9)], &[])?;
        Ok(perfect.ap == 1.0 && empty.ap == 0.0 && no_gt.undefined && no_gt.ap.is_nan())
    })();
    match ok {
        Ok(ok) => CheckRow::holds("eval", "ap40_perfect_empty_undefined", ok, ""),
        Err(e) => CheckRow::errored("eval", "ap40_perfect_empty_undefined", e),
    }
}

pub fn frustum_invariant(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1007);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (h, w, d, c) = (1 + rng.index(5), 1 + rng.index(6), 1 + rng.index(10), 1 + rng.index(8));
        let fi = ImageFeatureGrid::new(normal(&mut rng, &[h, w, c]), 4).expect("3-d grid");
        let mut logits = normal(&mut rng, &[h, w, d]);
        logits.data_mut().iter_mut().for_each(|v| *v *= 4.0);
        let dp = DepthPrediction::new(logits, Tensor::zeros(&[h, w, d])).expect("matching shapes");
        let Ok(ft) = build_frustum(&fi, &dp) else {
            worst = f64::INFINITY;
            continue;
        };
        for cell in 0..h * w {
            for ch in 0..c {
                let sum: f64 = (0..d).map(|k| ft.feats.data()[(cell * d + k) * c + ch]).sum();
                worst = worst.max((sum - fi.feats.data()[cell * c + ch]).abs());
            }
        }
    }
    CheckRow::within("frustum", "depth_sum_equals_image_features", worst, 1e-6, format!("{cases} inputs"))
}

pub fn lid_round_trip(depths: usize) -> CheckRow {
    let b = LidBinning::default();
    let mut rng = Rng::new(1008);
    let mut worst = 0.0f64;
    for i in 0..depths {
        let d = if i == 0 { b.d_min } else { rng.uniform(b.d_min, b.d_max) };
        let code = b.encode(d);
        worst = worst.max((b.decode(code.bin, code.residual) - d).abs());
    }
    CheckRow::within("geometry", "lid_decode_encode_identity", worst, 1e-9, format!("{depths} depths"))
}

/// A KITTI-like calibration with small random rotations, offsets and intrinsics.
pub fn random_calibration(rng: &mut Rng) -> fusiondet::Result<Calibration> {
    let rot = |a: f64, b: f64, c: f64| {
        let (sa, ca, sb, cb, sc, cc) = (a.sin(), a.cos(), b.sin(), b.cos(), c.sin(), c.cos());
        [
            [cb * cc, -cb * sc, sb],
            [sa * sb * cc + ca * sc, -sa * sb * sc + ca * cc, -sa * cb],
            [-ca * sb * cc + sa * sc, ca * sb * sc + sa * cc, ca * cb],
        ]
    };
    let r0 = rot(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05));
    let base = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]];
    let jitter = rot(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    let mut tr = [[0.0; 4]; 3];
    for i in 0..3 {
        for j in 0..3 {
            tr[i][j] = (0..3).map(|k| jitter[i][k] * base[k][j]).sum();
        }
        tr[i][3] = rng.uniform(-0.5, 0.5);
    }
    let f = rng.uniform(300.0, 900.0);
    let p2 = [
        [f, 0.0, rng.uniform(300.0, 700.0), rng.uniform(-50.0, 50.0)],
        [0.0, f, rng.uniform(150.0, 250.0), rng.uniform(-1.0, 1.0)],
        [0.0, 0.0, 1.0, rng.uniform(-0.01, 0.01)],
    ];
    Calibration::new(p2, r0, tr)
}

pub fn calibration_round_trip(calibrations: usize, points: usize) -> CheckRow {
    let mut rng = Rng::new(1009);
    let mut worst = 0.0f64;
    for _ in 0..calibrations {
        let Ok(c) = random_calibration(&mut rng) else {
            worst = f64::INFINITY;
            continue;
        };
        for _ in 0..points {
            let x = rng.uniform(2.0, 70.0);
            let p = [x, rng.uniform(-0.5, 0.5) * x, rng.uniform(-0.1, 0.1) * x];
            let q = c.camera_to_lidar(&c.lidar_to_camera(&p));
            let r = match c.lidar_to_image(&p) {
                Ok((u, v, d)) => c.camera_to_lidar(&c.unproject(u, v, d)),
                Err(_) => [f64::INFINITY; 3],
            };
            for a in 0..3 {
                worst = worst.max((p[a] - q[a]).abs()).max((p[a] - r[a]).abs());
            }
        }
    }
    CheckRow::within(
        "geometry",
        "camera_lidar_round_trip",
        worst,
        1e-9,
        format!("{points} points x {calibrations} calibrations"),
    )
}

/// Pseudo points lifted with zero offsets at the exact depth of their source point.
pub fn pseudo_point_identity() -> CheckRow {
    let run = || -> fusiondet::Result<f64> {
        let (img_w, img_h, stride) = (96, 48, 4);
        let calib = fusiondet::kitti::kitti_like_calibration(img_w, img_h, 60.0)?;
        let binning = LidBinning::default();
        let (hf, wf, d) = (img_h / stride, img_w / stride, binning.bins);
        let mut rng = Rng::new(1010);
        let mut coords = Vec::new();
        let mut cells = std::collections::HashSet::new();
        while coords.len() < 16 {
            let p = [rng.uniform(6.0, 40.0), rng.uniform(-4.0, 4.0), rng.uniform(-1.5, 0.5)];
            let (u, v, _) = calib.lidar_to_image(&p)?;
            if !(0.0..img_w as f64).contains(&u) || !(0.0..img_h as f64).contains(&v) {
                continue;
            }
            let cell = (pixel_to_grid(u, stride).round() as usize, pixel_to_grid(v, stride).round() as usize);
            if cells.insert(cell) {
                coords.push(p);
            }
        }
        let mut logits = Tensor::full(&[hf, wf, d], -5.0);
        let mut residuals = Tensor::zeros(&[hf, wf, d]);
        for p in &coords {
            let (u, v, depth) = calib.lidar_to_image(p)?;
            let (x, y) = (pixel_to_grid(u, stride).round() as usize, pixel_to_grid(v, stride).round() as usize);
            let code = binning.encode(depth);
            logits.data_mut()[(y * wf + x) * d + code.bin] = 5.0;
            residuals.data_mut()[(y * wf + x) * d + code.bin] = code.residual;
        }
        let points = PointSet::from_coords(coords.clone())?;
        let depth = DepthPrediction::new(logits, residuals)?;
        let features = ImageFeatureGrid::new(normal(&mut rng, &[hf, wf, 4]), stride)?;
        let frustum = build_frustum(&features, &depth)?;
        let offsets = OffsetGrid {
            offsets: Tensor::zeros(&[hf, wf, 2]),
        };
        let mask = ForegroundMask::filled(img_h, img_w, true);
        let selection = select_foreground(&points, &mask, &calib, coords.len(), &mut rng)?;
        let evidence = ImageEvidence {
            features: &features,
            depth: &depth,
            offsets: &offsets,
            frustum: &frustum,
        };
        let pseudo = generate_pseudo_points(
            &points,
            &selection,
            &calib,
            &evidence,
            &binning,
            (img_h, img_w),
            coords.len(),
            SamplingMode::Kps,
        )?;
        let mut worst = 0.0f64;
        for (q, &src) in pseudo.coords.iter().zip(&pseudo.source_index) {
            for a in 0..3 {
                worst = worst.max((q[a] - coords[src][a]).abs());
            }
        }
        Ok(worst)
    };
    match run() {
        Ok(w) => CheckRow::within("frustum", "pseudo_point_identity", w, 1e-6, "16 points, zero offsets"),
        Err(e) => CheckRow::errored("frustum", "pseudo_point_identity", e),
    }
}

pub fn attention_normalization(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1011);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mode = if case % 2 == 0 { AttnMode::Subtract } else { AttnMode::Multiply };
        let mut store = ParamStore::new();
        let block = AttentionBlock::new(&mut store, "a", 4, mode, NormMode::PerPointStandardize, &mut rng);
        let pts = cloud(&mut rng, 10);
        let x = normal(&mut rng, &[10, 4]);
        let err = (|| -> fusiondet::Result<f64> {
            let groups = knn_group(&pts, &pts, 5)?;
            let mut s = Session::new(&store);
            let xv = s.constant(x)?;
            let (_, attn) = block.forward_detailed(&mut s, &pts, xv, &groups)?;
            let a = s.g.value(attn).data();
            let mut w = 0.0f64;
            for i in 0..10 {
                for c in 0..4 {
                    let sum: f64 = (0..5).map(|j| a[(i * 5 + j) * 4 + c]).sum();
                    w = w.max((sum - 1.0).abs());
                }
            }
            Ok(w)
        })();
        worst = worst.max(err.unwrap_or(f64::INFINITY));
    }
    CheckRow::within("fusion", "attention_weights_sum_to_one", worst, 1e-12, format!("{cases} blocks"))
}

pub fn ptd_permutation_invariance(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1012);
    let mut differing = 0;
    for case in 0..cases {
        let mode = if case % 2 == 0 { AttnMode::Subtract } else { AttnMode::Multiply };
        let mut store = ParamStore::new();
        let stage = PtdStage::new(&mut store, "ptd", 6, 4, 3, 5, Some(mode), NormMode::PerPointStandardize, &mut rng);
        let pts = cloud(&mut rng, 14);
        let centers = pts[..6].to_vec();
        let x = normal(&mut rng, &[14, 3]);
        let same = (|| -> fusiondet::Result<bool> {
            let local = knn_group(&centers, &pts, 4)?;
            let attn = knn_group(&centers, &centers, 4)?;
            let mut l2 = local.clone();
            let mut a2 = attn.clone();
            l2.iter_mut().chain(a2.iter_mut()).for_each(|g| rng.shuffle(g));
            let run = |l: &[Vec<usize>], a: &[Vec<usize>]| -> fusiondet::Result<Tensor> {
                let mut s = Session::new(&store);
                let xv = s.constant(x.clone())?;
                let out = stage.forward_grouped(&mut s, &centers, xv, l, a)?;
                Ok(s.g.value(out).clone())
            };
            Ok(run(&local, &attn)? == run(&l2, &a2)?)
        })();
        differing += usize::from(!same.unwrap_or(false));
    }
    CheckRow::within("fusion", "ptd_group_permutation_invariance", differing as f64, 0.0, format!("{cases} cases, bitwise"))
}

pub fn pft_symmetry(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1013);
    let mut differing = 0;
    for case in 0..cases {
        let mode = if case % 2 == 0 { AttnMode::Subtract } else { AttnMode::Multiply };
        let combine = [CombineMode::Subtract, CombineMode::Add, CombineMode::Concat][case % 3];
        let mut store = ParamStore::new();
        let stage = PftStage::new(&mut store, "pft", (3, 7), (5, 4), 4, combine, mode, NormMode::PerPointStandardize, &mut rng);
        let (fa, fb) = (normal(&mut rng, &[7, 3]), normal(&mut rng, &[4, 5]));
        let same = (|| -> fusiondet::Result<bool> {
            let mut s = Session::new(&store);
            let a = s.constant(fa)?;
            let b = s.constant(fb)?;
            let direct = stage.forward(&mut s, a, b)?;
            let mirror = stage.swapped().forward(&mut s, b, a)?;
            Ok(s.g.value(direct.raw) == s.g.value(mirror.pseu) && s.g.value(direct.pseu) == s.g.value(mirror.raw))
        })();
        differing += usize::from(!same.unwrap_or(false));
    }
    CheckRow::within("fusion", "pft_swap_symmetry", differing as f64, 0.0, format!("{cases} cases, bitwise"))
}

pub fn combine_modes_distinct() -> CheckRow {
    let run = || -> fusiondet::Result<f64> {
        let mut outs = Vec::new();
        for combine in [CombineMode::Subtract, CombineMode::Add, CombineMode::Concat] {
            let mut rng = Rng::new(1014);
            let mut store = ParamStore::new();
            let stage = PftStage::new(&mut store, "pft", (4, 6), (4, 5), 4, combine, AttnMode::Multiply, NormMode::PerPointStandardize, &mut rng);
            let mut data = Rng::new(1015);
            let mut s = Session::new(&store);
            let a = s.constant(normal(&mut data, &[6, 4]))?;
            let b = s.constant(normal(&mut data, &[5, 4]))?;
            let out = stage.forward(&mut s, a, b)?;
            outs.push(s.g.value(out.raw).clone());
        }
        let mut least = f64::INFINITY;
        for i in 0..3 {
            for j in i + 1..3 {
                let d: f64 = outs[i].data().iter().zip(outs[j].data()).map(|(x, y)| (x - y).powi(2)).sum();
                least = least.min(d.sqrt());
            }
        }
        Ok(least)
    };
    match run() {
        Ok(d) => CheckRow {
            suite: "fusion",
            check: "combine_modes_pairwise_distinct".into(),
            value: d,
            tolerance: 1e-6,
            pass: d > 1e-6,
            detail: "smallest pairwise L2 distance must exceed tolerance".into(),
        },
        Err(e) => CheckRow::errored("fusion", "combine_modes_pairwise_distinct", e),
    }
}

pub fn network_shapes(config: &NetworkConfig) -> CheckRow {
    let run = || -> fusiondet::Result<bool> {
        let mut rng = Rng::new(1016);
        let mut store = ParamStore::new();
        let net = TwoStreamNet::new(&mut store, config.clone(), &mut rng)?;
        let rc = cloud(&mut rng, config.raw_points);
        let pc = cloud(&mut rng, config.ppc_points);
        let mut s = Session::new(&store);
        let rf = s.constant(normal(&mut rng, &[config.raw_points, config.raw_in_channels]))?;
        let pf = s.constant(normal(&mut rng, &[config.ppc_points, config.ppc_in_channels]))?;
        let out = net.forward(&mut s, &rc, rf, &pc, pf)?;
        Ok(s.g.value(out.feats).shape() == [config.raw_points, config.output_channels()])
    };
    let name = format!("network_output_{}x{}", config.raw_points, config.output_channels());
    match run() {
        Ok(ok) => CheckRow::holds("fusion", &name, ok, format!("{} raw + {} pseudo points", config.raw_points, config.ppc_points)),
        Err(e) => CheckRow::errored("fusion", &name, e),
    }
}

pub fn focal_reference() -> CheckRow {
    let (l, _) = focal_loss(0.9, true, 0.25, 2.0);
    CheckRow::within("losses", "focal_reference_value", (l - 2.634e-4).abs(), 1e-7, format!("loss={l}"))
}

pub fn depth_loss_properties(cases: usize) -> CheckRow {
    let mut rng = Rng::new(1017);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let logits = normal(&mut rng, &[16, 6]);
        let res = normal(&mut rng, &[16, 6]);
        let mut cells: Vec<usize> = (0..16).collect();
        rng.shuffle(&mut cells);
        let t = DepthTargets {
            cells: cells[..6].iter().map(|&c| [c % 4, c / 4]).collect(),
            gt_bin: (0..6).map(|_| rng.index(6)).collect(),
            gt_res: (0..6).map(|_| rng.uniform(0.0, 1.0)).collect(),
        };
        let mut order: Vec<usize> = (0..6).collect();
        rng.shuffle(&mut order);
        let p = DepthTargets {
            cells: order.iter().map(|&i| t.cells[i]).collect(),
            gt_bin: order.iter().map(|&i| t.gt_bin[i]).collect(),
            gt_res: order.iter().map(|&i| t.gt_res[i]).collect(),
        };
        let value = |t: &DepthTargets, w: &LossWeights| -> fusiondet::Result<(f64, f64)> {
            let store = ParamStore::new();
            let mut s = Session::new(&store);
            let l = s.constant(logits.clone())?;
            let r = s.constant(res.clone())?;
            let d = depth_loss(&mut s, l, r, 4, t, w)?;
            Ok((s.g.value(d.total).item(), s.g.value(d.residual).item()))
        };
        let w10 = LossWeights::default();
        let w20 = LossWeights {
            depth_residual: 20.0,
            ..w10
        };
        let err = (|| -> fusiondet::Result<f64> {
            let (a, res_term) = value(&t, &w10)?;
            let (b, _) = value(&p, &w10)?;
            let (c, _) = value(&t, &w20)?;
            Ok(((a - b).abs()).max(((c - a) - 10.0 * res_term).abs()))
        })();
        worst = worst.max(err.unwrap_or(f64::INFINITY));
    }
    CheckRow::within("losses", "depth_loss_permutation_and_residual_weight", worst, 1e-12, format!("{cases} cases"))
}

pub fn kitti_round_trips() -> CheckRow {
    let run = || -> fusiondet::Result<bool> {
        let scene = generate_scene(&SyntheticSceneSpec {
            pedestrians: 1,
            cyclists: 1,
            ..SyntheticSceneSpec::default()
        })?;
        let calib_ok = parse_calib(&format_calib(&scene.calib))? == scene.calib;
        let labels = scene.labels();
        let labels_ok = parse_labels(&format_labels(&labels))? == labels;
        let mut f32_points = scene.points.clone();
        f32_points.coords.iter_mut().flatten().for_each(|v| *v = *v as f32 as f64);
        if let Some(f) = f32_points.feats.as_mut() {
            f.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        let velodyne_ok = read_velodyne(&write_velodyne(&f32_points))? == f32_points;
        let image = read_ppm(&write_ppm(&scene.image)?)?;
        let ppm_ok = image.shape() == scene.image.shape()
            && image.data().iter().zip(scene.image.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12);
        let again = generate_scene(&SyntheticSceneSpec {
            pedestrians: 1,
            cyclists: 1,
            ..SyntheticSceneSpec::default()
        })?;
        Ok(calib_ok && labels_ok && velodyne_ok && ppm_ok && again == scene)
    };
    match run() {
        Ok(ok) => CheckRow::holds("kitti", "calib_label_velodyne_ppm_round_trips", ok, "synthetic scene"),
        Err(e) => CheckRow::errored("kitti", "calib_label_velodyne_ppm_round_trips", e),
    }
}

/// Loads `path` into a model built from `config`, or round-trips a fresh model when no path is given.
pub fn checkpoint_check(config: &PipelineConfig, path: Option<&std::path::Path>) -> CheckRow {
    let run = || -> fusiondet::Result<String> {
        let mut det = Detector::new(config.clone(), 0)?;
        match path {
            Some(p) => {
                let bytes = std::fs::read(p)?;
                let store = read_checkpoint(bytes.as_slice())?;
                det.store.load_from(&store)?;
                Ok(format!("{} loaded", p.display()))
            }
            None => {
                let mut bytes = Vec::new();
                write_checkpoint(&det.store, &mut bytes)?;
                let back = read_checkpoint(bytes.as_slice())?;
                if back != det.store {
                    return Err(fusiondet::Error::Format("round trip changed the parameters".into()));
                }
                Ok(format!("{} tensors round-tripped", back.len()))
            }
        }
    };
    match run() {
        Ok(detail) => CheckRow::holds("tensor", "checkpoint", true, detail),
        Err(e) => CheckRow::errored("tensor", "checkpoint", e),
    }
}

pub fn null_optimizer_and_determinism() -> Vec<CheckRow> {
    let frame = || -> fusiondet::Result<_> {
        let config = PipelineConfig::miniature();
        let scene = generate_scene(&SyntheticSceneSpec::miniature(4))?;
        Ok((prepare_frame(&config, scene, 4)?, config))
    };
    let null = (|| -> fusiondet::Result<f64> {
        let (f, mut config) = frame()?;
        config.optimizer = AdamConfig {
            lr: 0.0,
            ..config.optimizer
        };
        let mut det = Detector::new(config, 4)?;
        let r = overfit(&mut det, std::slice::from_ref(&f), 3, |_, _| {})?;
        let first = r.losses[0].total;
        Ok(r.losses.iter().map(|l| (l.total - first).abs()).fold(0.0, f64::max))
    })();
    let repeat = (|| -> fusiondet::Result<bool> {
        let run = || -> fusiondet::Result<Vec<[f64; 8]>> {
            let (f, config) = frame()?;
            let mut det = Detector::new(config, 4)?;
            let r = overfit(&mut det, std::slice::from_ref(&f), 3, |_, _| {})?;
            Ok(r.losses.iter().map(|l| l.components()).collect())
        };
        Ok(run()? == run()?)
    })();
    vec![
        match null {
            Ok(v) => CheckRow::within("pipeline", "zero_lr_constant_loss", v, 1e-12, "3 steps"),
            Err(e) => CheckRow::errored("pipeline", "zero_lr_constant_loss", e),
        },
        match repeat {
            Ok(ok) => CheckRow::holds("pipeline", "same_seed_identical_log", ok, "3 steps"),
            Err(e) => CheckRow::errored("pipeline", "same_seed_identical_log", e),
        },
    ]
}
