use fusiondet::geometry::{
    bilinear_sample, bilinear_weights, farthest_point_sampling, idw_interpolate, knn_group, sq_dist, trilinear_sample,
    Calibration, LidBinning, Point3, PointSet,
};
use fusiondet::tensor::{Rng, Tensor};
use proptest::prelude::*;

fn cloud(rng: &mut Rng, n: usize) -> Vec<Point3> {
    (0..n)
        .map(|_| [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-2.0, 2.0)])
        .collect()
}

/// Greedy max-min selection recomputing every distance from scratch.
fn fps_oracle(points: &[Point3], m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = chosen.iter().map(|&c| sq_dist(p, &points[c])).fold(f64::INFINITY, f64::min);
            if d > best.1 {
                best = (i, d);
            }
        }
        chosen.push(best.0);
    }
    chosen
}

#[test]
fn fps_matches_greedy_oracle() {
    let mut rng = Rng::new(11);
    for case in 0..40 {
        let n = 5 + rng.index(60);
        let pts = cloud(&mut rng, n);
        let m = 1 + rng.index(n);
        assert_eq!(farthest_point_sampling(&pts, m, 0).unwrap(), fps_oracle(&pts, m, 0), "case {case}");
    }
}

#[test]
fn fps_with_duplicates_prefers_low_index() {
    let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
    assert_eq!(farthest_point_sampling(&pts, 3, 0).unwrap(), vec![0, 1, 2]);
}

#[test]
fn fps_rejects_oversampling() {
    assert!(farthest_point_sampling(&[[0.0; 3]], 2, 0).is_err());
}

#[test]
fn knn_matches_sort() {
    let mut rng = Rng::new(3);
    for _ in 0..30 {
        let pts = cloud(&mut rng, 40);
        let qs = cloud(&mut rng, 5);
        let k = 1 + rng.index(40);
        let got = knn_group(&qs, &pts, k).unwrap();
        for (q, g) in qs.iter().zip(&got) {
            let mut all: Vec<usize> = (0..pts.len()).collect();
            all.sort_by(|&a, &b| sq_dist(q, &pts[a]).total_cmp(&sq_dist(q, &pts[b])).then(a.cmp(&b)));
            assert_eq!(g, &all[..k].to_vec());
        }
    }
}

#[test]
fn idw_reproduces_coincident_and_constant() {
    let coords = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [3.0, 3.0, 3.0]];
    let feats = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
    let set = PointSet::new(coords, Some(feats)).unwrap();
    assert_eq!(idw_interpolate(&[1.0, 0.0, 0.0], &set, 3, 2.0).unwrap(), vec![3.0, 4.0]);

    let flat = PointSet::new(set.coords.clone(), Some(Tensor::full(&[4, 1], 2.5))).unwrap();
    let v = idw_interpolate(&[0.4, 0.7, 0.1], &flat, 3, 2.0).unwrap();
    assert!((v[0] - 2.5).abs() < 1e-12);
}

#[test]
fn bilinear_and_trilinear_reproduce_affine_fields() {
    let mut rng = Rng::new(5);
    for _ in 0..50 {
        let (h, w, d) = (3 + rng.index(5), 3 + rng.index(5), 2 + rng.index(6));
        let a: Vec<f64> = (0..4).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let grid: Vec<f64> = (0..h * w)
            .map(|i| a[0] + a[1] * (i % w) as f64 + a[2] * (i / w) as f64)
            .collect();
        let grid = Tensor::new(vec![h, w, 1], grid).unwrap();
        let (u, v) = (rng.uniform(0.0, (w - 1) as f64), rng.uniform(0.0, (h - 1) as f64));
        let (got, clamped) = bilinear_sample(&grid, u, v).unwrap();
        assert!(!clamped);
        assert!((got[0] - (a[0] + a[1] * u + a[2] * v)).abs() <= 1e-12);

        let mut vol = Vec::with_capacity(h * w * d);
        for y in 0..h {
            for x in 0..w {
                for z in 0..d {
                    vol.push(a[0] + a[1] * x as f64 + a[2] * y as f64 + a[3] * z as f64);
                }
            }
        }
        let vol = Tensor::new(vec![h, w, d, 1], vol).unwrap();
        let z = rng.uniform(0.0, (d - 1) as f64);
        let (got, _) = trilinear_sample(&vol, u, v, z).unwrap();
        assert!((got[0] - (a[0] + a[1] * u + a[2] * v + a[3] * z)).abs() <= 1e-12);
    }
}

#[test]
fn out_of_grid_samples_are_clamped_and_flagged() {
    let st = bilinear_weights(2, 2, -3.0, 0.5);
    assert!(st.clamped);
    assert!((st.weights.iter().map(|w| w.1).sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn lid_edges_match_closed_form() {
    let b = LidBinning::new(0.0, 70.4, 80).unwrap();
    let e = b.edges();
    assert_eq!(e.len(), 81);
    assert!((e[80] - 70.4).abs() < 1e-9);
    assert!((e[1] - 70.4 * 2.0 / (80.0 * 81.0)).abs() < 1e-12);
    for i in 1..80 {
        assert!(b.width(i) > b.width(i - 1));
    }
}

#[test]
fn lid_out_of_range_is_clamped() {
    let b = LidBinning::default();
    assert!(b.encode(-1.0).clamped);
    assert!(b.encode(100.0).clamped);
    assert_eq!(b.encode(100.0).bin, 79);
}

fn random_calibration(rng: &mut Rng) -> Calibration {
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
    Calibration::new(p2, r0, tr).unwrap()
}

#[test]
fn calibration_round_trips() {
    let mut rng = Rng::new(8);
    for _ in 0..10 {
        let c = random_calibration(&mut rng);
        for _ in 0..200 {
            let p = [rng.uniform(2.0, 60.0), rng.uniform(-20.0, 20.0), rng.uniform(-3.0, 2.0)];
            let q = c.camera_to_lidar(&c.lidar_to_camera(&p));
            assert!((0..3).all(|a| (p[a] - q[a]).abs() <= 1e-9));
            let (u, v, depth) = c.lidar_to_image(&p).unwrap();
            let r = c.camera_to_lidar(&c.unproject(u, v, depth));
            assert!((0..3).all(|a| (p[a] - r[a]).abs() <= 1e-9), "{p:?} vs {r:?}");
        }
    }
}

#[test]
fn projection_behind_camera_is_an_error() {
    let c = Calibration::identity();
    assert!(c.project_to_image(&[0.0, 0.0, -1.0]).is_err());
}

proptest! {
    #[test]
    fn lid_round_trip(depth in 0.0f64..70.4) {
        let b = LidBinning::default();
        let code = b.encode(depth);
        prop_assert!(!code.clamped);
        prop_assert!((0.0..1.0).contains(&code.residual));
        prop_assert!((b.decode(code.bin, code.residual) - depth).abs() <= 1e-9);
    }

    #[test]
    fn lid_continuous_index_is_monotone(a in 0.0f64..70.0, delta in 1e-6f64..1.0) {
        let b = LidBinning::default();
        prop_assert!(b.continuous_index(a + delta) >= b.continuous_index(a));
    }

    #[test]
    fn idw_weights_form_partition_of_unity(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let coords = cloud(&mut rng, 12);
        let feats = Tensor::full(&[12, 1], 1.0);
        let set = PointSet::new(coords, Some(feats)).unwrap();
        let q = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), 0.0];
        let v = idw_interpolate(&q, &set, 3, 2.0).unwrap();
        prop_assert!((v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fps_prefix_is_stable(seed in 0u64..500, m in 1usize..20) {
        let mut rng = Rng::new(seed);
        let pts = cloud(&mut rng, 25);
        let long = farthest_point_sampling(&pts, 20, 0).unwrap();
        let short = farthest_point_sampling(&pts, m, 0).unwrap();
        prop_assert_eq!(&long[..m], &short[..]);
    }
}
