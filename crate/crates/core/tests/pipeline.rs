use fusiondet::kitti::{generate_scene, SyntheticSceneSpec};
use fusiondet::pipeline::{overfit, prepare_frame, Detector, Frame, PipelineConfig};
use fusiondet::tensor::{gradcheck, AdamConfig, Rng, Session};

fn miniature(seed: u64) -> (Detector, Frame) {
    let config = PipelineConfig::miniature();
    let scene = generate_scene(&SyntheticSceneSpec::miniature(seed)).unwrap();
    let frame = prepare_frame(&config, scene, seed).unwrap();
    (Detector::new(config, seed).unwrap(), frame)
}

#[test]
fn miniature_frame_is_well_formed() {
    let (det, frame) = miniature(0);
    assert_eq!(frame.raw_coords.len(), 32);
    assert_eq!(frame.raw_feats.shape(), &[32, 4]);
    assert!(frame.selection.num_foreground > 0);
    assert!(!frame.depth_targets.is_empty());
    let mut s = Session::new(&det.store);
    let fwd = det.forward(&mut s, &frame, None).unwrap();
    assert_eq!(fwd.pseudo.len(), 16);
    assert_eq!(s.g.value(fwd.network.feats).shape(), &[32, det.net.output_channels()]);
}

#[test]
fn total_loss_gradients_with_frozen_routing() {
    let (mut det, frame) = miniature(1);
    let mut rng = Rng::new(6);
    let ids: Vec<_> = det.store.ids().collect();
    for id in ids {
        det.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.uniform(-0.05, 0.05));
    }
    let (pseudo, targets) = {
        let mut s = Session::new(&det.store);
        let fwd = det.forward(&mut s, &frame, None).unwrap();
        let t = det.targets(&s, &frame, &fwd).unwrap();
        (fwd.pseudo, t)
    };
    let report = gradcheck(
        &det.store,
        |s| {
            let fwd = det.forward(s, &frame, Some(&pseudo))?;
            Ok(det.loss(s, &fwd, &frame, &targets)?.total)
        },
        Some(3),
        &mut Rng::new(5),
    )
    .unwrap();
    let worst = report.worst().unwrap();
    assert!(report.passes(1e-4), "{} rel err {}", worst.name, worst.rel_err);
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let (mut det, frame) = miniature(2);
    det.config.optimizer = AdamConfig {
        lr: 0.0,
        ..det.config.optimizer
    };
    let report = overfit(&mut det, std::slice::from_ref(&frame), 4, |_, _| {}).unwrap();
    let first = report.losses[0].total;
    assert!(report.losses.iter().all(|l| (l.total - first).abs() <= 1e-12));
}

#[test]
fn training_is_seed_deterministic() {
    let run = || {
        let (mut det, frame) = miniature(3);
        let mut log = Vec::new();
        overfit(&mut det, std::slice::from_ref(&frame), 5, |step, v| log.push((step, v.components()))).unwrap();
        (log, det.store)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert!(a.last().unwrap().1[0] < a[0].1[0]);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = PipelineConfig::miniature();
    c.network.raw_in_channels = 3;
    assert!(c.validate().is_err());
    let mut c = PipelineConfig::miniature();
    c.foreground_points = 8;
    assert!(c.validate().is_err());
    let mut c = PipelineConfig::miniature();
    c.loss.rcnn = 0.5;
    assert!(Detector::new(c, 0).is_err());
}
