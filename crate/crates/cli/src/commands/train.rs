use fusiondet::eval::format_detections;
use fusiondet::kitti::generate_scene;
use fusiondet::pipeline::{overfit_scheduled, prepare_frame, Detector, Frame, LossValues};
use fusiondet::tensor::{write_checkpoint, Session};
use serde::Serialize;

use super::scene_spec;
use crate::error::Result;
use crate::manifest::{sha256_hex, Run};
use crate::RunConfig;

pub const TRAIN_LOG_HEADER: &str = "step,component,value";
pub const PROBE_CSV_HEADER: &str = "output_hash,total_loss,rpn_loss,depth_loss";

/// `count` prepared frames, scene seeds starting at `scene.seed + offset`.
pub fn frames(config: &RunConfig, offset: u64, count: usize) -> Result<Vec<Frame>> {
    (0..count)
        .map(|i| {
            let scene = generate_scene(&scene_spec(config, offset, i))?;
            Ok(prepare_frame(&config.pipeline, scene, config.seed + offset + i as u64)?)
        })
        .collect()
}

#[derive(Serialize)]
struct Summary {
    steps: usize,
    scenes: usize,
    first_loss: Option<f64>,
    last_loss: Option<f64>,
    reduction: f64,
    detections: usize,
    top_score: Option<f64>,
    top_bev_iou: Option<f64>,
}

pub(super) fn overfit(run: &Run) -> Result<i32> {
    let c = &run.config;
    let frames = frames(c, 0, c.train.scenes)?;
    let mut det = Detector::new(c.pipeline.clone(), c.seed)?;
    let mut log = format!("{TRAIN_LOG_HEADER}\n");
    let base = c.pipeline.optimizer.lr;
    let report = overfit_scheduled(
        &mut det,
        &frames,
        c.train.steps,
        |step| c.train.lr_at(base, step),
        |step, v: &LossValues| {
            for (name, value) in LossValues::COMPONENTS.iter().zip(v.components()) {
                log.push_str(&format!("{},{name},{value}\n", step + 1));
            }
        },
    )?;
    run.result("train_log.csv", log.as_bytes())?;
    let mut ckpt = Vec::new();
    write_checkpoint(&det.store, &mut ckpt)?;
    run.result("checkpoint.bin", &ckpt)?;
    run.result("detections.txt", format_detections(&report.detections).as_bytes())?;
    let summary = Summary {
        steps: c.train.steps,
        scenes: frames.len(),
        first_loss: report.losses.first().map(|l| l.total),
        last_loss: report.losses.last().map(|l| l.total),
        reduction: report.reduction(),
        detections: report.detections.len(),
        top_score: report.detections.first().map(|d| d.score),
        top_bev_iou: report.top_iou,
    };
    run.result("summary.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(0)
}

/// SHA-256 over the little-endian bytes of the vote, class and box outputs.
pub(super) fn probe_row(config: &RunConfig, steps: usize) -> Result<(String, LossValues)> {
    let frames = frames(config, 0, 1)?;
    let mut det = Detector::new(config.pipeline.clone(), config.seed)?;
    if steps > 0 {
        overfit_scheduled(&mut det, &frames, steps, |step| config.train.lr_at(config.pipeline.optimizer.lr, step), |_, _| {})?;
    }
    let frame = &frames[0];
    let mut s = Session::new(&det.store);
    let fwd = det.forward(&mut s, frame, None)?;
    let mut bytes = Vec::new();
    for v in [fwd.rpn.vote_offsets, fwd.rpn.cls_logits, fwd.rpn.reg] {
        bytes.extend(s.g.value(v).data().iter().flat_map(|x| x.to_le_bytes()));
    }
    let targets = det.targets(&s, frame, &fwd)?;
    let loss = det.loss(&mut s, &fwd, frame, &targets)?;
    Ok((sha256_hex(&bytes), loss.values(&s)))
}

pub(super) fn probe(run: &Run, steps: usize) -> Result<i32> {
    let (hash, loss) = probe_row(&run.config, steps)?;
    let text = format!("{PROBE_CSV_HEADER}\n{hash},{},{},{}\n", loss.total, loss.rpn, loss.depth);
    run.result("probe.csv", text.as_bytes())?;
    Ok(0)
}

