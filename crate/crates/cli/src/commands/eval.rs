use std::path::Path;

use fusiondet::eval::{
    average_precision_40, format_detections, Difficulty, EvalDetection, EvalGroundTruth, ObjectClass, OverlapMetric,
};
use fusiondet::kitti::{parse_calib, parse_labels};
use fusiondet::pipeline::Detector;
use fusiondet::tensor::read_checkpoint;

use super::train::frames;
use crate::config::KITTI_IMAGE_HEIGHT;
use crate::error::{CliError, Result};
use crate::manifest::Run;

pub const AP_CSV_HEADER: &str = "class,metric,difficulty,ap,num_gt,tp,fp,flag";

/// One cell of the AP table. `difficulty` is `mean` for the per-class average
/// over the difficulties that have ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ApRow {
    pub class: ObjectClass,
    pub metric: &'static str,
    pub difficulty: &'static str,
    /// NaN when no ground truth exists for the cell.
    pub ap: f64,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

impl ApRow {
    pub fn flag(&self) -> &'static str {
        if self.ap.is_nan() {
            "no_gt"
        } else {
            ""
        }
    }
}

/// AP-40 for every class, overlap metric and difficulty, at each class's IoU threshold.
pub fn ap_table(dets: &[EvalDetection], gts: &[EvalGroundTruth]) -> fusiondet::Result<Vec<ApRow>> {
    let mut rows = Vec::new();
    for class in ObjectClass::ALL {
        for (metric, name) in [(OverlapMetric::Bev, "bev"), (OverlapMetric::ThreeD, "3d")] {
            let mut defined = Vec::new();
            for difficulty in Difficulty::ALL {
                let r = average_precision_40(dets, gts, class, metric, difficulty, class.ap_iou_threshold())?;
                if !r.undefined {
                    defined.push(r.ap);
                }
                rows.push(ApRow {
                    class,
                    metric: name,
                    difficulty: difficulty.name(),
                    ap: if r.undefined { f64::NAN } else { r.ap },
                    num_gt: r.num_gt,
                    tp: r.true_positives,
                    fp: r.false_positives,
                });
            }
            let mean = if defined.is_empty() {
                f64::NAN
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            };
            rows.push(ApRow {
                class,
                metric: name,
                difficulty: "mean",
                ap: mean,
                num_gt: 0,
                tp: 0,
                fp: 0,
            });
        }
    }
    Ok(rows)
}

fn to_csv(rows: &[ApRow]) -> String {
    let mut out = format!("{AP_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.class,
            r.metric,
            r.difficulty,
            r.ap,
            r.num_gt,
            r.tp,
            r.fp,
            r.flag()
        ));
    }
    out
}

fn read_text(run: &Run, path: &Path) -> Result<String> {
    run.input(path)?;
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Ground truth from `data/label_2` and `data/calib`; detections from same-named
/// files under `detections` (a missing file means no detections for that frame).
fn from_directories(run: &Run, detections: &Path, data: &Path) -> Result<(Vec<EvalDetection>, Vec<EvalGroundTruth>)> {
    let label_dir = data.join("label_2");
    let mut stems: Vec<String> = std::fs::read_dir(&label_dir)
        .map_err(|e| CliError::io(&label_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    let (mut dets, mut gts) = (Vec::new(), Vec::new());
    for (frame, stem) in stems.iter().enumerate() {
        let calib = parse_calib(&read_text(run, &data.join("calib").join(format!("{stem}.txt")))?)?;
        for label in parse_labels(&read_text(run, &label_dir.join(format!("{stem}.txt")))?)? {
            gts.extend(label.ground_truth(frame, &calib)?);
        }
        let det_path = detections.join(format!("{stem}.txt"));
        if !det_path.exists() {
            continue;
        }
        for label in parse_labels(&read_text(run, &det_path)?)? {
            let Some(class) = label.class() else { continue };
            let score = label
                .score
                .ok_or_else(|| CliError::Check(format!("{}: detection without a score", det_path.display())))?;
            dets.push(EvalDetection {
                frame,
                class,
                bbox: label.to_lidar_box(&calib)?,
                score,
            });
        }
    }
    Ok((dets, gts))
}

fn from_checkpoint(run: &Run, checkpoint: &Path) -> Result<(Vec<EvalDetection>, Vec<EvalGroundTruth>)> {
    run.input(checkpoint)?;
    let c = &run.config;
    let bytes = std::fs::read(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let mut det = Detector::new(c.pipeline.clone(), c.seed)?;
    det.store.load_from(&read_checkpoint(bytes.as_slice())?)?;
    let (mut dets, mut gts) = (Vec::new(), Vec::new());
    for (frame, f) in frames(c, c.eval.seed_offset, c.eval.scenes)?.iter().enumerate() {
        let found = det.detect(f)?;
        run.result(&format!("detections/{frame:06}.txt"), format_detections(&found).as_bytes())?;
        dets.extend(found.iter().map(|d| EvalDetection {
            frame,
            class: d.class,
            bbox: d.bbox,
            score: d.score,
        }));
        gts.extend(f.scene.ground_truth(frame));
    }
    Ok((dets, gts))
}

pub(super) fn eval(run: &Run, detections: Option<&Path>, data: Option<&Path>, checkpoint: Option<&Path>) -> Result<i32> {
    let (dets, gts) = match (detections, data, checkpoint) {
        (Some(d), Some(data), None) => from_directories(run, d, data)?,
        (None, _, Some(c)) => from_checkpoint(run, c)?,
        _ => return Err(CliError::Config("eval needs --detections with --data, or --checkpoint".into())),
    };
    let c = &run.config;
    let scale = c.eval.height_scale.unwrap_or(if checkpoint.is_some() {
        KITTI_IMAGE_HEIGHT / c.scene.image_height as f64
    } else {
        1.0
    });
    let gts: Vec<EvalGroundTruth> = gts
        .into_iter()
        .map(|g| EvalGroundTruth {
            bbox_height: g.bbox_height * scale,
            ..g
        })
        .collect();
    run.result("ap.csv", to_csv(&ap_table(&dets, &gts)?).as_bytes())?;
    Ok(0)
}
