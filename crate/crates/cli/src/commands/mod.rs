//! Command implementations. Each one writes its results through a [`Run`]
//! and returns the process exit code.

mod ablate;
mod eval;
mod replay;
mod train;

use fusiondet::kitti::{format_calib, format_labels, generate_scene, write_ppm, write_velodyne, SyntheticSceneSpec};

use crate::error::{CliError, Result};
use crate::manifest::Run;
use crate::suites::{checks_to_csv, gradients, run_check_suite, run_gradient_suite};
use crate::{Command, RunConfig};

pub use ablate::{ablation_cells, AblationCell, ABLATION_CSV_HEADER};
pub use eval::{ap_table, ApRow, AP_CSV_HEADER};
pub use replay::replay;
pub use train::{frames, PROBE_CSV_HEADER, TRAIN_LOG_HEADER};

pub(crate) fn dispatch(command: &Command, run: &Run) -> Result<i32> {
    match command {
        Command::Check { checkpoint } => check(run, checkpoint.as_deref()),
        Command::Gradcheck { scope } => {
            let rows = run_gradient_suite(*scope)?;
            run.result("gradcheck.csv", gradients::to_csv(&rows).as_bytes())?;
            let failed: Vec<String> = rows.iter().filter(|r| !r.passes()).map(|r| format!("{}/{}", r.case, r.group)).collect();
            report_failures("gradient", &failed)
        }
        Command::Overfit => train::overfit(run),
        Command::Eval {
            detections,
            data,
            checkpoint,
        } => eval::eval(run, detections.as_deref(), data.as_deref(), checkpoint.as_deref()),
        Command::Ablate { axes, steps } => ablate::ablate(run, axes, *steps),
        Command::Probe { steps } => train::probe(run, *steps),
        Command::Generate { count } => generate(run, *count),
        Command::Config => {
            run.result("config.toml", run.config.to_toml()?.as_bytes())?;
            Ok(0)
        }
        Command::Replay { .. } => Err(CliError::Config("replay cannot be nested".into())),
    }
}

fn report_failures(kind: &str, failed: &[String]) -> Result<i32> {
    if failed.is_empty() {
        return Ok(0);
    }
    for f in failed {
        eprintln!("{kind} check failed: {f}");
    }
    Ok(1)
}

fn check(run: &Run, checkpoint: Option<&std::path::Path>) -> Result<i32> {
    if let Some(p) = checkpoint {
        if p.exists() {
            run.input(p)?;
        }
    }
    let rows = run_check_suite(&run.config.pipeline, checkpoint);
    run.result("checks.csv", checks_to_csv(&rows).as_bytes())?;
    let failed: Vec<String> = rows.iter().filter(|r| !r.pass).map(|r| format!("{} ({})", r.check, r.detail)).collect();
    report_failures("invariant", &failed)
}

/// Scene `i` of a run: the configured spec reseeded with `scene.seed + offset + i`.
pub fn scene_spec(config: &RunConfig, offset: u64, i: usize) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        seed: config.scene.seed + offset + i as u64,
        ..config.scene.clone()
    }
}

fn generate(run: &Run, count: usize) -> Result<i32> {
    for i in 0..count {
        let scene = generate_scene(&scene_spec(&run.config, 0, i))?;
        let id = format!("{i:06}");
        run.result(&format!("calib/{id}.txt"), format_calib(&scene.calib).as_bytes())?;
        run.result(&format!("velodyne/{id}.bin"), &write_velodyne(&scene.points))?;
        run.result(&format!("label_2/{id}.txt"), format_labels(&scene.labels()).as_bytes())?;
        run.result(&format!("image_2/{id}.ppm"), &write_ppm(&scene.image)?)?;
    }
    Ok(0)
}
