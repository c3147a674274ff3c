//! Verification suites shared by the `check` and `gradcheck` commands.

pub mod gradients;
pub mod invariants;

pub use gradients::{run_gradient_suite, GradRow, Scope, GRAD_TOLERANCE};
pub use invariants::*;

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub suite: &'static str,
    pub check: String,
    /// Measured quantity (error, count or 0/1).
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckRow {
    /// Passes when `value <= tolerance`.
    pub fn within(suite: &'static str, check: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckRow {
            suite,
            check: check.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
            detail: detail.into(),
        }
    }

    /// Boolean check: value 1 on success.
    pub fn holds(suite: &'static str, check: &str, ok: bool, detail: impl Into<String>) -> Self {
        CheckRow {
            suite,
            check: check.to_string(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            pass: ok,
            detail: detail.into(),
        }
    }

    /// A check that could not run at all.
    pub fn errored(suite: &'static str, check: &str, err: impl std::fmt::Display) -> Self {
        CheckRow {
            suite,
            check: check.to_string(),
            value: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
            detail: err.to_string(),
        }
    }
}

pub const CHECK_CSV_HEADER: &str = "suite,check,value,tolerance,status,detail";

pub fn checks_to_csv(rows: &[CheckRow]) -> String {
    let mut out = format!("{CHECK_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.suite,
            r.check,
            r.value,
            r.tolerance,
            if r.pass { "pass" } else { "fail" },
            r.detail.replace([',', '\n'], ";")
        ));
    }
    out
}

/// Every invariant and oracle check at its reference size, plus the op-level gradient checks.
pub fn run_check_suite(config: &fusiondet::pipeline::PipelineConfig, checkpoint: Option<&std::path::Path>) -> Vec<CheckRow> {
    let mut rows = vec![
        fps_oracle(100),
        knn_oracle(50),
        affine_reproduction(100),
        lid_round_trip(1000),
        calibration_round_trip(10, 1000),
        nms_oracle(200),
        iou_monte_carlo(50, 1_000_000),
        iou_symmetry(100),
        ap_golden(),
        ap_edge_cases(),
        frustum_invariant(100),
        pseudo_point_identity(),
        attention_normalization(20),
        ptd_permutation_invariance(20),
        pft_symmetry(12),
        combine_modes_distinct(),
        network_shapes(&config.network),
        focal_reference(),
        depth_loss_properties(20),
        kitti_round_trips(),
        checkpoint_check(config, checkpoint),
    ];
    rows.extend(null_optimizer_and_determinism());
    match run_gradient_suite(Scope::Op) {
        Ok(grads) => {
            let mut cases: Vec<(String, f64)> = Vec::new();
            for g in grads {
                match cases.iter_mut().find(|(c, _)| *c == g.case) {
                    Some((_, worst)) => *worst = worst.max(g.rel_err),
                    None => cases.push((g.case, g.rel_err)),
                }
            }
            rows.extend(cases.into_iter().map(|(case, worst)| {
                let mut row = CheckRow::within("gradients", &format!("op_{case}"), worst, GRAD_TOLERANCE, "max relative error");
                row.pass = worst < GRAD_TOLERANCE;
                row
            }));
        }
        Err(e) => rows.push(CheckRow::errored("gradients", "op_gradients", e)),
    }
    rows
}
