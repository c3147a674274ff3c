//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::time::Instant;

use fusiondet_cli::manifest::MANIFEST_FILE;
use fusiondet_cli::suites::{self, CheckRow, GRAD_TOLERANCE};
use fusiondet_cli::{commands, execute, Axis, Command, RunConfig, Scope};

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn rows_outcome(rows: &[CheckRow]) -> Outcome {
    let detail = rows
        .iter()
        .map(|r| format!("{} {:.3e} (tol {:.0e})", r.check, r.value, r.tolerance))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome {
        pass: rows.iter().all(|r| r.pass),
        detail,
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let rows = match suites::run_gradient_suite(Scope::All) {
        Ok(rows) => rows,
        Err(e) => return Outcome { pass: false, detail: e.to_string() },
    };
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().fold(0.0f64, |m, r| m.max(r.rel_err));
    let required = ["ptd_", "ptu_", "fp_two_stacked", "pft_", "depth_loss", "rpn_head_and_loss", "two_stream_miniature", "pipeline_total_loss"];
    let missing: Vec<&str> = required.iter().copied().filter(|p| !rows.iter().any(|r| r.case.starts_with(p))).collect();
    let failing: Vec<String> = rows.iter().filter(|r| !r.passes()).map(|r| format!("{}/{}", r.case, r.group)).collect();
    Outcome {
        pass: failing.is_empty() && missing.is_empty() && rows.iter().all(|r| r.checked > 0) && secs < 300.0,
        detail: format!(
            "{} groups, max rel err {worst:.2e} < {GRAD_TOLERANCE:.0e}, {secs:.1} s < 300 s; failing {failing:?}; missing {missing:?}",
            rows.len()
        ),
    }
}

fn oracles() -> Outcome {
    rows_outcome(&[
        suites::fps_oracle(100),
        suites::nms_oracle(200),
        suites::iou_monte_carlo(50, 1_000_000),
        suites::affine_reproduction(100),
    ])
}

fn frustum() -> Outcome {
    rows_outcome(&[suites::frustum_invariant(100)])
}

fn round_trips() -> Outcome {
    rows_outcome(&[
        suites::lid_round_trip(1000),
        suites::calibration_round_trip(10, 1000),
        suites::pseudo_point_identity(),
    ])
}

fn overfit(out: &Path) -> Outcome {
    let config = RunConfig::default();
    let setup = format!(
        "{} cars, {} steps, lr {}",
        config.scene.cars, config.train.steps, config.pipeline.optimizer.lr
    );
    let start = Instant::now();
    let result = execute(&Command::Overfit, &config, out);
    let secs = start.elapsed().as_secs_f64();
    let summary = result.ok().and_then(|_| std::fs::read_to_string(out.join("summary.json")).ok());
    let Some(summary) = summary.and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok()) else {
        return Outcome { pass: false, detail: "overfit run failed".into() };
    };
    let reduction = summary["reduction"].as_f64().unwrap_or(f64::NAN);
    let iou = summary["top_bev_iou"].as_f64().unwrap_or(f64::NAN);
    let ok = config.scene.cars == 2 && config.train.steps == 200 && config.pipeline.optimizer.lr == 0.01;
    Outcome {
        pass: ok && reduction >= 0.5 && iou >= 0.5 && secs < 600.0,
        detail: format!("{setup}: loss drop {:.1}% >= 50%, top BEV IoU {iou:.3} >= 0.5, {secs:.1} s < 600 s", 100.0 * reduction),
    }
}

fn ap_golden() -> Outcome {
    rows_outcome(&[suites::ap_golden()])
}

fn hashes(dir: &Path) -> Option<Vec<String>> {
    let text = std::fs::read_to_string(dir.join("ablation.csv")).ok()?;
    let header: Vec<&str> = commands::ABLATION_CSV_HEADER.split(',').collect();
    let col = header.iter().position(|h| *h == "output_hash")?;
    text.lines().skip(1).map(|l| l.split(',').nth(col).map(str::to_string)).collect()
}

fn ablation(out: &Path) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (axis, expected) in [(Axis::Combine, 3), (Axis::Attention, 4)] {
        let dir = out.join(format!("{axis:?}").to_lowercase());
        let command = Command::Ablate { axes: vec![axis], steps: 0 };
        let code = execute(&command, &RunConfig::default(), &dir);
        let h = hashes(&dir).unwrap_or_default();
        let mut unique = h.clone();
        unique.sort();
        unique.dedup();
        let ok = matches!(code, Ok(0)) && h.len() == expected && unique.len() == expected;
        pass &= ok;
        detail.push(format!("{axis:?}: {} runs, {} distinct hashes", h.len(), unique.len()));
    }
    Outcome { pass, detail: detail.join("; ") }
}

fn determinism(out: &Path) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for run in ["overfit", "ablation/combine"] {
        let manifest = out.join(run).join(MANIFEST_FILE);
        let code = commands::replay(&manifest, Some(&out.join("replay").join(run)));
        pass &= matches!(code, Ok(0));
        detail.push(format!("{run}: {}", if matches!(code, Ok(0)) { "identical" } else { "differs" }));
    }
    Outcome { pass, detail: detail.join("; ") }
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let out = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("gradient suite", Box::new(gradients)),
        ("geometric and NMS oracles", Box::new(oracles)),
        ("frustum depth-sum invariant", Box::new(frustum)),
        ("round trips", Box::new(round_trips)),
        ("micro-overfit", Box::new(|| overfit(&out.join("overfit")))),
        ("AP-40 golden example", Box::new(ap_golden)),
        ("ablation liveness", Box::new(|| ablation(&out.join("ablation")))),
        ("replay determinism", Box::new(|| determinism(out))),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failures += usize::from(!o.pass);
        println!(
            "{} [{}] {name} ({:.1} s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
