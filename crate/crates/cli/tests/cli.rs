use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fusiondet::kitti::SyntheticSceneSpec;
use fusiondet::pipeline::PipelineConfig;
use fusiondet_cli::manifest::{hash_file, Manifest, MANIFEST_FILE};
use fusiondet_cli::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fusiondet"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// A config file sized for fast runs.
fn miniature_config(dir: &Path) -> PathBuf {
    let config = RunConfig {
        pipeline: PipelineConfig::miniature(),
        scene: SyntheticSceneSpec::miniature(3),
        ..RunConfig::default()
    };
    let path = dir.join("mini.toml");
    std::fs::write(&path, config.to_toml().unwrap()).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&run(d, &["config", "--set", "pipeline.nope=1"])), 2);
    assert_eq!(code(&run(d, &["config", "--set", "train.steps=many"])), 2);
    assert_eq!(code(&run(d, &["config", "--set", "train.scenes=3"])), 2);
    std::fs::write(d.join("bad.toml"), "[pipeline]\nunknown = 1\n").unwrap();
    assert_eq!(code(&run(d, &["config", "--config", "bad.toml"])), 2);
    assert_eq!(code(&run(d, &["config", "--config", "missing.toml"])), 1);
    assert_eq!(code(&run(d, &["eval"])), 2);
    assert_eq!(code(&run(d, &["replay", "x/manifest.jsonl", "--seed", "3"])), 2);
}

#[test]
fn manifest_records_resolved_config_before_results() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = miniature_config(d);
    let o = run(d, &["config", "--config", cfg.to_str().unwrap(), "--seed", "9", "--set", "train.steps=5", "--out", "c"]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(d.join("c").join(MANIFEST_FILE)).unwrap();
    assert!(text.lines().next().unwrap().starts_with(r#"{"type":"run""#));
    let m = Manifest::parse(&text).unwrap();
    assert_eq!(m.config.seed, 9);
    assert_eq!(m.config.train.steps, 5);
    assert_eq!(m.exit_code, Some(0));
    assert_eq!(m.results, vec![("config.toml".to_string(), hash_file(&d.join("c/config.toml")).unwrap())]);
    let written = RunConfig::parse(&std::fs::read_to_string(d.join("c/config.toml")).unwrap()).unwrap();
    assert_eq!(written, m.config);
}

#[test]
fn corrupted_checkpoint_fails_the_checkpoint_check() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = miniature_config(d);
    let cfg = cfg.to_str().unwrap();
    let o = run(d, &["overfit", "--config", cfg, "--set", "train.steps=2", "--out", "fit"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let good = run(d, &["check", "--config", cfg, "--checkpoint", "fit/checkpoint.bin", "--out", "good"]);
    assert_eq!(code(&good), 0, "{}", String::from_utf8_lossy(&good.stderr));
    assert!(csv_rows(&d.join("good/checks.csv")).iter().all(|r| r[4] == "pass"));

    let mut bytes = std::fs::read(d.join("fit/checkpoint.bin")).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0xff;
    std::fs::write(d.join("flipped.bin"), &bytes).unwrap();
    std::fs::write(d.join("short.bin"), &bytes[..n / 3]).unwrap();
    for bad in ["flipped.bin", "short.bin"] {
        let o = run(d, &["check", "--config", cfg, "--checkpoint", bad, "--out", "bad"]);
        assert_eq!(code(&o), 1, "{bad}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"), "{bad}");
        let rows = csv_rows(&d.join("bad/checks.csv"));
        let failed: Vec<&str> = rows.iter().filter(|r| r[4] == "fail").map(|r| r[1].as_str()).collect();
        assert_eq!(failed, ["checkpoint"], "{bad}");
    }
}

#[test]
fn eval_of_perfect_and_empty_detections() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = run(d, &["generate", "--count", "2", "--set", "scene.pedestrians=1", "--out", "data"]);
    assert_eq!(code(&o), 0);
    std::fs::create_dir_all(d.join("perfect")).unwrap();
    std::fs::create_dir_all(d.join("empty")).unwrap();
    for entry in std::fs::read_dir(d.join("data/label_2")).unwrap() {
        let p = entry.unwrap().path();
        let scored: String = std::fs::read_to_string(&p).unwrap().lines().map(|l| format!("{l} 0.9\n")).collect();
        std::fs::write(d.join("perfect").join(p.file_name().unwrap()), scored).unwrap();
    }
    let scale = "eval.height_scale=5.859375";
    for (dets, expected) in [("perfect", 1.0), ("empty", 0.0)] {
        let o = run(d, &["eval", "--detections", dets, "--data", "data", "--set", scale, "--out", dets]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let rows = csv_rows(&d.join(dets).join("ap.csv"));
        assert_eq!(rows.len(), 3 * 2 * 4);
        for r in &rows {
            let has_gt = r[0] != "Cyclist";
            if has_gt {
                assert_eq!(r[3].parse::<f64>().unwrap(), expected, "{r:?}");
                assert_eq!(r[7], "", "{r:?}");
            } else {
                assert_eq!((r[3].as_str(), r[7].as_str()), ("NaN", "no_gt"), "{r:?}");
            }
        }
    }
}

#[test]
fn replay_reproduces_results_and_detects_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = miniature_config(d);
    let cfg = cfg.to_str().unwrap();
    for (args, out) in [
        (vec!["overfit", "--set", "train.steps=3", "--set", "train.lr_milestones=[2]"], "fit"),
        (vec!["generate", "--count", "1"], "gen"),
        (vec!["ablate", "--axes", "combine,sampling"], "abl"),
    ] {
        let mut full = args.clone();
        full.extend(["--config", cfg, "--out", out]);
        assert_eq!(code(&run(d, &full)), 0, "{out}");
        let manifest = format!("{out}/manifest.jsonl");
        let o = run(d, &["replay", &manifest]);
        assert_eq!(code(&o), 0, "{out}: {}", String::from_utf8_lossy(&o.stdout));
        for (file, sha) in Manifest::read(&d.join(&manifest)).unwrap().results {
            assert_eq!(hash_file(&d.join(out).join("replay").join(&file)).unwrap(), sha, "{out}/{file}");
        }
    }
    assert_eq!(csv_rows(&d.join("abl/ablation.csv")).len(), 6);
    assert!(d.join("abl/cells/05/manifest.jsonl").exists());
    let cell = run(d, &["replay", "abl/cells/04/manifest.jsonl"]);
    assert_eq!(code(&cell), 0);

    let o = run(d, &["check", "--config", cfg, "--checkpoint", "fit/checkpoint.bin", "--out", "chk"]);
    assert_eq!(code(&o), 0);
    std::fs::write(d.join("fit/checkpoint.bin"), b"changed").unwrap();
    let o = run(d, &["replay", "chk/manifest.jsonl"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("changed"));
}

#[test]
fn overfit_logs_every_component_per_step() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = miniature_config(d);
    let o = run(d, &["overfit", "--config", cfg.to_str().unwrap(), "--set", "train.steps=4", "--set", "pipeline.optimizer.lr=0", "--out", "z"]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&d.join("z/train_log.csv"));
    assert_eq!(rows.len(), 4 * 8);
    let totals: Vec<f64> = rows.iter().filter(|r| r[1] == "total").map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(totals.len(), 4);
    assert!(totals.iter().all(|t| (t - totals[0]).abs() <= 1e-12));
    assert!(d.join("z/checkpoint.bin").exists() && d.join("z/summary.json").exists());
}

#[test]
fn check_passes_within_two_minutes() {
    let tmp = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let o = run(tmp.path(), &["check", "--out", "c"]);
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(elapsed < 120.0, "{elapsed} s");
}
