//! End-to-end tests of the `relnav` binary: artifact layout, determinism,
//! exit codes, and the train → classify → track chain on a small viewsphere.

use std::path::Path;
use std::process::{Command, Output};

fn relnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relnav"))
        .args(args)
        .output()
        .expect("spawn relnav")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn train_small(out_dir: &Path) -> Output {
    relnav(&[
        "--seed",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
        "train",
        "--az-step",
        "45",
        "--el-step",
        "45",
        "--distance",
        "5",
        "--class-az-bin",
        "90",
        "--class-el-bin",
        "90",
        "--augment-morph",
        "1",
    ])
}

#[test]
fn train_classify_track_chain() {
    let dir = tempfile::tempdir().unwrap();
    let train_out = dir.path().join("db");
    assert_ok(&train_small(&train_out));

    // 45°/45° steps cover 8 x 4 viewsphere bands
    let kf_dir = train_out.join("keyframes");
    let n_json = std::fs::read_dir(&kf_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(".json")
        })
        .count();
    assert_eq!(n_json, 32);
    assert!(train_out.join("class_db.json").exists());
    assert!(train_out.join("manifest.json").exists());

    // classifying a training silhouette yields a well-formed ranked list
    let mask = kf_dir.join("kf_0005.pgm");
    let out = relnav(&[
        "classify",
        "--db",
        train_out.join("class_db.json").to_str().unwrap(),
        mask.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let line: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("one JSON line per mask");
    let classes = line["classes"].as_array().unwrap();
    assert!(!classes.is_empty());
    let p0 = classes[0]["p"].as_f64().unwrap();
    assert!(p0 > 0.5, "top class should dominate, got {p0}");

    // track a short constant-twist run against the trained databases
    let kf0: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(kf_dir.join("kf_0013.json")).unwrap(),
    )
    .unwrap();
    let traj = serde_json::json!({
        "version": 1,
        "initial_pose": kf0["pose"],
        "twist": [0.0, 0.0, 0.0, 0.0, 0.0, 0.02],
        "frame_rate_hz": 5.0,
        "duration_s": 2.0,
        "noise_px": 0.5,
        "outlier_fraction": 0.0,
        "confusion_rate": 0.0,
        "seed": 3,
    });
    let traj_path = dir.path().join("traj.json");
    std::fs::write(&traj_path, traj.to_string()).unwrap();
    let track_out = dir.path().join("run");
    let out = relnav(&[
        "--config",
        traj_path.to_str().unwrap(),
        "--out",
        track_out.to_str().unwrap(),
        "track",
        "--keyframes",
        kf_dir.to_str().unwrap(),
        "--class-db",
        train_out.join("class_db.json").to_str().unwrap(),
        "--steady-after",
        "1.0",
    ]);
    assert_ok(&out);
    let trace = std::fs::read_to_string(track_out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,keyframe,by_detection"));
    assert_eq!(trace.lines().count(), 12); // header + 11 frames
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(track_out.join("summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["n_frames"], 11);
    assert!(summary["fused_fraction"].as_f64().unwrap() > 0.5);
    assert!(track_out.join("errors.svg").exists());
    assert!(track_out.join("manifest.json").exists());
}

#[test]
fn train_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_ok(&train_small(&a));
    assert_ok(&train_small(&b));
    for name in ["class_db.json", "keyframes/kf_0000.json", "keyframes/kf_0000.pgm"] {
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical runs");
    }
}

#[test]
fn missing_mesh_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = relnav(&[
        "--out",
        dir.path().to_str().unwrap(),
        "train",
        "--mesh",
        "/nonexistent/mesh.obj",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh"));
}

#[test]
fn check_passes_and_perturbed_gamma_fails() {
    let out = relnav(&["check"]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
    assert!(text.contains("tolerance"), "report must list tolerances");

    let out = relnav(&["check", "--perturb-gamma", "1.01"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("FAIL process noise matrix vs Simpson quadrature"));
}

#[test]
fn mest_bench_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "version": 1,
        "n_points": 60,
        "cube_side": 1.0,
        "depth": 4.0,
        "noise_px": 1.0,
        "perturb_rot": 0.2,
        "perturb_trans": 0.3,
        "outlier_fraction": 0.2,
        "trials": 2,
        "iterations": 10,
        "seed": 5,
    });
    let config_path = dir.path().join("bench.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let out_dir = dir.path().join("bench");
    let out = relnav(&[
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "mest-bench",
    ]);
    assert_ok(&out);
    let csv = std::fs::read_to_string(out_dir.join("bench.csv")).unwrap();
    assert!(csv.starts_with("method,trial,iteration"));
    assert!(out_dir.join("bench_translation.svg").exists());
    assert!(out_dir.join("bench_rotation.svg").exists());

    // unknown fields are rejected
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version":1,"bogus":true}"#).unwrap();
    let out = relnav(&["--config", bad.to_str().unwrap(), "mest-bench"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_requires_db_or_kfold() {
    let out = relnav(&["classify", "some_mask.pgm"]);
    assert_eq!(out.status.code(), Some(2));
}
