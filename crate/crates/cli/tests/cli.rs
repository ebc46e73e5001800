//! End-to-end tests of the acr binary: output layout, determinism, exit
//! codes, and the documented file formats.

use std::path::Path;
use std::process::{Command, Output};

fn acr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acr"))
        .args(args)
        .env_remove("ACR_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = acr(args);
    assert!(
        out.status.success(),
        "acr {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_writes_scene_and_map_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scenes");
    ok(&["synth", "--seed", "11", "--count", "3", "--out", out.to_str().unwrap()]);
    for i in 0..3 {
        assert!(out.join(format!("scene_{i}.json")).is_file());
        assert!(out.join(format!("maps_{i}.acrt")).is_file());
    }
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 6);
}

#[test]
fn synth_count_zero_makes_empty_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("none");
    ok(&["synth", "--seed", "1", "--count", "0", "--out", out.to_str().unwrap()]);
    assert!(out.is_dir());
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn synth_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["synth", "--seed", "99", "--count", "2", "--jobs", "2", "--out", out.to_str().unwrap()]);
    }
    for name in ["scene_0.json", "scene_1.json", "maps_0.acrt", "maps_1.acrt"] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name} differs across reruns");
    }
}

#[test]
fn synth_seed_comes_from_env_when_flag_absent() {
    let dir = tempfile::tempdir().unwrap();
    let by_flag = dir.path().join("flag");
    let by_env = dir.path().join("env");
    ok(&["synth", "--seed", "321", "--count", "1", "--out", by_flag.to_str().unwrap()]);
    let out = Command::new(env!("CARGO_BIN_EXE_acr"))
        .args(["synth", "--count", "1", "--out", by_env.to_str().unwrap()])
        .env("ACR_SEED", "321")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(read(&by_flag.join("scene_0.json")), read(&by_env.join("scene_0.json")));
}

#[test]
fn aggregate_recovers_scene_parameters_from_oracle_maps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    ok(&["synth", "--seed", "42", "--count", "1", "--out", out.to_str().unwrap()]);
    let agg_path = dir.path().join("agg.json");
    ok(&[
        "aggregate",
        "--maps",
        out.join("maps_0.acrt").to_str().unwrap(),
        "--out",
        agg_path.to_str().unwrap(),
    ]);
    let agg = json(&agg_path);
    let scene = json(&out.join("scene_0.json"));
    for side in ["left", "right"] {
        let present = agg[side]["present"].as_bool().unwrap();
        assert_eq!(present, scene.get(side).is_some(), "{side} presence");
        if !present {
            continue;
        }
        for field in ["pose6d", "shape", "camera"] {
            let gt = scene[side][field].as_array().unwrap();
            let got = agg[side]["params"][field].as_array().unwrap();
            assert_eq!(gt.len(), got.len());
            for (a, b) in gt.iter().zip(got) {
                let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
                assert!((a - b).abs() < 1e-4, "{side}.{field}: {a} vs {b}");
            }
        }
    }
    assert!(agg["lambda"].as_f64().unwrap() >= 0.0);
}

#[test]
fn aggregate_lambda_zero_for_single_and_separated_hands() {
    let dir = tempfile::tempdir().unwrap();

    let single_cfg = dir.path().join("single.json");
    std::fs::write(&single_cfg, r#"{"two_hand_prob": 0.0, "truncation_prob": 0.0}"#).unwrap();
    let single = dir.path().join("single");
    ok(&[
        "synth", "--seed", "31", "--count", "1",
        "--config", single_cfg.to_str().unwrap(),
        "--out", single.to_str().unwrap(),
    ]);
    let res = ok(&["aggregate", "--maps", single.join("maps_0.acrt").to_str().unwrap()]);
    let agg: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(agg["lambda"].as_f64().unwrap(), 0.0, "single hand must not interact");

    // two hands placed beyond the interaction field: no interaction, and the
    // disentangled centers equal the raw centers
    let far_cfg = dir.path().join("far.json");
    std::fs::write(
        &far_cfg,
        r#"{"two_hand_prob": 1.0, "interaction_prob": 0.0, "truncation_prob": 0.0}"#,
    )
    .unwrap();
    let far = dir.path().join("far");
    ok(&[
        "synth", "--seed", "32", "--count", "1",
        "--config", far_cfg.to_str().unwrap(),
        "--out", far.to_str().unwrap(),
    ]);
    let res = ok(&["aggregate", "--maps", far.join("maps_0.acrt").to_str().unwrap()]);
    let agg: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert_eq!(agg["lambda"].as_f64().unwrap(), 0.0, "separated hands must not interact");
    for side in ["left", "right"] {
        assert_eq!(agg[side]["center"], agg[side]["center_disentangled"], "{side} center moved");
    }
}

#[test]
fn aggregate_without_out_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    ok(&["synth", "--seed", "5", "--count", "1", "--out", out.to_str().unwrap()]);
    let res = ok(&["aggregate", "--maps", out.join("maps_0.acrt").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).expect("stdout is JSON");
    assert!(v.get("lambda").is_some());
}

#[test]
fn aggregate_rejects_malformed_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.acrt");
    std::fs::write(&bad, b"not a tensor").unwrap();
    let out = acr(&["aggregate", "--maps", bad.to_str().unwrap()]);
    assert!(!out.status.success());
}

fn synth_single_hand_scene(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"two_hand_prob": 0.0, "truncation_prob": 0.0, "occlusion_prob": 0.0}"#)
        .unwrap();
    let out = dir.join("scene");
    ok(&[
        "synth", "--seed", "17", "--count", "1",
        "--config", cfg.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    out.join("scene_0.json")
}

#[test]
fn fit_zero_noise_stays_at_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_single_hand_scene(dir.path());
    let out = dir.path().join("fit");
    ok(&[
        "fit", "--scene", scene.to_str().unwrap(),
        "--noise", "0", "--out", out.to_str().unwrap(),
    ]);
    let fitted = json(&out.join("fitted.json"));
    assert!(fitted["converged"].as_bool().unwrap());
    let metrics = json(&out.join("metrics.json"));
    assert!(metrics["final"]["mean_mpjpe_mm"].as_f64().unwrap() < 1e-6);
}

#[test]
fn fit_recovers_from_noise_and_traces_monotonically() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_single_hand_scene(dir.path());
    let out = dir.path().join("fit");
    ok(&[
        "fit", "--scene", scene.to_str().unwrap(),
        "--noise", "0.05", "--seed", "3", "--out", out.to_str().unwrap(),
    ]);

    let metrics = json(&out.join("metrics.json"));
    let initial = metrics["initial"]["mean_mpjpe_mm"].as_f64().unwrap();
    let final_ = metrics["final"]["mean_mpjpe_mm"].as_f64().unwrap();
    assert!(initial > 0.1, "perturbation should move the start: {initial}");
    assert!(final_ < 0.1 * initial, "fit barely improved: {initial} -> {final_}");
    for key in ["mean_pa_mpjpe_mm", "mean_mpvpe_mm", "mean_pa_mpvpe_mm"] {
        assert!(metrics["final"][key].as_f64().unwrap().is_finite());
    }

    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("iter,total,"));
    let mut prev_iter: Option<i64> = None;
    let mut prev_total = f64::INFINITY;
    for line in lines {
        let mut cells = line.split(',');
        let iter: i64 = cells.next().unwrap().parse().unwrap();
        let total: f64 = cells.next().unwrap().parse().unwrap();
        if let Some(p) = prev_iter {
            assert!(iter > p, "iter column not strictly increasing");
        }
        assert!(total <= prev_total, "total loss increased");
        prev_iter = Some(iter);
        prev_total = total;
    }

    // the fitted file round-trips through eval
    let eval = ok(&[
        "eval",
        "--pred", out.join("fitted.json").to_str().unwrap(),
        "--gt", scene.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let via_eval = report["mean_mpjpe_mm"].as_f64().unwrap();
    assert!((via_eval - final_).abs() < 1e-9);
}

#[test]
fn fit_rejects_negative_noise() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_single_hand_scene(dir.path());
    let out = acr(&[
        "fit", "--scene", scene.to_str().unwrap(),
        "--noise", "-0.5", "--out", dir.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn export_obj_round_trips_and_heatmap_peaks_at_255() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    ok(&["synth", "--seed", "42", "--count", "1", "--out", out.to_str().unwrap()]);
    let scene_path = out.join("scene_0.json");
    let objdir = dir.path().join("obj");
    let pgmdir = dir.path().join("pgm");
    ok(&[
        "export", "--scene", scene_path.to_str().unwrap(),
        "--obj", objdir.to_str().unwrap(),
        "--heatmap", pgmdir.to_str().unwrap(),
    ]);

    let rig = acr_core::rig::HandRig::toy();
    let scene = json(&scene_path);
    for side in ["left", "right"] {
        let obj = objdir.join(format!("{side}.obj"));
        let pgm = pgmdir.join(format!("center_{side}.pgm"));
        if scene.get(side).is_none() {
            assert!(!obj.exists());
            continue;
        }
        let params: acr_core::hand::HandParams =
            serde_json::from_value(scene[side].clone()).unwrap();
        let mesh = acr_core::hand::skin_mesh(&rig, &params).unwrap();
        let (verts, faces) = acr_core::export::parse_obj(&obj).unwrap();
        assert_eq!(verts.len(), mesh.len(), "{side} vertex count");
        assert_eq!(faces.len(), rig.faces().len(), "{side} face count");
        for (p, q) in verts.iter().zip(&mesh) {
            for c in 0..3 {
                assert_eq!(p[c], q[c] as f32, "{side} vertex differs beyond f32");
            }
        }

        let bytes = read(&pgm);
        let mut parts = bytes.splitn(4, |&b| b == b'\n');
        assert_eq!(parts.next().unwrap(), b"P5");
        let dims = String::from_utf8(parts.next().unwrap().to_vec()).unwrap();
        assert_eq!(parts.next().unwrap(), b"255");
        let pixels = parts.next().unwrap();
        let (w, h) = dims.split_once(' ').unwrap();
        let n: usize = w.parse::<usize>().unwrap() * h.parse::<usize>().unwrap();
        assert_eq!(pixels.len(), n);
        assert_eq!(*pixels.iter().max().unwrap(), 255u8, "heatmap peak");
    }
}

#[test]
fn export_requires_a_target() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synth_single_hand_scene(dir.path());
    let out = acr(&["export", "--scene", scene.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn eval_of_ground_truth_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    ok(&["synth", "--seed", "8", "--count", "1", "--out", out.to_str().unwrap()]);
    let scene = out.join("scene_0.json");
    let res = ok(&["eval", "--pred", scene.to_str().unwrap(), "--gt", scene.to_str().unwrap()]);
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(report["mean_mpjpe_mm"].as_f64().unwrap() < 1e-9);
    assert!(report["mean_mpvpe_mm"].as_f64().unwrap() < 1e-9);
    assert!(report["mean_pa_mpjpe_mm"].as_f64().unwrap() < 1e-9);
    assert!(report["mean_pa_mpvpe_mm"].as_f64().unwrap() < 1e-9);
}

#[test]
fn eval_pa_metrics_ignore_a_rigidly_rotated_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = synth_single_hand_scene(dir.path());
    let mut scene = json(&scene_path);
    let side = if scene.get("left").is_some() { "left" } else { "right" };

    // swap the root rotation: the whole hand rotates rigidly, so aligned
    // metrics must vanish while the root-aligned ones do not
    let pose = scene[side]["pose6d"].as_array_mut().unwrap();
    let rotated = [0.96, 0.28, 0.0, -0.28, 0.96, 0.0];
    for (i, v) in rotated.iter().enumerate() {
        pose[i] = serde_json::json!(v);
    }
    let pred_path = dir.path().join("pred.json");
    std::fs::write(&pred_path, serde_json::to_string(&scene).unwrap()).unwrap();

    let res = ok(&[
        "eval",
        "--pred", pred_path.to_str().unwrap(),
        "--gt", scene_path.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(report["mean_mpjpe_mm"].as_f64().unwrap() > 1e-3, "rotation should move joints");
    assert!(report["mean_pa_mpjpe_mm"].as_f64().unwrap() < 1e-6, "PA must absorb the rotation");
    assert!(report["mean_pa_mpvpe_mm"].as_f64().unwrap() < 1e-6);
}

#[test]
fn eval_rejects_presence_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let single = synth_single_hand_scene(dir.path());
    let two = dir.path().join("two");
    let cfg = dir.path().join("two.json");
    std::fs::write(&cfg, r#"{"two_hand_prob": 1.0, "truncation_prob": 0.0}"#).unwrap();
    ok(&[
        "synth", "--seed", "2", "--count", "1",
        "--config", cfg.to_str().unwrap(),
        "--out", two.to_str().unwrap(),
    ]);
    let two_scene = two.join("scene_0.json");
    let out = acr(&["eval", "--pred", single.to_str().unwrap(), "--gt", two_scene.to_str().unwrap()]);
    assert!(!out.status.success());
    let out = acr(&["eval", "--pred", two_scene.to_str().unwrap(), "--gt", single.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn missing_input_files_exit_nonzero() {
    let out = acr(&["fit", "--scene", "/nonexistent/scene.json", "--out", "/tmp/acr-nope"]);
    assert!(!out.status.success());
    let out = acr(&["eval", "--pred", "/nonexistent/p.json", "--gt", "/nonexistent/g.json"]);
    assert!(!out.status.success());
}
