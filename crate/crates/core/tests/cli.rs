//! End-to-end runs of the `mvlk` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mvlk::geometry::{Point3, PointCloud};
use mvlk::io::{calibration_from_records, encode_frame, read_frame, read_jsonl, write_frame};

fn mvlk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlk")).args(args).env_remove("MVLK_THREADS").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_SPEC: &str = r#"{"cars": 2, "pedestrians": 4, "cyclists": 1, "parked_vehicles": 1, "frame_count": 3}"#;

fn generate(dir: &Path) {
    let spec = dir.join("spec_in.json");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let out = mvlk(&["generate", "--spec", p(&spec), "--seed", "4", "--out", p(&dir.join("scene"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_fuse_detect_track_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    let scene = d.join("scene");
    let fused = d.join("fused");
    let mut args: Vec<String> = vec!["fuse".into(), "--calib".into(), p(&scene.join("calibration_truth.jsonl")).into()];
    for n in 0..4 {
        args.extend(["--frames".into(), p(&scene.join(format!("node{n}"))).into()]);
    }
    args.extend(["--out".into(), p(&fused).into()]);
    assert_eq!(code(&mvlk(&args.iter().map(String::as_str).collect::<Vec<_>>())), 0);
    let fused_frame = read_frame(&fused.join("frame_00000.mvlc")).unwrap();
    let per_node: usize = (0..4).map(|n| read_frame(&scene.join(format!("node{n}/frame_00000.mvlc"))).unwrap().len()).sum();
    assert_eq!(fused_frame.len(), per_node);

    let det = d.join("det.jsonl");
    assert_eq!(code(&mvlk(&["detect", "--input", p(&fused), "--out", p(&det)])), 0);
    let annotations = scene.join("annotations.jsonl");
    let out = mvlk(&["eval-det", "--detections", p(&det), "--ground-truth", p(&annotations)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("mAP:"));

    let tracks = d.join("tracks.jsonl");
    assert_eq!(code(&mvlk(&["track", "--detections", p(&det), "--out", p(&tracks)])), 0);
    let out = mvlk(&["eval-mot", "--hypotheses", p(&tracks), "--ground-truth", p(&annotations)]);
    assert_eq!(code(&out), 0);

    let out = mvlk(&["eval-mot", "--hypotheses", p(&annotations), "--ground-truth", p(&annotations)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("MOTA: 1.0000"), "{}", stdout(&out));
}

#[test]
fn calibrate_recovers_known_extrinsics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    let scene = d.join("scene");
    let calib = d.join("calib.jsonl");
    let mut args: Vec<String> = ["calibrate", "--reference", p(&scene.join("reference.mvlc")), "--out", p(&calib), "--accumulate-s", "0.1"]
        .map(String::from)
        .to_vec();
    for n in 0..4 {
        args.extend(["--node-dir".into(), p(&scene.join(format!("node{n}"))).into()]);
    }
    let out = mvlk(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let found = calibration_from_records(&read_jsonl(&calib).unwrap()).unwrap();
    let truth = calibration_from_records(&read_jsonl(&scene.join("calibration_truth.jsonl")).unwrap()).unwrap();
    assert_eq!(found.len(), 4);
    for (node, t) in &truth {
        let f = &found[node];
        assert!(f.rotation_error_deg(t) < 1.0, "node {node}: {} deg", f.rotation_error_deg(t));
        assert!(f.translation_error(t) < 0.05, "node {node}: {} m", f.translation_error(t));
    }
}

#[test]
fn calibration_against_an_unrelated_reference_is_an_algorithmic_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let node = d.join("node0");
    fs::create_dir(&node).unwrap();
    let grid: Vec<Point3> = (0..40).flat_map(|i| (0..40).map(move |j| Point3::new(i as f64 * 0.5, j as f64 * 0.5, 0.0))).collect();
    write_frame(&node.join("f.mvlc"), &PointCloud::from_points(grid)).unwrap();
    let line: Vec<Point3> = (0..400).map(|i| Point3::new(i as f64 * 0.25, 0.0, 30.0)).collect();
    let reference = d.join("ref.mvlc");
    write_frame(&reference, &PointCloud::from_points(line)).unwrap();
    let out = mvlk(&["calibrate", "--node-dir", p(&node), "--reference", p(&reference), "--out", p(&d.join("c.jsonl"))]);
    assert_eq!(code(&out), 3, "{}", stdout(&out));
}

#[test]
fn malformed_inputs_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cloud = PointCloud::from_points((0..10).map(|i| Point3::new(i as f64, 1.0, 2.0)).collect());
    let good = encode_frame(&cloud).unwrap();
    let out_xyz = d.join("o.xyz");

    let cases: [(&str, Vec<u8>); 3] = [
        ("magic.mvlc", [b"XXXX".as_slice(), &good[4..]].concat()),
        ("truncated.mvlc", good[..good.len() - 12].to_vec()),
        ("version.mvlc", [&good[..4], &[9u8, 0][..], &good[6..]].concat()),
    ];
    for (name, bytes) in cases {
        let path = d.join(name);
        fs::write(&path, bytes).unwrap();
        let out = mvlk(&["convert", "--input", p(&path), "--output", p(&out_xyz)]);
        assert_eq!(code(&out), 2, "{name}");
    }
    assert_eq!(code(&mvlk(&["convert", "--input", p(&d.join("missing.mvlc")), "--output", p(&out_xyz)])), 2);

    let det = d.join("det.jsonl");
    fs::write(&det, "{\"frame\": 0, \"class\": \"Car\"}\n").unwrap();
    assert_eq!(code(&mvlk(&["track", "--detections", p(&det), "--out", p(&d.join("t.jsonl"))])), 2);

    let bad_cfg = d.join("bad.json");
    fs::write(&bad_cfg, "{\"threshold\": 1.5, \"metric\": \"iou3d\"}").unwrap();
    let gt = d.join("gt.jsonl");
    fs::write(&gt, "").unwrap();
    assert_eq!(code(&mvlk(&["eval-mot", "--hypotheses", p(&gt), "--ground-truth", p(&gt), "--config", p(&bad_cfg)])), 4);
    fs::write(&bad_cfg, "not json").unwrap();
    assert_eq!(code(&mvlk(&["sync-sim", "--config", p(&bad_cfg)])), 4);
    assert_eq!(code(&mvlk(&["pipeline", "--config", p(&bad_cfg), "--out", p(&d.join("run"))])), 4);
    assert_eq!(code(&mvlk(&["no-such-command"])), 2);
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = d.join("pipeline.json");
    fs::write(
        &cfg,
        r#"{"seed": 11,
            "source": {"kind": "synthetic", "spec": {"cars": 2, "pedestrians": 4, "cyclists": 1, "frame_count": 2}},
            "sync": {"duration_s": 1.0}}"#,
    )
    .unwrap();
    let runs = [d.join("a"), d.join("b")];
    for run in &runs {
        let out = mvlk(&["pipeline", "--config", p(&cfg), "--out", p(run)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("Mean recall by view count"));
    }
    let names = ["report.json", "report.txt", "detections.jsonl", "tracks.jsonl", "sync_errors.jsonl"];
    for name in names {
        assert_eq!(fs::read(runs[0].join(name)).unwrap(), fs::read(runs[1].join(name)).unwrap(), "{name}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(runs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), names.len());
}

#[test]
fn eval_mot_on_identical_files_and_sync_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gt = d.join("gt.jsonl");
    let mut text = String::new();
    for f in 0..5 {
        for id in 0..3 {
            text.push_str(&format!(
                "{{\"frame\": {f}, \"track_id\": {id}, \"class\": \"Pedestrian\", \"center\": [{}, {}, 0.9], \"size\": [0.6, 0.6, 1.8], \"yaw\": 0.0}}\n",
                f as f64 * 0.1,
                id as f64 * 3.0
            ));
        }
    }
    fs::write(&gt, text).unwrap();
    let out = mvlk(&["eval-mot", "--hypotheses", p(&gt), "--ground-truth", p(&gt)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("MOTA: 1.0000"));

    let errors = d.join("errors.jsonl");
    let out = mvlk(&["sync-sim", "--seed", "2", "--out", p(&errors)]);
    assert_eq!(code(&out), 0);
    let table = stdout(&out);
    assert!(table.starts_with("frame node0_us node1_us node2_us node3_us"));
    assert_eq!(table.lines().count(), 101);
    assert_eq!(fs::read_to_string(&errors).unwrap().lines().count(), 400);
}

#[test]
fn convert_round_trips_points() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cloud = PointCloud {
        points: vec![Point3::new(0.1f32 as f64, -3.75, 12.5), Point3::new(1e3, 2.0, (1.0f32 / 3.0) as f64)],
        intensity: vec![0.5, 0.1],
        ..PointCloud::default()
    };
    let a = d.join("a.mvlc");
    write_frame(&a, &cloud).unwrap();
    assert_eq!(code(&mvlk(&["convert", "--input", p(&a), "--output", p(&d.join("a.xyz"))])), 0);
    assert_eq!(code(&mvlk(&["convert", "--input", p(&d.join("a.xyz")), "--output", p(&d.join("b.mvlc"))])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(d.join("b.mvlc")).unwrap());
}
