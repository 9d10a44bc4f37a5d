use std::path::Path;
use std::process::{Command, Output};

use dhaug::dataset::{load_dataset, load_skeleton_video};
use dhaug::*;

fn dhaug(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhaug"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn fk_with_zero_params_prints_rest_pose() {
    let out = dhaug(&["fk"]);
    assert_eq!(out.status.code(), Some(0));
    let pose: Pose3D = serde_json::from_slice(&out.stdout).unwrap();
    let rest = default_topology().rest_pose().unwrap().clone();
    for (a, b) in pose.joints.iter().zip(&rest.joints) {
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() <= 1e-12, "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn validate_flags_out_of_range_knee() {
    let dir = tempfile::tempdir().unwrap();
    let topo = default_topology();
    let table = default_constraint_table();
    let knee = topo
        .angle_params_of("l_knee")
        .into_iter()
        .find(|&id| table.name(id).ends_with(".0"))
        .unwrap();
    let mut params = vec![0.0; topo.num_params()];
    params[knee] = 30f64.to_radians();
    let file = dir.path().join("p.json");
    std::fs::write(
        &file,
        serde_json::to_string(&serde_json::json!({ "params": params })).unwrap(),
    )
    .unwrap();
    let out = dhaug(&["validate", p(&file)]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains(&format!("parameter {knee} (l_knee.0)")),
        "{text}"
    );

    params[knee] = -30f64.to_radians();
    std::fs::write(&file, serde_json::to_string(&params).unwrap()).unwrap();
    assert_eq!(dhaug(&["validate", p(&file)]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let out = dhaug(&["bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(
        dhaug(&["synth", "--count", "0", "--out", "/tmp/x.jsonl"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(dhaug(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        dhaug(&["validate", p(&dir.path().join("missing.json"))])
            .status
            .code(),
        Some(2)
    );
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "[1, 2,").unwrap();
    assert_eq!(dhaug(&["fk", "--params", p(&bad)]).status.code(), Some(2));
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for f in [&a, &b] {
        assert!(
            dhaug(&["synth", "--count", "1000", "--seed", "7", "--out", p(f)])
                .status
                .success()
        );
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.jsonl");
    assert!(
        dhaug(&["synth", "--count", "1000", "--seed", "8", "--out", p(&c)])
            .status
            .success()
    );
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let out = dhaug(&["selftest", "--dataset", p(&a)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn binary_synth_loads_at_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("s.bin");
    assert!(dhaug(&["synth", "--count", "50", "--out", p(&bin)])
        .status
        .success());
    assert_eq!(load_dataset(&bin).unwrap().records.len(), 50);
    assert_eq!(dhaug(&["validate", p(&bin)]).status.code(), Some(0));
}

#[test]
fn train_then_synthesize_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "epochs = 2\nbeta_epoch = 1\nmode = \"video\"\nframes = 3\nz_dim = 8\nbatch_video = 4\n\
         critic_steps = 2\ngenerator_hidden = [16]\nencoder_hidden = [8]\nhead_hidden = [4]\n",
    )
    .unwrap();
    let real = dir.path().join("real.jsonl");
    let ckpt = dir.path().join("model.ckpt");
    let syn = dir.path().join("syn.jsonl");
    let video = dir.path().join("video.json");
    let c = p(&cfg);
    assert!(dhaug(&[
        "--config",
        c,
        "synth",
        "--narrow-band",
        "--count",
        "6",
        "--frames",
        "6",
        "--out",
        p(&real)
    ])
    .status
    .success());
    let out = dhaug(&[
        "--config",
        c,
        "train",
        "--data",
        p(&real),
        "--out",
        p(&ckpt),
        "--synth-out",
        p(&syn),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["gamma"], 0.0);
    assert_eq!(lines[1]["gamma"], 1.0);
    assert_eq!(load_dataset(&syn).unwrap().records.len(), 2 * 36);

    let from_ckpt = dir.path().join("from_ckpt.jsonl");
    assert!(dhaug(&[
        "synth",
        "--checkpoint",
        p(&ckpt),
        "--count",
        "4",
        "--out",
        p(&from_ckpt)
    ])
    .status
    .success());
    assert_eq!(load_dataset(&from_ckpt).unwrap().records.len(), 12);

    assert!(
        dhaug(&["export-video", "--checkpoint", p(&ckpt), "--out", p(&video)])
            .status
            .success()
    );
    let v = load_skeleton_video(&video).unwrap();
    assert_eq!((v.frames.len(), v.edges.len()), (3, 15));

    let feats = dhaug(&["features", p(&real), "--sequence", "2"]);
    assert!(feats.status.success());
    let f: serde_json::Value = serde_json::from_slice(&feats.stdout).unwrap();
    assert_eq!(f["2"]["cosines"].as_array().unwrap().len(), 6);
}
