use dhaug::autodiff::{read_checkpoint, write_checkpoint};
use dhaug::dataset::{
    export_skeleton_video, load_dataset, load_skeleton_video, save_dataset, DatasetRecord,
    Provenance,
};
use dhaug::gan::{gamma_schedule, DhGenerator, Mode, TrainConfig, TrainState};
use dhaug::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_records(n: usize, seed: u64) -> Vec<DatasetRecord> {
    let topo = default_topology();
    let cam = default_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pose3d = Pose3D::new(
                (0..16)
                    .map(|_| {
                        [
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(3.0..7.0),
                        ]
                    })
                    .collect(),
            );
            let pose2d = project_pose(&pose3d, &cam).unwrap();
            DatasetRecord {
                sequence_id: (i / 10) as u64,
                frame_index: (i % 10) as u32,
                provenance: if i % 2 == 0 {
                    Provenance::Real
                } else {
                    Provenance::Synthetic
                },
                camera: cam,
                pose3d,
                pose2d,
                params: None,
                global: None,
            }
        })
        .chain(std::iter::once_with(|| {
            let p = default_constraint_table().midpoint();
            let g = GlobalTransform::translation(0.1, 0.0, 5.0);
            let pose3d = forward_kinematics(&topo, &p, &g).unwrap();
            DatasetRecord {
                sequence_id: 999,
                frame_index: 0,
                provenance: Provenance::Synthetic,
                camera: cam,
                pose2d: project_pose(&pose3d, &cam).unwrap(),
                pose3d,
                params: Some(p),
                global: Some(g),
            }
        }))
        .collect()
}

#[test]
fn thousand_records_round_trip() {
    let recs = random_records(1000, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    save_dataset(&recs, &path, &default_topology()).unwrap();
    let back = load_dataset(&path).unwrap().records;
    assert_eq!(back.len(), recs.len());
    for (a, b) in recs.iter().zip(&back) {
        for (p, q) in a.pose3d.joints.iter().zip(&b.pose3d.joints) {
            for i in 0..3 {
                assert!((p[i] - q[i]).abs() <= 1e-9);
            }
        }
    }
    assert_eq!(back, recs);
}

#[test]
fn corrupted_line_seven_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    save_dataset(&random_records(20, 2), &path, &default_topology()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[6].truncate(40);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = load_dataset(&path).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 7, .. }), "{err}");
    assert!(err.to_string().contains("line 7"));
}

#[test]
fn foreign_topology_hash_warns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let topo = default_topology();
    save_dataset(&random_records(3, 3), &path, &topo).unwrap();
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace(topo.hash(), "0000000000000000");
    std::fs::write(&path, text).unwrap();
    let loaded = load_dataset(&path).unwrap();
    assert!(loaded
        .topology_warning(&topo)
        .unwrap()
        .contains("0000000000000000"));
}

#[test]
fn exported_knee_cosines_follow_flexion() {
    let topo = default_topology();
    let table = default_constraint_table();
    let pairs = AdjacentBonePairs::from_topology(&topo);
    let cfg = TrainConfig {
        mode: Mode::Video,
        frames: 9,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gen = DhGenerator::new(
        &cfg,
        topo.clone(),
        table.clone(),
        default_camera(),
        &mut rng,
    )
    .unwrap();
    let (samples, _) = gen.generate_valid(1, &mut rng).unwrap();
    let s = &samples[0];
    let poses: Vec<Pose3D> = s.frames.iter().map(|f| f.pose3d.clone()).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.json");
    export_skeleton_video(&poses, None, &topo, &path).unwrap();
    let back = load_skeleton_video(&path).unwrap().poses();
    assert_eq!(back, poses);

    // Thigh and shin are the bones entering and leaving each knee keypoint.
    let bones = &pairs.bones;
    for side in ["l", "r"] {
        let knee_kp = topo.keypoint_id(&format!("{side}_knee")).unwrap();
        let shin = bones.iter().position(|&(p, _)| p == knee_kp).unwrap();
        let thigh = bones.iter().position(|&(_, c)| c == knee_kp).unwrap();
        let pair = pairs
            .pairs
            .iter()
            .position(|&pr| pr == (thigh, shin) || pr == (shin, thigh))
            .unwrap();
        let flexion = topo
            .angle_params_of(&format!("{side}_knee"))
            .into_iter()
            .find(|&id| table.name(id).ends_with(".0"))
            .unwrap();
        for (pose, frame) in back.iter().zip(&s.frames) {
            let c = joint_cosines(pose, &pairs).unwrap()[pair];
            let delta = frame.params.values[flexion];
            assert!((-std::f64::consts::PI..=0.0).contains(&delta));
            assert!(
                (c - delta.cos()).abs() <= 1e-9,
                "{side} knee: cosine {c}, flexion {delta}"
            );
        }
    }
}

#[test]
fn checkpoint_round_trip_and_topology_guard() {
    let cfg = TrainConfig {
        z_dim: 4,
        batch_single: 8,
        generator_hidden: vec![8],
        encoder_hidden: vec![4],
        head_hidden: vec![4],
        ..TrainConfig::default()
    };
    let st = TrainState::new(
        cfg,
        default_topology(),
        default_constraint_table(),
        default_camera(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&path, &st.checkpoint()).unwrap();
    let mut ckpt = read_checkpoint(&path).unwrap();
    let gen = DhGenerator::from_checkpoint(
        &ckpt,
        default_topology(),
        default_constraint_table(),
        default_camera(),
    )
    .unwrap();
    let z = dhaug::gan::sample_latent(3, 4, &mut ChaCha8Rng::seed_from_u64(0));
    let a = gen.net.forward(&z).unwrap();
    let b = st.generator.net.forward(&z).unwrap();
    // Weights are stored as f32.
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 1e-5);
    }

    ckpt.meta["topology"] = serde_json::json!("ffffffffffffffff");
    let err = DhGenerator::from_checkpoint(
        &ckpt,
        default_topology(),
        default_constraint_table(),
        default_camera(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::TopologyMismatch { .. }));
}

#[test]
fn defaults_follow_published_settings() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.alpha, 10.0);
    assert_eq!(cfg.beta_epoch, 4);
    assert_eq!(cfg.z_dim, 128);
    assert_eq!((cfg.batch_single, cfg.batch_video), (1024, 512));
    assert_eq!(cfg.learning_rate, 1e-4);
    assert_eq!(gamma_schedule(3, cfg.beta_epoch), 0.0);
    assert_eq!(gamma_schedule(4, cfg.beta_epoch), 1.0);
}
