//! Critic input features: joint cosines and first-difference trajectories.
//!
//! The per-frame difference lists are what the motion critic consumes. The
//! scalar sums over frames and joints are kept as diagnostics; they telescope
//! to last-minus-first differences.

use serde::{Deserialize, Serialize};

use crate::camera::Pose2D;
use crate::error::{Error, Result};
use crate::skeleton::{Pose3D, SkeletonTopology};

/// Bones shorter than this are treated as degenerate.
pub const MIN_BONE_LENGTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence3D {
    pub frames: Vec<Pose3D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSequence2D {
    pub frames: Vec<Pose2D>,
}

/// Pairs of bones meeting at a keypoint, as indices into `bones`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacentBonePairs {
    pub bones: Vec<(usize, usize)>,
    pub pairs: Vec<(usize, usize)>,
}

impl AdjacentBonePairs {
    /// Every bone paired with its parent bone. Bones leaving the root have no
    /// parent; the torso bone (the root child with the largest subtree) stands
    /// in for it, giving 14 pairs on the 16-keypoint skeleton.
    pub fn from_topology(topology: &SkeletonTopology) -> Self {
        let bones = topology.bone_list().to_vec();
        let root = topology.root_keypoint();
        let n_kp = topology.keypoint_count();
        let parent_bone = |k: usize| bones.iter().position(|&(_, c)| c == k);

        let mut subtree = vec![1usize; n_kp];
        // Bones are sorted by child id, which is not a topological order; iterate to a fixpoint.
        loop {
            let mut changed = false;
            for &(p, _) in &bones {
                let total = 1 + bones
                    .iter()
                    .filter(|&&(q, _)| q == p)
                    .map(|&(_, c)| subtree[c])
                    .sum::<usize>();
                if total != subtree[p] {
                    subtree[p] = total;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let torso = bones
            .iter()
            .enumerate()
            .filter(|(_, &(p, _))| p == root)
            .max_by_key(|(i, &(_, c))| (subtree[c], std::cmp::Reverse(*i)))
            .map(|(i, _)| i);

        let mut pairs = Vec::new();
        for (i, &(p, _)) in bones.iter().enumerate() {
            if p == root {
                if let Some(t) = torso.filter(|&t| t != i) {
                    pairs.push((t, i));
                }
            } else if let Some(pb) = parent_bone(p) {
                pairs.push((pb, i));
            }
        }
        Self { bones, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    /// `[frame][pair]`.
    pub cosines: Vec<Vec<f64>>,
    /// `[frame - 1][joint]`, camera-space meters.
    pub diff3d: Vec<Vec<[f64; 3]>>,
    /// `[frame - 1][pair]`.
    pub diff_angle: Vec<Vec<f64>>,
    /// `[frame - 1]`, root keypoint pixels.
    pub diff2d: Vec<[f64; 2]>,
    pub sums: TrajectorySums,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySums {
    pub traj3d: [f64; 3],
    pub angle: f64,
    pub root2d: [f64; 2],
}

fn bone_vector(pose: &Pose3D, bone: (usize, usize)) -> [f64; 3] {
    let (p, c) = (pose.joints[bone.0], pose.joints[bone.1]);
    [c[0] - p[0], c[1] - p[1], c[2] - p[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Cosine of the angle between each pair of adjacent bone vectors.
pub fn joint_cosines(pose: &Pose3D, pairs: &AdjacentBonePairs) -> Result<Vec<f64>> {
    let vectors: Vec<[f64; 3]> = pairs.bones.iter().map(|&b| bone_vector(pose, b)).collect();
    let lengths: Vec<f64> = vectors.iter().map(|v| dot(*v, *v).sqrt()).collect();
    pairs
        .pairs
        .iter()
        .map(|&(prev, next)| {
            for b in [prev, next] {
                if !(lengths[b] >= MIN_BONE_LENGTH) {
                    return Err(Error::DegenerateBone {
                        bone: b,
                        length: lengths[b],
                    });
                }
            }
            let c = dot(vectors[next], vectors[prev]) / (lengths[next] * lengths[prev]);
            Ok(c.clamp(-1.0, 1.0))
        })
        .collect()
}

/// Per-joint displacement between consecutive frames, and their total.
pub fn traj_3d(seq: &PoseSequence3D) -> (Vec<Vec<[f64; 3]>>, [f64; 3]) {
    let diffs: Vec<Vec<[f64; 3]>> = seq
        .frames
        .windows(2)
        .map(|w| {
            w[1].joints
                .iter()
                .zip(&w[0].joints)
                .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
                .collect()
        })
        .collect();
    let mut sum = [0.0; 3];
    for frame in &diffs {
        for d in frame {
            for i in 0..3 {
                sum[i] += d[i];
            }
        }
    }
    (diffs, sum)
}

/// Frame-to-frame change of every joint cosine, and their total.
pub fn bone_rotation_traj(
    seq: &PoseSequence3D,
    pairs: &AdjacentBonePairs,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let cosines = seq
        .frames
        .iter()
        .map(|p| joint_cosines(p, pairs))
        .collect::<Result<Vec<_>>>()?;
    Ok(angle_diffs(&cosines))
}

fn angle_diffs(cosines: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let diffs: Vec<Vec<f64>> = cosines
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect();
    let sum = diffs.iter().flatten().sum();
    (diffs, sum)
}

/// Root keypoint displacement between consecutive 2D frames, and the total.
pub fn root_traj_2d(seq: &PoseSequence2D, root_id: usize) -> (Vec<[f64; 2]>, [f64; 2]) {
    let diffs: Vec<[f64; 2]> = seq
        .frames
        .windows(2)
        .map(|w| {
            let (a, b) = (w[1].joints[root_id], w[0].joints[root_id]);
            [a[0] - b[0], a[1] - b[1]]
        })
        .collect();
    let mut sum = [0.0; 2];
    for d in &diffs {
        sum[0] += d[0];
        sum[1] += d[1];
    }
    (diffs, sum)
}

pub fn feature_bundle(
    seq3d: &PoseSequence3D,
    seq2d: &PoseSequence2D,
    pairs: &AdjacentBonePairs,
    root_id: usize,
) -> Result<FeatureBundle> {
    if seq3d.frames.is_empty() || seq3d.frames.len() != seq2d.frames.len() {
        return Err(Error::shape(
            "feature_bundle",
            &[seq3d.frames.len()],
            &[seq2d.frames.len()],
        ));
    }
    let cosines = seq3d
        .frames
        .iter()
        .map(|p| joint_cosines(p, pairs))
        .collect::<Result<Vec<_>>>()?;
    let (diff3d, traj3d) = traj_3d(seq3d);
    let (diff_angle, angle) = angle_diffs(&cosines);
    let (diff2d, root2d) = root_traj_2d(seq2d, root_id);
    Ok(FeatureBundle {
        cosines,
        diff3d,
        diff_angle,
        diff2d,
        sums: TrajectorySums {
            traj3d,
            angle,
            root2d,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::default_topology;

    fn two_bone_pose(prev: [f64; 3], next: [f64; 3]) -> (Pose3D, AdjacentBonePairs) {
        let pose = Pose3D::new(vec![
            [0.0, 0.0, 0.0],
            prev,
            [prev[0] + next[0], prev[1] + next[1], prev[2] + next[2]],
        ]);
        let pairs = AdjacentBonePairs {
            bones: vec![(0, 1), (1, 2)],
            pairs: vec![(0, 1)],
        };
        (pose, pairs)
    }

    #[test]
    fn cosine_cases() {
        let (p, pairs) = two_bone_pose([1.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
        assert_eq!(joint_cosines(&p, &pairs).unwrap(), vec![0.0]);
        let (p, pairs) = two_bone_pose([0.0, 0.0, 0.5], [0.0, 0.0, 0.25]);
        assert_eq!(joint_cosines(&p, &pairs).unwrap(), vec![1.0]);
        let (p, pairs) = two_bone_pose([1.0, 0.0, 0.0], [1.0, 1.0, 0.0]);
        let c = joint_cosines(&p, &pairs).unwrap()[0];
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_bone_is_named() {
        let (p, pairs) = two_bone_pose([1.0, 0.0, 0.0], [0.0, 0.0, 0.0]);
        match joint_cosines(&p, &pairs) {
            Err(Error::DegenerateBone { bone, .. }) => assert_eq!(bone, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shipped_skeleton_has_fourteen_pairs() {
        let topo = default_topology();
        let pairs = AdjacentBonePairs::from_topology(&topo);
        assert_eq!(pairs.len(), 14);
        for &(a, b) in &pairs.pairs {
            let (ba, bb) = (pairs.bones[a], pairs.bones[b]);
            let shared = [ba.0, ba.1]
                .iter()
                .filter(|k| **k == bb.0 || **k == bb.1)
                .count();
            assert_eq!(shared, 1);
        }
        // Every elbow and knee appears as a parent-child pair.
        for (joint, child) in [("l_elbow", "l_wrist"), ("r_knee", "r_ankle")] {
            let j = topo.keypoint_id(joint).unwrap();
            let c = topo.keypoint_id(child).unwrap();
            let bone = pairs.bones.iter().position(|&b| b == (j, c)).unwrap();
            assert!(pairs.pairs.iter().any(|&(_, n)| n == bone));
        }
    }

    #[test]
    fn uniform_shift_trajectory() {
        let a = Pose3D::new(vec![[0.1, 0.2, 3.0]; 16]);
        let b = Pose3D::new(vec![[0.11, 0.2, 3.0]; 16]);
        let (diffs, sum) = traj_3d(&PoseSequence3D {
            frames: vec![a.clone(), b],
        });
        assert_eq!(diffs.len(), 1);
        for d in &diffs[0] {
            assert!((d[0] - 0.01).abs() < 1e-15 && d[1] == 0.0 && d[2] == 0.0);
        }
        assert!((sum[0] - 0.16).abs() < 1e-14);

        let (diffs, sum) = traj_3d(&PoseSequence3D {
            frames: vec![a.clone(), a.clone(), a],
        });
        assert!(diffs.iter().flatten().all(|d| *d == [0.0; 3]));
        assert_eq!(sum, [0.0; 3]);
    }

    #[test]
    fn single_frame_has_empty_diffs() {
        let a = Pose3D::new(vec![[0.0, 0.0, 3.0]; 16]);
        let (diffs, sum) = traj_3d(&PoseSequence3D { frames: vec![a] });
        assert!(diffs.is_empty());
        assert_eq!(sum, [0.0; 3]);
    }

    #[test]
    fn elbow_cosine_step() {
        // Frame 0: perpendicular bones (cos 0); frame 1: 60 degrees (cos 0.5).
        let (p0, pairs) = two_bone_pose([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let s = 3f64.sqrt() / 2.0;
        let (p1, _) = two_bone_pose([1.0, 0.0, 0.0], [0.5, s, 0.0]);
        let (diffs, sum) = bone_rotation_traj(
            &PoseSequence3D {
                frames: vec![p0, p1],
            },
            &pairs,
        )
        .unwrap();
        assert!((diffs[0][0] - 0.5).abs() < 1e-15);
        assert!((sum - 0.5).abs() < 1e-15);
    }

    #[test]
    fn root_moves_steadily() {
        let frames = (0..4)
            .map(|t| Pose2D {
                joints: vec![[100.0 + 2.0 * t as f64, 50.0 - t as f64]; 16],
            })
            .collect();
        let (diffs, sum) = root_traj_2d(&PoseSequence2D { frames }, 0);
        assert_eq!(diffs, vec![[2.0, -1.0]; 3]);
        assert_eq!(sum, [6.0, -3.0]);
    }
}
