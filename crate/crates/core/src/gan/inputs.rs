//! Flat critic input vectors built from poses.
//!
//! Single frame, three streams: root-relative 3D joints, joint cosines, and
//! normalized image coordinates `((u − cx)/fx, (v − cy)/fy)`.
//!
//! Motion (T frames), three two-stream branches:
//! 3D `[T × 48 root-relative | (T−1) × 48 displacements]`,
//! cosines `[T × 14 | (T−1) × 14 deltas]`,
//! 2D `[T × 32 | (T−1) × 2 root displacements]`.

use crate::camera::{CameraIntrinsics, Pose2D};
use crate::error::{Error, Result};
use crate::features::{
    feature_bundle, joint_cosines, AdjacentBonePairs, PoseSequence2D, PoseSequence3D,
};
use crate::skeleton::{Pose3D, SkeletonTopology};

#[derive(Debug, Clone)]
pub struct InputLayout {
    pub keypoints: usize,
    pub root: usize,
    pub pairs: AdjacentBonePairs,
}

impl InputLayout {
    pub fn new(topology: &SkeletonTopology) -> Self {
        Self {
            keypoints: topology.keypoint_count(),
            root: topology.root_keypoint(),
            pairs: AdjacentBonePairs::from_topology(topology),
        }
    }

    pub fn single_widths(&self) -> Vec<usize> {
        vec![3 * self.keypoints, self.pairs.len(), 2 * self.keypoints]
    }

    pub fn single_width(&self) -> usize {
        self.single_widths().iter().sum()
    }

    /// Per branch: `[sequence stream, difference stream]`.
    pub fn motion_widths(&self, frames: usize) -> Vec<Vec<usize>> {
        let (t, n, p) = (frames, self.keypoints, self.pairs.len());
        let d = t.saturating_sub(1);
        vec![
            vec![t * 3 * n, d * 3 * n],
            vec![t * p, d * p],
            vec![t * 2 * n, d * 2],
        ]
    }

    pub fn motion_width(&self, frames: usize) -> usize {
        self.motion_widths(frames).iter().flatten().sum()
    }

    fn check(&self, pose3d: &Pose3D, pose2d: &Pose2D) -> Result<()> {
        if pose3d.joints.len() != self.keypoints || pose2d.joints.len() != self.keypoints {
            return Err(Error::shape(
                "critic input",
                &[pose3d.joints.len(), pose2d.joints.len()],
                &[self.keypoints],
            ));
        }
        Ok(())
    }

    fn push_root_relative(&self, pose: &Pose3D, out: &mut Vec<f64>) {
        let r = pose.joints[self.root];
        for p in &pose.joints {
            out.extend_from_slice(&[p[0] - r[0], p[1] - r[1], p[2] - r[2]]);
        }
    }

    fn push_image(&self, pose: &Pose2D, cam: &CameraIntrinsics, out: &mut Vec<f64>) {
        for q in &pose.joints {
            out.push((q[0] - cam.cx) / cam.fx);
            out.push((q[1] - cam.cy) / cam.fy);
        }
    }

    pub fn encode_single(
        &self,
        pose3d: &Pose3D,
        pose2d: &Pose2D,
        cam: &CameraIntrinsics,
    ) -> Result<Vec<f64>> {
        self.check(pose3d, pose2d)?;
        let mut out = Vec::with_capacity(self.single_width());
        self.push_root_relative(pose3d, &mut out);
        out.extend(joint_cosines(pose3d, &self.pairs)?);
        self.push_image(pose2d, cam, &mut out);
        Ok(out)
    }

    pub fn encode_motion(
        &self,
        seq3d: &[Pose3D],
        seq2d: &[Pose2D],
        cam: &CameraIntrinsics,
    ) -> Result<Vec<f64>> {
        for (a, b) in seq3d.iter().zip(seq2d) {
            self.check(a, b)?;
        }
        let bundle = feature_bundle(
            &PoseSequence3D {
                frames: seq3d.to_vec(),
            },
            &PoseSequence2D {
                frames: seq2d.to_vec(),
            },
            &self.pairs,
            self.root,
        )?;
        let mut out = Vec::with_capacity(self.motion_width(seq3d.len()));
        for p in seq3d {
            self.push_root_relative(p, &mut out);
        }
        for frame in &bundle.diff3d {
            for d in frame {
                out.extend_from_slice(d);
            }
        }
        for c in &bundle.cosines {
            out.extend_from_slice(c);
        }
        for d in &bundle.diff_angle {
            out.extend_from_slice(d);
        }
        for p in seq2d {
            self.push_image(p, cam, &mut out);
        }
        for d in &bundle.diff2d {
            out.push(d[0] / cam.fx);
            out.push(d[1] / cam.fy);
        }
        Ok(out)
    }
}
