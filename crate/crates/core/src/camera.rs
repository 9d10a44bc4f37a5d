//! Pinhole projection of camera-space poses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::Pose3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Nearest admissible joint depth, meters.
    pub z_min: f64,
}

/// 16 pixel coordinates `(u, v)`, same keypoint order as [`Pose3D`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub joints: Vec<[f64; 2]>,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, z_min: f64) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            z_min,
        };
        cam.check()?;
        Ok(cam)
    }

    pub fn check(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.z_min]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.z_min <= 0.0 {
            return Err(Error::invalid(format!("bad camera intrinsics {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn project_point(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        ]
    }
}

/// fx = fy = 1145 px, principal point (512, 512), z_min = 0.1 m.
pub fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 1145.0,
        fy: 1145.0,
        cx: 512.0,
        cy: 512.0,
        z_min: 0.1,
    }
}

pub fn project_pose(pose: &Pose3D, cam: &CameraIntrinsics) -> Result<Pose2D> {
    let mut joints = Vec::with_capacity(pose.joints.len());
    for (k, p) in pose.joints.iter().enumerate() {
        // Also catches NaN depth.
        if !(p[2] >= cam.z_min) {
            return Err(Error::DepthViolation {
                joint: k,
                name: joint_name(k),
                z: p[2],
                z_min: cam.z_min,
            });
        }
        joints.push(cam.project_point(*p));
    }
    Ok(Pose2D { joints })
}

fn joint_name(k: usize) -> String {
    crate::skeleton::default_topology()
        .keypoint_names()
        .get(k)
        .cloned()
        .unwrap_or_else(|| format!("joint{k}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 500.0, 500.0, 0.1).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let c = default_camera();
        let pose = Pose3D::new(vec![[0.0, 0.0, 0.1], [0.0, 0.0, 37.0]]);
        let out = project_pose(&pose, &c).unwrap();
        assert_eq!(out.joints, vec![[512.0, 512.0]; 2]);
    }

    #[test]
    fn hand_computed_point() {
        let out = project_pose(&Pose3D::new(vec![[0.5, -0.25, 2.5]]), &cam()).unwrap();
        assert_eq!(out.joints[0], [700.0, 400.0]);
    }

    #[test]
    fn doubling_depth_halves_offsets() {
        let c = cam();
        let near = project_pose(&Pose3D::new(vec![[0.3, 0.7, 2.0]]), &c).unwrap();
        let far = project_pose(&Pose3D::new(vec![[0.3, 0.7, 4.0]]), &c).unwrap();
        assert_eq!((far.joints[0][0] - c.cx) * 2.0, near.joints[0][0] - c.cx);
        assert_eq!((far.joints[0][1] - c.cy) * 2.0, near.joints[0][1] - c.cy);
    }

    #[test]
    fn depth_violation_names_joint() {
        let pose = Pose3D::new(vec![[0.0, 0.0, 5.0], [0.0, 0.0, 0.05]]);
        match project_pose(&pose, &cam()) {
            Err(Error::DepthViolation { joint, name, .. }) => {
                assert_eq!(joint, 1);
                assert_eq!(name, "r_hip");
            }
            other => panic!("expected depth violation, got {other:?}"),
        }
    }

    #[test]
    fn defaults() {
        let c = default_camera();
        assert_eq!((c.fx, c.fy), (1145.0, 1145.0));
        assert_eq!((c.cx, c.cy), (512.0, 512.0));
        assert_eq!(c.z_min, 0.1);
        assert!(CameraIntrinsics::new(-1.0, 1.0, 0.0, 0.0, 0.1).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }
}
