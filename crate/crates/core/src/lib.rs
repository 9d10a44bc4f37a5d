//! DH forward-kinematics pose augmentation.
//!
//! A 16-keypoint human skeleton is driven by Denavit-Hartenberg parameters.
//! A constraint-bounded generator produces those parameters and is trained
//! against single-frame and motion critics with a gradient-penalty
//! Wasserstein objective. Trained or untrained generators emit synthetic
//! 2D-3D pose pairs and skeleton video frames.

pub mod autodiff;
pub mod camera;
pub mod cli;
pub mod constraint;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gan;
pub mod oracle;
pub mod skeleton;

pub use camera::{default_camera, project_pose, CameraIntrinsics, Pose2D};
pub use constraint::{
    default_constraint_table, squash_params, validate_params, ConstraintTable, ValidationReport,
};
pub use error::{Error, Result};
pub use features::{
    bone_rotation_traj, feature_bundle, joint_cosines, root_traj_2d, traj_3d, AdjacentBonePairs,
    FeatureBundle, PoseSequence2D, PoseSequence3D,
};
pub use skeleton::{
    apply_global_transform, compose_chain, default_topology, dh_matrix, forward_kinematics, DhRow,
    GlobalTransform, ParamVector, Pose3D, SkeletonTopology,
};
