//! Named rigid transforms and the frame chains used to carry a board
//! estimate and demonstrated trajectories between board poses.

use serde::{Deserialize, Serialize};

use crate::error::LocalizationError;
use crate::lfd::Trajectory;
use crate::pose::Pose;
use nalgebra::Vector3;

pub const ROBOT_FRAME: &str = "robot";
pub const BOARD_FRAME: &str = "board";
pub const CAMERA_FRAME: &str = "camera";

/// Maps coordinates expressed in `source` into `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTransform {
    pub source: String,
    pub target: String,
    pub pose: Pose,
}

impl FrameTransform {
    pub fn new(source: &str, target: &str, pose: Pose) -> Self {
        Self {
            source: source.to_string(),
            target: target.to_string(),
            pose,
        }
    }

    pub fn identity(source: &str, target: &str) -> Self {
        Self::new(source, target, Pose::identity())
    }

    /// Board pose in the robot frame.
    pub fn board_in_robot(pose: Pose) -> Self {
        Self::new(BOARD_FRAME, ROBOT_FRAME, pose)
    }

    pub fn camera_in_robot(pose: Pose) -> Self {
        Self::new(CAMERA_FRAME, ROBOT_FRAME, pose)
    }

    pub fn inverse(&self) -> Self {
        Self::new(&self.target, &self.source, self.pose.inverse())
    }

    /// `self ∘ inner`: apply `inner` first. The inner target must be this
    /// transform's source.
    pub fn compose(&self, inner: &FrameTransform) -> Result<FrameTransform, LocalizationError> {
        if inner.target != self.source {
            return Err(LocalizationError::FrameMismatch {
                left_from: self.source.clone(),
                right_to: inner.target.clone(),
            });
        }
        Ok(Self::new(&inner.source, &self.target, self.pose.compose(&inner.pose)))
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.transform_point(p)
    }

    pub fn apply_pose(&self, p: &Pose) -> Pose {
        self.pose.compose(p)
    }

    pub fn expect_frames(&self, source: &str, target: &str) -> Result<(), LocalizationError> {
        if self.source != source || self.target != target {
            return Err(LocalizationError::FrameMismatch {
                left_from: format!("{}->{}", self.source, self.target),
                right_to: format!("{source}->{target}"),
            });
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.pose.is_finite() && self.pose.quaternion_norm_ok()
    }
}

/// Board pose after a visual registration:
/// `T_cam_in_rob · T_icp · T_cam_in_rob⁻¹ · T_board_start`.
pub fn compose_board_estimate(
    camera_in_robot: &FrameTransform,
    icp: &FrameTransform,
    board_start: &FrameTransform,
) -> Result<FrameTransform, LocalizationError> {
    camera_in_robot
        .compose(icp)?
        .compose(&camera_in_robot.inverse())?
        .compose(board_start)
}

/// Re-targets a trajectory recorded with the board at `start` to a board
/// at `new`: every pose goes through `new · start⁻¹`.
pub fn transform_trajectory(
    trajectory: &Trajectory,
    start: &FrameTransform,
    new: &FrameTransform,
) -> Result<Trajectory, LocalizationError> {
    start.expect_frames(BOARD_FRAME, ROBOT_FRAME)?;
    new.expect_frames(BOARD_FRAME, ROBOT_FRAME)?;
    let chain = new.compose(&start.inverse())?;
    Ok(trajectory.map_poses(|p| chain.apply_pose(p)))
}
