//! Board pose estimation: synthetic captures, ICP, side probing and the
//! frame chains that re-target recorded trajectories.

pub mod cloud;
pub mod frames;
pub mod icp;
pub mod pipeline;
pub mod probe;

pub use cloud::{camera_looking_at, default_camera, render_cloud, render_cloud_with, PointCloud, RenderConfig};
pub use frames::{compose_board_estimate, transform_trajectory, FrameTransform, BOARD_FRAME, CAMERA_FRAME, ROBOT_FRAME};
pub use icp::{icp_register, kabsch, IcpResult};
pub use pipeline::{haptic_refine, localize, visual_estimate, LocalizationConfig, LocalizationReport};
pub use probe::{haptic_probe, intersect_lines, refine_estimate, BoardSide, ProbeConfig, ProbeResult};
