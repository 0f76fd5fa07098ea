//! Visual registration followed by haptic refinement.

use serde::{Deserialize, Serialize};

use super::cloud::{default_camera, render_cloud_with, RenderConfig};
use super::frames::{compose_board_estimate, FrameTransform, CAMERA_FRAME};
use super::icp::{icp_register, IcpResult, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE_M2};
use super::probe::{haptic_probe, refine_estimate, BoardSide, ProbeConfig, ProbeResult};
use crate::error::LocalizationError;
use crate::rig::Rig;
use crate::world::BoardWorld;

/// Per-capture depth scale error of the simulated RGB-D sensor.
pub const DEFAULT_DEPTH_SCALE_SIGMA: f64 = 0.005;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationConfig {
    pub camera: FrameTransform,
    pub cloud_noise_m: f64,
    pub render: RenderConfig,
    pub icp_max_iterations: usize,
    pub icp_tolerance_m2: f64,
    pub probe: ProbeConfig,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            camera: default_camera(),
            cloud_noise_m: 0.001,
            render: RenderConfig {
                depth_scale_sigma: DEFAULT_DEPTH_SCALE_SIGMA,
                ..RenderConfig::default()
            },
            icp_max_iterations: DEFAULT_MAX_ITERATIONS,
            icp_tolerance_m2: DEFAULT_TOLERANCE_M2,
            probe: ProbeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub visual: FrameTransform,
    pub refined: FrameTransform,
    pub icp_rms_m: f64,
    pub icp_iterations: usize,
    pub icp_converged: bool,
    pub probes: Vec<ProbeResult>,
}

/// Registers a capture of the board as it is now against a capture taken
/// with the board at `start`, and carries `start` through the result.
pub fn visual_estimate(
    start: &FrameTransform,
    current: &BoardWorld,
    cfg: &LocalizationConfig,
    seed: u64,
) -> Result<(FrameTransform, IcpResult), LocalizationError> {
    let mut reference_world = current.clone();
    reference_world.board_pose = start.pose;
    let reference = render_cloud_with(&reference_world, &cfg.camera, cfg.cloud_noise_m, seed.wrapping_mul(2).wrapping_add(1), &cfg.render)?;
    let capture = render_cloud_with(current, &cfg.camera, cfg.cloud_noise_m, seed.wrapping_mul(2), &cfg.render)?;
    let init = FrameTransform::identity(CAMERA_FRAME, CAMERA_FRAME);
    let icp = icp_register(&reference, &capture, &init, cfg.icp_max_iterations, cfg.icp_tolerance_m2)?;
    let estimate = compose_board_estimate(&cfg.camera, &icp.transform, start)?;
    Ok((estimate, icp))
}

/// Probes the x and y sides of the board around `estimate` and returns the
/// refined pose with both probe results.
pub fn haptic_refine(
    estimate: &FrameTransform,
    rig: &mut Rig,
    cfg: &ProbeConfig,
) -> Result<(FrameTransform, Vec<ProbeResult>), LocalizationError> {
    let px = haptic_probe(estimate, BoardSide::XSide, rig, cfg)?;
    let py = haptic_probe(estimate, BoardSide::YSide, rig, cfg)?;
    let extents = rig.world().extents_m;
    let refined = refine_estimate(estimate, &px, &py, extents)?;
    Ok((refined, vec![px, py]))
}

/// Full pipeline against the board in `rig`'s world.
pub fn localize(
    start: &FrameTransform,
    rig: &mut Rig,
    cfg: &LocalizationConfig,
    seed: u64,
) -> Result<LocalizationReport, LocalizationError> {
    let current = rig.world().clone();
    let (visual, icp) = visual_estimate(start, &current, cfg, seed)?;
    let (refined, probes) = haptic_refine(&visual, rig, &cfg.probe)?;
    Ok(LocalizationReport {
        visual,
        refined,
        icp_rms_m: icp.rms_m,
        icp_iterations: icp.iterations,
        icp_converged: icp.converged,
        probes,
    })
}
