//! Online reshaping of a stored trajectory by squared-exponential
//! corrections, and the local speed-up that thins samples ahead of the
//! current index.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::control::GripperCommand;
use crate::error::TrajectoryError;
use crate::lfd::trajectory::{Sample, Trajectory};

pub const DEFAULT_LENGTH_SCALE_M: f64 = 0.05;
/// Displacement per keypress.
pub const DEFAULT_INCREMENT_M: f64 = 0.001;
/// Largest accepted |θ| for one increment.
pub const MAX_INCREMENT_M: f64 = 0.01;

pub const DEFAULT_SPEEDUP_WINDOW_S: f64 = 0.2;
pub const DEFAULT_SPEEDUP_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub theta_m: [f64; 3],
    pub length_scale_m: f64,
    /// Where the end effector was when the feedback arrived.
    pub point_m: [f64; 3],
}

impl Correction {
    pub fn new(theta: Vector3<f64>, length_scale_m: f64, point: Vector3<f64>) -> Result<Self, TrajectoryError> {
        let c = Self {
            theta_m: theta.into(),
            length_scale_m,
            point_m: point.into(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.length_scale_m > 0.0 && self.length_scale_m.is_finite()) {
            return Err(TrajectoryError::Parameter(format!(
                "length scale must be positive, got {}",
                self.length_scale_m
            )));
        }
        let theta = self.theta();
        if !(theta.iter().all(|v| v.is_finite()) && theta.norm() <= MAX_INCREMENT_M) {
            return Err(TrajectoryError::Parameter(format!(
                "correction magnitude {} exceeds {MAX_INCREMENT_M} m",
                theta.norm()
            )));
        }
        if !self.point_m.iter().all(|v| v.is_finite()) {
            return Err(TrajectoryError::Parameter("correction point is not finite".into()));
        }
        Ok(())
    }

    pub fn theta(&self) -> Vector3<f64> {
        Vector3::from(self.theta_m)
    }

    pub fn point(&self) -> Vector3<f64> {
        Vector3::from(self.point_m)
    }

    /// `exp(-‖p − x‖² / l²)`
    pub fn weight(&self, p: &Vector3<f64>) -> f64 {
        let d2 = (p - self.point()).norm_squared();
        (-d2 / (self.length_scale_m * self.length_scale_m)).exp()
    }
}

/// Directional keyboard feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    XPlus,
    XMinus,
    YPlus,
    YMinus,
    ZPlus,
    ZMinus,
}

impl Direction {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Direction::XPlus => Vector3::x(),
            Direction::XMinus => -Vector3::x(),
            Direction::YPlus => Vector3::y(),
            Direction::YMinus => -Vector3::y(),
            Direction::ZPlus => Vector3::z(),
            Direction::ZMinus => -Vector3::z(),
        }
    }
}

/// Shifts every sample position by `θ·exp(−‖ξ − x‖²/l²)`. Orientation,
/// time and gripper are untouched.
pub fn apply_correction(traj: &Trajectory, c: &Correction) -> Trajectory {
    let theta = c.theta();
    if theta == Vector3::zeros() {
        return traj.clone();
    }
    traj.map_poses(|p| {
        let mut q = *p;
        q.position += theta * c.weight(&p.position);
        q
    })
}

/// Number of samples `speed_up` removes for a full window.
pub fn speedup_removal_count(window_s: f64, factor: f64, dt: f64) -> usize {
    // the epsilon keeps exact products like 20·0.5 from flooring to 9
    (window_s / dt * (1.0 - 1.0 / factor) + 1e-9).floor().max(0.0) as usize
}

/// Offsets (1-based, inside the window) of the samples to drop when
/// removing `r` of `interior` interior samples, evenly spread.
fn removal_offsets(interior: usize, r: usize) -> Vec<usize> {
    let span = (interior + 1) as f64 / r as f64;
    (0..r)
        .map(|k| 1 + ((k as f64 + 0.5) * span - 0.5).floor() as usize)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedUp {
    pub trajectory: Trajectory,
    /// Original indices that were dropped.
    pub removed: Vec<usize>,
}

/// Thins the next `window_s` seconds after sample `index` so that stretch
/// plays `factor` times faster. The window's end points are kept, removed
/// samples are spread evenly between them, and all timestamps are
/// re-indexed to the uniform grid. A gripper event on a removed sample
/// moves to the next surviving one.
pub fn speed_up(
    traj: &Trajectory,
    index: usize,
    window_s: f64,
    factor: f64,
    dt: f64,
) -> Result<SpeedUp, TrajectoryError> {
    if index >= traj.len() {
        return Err(TrajectoryError::Index {
            index,
            len: traj.len(),
        });
    }
    if !(factor >= 1.0 && factor.is_finite()) {
        return Err(TrajectoryError::Parameter(format!("speed-up factor must be >= 1, got {factor}")));
    }
    if !(window_s > 0.0 && dt > 0.0) {
        return Err(TrajectoryError::Parameter("window and dt must be positive".into()));
    }
    let wanted = speedup_removal_count(window_s, factor, dt);
    let span = (window_s / dt).round() as usize;
    let end = (index + span).min(traj.len() - 1);
    let interior = (end - index).saturating_sub(1);
    let r = wanted.min(interior);
    if r == 0 {
        return Ok(SpeedUp {
            trajectory: traj.clone(),
            removed: Vec::new(),
        });
    }
    let removed: Vec<usize> = removal_offsets(interior, r).into_iter().map(|o| index + o).collect();
    let t0 = traj.samples()[0].t_s;
    let mut kept: Vec<Sample> = Vec::with_capacity(traj.len() - r);
    let mut pending: Option<GripperCommand> = None;
    let mut next_removed = removed.iter().peekable();
    for (i, s) in traj.samples().iter().enumerate() {
        if next_removed.peek() == Some(&&i) {
            next_removed.next();
            if s.gripper != GripperCommand::Hold {
                pending = Some(s.gripper);
            }
            continue;
        }
        let mut s = *s;
        if let Some(g) = pending.take() {
            if s.gripper == GripperCommand::Hold {
                s.gripper = g;
            }
        }
        s.t_s = t0 + kept.len() as f64 * dt;
        kept.push(s);
    }
    Ok(SpeedUp {
        trajectory: Trajectory::from_samples(kept)?,
        removed,
    })
}
