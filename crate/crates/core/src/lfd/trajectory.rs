//! Demonstrations as time-stamped attractor samples, and the regressors
//! that turn them into a function of time.

use serde::{Deserialize, Serialize};

use crate::control::GripperCommand;
use crate::error::TrajectoryError;
use crate::pose::{slerp, Pose};

/// Nominal sample spacing of recorded and executed trajectories.
pub const SAMPLE_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: f64,
    pub pose: Pose,
    #[serde(default)]
    pub gripper: GripperCommand,
}

/// Time-ordered attractor samples. Timestamps strictly increase.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    samples: Vec<Sample>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<Sample>) -> Result<Self, TrajectoryError> {
        for (i, s) in samples.iter().enumerate() {
            if !(s.t_s.is_finite() && s.pose.is_finite()) {
                return Err(TrajectoryError::NonFinite(i));
            }
            if i > 0 && s.t_s <= samples[i - 1].t_s {
                return Err(TrajectoryError::NonMonotone {
                    t: s.t_s,
                    last: samples[i - 1].t_s,
                });
            }
        }
        Ok(Self { samples })
    }

    /// Poses placed on a uniform grid starting at `t0`, gripper on hold.
    pub fn uniform(poses: &[Pose], t0: f64, dt: f64) -> Result<Self, TrajectoryError> {
        Self::from_samples(
            poses
                .iter()
                .enumerate()
                .map(|(i, p)| Sample {
                    t_s: t0 + i as f64 * dt,
                    pose: *p,
                    gripper: GripperCommand::Hold,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    #[cfg(test)]
    pub(crate) fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t_s - a.t_s,
            _ => 0.0,
        }
    }

    /// Appends one sample; the timestamp must be after the last one.
    pub fn record_sample(&mut self, pose: Pose, gripper: GripperCommand, t_s: f64) -> Result<(), TrajectoryError> {
        if !(t_s.is_finite() && pose.is_finite()) {
            return Err(TrajectoryError::NonFinite(self.samples.len()));
        }
        if let Some(last) = self.samples.last() {
            if t_s <= last.t_s {
                return Err(TrajectoryError::NonMonotone { t: t_s, last: last.t_s });
            }
        }
        self.samples.push(Sample { t_s, pose, gripper });
        Ok(())
    }

    /// Maps every pose through `f`, leaving time and gripper alone.
    pub fn map_poses(&self, mut f: impl FnMut(&Pose) -> Pose) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|s| Sample {
                    pose: f(&s.pose),
                    ..*s
                })
                .collect(),
        }
    }
}

/// Functional form of `record_sample`.
pub fn record_sample(
    demo: &Trajectory,
    pose: Pose,
    gripper: GripperCommand,
    t_s: f64,
) -> Result<Trajectory, TrajectoryError> {
    let mut next = demo.clone();
    next.record_sample(pose, gripper, t_s)?;
    Ok(next)
}

/// A fitted attractor as a function of time. Other regressors (splines of
/// higher order, GPs) plug in here.
pub trait Regressor {
    fn start_time(&self) -> f64;
    fn end_time(&self) -> f64;
    /// Attractor pose at `t`, clamped to the fitted range.
    fn pose_at(&self, t: f64) -> Pose;
    /// Gripper command that fires in `(t_prev, t]`, if any.
    fn gripper_between(&self, t_prev: f64, t: f64) -> Option<GripperCommand>;
}

/// Piecewise-linear translation per axis, slerp between orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpline {
    samples: Vec<Sample>,
}

pub fn fit_trajectory(demo: &Trajectory) -> Result<LinearSpline, TrajectoryError> {
    if demo.len() < 2 {
        return Err(TrajectoryError::TooFewSamples {
            needed: 2,
            got: demo.len(),
        });
    }
    Ok(LinearSpline {
        samples: demo.samples.clone(),
    })
}

impl Regressor for LinearSpline {
    fn start_time(&self) -> f64 {
        self.samples[0].t_s
    }

    fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t_s
    }

    fn pose_at(&self, t: f64) -> Pose {
        let s = &self.samples;
        if t <= s[0].t_s {
            return s[0].pose;
        }
        let last = s.len() - 1;
        if t >= s[last].t_s {
            return s[last].pose;
        }
        // first index with t_i > t; the segment is [k-1, k]
        let k = s.partition_point(|x| x.t_s <= t);
        let (a, b) = (&s[k - 1], &s[k]);
        if t == a.t_s {
            return a.pose;
        }
        let u = (t - a.t_s) / (b.t_s - a.t_s);
        Pose::new(
            a.pose.position + (b.pose.position - a.pose.position) * u,
            slerp(&a.pose.orientation, &b.pose.orientation, u),
        )
    }

    fn gripper_between(&self, t_prev: f64, t: f64) -> Option<GripperCommand> {
        self.samples
            .iter()
            .rev()
            .find(|x| x.t_s > t_prev && x.t_s <= t && x.gripper != GripperCommand::Hold)
            .map(|x| x.gripper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    #[test]
    fn record_rejects_repeated_time() {
        let mut d = Trajectory::new();
        d.record_sample(Pose::identity(), GripperCommand::Hold, 0.0).unwrap();
        assert_eq!(d.len(), 1);
        let err = d.record_sample(Pose::identity(), GripperCommand::Hold, 0.0).unwrap_err();
        assert!(matches!(err, TrajectoryError::NonMonotone { .. }));
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn five_hundred_samples_span() {
        let mut d = Trajectory::new();
        for i in 0..500 {
            d.record_sample(Pose::identity(), GripperCommand::Hold, i as f64 * SAMPLE_DT).unwrap();
        }
        assert!((d.duration() - 4.99).abs() < 1e-12);
    }

    #[test]
    fn linear_midpoint_and_knots() {
        let d = Trajectory::uniform(&[Pose::identity(), Pose::from_translation(1.0, 0.0, 0.0)], 0.0, 1.0).unwrap();
        let f = fit_trajectory(&d).unwrap();
        assert_eq!(f.pose_at(0.5).position, Vector3::new(0.5, 0.0, 0.0));
        assert_eq!(f.pose_at(1.0), d.samples()[1].pose);
        assert_eq!(f.pose_at(0.0), d.samples()[0].pose);
    }

    #[test]
    fn slerp_midpoint_is_half_angle() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let d = Trajectory::uniform(&[Pose::identity(), Pose::new(Vector3::zeros(), q)], 0.0, 1.0).unwrap();
        let p = fit_trajectory(&d).unwrap().pose_at(0.5);
        assert!((p.orientation.angle() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((p.orientation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_needs_two_samples() {
        let d = Trajectory::uniform(&[Pose::identity()], 0.0, 0.01).unwrap();
        assert!(matches!(fit_trajectory(&d), Err(TrajectoryError::TooFewSamples { needed: 2, got: 1 })));
    }

    #[test]
    fn gripper_fires_once_in_window() {
        let mut d = Trajectory::uniform(&[Pose::identity(); 5], 0.0, 0.01).unwrap();
        d.samples_mut()[2].gripper = GripperCommand::Close;
        let f = fit_trajectory(&d).unwrap();
        assert_eq!(f.gripper_between(0.01, 0.02), Some(GripperCommand::Close));
        assert_eq!(f.gripper_between(0.02, 0.03), None);
    }
}
