//! Force-triggered Archimedean spiral search for insertion primitives.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::TrajectoryError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationParams {
    /// Activate above this insertion-axis force.
    pub f_on_n: f64,
    /// Deactivate below this one.
    pub f_off_n: f64,
    /// Spiral pitch b in r = b·φ.
    pub pitch_m_per_rad: f64,
    pub rate_rad_s: f64,
    pub max_radius_m: f64,
    /// While searching, the insertion-axis attractor sits this far below
    /// the surface where contact was made.
    pub press_depth_m: f64,
    /// Full turns at `max_radius_m` before giving up.
    pub extra_turns: f64,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        Self {
            f_on_n: 8.0,
            f_off_n: 2.0,
            pitch_m_per_rad: 0.0003,
            rate_rad_s: std::f64::consts::PI,
            max_radius_m: 0.010,
            press_depth_m: 0.007,
            extra_turns: 1.0,
        }
    }
}

impl ExplorationParams {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.f_on_n > self.f_off_n && self.f_off_n > 0.0) {
            return Err(TrajectoryError::Parameter(format!(
                "thresholds need F_on > F_off > 0 (got {} / {})",
                self.f_on_n, self.f_off_n
            )));
        }
        let positive = [self.pitch_m_per_rad, self.rate_rad_s, self.max_radius_m];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(TrajectoryError::Parameter("spiral pitch, rate and radius must be positive".into()));
        }
        if !(self.press_depth_m >= 0.0 && self.extra_turns >= 0.0) {
            return Err(TrajectoryError::Parameter("press depth and extra turns must be >= 0".into()));
        }
        Ok(())
    }

    /// Phase at which the search is abandoned.
    pub fn max_phase(&self) -> f64 {
        self.max_radius_m / self.pitch_m_per_rad + 2.0 * std::f64::consts::PI * self.extra_turns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationMode {
    Inactive,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    None,
    Activated,
    Deactivated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationState {
    pub params: ExplorationParams,
    pub mode: ExplorationMode,
    pub phase_rad: f64,
    /// Position where the current search started.
    pub center_m: [f64; 3],
}

impl ExplorationState {
    pub fn new(params: ExplorationParams) -> Result<Self, TrajectoryError> {
        params.validate()?;
        Ok(Self {
            params,
            mode: ExplorationMode::Inactive,
            phase_rad: 0.0,
            center_m: [0.0; 3],
        })
    }

    pub fn is_active(&self) -> bool {
        self.mode == ExplorationMode::Active
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center_m)
    }

    pub fn radius(&self) -> f64 {
        (self.params.pitch_m_per_rad * self.phase_rad).min(self.params.max_radius_m)
    }

    /// Planar offset at the current phase; zero when inactive.
    pub fn offset(&self) -> Vector2<f64> {
        if !self.is_active() {
            return Vector2::zeros();
        }
        let r = self.radius();
        Vector2::new(r * self.phase_rad.cos(), r * self.phase_rad.sin())
    }

    pub fn exhausted(&self) -> bool {
        self.is_active() && self.phase_rad >= self.params.max_phase()
    }

    /// Hysteresis switch on the insertion-axis force.
    pub fn update(&mut self, force_n: f64, position: &Vector3<f64>) -> Transition {
        match self.mode {
            ExplorationMode::Inactive if force_n > self.params.f_on_n => {
                self.mode = ExplorationMode::Active;
                self.phase_rad = 0.0;
                self.center_m = (*position).into();
                Transition::Activated
            }
            ExplorationMode::Active if force_n < self.params.f_off_n => {
                self.mode = ExplorationMode::Inactive;
                Transition::Deactivated
            }
            _ => Transition::None,
        }
    }

    /// Advances the phase by `ω·dt` and returns the new offset.
    pub fn advance(&mut self, dt: f64) -> Vector2<f64> {
        if !self.is_active() {
            return Vector2::zeros();
        }
        self.phase_rad += self.params.rate_rad_s * dt;
        self.offset()
    }
}

/// Functional form of [`ExplorationState::update`].
pub fn update_exploration(
    state: &ExplorationState,
    force_n: f64,
    position: &Vector3<f64>,
) -> (ExplorationState, Transition) {
    let mut next = *state;
    let tr = next.update(force_n, position);
    (next, tr)
}

/// Functional form of [`ExplorationState::advance`].
pub fn exploration_offset(state: &ExplorationState, dt: f64) -> (Vector2<f64>, ExplorationState) {
    let mut next = *state;
    let off = next.advance(dt);
    (off, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn active(pitch: f64) -> ExplorationState {
        let mut s = ExplorationState::new(ExplorationParams {
            pitch_m_per_rad: pitch,
            ..Default::default()
        })
        .unwrap();
        s.update(100.0, &Vector3::zeros());
        s
    }

    #[test]
    fn origin_at_zero_phase() {
        assert_eq!(active(0.0005).offset(), Vector2::zeros());
    }

    #[test]
    fn radius_after_one_turn() {
        let mut s = active(0.0005);
        s.phase_rad = 2.0 * PI;
        assert!((s.offset().norm() - PI * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn inactive_offset_is_zero() {
        let mut s = ExplorationState::new(ExplorationParams::default()).unwrap();
        assert_eq!(s.advance(0.01), Vector2::zeros());
        assert_eq!(s.phase_rad, 0.0);
    }

    #[test]
    fn hysteresis_band_holds() {
        let mut s = ExplorationState::new(ExplorationParams::default()).unwrap();
        let p = Vector3::zeros();
        assert_eq!(s.update(9.0, &p), Transition::Activated);
        assert_eq!(s.phase_rad, 0.0);
        assert_eq!(s.update(5.0, &p), Transition::None);
        assert!(s.is_active());
        assert_eq!(s.update(1.0, &p), Transition::Deactivated);
        assert_eq!(s.update(5.0, &p), Transition::None);
        assert!(!s.is_active());
    }

    #[test]
    fn bad_thresholds_rejected() {
        let p = ExplorationParams {
            f_on_n: 2.0,
            f_off_n: 2.0,
            ..Default::default()
        };
        assert!(ExplorationState::new(p).is_err());
    }
}
