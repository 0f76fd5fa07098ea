//! Variable Cartesian impedance control with null-space posture and
//! joint-limit rejection.
//!
//! Commanded torque is the sum of three independently computed terms:
//! the Cartesian task torque (with gravity and velocity-product
//! compensation), the posture torque projected into the Jacobian kernel,
//! and a joint-limit spring–damper projected through the same operator.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::chain::ChainModel;
use crate::error::ControlError;
use crate::pose::{orientation_error, Pose};
use crate::sim::JointState;

/// Damping factor of the generalized inverse used by the projector.
pub const PSEUDOINVERSE_DAMPING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
    #[default]
    Hold,
}

/// Diagonal Cartesian stiffness and its rate-limited target, plus
/// per-joint null-space gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceGains {
    /// x, y, z (N/m) then rx, ry, rz (N·m/rad).
    pub stiffness: Vector6<f64>,
    /// Always `damping_from_stiffness(stiffness, effective_mass)`.
    pub damping: Vector6<f64>,
    pub target: Vector6<f64>,
    /// Stiffness approach rate, 1/s.
    pub alpha_per_s: f64,
    /// kg for translation, kg·m² for rotation.
    pub effective_mass: Vector6<f64>,
    pub nullspace_stiffness: DVector<f64>,
    pub nullspace_damping: DVector<f64>,
}

/// Working stiffness used when executing primitives.
pub fn default_stiffness() -> Vector6<f64> {
    Vector6::new(600.0, 600.0, 600.0, 30.0, 30.0, 30.0)
}

pub fn default_effective_mass() -> Vector6<f64> {
    Vector6::new(5.0, 5.0, 5.0, 0.5, 0.5, 0.5)
}

impl ImpedanceGains {
    /// Gains settled at `stiffness` (target equal to current value).
    pub fn settled(stiffness: Vector6<f64>, dof: usize) -> Self {
        let effective_mass = default_effective_mass();
        Self {
            damping: damping_from_stiffness(&stiffness, &effective_mass),
            stiffness,
            target: stiffness,
            alpha_per_s: 5.0,
            effective_mass,
            nullspace_stiffness: DVector::from_element(dof, 5.0),
            nullspace_damping: DVector::from_element(dof, 1.5),
        }
    }

    pub fn default_for(dof: usize) -> Self {
        Self::settled(default_stiffness(), dof)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let vectors = [&self.stiffness, &self.damping, &self.target, &self.effective_mass];
        if vectors.iter().any(|v| v.iter().any(|x| !(x.is_finite() && *x >= 0.0))) {
            return Err(ControlError::Gains("Cartesian entries must be finite and >= 0".into()));
        }
        if self
            .nullspace_stiffness
            .iter()
            .chain(self.nullspace_damping.iter())
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(ControlError::Gains("null-space entries must be finite and >= 0".into()));
        }
        if !(self.alpha_per_s > 0.0) {
            return Err(ControlError::Gains("alpha must be positive".into()));
        }
        Ok(())
    }

    /// Sets a new stiffness target; the stiffness itself only moves through
    /// [`update_stiffness`].
    pub fn with_target(mut self, target: Vector6<f64>) -> Self {
        self.target = target;
        self
    }
}

/// Critical damping per axis: `2·sqrt(m_eff·K)`.
pub fn damping_from_stiffness(stiffness: &Vector6<f64>, effective_mass: &Vector6<f64>) -> Vector6<f64> {
    stiffness.zip_map(effective_mass, |k, m| 2.0 * (m * k.max(0.0)).sqrt())
}

/// One tick of the proportional stiffness law `K̇ = α (K_target − K)`.
pub fn update_stiffness(gains: &ImpedanceGains, dt: f64) -> Result<ImpedanceGains, ControlError> {
    let rate = gains.alpha_per_s * dt;
    if !(rate > 0.0 && rate < 1.0) {
        return Err(ControlError::RateStep(rate));
    }
    let mut next = gains.clone();
    next.stiffness = gains.stiffness + (gains.target - gains.stiffness) * rate;
    next.damping = damping_from_stiffness(&next.stiffness, &next.effective_mass);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerCommand {
    pub x_goal: Pose,
    pub gains: ImpedanceGains,
    pub q_ns: DVector<f64>,
    pub gripper: GripperCommand,
}

/// Joint-limit rejection spring–damper, active only outside the safe band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimitGains {
    pub stiffness_nm_per_rad: f64,
    pub damping_nms_per_rad: f64,
}

impl Default for JointLimitGains {
    fn default() -> Self {
        Self {
            stiffness_nm_per_rad: 50.0,
            damping_nms_per_rad: 5.0,
        }
    }
}

/// 6-D pose error `[x_goal − x; log(R_goal R⁻¹)]`.
pub fn pose_error(goal: &Pose, current: &Pose) -> Vector6<f64> {
    let dp = goal.position - current.position;
    let dr = orientation_error(&goal.orientation, &current.orientation);
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// `τ = Jᵀ(K e − D ẋ) + C + G`.
pub fn task_torque(
    model: &ChainModel,
    state: &JointState,
    cmd: &ControllerCommand,
) -> Result<DVector<f64>, ControlError> {
    let current = model.forward_kinematics(&state.q)?;
    let jac = model.geometric_jacobian(&state.q)?;
    let twist = &jac * &state.qd;
    let error = pose_error(&cmd.x_goal, &current);
    let gains = &cmd.gains;
    let mut wrench = DVector::zeros(6);
    for i in 0..6 {
        wrench[i] = gains.stiffness[i] * error[i] - gains.damping[i] * twist[i];
    }
    Ok(jac.transpose() * wrench
        + model.coriolis_torque(&state.q, &state.qd)
        + model.gravity_torque(&state.q)?)
}

/// `I − Jᵀ J^{T+}` with the inertia-weighted damped generalized inverse
/// `J^{T+} = (J M⁻¹ Jᵀ + λ²I)⁻¹ J M⁻¹`. Torques in its range cause no
/// instantaneous end-effector acceleration.
pub fn nullspace_projector(model: &ChainModel, q: &DVector<f64>) -> Result<DMatrix<f64>, ControlError> {
    let jac = model.geometric_jacobian(q)?;
    Ok(projector_from_jacobian(&jac, &model.mass_diagonal()))
}

pub fn projector_from_jacobian(jac: &DMatrix<f64>, mass: &DVector<f64>) -> DMatrix<f64> {
    let n = jac.ncols();
    let m_inv = DMatrix::from_diagonal(&mass.map(|m| 1.0 / m));
    let j_minv = jac * &m_inv;
    let lambda2 = PSEUDOINVERSE_DAMPING * PSEUDOINVERSE_DAMPING;
    let inertia = &j_minv * jac.transpose() + DMatrix::identity(jac.nrows(), jac.nrows()) * lambda2;
    let solved = match inertia.clone().cholesky() {
        Some(ch) => ch.solve(&j_minv),
        None => inertia
            .pseudo_inverse(1e-15)
            .map(|p| p * &j_minv)
            .unwrap_or_else(|_| DMatrix::zeros(jac.nrows(), n)),
    };
    DMatrix::identity(n, n) - jac.transpose() * solved
}

/// `(I − Jᵀ J^{T+}) (K_NS (q_NS − q) − D_NS q̇)`.
pub fn nullspace_torque(
    model: &ChainModel,
    state: &JointState,
    cmd: &ControllerCommand,
) -> Result<DVector<f64>, ControlError> {
    let projector = nullspace_projector(model, &state.q)?;
    let raw = cmd
        .gains
        .nullspace_stiffness
        .component_mul(&(&cmd.q_ns - &state.q))
        - cmd.gains.nullspace_damping.component_mul(&state.qd);
    Ok(projector * raw)
}

/// Per-joint restoring torque toward the safe band, zero inside it.
/// Returned before null-space projection.
pub fn joint_limit_torque(model: &ChainModel, state: &JointState, gains: &JointLimitGains) -> DVector<f64> {
    DVector::from_iterator(
        model.dof(),
        model.joints.iter().zip(state.q.iter().zip(state.qd.iter())).map(|(joint, (&q, &qd))| {
            let target = if q > joint.safe_upper() {
                joint.safe_upper()
            } else if q < joint.safe_lower() {
                joint.safe_lower()
            } else {
                return 0.0;
            };
            gains.stiffness_nm_per_rad * (target - q) - gains.damping_nms_per_rad * qd
        }),
    )
}

/// Individual torque contributions of one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueBreakdown {
    pub task: DVector<f64>,
    pub nullspace: DVector<f64>,
    /// Joint-limit torque after projection.
    pub limit: DVector<f64>,
}

impl TorqueBreakdown {
    pub fn total(&self) -> DVector<f64> {
        &self.task + &self.nullspace + &self.limit
    }
}

/// Full commanded torque for one tick.
pub fn commanded_torque(
    model: &ChainModel,
    state: &JointState,
    cmd: &ControllerCommand,
    limits: &JointLimitGains,
) -> Result<TorqueBreakdown, ControlError> {
    let projector = nullspace_projector(model, &state.q)?;
    let task = task_torque(model, state, cmd)?;
    let posture = cmd
        .gains
        .nullspace_stiffness
        .component_mul(&(&cmd.q_ns - &state.q))
        - cmd.gains.nullspace_damping.component_mul(&state.qd);
    let nullspace = &projector * posture;
    let limit = &projector * joint_limit_torque(model, state, limits);
    Ok(TorqueBreakdown {
        task,
        nullspace,
        limit,
    })
}

/// Translational part of the pose error, handy for logging.
pub fn position_error(goal: &Pose, current: &Pose) -> Vector3<f64> {
    goal.position - current.position
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm_state() -> (ChainModel, JointState) {
        let model = ChainModel::default_arm();
        let q = model.ready_configuration();
        (model, JointState::at_rest(q))
    }

    fn command_at(model: &ChainModel, state: &JointState, gains: ImpedanceGains) -> ControllerCommand {
        ControllerCommand {
            x_goal: model.forward_kinematics(&state.q).unwrap(),
            gains,
            q_ns: state.q.clone(),
            gripper: GripperCommand::Hold,
        }
    }

    #[test]
    fn damping_examples() {
        let m = Vector6::from_element(1.0);
        assert_eq!(damping_from_stiffness(&Vector6::zeros(), &m), Vector6::zeros());
        let d = damping_from_stiffness(&Vector6::from_element(400.0), &m);
        assert!((d - Vector6::from_element(40.0)).norm() < 1e-12);
    }

    #[test]
    fn stiffness_update_examples() {
        let mut gains = ImpedanceGains::settled(Vector6::zeros(), 7).with_target(Vector6::from_element(600.0));
        gains.alpha_per_s = 5.0;
        let next = update_stiffness(&gains, 0.01).unwrap();
        assert!((next.stiffness[0] - 30.0).abs() < 1e-12);
        assert_eq!(next.damping, damping_from_stiffness(&next.stiffness, &next.effective_mass));

        let fixed = ImpedanceGains::default_for(7);
        assert_eq!(update_stiffness(&fixed, 0.01).unwrap().stiffness, fixed.stiffness);
    }

    #[test]
    fn stiffness_update_follows_geometric_recursion() {
        let k0 = 120.0;
        let mut gains = ImpedanceGains::settled(Vector6::from_element(k0), 7)
            .with_target(Vector6::from_element(900.0));
        let (alpha, dt) = (gains.alpha_per_s, 0.01);
        for step in 1..=200 {
            gains = update_stiffness(&gains, dt).unwrap();
            let expected_gap = (900.0 - k0) * (1.0 - alpha * dt).powi(step);
            assert!(((900.0 - gains.stiffness[0]) - expected_gap).abs() < 1e-12);
            assert!(gains.stiffness[0] <= 900.0);
        }
    }

    #[test]
    fn stiffness_update_rejects_fast_rate() {
        let mut gains = ImpedanceGains::default_for(7);
        gains.alpha_per_s = 200.0;
        assert!(matches!(update_stiffness(&gains, 0.01), Err(ControlError::RateStep(_))));
    }

    #[test]
    fn zero_error_gives_pure_compensation() {
        let (model, state) = arm_state();
        let cmd = command_at(&model, &state, ImpedanceGains::default_for(7));
        let tau = task_torque(&model, &state, &cmd).unwrap();
        let g = model.gravity_torque(&state.q).unwrap();
        assert!((tau - g).amax() < 1e-12);
    }

    #[test]
    fn zero_stiffness_leaves_damping_and_compensation() {
        let (model, mut state) = arm_state();
        state.qd = DVector::from_row_slice(&[0.1, -0.2, 0.05, 0.1, 0.0, 0.3, -0.1]);
        let mut cmd = command_at(&model, &state, ImpedanceGains::settled(Vector6::zeros(), 7));
        cmd.x_goal = Pose::from_translation(9.0, 9.0, 9.0);
        let tau = task_torque(&model, &state, &cmd).unwrap();
        let g = model.gravity_torque(&state.q).unwrap();
        // K = 0 ⇒ D = 0 under the critical-damping rule
        assert!((tau - g).amax() < 1e-12);
    }

    #[test]
    fn nullspace_torque_zero_at_posture() {
        let (model, state) = arm_state();
        let cmd = command_at(&model, &state, ImpedanceGains::default_for(7));
        assert!(nullspace_torque(&model, &state, &cmd).unwrap().amax() < 1e-15);
    }

    #[test]
    fn square_jacobian_has_trivial_kernel() {
        let mut model = ChainModel::default_arm();
        model.joints.pop();
        let q = DVector::from_row_slice(&[0.1, -0.5, 0.2, -2.0, 0.3, 1.6]);
        let p = nullspace_projector(&model, &q).unwrap();
        assert!(p.amax() < 1e-9, "{}", p.amax());
    }

    #[test]
    fn limit_torque_selective_and_restoring() {
        let (model, mut state) = arm_state();
        let inside = joint_limit_torque(&model, &state, &JointLimitGains::default());
        assert_eq!(inside, DVector::zeros(7));
        state.q[2] = model.joints[2].safe_upper() + 0.1;
        let tau = joint_limit_torque(&model, &state, &JointLimitGains::default());
        for i in 0..7 {
            if i == 2 {
                assert!(tau[i] < 0.0);
                assert!((tau[i] + 50.0 * 0.1).abs() < 1e-9);
            } else {
                assert_eq!(tau[i], 0.0);
            }
        }
    }
}
