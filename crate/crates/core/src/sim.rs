//! Torque-level arm simulation.
//!
//! Joint dynamics use the lumped model `M q̈ + C + G = τ_cmd + τ_ext` with a
//! constant diagonal `M`. The step is semi-implicit Euler; contact penalty
//! springs and dampers are folded into the velocity update implicitly
//! (linearized about the current configuration), which keeps stiff board
//! contact stable at the 10 ms control period and makes the contact model
//! dissipative.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::chain::ChainModel;
use crate::error::SimError;
use crate::pose::{Pose, Wrench};
use crate::world::BoardWorld;

pub const MAX_TIME_STEP: f64 = 0.01;
const MAX_CONTACT_ITERATIONS: usize = 12;
const CONVERGED_RAD_S: f64 = 1e-10;
/// Relative slack on the Coulomb cap before the tangential damping is lowered.
const FRICTION_CAP_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    #[serde(rename = "q_rad")]
    pub q: DVector<f64>,
    #[serde(rename = "qd_rad_s")]
    pub qd: DVector<f64>,
    #[serde(rename = "t_s")]
    pub t: f64,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Any joint speed above this aborts the episode.
    pub velocity_cap_rad_s: f64,
    /// Viscous friction in every joint.
    pub joint_friction_nms_per_rad: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            velocity_cap_rad_s: 10.0,
            joint_friction_nms_per_rad: 0.3,
        }
    }
}

/// Everything a single integration step consumes besides the state.
#[derive(Debug, Clone)]
pub struct StepInput<'a> {
    pub torque: &'a DVector<f64>,
    /// Contact probe points in the tool frame.
    pub probes: &'a [Vector3<f64>],
    /// Extra wrench applied at the tool point (e.g. a teacher's hand).
    pub external: Option<Wrench>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub state: JointState,
    /// Board contact wrench on the end-effector, base frame, about the tool point.
    pub contact: Wrench,
    /// Joint torque produced by contact and external wrenches.
    pub external_torque: DVector<f64>,
    /// Tool pose after the step.
    pub tool_pose: Pose,
}

struct ContactRow {
    index: usize,
    normal: Vector3<f64>,
    jac: DMatrix<f64>,
    a: DVector<f64>,
    beta: f64,
    point: Vector3<f64>,
    tangential_damping: f64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: ChainModel,
    pub world: BoardWorld,
    pub config: SimConfig,
}

impl Simulator {
    pub fn new(model: ChainModel, world: BoardWorld) -> Self {
        Self {
            model,
            world,
            config: SimConfig::default(),
        }
    }

    pub fn step(&self, state: &JointState, input: &StepInput<'_>) -> Result<StepOutput, SimError> {
        if !(input.dt > 0.0 && input.dt <= MAX_TIME_STEP) {
            return Err(SimError::TimeStep(input.dt));
        }
        if input.torque.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteTorque);
        }
        let model = &self.model;
        let n = model.dof();
        if input.torque.len() != n {
            return Err(crate::error::ModelError::Dimension {
                expected: n,
                got: input.torque.len(),
            }
            .into());
        }
        let dt = input.dt;
        let frames = model.frames(&state.q)?;
        let tool_point = frames.tool.translation.vector;
        let tool_jac = model.jacobian_from_frames(&frames, &tool_point);
        let mass = model.mass_diagonal();
        // viscous joint friction enters implicitly through the velocity solve
        let lhs_mass = mass.add_scalar(dt * self.config.joint_friction_nms_per_rad);
        let bias = model.gravity_torque(&state.q)? + model.coriolis_torque(&state.q, &state.qd);

        let mut ext_tau = DVector::zeros(n);
        if let Some(w) = &input.external {
            let mut w6 = DVector::zeros(6);
            w6.fixed_rows_mut::<3>(0).copy_from(&w.force);
            w6.fixed_rows_mut::<3>(3).copy_from(&w.torque);
            ext_tau += tool_jac.transpose() * w6;
        }
        let base = mass.component_mul(&state.qd) + (input.torque - &bias + &ext_tau) * dt;

        let points: Vec<(Vector3<f64>, DMatrix<f64>)> = input
            .probes
            .iter()
            .map(|r| {
                let p = frames.tool * nalgebra::Point3::from(*r);
                let jac = model.jacobian_from_frames(&frames, &p.coords).rows(0, 3).into_owned();
                (p.coords, jac)
            })
            .collect();

        let contact = &self.world.contact;
        let k = contact.stiffness_n_per_m;
        let c = contact.damping_ns_per_m;
        let mu = contact.friction_coefficient;

        let mut qd_ref = base.component_div(&lhs_mass);
        let mut tangential = vec![contact.tangential_damping_ns_per_m; points.len()];
        let mut solution = qd_ref.clone();
        let mut rows: Vec<ContactRow> = Vec::new();
        let mut surfaces: Vec<Option<(Vector3<f64>, Vector3<f64>)>> = vec![None; points.len()];

        for _ in 0..MAX_CONTACT_ITERATIONS {
            rows.clear();
            let predicted_frames = model.frames(&(&state.q + &qd_ref * dt))?;
            for (i, (p, jac)) in points.iter().enumerate() {
                let predicted = (predicted_frames.tool * nalgebra::Point3::from(input.probes[i])).coords;
                if let Some(pen) = self.world.penetration(&predicted) {
                    surfaces[i] = Some((pen.normal, predicted + pen.normal * pen.depth_m));
                }
                // a probe seen in contact once this step stays a candidate, with
                // its signed gap against the cached surface plane; otherwise the
                // active set can flip forever between touching and not
                if let Some((normal, surface)) = surfaces[i] {
                    let depth = normal.dot(&(surface - predicted));
                    let a = jac.transpose() * normal;
                    let beta = depth + dt * a.dot(&qd_ref);
                    rows.push(ContactRow {
                        index: i,
                        normal,
                        jac: jac.clone(),
                        a,
                        beta,
                        point: *p,
                        tangential_damping: tangential[i],
                    });
                }
            }
            // drop rows whose normal force would pull
            loop {
                solution = solve_velocity(&lhs_mass, &base, &rows, k, c, dt);
                let before = rows.len();
                rows.retain(|row| normal_force(row, &solution, k, c, dt) >= 0.0);
                if rows.len() == before {
                    break;
                }
            }
            let mut friction_changed = false;
            for row in rows.iter_mut() {
                let fn_mag = normal_force(row, &solution, k, c, dt);
                let vt = tangent_projector(&row.normal) * (&row.jac * &solution);
                let speed = vt.norm();
                if speed > 0.0 && row.tangential_damping * speed > mu * fn_mag * (1.0 + FRICTION_CAP_TOL) {
                    row.tangential_damping = mu * fn_mag / speed;
                    tangential[row.index] = row.tangential_damping;
                    friction_changed = true;
                }
            }
            if friction_changed {
                solution = solve_velocity(&lhs_mass, &base, &rows, k, c, dt);
            }
            let delta = (&solution - &qd_ref).amax();
            qd_ref = solution.clone();
            if delta < CONVERGED_RAD_S && !friction_changed {
                break;
            }
        }

        let mut wrench = Wrench::zero();
        for row in &rows {
            let fn_mag = normal_force(row, &solution, k, c, dt).max(0.0);
            let vt = tangent_projector(&row.normal) * (&row.jac * &solution);
            let f = row.normal * fn_mag - vt * row.tangential_damping;
            wrench.force += f;
            wrench.torque += (row.point - tool_point).cross(&f);
            ext_tau += row.jac.transpose() * f;
        }

        let qd = solution;
        let q = &state.q + &qd * dt;
        let t = state.t + dt;
        for (joint, v) in qd.iter().enumerate() {
            if !v.is_finite() || v.abs() > self.config.velocity_cap_rad_s {
                return Err(SimError::Unstable {
                    t,
                    joint,
                    velocity: *v,
                });
            }
        }
        if let Some(joint) = model.first_limit_violation(&q) {
            return Err(SimError::HardLimit {
                t,
                joint,
                position: q[joint],
            });
        }
        let tool_pose = model.forward_kinematics(&q)?;
        Ok(StepOutput {
            state: JointState { q, qd, t },
            contact: wrench,
            external_torque: ext_tau,
            tool_pose,
        })
    }

    pub fn kinetic_energy(&self, state: &JointState) -> f64 {
        0.5 * state
            .qd
            .iter()
            .zip(self.model.mass_diagonal().iter())
            .map(|(v, m)| m * v * v)
            .sum::<f64>()
    }

    /// Elastic energy stored in penetrating probe springs.
    pub fn contact_energy(&self, state: &JointState, probes: &[Vector3<f64>]) -> Result<f64, SimError> {
        let frames = self.model.frames(&state.q)?;
        let k = self.world.contact.stiffness_n_per_m;
        Ok(probes
            .iter()
            .filter_map(|r| {
                let p = frames.tool * nalgebra::Point3::from(*r);
                self.world.penetration(&p.coords)
            })
            .map(|pen| 0.5 * k * pen.depth_m * pen.depth_m)
            .sum())
    }
}

fn tangent_projector(n: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() - n * n.transpose()
}

fn normal_force(row: &ContactRow, qd: &DVector<f64>, k: f64, c: f64, dt: f64) -> f64 {
    let vn = row.a.dot(qd);
    k * (row.beta - dt * vn) - c * vn
}

fn solve_velocity(
    mass: &DVector<f64>,
    base: &DVector<f64>,
    rows: &[ContactRow],
    k: f64,
    c: f64,
    dt: f64,
) -> DVector<f64> {
    if rows.is_empty() {
        return base.component_div(mass);
    }
    let n = mass.len();
    let mut a_mat = DMatrix::from_diagonal(mass);
    let mut rhs = base.clone();
    for row in rows {
        // Jᵀ(I − nnᵀ)J = JᵀJ − aaᵀ
        let ct = dt * row.tangential_damping;
        a_mat.ger(k * dt * dt + c * dt - ct, &row.a, &row.a, 1.0);
        a_mat.gemm_tr(ct, &row.jac, &row.jac, 1.0);
        rhs.axpy(dt * k * row.beta, &row.a, 1.0);
    }
    match a_mat.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => a_mat
            .lu()
            .solve(&rhs)
            .unwrap_or_else(|| DVector::from_element(n, f64::NAN)),
    }
}

/// Single step with the given tool-frame probe points and no external
/// wrench, default configuration.
pub fn step_dynamics(
    model: &ChainModel,
    state: &JointState,
    torque: &DVector<f64>,
    world: &BoardWorld,
    dt: f64,
    probes: &[Vector3<f64>],
) -> Result<StepOutput, SimError> {
    let sim = Simulator::new(model.clone(), world.clone());
    sim.step(
        state,
        &StepInput {
            torque,
            probes,
            external: None,
            dt,
        },
    )
}
