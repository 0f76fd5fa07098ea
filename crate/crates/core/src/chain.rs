//! Serial revolute chain: kinematics, joint limits and the lumped inertial
//! model used by the simulator.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use crate::error::ModelError;
use crate::pose::Pose;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// One revolute joint plus the link it drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    /// Fixed transform from the previous link frame to this joint frame,
    /// applied before the joint rotation.
    pub offset: Pose,
    /// Rotation axis in the joint frame.
    pub axis: [f64; 3],
    pub lower_rad: f64,
    pub upper_rad: f64,
    /// Distance inside each hard limit where the safe band ends.
    pub safety_margin_rad: f64,
    pub link_mass_kg: f64,
    /// Link centre of mass in the link frame (after the joint rotation).
    pub link_com_m: [f64; 3],
    /// Diagonal joint-space inertia, kg·m².
    pub inertia_kgm2: f64,
}

impl JointSpec {
    pub fn safe_lower(&self) -> f64 {
        self.lower_rad + self.safety_margin_rad
    }

    pub fn safe_upper(&self) -> f64 {
        self.upper_rad - self.safety_margin_rad
    }

    fn axis_unit(&self) -> Unit<Vector3<f64>> {
        Unit::new_normalize(Vector3::from(self.axis))
    }
}

/// Modified (Craig) DH row: `a_{i-1}`, `d_i`, `alpha_{i-1}`.
#[derive(Debug, Clone, Copy)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
}

/// Kinematic table of the default seven-joint arm.
pub const ARM_DH: [DhRow; 7] = [
    DhRow { a: 0.0, d: 0.333, alpha: 0.0 },
    DhRow { a: 0.0, d: 0.0, alpha: -FRAC_PI_2 },
    DhRow { a: 0.0, d: 0.316, alpha: FRAC_PI_2 },
    DhRow { a: 0.0825, d: 0.0, alpha: FRAC_PI_2 },
    DhRow { a: -0.0825, d: 0.384, alpha: -FRAC_PI_2 },
    DhRow { a: 0.0, d: 0.0, alpha: FRAC_PI_2 },
    DhRow { a: 0.088, d: 0.0, alpha: FRAC_PI_2 },
];

/// Flange plus closed fingers, measured along the last joint axis.
pub const ARM_TOOL_LENGTH_M: f64 = 0.107 + 0.1034;

const ARM_LOWER: [f64; 7] = [-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973];
const ARM_UPPER: [f64; 7] = [2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973];
const ARM_MASS: [f64; 7] = [4.970684, 0.646926, 3.228604, 3.587895, 1.225946, 1.666555, 1.47];
const ARM_COM: [[f64; 3]; 7] = [
    [0.003875, 0.002081, -0.04762],
    [-0.003141, -0.02872, 0.003495],
    [0.027518, 0.039252, -0.066502],
    [-0.05317, 0.104419, 0.027454],
    [-0.011953, 0.041065, -0.038437],
    [0.060149, -0.014117, -0.010517],
    [0.005, -0.002, 0.12],
];
const ARM_INERTIA: [f64; 7] = [0.3, 0.3, 0.2, 0.2, 0.1, 0.1, 0.03];

/// Ready configuration: tool pointing down in front of the base.
pub const ARM_READY: [f64; 7] = [0.0, -FRAC_PI_4, 0.0, -3.0 * FRAC_PI_4, 0.0, FRAC_PI_2, FRAC_PI_4];

/// Joint-limit safety margin used by the default arm.
pub const DEFAULT_SAFETY_MARGIN_RAD: f64 = 0.1;

/// Serial chain of revolute joints ending in a tool frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    pub joints: Vec<JointSpec>,
    /// Last link frame to end-effector (tool centre point).
    pub tool: Pose,
    /// Gravity acceleration in the base frame.
    pub gravity_m_s2: [f64; 3],
}

impl ChainModel {
    /// Builds a simulation-grade model, checking every invariant
    /// (at least six joints, safe band strictly inside the limits,
    /// positive inertias).
    pub fn new(joints: Vec<JointSpec>, tool: Pose) -> Result<Self, ModelError> {
        let model = Self::kinematic(joints, tool);
        model.validate()?;
        Ok(model)
    }

    /// Builds a chain without the simulation checks; used for small
    /// kinematic fixtures (planar arms and the like).
    pub fn kinematic(joints: Vec<JointSpec>, tool: Pose) -> Self {
        Self {
            joints,
            tool,
            gravity_m_s2: [0.0, 0.0, -GRAVITY],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.joints.len() < 6 {
            return Err(ModelError::TooFewJoints(self.joints.len()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.safe_lower() > j.lower_rad && j.safe_upper() < j.upper_rad && j.safe_lower() < j.safe_upper()) {
                return Err(ModelError::SafeBand { joint: i });
            }
            if !(j.inertia_kgm2 > 0.0) {
                return Err(ModelError::NonPositiveInertia { joint: i });
            }
            if Vector3::from(j.axis).norm() < 1e-12 {
                return Err(ModelError::ZeroAxis { joint: i });
            }
        }
        Ok(())
    }

    /// Seven-joint arm with the default tool, limits and inertias.
    pub fn default_arm() -> Self {
        let joints = ARM_DH
            .iter()
            .enumerate()
            .map(|(i, row)| JointSpec {
                offset: dh_offset(row),
                axis: [0.0, 0.0, 1.0],
                lower_rad: ARM_LOWER[i],
                upper_rad: ARM_UPPER[i],
                safety_margin_rad: DEFAULT_SAFETY_MARGIN_RAD,
                link_mass_kg: ARM_MASS[i],
                link_com_m: ARM_COM[i],
                inertia_kgm2: ARM_INERTIA[i],
            })
            .collect();
        Self::new(joints, Pose::from_translation(0.0, 0.0, ARM_TOOL_LENGTH_M))
            .expect("default arm satisfies model invariants")
    }

    /// Planar chain in the base x-y plane, all joints about z, with the
    /// given link lengths. Kinematic fixture only.
    pub fn planar(lengths: &[f64]) -> Self {
        let mut joints = Vec::with_capacity(lengths.len());
        let mut prev_len = 0.0;
        for &len in lengths {
            joints.push(JointSpec {
                offset: Pose::from_translation(prev_len, 0.0, 0.0),
                axis: [0.0, 0.0, 1.0],
                lower_rad: -std::f64::consts::PI,
                upper_rad: std::f64::consts::PI,
                safety_margin_rad: 0.1,
                link_mass_kg: 1.0,
                link_com_m: [len / 2.0, 0.0, 0.0],
                inertia_kgm2: 1.0,
            });
            prev_len = len;
        }
        Self::kinematic(joints, Pose::from_translation(prev_len, 0.0, 0.0))
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn ready_configuration(&self) -> DVector<f64> {
        if self.dof() == ARM_READY.len() {
            DVector::from_row_slice(&ARM_READY)
        } else {
            DVector::zeros(self.dof())
        }
    }

    pub fn lower_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower_rad))
    }

    pub fn upper_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper_rad))
    }

    /// Diagonal of the constant joint-space inertia matrix.
    pub fn mass_diagonal(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.inertia_kgm2))
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity_m_s2)
    }

    fn check_dim(&self, q: &DVector<f64>) -> Result<(), ModelError> {
        if q.len() != self.dof() {
            return Err(ModelError::Dimension {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Index of the first joint outside its hard limits, if any.
    pub fn first_limit_violation(&self, q: &DVector<f64>) -> Option<usize> {
        self.joints
            .iter()
            .zip(q.iter())
            .position(|(j, &v)| v < j.lower_rad || v > j.upper_rad)
    }

    /// World frames of every link (after its joint rotation) plus the
    /// frame each joint rotates in (before its rotation).
    pub fn frames(&self, q: &DVector<f64>) -> Result<ChainFrames, ModelError> {
        self.check_dim(q)?;
        let mut current = Isometry3::identity();
        let mut joint_frames = Vec::with_capacity(self.dof());
        let mut link_frames = Vec::with_capacity(self.dof());
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            let pre = current * joint.offset.to_isometry();
            joint_frames.push(pre);
            let rot = UnitQuaternion::from_axis_angle(&joint.axis_unit(), angle);
            current = pre * Isometry3::from_parts(Translation3::identity(), rot);
            link_frames.push(current);
        }
        let tool = current * self.tool.to_isometry();
        Ok(ChainFrames {
            joint_frames,
            link_frames,
            tool,
        })
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<Pose, ModelError> {
        Ok(Pose::from_isometry(&self.frames(q)?.tool))
    }

    /// 6×n geometric Jacobian at the tool point: rows 0..3 linear,
    /// rows 3..6 angular, base frame.
    pub fn geometric_jacobian(&self, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
        let frames = self.frames(q)?;
        let p = frames.tool.translation.vector;
        Ok(self.jacobian_from_frames(&frames, &p))
    }

    /// 6×n Jacobian of an arbitrary point rigidly attached to the last link.
    pub fn jacobian_from_frames(&self, frames: &ChainFrames, point: &Vector3<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let mut jac = DMatrix::zeros(6, n);
        for (i, (joint, frame)) in self.joints.iter().zip(&frames.joint_frames).enumerate() {
            let axis = frame.rotation * joint.axis_unit().into_inner();
            let origin = frame.translation.vector;
            let lin = axis.cross(&(point - origin));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        }
        jac
    }

    /// Joint torque that exactly balances gravity on every link.
    pub fn gravity_torque(&self, q: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        let frames = self.frames(q)?;
        let g = self.gravity();
        let mut tau = DVector::zeros(self.dof());
        for (k, (link, frame)) in self.joints.iter().zip(&frames.link_frames).enumerate() {
            if link.link_mass_kg == 0.0 {
                continue;
            }
            let com = frame * nalgebra::Point3::from(Vector3::from(link.link_com_m));
            let weight = g * link.link_mass_kg;
            // joints 0..=k move link k
            for (i, (joint, jf)) in self.joints.iter().zip(&frames.joint_frames).enumerate().take(k + 1) {
                let axis = jf.rotation * joint.axis_unit().into_inner();
                let lever = com.coords - jf.translation.vector;
                tau[i] -= axis.cross(&lever).dot(&weight);
            }
        }
        Ok(tau)
    }

    /// Gravitational potential energy of the links, J.
    pub fn potential_energy(&self, q: &DVector<f64>) -> Result<f64, ModelError> {
        let frames = self.frames(q)?;
        let g = self.gravity();
        Ok(self
            .joints
            .iter()
            .zip(&frames.link_frames)
            .map(|(link, frame)| {
                let com = frame * nalgebra::Point3::from(Vector3::from(link.link_com_m));
                -link.link_mass_kg * g.dot(&com.coords)
            })
            .sum())
    }

    /// Velocity-product term. The lumped model treats it as zero; kept so
    /// a fuller dynamic model can slot in without touching call sites.
    pub fn coriolis_torque(&self, _q: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(qd.len())
    }
}

/// Intermediate frames from one forward pass.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub joint_frames: Vec<Isometry3<f64>>,
    pub link_frames: Vec<Isometry3<f64>>,
    pub tool: Isometry3<f64>,
}

/// `RotX(alpha) * Trans(a, 0, d)`; the z-translation commutes with the
/// joint rotation so it can live in the fixed offset.
pub fn dh_offset(row: &DhRow) -> Pose {
    let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), row.alpha);
    Pose::new(rot * Vector3::new(row.a, 0.0, row.d), rot)
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
