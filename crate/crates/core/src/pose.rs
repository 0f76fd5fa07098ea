//! Rigid poses, wrenches and the small amount of SO(3) algebra the
//! controller and trajectory code share.

use nalgebra::{Isometry3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Tolerance on the quaternion norm accepted when deserializing or validating.
pub const UNIT_QUATERNION_TOL: f64 = 1e-9;

/// End-effector or board pose: position in metres plus a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Pose with a rotation of `yaw` radians about the z axis.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self::new(
            Vector3::new(x, y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        )
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn inverse(&self) -> Self {
        Self::from_isometry(&self.to_isometry().inverse())
    }

    /// `self * other`, i.e. `other` expressed in the frame `self` describes.
    pub fn compose(&self, other: &Pose) -> Self {
        Self::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation * p + self.position
    }

    pub fn yaw(&self) -> f64 {
        self.orientation.euler_angles().2
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    pub fn quaternion_norm_ok(&self) -> bool {
        (self.orientation.quaternion().norm() - 1.0).abs() <= UNIT_QUATERNION_TOL
    }
}

/// Minimal 3-vector orientation error `log(goal * current⁻¹)` as axis * angle,
/// expressed in the base frame. Takes the short way round.
pub fn orientation_error(goal: &UnitQuaternion<f64>, current: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut rel = goal * current.inverse();
    if rel.w < 0.0 {
        rel = UnitQuaternion::new_unchecked(-rel.into_inner());
    }
    rel.scaled_axis()
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let mut qb = *b.quaternion();
    let mut dot = a.coords.dot(&qb.coords);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        // nearly identical: normalized lerp avoids dividing by sin(≈0)
        let q = a.quaternion() * (1.0 - s) + qb * s;
        return UnitQuaternion::new_normalize(q);
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin_theta;
    let wb = (s * theta).sin() / sin_theta;
    UnitQuaternion::new_normalize(a.quaternion() * wa + qb * wb)
}

/// Force and torque acting on the end-effector, base frame, torque taken
/// about the end-effector origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    #[serde(rename = "force_n")]
    pub force: Vector3<f64>,
    #[serde(rename = "torque_nm")]
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.force == Vector3::zeros() && self.torque == Vector3::zeros()
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position_m: [f64; 3],
    quaternion_wxyz: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let q = self.orientation.quaternion();
        PoseRepr {
            position_m: [self.position.x, self.position.y, self.position.z],
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let [w, i, j, k] = repr.quaternion_wxyz;
        let q = Quaternion::new(w, i, j, k);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(serde::de::Error::custom(format!(
                "quaternion norm {} is not unit",
                q.norm()
            )));
        }
        // stored values are already unit to double precision; keep them
        // bit-exact so save/load/save is stable
        let orientation = UnitQuaternion::new_unchecked(q);
        Ok(Pose::new(Vector3::from(repr.position_m), orientation))
    }
}

/// Unit axis helper used by joint definitions.
pub fn unit_axis(v: Vector3<f64>) -> Unit<Vector3<f64>> {
    Unit::new_normalize(v)
}
