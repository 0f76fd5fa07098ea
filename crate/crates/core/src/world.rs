//! Parametric task board: a box on a table with cylindrical holes,
//! press buttons, a sliding lid and graspable objects. Board frame has its
//! origin at the centre of the top face, z pointing up out of the board.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::WorldError;
use crate::pose::{Pose, Wrench};

pub const WORLD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleKind {
    Key,
    Battery,
    Ethernet,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub name: String,
    pub kind: HoleKind,
    pub center_m: [f64; 2],
    pub radius_m: f64,
    pub depth_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Button {
    pub name: String,
    pub center_m: [f64; 2],
    pub radius_m: f64,
    pub press_force_n: f64,
}

/// Lid lying flat on the top face; it slides along `slide_dir` when
/// dragged by a fingertip pressing with enough normal force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lid {
    pub name: String,
    pub center_m: [f64; 2],
    pub half_size_m: [f64; 2],
    pub slide_dir: [f64; 2],
    pub travel_m: f64,
    /// Tangential force needed to move the lid.
    pub resistance_n: f64,
}

/// Object the gripper can pick: a peg standing on the top face, grasped
/// at `grasp_m` (board frame), protruding `length_m` below the grasp point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspObject {
    pub name: String,
    pub grasp_m: [f64; 3],
    pub peg_radius_m: f64,
    pub length_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub stiffness_n_per_m: f64,
    pub damping_ns_per_m: f64,
    pub friction_coefficient: f64,
    pub tangential_damping_ns_per_m: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness_n_per_m: 1.0e4,
            damping_ns_per_m: 50.0,
            friction_coefficient: 0.3,
            tangential_damping_ns_per_m: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardWorld {
    pub schema_version: u32,
    /// Board frame in the robot base frame.
    pub board_pose: Pose,
    /// Length (x), width (y), height (z).
    pub extents_m: [f64; 3],
    /// Height of the table plane in the robot frame.
    pub table_height_m: f64,
    pub contact: ContactParams,
    pub holes: Vec<Hole>,
    pub buttons: Vec<Button>,
    pub lid: Option<Lid>,
    pub objects: Vec<GraspObject>,
}

/// Which surface a penetrating point is pushed out of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    pub depth_m: f64,
    /// Outward surface normal, robot frame.
    pub normal: Vector3<f64>,
}

impl BoardWorld {
    /// Board-like default scene: reference pose in front of the arm.
    pub fn task_board() -> Self {
        let holes = vec![
            Hole { name: "key_hole".into(), kind: HoleKind::Key, center_m: [-0.03, 0.055], radius_m: 0.005, depth_m: 0.02 },
            Hole { name: "battery_slot_1".into(), kind: HoleKind::Battery, center_m: [-0.06, -0.05], radius_m: 0.008, depth_m: 0.03 },
            Hole { name: "battery_slot_2".into(), kind: HoleKind::Battery, center_m: [-0.025, -0.05], radius_m: 0.008, depth_m: 0.03 },
            Hole { name: "ethernet_port".into(), kind: HoleKind::Ethernet, center_m: [0.05, 0.06], radius_m: 0.007, depth_m: 0.015 },
        ];
        let buttons = vec![
            Button { name: "blue_button".into(), center_m: [-0.10, 0.06], radius_m: 0.008, press_force_n: 5.0 },
            Button { name: "red_button".into(), center_m: [-0.10, 0.03], radius_m: 0.008, press_force_n: 5.0 },
            Button { name: "battery_1_eject".into(), center_m: [0.06, -0.065], radius_m: 0.008, press_force_n: 4.0 },
            Button { name: "battery_2_eject".into(), center_m: [0.095, -0.065], radius_m: 0.008, press_force_n: 4.0 },
        ];
        let objects = vec![
            GraspObject { name: "key".into(), grasp_m: [-0.065, 0.075, 0.035], peg_radius_m: 0.004, length_m: 0.035 },
            GraspObject { name: "battery_1".into(), grasp_m: [0.02, 0.025, 0.045], peg_radius_m: 0.007, length_m: 0.045 },
            GraspObject { name: "battery_2".into(), grasp_m: [0.055, 0.025, 0.045], peg_radius_m: 0.007, length_m: 0.045 },
            GraspObject { name: "ethernet_plug".into(), grasp_m: [0.095, 0.035, 0.03], peg_radius_m: 0.005, length_m: 0.03 },
        ];
        Self {
            schema_version: WORLD_SCHEMA_VERSION,
            board_pose: Pose::from_translation(0.5, 0.0, 0.06),
            extents_m: [0.26, 0.18, 0.06],
            table_height_m: 0.0,
            contact: ContactParams::default(),
            holes,
            buttons,
            lid: Some(Lid {
                name: "battery_lid".into(),
                center_m: [0.075, -0.012],
                half_size_m: [0.035, 0.022],
                slide_dir: [1.0, 0.0],
                travel_m: 0.02,
                resistance_n: 1.0,
            }),
            objects,
        }
    }

    /// Flat board with no features; handy for contact tests.
    pub fn plain_board(board_pose: Pose, extents_m: [f64; 3]) -> Self {
        Self {
            schema_version: WORLD_SCHEMA_VERSION,
            board_pose,
            extents_m,
            table_height_m: board_pose.position.z - extents_m[2],
            contact: ContactParams::default(),
            holes: Vec::new(),
            buttons: Vec::new(),
            lid: None,
            objects: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.schema_version != WORLD_SCHEMA_VERSION {
            return Err(WorldError::SchemaVersion {
                found: self.schema_version,
                supported: WORLD_SCHEMA_VERSION,
            });
        }
        if !(self.contact.stiffness_n_per_m > 0.0) {
            return Err(WorldError::ContactStiffness);
        }
        let [lx, ly, lz] = self.extents_m;
        if !(lx > 0.0 && ly > 0.0 && lz > 0.0) {
            return Err(WorldError::Geometry("extents must be positive".into()));
        }
        if !self.board_pose.is_finite() || !self.board_pose.quaternion_norm_ok() {
            return Err(WorldError::Geometry("board pose is not a valid rigid pose".into()));
        }
        let inside = |c: [f64; 2], r: f64| c[0].abs() + r <= lx / 2.0 && c[1].abs() + r <= ly / 2.0;
        for h in &self.holes {
            if !(h.radius_m > 0.0) {
                return Err(WorldError::NonPositiveRadius(h.name.clone()));
            }
            if !inside(h.center_m, h.radius_m) || !(h.depth_m > 0.0 && h.depth_m < lz) {
                return Err(WorldError::OutsideBoard(h.name.clone()));
            }
        }
        for b in &self.buttons {
            if !(b.radius_m > 0.0) {
                return Err(WorldError::NonPositiveRadius(b.name.clone()));
            }
            if !inside(b.center_m, b.radius_m) {
                return Err(WorldError::OutsideBoard(b.name.clone()));
            }
        }
        if let Some(lid) = &self.lid {
            let [hx, hy] = lid.half_size_m;
            if lid.center_m[0].abs() + hx > lx / 2.0 || lid.center_m[1].abs() + hy > ly / 2.0 {
                return Err(WorldError::OutsideBoard(lid.name.clone()));
            }
            if (Vector2::from(lid.slide_dir).norm() - 1.0).abs() > 1e-9 {
                return Err(WorldError::Geometry(format!("{}: slide direction must be unit", lid.name)));
            }
        }
        for o in &self.objects {
            if !(o.peg_radius_m > 0.0) {
                return Err(WorldError::NonPositiveRadius(o.name.clone()));
            }
            if !inside([o.grasp_m[0], o.grasp_m[1]], o.peg_radius_m) {
                return Err(WorldError::OutsideBoard(o.name.clone()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| WorldError::Io(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| WorldError::Io("missing schema_version".into()))? as u32;
        if found != WORLD_SCHEMA_VERSION {
            return Err(WorldError::SchemaVersion {
                found,
                supported: WORLD_SCHEMA_VERSION,
            });
        }
        let world: BoardWorld =
            serde_json::from_value(value).map_err(|e| WorldError::Io(e.to_string()))?;
        world.validate()?;
        Ok(world)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorldError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), WorldError> {
        std::fs::write(path, self.to_json()).map_err(|e| WorldError::Io(e.to_string()))
    }

    pub fn hole(&self, name: &str) -> Option<&Hole> {
        self.holes.iter().find(|h| h.name == name)
    }

    pub fn button(&self, name: &str) -> Option<&Button> {
        self.buttons.iter().find(|b| b.name == name)
    }

    pub fn object(&self, name: &str) -> Option<&GraspObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    /// Board-frame point on the top face → robot frame.
    pub fn board_to_robot(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.board_pose.transform_point(p)
    }

    pub fn robot_to_board(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.board_pose.orientation.inverse() * (p - self.board_pose.position)
    }

    /// Board up-axis in the robot frame.
    pub fn board_normal(&self) -> Vector3<f64> {
        self.board_pose.orientation * Vector3::z()
    }

    /// Depth and outward normal when `p` (robot frame) lies inside solid
    /// geometry; `None` in free space, including inside hole volumes above
    /// their floors.
    pub fn penetration(&self, p: &Vector3<f64>) -> Option<Penetration> {
        let table = if p.z < self.table_height_m {
            Some(Penetration {
                depth_m: self.table_height_m - p.z,
                normal: Vector3::z(),
            })
        } else {
            None
        };
        let local = self.robot_to_board(p);
        let [lx, ly, lz] = self.extents_m;
        let (hx, hy) = (lx / 2.0, ly / 2.0);
        let in_box = local.x.abs() <= hx && local.y.abs() <= hy && local.z <= 0.0 && local.z >= -lz;
        if !in_box {
            return table;
        }
        let mut best = (-local.z, Vector3::z());
        let mut consider = |depth: f64, n: Vector3<f64>| {
            if depth < best.0 {
                best = (depth, n);
            }
        };
        consider(hx - local.x, Vector3::x());
        consider(local.x + hx, -Vector3::x());
        consider(hy - local.y, Vector3::y());
        consider(local.y + hy, -Vector3::y());
        for hole in &self.holes {
            let radial = Vector2::new(local.x - hole.center_m[0], local.y - hole.center_m[1]);
            let rho = radial.norm();
            if rho < hole.radius_m {
                if local.z > -hole.depth_m {
                    // inside the open hole volume
                    return table;
                }
                consider(-hole.depth_m - local.z, Vector3::z());
            } else if local.z > -hole.depth_m {
                let inward = -radial / rho;
                consider(rho - hole.radius_m, Vector3::new(inward.x, inward.y, 0.0));
            } else {
                // under the rim, below floor level: the way out is past the
                // floor's edge, not up through the top face
                let inward = -radial / rho;
                let d = Vector3::new(inward.x * (rho - hole.radius_m), inward.y * (rho - hole.radius_m), -hole.depth_m - local.z);
                let n = d.norm();
                if n > 0.0 {
                    consider(n, d / n);
                }
            }
        }
        let board = Penetration {
            depth_m: best.0.max(0.0),
            normal: self.board_pose.orientation * best.1,
        };
        match table {
            Some(t) if t.depth_m > board.depth_m => Some(t),
            _ => Some(board),
        }
    }

    /// True when `p` is strictly inside an open hole volume (robot frame).
    pub fn inside_hole(&self, p: &Vector3<f64>) -> Option<&Hole> {
        let local = self.robot_to_board(p);
        self.holes.iter().find(|h| {
            let rho = Vector2::new(local.x - h.center_m[0], local.y - h.center_m[1]).norm();
            rho < h.radius_m && local.z <= 0.0 && local.z > -h.depth_m
        })
    }
}

/// A contact probe point rigidly attached to the end-effector, with its
/// current world position and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

/// Force on a single probe point from the penalty model; zero unless the
/// point penetrates. Normal force never pulls.
pub fn probe_force(point: &ProbePoint, world: &BoardWorld) -> Vector3<f64> {
    let Some(pen) = world.penetration(&point.position) else {
        return Vector3::zeros();
    };
    let c = &world.contact;
    let vn = pen.normal.dot(&point.velocity);
    let fn_mag = (c.stiffness_n_per_m * pen.depth_m - c.damping_ns_per_m * vn).max(0.0);
    if fn_mag == 0.0 {
        return Vector3::zeros();
    }
    let vt = point.velocity - pen.normal * vn;
    let mut ft = -vt * c.tangential_damping_ns_per_m;
    let cap = c.friction_coefficient * fn_mag;
    if ft.norm() > cap {
        ft *= cap / ft.norm();
    }
    pen.normal * fn_mag + ft
}

/// Total penalty wrench on the probe set, torque about `reference`.
pub fn contact_wrench(points: &[ProbePoint], reference: &Vector3<f64>, world: &BoardWorld) -> Wrench {
    let mut w = Wrench::zero();
    for p in points {
        let f = probe_force(p, world);
        if f != Vector3::zeros() {
            w.force += f;
            w.torque += (p.position - reference).cross(&f);
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(p: Vector3<f64>) -> ProbePoint {
        ProbePoint { position: p, velocity: Vector3::zeros() }
    }

    fn top(world: &BoardWorld, x: f64, y: f64, dz: f64) -> Vector3<f64> {
        world.board_to_robot(&Vector3::new(x, y, dz))
    }

    #[test]
    fn default_board_is_valid() {
        BoardWorld::task_board().validate().unwrap();
    }

    #[test]
    fn probe_above_surface_has_no_wrench() {
        let world = BoardWorld::task_board();
        let w = contact_wrench(&[still(top(&world, 0.0, 0.0, 0.01))], &Vector3::zeros(), &world);
        assert!(w.is_zero());
    }

    #[test]
    fn one_millimetre_penetration_gives_ten_newtons() {
        let world = BoardWorld::task_board();
        assert_eq!(world.contact.stiffness_n_per_m, 1.0e4);
        let p = top(&world, 0.0, 0.0, -0.001);
        let w = contact_wrench(&[still(p)], &p, &world);
        assert!((w.force - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-9);
        assert!(w.torque.norm() < 1e-12);
    }

    #[test]
    fn hole_volume_is_free_space() {
        let mut world = BoardWorld::task_board();
        let hole = world.hole("key_hole").unwrap().clone();
        let p = top(&world, hole.center_m[0], hole.center_m[1], -0.005);
        assert!(world.penetration(&p).is_none());
        // below the floor is solid again
        let floor = top(&world, hole.center_m[0], hole.center_m[1], -hole.depth_m - 0.001);
        let pen = world.penetration(&floor).unwrap();
        assert!((pen.depth_m - 0.001).abs() < 1e-12);
        world.holes.retain(|h| h.name != "key_hole");
        assert!(!contact_wrench(&[still(p)], &p, &world).is_zero());
    }

    #[test]
    fn hole_wall_pushes_toward_axis() {
        let world = BoardWorld::task_board();
        let hole = world.hole("key_hole").unwrap().clone();
        let p = top(&world, hole.center_m[0] + hole.radius_m + 0.0005, hole.center_m[1], -0.01);
        let pen = world.penetration(&p).unwrap();
        assert!((pen.depth_m - 0.0005).abs() < 1e-12);
        assert!((pen.normal - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn just_under_the_rim_pushes_toward_the_floor_edge() {
        let world = BoardWorld::task_board();
        let hole = world.hole("key_hole").unwrap().clone();
        let p = top(&world, hole.center_m[0] + hole.radius_m + 0.0003, hole.center_m[1], -hole.depth_m - 0.0004);
        let pen = world.penetration(&p).unwrap();
        assert!((pen.depth_m - 0.0005).abs() < 1e-12, "{}", pen.depth_m);
        assert!((pen.normal - Vector3::new(-0.6, 0.0, 0.8)).norm() < 1e-9);
        // continuous with the floor as the point slides under the rim
        let inside = top(&world, hole.center_m[0] + hole.radius_m - 1e-9, hole.center_m[1], -hole.depth_m - 0.0004);
        let outside = top(&world, hole.center_m[0] + hole.radius_m + 1e-9, hole.center_m[1], -hole.depth_m - 0.0004);
        let a = world.penetration(&inside).unwrap().depth_m;
        let b = world.penetration(&outside).unwrap().depth_m;
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn side_face_normal() {
        let world = BoardWorld::task_board();
        let p = top(&world, -0.13 + 0.0002, 0.0, -0.03);
        let pen = world.penetration(&p).unwrap();
        assert!((pen.normal + Vector3::x()).norm() < 1e-12);
        assert!((pen.depth_m - 0.0002).abs() < 1e-12);
    }

    #[test]
    fn normal_damping_never_pulls() {
        let world = BoardWorld::task_board();
        let p = ProbePoint {
            position: top(&world, 0.0, 0.0, -0.0001),
            velocity: Vector3::new(0.0, 0.0, 1.0),
        };
        assert_eq!(probe_force(&p, &world), Vector3::zeros());
    }

    #[test]
    fn friction_respects_coulomb_cap() {
        let world = BoardWorld::task_board();
        let p = ProbePoint {
            position: top(&world, 0.0, 0.0, -0.001),
            velocity: Vector3::new(1.0, 0.0, 0.0),
        };
        let f = probe_force(&p, &world);
        assert!((f.z - 10.0).abs() < 1e-9);
        assert!((f.x + 3.0).abs() < 1e-9);
    }

    #[test]
    fn world_json_round_trip_and_version_gate() {
        let world = BoardWorld::task_board();
        let text = world.to_json();
        assert!(text.contains("radius_m") && text.contains("stiffness_n_per_m"));
        assert_eq!(BoardWorld::from_json(&text).unwrap(), world);
        let future = text.replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        assert_eq!(
            BoardWorld::from_json(&future),
            Err(WorldError::SchemaVersion { found: 7, supported: 1 })
        );
    }

    #[test]
    fn invalid_features_rejected() {
        let mut world = BoardWorld::task_board();
        world.holes[0].radius_m = 0.0;
        assert!(matches!(world.validate(), Err(WorldError::NonPositiveRadius(_))));
        let mut world = BoardWorld::task_board();
        world.buttons[0].center_m = [0.2, 0.0];
        assert!(matches!(world.validate(), Err(WorldError::OutsideBoard(_))));
        let mut world = BoardWorld::task_board();
        world.contact.stiffness_n_per_m = 0.0;
        assert_eq!(world.validate(), Err(WorldError::ContactStiffness));
    }
}
