//! Closed-loop harness: one controller tick followed by one simulation step,
//! plus the kinematic scene bookkeeping (grasped objects, button presses,
//! lid travel) the task predicates read.

use std::collections::BTreeMap;

use nalgebra::{DVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::chain::ChainModel;
use crate::control::{commanded_torque, update_stiffness, ControllerCommand, GripperCommand, ImpedanceGains, JointLimitGains};
use crate::error::SimError;
use crate::pose::{Pose, Wrench};
use crate::sim::{JointState, Simulator, StepInput};
use crate::world::{BoardWorld, GraspObject};

pub const CONTROL_DT: f64 = 0.01;
/// Torque-loop substeps per attractor tick (1 kHz inner loop).
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    /// Attractor (command stream) period.
    pub dt_s: f64,
    /// Controller and integrator run this many times per attractor tick.
    pub substeps: usize,
    pub limit_gains: JointLimitGains,
    /// Cut-off of the first-order low-pass on the contact force.
    pub force_filter_hz: f64,
    /// Gripper closes on an object whose grasp point is this close.
    pub grasp_radius_m: f64,
    /// Half-length of the flat fingertip pad along the tool y axis.
    pub pad_half_length_m: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            dt_s: CONTROL_DT,
            substeps: DEFAULT_SUBSTEPS,
            limit_gains: JointLimitGains::default(),
            force_filter_hz: 10.0,
            grasp_radius_m: 0.01,
            pad_half_length_m: 0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub object: String,
    /// Grasp point in the tool frame at the moment of closing.
    pub offset_m: [f64; 3],
}

/// Mutable part of the world: where objects are, what is held, what has
/// been pressed or slid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub gripper_closed: bool,
    pub attached: Option<Attachment>,
    /// Grasp point of every object, robot frame.
    pub objects: BTreeMap<String, [f64; 3]>,
    pub lid_offset_m: f64,
    pub button_peak_force_n: BTreeMap<String, f64>,
}

impl SceneState {
    pub fn from_world(world: &BoardWorld) -> Self {
        Self {
            gripper_closed: false,
            attached: None,
            objects: world
                .objects
                .iter()
                .map(|o| {
                    let p = world.board_to_robot(&Vector3::from(o.grasp_m));
                    (o.name.clone(), [p.x, p.y, p.z])
                })
                .collect(),
            lid_offset_m: 0.0,
            button_peak_force_n: world.buttons.iter().map(|b| (b.name.clone(), 0.0)).collect(),
        }
    }

    pub fn object_position(&self, name: &str) -> Option<Vector3<f64>> {
        self.objects.get(name).map(|p| Vector3::from(*p))
    }
}

/// What the session asks of the controller for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoint {
    pub x_goal: Pose,
    pub stiffness_target: Vector6<f64>,
    pub q_ns: DVector<f64>,
    pub gripper: GripperCommand,
    /// Wrench a human hand applies at the tool point (kinesthetic teaching).
    pub external: Option<Wrench>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t_s: f64,
    pub x_goal: Pose,
    pub ee_pose: Pose,
    pub wrench: Wrench,
    /// Low-passed contact force.
    pub filtered_force_n: [f64; 3],
    pub gripper_closed: bool,
}

#[derive(Debug, Clone)]
pub struct Rig {
    pub sim: Simulator,
    pub state: JointState,
    pub gains: ImpedanceGains,
    pub scene: SceneState,
    pub config: RigConfig,
    pub filtered_force: Vector3<f64>,
    pub last_wrench: Wrench,
    pub ticks: u64,
}

impl Rig {
    pub fn new(model: ChainModel, world: BoardWorld, q0: DVector<f64>) -> Self {
        let dof = model.dof();
        let scene = SceneState::from_world(&world);
        Self {
            sim: Simulator::new(model, world),
            state: JointState::at_rest(q0),
            gains: ImpedanceGains::default_for(dof),
            scene,
            config: RigConfig::default(),
            filtered_force: Vector3::zeros(),
            last_wrench: Wrench::zero(),
            ticks: 0,
        }
    }

    pub fn model(&self) -> &ChainModel {
        &self.sim.model
    }

    pub fn world(&self) -> &BoardWorld {
        &self.sim.world
    }

    pub fn dt(&self) -> f64 {
        self.config.dt_s
    }

    pub fn ee_pose(&self) -> Pose {
        self.sim
            .model
            .forward_kinematics(&self.state.q)
            .expect("state dimension matches model")
    }

    /// Cartesian twist of the tool (linear; angular).
    pub fn ee_twist(&self) -> Vector6<f64> {
        let jac = self
            .sim
            .model
            .geometric_jacobian(&self.state.q)
            .expect("state dimension matches model");
        let v = jac * &self.state.qd;
        Vector6::from_iterator(v.iter().copied())
    }

    /// A setpoint holding the current pose with the current stiffness target.
    pub fn hold_setpoint(&self) -> Setpoint {
        Setpoint {
            x_goal: self.ee_pose(),
            stiffness_target: self.gains.target,
            q_ns: self.state.q.clone(),
            gripper: GripperCommand::Hold,
            external: None,
        }
    }

    /// Puts `object` in the closed gripper at the tool point, as if it had
    /// just been grasped there. Returns false for an unknown object.
    pub fn place_in_gripper(&mut self, object: &str) -> bool {
        if self.sim.world.object(object).is_none() {
            return false;
        }
        let p = self.ee_pose().position;
        self.scene.gripper_closed = true;
        self.scene.objects.insert(object.to_string(), [p.x, p.y, p.z]);
        self.scene.attached = Some(Attachment {
            object: object.to_string(),
            offset_m: [0.0; 3],
        });
        true
    }

    fn held_object(&self) -> Option<(&GraspObject, Vector3<f64>)> {
        let att = self.scene.attached.as_ref()?;
        let obj = self.sim.world.object(&att.object)?;
        Some((obj, Vector3::from(att.offset_m)))
    }

    /// Contact probe points in the tool frame: the held object's tip ring,
    /// or the flat fingertip pad when the gripper is empty.
    pub fn probe_points(&self) -> Vec<Vector3<f64>> {
        if let Some((obj, offset)) = self.held_object() {
            let tip = offset + Vector3::new(0.0, 0.0, obj.length_m);
            let mut pts = vec![tip];
            const RING: usize = 12;
            for k in 0..RING {
                let a = 2.0 * std::f64::consts::PI * k as f64 / RING as f64;
                pts.push(tip + Vector3::new(obj.peg_radius_m * a.cos(), obj.peg_radius_m * a.sin(), 0.0));
            }
            pts
        } else {
            let h = self.config.pad_half_length_m;
            [-1.0, -0.5, 0.0, 0.5, 1.0]
                .iter()
                .map(|s| Vector3::new(0.0, s * h, 0.0))
                .collect()
        }
    }

    /// Contact point of the tool in the robot frame: held object tip or
    /// pad centre.
    pub fn tip_position(&self) -> Vector3<f64> {
        let pose = self.ee_pose();
        match self.held_object() {
            Some((obj, offset)) => pose.transform_point(&(offset + Vector3::new(0.0, 0.0, obj.length_m))),
            None => pose.position,
        }
    }

    /// Contact force component along the board normal, pushing away from it.
    pub fn normal_force(&self) -> f64 {
        self.last_wrench.force.dot(&self.sim.world.board_normal())
    }

    pub fn filtered_normal_force(&self) -> f64 {
        self.filtered_force.dot(&self.sim.world.board_normal())
    }

    pub fn tick(&mut self, setpoint: &Setpoint) -> Result<TickRecord, SimError> {
        let dt = self.config.dt_s;
        let mut gains = self.gains.clone();
        gains.target = setpoint.stiffness_target;
        self.gains = update_stiffness(&gains, dt).map_err(|_| SimError::TimeStep(dt))?;
        let cmd = ControllerCommand {
            x_goal: setpoint.x_goal,
            gains: self.gains.clone(),
            q_ns: setpoint.q_ns.clone(),
            gripper: setpoint.gripper,
        };
        let tip_before = self.tip_position();
        let probes = self.probe_points();
        let substeps = self.config.substeps.max(1);
        let h = dt / substeps as f64;
        let mut wrench = Wrench::zero();
        let mut tool_pose = self.ee_pose();
        for _ in 0..substeps {
            let torque = commanded_torque(&self.sim.model, &self.state, &cmd, &self.config.limit_gains)
                .map_err(|e| match e {
                    crate::error::ControlError::Model(m) => SimError::Model(m),
                    _ => SimError::NonFiniteTorque,
                })?
                .total();
            let out = self.sim.step(
                &self.state,
                &StepInput {
                    torque: &torque,
                    probes: &probes,
                    external: setpoint.external,
                    dt: h,
                },
            )?;
            self.state = out.state;
            wrench = out.contact;
            tool_pose = out.tool_pose;
        }
        // keep the clock on the tick grid regardless of substep rounding
        self.state.t = (self.ticks + 1) as f64 * dt;
        self.last_wrench = wrench;
        let tau_f = 1.0 / (2.0 * std::f64::consts::PI * self.config.force_filter_hz);
        let blend = dt / (dt + tau_f);
        self.filtered_force += (wrench.force - self.filtered_force) * blend;
        self.ticks += 1;

        self.update_gripper(setpoint.gripper);
        self.update_scene(&tip_before);

        Ok(TickRecord {
            t_s: self.state.t,
            x_goal: setpoint.x_goal,
            ee_pose: tool_pose,
            wrench,
            filtered_force_n: [self.filtered_force.x, self.filtered_force.y, self.filtered_force.z],
            gripper_closed: self.scene.gripper_closed,
        })
    }

    fn update_gripper(&mut self, command: GripperCommand) {
        match command {
            GripperCommand::Hold => {}
            GripperCommand::Close if !self.scene.gripper_closed => {
                self.scene.gripper_closed = true;
                let pose = self.ee_pose();
                let radius = self.config.grasp_radius_m;
                let nearest = self
                    .scene
                    .objects
                    .iter()
                    .map(|(name, p)| (name.clone(), (Vector3::from(*p) - pose.position).norm()))
                    .filter(|(_, d)| *d <= radius)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((name, _)) = nearest {
                    let p = Vector3::from(self.scene.objects[&name]);
                    let offset = pose.orientation.inverse() * (p - pose.position);
                    self.scene.attached = Some(Attachment {
                        object: name,
                        offset_m: [offset.x, offset.y, offset.z],
                    });
                }
            }
            GripperCommand::Open if self.scene.gripper_closed => {
                self.scene.gripper_closed = false;
                self.scene.attached = None;
            }
            _ => {}
        }
    }

    fn update_scene(&mut self, tip_before: &Vector3<f64>) {
        if let Some(att) = &self.scene.attached {
            let pose = self.ee_pose();
            let p = pose.transform_point(&Vector3::from(att.offset_m));
            self.scene.objects.insert(att.object.clone(), [p.x, p.y, p.z]);
            return;
        }
        let world = &self.sim.world;
        let normal_force = self.normal_force();
        if normal_force <= 0.0 {
            return;
        }
        let tip = self.tip_position();
        let local = world.robot_to_board(&tip);
        for button in &world.buttons {
            let d = Vector2::new(local.x - button.center_m[0], local.y - button.center_m[1]).norm();
            if d <= button.radius_m {
                let peak = self.scene.button_peak_force_n.entry(button.name.clone()).or_insert(0.0);
                *peak = peak.max(normal_force);
            }
        }
        if let Some(lid) = &world.lid {
            let dir = Vector2::from(lid.slide_dir);
            let center = Vector2::from(lid.center_m) + dir * self.scene.lid_offset_m;
            let rel = Vector2::new(local.x, local.y) - center;
            let on_lid = rel.x.abs() <= lid.half_size_m[0] && rel.y.abs() <= lid.half_size_m[1];
            let grip = world.contact.friction_coefficient * normal_force;
            if on_lid && grip >= lid.resistance_n {
                let before = world.robot_to_board(tip_before);
                let moved = Vector2::new(local.x - before.x, local.y - before.y).dot(&dir);
                self.scene.lid_offset_m = (self.scene.lid_offset_m + moved).clamp(0.0, lid.travel_m);
            }
        }
    }
}
