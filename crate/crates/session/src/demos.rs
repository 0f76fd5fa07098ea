//! Reference demonstrations of the task-board program, authored as
//! board-frame waypoint paths. They stand in for a recorded teaching
//! session so benches and CI have a fixed starting library.

use kinesis_core::control::GripperCommand;
use kinesis_core::lfd::primitive::PrimitiveLibrary;
use kinesis_core::lfd::{Primitive, Sample, TaskProgram, Trajectory, SAMPLE_DT};
use kinesis_core::scenario::{ready_orientation, SuccessCheck, OVERSHOOT_M};
use kinesis_core::{BoardWorld, Pose};
use nalgebra::Vector3;

const APPROACH_M_S: f64 = 0.02;
/// How far below the top face the pad is pushed when pressing or sliding.
const PRESS_DEPTH_M: f64 = 0.015;
const INSERT_SAMPLES: usize = 200;
const HOLD_SAMPLES: usize = 100;

/// Tool-point path in board coordinates with gripper events.
struct Path {
    points: Vec<(Vector3<f64>, GripperCommand)>,
}

impl Path {
    fn from(p: Vector3<f64>) -> Self {
        Self {
            points: vec![(p, GripperCommand::Hold)],
        }
    }

    fn here(&self) -> Vector3<f64> {
        self.points.last().map(|p| p.0).unwrap_or_default()
    }

    fn line(mut self, to: Vector3<f64>, speed: f64) -> Self {
        let from = self.here();
        let n = ((to - from).norm() / (speed * SAMPLE_DT)).ceil().max(1.0) as usize;
        self.points
            .extend((1..=n).map(|k| (from + (to - from) * (k as f64 / n as f64), GripperCommand::Hold)));
        self
    }

    fn steps(mut self, to: Vector3<f64>, n: usize) -> Self {
        let from = self.here();
        self.points
            .extend((1..=n).map(|k| (from + (to - from) * (k as f64 / n as f64), GripperCommand::Hold)));
        self
    }

    fn dwell(mut self, n: usize) -> Self {
        let p = self.here();
        self.points.extend((0..n).map(|_| (p, GripperCommand::Hold)));
        self
    }

    fn grip(mut self, command: GripperCommand) -> Self {
        let p = self.here();
        self.points.push((p, command));
        self
    }

    fn into_primitive(self, world: &BoardWorld, name: &str, insertion: bool) -> Primitive {
        let orientation = world.board_pose.orientation * ready_orientation();
        let samples = self
            .points
            .iter()
            .enumerate()
            .map(|(i, (p, g))| Sample {
                t_s: i as f64 * SAMPLE_DT,
                pose: Pose::new(world.board_to_robot(p), orientation),
                gripper: *g,
            })
            .collect();
        let traj = Trajectory::from_samples(samples).expect("waypoint path is monotone");
        Primitive::new(name, insertion, world.board_pose, traj)
    }
}

fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

fn press(world: &BoardWorld, name: &str, button: &str) -> Option<Primitive> {
    let c = world.button(button)?.center_m;
    Some(
        Path::from(v(c[0], c[1], 0.05))
            .line(v(c[0], c[1], -PRESS_DEPTH_M), APPROACH_M_S)
            .dwell(50)
            .line(v(c[0], c[1], 0.05), APPROACH_M_S)
            .into_primitive(world, name, false),
    )
}

fn slide_lid(world: &BoardWorld) -> Option<Primitive> {
    let lid = world.lid.as_ref()?;
    let dir = v(lid.slide_dir[0], lid.slide_dir[1], 0.0);
    // start on the trailing half so the pad stays on the lid while it moves
    let start = v(lid.center_m[0], lid.center_m[1], 0.0) - dir * (lid.half_size_m[0] * 0.6);
    let end = start + dir * (lid.travel_m + 0.005);
    Some(
        Path::from(start + v(0.0, 0.0, 0.04))
            .line(start + v(0.0, 0.0, -PRESS_DEPTH_M), APPROACH_M_S)
            .dwell(30)
            .line(end + v(0.0, 0.0, -PRESS_DEPTH_M), APPROACH_M_S)
            .line(end + v(0.0, 0.0, 0.04), APPROACH_M_S)
            .into_primitive(world, &lid.name.replace("lid", "lid_slide"), false),
    )
}

fn pick(world: &BoardWorld, object: &str) -> Option<Primitive> {
    let g = Vector3::from(world.object(object)?.grasp_m);
    Some(
        Path::from(g + v(0.0, 0.0, 0.04))
            .line(g, APPROACH_M_S)
            .dwell(20)
            .grip(GripperCommand::Close)
            .dwell(30)
            .line(g + v(0.0, 0.0, 0.06), APPROACH_M_S)
            .into_primitive(world, &format!("pick_{object}"), false),
    )
}

/// Vertical insertion of the held object: tip from 3 cm above the hole to
/// just below its floor, hold, release, retract.
fn insert(world: &BoardWorld, object: &str, hole: &str) -> Option<Primitive> {
    let obj = world.object(object)?;
    let h = world.hole(hole)?;
    let top = v(h.center_m[0], h.center_m[1], obj.length_m);
    Some(
        Path::from(top + v(0.0, 0.0, 0.03))
            .steps(top - v(0.0, 0.0, h.depth_m + OVERSHOOT_M), INSERT_SAMPLES)
            .dwell(HOLD_SAMPLES)
            .grip(GripperCommand::Open)
            .dwell(20)
            .line(top + v(0.0, 0.0, 0.04), APPROACH_M_S)
            .into_primitive(world, &format!("insert_{object}"), true),
    )
}

/// The board program's primitives, recorded with the board where `world`
/// has it, plus the program with one success check per step.
pub fn board_demonstrations(world: &BoardWorld) -> Option<(PrimitiveLibrary, TaskProgram)> {
    let mut lib = PrimitiveLibrary::default();
    let mut steps = Vec::new();
    let mut add = |p: Primitive, check: SuccessCheck| {
        steps.push((p.name.clone(), check));
        lib.insert(p).is_ok()
    };
    let button = "blue_button";
    add(press(world, "press_blue_button", button)?, SuccessCheck::Pressed { button: button.into() });
    let lid = world.lid.as_ref().map(|l| 0.75 * l.travel_m)?;
    add(slide_lid(world)?, SuccessCheck::LidOpen { min_travel_m: lid });
    for (object, hole) in [("key", "key_hole"), ("ethernet_plug", "ethernet_port"), ("battery_1", "battery_slot_1")] {
        add(pick(world, object)?, SuccessCheck::Held { object: object.into() });
        add(
            insert(world, object, hole)?,
            SuccessCheck::Seated {
                object: object.into(),
                hole: hole.into(),
            },
        );
    }
    let mut program = TaskProgram::new(steps.iter().map(|s| s.0.clone()));
    for (name, check) in steps {
        program = program.with_check(&name, check);
    }
    Some((lib, program))
}
