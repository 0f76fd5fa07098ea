//! Canned insertion scenarios shared by tests, benches and the CLI.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::chain::ChainModel;
use crate::lfd::execute::{execute_primitive, ExecutionConfig, ExecutionReport, FeedbackSource};
use crate::lfd::primitive::Primitive;
use crate::lfd::trajectory::{Trajectory, SAMPLE_DT};
use crate::pose::Pose;
use crate::rig::Rig;
use crate::world::BoardWorld;

/// Height above the hole where the demonstrated descent begins.
pub const APPROACH_HEIGHT_M: f64 = 0.03;
/// The demonstration keeps going this far below the hole floor so the
/// attractor still presses when the board sits a little higher.
pub const OVERSHOOT_M: f64 = 0.003;
const DESCENT_SAMPLES: usize = 200;
const HOLD_SAMPLES: usize = 100;
const PRE_POSITION_TICKS: usize = 300;

/// Straight vertical descent of a held peg into `hole`, expressed as tool
/// poses (robot frame) with the peg tip on the hole axis shifted by
/// `offset`. The tool points straight down.
pub fn insertion_demo(
    world: &BoardWorld,
    hole: &str,
    object: &str,
    offset: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
) -> Option<Primitive> {
    let hole = world.hole(hole)?;
    let obj = world.object(object)?;
    let normal = world.board_normal();
    let centre = world.board_to_robot(&Vector3::new(hole.center_m[0], hole.center_m[1], 0.0));
    let travel = APPROACH_HEIGHT_M + hole.depth_m + OVERSHOOT_M;
    let poses: Vec<Pose> = (0..DESCENT_SAMPLES + HOLD_SAMPLES)
        .map(|i| {
            let s = (i as f64 / DESCENT_SAMPLES as f64).min(1.0);
            let tip = centre + offset + normal * (APPROACH_HEIGHT_M - s * travel);
            Pose::new(tip + normal * obj.length_m, orientation)
        })
        .collect();
    let samples = Trajectory::uniform(&poses, 0.0, SAMPLE_DT).ok()?;
    Some(Primitive::new(format!("{}_insert", obj.name), true, world.board_pose, samples))
}

#[derive(Debug, Clone)]
pub struct InsertionOutcome {
    pub report: ExecutionReport,
    /// Peg tip depth below the top face.
    pub depth_m: f64,
    /// Peg tip distance from the hole axis.
    pub lateral_m: f64,
    pub success: bool,
}

/// Depth and lateral-error test for a peg tip against a hole: seated when
/// the tip is within the hole radius and no more than `tolerance_m` above
/// the floor.
pub fn seated(world: &BoardWorld, hole: &str, tip: &Vector3<f64>, tolerance_m: f64) -> (bool, f64, f64) {
    let Some(hole) = world.hole(hole) else {
        return (false, 0.0, f64::INFINITY);
    };
    let local = world.robot_to_board(tip);
    let lateral = ((local.x - hole.center_m[0]).powi(2) + (local.y - hole.center_m[1]).powi(2)).sqrt();
    let depth = -local.z;
    (depth >= hole.depth_m - tolerance_m && lateral <= hole.radius_m, depth, lateral)
}

/// Seated tolerance above the hole floor.
pub const SEATED_TOLERANCE_M: f64 = 0.001;

/// Feature-specific outcome test attached to a program step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessCheck {
    /// Object tip inside the hole radius and within 1 mm of its floor.
    Seated { object: String, hole: String },
    /// Peak normal force seen on the button reached its threshold.
    Pressed { button: String },
    /// Object is in the closed gripper.
    Held { object: String },
    /// Lid slid at least this far.
    LidOpen { min_travel_m: f64 },
}

impl SuccessCheck {
    pub fn evaluate(&self, rig: &Rig) -> bool {
        let world = rig.world();
        match self {
            SuccessCheck::Seated { object, hole } => match object_tip(rig, object) {
                Some(tip) => seated(world, hole, &tip, SEATED_TOLERANCE_M).0,
                None => false,
            },
            SuccessCheck::Pressed { button } => match (world.button(button), rig.scene.button_peak_force_n.get(button)) {
                (Some(b), Some(peak)) => *peak >= b.press_force_n,
                _ => false,
            },
            SuccessCheck::Held { object } => {
                rig.scene.gripper_closed && rig.scene.attached.as_ref().is_some_and(|a| &a.object == object)
            }
            SuccessCheck::LidOpen { min_travel_m } => world.lid.is_some() && rig.scene.lid_offset_m >= *min_travel_m,
        }
    }
}

/// Tip of `object`: exact when held, otherwise assumed upright below its
/// grasp point.
pub fn object_tip(rig: &Rig, object: &str) -> Option<Vector3<f64>> {
    let obj = rig.world().object(object)?;
    if rig.scene.attached.as_ref().is_some_and(|a| a.object == object) {
        return Some(rig.tip_position());
    }
    let grasp = rig.scene.object_position(object)?;
    Some(grasp - rig.world().board_normal() * obj.length_m)
}

/// Moves the empty gripper above the primitive's first sample, puts
/// `object` in the hand and executes the primitive.
pub fn run_insertion(
    world: &BoardWorld,
    hole: &str,
    object: &str,
    primitive: &mut Primitive,
    cfg: &ExecutionConfig,
    feedback: &mut dyn FeedbackSource,
) -> Option<InsertionOutcome> {
    let model = ChainModel::default_arm();
    let q0 = model.ready_configuration();
    let mut rig = Rig::new(model, world.clone(), q0);
    let first = primitive.samples.first()?.pose;
    let mut sp = rig.hold_setpoint();
    sp.x_goal = Pose::new(first.position + world.board_normal() * 0.02, first.orientation);
    for _ in 0..PRE_POSITION_TICKS {
        rig.tick(&sp).ok()?;
    }
    if !rig.place_in_gripper(object) {
        return None;
    }
    let report = execute_primitive(primitive, &mut rig, feedback, cfg);
    let (ok, depth_m, lateral_m) = seated(world, hole, &rig.tip_position(), SEATED_TOLERANCE_M);
    Some(InsertionOutcome {
        success: ok && report.completed,
        report,
        depth_m,
        lateral_m,
    })
}

/// Tool orientation of the arm's ready configuration (pointing down).
pub fn ready_orientation() -> UnitQuaternion<f64> {
    let model = ChainModel::default_arm();
    model
        .forward_kinematics(&model.ready_configuration())
        .map(|p| p.orientation)
        .unwrap_or_else(|_| UnitQuaternion::identity())
}
