//! Haptic refinement: touch two board sides with a yaw-compliant gripper
//! pad, read the contact lines and intersect them.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::frames::{FrameTransform, BOARD_FRAME, ROBOT_FRAME};
use crate::control::{default_stiffness, GripperCommand};
use crate::error::LocalizationError;
use crate::pose::{slerp, Pose, Wrench};
use crate::rig::{Rig, Setpoint};

/// Which board side to touch. `X` is the face whose outward normal is the
/// board's −x axis, `Y` the −y face; together they meet at one corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoardSide {
    XSide,
    YSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Start distance outside the estimated face.
    pub standoff_m: f64,
    pub approach_speed_m_s: f64,
    pub contact_force_n: f64,
    /// Tool speed below which the pad counts as stalled against the face.
    pub stall_speed_m_s: f64,
    pub stall_rate_rad_s: f64,
    /// Maximum attractor travel past the start point.
    pub travel_budget_m: f64,
    /// Pad height below the board's top face.
    pub depth_below_top_m: f64,
    /// Clearance above the board top for moves between probes.
    pub clearance_m: f64,
    pub transit_speed_m_s: f64,
    pub transit_rate_rad_s: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            standoff_m: 0.03,
            approach_speed_m_s: 0.01,
            contact_force_n: 5.0,
            stall_speed_m_s: 0.002,
            stall_rate_rad_s: 0.002,
            travel_budget_m: 0.05,
            depth_below_top_m: 0.025,
            clearance_m: 0.04,
            transit_speed_m_s: 0.05,
            transit_rate_rad_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub side: BoardSide,
    /// A point on the contact line, robot frame.
    pub point_m: Vector3<f64>,
    /// Unit direction of the contact line, horizontal.
    pub direction: Vector3<f64>,
    pub residual_wrench: Wrench,
}

impl ProbeResult {
    pub fn is_valid(&self) -> bool {
        self.point_m.iter().all(|v| v.is_finite()) && (self.direction.norm() - 1.0).abs() < 1e-9
    }
}

/// Settle ticks after each transit move.
const SETTLE_TICKS: usize = 30;
/// Ticks the attractor holds at the end of its travel before giving up.
const FINAL_HOLD_TICKS: usize = 300;
/// Consecutive stalled ticks before the contact is accepted.
const STALL_DWELL_TICKS: usize = 10;

struct Plan {
    above_start: Pose,
    start: Pose,
    approach: Vector3<f64>,
    edge: Vector3<f64>,
}

fn plan(estimate: &FrameTransform, side: BoardSide, extents: [f64; 3], rig: &Rig, cfg: &ProbeConfig) -> Plan {
    let [lx, ly, _] = extents;
    let (face_mid, inward, along) = match side {
        BoardSide::XSide => (Vector3::new(-lx / 2.0, 0.0, 0.0), Vector3::x(), Vector3::y()),
        BoardSide::YSide => (Vector3::new(0.0, -ly / 2.0, 0.0), Vector3::y(), Vector3::x()),
    };
    let rot = estimate.pose.orientation;
    let approach = horizontal(&(rot * inward));
    let mut edge = horizontal(&(rot * along));
    // the pad is symmetric; take whichever sign needs less wrist rotation
    let tool_y = rig.ee_pose().orientation * Vector3::y();
    if tool_y.dot(&edge) < 0.0 {
        edge = -edge;
    }
    let down = -Vector3::z();
    let x_axis = edge.cross(&down);
    let orientation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        Matrix3::from_columns(&[x_axis, edge, down]),
    ));
    let top = estimate.apply_point(&face_mid);
    let start_pos = top - approach * cfg.standoff_m - Vector3::z() * cfg.depth_below_top_m;
    let above = Vector3::new(start_pos.x, start_pos.y, top.z + cfg.clearance_m);
    Plan {
        above_start: Pose::new(above, orientation),
        start: Pose::new(start_pos, orientation),
        approach,
        edge,
    }
}

fn horizontal(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, 0.0).normalize()
}

fn setpoint(rig: &Rig, goal: Pose, stiffness: Vector6<f64>) -> Setpoint {
    Setpoint {
        x_goal: goal,
        stiffness_target: stiffness,
        q_ns: rig.model().ready_configuration(),
        gripper: GripperCommand::Hold,
        external: None,
    }
}

/// Straight-line attractor ramp from the current goal to `goal`, then a
/// short settle.
pub fn move_to(rig: &mut Rig, from: Pose, goal: Pose, stiffness: Vector6<f64>, speed_m_s: f64, rate_rad_s: f64) -> Result<(), LocalizationError> {
    let dt = rig.dt();
    let dist = (goal.position - from.position).norm();
    let angle = from.orientation.angle_to(&goal.orientation);
    let n = ((dist / (speed_m_s * dt)).max(angle / (rate_rad_s * dt))).ceil().max(1.0) as usize;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        let p = Pose::new(
            from.position + (goal.position - from.position) * s,
            slerp(&from.orientation, &goal.orientation, s),
        );
        rig.tick(&setpoint(rig, p, stiffness))?;
    }
    for _ in 0..SETTLE_TICKS {
        rig.tick(&setpoint(rig, goal, stiffness))?;
    }
    Ok(())
}

/// Moves to a standoff outside the estimated side face, then drives the
/// attractor through the face with zero yaw stiffness so the pad lies flat
/// against it. Contact is declared once the pressing force exceeds the
/// threshold and the tool has stalled. The arm backs off and rises again
/// before returning.
pub fn haptic_probe(
    estimate: &FrameTransform,
    side: BoardSide,
    rig: &mut Rig,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, LocalizationError> {
    estimate.expect_frames(BOARD_FRAME, ROBOT_FRAME)?;
    if !estimate.is_valid() {
        return Err(LocalizationError::Parameter("board estimate is not a finite rigid transform".into()));
    }
    if !(cfg.approach_speed_m_s > 0.0 && cfg.travel_budget_m > 0.0 && cfg.contact_force_n > 0.0) {
        return Err(LocalizationError::Parameter("probe speed, budget and threshold must be positive".into()));
    }
    let extents = rig.world().extents_m;
    let plan = plan(estimate, side, extents, rig, cfg);
    let stiff = default_stiffness();
    let mut yaw_free = stiff;
    yaw_free[5] = 0.0;

    let here = rig.ee_pose();
    let lift = Pose::new(
        Vector3::new(here.position.x, here.position.y, here.position.z.max(plan.above_start.position.z)),
        here.orientation,
    );
    move_to(rig, here, lift, stiff, cfg.transit_speed_m_s, cfg.transit_rate_rad_s)?;
    move_to(rig, lift, plan.above_start, stiff, cfg.transit_speed_m_s, cfg.transit_rate_rad_s)?;
    move_to(rig, plan.above_start, plan.start, stiff, cfg.transit_speed_m_s, cfg.transit_rate_rad_s)?;

    let dt = rig.dt();
    let travel_ticks = (cfg.travel_budget_m / (cfg.approach_speed_m_s * dt)).ceil() as usize;
    let mut contact = None;
    let mut dwell = 0;
    let mut goal = plan.start;
    for i in 1..=travel_ticks + FINAL_HOLD_TICKS {
        let s = (i.min(travel_ticks) as f64) * cfg.approach_speed_m_s * dt;
        goal.position = plan.start.position + plan.approach * s;
        rig.tick(&setpoint(rig, goal, yaw_free))?;
        let pressing = -rig.filtered_force.dot(&plan.approach);
        let twist = rig.ee_twist();
        let speed = twist.fixed_rows::<3>(0).norm();
        // the pad must also have stopped turning, or the yaw is read mid-swing
        if pressing > cfg.contact_force_n && speed < cfg.stall_speed_m_s && twist[5].abs() < cfg.stall_rate_rad_s {
            dwell += 1;
            if dwell >= STALL_DWELL_TICKS {
                contact = Some(rig.ee_pose());
                break;
            }
        } else {
            dwell = 0;
        }
    }
    let residual = rig.last_wrench;

    // back off along the approach line, then restore yaw stiffness on the way up
    let at = rig.ee_pose();
    let backed = Pose::new(at.position - plan.approach * cfg.standoff_m, at.orientation);
    move_to(rig, Pose::new(goal.position, at.orientation), backed, yaw_free, cfg.transit_speed_m_s, cfg.transit_rate_rad_s)?;
    let up = Pose::new(Vector3::new(backed.position.x, backed.position.y, plan.above_start.position.z), plan.above_start.orientation);
    move_to(rig, backed, up, stiff, cfg.transit_speed_m_s, cfg.transit_rate_rad_s)?;

    let pose = contact.ok_or(LocalizationError::NoContact { budget_m: cfg.travel_budget_m })?;
    let mut direction = horizontal(&(pose.orientation * Vector3::y()));
    if direction.dot(&plan.edge) < 0.0 {
        direction = -direction;
    }
    Ok(ProbeResult {
        side,
        point_m: pose.position,
        direction,
        residual_wrench: residual,
    })
}

/// Closest point between two lines; the midpoint of the shortest segment
/// when they are skew.
pub fn intersect_lines(
    p1: &Vector3<f64>,
    d1: &Vector3<f64>,
    p2: &Vector3<f64>,
    d2: &Vector3<f64>,
) -> Result<Vector3<f64>, LocalizationError> {
    let (n1, n2) = (d1.norm(), d2.norm());
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(LocalizationError::Parameter("line direction is zero".into()));
    }
    let (u, v) = (d1 / n1, d2 / n2);
    let cos = u.dot(&v).abs();
    if cos >= 10f64.to_radians().cos() {
        return Err(LocalizationError::ParallelLines(cos));
    }
    let w = p1 - p2;
    let b = u.dot(&v);
    let (d, e) = (u.dot(&w), v.dot(&w));
    let den = 1.0 - b * b;
    let s = (b * e - d) / den;
    let t = (e - b * d) / den;
    Ok(((p1 + u * s) + (p2 + v * t)) / 2.0)
}

/// Planar update of a board estimate from an x-side and a y-side probe:
/// yaw from the contact directions, origin from their corner and the known
/// extents. Height, roll and pitch stay with the estimate.
pub fn refine_estimate(
    estimate: &FrameTransform,
    probe_x: &ProbeResult,
    probe_y: &ProbeResult,
    extents_m: [f64; 3],
) -> Result<FrameTransform, LocalizationError> {
    estimate.expect_frames(BOARD_FRAME, ROBOT_FRAME)?;
    if probe_x.side != BoardSide::XSide || probe_y.side != BoardSide::YSide {
        return Err(LocalizationError::Parameter("refinement needs one x-side and one y-side probe".into()));
    }
    if !probe_x.is_valid() || !probe_y.is_valid() {
        return Err(LocalizationError::Parameter("probe result is not finite or not unit".into()));
    }
    let flat = |p: &Vector3<f64>| Vector3::new(p.x, p.y, 0.0);
    let corner = intersect_lines(&flat(&probe_x.point_m), &flat(&probe_x.direction), &flat(&probe_y.point_m), &flat(&probe_y.direction))?;

    let est_yaw = estimate.pose.yaw();
    // edge directions are sign-ambiguous; fold each onto the estimate
    let fold = |a: f64| est_yaw + wrap_half_turn(a - est_yaw);
    // x-side contact runs along the board y axis, y-side along board x
    let yaw_x = fold(probe_x.direction.y.atan2(probe_x.direction.x) - std::f64::consts::FRAC_PI_2);
    let yaw_y = fold(probe_y.direction.y.atan2(probe_y.direction.x));
    let yaw = 0.5 * (yaw_x + yaw_y);

    let [lx, ly, _] = extents_m;
    let (c, s) = (yaw.cos(), yaw.sin());
    let half = Vector3::new(lx / 2.0, ly / 2.0, 0.0);
    let offset = Vector3::new(c * half.x - s * half.y, s * half.x + c * half.y, 0.0);
    let origin = corner + offset;
    let dyaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw - est_yaw);
    let pose = Pose::new(
        Vector3::new(origin.x, origin.y, estimate.pose.position.z),
        dyaw * estimate.pose.orientation,
    );
    Ok(FrameTransform::board_in_robot(pose))
}

/// Angle folded into [−π/2, π/2).
fn wrap_half_turn(a: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    (a + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2
}
