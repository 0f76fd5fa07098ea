//! Primitive execution: constant-velocity transition to the primitive's
//! start, attractor streaming with online human feedback, force-triggered
//! spiral search on insertion primitives, and a short settle.

use std::collections::VecDeque;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::GripperCommand;
use crate::error::SimError;
use crate::lfd::correction::{
    apply_correction, speed_up, Correction, DEFAULT_LENGTH_SCALE_M, DEFAULT_SPEEDUP_FACTOR, DEFAULT_SPEEDUP_WINDOW_S,
};
use crate::lfd::exploration::{ExplorationParams, ExplorationState, Transition};
use crate::lfd::primitive::Primitive;
use crate::lfd::trajectory::{Trajectory, SAMPLE_DT};
use crate::pose::{slerp, Pose, Wrench};
use crate::rig::{Rig, Setpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionConfig {
    pub transition_speed_m_s: f64,
    pub transition_rate_rad_s: f64,
    /// Ticks spent holding the last sample after the stream ends.
    pub settle_ticks: usize,
    pub exploration: ExplorationParams,
    pub length_scale_m: f64,
    pub speedup_window_s: f64,
    pub speedup_factor: f64,
    /// Null-space posture; the model's ready configuration when absent.
    pub q_ns: Option<Vec<f64>>,
    pub keep_log: bool,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            transition_speed_m_s: 0.05,
            transition_rate_rad_s: 0.5,
            settle_ticks: 50,
            exploration: ExplorationParams::default(),
            length_scale_m: DEFAULT_LENGTH_SCALE_M,
            speedup_window_s: DEFAULT_SPEEDUP_WINDOW_S,
            speedup_factor: DEFAULT_SPEEDUP_FACTOR,
            q_ns: None,
            keep_log: true,
        }
    }
}

/// One teacher input, consumed at most once per tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feedback {
    /// Cartesian correction increment θ, metres.
    Correction { theta_m: [f64; 3] },
    SpeedUp,
    Gripper { command: GripperCommand },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Transition,
    Stream,
    Settle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickContext {
    pub tick: u64,
    pub phase: Phase,
    pub stream_index: usize,
}

pub trait FeedbackSource {
    fn poll(&mut self, ctx: &TickContext) -> Option<Feedback>;

    /// Called after every executed tick with that tick's log entry and the
    /// primitive's current (possibly reshaped) samples, whether or not the
    /// report keeps a log.
    fn observe(&mut self, _entry: &TickLog, _samples: &Trajectory) {}
}

/// No teacher.
pub struct NoFeedback;

impl FeedbackSource for NoFeedback {
    fn poll(&mut self, _ctx: &TickContext) -> Option<Feedback> {
        None
    }
}

/// Feedback keyed by stream index: each entry fires on the first streaming
/// tick whose index reaches it, one entry per tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedFeedback {
    pub events: VecDeque<(usize, Feedback)>,
}

impl ScriptedFeedback {
    pub fn new(mut events: Vec<(usize, Feedback)>) -> Self {
        events.sort_by_key(|e| e.0);
        Self { events: events.into() }
    }
}

impl FeedbackSource for ScriptedFeedback {
    fn poll(&mut self, ctx: &TickContext) -> Option<Feedback> {
        if ctx.phase != Phase::Stream {
            return None;
        }
        match self.events.front() {
            Some((i, _)) if *i <= ctx.stream_index => self.events.pop_front().map(|e| e.1),
            _ => None,
        }
    }
}

/// Plain FIFO, drained one item per tick regardless of phase.
impl FeedbackSource for VecDeque<Feedback> {
    fn poll(&mut self, _ctx: &TickContext) -> Option<Feedback> {
        self.pop_front()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    Gripper { command: GripperCommand },
    Correction { theta_m: [f64; 3], point_m: [f64; 3] },
    SpeedUp { removed: usize },
    Rejected { reason: String },
    ExplorationActivated,
    ExplorationDeactivated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickLog {
    pub tick: u64,
    pub t_s: f64,
    pub phase: Phase,
    pub stream_index: usize,
    pub x_goal: Pose,
    pub ee_pose: Pose,
    pub q_rad: Vec<f64>,
    /// Cartesian stiffness in effect after the tick's slew.
    pub stiffness: [f64; 6],
    pub wrench: Wrench,
    /// Low-passed contact force along the board normal.
    pub insertion_force_n: f64,
    pub exploration_active: bool,
    pub exploration_offset_m: [f64; 2],
    pub gripper_closed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<LogEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureCause {
    HardLimit { joint: usize, position_rad: f64 },
    Unstable { joint: usize },
    SpiralExhausted,
    Invalid { message: String },
}

impl FailureCause {
    pub fn label(&self) -> &'static str {
        match self {
            FailureCause::HardLimit { .. } => "hard_limit",
            FailureCause::Unstable { .. } => "unstable",
            FailureCause::SpiralExhausted => "spiral_exhausted",
            FailureCause::Invalid { .. } => "invalid",
        }
    }
}

impl From<SimError> for FailureCause {
    fn from(e: SimError) -> Self {
        match e {
            SimError::HardLimit { joint, position, .. } => FailureCause::HardLimit {
                joint,
                position_rad: position,
            },
            SimError::Unstable { joint, .. } => FailureCause::Unstable { joint },
            other => FailureCause::Invalid {
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub primitive: String,
    pub completed: bool,
    pub failure: Option<FailureCause>,
    pub ticks: u64,
    pub stream_ticks: u64,
    pub exploration_activations: usize,
    pub exploration_deactivations: usize,
    pub final_pose: Pose,
    pub log: Vec<TickLog>,
}

impl ExecutionReport {
    pub fn spiraled(&self) -> bool {
        self.exploration_activations > 0
    }
}

struct Runner<'a> {
    rig: &'a mut Rig,
    cfg: &'a ExecutionConfig,
    q_ns: DVector<f64>,
    report: ExecutionReport,
    tick: u64,
}

impl Runner<'_> {
    fn step(
        &mut self,
        phase: Phase,
        stream_index: usize,
        setpoint: &Setpoint,
        explore: &ExplorationState,
        events: Vec<LogEvent>,
        feedback: &mut dyn FeedbackSource,
        samples: &Trajectory,
    ) -> Result<(), FailureCause> {
        self.rig.tick(setpoint)?;
        self.tick += 1;
        self.report.ticks = self.tick;
        if phase == Phase::Stream {
            self.report.stream_ticks += 1;
        }
        let off = explore.offset();
        let entry = TickLog {
            tick: self.tick,
            t_s: self.rig.state.t,
            phase,
            stream_index,
            x_goal: setpoint.x_goal,
            ee_pose: self.rig.ee_pose(),
            q_rad: self.rig.state.q.iter().copied().collect(),
            stiffness: self.rig.gains.stiffness.into(),
            wrench: self.rig.last_wrench,
            insertion_force_n: self.rig.filtered_normal_force(),
            exploration_active: explore.is_active(),
            exploration_offset_m: [off.x, off.y],
            gripper_closed: self.rig.scene.gripper_closed,
            events,
        };
        feedback.observe(&entry, samples);
        if self.cfg.keep_log {
            self.report.log.push(entry);
        }
        Ok(())
    }

    fn setpoint(&self, goal: Pose, stiffness: nalgebra::Vector6<f64>, gripper: GripperCommand) -> Setpoint {
        Setpoint {
            x_goal: goal,
            stiffness_target: stiffness,
            q_ns: self.q_ns.clone(),
            gripper,
            external: None,
        }
    }
}

/// Runs `primitive` on `rig`. Corrections and speed-ups are written back
/// into `primitive.samples` so the stored primitive improves.
pub fn execute_primitive(
    primitive: &mut Primitive,
    rig: &mut Rig,
    feedback: &mut dyn FeedbackSource,
    cfg: &ExecutionConfig,
) -> ExecutionReport {
    let q_ns = match &cfg.q_ns {
        Some(q) => DVector::from_column_slice(q),
        None => rig.model().ready_configuration(),
    };
    let start_pose = rig.ee_pose();
    let mut runner = Runner {
        rig,
        cfg,
        q_ns,
        report: ExecutionReport {
            primitive: primitive.name.clone(),
            completed: false,
            failure: None,
            ticks: 0,
            stream_ticks: 0,
            exploration_activations: 0,
            exploration_deactivations: 0,
            final_pose: start_pose,
            log: Vec::new(),
        },
        tick: 0,
    };
    let result = run(primitive, &mut runner, feedback);
    let mut report = runner.report;
    report.final_pose = runner.rig.ee_pose();
    match result {
        Ok(()) => report.completed = true,
        Err(cause) => report.failure = Some(cause),
    }
    report
}

fn run(primitive: &mut Primitive, r: &mut Runner<'_>, feedback: &mut dyn FeedbackSource) -> Result<(), FailureCause> {
    if primitive.samples.is_empty() {
        return Err(FailureCause::Invalid {
            message: format!("primitive `{}` has no samples", primitive.name),
        });
    }
    let dt = r.rig.dt();
    let stiffness = primitive.stiffness();
    let mut explore = ExplorationState::new(r.cfg.exploration).map_err(|e| FailureCause::Invalid {
        message: e.to_string(),
    })?;

    // constant-velocity transition
    let from = r.rig.ee_pose();
    let to = primitive.samples.samples()[0].pose;
    let dist = (to.position - from.position).norm();
    let angle = from.orientation.angle_to(&to.orientation);
    let n = ((dist / (r.cfg.transition_speed_m_s * dt)).ceil())
        .max((angle / (r.cfg.transition_rate_rad_s * dt)).ceil())
        .max(1.0) as usize;
    for k in 1..=n {
        let s = k as f64 / n as f64;
        let goal = Pose::new(
            from.position + (to.position - from.position) * s,
            slerp(&from.orientation, &to.orientation, s),
        );
        let ctx = TickContext {
            tick: r.tick,
            phase: Phase::Transition,
            stream_index: 0,
        };
        let mut events = Vec::new();
        let mut gripper = GripperCommand::Hold;
        if let Some(Feedback::Gripper { command }) = feedback.poll(&ctx) {
            gripper = command;
            events.push(LogEvent::Gripper { command });
        }
        let sp = r.setpoint(goal, stiffness, gripper);
        r.step(Phase::Transition, 0, &sp, &explore, events, feedback, &primitive.samples)?;
    }

    // attractor stream
    let world = r.rig.world();
    let normal = world.board_normal();
    let lateral = Matrix3::identity() - normal * normal.transpose();
    let board_rot = world.board_pose.orientation;
    let (ex, ey) = (board_rot * Vector3::x(), board_rot * Vector3::y());
    let mut frozen = Vector3::zeros();
    let mut contact_level = 0.0;
    let mut last_goal = to;
    let mut idx = 0usize;
    while idx < primitive.samples.len() {
        let ctx = TickContext {
            tick: r.tick,
            phase: Phase::Stream,
            stream_index: idx,
        };
        let mut events = Vec::new();
        let mut gripper_override = None;
        match feedback.poll(&ctx) {
            Some(Feedback::Correction { theta_m }) => {
                let point = r.rig.ee_pose().position;
                match Correction::new(Vector3::from(theta_m), r.cfg.length_scale_m, point) {
                    Ok(c) => {
                        primitive.samples = apply_correction(&primitive.samples, &c);
                        events.push(LogEvent::Correction {
                            theta_m,
                            point_m: point.into(),
                        });
                    }
                    Err(e) => events.push(LogEvent::Rejected { reason: e.to_string() }),
                }
            }
            Some(Feedback::SpeedUp) => {
                match speed_up(&primitive.samples, idx, r.cfg.speedup_window_s, r.cfg.speedup_factor, SAMPLE_DT) {
                    Ok(out) => {
                        events.push(LogEvent::SpeedUp {
                            removed: out.removed.len(),
                        });
                        primitive.samples = out.trajectory;
                    }
                    Err(e) => events.push(LogEvent::Rejected { reason: e.to_string() }),
                }
            }
            Some(Feedback::Gripper { command }) => gripper_override = Some(command),
            None => {}
        }
        let sample = primitive.samples.samples()[idx];
        let gripper = gripper_override.unwrap_or(sample.gripper);
        if gripper != GripperCommand::Hold {
            events.push(LogEvent::Gripper { command: gripper });
        }
        let mut goal = sample.pose;
        goal.position += frozen;
        if explore.is_active() {
            let off = explore.advance(dt);
            let center = lateral * explore.center();
            goal.position = center + ex * off.x + ey * off.y + normal * (contact_level - r.cfg.exploration.press_depth_m);
        }
        let sp = r.setpoint(goal, stiffness, gripper);
        let explore_before = explore;
        r.step(Phase::Stream, idx, &sp, &explore_before, events, feedback, &primitive.samples)?;
        last_goal = goal;

        if primitive.insertion {
            let force = r.rig.filtered_normal_force();
            let position = r.rig.ee_pose().position;
            match explore.update(force, &position) {
                Transition::Activated => {
                    contact_level = normal.dot(&position);
                    r.report.exploration_activations += 1;
                    push_event(r, LogEvent::ExplorationActivated);
                }
                Transition::Deactivated => {
                    // keep the discovered lateral shift for the rest of the stream;
                    // the tool, not the lagging spiral goal, is over the hole now
                    frozen = lateral * (position - sample.pose.position) + normal * normal.dot(&frozen);
                    r.report.exploration_deactivations += 1;
                    push_event(r, LogEvent::ExplorationDeactivated);
                }
                Transition::None => {}
            }
            if explore.exhausted() {
                return Err(FailureCause::SpiralExhausted);
            }
        }
        if !explore.is_active() {
            idx += 1;
        }
    }

    for _ in 0..r.cfg.settle_ticks {
        let sp = r.setpoint(last_goal, stiffness, GripperCommand::Hold);
        let last = primitive.samples.len() - 1;
        r.step(Phase::Settle, last, &sp, &explore, Vec::new(), feedback, &primitive.samples)?;
    }
    Ok(())
}

fn push_event(r: &mut Runner<'_>, e: LogEvent) {
    if let Some(last) = r.report.log.last_mut() {
        last.events.push(e);
    }
}
