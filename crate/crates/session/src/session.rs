//! The teaching session: one arm, one board, a primitive library kept in
//! the frame it was recorded in, the board estimates, and a mode machine
//! that decides which commands are legal.

use std::path::Path;

use kinesis_core::control::{default_stiffness, GripperCommand, ImpedanceGains};
use kinesis_core::error::{check_schema_version, LocalizationError, SimError, StoreError, TrajectoryError, WorldError};
use kinesis_core::lfd::execute::{execute_primitive, ExecutionConfig, FailureCause, FeedbackSource, TickLog};
use kinesis_core::lfd::primitive::PrimitiveLibrary;
use kinesis_core::lfd::{Primitive, TaskProgram, Trajectory};
use kinesis_core::localization::frames::{transform_trajectory, FrameTransform};
use kinesis_core::localization::pipeline::{haptic_refine, visual_estimate, LocalizationConfig};
use kinesis_core::rig::{RigConfig, SceneState};
use kinesis_core::sim::SimConfig;
use kinesis_core::{BoardWorld, ChainModel, JointState, Pose, Rig, Setpoint, Wrench};
use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::command::{Overlay, StateSnapshot, TeachCommand};

pub const SESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Kinesthetic,
    Execute,
    Localize,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Idle => "idle",
            Mode::Kinesthetic => "kinesthetic",
            Mode::Execute => "execute",
            Mode::Localize => "localize",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("`{command}` is not accepted in {mode} mode")]
    WrongMode { command: &'static str, mode: Mode },
    #[error("no recording with at least two samples to save")]
    NothingRecorded,
    #[error("invalid command: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub execution: ExecutionConfig,
    /// Stop a program at the first failed step.
    pub halt_on_failure: bool,
    /// Length of one correction increment.
    pub correction_step_m: f64,
    /// Spring and damper of the emulated teacher hand in kinesthetic mode.
    pub hand_stiffness_n_per_m: f64,
    pub hand_damping_ns_per_m: f64,
    /// Drag targets are clamped into this box (robot frame).
    pub workspace_min_m: [f64; 3],
    pub workspace_max_m: [f64; 3],
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            execution: ExecutionConfig::default(),
            halt_on_failure: false,
            correction_step_m: 0.001,
            hand_stiffness_n_per_m: 200.0,
            hand_damping_ns_per_m: 40.0,
            workspace_min_m: [0.2, -0.6, 0.0],
            workspace_max_m: [0.8, 0.6, 0.8],
        }
    }
}

/// Board pose at teaching time, the last visual and haptic stages, and
/// the estimate primitives are currently retargeted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub reference: FrameTransform,
    pub visual: Option<FrameTransform>,
    pub haptic: Option<FrameTransform>,
    pub current: FrameTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub primitive: String,
    pub completed: bool,
    pub success: bool,
    pub spiraled: bool,
    pub exploration_activations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub ticks: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgramReport {
    pub steps: Vec<StepReport>,
    pub halted: bool,
}

impl ProgramReport {
    pub fn all_succeeded(&self) -> bool {
        !self.halted && self.steps.iter().all(|s| s.success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual: Option<FrameTransform>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub haptic: Option<FrameTransform>,
    pub icp_rms_m: Option<f64>,
}

/// What a successfully handled command produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done,
    /// Drag target moved into the workspace box.
    Clamped([f64; 3]),
    Saved { name: String, samples: usize },
    Program(ProgramReport),
    Localized(LocalizationSummary),
}

impl Outcome {
    pub fn detail(&self) -> Option<String> {
        match self {
            Outcome::Done => None,
            Outcome::Clamped(p) => Some(format!("clamped to [{:.3}, {:.3}, {:.3}]", p[0], p[1], p[2])),
            Outcome::Saved { name, samples } => Some(format!("saved {name} ({samples} samples)")),
            Outcome::Program(r) => Some(format!(
                "{}/{} steps succeeded",
                r.steps.iter().filter(|s| s.success).count(),
                r.steps.len()
            )),
            Outcome::Localized(s) => s.haptic.as_ref().or(s.visual.as_ref()).map(|t| {
                format!(
                    "board at [{:.4}, {:.4}, {:.4}] yaw {:.3}",
                    t.pose.position.x,
                    t.pose.position.y,
                    t.pose.position.z,
                    t.pose.yaw()
                )
            }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    mode: Mode,
    seed: u64,
    pub settings: SessionSettings,
    /// Not persisted; a loaded session starts from the defaults.
    pub localization: LocalizationConfig,
    rig: Rig,
    library: PrimitiveLibrary,
    estimates: Estimates,
    localizations: u64,
    hold: Pose,
    hand: Option<Vector3<f64>>,
    pending_gripper: GripperCommand,
    recording: Option<Trajectory>,
    log: Vec<TickLog>,
}

impl Session {
    /// Arm at its ready configuration, board where `world` has it. That
    /// pose becomes the reference frame for anything recorded now.
    pub fn new(world: BoardWorld, seed: u64) -> Result<Self, SessionError> {
        world.validate()?;
        let model = ChainModel::default_arm();
        let q0 = model.ready_configuration();
        let rig = Rig::new(model, world, q0);
        let reference = FrameTransform::board_in_robot(rig.world().board_pose);
        Ok(Self {
            mode: Mode::Idle,
            seed,
            settings: SessionSettings::default(),
            localization: LocalizationConfig::default(),
            hold: rig.ee_pose(),
            rig,
            library: PrimitiveLibrary::default(),
            estimates: Estimates {
                visual: None,
                haptic: None,
                current: reference.clone(),
                reference,
            },
            localizations: 0,
            hand: None,
            pending_gripper: GripperCommand::Hold,
            recording: None,
            log: Vec::new(),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rig(&self) -> &Rig {
        &self.rig
    }

    pub fn world(&self) -> &BoardWorld {
        self.rig.world()
    }

    pub fn library(&self) -> &PrimitiveLibrary {
        &self.library
    }

    pub fn estimates(&self) -> &Estimates {
        &self.estimates
    }

    /// Concatenated execution logs of every primitive run so far.
    pub fn log(&self) -> &[TickLog] {
        &self.log
    }

    pub fn clear_log(&mut self) {
        self.log.clear();
    }

    pub fn recording(&self) -> Option<&Trajectory> {
        self.recording.as_ref()
    }

    /// Session clock in control ticks.
    pub fn tick_count(&self) -> u64 {
        self.rig.ticks
    }

    /// Adds primitives recorded elsewhere; their recording frames are kept.
    pub fn add_primitive(&mut self, p: Primitive) -> Result<(), SessionError> {
        p.validate()?;
        self.library.insert(p)?;
        Ok(())
    }

    pub fn add_library(&mut self, lib: &PrimitiveLibrary) -> Result<(), SessionError> {
        for name in lib.names() {
            if let Some(p) = lib.get(name) {
                self.add_primitive(p.clone())?;
            }
        }
        Ok(())
    }

    /// Overrides the estimate primitives are retargeted to, e.g. when the
    /// board pose is known from elsewhere.
    pub fn set_current_estimate(&mut self, pose: Pose) {
        self.estimates.current = FrameTransform::board_in_robot(pose);
    }

    /// A primitive as it would run now: samples moved from its recording
    /// frame to the current estimate.
    pub fn retargeted(&self, name: &str) -> Result<Primitive, SessionError> {
        let stored = self
            .library
            .get(name)
            .ok_or_else(|| StoreError::MissingPrimitive(name.to_string()))?;
        let mut p = stored.clone();
        let start = FrameTransform::board_in_robot(stored.recording_frame);
        p.samples = transform_trajectory(&stored.samples, &start, &self.estimates.current)?;
        p.recording_frame = self.estimates.current.pose;
        Ok(p)
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let ee = self.rig.ee_pose();
        StateSnapshot {
            tick: self.rig.ticks,
            t_s: self.rig.state.t,
            mode: self.mode,
            q_rad: self.rig.state.q.iter().copied().collect(),
            ee_pose: ee,
            x_goal: self.hold,
            wrench: self.rig.last_wrench,
            insertion_force_n: self.rig.filtered_normal_force(),
            stiffness: self.rig.gains.stiffness.into(),
            gripper_closed: self.rig.scene.gripper_closed,
            exploration_active: false,
            exploration_offset_m: [0.0; 2],
            overlay: self.recording.as_ref().map(|r| Overlay {
                primitive: "recording".into(),
                positions_m: r.samples().iter().map(|s| s.pose.position.into()).collect(),
            }),
        }
    }

    /// One control tick outside execution: hold the last pose in idle mode,
    /// follow the teacher's hand in kinesthetic mode.
    pub fn step(&mut self) -> Result<(), SessionError> {
        let gripper = std::mem::take(&mut self.pending_gripper);
        let mut sp = Setpoint {
            x_goal: self.hold,
            stiffness_target: default_stiffness(),
            q_ns: self.rig.model().ready_configuration(),
            gripper,
            external: None,
        };
        match self.mode {
            Mode::Idle => {}
            Mode::Kinesthetic => {
                sp.stiffness_target = Vector6::zeros();
                sp.x_goal = self.rig.ee_pose();
                if let Some(target) = self.hand {
                    let v = self.rig.ee_twist().fixed_rows::<3>(0).into_owned();
                    let force = (target - sp.x_goal.position) * self.settings.hand_stiffness_n_per_m
                        - v * self.settings.hand_damping_ns_per_m;
                    sp.external = Some(Wrench {
                        force,
                        torque: Vector3::zeros(),
                    });
                }
            }
            mode => {
                return Err(SessionError::WrongMode {
                    command: "step",
                    mode,
                })
            }
        }
        self.rig.tick(&sp)?;
        if self.mode == Mode::Kinesthetic && self.hand.is_some() {
            if let Some(rec) = &mut self.recording {
                rec.record_sample(self.rig.ee_pose(), gripper, self.rig.state.t)?;
            }
        }
        Ok(())
    }

    /// Handles one command. `feedback` supplies online corrections while a
    /// program started by this command runs.
    pub fn handle(&mut self, command: TeachCommand, feedback: &mut dyn FeedbackSource) -> Result<Outcome, SessionError> {
        let kind = command.kind();
        let wrong = |mode| SessionError::WrongMode { command: kind, mode };
        match (command, self.mode) {
            (TeachCommand::StartRecording {}, Mode::Idle) => {
                self.mode = Mode::Kinesthetic;
                self.recording = Some(Trajectory::new());
                self.hand = None;
                Ok(Outcome::Done)
            }
            (TeachCommand::StopRecording {}, Mode::Kinesthetic) => {
                self.mode = Mode::Idle;
                self.hand = None;
                self.hold = self.rig.ee_pose();
                Ok(Outcome::Done)
            }
            (TeachCommand::SavePrimitive { name, insertion }, Mode::Idle) => self.save_recording(&name, insertion),
            (TeachCommand::Gripper { command }, Mode::Idle | Mode::Kinesthetic) => {
                self.pending_gripper = command;
                Ok(Outcome::Done)
            }
            (TeachCommand::Drag { position_m }, Mode::Kinesthetic) => {
                let p = Vector3::from(position_m);
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(SessionError::Invalid("drag target is not finite".into()));
                }
                let lo = Vector3::from(self.settings.workspace_min_m);
                let hi = Vector3::from(self.settings.workspace_max_m);
                let clamped = p.sup(&lo).inf(&hi);
                self.hand = Some(clamped);
                Ok(if clamped == p { Outcome::Done } else { Outcome::Clamped(clamped.into()) })
            }
            (TeachCommand::Release {}, Mode::Kinesthetic) => {
                self.hand = None;
                Ok(Outcome::Done)
            }
            (TeachCommand::StartExecution { program }, Mode::Idle) => {
                self.run_task_program(&program, feedback).map(Outcome::Program)
            }
            (TeachCommand::Localize { ablate_icp, ablate_haptic }, Mode::Idle) => {
                self.run_localization_pipeline(ablate_icp, ablate_haptic).map(Outcome::Localized)
            }
            (TeachCommand::SetBoardPose { pose }, Mode::Idle) => {
                self.set_board_pose(pose)?;
                Ok(Outcome::Done)
            }
            (_, mode) => Err(wrong(mode)),
        }
    }

    fn save_recording(&mut self, name: &str, insertion: bool) -> Result<Outcome, SessionError> {
        let rec = match &self.recording {
            Some(r) if r.len() >= 2 => r,
            _ => return Err(SessionError::NothingRecorded),
        };
        let t0 = rec.first().map(|s| s.t_s).unwrap_or(0.0);
        let samples = rec
            .samples()
            .iter()
            .map(|s| kinesis_core::lfd::Sample { t_s: s.t_s - t0, ..*s })
            .collect();
        let p = Primitive::new(name, insertion, self.estimates.current.pose, Trajectory::from_samples(samples)?);
        p.validate()?;
        let n = p.samples.len();
        self.library.insert(p)?;
        self.recording = None;
        Ok(Outcome::Saved {
            name: name.to_string(),
            samples: n,
        })
    }

    /// Physically moves the board; objects go back to their places.
    pub fn set_board_pose(&mut self, pose: Pose) -> Result<(), SessionError> {
        if self.mode != Mode::Idle {
            return Err(SessionError::WrongMode {
                command: "set_board_pose",
                mode: self.mode,
            });
        }
        let mut world = self.rig.world().clone();
        world.board_pose = pose;
        world.validate()?;
        self.rig.scene = SceneState::from_world(&world);
        self.rig.sim.world = world;
        Ok(())
    }

    /// Visual registration against the reference capture, then two side
    /// probes. On failure the previous estimates stay in place.
    pub fn run_localization_pipeline(
        &mut self,
        ablate_icp: bool,
        ablate_haptic: bool,
    ) -> Result<LocalizationSummary, SessionError> {
        if self.mode != Mode::Idle {
            return Err(SessionError::WrongMode {
                command: "localize",
                mode: self.mode,
            });
        }
        if ablate_icp && ablate_haptic {
            return Err(SessionError::Invalid("both localization stages ablated".into()));
        }
        self.mode = Mode::Localize;
        let result = self.localize_stages(ablate_icp, ablate_haptic);
        if let Err(SessionError::Localization(LocalizationError::Sim(_))) = &result {
            self.brake();
        }
        self.mode = Mode::Idle;
        self.hold = self.rig.ee_pose();
        let summary = result?;
        if let Some(v) = &summary.visual {
            self.estimates.visual = Some(v.clone());
        }
        if let Some(h) = &summary.haptic {
            self.estimates.haptic = Some(h.clone());
        }
        if let Some(best) = summary.haptic.as_ref().or(summary.visual.as_ref()) {
            self.estimates.current = best.clone();
        }
        Ok(summary)
    }

    fn localize_stages(&mut self, ablate_icp: bool, ablate_haptic: bool) -> Result<LocalizationSummary, SessionError> {
        let capture_seed = self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(self.localizations);
        self.localizations += 1;
        let (visual, rms) = if ablate_icp {
            (None, None)
        } else {
            let world = self.rig.world().clone();
            let (est, icp) = visual_estimate(&self.estimates.reference, &world, &self.localization, capture_seed)?;
            (Some(est), Some(icp.rms_m))
        };
        let haptic = if ablate_haptic {
            None
        } else {
            let from = visual.clone().unwrap_or_else(|| self.estimates.current.clone());
            let (refined, _) = haptic_refine(&from, &mut self.rig, &self.localization.probe)?;
            Some(refined)
        };
        Ok(LocalizationSummary {
            visual,
            haptic,
            icp_rms_m: rms,
        })
    }

    /// Runs the program's primitives in order, each retargeted to the
    /// current estimate. Corrections and speed-ups are written back to the
    /// stored primitive in its recording frame.
    pub fn run_task_program(
        &mut self,
        program: &TaskProgram,
        feedback: &mut dyn FeedbackSource,
    ) -> Result<ProgramReport, SessionError> {
        if self.mode != Mode::Idle {
            return Err(SessionError::WrongMode {
                command: "start_execution",
                mode: self.mode,
            });
        }
        program.check_against(&self.library)?;
        let mut report = ProgramReport::default();
        self.mode = Mode::Execute;
        for name in &program.primitives {
            let mut p = match self.retargeted(name) {
                Ok(p) => p,
                Err(e) => {
                    self.mode = Mode::Idle;
                    return Err(e);
                }
            };
            let before = p.samples.clone();
            let run = execute_primitive(&mut p, &mut self.rig, feedback, &self.settings.execution);
            if p.samples != before {
                if let Err(e) = self.write_back(name, &p.samples) {
                    self.mode = Mode::Idle;
                    return Err(e);
                }
            }
            let check = program.checks.get(name);
            let success = run.completed && check.is_none_or(|c| c.evaluate(&self.rig));
            report.steps.push(StepReport {
                primitive: name.clone(),
                completed: run.completed,
                success,
                spiraled: run.spiraled(),
                exploration_activations: run.exploration_activations,
                failure: run.failure.as_ref().map(|f| f.label().to_string()),
                ticks: run.ticks,
            });
            self.log.extend(run.log);
            if matches!(run.failure, Some(FailureCause::HardLimit { .. } | FailureCause::Unstable { .. })) {
                self.brake();
            }
            if !success && self.settings.halt_on_failure {
                report.halted = true;
                break;
            }
        }
        self.mode = Mode::Idle;
        self.hold = self.rig.ee_pose();
        Ok(report)
    }

    /// A safety stop: the simulator refused the step, so the joints are
    /// halted where they are and the next command starts from rest.
    fn brake(&mut self) {
        self.rig.state.qd.fill(0.0);
    }

    fn write_back(&mut self, name: &str, samples: &Trajectory) -> Result<(), SessionError> {
        let current = self.estimates.current.clone();
        if let Some(stored) = self.library.get_mut(name) {
            let frame = FrameTransform::board_in_robot(stored.recording_frame);
            stored.samples = transform_trajectory(samples, &current, &frame)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SessionError> {
        if !matches!(self.mode, Mode::Idle | Mode::Kinesthetic) {
            return Err(SessionError::WrongMode {
                command: "save_session",
                mode: self.mode,
            });
        }
        let file = SessionFile {
            schema_version: SESSION_SCHEMA_VERSION,
            seed: self.seed,
            mode: self.mode,
            settings: self.settings.clone(),
            world: self.rig.world().clone(),
            model: self.rig.model().clone(),
            rig: RigSnapshot {
                config: self.rig.config,
                sim: self.rig.sim.config,
                state: self.rig.state.clone(),
                gains: self.rig.gains.clone(),
                scene: self.rig.scene.clone(),
                filtered_force_n: self.rig.filtered_force.into(),
                last_wrench: self.rig.last_wrench,
                ticks: self.rig.ticks,
            },
            estimates: self.estimates.clone(),
            localizations: self.localizations,
            hold_pose: self.hold,
            hand_m: self.hand.map(Into::into),
            pending_gripper: self.pending_gripper,
            recording: self.recording.clone(),
            primitives: self.library.names().filter_map(|n| self.library.get(n).cloned()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file).expect("session serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let value = check_schema_version(text, "session", SESSION_SCHEMA_VERSION)?;
        let file: SessionFile = serde_json::from_value(value).map_err(StoreError::from)?;
        file.world.validate()?;
        if file.rig.state.q.len() != file.model.dof() || file.rig.state.qd.len() != file.model.dof() {
            return Err(StoreError::Invalid("joint state does not match the chain".into()).into());
        }
        let mut rig = Rig::new(file.model, file.world, file.rig.state.q.clone());
        rig.config = file.rig.config;
        rig.sim.config = file.rig.sim;
        rig.state = file.rig.state;
        rig.gains = file.rig.gains;
        rig.scene = file.rig.scene;
        rig.filtered_force = Vector3::from(file.rig.filtered_force_n);
        rig.last_wrench = file.rig.last_wrench;
        rig.ticks = file.rig.ticks;
        let mut library = PrimitiveLibrary::default();
        for p in file.primitives {
            p.validate()?;
            library.insert(p)?;
        }
        Ok(Self {
            mode: file.mode,
            seed: file.seed,
            settings: file.settings,
            localization: LocalizationConfig::default(),
            rig,
            library,
            estimates: file.estimates,
            localizations: file.localizations,
            hold: file.hold_pose,
            hand: file.hand_m.map(Vector3::from),
            pending_gripper: file.pending_gripper,
            recording: file.recording,
            log: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(StoreError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path).map_err(StoreError::from)?;
        Self::from_json(&text)
    }
}

/// Dynamic rig state, enough to continue a run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RigSnapshot {
    config: RigConfig,
    sim: SimConfig,
    state: JointState,
    gains: ImpedanceGains,
    scene: SceneState,
    filtered_force_n: [f64; 3],
    last_wrench: Wrench,
    ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionFile {
    schema_version: u32,
    seed: u64,
    mode: Mode,
    settings: SessionSettings,
    world: BoardWorld,
    model: ChainModel,
    rig: RigSnapshot,
    estimates: Estimates,
    localizations: u64,
    hold_pose: Pose,
    hand_m: Option<[f64; 3]>,
    pending_gripper: GripperCommand,
    recording: Option<Trajectory>,
    primitives: Vec<Primitive>,
}
