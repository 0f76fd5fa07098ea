//! Seeded benchmark harnesses: the spiral insertion sweep, localization
//! accuracy, the localization ablation on battery placement, and the full
//! board program over several board poses. Every trial starts from a fresh
//! world and a seed derived from the run seed and the trial index.

use std::path::Path;

use kinesis_core::lfd::execute::{execute_primitive, NoFeedback};
use kinesis_core::lfd::ExecutionConfig;
use kinesis_core::localization::frames::{transform_trajectory, FrameTransform};
use kinesis_core::localization::pipeline::{haptic_refine, localize, LocalizationConfig};
use kinesis_core::scenario::{insertion_demo, ready_orientation, run_insertion, seated, SEATED_TOLERANCE_M};
use kinesis_core::{BoardWorld, ChainModel, Pose, Rig};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demos::board_demonstrations;
use crate::session::{Session, SessionError};

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(trial as u64))
}

/// Uniform sample in a disc.
fn in_disc(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    let r = radius * rng.random::<f64>().sqrt();
    let a = rng.random::<f64>() * std::f64::consts::TAU;
    Vector3::new(r * a.cos(), r * a.sin(), 0.0)
}

fn displaced(world: &BoardWorld, shift: Vector3<f64>, yaw: f64) -> Pose {
    let p = world.board_pose;
    Pose::from_xyz_yaw(p.position.x + shift.x, p.position.y + shift.y, p.position.z, p.yaw() + yaw)
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralTrial {
    pub trial: usize,
    pub error_x_mm: f64,
    pub error_y_mm: f64,
    pub success: bool,
    pub spiraled: bool,
    pub failure: Option<String>,
}

/// Key insertion with the demonstration displaced by a planar error drawn
/// uniformly from a disc, standing in for a board estimate that far off.
pub fn spiral_trials(trials: usize, seed: u64, radius_m: f64) -> Vec<SpiralTrial> {
    let world = BoardWorld::task_board();
    let cfg = ExecutionConfig {
        keep_log: false,
        ..ExecutionConfig::default()
    };
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let err = in_disc(&mut trial_rng(seed, trial), radius_m);
            let out = insertion_demo(&world, "key_hole", "key", err, ready_orientation())
                .and_then(|mut p| run_insertion(&world, "key_hole", "key", &mut p, &cfg, &mut NoFeedback));
            SpiralTrial {
                trial,
                error_x_mm: err.x * 1e3,
                error_y_mm: err.y * 1e3,
                success: out.as_ref().is_some_and(|o| o.success),
                spiraled: out.as_ref().is_some_and(|o| o.report.spiraled()),
                failure: out.and_then(|o| o.report.failure.map(|f| f.label().to_string())),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationTrial {
    pub trial: usize,
    pub shift_x_mm: f64,
    pub shift_y_mm: f64,
    pub shift_yaw_deg: f64,
    pub visual_error_mm: f64,
    pub visual_yaw_error_deg: f64,
    pub refined_error_mm: f64,
    pub refined_yaw_error_deg: f64,
    pub failure: Option<String>,
}

impl LocalizationTrial {
    pub fn refined_beats_visual(&self) -> bool {
        self.failure.is_none() && self.refined_error_mm < self.visual_error_mm
    }
}

fn yaw_error(a: &Pose, b: &Pose) -> f64 {
    let d = a.yaw() - b.yaw();
    d.sin().atan2(d.cos())
}

/// Board displaced within a disc of `max_shift_m` and ±`max_yaw_rad`,
/// localized from the reference capture; errors are planar.
pub fn localization_trials(trials: usize, seed: u64, max_shift_m: f64, max_yaw_rad: f64) -> Vec<LocalizationTrial> {
    let base = BoardWorld::task_board();
    let start = FrameTransform::board_in_robot(base.board_pose);
    let model = ChainModel::default_arm();
    let cfg = LocalizationConfig::default();
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let shift = in_disc(&mut rng, max_shift_m);
            let yaw = (rng.random::<f64>() * 2.0 - 1.0) * max_yaw_rad;
            let mut world = base.clone();
            world.board_pose = displaced(&base, shift, yaw);
            let truth = world.board_pose;
            let mut rig = Rig::new(model.clone(), world, model.ready_configuration());
            let mut row = LocalizationTrial {
                trial,
                shift_x_mm: shift.x * 1e3,
                shift_y_mm: shift.y * 1e3,
                shift_yaw_deg: yaw.to_degrees(),
                visual_error_mm: f64::NAN,
                visual_yaw_error_deg: f64::NAN,
                refined_error_mm: f64::NAN,
                refined_yaw_error_deg: f64::NAN,
                failure: None,
            };
            match localize(&start, &mut rig, &cfg, rng.random()) {
                Ok(rep) => {
                    row.visual_error_mm = (rep.visual.pose.position - truth.position).xy().norm() * 1e3;
                    row.visual_yaw_error_deg = yaw_error(&rep.visual.pose, &truth).abs().to_degrees();
                    row.refined_error_mm = (rep.refined.pose.position - truth.position).xy().norm() * 1e3;
                    row.refined_yaw_error_deg = yaw_error(&rep.refined.pose, &truth).abs().to_degrees();
                }
                Err(e) => row.failure = Some(e.to_string()),
            }
            row
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    VisualOnly,
    Haptic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTrial {
    pub arm: AblationArm,
    pub trial: usize,
    pub estimate_error_mm: f64,
    pub success: bool,
    pub spiraled: bool,
    pub failure: Option<String>,
}

/// Knobs of the battery-placement ablation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationSetup {
    /// Board displacement: planar disc radius and yaw bound.
    pub max_shift_m: f64,
    pub max_yaw_rad: f64,
    /// Per-axis planar noise of the visual-only estimate.
    pub visual_sigma_m: f64,
    /// Lateral offset of the battery in the fingers, random direction.
    pub grasp_offset_m: f64,
}

impl Default for AblationSetup {
    fn default() -> Self {
        Self {
            max_shift_m: 0.02,
            max_yaw_rad: 10f64.to_radians(),
            visual_sigma_m: 0.005,
            grasp_offset_m: 0.005,
        }
    }
}

const ABLATION_HOLE: &str = "battery_slot_1";
const ABLATION_OBJECT: &str = "battery_1";

fn ablation_trial(arm: AblationArm, trial: usize, seed: u64, setup: &AblationSetup) -> AblationTrial {
    let base = BoardWorld::task_board();
    let mut rng = trial_rng(seed, trial);
    // both arms draw the same scene, noise and grasp for a given trial
    let shift = in_disc(&mut rng, setup.max_shift_m);
    let yaw = (rng.random::<f64>() * 2.0 - 1.0) * setup.max_yaw_rad;
    let noise = Normal::new(0.0, setup.visual_sigma_m).expect("sigma is finite");
    let visual_error = Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), 0.0);
    let grasp_angle = rng.random::<f64>() * std::f64::consts::TAU;

    let mut world = base.clone();
    world.board_pose = displaced(&base, shift, yaw);
    let truth = world.board_pose;
    let mut visual = FrameTransform::board_in_robot(truth);
    visual.pose.position += visual_error;

    let model = ChainModel::default_arm();
    let mut rig = Rig::new(model.clone(), world.clone(), model.ready_configuration());
    let mut row = AblationTrial {
        arm,
        trial,
        estimate_error_mm: f64::NAN,
        success: false,
        spiraled: false,
        failure: None,
    };
    let estimate = match arm {
        AblationArm::VisualOnly => visual,
        AblationArm::Haptic => match haptic_refine(&visual, &mut rig, &LocalizationConfig::default().probe) {
            Ok((refined, _)) => refined,
            Err(e) => {
                row.failure = Some(e.to_string());
                return row;
            }
        },
    };
    row.estimate_error_mm = (estimate.pose.position - truth.position).xy().norm() * 1e3;

    let Some(demo) = insertion_demo(&base, ABLATION_HOLE, ABLATION_OBJECT, Vector3::zeros(), ready_orientation()) else {
        row.failure = Some("no demonstration".into());
        return row;
    };
    let mut primitive = demo.clone();
    let reference = FrameTransform::board_in_robot(base.board_pose);
    match transform_trajectory(&demo.samples, &reference, &estimate) {
        Ok(t) => primitive.samples = t,
        Err(e) => {
            row.failure = Some(e.to_string());
            return row;
        }
    }

    // bring the hand above the start, then hand it the battery off-centre
    let first = primitive.samples.samples()[0].pose;
    let mut sp = rig.hold_setpoint();
    sp.x_goal = Pose::new(first.position + world.board_normal() * 0.02, first.orientation);
    sp.q_ns = model.ready_configuration();
    for _ in 0..300 {
        if let Err(e) = rig.tick(&sp) {
            row.failure = Some(e.to_string());
            return row;
        }
    }
    rig.place_in_gripper(ABLATION_OBJECT);
    if let Some(att) = rig.scene.attached.as_mut() {
        att.offset_m = [
            setup.grasp_offset_m * grasp_angle.cos(),
            setup.grasp_offset_m * grasp_angle.sin(),
            0.0,
        ];
    }
    let cfg = ExecutionConfig {
        keep_log: false,
        ..ExecutionConfig::default()
    };
    let report = execute_primitive(&mut primitive, &mut rig, &mut NoFeedback, &cfg);
    let (ok, _, _) = seated(&world, ABLATION_HOLE, &rig.tip_position(), SEATED_TOLERANCE_M);
    row.success = ok && report.completed;
    row.spiraled = report.spiraled();
    row.failure = report.failure.map(|f| f.label().to_string());
    row
}

/// Battery placement into its 1 mm-clearance slot with a 5 mm grasp
/// offset, estimate from visual-only (Gaussian planar noise) versus the
/// same visual estimate refined by probing.
pub fn ablation_trials(trials: usize, seed: u64, setup: &AblationSetup) -> Vec<AblationTrial> {
    let jobs: Vec<(AblationArm, usize)> = [AblationArm::VisualOnly, AblationArm::Haptic]
        .into_iter()
        .flat_map(|arm| (0..trials).map(move |t| (arm, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(arm, trial)| ablation_trial(arm, trial, seed, setup))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub pose: String,
    pub trial: usize,
    pub subtask: String,
    pub success: bool,
    pub spiral_activated: bool,
    pub failure: Option<String>,
}

/// Named board poses for the board-program bench: the reference, three
/// reachable displacements and one placement the arm cannot reach.
pub fn bench_poses() -> Vec<(String, Pose)> {
    let base = BoardWorld::task_board();
    [
        ("reference", 0.0, 0.0, 0.0),
        ("pose_2", 0.04, -0.03, 10.0),
        ("pose_3", -0.03, 0.04, -15.0),
        ("pose_4", 0.10, 0.0, 20.0),
        ("pose_5", 0.25, 0.0, 0.0),
    ]
    .into_iter()
    .map(|(name, x, y, yaw): (&str, f64, f64, f64)| (name.to_string(), displaced(&base, Vector3::new(x, y, 0.0), yaw.to_radians())))
    .collect()
}

/// Resolves a pose argument: a bench pose name or `x,y,yaw_deg` offsets
/// from the reference board pose (metres, degrees).
pub fn parse_pose(text: &str) -> Option<Pose> {
    if let Some((_, p)) = bench_poses().into_iter().find(|(n, _)| n == text) {
        return Some(p);
    }
    let parts: Vec<f64> = text.split(',').map(|s| s.trim().parse().ok()).collect::<Option<_>>()?;
    let [x, y, yaw] = parts[..] else { return None };
    Some(displaced(&BoardWorld::task_board(), Vector3::new(x, y, 0.0), yaw.to_radians()))
}

/// A session holding the board demonstrations, recorded at the reference
/// pose.
pub fn demo_session(seed: u64) -> Result<(Session, kinesis_core::lfd::TaskProgram), SessionError> {
    let world = BoardWorld::task_board();
    let (lib, program) =
        board_demonstrations(&world).ok_or_else(|| SessionError::Invalid("board lacks a demo feature".into()))?;
    let mut session = Session::new(world, seed)?;
    session.add_library(&lib)?;
    session.settings.execution.keep_log = false;
    Ok((session, program))
}

/// One board-program trial: fresh session, board moved to `pose`,
/// localization (a failure keeps the reference estimate), then the program.
pub fn board_trial(pose_name: &str, pose: Pose, trial: usize, seed: u64) -> Result<Vec<TaskRow>, SessionError> {
    let (mut session, program) = demo_session(seed.wrapping_mul(1_000_003).wrapping_add(trial as u64))?;
    session.set_board_pose(pose)?;
    let mut rows = Vec::new();
    let loc = session.run_localization_pipeline(false, false);
    rows.push(TaskRow {
        pose: pose_name.into(),
        trial,
        subtask: "localize".into(),
        success: loc.is_ok(),
        spiral_activated: false,
        failure: loc.err().map(|e| e.to_string()),
    });
    let report = session.run_task_program(&program, &mut NoFeedback)?;
    rows.extend(report.steps.into_iter().map(|s| TaskRow {
        pose: pose_name.into(),
        trial,
        subtask: s.primitive,
        success: s.success,
        spiral_activated: s.spiraled,
        failure: s.failure,
    }));
    Ok(rows)
}

pub fn board_bench(poses: &[(String, Pose)], trials: usize, seed: u64) -> Result<Vec<TaskRow>, SessionError> {
    let jobs: Vec<(usize, usize)> = (0..poses.len()).flat_map(|p| (0..trials).map(move |t| (p, t))).collect();
    let rows: Result<Vec<Vec<TaskRow>>, SessionError> = jobs
        .into_par_iter()
        .map(|(p, t)| board_trial(&poses[p].0, poses[p].1, t, seed))
        .collect();
    Ok(rows?.into_iter().flatten().collect())
}

/// Success fraction of `rows` matching `keep`.
pub fn rate<T>(rows: &[T], keep: impl Fn(&T) -> bool, hit: impl Fn(&T) -> bool) -> f64 {
    let picked: Vec<&T> = rows.iter().filter(|r| keep(r)).collect();
    if picked.is_empty() {
        return 0.0;
    }
    picked.iter().filter(|r| hit(r)).count() as f64 / picked.len() as f64
}
