use kinesis_core::control::GripperCommand;
use kinesis_core::lfd::execute::NoFeedback;
use kinesis_core::lfd::{Direction, TaskProgram};
use kinesis_core::{BoardWorld, Pose, StoreError};
use kinesis_session::bench::{bench_poses, demo_session, parse_pose};
use kinesis_session::script::{run_script, TeachScript};
use kinesis_session::{Mode, Outcome, Session, SessionError, TeachCommand};

fn cmd(session: &mut Session, c: TeachCommand) -> Result<Outcome, SessionError> {
    session.handle(c, &mut NoFeedback)
}

fn fresh() -> Session {
    Session::new(BoardWorld::task_board(), 5).unwrap()
}

fn planar_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let d = a.yaw() - b.yaw();
    ((a.position - b.position).xy().norm(), d.sin().atan2(d.cos()).abs())
}

#[test]
fn commands_outside_their_mode_are_rejected_without_side_effects() {
    let mut s = fresh();
    for c in [
        TeachCommand::StopRecording {},
        TeachCommand::Drag {
            position_m: [0.5, 0.0, 0.3],
        },
        TeachCommand::Release {},
        TeachCommand::SpeedUp {},
        TeachCommand::Correction {
            direction: Direction::XPlus,
        },
    ] {
        let kind = c.kind();
        match cmd(&mut s, c) {
            Err(SessionError::WrongMode { command, mode }) => {
                assert_eq!(command, kind);
                assert_eq!(mode, Mode::Idle);
            }
            other => panic!("{kind}: {other:?}"),
        }
    }
    assert_eq!(s.tick_count(), 0);
    cmd(&mut s, TeachCommand::StartRecording {}).unwrap();
    for c in [
        TeachCommand::StartRecording {},
        TeachCommand::Localize {
            ablate_icp: false,
            ablate_haptic: false,
        },
        TeachCommand::StartExecution {
            program: TaskProgram::new(Vec::<String>::new()),
        },
        TeachCommand::SetBoardPose { pose: Pose::identity() },
        TeachCommand::SavePrimitive {
            name: "x".into(),
            insertion: false,
        },
    ] {
        assert!(matches!(cmd(&mut s, c), Err(SessionError::WrongMode { mode: Mode::Kinesthetic, .. })));
    }
    assert_eq!(s.mode(), Mode::Kinesthetic);
    assert!(cmd(&mut s, TeachCommand::Gripper { command: GripperCommand::Close }).is_ok());
}

#[test]
fn idle_holds_the_tool_in_place() {
    let mut s = fresh();
    let start = s.rig().ee_pose();
    for _ in 0..200 {
        s.step().unwrap();
    }
    assert!((s.rig().ee_pose().position - start.position).norm() < 1e-3);
}

#[test]
fn dragging_records_a_demonstration_that_ends_where_the_hand_went() {
    let mut s = fresh();
    let start = s.rig().ee_pose().position;
    cmd(&mut s, TeachCommand::StartRecording {}).unwrap();
    // nothing is recorded until the hand is on the arm
    for _ in 0..20 {
        s.step().unwrap();
    }
    assert_eq!(s.recording().unwrap().len(), 0);
    let target = start + nalgebra::Vector3::new(0.0, 0.1, 0.0);
    assert_eq!(cmd(&mut s, TeachCommand::Drag { position_m: target.into() }).unwrap(), Outcome::Done);
    for _ in 0..300 {
        s.step().unwrap();
    }
    cmd(&mut s, TeachCommand::Release {}).unwrap();
    let n = s.recording().unwrap().len();
    assert_eq!(n, 300);
    for _ in 0..10 {
        s.step().unwrap();
    }
    assert_eq!(s.recording().unwrap().len(), n);
    cmd(&mut s, TeachCommand::StopRecording {}).unwrap();
    let out = cmd(
        &mut s,
        TeachCommand::SavePrimitive {
            name: "slide_left".into(),
            insertion: false,
        },
    )
    .unwrap();
    assert_eq!(
        out,
        Outcome::Saved {
            name: "slide_left".into(),
            samples: 300
        }
    );
    let p = s.library().get("slide_left").unwrap();
    assert_eq!(p.samples.first().unwrap().t_s, 0.0);
    let end = p.samples.last().unwrap().pose.position;
    assert!((end - target).norm() < 0.01, "ended {:.4} m from the hand", (end - target).norm());
    assert!(((end - start).norm() - 0.1).abs() < 0.01);
}

#[test]
fn drag_targets_are_clamped_to_the_workspace() {
    let mut s = fresh();
    cmd(&mut s, TeachCommand::StartRecording {}).unwrap();
    let out = cmd(
        &mut s,
        TeachCommand::Drag {
            position_m: [2.0, 0.0, -1.0],
        },
    )
    .unwrap();
    let max = s.settings.workspace_max_m;
    let min = s.settings.workspace_min_m;
    assert_eq!(out, Outcome::Clamped([max[0], 0.0, min[2]]));
    assert!(cmd(&mut s, TeachCommand::Drag { position_m: [f64::NAN, 0.0, 0.3] }).is_err());
}

#[test]
fn saving_without_a_recording_fails() {
    let mut s = fresh();
    let save = TeachCommand::SavePrimitive {
        name: "empty".into(),
        insertion: false,
    };
    assert!(matches!(cmd(&mut s, save.clone()), Err(SessionError::NothingRecorded)));
    cmd(&mut s, TeachCommand::StartRecording {}).unwrap();
    cmd(&mut s, TeachCommand::StopRecording {}).unwrap();
    assert!(matches!(cmd(&mut s, save), Err(SessionError::NothingRecorded)));
}

#[test]
fn localization_at_the_reference_pose_is_accurate() {
    let mut s = fresh();
    let truth = s.world().board_pose;
    cmd(
        &mut s,
        TeachCommand::Localize {
            ablate_icp: false,
            ablate_haptic: false,
        },
    )
    .unwrap();
    let (pos, yaw) = planar_error(&s.estimates().current.pose, &truth);
    assert!(pos < 1e-3, "{pos}");
    assert!(yaw < 0.5f64.to_radians(), "{yaw}");
    assert_eq!(s.mode(), Mode::Idle);
}

#[test]
fn localizing_a_moved_board_lets_the_key_go_in() {
    let (mut s, program) = demo_session(9).unwrap();
    let moved = parse_pose("0.1,0,20").unwrap();
    cmd(&mut s, TeachCommand::SetBoardPose { pose: moved }).unwrap();
    cmd(
        &mut s,
        TeachCommand::Localize {
            ablate_icp: false,
            ablate_haptic: false,
        },
    )
    .unwrap();
    let (pos, _) = planar_error(&s.estimates().current.pose, &moved);
    assert!(pos < 1e-3);
    let keys = TaskProgram {
        primitives: vec!["pick_key".into(), "insert_key".into()],
        ..program
    };
    let Outcome::Program(report) = cmd(&mut s, TeachCommand::StartExecution { program: keys }).unwrap() else {
        panic!()
    };
    assert!(report.all_succeeded(), "{report:?}");
}

#[test]
fn failed_localization_keeps_the_previous_estimate() {
    let mut s = fresh();
    let before = s.estimates().clone();
    // without the visual stage the probes start from the reference and miss a board 10 cm away
    cmd(&mut s, TeachCommand::SetBoardPose { pose: parse_pose("pose_4").unwrap() }).unwrap();
    let err = cmd(
        &mut s,
        TeachCommand::Localize {
            ablate_icp: true,
            ablate_haptic: false,
        },
    );
    assert!(err.is_err());
    assert_eq!(s.estimates(), &before);
    assert_eq!(s.mode(), Mode::Idle);
    assert!(matches!(
        cmd(
            &mut s,
            TeachCommand::Localize {
                ablate_icp: true,
                ablate_haptic: true
            }
        ),
        Err(SessionError::Invalid(_))
    ));
}

#[test]
fn board_program_succeeds_at_the_reference_pose() {
    let (mut s, program) = demo_session(1).unwrap();
    let report = s.run_task_program(&program, &mut NoFeedback).unwrap();
    assert_eq!(report.steps.len(), 8);
    assert!(report.all_succeeded(), "{report:?}");
    assert!(report.steps.iter().filter(|r| r.primitive.starts_with("insert")).all(|r| r.completed));
}

#[test]
fn unreachable_board_reports_hard_limits() {
    let (mut s, program) = demo_session(1).unwrap();
    let far = bench_poses().into_iter().find(|(n, _)| n == "pose_5").unwrap().1;
    s.set_board_pose(far).unwrap();
    s.set_current_estimate(far);
    let report = s.run_task_program(&program, &mut NoFeedback).unwrap();
    assert!(!report.all_succeeded());
    assert!(report.steps.iter().any(|r| r.failure.as_deref() == Some("hard_limit")), "{report:?}");
    assert_eq!(s.mode(), Mode::Idle);
}

#[test]
fn halting_stops_after_the_first_failure() {
    let (mut s, program) = demo_session(1).unwrap();
    s.settings.halt_on_failure = true;
    let far = bench_poses().into_iter().find(|(n, _)| n == "pose_5").unwrap().1;
    s.set_board_pose(far).unwrap();
    s.set_current_estimate(far);
    let report = s.run_task_program(&program, &mut NoFeedback).unwrap();
    assert!(report.halted);
    assert!(!report.steps.last().unwrap().success);
    assert!(report.steps.len() < program.primitives.len());
}

#[test]
fn empty_and_unknown_programs() {
    let (mut s, _) = demo_session(1).unwrap();
    let t0 = s.tick_count();
    let report = s.run_task_program(&TaskProgram::new(Vec::<String>::new()), &mut NoFeedback).unwrap();
    assert!(report.steps.is_empty());
    assert_eq!(s.tick_count(), t0);
    let err = s.run_task_program(&TaskProgram::new(["press_blue_button", "nope"]), &mut NoFeedback);
    assert!(matches!(err, Err(SessionError::Store(StoreError::MissingPrimitive(n))) if n == "nope"));
    assert_eq!(s.tick_count(), t0);
    assert_eq!(s.mode(), Mode::Idle);
}

#[test]
fn save_load_round_trip_is_byte_identical() {
    let (mut s, _) = demo_session(4).unwrap();
    for _ in 0..37 {
        s.step().unwrap();
    }
    let text = s.to_json().unwrap();
    let back = Session::from_json(&text).unwrap();
    assert_eq!(back.to_json().unwrap(), text);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    s.save(&path).unwrap();
    assert_eq!(Session::load(&path).unwrap().to_json().unwrap(), text);
}

#[test]
fn future_session_versions_are_refused() {
    let s = fresh();
    let mut v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
    v["schema_version"] = serde_json::json!(99);
    let err = Session::from_json(&v.to_string()).unwrap_err();
    assert!(err.to_string().contains("99"), "{err}");
}

#[test]
fn reload_midway_continues_bit_for_bit() {
    let (mut a, program) = demo_session(2).unwrap();
    a.settings.execution.keep_log = true;
    let first = TaskProgram {
        primitives: program.primitives[..3].to_vec(),
        ..program.clone()
    };
    let rest = TaskProgram {
        primitives: program.primitives[3..5].to_vec(),
        ..program
    };
    a.run_task_program(&first, &mut NoFeedback).unwrap();
    let mut b = Session::from_json(&a.to_json().unwrap()).unwrap();
    a.clear_log();
    let ra = a.run_task_program(&rest, &mut NoFeedback).unwrap();
    let rb = b.run_task_program(&rest, &mut NoFeedback).unwrap();
    assert_eq!(ra, rb);
    assert!(!a.log().is_empty());
    assert_eq!(a.log(), b.log());
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

fn teaching_script() -> TeachScript {
    TeachScript::new([
        (0, TeachCommand::StartRecording {}),
        (5, TeachCommand::Drag { position_m: [0.5, 0.05, 0.45] }),
        (150, TeachCommand::Gripper { command: GripperCommand::Close }),
        (200, TeachCommand::Release {}),
        (210, TeachCommand::StopRecording {}),
        (211, TeachCommand::SavePrimitive { name: "wave".into(), insertion: false }),
        (215, TeachCommand::StartExecution { program: TaskProgram::new(["wave"]) }),
        // these arrive while the program runs
        (300, TeachCommand::Correction { direction: Direction::ZPlus }),
        (300, TeachCommand::Correction { direction: Direction::ZPlus }),
        (300, TeachCommand::StartRecording {}),
        (320, TeachCommand::SpeedUp {}),
    ])
}

#[test]
fn scripts_replay_identically() {
    let script = TeachScript::from_json(&teaching_script().to_json()).unwrap();
    let run = || {
        let mut s = fresh();
        s.settings.execution.keep_log = true;
        let t = run_script(&mut s, &script).unwrap();
        (t, s.to_json().unwrap(), s.log().to_vec())
    };
    let (ta, ja, la) = run();
    let (tb, jb, lb) = run();
    assert_eq!(ta, tb);
    assert_eq!(ja, jb);
    assert_eq!(la, lb);
    assert_eq!(ta.receipts.len(), script.entries.len());
    assert_eq!(ta.programs.len(), 1);
}

#[test]
fn script_commands_are_taken_one_per_tick_in_order() {
    let mut s = fresh();
    let t = run_script(&mut s, &teaching_script()).unwrap();
    let ticks: Vec<u64> = t.receipts.iter().map(|r| r.tick).collect();
    assert!(ticks.windows(2).all(|w| w[0] < w[1]), "{ticks:?}");
    let entries: Vec<usize> = t.receipts.iter().map(|r| r.entry).collect();
    assert_eq!(entries, (0..11).collect::<Vec<_>>());
    let corrections: Vec<_> = t.receipts.iter().filter(|r| r.kind == "correction").collect();
    assert_eq!(corrections.len(), 2);
    assert!(corrections.iter().all(|r| r.ok));
    assert_eq!(corrections[1].tick, corrections[0].tick + 1);
    let during = t.receipts.iter().find(|r| r.kind == "start_recording" && r.entry == 9).unwrap();
    assert!(!during.ok);
    assert!(during.detail.as_deref().unwrap().contains("execute"));
    assert!(t.receipts.iter().filter(|r| r.entry != 9).all(|r| r.ok), "{:?}", t.receipts);
    // the two corrections were written back into the stored primitive
    let wave = s.library().get("wave").unwrap();
    assert!(wave.samples.len() < 200);
}
