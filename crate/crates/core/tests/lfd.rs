use kinesis_core::control::GripperCommand;
use kinesis_core::lfd::correction::speedup_removal_count;
use kinesis_core::lfd::execute::{Feedback, NoFeedback, ScriptedFeedback};
use kinesis_core::lfd::exploration::{update_exploration, ExplorationParams, ExplorationState, Transition};
use kinesis_core::lfd::*;
use kinesis_core::scenario::{insertion_demo, ready_orientation, run_insertion};
use kinesis_core::{BoardWorld, ChainModel, Pose, Rig};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn wavy(n: usize) -> Trajectory {
    let poses: Vec<Pose> = (0..n)
        .map(|i| {
            let s = i as f64 * 0.01;
            Pose::from_translation(0.4 + 0.1 * s, 0.05 * (3.0 * s).sin(), 0.3 - 0.02 * s)
        })
        .collect();
    Trajectory::uniform(&poses, 0.0, SAMPLE_DT).unwrap()
}

// ---- reshaping -------------------------------------------------------

#[test]
fn correction_matches_closed_form_everywhere() {
    let t = wavy(200);
    let x = Vector3::new(0.45, 0.01, 0.29);
    let theta = Vector3::new(0.002, -0.004, 0.003);
    let l = 0.05;
    let out = apply_correction(&t, &Correction::new(theta, l, x).unwrap());
    for (a, b) in t.samples().iter().zip(out.samples()) {
        let p = a.pose.position;
        let d2 = (p.x - x.x).powi(2) + (p.y - x.y).powi(2) + (p.z - x.z).powi(2);
        let w = (-d2 / (l * l)).exp();
        let expect = [p.x + theta.x * w, p.y + theta.y * w, p.z + theta.z * w];
        for k in 0..3 {
            assert!((b.pose.position[k] - expect[k]).abs() <= 1e-12);
        }
        assert_eq!(a.pose.orientation, b.pose.orientation);
        assert_eq!(a.t_s, b.t_s);
        assert_eq!(a.gripper, b.gripper);
    }
}

#[test]
fn sample_one_length_scale_away_moves_by_theta_over_e() {
    let l = 0.05;
    let poses = [Pose::from_translation(0.0, 0.0, 0.0), Pose::from_translation(l, 0.0, 0.0)];
    let t = Trajectory::uniform(&poses, 0.0, SAMPLE_DT).unwrap();
    let c = Correction::new(Vector3::new(0.0, 0.0, -0.01), l, Vector3::zeros()).unwrap();
    let out = apply_correction(&t, &c);
    let dz = out.samples()[1].pose.position.z;
    assert!((dz - (-0.003679)).abs() < 5e-7, "{dz}");
    assert!((dz + 0.01 * (-1.0f64).exp()).abs() <= 1e-15);
}

fn point() -> impl Strategy<Value = Vector3<f64>> {
    (-0.2f64..0.2, -0.2f64..0.2, -0.2f64..0.2).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #[test]
    fn displacement_shrinks_with_distance(
        pts in proptest::collection::vec(point(), 2..40),
        x in point(),
        theta in (-0.005f64..0.005, -0.005f64..0.005, -0.005f64..0.005),
        l in 0.01f64..0.2,
    ) {
        let poses: Vec<Pose> = pts.iter().map(|p| Pose::from_translation(p.x, p.y, p.z)).collect();
        let t = Trajectory::uniform(&poses, 0.0, SAMPLE_DT).unwrap();
        let c = Correction::new(Vector3::new(theta.0, theta.1, theta.2), l, x).unwrap();
        let out = apply_correction(&t, &c);
        let mut pairs: Vec<(f64, f64)> = t
            .samples()
            .iter()
            .zip(out.samples())
            .map(|(a, b)| ((a.pose.position - x).norm(), (b.pose.position - a.pose.position).norm()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-15);
        }
    }

    #[test]
    fn speedup_count_and_vertices(
        len in 30usize..200,
        index_frac in 0.0f64..1.0,
        window in 0.05f64..0.5,
        factor in 1.0f64..6.0,
    ) {
        let t = wavy(len);
        let index = ((len - 1) as f64 * index_frac) as usize;
        let out = speed_up(&t, index, window, factor, SAMPLE_DT).unwrap();
        let span = (window / SAMPLE_DT).round() as usize;
        let wanted = (window / SAMPLE_DT * (1.0 - 1.0 / factor) + 1e-9).floor() as usize;
        prop_assert_eq!(wanted, speedup_removal_count(window, factor, SAMPLE_DT));
        if index + span < len && span >= wanted + 1 {
            prop_assert_eq!(out.removed.len(), wanted);
        } else {
            prop_assert!(out.removed.len() <= wanted);
        }
        prop_assert!(out.trajectory.len() >= 2);
        prop_assert_eq!(out.trajectory.len(), len - out.removed.len());
        // surviving points are original vertices, in order
        let mut orig = t.samples().iter();
        for s in out.trajectory.samples() {
            prop_assert!(orig.any(|o| o.pose == s.pose));
        }
        // outside the window nothing moves
        for i in 0..=index {
            prop_assert_eq!(out.trajectory.samples()[i].pose, t.samples()[i].pose);
        }
    }
}

#[test]
fn five_remaining_samples_allow_three_removals() {
    let t = wavy(10);
    let out = speed_up(&t, 5, 0.2, 2.0, SAMPLE_DT).unwrap();
    // enumerate: indices 6, 7, 8 are the only interior samples before 9
    assert_eq!(out.removed, vec![6, 7, 8]);
}

// ---- execution -------------------------------------------------------

fn free_world() -> BoardWorld {
    BoardWorld::plain_board(Pose::from_translation(3.0, 3.0, -1.0), [0.2, 0.2, 0.05])
}

fn rig_in(world: BoardWorld) -> Rig {
    let model = ChainModel::default_arm();
    let q0 = model.ready_configuration();
    Rig::new(model, world, q0)
}

/// Straight line from the ready pose.
fn line_primitive(rig: &Rig, delta: Vector3<f64>, n: usize, insertion: bool) -> Primitive {
    let start = rig.ee_pose();
    let poses: Vec<Pose> = (0..n)
        .map(|i| Pose::new(start.position + delta * (i as f64 / (n - 1) as f64), start.orientation))
        .collect();
    Primitive::new("line", insertion, rig.world().board_pose, Trajectory::uniform(&poses, 0.0, SAMPLE_DT).unwrap())
}

#[test]
fn free_motion_tracks_to_last_sample() {
    let mut rig = rig_in(free_world());
    let mut p = line_primitive(&rig, Vector3::new(0.08, -0.05, -0.06), 250, false);
    let last = p.samples.last().unwrap().pose.position;
    let rep = execute_primitive(&mut p, &mut rig, &mut NoFeedback, &ExecutionConfig::default());
    assert!(rep.completed, "{:?}", rep.failure);
    assert!((rep.final_pose.position - last).norm() <= 2e-3);
}

#[test]
fn speedup_halves_the_window_duration() {
    let cfg = ExecutionConfig::default();
    let mut rig = rig_in(free_world());
    let base = line_primitive(&rig, Vector3::new(0.05, 0.0, 0.0), 200, false);
    let mut plain = base.clone();
    let a = execute_primitive(&mut plain, &mut rig, &mut NoFeedback, &cfg);

    let mut rig = rig_in(free_world());
    let mut fast = base.clone();
    let mut fb = ScriptedFeedback::new(vec![(40, Feedback::SpeedUp)]);
    let b = execute_primitive(&mut fast, &mut rig, &mut fb, &cfg);
    assert!(a.completed && b.completed);
    // the 20-sample window now plays in 10 ticks
    let saved = a.stream_ticks as i64 - b.stream_ticks as i64;
    assert!((saved - 10).abs() <= 1, "saved {saved} ticks");
    assert_eq!(fast.samples.len(), 190);
}

#[test]
fn hysteresis_sequence_switches_once_each_way() {
    let p = ExplorationParams::default();
    let mut s = ExplorationState::new(p).unwrap();
    let mid = 0.5 * (p.f_on_n + p.f_off_n);
    let seq = [0.0, p.f_on_n + 1.0, mid, mid, p.f_off_n - 0.5, mid];
    let mut trans = Vec::new();
    for f in seq {
        let (next, t) = update_exploration(&s, f, &Vector3::zeros());
        trans.push(t);
        s = next;
    }
    assert_eq!(
        trans,
        vec![Transition::None, Transition::Activated, Transition::None, Transition::None, Transition::Deactivated, Transition::None]
    );
}

proptest! {
    #[test]
    fn hysteresis_alternates_and_ignores_the_band(forces in proptest::collection::vec(0.0f64..15.0, 1..200)) {
        let p = ExplorationParams::default();
        let mut s = ExplorationState::new(p).unwrap();
        let mut expect_active = false;
        for f in forces {
            let was = s.is_active();
            let t = s.update(f, &Vector3::zeros());
            match t {
                Transition::Activated => { prop_assert!(!was && f > p.f_on_n); expect_active = true; }
                Transition::Deactivated => { prop_assert!(was && f < p.f_off_n); expect_active = false; }
                Transition::None => prop_assert!(
                    (f >= p.f_off_n && f <= p.f_on_n) || (was && f >= p.f_off_n) || (!was && f <= p.f_on_n)
                ),
            }
            prop_assert_eq!(s.is_active(), expect_active);
        }
    }

    #[test]
    fn spiral_radius_monotone_and_capped(steps in 1usize..3000, pitch in 1e-4f64..2e-3, rate in 0.5f64..20.0) {
        let p = ExplorationParams { pitch_m_per_rad: pitch, rate_rad_s: rate, ..Default::default() };
        let mut s = ExplorationState::new(p).unwrap();
        s.update(100.0, &Vector3::zeros());
        let mut prev = 0.0;
        for _ in 0..steps {
            let off = s.advance(0.01);
            prop_assert!(off.norm() >= prev - 1e-15);
            prop_assert!(off.norm() <= p.max_radius_m + 1e-15);
            prev = off.norm();
        }
    }

    #[test]
    fn spiral_passes_near_every_target(rho_frac in 0.0f64..1.0, ang in 0.0f64..std::f64::consts::TAU) {
        // adjacent turns sit 2πb apart, so no target is farther than πb
        // from the curve; sampling adds half the longest step
        let p = ExplorationParams { pitch_m_per_rad: 0.0005, rate_rad_s: std::f64::consts::PI, ..Default::default() };
        let dt = 0.01;
        let step = p.max_radius_m * p.rate_rad_s * dt;
        let clearance = std::f64::consts::PI * p.pitch_m_per_rad + 0.5 * step;
        let rho = rho_frac * p.max_radius_m;
        let target = Vector2::new(rho * ang.cos(), rho * ang.sin());
        let mut s = ExplorationState::new(p).unwrap();
        s.update(100.0, &Vector3::zeros());
        let mut best = target.norm();
        while !s.exhausted() {
            best = best.min((s.advance(dt) - target).norm());
        }
        prop_assert!(best <= clearance, "closest {} > {}", best, clearance);
    }
}

#[test]
fn spiral_radius_after_one_turn() {
    let p = ExplorationParams { pitch_m_per_rad: 0.0005, rate_rad_s: std::f64::consts::PI, ..Default::default() };
    let mut s = ExplorationState::new(p).unwrap();
    assert_eq!(s.advance(0.01), Vector2::zeros());
    s.update(100.0, &Vector3::zeros());
    assert_eq!(s.offset(), Vector2::zeros());
    for _ in 0..200 {
        s.advance(0.01);
    }
    assert!((s.radius() - std::f64::consts::PI * 1e-3).abs() < 1e-12);
}

/// Flat board whose top face sits `below` under the ready tool point.
fn press_world(rig_tool: &Pose, below: f64) -> BoardWorld {
    BoardWorld::plain_board(
        Pose::from_translation(rig_tool.position.x, rig_tool.position.y, rig_tool.position.z - below),
        [0.2, 0.2, 0.05],
    )
}

#[test]
fn pressing_without_insertion_label_never_spirals() {
    let ready = rig_in(free_world()).ee_pose();
    for depth in [0.02, 0.04] {
        let mut rig = rig_in(press_world(&ready, 0.01));
        let mut p = line_primitive(&rig, Vector3::new(0.0, 0.0, -(0.01 + depth)), 150, false);
        let rep = execute_primitive(&mut p, &mut rig, &mut NoFeedback, &ExecutionConfig::default());
        assert!(rep.completed);
        assert!(rep.log.iter().any(|l| l.insertion_force_n > ExplorationParams::default().f_on_n));
        assert_eq!(rep.exploration_activations, 0);
        assert!(rep.log.iter().all(|l| !l.exploration_active && l.exploration_offset_m == [0.0, 0.0]));
    }
}

#[test]
fn pushing_the_attractor_down_raises_force_by_stiffness_times_depth() {
    let ready = rig_in(free_world()).ee_pose();
    let settle = |increments: usize| {
        let mut rig = rig_in(press_world(&ready, 0.01));
        let mut p = line_primitive(&rig, Vector3::new(0.0, 0.0, -0.012), 200, false);
        let events = (0..increments).map(|k| (150 + k, Feedback::Correction { theta_m: [0.0, 0.0, -0.001] })).collect();
        let mut fb = ScriptedFeedback::new(events);
        let cfg = ExecutionConfig { settle_ticks: 150, ..Default::default() };
        let rep = execute_primitive(&mut p, &mut rig, &mut fb, &cfg);
        assert!(rep.completed);
        (rig.normal_force(), p.translational_stiffness_n_per_m[2])
    };
    let (f0, kz) = settle(0);
    let (f1, _) = settle(5);
    let expected = kz * 0.005;
    assert!(((f1 - f0) - expected).abs() <= 0.1 * expected, "ΔF {} vs {}", f1 - f0, expected);
}

#[test]
fn offset_key_insertion_finds_the_hole() {
    let world = BoardWorld::task_board();
    let offset = Vector3::new(0.005, 0.0, 0.0);
    let mut p = insertion_demo(&world, "key_hole", "key", offset, ready_orientation()).unwrap();
    let out = run_insertion(&world, "key_hole", "key", &mut p, &ExecutionConfig::default(), &mut NoFeedback).unwrap();
    let hole = world.hole("key_hole").unwrap();
    assert!(out.report.spiraled());
    assert!(out.report.exploration_deactivations >= 1);
    assert!(out.depth_m >= hole.depth_m - 0.001, "depth {}", out.depth_m);
    assert!(out.success);
}

#[test]
fn demonstration_recording_rules() {
    let mut demo = Trajectory::new();
    demo.record_sample(Pose::identity(), GripperCommand::Hold, 0.0).unwrap();
    assert_eq!(demo.len(), 1);
    assert!(demo.record_sample(Pose::identity(), GripperCommand::Hold, 0.0).is_err());
    for i in 1..500 {
        demo.record_sample(Pose::from_translation(i as f64 * 1e-3, 0.0, 0.0), GripperCommand::Hold, i as f64 * SAMPLE_DT).unwrap();
    }
    assert!((demo.duration() - 4.99).abs() < 1e-9);
    let f = fit_trajectory(&demo).unwrap();
    for (i, s) in demo.samples().iter().enumerate().step_by(37) {
        assert_eq!(f.pose_at(s.t_s), demo.samples()[i].pose);
    }
}
