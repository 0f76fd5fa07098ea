use kinesis_core::chain::ChainModel;
use kinesis_core::sim::{JointState, SimConfig, Simulator, StepInput};
use kinesis_core::world::{contact_wrench, Hole, HoleKind, ProbePoint};
use kinesis_core::{BoardWorld, Pose};
use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

const EXTENTS: [f64; 3] = [0.2, 0.2, 0.05];

fn board_at(top_z: f64) -> BoardWorld {
    BoardWorld::plain_board(Pose::from_translation(0.5, 0.0, top_z), EXTENTS)
}

fn still(p: Vector3<f64>) -> ProbePoint {
    ProbePoint { position: p, velocity: Vector3::zeros() }
}

#[test]
fn probe_above_the_board_feels_nothing() {
    let world = board_at(0.0);
    let w = contact_wrench(&[still(Vector3::new(0.5, 0.0, 0.01))], &Vector3::zeros(), &world);
    assert!(w.is_zero());
}

#[test]
fn one_millimetre_press_gives_ten_newtons() {
    let world = board_at(0.0);
    assert_eq!(world.contact.stiffness_n_per_m, 1.0e4);
    let p = Vector3::new(0.5, 0.0, -0.001);
    let w = contact_wrench(&[still(p)], &p, &world);
    // hand computation: k_c·δ = 1e4 · 1e-3
    assert!((w.force - Vector3::new(0.0, 0.0, 10.0)).norm() <= 1e-9);
    assert!(w.torque.norm() <= 1e-12);
}

#[test]
fn normal_damping_resists_approach() {
    let world = board_at(0.0);
    let p = ProbePoint { position: Vector3::new(0.5, 0.0, -0.001), velocity: Vector3::new(0.0, 0.0, -0.02) };
    let w = contact_wrench(&[p], &p.position, &world);
    assert!((w.force.z - (10.0 + 50.0 * 0.02)).abs() <= 1e-9);
}

#[test]
fn hole_volume_is_free_space_until_its_floor() {
    let mut world = board_at(0.0);
    world.holes.push(Hole { name: "h".into(), kind: HoleKind::Generic, center_m: [0.0, 0.0], radius_m: 0.006, depth_m: 0.02 });
    let p = Vector3::new(0.5, 0.0, -0.01);
    assert!(contact_wrench(&[still(p)], &p, &world).is_zero());
    let floor = Vector3::new(0.5, 0.0, -0.021);
    assert!((contact_wrench(&[still(floor)], &floor, &world).force.z - 10.0).abs() < 1e-9);
    let solid = board_at(0.0);
    assert!(contact_wrench(&[still(p)], &p, &solid).force.z > 0.0);
}

fn tool_probes() -> Vec<Vector3<f64>> {
    [-0.015, 0.0, 0.015].iter().map(|y| Vector3::new(0.0, *y, 0.0)).collect()
}

fn energy(sim: &Simulator, s: &JointState, probes: &[Vector3<f64>]) -> f64 {
    sim.kinetic_energy(s) + sim.contact_energy(s, probes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gravity_compensated_contact_is_passive(
        qd in proptest::collection::vec(-0.4f64..0.4, 7),
        gap in -0.002f64..0.01,
        dt in prop_oneof![Just(0.01), Just(0.005), Just(0.001)],
    ) {
        let model = ChainModel::default_arm();
        let q0 = model.ready_configuration();
        let tool = model.forward_kinematics(&q0).unwrap();
        let world = BoardWorld::plain_board(
            Pose::from_translation(tool.position.x, tool.position.y, tool.position.z - gap),
            EXTENTS,
        );
        let mut sim = Simulator::new(model.clone(), world);
        sim.config = SimConfig { velocity_cap_rad_s: 50.0, ..SimConfig::default() };
        let probes = tool_probes();
        let mut state = JointState::at_rest(q0);
        state.qd = DVector::from_vec(qd);
        let mut e = energy(&sim, &state, &probes);
        for _ in 0..(0.3 / dt) as usize {
            let tau = model.gravity_torque(&state.q).unwrap();
            let out = match sim.step(&state, &StepInput { torque: &tau, probes: &probes, external: None, dt }) {
                Ok(out) => out,
                // leaving the joint range ends the episode, not a passivity breach
                Err(_) => break,
            };
            state = out.state;
            let next = energy(&sim, &state, &probes);
            prop_assert!(next <= e + 1e-6, "energy rose by {}", next - e);
            e = next;
        }
    }

    #[test]
    fn identical_torque_streams_replay_bit_for_bit(
        torques in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 7), 50),
        gap in -0.001f64..0.005,
    ) {
        let model = ChainModel::default_arm();
        let q0 = model.ready_configuration();
        let tool = model.forward_kinematics(&q0).unwrap();
        let world = BoardWorld::plain_board(
            Pose::from_translation(tool.position.x, tool.position.y, tool.position.z - gap),
            EXTENTS,
        );
        let sim = Simulator::new(model.clone(), world);
        let probes = tool_probes();
        let run = || {
            let mut state = JointState::at_rest(q0.clone());
            let mut trace = Vec::new();
            for extra in &torques {
                let tau = model.gravity_torque(&state.q).unwrap() + DVector::from_column_slice(extra);
                match sim.step(&state, &StepInput { torque: &tau, probes: &probes, external: None, dt: 0.01 }) {
                    Ok(out) => {
                        trace.extend(out.state.q.iter().chain(out.state.qd.iter()).map(|v| v.to_bits()));
                        trace.extend(out.contact.force.iter().map(|v| v.to_bits()));
                        state = out.state;
                    }
                    Err(e) => {
                        trace.push(format!("{e}").len() as u64);
                        break;
                    }
                }
            }
            trace
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn wrench_vanishes_without_penetration(
        points in proptest::collection::vec((0.35f64..0.65, -0.15f64..0.15, 1e-6f64..0.05), 1..8),
        vel in proptest::collection::vec(-1.0f64..1.0, 3),
    ) {
        let world = board_at(0.0);
        let v = Vector3::new(vel[0], vel[1], vel[2]);
        let probes: Vec<ProbePoint> = points
            .iter()
            .map(|&(x, y, z)| ProbePoint { position: Vector3::new(x, y, z), velocity: v })
            .collect();
        let w = contact_wrench(&probes, &Vector3::zeros(), &world);
        prop_assert!(w.force == Vector3::zeros() && w.torque == Vector3::zeros());
    }

    #[test]
    fn free_space_step_reports_zero_contact(qd in proptest::collection::vec(-0.5f64..0.5, 7)) {
        let model = ChainModel::default_arm();
        let sim = Simulator::new(model.clone(), BoardWorld::plain_board(Pose::from_translation(3.0, 3.0, -1.0), EXTENTS));
        let mut state = JointState::at_rest(model.ready_configuration());
        state.qd = DVector::from_vec(qd);
        let tau = model.gravity_torque(&state.q).unwrap();
        let out = sim.step(&state, &StepInput { torque: &tau, probes: &tool_probes(), external: None, dt: 0.01 }).unwrap();
        prop_assert!(out.contact.force == Vector3::zeros() && out.contact.torque == Vector3::zeros());
        prop_assert!(out.external_torque.iter().all(|v| *v == 0.0));
    }
}
