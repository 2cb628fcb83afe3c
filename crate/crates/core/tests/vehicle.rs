use cpnav::control::{Controller, FlatSetpoint, Gains};
use cpnav::vehicle::{
    run_drop_test, step_dynamics, RobotParams, RobotState, Variant, WrenchCommand,
};
use cpnav::world::{Bounds, Map, Wall};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

const DT: f64 = 1e-3;

fn open_map() -> Map {
    Map::empty(
        Bounds::centered(50.0, 50.0),
        Vector2::zeros(),
        Vector2::zeros(),
        1.0,
    )
}

#[test]
fn free_fall_matches_closed_form() {
    let p = RobotParams::default();
    let map = open_map();
    let mut s = RobotState::at_rest(Vector3::new(0.0, 0.0, 100.0), 0.0, &p.arm);
    for _ in 0..1000 {
        s = step_dynamics(&s, &WrenchCommand::off(), &p, &map, DT)
            .unwrap()
            .state;
    }
    // Semi-implicit Euler leads the exact parabola by g t dt / 2.
    let exact = 100.0 - 0.5 * p.gravity * s.t * s.t;
    approx::assert_abs_diff_eq!(s.r.z, exact - 0.5 * p.gravity * s.t * DT, epsilon = 1e-9);
    approx::assert_abs_diff_eq!(s.v.z, -p.gravity * s.t, epsilon = 1e-9);
}

#[test]
fn hover_thrust_holds_position() {
    let p = RobotParams::default();
    let map = open_map();
    let s0 = RobotState::at_rest(Vector3::new(1.0, 2.0, 1.0), 0.3, &p.arm);
    let mut s = s0.clone();
    for _ in 0..2000 {
        s = step_dynamics(&s, &WrenchCommand::hover(&p), &p, &map, DT)
            .unwrap()
            .state;
    }
    assert!((s.r - s0.r).norm() < 1e-9);
}

#[test]
fn drop_impact_speed_matches_fall_height() {
    let p = RobotParams::default();
    for h in [0.3, 0.5, 0.7] {
        let d = run_drop_test(&p, h, DT).unwrap();
        let v = (2.0 * p.gravity * h).sqrt();
        assert!(
            (d.impact_speed - v).abs() < 0.02 * v,
            "{h}: {} vs {v}",
            d.impact_speed
        );
    }
}

#[test]
fn compliant_arm_softens_impacts() {
    for h in [0.3, 0.5, 0.7] {
        let c = run_drop_test(&RobotParams::default(), h, DT).unwrap();
        let r = run_drop_test(&RobotParams::rigid(), h, DT).unwrap();
        assert!(
            c.peak_accel * 5.0 < r.peak_accel,
            "{h}: {} vs {}",
            c.peak_accel,
            r.peak_accel
        );
        assert!(c.peak_force < r.peak_force);
    }
}

/// Fly into a wall under position control and return the peak contact force.
fn wall_push(variant: Variant) -> f64 {
    let p = RobotParams::default().with_variant(variant);
    let mut map = open_map();
    map.walls
        .push(Wall::new(Vector2::new(1.0, -5.0), Vector2::new(1.0, 5.0)));
    let mut ctl = Controller::new(Gains::default());
    let mut s = RobotState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0, &p.arm);
    let sp = FlatSetpoint::hold(Vector3::new(1.0, 0.0, 1.0), 0.0);
    let mut peak: f64 = 0.0;
    for _ in 0..3000 {
        let cmd = ctl.command(&s, &sp, &p);
        let step = step_dynamics(&s, &cmd, &p, &map, DT).unwrap();
        peak = peak.max(step.peak_contact_force);
        s = step.state;
    }
    assert!(s.r.x < 1.0, "body passed the wall");
    peak
}

#[test]
fn holding_against_a_wall_compresses_the_arm() {
    let compliant = wall_push(Variant::Compliant);
    let rigid = wall_push(Variant::Rigid);
    assert!(compliant > 0.0 && rigid > compliant);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rotation_stays_orthonormal(wx in -20.0..20.0f64, wy in -20.0..20.0f64, wz in -20.0..20.0f64) {
        let p = RobotParams {
            gravity: 0.0,
            ..Default::default()
        };
        let map = open_map();
        let mut s = RobotState::at_rest(Vector3::new(0.0, 0.0, 10.0), 0.0, &p.arm);
        s.omega = Vector3::new(wx, wy, wz);
        for _ in 0..5000 {
            s = step_dynamics(&s, &WrenchCommand::off(), &p, &map, DT).unwrap().state;
        }
        let m = s.rot.matrix();
        let err = (m.transpose() * m - nalgebra::Matrix3::identity()).norm();
        prop_assert!(err < 1e-10, "drift {}", err);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-10);
    }
}
