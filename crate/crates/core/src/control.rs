//! Cascaded tracking controller: position loop to a desired force, desired
//! attitude from thrust direction and yaw, quaternion attitude loop and a
//! proportional body-rate loop.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{RobotParams, RobotState, WrenchCommand};

/// Flat outputs consumed by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatSetpoint {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub yaw: f64,
}

impl FlatSetpoint {
    pub fn hold(r: Vector3<f64>, yaw: f64) -> Self {
        Self {
            r,
            v: Vector3::zeros(),
            a: Vector3::zeros(),
            yaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gains {
    pub k_p: [f64; 3],
    pub k_d: [f64; 3],
    pub k_att: f64,
    pub k_rate: [f64; 3],
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            k_p: [10.0, 10.0, 8.0],
            k_d: [6.0, 6.0, 5.0],
            k_att: 15.0,
            k_rate: [0.4, 0.4, 0.3],
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .k_p
            .iter()
            .chain(&self.k_d)
            .chain(&self.k_rate)
            .chain(std::iter::once(&self.k_att));
        if all.into_iter().all(|g| *g > 0.0 && g.is_finite()) {
            Ok(())
        } else {
            Err(Error::validation(
                "gains",
                "all gains must be finite and > 0",
            ))
        }
    }
}

/// Fraction of the weight below which the thrust direction is undefined.
pub const MIN_THRUST_FRACTION: f64 = 0.05;

/// `F_des = -K_d (v - v_des) - K_p (r - r_des) + M a_des + M g e3`.
pub fn position_control(
    state: &RobotState,
    sp: &FlatSetpoint,
    gains: &Gains,
    mass: f64,
    gravity: f64,
) -> Vector3<f64> {
    let kp = Vector3::from(gains.k_p);
    let kd = Vector3::from(gains.k_d);
    -kd.component_mul(&(state.v - sp.v)) - kp.component_mul(&(state.r - sp.r))
        + sp.a * mass
        + Vector3::new(0.0, 0.0, mass * gravity)
}

/// Rotation whose third column is `F_des / |F_des|` and whose yaw is `yaw`.
pub fn desired_attitude(f_des: &Vector3<f64>, yaw: f64, min_norm: f64) -> Result<Rotation3<f64>> {
    let norm = f_des.norm();
    if !(norm >= min_norm) {
        return Err(Error::DegenerateThrust {
            norm,
            min: min_norm,
        });
    }
    let z = f_des / norm;
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let y = z.cross(&heading);
    let yn = y.norm();
    if yn < 1e-6 {
        return Err(Error::SingularYaw);
    }
    let y = y / yn;
    let x = y.cross(&z);
    Ok(Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
        x, y, z,
    ])))
}

/// Body torque from the quaternion attitude error plus gyroscopic
/// feedforward.
pub fn attitude_control(
    rot: &Rotation3<f64>,
    rot_des: &Rotation3<f64>,
    omega: &Vector3<f64>,
    gains: &Gains,
    inertia: &Matrix3<f64>,
) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(rot);
    let q_des = UnitQuaternion::from_rotation_matrix(rot_des);
    let qe = (q.inverse() * q_des).into_inner();
    let sign = if qe.w < 0.0 { -1.0 } else { 1.0 };
    let omega_des = qe.imag() * (2.0 * gains.k_att * sign);
    let k_rate = Vector3::from(gains.k_rate);
    k_rate.component_mul(&(omega_des - omega)) + omega.cross(&(inertia * omega))
}

/// Projection of the desired force on the current body z axis.
pub fn thrust_projection(f_des: &Vector3<f64>, rot: &Rotation3<f64>) -> f64 {
    f_des.dot(&(rot * Vector3::z()))
}

/// Stateful wrapper that holds the last valid desired attitude.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: Gains,
    last_rot_des: Option<Rotation3<f64>>,
}

impl Controller {
    pub fn new(gains: Gains) -> Self {
        Self {
            gains,
            last_rot_des: None,
        }
    }

    pub fn command(
        &mut self,
        state: &RobotState,
        sp: &FlatSetpoint,
        params: &RobotParams,
    ) -> WrenchCommand {
        let f_des = position_control(state, sp, &self.gains, params.mass, params.gravity);
        let rot_des = match desired_attitude(&f_des, sp.yaw, MIN_THRUST_FRACTION * params.weight())
        {
            Ok(r) => r,
            Err(_) => self.last_rot_des.unwrap_or(state.rot),
        };
        self.last_rot_des = Some(rot_des);
        let m_t = attitude_control(
            &state.rot,
            &rot_des,
            &state.omega,
            &self.gains,
            &params.inertia_matrix(),
        );
        let f_t = thrust_projection(&f_des, &state.rot).clamp(0.0, params.thrust_ceiling());
        WrenchCommand { f_t, m_t }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::step_dynamics;
    use crate::world::{Bounds, Map};
    use approx::assert_relative_eq;
    use nalgebra::Vector2;
    use proptest::prelude::*;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    fn hover_state() -> RobotState {
        RobotState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0, &params().arm)
    }

    #[test]
    fn equilibrium_force() {
        let s = hover_state();
        let f = position_control(
            &s,
            &FlatSetpoint::hold(s.r, 0.0),
            &Gains::default(),
            1.25,
            9.81,
        );
        assert_relative_eq!(f, Vector3::new(0.0, 0.0, 1.25 * 9.81), epsilon = 1e-12);
        assert!((f.z - 12.26).abs() < 0.01);
    }

    #[test]
    fn proportional_term() {
        let mut s = hover_state();
        s.r.x += 0.1;
        let g = Gains {
            k_p: [6.0; 3],
            k_d: [1e-300; 3],
            ..Default::default()
        };
        let f = position_control(
            &s,
            &FlatSetpoint::hold(hover_state().r, 0.0),
            &g,
            1.25,
            9.81,
        );
        assert_relative_eq!(f.x, -0.6, epsilon = 1e-12);
    }

    #[test]
    fn feedforward_term() {
        let s = hover_state();
        let mut sp = FlatSetpoint::hold(s.r, 0.0);
        sp.a = Vector3::x();
        let f = position_control(&s, &sp, &Gains::default(), 1.25, 9.81);
        assert_relative_eq!(f.x, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn identity_at_hover() {
        let r = desired_attitude(&Vector3::new(0.0, 0.0, 12.26), 0.0, 0.6).unwrap();
        assert_relative_eq!(r.matrix(), &Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn yaw_only_rotation() {
        let psi = 0.7;
        let r = desired_attitude(&Vector3::new(0.0, 0.0, 12.26), psi, 0.6).unwrap();
        let expected = Rotation3::from_axis_angle(&Vector3::z_axis(), psi);
        assert_relative_eq!(r.matrix(), expected.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_and_singular() {
        assert!(matches!(
            desired_attitude(&Vector3::new(0.0, 0.0, 0.1), 0.0, 0.6),
            Err(Error::DegenerateThrust { .. })
        ));
        assert!(matches!(
            desired_attitude(&Vector3::new(5.0, 0.0, 0.0), 0.0, 0.6),
            Err(Error::SingularYaw)
        ));
    }

    #[test]
    fn zero_error_zero_torque() {
        let r = Rotation3::from_euler_angles(0.1, -0.2, 0.3);
        let m = attitude_control(
            &r,
            &r,
            &Vector3::zeros(),
            &Gains::default(),
            &params().inertia_matrix(),
        );
        assert!(m.norm() < 1e-12);
    }

    #[test]
    fn antipodal_yaw_error_is_finite() {
        let r_des = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
        let m = attitude_control(
            &Rotation3::identity(),
            &r_des,
            &Vector3::zeros(),
            &Gains::default(),
            &params().inertia_matrix(),
        );
        assert!(m.iter().all(|x| x.is_finite()));
        assert!(m.norm() > 0.0);
    }

    #[test]
    fn tilt_about_body_x_gives_x_torque() {
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), 0.3);
        let r_des = r * Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_4);
        let m = attitude_control(
            &r,
            &r_des,
            &Vector3::zeros(),
            &Gains::default(),
            &params().inertia_matrix(),
        );
        let axis = m.normalize();
        assert!((axis - Vector3::x()).norm() < 1e-6);
    }

    #[test]
    fn closed_loop_settles() {
        let p = params();
        let map = Map::empty(
            Bounds::centered(20.0, 20.0),
            Vector2::zeros(),
            Vector2::zeros(),
            1.0,
        );
        let target = Vector3::new(0.0, 0.0, 1.0);
        let mut s = RobotState::at_rest(Vector3::new(-1.0, 0.0, 1.0), 0.0, &p.arm);
        let mut c = Controller::new(Gains::default());
        let sp = FlatSetpoint::hold(target, 0.0);
        let mut max_overshoot: f64 = 0.0;
        for _ in 0..4000 {
            let cmd = c.command(&s, &sp, &p);
            s = step_dynamics(&s, &cmd, &p, &map, 0.001).unwrap().state;
            max_overshoot = max_overshoot.max(s.r.x - target.x);
        }
        assert!((s.r - target).norm() < 0.05, "{:?}", s.r);
        assert!(max_overshoot < 0.3);
    }

    proptest! {
        #[test]
        fn desired_attitude_construction(fx in -20.0f64..20.0, fy in -20.0f64..20.0, fz in 1.0f64..40.0, yaw in -3.1f64..3.1) {
            let f = Vector3::new(fx, fy, fz);
            let r = desired_attitude(&f, yaw, 0.6).unwrap();
            let m = r.matrix();
            prop_assert!((m.column(2) - f.normalize()).norm() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-12);
        }

        #[test]
        fn thrust_projection_is_yaw_invariant(fx in -20.0f64..20.0, fy in -20.0f64..20.0, fz in 1.0f64..40.0,
            roll in -1.0f64..1.0, pitch in -1.0f64..1.0, yaw in -3.1f64..3.1, spin in -3.1f64..3.1) {
            let f = Vector3::new(fx, fy, fz);
            let r = Rotation3::from_euler_angles(roll, pitch, yaw);
            let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), spin);
            let a = thrust_projection(&f, &r);
            let b = thrust_projection(&(rz * f), &(rz * r));
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
