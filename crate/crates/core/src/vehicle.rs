//! Rigid-body quadrotor with a prismatic spring-damper arm along body x.
//!
//! Translational dynamics `M r'' = -M g e3 + R f_T + R f_e`, rotational
//! `I w' = (I w) x w + m_T`, attitude `R' = R S(w)`. The arm is massless:
//! its length follows the first surface hit by the ray from the body origin
//! along `R x_b`, clamped to the stroke `[l_min, l_max]`.

use std::io::Write;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Map;

pub const GRAVITY: f64 = 9.81;

/// Sub-steps per dynamics step while the arm is in or near contact.
pub const CONTACT_SUBSTEPS: usize = 10;

/// Lookahead beyond `l_max` that switches on contact sub-stepping.
const CONTACT_LOOKAHEAD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Compliant,
    Rigid,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Compliant => "compliant",
            Variant::Rigid => "rigid",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "compliant" => Ok(Variant::Compliant),
            "rigid" => Ok(Variant::Rigid),
            _ => Err(Error::validation(
                "variant",
                format!("unknown variant `{s}`"),
            )),
        }
    }
}

/// Arm spring, stroke and contact constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmParams {
    /// Spring constant, N/m.
    pub k_l: f64,
    /// Free length, m.
    pub l_max: f64,
    /// Fully compressed length, m.
    pub l_min: f64,
    /// Preload compression, m.
    pub l_0: f64,
    /// Compression damping, N s/m.
    pub c_arm: f64,
    /// Bottom-out pad stiffness once the stroke is used up, N/m.
    pub sat_stiffness: f64,
    /// Bottom-out pad damping, N s/m.
    pub sat_damping: f64,
    /// Tip contact stiffness of the rigid variant, N/m.
    pub rigid_stiffness: f64,
    /// Tip contact damping ratio of the rigid variant.
    pub rigid_damping_ratio: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            k_l: 3800.0,
            l_max: 0.28,
            l_min: 0.28 - 0.0254,
            l_0: 0.002,
            c_arm: DEFAULT_C_ARM,
            sat_stiffness: DEFAULT_SAT_STIFFNESS,
            sat_damping: DEFAULT_SAT_DAMPING,
            rigid_stiffness: DEFAULT_RIGID_STIFFNESS,
            rigid_damping_ratio: RIGID_DAMPING_RATIO,
        }
    }
}

/// Calibrated with the pad damping so a 3.0 m/s head-on wall impact
/// rebounds at about 1.8 m/s.
pub const DEFAULT_C_ARM: f64 = 25.0;
/// Bottom-out pad acting past `l_min`.
pub const DEFAULT_SAT_STIFFNESS: f64 = 500.0;
pub const DEFAULT_SAT_DAMPING: f64 = 40.0;
/// Calibrated so the rigid variant peaks at 3649 m/s^2 in a 0.7 m drop.
pub const DEFAULT_RIGID_STIFFNESS: f64 = 1.41e6;
/// Restitution of about 0.2 (2.5 m/s in, 0.5 m/s out) for a linear
/// spring-damper: `exp(-zeta pi / sqrt(1 - zeta^2)) = 0.2`.
pub const RIGID_DAMPING_RATIO: f64 = 0.456;

impl ArmParams {
    /// Full stroke `l_max - l_min`.
    pub fn stroke(&self) -> f64 {
        self.l_max - self.l_min
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_l > 0.0) {
            return Err(Error::validation("k_l", "must be > 0"));
        }
        if !(self.l_min < self.l_max) || !(self.l_min > 0.0) {
            return Err(Error::validation("l_min", "must satisfy 0 < l_min < l_max"));
        }
        if !(self.l_0 >= 0.0) {
            return Err(Error::validation("l_0", "must be >= 0"));
        }
        for (name, v) in [
            ("c_arm", self.c_arm),
            ("sat_stiffness", self.sat_stiffness),
            ("sat_damping", self.sat_damping),
            ("rigid_stiffness", self.rigid_stiffness),
            ("rigid_damping_ratio", self.rigid_damping_ratio),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::validation(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotParams {
    /// Total mass with battery, kg.
    pub mass: f64,
    /// Body inertia, row-major, kg m^2.
    pub inertia: [[f64; 3]; 3],
    pub gravity: f64,
    /// Collective thrust ceiling as a multiple of `mass * gravity`.
    pub thrust_ceiling_factor: f64,
    pub variant: Variant,
    pub arm: ArmParams,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 1.25,
            inertia: [[0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.02]],
            gravity: GRAVITY,
            thrust_ceiling_factor: 4.0,
            variant: Variant::Compliant,
            arm: ArmParams::default(),
        }
    }
}

impl RobotParams {
    pub fn rigid() -> Self {
        Self {
            variant: Variant::Rigid,
            ..Default::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.inertia[i][j])
    }

    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn thrust_ceiling(&self) -> f64 {
        self.thrust_ceiling_factor * self.weight()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::validation("mass", "must be > 0"));
        }
        let i = self.inertia_matrix();
        if (i - i.transpose()).abs().max() > 1e-12 || i.cholesky().is_none() {
            return Err(Error::validation(
                "inertia",
                "must be symmetric positive definite",
            ));
        }
        if !(self.gravity >= 0.0) {
            return Err(Error::validation("gravity", "must be >= 0"));
        }
        if !(self.thrust_ceiling_factor > 1.0) {
            return Err(Error::validation("thrust_ceiling_factor", "must exceed 1"));
        }
        self.arm.validate()
    }
}

/// Full rigid-body plus arm state.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Body to inertial rotation.
    pub rot: Rotation3<f64>,
    /// Body rates.
    pub omega: Vector3<f64>,
    /// True arm length.
    pub l: f64,
    pub l_dot: f64,
    pub t: f64,
}

impl RobotState {
    /// At rest at `r` with the given yaw and a free arm.
    pub fn at_rest(r: Vector3<f64>, yaw: f64, arm: &ArmParams) -> Self {
        Self {
            r,
            v: Vector3::zeros(),
            rot: Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            omega: Vector3::zeros(),
            l: arm.l_max,
            l_dot: 0.0,
            t: 0.0,
        }
    }

    /// Inertial direction of the arm (`R x_b`).
    pub fn arm_dir(&self) -> Vector3<f64> {
        self.rot * Vector3::x()
    }

    pub fn tip(&self) -> Vector3<f64> {
        self.r + self.arm_dir() * self.l
    }

    pub fn yaw(&self) -> f64 {
        let x = self.arm_dir();
        x.y.atan2(x.x)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&self.rot)
    }

    pub fn xy(&self) -> Vector2<f64> {
        self.r.xy()
    }

    fn is_finite(&self) -> bool {
        self.r.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
            && self.rot.matrix().iter().all(|x| x.is_finite())
            && self.l.is_finite()
    }
}

/// Wrench-level actuation: thrust along body z and body torque.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchCommand {
    pub f_t: f64,
    pub m_t: Vector3<f64>,
}

impl WrenchCommand {
    pub fn hover(params: &RobotParams) -> Self {
        Self {
            f_t: params.weight(),
            m_t: Vector3::zeros(),
        }
    }

    pub fn off() -> Self {
        Self {
            f_t: 0.0,
            m_t: Vector3::zeros(),
        }
    }
}

/// First surface along a ray, with the outward surface normal at the hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub s: f64,
    pub normal: Vector3<f64>,
}

/// Nearest hit in `[0, max_range)` of the ray `base + s dir` against the
/// map's poles (infinite vertical cylinders), walls and the ground plane.
/// A base already inside a solid returns `s = 0`.
pub fn cast_ray(
    base: &Vector3<f64>,
    dir: &Vector3<f64>,
    map: &Map,
    max_range: f64,
) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    let mut offer = |s: f64, normal: Vector3<f64>| {
        if s < max_range && best.is_none_or(|b| s < b.s) {
            best = Some(RayHit { s, normal });
        }
    };

    // ground
    if base.z <= 0.0 {
        offer(0.0, Vector3::z());
    } else if dir.z < 0.0 {
        offer(base.z / -dir.z, Vector3::z());
    }

    let b2 = base.xy();
    let d2 = dir.xy();
    for o in &map.obstacles {
        let rel = b2 - o.center;
        let cc = rel.norm_squared() - o.radius * o.radius;
        if cc <= 0.0 {
            let n = if rel.norm() > 0.0 {
                rel.normalize()
            } else {
                -d2.try_normalize(0.0).unwrap_or(Vector2::x())
            };
            offer(0.0, Vector3::new(n.x, n.y, 0.0));
            continue;
        }
        let aa = d2.norm_squared();
        if aa < 1e-12 {
            continue;
        }
        let bb = 2.0 * d2.dot(&rel);
        let disc = bb * bb - 4.0 * aa * cc;
        if disc < 0.0 {
            continue;
        }
        let s = (-bb - disc.sqrt()) / (2.0 * aa);
        if s >= 0.0 {
            let n = (b2 + d2 * s - o.center) / o.radius;
            offer(s, Vector3::new(n.x, n.y, 0.0));
        }
    }

    for w in &map.walls {
        let n = w.normal();
        let dist = w.signed_distance(&b2);
        if dist <= 0.0 {
            if w.spans(&b2) {
                offer(0.0, Vector3::new(n.x, n.y, 0.0));
            }
            continue;
        }
        let denom = n.dot(&d2);
        if denom < 0.0 {
            let s = dist / -denom;
            if w.spans(&(b2 + d2 * s)) {
                offer(s, Vector3::new(n.x, n.y, 0.0));
            }
        }
    }
    best
}

/// Outcome of resolving the arm against the environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    /// Magnitude of the contact force, acting on the body along `-x_b`.
    pub force: f64,
    pub l: f64,
    pub l_dot: f64,
    pub in_contact: bool,
}

impl Contact {
    /// Body-frame contact force vector.
    pub fn body_force(&self) -> Vector3<f64> {
        Vector3::new(-self.force, 0.0, 0.0)
    }
}

/// Resolve the arm against the map and ground. `tip_push` is an optional
/// external force pressing the shield along `-x_b` (N).
pub fn contact_resolve(
    state: &RobotState,
    params: &RobotParams,
    map: &Map,
    tip_push: f64,
) -> Contact {
    let arm = &params.arm;
    let dir = state.arm_dir();
    let hit = cast_ray(&state.r, &dir, map, arm.l_max);

    // rate of change of the hit distance: n . (v + s d') + s' (n . d) = 0
    let s_rate = |h: &RayHit| -> f64 {
        let nd = h.normal.dot(&dir);
        if nd < -1e-6 {
            let d_dot = (state.rot * state.omega).cross(&dir);
            -h.normal.dot(&(state.v + d_dot * h.s)) / nd
        } else {
            0.0
        }
    };

    let push = tip_push.max(0.0);
    match params.variant {
        Variant::Rigid => {
            let mut force = push;
            let mut in_contact = push > 0.0;
            if let Some(h) = hit {
                let pen = arm.l_max - h.s;
                let pen_rate = -s_rate(&h);
                let c = 2.0 * arm.rigid_damping_ratio * (arm.rigid_stiffness * params.mass).sqrt();
                force += (arm.rigid_stiffness * pen + c * pen_rate).max(0.0);
                in_contact = true;
            }
            Contact {
                force,
                l: arm.l_max,
                l_dot: 0.0,
                in_contact,
            }
        }
        Variant::Compliant => {
            let preload = arm.k_l * arm.l_0;
            // quasi-static compression from an external push on the shield
            let push_len = if push > preload {
                (arm.l_max - (push / arm.k_l - arm.l_0)).max(arm.l_min)
            } else {
                arm.l_max
            };
            match hit {
                Some(h) if h.s < push_len => {
                    let rate = s_rate(&h);
                    let l = h.s.max(arm.l_min);
                    let l_dot = if h.s > arm.l_min { rate } else { 0.0 };
                    let mut force =
                        arm.k_l * (arm.l_max - l + arm.l_0) + arm.c_arm * (-l_dot).max(0.0);
                    if h.s < arm.l_min {
                        let pen = arm.l_min - h.s;
                        force += (arm.sat_stiffness * pen + arm.sat_damping * -rate).max(0.0);
                    }
                    Contact {
                        force,
                        l,
                        l_dot,
                        in_contact: true,
                    }
                }
                _ if push > preload => Contact {
                    force: push,
                    l: push_len,
                    l_dot: 0.0,
                    in_contact: true,
                },
                _ => Contact {
                    force: 0.0,
                    l: arm.l_max,
                    l_dot: 0.0,
                    in_contact: false,
                },
            }
        }
    }
}

/// Per-step diagnostics alongside the new state.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: RobotState,
    /// Mean kinematic acceleration over the step (`dv / dt`).
    pub accel: Vector3<f64>,
    /// Largest kinematic acceleration magnitude seen in any sub-step.
    pub peak_accel: f64,
    /// Contact force at the end of the step.
    pub contact_force: f64,
    pub peak_contact_force: f64,
    pub in_contact: bool,
    pub substeps: usize,
}

/// Advance one step of length `dt` with semi-implicit Euler.
pub fn step_dynamics(
    state: &RobotState,
    cmd: &WrenchCommand,
    params: &RobotParams,
    map: &Map,
    dt: f64,
) -> Result<Step> {
    step_dynamics_with_push(state, cmd, params, map, dt, 0.0)
}

/// As [`step_dynamics`], with an external force pressing on the shield.
pub fn step_dynamics_with_push(
    state: &RobotState,
    cmd: &WrenchCommand,
    params: &RobotParams,
    map: &Map,
    dt: f64,
    tip_push: f64,
) -> Result<Step> {
    if !(dt > 0.0 && dt <= 0.005) {
        return Err(Error::validation("dt", "must lie in (0, 0.005]"));
    }
    let near = tip_push > 0.0
        || cast_ray(
            &state.r,
            &state.arm_dir(),
            map,
            params.arm.l_max + CONTACT_LOOKAHEAD + state.v.norm() * dt,
        )
        .is_some();
    let n = if near { CONTACT_SUBSTEPS } else { 1 };
    let h = dt / n as f64;

    let inertia = params.inertia_matrix();
    let inertia_inv = inertia
        .try_inverse()
        .ok_or_else(|| Error::validation("inertia", "singular"))?;
    let f_t = cmd.f_t.clamp(0.0, params.thrust_ceiling());
    let thrust_body = Vector3::new(0.0, 0.0, f_t);
    let g = Vector3::new(0.0, 0.0, params.gravity);

    let mut s = state.clone();
    let v0 = s.v;
    let mut peak_accel: f64 = 0.0;
    let mut peak_force: f64 = 0.0;
    for _ in 0..n {
        let c = contact_resolve(&s, params, map, tip_push);
        peak_force = peak_force.max(c.force);
        let f = s.rot * (thrust_body + c.body_force());
        let a = f / params.mass - g;
        peak_accel = peak_accel.max(a.norm());
        s.v += a * h;
        s.r += s.v * h;
        let iw = inertia * s.omega;
        let w_dot = inertia_inv * (iw.cross(&s.omega) + cmd.m_t);
        s.omega += w_dot * h;
        s.rot *= Rotation3::new(s.omega * h);
        s.rot.renormalize();
        s.t += h;
    }
    let c = contact_resolve(&s, params, map, tip_push);
    s.l = c.l;
    s.l_dot = c.l_dot;
    if !s.is_finite() {
        return Err(Error::SimulationFault {
            t: s.t,
            reason: "non-finite state".into(),
        });
    }
    Ok(Step {
        accel: (s.v - v0) / dt,
        peak_accel,
        contact_force: c.force,
        peak_contact_force: peak_force.max(c.force),
        in_contact: c.in_contact,
        substeps: n,
        state: s,
    })
}

/// One row of a vehicle trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    pub l: f64,
    pub f_e_true: f64,
    pub f_e_hat: f64,
}

impl TraceRow {
    pub fn new(state: &RobotState, f_e_true: f64, f_e_hat: f64) -> Self {
        Self {
            t: state.t,
            r: state.r,
            v: state.v,
            q: state.quaternion(),
            l: state.l,
            f_e_true,
            f_e_hat,
        }
    }
}

pub const TRACE_HEADER: &str = "t,x,y,z,vx,vy,vz,qw,qx,qy,qz,l,f_e_true,f_e_hat";

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in rows {
        let q = r.q.quaternion();
        writeln!(
            out,
            "{:.4},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4}",
            r.t,
            r.r.x,
            r.r.y,
            r.r.z,
            r.v.x,
            r.v.y,
            r.v.z,
            q.w,
            q.i,
            q.j,
            q.k,
            r.l,
            r.f_e_true,
            r.f_e_hat
        )?;
    }
    Ok(())
}

/// Drop-test outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DropResult {
    pub trace: Vec<TraceRow>,
    /// Largest kinematic acceleration magnitude, m/s^2.
    pub peak_accel: f64,
    /// Downward speed when the shield first touches the ground.
    pub impact_speed: f64,
    /// Peak true contact force, N.
    pub peak_force: f64,
}

/// Arm-down attitude: `x_b` along `-e3`, `z_b` along `e1`.
pub fn arm_down() -> Rotation3<f64> {
    Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        0.0, 1.0, 0.0, //
        -1.0, 0.0, 0.0,
    ))
}

/// Passive fall from rest with the shield `height` above the ground, until
/// the rebound apex (or the robot settles).
pub fn run_drop_test(params: &RobotParams, height: f64, dt: f64) -> Result<DropResult> {
    if !(height > 0.0) {
        return Err(Error::validation("height", "must be > 0"));
    }
    let map = Map::empty(
        crate::world::Bounds::centered(10.0, 10.0),
        Vector2::zeros(),
        Vector2::zeros(),
        0.0,
    );
    let mut s = RobotState {
        r: Vector3::new(0.0, 0.0, height + params.arm.l_max),
        v: Vector3::zeros(),
        rot: arm_down(),
        omega: Vector3::zeros(),
        l: params.arm.l_max,
        l_dot: 0.0,
        t: 0.0,
    };
    let cmd = WrenchCommand::off();
    let mut trace = vec![TraceRow::new(&s, 0.0, 0.0)];
    let mut peak_accel: f64 = 0.0;
    let mut peak_force: f64 = 0.0;
    let mut impact_speed = None;
    let mut touched = false;
    let t_end = (2.0 * height / params.gravity.max(1e-9)).sqrt() + 2.0;
    while s.t < t_end {
        let prev_vz = s.v.z;
        let step = step_dynamics(&s, &cmd, params, &map, dt)?;
        if step.in_contact || step.peak_contact_force > 0.0 {
            if !touched {
                impact_speed = Some(-prev_vz);
            }
            touched = true;
        }
        peak_accel = peak_accel.max(step.peak_accel);
        peak_force = peak_force.max(step.peak_contact_force);
        s = step.state;
        trace.push(TraceRow::new(&s, step.contact_force, 0.0));
        if touched && !step.in_contact && prev_vz > 0.0 && s.v.z <= 0.0 {
            break;
        }
    }
    Ok(DropResult {
        trace,
        peak_accel,
        impact_speed: impact_speed.unwrap_or(0.0),
        peak_force,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Bounds, Wall};
    use approx::assert_relative_eq;

    fn open_map() -> Map {
        Map::empty(
            Bounds::centered(50.0, 50.0),
            Vector2::zeros(),
            Vector2::zeros(),
            1.0,
        )
    }

    fn wall_at(x: f64) -> Map {
        let mut m = open_map();
        m.walls
            .push(Wall::new(Vector2::new(x, -10.0), Vector2::new(x, 10.0)));
        m
    }

    #[test]
    fn free_flight_has_no_contact() {
        let p = RobotParams::default();
        let s = RobotState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0, &p.arm);
        let c = contact_resolve(&s, &p, &wall_at(2.0), 0.0);
        assert_eq!(c.force, 0.0);
        assert_eq!(c.l, p.arm.l_max);
        assert!(!c.in_contact);
    }

    #[test]
    fn static_wall_compression_force() {
        let p = RobotParams::default();
        // base 0.2655 m from the wall: arm compressed by 14.5 mm
        let s = RobotState::at_rest(Vector3::new(2.0 - 0.2655, 0.0, 1.0), 0.0, &p.arm);
        let c = contact_resolve(&s, &p, &wall_at(2.0), 0.0);
        assert_relative_eq!(c.l, 0.2655, epsilon = 1e-12);
        assert_relative_eq!(c.force, 3800.0 * 0.0165, epsilon = 1e-9);
        assert!((c.force - 62.7).abs() < 0.05);
    }

    #[test]
    fn full_compression_clamps_length() {
        let p = RobotParams::default();
        let s = RobotState::at_rest(
            Vector3::new(2.0 - p.arm.l_min + 0.003, 0.0, 1.0),
            0.0,
            &p.arm,
        );
        let c = contact_resolve(&s, &p, &wall_at(2.0), 0.0);
        assert_eq!(c.l, p.arm.l_min);
        // spring part at full stroke plus the pad
        let spring = 3800.0 * (0.0254 + 0.002);
        assert_relative_eq!(
            c.force,
            spring + p.arm.sat_stiffness * 0.003,
            epsilon = 1e-9
        );
    }

    #[test]
    fn rigid_contact_is_penetration_times_stiffness() {
        let p = RobotParams::rigid();
        let s = RobotState::at_rest(Vector3::new(2.0 - 0.279, 0.0, 1.0), 0.0, &p.arm);
        let c = contact_resolve(&s, &p, &wall_at(2.0), 0.0);
        assert_eq!(c.l, p.arm.l_max);
        assert_relative_eq!(c.force, p.arm.rigid_stiffness * 0.001, max_relative = 1e-9);
    }

    #[test]
    fn pole_contact_along_arm() {
        let p = RobotParams::default();
        let mut m = open_map();
        m.obstacles
            .push(crate::world::Obstacle::new(0, 1.0, 0.0, 0.15));
        let s = RobotState::at_rest(Vector3::new(1.0 - 0.15 - 0.27, 0.0, 1.0), 0.0, &p.arm);
        let c = contact_resolve(&s, &p, &m, 0.0);
        assert_relative_eq!(c.l, 0.27, epsilon = 1e-12);
        // facing away: no contact
        let s2 = RobotState::at_rest(s.r, std::f64::consts::PI, &p.arm);
        assert!(!contact_resolve(&s2, &p, &m, 0.0).in_contact);
    }

    #[test]
    fn free_fall_velocity() {
        let p = RobotParams::default();
        let s = RobotState::at_rest(Vector3::new(0.0, 0.0, 5.0), 0.0, &p.arm);
        let st = step_dynamics(&s, &WrenchCommand::off(), &p, &open_map(), 0.001).unwrap();
        assert_relative_eq!(st.state.v.z, -9.81 * 0.001, epsilon = 1e-15);
    }

    #[test]
    fn hover_is_stationary() {
        let p = RobotParams::default();
        let mut s = RobotState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.3, &p.arm);
        let cmd = WrenchCommand::hover(&p);
        let m = open_map();
        for _ in 0..1000 {
            s = step_dynamics(&s, &cmd, &p, &m, 0.001).unwrap().state;
        }
        assert!((s.r - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
        assert!(s.v.norm() < 1e-9);
    }

    #[test]
    fn rejects_large_dt() {
        let p = RobotParams::default();
        let s = RobotState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0, &p.arm);
        assert!(step_dynamics(&s, &WrenchCommand::off(), &p, &open_map(), 0.01).is_err());
    }

    #[test]
    fn non_finite_is_a_fault() {
        let p = RobotParams::default();
        let mut s = RobotState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0, &p.arm);
        s.v.x = f64::NAN;
        let e = step_dynamics(&s, &WrenchCommand::off(), &p, &open_map(), 0.001).unwrap_err();
        assert!(matches!(e, Error::SimulationFault { .. }));
    }

    /// Kinetic plus spring energy through an elastic (undamped) contact, no
    /// gravity, low enough speed that the arm never bottoms out.
    #[test]
    fn elastic_contact_conserves_energy() {
        let mut p = RobotParams {
            gravity: 0.0,
            ..Default::default()
        };
        p.arm.c_arm = 0.0;
        let arm = p.arm.clone();
        let spring_energy = |l: f64| {
            let d = arm.l_max - l;
            if d > 0.0 {
                arm.k_l * (0.5 * d * d + arm.l_0 * d)
            } else {
                0.0
            }
        };
        let m = wall_at(1.0);
        let mut s = RobotState::at_rest(Vector3::new(0.6, 0.0, 1.0), 0.0, &p.arm);
        s.v.x = 1.0;
        let e0 = 0.5 * p.mass * 1.0;
        let mut min_l = arm.l_max;
        let mut t = 0.0;
        while t < 0.6 {
            s = step_dynamics(&s, &WrenchCommand::off(), &p, &m, 0.001)
                .unwrap()
                .state;
            min_l = min_l.min(s.l);
            let e = 0.5 * p.mass * s.v.norm_squared() + spring_energy(s.l);
            assert!((e - e0).abs() / e0 < 0.01, "energy drift {e} vs {e0}");
            t += 0.001;
        }
        assert!(min_l < arm.l_max - 0.005 && min_l > arm.l_min);
        assert!(s.v.x < 0.0);
        assert!((s.v.x.abs() - 1.0).abs() < 0.01, "rebound {}", s.v.x);
    }

    #[test]
    fn arm_stays_within_stroke() {
        let p = RobotParams::default();
        let m = wall_at(1.0);
        let mut s = RobotState::at_rest(Vector3::new(0.5, 0.0, 1.0), 0.0, &p.arm);
        s.v.x = 4.0;
        for _ in 0..500 {
            let st = step_dynamics(&s, &WrenchCommand::hover(&p), &p, &m, 0.001).unwrap();
            s = st.state;
            assert!(s.l <= p.arm.l_max && s.l >= p.arm.l_min);
            if !st.in_contact {
                assert_eq!(st.contact_force, 0.0);
            }
        }
    }

    #[test]
    fn rotation_stays_orthonormal() {
        let p = RobotParams::default();
        let m = open_map();
        let mut s = RobotState::at_rest(Vector3::new(0.0, 0.0, 100.0), 0.0, &p.arm);
        s.omega = Vector3::new(3.0, -2.0, 5.0);
        let cmd = WrenchCommand {
            f_t: p.weight(),
            m_t: Vector3::new(0.001, -0.002, 0.0005),
        };
        for _ in 0..20_000 {
            s = step_dynamics(&s, &cmd, &p, &m, 0.001).unwrap().state;
        }
        let r = s.rot.matrix();
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn drop_impact_speed_matches_free_fall() {
        let p = RobotParams::default();
        let d = run_drop_test(&p, 0.7, 0.001).unwrap();
        assert!((d.impact_speed - (2.0 * 9.81 * 0.7f64).sqrt()).abs() < 0.02);
        assert!(d.peak_accel > 9.81);
    }

    #[test]
    fn drop_rejects_non_positive_height() {
        assert!(run_drop_test(&RobotParams::default(), 0.0, 0.001).is_err());
    }

    #[test]
    fn peak_shrinks_with_height() {
        for v in [Variant::Compliant, Variant::Rigid] {
            let p = RobotParams::default().with_variant(v);
            let peaks: Vec<f64> = [1e-6, 1e-4, 1e-2, 0.3]
                .iter()
                .map(|&h| run_drop_test(&p, h, 0.001).unwrap().peak_accel)
                .collect();
            assert!(peaks.windows(2).all(|w| w[0] <= w[1]), "{v}: {peaks:?}");
            assert!(peaks[0] < 3.0 * 9.81, "{v}: {peaks:?}");
        }
    }

    #[test]
    fn validation_names_the_field() {
        let p = RobotParams {
            mass: -1.0,
            ..Default::default()
        };
        match p.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "mass"),
            other => panic!("{other:?}"),
        }
        let mut p = RobotParams::default();
        p.arm.l_min = 0.3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn trace_csv_header() {
        let p = RobotParams::default();
        let s = RobotState::at_rest(Vector3::new(0.0, 0.0, 1.0), 0.0, &p.arm);
        let mut buf = Vec::new();
        write_trace_csv(&[TraceRow::new(&s, 0.0, 7.6)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), TRACE_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 14);
    }
}
