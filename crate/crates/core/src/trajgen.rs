//! Minimum-snap piecewise polynomials, trapezoidal time allocation and the
//! post-collision recovery trajectory.
//!
//! Each segment is a degree-7 polynomial per axis (x, y, z, yaw) in
//! normalized time `tau = t / T`. The solver optimizes over the free
//! derivatives (velocity, acceleration, jerk) at the knots; positions and
//! pinned derivatives are fixed, and continuity up to jerk holds by
//! construction since adjacent segments share knot states.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{Rotation3, SMatrix, SVector, Vector3};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::control::FlatSetpoint;
use crate::error::{Error, Result};

pub const N_COEFFS: usize = 8;
/// Derivative orders stored per knot: position, velocity, acceleration, jerk.
const KNOT_DIM: usize = 4;

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

/// One axis boundary condition. `None` derivatives are free.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Knot {
    pub pos: f64,
    pub vel: Option<f64>,
    pub acc: Option<f64>,
    pub jerk: Option<f64>,
}

impl Knot {
    pub fn free(pos: f64) -> Self {
        Self {
            pos,
            ..Default::default()
        }
    }

    pub fn rest(pos: f64) -> Self {
        Self {
            pos,
            vel: Some(0.0),
            acc: Some(0.0),
            jerk: Some(0.0),
        }
    }

    fn pinned(&self, order: usize) -> Option<f64> {
        match order {
            0 => Some(self.pos),
            1 => self.vel,
            2 => self.acc,
            _ => self.jerk,
        }
    }
}

/// Spatial waypoint with optional pinned derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub pos: Vector3<f64>,
    pub yaw: f64,
    pub vel: Option<Vector3<f64>>,
    pub acc: Option<Vector3<f64>>,
    pub jerk: Option<Vector3<f64>>,
}

impl Waypoint {
    pub fn free(pos: Vector3<f64>, yaw: f64) -> Self {
        Self {
            pos,
            yaw,
            vel: None,
            acc: None,
            jerk: None,
        }
    }

    pub fn rest(pos: Vector3<f64>, yaw: f64) -> Self {
        Self {
            pos,
            yaw,
            vel: Some(Vector3::zeros()),
            acc: Some(Vector3::zeros()),
            jerk: Some(Vector3::zeros()),
        }
    }

    pub fn with_vel(mut self, v: Vector3<f64>) -> Self {
        self.vel = Some(v);
        self
    }

    fn axis(&self, i: usize) -> Knot {
        Knot {
            pos: self.pos[i],
            vel: self.vel.map(|v| v[i]),
            acc: self.acc.map(|v| v[i]),
            jerk: self.jerk.map(|v| v[i]),
        }
    }
}

/// One polynomial piece: duration and normalized-time coefficients for
/// x, y, z and yaw (lowest order first).
#[derive(Debug, Clone, PartialEq)]
pub struct PolySegment {
    pub duration: f64,
    pub coeffs: [[f64; N_COEFFS]; 4],
}

impl PolySegment {
    /// `order`-th time derivative of `axis` at local time `t`.
    pub fn eval(&self, axis: usize, t: f64, order: usize) -> f64 {
        let tau = (t / self.duration).clamp(0.0, 1.0);
        eval_normalized(&self.coeffs[axis], tau, order) / self.duration.powi(order as i32)
    }

    /// Coefficients in physical time (`p(t) = sum a_k t^k`).
    pub fn physical_coeffs(&self, axis: usize) -> [f64; N_COEFFS] {
        let mut out = self.coeffs[axis];
        for (k, c) in out.iter_mut().enumerate() {
            *c /= self.duration.powi(k as i32);
        }
        out
    }
}

fn falling(k: usize, n: usize) -> f64 {
    (0..n).map(|i| (k - i) as f64).product()
}

fn eval_normalized(c: &[f64; N_COEFFS], tau: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for k in (order..N_COEFFS).rev() {
        acc = acc * tau + c[k] * falling(k, order);
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTrajectory {
    pub segments: Vec<PolySegment>,
    starts: Vec<f64>,
}

impl PolynomialTrajectory {
    pub fn new(segments: Vec<PolySegment>) -> Self {
        let mut starts = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for s in &segments {
            starts.push(t);
            t += s.duration;
        }
        Self { segments, starts }
    }

    pub fn total_time(&self) -> f64 {
        self.starts
            .last()
            .zip(self.segments.last())
            .map_or(0.0, |(s, g)| s + g.duration)
    }

    /// Start time of each segment.
    pub fn segment_starts(&self) -> &[f64] {
        &self.starts
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let i = match self
            .starts
            .binary_search_by(|s| s.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        let i = i.min(self.segments.len() - 1);
        (i, t - self.starts[i])
    }

    pub fn eval(&self, axis: usize, t: f64, order: usize) -> f64 {
        let (i, local) = self.locate(t);
        self.segments[i].eval(axis, local, order)
    }

    /// Flat setpoint at `t`. Before 0 and after the end the trajectory holds
    /// its boundary position at rest.
    pub fn sample(&self, t: f64) -> FlatSetpoint {
        let end = self.total_time();
        let tc = t.clamp(0.0, end);
        let r = Vector3::new(
            self.eval(0, tc, 0),
            self.eval(1, tc, 0),
            self.eval(2, tc, 0),
        );
        let yaw = self.eval(3, tc, 0);
        if t > end || t < 0.0 {
            return FlatSetpoint::hold(r, yaw);
        }
        FlatSetpoint {
            r,
            v: Vector3::new(
                self.eval(0, tc, 1),
                self.eval(1, tc, 1),
                self.eval(2, tc, 1),
            ),
            a: Vector3::new(
                self.eval(0, tc, 2),
                self.eval(1, tc, 2),
                self.eval(2, tc, 2),
            ),
            yaw,
        }
    }

    pub fn end_position(&self) -> Vector3<f64> {
        self.sample(self.total_time()).r
    }
}

/// Trapezoidal-profile duration of each leg between consecutive points.
pub fn allocate_times(points: &[Vector3<f64>], v_max: f64, a_max: f64) -> Result<Vec<f64>> {
    if !(v_max > 0.0) {
        return Err(Error::validation("v_max", "must be > 0"));
    }
    if !(a_max > 0.0) {
        return Err(Error::validation("a_max", "must be > 0"));
    }
    points
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let l = (w[1] - w[0]).norm();
            if l < 1e-9 {
                Err(Error::ZeroLengthSegment { index: i })
            } else {
                Ok(trapezoid_time(l, v_max, a_max))
            }
        })
        .collect()
}

pub fn trapezoid_time(l: f64, v_max: f64, a_max: f64) -> f64 {
    if l >= v_max * v_max / a_max {
        v_max / a_max + l / v_max
    } else {
        2.0 * (l / a_max).sqrt()
    }
}

/// Trapezoidal speed profile along a straight segment, from speed `v0` to
/// `v1` with cruise at most `v_max`. Unreachable end speeds are clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedProfile {
    length: f64,
    v0: f64,
    v1: f64,
    vp: f64,
    a: f64,
}

impl SpeedProfile {
    pub fn new(length: f64, v0: f64, v1: f64, v_max: f64, a_max: f64) -> Self {
        let l = length.max(0.0);
        let mut v0 = v0.clamp(0.0, v_max);
        let mut v1 = v1.clamp(0.0, v_max);
        v1 = v1.min((v0 * v0 + 2.0 * a_max * l).sqrt());
        v0 = v0.min((v1 * v1 + 2.0 * a_max * l).sqrt());
        let vp = v_max
            .min((a_max * l + 0.5 * (v0 * v0 + v1 * v1)).sqrt())
            .max(v0.max(v1));
        Self {
            length: l,
            v0,
            v1,
            vp,
            a: a_max,
        }
    }

    fn accel_dist(&self) -> f64 {
        (self.vp * self.vp - self.v0 * self.v0) / (2.0 * self.a)
    }

    fn decel_dist(&self) -> f64 {
        (self.vp * self.vp - self.v1 * self.v1) / (2.0 * self.a)
    }

    /// Time at which arc length `s` is reached.
    pub fn time_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length);
        let s1 = self.accel_dist();
        let s2 = (self.length - s1 - self.decel_dist()).max(0.0);
        let t1 = (self.vp - self.v0) / self.a;
        if s <= s1 {
            return ((self.v0 * self.v0 + 2.0 * self.a * s).sqrt() - self.v0) / self.a;
        }
        if s <= s1 + s2 {
            return t1 + (s - s1) / self.vp;
        }
        let u = s - s1 - s2;
        let t2 = if self.vp > 0.0 { s2 / self.vp } else { 0.0 };
        t1 + t2 + (self.vp - (self.vp * self.vp - 2.0 * self.a * u).max(0.0).sqrt()) / self.a
    }

    pub fn total_time(&self) -> f64 {
        self.time_at(self.length)
    }
}

/// Row `n` of the map from coefficients to the `n`-th normalized derivative at `tau`.
fn derivative_row(tau: f64, n: usize) -> Vec8 {
    Vec8::from_fn(|k, _| {
        if k < n {
            0.0
        } else {
            falling(k, n) * tau.powi((k - n) as i32)
        }
    })
}

/// Normalized snap cost matrix over `tau in [0, 1]`.
fn snap_cost() -> &'static Mat8 {
    static Q: OnceLock<Mat8> = OnceLock::new();
    Q.get_or_init(|| {
        Mat8::from_fn(|j, k| {
            if j < 4 || k < 4 {
                0.0
            } else {
                falling(j, 4) * falling(k, 4) / (j + k - 7) as f64
            }
        })
    })
}

/// Inverse of the map from coefficients to endpoint derivatives
/// `[p, p', p'', p'''](0)` and `(1)` in normalized time.
fn endpoint_inverse() -> &'static Mat8 {
    static A: OnceLock<Mat8> = OnceLock::new();
    A.get_or_init(|| {
        let mut a = Mat8::zeros();
        for n in 0..KNOT_DIM {
            a.set_row(n, &derivative_row(0.0, n).transpose());
            a.set_row(n + KNOT_DIM, &derivative_row(1.0, n).transpose());
        }
        a.try_inverse().expect("endpoint map is invertible")
    })
}

fn time_scaling(t: f64) -> Vec8 {
    Vec8::from_fn(|i, _| t.powi((i % KNOT_DIM) as i32))
}

/// Snap cost of one segment as a quadratic form in its physical endpoint
/// states.
fn segment_hessian(t: f64) -> Mat8 {
    let ainv = endpoint_inverse();
    let s = Mat8::from_diagonal(&time_scaling(t));
    let m = ainv * s;
    m.transpose() * snap_cost() * m / t.powi(7)
}

/// Minimum-snap coefficients (normalized time) for one axis.
pub fn min_snap_axis(knots: &[Knot], durations: &[f64]) -> Result<Vec<[f64; N_COEFFS]>> {
    let m = durations.len();
    if knots.len() < 2 || knots.len() != m + 1 {
        return Err(Error::SingularSystem(format!(
            "{} knots for {} segments",
            knots.len(),
            m
        )));
    }
    if let Some(i) = durations.iter().position(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::SingularSystem(format!(
            "segment {i} has non-positive duration"
        )));
    }
    let n_vars = KNOT_DIM * (m + 1);
    let mut values = vec![0.0; n_vars];
    let mut free_index = vec![usize::MAX; n_vars];
    let mut n_free = 0;
    for (k, knot) in knots.iter().enumerate() {
        for order in 0..KNOT_DIM {
            let g = k * KNOT_DIM + order;
            match knot.pinned(order) {
                Some(v) => values[g] = v,
                None => {
                    free_index[g] = n_free;
                    n_free += 1;
                }
            }
        }
    }

    if n_free > 0 {
        let hessians: Vec<Mat8> = durations.iter().map(|&t| segment_hessian(t)).collect();
        let mut coo = CooMatrix::new(n_free, n_free);
        let mut rhs = nalgebra::DVector::zeros(n_free);
        for (i, h) in hessians.iter().enumerate() {
            let base = i * KNOT_DIM;
            for a in 0..N_COEFFS {
                let fa = free_index[base + a];
                if fa == usize::MAX {
                    continue;
                }
                for b in 0..N_COEFFS {
                    let gb = base + b;
                    match free_index[gb] {
                        usize::MAX => rhs[fa] -= h[(a, b)] * values[gb],
                        fb => coo.push(fa, fb, h[(a, b)]),
                    }
                }
            }
        }
        let csc = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&csc)
            .map_err(|e| Error::SingularSystem(format!("cholesky failed: {e:?}")))?;
        let x = chol.solve(&rhs);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        for (g, &fi) in free_index.iter().enumerate() {
            if fi != usize::MAX {
                values[g] = x[fi];
            }
        }
    }

    let ainv = endpoint_inverse();
    Ok(durations
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let d = Vec8::from_fn(|j, _| values[i * KNOT_DIM + j]);
            let c = ainv * time_scaling(t).component_mul(&d);
            let mut out = [0.0; N_COEFFS];
            out.copy_from_slice(c.as_slice());
            out
        })
        .collect())
}

/// Minimum-snap trajectory through `waypoints`. Yaw rates are pinned to
/// zero at the two ends and free in between.
pub fn min_snap(waypoints: &[Waypoint], durations: &[f64]) -> Result<PolynomialTrajectory> {
    if waypoints.len() < 2 {
        return Err(Error::SingularSystem("need at least two waypoints".into()));
    }
    let mut per_axis = Vec::with_capacity(4);
    for axis in 0..3 {
        let knots: Vec<Knot> = waypoints.iter().map(|w| w.axis(axis)).collect();
        per_axis.push(min_snap_axis(&knots, durations)?);
    }
    let last = waypoints.len() - 1;
    let yaw_knots: Vec<Knot> = waypoints
        .iter()
        .enumerate()
        .map(|(i, w)| {
            if i == 0 || i == last {
                Knot::rest(w.yaw)
            } else {
                Knot::free(w.yaw)
            }
        })
        .collect();
    per_axis.push(min_snap_axis(&yaw_knots, durations)?);
    let segments = durations
        .iter()
        .enumerate()
        .map(|(i, &d)| PolySegment {
            duration: d,
            coeffs: [
                per_axis[0][i],
                per_axis[1][i],
                per_axis[2][i],
                per_axis[3][i],
            ],
        })
        .collect();
    Ok(PolynomialTrajectory::new(segments))
}

/// Map `angle` to the representative closest to `reference`.
pub fn unwrap_angle(reference: f64, angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    angle + two_pi * ((reference - angle) / two_pi).round()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryParams {
    /// Retreat per newton of peak contact force, m/N.
    pub eta: f64,
    /// Constant retreat, m.
    pub d0: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            d0: 0.2,
            v_max: 2.0,
            a_max: 6.0,
        }
    }
}

impl RecoveryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !(self.d0 >= 0.0) {
            return Err(Error::validation("eta", "eta and d0 must be >= 0"));
        }
        if !(self.v_max > 0.0 && self.a_max > 0.0) {
            return Err(Error::validation("v_max", "recovery limits must be > 0"));
        }
        Ok(())
    }
}

/// `r_c - (eta f_max + d0) R_c x_b`, at the map altitude.
pub fn recovery_setpoint(
    r_c: &Vector3<f64>,
    rot_c: &Rotation3<f64>,
    f_max: f64,
    eta: f64,
    d0: f64,
    altitude: f64,
) -> Vector3<f64> {
    let mut r_n = r_c - (rot_c * Vector3::x()) * (eta * f_max + d0);
    r_n.z = altitude;
    r_n
}

/// Single segment from the current position and velocity (acceleration
/// free) to rest at the recovery setpoint. Yaw is held.
pub fn recovery_trajectory(
    r_c: &Vector3<f64>,
    v_c: &Vector3<f64>,
    rot_c: &Rotation3<f64>,
    f_max: f64,
    params: &RecoveryParams,
    altitude: f64,
) -> Result<(PolynomialTrajectory, Vector3<f64>)> {
    let r_n = recovery_setpoint(r_c, rot_c, f_max, params.eta, params.d0, altitude);
    let durations = allocate_times(&[*r_c, r_n], params.v_max, params.a_max)?;
    let x = rot_c * Vector3::x();
    let yaw = x.y.atan2(x.x);
    let start = Waypoint {
        pos: *r_c,
        yaw,
        vel: Some(*v_c),
        acc: None,
        jerk: None,
    };
    let end = Waypoint {
        jerk: None,
        ..Waypoint::rest(r_n, yaw)
    };
    Ok((min_snap(&[start, end], &durations)?, r_n))
}

pub const TRAJECTORY_HEADER: &str = "t,x,y,z,vx,vy,vz,ax,ay,az,yaw";

/// Sampled flat states at `rate` Hz, including the final instant.
pub fn write_trajectory_csv<W: Write>(
    traj: &PolynomialTrajectory,
    rate: f64,
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    let n = (traj.total_time() * rate).floor() as usize;
    for i in 0..=n {
        let t = i as f64 / rate;
        let s = traj.sample(t);
        writeln!(
            out,
            "{:.3},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            t, s.r.x, s.r.y, s.r.z, s.v.x, s.v.y, s.v.z, s.a.x, s.a.y, s.a.z, s.yaw
        )?;
    }
    Ok(())
}
