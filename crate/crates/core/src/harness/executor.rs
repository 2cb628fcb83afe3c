//! Closed-loop execution of a plan: trajectory generation, tracking,
//! dynamics, estimation and collision recovery.

use std::collections::{BTreeSet, VecDeque};
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{Controller, FlatSetpoint, Gains};
use crate::error::{Error, Result};
use crate::planners::{Plan, PlannerKind, SegmentKind};
use crate::sensing::{ContactEstimator, DetectorEvent, DetectorParams, SensorModel};
use crate::trajgen::{
    min_snap, recovery_trajectory, unwrap_angle, PolynomialTrajectory, RecoveryParams,
    SpeedProfile, Waypoint,
};
use crate::vehicle::{step_dynamics_with_push, RobotParams, RobotState, TraceRow};
use crate::world::{Map, ObstacleId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecParams {
    pub dt: f64,
    /// Goal reached within this distance, m.
    pub goal_tol: f64,
    /// and below this speed, m/s.
    pub goal_speed_tol: f64,
    /// Simulated-time budget per trial, s.
    pub max_time: f64,
    /// Speed limit for waypoint-following legs, m/s.
    pub v_max: f64,
    /// Speed limit for contact-prioritized legs, m/s.
    pub cp_v_max: f64,
    /// Longest straight piece between trajectory knots, m.
    pub max_piece: f64,
    /// Interior waypoints closer than this to a neighbour are skipped, m.
    pub min_gap: f64,
    pub a_max: f64,
    /// Time from handling start until the next leg begins, s.
    pub recovery_hold: f64,
    pub recovery: RecoveryParams,
    /// Yaw looks this far ahead along the path, m.
    pub yaw_lookahead: f64,
    /// Keep every n-th step in the trace.
    pub trace_every: usize,
    pub sensor: SensorModel,
    pub detector: DetectorParams,
    pub gains: Gains,
}

impl Default for ExecParams {
    fn default() -> Self {
        Self {
            dt: 0.001,
            goal_tol: 0.1,
            goal_speed_tol: 0.1,
            max_time: 150.0,
            v_max: 1.5,
            cp_v_max: 2.5,
            max_piece: 0.5,
            min_gap: 0.15,
            a_max: 3.0,
            recovery_hold: 2.5,
            recovery: RecoveryParams::default(),
            yaw_lookahead: 1.0,
            trace_every: 10,
            sensor: SensorModel::default(),
            detector: DetectorParams::default(),
            gains: Gains::default(),
        }
    }
}

impl ExecParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.005) {
            return Err(Error::validation("dt", "must lie in (0, 0.005]"));
        }
        if !(self.v_max > 0.0) || !(self.cp_v_max > 0.0) || !(self.a_max > 0.0) {
            return Err(Error::validation(
                "v_max",
                "v_max, cp_v_max and a_max must be > 0",
            ));
        }
        if !(self.max_piece > 0.0) {
            return Err(Error::validation("max_piece", "must be > 0"));
        }
        if !(self.min_gap >= 0.0 && self.min_gap < self.max_piece) {
            return Err(Error::validation("min_gap", "must lie in [0, max_piece)"));
        }
        if !(self.recovery_hold >= 0.0) {
            return Err(Error::validation("recovery_hold", "must be >= 0"));
        }
        if self.trace_every == 0 {
            return Err(Error::validation("trace_every", "must be >= 1"));
        }
        self.sensor.validate()?;
        self.gains.validate()?;
        self.recovery.validate()
    }
}

/// One group of waypoints flown as a single polynomial.
#[derive(Debug, Clone, PartialEq)]
struct Leg {
    targets: Vec<Vector2<f64>>,
    /// Set when the leg ends by flying into the target at this speed.
    collide: Option<f64>,
    /// Flown at the contact-prioritized speed limit.
    fast: bool,
}

/// Contact must have ended this recently for a detection to count as real, s.
const FALSE_ALARM_WINDOW: f64 = 0.5;

/// The part of `leg` still ahead of `p`: targets past the polyline segment
/// closest to `p`.
fn remaining_leg(p: &Vector2<f64>, mut leg: Leg) -> Leg {
    let mut best = (f64::INFINITY, 0);
    let mut prev = leg.targets[0];
    for (i, t) in leg.targets.iter().enumerate() {
        let d = point_segment_distance(p, &prev, t);
        if d < best.0 {
            best = (d, i);
        }
        prev = *t;
    }
    leg.targets.drain(..best.1);
    leg
}

fn point_segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let u = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * u - p).norm()
}

/// Split a plan into legs ending at each collide target or the goal.
fn legs_from_plan(plan: &Plan) -> Vec<Leg> {
    let fast = plan.planner == PlannerKind::Cp;
    let mut legs = Vec::new();
    let mut cur = Vec::new();
    for s in &plan.segments {
        match s.kind {
            SegmentKind::FreeFlight => cur.push(s.target()),
            SegmentKind::Collide => {
                cur.push(s.target());
                legs.push(Leg {
                    targets: std::mem::take(&mut cur),
                    collide: Some(s.speed),
                    fast,
                });
            }
            SegmentKind::Recover => {}
        }
    }
    if !cur.is_empty() {
        legs.push(Leg {
            targets: cur,
            collide: None,
            fast,
        });
    }
    legs
}

#[derive(Debug, Clone)]
enum Mode {
    Hold(FlatSetpoint),
    Flying {
        traj: PolynomialTrajectory,
        t0: f64,
        collide: bool,
    },
    Recovering {
        traj: PolynomialTrajectory,
        t0: f64,
        resume_at: f64,
    },
}

/// Record of one handled collision.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryRecord {
    pub t_detect: f64,
    pub t_handling: f64,
    pub f_max: f64,
    pub r_c: Vector3<f64>,
    pub r_n: Vector3<f64>,
    pub expected: bool,
}

/// One continuous contact of the arm with the world.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactEpisode {
    pub t_start: f64,
    pub t_end: Option<f64>,
    /// Approach speed along the arm when contact began.
    pub impact_speed: f64,
    /// Speed away from the surface when the shield left it.
    pub rebound_speed: Option<f64>,
    pub peak_force: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecStats {
    pub recoveries: Vec<RecoveryRecord>,
    pub contacts: Vec<ContactEpisode>,
    pub unexpected_collisions: usize,
    /// Detections with no physical contact in the preceding window.
    pub false_alarms: usize,
    /// Collide legs that ended without a detection.
    pub missed_contacts: usize,
    pub traj_gen_time_s: f64,
    pub traj_gen_calls: usize,
    pub peak_accel: f64,
    pub peak_contact_force: f64,
    pub reached_goal_at: Option<f64>,
    pub contacted: BTreeSet<ObstacleId>,
    /// Largest force estimate seen, N.
    pub f_hat_peak: f64,
}

/// Half-sine push on the shield tip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impulse {
    pub t0: f64,
    pub duration: f64,
    pub peak: f64,
}

impl Impulse {
    pub fn force(&self, t: f64) -> f64 {
        let s = (t - self.t0) / self.duration;
        if (0.0..=1.0).contains(&s) {
            self.peak * (std::f64::consts::PI * s).sin()
        } else {
            0.0
        }
    }
}

/// A running closed-loop simulation.
pub struct Executor<'a> {
    pub map: &'a Map,
    pub robot: RobotParams,
    pub params: ExecParams,
    controller: Controller,
    estimator: ContactEstimator,
    pub state: RobotState,
    pub trace: Vec<TraceRow>,
    /// Planar position at every step.
    pub samples: Vec<Vector2<f64>>,
    pub stats: ExecStats,
    queue: VecDeque<Leg>,
    /// Leg being flown, kept so an interrupted leg can resume.
    active: Option<Leg>,
    mode: Mode,
    goal: Vector2<f64>,
    steps: usize,
    detect_t: Option<f64>,
    contact_dir: Vector3<f64>,
    was_in_contact: bool,
    /// Set after an unplanned collision so an online caller can replan.
    pub needs_replan: bool,
    /// External push applied to the shield.
    pub impulse: Option<Impulse>,
}

impl<'a> Executor<'a> {
    /// Robot at rest at the map start facing `yaw`.
    pub fn new(
        map: &'a Map,
        robot: RobotParams,
        params: ExecParams,
        yaw: f64,
        sensor_phase: f64,
        seed: u64,
    ) -> Result<Self> {
        robot.validate()?;
        params.validate()?;
        let state = RobotState::at_rest(
            Vector3::new(map.start.x, map.start.y, map.altitude),
            yaw,
            &robot.arm,
        );
        Ok(Self::from_state(
            map,
            robot,
            params,
            state,
            sensor_phase,
            seed,
        ))
    }

    pub fn from_state(
        map: &'a Map,
        robot: RobotParams,
        params: ExecParams,
        state: RobotState,
        sensor_phase: f64,
        seed: u64,
    ) -> Self {
        let estimator = ContactEstimator::new(
            robot.variant,
            &robot.arm,
            &params.sensor,
            &params.detector,
            sensor_phase,
            seed,
        );
        let hold = FlatSetpoint::hold(state.r, state.yaw());
        Self {
            map,
            controller: Controller::new(params.gains.clone()),
            estimator,
            trace: vec![TraceRow::new(&state, 0.0, 0.0)],
            samples: vec![state.xy()],
            state,
            robot,
            params,
            stats: ExecStats::default(),
            queue: VecDeque::new(),
            active: None,
            mode: Mode::Hold(hold),
            goal: map.goal,
            steps: 0,
            detect_t: None,
            contact_dir: Vector3::x(),
            was_in_contact: false,
            needs_replan: false,
            impulse: None,
        }
    }

    pub fn t(&self) -> f64 {
        self.state.t
    }

    pub fn is_recovering(&self) -> bool {
        matches!(self.mode, Mode::Recovering { .. })
    }

    pub fn done(&self) -> bool {
        self.stats.reached_goal_at.is_some()
    }

    /// Replace pending legs with `plan`. An active recovery is not
    /// interrupted; the new legs start once it ends.
    pub fn load_plan(&mut self, plan: &Plan, goal: Vector2<f64>) -> Result<()> {
        self.goal = goal;
        self.queue = legs_from_plan(plan).into();
        self.stats.contacted.extend(plan.contacted());
        self.needs_replan = false;
        if !self.is_recovering() {
            self.start_next_leg()?;
        }
        Ok(())
    }

    /// Waypoints and durations for a leg from the current state. Segments
    /// are split into pieces no longer than `max_piece`, timed along each
    /// segment's trapezoidal profile. Yaw looks ahead along the path and faces
    /// the obstacle on a collide leg.
    fn leg_waypoints(&self, leg: &Leg) -> (Vec<Waypoint>, Vec<f64>) {
        let alt = self.map.altitude;
        let v_max = if leg.collide.is_some() || leg.fast {
            self.params.cp_v_max
        } else {
            self.params.v_max
        };
        let mut corners: Vec<Vector2<f64>> = vec![self.state.xy()];
        let last = *leg.targets.last().expect("legs are non-empty");
        let gap = self.params.min_gap;
        for t in &leg.targets[..leg.targets.len() - 1] {
            // short pieces next to long ones make min-snap swing wide
            if (t - corners[corners.len() - 1]).norm() >= gap && (t - last).norm() >= gap {
                corners.push(*t);
            }
        }
        if (last - corners[corners.len() - 1]).norm() > 1e-6 {
            corners.push(last);
        }
        let mut pts2 = vec![corners[0]];
        let mut durations = Vec::new();
        for (i, w) in corners.windows(2).enumerate() {
            let len = (w[1] - w[0]).norm();
            let v1 = match leg.collide {
                Some(speed) if i + 2 == corners.len() => speed,
                _ => 0.0,
            };
            let prof = SpeedProfile::new(len, 0.0, v1, v_max, self.params.a_max);
            let n = (len / self.params.max_piece).ceil().max(1.0) as usize;
            let mut t_prev = 0.0;
            for k in 1..=n {
                let f = k as f64 / n as f64;
                let t = prof.time_at(f * len);
                durations.push(t - t_prev);
                t_prev = t;
                pts2.push(w[0] + (w[1] - w[0]) * f);
            }
        }
        let n = pts2.len();
        let mut yaws = vec![self.state.yaw(); n];
        for k in 1..n {
            let yaw = if k + 1 == n {
                if leg.collide.is_some() {
                    let d = pts2[k] - pts2[k - 1];
                    d.y.atan2(d.x)
                } else {
                    yaws[k - 1]
                }
            } else {
                let ahead = point_ahead(&pts2, k, self.params.yaw_lookahead);
                let d = ahead - pts2[k];
                d.y.atan2(d.x)
            };
            yaws[k] = unwrap_angle(yaws[k - 1], yaw);
        }
        let mut wps = Vec::with_capacity(n);
        for k in 0..n {
            let pos = if k == 0 {
                self.state.r
            } else {
                Vector3::new(pts2[k].x, pts2[k].y, alt)
            };
            let wp = if k == 0 {
                // pinned acceleration and jerk avoid the overshoot of natural end conditions
                Waypoint {
                    vel: Some(self.state.v),
                    acc: Some(Vector3::zeros()),
                    jerk: Some(Vector3::zeros()),
                    ..Waypoint::free(pos, yaws[0])
                }
            } else if k + 1 == n {
                match leg.collide {
                    Some(speed) => {
                        let d = (pts2[k] - pts2[k - 1]).normalize() * speed;
                        Waypoint::free(pos, yaws[k]).with_vel(Vector3::new(d.x, d.y, 0.0))
                    }
                    None => Waypoint::rest(pos, yaws[k]),
                }
            } else {
                Waypoint::free(pos, yaws[k])
            };
            wps.push(wp);
        }
        (wps, durations)
    }

    fn start_next_leg(&mut self) -> Result<()> {
        self.active = None;
        let Some(leg) = self.queue.pop_front() else {
            // hold where the current reference ends
            let hold = match &self.mode {
                Mode::Hold(sp) => *sp,
                Mode::Flying { traj, .. } | Mode::Recovering { traj, .. } => {
                    let end = traj.sample(traj.total_time());
                    FlatSetpoint::hold(end.r, end.yaw)
                }
            };
            self.mode = Mode::Hold(hold);
            return Ok(());
        };
        let t_gen = Instant::now();
        let (wps, durations) = self.leg_waypoints(&leg);
        if wps.len() < 2 {
            return self.start_next_leg();
        }
        let traj = min_snap(&wps, &durations)?;
        self.stats.traj_gen_time_s += t_gen.elapsed().as_secs_f64();
        self.stats.traj_gen_calls += 1;
        self.mode = Mode::Flying {
            traj,
            t0: self.state.t,
            collide: leg.collide.is_some(),
        };
        self.active = Some(leg);
        Ok(())
    }

    fn setpoint(&self) -> FlatSetpoint {
        match &self.mode {
            Mode::Hold(sp) => *sp,
            Mode::Flying { traj, t0, .. } | Mode::Recovering { traj, t0, .. } => {
                traj.sample(self.state.t - t0)
            }
        }
    }

    fn on_event(&mut self, ev: DetectorEvent) -> Result<()> {
        match ev {
            DetectorEvent::CollisionDetected { .. } => {
                self.detect_t = Some(self.state.t);
            }
            DetectorEvent::HandlingStart { f_max } => {
                self.estimator.acknowledge();
                if self.is_recovering() {
                    return Ok(());
                }
                let expected = matches!(self.mode, Mode::Flying { collide: true, .. });
                if !expected {
                    self.stats.unexpected_collisions += 1;
                    self.needs_replan = true;
                    let t_now = self.state.t;
                    let touched =
                        self.stats.contacts.last().is_some_and(|c| {
                            c.t_end.is_none_or(|e| t_now - e < FALSE_ALARM_WINDOW)
                        });
                    if !touched {
                        self.stats.false_alarms += 1;
                    }
                    if let Some(leg) = self.active.take() {
                        let rest = remaining_leg(&self.state.xy(), leg);
                        self.queue.push_front(rest);
                    }
                }
                let s = &self.state;
                let t_gen = Instant::now();
                let (traj, r_n) = recovery_trajectory(
                    &s.r,
                    &s.v,
                    &s.rot,
                    f_max,
                    &self.params.recovery,
                    self.map.altitude,
                )?;
                self.stats.traj_gen_time_s += t_gen.elapsed().as_secs_f64();
                self.stats.traj_gen_calls += 1;
                self.stats.recoveries.push(RecoveryRecord {
                    t_detect: self.detect_t.unwrap_or(s.t),
                    t_handling: s.t,
                    f_max,
                    r_c: s.r,
                    r_n,
                    expected,
                });
                self.mode = Mode::Recovering {
                    traj,
                    t0: s.t,
                    resume_at: s.t + self.params.recovery_hold,
                };
            }
        }
        Ok(())
    }

    /// Advance one control step.
    pub fn step(&mut self) -> Result<()> {
        let sp = self.setpoint();
        let cmd = self.controller.command(&self.state, &sp, &self.robot);
        let push = self
            .impulse
            .map_or(0.0, |i| i.force(self.state.t + self.params.dt));
        let st = step_dynamics_with_push(
            &self.state,
            &cmd,
            &self.robot,
            self.map,
            self.params.dt,
            push,
        )?;
        let prev_v = self.state.v;
        self.state = st.state;
        self.steps += 1;
        self.stats.peak_accel = self.stats.peak_accel.max(st.peak_accel);
        self.stats.peak_contact_force = self.stats.peak_contact_force.max(st.peak_contact_force);

        if st.in_contact && !self.was_in_contact {
            self.contact_dir = self.state.arm_dir();
            self.stats.contacts.push(ContactEpisode {
                t_start: self.state.t,
                t_end: None,
                impact_speed: prev_v.dot(&self.contact_dir),
                rebound_speed: None,
                peak_force: 0.0,
            });
        }
        if let Some(c) = self.stats.contacts.last_mut().filter(|c| c.t_end.is_none()) {
            c.peak_force = c.peak_force.max(st.peak_contact_force);
            if !st.in_contact {
                c.t_end = Some(self.state.t);
                c.rebound_speed = Some(-self.state.v.dot(&self.contact_dir));
            }
        }
        self.was_in_contact = st.in_contact;

        let events = self.estimator.update(self.state.t, self.state.l, &st.accel);
        self.stats.f_hat_peak = self.stats.f_hat_peak.max(self.estimator.f_hat());
        for ev in events {
            self.on_event(ev)?;
        }

        match &self.mode {
            Mode::Recovering { resume_at, .. } if self.state.t >= *resume_at => {
                self.start_next_leg()?
            }
            Mode::Flying {
                traj,
                t0,
                collide: true,
            } if self.state.t - t0 > traj.total_time() + 0.5 => {
                self.stats.missed_contacts += 1;
                self.start_next_leg()?;
            }
            _ => {}
        }

        self.samples.push(self.state.xy());
        if self.steps.is_multiple_of(self.params.trace_every) {
            self.trace.push(TraceRow::new(
                &self.state,
                st.contact_force,
                self.estimator.f_hat(),
            ));
        }
        if self.stats.reached_goal_at.is_none()
            && self.queue.is_empty()
            && !self.is_recovering()
            && (self.state.xy() - self.goal).norm() < self.params.goal_tol
            && self.state.v.norm() < self.params.goal_speed_tol
        {
            self.stats.reached_goal_at = Some(self.state.t);
        }
        Ok(())
    }

    /// Step until `t_end`, the goal, or the time budget.
    pub fn run_until(&mut self, t_end: f64) -> Result<()> {
        let stop = t_end.min(self.params.max_time);
        while self.state.t + 1e-9 < stop && !self.done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn run_to_goal(&mut self) -> Result<()> {
        self.run_until(f64::INFINITY)
    }

    /// Latest force estimate.
    pub fn f_hat(&self) -> f64 {
        self.estimator.f_hat()
    }
}

/// Point `dist` along the polyline past vertex `k` (or its end).
fn point_ahead(pts: &[Vector2<f64>], k: usize, dist: f64) -> Vector2<f64> {
    let mut left = dist;
    let mut cur = pts[k];
    for p in &pts[k + 1..] {
        let seg = (p - cur).norm();
        if seg >= left {
            return cur + (p - cur) * (left / seg);
        }
        left -= seg;
        cur = *p;
    }
    cur
}
