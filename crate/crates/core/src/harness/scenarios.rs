//! Scenario definitions and trial execution.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{map_trials, map_trials_sequential};
use super::executor::{ExecParams, Executor, Impulse};
use super::metrics::{aggregate, compute_metrics, decimate, Aggregate, MetricsRecord};
use crate::error::{Error, Result};
use crate::planners::{
    online_replan, plan, OnlineParams, Plan, PlanSegment, PlannerKind, PlannerParams, SegmentKind,
};
use crate::sensing::ContactEstimator;
use crate::vehicle::{run_drop_test, RobotParams, Variant};
use crate::world::{generate_random_map, Bounds, KnownMap, Map, Obstacle, RandomMapSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    EstimatorStatic,
    EstimatorDynamic,
    Drop,
    WallCollision,
    PoleCollision,
    PlanOffline,
    PlanOnline,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::EstimatorStatic,
        ScenarioKind::EstimatorDynamic,
        ScenarioKind::Drop,
        ScenarioKind::WallCollision,
        ScenarioKind::PoleCollision,
        ScenarioKind::PlanOffline,
        ScenarioKind::PlanOnline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::EstimatorStatic => "estimator_static",
            ScenarioKind::EstimatorDynamic => "estimator_dynamic",
            ScenarioKind::Drop => "drop",
            ScenarioKind::WallCollision => "wall_collision",
            ScenarioKind::PoleCollision => "pole_collision",
            ScenarioKind::PlanOffline => "plan_offline",
            ScenarioKind::PlanOnline => "plan_online",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::validation("scenario", format!("unknown scenario `{s}`")))
    }
}

/// Planner and robot combination compared in the planning scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerSpec {
    CpCompliant,
    CpRigid,
    Astar,
    RrtStar,
}

impl PlannerSpec {
    pub const ALL: [PlannerSpec; 4] = [
        PlannerSpec::CpCompliant,
        PlannerSpec::CpRigid,
        PlannerSpec::Astar,
        PlannerSpec::RrtStar,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PlannerSpec::CpCompliant => "cp_compliant",
            PlannerSpec::CpRigid => "cp_rigid",
            PlannerSpec::Astar => "astar",
            PlannerSpec::RrtStar => "rrt_star",
        }
    }

    pub fn kind(&self) -> PlannerKind {
        match self {
            PlannerSpec::CpCompliant | PlannerSpec::CpRigid => PlannerKind::Cp,
            PlannerSpec::Astar => PlannerKind::Astar,
            PlannerSpec::RrtStar => PlannerKind::RrtStar,
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            PlannerSpec::CpRigid => Variant::Rigid,
            _ => Variant::Compliant,
        }
    }
}

impl std::fmt::Display for PlannerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PlannerSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cp" => Ok(PlannerSpec::CpCompliant),
            "a_star" => Ok(PlannerSpec::Astar),
            _ => PlannerSpec::ALL
                .into_iter()
                .find(|p| p.name() == s)
                .ok_or_else(|| Error::validation("planner", format!("unknown planner `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Experimental,
    Random,
    Empty,
    File,
}

/// Peak contact force measured at a collide speed, used for the planner's
/// predicted recovery point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceAtSpeed {
    pub speed: f64,
    pub f_max: f64,
}

/// A scenario with every parameter it may need. Fields not used by the
/// kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub trials: usize,
    /// Base seed; trial seeds are derived from it.
    pub seed: u64,
    pub variants: Vec<Variant>,
    /// Drop heights, m.
    pub heights: Vec<f64>,
    /// Applied forces for the estimator scenarios, N.
    pub forces: Vec<f64>,
    /// Held-force duration for the static estimator, s.
    pub hold_time: f64,
    /// Half-sine impact duration for the dynamic estimator, s.
    pub impulse_duration: f64,
    /// Collide speed for the wall and pole scenarios, m/s.
    pub speed: f64,
    /// Wall-collision settle window after handling starts, s.
    pub settle_window: f64,
    /// Settled when within this distance of the recovery point, m.
    pub settle_tol: f64,
    pub map: MapKind,
    pub map_file: Option<String>,
    pub random_map: RandomMapSpec,
    pub map_seeds: Vec<u64>,
    pub planners: Vec<PlannerSpec>,
    /// Overrides the planner grid resolution, m.
    pub grid_resolution: Option<f64>,
    /// Compliant CP collide speed, m/s.
    pub cp_speed: f64,
    pub cp_recovery_hold: f64,
    pub rigid_speed: f64,
    pub rigid_recovery_hold: f64,
    /// Nominal peak force per collide speed, interpolated linearly.
    pub force_table: Vec<ForceAtSpeed>,
    /// Keep full-state traces in the records.
    pub keep_traces: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::preset(ScenarioKind::PlanOffline)
    }
}

impl Scenario {
    /// Default parameters for `kind`.
    pub fn preset(kind: ScenarioKind) -> Self {
        let mut s = Self {
            kind,
            trials: 10,
            seed: 0,
            variants: vec![Variant::Compliant],
            heights: vec![0.3, 0.5, 0.7],
            forces: vec![30.0, 40.0, 50.0],
            hold_time: 2.0,
            impulse_duration: 0.1,
            speed: 3.0,
            settle_window: 5.0,
            settle_tol: 0.05,
            map: MapKind::Experimental,
            map_file: None,
            random_map: RandomMapSpec::default(),
            map_seeds: (0..10).collect(),
            planners: vec![
                PlannerSpec::CpCompliant,
                PlannerSpec::Astar,
                PlannerSpec::RrtStar,
            ],
            grid_resolution: None,
            cp_speed: 2.5,
            cp_recovery_hold: 2.5,
            rigid_speed: 2.5,
            rigid_recovery_hold: 3.3,
            force_table: vec![
                ForceAtSpeed {
                    speed: 2.5,
                    f_max: 63.0,
                },
                ForceAtSpeed {
                    speed: 3.0,
                    f_max: 90.0,
                },
            ],
            keep_traces: false,
        };
        match kind {
            ScenarioKind::Drop => s.variants = vec![Variant::Compliant, Variant::Rigid],
            ScenarioKind::PoleCollision => s.speed = 2.5,
            ScenarioKind::PlanOnline => {
                s.map = MapKind::Random;
                s.cp_speed = 3.0;
                s.grid_resolution = Some(0.5);
                s.planners = vec![PlannerSpec::CpCompliant, PlannerSpec::Astar];
            }
            _ => {}
        }
        s
    }

    /// Offline comparison on the randomized cluttered maps.
    pub fn cluttered() -> Self {
        Self {
            map: MapKind::Random,
            cp_speed: 3.0,
            grid_resolution: Some(0.5),
            planners: PlannerSpec::ALL.to_vec(),
            ..Self::preset(ScenarioKind::PlanOffline)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::validation("trials", "must be >= 1"));
        }
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(name, "must be > 0"))
            }
        };
        positive("hold_time", self.hold_time)?;
        positive("impulse_duration", self.impulse_duration)?;
        positive("speed", self.speed)?;
        positive("settle_window", self.settle_window)?;
        positive("settle_tol", self.settle_tol)?;
        positive("cp_speed", self.cp_speed)?;
        positive("rigid_speed", self.rigid_speed)?;
        if !(self.cp_recovery_hold >= 0.0) || !(self.rigid_recovery_hold >= 0.0) {
            return Err(Error::validation("recovery_hold", "must be >= 0"));
        }
        for h in &self.heights {
            positive("heights", *h)?;
        }
        for f in &self.forces {
            positive("forces", *f)?;
        }
        if let Some(r) = self.grid_resolution {
            positive("grid_resolution", r)?;
        }
        if self.force_table.is_empty() {
            return Err(Error::validation("force_table", "needs at least one entry"));
        }
        match self.kind {
            ScenarioKind::Drop if self.heights.is_empty() => {
                Err(Error::validation("heights", "must not be empty"))
            }
            ScenarioKind::Drop | ScenarioKind::WallCollision | ScenarioKind::PoleCollision
                if self.variants.is_empty() =>
            {
                Err(Error::validation("variants", "must not be empty"))
            }
            ScenarioKind::EstimatorStatic | ScenarioKind::EstimatorDynamic
                if self.forces.is_empty() =>
            {
                Err(Error::validation("forces", "must not be empty"))
            }
            ScenarioKind::PlanOffline | ScenarioKind::PlanOnline => {
                if self.planners.is_empty() {
                    return Err(Error::validation("planners", "must not be empty"));
                }
                match self.map {
                    MapKind::Random if self.map_seeds.is_empty() => {
                        Err(Error::validation("map_seeds", "must not be empty"))
                    }
                    MapKind::File if self.map_file.is_none() => {
                        Err(Error::validation("map_file", "required for map = \"file\""))
                    }
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Nominal peak force at `speed` from the calibration table.
    pub fn nominal_force(&self, speed: f64) -> f64 {
        let mut t = self.force_table.clone();
        t.sort_by(|a, b| a.speed.total_cmp(&b.speed));
        if t.len() == 1 {
            return t[0].f_max;
        }
        let k = t
            .windows(2)
            .position(|w| speed <= w[1].speed)
            .unwrap_or(t.len() - 2);
        let (a, b) = (t[k], t[k + 1]);
        a.f_max + (b.f_max - a.f_max) * (speed - a.speed) / (b.speed - a.speed)
    }

    /// Maps the planning scenarios run on, with their names.
    pub fn maps(&self) -> Result<Vec<(String, Map)>> {
        match self.map {
            MapKind::Experimental => Ok(vec![("experimental".into(), Map::experimental())]),
            MapKind::Empty => {
                let m = Map::experimental();
                Ok(vec![(
                    "empty".into(),
                    Map::empty(m.bounds, m.start, m.goal, m.altitude),
                )])
            }
            MapKind::Random => self
                .map_seeds
                .iter()
                .map(|&s| {
                    Ok((
                        format!("random_{s}"),
                        generate_random_map(&self.random_map, s)?,
                    ))
                })
                .collect(),
            MapKind::File => {
                let path = self.map_file.as_ref().expect("validated");
                Ok(vec![(path.clone(), Map::load(std::path::Path::new(path))?)])
            }
        }
    }
}

/// Simulation parameters shared by every scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub robot: RobotParams,
    pub exec: ExecParams,
    pub planner: PlannerParams,
    pub online: OnlineParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.exec.validate()?;
        self.planner.validate()?;
        self.online.validate()
    }
}

/// Decorrelated per-trial seed.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform sensor phase in one sample period.
fn sensor_phase(seed: u64, cfg: &SimConfig) -> f64 {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5EED).gen::<f64>() * cfg.exec.sensor.period()
}

/// Is this error a simulation fault that must abort the scenario?
fn is_fault(e: &Error) -> bool {
    matches!(
        e,
        Error::SimulationFault { .. }
            | Error::DegenerateThrust { .. }
            | Error::SingularYaw
            | Error::Validation { .. }
    )
}

/// One unit of work.
#[derive(Debug, Clone)]
struct Job {
    label: String,
    variant: Variant,
    map_index: usize,
    planner: Option<PlannerSpec>,
    param: f64,
    trial: usize,
    seed: u64,
}

fn jobs(s: &Scenario, n_maps: usize) -> Vec<Job> {
    let mut out = Vec::new();
    let mut push = |label: String, variant, map_index, planner, param| {
        for trial in 0..s.trials {
            let index = out.len() as u64;
            out.push(Job {
                label: label.clone(),
                variant,
                map_index,
                planner,
                param,
                trial,
                seed: trial_seed(s.seed, index),
            });
        }
    };
    match s.kind {
        ScenarioKind::EstimatorStatic | ScenarioKind::EstimatorDynamic => {
            for &f in &s.forces {
                push("compliant".into(), Variant::Compliant, 0, None, f);
            }
        }
        ScenarioKind::Drop => {
            for &v in &s.variants {
                for &h in &s.heights {
                    push(v.to_string(), v, 0, None, h);
                }
            }
        }
        ScenarioKind::WallCollision | ScenarioKind::PoleCollision => {
            for &v in &s.variants {
                push(v.to_string(), v, 0, None, s.speed);
            }
        }
        ScenarioKind::PlanOffline | ScenarioKind::PlanOnline => {
            for m in 0..n_maps {
                for &p in &s.planners {
                    push(p.name().into(), p.variant(), m, Some(p), f64::NAN);
                }
            }
        }
    }
    out
}

/// Run every trial of `s`. Simulation faults abort with trial context;
/// planning failures are recorded as unsuccessful trials.
pub fn run_scenario(s: &Scenario, cfg: &SimConfig) -> Result<Vec<MetricsRecord>> {
    run_scenario_with(s, cfg, true)
}

/// [`run_scenario`] on the calling thread regardless of the `parallel` feature.
pub fn run_scenario_sequential(s: &Scenario, cfg: &SimConfig) -> Result<Vec<MetricsRecord>> {
    run_scenario_with(s, cfg, false)
}

fn run_scenario_with(s: &Scenario, cfg: &SimConfig, parallel: bool) -> Result<Vec<MetricsRecord>> {
    s.validate()?;
    cfg.validate()?;
    let maps = match s.kind {
        ScenarioKind::PlanOffline | ScenarioKind::PlanOnline => s.maps()?,
        _ => Vec::new(),
    };
    let jobs = jobs(s, maps.len());
    let f = |job: &Job| {
        let map = maps.get(job.map_index);
        let out = run_job(s, cfg, job, map);
        out.map_err(|e| e.in_trial(format!("{} {} #{}", s.kind, job.label, job.trial)))
    };
    let results = if parallel {
        map_trials(&jobs, f)
    } else {
        map_trials_sequential(&jobs, f)
    };
    results.into_iter().collect()
}

/// Run a scenario without aborting on failures and aggregate it.
pub fn run_batch(s: &Scenario, cfg: &SimConfig) -> Result<(Vec<MetricsRecord>, Vec<Aggregate>)> {
    s.validate()?;
    cfg.validate()?;
    let maps = match s.kind {
        ScenarioKind::PlanOffline | ScenarioKind::PlanOnline => s.maps()?,
        _ => Vec::new(),
    };
    let jobs = jobs(s, maps.len());
    let records = map_trials(&jobs, |job| {
        let map = maps.get(job.map_index);
        run_job(s, cfg, job, map).unwrap_or_else(|e| {
            let mut r = blank(s, job, map);
            r.error = Some(e.to_string());
            r
        })
    });
    let aggs = aggregate(&records);
    Ok((records, aggs))
}

fn blank(s: &Scenario, job: &Job, map: Option<&(String, Map)>) -> MetricsRecord {
    let name = map.map_or_else(|| "-".to_string(), |m| m.0.clone());
    let mut r = MetricsRecord::new(s.kind, job.label.clone(), job.variant, name);
    r.param = job.param;
    r.trial = job.trial;
    r.seed = job.seed;
    r
}

fn run_job(
    s: &Scenario,
    cfg: &SimConfig,
    job: &Job,
    map: Option<&(String, Map)>,
) -> Result<MetricsRecord> {
    let mut rec = blank(s, job, map);
    match s.kind {
        ScenarioKind::EstimatorStatic => estimator_static(s, cfg, job, &mut rec),
        ScenarioKind::EstimatorDynamic => estimator_dynamic(s, cfg, job, &mut rec)?,
        ScenarioKind::Drop => {
            let robot = cfg.robot.clone().with_variant(job.variant);
            let d = run_drop_test(&robot, job.param, cfg.exec.dt)?;
            rec.peak_accel = d.peak_accel;
            rec.impact_speed = d.impact_speed;
            rec.success = true;
            if s.keep_traces {
                rec.trace = d.trace;
            }
        }
        ScenarioKind::WallCollision | ScenarioKind::PoleCollision => {
            collision(s, cfg, job, &mut rec)?
        }
        ScenarioKind::PlanOffline | ScenarioKind::PlanOnline => {
            let (_, m) = map.expect("planning jobs carry a map");
            let planner = job.planner.expect("planning jobs carry a planner");
            match planning(s, cfg, job, planner, m, &mut rec) {
                Ok(()) => {}
                Err(e) if is_fault(&e) => return Err(e),
                Err(e) => {
                    rec.success = false;
                    rec.error = Some(e.to_string());
                }
            }
        }
    }
    Ok(rec)
}

fn estimator_static(s: &Scenario, cfg: &SimConfig, job: &Job, rec: &mut MetricsRecord) {
    let arm = &cfg.robot.arm;
    let l = (arm.l_max - (job.param / arm.k_l - arm.l_0)).clamp(arm.l_min, arm.l_max);
    let mut est = ContactEstimator::new(
        Variant::Compliant,
        arm,
        &cfg.exec.sensor,
        &cfg.exec.detector,
        sensor_phase(job.seed, cfg),
        job.seed,
    );
    let dt = cfg.exec.dt;
    let steps = (s.hold_time / dt).round() as usize;
    // average the held estimate over the second half of the hold
    let (mut sum, mut n, mut peak) = (0.0, 0usize, 0.0f64);
    for k in 1..=steps {
        let events = est.update(k as f64 * dt, l, &Vector3::zeros());
        if !events.is_empty() {
            est.acknowledge();
        }
        if k * 2 > steps {
            sum += est.f_hat();
            n += 1;
        }
        peak = peak.max(est.f_hat());
    }
    rec.f_hat = sum / n.max(1) as f64;
    rec.f_hat_max = peak;
    rec.success = true;
}

fn estimator_dynamic(
    s: &Scenario,
    cfg: &SimConfig,
    job: &Job,
    rec: &mut MetricsRecord,
) -> Result<()> {
    let map = Map::empty(
        Bounds::centered(10.0, 10.0),
        Vector2::zeros(),
        Vector2::zeros(),
        1.0,
    );
    let mut ex = Executor::new(
        &map,
        cfg.robot.clone(),
        cfg.exec.clone(),
        0.0,
        sensor_phase(job.seed, cfg),
        job.seed,
    )?;
    let t0 = 1.0;
    ex.impulse = Some(Impulse {
        t0,
        duration: s.impulse_duration,
        peak: job.param,
    });
    while ex.t() < t0 + s.impulse_duration + 0.5 {
        ex.step()?;
    }
    rec.f_hat = ex.stats.f_hat_peak;
    rec.f_hat_max = ex.stats.f_hat_peak;
    rec.peak_accel = ex.stats.peak_accel;
    rec.recoveries = ex.stats.recoveries.len();
    rec.success = true;
    if s.keep_traces {
        rec.trace = ex.trace;
    }
    Ok(())
}

/// Head-on collision with a wall or pole followed by recovery.
/// Arena and collide target for the wall and pole scenarios.
pub fn collision_arena(kind: ScenarioKind) -> (Map, Vector2<f64>) {
    match kind {
        ScenarioKind::WallCollision => (Map::wall_arena(2.0), Vector2::new(2.0, 0.0)),
        _ => {
            let mut m = Map::empty(
                Bounds::centered(8.0, 6.0),
                Vector2::new(-2.0, 0.0),
                Vector2::new(-2.0, 0.0),
                1.0,
            );
            m.obstacles.push(Obstacle::new(0, 1.0, 0.0, 0.15));
            (m, Vector2::new(1.0, 0.0))
        }
    }
}

fn collision(s: &Scenario, cfg: &SimConfig, job: &Job, rec: &mut MetricsRecord) -> Result<()> {
    let (map, target) = collision_arena(s.kind);
    let robot = cfg.robot.clone().with_variant(job.variant);
    let mut exec = cfg.exec.clone();
    exec.cp_v_max = s.speed;
    let mut ex = Executor::new(
        &map,
        robot,
        exec,
        0.0,
        sensor_phase(job.seed, cfg),
        job.seed,
    )?;
    let mut p = Plan::new(PlannerKind::Cp, map.start);
    p.segments.push(PlanSegment {
        kind: SegmentKind::Collide,
        target: [target.x, target.y],
        speed: s.speed,
        obstacle_id: map.obstacles.first().map(|o| o.id),
    });
    ex.load_plan(&p, map.start)?;
    // fly until handling starts, then watch the settle window
    let approach = 10.0;
    while ex.stats.recoveries.is_empty() && ex.t() < approach {
        ex.step()?;
    }
    let Some(rc) = ex.stats.recoveries.first().cloned() else {
        rec.error = Some("no collision detected".into());
        return Ok(());
    };
    let end = rc.t_handling + s.settle_window;
    let mut last_out = rc.t_handling;
    while ex.t() < end {
        ex.step()?;
        if (ex.state.r - rc.r_n).norm() > s.settle_tol {
            last_out = ex.t();
        }
    }
    let settle = last_out - rc.t_handling;
    rec.settle_time = settle;
    rec.f_hat_max = rc.f_max;
    rec.f_hat = rc.f_max;
    rec.peak_accel = ex.stats.peak_accel;
    rec.recoveries = ex.stats.recoveries.len();
    if let Some(c) = ex.stats.contacts.first() {
        rec.impact_speed = c.impact_speed;
        rec.rebound_speed = c.rebound_speed.unwrap_or(f64::NAN);
    }
    rec.success = settle < s.settle_window;
    rec.path = decimate(&ex.samples, 0.02);
    if s.keep_traces {
        rec.trace = ex.trace;
    }
    Ok(())
}

/// Robot, executor and planner parameters for one planner configuration.
pub fn profile(
    s: &Scenario,
    cfg: &SimConfig,
    spec: PlannerSpec,
) -> (RobotParams, ExecParams, PlannerParams) {
    let robot = cfg.robot.clone().with_variant(spec.variant());
    let mut exec = cfg.exec.clone();
    let mut pp = cfg.planner.clone();
    if let Some(r) = s.grid_resolution {
        pp.grid_resolution = r;
    }
    let arm = &robot.arm;
    match spec {
        PlannerSpec::CpCompliant => {
            let f = s.nominal_force(s.cp_speed);
            pp.collide_speed = s.cp_speed;
            pp.nominal_f_max = f;
            pp.nominal_compression = (f / arm.k_l - arm.l_0).clamp(0.0, arm.l_max - arm.l_min);
            exec.cp_v_max = s.cp_speed;
            exec.recovery_hold = s.cp_recovery_hold;
        }
        PlannerSpec::CpRigid => {
            pp.collide_speed = s.rigid_speed;
            pp.nominal_f_max = cfg.exec.detector.rigid_f_max;
            pp.nominal_compression = 0.0;
            exec.cp_v_max = s.rigid_speed;
            exec.recovery_hold = s.rigid_recovery_hold;
        }
        PlannerSpec::Astar | PlannerSpec::RrtStar => {}
    }
    pp.recovery = exec.recovery.clone();
    (robot, exec, pp)
}

fn planning(
    s: &Scenario,
    cfg: &SimConfig,
    job: &Job,
    spec: PlannerSpec,
    map: &Map,
    rec: &mut MetricsRecord,
) -> Result<()> {
    let (robot, exec, pp) = profile(s, cfg, spec);
    let d = map.goal - map.start;
    let mut ex = Executor::new(
        map,
        robot,
        exec,
        d.y.atan2(d.x),
        sensor_phase(job.seed, cfg),
        job.seed,
    )?;
    let kind = spec.kind();
    let (plan_ms, contacted, result) = match s.kind {
        ScenarioKind::PlanOnline => {
            match online_replan(&mut ex, kind, &pp, &cfg.online, job.seed) {
                Ok(out) => {
                    rec.replans = out.replans;
                    rec.counters = out.counters;
                    (
                        out.plan_wall_time_ms.iter().sum(),
                        ex.stats.contacted.clone(),
                        Ok(()),
                    )
                }
                Err(e) => (f64::NAN, ex.stats.contacted.clone(), Err(e)),
            }
        }
        _ => {
            let p = plan(
                kind,
                map.start,
                map.goal,
                &KnownMap::full(map),
                &pp,
                job.seed,
            )?;
            rec.counters = p.counters;
            rec.replans = 1;
            ex.load_plan(&p, map.goal)?;
            let r = ex.run_to_goal();
            (p.plan_wall_time_ms, p.contacted(), r)
        }
    };
    compute_metrics(rec, plan_ms, &ex, &contacted, pp.inflation);
    if s.keep_traces {
        rec.trace = ex.trace.clone();
    }
    result?;
    rec.success = ex.done();
    if !ex.done() {
        rec.error = Some(format!("goal not reached within {} s", ex.params.max_time));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn trial_seeds_differ() {
        let s: BTreeSet<u64> = (0..1000).map(|i| trial_seed(7, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(trial_seed(0, 0), trial_seed(1, 0));
    }

    #[test]
    fn nominal_force_interpolates() {
        let s = Scenario::default();
        assert!((s.nominal_force(2.5) - 63.0).abs() < 1e-12);
        assert!((s.nominal_force(3.0) - 90.0).abs() < 1e-12);
        assert!((s.nominal_force(2.75) - 76.5).abs() < 1e-12);
    }

    #[test]
    fn kinds_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        for p in PlannerSpec::ALL {
            assert_eq!(p.name().parse::<PlannerSpec>().unwrap(), p);
        }
        assert!("bogus".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn drop_scenario_has_sixty_records() {
        let s = Scenario::preset(ScenarioKind::Drop);
        let r = run_scenario(&s, &SimConfig::default()).unwrap();
        assert_eq!(r.len(), 60);
        assert!(r.iter().all(|x| x.peak_accel.is_finite() && x.success));
    }

    #[test]
    fn empty_map_clearance_is_infinite() {
        let s = Scenario {
            map: MapKind::Empty,
            planners: vec![PlannerSpec::Astar],
            trials: 1,
            ..Scenario::preset(ScenarioKind::PlanOffline)
        };
        let r = run_scenario(&s, &SimConfig::default()).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].success);
        assert_eq!(r[0].clearance, f64::INFINITY);
    }

    #[test]
    fn invalid_scenario_names_field() {
        let s = Scenario {
            trials: 0,
            ..Scenario::default()
        };
        match s.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "trials"),
            other => panic!("{other:?}"),
        }
    }
}
