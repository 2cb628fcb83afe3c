//! Contact-prioritized planner, grid A*, RRT* and the online replanning loop.

mod astar;
mod cp;
mod online;
mod rrt;

pub use astar::astar_plan;
pub use cp::{cp_plan, side_waypoints};
pub use online::{online_replan, OnlineParams, OnlineResult};
pub use rrt::rrt_star_plan;

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajgen::RecoveryParams;
use crate::world::{KnownMap, ObstacleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Cp,
    Astar,
    RrtStar,
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlannerKind::Cp => "cp",
            PlannerKind::Astar => "astar",
            PlannerKind::RrtStar => "rrt_star",
        })
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cp" => Ok(PlannerKind::Cp),
            "astar" | "a_star" => Ok(PlannerKind::Astar),
            "rrt_star" | "rrtstar" => Ok(PlannerKind::RrtStar),
            _ => Err(Error::validation(
                "planner",
                format!("unknown planner `{s}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    FreeFlight,
    Collide,
    Recover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub kind: SegmentKind,
    pub target: [f64; 2],
    /// Speed when reaching `target`, m/s.
    pub speed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacle_id: Option<ObstacleId>,
}

impl PlanSegment {
    pub fn free(target: Vector2<f64>) -> Self {
        Self {
            kind: SegmentKind::FreeFlight,
            target: [target.x, target.y],
            speed: 0.0,
            obstacle_id: None,
        }
    }

    pub fn target(&self) -> Vector2<f64> {
        Vector2::new(self.target[0], self.target[1])
    }
}

/// Hardware-independent work counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub intersection_checks: u64,
    pub node_expansions: u64,
    pub iterations: u64,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.intersection_checks += o.intersection_checks;
        self.node_expansions += o.node_expansions;
        self.iterations += o.iterations;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub planner: PlannerKind,
    pub start: [f64; 2],
    pub segments: Vec<PlanSegment>,
    /// Wall-clock planning time, ms. Excludes trajectory generation.
    pub plan_wall_time_ms: f64,
    pub counters: Counters,
    /// CP legs that fell back to A*.
    pub fallbacks: usize,
}

impl Plan {
    pub fn new(planner: PlannerKind, start: Vector2<f64>) -> Self {
        Self {
            planner,
            start: [start.x, start.y],
            segments: Vec::new(),
            plan_wall_time_ms: 0.0,
            counters: Counters::default(),
            fallbacks: 0,
        }
    }

    /// Start followed by every segment target.
    pub fn waypoints(&self) -> Vec<Vector2<f64>> {
        std::iter::once(Vector2::new(self.start[0], self.start[1]))
            .chain(self.segments.iter().map(|s| s.target()))
            .collect()
    }

    /// Euclidean length of the waypoint chain.
    pub fn path_length(&self) -> f64 {
        self.waypoints()
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }

    /// Obstacles the plan collides with on purpose.
    pub fn contacted(&self) -> BTreeSet<ObstacleId> {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Collide)
            .filter_map(|s| s.obstacle_id)
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrtParams {
    pub max_iters: usize,
    pub step: f64,
    pub goal_bias: f64,
    pub rewire_radius: f64,
}

impl Default for RrtParams {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            step: 0.5,
            goal_bias: 0.1,
            rewire_radius: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerParams {
    /// Growth of every obstacle disk beyond its radius (the free arm length), m.
    pub inflation: f64,
    /// CP speed at the collide target, m/s.
    pub collide_speed: f64,
    /// Peak contact force assumed when predicting the recovery point, N.
    pub nominal_f_max: f64,
    /// Arm compression at that force, m.
    pub nominal_compression: f64,
    pub recovery: RecoveryParams,
    pub grid_resolution: f64,
    /// Line-of-sight shortcutting of grid paths.
    pub astar_prune: bool,
    pub rrt: RrtParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            inflation: 0.28,
            collide_speed: 2.5,
            nominal_f_max: 63.0,
            nominal_compression: 63.0 / 3800.0 - 0.002,
            recovery: RecoveryParams::default(),
            grid_resolution: 0.1,
            astar_prune: false,
            rrt: RrtParams::default(),
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.inflation >= 0.0) {
            return Err(Error::validation("inflation", "must be >= 0"));
        }
        if !(self.collide_speed > 0.0) {
            return Err(Error::validation("collide_speed", "must be > 0"));
        }
        if !(self.grid_resolution > 0.0) {
            return Err(Error::validation("grid_resolution", "must be > 0"));
        }
        if !(self.rrt.step > 0.0)
            || !(0.0..=1.0).contains(&self.rrt.goal_bias)
            || !(self.rrt.rewire_radius > 0.0)
        {
            return Err(Error::validation(
                "rrt",
                "step and rewire_radius must be > 0, goal_bias in [0, 1]",
            ));
        }
        self.recovery.validate()
    }
}

/// Run `kind` and stamp the wall-clock planning time.
pub fn plan(
    kind: PlannerKind,
    start: Vector2<f64>,
    goal: Vector2<f64>,
    known: &KnownMap,
    params: &PlannerParams,
    seed: u64,
) -> Result<Plan> {
    let t0 = Instant::now();
    let mut p = match kind {
        PlannerKind::Cp => cp_plan(start, goal, known, params)?,
        PlannerKind::Astar => astar_plan(start, goal, known, params)?,
        PlannerKind::RrtStar => rrt_star_plan(start, goal, known, params, seed)?,
    };
    p.plan_wall_time_ms = t0.elapsed().as_secs_f64() * 1e3;
    Ok(p)
}

/// Drop near-duplicate points and interior points on a straight run.
pub(crate) fn simplify_collinear(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut dedup: Vec<Vector2<f64>> = Vec::with_capacity(points.len());
    for p in points {
        if dedup
            .last()
            .is_none_or(|q: &Vector2<f64>| (p - q).norm() > 1e-6)
        {
            dedup.push(*p);
        }
    }
    let mut out: Vec<Vector2<f64>> = Vec::with_capacity(dedup.len());
    for (i, p) in dedup.iter().enumerate() {
        if i > 0 && i + 1 < dedup.len() {
            let a = (p - out[out.len() - 1]).normalize();
            let b = (dedup[i + 1] - p).normalize();
            if (a.x * b.y - a.y * b.x).abs() < 1e-9 && a.dot(&b) > 0.0 {
                continue;
            }
        }
        out.push(*p);
    }
    out
}
