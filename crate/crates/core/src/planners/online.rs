use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{plan, Counters, Plan, PlannerKind, PlannerParams};
use crate::error::{Error, Result};
use crate::harness::executor::Executor;
use crate::world::{visible_obstacles, KnownMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineParams {
    /// Time between replans, s.
    pub interval: f64,
    /// Obstacles with centers inside this range are discovered, m.
    pub sensing_range: f64,
    /// Consecutive intervals without progress before giving up.
    pub stall_intervals: usize,
    /// Distance-to-goal decrease that counts as progress, m.
    pub min_progress: f64,
}

impl Default for OnlineParams {
    fn default() -> Self {
        Self {
            interval: 5.0,
            sensing_range: 5.0,
            stall_intervals: 3,
            min_progress: 0.1,
        }
    }
}

impl OnlineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0) {
            return Err(Error::validation("interval", "must be > 0"));
        }
        if !(self.sensing_range > 0.0) {
            return Err(Error::validation("sensing_range", "must be > 0"));
        }
        if self.stall_intervals == 0 {
            return Err(Error::validation("stall_intervals", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OnlineResult {
    pub replans: usize,
    pub plan_wall_time_ms: Vec<f64>,
    pub counters: Counters,
    pub last_plan: Option<Plan>,
    pub discovered: usize,
}

fn replan(
    ex: &mut Executor,
    kind: PlannerKind,
    known: &mut KnownMap,
    params: &PlannerParams,
    online: &OnlineParams,
    seed: u64,
    out: &mut OnlineResult,
) -> Result<()> {
    let pos = ex.state.xy();
    *known = visible_obstacles(&pos, online.sensing_range, ex.map, known);
    out.discovered = known.discovered().len();
    let goal = ex.map.goal;
    let p = plan(
        kind,
        pos,
        goal,
        known,
        params,
        seed.wrapping_add(out.replans as u64),
    )?;
    out.replans += 1;
    out.plan_wall_time_ms.push(p.plan_wall_time_ms);
    out.counters += p.counters;
    ex.load_plan(&p, goal)?;
    out.last_plan = Some(p);
    Ok(())
}

/// Fly to the map goal while discovering obstacles, replanning from the
/// current state every interval and after unplanned collisions. An active
/// recovery is never interrupted.
pub fn online_replan(
    ex: &mut Executor,
    kind: PlannerKind,
    params: &PlannerParams,
    online: &OnlineParams,
    seed: u64,
) -> Result<OnlineResult> {
    online.validate()?;
    let mut out = OnlineResult::default();
    let mut known = KnownMap::empty(ex.map);
    replan(ex, kind, &mut known, params, online, seed, &mut out)?;
    let goal: Vector2<f64> = ex.map.goal;
    let mut next = ex.t() + online.interval;
    let mut best_dist = (ex.state.xy() - goal).norm();
    let mut idle = 0;
    while !ex.done() && ex.t() < ex.params.max_time {
        // step until the next replan time or an unplanned collision's recovery ends
        while !ex.done() && ex.t() + 1e-9 < next.min(ex.params.max_time) {
            ex.step()?;
            if ex.needs_replan && !ex.is_recovering() {
                break;
            }
        }
        if ex.done() || ex.t() >= ex.params.max_time {
            break;
        }
        if ex.is_recovering() {
            next = ex.t() + ex.params.dt;
            continue;
        }
        if ex.t() + 1e-9 >= next {
            let d = (ex.state.xy() - goal).norm();
            if d < best_dist - online.min_progress {
                best_dist = d;
                idle = 0;
            } else {
                idle += 1;
                if idle >= online.stall_intervals {
                    return Err(Error::Stall { t: ex.t() });
                }
            }
            next = ex.t() + online.interval;
        }
        replan(ex, kind, &mut known, params, online, seed, &mut out)?;
    }
    Ok(out)
}
