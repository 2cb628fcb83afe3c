use nalgebra::{Rotation3, Vector2, Vector3};

use super::{
    astar::grid_path, Counters, Plan, PlanSegment, PlannerKind, PlannerParams, SegmentKind,
};
use crate::error::{Error, Result};
use crate::trajgen::recovery_setpoint;
use crate::world::{first_intersection_filtered, segment_disk_entry, KnownMap, Obstacle};

/// The two side waypoints `r_o +/- sqrt(2) R n` for an approach from `from`
/// toward `center`, with `R` the inflated radius.
pub fn side_waypoints(
    from: &Vector2<f64>,
    center: &Vector2<f64>,
    inflated_radius: f64,
) -> [Vector2<f64>; 2] {
    let dir = (center - from).normalize();
    let n = Vector2::new(-dir.y, dir.x);
    let off = n * (std::f64::consts::SQRT_2 * inflated_radius);
    [center + off, center - off]
}

fn leg_blocked(
    a: &Vector2<f64>,
    b: &Vector2<f64>,
    obstacles: &[Obstacle],
    inflation: f64,
    counters: &mut Counters,
) -> bool {
    counters.intersection_checks += obstacles.len() as u64;
    obstacles
        .iter()
        .any(|o| segment_disk_entry(a, b, &o.center, o.radius + inflation).is_some())
}

/// Contact-prioritized planning: fly straight at the first blocking
/// obstacle, bounce back to the predicted recovery point and continue from
/// the side waypoint nearer the goal.
pub fn cp_plan(
    start: Vector2<f64>,
    goal: Vector2<f64>,
    known: &KnownMap,
    params: &PlannerParams,
) -> Result<Plan> {
    params.validate()?;
    let map = known.map();
    if map.in_collision(&goal, params.inflation) {
        return Err(Error::Infeasible("goal inside an inflated obstacle".into()));
    }
    let obstacles = &map.obstacles;
    let cap = 4 * obstacles.len() + 4;
    let mut plan = Plan::new(PlannerKind::Cp, start);
    let mut cur = start;
    for _ in 0..cap {
        plan.counters.iterations += 1;
        plan.counters.intersection_checks += obstacles.len() as u64;
        let Some(hit) =
            first_intersection_filtered(&cur, &goal, obstacles, params.inflation, |_| false)
        else {
            plan.segments.push(PlanSegment::free(goal));
            return Ok(plan);
        };
        let o = *map.obstacle(hit.id).expect("hit id comes from the map");
        let radius = o.radius + params.inflation;
        let dir = (o.center - cur).normalize();
        plan.segments.push(PlanSegment {
            kind: SegmentKind::Collide,
            target: [o.center.x, o.center.y],
            speed: params.collide_speed,
            obstacle_id: Some(o.id),
        });

        // nominal contact: shield on the surface, arm compressed
        let r_c = o.center - dir * (radius - params.nominal_compression);
        let heading = Rotation3::from_axis_angle(&Vector3::z_axis(), dir.y.atan2(dir.x));
        let r_n3 = recovery_setpoint(
            &Vector3::new(r_c.x, r_c.y, 0.0),
            &heading,
            params.nominal_f_max,
            params.recovery.eta,
            params.recovery.d0,
            0.0,
        );
        let r_n = r_n3.xy();
        plan.segments.push(PlanSegment {
            kind: SegmentKind::Recover,
            target: [r_n.x, r_n.y],
            speed: 0.0,
            obstacle_id: Some(o.id),
        });

        let mut cands = side_waypoints(&cur, &o.center, radius);
        if (cands[1] - goal).norm() < (cands[0] - goal).norm() {
            cands.swap(0, 1);
        }
        let usable = |c: &Vector2<f64>, counters: &mut Counters| {
            map.bounds.contains(c)
                && !map.in_collision(c, params.inflation)
                && !leg_blocked(&r_n, c, obstacles, params.inflation, counters)
        };
        let mut chosen = None;
        for c in cands {
            if usable(&c, &mut plan.counters) {
                chosen = Some(c);
                break;
            }
        }
        match chosen {
            Some(c) => {
                plan.segments.push(PlanSegment::free(c));
                cur = c;
            }
            None => {
                // both sides blocked: grid search from the recovery point
                plan.fallbacks += 1;
                let target = cands
                    .iter()
                    .copied()
                    .find(|c| map.bounds.contains(c) && !map.in_collision(c, params.inflation))
                    .unwrap_or(goal);
                let (pts, counters) = grid_path(&r_n, &target, map, params)?;
                plan.counters += counters;
                for p in pts.iter().skip(1) {
                    plan.segments.push(PlanSegment::free(*p));
                }
                cur = target;
                if target == goal {
                    return Ok(plan);
                }
            }
        }
    }
    Err(Error::NoPlan(format!("iteration cap {cap} exceeded")))
}
