use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::astar::Grid;
use super::{simplify_collinear, Counters, Plan, PlanSegment, PlannerKind, PlannerParams};
use crate::error::{Error, Result};
use crate::world::{segment_disk_entry, KnownMap, Map};

struct Node {
    pos: Vector2<f64>,
    parent: usize,
    cost: f64,
    children: Vec<usize>,
}

fn edge_free(
    map: &Map,
    a: &Vector2<f64>,
    b: &Vector2<f64>,
    inflation: f64,
    counters: &mut Counters,
) -> bool {
    counters.intersection_checks += map.obstacles.len() as u64;
    !map.obstacles
        .iter()
        .any(|o| segment_disk_entry(a, b, &o.center, o.radius + inflation).is_some())
}

/// RRT* tree search. Returns the raw node chain from start to goal.
pub(crate) fn rrt_star_chain(
    start: Vector2<f64>,
    goal: Vector2<f64>,
    map: &Map,
    params: &PlannerParams,
    inflation: f64,
    seed: u64,
) -> Result<(Vec<Vector2<f64>>, Counters)> {
    let rp = &params.rrt;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counters = Counters::default();
    let mut nodes = vec![Node {
        pos: start,
        parent: usize::MAX,
        cost: 0.0,
        children: Vec::new(),
    }];
    let mut goal_parents: Vec<usize> = Vec::new();
    if edge_free(map, &start, &goal, inflation, &mut counters) {
        goal_parents.push(0);
    }
    let (lo, hi) = (map.bounds.min, map.bounds.max);
    for _ in 0..rp.max_iters {
        counters.iterations += 1;
        let sample = if rng.gen::<f64>() < rp.goal_bias {
            goal
        } else {
            Vector2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y))
        };
        let nearest = (0..nodes.len())
            .min_by(|&a, &b| {
                (nodes[a].pos - sample)
                    .norm_squared()
                    .total_cmp(&(nodes[b].pos - sample).norm_squared())
            })
            .expect("tree is never empty");
        let d = sample - nodes[nearest].pos;
        let dist = d.norm();
        if dist < 1e-9 {
            continue;
        }
        let new = if dist > rp.step {
            nodes[nearest].pos + d * (rp.step / dist)
        } else {
            sample
        };
        if map.in_collision(&new, inflation) {
            continue;
        }
        let near: Vec<usize> = (0..nodes.len())
            .filter(|&i| (nodes[i].pos - new).norm() <= rp.rewire_radius)
            .collect();
        let mut best: Option<(f64, usize)> = None;
        for &i in near.iter().chain(std::iter::once(&nearest)) {
            let c = nodes[i].cost + (nodes[i].pos - new).norm();
            if best.is_none_or(|(bc, _)| c < bc)
                && edge_free(map, &nodes[i].pos, &new, inflation, &mut counters)
            {
                best = Some((c, i));
            }
        }
        let Some((cost, parent)) = best else {
            continue;
        };
        let id = nodes.len();
        nodes.push(Node {
            pos: new,
            parent,
            cost,
            children: Vec::new(),
        });
        nodes[parent].children.push(id);
        counters.node_expansions += 1;

        for &i in &near {
            if i == parent {
                continue;
            }
            let c = cost + (nodes[i].pos - new).norm();
            if c + 1e-12 < nodes[i].cost
                && edge_free(map, &new, &nodes[i].pos, inflation, &mut counters)
            {
                let old = nodes[i].parent;
                nodes[old].children.retain(|&k| k != i);
                nodes[i].parent = id;
                nodes[id].children.push(i);
                let delta = nodes[i].cost - c;
                let mut stack = vec![i];
                while let Some(k) = stack.pop() {
                    nodes[k].cost -= delta;
                    stack.extend(nodes[k].children.iter().copied());
                }
            }
        }
        if (new - goal).norm() <= rp.step && edge_free(map, &new, &goal, inflation, &mut counters) {
            goal_parents.push(id);
        }
    }
    let best = goal_parents
        .iter()
        .copied()
        .min_by(|&a, &b| {
            (nodes[a].cost + (nodes[a].pos - goal).norm())
                .total_cmp(&(nodes[b].cost + (nodes[b].pos - goal).norm()))
        })
        .ok_or(Error::NoPath)?;
    let mut chain = vec![goal];
    let mut k = best;
    while k != usize::MAX {
        chain.push(nodes[k].pos);
        k = nodes[k].parent;
    }
    chain.reverse();
    Ok((chain, counters))
}

/// Split every edge into equal pieces no longer than `step`.
fn split_edges(chain: &[Vector2<f64>], step: f64) -> Vec<Vector2<f64>> {
    let mut out = vec![chain[0]];
    for w in chain.windows(2) {
        let n = ((w[1] - w[0]).norm() / step).ceil().max(1.0) as usize;
        out.extend((1..=n).map(|k| w[0] + (w[1] - w[0]) * (k as f64 / n as f64)));
    }
    out
}

/// RRT* on the discretized map: interior tree nodes snap to their grid
/// cell centers and rewired edges are split back into steer-length pieces,
/// so the waypoints are spaced like tree nodes.
pub fn rrt_star_plan(
    start: Vector2<f64>,
    goal: Vector2<f64>,
    known: &KnownMap,
    params: &PlannerParams,
    seed: u64,
) -> Result<Plan> {
    params.validate()?;
    let map = known.map();
    if map.in_collision(&goal, params.inflation) {
        return Err(Error::Infeasible("goal inside an inflated obstacle".into()));
    }
    let res = params.grid_resolution;
    // margin keeping snapped edges within half a cell diagonal of the tree clear
    let margin = res * std::f64::consts::FRAC_1_SQRT_2;
    let (chain, counters) =
        rrt_star_chain(start, goal, map, params, params.inflation + margin, seed)?;
    let grid = Grid::new(map, params.inflation, res);
    let mut snapped = vec![start];
    for q in &chain[1..chain.len() - 1] {
        let c = grid.center_of(q);
        if (c - snapped[snapped.len() - 1]).norm() > 1e-9 {
            snapped.push(c);
        }
    }
    snapped.push(goal);
    let pts = split_edges(&simplify_collinear(&snapped), params.rrt.step);
    let mut plan = Plan::new(PlannerKind::RrtStar, start);
    plan.counters = counters;
    plan.segments = pts.iter().skip(1).map(|p| PlanSegment::free(*p)).collect();
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{min_clearance, Bounds, Obstacle};
    use std::collections::BTreeSet;

    fn chain_len(c: &[Vector2<f64>]) -> f64 {
        c.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    #[test]
    fn empty_map_is_near_straight() {
        let m = Map::empty(
            Bounds::centered(10.0, 10.0),
            Vector2::new(-3.0, -1.0),
            Vector2::new(3.0, 2.0),
            1.0,
        );
        let (c, _) =
            rrt_star_chain(m.start, m.goal, &m, &PlannerParams::default(), 0.28, 1).unwrap();
        assert!(chain_len(&c) <= 1.05 * (m.goal - m.start).norm());
    }

    #[test]
    fn deterministic_per_seed() {
        let m = Map::experimental();
        let k = KnownMap::full(&m);
        let a = rrt_star_plan(m.start, m.goal, &k, &PlannerParams::default(), 5).unwrap();
        let b = rrt_star_plan(m.start, m.goal, &k, &PlannerParams::default(), 5).unwrap();
        assert_eq!(a.segments, b.segments);
    }

    #[test]
    fn cost_non_increasing_in_iterations() {
        let m = Map::experimental();
        let mut prev = f64::INFINITY;
        for iters in [500, 1000, 2000, 4000] {
            let mut p = PlannerParams::default();
            p.rrt.max_iters = iters;
            let (c, _) = rrt_star_chain(m.start, m.goal, &m, &p, 0.28, 11).unwrap();
            let l = chain_len(&c);
            assert!(l <= prev + 1e-9, "{iters}: {l} > {prev}");
            prev = l;
        }
    }

    #[test]
    fn split_path_is_clear() {
        let m = Map::experimental();
        for seed in 0..3 {
            let p = rrt_star_plan(
                m.start,
                m.goal,
                &KnownMap::full(&m),
                &PlannerParams::default(),
                seed,
            )
            .unwrap();
            let w = p.waypoints();
            for s in w.windows(2) {
                let samples: Vec<Vector2<f64>> = (0..=20)
                    .map(|k| s[0] + (s[1] - s[0]) * (k as f64 / 20.0))
                    .collect();
                assert!(
                    min_clearance(&samples, &m, 0.28, &BTreeSet::new()) >= 0.0,
                    "seed {seed}"
                );
            }
        }
    }

    #[test]
    fn blocked_goal_fails() {
        let mut m = Map::empty(
            Bounds::centered(10.0, 10.0),
            Vector2::new(-3.0, 0.0),
            Vector2::new(3.0, 0.0),
            1.0,
        );
        for k in 0..12 {
            let a = k as f64 * std::f64::consts::TAU / 12.0;
            m.obstacles
                .push(Obstacle::new(k, 3.0 + a.cos(), a.sin(), 0.15));
        }
        let mut p = PlannerParams::default();
        p.rrt.max_iters = 500;
        assert!(matches!(
            rrt_star_plan(m.start, m.goal, &KnownMap::full(&m), &p, 0),
            Err(Error::NoPath)
        ));
    }
}
