use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector2;

use super::{simplify_collinear, Counters, Plan, PlanSegment, PlannerKind, PlannerParams};
use crate::error::{Error, Result};
use crate::world::{segment_disk_entry, KnownMap, Map};

/// Occupancy grid over the map bounds at a fixed resolution.
pub(crate) struct Grid<'a> {
    map: &'a Map,
    inflation: f64,
    res: f64,
    nx: usize,
    ny: usize,
    blocked: Vec<bool>,
}

impl<'a> Grid<'a> {
    pub(crate) fn new(map: &'a Map, inflation: f64, res: f64) -> Self {
        let size = map.bounds.size();
        let nx = (size.x / res).ceil().max(1.0) as usize;
        let ny = (size.y / res).ceil().max(1.0) as usize;
        let mut g = Self {
            map,
            inflation,
            res,
            nx,
            ny,
            blocked: vec![false; nx * ny],
        };
        for j in 0..ny {
            for i in 0..nx {
                let c = g.center(i, j);
                g.blocked[j * nx + i] = map.in_collision(&c, inflation);
            }
        }
        g
    }

    pub(crate) fn center(&self, i: usize, j: usize) -> Vector2<f64> {
        self.map.bounds.min + Vector2::new((i as f64 + 0.5) * self.res, (j as f64 + 0.5) * self.res)
    }

    /// Center of the cell containing `p`.
    pub(crate) fn center_of(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let (i, j) = self.cell_of(p);
        self.center(i, j)
    }

    fn cell_of(&self, p: &Vector2<f64>) -> (usize, usize) {
        let q = (p - self.map.bounds.min) / self.res;
        (
            (q.x.floor().max(0.0) as usize).min(self.nx - 1),
            (q.y.floor().max(0.0) as usize).min(self.ny - 1),
        )
    }

    fn edge_clear(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
        !self
            .map
            .obstacles
            .iter()
            .any(|o| segment_disk_entry(a, b, &o.center, o.radius + self.inflation).is_some())
    }

    /// Like `edge_clear`, ignoring disks that already contain `a` so a start
    /// slightly inside an inflated obstacle can leave it.
    fn edge_clear_from(&self, a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
        !self.map.obstacles.iter().any(|o| {
            let r = o.radius + self.inflation;
            (a - o.center).norm() >= r && segment_disk_entry(a, b, &o.center, r).is_some()
        })
    }

    /// Free cell for `p`: its own cell, else the nearest neighbour reachable
    /// in a straight line.
    fn anchor(&self, p: &Vector2<f64>) -> Option<usize> {
        let (ci, cj) = self.cell_of(p);
        let mut best: Option<(f64, usize)> = None;
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (i, j) = (ci as i64 + di, cj as i64 + dj);
                if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
                    continue;
                }
                let idx = j as usize * self.nx + i as usize;
                let c = self.center(i as usize, j as usize);
                if self.blocked[idx] || !self.edge_clear_from(p, &c) {
                    continue;
                }
                let d = (c - p).norm() + if di == 0 && dj == 0 { -1.0 } else { 0.0 };
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, idx));
                }
            }
        }
        best.map(|(_, idx)| idx)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&o.g))
            .then_with(|| o.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

const MOVES: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// 8-connected A* between the anchor cells of `a` and `b`. Returns the
/// waypoint chain from `a` to `b` with straight runs merged.
pub(crate) fn grid_path(
    a: &Vector2<f64>,
    b: &Vector2<f64>,
    map: &Map,
    params: &PlannerParams,
) -> Result<(Vec<Vector2<f64>>, Counters)> {
    let grid = Grid::new(map, params.inflation, params.grid_resolution);
    let mut counters = Counters::default();
    let (Some(s), Some(t)) = (grid.anchor(a), grid.anchor(b)) else {
        return Err(Error::NoPath);
    };
    let n = grid.nx * grid.ny;
    let mut g_cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let goal_c = grid.center(t % grid.nx, t / grid.nx);
    let h = |idx: usize| (grid.center(idx % grid.nx, idx / grid.nx) - goal_c).norm();
    let mut open = BinaryHeap::new();
    g_cost[s] = 0.0;
    open.push(Open {
        f: h(s),
        g: 0.0,
        idx: s,
    });
    let mut found = false;
    while let Some(Open { g, idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        counters.node_expansions += 1;
        if idx == t {
            found = true;
            break;
        }
        let (i, j) = ((idx % grid.nx) as i64, (idx / grid.nx) as i64);
        let here = grid.center(i as usize, j as usize);
        for (di, dj) in MOVES {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= grid.nx as i64 || nj >= grid.ny as i64 {
                continue;
            }
            let nidx = nj as usize * grid.nx + ni as usize;
            if grid.blocked[nidx] || closed[nidx] {
                continue;
            }
            // no corner cutting
            if di != 0 && dj != 0 {
                let side1 = j as usize * grid.nx + ni as usize;
                let side2 = nj as usize * grid.nx + i as usize;
                if grid.blocked[side1] || grid.blocked[side2] {
                    continue;
                }
            }
            let there = grid.center(ni as usize, nj as usize);
            counters.intersection_checks += map.obstacles.len() as u64;
            if !grid.edge_clear(&here, &there) {
                continue;
            }
            let step = if di != 0 && dj != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            } * grid.res;
            let ng = g + step;
            if ng < g_cost[nidx] {
                g_cost[nidx] = ng;
                parent[nidx] = idx;
                open.push(Open {
                    f: ng + h(nidx),
                    g: ng,
                    idx: nidx,
                });
            }
        }
    }
    if !found {
        return Err(Error::NoPath);
    }
    let mut cells = vec![t];
    while let Some(&c) = cells.last() {
        if c == s {
            break;
        }
        cells.push(parent[c]);
    }
    cells.reverse();
    let mut pts: Vec<Vector2<f64>> = Vec::with_capacity(cells.len() + 2);
    pts.push(*a);
    pts.extend(cells.iter().map(|&c| grid.center(c % grid.nx, c / grid.nx)));
    pts.push(*b);
    // let the endpoints replace their anchor cells when the shortcut is clear
    if pts.len() > 3 && grid.edge_clear(a, &pts[2]) {
        pts.remove(1);
    }
    let k = pts.len();
    if k > 3 && grid.edge_clear(&pts[k - 3], b) {
        pts.remove(k - 2);
    }
    let mut pts = simplify_collinear(&pts);
    if params.astar_prune {
        pts = prune_line_of_sight(&pts, &grid);
    }
    Ok((pts, counters))
}

/// Greedy shortcutting: from each kept point jump to the farthest visible one.
fn prune_line_of_sight(pts: &[Vector2<f64>], grid: &Grid) -> Vec<Vector2<f64>> {
    let mut out = vec![pts[0]];
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut j = pts.len() - 1;
        while j > i + 1 && !grid.edge_clear(&pts[i], &pts[j]) {
            j -= 1;
        }
        out.push(pts[j]);
        i = j;
    }
    out
}

pub fn astar_plan(
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
    let (pts, counters) = grid_path(&start, &goal, map, params)?;
    let mut plan = Plan::new(PlannerKind::Astar, start);
    plan.counters = counters;
    plan.segments = pts.iter().skip(1).map(|p| PlanSegment::free(*p)).collect();
    Ok(plan)
}
