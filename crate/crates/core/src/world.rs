//! Planar world model: circular poles, wall segments, map generation and
//! the geometric queries shared by the planners, the contact model and the
//! metrics code.
//!
//! All geometry is 2D in the horizontal plane; the flight altitude is a
//! single constant carried by the [`Map`].

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ObstacleId = usize;

/// Retry cap for placing a single obstacle during random map generation.
pub const PLACEMENT_RETRIES: usize = 100_000;

/// Extra margin kept between start/goal and any inflated obstacle in
/// generated maps.
pub const KEEP_OUT_MARGIN: f64 = 0.5;

/// A vertical cylindrical pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub id: ObstacleId,
    pub center: Vector2<f64>,
    pub radius: f64,
}

impl Obstacle {
    pub fn new(id: ObstacleId, x: f64, y: f64, radius: f64) -> Self {
        Self {
            id,
            center: Vector2::new(x, y),
            radius,
        }
    }
}

/// A vertical wall along the segment `a -> b`. The free side is to the left
/// of the direction `a -> b`; the right side is solid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wall {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

impl Wall {
    pub fn new(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self { a, b }
    }

    /// Unit normal pointing into the free side.
    pub fn normal(&self) -> Vector2<f64> {
        let d = (self.b - self.a).normalize();
        Vector2::new(-d.y, d.x)
    }

    /// Signed distance of `p` from the wall plane, positive on the free side.
    pub fn signed_distance(&self, p: &Vector2<f64>) -> f64 {
        self.normal().dot(&(p - self.a))
    }

    /// Whether the projection of `p` falls within the wall's extent.
    pub fn spans(&self, p: &Vector2<f64>) -> bool {
        let d = self.b - self.a;
        let s = d.dot(&(p - self.a)) / d.norm_squared();
        (0.0..=1.0).contains(&s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Bounds {
    pub fn new(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        Self { min, max }
    }

    /// Square bounds of side `size` centred on the origin.
    pub fn centered(width: f64, height: f64) -> Self {
        Self {
            min: Vector2::new(-width / 2.0, -height / 2.0),
            max: Vector2::new(width / 2.0, height / 2.0),
        }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn size(&self) -> Vector2<f64> {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    pub bounds: Bounds,
    pub obstacles: Vec<Obstacle>,
    pub walls: Vec<Wall>,
    pub start: Vector2<f64>,
    pub goal: Vector2<f64>,
    pub altitude: f64,
}

/// Result of a segment query: the first inflated obstacle entered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub id: ObstacleId,
    /// Distance along the segment from its start to the entry point.
    pub distance: f64,
}

impl Map {
    pub fn empty(bounds: Bounds, start: Vector2<f64>, goal: Vector2<f64>, altitude: f64) -> Self {
        Self {
            bounds,
            obstacles: Vec::new(),
            walls: Vec::new(),
            start,
            goal,
            altitude,
        }
    }

    /// The 4 x 3 m lab map: four 0.15 m poles, start [-2, 0], goal [2, -0.2].
    ///
    /// Only the central pole position is documented; the three others are
    /// placed so that the central pole blocks the direct line while the
    /// detours stay open.
    pub fn experimental() -> Self {
        let r = 0.15;
        Self {
            bounds: Bounds::new(Vector2::new(-2.25, -1.5), Vector2::new(2.25, 1.5)),
            obstacles: vec![
                Obstacle::new(0, 0.0, 0.0, r),
                Obstacle::new(1, -1.0, 1.0, r),
                Obstacle::new(2, 1.1, 0.75, r),
                Obstacle::new(3, 1.0, -1.05, r),
            ],
            walls: Vec::new(),
            start: Vector2::new(-2.0, 0.0),
            goal: Vector2::new(2.0, -0.2),
            altitude: 1.0,
        }
    }

    /// Open arena with a single wall at x = `wall_x`, facing -x.
    pub fn wall_arena(wall_x: f64) -> Self {
        Self {
            bounds: Bounds::new(Vector2::new(-3.0, -5.0), Vector2::new(wall_x, 5.0)),
            obstacles: Vec::new(),
            walls: vec![Wall::new(
                Vector2::new(wall_x, -5.0),
                Vector2::new(wall_x, 5.0),
            )],
            start: Vector2::new(-1.0, 0.0),
            goal: Vector2::new(-1.0, 0.0),
            altitude: 1.0,
        }
    }

    pub fn obstacle(&self, id: ObstacleId) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    /// Whether `p` lies strictly inside any obstacle grown by `inflation`.
    pub fn in_collision(&self, p: &Vector2<f64>, inflation: f64) -> bool {
        self.obstacles
            .iter()
            .any(|o| (p - o.center).norm() < o.radius + inflation)
    }

    pub fn validate(&self, inflation: f64) -> Result<()> {
        if self.bounds.max.x <= self.bounds.min.x || self.bounds.max.y <= self.bounds.min.y {
            return Err(Error::validation("bounds", "empty rectangle"));
        }
        let mut ids = BTreeSet::new();
        for o in &self.obstacles {
            if !(o.radius > 0.0) {
                return Err(Error::validation(
                    "radius",
                    format!("obstacle {} radius must be > 0", o.id),
                ));
            }
            if !ids.insert(o.id) {
                return Err(Error::validation(
                    "id",
                    format!("duplicate obstacle id {}", o.id),
                ));
            }
            if !self.bounds.contains(&o.center) {
                return Err(Error::validation(
                    "obstacles",
                    format!("obstacle {} outside bounds", o.id),
                ));
            }
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.bounds.contains(&p) {
                return Err(Error::validation(name, "outside bounds"));
            }
            if self.in_collision(&p, inflation) {
                return Err(Error::validation(name, "inside an inflated obstacle"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&MapFile::from(self)).expect("map serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: MapFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(file.into())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// Parameters for a randomized cluttered map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomMapSpec {
    pub width: f64,
    pub height: f64,
    pub n_obstacles: usize,
    pub radius: f64,
    pub min_center_clearance: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub altitude: f64,
    /// Inflation used for the start/goal keep-out.
    pub inflation: f64,
}

impl Default for RandomMapSpec {
    fn default() -> Self {
        Self {
            width: 20.0,
            height: 20.0,
            n_obstacles: 30,
            radius: 0.3,
            min_center_clearance: 2.5,
            start: [-8.0, -8.0],
            goal: [8.0, 8.0],
            altitude: 1.0,
            inflation: 0.28,
        }
    }
}

/// Rejection-sample `n_obstacles` poles with pairwise center distance at
/// least `min_center_clearance`, keeping start and goal clear.
pub fn generate_random_map(spec: &RandomMapSpec, seed: u64) -> Result<Map> {
    if spec.min_center_clearance < 2.0 * spec.radius {
        return Err(Error::validation(
            "min_center_clearance",
            "must be at least twice the obstacle radius",
        ));
    }
    if !(spec.radius > 0.0) {
        return Err(Error::validation("radius", "must be > 0"));
    }
    let bounds = Bounds::centered(spec.width, spec.height);
    let start = Vector2::from(spec.start);
    let goal = Vector2::from(spec.goal);
    let keep_out = spec.radius + spec.inflation + KEEP_OUT_MARGIN;
    let lo = bounds.min.add_scalar(spec.radius);
    let hi = bounds.max.add_scalar(-spec.radius);
    if lo.x >= hi.x || lo.y >= hi.y {
        return Err(Error::validation(
            "width",
            "bounds too small for the obstacle radius",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(spec.n_obstacles);
    for id in 0..spec.n_obstacles {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let c = Vector2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
            if (c - start).norm() < keep_out || (c - goal).norm() < keep_out {
                continue;
            }
            if obstacles
                .iter()
                .any(|o| (o.center - c).norm() < spec.min_center_clearance)
            {
                continue;
            }
            obstacles.push(Obstacle {
                id,
                center: c,
                radius: spec.radius,
            });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Placement {
                placed: obstacles.len(),
                requested: spec.n_obstacles,
                retries: PLACEMENT_RETRIES,
            });
        }
    }
    Ok(Map {
        bounds,
        obstacles,
        walls: Vec::new(),
        start,
        goal,
        altitude: spec.altitude,
    })
}

/// Entry parameter `t in [0, 1]` of segment `a + t (b - a)` into the open
/// disk of radius `r` around `c`. Tangent contact does not count.
pub fn segment_disk_entry(
    a: &Vector2<f64>,
    b: &Vector2<f64>,
    c: &Vector2<f64>,
    r: f64,
) -> Option<f64> {
    let ac = a - c;
    let cc = ac.norm_squared() - r * r;
    if cc < 0.0 {
        return Some(0.0);
    }
    let d = b - a;
    let aa = d.norm_squared();
    if aa == 0.0 {
        return None;
    }
    let bb = 2.0 * d.dot(&ac);
    let disc = bb * bb - 4.0 * aa * cc;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-bb - sq) / (2.0 * aa);
    let t1 = (-bb + sq) / (2.0 * aa);
    if t1 <= 0.0 || t0 > 1.0 {
        return None;
    }
    Some(t0.max(0.0))
}

/// First inflated obstacle entered by the segment, skipping ids for which
/// `skip` returns true.
pub fn first_intersection_filtered<'a, I, F>(
    seg_start: &Vector2<f64>,
    seg_end: &Vector2<f64>,
    obstacles: I,
    inflation: f64,
    skip: F,
) -> Option<Hit>
where
    I: IntoIterator<Item = &'a Obstacle>,
    F: Fn(ObstacleId) -> bool,
{
    let len = (seg_end - seg_start).norm();
    let mut best: Option<(f64, ObstacleId)> = None;
    for o in obstacles {
        if skip(o.id) {
            continue;
        }
        if let Some(t) = segment_disk_entry(seg_start, seg_end, &o.center, o.radius + inflation) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, o.id));
            }
        }
    }
    best.map(|(t, id)| Hit {
        id,
        distance: t * len,
    })
}

/// First obstacle of `map`, grown by `inflation`, that the segment enters.
pub fn first_intersection(
    seg_start: &Vector2<f64>,
    seg_end: &Vector2<f64>,
    map: &Map,
    inflation: f64,
) -> Option<Hit> {
    first_intersection_filtered(seg_start, seg_end, &map.obstacles, inflation, |_| false)
}

/// Minimum signed clearance between `samples` and the inflated obstacles not
/// listed in `exclude`. `f64::INFINITY` when nothing constrains the samples.
pub fn min_clearance(
    samples: &[Vector2<f64>],
    map: &Map,
    inflation: f64,
    exclude: &BTreeSet<ObstacleId>,
) -> f64 {
    let mut best = f64::INFINITY;
    for o in map.obstacles.iter().filter(|o| !exclude.contains(&o.id)) {
        let reach = o.radius + inflation;
        for p in samples {
            best = best.min((p - o.center).norm() - reach);
        }
    }
    best
}

/// The subset of a map discovered so far by a range-limited sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownMap {
    view: Map,
    discovered: BTreeSet<ObstacleId>,
}

impl KnownMap {
    /// Nothing discovered yet.
    pub fn empty(map: &Map) -> Self {
        let mut view = map.clone();
        view.obstacles.clear();
        Self {
            view,
            discovered: BTreeSet::new(),
        }
    }

    /// Everything discovered (offline planning).
    pub fn full(map: &Map) -> Self {
        Self {
            view: map.clone(),
            discovered: map.obstacles.iter().map(|o| o.id).collect(),
        }
    }

    pub fn map(&self) -> &Map {
        &self.view
    }

    pub fn discovered(&self) -> &BTreeSet<ObstacleId> {
        &self.discovered
    }
}

/// Union `known` with every obstacle whose center lies within
/// `sensing_range` (inclusive) of `position`.
pub fn visible_obstacles(
    position: &Vector2<f64>,
    sensing_range: f64,
    map: &Map,
    known: &KnownMap,
) -> KnownMap {
    let mut discovered = known.discovered.clone();
    for o in &map.obstacles {
        if (o.center - position).norm() <= sensing_range {
            discovered.insert(o.id);
        }
    }
    let mut view = known.view.clone();
    view.obstacles = map
        .obstacles
        .iter()
        .filter(|o| discovered.contains(&o.id))
        .copied()
        .collect();
    KnownMap { view, discovered }
}

// On-disk representation. Field names here are the file contract.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    altitude: f64,
    start: [f64; 2],
    goal: [f64; 2],
    bounds: BoundsFile,
    #[serde(default)]
    obstacles: Vec<ObstacleFile>,
    #[serde(default)]
    walls: Vec<WallFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsFile {
    min: [f64; 2],
    max: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleFile {
    id: ObstacleId,
    x: f64,
    y: f64,
    radius: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WallFile {
    a: [f64; 2],
    b: [f64; 2],
}

impl From<&Map> for MapFile {
    fn from(m: &Map) -> Self {
        Self {
            altitude: m.altitude,
            start: m.start.into(),
            goal: m.goal.into(),
            bounds: BoundsFile {
                min: m.bounds.min.into(),
                max: m.bounds.max.into(),
            },
            obstacles: m
                .obstacles
                .iter()
                .map(|o| ObstacleFile {
                    id: o.id,
                    x: o.center.x,
                    y: o.center.y,
                    radius: o.radius,
                })
                .collect(),
            walls: m
                .walls
                .iter()
                .map(|w| WallFile {
                    a: w.a.into(),
                    b: w.b.into(),
                })
                .collect(),
        }
    }
}

impl From<MapFile> for Map {
    fn from(f: MapFile) -> Self {
        Self {
            bounds: Bounds::new(f.bounds.min.into(), f.bounds.max.into()),
            obstacles: f
                .obstacles
                .into_iter()
                .map(|o| Obstacle::new(o.id, o.x, o.y, o.radius))
                .collect(),
            walls: f
                .walls
                .into_iter()
                .map(|w| Wall::new(w.a.into(), w.b.into()))
                .collect(),
            start: f.start.into(),
            goal: f.goal.into(),
            altitude: f.altitude,
        }
    }
}
