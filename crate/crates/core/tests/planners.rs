use cpnav::planners::{plan, PlannerKind, PlannerParams, SegmentKind};
use cpnav::world::{
    first_intersection, first_intersection_filtered, generate_random_map, KnownMap, Map,
    RandomMapSpec,
};
use nalgebra::Vector2;

const KINDS: [PlannerKind; 3] = [PlannerKind::Cp, PlannerKind::Astar, PlannerKind::RrtStar];

fn maps() -> Vec<Map> {
    let spec = RandomMapSpec::default();
    let mut out = vec![Map::experimental()];
    out.extend((0..3).map(|s| generate_random_map(&spec, s).unwrap()));
    out
}

fn params(map: &Map) -> PlannerParams {
    PlannerParams {
        grid_resolution: if map.bounds.size().x > 10.0 { 0.5 } else { 0.1 },
        ..Default::default()
    }
}

#[test]
fn plans_connect_start_to_goal() {
    for map in maps() {
        for kind in KINDS {
            let p = plan(
                kind,
                map.start,
                map.goal,
                &KnownMap::full(&map),
                &params(&map),
                3,
            )
            .unwrap();
            let w = p.waypoints();
            assert_eq!(w[0], map.start);
            assert!((w.last().unwrap() - map.goal).norm() < 1e-9, "{kind:?}");
            assert!(p.path_length() >= (map.goal - map.start).norm() - 1e-9);
        }
    }
}

#[test]
fn baseline_paths_avoid_inflated_obstacles() {
    for map in maps() {
        let pp = params(&map);
        for kind in [PlannerKind::Astar, PlannerKind::RrtStar] {
            let p = plan(kind, map.start, map.goal, &KnownMap::full(&map), &pp, 3).unwrap();
            for w in p.waypoints().windows(2) {
                let hit = first_intersection(&w[0], &w[1], &map, pp.inflation - 1e-6);
                assert!(hit.is_none(), "{kind:?} enters {hit:?}");
            }
        }
    }
}

#[test]
fn cp_only_touches_declared_obstacles() {
    for map in maps() {
        let pp = params(&map);
        let p = plan(
            PlannerKind::Cp,
            map.start,
            map.goal,
            &KnownMap::full(&map),
            &pp,
            0,
        )
        .unwrap();
        let contacted = p.contacted();
        let w = p.waypoints();
        for (seg, pair) in p.segments.iter().zip(w.windows(2)) {
            if seg.kind == SegmentKind::Collide {
                assert!(seg.obstacle_id.is_some());
                continue;
            }
            let hit = first_intersection_filtered(
                &pair[0],
                &pair[1],
                &map.obstacles,
                pp.inflation - 1e-6,
                |id| contacted.contains(&id),
            );
            assert!(hit.is_none(), "{:?} leg enters {hit:?}", seg.kind);
        }
    }
}

#[test]
fn cp_collides_with_the_blocking_pole() {
    let map = Map::experimental();
    let p = plan(
        PlannerKind::Cp,
        map.start,
        map.goal,
        &KnownMap::full(&map),
        &params(&map),
        0,
    )
    .unwrap();
    assert!(p.contacted().contains(&0));
    assert!(p.segments.iter().any(|s| s.kind == SegmentKind::Recover));
}

#[test]
fn rrt_star_is_deterministic_per_seed() {
    let map = generate_random_map(&RandomMapSpec::default(), 5).unwrap();
    let pp = params(&map);
    let run = |seed| {
        plan(
            PlannerKind::RrtStar,
            map.start,
            map.goal,
            &KnownMap::full(&map),
            &pp,
            seed,
        )
        .unwrap()
    };
    let (a, b) = (run(9), run(9));
    assert_eq!(a.segments, b.segments);
    assert_eq!(a.counters, b.counters);
}

#[test]
fn open_field_is_a_straight_line() {
    let map = Map::empty(
        cpnav::world::Bounds::centered(10.0, 10.0),
        Vector2::new(-3.0, -3.0),
        Vector2::new(3.0, 2.0),
        1.0,
    );
    for kind in [PlannerKind::Cp, PlannerKind::RrtStar] {
        let p = plan(
            kind,
            map.start,
            map.goal,
            &KnownMap::full(&map),
            &params(&map),
            1,
        )
        .unwrap();
        approx::assert_relative_eq!(
            p.path_length(),
            (map.goal - map.start).norm(),
            epsilon = 1e-9
        );
    }
}
