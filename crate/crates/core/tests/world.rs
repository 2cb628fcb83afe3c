use std::collections::BTreeSet;
use std::path::Path;

use cpnav::world::{generate_random_map, min_clearance, segment_disk_entry, Map, RandomMapSpec};
use nalgebra::Vector2;
use proptest::prelude::*;

#[test]
fn golden_experimental_map_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/experimental_map.toml");
    assert_eq!(Map::load(&path).unwrap(), Map::experimental());
}

#[test]
fn map_file_round_trips() {
    let m = generate_random_map(&RandomMapSpec::default(), 11).unwrap();
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("m.toml");
    m.save(&p).unwrap();
    assert_eq!(Map::load(&p).unwrap(), m);
}

#[test]
fn malformed_map_is_a_parse_error() {
    assert!(Map::from_toml("altitude = \"high\"").is_err());
}

/// Earliest sampled point of the segment strictly inside the disk.
fn sampled_entry(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>, r: f64) -> Option<f64> {
    (0..=20_000)
        .map(|i| i as f64 / 20_000.0)
        .find(|t| (a + (b - a) * *t - c).norm() < r)
}

fn pt() -> impl Strategy<Value = Vector2<f64>> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(x, y)| Vector2::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_maps_respect_spacing(seed in any::<u64>(), n in 0usize..40) {
        let spec = RandomMapSpec { n_obstacles: n, ..Default::default() };
        let m = generate_random_map(&spec, seed).unwrap();
        prop_assert_eq!(m.obstacles.len(), n);
        for (i, a) in m.obstacles.iter().enumerate() {
            prop_assert!(m.bounds.contains(&a.center));
            for b in &m.obstacles[i + 1..] {
                prop_assert!((a.center - b.center).norm() >= spec.min_center_clearance);
            }
        }
        let ends = [m.start, m.goal];
        prop_assert!(min_clearance(&ends, &m, spec.inflation, &BTreeSet::new()) > 0.0);
        prop_assert_eq!(generate_random_map(&spec, seed).unwrap(), m);
    }

    #[test]
    fn disk_entry_matches_sampling(a in pt(), b in pt(), c in pt(), r in 0.1..1.5f64) {
        let exact = segment_disk_entry(&a, &b, &c, r);
        let sampled = sampled_entry(a, b, c, r);
        let tol = 2.0 / 20_000.0;
        match (exact, sampled) {
            (Some(t), Some(s)) => prop_assert!((t - s).abs() <= tol + 1e-9, "{} vs {}", t, s),
            (None, None) => {}
            // Grazing chords shorter than the sampling step.
            (Some(t), None) => {
                let p = a + (b - a) * t;
                prop_assert!((p - c).norm() >= r - 1e-3 * (b - a).norm());
            }
            (None, Some(s)) => prop_assert!(false, "missed entry at {}", s),
        }
    }
}
