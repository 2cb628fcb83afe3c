//! Run artifacts: metrics files, run summary and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use toml::{Table, Value};

use super::metrics::{metrics_csv, timing_csv, Aggregate, MetricsRecord};
use crate::error::{Error, Result};
use crate::world::Map;

const PALETTE: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Summary document with the effective config, seeds and aggregates.
pub fn summary_toml<C: Serialize>(
    config: &C,
    records: &[MetricsRecord],
    aggs: &[Aggregate],
) -> Result<String> {
    let mut doc = Table::new();
    let cfg = Value::try_from(config).map_err(|e| Error::validation("config", e.to_string()))?;
    doc.insert("config".into(), cfg);
    let mut seeds: Vec<i64> = records.iter().map(|r| r.seed as i64).collect();
    seeds.dedup();
    doc.insert(
        "seeds".into(),
        Value::Array(seeds.into_iter().map(Value::Integer).collect()),
    );
    let mut rows = Vec::new();
    for a in aggs {
        let mut t = Table::new();
        t.insert("label".into(), Value::String(a.label.clone()));
        if a.param.is_finite() {
            t.insert("param".into(), Value::Float(a.param));
        }
        t.insert("trials".into(), Value::Integer(a.trials as i64));
        t.insert("successes".into(), Value::Integer(a.successes as i64));
        for (name, s) in &a.metrics {
            if s.n == 0 {
                continue;
            }
            let mut m = Table::new();
            m.insert("mean".into(), Value::Float(s.mean));
            m.insert("std".into(), Value::Float(s.std));
            m.insert("n".into(), Value::Integer(s.n as i64));
            t.insert(name.clone(), Value::Table(m));
        }
        rows.push(Value::Table(t));
    }
    doc.insert("aggregate".into(), Value::Array(rows));
    toml::to_string(&doc).map_err(|e| Error::validation("summary", e.to_string()))
}

/// Top-down plot of `map` with one polyline per path.
pub fn svg_plot(map: &Map, paths: &[(String, Vec<[f64; 2]>)]) -> String {
    let b = &map.bounds;
    let size = b.size();
    let scale = 800.0 / size.x.max(size.y);
    let (w, h) = (size.x * scale, size.y * scale);
    let px = |x: f64, y: f64| ((x - b.min.x) * scale, (b.max.y - y) * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(
        s,
        r##"<rect width="100%" height="100%" fill="#ffffff" stroke="#000000"/>"##
    );
    for o in &map.obstacles {
        let (cx, cy) = px(o.center.x, o.center.y);
        let _ = writeln!(
            s,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="#555555"/>"##,
            o.radius * scale
        );
    }
    for wall in &map.walls {
        let (x1, y1) = px(wall.a.x, wall.a.y);
        let (x2, y2) = px(wall.b.x, wall.b.y);
        let _ = writeln!(
            s,
            r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#000000" stroke-width="4"/>"##
        );
    }
    let mut labels: Vec<&str> = paths.iter().map(|p| p.0.as_str()).collect();
    labels.sort_unstable();
    labels.dedup();
    for (label, pts) in paths {
        if pts.len() < 2 {
            continue;
        }
        let color = PALETTE[labels.iter().position(|l| l == label).unwrap_or(0) % PALETTE.len()];
        let pts: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = px(p[0], p[1]);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-opacity="0.7"/>"#,
            pts.join(" ")
        );
    }
    for (p, color) in [(map.start, "#2ca02c"), (map.goal, "#d62728")] {
        let (x, y) = px(p.x, p.y);
        let _ = writeln!(
            s,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{color}"/>"#
        );
    }
    for (i, label) in labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = 20.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="10" y="{y:.0}" font-family="monospace" font-size="14" fill="{color}">{label}</text>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Resolve `name` under `dir`, rejecting names that escape it.
pub fn out_path(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = Path::new(name);
    if p.is_absolute()
        || p.components()
            .any(|c| !matches!(c, std::path::Component::Normal(_)))
    {
        return Err(Error::validation(
            "out",
            format!("`{name}` is not a plain relative name"),
        ));
    }
    Ok(dir.join(p))
}

/// Write the metrics and timing CSVs and the summary under `dir`.
/// Returns the written paths.
pub fn write_run<C: Serialize>(
    dir: &Path,
    stem: &str,
    config: &C,
    records: &[MetricsRecord],
    aggs: &[Aggregate],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (format!("{stem}_metrics.csv"), metrics_csv(records)),
        (format!("{stem}_timing.csv"), timing_csv(records)),
        (
            format!("{stem}_summary.toml"),
            summary_toml(config, records, aggs)?,
        ),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let p = out_path(dir, &name)?;
        fs::write(&p, text)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::aggregate;
    use crate::harness::scenarios::ScenarioKind;
    use crate::vehicle::Variant;

    #[test]
    fn summary_parses_back() {
        let mut r = MetricsRecord::new(ScenarioKind::Drop, "compliant", Variant::Compliant, "-");
        r.success = true;
        r.peak_accel = 100.0;
        r.param = 0.5;
        let aggs = aggregate(&[r.clone()]);
        let text = summary_toml(&Table::new(), &[r], &aggs).unwrap();
        let v: Table = text.parse().unwrap();
        let a = &v["aggregate"].as_array().unwrap()[0];
        assert_eq!(a["peak_accel"]["mean"].as_float(), Some(100.0));
    }

    #[test]
    fn svg_contains_every_obstacle() {
        let m = Map::experimental();
        let svg = svg_plot(&m, &[("cp".into(), vec![[0.0, 0.0], [1.0, 1.0]])]);
        assert_eq!(svg.matches("<circle").count(), m.obstacles.len() + 2);
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn out_path_rejects_escapes() {
        let d = Path::new("/tmp/x");
        assert!(out_path(d, "a.csv").is_ok());
        assert!(out_path(d, "../a.csv").is_err());
        assert!(out_path(d, "/etc/a.csv").is_err());
    }
}
