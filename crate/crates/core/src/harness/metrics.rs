//! Per-trial metrics, aggregation and CSV output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::executor::Executor;
use super::scenarios::ScenarioKind;
use crate::planners::Counters;
use crate::vehicle::{TraceRow, Variant};
use crate::world::{min_clearance, ObstacleId};

/// Outcome of one trial. Fields that do not apply to a scenario are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub scenario: ScenarioKind,
    /// Planner or robot configuration under test.
    pub label: String,
    pub variant: Variant,
    pub map: String,
    /// Swept scenario parameter (height, force or speed).
    pub param: f64,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    /// Wall-clock planning time, ms.
    pub plan_time_ms: f64,
    /// Wall-clock trajectory generation time, s.
    pub traj_gen_time_s: f64,
    pub traj_time: f64,
    pub path_length: f64,
    pub clearance: f64,
    pub peak_accel: f64,
    /// Reported force estimate (held mean or peak), N.
    pub f_hat: f64,
    pub f_hat_max: f64,
    pub settle_time: f64,
    pub rebound_speed: f64,
    pub impact_speed: f64,
    pub recoveries: usize,
    pub unexpected_collisions: usize,
    pub false_alarms: usize,
    pub replans: usize,
    pub counters: Counters,
    pub error: Option<String>,
    /// Decimated planar path for plots.
    pub path: Vec<[f64; 2]>,
    /// Full-state trace, kept only when requested.
    pub trace: Vec<TraceRow>,
}

impl MetricsRecord {
    pub fn new(
        scenario: ScenarioKind,
        label: impl Into<String>,
        variant: Variant,
        map: impl Into<String>,
    ) -> Self {
        Self {
            scenario,
            label: label.into(),
            variant,
            map: map.into(),
            param: f64::NAN,
            trial: 0,
            seed: 0,
            success: false,
            plan_time_ms: f64::NAN,
            traj_gen_time_s: f64::NAN,
            traj_time: f64::NAN,
            path_length: f64::NAN,
            clearance: f64::NAN,
            peak_accel: f64::NAN,
            f_hat: f64::NAN,
            f_hat_max: f64::NAN,
            settle_time: f64::NAN,
            rebound_speed: f64::NAN,
            impact_speed: f64::NAN,
            recoveries: 0,
            unexpected_collisions: 0,
            false_alarms: 0,
            replans: 0,
            counters: Counters::default(),
            error: None,
            path: Vec::new(),
            trace: Vec::new(),
        }
    }

    /// Values that enter the aggregate table, by column name.
    pub fn metric_values(&self) -> [(&'static str, f64); 11] {
        [
            ("plan_time_ms", self.plan_time_ms),
            ("traj_gen_time_s", self.traj_gen_time_s),
            ("traj_time", self.traj_time),
            ("path_length", self.path_length),
            ("clearance", self.clearance),
            ("peak_accel", self.peak_accel),
            ("f_hat", self.f_hat),
            ("f_hat_max", self.f_hat_max),
            ("settle_time", self.settle_time),
            ("rebound_speed", self.rebound_speed),
            ("impact_speed", self.impact_speed),
        ]
    }
}

/// Arc length of a planar polyline.
pub fn arc_length(samples: &[Vector2<f64>]) -> f64 {
    samples.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Fill the flight metrics of `rec` from a finished execution.
pub fn compute_metrics(
    rec: &mut MetricsRecord,
    plan_time_ms: f64,
    ex: &Executor,
    contacted: &BTreeSet<ObstacleId>,
    inflation: f64,
) {
    rec.plan_time_ms = plan_time_ms;
    rec.traj_gen_time_s = ex.stats.traj_gen_time_s;
    rec.traj_time = ex.stats.reached_goal_at.unwrap_or(f64::NAN);
    rec.path_length = arc_length(&ex.samples);
    rec.clearance = min_clearance(&ex.samples, ex.map, inflation, contacted);
    rec.peak_accel = ex.stats.peak_accel;
    rec.f_hat_max = ex
        .stats
        .recoveries
        .iter()
        .map(|r| r.f_max)
        .fold(f64::NAN, f64::max);
    rec.recoveries = ex.stats.recoveries.len();
    rec.unexpected_collisions = ex.stats.unexpected_collisions;
    rec.false_alarms = ex.stats.false_alarms;
    rec.path = decimate(&ex.samples, 0.05);
}

/// Keep points at least `spacing` apart, plus the last one.
pub fn decimate(samples: &[Vector2<f64>], spacing: f64) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = Vec::new();
    let mut last: Option<Vector2<f64>> = None;
    for p in samples {
        if last.is_none_or(|q| (p - q).norm() >= spacing) {
            out.push([p.x, p.y]);
            last = Some(*p);
        }
    }
    if let (Some(p), Some(q)) = (samples.last(), out.last()) {
        if p.x != q[0] || p.y != q[1] {
            out.push([p.x, p.y]);
        }
    }
    out
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Statistics of `values` that do not depend on their order. Non-finite
/// values are skipped unless nothing else is left.
pub fn stat(values: &[f64]) -> Stat {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        let all_inf = !values.is_empty() && values.iter().all(|x| *x == f64::INFINITY);
        let mean = if all_inf { f64::INFINITY } else { f64::NAN };
        return Stat {
            mean,
            std: f64::NAN,
            n: 0,
        };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let std = if n > 1 {
        (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Stat { mean, std, n }
}

/// One row of the aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub label: String,
    pub param: f64,
    pub trials: usize,
    pub successes: usize,
    /// Over successful trials.
    pub metrics: BTreeMap<String, Stat>,
}

/// Group by (label, param) and summarize successful trials. Groups appear
/// in label order, then by parameter.
pub fn aggregate(records: &[MetricsRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, u64), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        // total order on the parameter; NaN groups together
        let key = if r.param.is_nan() {
            u64::MAX
        } else {
            r.param.to_bits() ^ (1 << 63)
        };
        groups.entry((r.label.clone(), key)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let ok: Vec<&&MetricsRecord> = g.iter().filter(|r| r.success).collect();
            let mut metrics = BTreeMap::new();
            for (k, (name, _)) in g[0].metric_values().iter().enumerate() {
                let vals: Vec<f64> = ok.iter().map(|r| r.metric_values()[k].1).collect();
                metrics.insert((*name).to_string(), stat(&vals));
            }
            Aggregate {
                label: g[0].label.clone(),
                param: g[0].param,
                trials: g.len(),
                successes: ok.len(),
                metrics,
            }
        })
        .collect()
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.6}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const METRICS_HEADER: &str = "scenario,label,variant,map,param,trial,seed,success,traj_time,path_length,clearance,peak_accel,f_hat,f_hat_max,settle_time,rebound_speed,impact_speed,recoveries,unexpected_collisions,false_alarms,replans,intersection_checks,node_expansions,iterations,error";

/// Simulation metrics, one row per trial. Contains no wall-clock values,
/// so reruns are byte-identical.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            csv_field(&r.label),
            r.variant,
            csv_field(&r.map),
            num(r.param),
            r.trial,
            r.seed,
            r.success,
            num(r.traj_time),
            num(r.path_length),
            num(r.clearance),
            num(r.peak_accel),
            num(r.f_hat),
            num(r.f_hat_max),
            num(r.settle_time),
            num(r.rebound_speed),
            num(r.impact_speed),
            r.recoveries,
            r.unexpected_collisions,
            r.false_alarms,
            r.replans,
            r.counters.intersection_checks,
            r.counters.node_expansions,
            r.counters.iterations,
            csv_field(r.error.as_deref().unwrap_or("")),
        );
    }
    out
}

/// Wall-clock measurements, one row per trial.
pub fn timing_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("label,map,param,trial,plan_time_ms,traj_gen_time_s\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.label),
            csv_field(&r.map),
            num(r.param),
            r.trial,
            num(r.plan_time_ms),
            num(r.traj_gen_time_s)
        );
    }
    out
}

/// Aggregate table as aligned text.
pub fn format_table(aggs: &[Aggregate]) -> String {
    // only columns with data in some group
    let mut cols: Vec<&str> = Vec::new();
    for a in aggs {
        for (k, s) in &a.metrics {
            if s.n > 0 && !cols.contains(&k.as_str()) {
                cols.push(k);
            }
        }
    }
    let mut out = format!("{:<14}{:>8}{:>8}", "label", "param", "ok");
    for c in &cols {
        let _ = write!(out, "{c:>22}");
    }
    out.push('\n');
    for a in aggs {
        let param = if a.param.is_nan() {
            "-".to_string()
        } else {
            format!("{:.2}", a.param)
        };
        let _ = write!(
            out,
            "{:<14}{:>8}{:>8}",
            a.label,
            param,
            format!("{}/{}", a.successes, a.trials)
        );
        for c in &cols {
            let s = a.metrics[*c];
            let cell = if s.mean.is_nan() {
                "-".to_string()
            } else {
                format!("{:.3} ± {:.3}", s.mean, s.std)
            };
            let _ = write!(out, "{cell:>22}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(label: &str, t: f64, ok: bool) -> MetricsRecord {
        let mut r = MetricsRecord::new(ScenarioKind::PlanOffline, label, Variant::Compliant, "m");
        r.traj_time = t;
        r.success = ok;
        r
    }

    #[test]
    fn stat_matches_two_pass_reference() {
        let v = [1.5, 2.25, -0.75, 4.0, 3.125];
        let s = stat(&v);
        let mean = v.iter().sum::<f64>() / 5.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std - var.sqrt()).abs() < 1e-12);
        assert_eq!(s.n, 5);
    }

    #[test]
    fn stat_edge_cases() {
        assert_eq!(stat(&[2.0]).std, 0.0);
        assert!(stat(&[]).mean.is_nan());
        assert_eq!(stat(&[f64::INFINITY]).mean, f64::INFINITY);
        assert_eq!(stat(&[1.0, f64::NAN, 3.0]).mean, 2.0);
    }

    #[test]
    fn aggregate_skips_failures() {
        let rs = vec![
            rec("a", 1.0, true),
            rec("a", 100.0, false),
            rec("b", 2.0, true),
            rec("a", 3.0, true),
        ];
        let ag = aggregate(&rs);
        assert_eq!(ag.len(), 2);
        assert_eq!(ag[0].label, "a");
        assert_eq!(ag[0].trials, 3);
        assert_eq!(ag[0].successes, 2);
        assert_eq!(ag[0].metrics["traj_time"].mean, 2.0);
    }

    #[test]
    fn csv_has_one_row_per_record() {
        let rs = vec![rec("a", 1.0, true), rec("b,c", 2.0, false)];
        let csv = metrics_csv(&rs);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("\"b,c\""));
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 25);
    }

    #[test]
    fn decimate_keeps_ends() {
        let pts: Vec<Vector2<f64>> = (0..=100)
            .map(|k| Vector2::new(k as f64 * 0.01, 0.0))
            .collect();
        let d = decimate(&pts, 0.1);
        assert_eq!(d[0], [0.0, 0.0]);
        assert_eq!(*d.last().unwrap(), [1.0, 0.0]);
        assert!(d.len() <= 12);
    }
}
