//! Run configuration and subcommand implementations for the `cpnav` binary.

use std::fs;
use std::path::{Path, PathBuf};

use cpnav::harness::executor::ExecParams;
use cpnav::harness::metrics::{format_table, Aggregate, MetricsRecord};
use cpnav::harness::output::{out_path, svg_plot, write_run};
use cpnav::harness::scenarios::{
    collision_arena, run_batch, PlannerSpec, Scenario, ScenarioKind, SimConfig,
};
use cpnav::planners::{OnlineParams, PlannerParams};
use cpnav::vehicle::{write_trace_csv, RobotParams, Variant};
use cpnav::world::{generate_random_map, Map, RandomMapSpec};
use cpnav::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CPNAV_OUT";
pub const DEFAULT_OUT: &str = "cpnav_out";

/// Everything a run needs. Omitted keys take their documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub robot: RobotParams,
    #[serde(default)]
    pub exec: ExecParams,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub online: OnlineParams,
    /// Output directory; falls back to `$CPNAV_OUT`, then `cpnav_out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(default)]
    pub plot: bool,
}

impl RunConfig {
    pub fn sim(&self) -> SimConfig {
        SimConfig {
            robot: self.robot.clone(),
            exec: self.exec.clone(),
            planner: self.planner.clone(),
            online: self.online.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sim().validate()
    }

    /// Output directory after flag, file and environment defaults.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var(OUT_ENV).ok().filter(|s| !s.is_empty()))
            .unwrap_or_else(|| DEFAULT_OUT.to_string())
            .into()
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<ScenarioKind>,
    pub seed: Option<u64>,
    /// Number of map seeds for the randomized suites.
    pub seeds: Option<u64>,
    pub out: Option<String>,
    pub plot: bool,
    pub variant: Option<Variant>,
    pub planner: Option<PlannerSpec>,
    pub height: Option<f64>,
    pub trials: Option<usize>,
}

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_error(origin: &str, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{origin}: {}", e.to_string().trim()))
}

/// Load `path` (if any) over the defaults for the selected scenario, apply
/// flag overrides and validate.
pub fn parse_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
    parse_config_with_base(path, ov, None)
}

/// As [`parse_config`], starting from `base` instead of the scenario preset.
pub fn parse_config_with_base(
    path: Option<&Path>,
    ov: &Overrides,
    base: Option<Scenario>,
) -> Result<RunConfig> {
    let (origin, mut file) = match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let t: Table = text
                .parse()
                .map_err(|e| parse_error(&p.display().to_string(), e))?;
            (p.display().to_string(), t)
        }
        None => ("<defaults>".to_string(), Table::new()),
    };
    let file_kind = match file.get("scenario").and_then(|s| s.get("kind")) {
        Some(Value::String(k)) => Some(k.parse::<ScenarioKind>()?),
        Some(_) => return Err(Error::validation("scenario.kind", "must be a string")),
        None => None,
    };
    let scenario = match base {
        Some(s) => s,
        None => Scenario::preset(
            ov.scenario
                .or(file_kind)
                .unwrap_or(ScenarioKind::PlanOffline),
        ),
    };
    if let (Some(k), Some(Value::Table(s))) = (ov.scenario, file.get_mut("scenario")) {
        s.insert("kind".into(), Value::String(k.name().into()));
    }
    let defaults = RunConfig {
        scenario,
        robot: RobotParams::default(),
        exec: ExecParams::default(),
        planner: PlannerParams::default(),
        online: OnlineParams::default(),
        out: None,
        plot: false,
    };
    let mut merged = Table::try_from(&defaults).map_err(|e| parse_error("defaults", e))?;
    merge(&mut merged, std::mem::take(&mut file));
    let mut cfg: RunConfig = merged.try_into().map_err(|e| parse_error(&origin, e))?;

    let s = &mut cfg.scenario;
    if let Some(seed) = ov.seed {
        s.seed = seed;
    }
    if let Some(n) = ov.seeds {
        s.map_seeds = (0..n).collect();
    }
    if let Some(v) = ov.variant {
        s.variants = vec![v];
    }
    if let Some(p) = ov.planner {
        s.planners = vec![p];
    }
    if let Some(h) = ov.height {
        s.heights = vec![h];
    }
    if let Some(n) = ov.trials {
        s.trials = n;
    }
    if ov.out.is_some() {
        cfg.out = ov.out.clone();
    }
    cfg.plot |= ov.plot;
    cfg.validate()?;
    Ok(cfg)
}

/// Stable short tag for an error.
pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Placement { .. } => "placement",
        Error::SimulationFault { .. } => "simulation_fault",
        Error::DegenerateThrust { .. } => "degenerate_thrust",
        Error::SingularYaw => "singular_yaw",
        Error::ZeroLengthSegment { .. } => "zero_length_segment",
        Error::SingularSystem(_) => "singular_system",
        Error::NoPlan(_) => "no_plan",
        Error::Infeasible(_) => "infeasible",
        Error::NoPath => "no_path",
        Error::Stall { .. } => "stall",
        Error::Validation { .. } => "validation",
        Error::Parse(_) => "parse",
        Error::Io(_) => "io",
        Error::Trial { source, .. } => error_kind(source),
    }
}

/// One-line `key=value` rendering of an error.
pub fn error_line(e: &Error) -> String {
    let mut out = format!("error kind={}", error_kind(e));
    let mut inner = e;
    if let Error::Trial { trial, source } = e {
        out.push_str(&format!(" trial={trial:?}"));
        inner = source;
    }
    if let Error::Validation { field, .. } = inner {
        out.push_str(&format!(" field={field}"));
    }
    let msg = inner
        .to_string()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ");
    out.push_str(&format!(" message={msg:?}"));
    out
}

/// Files written by a command and its console report.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub text: String,
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = out_path(dir, name)?;
    fs::write(&p, text)?;
    Ok(p)
}

fn plot_records(
    dir: &Path,
    stem: &str,
    s: &Scenario,
    records: &[MetricsRecord],
) -> Result<Vec<PathBuf>> {
    let maps: Vec<(String, Map)> = match s.kind {
        ScenarioKind::PlanOffline | ScenarioKind::PlanOnline => s.maps()?,
        ScenarioKind::WallCollision | ScenarioKind::PoleCollision => {
            vec![("-".into(), collision_arena(s.kind).0)]
        }
        _ => return Ok(Vec::new()),
    };
    let mut files = Vec::new();
    for (i, (name, map)) in maps.iter().enumerate() {
        let paths: Vec<(String, Vec<[f64; 2]>)> = records
            .iter()
            .filter(|r| &r.map == name && !r.path.is_empty())
            .map(|r| (r.label.clone(), r.path.clone()))
            .collect();
        let file = if maps.len() == 1 {
            format!("{stem}.svg")
        } else {
            format!("{stem}_map{i}.svg")
        };
        files.push(write_text(dir, &file, &svg_plot(map, &paths))?);
    }
    Ok(files)
}

fn finish(
    cfg: &RunConfig,
    stem: &str,
    records: &[MetricsRecord],
    aggs: &[Aggregate],
) -> Result<Report> {
    let dir = cfg.out_dir();
    let mut files = write_run(&dir, stem, cfg, records, aggs)?;
    if cfg.plot {
        files.extend(plot_records(&dir, stem, &cfg.scenario, records)?);
    }
    let failed = records.iter().filter(|r| !r.success).count();
    let mut text = format_table(aggs);
    if failed > 0 {
        text.push_str(&format!(
            "{failed} of {} trials unsuccessful\n",
            records.len()
        ));
    }
    Ok(Report { files, text })
}

/// Run one scenario and write its artifacts.
pub fn cmd_run(cfg: &RunConfig) -> Result<Report> {
    let mut s = cfg.scenario.clone();
    if s.kind == ScenarioKind::Drop {
        s.keep_traces = true;
    }
    let (records, aggs) = run_batch(&s, &cfg.sim())?;
    let stem = s.kind.name();
    let mut report = finish(cfg, stem, &records, &aggs)?;
    if s.kind == ScenarioKind::Drop {
        let dir = cfg.out_dir();
        for r in records.iter().filter(|r| r.trial == 0) {
            let mut buf = Vec::new();
            write_trace_csv(&r.trace, &mut buf)?;
            let name = format!("{stem}_{}_{}m_trace.csv", r.variant, r.param);
            report
                .files
                .push(write_text(&dir, &name, &String::from_utf8_lossy(&buf))?);
            report.text.push_str(&format!(
                "{} {} m: peak acceleration {:.1} m/s^2\n",
                r.variant, r.param, r.peak_accel
            ));
        }
    }
    Ok(report)
}

/// Benchmark suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Experimental,
    Cluttered,
    Online,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Experimental => "experimental",
            Suite::Cluttered => "cluttered",
            Suite::Online => "online",
        }
    }

    pub fn scenario(&self) -> Scenario {
        match self {
            Suite::Experimental => Scenario::preset(ScenarioKind::PlanOffline),
            Suite::Cluttered => Scenario::cluttered(),
            Suite::Online => Scenario::preset(ScenarioKind::PlanOnline),
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "experimental" => Ok(Suite::Experimental),
            "cluttered" => Ok(Suite::Cluttered),
            "online" => Ok(Suite::Online),
            _ => Err(Error::validation("suite", format!("unknown suite `{s}`"))),
        }
    }
}

/// Run a benchmark suite; `cfg.scenario` already holds the suite preset.
pub fn cmd_bench(suite: Suite, cfg: &RunConfig) -> Result<Report> {
    let (records, aggs) = run_batch(&cfg.scenario, &cfg.sim())?;
    finish(cfg, &format!("bench_{}", suite.name()), &records, &aggs)
}

/// Generate a random map file.
pub fn cmd_map_gen(spec: &RandomMapSpec, seed: u64, dir: &Path, plot: bool) -> Result<Report> {
    let map = generate_random_map(spec, seed)?;
    let stem = format!("map_n{}_seed{seed}", spec.n_obstacles);
    let mut files = vec![write_text(dir, &format!("{stem}.toml"), &map.to_toml())?];
    if plot {
        files.push(write_text(
            dir,
            &format!("{stem}.svg"),
            &svg_plot(&map, &[]),
        )?);
    }
    Ok(Report {
        text: map_summary(&map),
        files,
    })
}

pub fn map_summary(map: &Map) -> String {
    let s = map.bounds.size();
    format!(
        "{:.1} x {:.1} m, {} obstacles, {} walls, start [{:.2}, {:.2}], goal [{:.2}, {:.2}]\n",
        s.x,
        s.y,
        map.obstacles.len(),
        map.walls.len(),
        map.start.x,
        map.start.y,
        map.goal.x,
        map.goal.y
    )
}

/// Horizontal path from a trace CSV (`t,x,y,...`).
pub fn read_trace_path(text: &str) -> Result<Vec<[f64; 2]>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty trace".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Parse(format!("trace has no `{name}` column")))
    };
    let (ix, iy) = (col("x")?, col("y")?);
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let get = |k: usize| -> Result<f64> {
                f.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("trace line {}: bad number", i + 2)))
            };
            Ok([get(ix)?, get(iy)?])
        })
        .collect()
}

/// Plot a trace over a map.
pub fn cmd_plot(trace: &Path, map: &Map, dir: &Path) -> Result<Report> {
    let text =
        fs::read_to_string(trace).map_err(|e| Error::Io(format!("{}: {e}", trace.display())))?;
    let path = read_trace_path(&text)?;
    let stem = trace
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace");
    let file = write_text(
        dir,
        &format!("{stem}.svg"),
        &svg_plot(map, &[(stem.to_string(), path)]),
    )?;
    Ok(Report {
        files: vec![file],
        text: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_is_deep() {
        let mut a: Table = "[x]\na = 1\nb = 2".parse().unwrap();
        merge(&mut a, "[x]\nb = 3".parse().unwrap());
        assert_eq!(a["x"]["a"].as_integer(), Some(1));
        assert_eq!(a["x"]["b"].as_integer(), Some(3));
    }

    #[test]
    fn error_line_is_one_line() {
        let e = Error::validation("mass", "must be > 0").in_trial("drop #3");
        let line = error_line(&e);
        assert!(!line.contains('\n'));
        assert!(line.starts_with("error kind=validation"));
        assert!(line.contains("field=mass"));
    }

    #[test]
    fn trace_path_reads_xy() {
        let p = read_trace_path("t,x,y,z\n0,1,2,3\n0.1,4,5,6\n").unwrap();
        assert_eq!(p, vec![[1.0, 2.0], [4.0, 5.0]]);
    }
}
