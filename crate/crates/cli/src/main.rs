use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpnav::harness::scenarios::{PlannerSpec, ScenarioKind};
use cpnav::vehicle::Variant;
use cpnav::world::{Map, RandomMapSpec};
use cpnav::{Error, Result};
use cpnav_cli::{
    cmd_bench, cmd_map_gen, cmd_plot, cmd_run, error_line, map_summary, parse_config,
    parse_config_with_base, Overrides, Report, Suite, DEFAULT_OUT, OUT_ENV,
};

#[derive(Parser)]
#[command(
    name = "cpnav",
    version,
    about = "Compliant-arm quadrotor simulator and planner benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $CPNAV_OUT, then cpnav_out).
    #[arg(long)]
    out: Option<String>,
    /// Write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Trials per configuration.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        planner: Option<String>,
        /// Drop height, m.
        #[arg(long)]
        height: Option<f64>,
        /// Number of map seeds for randomized maps.
        #[arg(long)]
        seeds: Option<u64>,
    },
    /// Run a benchmark suite: experimental, cluttered or online.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "cluttered")]
        suite: String,
        /// Number of map seeds.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        planner: Option<String>,
    },
    /// Generate or inspect maps.
    Map {
        /// Generate a random map.
        #[arg(long)]
        gen: bool,
        /// Number of obstacles.
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print a summary of this map file.
        #[arg(long)]
        show: Option<PathBuf>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        plot: bool,
    },
    /// Render a trace CSV as SVG.
    Plot {
        #[arg(long)]
        trace: PathBuf,
        /// Map file; defaults to the experimental map.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        out: Option<String>,
    },
}

fn parsed<T: std::str::FromStr<Err = Error>>(v: Option<String>) -> Result<Option<T>> {
    v.map(|s| s.parse()).transpose()
}

fn overrides(c: Common) -> Overrides {
    Overrides {
        seed: c.seed,
        out: c.out,
        plot: c.plot,
        trials: c.trials,
        ..Default::default()
    }
}

fn out_dir(flag: Option<String>) -> PathBuf {
    flag.or_else(|| std::env::var(OUT_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_OUT.into())
        .into()
}

fn execute(cmd: Command) -> Result<Report> {
    match cmd {
        Command::Run {
            common,
            scenario,
            variant,
            planner,
            height,
            seeds,
        } => {
            let path = common.config.clone();
            let ov = Overrides {
                scenario: parsed::<ScenarioKind>(scenario)?,
                variant: parsed::<Variant>(variant)?,
                planner: parsed::<PlannerSpec>(planner)?,
                height,
                seeds,
                ..overrides(common)
            };
            cmd_run(&parse_config(path.as_deref(), &ov)?)
        }
        Command::Bench {
            common,
            suite,
            seeds,
            planner,
        } => {
            let suite: Suite = suite.parse()?;
            let path = common.config.clone();
            let ov = Overrides {
                seeds,
                planner: parsed::<PlannerSpec>(planner)?,
                ..overrides(common)
            };
            let cfg = parse_config_with_base(path.as_deref(), &ov, Some(suite.scenario()))?;
            cmd_bench(suite, &cfg)
        }
        Command::Map {
            gen,
            n,
            seed,
            show,
            out,
            plot,
        } => match (gen, show) {
            (_, Some(p)) => Ok(Report {
                text: map_summary(&Map::load(&p)?),
                files: Vec::new(),
            }),
            (true, None) => {
                let spec = RandomMapSpec {
                    n_obstacles: n,
                    ..Default::default()
                };
                cmd_map_gen(&spec, seed, &out_dir(out), plot)
            }
            (false, None) => Err(Error::validation("map", "pass --gen or --show FILE")),
        },
        Command::Plot { trace, map, out } => {
            let map = match map {
                Some(p) => Map::load(&p)?,
                None => Map::experimental(),
            };
            cmd_plot(&trace, &map, &out_dir(out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(report) => {
            print!("{}", report.text);
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
