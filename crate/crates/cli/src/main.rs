use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crowdsched::baselines::KwtaConfig;
use crowdsched::experiment::{compare, group_plan, run_experiment, write_outputs, ExperimentPlan, ResultTable};
use crowdsched::scenario::{generate, load, save, ScenarioFile, ScenarioSpec};
use crowdsched::sim::{self, Algorithm, MetricsLog, SimConfig};

#[derive(Parser)]
#[command(name = "crowdsched", version)]
#[command(about = "Online scheduling of UAVs, workers and charging vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file from a preset
    Generate {
        /// Preset name, e.g. Random_1
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override every agent's communication radius
        #[arg(long)]
        radius: Option<f64>,
        /// Output file (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one scenario with one algorithm
    Run {
        /// Preset name or path to a scenario file
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "paln")]
        algorithm: Algorithm,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        sim: SimArgs,
        /// Write the metrics log as JSON here
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a JSON-lines state trace here
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an experiment plan or one of the predefined groups
    Experiment {
        /// Plan file (JSON)
        #[arg(long, conflicts_with = "group")]
        plan: Option<PathBuf>,
        /// Predefined group 1..=6
        #[arg(long)]
        group: Option<u8>,
        /// Algorithms for --group; repeat the flag for several
        #[arg(long = "algorithm", default_values = ["paln", "raln", "greedy", "kwta"])]
        algorithms: Vec<Algorithm>,
        /// Seeds for --group, as `a..b` or a comma list
        #[arg(long, default_value = "0..10", value_parser = parse_seeds)]
        seeds: Seeds,
        /// Output directory for results.csv, manifest.json and run logs
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired comparison of two algorithms in a results table
    Compare {
        /// results.csv written by `experiment`
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        baseline: Algorithm,
        #[arg(long)]
        candidate: Algorithm,
        /// Write the comparison as JSON here (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimArgs {
    /// Minutes between decisions
    #[arg(long, default_value_t = 5.0)]
    interval: f64,
    /// Simulated minutes
    #[arg(long, default_value_t = 180.0)]
    limit_time: f64,
    /// Override every agent's communication radius
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 200)]
    max_rounds: u32,
    #[arg(long, default_value_t = 3)]
    k1: usize,
    #[arg(long, default_value_t = 3)]
    k2: usize,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = |e: std::num::ParseIntError| format!("bad seed list `{s}`: {e}");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (a.trim().parse::<u64>().map_err(bad)?, b.trim().parse::<u64>().map_err(bad)?);
        if a >= b {
            return Err(format!("empty seed range `{s}`"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',').map(|p| p.trim().parse().map_err(bad)).collect::<Result<_, _>>().map(Seeds)
}

/// A preset name is generated with `seed`; anything else is read as a file.
fn resolve_scenario(name: &str, seed: u64) -> Result<ScenarioFile> {
    if let Some(spec) = ScenarioSpec::by_name(name) {
        return Ok(generate(&spec.with_seed(seed))?);
    }
    load(name).with_context(|| format!("loading scenario `{name}`"))
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn summary(log: &MetricsLog) -> String {
    let rate = log.completion_rate.map_or("n/a".to_string(), |r| format!("{:.2}%", r * 100.0));
    let eps = log.mean_epsilon().map_or("n/a".to_string(), |e| format!("{e:.4}"));
    format!(
        "{} {}: completed {}/{} ({rate}), decision {:.4} s, travel {:.2} km, epsilon {eps}, non-converged epochs {}",
        log.scenario,
        log.config.algorithm,
        log.completed,
        log.total_tasks,
        log.mean_decision_secs(),
        log.mean_travel_km(),
        log.convergence_failures(),
    )
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { scenario, seed, radius, out } => {
            let spec = ScenarioSpec::by_name(&scenario).with_context(|| format!("no preset named `{scenario}`"))?;
            let mut file = generate(&spec.with_seed(seed))?;
            if let Some(r) = radius {
                file = file.with_radius(r);
                file.validate()?;
            }
            match out {
                Some(p) => save(&file, &p).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{}", file.to_json()?),
            }
        }
        Command::Run { scenario, algorithm, seed, sim: a, out, trace } => {
            let mut file = resolve_scenario(&scenario, seed)?;
            if let Some(r) = a.radius {
                file = file.with_radius(r);
                file.validate()?;
            }
            let config = SimConfig {
                interval: a.interval,
                limit_time: a.limit_time,
                max_rounds: a.max_rounds,
                seed,
                algorithm,
                kwta: KwtaConfig { k1: a.k1, k2: a.k2 },
                ..SimConfig::default()
            };
            let log = match trace {
                Some(p) => {
                    let f = fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    let mut w = BufWriter::new(f);
                    let log = sim::run_traced(&file, &config, &mut w)?;
                    w.flush()?;
                    log
                }
                None => sim::run(&file, &config)?,
            };
            if let Some(p) = out {
                write_json(Some(&p), &log)?;
            }
            println!("{}", summary(&log));
        }
        Command::Experiment { plan, group, algorithms, seeds, out } => {
            let plan = match (plan, group) {
                (Some(p), _) => ExperimentPlan::load(&p).with_context(|| format!("reading plan {}", p.display()))?,
                (None, Some(g)) => group_plan(g, &algorithms, &seeds.0)?,
                (None, None) => bail!("one of --plan or --group is required"),
            };
            let table = run_experiment(&plan, Some(&out.join("runs")))?;
            write_outputs(&plan, &table, &out)?;
            let mut stdout = io::stdout().lock();
            for agg in table.aggregates() {
                let rate = agg.completion_rate.map_or("n/a".into(), |s| format!("{:.2}% ± {:.2}", s.mean * 100.0, s.std * 100.0));
                let secs = agg.mean_decision_time_s.map_or("n/a".into(), |s| format!("{:.4} s", s.mean));
                writeln!(
                    stdout,
                    "{} {} interval {} limit {} radius {}: {rate}, decision {secs}, runs {}, errors {}",
                    agg.scenario,
                    agg.algorithm,
                    agg.interval,
                    agg.limit_time,
                    agg.radius.map_or("-".into(), |r| r.to_string()),
                    agg.runs,
                    agg.errors,
                )?;
            }
            for row in table.errors() {
                eprintln!("{} {} seed {}: {}", row.scenario, row.algorithm, row.seed, row.error.as_deref().unwrap_or(""));
            }
        }
        Command::Compare { table, baseline, candidate, out } => {
            let t = ResultTable::load_csv(&table).with_context(|| format!("reading {}", table.display()))?;
            let c = compare(&t, baseline, candidate)?;
            write_json(out.as_deref(), &c)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap().0, vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 9,1").unwrap().0, vec![4, 9, 1]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
