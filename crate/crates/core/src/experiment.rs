//! Experiment plans, result tables and paired comparisons.
//!
//! A plan is a list of cells; each cell expands to one run per seed. A run
//! that fails (unreadable scenario file, invalid configuration) becomes an
//! error row and the remaining runs go ahead.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::KwtaConfig;
use crate::error::{Error, Result};
use crate::scenario::{generate, load, ScenarioFile, ScenarioSpec};
use crate::sim::{run, Algorithm, MetricsLog, SimConfig};

/// Where a cell's scenario comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioRef {
    /// A `Random_n` preset, regenerated for every seed.
    Preset(String),
    /// A generator spec, regenerated for every seed.
    Spec(ScenarioSpec),
    /// A fixed scenario file; the seed only drives the scheduler.
    File(PathBuf),
}

impl ScenarioRef {
    pub fn label(&self) -> String {
        match self {
            ScenarioRef::Preset(name) => name.clone(),
            ScenarioRef::Spec(spec) => spec.name.clone(),
            ScenarioRef::File(path) => path.display().to_string(),
        }
    }

    fn resolve(&self, seed: u64) -> Result<ScenarioFile> {
        match self {
            ScenarioRef::Preset(name) => {
                let spec = ScenarioSpec::by_name(name)
                    .ok_or_else(|| Error::InvalidScenario(format!("no preset named `{name}`")))?;
                generate(&spec.with_seed(seed))
            }
            ScenarioRef::Spec(spec) => generate(&spec.clone().with_seed(seed)),
            ScenarioRef::File(path) => load(path),
        }
    }
}

fn default_interval() -> f64 {
    5.0
}
fn default_limit_time() -> f64 {
    180.0
}
fn default_max_rounds() -> u32 {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: ScenarioRef,
    pub algorithm: Algorithm,
    /// Communication radius applied to every agent, if set.
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default = "default_interval")]
    pub interval: f64,
    #[serde(default = "default_limit_time")]
    pub limit_time: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default)]
    pub kwta: KwtaConfig,
}

impl Cell {
    pub fn new(scenario: ScenarioRef, algorithm: Algorithm, seeds: Vec<u64>) -> Self {
        Self {
            scenario,
            algorithm,
            radius: None,
            interval: default_interval(),
            limit_time: default_limit_time(),
            seeds,
            max_rounds: default_max_rounds(),
            kwta: KwtaConfig::default(),
        }
    }

    fn config(&self, seed: u64) -> SimConfig {
        SimConfig {
            interval: self.interval,
            limit_time: self.limit_time,
            max_rounds: self.max_rounds,
            seed,
            algorithm: self.algorithm,
            kwta: self.kwta,
            ..SimConfig::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub cells: Vec<Cell>,
}

impl ExperimentPlan {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Structural checks. Scenario files are only opened when a cell runs,
    /// so a missing file shows up as an error row rather than here.
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::Config("experiment plan has no cells".into()));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.seeds.is_empty() {
                return Err(Error::Config(format!("cell {i}: seeds list is empty")));
            }
            if let Some(r) = cell.radius {
                if !(r.is_finite() && r > 0.0) {
                    return Err(Error::Config(format!("cell {i}: radius must be positive, got {r}")));
                }
            }
            match &cell.scenario {
                ScenarioRef::Preset(name) if ScenarioSpec::by_name(name).is_none() => {
                    return Err(Error::Config(format!("cell {i}: no preset named `{name}`")));
                }
                ScenarioRef::Spec(spec) => spec.validate()?,
                _ => {}
            }
            cell.config(0).validate().map_err(|e| Error::Config(format!("cell {i}: {e}")))?;
        }
        Ok(())
    }
}

/// The plans behind the six experiment groups, restricted to the random
/// presets. Each entry of `algorithms` gets its own copy of every cell.
pub fn group_plan(group: u8, algorithms: &[Algorithm], seeds: &[u64]) -> Result<ExperimentPlan> {
    let preset = |n: usize| ScenarioRef::Preset(format!("Random_{n}"));
    let presets = |ns: &[usize]| ns.iter().map(|&n| (preset(n), None, 5.0, 180.0)).collect::<Vec<_>>();
    let variants: Vec<(ScenarioRef, Option<f64>, f64, f64)> = match group {
        1 => [5.0, 10.0, 15.0].iter().map(|&i| (preset(1), None, i, 180.0)).collect(),
        2 => [120.0, 180.0, 240.0].iter().map(|&l| (preset(1), None, 5.0, l)).collect(),
        3 => presets(&[1, 2, 3, 4, 5, 6, 7, 8, 9]),
        4 => presets(&[1, 10, 11, 12, 13, 14, 15, 16, 17]),
        5 => presets(&[1, 18, 19, 20, 21, 22, 23, 24, 25, 26, 27]),
        6 => [6.0, 8.0, 10.0].iter().map(|&r| (preset(1), Some(r), 5.0, 180.0)).collect(),
        _ => return Err(Error::Config(format!("no experiment group {group}; expected 1..=6"))),
    };
    let mut cells = Vec::new();
    for (scenario, radius, interval, limit_time) in variants {
        for &algorithm in algorithms {
            cells.push(Cell {
                radius,
                interval,
                limit_time,
                ..Cell::new(scenario.clone(), algorithm, seeds.to_vec())
            });
        }
    }
    Ok(ExperimentPlan { name: format!("group-{group}"), cells })
}

/// One run. `error` is set when the run could not be carried out, in which
/// case the metric columns are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub interval: f64,
    pub limit_time: f64,
    pub radius: Option<f64>,
    pub completion_rate: Option<f64>,
    pub mean_decision_time_s: Option<f64>,
    pub mean_travel_km: Option<f64>,
    pub mean_epsilon: Option<f64>,
    pub convergence_failures: Option<usize>,
    /// Matches formed over all epochs.
    pub matches: Option<usize>,
    /// Best achievable matches over all epochs.
    pub optimal_matches: Option<usize>,
    /// Mean over epochs of matched tasks minus summed task rewards.
    pub mean_gap: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    fn key(&self) -> RowKey {
        RowKey {
            scenario: self.scenario.clone(),
            interval: self.interval.to_bits(),
            limit_time: self.limit_time.to_bits(),
            radius: self.radius.map(f64::to_bits),
            seed: self.seed,
        }
    }

    fn empty(cell: &Cell, seed: u64) -> Self {
        Self {
            scenario: cell.scenario.label(),
            algorithm: cell.algorithm,
            seed,
            interval: cell.interval,
            limit_time: cell.limit_time,
            radius: cell.radius,
            completion_rate: None,
            mean_decision_time_s: None,
            mean_travel_km: None,
            mean_epsilon: None,
            convergence_failures: None,
            matches: None,
            optimal_matches: None,
            mean_gap: None,
            error: None,
        }
    }

    fn failed(cell: &Cell, seed: u64, err: &Error) -> Self {
        Self { error: Some(err.to_string()), ..Self::empty(cell, seed) }
    }

    fn from_log(cell: &Cell, seed: u64, log: &MetricsLog) -> Self {
        let (matches, optimal) = log.match_totals();
        let gaps: Vec<f64> = log.epochs.iter().map(|e| e.gap.gap).collect();
        Self {
            completion_rate: log.completion_rate,
            mean_decision_time_s: Some(log.mean_decision_secs()),
            mean_travel_km: Some(log.mean_travel_km()),
            mean_epsilon: log.mean_epsilon(),
            convergence_failures: Some(log.convergence_failures()),
            matches: Some(matches),
            optimal_matches: Some(optimal),
            mean_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
            ..Self::empty(cell, seed)
        }
    }
}

/// Everything identifying a run apart from the algorithm.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey {
    scenario: String,
    interval: u64,
    limit_time: u64,
    radius: Option<u64>,
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }
}

/// Seeds of one (scenario, algorithm, setting) combined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub interval: f64,
    pub limit_time: f64,
    pub radius: Option<f64>,
    pub runs: usize,
    pub errors: usize,
    pub completion_rate: Option<Stat>,
    pub mean_decision_time_s: Option<Stat>,
    pub mean_travel_km: Option<Stat>,
    pub mean_epsilon: Option<Stat>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn errors(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    /// Aggregates in first-appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<(RowKey, Algorithm)> = Vec::new();
        let mut groups: BTreeMap<(RowKey, Algorithm), Vec<&ResultRow>> = BTreeMap::new();
        for row in &self.rows {
            let key = (RowKey { seed: 0, ..row.key() }, row.algorithm);
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(row);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let first = rows[0];
                let stat = |f: fn(&ResultRow) -> Option<f64>| {
                    Stat::of(&rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
                };
                Aggregate {
                    scenario: first.scenario.clone(),
                    algorithm: first.algorithm,
                    interval: first.interval,
                    limit_time: first.limit_time,
                    radius: first.radius,
                    runs: rows.len(),
                    errors: rows.iter().filter(|r| r.error.is_some()).count(),
                    completion_rate: stat(|r| r.completion_rate),
                    mean_decision_time_s: stat(|r| r.mean_decision_time_s),
                    mean_travel_km: stat(|r| r.mean_travel_km),
                    mean_epsilon: stat(|r| r.mean_epsilon),
                }
            })
            .collect()
    }

    /// CSV with a leading `#` comment line describing the host.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# host: {}", host_description())?;
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(fs::File::open(path)?)
    }
}

/// CPU model, core count and platform, for the header of result files.
pub fn host_description() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu}; {cores} logical cores; {}-{}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Runs every cell of `plan` serially. With `artifacts` set, each run's
/// metrics log is written there as JSON.
pub fn run_experiment(plan: &ExperimentPlan, artifacts: Option<&Path>) -> Result<ResultTable> {
    plan.validate()?;
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir)?;
    }
    let mut table = ResultTable::default();
    for (i, cell) in plan.cells.iter().enumerate() {
        for &seed in &cell.seeds {
            let outcome = cell.scenario.resolve(seed).and_then(|scenario| {
                let scenario = match cell.radius {
                    Some(r) => scenario.with_radius(r),
                    None => scenario,
                };
                run(&scenario, &cell.config(seed))
            });
            let row = match outcome {
                Ok(log) => {
                    if let Some(dir) = artifacts {
                        let name = format!("cell{i:03}-{}-seed{seed}.json", cell.algorithm);
                        fs::write(dir.join(name), serde_json::to_vec(&log)?)?;
                    }
                    ResultRow::from_log(cell, seed, &log)
                }
                Err(e) => ResultRow::failed(cell, seed, &e),
            };
            table.rows.push(row);
        }
    }
    Ok(table)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: ExperimentPlan,
    pub version: String,
    pub host: String,
    pub rows: usize,
    pub errors: usize,
    pub aggregates: Vec<Aggregate>,
}

/// Writes `results.csv` and `manifest.json` into `dir`.
pub fn write_outputs(plan: &ExperimentPlan, table: &ResultTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    table.write_csv(fs::File::create(dir.join("results.csv"))?)?;
    let manifest = Manifest {
        plan: plan.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        host: host_description(),
        rows: table.rows.len(),
        errors: table.errors().count(),
        aggregates: table.aggregates(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// One paired run of two algorithms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDelta {
    pub scenario: String,
    pub seed: u64,
    pub interval: f64,
    pub limit_time: f64,
    pub radius: Option<f64>,
    /// Candidate minus baseline completion rate, in percentage points.
    pub completion_pp: Option<f64>,
    /// Candidate decision time over baseline decision time.
    pub time_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: Algorithm,
    pub candidate: Algorithm,
    pub pairs: Vec<PairedDelta>,
    pub mean_completion_pp: Option<f64>,
    pub mean_time_ratio: Option<f64>,
}

/// Pairs successful runs of the two algorithms on identical settings and
/// seeds. Every run of either side must have a partner.
pub fn compare(table: &ResultTable, baseline: Algorithm, candidate: Algorithm) -> Result<Comparison> {
    let side = |alg: Algorithm| -> BTreeMap<RowKey, &ResultRow> {
        table.rows.iter().filter(|r| r.algorithm == alg && r.error.is_none()).map(|r| (r.key(), r)).collect()
    };
    let base = side(baseline);
    let cand = side(candidate);
    if base.is_empty() {
        return Err(Error::Unpaired(format!("no successful {baseline} runs")));
    }
    if let Some(k) = base.keys().find(|k| !cand.contains_key(k)).or_else(|| cand.keys().find(|k| !base.contains_key(k)))
    {
        return Err(Error::Unpaired(format!(
            "{} seed {} has no counterpart between {baseline} and {candidate}",
            k.scenario, k.seed
        )));
    }
    let pairs: Vec<PairedDelta> = base
        .iter()
        .map(|(k, b)| {
            let c = cand[k];
            let completion_pp = b.completion_rate.zip(c.completion_rate).map(|(b, c)| (c - b) * 100.0);
            let time_ratio = b
                .mean_decision_time_s
                .zip(c.mean_decision_time_s)
                .and_then(|(b, c)| (b > 0.0).then(|| c / b));
            PairedDelta {
                scenario: b.scenario.clone(),
                seed: b.seed,
                interval: b.interval,
                limit_time: b.limit_time,
                radius: b.radius,
                completion_pp,
                time_ratio,
            }
        })
        .collect();
    let mean_of = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(Comparison {
        baseline,
        candidate,
        mean_completion_pp: mean_of(pairs.iter().filter_map(|p| p.completion_pp).collect()),
        mean_time_ratio: mean_of(pairs.iter().filter_map(|p| p.time_ratio).collect()),
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alg: Algorithm, seed: u64, rate: f64, secs: f64) -> ResultRow {
        ResultRow {
            scenario: "Random_1".into(),
            algorithm: alg,
            seed,
            interval: 5.0,
            limit_time: 180.0,
            radius: None,
            completion_rate: Some(rate),
            mean_decision_time_s: Some(secs),
            mean_travel_km: Some(1.0),
            mean_epsilon: None,
            convergence_failures: Some(0),
            matches: Some(1),
            optimal_matches: Some(1),
            mean_gap: Some(0.0),
            error: None,
        }
    }

    #[test]
    fn stat_mean_and_sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert!((s.std - 2.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of(&[7.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn aggregates_over_five_seeds() {
        let rows = (0..5).map(|s| row(Algorithm::Paln, s, 0.5 + 0.1 * s as f64, 1.0)).collect();
        let agg = ResultTable { rows }.aggregates();
        assert_eq!(agg.len(), 1);
        let cr = agg[0].completion_rate.unwrap();
        assert_eq!(cr.n, 5);
        assert!((cr.mean - 0.7).abs() < 1e-12);
        assert!((cr.std - 0.025f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn compare_paired_deltas() {
        let table = ResultTable {
            rows: vec![
                row(Algorithm::Greedy, 0, 0.25, 2.0),
                row(Algorithm::Paln, 0, 0.75, 1.0),
                row(Algorithm::Greedy, 1, 0.5, 4.0),
                row(Algorithm::Paln, 1, 0.5, 1.0),
            ],
        };
        let c = compare(&table, Algorithm::Greedy, Algorithm::Paln).unwrap();
        assert_eq!(c.pairs.len(), 2);
        assert!((c.pairs[0].completion_pp.unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(c.pairs[1].completion_pp, Some(0.0));
        assert!((c.mean_completion_pp.unwrap() - 25.0).abs() < 1e-9);
        assert!((c.mean_time_ratio.unwrap() - 0.375).abs() < 1e-12);
    }

    #[test]
    fn compare_with_itself_is_zero() {
        let table = ResultTable { rows: (0..3).map(|s| row(Algorithm::Kwta, s, 0.3 * s as f64, 0.5)).collect() };
        let c = compare(&table, Algorithm::Kwta, Algorithm::Kwta).unwrap();
        assert!(c.pairs.iter().all(|p| p.completion_pp == Some(0.0) && p.time_ratio == Some(1.0)));
    }

    #[test]
    fn compare_rejects_unpaired() {
        let table = ResultTable { rows: vec![row(Algorithm::Greedy, 0, 0.2, 1.0), row(Algorithm::Paln, 1, 0.5, 1.0)] };
        assert!(matches!(compare(&table, Algorithm::Greedy, Algorithm::Paln), Err(Error::Unpaired(_))));
        assert!(matches!(compare(&table, Algorithm::Raln, Algorithm::Paln), Err(Error::Unpaired(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = vec![row(Algorithm::Paln, 3, 0.875, 0.001)];
        rows.push(ResultRow { radius: Some(6.0), ..row(Algorithm::Greedy, 3, 0.1875, 0.0) });
        let mut failed = row(Algorithm::Kwta, 4, 0.0, 0.0);
        failed.completion_rate = None;
        failed.error = Some("missing, \"quoted\" file".into());
        rows.push(failed);
        let table = ResultTable { rows };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"# host: "));
        assert_eq!(ResultTable::read_csv(buf.as_slice()).unwrap(), table);
    }

    #[test]
    fn group_plans() {
        let algs = [Algorithm::Paln];
        let g1 = group_plan(1, &algs, &[0]).unwrap();
        assert_eq!(g1.cells.len(), 3);
        assert_eq!(g1.cells.iter().map(|c| c.interval).collect::<Vec<_>>(), vec![5.0, 10.0, 15.0]);
        assert_eq!(group_plan(6, &algs, &[0]).unwrap().cells[0].radius, Some(6.0));
        assert_eq!(group_plan(5, &[Algorithm::Paln, Algorithm::Greedy], &[0]).unwrap().cells.len(), 22);
        for g in 1..=6 {
            group_plan(g, &algs, &[0]).unwrap().validate().unwrap();
        }
        assert!(group_plan(7, &algs, &[0]).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan::default().validate().is_err());
        let mut cell = Cell::new(ScenarioRef::Preset("Random_1".into()), Algorithm::Paln, vec![]);
        let plan = |c: &Cell| ExperimentPlan { name: "p".into(), cells: vec![c.clone()] };
        assert!(plan(&cell).validate().is_err());
        cell.seeds = vec![1];
        plan(&cell).validate().unwrap();
        cell.scenario = ScenarioRef::Preset("Random_99".into());
        assert!(plan(&cell).validate().is_err());
        cell.scenario = ScenarioRef::Preset("Random_1".into());
        cell.interval = 7.0;
        assert!(plan(&cell).validate().is_err());
    }
}
