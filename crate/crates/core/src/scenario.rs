//! Scenario specs, seeded generation, the built-in `Random_N` presets, and
//! the versioned JSON scenario file.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{Bounds, ChargePoint, OnlineWindow, Position, TaskPoint, Uav, Vehicle, Worker};

pub const SCENARIO_VERSION: u32 = 1;

/// A fixed value or an inclusive `[lo, hi]` range to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValueRange {
    Fixed(f64),
    Range([f64; 2]),
}

impl ValueRange {
    pub fn lo(&self) -> f64 {
        match *self {
            ValueRange::Fixed(v) => v,
            ValueRange::Range([lo, _]) => lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match *self {
            ValueRange::Fixed(v) => v,
            ValueRange::Range([_, hi]) => hi,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ValueRange::Fixed(v) => v,
            ValueRange::Range([lo, hi]) if lo == hi => lo,
            ValueRange::Range([lo, hi]) => rng.gen_range(lo..=hi),
        }
    }

    fn check(&self, field: &str) -> Result<()> {
        let (lo, hi) = (self.lo(), self.hi());
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::invariant("spec", field, format!("needs lo <= hi, got [{lo}, {hi}]")));
        }
        if lo <= 0.0 {
            return Err(Error::invariant("spec", field, "must be positive"));
        }
        Ok(())
    }
}

fn default_radius() -> f64 {
    8.0
}
fn default_uav_speed() -> f64 {
    1.0
}
fn default_worker_speed() -> f64 {
    0.5
}
fn default_vehicle_speed() -> f64 {
    0.8
}
fn default_full_power() -> f64 {
    30.0
}
fn default_limit_time() -> f64 {
    180.0
}

/// Parameters of a randomly generated scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub width: f64,
    pub height: f64,
    pub tasks: usize,
    pub charges: usize,
    pub workers: usize,
    pub uavs: usize,
    pub vehicles: usize,
    /// Length of every agent's online window, minutes.
    pub online_time: f64,
    /// Horizon the windows are placed in, minutes.
    #[serde(default = "default_limit_time")]
    pub limit_time: f64,
    pub task_cost: ValueRange,
    pub charging_power: ValueRange,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_uav_speed")]
    pub uav_speed: f64,
    #[serde(default = "default_worker_speed")]
    pub worker_speed: f64,
    #[serde(default = "default_vehicle_speed")]
    pub vehicle_speed: f64,
    #[serde(default = "default_full_power")]
    pub full_power: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Rows of the built-in preset table:
/// (area, tasks, charges, online, (workers, uavs, vehicles), cost, charging power).
type PresetRow = ((f64, f64), usize, usize, f64, (usize, usize, usize), ValueRange, ValueRange);

const fn fixed(v: f64) -> ValueRange {
    ValueRange::Fixed(v)
}
const fn range(lo: f64, hi: f64) -> ValueRange {
    ValueRange::Range([lo, hi])
}

const PRESETS: [PresetRow; 27] = [
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((20.0, 20.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((40.0, 40.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 60, 20, 60.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 100, 20, 60.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 15, 60.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 25, 60.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 40.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 80.0, (50, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (30, 20, 10), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (70, 40, 30), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (30, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (70, 30, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 20, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 40, 20), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 10), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 30), fixed(3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(2.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(4.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), range(2.0, 3.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), range(3.0, 4.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), range(4.0, 5.0), fixed(10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), fixed(8.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), fixed(12.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), range(6.0, 8.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), range(8.0, 10.0)),
    ((30.0, 30.0), 80, 20, 60.0, (50, 30, 20), fixed(3.0), range(10.0, 12.0)),
];

impl ScenarioSpec {
    /// Preset `Random_n` for `n` in `1..=27`.
    pub fn random(n: usize) -> Result<Self> {
        let row = n
            .checked_sub(1)
            .and_then(|i| PRESETS.get(i))
            .ok_or_else(|| Error::InvalidScenario(format!("no preset Random_{n}; expected 1..=27")))?;
        let ((width, height), tasks, charges, online_time, (workers, uavs, vehicles), task_cost, charging_power) =
            *row;
        Ok(Self {
            name: format!("Random_{n}"),
            width,
            height,
            tasks,
            charges,
            workers,
            uavs,
            vehicles,
            online_time,
            limit_time: default_limit_time(),
            task_cost,
            charging_power,
            radius: default_radius(),
            uav_speed: default_uav_speed(),
            worker_speed: default_worker_speed(),
            vehicle_speed: default_vehicle_speed(),
            full_power: default_full_power(),
            seed: 0,
        })
    }

    /// Resolves `Random_N` (case-insensitive) to a preset.
    pub fn by_name(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        let n = lower.strip_prefix("random_")?.parse().ok()?;
        Self::random(n).ok()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invariant("spec", field, format!("must be positive, got {v}")))
            }
        };
        if !(self.width >= 1.0 && self.height >= 1.0) || !self.width.is_finite() || !self.height.is_finite() {
            return Err(Error::invariant("spec", "width/height", "area must be at least 1x1"));
        }
        positive("online_time", self.online_time)?;
        positive("limit_time", self.limit_time)?;
        positive("radius", self.radius)?;
        positive("uav_speed", self.uav_speed)?;
        positive("worker_speed", self.worker_speed)?;
        positive("vehicle_speed", self.vehicle_speed)?;
        positive("full_power", self.full_power)?;
        if self.online_time > self.limit_time {
            return Err(Error::invariant("spec", "online_time", "exceeds limit_time"));
        }
        self.task_cost.check("task_cost")?;
        self.charging_power.check("charging_power")?;
        if self.uavs > 0 && self.charges == 0 {
            return Err(Error::InvalidScenario(
                "UAVs need at least one charge point to return to".into(),
            ));
        }
        Ok(())
    }
}

/// A fully materialized scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub version: u32,
    pub name: String,
    /// Parameters the entities were generated from, when generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ScenarioSpec>,
    pub bounds: Bounds,
    pub uavs: Vec<Uav>,
    pub workers: Vec<Worker>,
    pub vehicles: Vec<Vehicle>,
    pub tasks: Vec<TaskPoint>,
    pub charge_points: Vec<ChargePoint>,
}

fn window<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> OnlineWindow {
    let slack = spec.limit_time - spec.online_time;
    let up = if slack > 0.0 { rng.gen_range(0.0..=slack) } else { 0.0 };
    OnlineWindow::new(up, up + spec.online_time)
}

/// Draws a scenario from `spec`; identical specs give identical files.
pub fn generate(spec: &ScenarioSpec) -> Result<ScenarioFile> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let pos = |rng: &mut ChaCha8Rng| Position::new(rng.gen_range(0.0..=w), rng.gen_range(0.0..=h));

    let tasks = (0..spec.tasks as u32)
        .map(|id| {
            let loc = pos(&mut rng);
            TaskPoint { id, loc, cost_power: spec.task_cost.sample(&mut rng), completed: false }
        })
        .collect();
    let charge_points = (0..spec.charges as u32)
        .map(|id| ChargePoint { id, loc: pos(&mut rng) })
        .collect();
    let workers = (0..spec.workers as u32)
        .map(|id| {
            let loc = pos(&mut rng);
            Worker { id, loc, speed: spec.worker_speed, radius: spec.radius, window: window(spec, &mut rng) }
        })
        .collect();
    let uavs = (0..spec.uavs as u32)
        .map(|id| {
            let loc = pos(&mut rng);
            Uav {
                id,
                loc,
                speed: spec.uav_speed,
                full_power: spec.full_power,
                power: spec.full_power,
                radius: spec.radius,
                window: window(spec, &mut rng),
            }
        })
        .collect();
    let vehicles = (0..spec.vehicles as u32)
        .map(|id| {
            let loc = pos(&mut rng);
            let charge_power = spec.charging_power.sample(&mut rng);
            Vehicle { id, loc, speed: spec.vehicle_speed, radius: spec.radius, charge_power, window: window(spec, &mut rng) }
        })
        .collect();

    Ok(ScenarioFile {
        version: SCENARIO_VERSION,
        name: spec.name.clone(),
        spec: Some(spec.clone()),
        bounds: Bounds { width: w, height: h },
        uavs,
        workers,
        vehicles,
        tasks,
        charge_points,
    })
}

impl ScenarioFile {
    /// Sets every agent's communication radius.
    pub fn with_radius(mut self, radius: f64) -> Self {
        self.uavs.iter_mut().for_each(|a| a.radius = radius);
        self.workers.iter_mut().for_each(|a| a.radius = radius);
        self.vehicles.iter_mut().for_each(|a| a.radius = radius);
        if let Some(spec) = &mut self.spec {
            spec.radius = radius;
        }
        self
    }

    pub fn agent_count(&self) -> usize {
        self.uavs.len() + self.workers.len() + self.vehicles.len()
    }

    /// Checks every entity; the error names the first offender.
    pub fn validate(&self) -> Result<()> {
        if self.version != SCENARIO_VERSION {
            return Err(Error::Version { found: self.version, expected: SCENARIO_VERSION });
        }
        let b = self.bounds;
        if !(b.width.is_finite() && b.height.is_finite() && b.width >= 1.0 && b.height >= 1.0) {
            return Err(Error::invariant("bounds", "width/height", "area must be at least 1x1"));
        }
        let positive = |entity: &str, field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invariant(entity, field, format!("must be positive, got {v}")))
            }
        };
        let placed = |entity: &str, p: Position| {
            if b.contains(p) {
                Ok(())
            } else {
                Err(Error::invariant(entity, "loc", format!("({}, {}) lies outside the area", p.x, p.y)))
            }
        };
        let timed = |entity: &str, w: OnlineWindow| {
            if w.is_valid() {
                Ok(())
            } else {
                Err(Error::invariant(entity, "window", "needs 0 <= uptime < downtime"))
            }
        };
        let unique = |kind: &str, ids: &mut dyn Iterator<Item = u32>| {
            let mut seen = BTreeSet::new();
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::invariant(format!("{kind} {id}"), "id", "is duplicated"));
                }
            }
            Ok(())
        };
        unique("uav", &mut self.uavs.iter().map(|a| a.id))?;
        unique("worker", &mut self.workers.iter().map(|a| a.id))?;
        unique("vehicle", &mut self.vehicles.iter().map(|a| a.id))?;
        unique("task", &mut self.tasks.iter().map(|a| a.id))?;
        unique("charge point", &mut self.charge_points.iter().map(|a| a.id))?;

        for u in &self.uavs {
            let e = format!("uav {}", u.id);
            placed(&e, u.loc)?;
            positive(&e, "speed", u.speed)?;
            positive(&e, "radius", u.radius)?;
            positive(&e, "full_power", u.full_power)?;
            if !(u.power.is_finite() && u.power >= 0.0 && u.power <= u.full_power) {
                return Err(Error::invariant(
                    e,
                    "power",
                    format!("must lie in [0, full_power = {}], got {}", u.full_power, u.power),
                ));
            }
            timed(&e, u.window)?;
        }
        for w in &self.workers {
            let e = format!("worker {}", w.id);
            placed(&e, w.loc)?;
            positive(&e, "speed", w.speed)?;
            positive(&e, "radius", w.radius)?;
            timed(&e, w.window)?;
        }
        for v in &self.vehicles {
            let e = format!("vehicle {}", v.id);
            placed(&e, v.loc)?;
            positive(&e, "speed", v.speed)?;
            positive(&e, "radius", v.radius)?;
            positive(&e, "charge_power", v.charge_power)?;
            timed(&e, v.window)?;
        }
        for t in &self.tasks {
            let e = format!("task {}", t.id);
            placed(&e, t.loc)?;
            positive(&e, "cost_power", t.cost_power)?;
        }
        for c in &self.charge_points {
            placed(&format!("charge point {}", c.id), c.loc)?;
        }
        if !self.uavs.is_empty() && self.charge_points.is_empty() {
            return Err(Error::InvalidScenario(
                "UAVs need at least one charge point to return to".into(),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a scenario document.
    pub fn from_json(text: &str) -> Result<Self> {
        let parse_err = |e: serde_json::Error| Error::Parse { line: e.line(), column: e.column(), message: e.to_string() };
        let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        match raw.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCENARIO_VERSION) => {}
            Some(v) => return Err(Error::Version { found: v as u32, expected: SCENARIO_VERSION }),
            None => {
                return Err(Error::Parse { line: 1, column: 1, message: "missing integer field `version`".into() })
            }
        }
        let file: ScenarioFile = serde_json::from_str(text).map_err(parse_err)?;
        file.validate()?;
        Ok(file)
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    ScenarioFile::from_json(&fs::read_to_string(path)?)
}

pub fn save(file: &ScenarioFile, path: impl AsRef<Path>) -> Result<()> {
    file.validate()?;
    fs::write(path, file.to_json()? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_1_counts() {
        let f = generate(&ScenarioSpec::random(1).unwrap()).unwrap();
        assert_eq!(f.tasks.len(), 80);
        assert!(f.tasks.iter().all(|t| t.cost_power == 3.0));
        assert_eq!(f.charge_points.len(), 20);
        assert_eq!(f.agent_count(), 100);
        assert_eq!((f.workers.len(), f.uavs.len(), f.vehicles.len()), (50, 30, 20));
        assert!(f.vehicles.iter().all(|v| v.charge_power == 10.0));
        f.validate().unwrap();
    }

    #[test]
    fn random_22_costs_in_range() {
        let f = generate(&ScenarioSpec::random(22).unwrap().with_seed(4)).unwrap();
        assert!(f.tasks.iter().all(|t| (4.0..=5.0).contains(&t.cost_power)));
        let lo = f.tasks.iter().map(|t| t.cost_power).fold(f64::INFINITY, f64::min);
        let hi = f.tasks.iter().map(|t| t.cost_power).fold(0.0, f64::max);
        assert!(hi > lo);
    }

    #[test]
    fn presets_cover_table() {
        assert!(ScenarioSpec::random(0).is_err());
        assert!(ScenarioSpec::random(28).is_err());
        let r3 = ScenarioSpec::random(3).unwrap();
        assert_eq!((r3.width, r3.height), (40.0, 40.0));
        let r11 = ScenarioSpec::by_name("Random_11").unwrap();
        assert_eq!((r11.workers, r11.uavs, r11.vehicles), (70, 40, 30));
        assert_eq!(ScenarioSpec::random(27).unwrap().charging_power, ValueRange::Range([10.0, 12.0]));
        for n in 1..=27 {
            ScenarioSpec::random(n).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn windows_have_fixed_length() {
        let f = generate(&ScenarioSpec::random(1).unwrap().with_seed(8)).unwrap();
        for w in f.workers.iter().map(|w| w.window) {
            assert!((w.len() - 60.0).abs() < 1e-9);
            assert!(w.uptime >= 0.0 && w.downtime <= 180.0);
        }
    }

    #[test]
    fn same_seed_same_file() {
        let s = ScenarioSpec::random(5).unwrap().with_seed(99);
        assert_eq!(generate(&s).unwrap(), generate(&s).unwrap());
        assert_ne!(generate(&s).unwrap(), generate(&s.clone().with_seed(100)).unwrap());
    }

    #[test]
    fn uavs_without_charge_points_rejected() {
        let mut s = ScenarioSpec::random(1).unwrap();
        s.charges = 0;
        assert!(matches!(generate(&s), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn bad_ranges_rejected() {
        let mut s = ScenarioSpec::random(1).unwrap();
        s.task_cost = ValueRange::Range([5.0, 4.0]);
        assert!(matches!(s.validate(), Err(Error::Invariant { .. })));
    }

    #[test]
    fn value_range_json_forms() {
        let f: ValueRange = serde_json::from_str("3").unwrap();
        assert_eq!(f, ValueRange::Fixed(3.0));
        let r: ValueRange = serde_json::from_str("[4, 5]").unwrap();
        assert_eq!(r, ValueRange::Range([4.0, 5.0]));
    }

    #[test]
    fn quadrants_are_balanced() {
        let mut s = ScenarioSpec::random(1).unwrap().with_seed(1234);
        s.tasks = 10_000;
        let f = generate(&s).unwrap();
        let mut q = [0usize; 4];
        for t in &f.tasks {
            q[usize::from(t.loc.x >= 15.0) + 2 * usize::from(t.loc.y >= 15.0)] += 1;
        }
        for c in q {
            assert!((c as f64 - 2500.0).abs() <= 0.05 * 2500.0, "{q:?}");
        }
        let chi2: f64 = q.iter().map(|&c| (c as f64 - 2500.0).powi(2) / 2500.0).sum();
        // 3 degrees of freedom, 0.1% upper tail
        assert!(chi2 < 16.27, "{chi2}");
    }
}
