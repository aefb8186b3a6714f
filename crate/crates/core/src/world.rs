//! Domain model: agents, task and charge points, feasibility rules, and the
//! immutable per-epoch [`WorldSnapshot`] every scheduler decides from.
//!
//! Units are fixed across the crate: distance in km, time in minutes, speed
//! in km/min. A UAV's energy is expressed as the flight distance it has left,
//! and a vehicle's charging power as km of endurance restored per minute.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Moves at most `max_step` km toward `target`, stopping on arrival.
    /// Returns the new position and the distance actually covered.
    pub fn step_toward(self, target: Position, max_step: f64) -> (Position, f64) {
        let remaining = dis(self, target);
        if remaining <= max_step {
            (target, remaining)
        } else {
            let f = max_step / remaining;
            (
                Position::new(
                    self.x + (target.x - self.x) * f,
                    self.y + (target.y - self.y) * f,
                ),
                max_step,
            )
        }
    }
}

/// Straight-line distance in km.
pub fn dis(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Scenario area; positions live in `[0, width] x [0, height]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub width: f64,
    pub height: f64,
}

impl Bounds {
    pub fn contains(&self, p: Position) -> bool {
        p.is_finite() && (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }
}

/// Half-open online interval `[uptime, downtime)` in minutes since start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineWindow {
    pub uptime: f64,
    pub downtime: f64,
}

impl OnlineWindow {
    pub const fn new(uptime: f64, downtime: f64) -> Self {
        Self { uptime, downtime }
    }

    pub fn covers(&self, t: f64) -> bool {
        self.uptime <= t && t < self.downtime
    }

    pub fn len(&self) -> f64 {
        self.downtime - self.uptime
    }

    pub fn is_valid(&self) -> bool {
        self.uptime.is_finite()
            && self.downtime.is_finite()
            && self.uptime >= 0.0
            && self.uptime < self.downtime
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uav {
    pub id: u32,
    pub loc: Position,
    pub speed: f64,
    pub full_power: f64,
    pub power: f64,
    pub radius: f64,
    pub window: OnlineWindow,
}

impl Uav {
    pub fn deficit(&self) -> f64 {
        self.full_power - self.power
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: u32,
    pub loc: Position,
    pub speed: f64,
    pub radius: f64,
    pub window: OnlineWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub loc: Position,
    pub speed: f64,
    pub radius: f64,
    pub charge_power: f64,
    pub window: OnlineWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPoint {
    pub id: u32,
    pub loc: Position,
    pub cost_power: f64,
    #[serde(default)]
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargePoint {
    pub id: u32,
    pub loc: Position,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Uav,
    Worker,
    Vehicle,
}

/// Agent identity. The derived ordering (UAVs, then workers, then vehicles,
/// each by index) is the global order used for tie-breaking and for rng
/// consumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum AgentId {
    Uav(u32),
    Worker(u32),
    Vehicle(u32),
}

impl AgentId {
    pub fn kind(&self) -> AgentKind {
        match self {
            AgentId::Uav(_) => AgentKind::Uav,
            AgentId::Worker(_) => AgentKind::Worker,
            AgentId::Vehicle(_) => AgentKind::Vehicle,
        }
    }

    pub fn index(&self) -> u32 {
        match *self {
            AgentId::Uav(i) | AgentId::Worker(i) | AgentId::Vehicle(i) => i,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Uav(i) => write!(f, "uav-{i}"),
            AgentId::Worker(i) => write!(f, "worker-{i}"),
            AgentId::Vehicle(i) => write!(f, "vehicle-{i}"),
        }
    }
}

impl FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (kind, idx) = s
            .split_once('-')
            .ok_or_else(|| format!("malformed agent id `{s}`"))?;
        let idx: u32 = idx
            .parse()
            .map_err(|_| format!("malformed agent index in `{s}`"))?;
        match kind {
            "uav" => Ok(AgentId::Uav(idx)),
            "worker" => Ok(AgentId::Worker(idx)),
            "vehicle" => Ok(AgentId::Vehicle(idx)),
            _ => Err(format!("unknown agent kind in `{s}`")),
        }
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> Self {
        id.to_string()
    }
}

impl TryFrom<String> for AgentId {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

/// What an agent commits to for one epoch.
///
/// Variant order matters: it is the deterministic tie-break between
/// otherwise equal alternatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    GoToTask(u32),
    GoToCharge(u32),
    Hold,
}

/// Borrowed view over any of the three agent types.
#[derive(Clone, Copy, Debug)]
pub enum AgentRef<'a> {
    Uav(&'a Uav),
    Worker(&'a Worker),
    Vehicle(&'a Vehicle),
}

impl AgentRef<'_> {
    pub fn id(&self) -> AgentId {
        match self {
            AgentRef::Uav(u) => AgentId::Uav(u.id),
            AgentRef::Worker(w) => AgentId::Worker(w.id),
            AgentRef::Vehicle(v) => AgentId::Vehicle(v.id),
        }
    }

    pub fn loc(&self) -> Position {
        match self {
            AgentRef::Uav(u) => u.loc,
            AgentRef::Worker(w) => w.loc,
            AgentRef::Vehicle(v) => v.loc,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            AgentRef::Uav(u) => u.radius,
            AgentRef::Worker(w) => w.radius,
            AgentRef::Vehicle(v) => v.radius,
        }
    }

    pub fn speed(&self) -> f64 {
        match self {
            AgentRef::Uav(u) => u.speed,
            AgentRef::Worker(w) => w.speed,
            AgentRef::Vehicle(v) => v.speed,
        }
    }

    pub fn window(&self) -> OnlineWindow {
        match self {
            AgentRef::Uav(u) => u.window,
            AgentRef::Worker(w) => w.window,
            AgentRef::Vehicle(v) => v.window,
        }
    }
}

/// Range test with an inclusive boundary.
pub fn in_range(observer: AgentRef<'_>, point: Position) -> bool {
    dis(observer.loc(), point) <= observer.radius()
}

/// The UAV has enough endurance left to reach the charge point.
pub fn feasible_charge(uav: &Uav, cp: &ChargePoint) -> bool {
    dis(cp.loc, uav.loc) <= uav.power
}

/// Distance from `loc` to the closest charge point, if any exist.
pub fn nearest_charge_distance(loc: Position, charge_points: &[ChargePoint]) -> Option<f64> {
    charge_points
        .iter()
        .map(|cp| dis(loc, cp.loc))
        .min_by(f64::total_cmp)
}

/// Energy needed to fly to the task, execute it, and still reach the charge
/// point nearest the task afterwards. The nearest charge point is taken over
/// the whole set, not only those in communication range.
pub fn task_energy_need(uav: &Uav, task: &TaskPoint, charge_points: &[ChargePoint]) -> Result<f64> {
    let back = nearest_charge_distance(task.loc, charge_points).ok_or_else(|| {
        Error::InvalidScenario("task feasibility needs at least one charge point".into())
    })?;
    Ok(dis(uav.loc, task.loc) + task.cost_power + back)
}

pub fn feasible_task(uav: &Uav, task: &TaskPoint, charge_points: &[ChargePoint]) -> Result<bool> {
    Ok(task_energy_need(uav, task, charge_points)? <= uav.power)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OnlineAgents {
    pub uavs: Vec<Uav>,
    pub workers: Vec<Worker>,
    pub vehicles: Vec<Vehicle>,
}

/// Keeps the agents whose window covers `t`.
pub fn online_agents(t: f64, uavs: &[Uav], workers: &[Worker], vehicles: &[Vehicle]) -> OnlineAgents {
    OnlineAgents {
        uavs: uavs.iter().filter(|a| a.window.covers(t)).cloned().collect(),
        workers: workers.iter().filter(|a| a.window.covers(t)).cloned().collect(),
        vehicles: vehicles.iter().filter(|a| a.window.covers(t)).cloned().collect(),
    }
}

/// Returns the element with the smallest key, breaking ties by lowest id.
pub(crate) fn nearest_by<T, I, K, D>(items: I, id: K, dist: D) -> Option<(T, f64)>
where
    I: IntoIterator<Item = T>,
    K: Fn(&T) -> u32,
    D: Fn(&T) -> f64,
{
    let mut best: Option<(T, f64)> = None;
    for item in items {
        let d = dist(&item);
        let better = match &best {
            None => true,
            Some((b, bd)) => d < *bd || (d == *bd && id(&item) < id(b)),
        };
        if better {
            best = Some((item, d));
        }
    }
    best
}

/// Immutable per-epoch view of the world.
///
/// Holds only agents online at `sys_time`, all uncompleted tasks (tasks
/// already claimed by an in-progress pairing are flagged as reserved), the
/// full charge-point set, and the fixed actions of locked agents.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldSnapshot {
    sys_time: f64,
    bounds: Bounds,
    uavs: Vec<Uav>,
    workers: Vec<Worker>,
    vehicles: Vec<Vehicle>,
    tasks: Vec<TaskPoint>,
    charge_points: Vec<ChargePoint>,
    reserved: BTreeSet<u32>,
    locked: BTreeMap<AgentId, ActionKind>,
}

#[derive(Clone, Debug)]
pub struct SnapshotBuilder {
    inner: WorldSnapshot,
}

impl SnapshotBuilder {
    pub fn uavs(mut self, uavs: impl IntoIterator<Item = Uav>) -> Self {
        self.inner.uavs.extend(uavs);
        self
    }

    pub fn workers(mut self, workers: impl IntoIterator<Item = Worker>) -> Self {
        self.inner.workers.extend(workers);
        self
    }

    pub fn vehicles(mut self, vehicles: impl IntoIterator<Item = Vehicle>) -> Self {
        self.inner.vehicles.extend(vehicles);
        self
    }

    pub fn tasks(mut self, tasks: impl IntoIterator<Item = TaskPoint>) -> Self {
        self.inner.tasks.extend(tasks);
        self
    }

    pub fn charge_points(mut self, cps: impl IntoIterator<Item = ChargePoint>) -> Self {
        self.inner.charge_points.extend(cps);
        self
    }

    pub fn reserve(mut self, task: u32) -> Self {
        self.inner.reserved.insert(task);
        self
    }

    pub fn lock(mut self, agent: AgentId, action: ActionKind) -> Self {
        self.inner.locked.insert(agent, action);
        self
    }

    pub fn build(self) -> WorldSnapshot {
        let mut s = self.inner;
        let t = s.sys_time;
        s.uavs.retain(|a| a.window.covers(t));
        s.workers.retain(|a| a.window.covers(t));
        s.vehicles.retain(|a| a.window.covers(t));
        s.tasks.retain(|x| !x.completed);
        s.uavs.sort_by_key(|a| a.id);
        s.workers.sort_by_key(|a| a.id);
        s.vehicles.sort_by_key(|a| a.id);
        s.tasks.sort_by_key(|x| x.id);
        s.charge_points.sort_by_key(|c| c.id);
        let online: BTreeSet<AgentId> = s.agents().map(|a| a.id()).collect();
        s.locked.retain(|id, _| online.contains(id));
        s
    }
}

impl WorldSnapshot {
    pub fn builder(sys_time: f64, bounds: Bounds) -> SnapshotBuilder {
        SnapshotBuilder {
            inner: WorldSnapshot {
                sys_time,
                bounds,
                uavs: Vec::new(),
                workers: Vec::new(),
                vehicles: Vec::new(),
                tasks: Vec::new(),
                charge_points: Vec::new(),
                reserved: BTreeSet::new(),
                locked: BTreeMap::new(),
            },
        }
    }

    pub fn sys_time(&self) -> f64 {
        self.sys_time
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn uavs(&self) -> &[Uav] {
        &self.uavs
    }

    pub fn workers(&self) -> &[Worker] {
        &self.workers
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    /// All uncompleted tasks, reserved or not.
    pub fn tasks(&self) -> &[TaskPoint] {
        &self.tasks
    }

    /// Tasks that may still be chosen this epoch.
    pub fn open_tasks(&self) -> impl Iterator<Item = &TaskPoint> + '_ {
        self.tasks.iter().filter(|x| !self.reserved.contains(&x.id))
    }

    pub fn charge_points(&self) -> &[ChargePoint] {
        &self.charge_points
    }

    pub fn is_reserved(&self, task: u32) -> bool {
        self.reserved.contains(&task)
    }

    pub fn locked(&self) -> &BTreeMap<AgentId, ActionKind> {
        &self.locked
    }

    pub fn locked_action(&self, agent: AgentId) -> Option<ActionKind> {
        self.locked.get(&agent).copied()
    }

    pub fn task(&self, id: u32) -> Option<&TaskPoint> {
        self.tasks
            .binary_search_by_key(&id, |x| x.id)
            .ok()
            .map(|i| &self.tasks[i])
    }

    pub fn charge_point(&self, id: u32) -> Option<&ChargePoint> {
        self.charge_points
            .binary_search_by_key(&id, |c| c.id)
            .ok()
            .map(|i| &self.charge_points[i])
    }

    pub fn uav(&self, id: u32) -> Option<&Uav> {
        self.uavs.binary_search_by_key(&id, |a| a.id).ok().map(|i| &self.uavs[i])
    }

    pub fn worker(&self, id: u32) -> Option<&Worker> {
        self.workers
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.workers[i])
    }

    pub fn vehicle(&self, id: u32) -> Option<&Vehicle> {
        self.vehicles
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.vehicles[i])
    }

    pub fn agent(&self, id: AgentId) -> Option<AgentRef<'_>> {
        match id {
            AgentId::Uav(i) => self.uav(i).map(AgentRef::Uav),
            AgentId::Worker(i) => self.worker(i).map(AgentRef::Worker),
            AgentId::Vehicle(i) => self.vehicle(i).map(AgentRef::Vehicle),
        }
    }

    /// Every online agent in global id order.
    pub fn agents(&self) -> impl Iterator<Item = AgentRef<'_>> + '_ {
        self.uavs
            .iter()
            .map(AgentRef::Uav)
            .chain(self.workers.iter().map(AgentRef::Worker))
            .chain(self.vehicles.iter().map(AgentRef::Vehicle))
    }

    pub fn agent_count(&self) -> usize {
        self.uavs.len() + self.workers.len() + self.vehicles.len()
    }

    /// Location an action points at, if it names a known point.
    pub fn action_target(&self, action: ActionKind) -> Option<Position> {
        match action {
            ActionKind::GoToTask(x) => self.task(x).map(|t| t.loc),
            ActionKind::GoToCharge(c) => self.charge_point(c).map(|c| c.loc),
            ActionKind::Hold => None,
        }
    }

    /// Online agents other than `id` within `id`'s communication range.
    pub fn neighbors(&self, id: AgentId) -> Vec<AgentId> {
        let Some(me) = self.agent(id) else {
            return Vec::new();
        };
        self.agents()
            .filter(|a| a.id() != id && in_range(me, a.loc()))
            .map(|a| a.id())
            .collect()
    }
}
