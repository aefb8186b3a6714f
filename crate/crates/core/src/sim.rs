//! Discrete-time simulation kernel.
//!
//! Decisions happen at `k * interval`. Between epochs the world advances in
//! `tick`-sized steps: agents fly or drive straight toward their targets,
//! arrival instants are recorded exactly, task executions start once both
//! the UAV and the worker are on site, and each charge service serves its
//! queue first-come-first-served.
//!
//! When a task is targeted by at least one UAV and one worker, the pair that
//! can be there first is locked into a task job and the task is reserved.
//! Likewise the first vehicle to reach a targeted charge point opens a
//! service there and every UAV heading to that point joins its queue. Locked
//! agents sit out later epochs until their job ends; everyone else may
//! retarget at every epoch.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{greedy_decide, kwta_decide, raln_decide, KwtaConfig};
use crate::benefit::assign_roles;
use crate::coupling::{equilibrium_gap, optimal_matches, snapshot_coupling, GapReport};
use crate::error::{Error, Result};
use crate::nash::{decide_epoch, decide_epoch_unreduced, JointAssignment, SchedulerConfig};
use crate::scenario::ScenarioFile;
use crate::world::{
    dis, feasible_charge, feasible_task, ActionKind, AgentId, OnlineWindow, Position, WorldSnapshot,
};

/// Tolerance for float comparisons on times and energies.
const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Paln,
    Raln,
    Greedy,
    Kwta,
    /// The equilibrium loop without the UAV role split.
    PalnUnreduced,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] =
        [Algorithm::Paln, Algorithm::Raln, Algorithm::Greedy, Algorithm::Kwta, Algorithm::PalnUnreduced];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Paln => "paln",
            Algorithm::Raln => "raln",
            Algorithm::Greedy => "greedy",
            Algorithm::Kwta => "kwta",
            Algorithm::PalnUnreduced => "paln-unreduced",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!("unknown algorithm `{s}`; expected paln, raln, greedy, kwta or paln-unreduced"))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Minutes between decision epochs.
    pub interval: f64,
    /// Simulated horizon in minutes.
    pub limit_time: f64,
    /// Movement integration step in minutes.
    pub tick: f64,
    pub max_rounds: u32,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub kwta: KwtaConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            interval: 5.0,
            limit_time: 180.0,
            tick: 0.1,
            max_rounds: 200,
            seed: 0,
            algorithm: Algorithm::Paln,
            kwta: KwtaConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = self.tick.is_finite() && self.interval.is_finite() && self.limit_time.is_finite();
        if !(finite && 0.0 < self.tick && self.tick <= self.interval && self.interval <= self.limit_time) {
            return Err(Error::Config(format!(
                "need 0 < tick <= interval <= limit_time, got tick {}, interval {}, limit_time {}",
                self.tick, self.interval, self.limit_time
            )));
        }
        let k = self.limit_time / self.interval;
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "limit_time {} is not a multiple of interval {}",
                self.limit_time, self.interval
            )));
        }
        self.kwta.validate()?;
        SchedulerConfig { max_rounds: self.max_rounds, ..Default::default() }.validate()
    }

    fn epochs(&self) -> u64 {
        (self.limit_time / self.interval).round() as u64
    }
}

/// What an agent is doing right now.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Travelling,
    /// On site, waiting for a partner or for its service to begin.
    Waiting,
    ExecutingTask { remaining: f64 },
    Charging { remaining: f64 },
    QueuedAtCharge { position: usize },
}

impl Phase {
    fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Travelling => "travelling",
            Phase::Waiting => "waiting",
            Phase::ExecutingTask { .. } => "executing_task",
            Phase::Charging { .. } => "charging",
            Phase::QueuedAtCharge { .. } => "queued_at_charge",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub agent: AgentId,
    pub phase: Phase,
    pub target: ActionKind,
    /// Part of a task job or charge service.
    pub locked: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCompletion {
    pub task: u32,
    pub uav: u32,
    pub worker: u32,
    pub uav_arrival: f64,
    pub worker_arrival: f64,
    pub start: f64,
    pub end: f64,
    pub uav_power_before: f64,
    pub uav_power_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeSession {
    /// Identifies the service (one vehicle stint at one charge point).
    pub service: u64,
    pub charge_point: u32,
    pub vehicle: u32,
    pub uav: u32,
    pub arrival: f64,
    pub start: f64,
    pub end: f64,
    pub power_before: f64,
    pub power_after: f64,
    /// `false` when cut short by a participant going offline.
    pub completed: bool,
}

/// Everything the conservation checks need.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub task_completions: Vec<TaskCompletion>,
    pub charge_sessions: Vec<ChargeSession>,
    /// Committed actions that broke a feasibility rule.
    pub feasibility_violations: Vec<String>,
    /// UAV power leaving `[0, full_power]`.
    pub energy_violations: Vec<String>,
    pub aborted_tasks: usize,
    pub aborted_sessions: usize,
}

impl Audit {
    /// Tasks recorded as completed more than once.
    pub fn double_completions(&self) -> usize {
        let mut seen = BTreeSet::new();
        self.task_completions.iter().filter(|c| !seen.insert(c.task)).count()
    }

    /// Sessions served out of arrival order or overlapping the previous
    /// session of the same service.
    pub fn fcfs_violations(&self) -> usize {
        let mut by_service: BTreeMap<u64, Vec<&ChargeSession>> = BTreeMap::new();
        for s in &self.charge_sessions {
            by_service.entry(s.service).or_default().push(s);
        }
        let mut bad = 0;
        // sessions of one service are recorded in service order
        for sessions in by_service.values() {
            for w in sessions.windows(2) {
                let order = (w[0].arrival, w[0].uav) <= (w[1].arrival, w[1].uav);
                let overlap = w[1].start + EPS < w[0].end;
                // a later arrival may only go first if the earlier one had
                // not yet arrived when the vehicle became free
                let jumped = !order && w[1].arrival <= w[0].start + EPS;
                if overlap || jumped {
                    bad += 1;
                }
            }
        }
        bad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub time: f64,
    /// Wall-clock seconds spent on roles and the decision.
    pub decision_secs: f64,
    pub online_agents: usize,
    pub free_agents: usize,
    pub rounds_used: u32,
    pub converged: bool,
    pub fallback_agents: usize,
    pub actions: BTreeMap<AgentId, ActionKind>,
    /// Tasks matched by the decided profile.
    pub matches: usize,
    /// Best achievable number of matched tasks for the same epoch.
    pub optimal_matches: usize,
    pub new_task_jobs: usize,
    pub new_services: usize,
    pub epsilon: Option<f64>,
    pub gap: GapReport,
    /// Tasks completed during this epoch's ticks.
    pub completed: usize,
    /// Running total after this epoch.
    pub completed_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub scenario: String,
    pub config: SimConfig,
    pub epochs: Vec<EpochRecord>,
    pub total_tasks: usize,
    pub completed: usize,
    /// `None` when the scenario has no tasks.
    pub completion_rate: Option<f64>,
    /// Km covered by every agent that was ever online.
    pub travel_km: BTreeMap<AgentId, f64>,
    pub end_time: f64,
    pub audit: Audit,
}

impl MetricsLog {
    pub fn mean_decision_secs(&self) -> f64 {
        mean(self.epochs.iter().map(|e| e.decision_secs))
    }

    pub fn mean_travel_km(&self) -> f64 {
        mean(self.travel_km.values().copied())
    }

    pub fn mean_epsilon(&self) -> Option<f64> {
        let v: Vec<f64> = self.epochs.iter().filter_map(|e| e.epsilon).collect();
        (!v.is_empty()).then(|| mean(v))
    }

    pub fn mean_rounds(&self) -> f64 {
        mean(self.epochs.iter().map(|e| f64::from(e.rounds_used)))
    }

    pub fn convergence_failures(&self) -> usize {
        self.epochs.iter().filter(|e| !e.converged).count()
    }

    /// Total matches over epochs against the total best achievable.
    pub fn match_totals(&self) -> (usize, usize) {
        self.epochs.iter().fold((0, 0), |(m, o), e| (m + e.matches, o + e.optimal_matches))
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Clone, Debug)]
struct TaskJob {
    uav: u32,
    worker: u32,
    start: Option<f64>,
    end: Option<f64>,
}

#[derive(Clone, Debug)]
struct Session {
    uav: u32,
    arrival: f64,
    start: f64,
    end: f64,
    power_before: f64,
}

#[derive(Clone, Debug)]
struct Service {
    id: u64,
    vehicle: u32,
    /// UAVs waiting their turn, in join order.
    queue: Vec<u32>,
    current: Option<Session>,
    free_at: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Lock {
    Task(u32),
    Charge(u32),
}

/// Mutable state of the agents in one kind-generic form.
#[derive(Clone, Debug)]
struct Body {
    loc: Position,
    speed: f64,
    window: OnlineWindow,
}

/// A running simulation. [`run`] drives it epoch by epoch; the methods are
/// public so individual ticks can be exercised directly.
pub struct Simulation {
    scenario: ScenarioFile,
    config: SimConfig,
    now: f64,
    bodies: BTreeMap<AgentId, Body>,
    uav_power: HashMap<u32, f64>,
    completed: BTreeSet<u32>,
    task_loc: HashMap<u32, (Position, f64)>,
    cp_loc: HashMap<u32, Position>,
    goals: BTreeMap<AgentId, ActionKind>,
    arrivals: BTreeMap<AgentId, f64>,
    locks: BTreeMap<AgentId, Lock>,
    jobs: BTreeMap<u32, TaskJob>,
    services: BTreeMap<u32, Service>,
    next_service: u64,
    removed: BTreeSet<AgentId>,
    seen: BTreeSet<AgentId>,
    travel: BTreeMap<AgentId, f64>,
    audit: Audit,
}

impl Simulation {
    pub fn new(scenario: &ScenarioFile, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        let mut bodies = BTreeMap::new();
        for u in &scenario.uavs {
            bodies.insert(AgentId::Uav(u.id), Body { loc: u.loc, speed: u.speed, window: u.window });
        }
        for w in &scenario.workers {
            bodies.insert(AgentId::Worker(w.id), Body { loc: w.loc, speed: w.speed, window: w.window });
        }
        for v in &scenario.vehicles {
            bodies.insert(AgentId::Vehicle(v.id), Body { loc: v.loc, speed: v.speed, window: v.window });
        }
        Ok(Self {
            scenario: scenario.clone(),
            config: config.clone(),
            now: 0.0,
            bodies,
            uav_power: scenario.uavs.iter().map(|u| (u.id, u.power)).collect(),
            completed: scenario.tasks.iter().filter(|t| t.completed).map(|t| t.id).collect(),
            task_loc: scenario.tasks.iter().map(|t| (t.id, (t.loc, t.cost_power))).collect(),
            cp_loc: scenario.charge_points.iter().map(|c| (c.id, c.loc)).collect(),
            goals: BTreeMap::new(),
            arrivals: BTreeMap::new(),
            locks: BTreeMap::new(),
            jobs: BTreeMap::new(),
            services: BTreeMap::new(),
            next_service: 0,
            removed: BTreeSet::new(),
            seen: BTreeSet::new(),
            travel: BTreeMap::new(),
            audit: Audit::default(),
        })
    }

    pub fn time(&self) -> f64 {
        self.now
    }

    pub fn position(&self, agent: AgentId) -> Option<Position> {
        self.bodies.get(&agent).map(|b| b.loc)
    }

    pub fn uav_power(&self, uav: u32) -> Option<f64> {
        self.uav_power.get(&uav).copied()
    }

    pub fn is_completed(&self, task: u32) -> bool {
        self.completed.contains(&task)
    }

    pub fn completed_count(&self) -> usize {
        self.completed.len()
    }

    pub fn audit(&self) -> &Audit {
        &self.audit
    }

    fn all_done(&self) -> bool {
        !self.scenario.tasks.is_empty() && self.completed.len() == self.scenario.tasks.len()
    }

    fn point(&self, action: ActionKind) -> Option<Position> {
        match action {
            ActionKind::GoToTask(x) => self.task_loc.get(&x).map(|t| t.0),
            ActionKind::GoToCharge(c) => self.cp_loc.get(&c).copied(),
            ActionKind::Hold => None,
        }
    }

    fn full_power(&self, uav: u32) -> f64 {
        self.scenario.uavs.iter().find(|u| u.id == uav).map_or(0.0, |u| u.full_power)
    }

    fn charge_power(&self, vehicle: u32) -> f64 {
        self.scenario.vehicles.iter().find(|v| v.id == vehicle).map_or(0.0, |v| v.charge_power)
    }

    fn downtime(&self, agent: AgentId) -> f64 {
        self.bodies.get(&agent).map_or(f64::NEG_INFINITY, |b| b.window.downtime)
    }

    /// World as seen by the schedulers at the current time.
    pub fn snapshot(&self) -> WorldSnapshot {
        let alive = |id: AgentId| !self.removed.contains(&id);
        let uavs = self.scenario.uavs.iter().filter(|u| alive(AgentId::Uav(u.id))).map(|u| {
            let mut u = u.clone();
            u.loc = self.bodies[&AgentId::Uav(u.id)].loc;
            u.power = self.uav_power[&u.id];
            u
        });
        let workers = self.scenario.workers.iter().filter(|w| alive(AgentId::Worker(w.id))).map(|w| {
            let mut w = w.clone();
            w.loc = self.bodies[&AgentId::Worker(w.id)].loc;
            w
        });
        let vehicles = self.scenario.vehicles.iter().filter(|v| alive(AgentId::Vehicle(v.id))).map(|v| {
            let mut v = v.clone();
            v.loc = self.bodies[&AgentId::Vehicle(v.id)].loc;
            v
        });
        let tasks = self.scenario.tasks.iter().filter(|t| !self.completed.contains(&t.id)).cloned();
        let mut b = WorldSnapshot::builder(self.now, self.scenario.bounds)
            .uavs(uavs.collect::<Vec<_>>())
            .workers(workers.collect::<Vec<_>>())
            .vehicles(vehicles.collect::<Vec<_>>())
            .tasks(tasks.collect::<Vec<_>>())
            .charge_points(self.scenario.charge_points.clone());
        for &x in self.jobs.keys() {
            b = b.reserve(x);
        }
        for (&id, lock) in &self.locks {
            let action = match *lock {
                Lock::Task(x) => ActionKind::GoToTask(x),
                Lock::Charge(c) => ActionKind::GoToCharge(c),
            };
            b = b.lock(id, action);
        }
        b.build()
    }

    /// Current commitment of every online agent.
    pub fn commitments(&self) -> Vec<Commitment> {
        self.bodies
            .iter()
            .filter(|(id, b)| !self.removed.contains(id) && b.window.covers(self.now))
            .map(|(&id, _)| self.commitment(id))
            .collect()
    }

    fn commitment(&self, id: AgentId) -> Commitment {
        let target = self.goals.get(&id).copied().unwrap_or(ActionKind::Hold);
        let arrived = self.arrivals.contains_key(&id);
        let moving = if target == ActionKind::Hold {
            Phase::Idle
        } else if arrived {
            Phase::Waiting
        } else {
            Phase::Travelling
        };
        let phase = match (self.locks.get(&id), id) {
            (Some(Lock::Task(x)), _) => match self.jobs.get(x).and_then(|j| j.end) {
                Some(end) => Phase::ExecutingTask { remaining: (end - self.now).max(0.0) },
                None => moving,
            },
            (Some(Lock::Charge(c)), AgentId::Uav(u)) => {
                let Some(s) = self.services.get(c) else {
                    return Commitment { agent: id, phase: moving, target, locked: true };
                };
                match &s.current {
                    Some(cur) if cur.uav == u && cur.start <= self.now => {
                        Phase::Charging { remaining: (cur.end - self.now).max(0.0) }
                    }
                    _ if arrived => {
                        let position = s.queue.iter().position(|&q| q == u).unwrap_or(0);
                        Phase::QueuedAtCharge { position }
                    }
                    _ => moving,
                }
            }
            _ => moving,
        };
        Commitment { agent: id, phase, target, locked: self.locks.contains_key(&id) }
    }

    fn decide(&self, snapshot: &WorldSnapshot, rng: &mut ChaCha8Rng) -> Result<(JointAssignment, f64)> {
        let sched = SchedulerConfig { max_rounds: self.config.max_rounds, ..Default::default() };
        let start = Instant::now();
        let out = match self.config.algorithm {
            Algorithm::Paln => decide_epoch(snapshot, &assign_roles(snapshot), rng, &sched)?,
            Algorithm::Raln => raln_decide(snapshot, &assign_roles(snapshot), rng, &sched)?,
            Algorithm::Greedy => greedy_decide(snapshot, &assign_roles(snapshot)),
            Algorithm::Kwta => kwta_decide(snapshot, &assign_roles(snapshot), &self.config.kwta)?,
            Algorithm::PalnUnreduced => decide_epoch_unreduced(snapshot, rng, &sched)?,
        };
        Ok((out, start.elapsed().as_secs_f64()))
    }

    fn eta(&self, id: AgentId, target: Position) -> f64 {
        let b = &self.bodies[&id];
        self.now + dis(b.loc, target) / b.speed
    }

    /// Applies the decisions of free agents and forms task jobs and charge
    /// services. Returns `(new task jobs, new services)`.
    pub fn commit(&mut self, assignment: &JointAssignment) -> (usize, usize) {
        let free: Vec<(AgentId, ActionKind)> = assignment
            .actions
            .iter()
            .filter(|(id, _)| !self.locks.contains_key(id) && !self.removed.contains(id) && self.bodies.contains_key(id))
            .map(|(&id, &a)| (id, a))
            .collect();

        for &(id, action) in &free {
            if let AgentId::Uav(u) = id {
                self.check_feasible(u, action);
            }
            self.arrivals.remove(&id);
            if action == ActionKind::Hold || self.point(action).is_none() {
                self.goals.remove(&id);
            } else {
                self.goals.insert(id, action);
            }
        }

        let earliest = |sim: &Self, ids: &mut dyn Iterator<Item = AgentId>, p: Position| {
            ids.map(|id| (sim.eta(id, p), id)).min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))).map(|x| x.1)
        };

        let mut new_jobs = 0;
        let mut by_task: BTreeMap<u32, Vec<AgentId>> = BTreeMap::new();
        let mut by_cp: BTreeMap<u32, Vec<AgentId>> = BTreeMap::new();
        for &(id, action) in &free {
            match action {
                ActionKind::GoToTask(x) => by_task.entry(x).or_default().push(id),
                ActionKind::GoToCharge(c) => by_cp.entry(c).or_default().push(id),
                ActionKind::Hold => {}
            }
        }
        for (x, ids) in by_task {
            if self.jobs.contains_key(&x) || self.completed.contains(&x) {
                continue;
            }
            let Some(p) = self.point(ActionKind::GoToTask(x)) else { continue };
            let u = earliest(self, &mut ids.iter().copied().filter(|i| matches!(i, AgentId::Uav(_))), p);
            let w = earliest(self, &mut ids.iter().copied().filter(|i| matches!(i, AgentId::Worker(_))), p);
            if let (Some(AgentId::Uav(u)), Some(AgentId::Worker(w))) = (u, w) {
                self.locks.insert(AgentId::Uav(u), Lock::Task(x));
                self.locks.insert(AgentId::Worker(w), Lock::Task(x));
                self.jobs.insert(x, TaskJob { uav: u, worker: w, start: None, end: None });
                new_jobs += 1;
            }
        }

        let mut new_services = 0;
        for (c, ids) in by_cp {
            let uavs: Vec<u32> = ids
                .iter()
                .filter_map(|i| match i {
                    // a full battery has nothing to gain from a service
                    AgentId::Uav(u) if self.full_power(*u) - self.uav_power[u] > EPS => Some(*u),
                    _ => None,
                })
                .collect();
            if uavs.is_empty() {
                continue;
            }
            if !self.services.contains_key(&c) {
                let Some(p) = self.point(ActionKind::GoToCharge(c)) else { continue };
                let Some(AgentId::Vehicle(v)) =
                    earliest(self, &mut ids.iter().copied().filter(|i| matches!(i, AgentId::Vehicle(_))), p)
                else {
                    continue;
                };
                self.locks.insert(AgentId::Vehicle(v), Lock::Charge(c));
                self.services.insert(
                    c,
                    Service { id: self.next_service, vehicle: v, queue: Vec::new(), current: None, free_at: f64::NEG_INFINITY },
                );
                self.next_service += 1;
                new_services += 1;
            }
            let service = self.services.get_mut(&c).expect("service exists");
            for u in uavs {
                service.queue.push(u);
                self.locks.insert(AgentId::Uav(u), Lock::Charge(c));
            }
        }
        (new_jobs, new_services)
    }

    fn check_feasible(&mut self, uav: u32, action: ActionKind) {
        let Some(mut u) = self.scenario.uavs.iter().find(|x| x.id == uav).cloned() else { return };
        u.loc = self.bodies[&AgentId::Uav(uav)].loc;
        u.power = self.uav_power[&uav];
        let ok = match action {
            ActionKind::GoToTask(x) => match self.scenario.tasks.iter().find(|t| t.id == x) {
                Some(t) => feasible_task(&u, t, &self.scenario.charge_points).unwrap_or(false),
                None => false,
            },
            ActionKind::GoToCharge(c) => match self.scenario.charge_points.iter().find(|p| p.id == c) {
                Some(p) => feasible_charge(&u, p),
                None => false,
            },
            ActionKind::Hold => true,
        };
        if !ok {
            self.audit
                .feasibility_violations
                .push(format!("t={:.3}: uav-{uav} committed to infeasible {action:?}", self.now));
        }
    }

    /// Advances the world by `dt` minutes. Returns the tasks completed.
    pub fn advance_tick<'w>(&mut self, dt: f64, trace: Option<&mut (dyn Write + 'w)>) -> Result<usize> {
        let t0 = self.now;
        let t1 = t0 + dt;
        self.move_agents(t0, t1)?;
        let done = self.run_task_jobs(t1)?;
        self.run_services(t1);
        self.remove_offline(t1);
        self.now = t1;
        if let Some(out) = trace {
            self.write_trace(out)?;
        }
        Ok(done)
    }

    fn move_agents(&mut self, t0: f64, t1: f64) -> Result<()> {
        let goals: Vec<(AgentId, ActionKind)> = self.goals.iter().map(|(&k, &v)| (k, v)).collect();
        for (id, action) in goals {
            if self.arrivals.contains_key(&id) || self.removed.contains(&id) {
                continue;
            }
            let Some(target) = self.point(action) else { continue };
            let body = self.bodies.get_mut(&id).expect("known agent");
            let avail = (t1.min(body.window.downtime) - t0).max(0.0);
            let (next, moved) = body.loc.step_toward(target, body.speed * avail);
            body.loc = next;
            let speed = body.speed;
            if next == target {
                self.arrivals.insert(id, t0 + moved / speed);
            }
            *self.travel.entry(id).or_insert(0.0) += moved;
            if let AgentId::Uav(u) = id {
                let p = self.uav_power.get_mut(&u).expect("known uav");
                *p -= moved;
                if *p < -EPS {
                    let msg = format!("uav-{u} power {p} < 0 at t={t1:.3}");
                    self.audit.energy_violations.push(msg.clone());
                    return Err(Error::SimInvariant(msg));
                }
                *p = p.max(0.0);
            }
        }
        Ok(())
    }

    fn run_task_jobs(&mut self, t1: f64) -> Result<usize> {
        let mut finished = Vec::new();
        for (&x, job) in self.jobs.iter_mut() {
            let (ui, wi) = (AgentId::Uav(job.uav), AgentId::Worker(job.worker));
            if job.start.is_none() {
                if let (Some(&ua), Some(&wa)) = (self.arrivals.get(&ui), self.arrivals.get(&wi)) {
                    let start = ua.max(wa);
                    let speed = self.bodies[&ui].speed;
                    job.start = Some(start);
                    job.end = Some(start + self.task_loc[&x].1 / speed);
                }
            }
            if let Some(end) = job.end {
                let deadline = self.bodies[&ui].window.downtime.min(self.bodies[&wi].window.downtime);
                if end <= t1 + EPS && end <= deadline {
                    finished.push(x);
                }
            }
        }
        for x in &finished {
            let job = self.jobs.remove(x).expect("job exists");
            let (ui, wi) = (AgentId::Uav(job.uav), AgentId::Worker(job.worker));
            let cost = self.task_loc[x].1;
            let before = self.uav_power[&job.uav];
            let after = before - cost;
            if after < -EPS {
                let msg = format!("uav-{} power {after} < 0 after task {x}", job.uav);
                self.audit.energy_violations.push(msg.clone());
                return Err(Error::SimInvariant(msg));
            }
            self.uav_power.insert(job.uav, after.max(0.0));
            self.audit.task_completions.push(TaskCompletion {
                task: *x,
                uav: job.uav,
                worker: job.worker,
                uav_arrival: self.arrivals[&ui],
                worker_arrival: self.arrivals[&wi],
                start: job.start.expect("started"),
                end: job.end.expect("started"),
                uav_power_before: before,
                uav_power_after: after.max(0.0),
            });
            self.completed.insert(*x);
            for id in [ui, wi] {
                self.release(id);
            }
        }
        Ok(finished.len())
    }

    fn release(&mut self, id: AgentId) {
        self.locks.remove(&id);
        self.goals.remove(&id);
        self.arrivals.remove(&id);
    }

    fn run_services(&mut self, t1: f64) {
        let cps: Vec<u32> = self.services.keys().copied().collect();
        for c in cps {
            let mut service = self.services.remove(&c).expect("service exists");
            let vid = AgentId::Vehicle(service.vehicle);
            let rate = self.charge_power(service.vehicle);
            loop {
                if let Some(cur) = service.current.clone() {
                    let deadline = self.downtime(AgentId::Uav(cur.uav)).min(self.downtime(vid));
                    if cur.end <= t1 + EPS && cur.end <= deadline {
                        let full = self.full_power(cur.uav);
                        self.uav_power.insert(cur.uav, full);
                        self.audit.charge_sessions.push(ChargeSession {
                            service: service.id,
                            charge_point: c,
                            vehicle: service.vehicle,
                            uav: cur.uav,
                            arrival: cur.arrival,
                            start: cur.start,
                            end: cur.end,
                            power_before: cur.power_before,
                            power_after: full,
                            completed: true,
                        });
                        service.free_at = cur.end;
                        service.current = None;
                        self.release(AgentId::Uav(cur.uav));
                        continue;
                    }
                    let full = self.full_power(cur.uav);
                    let accrued = (cur.power_before + (t1.min(cur.end) - cur.start).max(0.0) * rate).min(full);
                    self.uav_power.insert(cur.uav, accrued);
                    break;
                }
                let Some(&va) = self.arrivals.get(&vid) else { break };
                let ready = service.free_at.max(va);
                let waiting = service
                    .queue
                    .iter()
                    .filter_map(|&u| self.arrivals.get(&AgentId::Uav(u)).map(|&a| (a, u)))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let Some((arrival, u)) = waiting else { break };
                let start = ready.max(arrival);
                let deadline = self.downtime(AgentId::Uav(u)).min(self.downtime(vid));
                if start > t1 + EPS || start >= deadline {
                    break;
                }
                service.queue.retain(|&q| q != u);
                let power = self.uav_power[&u];
                let end = start + (self.full_power(u) - power).max(0.0) / rate;
                service.current = Some(Session { uav: u, arrival, start, end, power_before: power });
            }
            if service.current.is_none() && service.queue.is_empty() {
                self.release(vid);
            } else {
                self.services.insert(c, service);
            }
        }
    }

    fn remove_offline(&mut self, t1: f64) {
        let leaving: Vec<AgentId> = self
            .bodies
            .iter()
            .filter(|(id, b)| b.window.downtime <= t1 && !self.removed.contains(id))
            .map(|(&id, _)| id)
            .collect();
        for id in leaving {
            self.removed.insert(id);
            match self.locks.get(&id).copied() {
                Some(Lock::Task(x)) => {
                    if let Some(job) = self.jobs.remove(&x) {
                        self.audit.aborted_tasks += 1;
                        self.release(AgentId::Uav(job.uav));
                        self.release(AgentId::Worker(job.worker));
                    }
                }
                Some(Lock::Charge(c)) => self.leave_service(id, c, t1),
                None => {}
            }
            self.release(id);
        }
    }

    fn leave_service(&mut self, id: AgentId, c: u32, t1: f64) {
        let Some(mut service) = self.services.remove(&c) else { return };
        let cut = |sim: &mut Self, s: &Session, vehicle: u32, sid: u64| {
            sim.audit.aborted_sessions += 1;
            sim.audit.charge_sessions.push(ChargeSession {
                service: sid,
                charge_point: c,
                vehicle,
                uav: s.uav,
                arrival: s.arrival,
                start: s.start,
                end: t1.min(s.end),
                power_before: s.power_before,
                power_after: sim.uav_power[&s.uav],
                completed: false,
            });
        };
        match id {
            AgentId::Vehicle(_) => {
                if let Some(cur) = service.current.take() {
                    cut(self, &cur, service.vehicle, service.id);
                    self.release(AgentId::Uav(cur.uav));
                }
                for u in std::mem::take(&mut service.queue) {
                    self.release(AgentId::Uav(u));
                }
                return;
            }
            AgentId::Uav(u) => {
                if service.current.as_ref().is_some_and(|s| s.uav == u) {
                    let cur = service.current.take().expect("checked");
                    cut(self, &cur, service.vehicle, service.id);
                    service.free_at = t1;
                }
                service.queue.retain(|&q| q != u);
            }
            AgentId::Worker(_) => {}
        }
        if service.current.is_none() && service.queue.is_empty() {
            self.release(AgentId::Vehicle(service.vehicle));
        } else {
            self.services.insert(c, service);
        }
    }

    fn write_trace(&self, out: &mut dyn Write) -> Result<()> {
        for (&id, b) in &self.bodies {
            if self.removed.contains(&id) || !self.seen.contains(&id) {
                continue;
            }
            let power = match id {
                AgentId::Uav(u) => Some(self.uav_power[&u]),
                _ => None,
            };
            let rec = serde_json::json!({
                "t": self.now,
                "agent": id.to_string(),
                "x": b.loc.x,
                "y": b.loc.y,
                "power": power,
                "phase": self.commitment(id).phase.name(),
            });
            writeln!(out, "{rec}")?;
        }
        Ok(())
    }

    /// Runs the whole horizon.
    pub fn run(mut self, mut trace: Option<&mut dyn Write>) -> Result<MetricsLog> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let interval = self.config.interval;
        let mut epochs = Vec::new();
        for k in 0..self.config.epochs() {
            if self.all_done() {
                break;
            }
            self.now = k as f64 * interval;
            let snapshot = self.snapshot();
            for a in snapshot.agents() {
                self.seen.insert(a.id());
                self.travel.entry(a.id()).or_insert(0.0);
            }
            let (mut assignment, secs) = self.decide(&snapshot, &mut rng)?;
            assignment.epoch = k;
            let (new_task_jobs, new_services) = self.commit(&assignment);

            let before = self.completed.len();
            let end = (k + 1) as f64 * interval;
            while self.now < end - EPS && !self.all_done() {
                let dt = self.config.tick.min(end - self.now);
                self.advance_tick(dt, trace.as_deref_mut())?;
            }
            epochs.push(EpochRecord {
                epoch: k,
                time: k as f64 * interval,
                decision_secs: secs,
                online_agents: snapshot.agent_count(),
                free_agents: assignment.actions.len().saturating_sub(snapshot.locked().len()),
                rounds_used: assignment.rounds_used,
                converged: assignment.converged,
                fallback_agents: assignment.fallback_agents.len(),
                matches: assignment.matched_tasks().len(),
                optimal_matches: optimal_matches(&snapshot, &assignment.stances),
                new_task_jobs,
                new_services,
                epsilon: snapshot_coupling(&snapshot).ok().map(|c| c.epsilon),
                gap: equilibrium_gap(&assignment, &snapshot),
                completed: self.completed.len() - before,
                completed_total: self.completed.len(),
                actions: assignment.actions,
            });
        }
        let total = self.scenario.tasks.len();
        Ok(MetricsLog {
            scenario: self.scenario.name.clone(),
            config: self.config.clone(),
            epochs,
            total_tasks: total,
            completed: self.completed.len(),
            completion_rate: (total > 0).then(|| self.completed.len() as f64 / total as f64),
            travel_km: self.travel,
            end_time: self.now,
            audit: self.audit,
        })
    }
}

/// Simulates `scenario` under `config`.
pub fn run(scenario: &ScenarioFile, config: &SimConfig) -> Result<MetricsLog> {
    Simulation::new(scenario, config)?.run(None)
}

/// Like [`run`], writing one JSON line per online agent per tick to `trace`.
pub fn run_traced(scenario: &ScenarioFile, config: &SimConfig, trace: &mut dyn Write) -> Result<MetricsLog> {
    Simulation::new(scenario, config)?.run(Some(trace))
}
