//! Per-epoch decision engine: distance-softmax action sampling, match-based
//! rewards, reward indicators, and the synchronous resample-until-local-Nash
//! loop.
//!
//! Rewards are read off intended destinations: two agents "meet" at a point
//! when both of their actions target it. Physical colocation is enforced
//! later by the simulation kernel.
//!
//! Every agent plays on one side of the matching:
//!
//! * task side: task-seeking UAVs and workers; reward is the number of tasks
//!   within the agent's range that are targeted by at least one UAV and at
//!   least one worker;
//! * charge side: charge-seeking UAVs and vehicles; reward is the energy
//!   (km) that would be restored to UAVs within the agent's range whose
//!   target charge point is also targeted by a vehicle within range.
//!
//! A unilateral switch only changes what happens at the two points it
//! leaves and joins, so the engine scores alternatives from per-point
//! tallies instead of recomputing whole rewards. The free functions [`reward_task`], [`reward_charge`] and [`reward_indicator`]
//! recompute everything from scratch and serve as the reference.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benefit::{Roles, UavRole};
use crate::error::{Error, Result};
use crate::world::{
    dis, feasible_charge, feasible_task, in_range, AgentId, AgentKind, AgentRef, Position,
    WorldSnapshot,
};

pub use crate::world::ActionKind;

pub type Profile = BTreeMap<AgentId, ActionKind>;

/// Smallest reward increase that counts as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub agent: AgentId,
    pub kind: ActionKind,
}

/// Which matching an agent takes part in this epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stance {
    TaskSide,
    ChargeSide,
    /// UAV choosing among tasks and charge points at once (no role split).
    Both,
    Idle,
}

impl Stance {
    /// Stance of a free agent. `roles = None` means the role split is
    /// skipped and every UAV plays both sides.
    pub fn of(agent: AgentId, roles: Option<&Roles>) -> Stance {
        match agent {
            AgentId::Worker(_) => Stance::TaskSide,
            AgentId::Vehicle(_) => Stance::ChargeSide,
            AgentId::Uav(i) => match roles {
                None => Stance::Both,
                Some(r) => match r.get(&i) {
                    Some(UavRole::TaskSeeker(_)) => Stance::TaskSide,
                    Some(UavRole::ChargeSeeker(_)) => Stance::ChargeSide,
                    Some(UavRole::Idle) | None => Stance::Idle,
                },
            },
        }
    }

    /// Stance implied by an already fixed action (locked agents).
    pub fn of_action(agent: AgentId, action: ActionKind) -> Stance {
        match (agent.kind(), action) {
            (AgentKind::Worker, _) => Stance::TaskSide,
            (AgentKind::Vehicle, _) => Stance::ChargeSide,
            (AgentKind::Uav, ActionKind::GoToTask(_)) => Stance::TaskSide,
            (AgentKind::Uav, ActionKind::GoToCharge(_)) => Stance::ChargeSide,
            (AgentKind::Uav, ActionKind::Hold) => Stance::Idle,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: ActionKind,
    pub distance: f64,
    pub score: f64,
    pub probability: f64,
}

/// Reachable points of one agent with their selection probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub agent: AgentId,
    pub candidates: Vec<Candidate>,
}

/// Numerically stable softmax (the maximum is subtracted first).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let Some(max) = scores.iter().copied().max_by(f64::total_cmp) else {
        return Vec::new();
    };
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

impl CandidateSet {
    /// Builds the set from `(action, distance)` pairs. Scores are negative
    /// distances. An empty input becomes a single zero-distance `Hold`.
    pub fn from_points(agent: AgentId, mut points: Vec<(ActionKind, f64)>) -> Self {
        if points.is_empty() {
            points.push((ActionKind::Hold, 0.0));
        }
        points.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let scores: Vec<f64> = points.iter().map(|(_, d)| -d).collect();
        let probs = softmax(&scores);
        let candidates = points
            .into_iter()
            .zip(scores)
            .zip(probs)
            .map(|(((action, distance), score), probability)| Candidate {
                action,
                distance,
                score,
                probability,
            })
            .collect();
        Self { agent, candidates }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionKind> + '_ {
        self.candidates.iter().map(|c| c.action)
    }

    pub fn contains(&self, action: ActionKind) -> bool {
        self.actions().any(|a| a == action)
    }
}

/// How tentative actions are proposed during the game.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proposal {
    /// Softmax over negative distance.
    #[default]
    Softmax,
    /// Uniform over the candidate set.
    Uniform,
}

/// Inverse-CDF pick for a uniform draw `u` in `[0, 1)`.
fn pick_index(set: &CandidateSet, proposal: Proposal, u: f64) -> usize {
    let n = set.candidates.len();
    match proposal {
        Proposal::Uniform => ((u * n as f64) as usize).min(n - 1),
        Proposal::Softmax => {
            let mut acc = 0.0;
            for (i, c) in set.candidates.iter().enumerate() {
                acc += c.probability;
                if u < acc {
                    return i;
                }
            }
            n - 1
        }
    }
}

/// Draws one action with the softmax probabilities. Consumes exactly one
/// value from `rng`.
pub fn sample_action<R: Rng + ?Sized>(set: &CandidateSet, rng: &mut R) -> Action {
    sample_with(set, Proposal::Softmax, rng)
}

/// Like [`sample_action`] with an explicit proposal distribution.
pub fn sample_with<R: Rng + ?Sized>(set: &CandidateSet, proposal: Proposal, rng: &mut R) -> Action {
    let u: f64 = rng.gen();
    let kind = if set.candidates.is_empty() {
        ActionKind::Hold
    } else {
        set.candidates[pick_index(set, proposal, u)].action
    };
    Action { agent: set.agent, kind }
}

/// Points an agent may target this epoch given its stance.
pub fn candidate_actions(agent: AgentRef<'_>, stance: Stance, snapshot: &WorldSnapshot) -> CandidateSet {
    let loc = agent.loc();
    let tasks_in_range = || snapshot.open_tasks().filter(move |x| in_range(agent, x.loc));
    let cps_in_range = || snapshot.charge_points().iter().filter(move |c| in_range(agent, c.loc));
    let mut points = Vec::new();
    match (agent, stance) {
        (_, Stance::Idle) => {}
        (AgentRef::Uav(u), _) => {
            if matches!(stance, Stance::TaskSide | Stance::Both) {
                let cps = snapshot.charge_points();
                points.extend(
                    tasks_in_range()
                        .filter(|x| feasible_task(u, x, cps).unwrap_or(false))
                        .map(|x| (ActionKind::GoToTask(x.id), dis(loc, x.loc))),
                );
            }
            if matches!(stance, Stance::ChargeSide | Stance::Both) {
                points.extend(
                    cps_in_range()
                        .filter(|c| feasible_charge(u, c))
                        .map(|c| (ActionKind::GoToCharge(c.id), dis(loc, c.loc))),
                );
            }
        }
        (AgentRef::Worker(_), _) => {
            points.extend(tasks_in_range().map(|x| (ActionKind::GoToTask(x.id), dis(loc, x.loc))));
        }
        (AgentRef::Vehicle(_), _) => {
            points.extend(cps_in_range().map(|c| (ActionKind::GoToCharge(c.id), dis(loc, c.loc))));
        }
    }
    CandidateSet::from_points(agent.id(), points)
}

/// Tasks targeted by at least one UAV and at least one worker.
pub fn matched_tasks(profile: &Profile) -> BTreeSet<u32> {
    let mut uav = BTreeSet::new();
    let mut worker = BTreeSet::new();
    for (id, action) in profile {
        if let ActionKind::GoToTask(x) = action {
            match id.kind() {
                AgentKind::Uav => uav.insert(*x),
                AgentKind::Worker => worker.insert(*x),
                AgentKind::Vehicle => false,
            };
        }
    }
    uav.intersection(&worker).copied().collect()
}

/// Charge points targeted by at least one vehicle.
pub fn staffed_charge_points(profile: &Profile) -> BTreeSet<u32> {
    profile
        .iter()
        .filter_map(|(id, a)| match (id.kind(), a) {
            (AgentKind::Vehicle, ActionKind::GoToCharge(c)) => Some(*c),
            _ => None,
        })
        .collect()
}

/// Number of matched tasks inside `agent`'s communication range.
pub fn reward_task(agent: AgentId, profile: &Profile, snapshot: &WorldSnapshot) -> u32 {
    let Some(me) = snapshot.agent(agent) else {
        return 0;
    };
    matched_tasks(profile)
        .into_iter()
        .filter_map(|x| snapshot.task(x))
        .filter(|x| in_range(me, x.loc))
        .count() as u32
}

/// Energy (km) that would be restored to UAVs within `agent`'s range whose
/// target charge point is also targeted by a vehicle within range.
pub fn reward_charge(agent: AgentId, profile: &Profile, snapshot: &WorldSnapshot) -> f64 {
    let Some(me) = snapshot.agent(agent) else {
        return 0.0;
    };
    let near = |id: AgentId| snapshot.agent(id).is_some_and(|a| in_range(me, a.loc()));
    let staffed: BTreeSet<u32> = profile
        .iter()
        .filter_map(|(id, a)| match (id.kind(), a) {
            (AgentKind::Vehicle, ActionKind::GoToCharge(c)) if near(*id) => Some(*c),
            _ => None,
        })
        .collect();
    profile
        .iter()
        .filter_map(|(id, a)| match (id, a) {
            (AgentId::Uav(u), ActionKind::GoToCharge(c)) if staffed.contains(c) && near(*id) => {
                snapshot.uav(*u)
            }
            _ => None,
        })
        .map(|u| u.deficit())
        .sum()
}

/// Reward of `agent` under `stance`. A UAV playing both sides adds its
/// charge reward normalized by its own full power.
pub fn reward(agent: AgentId, stance: Stance, profile: &Profile, snapshot: &WorldSnapshot) -> f64 {
    match stance {
        Stance::TaskSide => reward_task(agent, profile, snapshot) as f64,
        Stance::ChargeSide => reward_charge(agent, profile, snapshot),
        Stance::Both => {
            let full = match agent {
                AgentId::Uav(i) => snapshot.uav(i).map_or(1.0, |u| u.full_power),
                _ => 1.0,
            };
            reward_task(agent, profile, snapshot) as f64
                + reward_charge(agent, profile, snapshot) / full
        }
        Stance::Idle => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardIndicator {
    pub agent: AgentId,
    /// `true` when no unilateral switch strictly increases the reward.
    pub satisfied: bool,
    pub best_alternative: Option<ActionKind>,
}

impl RewardIndicator {
    /// The indicator as the 0/1 flag.
    pub fn s(&self) -> u8 {
        u8::from(self.satisfied)
    }
}

/// Reference indicator: tries every candidate against the rest of the
/// profile held fixed and recomputes the reward from scratch.
pub fn reward_indicator(
    agent: AgentId,
    stance: Stance,
    profile: &Profile,
    snapshot: &WorldSnapshot,
) -> RewardIndicator {
    let Some(me) = snapshot.agent(agent) else {
        return RewardIndicator { agent, satisfied: true, best_alternative: None };
    };
    let current = profile.get(&agent).copied().unwrap_or(ActionKind::Hold);
    let base = reward(agent, stance, profile, snapshot);
    let mut trial = profile.clone();
    let mut best: Option<(f64, ActionKind)> = None;
    for alt in candidate_actions(me, stance, snapshot).actions() {
        if alt == current {
            continue;
        }
        trial.insert(agent, alt);
        let gain = reward(agent, stance, &trial, snapshot) - base;
        if gain > IMPROVEMENT_EPS && best.is_none_or(|(g, a)| gain > g || (gain == g && alt < a)) {
            best = Some((gain, alt));
        }
    }
    RewardIndicator {
        agent,
        satisfied: best.is_none(),
        best_alternative: best.map(|(_, a)| a),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Cap on resampling rounds per epoch.
    pub max_rounds: u32,
    pub proposal: Proposal,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { max_rounds: 200, proposal: Proposal::Softmax }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 1 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one decision epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointAssignment {
    pub epoch: u64,
    /// Action of every online agent, locked agents included.
    pub actions: BTreeMap<AgentId, ActionKind>,
    /// Side each online agent played on.
    pub stances: BTreeMap<AgentId, Stance>,
    pub converged: bool,
    pub rounds_used: u32,
    /// Agents still unsatisfied when the round cap was hit.
    pub fallback_agents: Vec<AgentId>,
    /// Final indicator flag of every free agent.
    pub indicators: BTreeMap<AgentId, bool>,
}

impl JointAssignment {
    /// Empty assignment carrying only the locked agents of `snapshot`.
    pub(crate) fn with_locked(snapshot: &WorldSnapshot) -> Self {
        let mut out = JointAssignment { converged: true, ..Default::default() };
        for (&id, &a) in snapshot.locked() {
            out.actions.insert(id, a);
            out.stances.insert(id, Stance::of_action(id, a));
        }
        out
    }

    pub fn matched_tasks(&self) -> BTreeSet<u32> {
        matched_tasks(&self.actions)
    }
}

/// Runs the role-split game for one epoch.
pub fn decide_epoch<R: Rng + ?Sized>(
    snapshot: &WorldSnapshot,
    roles: &Roles,
    rng: &mut R,
    config: &SchedulerConfig,
) -> Result<JointAssignment> {
    play(snapshot, Some(roles), rng, config)
}

/// Same loop without the role split: every free UAV chooses among feasible
/// tasks and charge points together.
pub fn decide_epoch_unreduced<R: Rng + ?Sized>(
    snapshot: &WorldSnapshot,
    rng: &mut R,
    config: &SchedulerConfig,
) -> Result<JointAssignment> {
    play(snapshot, None, rng, config)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Slot {
    Task(usize),
    Charge(usize),
    Hold,
}

struct Player {
    id: AgentId,
    kind: AgentKind,
    stance: Stance,
    set: CandidateSet,
    slots: Vec<Slot>,
    neighbors: Vec<usize>,
    loc: Position,
    radius: f64,
    deficit: f64,
    /// Weight of charge-side rewards in this player's objective.
    charge_weight: f64,
}

/// An agent heading to a charge point.
#[derive(Clone, Copy)]
struct Visitor {
    /// Index into the players, `None` for locked agents.
    player: Option<usize>,
    vehicle: bool,
    loc: Position,
    deficit: f64,
}

#[derive(Clone)]
struct Tally {
    task_uavs: Vec<u32>,
    task_workers: Vec<u32>,
    visitors: Vec<Vec<Visitor>>,
}

impl Tally {
    fn add(&mut self, kind: AgentKind, slot: Slot, visitor: Visitor) {
        match (kind, slot) {
            (AgentKind::Uav, Slot::Task(x)) => self.task_uavs[x] += 1,
            (AgentKind::Worker, Slot::Task(x)) => self.task_workers[x] += 1,
            (AgentKind::Uav | AgentKind::Vehicle, Slot::Charge(c)) => self.visitors[c].push(visitor),
            _ => {}
        }
    }

    /// Change in `p`'s charge reward from being at charge point `c` versus
    /// not being there, everyone else fixed.
    fn charge_share(&self, p: &Player, me: usize, c: usize) -> f64 {
        let mut staffed = false;
        let mut deficit = 0.0;
        for v in self.visitors[c].iter().filter(|v| v.player != Some(me)) {
            if dis(p.loc, v.loc) <= p.radius {
                if v.vehicle {
                    staffed = true;
                } else {
                    deficit += v.deficit;
                }
            }
        }
        let share = match p.kind {
            AgentKind::Vehicle if !staffed => deficit,
            AgentKind::Uav if staffed => p.deficit,
            _ => 0.0,
        };
        share * p.charge_weight
    }

    /// Reward lost by moving away from `slot`.
    fn leave_loss(&self, p: &Player, me: usize, slot: Slot) -> f64 {
        match (p.kind, slot) {
            (AgentKind::Uav, Slot::Task(x)) => {
                f64::from(u8::from(self.task_workers[x] > 0 && self.task_uavs[x] == 1))
            }
            (AgentKind::Worker, Slot::Task(x)) => {
                f64::from(u8::from(self.task_uavs[x] > 0 && self.task_workers[x] == 1))
            }
            (_, Slot::Charge(c)) => self.charge_share(p, me, c),
            _ => 0.0,
        }
    }

    /// Reward gained by moving onto `slot` (not occupied by `p` yet).
    fn join_gain(&self, p: &Player, me: usize, slot: Slot) -> f64 {
        match (p.kind, slot) {
            (AgentKind::Uav, Slot::Task(x)) => {
                f64::from(u8::from(self.task_workers[x] > 0 && self.task_uavs[x] == 0))
            }
            (AgentKind::Worker, Slot::Task(x)) => {
                f64::from(u8::from(self.task_uavs[x] > 0 && self.task_workers[x] == 0))
            }
            (_, Slot::Charge(c)) => self.charge_share(p, me, c),
            _ => 0.0,
        }
    }
}

struct Game {
    players: Vec<Player>,
    base: Tally,
}

impl Game {
    fn build(snapshot: &WorldSnapshot, roles: Option<&Roles>) -> Game {
        let task_idx: HashMap<u32, usize> =
            snapshot.tasks().iter().enumerate().map(|(i, x)| (x.id, i)).collect();
        let cp_idx: HashMap<u32, usize> =
            snapshot.charge_points().iter().enumerate().map(|(i, c)| (c.id, i)).collect();
        let slot_of = |a: ActionKind| match a {
            ActionKind::GoToTask(x) => task_idx.get(&x).map_or(Slot::Hold, |&i| Slot::Task(i)),
            ActionKind::GoToCharge(c) => cp_idx.get(&c).map_or(Slot::Hold, |&i| Slot::Charge(i)),
            ActionKind::Hold => Slot::Hold,
        };

        let mut base = Tally {
            task_uavs: vec![0; task_idx.len()],
            task_workers: vec![0; task_idx.len()],
            visitors: vec![Vec::new(); cp_idx.len()],
        };
        let deficit_of = |id: AgentId| match id {
            AgentId::Uav(i) => snapshot.uav(i).map_or(0.0, |u| u.deficit()),
            _ => 0.0,
        };
        for (&id, &a) in snapshot.locked() {
            let Some(agent) = snapshot.agent(id) else { continue };
            let visitor = Visitor {
                player: None,
                vehicle: id.kind() == AgentKind::Vehicle,
                loc: agent.loc(),
                deficit: deficit_of(id),
            };
            base.add(id.kind(), slot_of(a), visitor);
        }

        let mut players: Vec<Player> = snapshot
            .agents()
            .filter(|a| snapshot.locked_action(a.id()).is_none())
            .map(|a| {
                let id = a.id();
                let stance = Stance::of(id, roles);
                let set = candidate_actions(a, stance, snapshot);
                let slots = set.actions().map(slot_of).collect();
                let charge_weight = match (a, stance) {
                    (AgentRef::Uav(u), Stance::Both) => 1.0 / u.full_power,
                    _ => 1.0,
                };
                Player {
                    id,
                    kind: id.kind(),
                    stance,
                    set,
                    slots,
                    neighbors: Vec::new(),
                    loc: a.loc(),
                    radius: a.radius(),
                    deficit: deficit_of(id),
                    charge_weight,
                }
            })
            .collect();

        let geo: Vec<(Position, f64)> = players.iter().map(|p| (p.loc, p.radius)).collect();
        for (i, p) in players.iter_mut().enumerate() {
            let (li, ri) = geo[i];
            p.neighbors = geo
                .iter()
                .enumerate()
                .filter(|&(j, (lj, _))| j != i && dis(li, *lj) <= ri)
                .map(|(j, _)| j)
                .collect();
        }
        Game { players, base }
    }

    fn tally(&self, choice: &[usize]) -> Tally {
        let mut t = self.base.clone();
        for (i, (p, &c)) in self.players.iter().zip(choice).enumerate() {
            let visitor = Visitor {
                player: Some(i),
                vehicle: p.kind == AgentKind::Vehicle,
                loc: p.loc,
                deficit: p.deficit,
            };
            t.add(p.kind, p.slots[c], visitor);
        }
        t
    }

    /// Indicator of every player: `None` when satisfied, else the index of
    /// the best strictly improving alternative.
    fn indicators(&self, choice: &[usize]) -> Vec<Option<usize>> {
        let tally = self.tally(choice);
        self.players
            .iter()
            .zip(choice)
            .enumerate()
            .map(|(me, (p, &cur))| {
                let loss = tally.leave_loss(p, me, p.slots[cur]);
                let mut best: Option<(f64, usize)> = None;
                for (k, &slot) in p.slots.iter().enumerate() {
                    if k == cur {
                        continue;
                    }
                    let gain = tally.join_gain(p, me, slot) - loss;
                    if gain > IMPROVEMENT_EPS
                        && best.is_none_or(|(g, b)| {
                            gain > g || (gain == g && p.set.candidates[k].action < p.set.candidates[b].action)
                        })
                    {
                        best = Some((gain, k));
                    }
                }
                best.map(|(_, k)| k)
            })
            .collect()
    }
}

fn play<R: Rng + ?Sized>(
    snapshot: &WorldSnapshot,
    roles: Option<&Roles>,
    rng: &mut R,
    config: &SchedulerConfig,
) -> Result<JointAssignment> {
    config.validate()?;
    let game = Game::build(snapshot, roles);
    let mut out = JointAssignment::with_locked(snapshot);
    if game.players.is_empty() {
        return Ok(out);
    }

    let draw = |set: &CandidateSet, rng: &mut R| {
        let u: f64 = rng.gen();
        pick_index(set, config.proposal, u)
    };
    let mut choice: Vec<usize> = game.players.iter().map(|p| draw(&p.set, rng)).collect();
    let mut rounds = 0;
    let (indicators, converged) = loop {
        let ind = game.indicators(&choice);
        let unsatisfied: Vec<bool> = game
            .players
            .iter()
            .enumerate()
            .map(|(i, p)| ind[i].is_some() || p.neighbors.iter().any(|&j| ind[j].is_some()))
            .collect();
        if !unsatisfied.contains(&true) {
            break (ind, true);
        }
        if rounds >= config.max_rounds {
            for (i, p) in game.players.iter().enumerate() {
                if unsatisfied[i] {
                    out.fallback_agents.push(p.id);
                    if let Some(k) = ind[i] {
                        choice[i] = k;
                    }
                }
            }
            break (game.indicators(&choice), false);
        }
        for (i, p) in game.players.iter().enumerate() {
            if unsatisfied[i] {
                choice[i] = draw(&p.set, rng);
            }
        }
        rounds += 1;
    };

    out.converged = converged;
    out.rounds_used = rounds;
    for ((p, &c), ind) in game.players.iter().zip(&choice).zip(&indicators) {
        out.actions.insert(p.id, p.set.candidates[c].action);
        out.stances.insert(p.id, p.stance);
        out.indicators.insert(p.id, ind.is_none());
    }
    Ok(out)
}
