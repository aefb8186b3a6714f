//! Comparison schedulers sharing the epoch interface of [`crate::nash`].

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benefit::Roles;
use crate::error::{Error, Result};
use crate::nash::{
    candidate_actions, decide_epoch, CandidateSet, JointAssignment, Proposal, SchedulerConfig, Stance,
};
use crate::world::{ActionKind, AgentId, AgentKind, WorldSnapshot};

/// Candidate sets of all free agents in id order.
fn free_sets(snapshot: &WorldSnapshot, roles: &Roles) -> Vec<(Stance, CandidateSet)> {
    snapshot
        .agents()
        .filter(|a| snapshot.locked_action(a.id()).is_none())
        .map(|a| {
            let stance = Stance::of(a.id(), Some(roles));
            (stance, candidate_actions(a, stance, snapshot))
        })
        .collect()
}

fn finish(mut out: JointAssignment, sets: &[(Stance, CandidateSet)], actions: &BTreeMap<AgentId, ActionKind>) -> JointAssignment {
    for (stance, set) in sets {
        out.stances.insert(set.agent, *stance);
        out.actions.insert(set.agent, actions.get(&set.agent).copied().unwrap_or(ActionKind::Hold));
    }
    out
}

/// Every free agent heads for its nearest candidate. When several agents
/// of one kind pick the same point, the closest keeps it (lowest id on
/// ties) and the others hold.
pub fn greedy_decide(snapshot: &WorldSnapshot, roles: &Roles) -> JointAssignment {
    let sets = free_sets(snapshot, roles);
    let mut winners: BTreeMap<(AgentKind, ActionKind), (f64, AgentId)> = BTreeMap::new();
    for (_, set) in &sets {
        let first = set.candidates[0];
        if first.action == ActionKind::Hold {
            continue;
        }
        let key = (set.agent.kind(), first.action);
        let entry = (first.distance, set.agent);
        winners
            .entry(key)
            .and_modify(|w| {
                if entry.0 < w.0 || (entry.0 == w.0 && entry.1 < w.1) {
                    *w = entry;
                }
            })
            .or_insert(entry);
    }
    let actions = winners.into_iter().map(|((_, a), (_, id))| (id, a)).collect();
    finish(JointAssignment::with_locked(snapshot), &sets, &actions)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KwtaConfig {
    /// Candidates retained per UAV.
    pub k1: usize,
    /// Candidates retained per worker or vehicle.
    pub k2: usize,
}

impl Default for KwtaConfig {
    fn default() -> Self {
        Self { k1: 3, k2: 3 }
    }
}

impl KwtaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 1 || self.k2 < 1 {
            return Err(Error::Config("k1 and k2 must be at least 1".into()));
        }
        Ok(())
    }
}

/// A UAV and a partner (worker or vehicle) sent to the same point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pairing {
    pub uav: AgentId,
    pub partner: AgentId,
    pub action: ActionKind,
}

fn top_k(set: &CandidateSet, k: usize) -> impl Iterator<Item = (ActionKind, f64)> + '_ {
    set.candidates
        .iter()
        .filter(|c| c.action != ActionKind::Hold)
        .take(k)
        .map(|c| (c.action, c.distance))
}

/// Pairings formed on the intersections of the retained top-k sets, best
/// combined score first, each agent and point used once.
pub fn kwta_pairings(snapshot: &WorldSnapshot, roles: &Roles, cfg: &KwtaConfig) -> Result<Vec<Pairing>> {
    cfg.validate()?;
    Ok(intersect(&free_sets(snapshot, roles), cfg))
}

fn intersect(sets: &[(Stance, CandidateSet)], cfg: &KwtaConfig) -> Vec<Pairing> {
    let mut triples: Vec<(f64, Pairing)> = Vec::new();
    for (_, us) in sets.iter().filter(|(_, s)| s.agent.kind() == AgentKind::Uav) {
        for (ua, ud) in top_k(us, cfg.k1) {
            for (_, ps) in sets.iter().filter(|(_, s)| s.agent.kind() != AgentKind::Uav) {
                for (pa, pd) in top_k(ps, cfg.k2) {
                    if pa == ua {
                        triples.push((ud + pd, Pairing { uav: us.agent, partner: ps.agent, action: ua }));
                    }
                }
            }
        }
    }
    triples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut used_agents = BTreeSet::new();
    let mut used_points = BTreeSet::new();
    let mut out = Vec::new();
    for (_, p) in triples {
        if used_agents.contains(&p.uav) || used_agents.contains(&p.partner) || used_points.contains(&p.action) {
            continue;
        }
        used_agents.insert(p.uav);
        used_agents.insert(p.partner);
        used_points.insert(p.action);
        out.push(p);
    }
    out
}

/// Top-k retention and intersection matching. Agents left unpaired then
/// try their candidates in descending score order and take the first point
/// not yet claimed by an agent of their kind.
pub fn kwta_decide(snapshot: &WorldSnapshot, roles: &Roles, cfg: &KwtaConfig) -> Result<JointAssignment> {
    cfg.validate()?;
    let sets = free_sets(snapshot, roles);
    let pairings = intersect(&sets, cfg);
    let mut actions = BTreeMap::new();
    let mut claimed: BTreeSet<(AgentKind, ActionKind)> = BTreeSet::new();
    for p in &pairings {
        actions.insert(p.uav, p.action);
        actions.insert(p.partner, p.action);
        claimed.insert((AgentKind::Uav, p.action));
        claimed.insert((p.partner.kind(), p.action));
    }
    for (_, set) in &sets {
        if actions.contains_key(&set.agent) {
            continue;
        }
        let kind = set.agent.kind();
        let pick = set
            .actions()
            .find(|&a| a != ActionKind::Hold && !claimed.contains(&(kind, a)))
            .unwrap_or(ActionKind::Hold);
        if pick != ActionKind::Hold {
            claimed.insert((kind, pick));
        }
        actions.insert(set.agent, pick);
    }
    Ok(finish(JointAssignment::with_locked(snapshot), &sets, &actions))
}

/// The equilibrium loop with uniform proposals instead of the softmax.
pub fn raln_decide<R: Rng + ?Sized>(
    snapshot: &WorldSnapshot,
    roles: &Roles,
    rng: &mut R,
    config: &SchedulerConfig,
) -> Result<JointAssignment> {
    let cfg = SchedulerConfig { proposal: Proposal::Uniform, ..config.clone() };
    decide_epoch(snapshot, roles, rng, &cfg)
}
