//! Expected-benefit estimates that split UAVs into task-seekers and
//! charge-seekers before the game runs, turning one five-way matching into
//! two independent three-way matchings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::world::{
    dis, feasible_charge, feasible_task, in_range, nearest_by, AgentId, AgentRef, Uav,
    WorldSnapshot,
};

/// Estimate for flying to the nearest feasible task and executing it with
/// the closest visible worker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBenefit {
    pub target_task: u32,
    pub partner_worker: u32,
    /// Energy spent reaching the task (km).
    pub delta_pow_t: f64,
    /// UAV flight time to the task (min).
    pub delta_time_t: f64,
    /// Partner's travel time to the task (min).
    pub worker_time: f64,
    /// Rendezvous plus execution time (min).
    pub task_time: f64,
    /// Online time left once the task is done; may be negative.
    pub left_t: f64,
    /// Total energy consumed: flight plus task cost (km).
    pub pow_sum_t: f64,
    pub reward: f64,
}

/// Estimate for flying to the nearest feasible charge point and being
/// charged to full by the closest visible vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChargeBenefit {
    pub target_charge: u32,
    pub partner_vehicle: u32,
    pub delta_pow_c: f64,
    pub delta_time_c: f64,
    pub vehicle_time: f64,
    pub charge_time: f64,
    pub left_c: f64,
    /// Energy gained (km).
    pub pow_sum_c: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum UavRole {
    TaskSeeker(TaskBenefit),
    ChargeSeeker(ChargeBenefit),
    Idle,
}

impl UavRole {
    pub fn is_task_seeker(&self) -> bool {
        matches!(self, UavRole::TaskSeeker(_))
    }

    pub fn is_charge_seeker(&self) -> bool {
        matches!(self, UavRole::ChargeSeeker(_))
    }
}

pub type Roles = BTreeMap<u32, UavRole>;

/// Remaining-time share of the window, clamped to `[0, 1]`: a commitment
/// that outlasts the window contributes nothing rather than a negative weight.
fn time_factor(left: f64, window_len: f64) -> f64 {
    (left / window_len).clamp(0.0, 1.0)
}

/// `1 - (left / window) * (spent / full)`.
pub fn task_reward(left_t: f64, window_len: f64, pow_sum_t: f64, full_power: f64) -> f64 {
    1.0 - time_factor(left_t, window_len) * (pow_sum_t / full_power)
}

/// `(left / window) * (gained / full)`.
pub fn charge_reward(left_c: f64, window_len: f64, pow_sum_c: f64, full_power: f64) -> f64 {
    time_factor(left_c, window_len) * (pow_sum_c / full_power)
}

pub fn estimate_task_benefit(uav: &Uav, snapshot: &WorldSnapshot) -> Option<TaskBenefit> {
    let me = AgentRef::Uav(uav);
    let cps = snapshot.charge_points();
    let candidates = snapshot
        .open_tasks()
        .filter(|x| in_range(me, x.loc))
        .filter(|x| feasible_task(uav, x, cps).unwrap_or(false));
    let (task, delta_pow_t) = nearest_by(candidates, |x| x.id, |x| dis(uav.loc, x.loc))?;

    let workers = snapshot.workers().iter().filter(|w| in_range(me, w.loc));
    let (worker, worker_dist) = nearest_by(workers, |w| w.id, |w| dis(task.loc, w.loc))?;

    let delta_time_t = delta_pow_t / uav.speed;
    let worker_time = worker_dist / worker.speed;
    let task_time = delta_time_t.max(worker_time) + task.cost_power / uav.speed;
    let left_t = uav.window.downtime - snapshot.sys_time() - task_time;
    let pow_sum_t = delta_pow_t + task.cost_power;
    let reward = task_reward(left_t, uav.window.len(), pow_sum_t, uav.full_power);

    Some(TaskBenefit {
        target_task: task.id,
        partner_worker: worker.id,
        delta_pow_t,
        delta_time_t,
        worker_time,
        task_time,
        left_t,
        pow_sum_t,
        reward,
    })
}

pub fn estimate_charge_benefit(uav: &Uav, snapshot: &WorldSnapshot) -> Option<ChargeBenefit> {
    let me = AgentRef::Uav(uav);
    let candidates = snapshot
        .charge_points()
        .iter()
        .filter(|c| in_range(me, c.loc) && feasible_charge(uav, c));
    let (cp, delta_pow_c) = nearest_by(candidates, |c| c.id, |c| dis(uav.loc, c.loc))?;

    let vehicles = snapshot.vehicles().iter().filter(|v| in_range(me, v.loc));
    let (vehicle, vehicle_dist) = nearest_by(vehicles, |v| v.id, |v| dis(cp.loc, v.loc))?;

    let delta_time_c = delta_pow_c / uav.speed;
    let vehicle_time = vehicle_dist / vehicle.speed;
    // Charging time is computed from the power left on arrival.
    let charge_time = delta_time_c.max(vehicle_time)
        + (uav.full_power - (uav.power - delta_pow_c)) / vehicle.charge_power;
    let left_c = uav.window.downtime - snapshot.sys_time() - charge_time;
    let pow_sum_c = uav.full_power - uav.power;
    let reward = charge_reward(left_c, uav.window.len(), pow_sum_c, uav.full_power);

    Some(ChargeBenefit {
        target_charge: cp.id,
        partner_vehicle: vehicle.id,
        delta_pow_c,
        delta_time_c,
        vehicle_time,
        charge_time,
        left_c,
        pow_sum_c,
        reward,
    })
}

/// Ties go to the task: a UAV charges only when charging is strictly better.
pub fn assign_role(uav: &Uav, snapshot: &WorldSnapshot) -> UavRole {
    choose_role(
        estimate_task_benefit(uav, snapshot),
        estimate_charge_benefit(uav, snapshot),
    )
}

fn choose_role(task: Option<TaskBenefit>, charge: Option<ChargeBenefit>) -> UavRole {
    match (task, charge) {
        (Some(t), Some(c)) if c.reward > t.reward => UavRole::ChargeSeeker(c),
        (Some(t), _) => UavRole::TaskSeeker(t),
        (None, Some(c)) => UavRole::ChargeSeeker(c),
        (None, None) => UavRole::Idle,
    }
}

/// Roles for every online UAV that is free to decide this epoch.
pub fn assign_roles(snapshot: &WorldSnapshot) -> Roles {
    snapshot
        .uavs()
        .iter()
        .filter(|u| snapshot.locked_action(AgentId::Uav(u.id)).is_none())
        .map(|u| (u.id, assign_role(u, snapshot)))
        .collect()
}
