//! Coupling strength of the communication network and diagnostics comparing
//! the local equilibrium with the best achievable matching.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nash::{candidate_actions, matched_tasks, reward_task, JointAssignment, Stance};
use crate::world::{dis, ActionKind, AgentId, AgentKind, Position, WorldSnapshot};

/// A communication disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Position,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Position, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn area(&self) -> f64 {
        PI * self.radius * self.radius
    }
}

/// Area of the intersection of two disks (lens formula).
pub fn intersection_area(a: Disk, b: Disk) -> f64 {
    let d = dis(a.center, b.center);
    let (r1, r2) = (a.radius, b.radius);
    if d >= r1 + r2 {
        return 0.0;
    }
    if d <= (r1 - r2).abs() {
        let r = r1.min(r2);
        return PI * r * r;
    }
    let c1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0);
    let c2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0);
    let k = ((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)).max(0.0);
    r1 * r1 * c1.acos() + r2 * r2 * c2.acos() - 0.5 * k.sqrt()
}

/// Intersection over union of two disks. Radii must be positive.
pub fn disk_overlap_jaccard(a: Disk, b: Disk) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub epsilon: f64,
    /// `(i, j, jaccard)` for every unordered pair, indices into the input.
    pub pairs: Vec<(usize, usize, f64)>,
    pub n: usize,
}

/// Mean pairwise Jaccard overlap of the disks.
pub fn coupling_strength(disks: &[Disk]) -> Result<CouplingReport> {
    let n = disks.len();
    if n < 2 {
        return Err(Error::CouplingUndefined(n));
    }
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let jac = disk_overlap_jaccard(disks[i], disks[j]);
            sum += jac;
            pairs.push((i, j, jac));
        }
    }
    let epsilon = (sum / pairs.len() as f64).clamp(0.0, 1.0);
    Ok(CouplingReport { epsilon, pairs, n })
}

/// Communication disks of every online agent in id order.
pub fn agent_disks(snapshot: &WorldSnapshot) -> Vec<Disk> {
    snapshot.agents().map(|a| Disk::new(a.loc(), a.radius())).collect()
}

/// Coupling strength over all online agents of the snapshot.
pub fn snapshot_coupling(snapshot: &WorldSnapshot) -> Result<CouplingReport> {
    coupling_strength(&agent_disks(snapshot))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Sum of task rewards over task-side agents.
    pub sum_reward: f64,
    /// Number of task-side agents entering the sum.
    pub task_agents: usize,
    /// Tasks matched by the profile.
    pub global_completed: usize,
    /// Average task reward divided by `global_completed`; `None` when no
    /// task is matched.
    pub alpha_hat: Option<f64>,
    /// `global_completed - sum_reward`.
    pub gap: f64,
}

/// Relates what task-side agents see locally to the matches of the whole
/// profile.
pub fn equilibrium_gap(assignment: &JointAssignment, snapshot: &WorldSnapshot) -> GapReport {
    let task_side: Vec<AgentId> = assignment
        .actions
        .iter()
        .filter(|(id, a)| {
            id.kind() == AgentKind::Worker
                || (id.kind() == AgentKind::Uav && matches!(a, ActionKind::GoToTask(_)))
        })
        .map(|(id, _)| *id)
        .collect();
    let sum_reward: f64 = task_side
        .iter()
        .map(|&id| f64::from(reward_task(id, &assignment.actions, snapshot)))
        .sum();
    let global_completed = matched_tasks(&assignment.actions).len();
    let alpha_hat = (global_completed > 0 && !task_side.is_empty())
        .then(|| sum_reward / task_side.len() as f64 / global_completed as f64);
    GapReport {
        sum_reward,
        task_agents: task_side.len(),
        global_completed,
        alpha_hat,
        gap: global_completed as f64 - sum_reward,
    }
}

/// Largest number of tasks that could be matched this epoch if a central
/// planner chose for every free agent, given each agent's stance. Tasks
/// already held by locked pairs are counted as matched.
pub fn optimal_matches(snapshot: &WorldSnapshot, stances: &BTreeMap<AgentId, Stance>) -> usize {
    let locked_matches = matched_tasks(
        &snapshot.locked().iter().map(|(k, v)| (*k, *v)).collect(),
    )
    .len();

    let mut uav_edges: Vec<Vec<u32>> = Vec::new();
    let mut worker_edges: Vec<Vec<u32>> = Vec::new();
    for agent in snapshot.agents() {
        let id = agent.id();
        if snapshot.locked_action(id).is_some() {
            continue;
        }
        let stance = stances.get(&id).copied().unwrap_or(Stance::of(id, None));
        if !matches!(stance, Stance::TaskSide | Stance::Both) {
            continue;
        }
        let tasks: Vec<u32> = candidate_actions(agent, stance, snapshot)
            .actions()
            .filter_map(|a| match a {
                ActionKind::GoToTask(x) => Some(x),
                _ => None,
            })
            .collect();
        match id.kind() {
            AgentKind::Uav => uav_edges.push(tasks),
            AgentKind::Worker => worker_edges.push(tasks),
            AgentKind::Vehicle => {}
        }
    }
    locked_matches + max_tripartite(&uav_edges, &worker_edges)
}

/// Maximum number of tasks each joined by one distinct UAV and one distinct
/// worker, where `uavs[i]` and `workers[j]` list acceptable task ids.
pub fn max_tripartite(uavs: &[Vec<u32>], workers: &[Vec<u32>]) -> usize {
    let mut task_idx: HashMap<u32, usize> = HashMap::new();
    for &x in uavs.iter().chain(workers).flatten() {
        let n = task_idx.len();
        task_idx.entry(x).or_insert(n);
    }
    let nt = task_idx.len();
    // source, uavs, task-in, task-out, workers, sink
    let src = 0;
    let u0 = 1;
    let tin = u0 + uavs.len();
    let tout = tin + nt;
    let w0 = tout + nt;
    let sink = w0 + workers.len();
    let mut g = FlowGraph::new(sink + 1);
    for (i, ts) in uavs.iter().enumerate() {
        g.add(src, u0 + i);
        for x in ts {
            g.add(u0 + i, tin + task_idx[x]);
        }
    }
    for t in 0..nt {
        g.add(tin + t, tout + t);
    }
    for (j, ts) in workers.iter().enumerate() {
        for x in ts {
            g.add(tout + task_idx[x], w0 + j);
        }
        g.add(w0 + j, sink);
    }
    g.max_flow(src, sink)
}

/// Unit-capacity flow network solved with BFS augmenting paths.
struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<i32>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new() }
    }

    fn add(&mut self, a: usize, b: usize) {
        self.adj[a].push(self.to.len());
        self.to.push(b);
        self.cap.push(1);
        self.adj[b].push(self.to.len());
        self.to.push(a);
        self.cap.push(0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> usize {
        let mut flow = 0;
        loop {
            let mut prev: Vec<Option<usize>> = vec![None; self.adj.len()];
            let mut seen = vec![false; self.adj.len()];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                if v == t {
                    break;
                }
                for &e in &self.adj[v] {
                    let w = self.to[e];
                    if self.cap[e] > 0 && !seen[w] {
                        seen[w] = true;
                        prev[w] = Some(e);
                        queue.push_back(w);
                    }
                }
            }
            if !seen[t] {
                return flow;
            }
            let mut v = t;
            while let Some(e) = prev[v] {
                self.cap[e] -= 1;
                self.cap[e ^ 1] += 1;
                v = self.to[e ^ 1];
            }
            flow += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk(x: f64, y: f64, r: f64) -> Disk {
        Disk::new(Position::new(x, y), r)
    }

    #[test]
    fn jaccard_endpoints() {
        assert_eq!(disk_overlap_jaccard(disk(1.0, 1.0, 2.0), disk(1.0, 1.0, 2.0)), 1.0);
        assert_eq!(disk_overlap_jaccard(disk(0.0, 0.0, 1.0), disk(5.0, 0.0, 1.0)), 0.0);
        assert_eq!(disk_overlap_jaccard(disk(0.0, 0.0, 1.0), disk(2.0, 0.0, 1.0)), 0.0);
    }

    #[test]
    fn unit_disks_one_apart() {
        let a = disk(0.0, 0.0, 1.0);
        let b = disk(1.0, 0.0, 1.0);
        let lens = 2.0 * 0.5f64.acos() - 3f64.sqrt() / 2.0;
        assert!((intersection_area(a, b) - lens).abs() < 1e-12);
        assert!((intersection_area(a, b) - 1.2284).abs() < 1e-4);
        assert!((disk_overlap_jaccard(a, b) - 0.2430).abs() < 1e-4);
    }

    #[test]
    fn nested_disks() {
        let j = disk_overlap_jaccard(disk(0.0, 0.0, 2.0), disk(0.5, 0.0, 1.0));
        assert!((j - 0.25).abs() < 1e-12);
    }

    #[test]
    fn coupling_examples() {
        assert!(matches!(coupling_strength(&[disk(0.0, 0.0, 1.0)]), Err(Error::CouplingUndefined(1))));
        assert!(matches!(coupling_strength(&[]), Err(Error::CouplingUndefined(0))));
        let e = coupling_strength(&[disk(0.0, 0.0, 1.0), disk(9.0, 0.0, 1.0)]).unwrap();
        assert_eq!(e.epsilon, 0.0);
        let e = coupling_strength(&[disk(3.0, 3.0, 8.0); 3]).unwrap();
        assert_eq!(e.epsilon, 1.0);
        assert_eq!(e.pairs.len(), 3);
        let e = coupling_strength(&[disk(0.0, 0.0, 1.0), disk(1.0, 0.0, 1.0)]).unwrap();
        assert!((e.epsilon - 0.2430).abs() < 1e-4);
    }

    #[test]
    fn tripartite_small_cases() {
        assert_eq!(max_tripartite(&[], &[vec![1]]), 0);
        assert_eq!(max_tripartite(&[vec![1, 2]], &[vec![1], vec![2]]), 1);
        assert_eq!(max_tripartite(&[vec![1, 2], vec![1]], &[vec![1], vec![2]]), 2);
        // both UAVs only reach task 1: one task, one match
        assert_eq!(max_tripartite(&[vec![1], vec![1]], &[vec![1], vec![1]]), 1);
    }

    fn brute_tripartite(uavs: &[Vec<u32>], workers: &[Vec<u32>]) -> usize {
        fn go(i: usize, uavs: &[Vec<u32>], workers: &[Vec<u32>], used_t: &mut Vec<u32>, used_w: &mut Vec<bool>) -> usize {
            if i == uavs.len() {
                return 0;
            }
            let mut best = go(i + 1, uavs, workers, used_t, used_w);
            for &x in &uavs[i] {
                if used_t.contains(&x) {
                    continue;
                }
                for j in 0..workers.len() {
                    if !used_w[j] && workers[j].contains(&x) {
                        used_t.push(x);
                        used_w[j] = true;
                        best = best.max(1 + go(i + 1, uavs, workers, used_t, used_w));
                        used_w[j] = false;
                        used_t.pop();
                    }
                }
            }
            best
        }
        go(0, uavs, workers, &mut Vec::new(), &mut vec![false; workers.len()])
    }

    proptest! {
        #[test]
        fn flow_matches_brute_force(
            uavs in proptest::collection::vec(proptest::collection::vec(0u32..5, 0..4), 0..5),
            workers in proptest::collection::vec(proptest::collection::vec(0u32..5, 0..4), 0..5),
        ) {
            prop_assert_eq!(max_tripartite(&uavs, &workers), brute_tripartite(&uavs, &workers));
        }

        #[test]
        fn epsilon_is_scale_and_translation_free(
            pts in proptest::collection::vec((0.0..30.0f64, 0.0..30.0f64, 1.0..10.0f64), 2..8),
            k in 0.1..10.0f64, dx in -50.0..50.0f64, dy in -50.0..50.0f64,
        ) {
            let a: Vec<Disk> = pts.iter().map(|&(x, y, r)| disk(x, y, r)).collect();
            let b: Vec<Disk> = pts.iter().map(|&(x, y, r)| disk(k * x + dx, k * y + dy, k * r)).collect();
            let ea = coupling_strength(&a).unwrap().epsilon;
            let eb = coupling_strength(&b).unwrap().epsilon;
            prop_assert!((ea - eb).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ea));
        }

        #[test]
        fn growing_a_free_disk_does_not_lower_overlap(
            d in 0.5..6.0f64, r in 1.0..3.0f64, grow in 0.0..0.5f64,
        ) {
            // the partner has radius 3; a disk of radius r at distance d
            // overlaps it and, while r + grow <= 3 - d fails, is not nested
            let partner = disk(0.0, 0.0, 3.0);
            let small = disk(d, 0.0, r);
            let bigger = disk(d, 0.0, r + grow);
            prop_assume!(d < 3.0 + r && d > (3.0 - r).abs() && d > (3.0 - r - grow).abs());
            prop_assume!(r + grow <= 3.0);
            prop_assert!(disk_overlap_jaccard(partner, bigger) + 1e-12 >= disk_overlap_jaccard(partner, small));
        }
    }

    #[test]
    fn lens_formula_agrees_with_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..5 {
            let a = disk(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), rng.gen_range(0.5..3.0));
            let b = disk(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0), rng.gen_range(0.5..3.0));
            let (x0, x1) = ((a.center.x - a.radius).min(b.center.x - b.radius), (a.center.x + a.radius).max(b.center.x + b.radius));
            let (y0, y1) = ((a.center.y - a.radius).min(b.center.y - b.radius), (a.center.y + a.radius).max(b.center.y + b.radius));
            let (mut both, mut either) = (0u32, 0u32);
            for _ in 0..200_000 {
                let p = Position::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
                let ia = dis(p, a.center) <= a.radius;
                let ib = dis(p, b.center) <= b.radius;
                both += u32::from(ia && ib);
                either += u32::from(ia || ib);
            }
            let mc = if either == 0 { 0.0 } else { f64::from(both) / f64::from(either) };
            assert!((mc - disk_overlap_jaccard(a, b)).abs() < 1e-2);
        }
    }
}
