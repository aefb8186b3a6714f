//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any hard criterion fails.
//!
//! Everything runs inside one test so the wall-clock measurements are not
//! disturbed by other tests running in parallel.

use std::collections::BTreeMap;
use std::time::Instant;

use crowdsched::baselines::{greedy_decide, raln_decide};
use crowdsched::benefit::assign_roles;
use crowdsched::coupling::{coupling_strength, disk_overlap_jaccard, Disk};
use crowdsched::nash::{
    candidate_actions, decide_epoch, sample_action, CandidateSet, JointAssignment, SchedulerConfig, Stance,
};
use crowdsched::scenario::{generate, ScenarioFile, ScenarioSpec};
use crowdsched::sim::{run, Algorithm, MetricsLog, SimConfig, Simulation};
use crowdsched::world::{
    dis, ActionKind, AgentId, AgentKind, Bounds, ChargePoint, OnlineWindow, Position, TaskPoint, Uav,
    WorldSnapshot, Worker,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

struct Report {
    lines: Vec<(u32, bool, bool, String)>,
}

impl Report {
    fn record(&mut self, id: u32, pass: bool, detail: String) {
        println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, true, detail));
    }

    /// Printed but never fails the test.
    fn inform(&mut self, id: u32, pass: bool, detail: String) {
        println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL (reported only)" });
        self.lines.push((id, pass, false, detail));
    }
}

// independent reward oracle

type Profile = BTreeMap<AgentId, ActionKind>;

fn loc_of(snap: &WorldSnapshot, id: AgentId) -> (Position, f64) {
    let a = snap.agent(id).expect("online agent");
    (a.loc(), a.radius())
}

fn matched(profile: &Profile) -> Vec<u32> {
    let mut out = Vec::new();
    for (&id, &a) in profile {
        if let (AgentId::Uav(_), ActionKind::GoToTask(x)) = (id, a) {
            let worker_there =
                profile.iter().any(|(w, b)| w.kind() == AgentKind::Worker && *b == ActionKind::GoToTask(x));
            if worker_there && !out.contains(&x) {
                out.push(x);
            }
        }
    }
    out
}

fn oracle_task(id: AgentId, profile: &Profile, snap: &WorldSnapshot) -> f64 {
    let (me, r) = loc_of(snap, id);
    matched(profile).into_iter().filter(|&x| dis(me, snap.task(x).unwrap().loc) <= r).count() as f64
}

fn oracle_charge(id: AgentId, profile: &Profile, snap: &WorldSnapshot) -> f64 {
    let (me, r) = loc_of(snap, id);
    let near = |a: AgentId| dis(me, loc_of(snap, a).0) <= r;
    let mut total = 0.0;
    for cp in snap.charge_points() {
        let target = ActionKind::GoToCharge(cp.id);
        let staffed = profile.iter().any(|(v, a)| v.kind() == AgentKind::Vehicle && *a == target && near(*v));
        if !staffed {
            continue;
        }
        for (u, a) in profile {
            if let AgentId::Uav(i) = u {
                if *a == target && near(*u) {
                    let uav = snap.uav(*i).unwrap();
                    total += uav.full_power - uav.power;
                }
            }
        }
    }
    total
}

fn oracle_reward(id: AgentId, stance: Stance, profile: &Profile, snap: &WorldSnapshot) -> f64 {
    match stance {
        Stance::TaskSide => oracle_task(id, profile, snap),
        Stance::ChargeSide => oracle_charge(id, profile, snap),
        Stance::Both => {
            let full = snap.uav(id.index()).unwrap().full_power;
            oracle_task(id, profile, snap) + oracle_charge(id, profile, snap) / full
        }
        Stance::Idle => 0.0,
    }
}

/// Free agents with an improving unilateral switch.
fn nash_violations(snap: &WorldSnapshot, a: &JointAssignment) -> Vec<AgentId> {
    let mut bad = Vec::new();
    for agent in snap.agents().filter(|x| snap.locked_action(x.id()).is_none()) {
        let id = agent.id();
        let stance = a.stances[&id];
        let base = oracle_reward(id, stance, &a.actions, snap);
        let mut trial = a.actions.clone();
        for alt in candidate_actions(agent, stance, snap).actions() {
            trial.insert(id, alt);
            if oracle_reward(id, stance, &trial, snap) > base + 1e-9 {
                bad.push(id);
                break;
            }
        }
    }
    bad
}

/// Drives a simulation epoch by epoch, handing every decision to `check`.
fn epochs(
    scenario: &ScenarioFile,
    seed: u64,
    alg: Algorithm,
    mut check: impl FnMut(&WorldSnapshot, &JointAssignment),
) -> usize {
    let cfg = SimConfig { seed, algorithm: alg, ..SimConfig::default() };
    let sched = SchedulerConfig { max_rounds: cfg.max_rounds, ..Default::default() };
    let mut sim = Simulation::new(scenario, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n = 0;
    let steps = (cfg.limit_time / cfg.interval).round() as u64;
    for k in 0..steps {
        let snap = sim.snapshot();
        let roles = assign_roles(&snap);
        let a = match alg {
            Algorithm::Raln => raln_decide(&snap, &roles, &mut rng, &sched).unwrap(),
            _ => decide_epoch(&snap, &roles, &mut rng, &sched).unwrap(),
        };
        if snap.agent_count() > 0 {
            check(&snap, &a);
            n += 1;
        }
        sim.commit(&a);
        let end = (k + 1) as f64 * cfg.interval;
        while sim.time() < end - 1e-9 {
            let dt = cfg.tick.min(end - sim.time());
            sim.advance_tick(dt, None).unwrap();
        }
    }
    n
}

fn criterion_1(report: &mut Report) {
    let start = Instant::now();
    let (mut checked, mut converged, mut violations) = (0, 0, 0);
    'outer: for seed in 0.. {
        let scenario = generate(&ScenarioSpec::random(1).unwrap().with_seed(100 + seed)).unwrap();
        for alg in [Algorithm::Paln, Algorithm::Raln] {
            epochs(&scenario, seed, alg, |snap, a| {
                checked += 1;
                if a.converged {
                    converged += 1;
                    violations += nash_violations(snap, a).len();
                }
            });
        }
        if checked >= 200 {
            break 'outer;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.record(
        1,
        violations == 0 && converged > 0 && secs < 300.0,
        format!("{checked} epochs, {converged} converged, {violations} violations, {secs:.1} s"),
    );
}

fn micro_instance(rng: &mut ChaCha8Rng) -> WorldSnapshot {
    let win = OnlineWindow::new(0.0, 60.0);
    let pos = |rng: &mut ChaCha8Rng| Position::new(rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0));
    let (nu, nw, nt) = (rng.gen_range(1..=3u32), rng.gen_range(1..=3u32), rng.gen_range(1..=3u32));
    let uavs: Vec<Uav> = (0..nu)
        .map(|id| {
            let loc = pos(rng);
            let power = rng.gen_range(6.0..=30.0);
            Uav { id, loc, speed: 1.0, full_power: 30.0, power, radius: 8.0, window: win }
        })
        .collect();
    let workers: Vec<Worker> =
        (0..nw).map(|id| Worker { id, loc: pos(rng), speed: 0.5, radius: 8.0, window: win }).collect();
    let tasks: Vec<TaskPoint> =
        (0..nt).map(|id| TaskPoint { id, loc: pos(rng), cost_power: 3.0, completed: false }).collect();
    WorldSnapshot::builder(0.0, Bounds { width: 4.0, height: 4.0 })
        .uavs(uavs)
        .workers(workers)
        .tasks(tasks)
        .charge_points([ChargePoint { id: 0, loc: pos(rng) }])
        .build()
}

/// Every joint profile over the candidate sets, with its Nash status.
fn enumerate(snap: &WorldSnapshot, stances: &BTreeMap<AgentId, Stance>) -> Vec<(Profile, bool)> {
    let sets: Vec<(AgentId, Vec<ActionKind>)> = snap
        .agents()
        .map(|a| (a.id(), candidate_actions(a, stances[&a.id()], snap).actions().collect()))
        .collect();
    let mut profiles: Vec<Profile> = vec![Profile::new()];
    for (id, acts) in &sets {
        profiles = profiles
            .into_iter()
            .flat_map(|p| {
                acts.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.insert(*id, a);
                    q
                })
            })
            .collect();
    }
    profiles
        .into_iter()
        .map(|p| {
            let nash = sets.iter().all(|(id, acts)| {
                let base = oracle_reward(*id, stances[id], &p, snap);
                acts.iter().all(|&alt| {
                    let mut q = p.clone();
                    q.insert(*id, alt);
                    oracle_reward(*id, stances[id], &q, snap) <= base + 1e-9
                })
            });
            (p, nash)
        })
        .collect()
}

fn criterion_2(report: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checked, mut nash_bad, mut greedy_bad) = (0, 0, 0);
    for i in 0..100 {
        let snap = micro_instance(&mut rng);
        let roles = assign_roles(&snap);
        let greedy = greedy_decide(&snap, &roles);
        let all = enumerate(&snap, &greedy.stances);
        let best = all.iter().map(|(p, _)| matched(p).len()).max().unwrap_or(0);
        if greedy.matched_tasks().len() > best {
            greedy_bad += 1;
        }
        for seed in 0..3 {
            let cfg = SchedulerConfig::default();
            let mut r = ChaCha8Rng::seed_from_u64(1000 * i + seed);
            for a in [
                decide_epoch(&snap, &roles, &mut r, &cfg).unwrap(),
                raln_decide(&snap, &roles, &mut r, &cfg).unwrap(),
            ] {
                if !a.converged {
                    continue;
                }
                checked += 1;
                if !all.iter().any(|(p, nash)| *nash && *p == a.actions) {
                    nash_bad += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report.record(
        2,
        nash_bad == 0 && greedy_bad == 0 && checked > 0 && secs < 120.0,
        format!("{checked} converged profiles, {nash_bad} not Nash, {greedy_bad} greedy above optimum, {secs:.1} s"),
    );
}

fn criterion_3(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    // distances and hand-computed softmax targets
    let cases: [([f64; 3], [f64; 3]); 3] = [
        ([1.0, 2.0, 30.0], [0.7311, 0.2689, 0.0]),
        ([1.0, 1.0, 2.0], [0.4223, 0.4223, 0.1554]),
        ([3.0, 3.0, 3.0], [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
    ];
    for (d, target) in cases {
        let points: Vec<(ActionKind, f64)> = (0..3).map(|i| (ActionKind::GoToTask(i), d[i as usize])).collect();
        let set = CandidateSet::from_points(AgentId::Worker(0), points);
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            match sample_action(&set, &mut rng).kind {
                ActionKind::GoToTask(i) => counts[i as usize] += 1,
                other => panic!("unexpected {other:?}"),
            }
        }
        for i in 0..3 {
            worst = worst.max((counts[i] as f64 / draws as f64 - target[i]).abs());
        }
    }
    report.record(3, worst <= 0.01, format!("largest frequency error {worst:.4} over 3 sets of 10^5 draws"));
}

fn monte_carlo_jaccard(a: Disk, b: Disk, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let lo_x = (a.center.x - a.radius).min(b.center.x - b.radius);
    let hi_x = (a.center.x + a.radius).max(b.center.x + b.radius);
    let lo_y = (a.center.y - a.radius).min(b.center.y - b.radius);
    let hi_y = (a.center.y + a.radius).max(b.center.y + b.radius);
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..samples {
        let p = Position::new(rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y));
        let (ia, ib) = (dis(p, a.center) <= a.radius, dis(p, b.center) <= b.radius);
        both += usize::from(ia && ib);
        either += usize::from(ia || ib);
    }
    both as f64 / either as f64
}

fn criterion_4(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let a = Disk::new(Position::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)), rng.gen_range(0.5..5.0));
        let b = Disk::new(Position::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)), rng.gen_range(0.5..5.0));
        let mc = monte_carlo_jaccard(a, b, 1_000_000, &mut rng);
        worst = worst.max((mc - disk_overlap_jaccard(a, b)).abs());
    }
    let d = |x: f64, r: f64| Disk::new(Position::new(x, 0.0), r);
    let disjoint = disk_overlap_jaccard(d(0.0, 1.0), d(5.0, 2.0));
    let same = disk_overlap_jaccard(d(2.0, 3.0), d(2.0, 3.0));
    let eps_same = coupling_strength(&[d(1.0, 2.0); 3]).unwrap().epsilon;
    let eps_apart = coupling_strength(&[d(0.0, 1.0), d(3.0, 1.0)]).unwrap().epsilon;
    let pass = worst <= 1e-2 && disjoint == 0.0 && same == 1.0 && eps_same == 1.0 && eps_apart == 0.0;
    report.record(
        4,
        pass,
        format!("largest Monte Carlo error {worst:.5} on 50 pairs; endpoints {disjoint}/{same}, epsilon {eps_apart}/{eps_same}"),
    );
}

/// Runs and their conservation tallies.
#[derive(Default)]
struct Conservation {
    runs: usize,
    energy: usize,
    feasibility: usize,
    double: usize,
    fcfs: usize,
}

impl Conservation {
    fn add(&mut self, log: &MetricsLog) {
        self.runs += 1;
        self.energy += log.audit.energy_violations.len();
        self.feasibility += log.audit.feasibility_violations.len();
        self.double += log.audit.double_completions();
        self.fcfs += log.audit.fcfs_violations();
    }
}

fn runs(c: &mut Conservation, preset: usize, alg: Algorithm, radius: Option<f64>, seeds: u64) -> Vec<MetricsLog> {
    (0..seeds)
        .map(|seed| {
            let mut scenario = generate(&ScenarioSpec::random(preset).unwrap().with_seed(seed)).unwrap();
            if let Some(r) = radius {
                scenario = scenario.with_radius(r);
            }
            let log = run(&scenario, &SimConfig { seed, algorithm: alg, ..SimConfig::default() }).unwrap();
            c.add(&log);
            log
        })
        .collect()
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

struct Summary {
    rate: f64,
    secs: f64,
    km: f64,
}

fn summarize(logs: &[MetricsLog]) -> Summary {
    Summary {
        rate: mean(logs.iter().map(|l| l.completion_rate.unwrap())),
        secs: mean(logs.iter().map(MetricsLog::mean_decision_secs)),
        km: mean(logs.iter().map(MetricsLog::mean_travel_km)),
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(rx.iter().copied()), mean(ry.iter().copied()));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn criterion_9(report: &mut Report, c: &mut Conservation) {
    let radii = [4.0, 6.0, 8.0, 10.0, 12.0, 14.0];
    let (mut eps, mut secs) = (Vec::new(), Vec::new());
    let scenario = generate(&ScenarioSpec::random(1).unwrap()).unwrap();
    for &r in &radii {
        let file = scenario.clone().with_radius(r);
        let logs: Vec<MetricsLog> = (0..5)
            .map(|seed| {
                let log = run(&file, &SimConfig { seed, ..SimConfig::default() }).unwrap();
                c.add(&log);
                log
            })
            .collect();
        eps.push(mean(logs.iter().map(|l| l.mean_epsilon().unwrap())));
        secs.push(mean(logs.iter().map(MetricsLog::mean_decision_secs)));
    }
    let span = eps.last().unwrap() / eps[0];
    let rho_time = spearman(&eps, &secs);

    // local matches against the best achievable on small worlds
    let small = ScenarioSpec {
        name: "small".into(),
        width: 12.0,
        height: 12.0,
        tasks: 16,
        charges: 4,
        workers: 8,
        uavs: 6,
        vehicles: 3,
        ..ScenarioSpec::random(1).unwrap()
    };
    let (mut small_eps, mut gaps) = (Vec::new(), Vec::new());
    for &r in &radii {
        let (mut m, mut o, mut e) = (0, 0, Vec::new());
        for seed in 0..SEEDS {
            let file = generate(&small.clone().with_seed(seed)).unwrap().with_radius(r);
            let log = run(&file, &SimConfig { seed, ..SimConfig::default() }).unwrap();
            c.add(&log);
            let (lm, lo) = log.match_totals();
            m += lm;
            o += lo;
            e.extend(log.mean_epsilon());
        }
        small_eps.push(mean(e));
        gaps.push(1.0 - m as f64 / o.max(1) as f64);
    }
    let rho_gap = spearman(&small_eps, &gaps);
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.p$}")).collect::<Vec<_>>().join("/");
    report.record(
        9,
        span >= 2.0 && rho_time > 0.0 && rho_gap > 0.0,
        format!(
            "epsilon {} (span {span:.1}x); decision ms {}; rho(eps, time) {rho_time:.2}; small-world gap {} rho {rho_gap:.2}",
            fmt(&eps, 3),
            fmt(&secs.iter().map(|s| s * 1e3).collect::<Vec<_>>(), 3),
            fmt(&gaps, 3),
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let mut report = Report { lines: Vec::new() };
    let mut cons = Conservation::default();

    criterion_1(&mut report);
    criterion_2(&mut report);
    criterion_3(&mut report);
    criterion_4(&mut report);

    let paln = summarize(&runs(&mut cons, 1, Algorithm::Paln, None, SEEDS));
    let raln = summarize(&runs(&mut cons, 1, Algorithm::Raln, None, SEEDS));
    report.record(
        5,
        paln.secs < raln.secs && paln.km <= raln.km && paln.rate >= raln.rate - 0.02,
        format!(
            "decision {:.3} vs {:.3} ms, travel {:.2} vs {:.2} km, completion {:.2}% vs {:.2}% (paln vs raln, {SEEDS} seeds)",
            paln.secs * 1e3,
            raln.secs * 1e3,
            paln.km,
            raln.km,
            paln.rate * 100.0,
            raln.rate * 100.0
        ),
    );

    let mut ratios = Vec::new();
    for preset in [2, 11] {
        let reduced = summarize(&runs(&mut cons, preset, Algorithm::Paln, None, SEEDS));
        let full = summarize(&runs(&mut cons, preset, Algorithm::PalnUnreduced, None, SEEDS));
        ratios.push((preset, full.secs / reduced.secs, reduced.secs, full.secs));
    }
    report.record(
        6,
        ratios.iter().all(|r| r.1 >= 2.0),
        ratios
            .iter()
            .map(|(p, ratio, a, b)| format!("Random_{p}: {:.3} -> {:.3} ms ({ratio:.2}x)", b * 1e3, a * 1e3))
            .collect::<Vec<_>>()
            .join("; "),
    );

    let kwta = summarize(&runs(&mut cons, 1, Algorithm::Kwta, None, SEEDS));
    let greedy = summarize(&runs(&mut cons, 1, Algorithm::Greedy, None, SEEDS));
    report.record(
        7,
        paln.rate > kwta.rate && kwta.rate > greedy.rate && paln.rate - greedy.rate >= 0.30,
        format!(
            "completion paln {:.2}%, kwta {:.2}%, greedy {:.2}%; paln - greedy {:.2} pp",
            paln.rate * 100.0,
            kwta.rate * 100.0,
            greedy.rate * 100.0,
            (paln.rate - greedy.rate) * 100.0
        ),
    );

    report.inform(8, paln.secs < 10.0, format!("mean decision time {:.4} s on Random_1 (limit 10 s)", paln.secs));

    criterion_9(&mut report, &mut cons);

    report.record(
        10,
        cons.energy == 0 && cons.feasibility == 0 && cons.double == 0 && cons.fcfs == 0,
        format!(
            "{} runs: {} energy, {} feasibility, {} double completions, {} FCFS violations",
            cons.runs, cons.energy, cons.feasibility, cons.double, cons.fcfs
        ),
    );

    let failed: Vec<u32> = report.lines.iter().filter(|l| l.2 && !l.1).map(|l| l.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
