//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use sensecourt::auction::{
    clear_slot, truthfulness_sweep, AuctionRules, BidVector, RegulationState,
};
use sensecourt::benchmark::{
    dual_upper_bound, incentive_cost, solve_complete_bruteforce, solve_complete_dp,
    unconstrained_trace_welfare, Trace,
};
use sensecourt::engine::{run_simulation, run_with_source, PolicySpec, SimulationOptions};
use sensecourt::gridset::GridSet;
use sensecourt::policy_dual::{DualState, StepSchedule};
use sensecourt::policy_lyapunov::{penalty_bound_b, QueueState};
use sensecourt::scenarios::{
    generate_trace, random_instance, random_instance_with_users, slot_rng, InstanceShape, Lane,
    ScenarioConfig,
};
use sensecourt::solver::{
    branch_and_bound, solve_exact, RegulatedInstance, SolveMode, DEFAULT_NODE_BUDGET,
};
use sensecourt::world::{GridMap, SlotRealization, WeightField};

const TOL: f64 = 1e-9;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64, i: u64) -> impl Rng {
    slot_rng(seed, i, Lane::Policy)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    ensure(start.elapsed() < limit, || {
        format!("runtime {:.1?} exceeds {:?}", start.elapsed(), limit)
    })
}

/// Exhaustive maximization with a plain boolean coverage vector.
fn enumerate_best(real: &SlotRealization, kappa: &[f64]) -> (f64, Vec<usize>) {
    let n = real.n_users();
    let regions: Vec<Vec<usize>> = real.regions().iter().map(|r| r.iter().collect()).collect();
    let mut all = Vec::with_capacity(1 << n);
    for mask in 0u32..1 << n {
        let users: Vec<usize> = (0..n).filter(|u| mask >> u & 1 == 1).collect();
        let mut covered = vec![false; real.n_grids()];
        for &u in &users {
            for &g in &regions[u] {
                covered[g] = true;
            }
        }
        let value: f64 = (0..real.n_grids())
            .filter(|&g| covered[g])
            .map(|g| real.weights()[g])
            .sum();
        let obj = value - users.iter().map(|&u| kappa[u]).sum::<f64>();
        all.push((users, obj));
    }
    let max = all.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
    let (users, obj) = all
        .into_iter()
        .filter(|a| a.1 >= max - TOL)
        .min_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)))
        .unwrap();
    (obj, users)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let shape = InstanceShape {
        min_users: 1,
        max_users: 12,
        width_grids: 10,
        height_grids: 6,
        max_side: 5,
        ..InstanceShape::default()
    };
    for i in 0..200 {
        let mut r = rng(1, i);
        let real = random_instance(&shape, &mut r);
        let bonus: Vec<f64> = (0..real.n_users()).map(|_| r.gen_range(0.0..1.0)).collect();
        let inst = RegulatedInstance::regulated(
            &real,
            real.true_costs(),
            &bonus,
            &vec![true; real.n_users()],
        )
        .map_err(|e| e.to_string())?;
        let (obj, users) = enumerate_best(&real, inst.effective_costs());
        let exact = solve_exact(&inst).map_err(|e| e.to_string())?;
        let bnb = branch_and_bound(&inst, DEFAULT_NODE_BUDGET);
        for (name, res) in [("exact", &exact), ("branch_and_bound", &bnb)] {
            let got: Vec<usize> = res.alloc.selected_users().collect();
            ensure((res.objective - obj).abs() <= TOL && got == users, || {
                format!(
                    "instance {i}: {name} returned {got:?} ({}) but oracle has {users:?} ({obj})",
                    res.objective
                )
            })?;
        }
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!(
        "200/200 instances match the enumerator, {:.1?}",
        start.elapsed()
    ))
}

/// Static users on a 20 × 20 map: slots are i.i.d. given the initial positions.
fn stationary(n_users: usize) -> ScenarioConfig {
    ScenarioConfig {
        map: GridMap::new(20, 20, 200.0).unwrap(),
        n_users,
        step_max_m: 0.0,
        seed: 7,
        ..ScenarioConfig::default()
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let (n, t, d) = (20, 10_000, 0.5);
    let opts = SimulationOptions::new(t, 40, vec![d; n])
        .with_solver(SolveMode::Greedy)
        .with_dropping(false);
    let m = run_simulation(&stationary(n), &PolicySpec::Lyapunov { phi: 10.0 }, &opts)
        .map_err(|e| e.to_string())?;
    // replay the queues from the selections
    let mut q = vec![0.0f64; n];
    for sel in &m.selected_series {
        for u in 0..n {
            q[u] = (q[u] - if sel[u] { 1.0 } else { 0.0 }).max(0.0) + d;
        }
    }
    let q_rate = q.iter().cloned().fold(0.0, f64::max) / t as f64;
    let min_p = m.final_alloc_probs().into_iter().fold(1.0, f64::min);
    ensure(q_rate <= 0.05, || format!("max q/T = {q_rate:.4} > 0.05"))?;
    ensure(min_p >= 0.48, || {
        format!("min allocation probability {min_p:.4} < 0.48")
    })?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "max q/T {q_rate:.4}, min allocation probability {min_p:.4}, {:.1?}",
        start.elapsed()
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let (n, t) = (8, 10_000);
    let d = vec![0.5; n];
    let cfg = stationary(n);
    let slots = generate_trace(&cfg, t).map_err(|e| e.to_string())?;
    let trace = Trace::new(slots.clone(), d.clone()).map_err(|e| e.to_string())?;
    let bound = dual_upper_bound(&trace, 400)
        .map_err(|e| e.to_string())?
        .avg_welfare;
    let b = penalty_bound_b(&d);
    let opts = SimulationOptions::new(t, 40, d.clone())
        .with_solver(SolveMode::Exact)
        .with_dropping(false);
    let mut gaps = Vec::new();
    for phi in [5.0, 10.0, 20.0] {
        let spec = PolicySpec::Lyapunov { phi };
        let mut policy = spec
            .build(n, &d, SolveMode::Exact, cfg.seed)
            .map_err(|e| e.to_string())?;
        let m = run_with_source(
            slots.iter().cloned(),
            n,
            spec.label(),
            policy.as_mut(),
            &opts,
        )
        .map_err(|e| e.to_string())?;
        let avg = *m.running_avg_welfare.last().unwrap();
        let floor = bound - b / phi - 0.05 * b / phi;
        ensure(avg >= floor, || {
            format!("phi {phi}: welfare {avg:.4} below {floor:.4}")
        })?;
        gaps.push(bound - avg);
    }
    ensure(gaps.windows(2).all(|w| w[1].abs() < w[0].abs()), || {
        format!("gaps to the bound not shrinking with phi: {gaps:?}")
    })?;
    Ok(format!(
        "dual bound {bound:.4}, gaps {:.4}/{:.4}/{:.4} for phi 5/10/20 (B = {b}), {:.1?}",
        gaps[0],
        gaps[1],
        gaps[2],
        start.elapsed()
    ))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    for i in 0..100 {
        let mut r = rng(4, i);
        let real = random_instance(&InstanceShape::default(), &mut r);
        let n = real.n_users();
        let lambda: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.5)).collect();
        let phi = [5.0, 10.0, 20.0][i as usize % 3];
        let dual = DualState::with_multipliers(lambda.clone(), StepSchedule::default());
        let queue = QueueState::with_backlogs(lambda.iter().map(|l| phi * l).collect(), phi)
            .map_err(|e| e.to_string())?;
        let all = vec![true; n];
        let a = dual
            .allocate(&real, &all, SolveMode::Exact)
            .map_err(|e| e.to_string())?;
        let b = queue
            .allocate(&real, &all, SolveMode::Exact)
            .map_err(|e| e.to_string())?;
        ensure(a == b, || {
            format!("slot {i}: dual and queue allocations differ")
        })?;
    }
    // After the first (forced) slot the queue policy holds q = D and the
    // auction holds r = D/φ, so the two runs must coincide from then on.
    let cfg = ScenarioConfig {
        map: GridMap::new(20, 20, 200.0).unwrap(),
        n_users: 10,
        ..ScenarioConfig::default()
    };
    let opts = SimulationOptions::new(500, 40, vec![0.5; 10]).with_solver(SolveMode::Exact);
    let phi = 10.0;
    let lyap =
        run_simulation(&cfg, &PolicySpec::Lyapunov { phi }, &opts).map_err(|e| e.to_string())?;
    let auction =
        run_simulation(&cfg, &PolicySpec::Auction { phi }, &opts).map_err(|e| e.to_string())?;
    ensure(lyap.selected_series == auction.selected_series, || {
        "allocation traces differ".into()
    })?;
    ensure(lyap.welfare_series == auction.welfare_series, || {
        "welfare traces differ".into()
    })?;
    Ok(format!(
        "100/100 slots agree; 500-slot auction and queue traces identical, {:.1?}",
        start.elapsed()
    ))
}

/// One bidder alone on two grids of total weight `v`, plus a second bidder with cost 5.
fn lone_bidder(v: f64, r: f64, c: f64) -> (SlotRealization, RegulationState) {
    let real = SlotRealization::new(
        WeightField::new(vec![v / 2.0, v / 2.0, 1.0]).unwrap(),
        vec![
            GridSet::from_indices(3, [0, 1]),
            GridSet::from_indices(3, [2]),
        ],
        vec![c, 5.0],
    )
    .unwrap();
    (
        real,
        RegulationState::with_factors(vec![r, 0.0], 10.0).unwrap(),
    )
}

struct SweepStats {
    max_regret: f64,
    min_surplus: f64,
    win_win: usize,
    loss_win: usize,
    loss_win_max_utility: f64,
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let rules = AuctionRules::default();
    let stats: Vec<Result<SweepStats, String>> = (0..500u64)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(5, i);
            let real = random_instance(&InstanceShape::default(), &mut r);
            let n = real.n_users();
            let factors: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..1.0)).collect();
            let state = RegulationState::with_factors(factors, 10.0).map_err(|e| e.to_string())?;
            let costs = real.true_costs().to_vec();
            let mut s = SweepStats {
                max_regret: 0.0,
                min_surplus: f64::INFINITY,
                win_win: 0,
                loss_win: 0,
                loss_win_max_utility: f64::NEG_INFINITY,
            };
            for u in 0..n {
                let grid: Vec<f64> = (0..201)
                    .map(|j| 3.0 * costs[u] * j as f64 / 200.0)
                    .collect();
                let rep = truthfulness_sweep(&real, &state, &costs, u, &grid, rules)
                    .map_err(|e| e.to_string())?;
                s.max_regret = s.max_regret.max(rep.regret);
                if rep.truthful_selected {
                    s.min_surplus = s.min_surplus.min(rep.truthful_payment - costs[u]);
                }
                for j in 0..grid.len() {
                    if !rep.selected[j] {
                        continue;
                    }
                    if rep.truthful_selected {
                        if (rep.payments[j] - rep.truthful_payment).abs() > TOL {
                            return Err(format!("instance {i} user {u}: winning payments differ"));
                        }
                        s.win_win += 1;
                    } else {
                        s.loss_win += 1;
                        s.loss_win_max_utility = s.loss_win_max_utility.max(rep.utilities[j]);
                    }
                }
            }
            Ok(s)
        })
        .collect();
    let mut total = SweepStats {
        max_regret: 0.0,
        min_surplus: f64::INFINITY,
        win_win: 0,
        loss_win: 0,
        loss_win_max_utility: f64::NEG_INFINITY,
    };
    for s in stats {
        let s = s?;
        total.max_regret = total.max_regret.max(s.max_regret);
        total.min_surplus = total.min_surplus.min(s.min_surplus);
        total.win_win += s.win_win;
        total.loss_win += s.loss_win;
        total.loss_win_max_utility = total.loss_win_max_utility.max(s.loss_win_max_utility);
    }
    ensure(total.max_regret <= TOL, || {
        format!("max regret {:e}", total.max_regret)
    })?;
    ensure(total.min_surplus >= -TOL, || {
        format!("winner paid below cost by {}", -total.min_surplus)
    })?;
    ensure(
        total.loss_win == 0 || total.loss_win_max_utility <= TOL,
        || {
            format!(
                "a loss-to-win deviation gained {}",
                total.loss_win_max_utility
            )
        },
    )?;

    // constructed cases
    let mut g = rng(55, 0);
    let (mut ww, mut lw) = (0, 0);
    for _ in 0..20 {
        let v = g.gen_range(1.0..5.0);
        let r = g.gen_range(0.0..1.0);
        let c = g.gen_range(0.0..v + r - 0.1);
        let (real, state) = lone_bidder(v, r, c);
        let truthful = clear_slot(
            &state,
            &real,
            &BidVector::truthful(&real),
            &[true, true],
            rules,
        )
        .map_err(|e| e.to_string())?;
        let bid = g.gen_range(0.0..v + r - 0.05);
        let dev = clear_slot(
            &state,
            &real,
            &BidVector::truthful(&real).with_bid(0, bid).unwrap(),
            &[true, true],
            rules,
        )
        .map_err(|e| e.to_string())?;
        if truthful.alloc.is_selected(0)
            && dev.alloc.is_selected(0)
            && (truthful.payments[0] - dev.payments[0]).abs() <= TOL
        {
            ww += 1;
        }
        let c = g.gen_range(v + r + 0.1..v + r + 3.0);
        let (real, state) = lone_bidder(v, r, c);
        let truthful = clear_slot(
            &state,
            &real,
            &BidVector::truthful(&real),
            &[true, true],
            rules,
        )
        .map_err(|e| e.to_string())?;
        let dev = clear_slot(
            &state,
            &real,
            &BidVector::truthful(&real).with_bid(0, bid).unwrap(),
            &[true, true],
            rules,
        )
        .map_err(|e| e.to_string())?;
        if !truthful.alloc.is_selected(0) && dev.alloc.is_selected(0) && dev.payments[0] - c < 0.0 {
            lw += 1;
        }
    }
    ensure(ww >= 20 && lw >= 20, || {
        format!("constructed witnesses: win/win {ww}, loss/win {lw}")
    })?;
    Ok(format!(
        "max regret {:e}, min winner surplus {:.3e}; win/win {} sweep + {ww} constructed, loss/win {} sweep + {lw} constructed, {:.1?}",
        total.max_regret,
        total.min_surplus,
        total.win_win,
        total.loss_win,
        start.elapsed()
    ))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let shape = InstanceShape::default();
    let mut weak = 0;
    let mut trend = 0;
    for s in 0..100 {
        let mut r = rng(6, s);
        let slots: Vec<SlotRealization> = (0..64)
            .map(|_| random_instance_with_users(&shape, 3, &mut r))
            .collect();
        let short = Trace::new(slots[..4].to_vec(), vec![0.5; 3]).map_err(|e| e.to_string())?;
        let long = Trace::new(slots, vec![0.5; 3]).map_err(|e| e.to_string())?;
        let opt4 = solve_complete_bruteforce(&short)
            .map_err(|e| e.to_string())?
            .avg_welfare;
        let dual4 = dual_upper_bound(&short, 2000)
            .map_err(|e| e.to_string())?
            .avg_welfare;
        let opt64 = solve_complete_dp(&long)
            .map_err(|e| e.to_string())?
            .avg_welfare;
        let dual64 = dual_upper_bound(&long, 2000)
            .map_err(|e| e.to_string())?
            .avg_welfare;
        if dual4 >= opt4 - TOL {
            weak += 1;
        }
        if dual64 - opt64 <= dual4 - opt4 + TOL {
            trend += 1;
        }
    }
    ensure(weak == 100, || {
        format!("weak duality held on {weak}/100 traces")
    })?;
    ensure(trend >= 80, || format!("gap shrank on {trend}/100 pairs"))?;
    Ok(format!(
        "weak duality 100/100; gap(T=64) <= gap(T=4) on {trend}/100 pairs, {:.1?}",
        start.elapsed()
    ))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let cfg = ScenarioConfig::default();
    let opts =
        SimulationOptions::new(2000, 40, vec![0.5; cfg.n_users]).with_solver(SolveMode::Greedy);
    let specs = [
        PolicySpec::Lyapunov { phi: 1.0 },
        PolicySpec::RadpVpc { alpha: 1.0 },
        PolicySpec::Greedy,
        PolicySpec::Random,
    ];
    let drops: Vec<Result<f64, String>> = specs
        .par_iter()
        .map(|p| {
            run_simulation(&cfg, p, &opts)
                .map(|m| m.summary.dropping_fraction)
                .map_err(|e| e.to_string())
        })
        .collect();
    let drops: Vec<f64> = drops.into_iter().collect::<Result<_, _>>()?;
    let (lyap, radp, greedy, random) = (drops[0], drops[1], drops[2], drops[3]);
    let detail = format!(
        "dropped: lyapunov {lyap:.2}, radp_vpc {radp:.2}, greedy {greedy:.2}, random {random:.2}"
    );
    ensure(lyap == 0.0, || detail.clone())?;
    ensure(greedy >= 0.4 && random >= 0.4, || detail.clone())?;
    ensure(lyap < radp && radp < greedy, || detail.clone())?;
    within(Duration::from_secs(300), start)?;
    Ok(format!("{detail}, {:.1?}", start.elapsed()))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let shape = InstanceShape {
        min_users: 8,
        max_users: 8,
        cost_scale: 2.0,
        ..InstanceShape::default()
    };
    let sweep = [0.0, 0.2, 0.4, 0.6];
    let mut lines = Vec::new();
    for s in 0..5 {
        let mut r = rng(8, s);
        let slots: Vec<SlotRealization> =
            (0..200).map(|_| random_instance(&shape, &mut r)).collect();
        let unc = unconstrained_trace_welfare(&Trace::new(slots.clone(), vec![0.0; 8]).unwrap())
            .map_err(|e| e.to_string())?;
        let mut welfare = Vec::new();
        let mut cost = Vec::new();
        for &d in &sweep {
            let b = dual_upper_bound(&Trace::new(slots.clone(), vec![d; 8]).unwrap(), 2000)
                .map_err(|e| e.to_string())?;
            cost.push(incentive_cost(&unc, &b).map_err(|e| e.to_string())?);
            welfare.push(b.avg_welfare);
        }
        ensure(welfare.windows(2).all(|w| w[1] <= w[0] + TOL), || {
            format!("trace {s}: welfare {welfare:?}")
        })?;
        ensure(cost.iter().all(|&c| c >= 0.0), || {
            format!("trace {s}: negative cost {cost:?}")
        })?;
        ensure(
            cost.windows(2).all(|w| w[1] >= w[0] - TOL) && cost[3] > cost[0],
            || format!("trace {s}: incentive cost {cost:?}"),
        )?;
        lines.push(format!(
            "[{}]",
            cost.iter()
                .map(|c| format!("{c:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    Ok(format!(
        "incentive cost over D = 0/0.2/0.4/0.6: {}, {:.1?}",
        lines.join(" "),
        start.elapsed()
    ))
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(&p, base, out);
        } else {
            out.push((
                p.strip_prefix(base).unwrap().display().to_string(),
                fs::read(&p).unwrap(),
            ));
        }
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{
  "scenario": {"n_users": 12, "map": {"width_grids": 15, "height_grids": 15, "grid_edge_m": 200}},
  "policies": [{"kind": "lyapunov", "phi": [10, 1]}, {"kind": "auction", "phi": 10},
               {"kind": "dual"}, {"kind": "radp_vpc", "alpha": 1}, {"kind": "greedy"}, {"kind": "random"}],
  "t_slots": 150, "warmup_slots": 20, "replications": 2,
  "benchmark": {"t_slots": 30},
  "truthcheck": {"instances": 40}
}"#,
    )
    .map_err(|e| e.to_string())?;
    let mut snapshots = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "4")] {
        let out = dir.path().join(run);
        for cmd in ["simulate", "benchmark", "truthcheck"] {
            let status = Command::new(env!("CARGO_BIN_EXE_sensecourt"))
                .args([
                    cmd,
                    "--config",
                    config.to_str().unwrap(),
                    "--seed",
                    "17",
                    "--out",
                    out.to_str().unwrap(),
                ])
                .env("SENSECOURT_THREADS", threads)
                .stdout(Stdio::null())
                .status()
                .map_err(|e| e.to_string())?;
            ensure(status.success(), || format!("`{cmd}` failed with {status}"))?;
        }
        let mut files = Vec::new();
        collect_files(&out, &out, &mut files);
        snapshots.push(files);
    }
    ensure(snapshots[0].len() == snapshots[1].len(), || {
        "different file sets".into()
    })?;
    for (a, b) in snapshots[0].iter().zip(&snapshots[1]) {
        ensure(a.0 == b.0 && a.1 == b.1, || {
            format!("{} differs between reruns", a.0)
        })?;
    }
    Ok(format!(
        "{} output files byte-identical across reruns, {:.1?}",
        snapshots[0].len(),
        start.elapsed()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("solver oracle equivalence", criterion_1),
        ("queue stability and participation", criterion_2),
        ("welfare within B/phi of the dual bound", criterion_3),
        ("policy equivalences", criterion_4),
        ("auction truthfulness", criterion_5),
        ("weak duality and gap trend", criterion_6),
        ("dropping at desk scale", criterion_7),
        ("incentive cost monotonicity", criterion_8),
        ("determinism", criterion_9),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        match f() {
            Ok(detail) => println!("acceptance {id} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("acceptance {id} FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
