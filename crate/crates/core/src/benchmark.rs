//! Offline benchmarks over a finite trace of slot realizations.
//!
//! - [`solve_complete_bruteforce`] / [`solve_complete_dp`]: the best average
//!   welfare with the whole trace known in advance, subject to every user's
//!   selection frequency reaching its threshold.
//! - [`dual_upper_bound`]: `min_λ ĝ(λ)` with
//!   `ĝ(λ) = (1/T) Σ_t max_x (V − C + Σ λ_n x_n) − Σ λ_n D_n`, found by projected
//!   subgradient descent. Any `λ ⪰ 0` gives an upper bound on the constrained
//!   optimum; for long stationary traces the minimum approaches the stochastic
//!   optimum.
//! - [`unconstrained_trace_welfare`]: slotwise welfare maximization, no constraint.

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::policy_dual::{project, StepSchedule};
use crate::solver::{
    argmax_mask, solve, solve_exact, subset_objectives, RegulatedInstance, SolveMode,
};
use crate::world::SlotRealization;
use crate::{Error, Result};

/// Largest `N × T` accepted by the joint brute force.
pub const BRUTEFORCE_LIMIT: usize = 24;
/// Largest count-state space accepted by the dynamic program.
pub const DP_STATE_LIMIT: usize = 1 << 22;
/// Largest `T × 2^N` for which per-slot subset tables are precomputed.
const TABLE_LIMIT: usize = 1 << 26;
const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    slots: Vec<SlotRealization>,
    thresholds: Vec<f64>,
}

impl Trace {
    pub fn new(slots: Vec<SlotRealization>, thresholds: Vec<f64>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Config("trace must contain at least one slot".into()));
        }
        let n = slots[0].n_users();
        let grids = slots[0].n_grids();
        check_len("thresholds", n, thresholds.len())?;
        for s in &slots {
            check_len("users per slot", n, s.n_users())?;
            check_len("grids per slot", grids, s.n_grids())?;
        }
        if let Some(d) = thresholds.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return Err(Error::Config(format!("threshold {d} outside [0, 1]")));
        }
        Ok(Trace { slots, thresholds })
    }

    pub fn slots(&self) -> &[SlotRealization] {
        &self.slots
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn n_users(&self) -> usize {
        self.thresholds.len()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Smallest selection count `k` per user with `k / T ≥ D_n`.
    fn required_counts(&self) -> Vec<usize> {
        let t = self.len() as f64;
        self.thresholds
            .iter()
            .map(|d| ((d - FEASIBILITY_TOL) * t).ceil().max(0.0) as usize)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    CompleteExact,
    DualUpperBound,
    Unconstrained,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub avg_welfare: f64,
    pub per_user_alloc_prob: Vec<f64>,
    /// For exact benchmarks: a constraint-satisfying allocation exists. For the
    /// unconstrained benchmark: its allocation happens to satisfy every threshold.
    pub feasible: bool,
    pub kind: BenchmarkKind,
}

/// Per-slot true-cost welfare of every subset of all users.
fn slot_tables(trace: &Trace) -> Vec<Vec<f64>> {
    let users: Vec<usize> = (0..trace.n_users()).collect();
    trace
        .slots
        .iter()
        .map(|s| subset_objectives(s, &users, s.true_costs()))
        .collect()
}

fn mask_counts(mask: usize, n: usize, counts: &mut [usize]) {
    for (i, c) in counts.iter_mut().enumerate().take(n) {
        if mask & (1 << i) != 0 {
            *c += 1;
        }
    }
}

fn probabilities(counts: &[usize], t: usize) -> Vec<f64> {
    counts.iter().map(|&c| c as f64 / t as f64).collect()
}

/// Joint exhaustive search over all `2^{N·T}` allocation sequences.
pub fn solve_complete_bruteforce(trace: &Trace) -> Result<BenchmarkResult> {
    let n = trace.n_users();
    let t = trace.len();
    if n * t > BRUTEFORCE_LIMIT {
        return Err(Error::Capacity {
            what: "complete-information brute force N×T",
            size: n * t,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let tables = slot_tables(trace);
    let need = trace.required_counts();
    let mut search = JointSearch {
        tables: &tables,
        need: &need,
        n,
        counts: vec![0; n],
        path: vec![0; t],
        best: f64::NEG_INFINITY,
        best_path: None,
    };
    search.visit(0, 0.0);

    match search.best_path {
        Some(path) => {
            let mut counts = vec![0; n];
            for &m in &path {
                mask_counts(m, n, &mut counts);
            }
            Ok(BenchmarkResult {
                avg_welfare: search.best / t as f64,
                per_user_alloc_prob: probabilities(&counts, t),
                feasible: true,
                kind: BenchmarkKind::CompleteExact,
            })
        }
        None => Ok(BenchmarkResult {
            feasible: false,
            kind: BenchmarkKind::CompleteExact,
            ..unconstrained_trace_welfare(trace)?
        }),
    }
}

struct JointSearch<'a> {
    tables: &'a [Vec<f64>],
    need: &'a [usize],
    n: usize,
    counts: Vec<usize>,
    path: Vec<usize>,
    best: f64,
    best_path: Option<Vec<usize>>,
}

impl JointSearch<'_> {
    fn visit(&mut self, slot: usize, total: f64) {
        let t = self.tables.len();
        let left = t - slot;
        if self
            .counts
            .iter()
            .zip(self.need)
            .any(|(&c, &d)| c + left < d)
        {
            return;
        }
        if slot == t {
            if total > self.best {
                self.best = total;
                self.best_path = Some(self.path.clone());
            }
            return;
        }
        for mask in 0..self.tables[slot].len() {
            for i in 0..self.n {
                if mask & (1 << i) != 0 {
                    self.counts[i] += 1;
                }
            }
            self.path[slot] = mask;
            self.visit(slot + 1, total + self.tables[slot][mask]);
            for i in 0..self.n {
                if mask & (1 << i) != 0 {
                    self.counts[i] -= 1;
                }
            }
        }
    }
}

/// Exact complete-information optimum by dynamic programming over per-user
/// selection counts saturated at their requirement. Handles long traces for
/// small `N`.
pub fn solve_complete_dp(trace: &Trace) -> Result<BenchmarkResult> {
    let n = trace.n_users();
    let t = trace.len();
    if n >= 16 {
        return Err(Error::Capacity {
            what: "complete-information DP users",
            size: n,
            limit: 15,
        });
    }
    let need = trace.required_counts();
    let radix: Vec<usize> = need.iter().map(|&d| d + 1).collect();
    let states = radix
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .filter(|&s| s <= DP_STATE_LIMIT)
        .ok_or(Error::Capacity {
            what: "complete-information DP states",
            size: usize::MAX,
            limit: DP_STATE_LIMIT,
        })?;
    let tables = slot_tables(trace);
    let n_masks = 1usize << n;

    // Mixed-radix state encoding; next_state[s][m] precomputed per mask.
    let decode = |mut s: usize| -> Vec<usize> {
        radix
            .iter()
            .map(|&r| {
                let d = s % r;
                s /= r;
                d
            })
            .collect()
    };
    let encode = |digits: &[usize]| -> usize {
        digits
            .iter()
            .zip(&radix)
            .rev()
            .fold(0, |acc, (&d, &r)| acc * r + d)
    };
    let mut next_state = vec![0u32; states * n_masks];
    for s in 0..states {
        let digits = decode(s);
        for m in 0..n_masks {
            let moved: Vec<usize> = digits
                .iter()
                .enumerate()
                .map(|(i, &d)| {
                    if m & (1 << i) != 0 {
                        (d + 1).min(need[i])
                    } else {
                        d
                    }
                })
                .collect();
            next_state[s * n_masks + m] = encode(&moved) as u32;
        }
    }

    let mut value = vec![f64::NEG_INFINITY; states];
    value[0] = 0.0;
    let mut choice: Vec<Vec<(u32, u32)>> = Vec::with_capacity(t);
    for table in &tables {
        let mut next = vec![f64::NEG_INFINITY; states];
        let mut back = vec![(u32::MAX, 0u32); states];
        for s in 0..states {
            if value[s] == f64::NEG_INFINITY {
                continue;
            }
            for (m, &w) in table.iter().enumerate() {
                let ns = next_state[s * n_masks + m] as usize;
                let v = value[s] + w;
                if v > next[ns] {
                    next[ns] = v;
                    back[ns] = (s as u32, m as u32);
                }
            }
        }
        value = next;
        choice.push(back);
    }

    let goal = encode(&need);
    if value[goal] == f64::NEG_INFINITY {
        return Ok(BenchmarkResult {
            feasible: false,
            kind: BenchmarkKind::CompleteExact,
            ..unconstrained_trace_welfare(trace)?
        });
    }
    let mut counts = vec![0; n];
    let mut s = goal;
    for back in choice.iter().rev() {
        let (prev, m) = back[s];
        mask_counts(m as usize, n, &mut counts);
        s = prev as usize;
    }
    Ok(BenchmarkResult {
        avg_welfare: value[goal] / t as f64,
        per_user_alloc_prob: probabilities(&counts, t),
        feasible: true,
        kind: BenchmarkKind::CompleteExact,
    })
}

/// Evaluates `ĝ(λ)` and the average of the per-slot maximizer.
enum DualOracle<'a> {
    Tables(Vec<Vec<f64>>),
    Solver(&'a Trace),
}

impl<'a> DualOracle<'a> {
    fn new(trace: &'a Trace) -> Self {
        let n = trace.n_users();
        if n < 26 && trace.len().saturating_mul(1 << n) <= TABLE_LIMIT {
            DualOracle::Tables(slot_tables(trace))
        } else {
            DualOracle::Solver(trace)
        }
    }

    fn eval(&self, trace: &Trace, lambda: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n = trace.n_users();
        let t = trace.len();
        let mut counts = vec![0; n];
        let mut total = 0.0;
        match self {
            DualOracle::Tables(tables) => {
                let mut bonus = vec![0.0; 1 << n];
                for m in 1..bonus.len() {
                    let low = m.trailing_zeros() as usize;
                    bonus[m] = bonus[m & (m - 1)] + lambda[low];
                }
                let mut shifted = vec![0.0; 1 << n];
                for table in tables {
                    for (s, (w, b)) in shifted.iter_mut().zip(table.iter().zip(&bonus)) {
                        *s = w + b;
                    }
                    let m = argmax_mask(&shifted);
                    total += shifted[m];
                    mask_counts(m, n, &mut counts);
                }
            }
            DualOracle::Solver(trace) => {
                let eligible = vec![true; n];
                for slot in trace.slots() {
                    let inst =
                        RegulatedInstance::regulated(slot, slot.true_costs(), lambda, &eligible)?;
                    let res = solve_exact(&inst)?;
                    total += res.objective;
                    for u in res.alloc.selected_users() {
                        counts[u] += 1;
                    }
                }
            }
        }
        let penalty: f64 = lambda
            .iter()
            .zip(trace.thresholds())
            .map(|(l, d)| l * d)
            .sum();
        Ok((total / t as f64 - penalty, probabilities(&counts, t)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualBoundOptions {
    pub iterations: usize,
    /// Step schedule; `None` picks `Harmonic(c)` with `c` the mean true cost of a user-slot.
    pub step: Option<StepSchedule>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualBound {
    pub result: BenchmarkResult,
    /// Multipliers attaining the reported bound.
    pub multipliers: Vec<f64>,
    /// `ĝ` at every visited iterate, starting from `λ = 0`.
    pub history: Vec<f64>,
}

pub fn dual_upper_bound(trace: &Trace, iterations: usize) -> Result<BenchmarkResult> {
    Ok(dual_upper_bound_with(
        trace,
        DualBoundOptions {
            iterations,
            step: None,
        },
    )?
    .result)
}

/// Projected subgradient descent on `ĝ` starting from `λ = 0`, using the
/// full-trace subgradient `d̄(λ) − D` and returning the best iterate.
pub fn dual_upper_bound_with(trace: &Trace, opts: DualBoundOptions) -> Result<DualBound> {
    if opts.iterations == 0 {
        return Err(Error::Config(
            "dual bound needs at least one iteration".into(),
        ));
    }
    let n = trace.n_users();
    let step = opts.step.unwrap_or_else(|| {
        let total: f64 = trace.slots().iter().flat_map(|s| s.true_costs()).sum();
        let mean = total / (trace.len() * n.max(1)) as f64;
        StepSchedule::Harmonic(mean.max(1e-3))
    });
    let oracle = DualOracle::new(trace);
    let mut lambda = vec![0.0; n];
    let (mut g, mut probs) = oracle.eval(trace, &lambda)?;
    let mut history = vec![g];
    let mut best = (g, probs.clone(), lambda.clone());

    for k in 1..=opts.iterations {
        let sub: Vec<f64> = probs
            .iter()
            .zip(trace.thresholds())
            .map(|(p, d)| p - d)
            .collect();
        // Stationary point: constraints met with complementary slackness.
        if sub
            .iter()
            .zip(&lambda)
            .all(|(s, l)| *s >= 0.0 && (*l == 0.0 || *s == 0.0))
        {
            break;
        }
        let eps = step.step(k as u64);
        for (i, l) in lambda.iter_mut().enumerate() {
            *l = project(*l, eps, probs[i], trace.thresholds()[i]);
        }
        (g, probs) = oracle.eval(trace, &lambda)?;
        history.push(g);
        if g < best.0 {
            best = (g, probs.clone(), lambda.clone());
        }
    }

    let (avg_welfare, per_user_alloc_prob, multipliers) = best;
    Ok(DualBound {
        result: BenchmarkResult {
            avg_welfare,
            per_user_alloc_prob,
            feasible: true,
            kind: BenchmarkKind::DualUpperBound,
        },
        multipliers,
        history,
    })
}

/// Average of the slotwise welfare maximum with true costs.
pub fn unconstrained_trace_welfare(trace: &Trace) -> Result<BenchmarkResult> {
    let n = trace.n_users();
    let mut counts = vec![0; n];
    let mut total = 0.0;
    for slot in trace.slots() {
        let res = solve(&RegulatedInstance::unregulated(slot), SolveMode::default())?;
        total += res.objective;
        for u in res.alloc.selected_users() {
            counts[u] += 1;
        }
    }
    let probs = probabilities(&counts, trace.len());
    let feasible = probs
        .iter()
        .zip(trace.thresholds())
        .all(|(p, d)| *p >= d - FEASIBILITY_TOL);
    Ok(BenchmarkResult {
        avg_welfare: total / trace.len() as f64,
        per_user_alloc_prob: probs,
        feasible,
        kind: BenchmarkKind::Unconstrained,
    })
}

/// Relative welfare given up by enforcing the participation constraints.
pub fn incentive_cost(
    unconstrained: &BenchmarkResult,
    constrained: &BenchmarkResult,
) -> Result<f64> {
    incentive_cost_of(unconstrained.avg_welfare, constrained.avg_welfare)
}

pub fn incentive_cost_of(unconstrained: f64, constrained: f64) -> Result<f64> {
    if unconstrained.is_nan() || unconstrained <= 0.0 {
        return Err(Error::UndefinedIncentiveCost(unconstrained));
    }
    Ok(((unconstrained - constrained) / unconstrained).max(0.0))
}
