//! Per-slot regulated-welfare maximization.
//!
//! Every policy in this crate allocates by solving
//!
//! ```text
//! maximize  V(S) - Σ_{n ∈ S} κ_n   over eligible subsets S
//! ```
//!
//! where `V` is the covered value and `κ_n` an effective per-user charge
//! (true cost or bid minus a regulation bonus, possibly negative).
//!
//! Exact solvers break ties among allocations whose objective is within
//! [`TIE_TOL`] of the optimum by preferring fewer selected users, then the
//! lexicographically smallest sorted list of user indices.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::gridset::GridSet;
use crate::world::{evaluate_with_costs, Allocation, SlotRealization};
use crate::{Error, Result, TIE_TOL};

pub const DEFAULT_EXACT_LIMIT: usize = 20;
pub const DEFAULT_NODE_BUDGET: usize = 1 << 16;

/// Slack on top of [`TIE_TOL`] when pruning, absorbing rounding in bounds.
const BOUND_SLACK: f64 = 1e-12;

/// One slot's realization together with effective charges and eligibility.
#[derive(Clone, Debug)]
pub struct RegulatedInstance<'a> {
    realization: &'a SlotRealization,
    effective_costs: Vec<f64>,
    eligible: Vec<bool>,
}

impl<'a> RegulatedInstance<'a> {
    pub fn new(
        realization: &'a SlotRealization,
        effective_costs: Vec<f64>,
        eligible: Vec<bool>,
    ) -> Result<Self> {
        let n = realization.n_users();
        check_len("effective costs", n, effective_costs.len())?;
        check_len("eligibility flags", n, eligible.len())?;
        if let Some(k) = effective_costs.iter().find(|k| !k.is_finite()) {
            return Err(Error::Config(format!(
                "effective cost must be finite, got {k}"
            )));
        }
        Ok(RegulatedInstance {
            realization,
            effective_costs,
            eligible,
        })
    }

    /// Every user eligible, charged their true cost.
    pub fn unregulated(realization: &'a SlotRealization) -> Self {
        let n = realization.n_users();
        RegulatedInstance {
            realization,
            effective_costs: realization.true_costs().to_vec(),
            eligible: vec![true; n],
        }
    }

    /// `κ_n = base_n − bonus_n` for eligible users.
    pub fn regulated(
        realization: &'a SlotRealization,
        base_costs: &[f64],
        bonus: &[f64],
        eligible: &[bool],
    ) -> Result<Self> {
        let n = realization.n_users();
        check_len("base costs", n, base_costs.len())?;
        check_len("regulation bonuses", n, bonus.len())?;
        let kappa = base_costs.iter().zip(bonus).map(|(c, b)| c - b).collect();
        RegulatedInstance::new(realization, kappa, eligible.to_vec())
    }

    pub fn realization(&self) -> &'a SlotRealization {
        self.realization
    }

    pub fn effective_costs(&self) -> &[f64] {
        &self.effective_costs
    }

    pub fn eligible(&self) -> &[bool] {
        &self.eligible
    }

    pub fn n_users(&self) -> usize {
        self.eligible.len()
    }

    pub fn eligible_users(&self) -> Vec<usize> {
        (0..self.n_users()).filter(|&n| self.eligible[n]).collect()
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }

    /// Copy of this instance with `user` made ineligible.
    pub fn without_user(&self, user: usize) -> Self {
        let mut inst = self.clone();
        inst.eligible[user] = false;
        inst
    }

    /// Regulated objective of an allocation, recomputed from scratch.
    pub fn objective(&self, alloc: &Allocation) -> Result<f64> {
        Ok(evaluate_with_costs(self.realization, alloc, &self.effective_costs)?.welfare)
    }

    fn finish(&self, users: &[usize], exact: bool) -> SolveResult {
        let alloc = Allocation::from_users(self.n_users(), users.iter().copied());
        let objective = self
            .objective(&alloc)
            .expect("instance dimensions validated at construction");
        SolveResult {
            alloc,
            objective,
            exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub alloc: Allocation,
    /// `V − Σ κ` over the selected users.
    pub objective: f64,
    /// True when the allocation is a proven global maximizer under the tie rule.
    pub exact: bool,
}

/// How a policy solves its per-slot problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolveMode {
    Exact,
    Greedy,
    BranchAndBound {
        node_budget: usize,
    },
    /// Exact up to `exact_limit` eligible users, branch-and-bound (greedy-seeded) beyond.
    Auto {
        exact_limit: usize,
        node_budget: usize,
    },
}

impl Default for SolveMode {
    fn default() -> Self {
        SolveMode::Auto {
            exact_limit: DEFAULT_EXACT_LIMIT,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

pub fn solve(inst: &RegulatedInstance<'_>, mode: SolveMode) -> Result<SolveResult> {
    match mode {
        SolveMode::Exact => solve_exact(inst),
        SolveMode::Greedy => Ok(solve_greedy(inst)),
        SolveMode::BranchAndBound { node_budget } => Ok(branch_and_bound(inst, node_budget)),
        SolveMode::Auto {
            exact_limit,
            node_budget,
        } => {
            if inst.eligible_count() <= exact_limit {
                solve_exact_with_limit(inst, exact_limit)
            } else {
                Ok(branch_and_bound(inst, node_budget))
            }
        }
    }
}

/// Tie rule between two sorted user lists: fewer users first, then lexicographic.
pub fn tie_order(a: &[usize], b: &[usize]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| a.cmp(b))
}

pub fn solve_exact(inst: &RegulatedInstance<'_>) -> Result<SolveResult> {
    solve_exact_with_limit(inst, DEFAULT_EXACT_LIMIT)
}

/// Exhaustive maximization over all subsets of the eligible users.
pub fn solve_exact_with_limit(inst: &RegulatedInstance<'_>, limit: usize) -> Result<SolveResult> {
    let users = inst.eligible_users();
    let k = users.len();
    if k > limit || k >= usize::BITS as usize {
        return Err(Error::Capacity {
            what: "exact solve eligible users",
            size: k,
            limit,
        });
    }

    let objectives = subset_objectives(inst.realization(), &users, inst.effective_costs());
    let chosen = argmax_mask(&objectives);
    let selected: Vec<usize> = (0..k)
        .filter(|&i| chosen & (1 << i) != 0)
        .map(|i| users[i])
        .collect();
    Ok(inst.finish(&selected, true))
}

/// `V(S) − Σ_{n∈S} κ_n` for every subset `S` of `users`, indexed by mask
/// (bit `i` set means `users[i]` is selected).
pub(crate) fn subset_objectives(
    real: &SlotRealization,
    users: &[usize],
    kappa: &[f64],
) -> Vec<f64> {
    let k = users.len();
    let mut objectives = vec![0.0; 1 << k];
    let mut levels = vec![GridSet::new(real.n_grids()); k + 1];
    let mut enumerator = SubsetEnumerator {
        users,
        kappa,
        real,
        objectives: &mut objectives,
        levels: &mut levels,
    };
    enumerator.fill(0, 0, 0, 0.0, 0.0);
    objectives
}

/// Tie-broken maximizer of a mask-indexed objective table (`users` ascending).
pub(crate) fn argmax_mask(objectives: &[f64]) -> usize {
    let best = objectives.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut chosen = 0usize;
    let mut found = false;
    for (mask, &obj) in objectives.iter().enumerate() {
        if obj < best - TIE_TOL {
            continue;
        }
        if !found || mask_precedes(mask, chosen) {
            chosen = mask;
            found = true;
        }
    }
    chosen
}

/// Bit `i` of a mask is `users[i]`, with `users` ascending, so the lexicographic
/// order of index lists is decided by the lowest differing bit.
fn mask_precedes(a: usize, b: usize) -> bool {
    match a.count_ones().cmp(&b.count_ones()) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => {
            let diff = a ^ b;
            diff != 0 && a & (diff & diff.wrapping_neg()) != 0
        }
    }
}

struct SubsetEnumerator<'s> {
    users: &'s [usize],
    kappa: &'s [f64],
    real: &'s SlotRealization,
    objectives: &'s mut [f64],
    levels: &'s mut [GridSet],
}

impl SubsetEnumerator<'_> {
    /// `level` indexes the coverage of the users included so far.
    fn fill(&mut self, depth: usize, level: usize, mask: usize, value: f64, cost: f64) {
        if depth == self.users.len() {
            self.objectives[mask] = value - cost;
            return;
        }
        self.fill(depth + 1, level, mask, value, cost);

        let n = self.users[depth];
        let region = self.real.region(n);
        let gain = region.marginal_weight(&self.levels[level], self.real.weights());
        let (lower, upper) = self.levels.split_at_mut(level + 1);
        upper[0].clone_from(&lower[level]);
        upper[0].union_with(region);
        self.fill(
            depth + 1,
            level + 1,
            mask | (1 << depth),
            value + gain,
            cost + self.kappa[n],
        );
    }
}

/// Marginal-gain greedy. Users with negative charge are taken first; then the
/// user with the largest positive `marginal value − κ` is added until none remains.
pub fn solve_greedy(inst: &RegulatedInstance<'_>) -> SolveResult {
    let real = inst.realization();
    let kappa = inst.effective_costs();
    let mut covered = GridSet::new(real.n_grids());
    let mut selected = Vec::new();
    let mut remaining = Vec::new();
    for n in inst.eligible_users() {
        if kappa[n] < 0.0 {
            covered.union_with(real.region(n));
            selected.push(n);
        } else {
            remaining.push(n);
        }
    }

    loop {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &n) in remaining.iter().enumerate() {
            let gain = real.region(n).marginal_weight(&covered, real.weights()) - kappa[n];
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((pos, gain));
            }
        }
        match best {
            Some((pos, gain)) if gain > TIE_TOL => {
                let n = remaining.remove(pos);
                covered.union_with(real.region(n));
                selected.push(n);
            }
            _ => break,
        }
    }
    selected.sort_unstable();
    inst.finish(&selected, false)
}

/// Depth-first include/exclude search seeded with the greedy allocation.
///
/// The bound at a node adds, for every undecided user, the positive part of its
/// gain against the grids already covered; submodularity makes it valid. When
/// the search finishes within `node_budget` nodes the result is exact and
/// follows the same tie rule as [`solve_exact`].
pub fn branch_and_bound(inst: &RegulatedInstance<'_>, node_budget: usize) -> SolveResult {
    let greedy = solve_greedy(inst);
    let real = inst.realization();
    let kappa = inst.effective_costs();

    let mut order = inst.eligible_users();
    let singleton: Vec<f64> = (0..inst.n_users())
        .map(|n| real.region(n).weighted_sum(real.weights()) - kappa[n])
        .collect();
    order.sort_by(|&a, &b| singleton[b].total_cmp(&singleton[a]).then(a.cmp(&b)));

    let mut search = Bnb {
        order: &order,
        kappa,
        real,
        budget: node_budget,
        nodes: 0,
        exhausted: false,
        best: greedy.objective,
        pool: vec![(greedy.objective, greedy.alloc.selected_users().collect())],
        levels: vec![GridSet::new(real.n_grids()); order.len() + 1],
        chosen: Vec::with_capacity(order.len()),
    };
    search.visit(0, 0, 0.0, 0.0);

    let Bnb {
        best,
        pool,
        exhausted,
        ..
    } = search;
    let winner = pool
        .into_iter()
        .filter(|(obj, _)| *obj >= best - TIE_TOL)
        .map(|(_, users)| users)
        .min_by(|a, b| tie_order(a, b))
        .expect("pool always holds the greedy seed");
    inst.finish(&winner, !exhausted)
}

struct Bnb<'s> {
    order: &'s [usize],
    kappa: &'s [f64],
    real: &'s SlotRealization,
    budget: usize,
    nodes: usize,
    exhausted: bool,
    best: f64,
    /// Sorted user lists whose objective is within tolerance of `best`.
    pool: Vec<(f64, Vec<usize>)>,
    levels: Vec<GridSet>,
    chosen: Vec<usize>,
}

impl Bnb<'_> {
    fn visit(&mut self, pos: usize, level: usize, value: f64, cost: f64) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        let current = value - cost;
        let weights = self.real.weights();
        let optimism: f64 = self.order[pos..]
            .iter()
            .map(|&n| {
                let g = self
                    .real
                    .region(n)
                    .marginal_weight(&self.levels[level], weights)
                    - self.kappa[n];
                g.max(0.0)
            })
            .sum();
        // No undecided user can raise the objective, so any extension either
        // loses or ties with more users; the current set is the best leaf here.
        if pos == self.order.len() || optimism == 0.0 {
            self.record(current);
            return;
        }
        if current + optimism < self.best - TIE_TOL - BOUND_SLACK {
            return;
        }

        let n = self.order[pos];
        let region = self.real.region(n);
        let gain = region.marginal_weight(&self.levels[level], weights);
        let (lower, upper) = self.levels.split_at_mut(level + 1);
        upper[0].clone_from(&lower[level]);
        upper[0].union_with(region);
        self.chosen.push(n);
        self.visit(pos + 1, level + 1, value + gain, cost + self.kappa[n]);
        self.chosen.pop();

        self.visit(pos + 1, level, value, cost);
    }

    fn record(&mut self, objective: f64) {
        if objective > self.best {
            self.best = objective;
            let floor = self.best - TIE_TOL;
            self.pool.retain(|(o, _)| *o >= floor);
        }
        if objective >= self.best - TIE_TOL {
            let mut users = self.chosen.clone();
            users.sort_unstable();
            self.pool.push((objective, users));
        }
    }
}
