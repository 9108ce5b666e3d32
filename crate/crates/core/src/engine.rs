//! Slotted simulation driver.
//!
//! For the first `warmup_slots` slots every active user is selected; the
//! policy's regulation state still observes those selections. Afterwards the
//! policy allocates among active users and, with dropping enabled, any user
//! whose running allocation probability falls below its threshold leaves the
//! system for good. A dropped user's regulation state is frozen.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{clear_slot, AuctionRules, BidVector, RegulationState};
use crate::baselines::{greedy_baseline_step, random_baseline_step, VpcState};
use crate::benchmark::{incentive_cost, BenchmarkResult};
use crate::error::check_len;
use crate::policy_dual::{DualState, StepSchedule};
use crate::policy_lyapunov::QueueState;
use crate::scenarios::{slot_rng, Lane, ScenarioConfig, ScenarioStream};
use crate::solver::SolveMode;
use crate::world::{evaluate_allocation, Allocation, SlotRealization};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicySpec {
    Dual { step: StepSchedule },
    Lyapunov { phi: f64 },
    Auction { phi: f64 },
    RadpVpc { alpha: f64 },
    Greedy,
    Random,
}

impl PolicySpec {
    /// Stable identifier used in file names and CSV rows.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Dual {
                step: StepSchedule::Harmonic(c),
            } => format!("dual_harmonic{c}"),
            PolicySpec::Dual {
                step: StepSchedule::Constant(e),
            } => format!("dual_constant{e}"),
            PolicySpec::Lyapunov { phi } => format!("lyapunov_phi{phi}"),
            PolicySpec::Auction { phi } => format!("auction_phi{phi}"),
            PolicySpec::RadpVpc { alpha } => format!("radp_vpc_alpha{alpha}"),
            PolicySpec::Greedy => "greedy".into(),
            PolicySpec::Random => "random".into(),
        }
    }

    /// Instantiates the policy for `n_users` users.
    pub fn build(
        &self,
        n_users: usize,
        thresholds: &[f64],
        solver: SolveMode,
        seed: u64,
    ) -> Result<Box<dyn SelectionPolicy>> {
        Ok(match *self {
            PolicySpec::Dual { step } => Box::new(DualPolicy {
                state: DualState::new(n_users, step),
                solver,
            }),
            PolicySpec::Lyapunov { phi } => Box::new(LyapunovPolicy {
                state: QueueState::new(n_users, phi)?,
                solver,
            }),
            PolicySpec::Auction { phi } => Box::new(AuctionPolicy {
                state: RegulationState::new(thresholds, phi)?,
                rules: AuctionRules::default(),
            }),
            PolicySpec::RadpVpc { alpha } => Box::new(VpcPolicy {
                state: VpcState::new(n_users, alpha)?,
                solver,
            }),
            PolicySpec::Greedy => Box::new(GreedyPolicy { n_users }),
            PolicySpec::Random => Box::new(RandomPolicy {
                n_users,
                rng: slot_rng(seed, 0, Lane::Policy),
            }),
        })
    }
}

/// What a policy decided for one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub alloc: Allocation,
    pub payments: Option<Vec<f64>>,
}

/// A stateful per-slot selection rule.
pub trait SelectionPolicy {
    /// Per-user regulation term in effect for the next decision
    /// (multiplier, scaled backlog, regulation factor or credit).
    fn regulation(&self) -> Vec<f64>;

    fn decide(&mut self, realization: &SlotRealization, eligible: &[bool]) -> Result<Decision>;

    /// Feeds back the realized allocation; only users in `mask` are updated.
    fn observe(&mut self, alloc: &Allocation, thresholds: &[f64], mask: &[bool]) -> Result<()>;

    fn pays(&self) -> bool {
        false
    }
}

struct DualPolicy {
    state: DualState,
    solver: SolveMode,
}

impl SelectionPolicy for DualPolicy {
    fn regulation(&self) -> Vec<f64> {
        self.state.multipliers().to_vec()
    }

    fn decide(&mut self, realization: &SlotRealization, eligible: &[bool]) -> Result<Decision> {
        Ok(Decision {
            alloc: self.state.allocate(realization, eligible, self.solver)?,
            payments: None,
        })
    }

    fn observe(&mut self, alloc: &Allocation, thresholds: &[f64], mask: &[bool]) -> Result<()> {
        self.state.update_where(alloc, thresholds, mask)
    }
}

struct LyapunovPolicy {
    state: QueueState,
    solver: SolveMode,
}

impl SelectionPolicy for LyapunovPolicy {
    fn regulation(&self) -> Vec<f64> {
        self.state.backlogs().to_vec()
    }

    fn decide(&mut self, realization: &SlotRealization, eligible: &[bool]) -> Result<Decision> {
        Ok(Decision {
            alloc: self.state.allocate(realization, eligible, self.solver)?,
            payments: None,
        })
    }

    fn observe(&mut self, alloc: &Allocation, thresholds: &[f64], mask: &[bool]) -> Result<()> {
        self.state.update_where(alloc, thresholds, mask).map(|_| ())
    }
}

/// The auction with every user bidding its true cost.
struct AuctionPolicy {
    state: RegulationState,
    rules: AuctionRules,
}

impl SelectionPolicy for AuctionPolicy {
    fn regulation(&self) -> Vec<f64> {
        self.state.factors().to_vec()
    }

    fn decide(&mut self, realization: &SlotRealization, eligible: &[bool]) -> Result<Decision> {
        let bids = BidVector::truthful(realization);
        let out = clear_slot(&self.state, realization, &bids, eligible, self.rules)?;
        Ok(Decision {
            alloc: out.alloc,
            payments: Some(out.payments),
        })
    }

    fn observe(&mut self, alloc: &Allocation, thresholds: &[f64], mask: &[bool]) -> Result<()> {
        self.state.update_where(alloc, thresholds, mask)
    }

    fn pays(&self) -> bool {
        true
    }
}

struct VpcPolicy {
    state: VpcState,
    solver: SolveMode,
}

impl SelectionPolicy for VpcPolicy {
    fn regulation(&self) -> Vec<f64> {
        self.state.credits().to_vec()
    }

    fn decide(&mut self, realization: &SlotRealization, eligible: &[bool]) -> Result<Decision> {
        Ok(Decision {
            alloc: self.state.allocate(realization, eligible, self.solver)?,
            payments: None,
        })
    }

    fn observe(&mut self, alloc: &Allocation, _thresholds: &[f64], mask: &[bool]) -> Result<()> {
        self.state.update_where(alloc, mask)
    }
}

struct GreedyPolicy {
    n_users: usize,
}

impl SelectionPolicy for GreedyPolicy {
    fn regulation(&self) -> Vec<f64> {
        vec![0.0; self.n_users]
    }

    fn decide(&mut self, realization: &SlotRealization, eligible: &[bool]) -> Result<Decision> {
        Ok(Decision {
            alloc: greedy_baseline_step(realization, eligible)?,
            payments: None,
        })
    }

    fn observe(&mut self, _: &Allocation, _: &[f64], _: &[bool]) -> Result<()> {
        Ok(())
    }
}

struct RandomPolicy {
    n_users: usize,
    rng: ChaCha8Rng,
}

impl SelectionPolicy for RandomPolicy {
    fn regulation(&self) -> Vec<f64> {
        vec![0.0; self.n_users]
    }

    fn decide(&mut self, realization: &SlotRealization, eligible: &[bool]) -> Result<Decision> {
        Ok(Decision {
            alloc: random_baseline_step(realization, eligible, &mut self.rng)?,
            payments: None,
        })
    }

    fn observe(&mut self, _: &Allocation, _: &[f64], _: &[bool]) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserLedger {
    pub threshold: f64,
    pub selections: u64,
    pub slots_seen: u64,
    pub active: bool,
    pub dropped_at: Option<u64>,
}

impl UserLedger {
    pub fn new(threshold: f64) -> Self {
        UserLedger {
            threshold,
            selections: 0,
            slots_seen: 0,
            active: true,
            dropped_at: None,
        }
    }

    /// `selections / slots_seen`; 1 before the first slot.
    pub fn alloc_prob(&self) -> f64 {
        if self.slots_seen == 0 {
            1.0
        } else {
            self.selections as f64 / self.slots_seen as f64
        }
    }

    pub fn record(&mut self, selected: bool) {
        if self.active {
            self.slots_seen += 1;
            if selected {
                self.selections += 1;
            }
        }
    }
}

/// Deactivates every active user whose allocation probability is strictly
/// below its threshold. Returns the users dropped at this slot.
pub fn apply_dropping(ledgers: &mut [UserLedger], slot: u64) -> Vec<usize> {
    let mut dropped = Vec::new();
    for (n, l) in ledgers.iter_mut().enumerate() {
        if l.active && l.alloc_prob() < l.threshold {
            l.active = false;
            l.dropped_at = Some(slot);
            dropped.push(n);
        }
    }
    dropped
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub t_slots: usize,
    pub warmup_slots: usize,
    pub thresholds: Vec<f64>,
    pub solver: SolveMode,
    /// When false, users never leave regardless of their allocation probability.
    pub dropping: bool,
}

impl SimulationOptions {
    pub fn new(t_slots: usize, warmup_slots: usize, thresholds: Vec<f64>) -> Self {
        SimulationOptions {
            t_slots,
            warmup_slots,
            thresholds,
            solver: SolveMode::default(),
            dropping: true,
        }
    }

    pub fn with_solver(mut self, solver: SolveMode) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_dropping(mut self, dropping: bool) -> Self {
        self.dropping = dropping;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub avg_welfare: f64,
    pub dropping_fraction: f64,
    pub min_alloc_prob: f64,
    pub incentive_cost: Option<f64>,
}

/// Per-slot series of one run. Matrices are indexed `[slot - 1][user]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceMetrics {
    pub policy: String,
    pub n_users: usize,
    pub warmup_slots: usize,
    pub welfare_series: Vec<f64>,
    pub running_avg_welfare: Vec<f64>,
    pub alloc_prob_series: Vec<Vec<f64>>,
    pub selected_series: Vec<Vec<bool>>,
    pub regulation_series: Vec<Vec<f64>>,
    pub active_series: Vec<Vec<bool>>,
    pub payments_series: Option<Vec<Vec<f64>>>,
    /// `(user, slot)` pairs in the order users dropped.
    pub drop_events: Vec<(usize, u64)>,
    pub ledgers: Vec<UserLedger>,
    pub summary: Summary,
}

impl TraceMetrics {
    pub fn t_slots(&self) -> usize {
        self.welfare_series.len()
    }

    pub fn final_alloc_probs(&self) -> Vec<f64> {
        self.ledgers.iter().map(UserLedger::alloc_prob).collect()
    }

    /// Fraction of users that have dropped by the end of `slot` (1-based).
    pub fn dropping_fraction_at(&self, slot: u64) -> f64 {
        let n = self.drop_events.iter().filter(|(_, s)| *s <= slot).count();
        n as f64 / self.n_users as f64
    }
}

/// Summary statistics; the incentive cost is taken from `benchmarks`
/// (`(unconstrained, constrained)`) when supplied.
pub fn compute_summary(
    metrics: &TraceMetrics,
    benchmarks: Option<(&BenchmarkResult, &BenchmarkResult)>,
) -> Result<Summary> {
    let post = if metrics.warmup_slots < metrics.t_slots() {
        &metrics.welfare_series[metrics.warmup_slots..]
    } else {
        &metrics.welfare_series[..]
    };
    let avg_welfare = if post.is_empty() {
        0.0
    } else {
        post.iter().sum::<f64>() / post.len() as f64
    };
    let min_alloc_prob = metrics
        .ledgers
        .iter()
        .map(UserLedger::alloc_prob)
        .fold(f64::INFINITY, f64::min);
    let incentive_cost = benchmarks.map(|(u, c)| incentive_cost(u, c)).transpose()?;
    Ok(Summary {
        avg_welfare,
        dropping_fraction: metrics.drop_events.len() as f64 / metrics.n_users.max(1) as f64,
        min_alloc_prob: if min_alloc_prob.is_finite() {
            min_alloc_prob
        } else {
            1.0
        },
        incentive_cost,
    })
}

pub fn run_simulation(
    config: &ScenarioConfig,
    policy: &PolicySpec,
    opts: &SimulationOptions,
) -> Result<TraceMetrics> {
    let stream = ScenarioStream::new(config.clone())?;
    let mut instance = policy.build(config.n_users, &opts.thresholds, opts.solver, config.seed)?;
    run_with_source(
        stream,
        config.n_users,
        policy.label(),
        instance.as_mut(),
        opts,
    )
}

/// Drives `policy` over realizations taken from `source`.
pub fn run_with_source<I>(
    source: I,
    n_users: usize,
    label: String,
    policy: &mut dyn SelectionPolicy,
    opts: &SimulationOptions,
) -> Result<TraceMetrics>
where
    I: IntoIterator<Item = SlotRealization>,
{
    if n_users == 0 {
        return Err(Error::Config("simulation needs at least one user".into()));
    }
    if opts.t_slots < opts.warmup_slots {
        return Err(Error::Config(format!(
            "t_slots ({}) must be at least warmup_slots ({})",
            opts.t_slots, opts.warmup_slots
        )));
    }
    check_len("thresholds", n_users, opts.thresholds.len())?;
    if let Some(d) = opts.thresholds.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::Config(format!("threshold {d} outside [0, 1]")));
    }

    let t_slots = opts.t_slots;
    let mut ledgers: Vec<UserLedger> = opts
        .thresholds
        .iter()
        .map(|&d| UserLedger::new(d))
        .collect();
    let mut metrics = TraceMetrics {
        policy: label,
        n_users,
        warmup_slots: opts.warmup_slots,
        welfare_series: Vec::with_capacity(t_slots),
        running_avg_welfare: Vec::with_capacity(t_slots),
        alloc_prob_series: Vec::with_capacity(t_slots),
        selected_series: Vec::with_capacity(t_slots),
        regulation_series: Vec::with_capacity(t_slots),
        active_series: Vec::with_capacity(t_slots),
        payments_series: policy.pays().then(|| Vec::with_capacity(t_slots)),
        drop_events: Vec::new(),
        ledgers: Vec::new(),
        summary: Summary {
            avg_welfare: 0.0,
            dropping_fraction: 0.0,
            min_alloc_prob: 1.0,
            incentive_cost: None,
        },
    };

    let mut source = source.into_iter();
    let mut cumulative = 0.0;
    for t in 1..=t_slots as u64 {
        let realization = source
            .next()
            .ok_or_else(|| Error::Config(format!("realization source ended before slot {t}")))?;
        check_len("users in realization", n_users, realization.n_users())?;
        let active: Vec<bool> = ledgers.iter().map(|l| l.active).collect();
        let regulation = policy.regulation();

        let decision = if t as usize <= opts.warmup_slots {
            Decision {
                alloc: Allocation::from_selected(active.clone()),
                payments: None,
            }
        } else {
            policy.decide(&realization, &active)?
        };
        let alloc = decision.alloc;
        debug_assert!(alloc.selected_users().all(|n| active[n]));
        policy.observe(&alloc, &opts.thresholds, &active)?;
        for (n, l) in ledgers.iter_mut().enumerate() {
            l.record(alloc.is_selected(n));
        }

        let welfare = evaluate_allocation(&realization, &alloc)?.welfare;
        cumulative += welfare;
        metrics.welfare_series.push(welfare);
        metrics.running_avg_welfare.push(cumulative / t as f64);
        if opts.dropping && t as usize > opts.warmup_slots {
            for n in apply_dropping(&mut ledgers, t) {
                metrics.drop_events.push((n, t));
            }
        }
        metrics
            .alloc_prob_series
            .push(ledgers.iter().map(UserLedger::alloc_prob).collect());
        metrics.selected_series.push(alloc.as_slice().to_vec());
        metrics.regulation_series.push(regulation);
        metrics.active_series.push(active);
        if let Some(series) = metrics.payments_series.as_mut() {
            series.push(decision.payments.unwrap_or_else(|| vec![0.0; n_users]));
        }
    }

    metrics.ledgers = ledgers;
    metrics.summary = compute_summary(&metrics, None)?;
    Ok(metrics)
}
