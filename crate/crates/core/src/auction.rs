//! Regulated reverse VCG auction for the case where sensing costs are private.
//!
//! Users bid `b_n`; the platform regulates each bid by a factor `r_n` and
//! selects the allocation maximizing `V − Σ x_n (b_n − r_n)`. A winner is paid
//!
//! ```text
//! p_n = V‡ − Σ_{k ≠ n, k ∈ S‡} (b_k − r_k) − W♯₋ₙ + r_n
//! ```
//!
//! where `W♯₋ₙ` is the best regulated welfare with `n` removed. A winner's
//! utility is therefore its VCG externality on the regulated welfare, which is
//! what makes truthful bidding a dominant strategy within a slot. The factors
//! follow the virtual-queue dynamics scaled by `1/φ`.

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::policy_lyapunov::queue_step;
use crate::solver::{solve_exact_with_limit, RegulatedInstance, SolveResult, DEFAULT_EXACT_LIMIT};
use crate::world::{Allocation, SlotRealization};
use crate::{Error, Result, TIE_TOL};

#[derive(Clone, Debug, PartialEq)]
pub struct RegulationState {
    factors: Vec<f64>,
    phi: f64,
    slot_index: u64,
}

impl RegulationState {
    /// `r⁰_n = D_n / φ`, one slot of virtual arrivals pre-loaded.
    pub fn new(thresholds: &[f64], phi: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::Config(format!("phi must be positive, got {phi}")));
        }
        Ok(RegulationState {
            factors: thresholds.iter().map(|d| d / phi).collect(),
            phi,
            slot_index: 1,
        })
    }

    pub fn with_factors(factors: Vec<f64>, phi: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::Config(format!("phi must be positive, got {phi}")));
        }
        if factors.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config(
                "regulation factors must be finite and >= 0".into(),
            ));
        }
        Ok(RegulationState {
            factors,
            phi,
            slot_index: 1,
        })
    }

    pub fn factors(&self) -> &[f64] {
        &self.factors
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn slot_index(&self) -> u64 {
        self.slot_index
    }

    pub fn update(&mut self, alloc: &Allocation, thresholds: &[f64]) -> Result<()> {
        let all = vec![true; self.factors.len()];
        self.update_where(alloc, thresholds, &all)
    }

    /// `r_n ← ([φ r_n − x_n]⁺ + D_n) / φ` for users in `mask`.
    pub fn update_where(
        &mut self,
        alloc: &Allocation,
        thresholds: &[f64],
        mask: &[bool],
    ) -> Result<()> {
        let n = self.factors.len();
        check_len("allocation entries", n, alloc.len())?;
        check_len("thresholds", n, thresholds.len())?;
        check_len("update mask", n, mask.len())?;
        for i in (0..n).filter(|&i| mask[i]) {
            let served = if alloc.is_selected(i) { 1.0 } else { 0.0 };
            self.factors[i] =
                queue_step(self.phi * self.factors[i], served, thresholds[i]) / self.phi;
        }
        self.slot_index += 1;
        Ok(())
    }
}

/// Reported costs for one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BidVector(Vec<f64>);

impl BidVector {
    pub fn new(bids: Vec<f64>) -> Result<Self> {
        if let Some(b) = bids.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
            return Err(Error::Config(format!(
                "bids must be finite and >= 0, got {b}"
            )));
        }
        Ok(BidVector(bids))
    }

    /// Everyone bids their true cost.
    pub fn truthful(realization: &SlotRealization) -> Self {
        BidVector(realization.true_costs().to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn with_bid(&self, user: usize, bid: f64) -> Result<Self> {
        let mut v = self.0.clone();
        v[user] = bid;
        BidVector::new(v)
    }
}

/// How winners are paid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentRule {
    /// Pivot payment on regulated welfare plus the regulation factor.
    #[default]
    RegulatedVcg,
    /// Winners are paid their bid. Not truthful; kept for checking that the
    /// truthfulness harness detects manipulable rules.
    PayAsBid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuctionRules {
    pub exact_limit: usize,
    pub payment: PaymentRule,
}

impl Default for AuctionRules {
    fn default() -> Self {
        AuctionRules {
            exact_limit: DEFAULT_EXACT_LIMIT,
            payment: PaymentRule::RegulatedVcg,
        }
    }
}

/// Pivot terms entering a winner's payment.
#[derive(Clone, Debug, PartialEq)]
pub struct PivotTerms {
    pub user: usize,
    /// `Σ_{k ≠ n, k selected} (b_k − r_k)`.
    pub others_regulated_cost: f64,
    /// Best regulated welfare with the user removed.
    pub welfare_without: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuctionOutcome {
    pub alloc: Allocation,
    pub payments: Vec<f64>,
    /// Maximized `V − Σ x_n (b_n − r_n)`.
    pub regulated_welfare: f64,
    /// Covered value `V‡` of the winning allocation.
    pub value_term: f64,
    pub pivots: Vec<PivotTerms>,
}

fn exact(inst: &RegulatedInstance<'_>, limit: usize) -> Result<SolveResult> {
    solve_exact_with_limit(inst, limit).map_err(|e| match e {
        Error::Capacity { size, limit, .. } => Error::InexactPivot(format!(
            "{size} eligible users exceed the exact limit {limit}"
        )),
        other => other,
    })
}

/// Allocation and payments for one slot; does not touch the regulation state.
pub fn clear_slot(
    state: &RegulationState,
    realization: &SlotRealization,
    bids: &BidVector,
    eligible: &[bool],
    rules: AuctionRules,
) -> Result<AuctionOutcome> {
    let n = realization.n_users();
    check_len("bids", n, bids.len())?;
    check_len("regulation factors", n, state.factors.len())?;
    let inst =
        RegulatedInstance::regulated(realization, bids.as_slice(), &state.factors, eligible)?;
    let best = exact(&inst, rules.exact_limit)?;
    let kappa = inst.effective_costs();
    let value_term = realization.union_value(best.alloc.selected_users());

    let mut payments = vec![0.0; n];
    let mut pivots = Vec::new();
    for w in best.alloc.selected_users() {
        let others_regulated_cost: f64 = best
            .alloc
            .selected_users()
            .filter(|&k| k != w)
            .map(|k| kappa[k])
            .sum();
        let welfare_without = exact(&inst.without_user(w), rules.exact_limit)?.objective;
        payments[w] = match rules.payment {
            PaymentRule::RegulatedVcg => {
                value_term - others_regulated_cost - welfare_without + state.factors[w]
            }
            PaymentRule::PayAsBid => bids.as_slice()[w],
        };
        pivots.push(PivotTerms {
            user: w,
            others_regulated_cost,
            welfare_without,
        });
    }

    Ok(AuctionOutcome {
        alloc: best.alloc,
        payments,
        regulated_welfare: best.objective,
        value_term,
        pivots,
    })
}

/// Clears one slot and advances the regulation factors with the realized allocation.
pub fn run_auction_slot(
    state: &mut RegulationState,
    realization: &SlotRealization,
    bids: &BidVector,
    thresholds: &[f64],
    eligible: &[bool],
    rules: AuctionRules,
) -> Result<AuctionOutcome> {
    let outcome = clear_slot(state, realization, bids, eligible, rules)?;
    state.update_where(&outcome.alloc, thresholds, eligible)?;
    Ok(outcome)
}

/// Utilities of one user across a grid of unilateral bid deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthReport {
    pub user: usize,
    pub true_cost: f64,
    pub truthful_utility: f64,
    pub truthful_selected: bool,
    pub truthful_payment: f64,
    pub bids: Vec<f64>,
    pub utilities: Vec<f64>,
    pub selected: Vec<bool>,
    pub payments: Vec<f64>,
    pub best_bid: f64,
    pub best_utility: f64,
    /// `max_b u(b) − u(c_n)`, never negative.
    pub regret: f64,
}

impl TruthReport {
    pub fn truthful_is_optimal(&self) -> bool {
        self.regret <= TIE_TOL
    }
}

/// Holds every other user at their true cost and sweeps `user`'s bid over
/// `bid_grid`, recording `u(b) = p(b) − c_n · x_n(b)`.
pub fn truthfulness_sweep(
    realization: &SlotRealization,
    state: &RegulationState,
    true_costs: &[f64],
    user: usize,
    bid_grid: &[f64],
    rules: AuctionRules,
) -> Result<TruthReport> {
    let n = realization.n_users();
    check_len("true costs", n, true_costs.len())?;
    if user >= n {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: user,
            len: n,
        });
    }
    let eligible = vec![true; n];
    let base = BidVector::new(true_costs.to_vec())?;
    let c = true_costs[user];
    let play = |bid: f64| -> Result<(f64, bool, f64)> {
        let out = clear_slot(
            state,
            realization,
            &base.with_bid(user, bid)?,
            &eligible,
            rules,
        )?;
        let won = out.alloc.is_selected(user);
        let pay = out.payments[user];
        Ok((pay - if won { c } else { 0.0 }, won, pay))
    };

    let (truthful_utility, truthful_selected, truthful_payment) = play(c)?;
    let mut utilities = Vec::with_capacity(bid_grid.len());
    let mut selected = Vec::with_capacity(bid_grid.len());
    let mut payments = Vec::with_capacity(bid_grid.len());
    let mut best_bid = c;
    let mut best_utility = truthful_utility;
    for &b in bid_grid {
        let (u, won, pay) = play(b)?;
        if u > best_utility {
            best_utility = u;
            best_bid = b;
        }
        utilities.push(u);
        selected.push(won);
        payments.push(pay);
    }
    Ok(TruthReport {
        user,
        true_cost: c,
        truthful_utility,
        truthful_selected,
        truthful_payment,
        bids: bid_grid.to_vec(),
        utilities,
        selected,
        payments,
        best_bid,
        best_utility,
        regret: (best_utility - truthful_utility).max(0.0),
    })
}
