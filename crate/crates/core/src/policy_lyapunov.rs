//! Virtual-queue (drift-plus-penalty) online selection.
//!
//! Each user owns a virtual queue that receives `D_n` arrivals per slot and is
//! served by one unit whenever the user is selected:
//!
//! ```text
//! q_n ← [q_n − x_n]⁺ + D_n
//! ```
//!
//! With `J = ½ Σ q_n²`, the one-slot drift plus `φ` times negative welfare is
//! bounded by `B + Σ q_n (D_n − x_n) − φ (V − C)`, `B = Σ (1 + D_n²)/2`. The
//! allocation minimizes that bound, which is the same as maximizing
//! `V − Σ x_n (c_n − q_n/φ)`.

use crate::error::check_len;
use crate::solver::{solve, RegulatedInstance, SolveMode};
use crate::world::{evaluate_allocation, Allocation, SlotRealization};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QueueState {
    backlogs: Vec<f64>,
    phi: f64,
    slot_index: u64,
}

impl QueueState {
    pub fn new(n_users: usize, phi: f64) -> Result<Self> {
        QueueState::with_backlogs(vec![0.0; n_users], phi)
    }

    pub fn with_backlogs(backlogs: Vec<f64>, phi: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0) {
            return Err(Error::Config(format!("phi must be positive, got {phi}")));
        }
        if backlogs.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
            return Err(Error::Config(
                "queue backlogs must be finite and >= 0".into(),
            ));
        }
        Ok(QueueState {
            backlogs,
            phi,
            slot_index: 1,
        })
    }

    pub fn backlogs(&self) -> &[f64] {
        &self.backlogs
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn slot_index(&self) -> u64 {
        self.slot_index
    }

    /// `q_n / φ` for every user: the cost reduction used by the allocation rule.
    pub fn bonuses(&self) -> Vec<f64> {
        self.backlogs.iter().map(|q| q / self.phi).collect()
    }

    /// `J = ½ Σ q_n²`.
    pub fn lyapunov(&self) -> f64 {
        0.5 * self.backlogs.iter().map(|q| q * q).sum::<f64>()
    }

    pub fn allocate(
        &self,
        realization: &SlotRealization,
        eligible: &[bool],
        mode: SolveMode,
    ) -> Result<Allocation> {
        let inst = RegulatedInstance::regulated(
            realization,
            realization.true_costs(),
            &self.bonuses(),
            eligible,
        )?;
        Ok(solve(&inst, mode)?.alloc)
    }

    /// Applies one queue step and returns the drift `J[t+1] − J[t]`.
    pub fn update(&mut self, alloc: &Allocation, thresholds: &[f64]) -> Result<f64> {
        let all = vec![true; self.backlogs.len()];
        self.update_where(alloc, thresholds, &all)
    }

    /// Queue step restricted to `mask`; other queues are frozen.
    pub fn update_where(
        &mut self,
        alloc: &Allocation,
        thresholds: &[f64],
        mask: &[bool],
    ) -> Result<f64> {
        let n = self.backlogs.len();
        check_len("allocation entries", n, alloc.len())?;
        check_len("thresholds", n, thresholds.len())?;
        check_len("update mask", n, mask.len())?;
        let before = self.lyapunov();
        for i in (0..n).filter(|&i| mask[i]) {
            let served = if alloc.is_selected(i) { 1.0 } else { 0.0 };
            self.backlogs[i] = queue_step(self.backlogs[i], served, thresholds[i]);
        }
        self.slot_index += 1;
        Ok(self.lyapunov() - before)
    }
}

/// `[q − x]⁺ + D`
pub fn queue_step(backlog: f64, served: f64, arrival: f64) -> f64 {
    (backlog - served).max(0.0) + arrival
}

/// `B = Σ (1 + D_n²)/2`.
pub fn penalty_bound_b(thresholds: &[f64]) -> f64 {
    thresholds.iter().map(|d| (1.0 + d * d) / 2.0).sum()
}

/// Right-hand side of the drift-plus-penalty bound for a candidate allocation:
/// `B + Σ q_n (D_n − x_n) − φ (V − C)`.
pub fn drift_plus_penalty_bound(
    state: &QueueState,
    alloc: &Allocation,
    realization: &SlotRealization,
    thresholds: &[f64],
) -> Result<f64> {
    let n = state.backlogs.len();
    check_len("thresholds", n, thresholds.len())?;
    check_len("allocation entries", n, alloc.len())?;
    let welfare = evaluate_allocation(realization, alloc)?.welfare;
    let queue_term: f64 = (0..n)
        .map(|i| {
            let x = if alloc.is_selected(i) { 1.0 } else { 0.0 };
            state.backlogs[i] * (thresholds[i] - x)
        })
        .sum();
    Ok(penalty_bound_b(thresholds) + queue_term - state.phi * welfare)
}
