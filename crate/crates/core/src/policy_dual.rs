//! Dual-decomposition online selection.
//!
//! Each user's participation constraint `d̄_n ≥ D_n` is priced by a multiplier
//! `λ_n ≥ 0`. A slot is allocated by maximizing `V − Σ x_n (c_n − λ_n)`, and the
//! multipliers take one projected stochastic-subgradient step afterwards:
//!
//! ```text
//! λ_n ← [λ_n − ε_t (d̄_n − D_n)]⁺,   d̄_n = (1/t) Σ_{k ≤ t} x_n[k]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::solver::{solve, RegulatedInstance, SolveMode};
use crate::world::{Allocation, SlotRealization};
use crate::Result;

/// Step size `ε_t` as a function of the slot index `t ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `ε_t = c / t`: diminishing and non-summable.
    Harmonic(f64),
    Constant(f64),
}

impl StepSchedule {
    pub fn step(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Harmonic(c) => c / t.max(1) as f64,
            StepSchedule::Constant(e) => e,
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Harmonic(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    multipliers: Vec<f64>,
    /// Index of the slot about to be allocated, starting at 1.
    slot_index: u64,
    cumulative_selected: Vec<u64>,
    schedule: StepSchedule,
}

impl DualState {
    pub fn new(n_users: usize, schedule: StepSchedule) -> Self {
        DualState {
            multipliers: vec![0.0; n_users],
            slot_index: 1,
            cumulative_selected: vec![0; n_users],
            schedule,
        }
    }

    /// Starts from given multipliers; negative entries are projected to zero.
    pub fn with_multipliers(multipliers: Vec<f64>, schedule: StepSchedule) -> Self {
        let n = multipliers.len();
        DualState {
            multipliers: multipliers.into_iter().map(|l| l.max(0.0)).collect(),
            slot_index: 1,
            cumulative_selected: vec![0; n],
            schedule,
        }
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn slot_index(&self) -> u64 {
        self.slot_index
    }

    pub fn cumulative_selected(&self) -> &[u64] {
        &self.cumulative_selected
    }

    pub fn schedule(&self) -> StepSchedule {
        self.schedule
    }

    /// Maximizes `V − Σ x_n (c_n − λ_n)` over eligible users.
    pub fn allocate(
        &self,
        realization: &SlotRealization,
        eligible: &[bool],
        mode: SolveMode,
    ) -> Result<Allocation> {
        let inst = RegulatedInstance::regulated(
            realization,
            realization.true_costs(),
            &self.multipliers,
            eligible,
        )?;
        Ok(solve(&inst, mode)?.alloc)
    }

    pub fn update(&mut self, alloc: &Allocation, thresholds: &[f64]) -> Result<()> {
        let all = vec![true; self.multipliers.len()];
        self.update_where(alloc, thresholds, &all)
    }

    /// Applies the multiplier step to users with `mask[n]` set; the others keep
    /// their state frozen. The slot index always advances.
    pub fn update_where(
        &mut self,
        alloc: &Allocation,
        thresholds: &[f64],
        mask: &[bool],
    ) -> Result<()> {
        let n = self.multipliers.len();
        check_len("allocation entries", n, alloc.len())?;
        check_len("thresholds", n, thresholds.len())?;
        check_len("update mask", n, mask.len())?;
        let t = self.slot_index;
        let eps = self.schedule.step(t);
        for i in (0..n).filter(|&i| mask[i]) {
            if alloc.is_selected(i) {
                self.cumulative_selected[i] += 1;
            }
            let avg = self.cumulative_selected[i] as f64 / t as f64;
            self.multipliers[i] = project(self.multipliers[i], eps, avg, thresholds[i]);
        }
        self.slot_index += 1;
        Ok(())
    }
}

/// `[λ − ε (d̄ − D)]⁺`
pub fn project(lambda: f64, step: f64, avg_selected: f64, threshold: f64) -> f64 {
    (lambda - step * (avg_selected - threshold)).max(0.0)
}
