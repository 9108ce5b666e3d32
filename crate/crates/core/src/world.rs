//! Slot-level domain model: the sensing grid, per-slot weights, user sensing
//! regions and costs, and the coverage-based welfare of an allocation.
//!
//! A grid counts toward the sensing value once if any selected user covers it,
//! so value is a monotone submodular function of the selected set while cost
//! is additive.

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::gridset::GridSet;
use crate::{Error, Result};

/// Rectangular sensing area split into square grids, indexed row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub width_grids: usize,
    pub height_grids: usize,
    /// Edge length of one grid, in meters.
    pub grid_edge_m: f64,
}

impl GridMap {
    pub fn new(width_grids: usize, height_grids: usize, grid_edge_m: f64) -> Result<Self> {
        if width_grids == 0 || height_grids == 0 {
            return Err(Error::Config("grid map must have at least one grid".into()));
        }
        if !(grid_edge_m.is_finite() && grid_edge_m > 0.0) {
            return Err(Error::Config(format!(
                "grid_edge_m must be positive, got {grid_edge_m}"
            )));
        }
        Ok(GridMap {
            width_grids,
            height_grids,
            grid_edge_m,
        })
    }

    pub fn grid_count(&self) -> usize {
        self.width_grids * self.height_grids
    }

    pub fn width_m(&self) -> f64 {
        self.width_grids as f64 * self.grid_edge_m
    }

    pub fn height_m(&self) -> f64 {
        self.height_grids as f64 * self.grid_edge_m
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width_grids + col
    }

    /// Center of grid `i` in meters.
    pub fn center(&self, i: usize) -> (f64, f64) {
        let col = i % self.width_grids;
        let row = i / self.width_grids;
        (
            (col as f64 + 0.5) * self.grid_edge_m,
            (row as f64 + 0.5) * self.grid_edge_m,
        )
    }
}

/// Per-grid data value for one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightField {
    weights: Vec<f64>,
}

impl WeightField {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Config(format!(
                "grid weights must be finite and non-negative, got {w}"
            )));
        }
        Ok(WeightField { weights })
    }

    pub fn uniform(len: usize, value: f64) -> Self {
        WeightField::new(vec![value; len]).expect("uniform weight must be finite and >= 0")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Grids a user can sense in one slot. May be empty.
pub type SensingRegion = GridSet;

/// All network information for one slot: weights, regions and true costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRealization {
    weights: WeightField,
    regions: Vec<SensingRegion>,
    true_costs: Vec<f64>,
}

impl SlotRealization {
    pub fn new(
        weights: WeightField,
        regions: Vec<SensingRegion>,
        true_costs: Vec<f64>,
    ) -> Result<Self> {
        check_len("true costs", regions.len(), true_costs.len())?;
        for r in &regions {
            check_len("region capacity", weights.len(), r.capacity())?;
        }
        if let Some(c) = true_costs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(Error::Config(format!(
                "true costs must be finite and non-negative, got {c}"
            )));
        }
        Ok(SlotRealization {
            weights,
            regions,
            true_costs,
        })
    }

    pub fn n_users(&self) -> usize {
        self.regions.len()
    }

    pub fn n_grids(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        self.weights.as_slice()
    }

    pub fn weight_field(&self) -> &WeightField {
        &self.weights
    }

    pub fn regions(&self) -> &[SensingRegion] {
        &self.regions
    }

    pub fn region(&self, user: usize) -> &SensingRegion {
        &self.regions[user]
    }

    pub fn true_costs(&self) -> &[f64] {
        &self.true_costs
    }

    /// Value of the union of the given users' regions.
    pub fn union_value<I: IntoIterator<Item = usize>>(&self, users: I) -> f64 {
        let mut covered = GridSet::new(self.n_grids());
        for n in users {
            covered.union_with(&self.regions[n]);
        }
        covered.weighted_sum(self.weights())
    }
}

/// Selection vector `x[t]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    selected: Vec<bool>,
}

impl Allocation {
    pub fn empty(n: usize) -> Self {
        Allocation {
            selected: vec![false; n],
        }
    }

    pub fn all(n: usize) -> Self {
        Allocation {
            selected: vec![true; n],
        }
    }

    pub fn from_selected(selected: Vec<bool>) -> Self {
        Allocation { selected }
    }

    pub fn from_users<I: IntoIterator<Item = usize>>(n: usize, users: I) -> Self {
        let mut a = Allocation::empty(n);
        for u in users {
            a.selected[u] = true;
        }
        a
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn is_selected(&self, n: usize) -> bool {
        self.selected[n]
    }

    pub fn set(&mut self, n: usize, value: bool) {
        self.selected[n] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.selected
    }

    pub fn selected_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Value, cost and welfare of an allocation in one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct WelfareBreakdown {
    pub value: f64,
    pub cost: f64,
    pub welfare: f64,
    pub covered: GridSet,
}

/// Union of the selected users' sensing regions.
pub fn compute_coverage(realization: &SlotRealization, alloc: &Allocation) -> Result<GridSet> {
    check_len("allocation entries", realization.n_users(), alloc.len())?;
    let mut covered = GridSet::new(realization.n_grids());
    for n in alloc.selected_users() {
        covered.union_with(realization.region(n));
    }
    Ok(covered)
}

/// Value of one user's region on its own.
pub fn user_value(realization: &SlotRealization, user: usize) -> Result<f64> {
    if user >= realization.n_users() {
        return Err(Error::IndexOutOfRange {
            what: "user",
            index: user,
            len: realization.n_users(),
        });
    }
    Ok(realization.region(user).weighted_sum(realization.weights()))
}

/// Welfare of `alloc` under the slot's true costs.
pub fn evaluate_allocation(
    realization: &SlotRealization,
    alloc: &Allocation,
) -> Result<WelfareBreakdown> {
    evaluate_with_costs(realization, alloc, realization.true_costs())
}

/// Welfare of `alloc` charging `costs[n]` per selected user. Used by the
/// solvers to score allocations under regulated costs.
pub fn evaluate_with_costs(
    realization: &SlotRealization,
    alloc: &Allocation,
    costs: &[f64],
) -> Result<WelfareBreakdown> {
    check_len("cost entries", realization.n_users(), costs.len())?;
    let covered = compute_coverage(realization, alloc)?;
    let value = covered.weighted_sum(realization.weights());
    let cost: f64 = alloc.selected_users().map(|n| costs[n]).sum();
    Ok(WelfareBreakdown {
        value,
        cost,
        welfare: value - cost,
        covered,
    })
}
