//! Brute-force oracles written without the library's solver or bitset code paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sensecourt::gridset::GridSet;
use sensecourt::world::{SlotRealization, WeightField};

pub const TOL: f64 = 1e-9;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sensing value by marking covered grids in a plain boolean vector.
pub fn naive_value(real: &SlotRealization, users: &[usize]) -> f64 {
    let mut covered = vec![false; real.n_grids()];
    for &u in users {
        for g in real.region(u).iter() {
            covered[g] = true;
        }
    }
    covered
        .iter()
        .zip(real.weights())
        .filter(|(c, _)| **c)
        .map(|(_, w)| w)
        .sum()
}

pub fn naive_objective(real: &SlotRealization, users: &[usize], kappa: &[f64]) -> f64 {
    naive_value(real, users) - users.iter().map(|&u| kappa[u]).sum::<f64>()
}

/// Every subset of `eligible` with its objective, users in ascending order.
pub fn all_subsets(
    real: &SlotRealization,
    kappa: &[f64],
    eligible: &[bool],
) -> Vec<(Vec<usize>, f64)> {
    let pool: Vec<usize> = (0..real.n_users()).filter(|&u| eligible[u]).collect();
    (0u64..1 << pool.len())
        .map(|mask| {
            let users: Vec<usize> = pool
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &u)| u)
                .collect();
            let obj = naive_objective(real, &users, kappa);
            (users, obj)
        })
        .collect()
}

/// Maximum objective and the tie-rule winner: among subsets within `TOL` of
/// the maximum, fewest users, then lexicographically smallest.
pub fn oracle_best(real: &SlotRealization, kappa: &[f64], eligible: &[bool]) -> (f64, Vec<usize>) {
    let subsets = all_subsets(real, kappa, eligible);
    let max = subsets
        .iter()
        .map(|s| s.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let (users, obj) = subsets
        .into_iter()
        .filter(|s| s.1 >= max - TOL)
        .min_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)))
        .expect("the empty set is always a candidate");
    (obj, users)
}

/// Random rectangles on a `w × h` map with weights in `[0, 1]` and costs
/// proportional to region value.
pub fn random_slot<R: Rng>(
    rng: &mut R,
    n: usize,
    w: usize,
    h: usize,
    cost_scale: f64,
) -> SlotRealization {
    let grids = w * h;
    let weights: Vec<f64> = (0..grids).map(|_| rng.gen::<f64>()).collect();
    let mut regions = Vec::new();
    let mut costs = Vec::new();
    for _ in 0..n {
        let sw = rng.gen_range(1..=w.min(5));
        let sh = rng.gen_range(1..=h.min(5));
        let x0 = rng.gen_range(0..=w - sw);
        let y0 = rng.gen_range(0..=h - sh);
        let cells: Vec<usize> = (y0..y0 + sh)
            .flat_map(|y| (x0..x0 + sw).map(move |x| y * w + x))
            .collect();
        let value: f64 = cells.iter().map(|&g| weights[g]).sum();
        costs.push(rng.gen_range(0.0..=cost_scale * value));
        regions.push(GridSet::from_indices(grids, cells));
    }
    SlotRealization::new(WeightField::new(weights).unwrap(), regions, costs).unwrap()
}
