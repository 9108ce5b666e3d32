//! Comparison policies: RADP-VPC (virtual participation credit), greedy and
//! random selection. All of them run on true costs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::check_len;
use crate::gridset::GridSet;
use crate::solver::{solve, solve_greedy, RegulatedInstance, SolveMode};
use crate::world::{Allocation, SlotRealization};
use crate::{Error, Result, TIE_TOL};

/// Per-user virtual credits. A loser's credit grows by `alpha`; a winner's resets.
#[derive(Clone, Debug, PartialEq)]
pub struct VpcState {
    credits: Vec<f64>,
    alpha: f64,
}

impl VpcState {
    pub fn new(n_users: usize, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(VpcState {
            credits: vec![0.0; n_users],
            alpha,
        })
    }

    pub fn with_credits(credits: Vec<f64>, alpha: f64) -> Result<Self> {
        let mut st = VpcState::new(credits.len(), alpha)?;
        st.credits = credits;
        Ok(st)
    }

    pub fn credits(&self) -> &[f64] {
        &self.credits
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Selects with `κ_n = c_n − v_n`.
    pub fn allocate(
        &self,
        realization: &SlotRealization,
        eligible: &[bool],
        mode: SolveMode,
    ) -> Result<Allocation> {
        let inst = RegulatedInstance::regulated(
            realization,
            realization.true_costs(),
            &self.credits,
            eligible,
        )?;
        Ok(solve(&inst, mode)?.alloc)
    }

    /// Credit update for users in `mask`.
    pub fn update_where(&mut self, alloc: &Allocation, mask: &[bool]) -> Result<()> {
        check_len("allocation entries", self.credits.len(), alloc.len())?;
        check_len("update mask", self.credits.len(), mask.len())?;
        for (n, v) in self.credits.iter_mut().enumerate() {
            if !mask[n] {
                continue;
            }
            if alloc.is_selected(n) {
                *v = 0.0;
            } else {
                *v += self.alpha;
            }
        }
        Ok(())
    }
}

/// One RADP-VPC slot: allocate on credited costs, then update credits of `eligible` users.
pub fn radp_vpc_step(
    state: &mut VpcState,
    realization: &SlotRealization,
    eligible: &[bool],
    mode: SolveMode,
) -> Result<Allocation> {
    let alloc = state.allocate(realization, eligible, mode)?;
    state.update_where(&alloc, eligible)?;
    Ok(alloc)
}

/// Unregulated welfare greedy on true costs.
pub fn greedy_baseline_step(
    realization: &SlotRealization,
    eligible: &[bool],
) -> Result<Allocation> {
    let inst = RegulatedInstance::new(
        realization,
        realization.true_costs().to_vec(),
        eligible.to_vec(),
    )?;
    Ok(solve_greedy(&inst).alloc)
}

/// Admits eligible users in a uniformly random order while each one's marginal
/// welfare is positive; stops at the first user that would not add welfare.
pub fn random_baseline_step<R: Rng + ?Sized>(
    realization: &SlotRealization,
    eligible: &[bool],
    rng: &mut R,
) -> Result<Allocation> {
    let n = realization.n_users();
    check_len("eligibility flags", n, eligible.len())?;
    let mut order: Vec<usize> = (0..n).filter(|&i| eligible[i]).collect();
    order.shuffle(rng);
    let costs = realization.true_costs();
    let mut covered = GridSet::new(realization.n_grids());
    let mut alloc = Allocation::empty(n);
    for user in order {
        let region = realization.region(user);
        let gain = region.marginal_weight(&covered, realization.weights()) - costs[user];
        if gain <= TIE_TOL {
            break;
        }
        covered.union_with(region);
        alloc.set(user, true);
    }
    Ok(alloc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{evaluate_allocation, WeightField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance() -> SlotRealization {
        SlotRealization::new(
            WeightField::uniform(8, 1.0),
            vec![
                GridSet::from_indices(8, 0..4),
                GridSet::from_indices(8, 2..6),
                GridSet::from_indices(8, 5..8),
            ],
            vec![1.0, 1.5, 2.5],
        )
        .unwrap()
    }

    #[test]
    fn credits_grow_for_losers_and_reset_for_winners() {
        let mut st = VpcState::with_credits(vec![0.4, 0.4], 0.2).unwrap();
        st.update_where(&Allocation::from_selected(vec![false, true]), &[true, true])
            .unwrap();
        assert!((st.credits()[0] - 0.6).abs() < 1e-15);
        assert_eq!(st.credits()[1], 0.0);
    }

    #[test]
    fn zero_alpha_matches_unregulated_greedy() {
        let r = instance();
        let mut st = VpcState::new(3, 0.0).unwrap();
        for _ in 0..5 {
            let a = radp_vpc_step(&mut st, &r, &[true; 3], SolveMode::Greedy).unwrap();
            assert_eq!(a, greedy_baseline_step(&r, &[true; 3]).unwrap());
            assert!(st.credits().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn greedy_baseline_selects_single_profitable_user() {
        let r = SlotRealization::new(
            WeightField::uniform(3, 1.0),
            vec![GridSet::full(3)],
            vec![1.0],
        )
        .unwrap();
        assert!(greedy_baseline_step(&r, &[true]).unwrap().is_selected(0));
    }

    #[test]
    fn random_baseline_is_reproducible() {
        let r = instance();
        let a = random_baseline_step(&r, &[true; 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_baseline_step(&r, &[true; 3], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(evaluate_allocation(&r, &a).unwrap().welfare >= 0.0);
    }

    #[test]
    fn random_baseline_rejects_loss_making_disjoint_users() {
        let r = SlotRealization::new(
            WeightField::uniform(4, 1.0),
            vec![
                GridSet::from_indices(4, 0..2),
                GridSet::from_indices(4, 2..4),
            ],
            vec![3.0, 2.5],
        )
        .unwrap();
        for seed in 0..20 {
            let a = random_baseline_step(&r, &[true, true], &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            assert_eq!(a.count(), 0);
        }
    }

    #[test]
    fn long_losing_streak_eventually_wins() {
        // Fully overlapped user with cost 2 wins once its credit exceeds 2.
        let r = SlotRealization::new(
            WeightField::uniform(4, 1.0),
            vec![GridSet::full(4), GridSet::full(4)],
            vec![1.0, 2.0],
        )
        .unwrap();
        let mut st = VpcState::new(2, 1.0).unwrap();
        let mut wins = Vec::new();
        for _ in 0..6 {
            wins.push(
                radp_vpc_step(&mut st, &r, &[true, true], SolveMode::Exact)
                    .unwrap()
                    .is_selected(1),
            );
            assert!(st.credits().iter().all(|&v| v <= 3.0));
        }
        assert!(wins.iter().any(|&w| w));
    }
}
