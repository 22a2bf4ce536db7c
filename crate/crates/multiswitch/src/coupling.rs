//! Within-timestep coupling of mode values through switch obstacles.
//!
//! Given per-mode continuation values `c_i` at one state and the cost
//! matrix at that time, the coupled values solve
//!
//! ```text
//! y_i = max( c_i, max_{j != i} ( -l_ij + y_j ) ).
//! ```
//!
//! Gauss-Seidel sweeps starting from `y = c` reach the fixpoint in at
//! most `q - 1` sweeps: every strict improvement extends a chain of
//! same-time switches, and a chain of length `q` would revisit a mode,
//! which needs a cost-free switch cycle — impossible with all costs
//! floored at `gamma > 0`.

use crate::model::CostMatrix;

/// Best switch target out of mode `i` given same-time values `y`:
/// `(argmax_j, max_j (-l_ij + y_j))`, ties broken by smallest index.
/// Meaningless (returns `f64::NEG_INFINITY`) when `q < 2`.
#[inline]
pub fn best_switch(i: usize, y: &[f64], costs: &CostMatrix) -> (usize, f64) {
    let mut best_j = usize::MAX;
    let mut best = f64::NEG_INFINITY;
    for (j, &yj) in y.iter().enumerate() {
        if j == i {
            continue;
        }
        let v = -costs.get(i, j) + yj;
        if v > best {
            best = v;
            best_j = j;
        }
    }
    (best_j, best)
}

/// Replace `y` (entered as the continuation values) by the coupled
/// fixpoint. Returns the number of full sweeps performed.
pub fn settle_modes(y: &mut [f64], costs: &CostMatrix) -> usize {
    let q = y.len();
    let mut sweeps = 0;
    // q sweeps is one more than the theoretical bound; the final sweep
    // only confirms stability.
    for _ in 0..=q {
        sweeps += 1;
        let mut changed = false;
        for i in 0..q {
            let (_, obstacle) = best_switch(i, y, costs);
            if obstacle > y[i] {
                y[i] = obstacle;
                changed = true;
            }
        }
        if !changed {
            return sweeps;
        }
    }
    debug_assert!(false, "mode coupling failed to settle within q+1 sweeps");
    sweeps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostSpec;

    #[test]
    fn two_mode_settle_matches_hand_solution() {
        let costs = CostSpec::constant(2, 1.0, 0.5).matrix_at(0.0);
        // continuation (3, 6): mode 1 switches, mode 2 stays
        let mut y = vec![3.0, 6.0];
        settle_modes(&mut y, &costs);
        assert_eq!(y, vec![5.0, 6.0]);
    }

    #[test]
    fn chain_of_switches_propagates_across_sweeps() {
        // 3 modes, cheap ring 1 -> 2 -> 3; mode 3 is the only earner.
        let costs = CostSpec::new(
            vec![
                vec![0.0, 1.0, 100.0],
                vec![1.0, 0.0, 1.0],
                vec![100.0, 1.0, 0.0],
            ],
            0.0,
            1.0,
        )
        .matrix_at(0.0);
        let mut y = vec![0.0, 0.0, 10.0];
        settle_modes(&mut y, &costs);
        // mode 2: -1 + 10 = 9; mode 1: -1 + 9 = 8 (direct route costs 100)
        assert_eq!(y, vec![8.0, 9.0, 10.0]);
    }

    #[test]
    fn fixpoint_satisfies_dominance_and_consistency() {
        let costs = CostSpec::constant(3, 0.3, 0.1).matrix_at(0.5);
        let c = vec![0.2, -0.4, 0.9];
        let mut y = c.clone();
        settle_modes(&mut y, &costs);
        for i in 0..3 {
            let (_, obstacle) = best_switch(i, &y, &costs);
            assert!(y[i] >= c[i]);
            assert!(y[i] >= obstacle);
            assert!(y[i] == c[i] || y[i] == obstacle);
        }
    }
}
