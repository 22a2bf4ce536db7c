//! Shared generators for the integration suites: random valid 1-D
//! instances and random admissible decision rules.
#![allow(dead_code)] // each test target uses a different subset

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use multiswitch::lattice::ChainModel;
use multiswitch::model::{
    CostSpec, DiffusionFamily, DiffusionSpec, ModeSet, PayoffFn, PayoffSpec, SwitchingModel,
    TimeGrid,
};
use multiswitch::strategy::{Action, DecisionRule, RuleDomain};

/// The deterministic 2-step instance: payoff rates 1 and 3, uniform
/// switching cost, frozen state.
pub fn hand_instance(cost: f64) -> SwitchingModel {
    SwitchingModel {
        modes: ModeSet::numbered(2),
        payoffs: PayoffSpec::new(vec![
            PayoffFn::Constant { c: 1.0 },
            PayoffFn::Constant { c: 3.0 },
        ]),
        costs: CostSpec::constant(2, cost, 0.5),
        diffusion: DiffusionSpec::scalar(
            DiffusionFamily::Abm {
                mu: 0.0,
                sigma: 0.0,
            },
            0.0,
        ),
        grid: TimeGrid::new(2.0, 2),
        initial_mode: 0,
    }
}

/// Random valid problem instance with `q` in {2, 3} and `N` in 3..=6.
pub fn random_instance(seed: u64) -> SwitchingModel {
    let mut rng = StdRng::seed_from_u64(seed);
    let q = if rng.gen_bool(0.5) { 2 } else { 3 };
    let steps = rng.gen_range(3..=6usize);
    let horizon: f64 = rng.gen_range(0.5..2.0);

    let diffusion = if rng.gen_bool(0.5) {
        DiffusionSpec::scalar(
            DiffusionFamily::Abm {
                mu: rng.gen_range(-0.5..0.5),
                sigma: rng.gen_range(0.0..0.6),
            },
            rng.gen_range(-1.0..1.0),
        )
    } else {
        DiffusionSpec::scalar(
            DiffusionFamily::Gbm {
                mu: rng.gen_range(-0.3..0.3),
                sigma: rng.gen_range(0.1..0.5),
            },
            rng.gen_range(0.5..2.0),
        )
    };

    let payoffs = (0..q)
        .map(|_| match rng.gen_range(0..4) {
            0 => PayoffFn::Constant {
                c: rng.gen_range(-1.0..2.0),
            },
            1 => PayoffFn::Affine {
                a: rng.gen_range(-1.0..1.0),
                b: vec![rng.gen_range(-1.0..1.0)],
            },
            2 => PayoffFn::Spread {
                strike: rng.gen_range(0.0..1.5),
            },
            _ => PayoffFn::DiscountedSpread {
                strike: rng.gen_range(0.0..1.5),
                rho: rng.gen_range(0.0..1.0),
            },
        })
        .collect();

    let rate = rng.gen_range(0.0..0.5);
    let mut base = vec![vec![0.0; q]; q];
    let mut min_cost = f64::INFINITY;
    for (i, row) in base.iter_mut().enumerate() {
        for (j, a) in row.iter_mut().enumerate() {
            if i != j {
                *a = rng.gen_range(0.05..0.8);
                min_cost = min_cost.min(*a);
            }
        }
    }
    let gamma = 0.999 * (-rate * horizon).exp() * min_cost;

    SwitchingModel {
        modes: ModeSet::numbered(q),
        payoffs: PayoffSpec::new(payoffs),
        costs: CostSpec::new(base, rate, gamma),
        diffusion,
        grid: TimeGrid::new(horizon, steps),
        initial_mode: rng.gen_range(0..q),
    }
}

/// Random admissible rule on a chain: switches at roughly 15% of the
/// decision slots, always to a different mode, never at the horizon.
pub fn random_rule(model: &SwitchingModel, chain: &ChainModel, seed: u64) -> DecisionRule {
    let mut rng = StdRng::seed_from_u64(seed);
    let q = model.q();
    let n = model.grid.steps();
    let mut actions = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    for m in 0..n {
        let mut level = Vec::with_capacity((m + 1) * q);
        for _l in 0..=m {
            for i in 0..q {
                if rng.gen_bool(0.15) {
                    let mut j = rng.gen_range(0..q - 1);
                    if j >= i {
                        j += 1;
                    }
                    level.push(Action::SwitchTo(j));
                } else {
                    level.push(Action::Continue);
                }
            }
        }
        actions.push(level);
        levels.push(chain.level(m).to_vec());
    }
    DecisionRule::from_actions(
        q,
        model.grid,
        RuleDomain::ChainNodes(levels),
        actions,
        "random",
    )
}
