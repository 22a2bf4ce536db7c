//! Exact discrete-time solver on a recombining binomial chain.
//!
//! The chain is a weak-order-1 approximation of the driving diffusion:
//! node `(m, l)` moves up to `(m+1, l+1)` with probability `p_{m,l}` and
//! down to `(m+1, l)` otherwise. Constant-drift families carry the drift
//! in the node values with `p = 1/2`; GBM is built in log-space where its
//! volatility is constant; the state-dependent OU drift is matched
//! through the up-probability so the node set still recombines.
//!
//! On the chain, the coupled value system is solved by backward induction
//! with terminal value zero: at each node the per-mode continuation is
//! `psi_i dt + E[next]`, and the within-step obstacle coupling is settled
//! by [`crate::coupling::settle_modes`]. The `n`-switch variant runs one
//! backward pass per remaining-switch budget, building each obstacle from
//! the previous field; it increases to the fixed point and matches it
//! exactly once `n` exceeds `q * N`. A brute-force enumeration over all
//! node-adapted strategies serves as an independent oracle on tiny
//! instances.

use crate::coupling::{best_switch, settle_modes};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{DiffusionFamily, DiffusionSpec, SwitchingModel, TimeGrid};

/// What a chain discretizes.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainOrigin {
    /// Built from a diffusion family (name recorded).
    Diffusion(&'static str),
    /// Hand-built node values and probabilities.
    Explicit,
}

/// Recombining binomial chain: `levels[m]` holds the `m + 1` node values
/// at time index `m` in ascending order, `up_prob[m][l]` the probability
/// of the up move out of node `(m, l)`.
#[derive(Debug, Clone)]
pub struct ChainModel {
    grid: TimeGrid,
    levels: Vec<Vec<f64>>,
    up_prob: Vec<Vec<f64>>,
    origin: ChainOrigin,
}

impl ChainModel {
    /// Wrap explicit node values and probabilities, checking shapes.
    pub fn explicit(grid: TimeGrid, levels: Vec<Vec<f64>>, up_prob: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.steps();
        if levels.len() != n + 1 || up_prob.len() != n {
            return Err(Error::Invalid(format!(
                "chain needs {} node levels and {} probability levels, got {} and {}",
                n + 1,
                n,
                levels.len(),
                up_prob.len()
            )));
        }
        for (m, level) in levels.iter().enumerate() {
            if level.len() != m + 1 {
                return Err(Error::Invalid(format!(
                    "level {m} must hold {} nodes, got {}",
                    m + 1,
                    level.len()
                )));
            }
            if level.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!(
                    "non-finite node value at level {m}"
                )));
            }
        }
        for (m, probs) in up_prob.iter().enumerate() {
            if probs.len() != m + 1 {
                return Err(Error::Invalid(format!(
                    "probability level {m} must hold {} entries, got {}",
                    m + 1,
                    probs.len()
                )));
            }
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid(format!(
                    "up-probability out of [0, 1] at level {m}"
                )));
            }
        }
        Ok(ChainModel {
            grid,
            levels,
            up_prob,
            origin: ChainOrigin::Explicit,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn origin(&self) -> &ChainOrigin {
        &self.origin
    }

    pub fn level(&self, m: usize) -> &[f64] {
        &self.levels[m]
    }

    #[inline]
    pub fn node(&self, m: usize, l: usize) -> f64 {
        self.levels[m][l]
    }

    #[inline]
    pub fn up(&self, m: usize, l: usize) -> f64 {
        self.up_prob[m][l]
    }

    /// One-step conditional expectation of `next` (values at `m + 1`,
    /// stride `stride`, offset `offset`) seen from node `(m, l)`.
    #[inline]
    fn expect(&self, next: &[f64], m: usize, l: usize, stride: usize, offset: usize) -> f64 {
        let p = self.up_prob[m][l];
        p * next[(l + 1) * stride + offset] + (1.0 - p) * next[l * stride + offset]
    }

    /// Probability weights of the nodes at time index `m` seen from the
    /// root, by forward propagation.
    pub fn node_weights(&self, m: usize) -> Vec<f64> {
        let mut w = vec![1.0];
        for step in 0..m {
            let mut next = vec![0.0; step + 2];
            for (l, &wl) in w.iter().enumerate() {
                let p = self.up_prob[step][l];
                next[l] += (1.0 - p) * wl;
                next[l + 1] += p * wl;
            }
            w = next;
        }
        w
    }
}

/// Moment-matched binomial chain for a 1-D diffusion.
///
/// * ABM: nodes `x0 + mu m dt + sigma sqrt(dt) (2l - m)`, `p = 1/2`.
/// * GBM: the same construction on `ln x` with drift `mu - sigma^2 / 2`
///   (so the chain mean matches the exact GBM mean to first order in
///   `dt`), mapped back by `exp`.
/// * OU: nodes `x0 + sigma sqrt(dt) (2l - m)` and the state-dependent
///   drift matched through `p_{m,l} = 1/2 + kappa (theta - x) sqrt(dt) /
///   (2 sigma)`, clamped to `[0, 1]`.
///
/// With `sigma = 0` the chain degenerates to the deterministic drift line
/// (all nodes of a level equal, `p` irrelevant).
pub fn build_binomial_chain(diffusion: &DiffusionSpec, grid: TimeGrid) -> Result<ChainModel> {
    if diffusion.dim() != 1 {
        return Err(Error::NotOneDimensional {
            op: "build_binomial_chain",
            dim: diffusion.dim(),
        });
    }
    let x0 = diffusion.x0()[0];
    let n = grid.steps();
    let dt = grid.dt();
    let sqdt = dt.sqrt();

    let mut levels = Vec::with_capacity(n + 1);
    let mut up_prob = Vec::with_capacity(n);

    match *diffusion.family() {
        DiffusionFamily::Abm { mu, sigma } => {
            for m in 0..=n {
                let center = x0 + mu * (m as f64) * dt;
                levels.push(
                    (0..=m)
                        .map(|l| center + sigma * sqdt * (2.0 * l as f64 - m as f64))
                        .collect(),
                );
                if m < n {
                    up_prob.push(vec![0.5; m + 1]);
                }
            }
        }
        DiffusionFamily::Gbm { mu, sigma } => {
            if x0 <= 0.0 {
                return Err(Error::Invalid("GBM chain requires x0 > 0".into()));
            }
            let z0 = x0.ln();
            let drift = mu - 0.5 * sigma * sigma;
            for m in 0..=n {
                let center = z0 + drift * (m as f64) * dt;
                levels.push(
                    (0..=m)
                        .map(|l| (center + sigma * sqdt * (2.0 * l as f64 - m as f64)).exp())
                        .collect(),
                );
                if m < n {
                    up_prob.push(vec![0.5; m + 1]);
                }
            }
        }
        DiffusionFamily::OrnsteinUhlenbeck {
            kappa,
            theta,
            sigma,
        } => {
            if sigma > 0.0 {
                for m in 0..=n {
                    let level: Vec<f64> = (0..=m)
                        .map(|l| x0 + sigma * sqdt * (2.0 * l as f64 - m as f64))
                        .collect();
                    if m < n {
                        up_prob.push(
                            level
                                .iter()
                                .map(|&x| {
                                    (0.5 + kappa * (theta - x) * sqdt / (2.0 * sigma))
                                        .clamp(0.0, 1.0)
                                })
                                .collect(),
                        );
                    }
                    levels.push(level);
                }
            } else {
                // deterministic mean-reversion line via Euler iterates
                let mut x = x0;
                for m in 0..=n {
                    levels.push(vec![x; m + 1]);
                    if m < n {
                        up_prob.push(vec![0.5; m + 1]);
                    }
                    x += kappa * (theta - x) * dt;
                }
            }
        }
    }

    Ok(ChainModel {
        grid,
        levels,
        up_prob,
        origin: ChainOrigin::Diffusion(diffusion.family().name()),
    })
}

/// Which backward scheme produced a lattice.
#[derive(Debug, Clone, PartialEq)]
pub enum LatticeScheme {
    FixedPoint,
    NSwitch(usize),
    Penalized {
        penalty: f64,
        converged: bool,
        picard_sweeps: usize,
    },
}

/// Per-mode values on the chain: `value(i, m, l)` for mode `i`, time
/// index `m`, node `l`. The pre-obstacle continuation values are kept
/// alongside so a decision rule can be read off without re-solving.
/// Terminal values are identically zero.
#[derive(Debug, Clone)]
pub struct ValueLattice {
    pub(crate) q: usize,
    pub(crate) grid: TimeGrid,
    pub(crate) scheme: LatticeScheme,
    /// `values[m]` is `(m + 1) * q` long, node-major: index `l * q + i`.
    pub(crate) values: Vec<Vec<f64>>,
    pub(crate) continuations: Vec<Vec<f64>>,
}

impl ValueLattice {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn scheme(&self) -> &LatticeScheme {
        &self.scheme
    }

    #[inline]
    pub fn value(&self, i: usize, m: usize, l: usize) -> f64 {
        self.values[m][l * self.q + i]
    }

    #[inline]
    pub fn continuation(&self, i: usize, m: usize, l: usize) -> f64 {
        self.continuations[m][l * self.q + i]
    }

    /// All mode values at one node.
    pub fn node_values(&self, m: usize, l: usize) -> &[f64] {
        &self.values[m][l * self.q..(l + 1) * self.q]
    }

    /// `Y^i` at the root node `(m = 0, l = 0)`, one entry per mode.
    pub fn root_values(&self) -> Vec<f64> {
        (0..self.q).map(|i| self.value(i, 0, 0)).collect()
    }

    /// Sup-norm distance over all `(i, m, l)`.
    pub fn sup_distance(&self, other: &ValueLattice) -> f64 {
        let mut d: f64 = 0.0;
        for (vm, wm) in self.values.iter().zip(other.values.iter()) {
            for (a, b) in vm.iter().zip(wm.iter()) {
                d = d.max((a - b).abs());
            }
        }
        d
    }

    /// True when `self <= other + tol` entrywise.
    pub fn entrywise_le(&self, other: &ValueLattice, tol: f64) -> bool {
        self.values
            .iter()
            .zip(other.values.iter())
            .all(|(vm, wm)| vm.iter().zip(wm.iter()).all(|(a, b)| *a <= *b + tol))
    }

    /// Bit-exact equality of all values.
    pub fn identical_values(&self, other: &ValueLattice) -> bool {
        self.values == other.values
    }

    /// CSV export with header `mode,m,l,x,value` (modes 1-based).
    pub fn to_csv(&self, chain: &ChainModel) -> Result<String> {
        if chain.grid() != self.grid {
            return Err(Error::GridMismatch {
                left: chain.grid().to_string(),
                right: self.grid.to_string(),
            });
        }
        let mut out = String::from("mode,m,l,x,value\n");
        for i in 0..self.q {
            for m in 0..self.values.len() {
                for l in 0..=m {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        i + 1,
                        m,
                        l,
                        chain.node(m, l),
                        self.value(i, m, l)
                    ));
                }
            }
        }
        Ok(out)
    }
}

fn check_grid(chain: &ChainModel, model: &SwitchingModel) -> Result<()> {
    if chain.grid() != model.grid {
        return Err(Error::GridMismatch {
            left: chain.grid().to_string(),
            right: model.grid.to_string(),
        });
    }
    Ok(())
}

/// Shared shape of all backward passes: fill `(values, continuations)`
/// from the terminal level down, computing each node of a level with
/// `node_fn(m, l, costs_at_t, next_values) -> (continuations, values)`.
fn backward_pass<F>(
    n: usize,
    q: usize,
    model: &SwitchingModel,
    node_fn: F,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>)
where
    F: Fn(usize, usize, &crate::model::CostMatrix, &[f64]) -> (Vec<f64>, Vec<f64>) + Sync + Send,
{
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut conts: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    values[n] = vec![0.0; (n + 1) * q];
    conts[n] = vec![0.0; (n + 1) * q];
    for m in (0..n).rev() {
        let costs = model.costs.matrix_at(model.grid.t(m));
        let (vm, cm) = {
            let next = &values[m + 1];
            let rows = exec::map_collect(m + 1, |l| node_fn(m, l, &costs, next));
            let mut vm = Vec::with_capacity((m + 1) * q);
            let mut cm = Vec::with_capacity((m + 1) * q);
            for (c, y) in rows {
                cm.extend_from_slice(&c);
                vm.extend_from_slice(&y);
            }
            (vm, cm)
        };
        values[m] = vm;
        conts[m] = cm;
    }
    (values, conts)
}

/// Per-mode continuations `psi_i dt + E[next | node]` at one node.
#[inline]
fn node_continuations(
    chain: &ChainModel,
    model: &SwitchingModel,
    m: usize,
    l: usize,
    next: &[f64],
) -> Vec<f64> {
    let q = model.q();
    let t = model.grid.t(m);
    let dt = model.grid.dt();
    let x = [chain.node(m, l)];
    (0..q)
        .map(|i| model.payoffs.mode(i).eval(t, &x) * dt + chain.expect(next, m, l, q, i))
        .collect()
}

/// Backward induction for the full coupled system: at every node the
/// values satisfy `y_i = max(continuation_i, max_{j != i}(-l_ij + y_j))`,
/// settled exactly within each time step.
pub fn solve_fixed_point(chain: &ChainModel, model: &SwitchingModel) -> Result<ValueLattice> {
    check_grid(chain, model)?;
    let n = model.grid.steps();
    let q = model.q();
    let (values, continuations) = backward_pass(n, q, model, |m, l, costs, next| {
        let c = node_continuations(chain, model, m, l, next);
        let mut y = c.clone();
        settle_modes(&mut y, costs);
        (c, y)
    });
    Ok(ValueLattice {
        q,
        grid: model.grid,
        scheme: LatticeScheme::FixedPoint,
        values,
        continuations,
    })
}

/// The no-switch field: conditional expectation of the remaining payoff
/// of each mode, with no obstacle.
pub(crate) fn no_switch_field(chain: &ChainModel, model: &SwitchingModel) -> Result<ValueLattice> {
    check_grid(chain, model)?;
    let n = model.grid.steps();
    let q = model.q();
    let (values, continuations) = backward_pass(n, q, model, |m, l, _costs, next| {
        let c = node_continuations(chain, model, m, l, next);
        (c.clone(), c)
    });
    Ok(ValueLattice {
        q,
        grid: model.grid,
        scheme: LatticeScheme::NSwitch(0),
        values,
        continuations,
    })
}

fn n_switch_level(
    chain: &ChainModel,
    model: &SwitchingModel,
    prev: &ValueLattice,
    level: usize,
) -> ValueLattice {
    let n = model.grid.steps();
    let q = model.q();
    let (values, continuations) = backward_pass(n, q, model, |m, l, costs, next| {
        let c = node_continuations(chain, model, m, l, next);
        let prev_here = &prev.values[m][l * q..(l + 1) * q];
        let y = (0..q)
            .map(|i| {
                let (_, obstacle) = best_switch(i, prev_here, costs);
                c[i].max(obstacle)
            })
            .collect();
        (c, y)
    });
    ValueLattice {
        q,
        grid: model.grid,
        scheme: LatticeScheme::NSwitch(level),
        values,
        continuations,
    }
}

/// Value when at most `n_switches` further switches are allowed:
/// `n = 0` is the no-switch field, and each later level runs one backward
/// pass whose obstacle is built from the previous level's same-time
/// values.
pub fn solve_n_switch(
    chain: &ChainModel,
    model: &SwitchingModel,
    n_switches: usize,
) -> Result<ValueLattice> {
    let mut current = no_switch_field(chain, model)?;
    for level in 1..=n_switches {
        current = n_switch_level(chain, model, &current, level);
    }
    Ok(current)
}

/// All levels `0..=n_switches` of the recursion at once (desk-scale
/// only: every level is kept in memory). `ladder[r]` is the value with
/// at most `r` switches remaining; the last entry equals
/// [`solve_n_switch`].
pub fn solve_n_switch_ladder(
    chain: &ChainModel,
    model: &SwitchingModel,
    n_switches: usize,
) -> Result<Vec<ValueLattice>> {
    let mut ladder = Vec::with_capacity(n_switches + 1);
    ladder.push(no_switch_field(chain, model)?);
    for level in 1..=n_switches {
        let next = n_switch_level(chain, model, &ladder[level - 1], level);
        ladder.push(next);
    }
    Ok(ladder)
}

const ENUMERATION_GUARD: f64 = 1e7;

/// Exact reference value at the root by literal maximization over all
/// node-adapted strategies with at most `max_switches` switches: a plain
/// top-down recursion that tries, at every reachable `(node, mode)`,
/// continuing for one step or switching to any other mode at the same
/// time. No arrays, no memoization — an independent route from the
/// backward-induction solvers.
pub fn enumerate_strategies(
    chain: &ChainModel,
    model: &SwitchingModel,
    initial_mode: usize,
    max_switches: usize,
) -> Result<f64> {
    check_grid(chain, model)?;
    let q = model.q();
    if initial_mode >= q {
        return Err(Error::ModeOutOfRange {
            mode: initial_mode,
            q,
        });
    }
    let n = model.grid.steps();
    let estimate = binomial(n, max_switches)
        * ((q - 1) as f64).powi(max_switches as i32)
        * 2f64.powi(n as i32);
    if estimate.is_nan() || estimate > ENUMERATION_GUARD {
        return Err(Error::EnumerationTooLarge {
            estimate,
            limit: ENUMERATION_GUARD,
        });
    }

    fn go(
        chain: &ChainModel,
        model: &SwitchingModel,
        m: usize,
        l: usize,
        mode: usize,
        switches_left: usize,
    ) -> f64 {
        let n = model.grid.steps();
        if m == n {
            return 0.0;
        }
        let t = model.grid.t(m);
        let dt = model.grid.dt();
        let x = [chain.node(m, l)];
        let p = chain.up(m, l);
        let mut best = model.payoffs.mode(mode).eval(t, &x) * dt
            + p * go(chain, model, m + 1, l + 1, mode, switches_left)
            + (1.0 - p) * go(chain, model, m + 1, l, mode, switches_left);
        if switches_left > 0 {
            for j in 0..model.q() {
                if j == mode {
                    continue;
                }
                let switched =
                    -model.costs.at(mode, j, t) + go(chain, model, m, l, j, switches_left - 1);
                if switched > best {
                    best = switched;
                }
            }
        }
        best
    }

    Ok(go(chain, model, 0, 0, initial_mode, max_switches))
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// Node-wise upper bound for every mode and switch budget: the backward
/// expectation of `max_i |psi_i| dt` from each node to the horizon. All
/// value fields are dominated by it.
pub fn payoff_envelope_bound(chain: &ChainModel, model: &SwitchingModel) -> Result<Vec<Vec<f64>>> {
    check_grid(chain, model)?;
    let n = model.grid.steps();
    let q = model.q();
    let dt = model.grid.dt();
    let mut bound: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    bound[n] = vec![0.0; n + 1];
    for m in (0..n).rev() {
        let t = model.grid.t(m);
        let next = std::mem::take(&mut bound[m + 1]);
        let level: Vec<f64> = (0..=m)
            .map(|l| {
                let x = [chain.node(m, l)];
                let worst = (0..q)
                    .map(|i| model.payoffs.mode(i).eval(t, &x).abs())
                    .fold(0.0, f64::max);
                let p = chain.up(m, l);
                worst * dt + p * next[l + 1] + (1.0 - p) * next[l]
            })
            .collect();
        bound[m + 1] = next;
        bound[m] = level;
    }
    Ok(bound)
}
