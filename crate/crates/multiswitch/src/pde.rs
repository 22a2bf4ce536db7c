//! 1-D finite-difference solver for the variational system with
//! inter-connected obstacles.
//!
//! Backward theta-scheme on a truncated uniform space grid: per time step
//! and mode, a tridiagonal solve of `dv/dt + A v + psi_i = 0` with
//! central second differences and upwinded first differences, followed by
//! the obstacle projection `v_i <- max(v_i, max_{j != i}(-l_ij + v_j))`
//! swept over modes to its within-step fixpoint. Boundary rows drop the
//! diffusion term (zero second derivative, i.e. linear extrapolation) and
//! keep only inflow drift, so the implicit matrix stays an M-matrix and
//! the scheme monotone; the domain is truncated wide enough that the
//! boundary rows carry no weight where values are read.

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{CostMatrix, DiffusionFamily, SwitchingModel, TimeGrid};

/// Uniform truncation of the state line: `J + 1` nodes spaced `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceGrid {
    x_min: f64,
    x_max: f64,
    intervals: usize,
}

impl SpaceGrid {
    pub fn new(x_min: f64, x_max: f64, intervals: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::Invalid(format!(
                "space grid needs finite x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if intervals < 8 {
            return Err(Error::Invalid(format!(
                "space grid needs at least 8 intervals, got {intervals}"
            )));
        }
        Ok(SpaceGrid {
            x_min,
            x_max,
            intervals,
        })
    }

    /// Five-standard-deviation truncation around `x0`: multiplicative for
    /// GBM, additive otherwise, with a fallback pad when the diffusion is
    /// degenerate.
    pub fn default_for(model: &SwitchingModel, intervals: usize) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::NotOneDimensional {
                op: "SpaceGrid::default_for",
                dim: model.dim(),
            });
        }
        let x0 = model.diffusion.x0()[0];
        let horizon = model.grid.horizon();
        let (x_min, x_max) = match model.diffusion.family() {
            DiffusionFamily::Gbm { sigma, .. } => {
                let w = 5.0 * sigma * horizon.sqrt();
                if w > 1e-10 {
                    (x0 * (-w).exp(), x0 * w.exp())
                } else {
                    let pad = x0.abs().max(1.0);
                    (x0 - pad, x0 + pad)
                }
            }
            DiffusionFamily::Abm { sigma, .. }
            | DiffusionFamily::OrnsteinUhlenbeck { sigma, .. } => {
                let w = 5.0 * sigma * horizon.sqrt();
                if w > 1e-10 {
                    (x0 - w, x0 + w)
                } else {
                    let pad = x0.abs().max(1.0);
                    (x0 - pad, x0 + pad)
                }
            }
        };
        SpaceGrid::new(x_min, x_max, intervals)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Node count `J + 1`.
    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / self.intervals as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.intervals {
            self.x_max
        } else {
            self.x_min + j as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    /// Bracketing index and interpolation weight for `x`, clamped to the
    /// grid.
    fn locate(&self, x: f64) -> (usize, f64) {
        if x <= self.x_min {
            return (0, 0.0);
        }
        if x >= self.x_max {
            return (self.intervals - 1, 1.0);
        }
        let s = (x - self.x_min) / self.h();
        let j = (s.floor() as usize).min(self.intervals - 1);
        (j, s - j as f64)
    }
}

/// Per-mode values on the space-time grid, `value(i, m, j)`, with the
/// pre-projection continuation values kept alongside.
#[derive(Debug, Clone)]
pub struct GridValueField {
    pub(crate) q: usize,
    pub(crate) grid: TimeGrid,
    pub(crate) space: SpaceGrid,
    pub(crate) theta: f64,
    /// `values[m]` is `q * (J + 1)` long, mode-major: index `i * (J+1) + j`.
    pub(crate) values: Vec<Vec<f64>>,
    pub(crate) continuations: Vec<Vec<f64>>,
}

impl GridValueField {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn space(&self) -> SpaceGrid {
        self.space
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn value(&self, i: usize, m: usize, j: usize) -> f64 {
        self.values[m][i * self.space.len() + j]
    }

    #[inline]
    pub fn continuation(&self, i: usize, m: usize, j: usize) -> f64 {
        self.continuations[m][i * self.space.len() + j]
    }

    /// Linear interpolation of `v_i(t_m, x)`.
    pub fn value_at(&self, i: usize, m: usize, x: f64) -> f64 {
        let (j, w) = self.space.locate(x);
        (1.0 - w) * self.value(i, m, j) + w * self.value(i, m, j + 1)
    }

    /// CSV export with header `mode,m,j,x,value` (modes 1-based).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,m,j,x,value\n");
        for i in 0..self.q {
            for m in 0..self.values.len() {
                for j in 0..self.space.len() {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        i + 1,
                        m,
                        j,
                        self.space.node(j),
                        self.value(i, m, j)
                    ));
                }
            }
        }
        out
    }
}

/// Operator stencil at one time level: `(L v)_j = lo_j v_{j-1} - (lo_j +
/// up_j) v_j + up_j v_{j+1}`.
struct Stencil {
    lo: Vec<f64>,
    up: Vec<f64>,
}

fn stencil(model: &SwitchingModel, space: &SpaceGrid, t: f64) -> Stencil {
    let nn = space.len();
    let h = space.h();
    let fam = model.diffusion.family();
    let mut lo = vec![0.0; nn];
    let mut up = vec![0.0; nn];
    for j in 0..nn {
        let x = space.node(j);
        let b = fam.drift(t, x);
        let s = fam.vol(t, x);
        let diff = 0.5 * s * s / (h * h);
        if j == 0 {
            // linear extrapolation boundary, inflow drift only
            up[j] = b.max(0.0) / h;
        } else if j == nn - 1 {
            lo[j] = (-b).max(0.0) / h;
        } else {
            lo[j] = diff + (-b).max(0.0) / h;
            up[j] = diff + b.max(0.0) / h;
        }
    }
    Stencil { lo, up }
}

/// Thomas algorithm for the implicit rows
/// `(1 + theta dt (lo + up)) v_j - theta dt (lo v_{j-1} + up v_{j+1}) =
/// rhs_j`; the rows are diagonally dominant M-matrix rows, no pivoting
/// needed.
fn solve_tridiagonal(stencil: &Stencil, theta_dt: f64, rhs: &mut [f64]) {
    let nn = rhs.len();
    let mut c_prime = vec![0.0; nn];
    let diag = |j: usize| 1.0 + theta_dt * (stencil.lo[j] + stencil.up[j]);
    let upper = |j: usize| -theta_dt * stencil.up[j];
    let lower = |j: usize| -theta_dt * stencil.lo[j];

    let mut beta = diag(0);
    c_prime[0] = upper(0) / beta;
    rhs[0] /= beta;
    for j in 1..nn {
        beta = diag(j) - lower(j) * c_prime[j - 1];
        c_prime[j] = upper(j) / beta;
        rhs[j] = (rhs[j] - lower(j) * rhs[j - 1]) / beta;
    }
    for j in (0..nn - 1).rev() {
        rhs[j] -= c_prime[j] * rhs[j + 1];
    }
}

fn apply_explicit(stencil: &Stencil, coeff: f64, v: &[f64], out: &mut [f64]) {
    let nn = v.len();
    for j in 0..nn {
        let lo = stencil.lo[j];
        let up = stencil.up[j];
        let mut lv = -(lo + up) * v[j];
        if j > 0 {
            lv += lo * v[j - 1];
        }
        if j + 1 < nn {
            lv += up * v[j + 1];
        }
        out[j] = v[j] + coeff * lv;
    }
}

/// Obstacle projection over modes, Gauss-Seidel to the within-step
/// fixpoint (same cycle-cost argument as the chain solver).
fn project_obstacles(values: &mut [f64], nn: usize, q: usize, costs: &CostMatrix) {
    for _ in 0..=q {
        let mut changed = false;
        for i in 0..q {
            for j in 0..nn {
                let mut obstacle = f64::NEG_INFINITY;
                for jj in 0..q {
                    if jj == i {
                        continue;
                    }
                    let cand = -costs.get(i, jj) + values[jj * nn + j];
                    if cand > obstacle {
                        obstacle = cand;
                    }
                }
                if obstacle > values[i * nn + j] {
                    values[i * nn + j] = obstacle;
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
    debug_assert!(
        false,
        "obstacle projection failed to settle within q+1 sweeps"
    );
}

/// Backward theta-scheme solve of the obstacle system on `space`.
///
/// `theta` in `[1/2, 1]`; with `theta < 1` the explicit part must satisfy
/// the positive-coefficient condition `sigma^2 dt / h^2 + |b| dt / h <=
/// 1` at every node, otherwise the solve refuses.
pub fn solve_qvi_fd(
    model: &SwitchingModel,
    space: &SpaceGrid,
    theta: f64,
) -> Result<GridValueField> {
    if model.dim() != 1 {
        return Err(Error::NotOneDimensional {
            op: "solve_qvi_fd",
            dim: model.dim(),
        });
    }
    if !(0.5..=1.0).contains(&theta) {
        return Err(Error::Invalid(format!(
            "theta must lie in [1/2, 1], got {theta}"
        )));
    }
    let x0 = model.diffusion.x0()[0];
    if !(space.x_min() < x0 && x0 < space.x_max()) {
        return Err(Error::Invalid(format!(
            "x0 = {x0} must lie strictly inside the space grid [{}, {}]",
            space.x_min(),
            space.x_max()
        )));
    }

    let n = model.grid.steps();
    let q = model.q();
    let nn = space.len();
    let dt = model.grid.dt();
    let h = space.h();

    if theta < 1.0 {
        let fam = model.diffusion.family();
        for m in 0..n {
            let t = model.grid.t(m);
            for j in 0..nn {
                let x = space.node(j);
                let s = fam.vol(t, x);
                let b = fam.drift(t, x);
                let load = s * s * dt / (h * h) + b.abs() * dt / h;
                if load > 1.0 {
                    return Err(Error::SchemeNotMonotone {
                        detail: format!(
                            "sigma^2 dt/h^2 + |b| dt/h = {load:.3} > 1 at x = {x} (refine the grid or use theta = 1)"
                        ),
                    });
                }
            }
        }
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut conts: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    values[n] = vec![0.0; q * nn];
    conts[n] = vec![0.0; q * nn];

    for m in (0..n).rev() {
        let t = model.grid.t(m);
        let costs = model.costs.matrix_at(t);
        let st = stencil(model, space, t);
        let mut level = {
            let next = &values[m + 1];
            // modes are independent until the projection
            let per_mode: Vec<Vec<f64>> = exec::map_collect(q, |i| {
                let v_next = &next[i * nn..(i + 1) * nn];
                let mut rhs = vec![0.0; nn];
                if theta < 1.0 {
                    apply_explicit(&st, (1.0 - theta) * dt, v_next, &mut rhs);
                } else {
                    rhs.copy_from_slice(v_next);
                }
                for (j, r) in rhs.iter_mut().enumerate() {
                    *r += dt * model.payoffs.mode(i).eval(t, &[space.node(j)]);
                }
                solve_tridiagonal(&st, theta * dt, &mut rhs);
                rhs
            });
            let mut flat = Vec::with_capacity(q * nn);
            for v in per_mode {
                flat.extend_from_slice(&v);
            }
            flat
        };
        conts[m] = level.clone();
        project_obstacles(&mut level, nn, q, &costs);
        values[m] = level;
    }

    Ok(GridValueField {
        q,
        grid: model.grid,
        space: *space,
        theta,
        values,
        continuations: conts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_binomial_chain, solve_fixed_point};
    use crate::model::{
        CostSpec, DiffusionFamily, DiffusionSpec, ModeSet, PayoffFn, PayoffSpec, TimeGrid,
    };

    fn model_with(
        payoffs: Vec<PayoffFn>,
        costs: CostSpec,
        family: DiffusionFamily,
        x0: f64,
        horizon: f64,
        steps: usize,
    ) -> SwitchingModel {
        let q = payoffs.len();
        SwitchingModel {
            modes: ModeSet::numbered(q),
            payoffs: PayoffSpec::new(payoffs),
            costs,
            diffusion: DiffusionSpec::scalar(family, x0),
            grid: TimeGrid::new(horizon, steps),
            initial_mode: 0,
        }
    }

    #[test]
    fn zero_payoffs_give_the_zero_field() {
        let model = model_with(
            vec![PayoffFn::Constant { c: 0.0 }, PayoffFn::Constant { c: 0.0 }],
            CostSpec::constant(2, 0.1, 0.01),
            DiffusionFamily::Gbm {
                mu: 0.05,
                sigma: 0.3,
            },
            1.0,
            1.0,
            40,
        );
        let space = SpaceGrid::default_for(&model, 64).unwrap();
        let field = solve_qvi_fd(&model, &space, 1.0).unwrap();
        for m in 0..=40 {
            for i in 0..2 {
                for j in 0..space.len() {
                    assert_eq!(field.value(i, m, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn never_switch_linear_payoff_matches_closed_form() {
        // v(0, x0) = int_0^T (x0 + mu s - strike) ds, exact for linear data
        let (x0, mu, sigma, horizon, strike) = (1.0, 0.1, 0.2, 1.0, 0.5);
        let model = model_with(
            vec![PayoffFn::Spread { strike }, PayoffFn::Constant { c: -5.0 }],
            CostSpec::constant(2, 1e6, 0.01),
            DiffusionFamily::Abm { mu, sigma },
            x0,
            horizon,
            200,
        );
        let space = SpaceGrid::default_for(&model, 160).unwrap();
        let field = solve_qvi_fd(&model, &space, 1.0).unwrap();
        let closed = (x0 - strike) * horizon + 0.5 * mu * horizon * horizon;
        let got = field.value_at(0, 0, x0);
        assert!(
            (got - closed).abs() / closed.abs() < 2e-2,
            "got {got}, closed form {closed}"
        );
    }

    #[test]
    fn frozen_state_matches_the_lattice_exactly() {
        // sigma = 0, mu = 0: every route reduces to the same time sum
        let model = model_with(
            vec![
                PayoffFn::Constant { c: 1.0 },
                PayoffFn::DiscountedSpread {
                    strike: 0.0,
                    rho: 0.5,
                },
            ],
            CostSpec::constant(2, 0.3, 0.1),
            DiffusionFamily::Abm {
                mu: 0.0,
                sigma: 0.0,
            },
            2.0,
            1.0,
            50,
        );
        let space = SpaceGrid::new(1.0, 3.0, 16).unwrap();
        let field = solve_qvi_fd(&model, &space, 1.0).unwrap();
        let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
        let lat = solve_fixed_point(&chain, &model).unwrap();
        for i in 0..2 {
            let diff = (field.value_at(i, 0, 2.0) - lat.value(i, 0, 0)).abs();
            assert!(diff < 1e-12, "mode {i}: diff {diff}");
        }
    }

    #[test]
    fn benchmark_agrees_with_lattice() {
        let model = model_with(
            vec![
                PayoffFn::Constant { c: 0.0 },
                PayoffFn::Spread { strike: 1.0 },
            ],
            CostSpec::constant(2, 0.05, 0.01),
            DiffusionFamily::Gbm {
                mu: 0.02,
                sigma: 0.3,
            },
            1.0,
            1.0,
            80,
        );
        let space = SpaceGrid::default_for(&model, 160).unwrap();
        let field = solve_qvi_fd(&model, &space, 1.0).unwrap();
        let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
        let lat = solve_fixed_point(&chain, &model).unwrap();
        let y_pde = field.value_at(0, 0, 1.0);
        let y_lat = lat.value(0, 0, 0);
        assert!(
            (y_pde - y_lat).abs() / y_lat.abs().max(1e-12) < 5e-2,
            "pde {y_pde} vs lattice {y_lat}"
        );
    }

    #[test]
    fn obstacle_condition_holds_after_every_step() {
        let model = model_with(
            vec![
                PayoffFn::Constant { c: 0.2 },
                PayoffFn::Spread { strike: 1.0 },
                PayoffFn::Constant { c: -0.1 },
            ],
            CostSpec::constant(3, 0.05, 0.01),
            DiffusionFamily::Gbm {
                mu: 0.02,
                sigma: 0.3,
            },
            1.0,
            0.5,
            30,
        );
        let space = SpaceGrid::default_for(&model, 64).unwrap();
        let field = solve_qvi_fd(&model, &space, 1.0).unwrap();
        for m in 0..30 {
            let costs = model.costs.matrix_at(model.grid.t(m));
            for j in 1..space.len() - 1 {
                for i in 0..3 {
                    for jj in 0..3 {
                        if jj == i {
                            continue;
                        }
                        let obstacle = -costs.get(i, jj) + field.value(jj, m, j);
                        assert!(field.value(i, m, j) >= obstacle - 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn raising_a_payoff_never_lowers_the_field() {
        let build = |strike: f64| {
            let model = model_with(
                vec![PayoffFn::Spread { strike }, PayoffFn::Constant { c: 0.1 }],
                CostSpec::constant(2, 0.05, 0.01),
                DiffusionFamily::Gbm {
                    mu: 0.02,
                    sigma: 0.3,
                },
                1.0,
                1.0,
                40,
            );
            let space = SpaceGrid::new(0.2, 4.0, 80).unwrap();
            solve_qvi_fd(&model, &space, 1.0).unwrap()
        };
        let low = build(1.0);
        let high = build(0.9); // smaller strike = pointwise larger psi_1
        for m in 0..=40 {
            for i in 0..2 {
                for j in 0..low.space.len() {
                    assert!(
                        high.value(i, m, j) >= low.value(i, m, j) - 1e-12,
                        "comparison principle violated at ({i}, {m}, {j})"
                    );
                }
            }
        }
    }

    #[test]
    fn explicit_part_refuses_when_not_monotone() {
        let model = model_with(
            vec![PayoffFn::Constant { c: 0.0 }, PayoffFn::Constant { c: 1.0 }],
            CostSpec::constant(2, 0.1, 0.01),
            DiffusionFamily::Abm {
                mu: 0.0,
                sigma: 1.0,
            },
            0.0,
            1.0,
            4, // dt huge relative to h^2
        );
        let space = SpaceGrid::new(-5.0, 5.0, 100).unwrap();
        assert!(matches!(
            solve_qvi_fd(&model, &space, 0.5),
            Err(Error::SchemeNotMonotone { .. })
        ));
        // fully implicit accepts the same resolution
        assert!(solve_qvi_fd(&model, &space, 1.0).is_ok());
    }

    #[test]
    fn rejects_bad_grids_and_theta() {
        let model = model_with(
            vec![PayoffFn::Constant { c: 0.0 }, PayoffFn::Constant { c: 1.0 }],
            CostSpec::constant(2, 0.1, 0.01),
            DiffusionFamily::Abm {
                mu: 0.0,
                sigma: 1.0,
            },
            0.0,
            1.0,
            10,
        );
        assert!(SpaceGrid::new(1.0, 0.0, 32).is_err());
        assert!(SpaceGrid::new(0.0, 1.0, 4).is_err());
        let space = SpaceGrid::new(-6.0, 6.0, 32).unwrap();
        assert!(solve_qvi_fd(&model, &space, 0.3).is_err());
        // x0 must be interior
        let off = SpaceGrid::new(1.0, 2.0, 32).unwrap();
        assert!(solve_qvi_fd(&model, &off, 1.0).is_err());
    }

    #[test]
    fn terminal_level_is_zero_and_csv_exports() {
        let model = model_with(
            vec![PayoffFn::Constant { c: 1.0 }, PayoffFn::Constant { c: 2.0 }],
            CostSpec::constant(2, 0.1, 0.01),
            DiffusionFamily::Abm {
                mu: 0.0,
                sigma: 0.5,
            },
            0.0,
            1.0,
            10,
        );
        let space = SpaceGrid::default_for(&model, 16).unwrap();
        let field = solve_qvi_fd(&model, &space, 1.0).unwrap();
        for i in 0..2 {
            for j in 0..space.len() {
                assert_eq!(field.value(i, 10, j), 0.0);
            }
        }
        let csv = field.to_csv();
        assert!(csv.starts_with("mode,m,j,x,value\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 11 * 17);
    }
}
