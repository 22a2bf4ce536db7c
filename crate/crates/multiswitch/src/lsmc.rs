//! Regression Monte Carlo on simulated paths.
//!
//! Conditional expectations are replaced by least-squares projections on
//! a polynomial basis of the path state: at each time step the next-step
//! value field is regressed on the current states, and the fitted
//! continuations (not the raw targets) feed the same within-step obstacle
//! coupling as the lattice solver. Regressing the next-step value field
//! rather than accumulated cashflows is deliberate: the coupled obstacle
//! needs same-time values of *all* modes, which cashflow regression does
//! not provide.
//!
//! The design matrix is shared by all modes at a time step and factored
//! once by SVD; a rank-deficient design falls back to the smallest-norm
//! solution and is flagged in the per-step metadata.

use nalgebra::{DMatrix, DVector};

use crate::coupling::{best_switch, settle_modes};
use crate::error::{Error, Result};
use crate::exec;
use crate::mc::PathBatch;
use crate::model::{SwitchingModel, TimeGrid};

/// Polynomial regression basis of bounded total degree, with optional
/// per-step coordinate standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBasis {
    pub degree: usize,
    pub standardize: bool,
}

impl RegressionBasis {
    pub fn polynomial(degree: usize) -> Self {
        RegressionBasis {
            degree,
            standardize: true,
        }
    }

    /// Number of monomials of total degree `<= degree` in `k` variables:
    /// `C(degree + k, k)`.
    pub fn size(&self, k: usize) -> usize {
        let mut c: usize = 1;
        for i in 1..=k {
            c = c * (self.degree + i) / i;
        }
        c
    }
}

/// Monomial exponent vectors in graded order.
fn monomial_exponents(k: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = vec![0usize; k];
    fn rec(out: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, coord: usize, left: usize) {
        if coord + 1 == current.len() {
            current[coord] = left;
            out.push(current.clone());
            return;
        }
        for e in 0..=left {
            current[coord] = e;
            rec(out, current, coord + 1, left - e);
        }
    }
    for total in 0..=degree {
        rec(&mut out, &mut current, 0, total);
    }
    out
}

fn term_name(exponents: &[usize]) -> String {
    if exponents.iter().all(|&e| e == 0) {
        return "1".to_string();
    }
    exponents
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(c, &e)| {
            if e == 1 {
                format!("x{}", c + 1)
            } else {
                format!("x{}^{e}", c + 1)
            }
        })
        .collect::<Vec<_>>()
        .join("*")
}

/// One fitted regression: coefficients over the (standardized) monomials,
/// fitted values for every path, and the standardization actually used.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub rank_deficient: bool,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub exponents: Vec<Vec<usize>>,
}

impl FitResult {
    /// Evaluate the fitted regression function at a state.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (w, exps) in self.coefficients.iter().zip(self.exponents.iter()) {
            let mut term = 1.0;
            for (c, &e) in exps.iter().enumerate() {
                if e > 0 {
                    let z = (x[c] - self.shift[c]) / self.scale[c];
                    term *= z.powi(e as i32);
                }
            }
            acc += w * term;
        }
        acc
    }
}

fn standardization(states: &[f64], paths: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut shift = vec![0.0; k];
    let mut scale = vec![1.0; k];
    for c in 0..k {
        let mean = (0..paths).map(|p| states[p * k + c]).sum::<f64>() / paths as f64;
        let var = (0..paths)
            .map(|p| (states[p * k + c] - mean).powi(2))
            .sum::<f64>()
            / paths as f64;
        shift[c] = mean;
        let sd = var.sqrt();
        scale[c] = if sd > 1e-12 { sd } else { 1.0 };
    }
    (shift, scale)
}

fn all_rows_equal(states: &[f64], paths: usize, k: usize) -> bool {
    let first = &states[0..k];
    (1..paths).all(|p| &states[p * k..(p + 1) * k] == first)
}

/// Ordinary least squares of `targets` on the polynomial basis of
/// `states` (`paths x k`, row-major), via SVD. A rank-deficient design
/// returns the smallest-norm solution and sets the flag.
pub fn fit_continuation(
    states: &[f64],
    k: usize,
    targets: &[f64],
    basis: &RegressionBasis,
) -> Result<FitResult> {
    let paths = targets.len();
    assert_eq!(states.len(), paths * k, "states shape mismatch");
    let b = basis.size(k);
    if b > paths / 10 {
        return Err(Error::BasisTooLarge {
            basis_size: b,
            paths,
        });
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite regression target".into()));
    }
    let exponents = monomial_exponents(k, basis.degree);

    if all_rows_equal(states, paths, k) {
        // a constant design carries no information beyond the mean
        let mean = targets.iter().sum::<f64>() / paths as f64;
        let mut coefficients = vec![0.0; b];
        coefficients[0] = mean;
        return Ok(FitResult {
            coefficients,
            fitted: vec![mean; paths],
            rank_deficient: false,
            shift: states[0..k].to_vec(),
            scale: vec![1.0; k],
            exponents,
        });
    }

    let (shift, scale) = if basis.standardize {
        standardization(states, paths, k)
    } else {
        (vec![0.0; k], vec![1.0; k])
    };

    let design = build_design(states, paths, k, &exponents, &shift, &scale);
    let rhs = DVector::from_column_slice(targets);
    let (coeffs, rank_deficient) = svd_solve(&design, &rhs)?;
    let fitted_v = &design * &coeffs;
    Ok(FitResult {
        coefficients: coeffs.iter().copied().collect(),
        fitted: fitted_v.iter().copied().collect(),
        rank_deficient,
        shift,
        scale,
        exponents,
    })
}

fn build_design(
    states: &[f64],
    paths: usize,
    k: usize,
    exponents: &[Vec<usize>],
    shift: &[f64],
    scale: &[f64],
) -> DMatrix<f64> {
    let b = exponents.len();
    let rows: Vec<Vec<f64>> = exec::map_collect(paths, |p| {
        let x = &states[p * k..(p + 1) * k];
        exponents
            .iter()
            .map(|exps| {
                let mut term = 1.0;
                for (c, &e) in exps.iter().enumerate() {
                    if e > 0 {
                        let z = (x[c] - shift[c]) / scale[c];
                        term *= z.powi(e as i32);
                    }
                }
                term
            })
            .collect()
    });
    DMatrix::from_fn(paths, b, |r, c| rows[r][c])
}

fn svd_solve(design: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * 1e-12;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let coeffs = svd
        .solve(rhs, eps)
        .map_err(|e| Error::Invalid(format!("least-squares solve failed: {e}")))?;
    Ok((coeffs, rank < design.ncols()))
}

/// Which backward scheme produced a path field.
#[derive(Debug, Clone, PartialEq)]
pub enum PathScheme {
    FixedPoint,
    NSwitch(usize),
}

/// Per-step regression metadata for one mode.
#[derive(Debug, Clone)]
pub struct CoeffRecord {
    pub coefficients: Vec<f64>,
    pub rank_deficient: bool,
}

/// Value field along simulated paths: `value(i, m, p)` plus the fitted
/// regression weights per `(mode, time index)`.
#[derive(Debug, Clone)]
pub struct PathValueField {
    q: usize,
    grid: TimeGrid,
    m_paths: usize,
    seed: u64,
    basis: RegressionBasis,
    scheme: PathScheme,
    /// `values[m]` is `q * paths` long, mode-major: index `i * paths + p`.
    values: Vec<Vec<f64>>,
    /// `coeffs[m][i]`, empty at `m = N`.
    coeffs: Vec<Vec<CoeffRecord>>,
    /// Estimator standard error of the time-0 value, per mode.
    se0: Vec<f64>,
    term_names: Vec<String>,
}

impl PathValueField {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn paths(&self) -> usize {
        self.m_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }

    pub fn scheme(&self) -> &PathScheme {
        &self.scheme
    }

    #[inline]
    pub fn value(&self, i: usize, m: usize, p: usize) -> f64 {
        self.values[m][i * self.m_paths + p]
    }

    pub fn mode_values(&self, i: usize, m: usize) -> &[f64] {
        &self.values[m][i * self.m_paths..(i + 1) * self.m_paths]
    }

    pub fn mean(&self, i: usize, m: usize) -> f64 {
        self.mode_values(i, m).iter().sum::<f64>() / self.m_paths as f64
    }

    /// Cross-path dispersion of the field at `(i, m)`, as a standard
    /// error of the mean.
    pub fn stderr(&self, i: usize, m: usize) -> f64 {
        if self.m_paths < 2 {
            return 0.0;
        }
        let mean = self.mean(i, m);
        let var = self
            .mode_values(i, m)
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / (self.m_paths - 1) as f64;
        (var / self.m_paths as f64).sqrt()
    }

    /// Time-0 value estimate per mode (constant across paths up to
    /// regression error).
    pub fn mean0(&self, i: usize) -> f64 {
        self.mean(i, 0)
    }

    /// Standard error of the time-0 estimate. The field itself is
    /// flattened across paths by the final regression, so its cross-path
    /// spread at `m = 0` says nothing about the estimator; instead the
    /// batch is split into ten replication groups, each solved
    /// independently, and the spread of their time-0 means is scaled to
    /// the full batch size. This captures the regression-coefficient
    /// noise that propagates through the backward induction, not just
    /// the final averaging. (Batches too small to replicate fall back to
    /// the dispersion of the final regression's targets.)
    pub fn se0(&self, i: usize) -> f64 {
        self.se0[i]
    }

    pub fn coeff(&self, i: usize, m: usize) -> &CoeffRecord {
        &self.coeffs[m][i]
    }

    pub fn rank_flagged(&self) -> bool {
        self.coeffs
            .iter()
            .any(|level| level.iter().any(|c| c.rank_deficient))
    }

    /// CSV export `mode,m,mean,stderr` (modes 1-based).
    pub fn field_csv(&self) -> String {
        let mut out = String::from("mode,m,mean,stderr\n");
        for i in 0..self.q {
            for m in 0..self.values.len() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    i + 1,
                    m,
                    self.mean(i, m),
                    self.stderr(i, m)
                ));
            }
        }
        out
    }

    /// CSV export `mode,m,term,weight` of the regression coefficients.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("mode,m,term,weight\n");
        for i in 0..self.q {
            for (m, level) in self.coeffs.iter().enumerate() {
                if level.is_empty() {
                    continue;
                }
                for (term, w) in self.term_names.iter().zip(level[i].coefficients.iter()) {
                    out.push_str(&format!("{},{},{},{}\n", i + 1, m, term, w));
                }
            }
        }
        out
    }
}

struct BackwardState {
    values: Vec<Vec<f64>>,
    coeffs: Vec<Vec<CoeffRecord>>,
    /// continuations at m = 0 (needed to identify the active branch)
    cont0: Vec<f64>,
}

/// One backward sweep shared by the fixed-point and n-switch solvers:
/// `couple` turns per-path continuations into coupled values, given the
/// time index and the per-path continuation slice layout `i * paths + p`.
fn backward_regression<F>(
    batch: &PathBatch,
    model: &SwitchingModel,
    basis: &RegressionBasis,
    couple: F,
) -> Result<BackwardState>
where
    F: Fn(usize, &crate::model::CostMatrix, &[f64]) -> Vec<f64>,
{
    let n = model.grid.steps();
    let q = model.q();
    let k = batch.dim();
    let mp = batch.paths();
    let dt = model.grid.dt();
    let exponents = monomial_exponents(k, basis.degree);
    let b = basis.size(k);
    if b > mp / 10 {
        return Err(Error::BasisTooLarge {
            basis_size: b,
            paths: mp,
        });
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut coeffs: Vec<Vec<CoeffRecord>> = vec![Vec::new(); n + 1];
    values[n] = vec![0.0; q * mp];
    let mut cont0 = Vec::new();

    for m in (0..n).rev() {
        let t = model.grid.t(m);
        let costs = model.costs.matrix_at(t);
        let states = batch.states_at(m);
        let constant_states = all_rows_equal(&states, mp, k);

        // one shared design factorization for all modes
        let mut cont = vec![0.0; q * mp];
        let mut records = Vec::with_capacity(q);
        if constant_states {
            for i in 0..q {
                let targets = &values[m + 1][i * mp..(i + 1) * mp];
                let mean = targets.iter().sum::<f64>() / mp as f64;
                let psi = model.payoffs.mode(i).eval(t, &states[0..k]) * dt;
                for p in 0..mp {
                    cont[i * mp + p] = psi + mean;
                }
                let mut c = vec![0.0; b];
                c[0] = mean;
                records.push(CoeffRecord {
                    coefficients: c,
                    rank_deficient: false,
                });
            }
        } else {
            let (shift, scale) = if basis.standardize {
                standardization(&states, mp, k)
            } else {
                (vec![0.0; k], vec![1.0; k])
            };
            let design = build_design(&states, mp, k, &exponents, &shift, &scale);
            let svd = design.clone().svd(true, true);
            let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
            let eps = smax * 1e-12;
            let rank_deficient = svd.singular_values.iter().filter(|&&s| s > eps).count() < b;
            let rhs = DMatrix::from_fn(mp, q, |p, i| values[m + 1][i * mp + p]);
            let coeff_mat = svd
                .solve(&rhs, eps)
                .map_err(|e| Error::Invalid(format!("least-squares solve failed: {e}")))?;
            let fitted = &design * &coeff_mat;
            for i in 0..q {
                for p in 0..mp {
                    let x = &states[p * k..(p + 1) * k];
                    cont[i * mp + p] = model.payoffs.mode(i).eval(t, x) * dt + fitted[(p, i)];
                }
                records.push(CoeffRecord {
                    coefficients: coeff_mat.column(i).iter().copied().collect(),
                    rank_deficient,
                });
            }
        }

        for i in 0..q {
            if cont[i * mp..(i + 1) * mp].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: "lsmc",
                    mode: i,
                    step: m,
                });
            }
        }

        values[m] = couple(m, &costs, &cont);
        coeffs[m] = records;
        if m == 0 {
            cont0 = cont;
        }
    }

    Ok(BackwardState {
        values,
        coeffs,
        cont0,
    })
}

/// Settle the obstacle coupling per path, in parallel chunks.
fn settle_paths(q: usize, mp: usize, costs: &crate::model::CostMatrix, cont: &[f64]) -> Vec<f64> {
    const CHUNK: usize = 8192;
    let chunks = mp.div_ceil(CHUNK);
    let pieces: Vec<Vec<f64>> = exec::map_collect(chunks, |ci| {
        let start = ci * CHUNK;
        let end = mp.min(start + CHUNK);
        let mut out = vec![0.0; (end - start) * q];
        let mut y = vec![0.0; q];
        for p in start..end {
            for i in 0..q {
                y[i] = cont[i * mp + p];
            }
            settle_modes(&mut y, costs);
            for i in 0..q {
                out[(p - start) * q + i] = y[i];
            }
        }
        out
    });
    let mut level = vec![0.0; q * mp];
    for (ci, piece) in pieces.iter().enumerate() {
        let start = ci * CHUNK;
        for (local, chunk_vals) in piece.chunks(q).enumerate() {
            let p = start + local;
            for i in 0..q {
                level[i * mp + p] = chunk_vals[i];
            }
        }
    }
    level
}

/// Identify the branch actually taken at `m = 0` (all paths share one
/// state) and return the per-mode estimator standard errors.
fn time0_standard_errors(
    model: &SwitchingModel,
    values: &[Vec<f64>],
    cont0: &[f64],
    mp: usize,
    fallback: Option<&[f64]>,
    prev_values0: Option<&[f64]>,
) -> Vec<f64> {
    let q = model.q();
    let costs = model.costs.matrix_at(0.0);
    let sd_next = |i: usize| -> f64 {
        let vals = &values[1][i * mp..(i + 1) * mp];
        let mean = vals.iter().sum::<f64>() / mp as f64;
        if mp < 2 {
            return 0.0;
        }
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (mp - 1) as f64;
        (var / mp as f64).sqrt()
    };
    (0..q)
        .map(|i| {
            let mut cur = i;
            for _ in 0..q {
                let y = values[0][cur * mp];
                let c = cont0[cur * mp];
                let tol = 1e-12 * y.abs().max(1.0);
                if y <= c + tol {
                    return sd_next(cur);
                }
                // the obstacle won: follow the switch target
                match (fallback, prev_values0) {
                    (Some(prev_se0), Some(prev0)) => {
                        // n-switch: the target lives in the previous level
                        let mut here = vec![0.0; q];
                        for (j, h) in here.iter_mut().enumerate() {
                            *h = prev0[j * mp];
                        }
                        let (target, _) = best_switch(cur, &here, &costs);
                        return prev_se0[target];
                    }
                    _ => {
                        let mut here = vec![0.0; q];
                        for (j, h) in here.iter_mut().enumerate() {
                            *h = values[0][j * mp];
                        }
                        let (target, _) = best_switch(cur, &here, &costs);
                        cur = target;
                    }
                }
            }
            sd_next(cur)
        })
        .collect()
}

fn fixed_point_state(
    batch: &PathBatch,
    model: &SwitchingModel,
    basis: &RegressionBasis,
) -> Result<BackwardState> {
    let q = model.q();
    let mp = batch.paths();
    backward_regression(batch, model, basis, |_m, costs, cont| {
        settle_paths(q, mp, costs, cont)
    })
}

fn n_switch_state(
    batch: &PathBatch,
    model: &SwitchingModel,
    basis: &RegressionBasis,
    n_switches: usize,
) -> Result<BackwardState> {
    let q = model.q();
    let mp = batch.paths();
    let mut state = backward_regression(batch, model, basis, |_m, _costs, cont| cont.to_vec())?;
    for _level in 1..=n_switches {
        let prev = state;
        state = backward_regression(batch, model, basis, |m, costs, cont| {
            let prev_level = &prev.values[m];
            let mut level = vec![0.0; q * mp];
            let mut here = vec![0.0; q];
            for p in 0..mp {
                for (j, h) in here.iter_mut().enumerate() {
                    *h = prev_level[j * mp + p];
                }
                for i in 0..q {
                    let (_, obstacle) = best_switch(i, &here, costs);
                    level[i * mp + p] = cont[i * mp + p].max(obstacle);
                }
            }
            level
        })?;
    }
    Ok(state)
}

fn means0(state: &BackwardState, q: usize, mp: usize) -> Vec<f64> {
    (0..q)
        .map(|i| state.values[0][i * mp..(i + 1) * mp].iter().sum::<f64>() / mp as f64)
        .collect()
}

const REPLICATION_GROUPS: usize = 10;

/// Batch-means standard error: solve ten disjoint sub-batches with the
/// given sub-solver and scale the spread of their time-0 means back to
/// the full batch. Returns `None` when the batch is too small to split
/// without tripping the basis guard.
fn replicated_se0<F>(
    batch: &PathBatch,
    basis_size: usize,
    q: usize,
    sub_solve: F,
) -> Result<Option<Vec<f64>>>
where
    F: Fn(&PathBatch) -> Result<Vec<f64>>,
{
    let k = REPLICATION_GROUPS;
    let mp = batch.paths();
    let group = mp / k;
    if group < 10 * basis_size || group < 2 {
        return Ok(None);
    }
    let mut group_means: Vec<Vec<f64>> = Vec::with_capacity(k);
    for g in 0..k {
        let start = g * group;
        let end = if g + 1 == k { mp } else { start + group };
        let sub = batch.subset(start..end);
        group_means.push(sub_solve(&sub)?);
    }
    let mut se = vec![0.0; q];
    for (i, s) in se.iter_mut().enumerate() {
        let vals: Vec<f64> = group_means.iter().map(|m| m[i]).collect();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        // a group estimator sees mp/k paths, so var_full ~ var_group / k
        *s = (var / k as f64).sqrt();
    }
    Ok(Some(se))
}

/// Regression Monte Carlo analogue of the lattice fixed point: backward
/// induction where each step fits the per-mode continuations and settles
/// the obstacle coupling per path.
pub fn solve_lsmc_fixed_point(
    batch: &PathBatch,
    model: &SwitchingModel,
    basis: &RegressionBasis,
) -> Result<PathValueField> {
    check_batch(batch, model)?;
    let q = model.q();
    let mp = batch.paths();
    let state = fixed_point_state(batch, model, basis)?;
    let se0 = match replicated_se0(batch, basis.size(batch.dim()), q, |sub| {
        fixed_point_state(sub, model, basis).map(|s| means0(&s, q, sub.paths()))
    })? {
        Some(se) => se,
        None => time0_standard_errors(model, &state.values, &state.cont0, mp, None, None),
    };
    Ok(PathValueField {
        q,
        grid: model.grid,
        m_paths: mp,
        seed: batch.seed(),
        basis: basis.clone(),
        scheme: PathScheme::FixedPoint,
        values: state.values,
        coeffs: state.coeffs,
        se0,
        term_names: monomial_exponents(batch.dim(), basis.degree)
            .iter()
            .map(|e| term_name(e))
            .collect(),
    })
}

/// Regression Monte Carlo analogue of the `n`-switch recursion: level 0
/// is the no-switch field, and each later level takes its obstacle from
/// the previous level's same-time values.
pub fn solve_lsmc_n_switch(
    batch: &PathBatch,
    model: &SwitchingModel,
    basis: &RegressionBasis,
    n_switches: usize,
) -> Result<PathValueField> {
    check_batch(batch, model)?;
    let q = model.q();
    let mp = batch.paths();

    let state = n_switch_state(batch, model, basis, n_switches)?;
    let se0 = match replicated_se0(batch, basis.size(batch.dim()), q, |sub| {
        n_switch_state(sub, model, basis, n_switches).map(|s| means0(&s, q, sub.paths()))
    })? {
        Some(se) => se,
        None => fallback_n_switch_se0(batch, model, basis, n_switches)?,
    };

    Ok(PathValueField {
        q,
        grid: model.grid,
        m_paths: mp,
        seed: batch.seed(),
        basis: basis.clone(),
        scheme: PathScheme::NSwitch(n_switches),
        values: state.values,
        coeffs: state.coeffs,
        se0,
        term_names: monomial_exponents(batch.dim(), basis.degree)
            .iter()
            .map(|e| term_name(e))
            .collect(),
    })
}

/// Target-dispersion fallback for tiny batches: walk the level ladder
/// and chase the active branch at `m = 0` through it.
fn fallback_n_switch_se0(
    batch: &PathBatch,
    model: &SwitchingModel,
    basis: &RegressionBasis,
    n_switches: usize,
) -> Result<Vec<f64>> {
    let q = model.q();
    let mp = batch.paths();
    let mut state = backward_regression(batch, model, basis, |_m, _costs, cont| cont.to_vec())?;
    let mut se0 = time0_standard_errors(model, &state.values, &state.cont0, mp, None, None);
    for _level in 1..=n_switches {
        let prev = state;
        let prev_se0 = se0;
        state = backward_regression(batch, model, basis, |m, costs, cont| {
            let prev_level = &prev.values[m];
            let mut level = vec![0.0; q * mp];
            let mut here = vec![0.0; q];
            for p in 0..mp {
                for (j, h) in here.iter_mut().enumerate() {
                    *h = prev_level[j * mp + p];
                }
                for i in 0..q {
                    let (_, obstacle) = best_switch(i, &here, costs);
                    level[i * mp + p] = cont[i * mp + p].max(obstacle);
                }
            }
            level
        })?;
        se0 = time0_standard_errors(
            model,
            &state.values,
            &state.cont0,
            mp,
            Some(&prev_se0),
            Some(&prev.values[0]),
        );
    }
    Ok(se0)
}

fn check_batch(batch: &PathBatch, model: &SwitchingModel) -> Result<()> {
    if batch.grid() != model.grid {
        return Err(Error::GridMismatch {
            left: batch.grid().to_string(),
            right: model.grid.to_string(),
        });
    }
    if batch.dim() != model.dim() {
        return Err(Error::Invalid(format!(
            "batch dimension {} does not match model dimension {}",
            batch.dim(),
            model.dim()
        )));
    }
    Ok(())
}
