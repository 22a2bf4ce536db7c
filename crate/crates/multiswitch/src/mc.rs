//! Path engine: Euler simulation of the driving diffusion under a
//! reproducible randomness contract.
//!
//! Every normal increment is produced by a counter-based generator keyed
//! by `(seed, path, step, coordinate)` and mapped through the inverse
//! normal CDF, so a batch is a pure function of its inputs: the same seed
//! yields bit-identical paths no matter how many workers simulate them,
//! and the antithetic variant of a path is an exact sign flip of its
//! partner's draws.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::LazyLock;

use crate::error::{Error, Result};
use crate::exec;
use crate::model::{DiffusionSpec, TimeGrid};

static STD_NORMAL: LazyLock<Normal> = LazyLock::new(|| Normal::new(0.0, 1.0).unwrap());

/// SplitMix64 finalizer: a bijective 64-bit mixer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in the open interval (0, 1), keyed by the full counter.
#[inline]
fn keyed_uniform(seed: u64, path: u64, step: u64, coord: u64) -> f64 {
    let mut h = mix64(seed ^ 0x6a09_e667_f3bc_c909);
    h = mix64(h ^ path.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    h = mix64(h ^ step.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    h = mix64(h ^ coord.wrapping_mul(0x94d0_49bb_1331_11eb));
    ((h >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0) // 2^-53
}

/// Standard normal draw via inverse CDF of the keyed uniform stream.
#[inline]
pub fn normal_draw(seed: u64, path: u64, step: u64, coord: u64) -> f64 {
    STD_NORMAL.inverse_cdf(keyed_uniform(seed, path, step, coord))
}

/// A batch of simulated trajectories, `paths x (N + 1) x k`.
#[derive(Debug, Clone)]
pub struct PathBatch {
    paths: usize,
    dim: usize,
    grid: TimeGrid,
    seed: u64,
    scheme: &'static str,
    /// Row-major `[path][step][coord]`.
    data: Vec<f64>,
}

impl PathBatch {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scheme(&self) -> &'static str {
        self.scheme
    }

    #[inline]
    pub fn value(&self, path: usize, step: usize, coord: usize) -> f64 {
        self.data[(path * (self.grid.steps() + 1) + step) * self.dim + coord]
    }

    /// State vector of one path at one time index.
    #[inline]
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * (self.grid.steps() + 1) + step) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// All path states at one time index, gathered row-major `paths x k`.
    pub fn states_at(&self, step: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.paths * self.dim);
        for p in 0..self.paths {
            out.extend_from_slice(self.state(p, step));
        }
        out
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Copy out a contiguous range of paths (replication sub-batches).
    pub fn subset(&self, range: std::ops::Range<usize>) -> PathBatch {
        assert!(range.start < range.end && range.end <= self.paths);
        let row = (self.grid.steps() + 1) * self.dim;
        PathBatch {
            paths: range.len(),
            dim: self.dim,
            grid: self.grid,
            seed: self.seed,
            scheme: self.scheme,
            data: self.data[range.start * row..range.end * row].to_vec(),
        }
    }

    /// CSV dump `path,m,coord,value`, guarded for small batches only.
    pub fn to_csv(&self) -> Result<String> {
        const LIMIT: usize = 1_000_000;
        let rows = self.paths * (self.grid.steps() + 1) * self.dim;
        if rows > LIMIT {
            return Err(Error::ExportTooLarge { rows, limit: LIMIT });
        }
        let mut out = String::from("path,m,coord,value\n");
        for p in 0..self.paths {
            for m in 0..=self.grid.steps() {
                for c in 0..self.dim {
                    out.push_str(&format!("{},{},{},{}\n", p, m, c, self.value(p, m, c)));
                }
            }
        }
        Ok(out)
    }
}

/// Euler scheme `X_{m+1} = X_m + b(t_m, X_m) dt + sigma(t_m, X_m)
/// sqrt(dt) xi` with coordinatewise dynamics and independent drivers.
pub fn simulate_euler(
    diffusion: &DiffusionSpec,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
) -> PathBatch {
    simulate_euler_with(diffusion, grid, paths, seed, false)
}

/// As [`simulate_euler`]; with `antithetic` set, odd-indexed paths use
/// the exact negation of their even partner's normal draws.
pub fn simulate_euler_with(
    diffusion: &DiffusionSpec,
    grid: TimeGrid,
    paths: usize,
    seed: u64,
    antithetic: bool,
) -> PathBatch {
    assert!(paths >= 1, "need at least one path");
    let k = diffusion.dim();
    let n = grid.steps();
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let x0 = diffusion.x0().to_vec();
    let family = diffusion.family().clone();

    let rows: Vec<Vec<f64>> = exec::map_collect(paths, |p| {
        let mut row = Vec::with_capacity((n + 1) * k);
        let mut x = x0.clone();
        row.extend_from_slice(&x);
        for m in 0..n {
            let t = grid.t(m);
            for (c, xc) in x.iter_mut().enumerate() {
                let z = if antithetic {
                    let base = normal_draw(seed, (p / 2) as u64, m as u64, c as u64);
                    if p % 2 == 1 {
                        -base
                    } else {
                        base
                    }
                } else {
                    normal_draw(seed, p as u64, m as u64, c as u64)
                };
                *xc += family.drift(t, *xc) * dt + family.vol(t, *xc) * sqdt * z;
            }
            row.extend_from_slice(&x);
        }
        row
    });

    let mut data = Vec::with_capacity(paths * (n + 1) * k);
    for row in rows {
        data.extend_from_slice(&row);
    }
    PathBatch {
        paths,
        dim: k,
        grid,
        seed,
        scheme: if antithetic {
            "euler-antithetic"
        } else {
            "euler"
        },
        data,
    }
}

/// Empirical check of the path-supremum moment bound
/// `E[sup_m |X_m|^theta] <= C (1 + |x0|^theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub theta: f64,
    /// Empirical `E[sup_m |X_m|^theta]` over the finite paths.
    pub sup_moment: f64,
    /// `sup_moment / (1 + |x0|^theta)` — the fitted constant `C`.
    pub bound_coefficient: f64,
    /// False when any path overflowed or produced NaN.
    pub finite: bool,
    pub non_finite_paths: usize,
}

pub fn moment_report(batch: &PathBatch, theta: f64) -> MomentReport {
    assert!(theta >= 2.0, "theta must be >= 2");
    let k = batch.dim();
    let mut acc = 0.0;
    let mut bad = 0usize;
    for p in 0..batch.paths() {
        let mut sup: f64 = 0.0;
        let mut ok = true;
        for m in 0..=batch.grid().steps() {
            let s = batch.state(p, m);
            let norm = if k == 1 {
                s[0].abs()
            } else {
                s.iter().map(|v| v * v).sum::<f64>().sqrt()
            };
            if !norm.is_finite() {
                ok = false;
                break;
            }
            sup = sup.max(norm);
        }
        if ok {
            acc += sup.powf(theta);
        } else {
            bad += 1;
        }
    }
    let good = batch.paths() - bad;
    let sup_moment = if good > 0 {
        acc / good as f64
    } else {
        f64::NAN
    };
    let x0 = batch.state(0, 0);
    let x0_norm = if k == 1 {
        x0[0].abs()
    } else {
        x0.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    MomentReport {
        theta,
        sup_moment,
        bound_coefficient: sup_moment / (1.0 + x0_norm.powf(theta)),
        finite: bad == 0 && sup_moment.is_finite(),
        non_finite_paths: bad,
    }
}
