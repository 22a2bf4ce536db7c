//! Solvers for finite-horizon optimal multiple-switching problems.
//!
//! A production system runs in one of `q` modes. Mode `i` earns a payoff
//! rate `psi_i(t, x)` driven by a diffusion `x`, and moving from mode `i`
//! to mode `j` at time `t` costs `l_ij(t) >= gamma > 0`. The object of
//! interest is the vector of value processes `Y^1, ..., Y^q` solving the
//! coupled obstacle system
//!
//! ```text
//! Y^i_t = sup over stopping tau >= t of
//!         E[ int_t^tau psi_i(s, X_s) ds
//!            + max_{j != i} ( -l_ij(tau) + Y^j_tau ) 1{tau < T} | F_t ],
//! Y^i_T = 0,
//! ```
//!
//! together with the switching strategy that attains it.
//!
//! Four independent numerical routes are provided and cross-checked:
//!
//! * [`lattice`] — exact backward induction on a recombining binomial
//!   chain, an `n`-switch monotone iteration, and a brute-force strategy
//!   enumeration oracle for tiny instances;
//! * [`penalty`] — penalized backward equations with a double-index
//!   Picard iteration, converging to the lattice values from below;
//! * [`lsmc`] — regression Monte Carlo on simulated paths;
//! * [`pde`] — a 1-D finite-difference scheme for the variational system
//!   with inter-connected obstacles.
//!
//! [`strategy`] turns any value field into an executable decision rule and
//! verifies optimality by replaying it, exactly on the chain or pathwise
//! on fresh simulations. [`mc`] supplies the reproducible path engine.
//!
//! Inner loops (paths, lattice nodes, regression rows) are data-parallel
//! via `rayon` when the default `parallel` feature is enabled; disabling
//! it yields a dependency-free sequential build with bit-identical output.

pub mod coupling;
pub mod error;
pub mod exec;
pub mod lattice;
pub mod lsmc;
pub mod mc;
pub mod model;
pub mod pde;
pub mod penalty;
pub mod strategy;

pub use error::{Error, Result};
pub use model::{
    validate_model, CostSpec, DiffusionFamily, DiffusionSpec, ModeSet, PayoffFn, PayoffSpec,
    SwitchingModel, TimeGrid, ValidationReport,
};
