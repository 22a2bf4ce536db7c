//! Problem instances: mode set, payoff rates, switching costs, diffusion
//! dynamics, and the time grid.
//!
//! All types are immutable after construction and all evaluations are
//! pure, so a model can be shared freely across worker threads. Payoffs
//! and diffusions are restricted to builtin families; every family is
//! jointly continuous, of polynomial growth in the state, and (for the
//! diffusions) Lipschitz with linear growth, so the standing assumptions
//! of the switching problem hold by construction rather than by trust in
//! user code.

use std::fmt;

use serde::Deserialize;

use crate::error::{Error, Result};

/// The set of operating modes `{1, ..., q}`, identified by short labels.
/// Internally modes are 0-based indices; config files and CSV/JSON
/// artifacts use 1-based numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    labels: Vec<String>,
}

impl ModeSet {
    pub fn new(labels: Vec<String>) -> Self {
        ModeSet { labels }
    }

    /// Convenience constructor: modes named "m1", ..., "mq".
    pub fn numbered(q: usize) -> Self {
        ModeSet {
            labels: (1..=q).map(|i| format!("m{i}")).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// A builtin payoff-rate family `psi(t, x)`, in profit per unit time.
///
/// For state dimension `k > 1` the spread families act on the coordinate
/// sum, and `Affine` carries one slope per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum PayoffFn {
    /// `psi = c`.
    Constant { c: f64 },
    /// `psi = a + sum_j b_j x_j`.
    Affine { a: f64, b: Vec<f64> },
    /// `psi = sum_j x_j - strike`.
    Spread { strike: f64 },
    /// `psi = exp(-rho t) (sum_j x_j - strike)`.
    DiscountedSpread { strike: f64, rho: f64 },
}

impl PayoffFn {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            PayoffFn::Constant { c } => *c,
            PayoffFn::Affine { a, b } => {
                a + b.iter().zip(x.iter()).map(|(bj, xj)| bj * xj).sum::<f64>()
            }
            PayoffFn::Spread { strike } => x.iter().sum::<f64>() - strike,
            PayoffFn::DiscountedSpread { strike, rho } => {
                (-rho * t).exp() * (x.iter().sum::<f64>() - strike)
            }
        }
    }

    fn params_finite(&self) -> bool {
        match self {
            PayoffFn::Constant { c } => c.is_finite(),
            PayoffFn::Affine { a, b } => a.is_finite() && b.iter().all(|v| v.is_finite()),
            PayoffFn::Spread { strike } => strike.is_finite(),
            PayoffFn::DiscountedSpread { strike, rho } => strike.is_finite() && rho.is_finite(),
        }
    }
}

/// One payoff-rate function per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffSpec {
    per_mode: Vec<PayoffFn>,
}

impl PayoffSpec {
    pub fn new(per_mode: Vec<PayoffFn>) -> Self {
        PayoffSpec { per_mode }
    }

    pub fn mode(&self, i: usize) -> &PayoffFn {
        &self.per_mode[i]
    }

    pub fn len(&self) -> usize {
        self.per_mode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_mode.is_empty()
    }
}

/// Switching costs `l_ij(t) = exp(-rate * t) * base[i][j]` with floor
/// `gamma`: every off-diagonal cost must stay `>= gamma > 0` on `[0, T]`.
/// Since the costs are nonincreasing in `t`, checking the floor at `t = T`
/// suffices.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    base: Vec<Vec<f64>>,
    rate: f64,
    gamma: f64,
}

/// Default cost floor when a config does not supply one.
pub const DEFAULT_GAMMA: f64 = 1e-6;

impl CostSpec {
    pub fn new(base: Vec<Vec<f64>>, rate: f64, gamma: f64) -> Self {
        CostSpec { base, rate, gamma }
    }

    /// Uniform constant costs `a` between all mode pairs.
    pub fn constant(q: usize, a: f64, gamma: f64) -> Self {
        CostSpec {
            base: vec![vec![a; q]; q],
            rate: 0.0,
            gamma,
        }
    }

    pub fn base(&self) -> &[Vec<f64>] {
        &self.base
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `l_ij(t)`, unchecked indices. Diagonal entries are meaningless.
    pub fn at(&self, i: usize, j: usize, t: f64) -> f64 {
        (-self.rate * t).exp() * self.base[i][j]
    }

    /// All pairwise costs at time `t`, row-major `q x q`.
    pub fn matrix_at(&self, t: f64) -> CostMatrix {
        let q = self.base.len();
        let disc = (-self.rate * t).exp();
        let mut flat = Vec::with_capacity(q * q);
        for row in &self.base {
            for &a in row {
                flat.push(disc * a);
            }
        }
        CostMatrix { q, flat }
    }
}

/// Dense snapshot of `l_ij` at a fixed time, used in solver inner loops.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    q: usize,
    flat: Vec<f64>,
}

impl CostMatrix {
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.flat[i * self.q + j]
    }
}

/// Builtin diffusion families, applied coordinatewise with independent
/// Brownian drivers when the state has dimension `k > 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionFamily {
    /// `dX = mu dt + sigma dB` (arithmetic Brownian motion).
    Abm { mu: f64, sigma: f64 },
    /// `dX = mu X dt + sigma X dB` (geometric Brownian motion).
    Gbm { mu: f64, sigma: f64 },
    /// `dX = kappa (theta - X) dt + sigma dB` (Ornstein-Uhlenbeck).
    OrnsteinUhlenbeck { kappa: f64, theta: f64, sigma: f64 },
}

impl DiffusionFamily {
    /// Drift `b(t, x)` of one coordinate.
    #[inline]
    pub fn drift(&self, _t: f64, x: f64) -> f64 {
        match self {
            DiffusionFamily::Abm { mu, .. } => *mu,
            DiffusionFamily::Gbm { mu, .. } => mu * x,
            DiffusionFamily::OrnsteinUhlenbeck { kappa, theta, .. } => kappa * (theta - x),
        }
    }

    /// Volatility `sigma(t, x)` of one coordinate.
    #[inline]
    pub fn vol(&self, _t: f64, x: f64) -> f64 {
        match self {
            DiffusionFamily::Abm { sigma, .. } => *sigma,
            DiffusionFamily::Gbm { sigma, .. } => sigma * x,
            DiffusionFamily::OrnsteinUhlenbeck { sigma, .. } => *sigma,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DiffusionFamily::Abm { .. } => "abm",
            DiffusionFamily::Gbm { .. } => "gbm",
            DiffusionFamily::OrnsteinUhlenbeck { .. } => "ou",
        }
    }

    fn params_finite(&self) -> bool {
        match self {
            DiffusionFamily::Abm { mu, sigma } => mu.is_finite() && sigma.is_finite(),
            DiffusionFamily::Gbm { mu, sigma } => mu.is_finite() && sigma.is_finite(),
            DiffusionFamily::OrnsteinUhlenbeck {
                kappa,
                theta,
                sigma,
            } => kappa.is_finite() && theta.is_finite() && sigma.is_finite(),
        }
    }
}

/// Diffusion dynamics plus the initial state; the state dimension is the
/// length of `x0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSpec {
    family: DiffusionFamily,
    x0: Vec<f64>,
}

/// Largest supported state dimension (path engines only; the lattice and
/// PDE solvers require `k = 1`).
pub const MAX_DIM: usize = 3;

impl DiffusionSpec {
    pub fn new(family: DiffusionFamily, x0: Vec<f64>) -> Self {
        DiffusionSpec { family, x0 }
    }

    pub fn scalar(family: DiffusionFamily, x0: f64) -> Self {
        DiffusionSpec {
            family,
            x0: vec![x0],
        }
    }

    pub fn family(&self) -> &DiffusionFamily {
        &self.family
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }
}

/// Uniform grid `t_m = m T / N`, `m = 0..N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Self {
        TimeGrid { horizon, steps }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn t(&self, m: usize) -> f64 {
        // exact at the endpoints, uniform in between
        if m == self.steps {
            self.horizon
        } else {
            m as f64 * self.dt()
        }
    }
}

impl fmt::Display for TimeGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[0, {}] / {} steps", self.horizon, self.steps)
    }
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingModel {
    pub modes: ModeSet,
    pub payoffs: PayoffSpec,
    pub costs: CostSpec,
    pub diffusion: DiffusionSpec,
    pub grid: TimeGrid,
    /// 0-based initial mode.
    pub initial_mode: usize,
}

impl SwitchingModel {
    pub fn q(&self) -> usize {
        self.modes.count()
    }

    pub fn dim(&self) -> usize {
        self.diffusion.dim()
    }

    /// Payoff rate of mode `i` at `(t, x)`.
    pub fn evaluate_payoff(&self, i: usize, t: f64, x: &[f64]) -> Result<f64> {
        if i >= self.q() {
            return Err(Error::ModeOutOfRange {
                mode: i,
                q: self.q(),
            });
        }
        Ok(self.payoffs.mode(i).eval(t, x))
    }

    /// Switching cost from `i` to `j` at time `t`. Self-switches are a
    /// contract violation: admissible strategies never choose `j = i`.
    pub fn evaluate_cost(&self, i: usize, j: usize, t: f64) -> Result<f64> {
        let q = self.q();
        if i >= q {
            return Err(Error::ModeOutOfRange { mode: i, q });
        }
        if j >= q {
            return Err(Error::ModeOutOfRange { mode: j, q });
        }
        if i == j {
            return Err(Error::SelfSwitch { mode: i });
        }
        Ok(self.costs.at(i, j, t))
    }

    /// Validate and wrap in `Err` if anything is violated.
    pub fn checked(self) -> Result<Self> {
        let report = validate_model(&self);
        if report.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(report))
        }
    }
}

/// One violated rule, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Outcome of [`validate_model`]; empty means valid. Violations are data,
/// not errors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            rule: rule.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Check every structural invariant of a model and report all violations.
pub fn validate_model(model: &SwitchingModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let q = model.q();
    let k = model.dim();

    if q < 2 {
        report.push("modes", format!("need at least 2 modes, got {q}"));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for label in model.modes.labels() {
            if !seen.insert(label.as_str()) {
                report.push("modes", format!("duplicate label {label:?}"));
            }
        }
    }

    if model.payoffs.len() != q {
        report.push(
            "payoffs",
            format!("expected {q} payoff functions, got {}", model.payoffs.len()),
        );
    }
    for (i, p) in (0..model.payoffs.len()).map(|i| (i, model.payoffs.mode(i))) {
        if !p.params_finite() {
            report.push(format!("payoffs[{i}]"), "non-finite parameter");
        }
        if let PayoffFn::Affine { b, .. } = p {
            if b.len() != k {
                report.push(
                    format!("payoffs[{i}]"),
                    format!(
                        "affine slope has {} entries, state dimension is {k}",
                        b.len()
                    ),
                );
            }
        }
        if let PayoffFn::DiscountedSpread { rho, .. } = p {
            if *rho < 0.0 {
                report.push(format!("payoffs[{i}]"), "discount rate rho must be >= 0");
            }
        }
    }

    // cost matrix shape, rate, floor
    let base = model.costs.base();
    if base.len() != q || base.iter().any(|row| row.len() != q) {
        report.push("costs.base", format!("cost matrix shape must be {q} x {q}"));
    } else {
        if model.costs.gamma().is_nan() || model.costs.gamma() <= 0.0 {
            report.push("costs.gamma", "cost floor gamma must be > 0");
        }
        if !model.costs.rate().is_finite() || model.costs.rate() < 0.0 {
            report.push("costs.rate", "discount rate must be finite and >= 0");
        }
        // l is nonincreasing in t, so the floor holds on [0, T] iff it
        // holds at t = T.
        let t_end = model.grid.horizon();
        for i in 0..q {
            for j in 0..q {
                if i == j {
                    continue;
                }
                let end_cost = model.costs.at(i, j, t_end);
                if !end_cost.is_finite() || end_cost < model.costs.gamma() {
                    report.push(
                        format!("costs.base[{}][{}]", i + 1, j + 1),
                        format!(
                            "cost floor: l_{}{}(T) = {end_cost} < gamma = {}",
                            i + 1,
                            j + 1,
                            model.costs.gamma()
                        ),
                    );
                }
            }
        }
    }

    if k == 0 || k > MAX_DIM {
        report.push(
            "diffusion.x0",
            format!("state dimension must be 1..={MAX_DIM}, got {k}"),
        );
    }
    if !model.diffusion.family().params_finite() {
        report.push("diffusion", "non-finite parameter");
    }
    if model.diffusion.x0().iter().any(|v| !v.is_finite()) {
        report.push("diffusion.x0", "non-finite initial state");
    }
    match model.diffusion.family() {
        DiffusionFamily::Gbm { .. } => {
            if model.diffusion.x0().iter().any(|&v| v <= 0.0) {
                report.push("diffusion.x0", "GBM requires x0 > 0");
            }
        }
        DiffusionFamily::Abm { sigma, .. } | DiffusionFamily::OrnsteinUhlenbeck { sigma, .. } => {
            if *sigma < 0.0 {
                report.push("diffusion.sigma", "volatility must be >= 0");
            }
        }
    }
    if let DiffusionFamily::Gbm { sigma, .. } = model.diffusion.family() {
        if *sigma < 0.0 {
            report.push("diffusion.sigma", "volatility must be >= 0");
        }
    }

    if !model.grid.horizon().is_finite() || model.grid.horizon() <= 0.0 {
        report.push("grid.T", "horizon must be finite and > 0");
    }
    if model.grid.steps() < 1 {
        report.push("grid.N", "need at least one time step");
    }

    if model.initial_mode >= q {
        report.push(
            "initial_mode",
            format!("mode {} out of range 1..={q}", model.initial_mode + 1),
        );
    }

    report
}

// ---------------------------------------------------------------------------
// JSON config
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfig {
    modes: Vec<String>,
    payoffs: Vec<PayoffConfig>,
    costs: CostsConfig,
    diffusion: DiffusionConfig,
    grid: GridConfig,
    /// 1-based.
    initial_mode: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PayoffConfig {
    family: String,
    c: Option<f64>,
    a: Option<f64>,
    b: Option<Vec<f64>>,
    strike: Option<f64>,
    rho: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CostsConfig {
    base: Vec<Vec<f64>>,
    rate: f64,
    gamma: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffusionConfig {
    family: String,
    mu: Option<f64>,
    sigma: Option<f64>,
    kappa: Option<f64>,
    theta: Option<f64>,
    x0: X0Config,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum X0Config {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridConfig {
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "N")]
    steps: usize,
}

fn cfg_err(ctx: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("{ctx}: {msg}"))
}

fn require(ctx: &str, name: &str, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| cfg_err(ctx, format!("missing parameter {name:?}")))
}

fn forbid(ctx: &str, family: &str, given: &[(&str, bool)]) -> Result<()> {
    for (name, present) in given {
        if *present {
            return Err(cfg_err(
                ctx,
                format!("unexpected parameter {name:?} for family {family:?}"),
            ));
        }
    }
    Ok(())
}

fn payoff_from_config(i: usize, cfg: &PayoffConfig) -> Result<PayoffFn> {
    let ctx = format!("payoffs[{i}]");
    match cfg.family.as_str() {
        "constant" => {
            forbid(
                &ctx,
                "constant",
                &[
                    ("a", cfg.a.is_some()),
                    ("b", cfg.b.is_some()),
                    ("strike", cfg.strike.is_some()),
                    ("rho", cfg.rho.is_some()),
                ],
            )?;
            Ok(PayoffFn::Constant {
                c: require(&ctx, "c", cfg.c)?,
            })
        }
        "affine" => {
            forbid(
                &ctx,
                "affine",
                &[
                    ("c", cfg.c.is_some()),
                    ("strike", cfg.strike.is_some()),
                    ("rho", cfg.rho.is_some()),
                ],
            )?;
            let b = cfg
                .b
                .clone()
                .ok_or_else(|| cfg_err(&ctx, "missing parameter \"b\""))?;
            Ok(PayoffFn::Affine {
                a: require(&ctx, "a", cfg.a)?,
                b,
            })
        }
        "spread" => {
            forbid(
                &ctx,
                "spread",
                &[
                    ("c", cfg.c.is_some()),
                    ("a", cfg.a.is_some()),
                    ("b", cfg.b.is_some()),
                    ("rho", cfg.rho.is_some()),
                ],
            )?;
            Ok(PayoffFn::Spread {
                strike: require(&ctx, "strike", cfg.strike)?,
            })
        }
        "discounted_spread" => {
            forbid(
                &ctx,
                "discounted_spread",
                &[
                    ("c", cfg.c.is_some()),
                    ("a", cfg.a.is_some()),
                    ("b", cfg.b.is_some()),
                ],
            )?;
            Ok(PayoffFn::DiscountedSpread {
                strike: require(&ctx, "strike", cfg.strike)?,
                rho: require(&ctx, "rho", cfg.rho)?,
            })
        }
        other => Err(cfg_err(&ctx, format!("unknown payoff family {other:?}"))),
    }
}

fn diffusion_from_config(cfg: &DiffusionConfig) -> Result<DiffusionSpec> {
    let ctx = "diffusion";
    let x0 = match &cfg.x0 {
        X0Config::Scalar(v) => vec![*v],
        X0Config::Vector(v) => v.clone(),
    };
    let family = match cfg.family.as_str() {
        "abm" => {
            forbid(
                ctx,
                "abm",
                &[
                    ("kappa", cfg.kappa.is_some()),
                    ("theta", cfg.theta.is_some()),
                ],
            )?;
            DiffusionFamily::Abm {
                mu: require(ctx, "mu", cfg.mu)?,
                sigma: require(ctx, "sigma", cfg.sigma)?,
            }
        }
        "gbm" => {
            forbid(
                ctx,
                "gbm",
                &[
                    ("kappa", cfg.kappa.is_some()),
                    ("theta", cfg.theta.is_some()),
                ],
            )?;
            DiffusionFamily::Gbm {
                mu: require(ctx, "mu", cfg.mu)?,
                sigma: require(ctx, "sigma", cfg.sigma)?,
            }
        }
        "ou" => {
            forbid(ctx, "ou", &[("mu", cfg.mu.is_some())])?;
            DiffusionFamily::OrnsteinUhlenbeck {
                kappa: require(ctx, "kappa", cfg.kappa)?,
                theta: require(ctx, "theta", cfg.theta)?,
                sigma: require(ctx, "sigma", cfg.sigma)?,
            }
        }
        other => return Err(cfg_err(ctx, format!("unknown diffusion family {other:?}"))),
    };
    Ok(DiffusionSpec::new(family, x0))
}

impl SwitchingModel {
    /// Parse a model from its JSON config document. Unknown keys are an
    /// error; the result is parsed but not yet validated (run
    /// [`validate_model`] or [`SwitchingModel::checked`]).
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

        let payoffs = cfg
            .payoffs
            .iter()
            .enumerate()
            .map(|(i, p)| payoff_from_config(i, p))
            .collect::<Result<Vec<_>>>()?;

        if cfg.initial_mode == 0 {
            return Err(cfg_err("initial_mode", "modes are numbered from 1"));
        }

        Ok(SwitchingModel {
            modes: ModeSet::new(cfg.modes),
            payoffs: PayoffSpec::new(payoffs),
            costs: CostSpec::new(
                cfg.costs.base,
                cfg.costs.rate,
                cfg.costs.gamma.unwrap_or(DEFAULT_GAMMA),
            ),
            diffusion: diffusion_from_config(&cfg.diffusion)?,
            grid: TimeGrid::new(cfg.grid.horizon, cfg.grid.steps),
            initial_mode: cfg.initial_mode - 1,
        })
    }

    /// Same model on a refined/coarsened time grid (same horizon).
    pub fn with_steps(&self, steps: usize) -> Self {
        let mut m = self.clone();
        m.grid = TimeGrid::new(self.grid.horizon(), steps);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mode_model() -> SwitchingModel {
        SwitchingModel {
            modes: ModeSet::numbered(2),
            payoffs: PayoffSpec::new(vec![
                PayoffFn::Constant { c: 1.0 },
                PayoffFn::Constant { c: 3.0 },
            ]),
            costs: CostSpec::constant(2, 1.0, 0.5),
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

    #[test]
    fn valid_two_mode_instance() {
        let report = validate_model(&two_mode_model());
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn zero_cost_violates_floor() {
        let mut m = two_mode_model();
        m.costs = CostSpec::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 0.0, 0.5);
        let report = validate_model(&m);
        assert!(!report.is_valid());
        assert!(report
            .violations
            .iter()
            .any(|v| v.field == "costs.base[1][2]" && v.rule.contains("cost floor")));
    }

    #[test]
    fn cost_matrix_shape_mismatch() {
        let mut m = two_mode_model();
        m.modes = ModeSet::numbered(3);
        m.payoffs = PayoffSpec::new(vec![
            PayoffFn::Constant { c: 0.0 },
            PayoffFn::Constant { c: 0.0 },
            PayoffFn::Constant { c: 0.0 },
        ]);
        let report = validate_model(&m);
        assert!(report
            .violations
            .iter()
            .any(|v| v.field == "costs.base" && v.rule.contains("shape")));
    }

    #[test]
    fn discounted_floor_uses_horizon() {
        // e^{-rT} a = e^{-1} * 1 = 0.3679 < gamma = 0.5 even though a >= gamma
        let mut m = two_mode_model();
        m.costs = CostSpec::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]], 0.5, 0.5);
        let report = validate_model(&m);
        assert!(!report.is_valid());
    }

    #[test]
    fn spread_payoff_value() {
        let m = SwitchingModel {
            payoffs: PayoffSpec::new(vec![
                PayoffFn::Spread { strike: 1.0 },
                PayoffFn::Constant { c: 0.0 },
            ]),
            ..two_mode_model()
        };
        assert_eq!(m.evaluate_payoff(0, 0.3, &[3.0]).unwrap(), 2.0);
        assert_eq!(m.evaluate_payoff(1, 0.9, &[17.0]).unwrap(), 0.0);
    }

    #[test]
    fn discounted_spread_with_zero_rho_is_spread() {
        let spread = PayoffFn::Spread { strike: 0.7 };
        let disc = PayoffFn::DiscountedSpread {
            strike: 0.7,
            rho: 0.0,
        };
        // deterministic pseudo-random probe points
        let mut s = 0.123_f64;
        for _ in 0..100 {
            s = (s * 9301.0 + 49297.0) % 233280.0;
            let t = s / 233280.0;
            let x = 4.0 * t - 2.0;
            assert_eq!(spread.eval(t, &[x]), disc.eval(t, &[x]));
        }
    }

    #[test]
    fn cost_examples() {
        let m = two_mode_model();
        assert_eq!(m.evaluate_cost(0, 1, 0.7).unwrap(), 1.0);

        let m2 = SwitchingModel {
            costs: CostSpec::new(vec![vec![0.0, 2.0], vec![2.0, 0.0]], 2.0_f64.ln(), 0.5),
            ..two_mode_model()
        };
        let c = m2.evaluate_cost(0, 1, 1.0).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_switch_is_an_error() {
        let m = two_mode_model();
        assert!(matches!(
            m.evaluate_cost(1, 1, 0.0),
            Err(Error::SelfSwitch { mode: 1 })
        ));
    }

    #[test]
    fn mode_out_of_range() {
        let m = two_mode_model();
        assert!(matches!(
            m.evaluate_payoff(2, 0.0, &[0.0]),
            Err(Error::ModeOutOfRange { mode: 2, q: 2 })
        ));
    }

    #[test]
    fn evaluations_are_pure() {
        let m = two_mode_model();
        let a = m.evaluate_payoff(1, 0.37, &[1.23]).unwrap();
        let b = m.evaluate_payoff(1, 0.37, &[1.23]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let c1 = m.evaluate_cost(0, 1, 0.41).unwrap();
        let c2 = m.evaluate_cost(0, 1, 0.41).unwrap();
        assert_eq!(c1.to_bits(), c2.to_bits());
    }

    /// Every switch cycle over distinct intermediate modes pays at least
    /// 2 gamma. Enumerated directly for q <= 5.
    #[test]
    fn cycle_costs_at_least_two_gamma() {
        for q in 2..=5usize {
            let mut base = vec![vec![0.0; q]; q];
            for (i, row) in base.iter_mut().enumerate() {
                for (j, a) in row.iter_mut().enumerate() {
                    if i != j {
                        // arbitrary costs respecting the floor
                        *a = 0.5 + ((i * q + j) as f64) * 0.13;
                    }
                }
            }
            let gamma = 0.5;
            let costs = CostSpec::new(base, 0.0, gamma);
            let t = 0.3;

            // depth-first enumeration of cycles i -> ... -> i with distinct
            // intermediates
            #[allow(clippy::too_many_arguments)]
            fn walk(
                costs: &CostSpec,
                t: f64,
                start: usize,
                current: usize,
                used: &mut Vec<usize>,
                total: f64,
                gamma: f64,
                q: usize,
            ) {
                for next in 0..q {
                    if next == current {
                        continue;
                    }
                    let c = total + costs.at(current, next, t);
                    if next == start {
                        assert!(
                            c >= 2.0 * gamma - 1e-12,
                            "cycle through {used:?} costs {c} < 2 gamma"
                        );
                        continue;
                    }
                    if used.contains(&next) {
                        continue;
                    }
                    used.push(next);
                    walk(costs, t, start, next, used, c, gamma, q);
                    used.pop();
                }
            }

            for start in 0..q {
                let mut used = vec![start];
                walk(&costs, t, start, start, &mut used, 0.0, gamma, q);
            }
        }
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let good = r#"{
            "modes": ["off", "on"],
            "payoffs": [
                {"family": "constant", "c": 0.0},
                {"family": "spread", "strike": 1.0}
            ],
            "costs": {"base": [[0.0, 0.05], [0.05, 0.0]], "rate": 0.0, "gamma": 0.01},
            "diffusion": {"family": "gbm", "mu": 0.02, "sigma": 0.3, "x0": 1.0},
            "grid": {"T": 1.0, "N": 200},
            "initial_mode": 1
        }"#;
        let m = SwitchingModel::from_json(good).unwrap();
        assert!(validate_model(&m).is_valid());
        assert_eq!(m.q(), 2);
        assert_eq!(m.initial_mode, 0);
        assert_eq!(m.grid.steps(), 200);

        let unknown_key = good.replace("\"initial_mode\": 1", "\"initial_mode\": 1, \"extra\": 2");
        assert!(matches!(
            SwitchingModel::from_json(&unknown_key),
            Err(Error::Config(_))
        ));

        let bad_param = good.replace(
            "{\"family\": \"constant\", \"c\": 0.0}",
            "{\"family\": \"constant\", \"c\": 0.0, \"strike\": 3.0}",
        );
        assert!(matches!(
            SwitchingModel::from_json(&bad_param),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn time_grid_endpoints() {
        let g = TimeGrid::new(0.7, 7);
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(7), 0.7);
        assert!((g.dt() - 0.1).abs() < 1e-16);
    }
}
