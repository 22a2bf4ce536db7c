//! Decision rules and their execution.
//!
//! A value field induces a rule: switch out of mode `i` exactly where the
//! best switch obstacle beats the continuation (strictly, under a scaled
//! tolerance — ties continue, so grid chatter cannot trigger spurious
//! switches), and the switch target is the argmax of `-l_ij + Y_j` with
//! ties to the smallest mode index.
//!
//! Executing the rule replays the switching strategy it encodes: within a
//! time step the rule is applied repeatedly (at most `q - 1` times) until
//! it says continue, a switch resolves before the step's payoff accrues
//! in the new mode, and the step payoff is `psi dt`. On a chain the
//! expected profit is computed exactly by forward probability
//! propagation; on simulated paths by sample mean. The exact execution of
//! the rule extracted from the fixed-point lattice reproduces the root
//! value — the verification identity connecting the value system to an
//! actual strategy.

use crate::coupling::best_switch;
use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{ChainModel, ValueLattice};
use crate::mc::PathBatch;
use crate::model::{SwitchingModel, TimeGrid};
use crate::pde::GridValueField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Continue,
    SwitchTo(usize),
}

/// Where a rule's node indices live.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleDomain {
    /// Per-time node coordinates of a chain (level `m` has `m + 1` nodes).
    ChainNodes(Vec<Vec<f64>>),
    /// Static space-grid coordinates.
    SpaceNodes(Vec<f64>),
}

/// Switch decisions per `(mode, time index, node)`. No decisions exist at
/// `m = N`: no switch happens at the horizon.
#[derive(Debug, Clone)]
pub struct DecisionRule {
    q: usize,
    grid: TimeGrid,
    domain: RuleDomain,
    /// `actions[m]` has `nodes_m * q` entries, index `node * q + mode`.
    actions: Vec<Vec<Action>>,
    source: String,
}

impl DecisionRule {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn domain(&self) -> &RuleDomain {
        &self.domain
    }

    #[inline]
    pub fn action(&self, m: usize, node: usize, mode: usize) -> Action {
        self.actions[m][node * self.q + mode]
    }

    /// Mutable access for constructing perturbed or synthetic rules.
    pub fn set_action(&mut self, m: usize, node: usize, mode: usize, action: Action) {
        if let Action::SwitchTo(j) = action {
            assert!(
                j != mode && j < self.q,
                "switch target must be another mode"
            );
        }
        self.actions[m][node * self.q + mode] = action;
    }

    /// Build an explicit rule from an action table (testing and synthetic
    /// strategies).
    pub fn from_actions(
        q: usize,
        grid: TimeGrid,
        domain: RuleDomain,
        actions: Vec<Vec<Action>>,
        source: impl Into<String>,
    ) -> Self {
        DecisionRule {
            q,
            grid,
            domain,
            actions,
            source: source.into(),
        }
    }

    fn nodes_at(&self, m: usize) -> &[f64] {
        match &self.domain {
            RuleDomain::ChainNodes(levels) => &levels[m],
            RuleDomain::SpaceNodes(xs) => xs,
        }
    }

    /// Nearest rule node to state `x` at time index `m`; the flag marks a
    /// state outside the rule's domain (clamped to the boundary node).
    pub fn lookup(&self, m: usize, x: f64) -> (usize, bool) {
        let nodes = self.nodes_at(m);
        if x < nodes[0] {
            return (0, true);
        }
        if x > *nodes.last().unwrap() {
            return (nodes.len() - 1, true);
        }
        let idx = nodes.partition_point(|&v| v < x);
        if idx == 0 {
            return (0, false);
        }
        if idx >= nodes.len() {
            return (nodes.len() - 1, false);
        }
        // nearest of the two bracketing nodes, ties to the lower one
        if x - nodes[idx - 1] <= nodes[idx] - x {
            (idx - 1, false)
        } else {
            (idx, false)
        }
    }
}

fn switch_tolerance(continuation: f64, obstacle: f64) -> f64 {
    1e-9 * continuation.abs().max(obstacle.abs()).max(1.0)
}

/// Read the switching rule off a chain lattice: switch where the
/// obstacle beats the continuation by more than the scaled tolerance.
pub fn extract_rule(
    field: &ValueLattice,
    chain: &ChainModel,
    model: &SwitchingModel,
) -> Result<DecisionRule> {
    if field.grid() != model.grid || chain.grid() != model.grid {
        return Err(Error::GridMismatch {
            left: field.grid().to_string(),
            right: model.grid.to_string(),
        });
    }
    let q = model.q();
    if field.q() != q {
        return Err(Error::Invalid(format!(
            "field has {} modes, model has {q}",
            field.q()
        )));
    }
    let n = model.grid.steps();
    if (0..=n).any(|l| field.node_values(n, l).iter().any(|&v| v != 0.0)) {
        return Err(Error::Invalid(
            "field violates the terminal condition".into(),
        ));
    }

    let mut actions = Vec::with_capacity(n);
    let mut levels = Vec::with_capacity(n);
    for m in 0..n {
        let costs = model.costs.matrix_at(model.grid.t(m));
        let mut level = Vec::with_capacity((m + 1) * q);
        for l in 0..=m {
            let here = field.node_values(m, l);
            for i in 0..q {
                let c = field.continuation(i, m, l);
                let (target, obstacle) = best_switch(i, here, &costs);
                level.push(if obstacle >= c + switch_tolerance(c, obstacle) {
                    Action::SwitchTo(target)
                } else {
                    Action::Continue
                });
            }
        }
        actions.push(level);
        levels.push(chain.level(m).to_vec());
    }
    Ok(DecisionRule {
        q,
        grid: model.grid,
        domain: RuleDomain::ChainNodes(levels),
        actions,
        source: format!("{:?}", field.scheme()),
    })
}

/// Budget-indexed rules for an n-switch ladder: `rules[b]` decides while
/// `b` switches remain. A level's switch region compares its own
/// continuation against the obstacle built from the *previous* level —
/// the comparison that defined the level in the first place. `rules[0]`
/// continues everywhere.
pub fn extract_budgeted_rules(
    ladder: &[ValueLattice],
    chain: &ChainModel,
    model: &SwitchingModel,
) -> Result<Vec<DecisionRule>> {
    if ladder.is_empty() {
        return Err(Error::Invalid("empty n-switch ladder".into()));
    }
    let q = model.q();
    let n = model.grid.steps();
    let levels: Vec<Vec<f64>> = (0..n).map(|m| chain.level(m).to_vec()).collect();

    let mut rules = Vec::with_capacity(ladder.len());
    rules.push(DecisionRule {
        q,
        grid: model.grid,
        domain: RuleDomain::ChainNodes(levels.clone()),
        actions: (0..n)
            .map(|m| vec![Action::Continue; (m + 1) * q])
            .collect(),
        source: "n-switch budget 0".into(),
    });

    for b in 1..ladder.len() {
        let field = &ladder[b];
        let prev = &ladder[b - 1];
        if field.grid() != model.grid || prev.grid() != model.grid {
            return Err(Error::GridMismatch {
                left: field.grid().to_string(),
                right: model.grid.to_string(),
            });
        }
        let mut actions = Vec::with_capacity(n);
        for m in 0..n {
            let costs = model.costs.matrix_at(model.grid.t(m));
            let mut level = Vec::with_capacity((m + 1) * q);
            for l in 0..=m {
                let prev_here = prev.node_values(m, l);
                for i in 0..q {
                    let c = field.continuation(i, m, l);
                    let (target, obstacle) = best_switch(i, prev_here, &costs);
                    level.push(if obstacle >= c + switch_tolerance(c, obstacle) {
                        Action::SwitchTo(target)
                    } else {
                        Action::Continue
                    });
                }
            }
            actions.push(level);
        }
        rules.push(DecisionRule {
            q,
            grid: model.grid,
            domain: RuleDomain::ChainNodes(levels.clone()),
            actions,
            source: format!("n-switch budget {b}"),
        });
    }
    Ok(rules)
}

/// Read the switching rule off a PDE grid field.
pub fn extract_rule_grid(field: &GridValueField, model: &SwitchingModel) -> Result<DecisionRule> {
    if field.grid() != model.grid {
        return Err(Error::GridMismatch {
            left: field.grid().to_string(),
            right: model.grid.to_string(),
        });
    }
    let q = model.q();
    if field.q() != q {
        return Err(Error::Invalid(format!(
            "field has {} modes, model has {q}",
            field.q()
        )));
    }
    let n = model.grid.steps();
    let nn = field.space().len();
    if (0..q).any(|i| (0..nn).any(|j| field.value(i, n, j) != 0.0)) {
        return Err(Error::Invalid(
            "field violates the terminal condition".into(),
        ));
    }

    let mut actions = Vec::with_capacity(n);
    let mut here = vec![0.0; q];
    for m in 0..n {
        let costs = model.costs.matrix_at(model.grid.t(m));
        let mut level = Vec::with_capacity(nn * q);
        for j in 0..nn {
            for (i, h) in here.iter_mut().enumerate() {
                *h = field.value(i, m, j);
            }
            for i in 0..q {
                let c = field.continuation(i, m, j);
                let (target, obstacle) = best_switch(i, &here, &costs);
                level.push(if obstacle >= c + switch_tolerance(c, obstacle) {
                    Action::SwitchTo(target)
                } else {
                    Action::Continue
                });
            }
        }
        actions.push(level);
    }
    Ok(DecisionRule {
        q,
        grid: model.grid,
        domain: RuleDomain::SpaceNodes(field.space().nodes()),
        actions,
        source: "qvi-fd".into(),
    })
}

/// One switch along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub m: usize,
    pub from: usize,
    pub to: usize,
    pub cost: f64,
}

/// Realized outcome of one executed path.
#[derive(Debug, Clone)]
pub struct PathOutcome {
    pub profit: f64,
    pub switches: Vec<SwitchEvent>,
    pub clamped: bool,
}

/// Aggregate outcome of executing a rule.
#[derive(Debug, Clone)]
pub struct ExecutionReport {
    pub mean_profit: f64,
    /// Zero for chain-exact execution.
    pub std_error: f64,
    /// Probability (chain) or frequency (paths) of each switch count.
    pub switch_histogram: Vec<f64>,
    /// True when the expectation was computed exactly on a chain.
    pub exact: bool,
    /// Paths (or chain states) that fell outside the rule domain.
    pub clamped: usize,
    /// Per-path outcomes; `None` for chain-exact execution.
    pub path_outcomes: Option<Vec<PathOutcome>>,
}

impl ExecutionReport {
    /// CSV `path,m,from,to,cost` of all switches (path execution only;
    /// modes 1-based).
    pub fn switch_log_csv(&self) -> String {
        let mut out = String::from("path,m,from,to,cost\n");
        if let Some(paths) = &self.path_outcomes {
            for (p, outcome) in paths.iter().enumerate() {
                for s in &outcome.switches {
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        p,
                        s.m,
                        s.from + 1,
                        s.to + 1,
                        s.cost
                    ));
                }
            }
        }
        out
    }

    /// Aggregate JSON `{mean, stderr, Y0, gap, z, switch_histogram}`.
    pub fn aggregate_json(&self, y0: f64) -> String {
        let gap = optimality_gap(self, y0);
        serde_json::json!({
            "mean": self.mean_profit,
            "stderr": self.std_error,
            "Y0": y0,
            "gap": gap.gap,
            "z": gap.z,
            "switch_histogram": self.switch_histogram,
        })
        .to_string()
    }
}

/// `gap = Y0 - mean`; `z = gap / SE` for sampled executions, `None` when
/// the execution was exact (the gap itself is then exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalityGap {
    pub gap: f64,
    pub z: Option<f64>,
}

pub fn optimality_gap(report: &ExecutionReport, y0: f64) -> OptimalityGap {
    let gap = y0 - report.mean_profit;
    let z = if !report.exact && report.std_error > 0.0 {
        Some(gap / report.std_error)
    } else {
        None
    };
    OptimalityGap { gap, z }
}

/// Exact expected profit of a rule on a chain by forward propagation of
/// the joint (node, mode, switch-count) distribution.
pub fn execute_on_chain(
    rule: &DecisionRule,
    chain: &ChainModel,
    model: &SwitchingModel,
    initial_mode: usize,
) -> Result<ExecutionReport> {
    execute_on_chain_capped(rule, chain, model, initial_mode, None)
}

/// As [`execute_on_chain`], with an optional hard cap on the number of
/// switches along any scenario.
pub fn execute_on_chain_capped(
    rule: &DecisionRule,
    chain: &ChainModel,
    model: &SwitchingModel,
    initial_mode: usize,
    switch_cap: Option<usize>,
) -> Result<ExecutionReport> {
    if chain.grid() != model.grid || rule.grid != model.grid {
        return Err(Error::GridMismatch {
            left: chain.grid().to_string(),
            right: model.grid.to_string(),
        });
    }
    let q = model.q();
    if initial_mode >= q {
        return Err(Error::ModeOutOfRange {
            mode: initial_mode,
            q,
        });
    }
    let n = model.grid.steps();
    let dt = model.grid.dt();
    let cmax = switch_cap.unwrap_or((q - 1) * n);

    // when the rule was extracted on this very chain, node index == l
    let direct = match &rule.domain {
        RuleDomain::ChainNodes(levels) => {
            levels.len() == n && (0..n).all(|m| levels[m] == chain.level(m))
        }
        RuleDomain::SpaceNodes(_) => false,
    };

    let idx = |l: usize, i: usize, c: usize| (l * q + i) * (cmax + 1) + c;
    let mut dist = vec![0.0; q * (cmax + 1)];
    dist[idx(0, initial_mode, 0)] = 1.0;
    let mut expected = 0.0;
    let mut clamped_any = false;

    for m in 0..n {
        let t = model.grid.t(m);
        let mut next = vec![0.0; (m + 2) * q * (cmax + 1)];
        for l in 0..=m {
            let x = chain.node(m, l);
            let node = if direct {
                l
            } else {
                let (node, cl) = rule.lookup(m, x);
                clamped_any |= cl;
                node
            };
            let p = chain.up(m, l);
            for i in 0..q {
                for c in 0..=cmax {
                    let w = dist[idx(l, i, c)];
                    if w == 0.0 {
                        continue;
                    }
                    let mut mode = i;
                    let mut count = c;
                    let mut applications = 0;
                    while applications < q - 1 && count < cmax {
                        match rule.action(m, node, mode) {
                            Action::SwitchTo(j) => {
                                expected -= w * model.costs.at(mode, j, t);
                                mode = j;
                                count += 1;
                                applications += 1;
                            }
                            Action::Continue => break,
                        }
                    }
                    expected += w * model.payoffs.mode(mode).eval(t, &[x]) * dt;
                    next[idx(l, mode, count)] += (1.0 - p) * w;
                    next[idx(l + 1, mode, count)] += p * w;
                }
            }
        }
        dist = next;
    }

    let mut histogram = vec![0.0; cmax + 1];
    for l in 0..=n {
        for i in 0..q {
            for (c, h) in histogram.iter_mut().enumerate() {
                *h += dist[idx(l, i, c)];
            }
        }
    }
    while histogram.len() > 1 && *histogram.last().unwrap() == 0.0 {
        histogram.pop();
    }

    Ok(ExecutionReport {
        mean_profit: expected,
        std_error: 0.0,
        switch_histogram: histogram,
        exact: true,
        clamped: usize::from(clamped_any),
        path_outcomes: None,
    })
}

/// Exact expected profit of a budgeted rule ladder on a chain:
/// `rules[b]` is the rule consulted while `b` switches remain, so the
/// initial budget is `rules.len() - 1` and `rules[0]` is never asked to
/// switch. This is the operational form of a bounded-switch strategy,
/// whose decision regions depend on the remaining budget — replaying a
/// single rule under a hard cap is not the same strategy.
pub fn execute_ladder_on_chain(
    rules: &[DecisionRule],
    chain: &ChainModel,
    model: &SwitchingModel,
    initial_mode: usize,
) -> Result<ExecutionReport> {
    if rules.is_empty() {
        return Err(Error::Invalid("empty rule ladder".into()));
    }
    for rule in rules {
        if rule.grid != model.grid {
            return Err(Error::GridMismatch {
                left: rule.grid.to_string(),
                right: model.grid.to_string(),
            });
        }
    }
    if chain.grid() != model.grid {
        return Err(Error::GridMismatch {
            left: chain.grid().to_string(),
            right: model.grid.to_string(),
        });
    }
    let q = model.q();
    if initial_mode >= q {
        return Err(Error::ModeOutOfRange {
            mode: initial_mode,
            q,
        });
    }
    let n = model.grid.steps();
    let budget = rules.len() - 1;

    let idx = |l: usize, i: usize, b: usize| (l * q + i) * (budget + 1) + b;
    let mut dist = vec![0.0; q * (budget + 1)];
    dist[idx(0, initial_mode, budget)] = 1.0;
    let mut expected = 0.0;
    let mut clamped_any = false;

    for m in 0..n {
        let t = model.grid.t(m);
        let mut next = vec![0.0; (m + 2) * q * (budget + 1)];
        for l in 0..=m {
            let x = chain.node(m, l);
            let p = chain.up(m, l);
            for i in 0..q {
                for b in 0..=budget {
                    let w = dist[idx(l, i, b)];
                    if w == 0.0 {
                        continue;
                    }
                    let mut mode = i;
                    let mut left = b;
                    let mut applications = 0;
                    while left > 0 && applications < q - 1 {
                        let rule = &rules[left];
                        let (node, cl) = rule.lookup(m, x);
                        clamped_any |= cl;
                        match rule.action(m, node, mode) {
                            Action::SwitchTo(j) => {
                                expected -= w * model.costs.at(mode, j, t);
                                mode = j;
                                left -= 1;
                                applications += 1;
                            }
                            Action::Continue => break,
                        }
                    }
                    expected += w * model.payoffs.mode(mode).eval(t, &[x]) * dt_of(model);
                    next[idx(l, mode, left)] += (1.0 - p) * w;
                    next[idx(l + 1, mode, left)] += p * w;
                }
            }
        }
        dist = next;
    }

    let mut histogram = vec![0.0; budget + 1];
    for l in 0..=n {
        for i in 0..q {
            for b in 0..=budget {
                // switches used = budget - b
                histogram[budget - b] += dist[idx(l, i, b)];
            }
        }
    }
    while histogram.len() > 1 && *histogram.last().unwrap() == 0.0 {
        histogram.pop();
    }

    Ok(ExecutionReport {
        mean_profit: expected,
        std_error: 0.0,
        switch_histogram: histogram,
        exact: true,
        clamped: usize::from(clamped_any),
        path_outcomes: None,
    })
}

#[inline]
fn dt_of(model: &SwitchingModel) -> f64 {
    model.grid.dt()
}

/// Sampled profit of a rule on simulated paths (1-D rules only; states
/// map to rule nodes by nearest-node lookup, clamped at the domain
/// boundary).
pub fn execute_on_paths(
    rule: &DecisionRule,
    batch: &PathBatch,
    model: &SwitchingModel,
    initial_mode: usize,
) -> Result<ExecutionReport> {
    if batch.grid() != model.grid || rule.grid != model.grid {
        return Err(Error::GridMismatch {
            left: batch.grid().to_string(),
            right: model.grid.to_string(),
        });
    }
    if batch.dim() != 1 {
        return Err(Error::NotOneDimensional {
            op: "execute_on_paths",
            dim: batch.dim(),
        });
    }
    let q = model.q();
    if initial_mode >= q {
        return Err(Error::ModeOutOfRange {
            mode: initial_mode,
            q,
        });
    }
    let n = model.grid.steps();
    let dt = model.grid.dt();
    let m_paths = batch.paths();

    let outcomes: Vec<PathOutcome> = exec::map_collect(m_paths, |p| {
        let mut mode = initial_mode;
        let mut profit = 0.0;
        let mut switches = Vec::new();
        let mut clamped = false;
        for m in 0..n {
            let t = model.grid.t(m);
            let x = batch.value(p, m, 0);
            let (node, cl) = rule.lookup(m, x);
            clamped |= cl;
            let mut applications = 0;
            while applications < q - 1 {
                match rule.action(m, node, mode) {
                    Action::SwitchTo(j) => {
                        let cost = model.costs.at(mode, j, t);
                        profit -= cost;
                        switches.push(SwitchEvent {
                            m,
                            from: mode,
                            to: j,
                            cost,
                        });
                        mode = j;
                        applications += 1;
                    }
                    Action::Continue => break,
                }
            }
            profit += model.payoffs.mode(mode).eval(t, &[x]) * dt;
        }
        PathOutcome {
            profit,
            switches,
            clamped,
        }
    });

    let mean = outcomes.iter().map(|o| o.profit).sum::<f64>() / m_paths as f64;
    let std_error = if m_paths > 1 {
        let var = outcomes
            .iter()
            .map(|o| (o.profit - mean).powi(2))
            .sum::<f64>()
            / (m_paths - 1) as f64;
        (var / m_paths as f64).sqrt()
    } else {
        0.0
    };
    let max_count = outcomes.iter().map(|o| o.switches.len()).max().unwrap_or(0);
    let mut histogram = vec![0.0; max_count + 1];
    for o in &outcomes {
        histogram[o.switches.len()] += 1.0 / m_paths as f64;
    }
    let clamped = outcomes.iter().filter(|o| o.clamped).count();

    Ok(ExecutionReport {
        mean_profit: mean,
        std_error,
        switch_histogram: histogram,
        exact: false,
        clamped,
        path_outcomes: Some(outcomes),
    })
}
