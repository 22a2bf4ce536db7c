//! Acceptance suite: one pass/fail line per criterion, nonzero exit when
//! any hard criterion fails. Run as `cargo test --test acceptance` (or
//! `cargo test --workspace`); the binary is harness-free so the lines
//! always print.

mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use multiswitch::lattice::{
    build_binomial_chain, enumerate_strategies, payoff_envelope_bound, solve_fixed_point,
    solve_n_switch,
};
use multiswitch::lsmc::{solve_lsmc_fixed_point, RegressionBasis};
use multiswitch::mc::simulate_euler;
use multiswitch::model::SwitchingModel;
use multiswitch::pde::{solve_qvi_fd, SpaceGrid};
use multiswitch::penalty::{penalty_sweep, PenaltySchedule};
use multiswitch::strategy::{execute_on_chain, execute_on_paths, extract_rule, optimality_gap};

fn bench_model() -> SwitchingModel {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../bench.json");
    let text = std::fs::read_to_string(path).expect("bench.json at the workspace root");
    let model = SwitchingModel::from_json(&text).expect("benchmark config parses");
    assert!(multiswitch::validate_model(&model).is_valid());
    model
}

/// Deterministic 2-step hand instance: psi = (1, 3), costs 1, T = 2,
/// N = 2. Exhaustive enumeration gives Y1_0 = 5 (switch at once) and
/// Y2_0 = 6.
fn criterion_1() {
    let model = support::hand_instance(1.0);
    let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
    let lat = solve_fixed_point(&chain, &model).unwrap();
    assert!(
        (lat.value(0, 0, 0) - 5.0).abs() <= 1e-12,
        "Y1_0 = {}, expected 5",
        lat.value(0, 0, 0)
    );
    assert!(
        (lat.value(1, 0, 0) - 6.0).abs() <= 1e-12,
        "Y2_0 = {}, expected 6",
        lat.value(1, 0, 0)
    );
    let rule = extract_rule(&lat, &chain, &model).unwrap();
    assert_eq!(
        rule.action(0, 0, 0),
        multiswitch::strategy::Action::SwitchTo(1),
        "mode 1 must switch at m = 0"
    );
    let report = execute_on_chain(&rule, &chain, &model, 0).unwrap();
    assert!(
        (report.mean_profit - 5.0).abs() <= 1e-12,
        "executed profit {}",
        report.mean_profit
    );
}

/// 50 random instances: the brute-force strategy enumeration agrees
/// with the n-switch solver at the root for n in 0..=3.
fn criterion_2() {
    for inst in 0..50u64 {
        let model = support::random_instance(1000 + inst);
        let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
        for n in 0..=3usize {
            let dp = solve_n_switch(&chain, &model, n)
                .unwrap()
                .value(model.initial_mode, 0, 0);
            let oracle = enumerate_strategies(&chain, &model, model.initial_mode, n).unwrap();
            assert!(
                (dp - oracle).abs() <= 1e-10,
                "instance {inst}, n = {n}: dp {dp} vs enumeration {oracle}"
            );
        }
    }
}

/// Monotone-scheme suite on the same instances: the n-switch ladder is
/// entrywise nondecreasing, dominated by the fixed point and by the
/// payoff-envelope bound, and saturates exactly at n = q N.
#[allow(clippy::needless_range_loop)]
fn criterion_3() {
    for inst in 0..50u64 {
        let model = support::random_instance(1000 + inst);
        let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
        let fixed = solve_fixed_point(&chain, &model).unwrap();
        let bound = payoff_envelope_bound(&chain, &model).unwrap();
        let q = model.q();
        let n = model.grid.steps();

        let mut prev = solve_n_switch(&chain, &model, 0).unwrap();
        for budget in 1..=(q * n + 1) {
            let cur = solve_n_switch(&chain, &model, budget).unwrap();
            assert!(
                prev.entrywise_le(&cur, 1e-9),
                "instance {inst}: ladder not monotone at n = {budget}"
            );
            assert!(
                cur.entrywise_le(&fixed, 1e-9),
                "instance {inst}: ladder exceeds the fixed point at n = {budget}"
            );
            if budget >= q * n {
                assert!(
                    cur.identical_values(&fixed),
                    "instance {inst}: ladder not saturated at n = {budget} >= qN = {}",
                    q * n
                );
            }
            prev = cur;
        }
        for m in 0..=n {
            for l in 0..=m {
                for i in 0..q {
                    assert!(
                        fixed.value(i, m, l) <= bound[m][l] + 1e-9,
                        "instance {inst}: value exceeds the envelope bound at ({i},{m},{l})"
                    );
                }
            }
        }
    }
}

/// Penalization suite on the benchmark chain: entrywise monotone in the
/// penalty, dominated by the fixed point, sup-gap at 256 below 1e-2;
/// the fitted 1/penalty rate is diagnostic only.
fn criterion_4() {
    let model = bench_model();
    let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
    let report = penalty_sweep(&chain, &model, &PenaltySchedule::standard()).unwrap();
    assert!(report.monotone_in_penalty, "values not monotone in penalty");
    assert!(
        report.dominated_by_fixed_point,
        "penalized values exceed the fixed point"
    );
    for w in report.rows.windows(2) {
        assert!(
            w[1].sup_gap <= w[0].sup_gap + 1e-9,
            "sup gaps not nonincreasing: {} then {}",
            w[0].sup_gap,
            w[1].sup_gap
        );
    }
    let last = report.rows.last().unwrap();
    assert!(last.converged, "picard iteration did not converge at 256");
    assert!(
        last.sup_gap <= 1e-2,
        "sup gap at penalty 256 is {}, needs <= 1e-2",
        last.sup_gap
    );
    match report.final_slope() {
        Some(s) if (-1.3..=-0.7).contains(&s) => {}
        Some(s) => println!(
            "criterion 4 warning: fitted gap-vs-penalty slope {s:.3} outside [-1.3, -0.7] (diagnostic only)"
        ),
        None => println!("criterion 4 warning: no slope could be fitted (diagnostic only)"),
    }
}

/// Cross-method consistency on the benchmark at N = 200, J = 400,
/// M = 1e5, degree 3.
fn criterion_5() {
    let model = bench_model();
    assert_eq!(model.grid.steps(), 200);
    let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
    let lat = solve_fixed_point(&chain, &model).unwrap();
    let i0 = model.initial_mode;
    let y_lat = lat.value(i0, 0, 0);

    let space = SpaceGrid::default_for(&model, 400).unwrap();
    let pde = solve_qvi_fd(&model, &space, 1.0).unwrap();
    let y_pde = pde.value_at(i0, 0, model.diffusion.x0()[0]);
    assert!(
        (y_lat - y_pde).abs() <= 2e-2 * y_lat.abs(),
        "|lattice - pde| = {} > 2e-2 relative (lattice {y_lat}, pde {y_pde})",
        (y_lat - y_pde).abs()
    );

    let schedule = PenaltySchedule::standard();
    let pen = multiswitch::penalty::solve_penalized(
        &chain,
        &model,
        *schedule.penalties.last().unwrap(),
        schedule.kmax,
        schedule.eps,
    )
    .unwrap();
    let y_pen = pen.value(i0, 0, 0);
    assert!(
        (y_lat - y_pen).abs() <= 1e-2,
        "|lattice - penalized(256)| = {} > 1e-2",
        (y_lat - y_pen).abs()
    );

    let batch = simulate_euler(&model.diffusion, model.grid, 100_000, 1);
    let field = solve_lsmc_fixed_point(&batch, &model, &RegressionBasis::polynomial(3)).unwrap();
    let y_mc = field.mean0(i0);
    let se = field.se0(i0);
    assert!(
        (y_lat - y_mc).abs() <= 3.0 * se,
        "|lattice - lsmc| = {:.3e} > 3 se = {:.3e} (lattice {y_lat:.6}, lsmc {y_mc:.6}; \
         systematic cubic-basis bias of the value-iteration scheme, not sampling error — \
         see the decisions ledger)",
        (y_lat - y_mc).abs(),
        3.0 * se
    );
}

/// Strategy optimality loop on the benchmark: exact replay reproduces
/// the root value, fresh-seed Monte Carlo replay sits within 3 standard
/// errors, and no random admissible rule beats the fixed point.
fn criterion_6() {
    let model = bench_model();
    let chain = build_binomial_chain(&model.diffusion, model.grid).unwrap();
    let lat = solve_fixed_point(&chain, &model).unwrap();
    let y0 = lat.value(model.initial_mode, 0, 0);
    let rule = extract_rule(&lat, &chain, &model).unwrap();

    let exact = execute_on_chain(&rule, &chain, &model, model.initial_mode).unwrap();
    let exact_gap = optimality_gap(&exact, y0);
    assert!(
        exact_gap.gap.abs() <= 1e-9,
        "chain replay gap {} exceeds 1e-9",
        exact_gap.gap
    );

    let fresh = simulate_euler(&model.diffusion, model.grid, 20_000, 777);
    let sampled = execute_on_paths(&rule, &fresh, &model, model.initial_mode).unwrap();
    let z = optimality_gap(&sampled, y0)
        .z
        .expect("sampled execution has a z-score");
    assert!(z.abs() <= 3.0, "fresh-seed execution z = {z}");

    for r in 0..200u64 {
        let random = support::random_rule(&model, &chain, 50_000 + r);
        let report = execute_on_chain(&random, &chain, &model, model.initial_mode).unwrap();
        assert!(
            report.mean_profit <= y0 + 1e-9,
            "random rule {r} scores {} above the fixed point {y0}",
            report.mean_profit
        );
    }
}

/// Path-engine fidelity: GBM terminal moments against closed form at
/// M = 1e5, and bit-identical batches across worker counts.
fn criterion_7() {
    let model = bench_model();
    let (mu, sigma, x0, horizon) = (0.02_f64, 0.3_f64, 1.0_f64, 1.0_f64);
    let m_paths = 100_000;
    let batch = simulate_euler(&model.diffusion, model.grid, m_paths, 42);
    let n = model.grid.steps();

    let xs: Vec<f64> = (0..m_paths).map(|p| batch.value(p, n, 0)).collect();
    let mean = xs.iter().sum::<f64>() / m_paths as f64;
    let mean_sq = xs.iter().map(|x| x * x).sum::<f64>() / m_paths as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m_paths - 1) as f64).sqrt();
    let sd_sq =
        (xs.iter().map(|x| (x * x - mean_sq).powi(2)).sum::<f64>() / (m_paths - 1) as f64).sqrt();
    let exact_mean = x0 * (mu * horizon).exp();
    let exact_m2 = x0 * x0 * ((2.0 * mu + sigma * sigma) * horizon).exp();
    let se_mean = sd / (m_paths as f64).sqrt();
    let se_m2 = sd_sq / (m_paths as f64).sqrt();
    assert!(
        (mean - exact_mean).abs() <= 4.0 * se_mean,
        "terminal mean {mean} vs {exact_mean} (4 se = {})",
        4.0 * se_mean
    );
    assert!(
        (mean_sq - exact_m2).abs() <= 4.0 * se_m2,
        "terminal second moment {mean_sq} vs {exact_m2} (4 se = {})",
        4.0 * se_m2
    );

    // worker-count independence
    let small = model.with_steps(50);
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| simulate_euler(&small.diffusion, small.grid, 20_000, 7));
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| simulate_euler(&small.diffusion, small.grid, 20_000, 7));
    assert_eq!(one.raw(), four.raw(), "batches differ across worker counts");
}

fn main() {
    let criteria: Vec<(&str, f64, fn())> = vec![
        ("hand-instance exactness", 1.0, criterion_1),
        ("oracle equivalence", 30.0, criterion_2),
        ("monotone-scheme suite", f64::INFINITY, criterion_3),
        ("penalization suite", 60.0, criterion_4),
        ("cross-method consistency", 120.0, criterion_5),
        ("strategy optimality loop", 60.0, criterion_6),
        ("path-engine fidelity", 30.0, criterion_7),
    ];

    let mut failures = 0;
    for (idx, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) if elapsed <= *budget => {
                println!("criterion {} ({name}): pass ({elapsed:.1}s)", idx + 1);
            }
            Ok(()) => {
                failures += 1;
                println!(
                    "criterion {} ({name}): FAIL — passed checks but took {elapsed:.1}s > {budget:.0}s budget",
                    idx + 1
                );
            }
            Err(panic) => {
                failures += 1;
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".to_string());
                println!(
                    "criterion {} ({name}): FAIL — {msg} ({elapsed:.1}s)",
                    idx + 1
                );
            }
        }
    }

    if failures > 0 {
        println!(
            "acceptance: {failures} of {} criteria failed",
            criteria.len()
        );
        std::process::exit(1);
    }
    println!("acceptance: all {} criteria passed", criteria.len());
}
