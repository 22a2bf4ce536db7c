//! Command-line front end: load a model config, dispatch a solver, write
//! CSV/JSON artifacts plus a run manifest into the output directory.
//!
//! Exit codes: 0 success, 1 consistency failure or I/O trouble,
//! 2 config/validation failure, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use multiswitch::lattice::{
    build_binomial_chain, solve_fixed_point, solve_n_switch, ChainModel, ValueLattice,
};
use multiswitch::lsmc::{solve_lsmc_fixed_point, RegressionBasis};
use multiswitch::mc::simulate_euler_with;
use multiswitch::pde::{solve_qvi_fd, SpaceGrid};
use multiswitch::penalty::{penalty_sweep, solve_penalized, PenaltySchedule};
use multiswitch::{validate_model, Error, SwitchingModel};

#[derive(Parser)]
#[command(
    name = "multiswitch",
    version,
    about = "Finite-horizon optimal multiple-switching solver suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one model with one method and write its value artifacts
    Solve {
        method: Method,
        #[command(flatten)]
        opts: SolveOpts,
    },
    /// Run lattice, penalized, PDE and LSMC and emit the pairwise
    /// consistency matrix of the initial-mode values
    Crosscheck {
        #[command(flatten)]
        opts: SolveOpts,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Method {
    Lattice,
    Nswitch,
    Penalized,
    Lsmc,
    Pde,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Lattice => "lattice",
            Method::Nswitch => "nswitch",
            Method::Penalized => "penalized",
            Method::Lsmc => "lsmc",
            Method::Pde => "pde",
        }
    }
}

#[derive(Args)]
struct SolveOpts {
    /// Model config JSON
    #[arg(long)]
    model: PathBuf,

    /// Override the model's time-step count N
    #[arg(long = "N")]
    n_steps: Option<usize>,

    /// Space intervals for the PDE grid
    #[arg(long = "J", default_value_t = 400)]
    space_intervals: usize,

    /// Monte Carlo path count
    #[arg(long = "M", default_value_t = 100_000)]
    paths: usize,

    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Polynomial regression degree
    #[arg(long, default_value_t = 3)]
    degree: usize,

    /// Penalty schedule, comma separated and increasing
    #[arg(long, default_value = "1,2,4,8,16,32,64,128,256")]
    penalties: String,

    /// Theta parameter of the PDE scheme, in [1/2, 1]
    #[arg(long, default_value_t = 1.0)]
    theta: f64,

    /// Switch budget for `solve nswitch` (default: q * N, the saturated
    /// budget)
    #[arg(long)]
    n: Option<usize>,

    /// Antithetic path pairing for the Monte Carlo engine
    #[arg(long, default_value_t = false)]
    antithetic: bool,

    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Failure with its process exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn validation(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: msg.into(),
        }
    }

    fn numerical(msg: impl Into<String>) -> Self {
        Failure {
            code: 3,
            message: msg.into(),
        }
    }

    fn io(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: 1,
            message: msg.to_string(),
        }
    }

    fn consistency(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::numerical(e.to_string()),
            _ => Failure::validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::io(e)
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { method, opts } => run_solve(method, &opts),
        Command::Crosscheck { opts } => run_crosscheck(&opts),
    };
    if let Err(failure) = result {
        eprintln!("multiswitch: {}", failure.message);
        std::process::exit(failure.code);
    }
}

fn load_model(opts: &SolveOpts) -> Result<SwitchingModel, Failure> {
    let text = fs::read_to_string(&opts.model)
        .map_err(|e| Failure::validation(format!("model {}: {e}", opts.model.display())))?;
    let mut model = SwitchingModel::from_json(&text)
        .map_err(|e| Failure::validation(format!("model {}: {e}", opts.model.display())))?;
    if let Some(n) = opts.n_steps {
        model = model.with_steps(n);
    }
    let report = validate_model(&model);
    if !report.is_valid() {
        return Err(Failure::validation(format!(
            "model validation failed:\n{report}"
        )));
    }
    Ok(model)
}

fn parse_schedule(opts: &SolveOpts) -> Result<PenaltySchedule, Failure> {
    let penalties: Vec<f64> = opts
        .penalties
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Failure::validation(format!("penalties: {e}")))
        })
        .collect::<Result<_, _>>()?;
    PenaltySchedule::new(penalties, 200, 1e-10).map_err(Failure::from)
}

fn manifest_json(command: &str, opts: &SolveOpts) -> String {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    serde_json::json!({
        "model": opts.model.display().to_string(),
        "command": command,
        "params": {
            "N": opts.n_steps,
            "J": opts.space_intervals,
            "M": opts.paths,
            "seed": opts.seed,
            "degree": opts.degree,
            "penalties": opts.penalties,
            "theta": opts.theta,
            "n": opts.n,
            "antithetic": opts.antithetic,
        },
        "out": opts.out.display().to_string(),
        "tool_version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": timestamp,
    })
    .to_string()
}

fn summary_json(method: &str, y0: &[f64]) -> String {
    let modes: serde_json::Map<String, serde_json::Value> = y0
        .iter()
        .enumerate()
        .map(|(i, v)| ((i + 1).to_string(), serde_json::json!(v)))
        .collect();
    serde_json::json!({
        "method": method,
        "manifest_ref": "manifest.json",
        "y0": modes,
    })
    .to_string()
}

fn write_artifact(out: &PathBuf, name: &str, content: &str) -> Result<(), Failure> {
    fs::create_dir_all(out)?;
    fs::write(out.join(name), content)?;
    Ok(())
}

fn lattice_for(model: &SwitchingModel) -> Result<(ChainModel, ValueLattice), Failure> {
    let chain = build_binomial_chain(&model.diffusion, model.grid)?;
    let lat = solve_fixed_point(&chain, model)?;
    Ok((chain, lat))
}

fn run_solve(method: Method, opts: &SolveOpts) -> Result<(), Failure> {
    let model = load_model(opts)?;
    let command = format!("solve {}", method.name());
    let manifest = manifest_json(&command, opts);
    write_artifact(&opts.out, "manifest.json", &manifest)?;

    let y0 = match method {
        Method::Lattice => {
            let (chain, lat) = lattice_for(&model)?;
            write_artifact(&opts.out, "values.csv", &lat.to_csv(&chain)?)?;
            lat.root_values()
        }
        Method::Nswitch => {
            let chain = build_binomial_chain(&model.diffusion, model.grid)?;
            let budget = opts.n.unwrap_or(model.q() * model.grid.steps());
            let lat = solve_n_switch(&chain, &model, budget)?;
            write_artifact(&opts.out, "values.csv", &lat.to_csv(&chain)?)?;
            lat.root_values()
        }
        Method::Penalized => {
            let chain = build_binomial_chain(&model.diffusion, model.grid)?;
            let schedule = parse_schedule(opts)?;
            let report = penalty_sweep(&chain, &model, &schedule)?;
            write_artifact(&opts.out, "convergence.csv", &report.to_csv())?;
            if let Some(row) = report.rows.iter().find(|r| !r.converged) {
                return Err(Failure::numerical(format!(
                    "penalty: picard iteration did not converge at penalty {}",
                    row.penalty
                )));
            }
            let top = *schedule.penalties.last().unwrap();
            let lat = solve_penalized(&chain, &model, top, schedule.kmax, schedule.eps)?;
            write_artifact(&opts.out, "values.csv", &lat.to_csv(&chain)?)?;
            lat.root_values()
        }
        Method::Lsmc => {
            let batch = simulate_euler_with(
                &model.diffusion,
                model.grid,
                opts.paths,
                opts.seed,
                opts.antithetic,
            );
            let basis = RegressionBasis::polynomial(opts.degree);
            let field = solve_lsmc_fixed_point(&batch, &model, &basis)?;
            write_artifact(&opts.out, "field.csv", &field.field_csv())?;
            write_artifact(&opts.out, "coefficients.csv", &field.coefficients_csv())?;
            (0..model.q()).map(|i| field.mean0(i)).collect()
        }
        Method::Pde => {
            let space = SpaceGrid::default_for(&model, opts.space_intervals)?;
            let field = solve_qvi_fd(&model, &space, opts.theta)?;
            write_artifact(&opts.out, "field.csv", &field.to_csv())?;
            let x0 = model.diffusion.x0()[0];
            (0..model.q()).map(|i| field.value_at(i, 0, x0)).collect()
        }
    };

    write_artifact(&opts.out, "summary.json", &summary_json(method.name(), &y0))?;
    println!("{}", summary_json(method.name(), &y0));
    Ok(())
}

fn run_crosscheck(opts: &SolveOpts) -> Result<(), Failure> {
    let model = load_model(opts)?;
    if model.dim() != 1 {
        return Err(Failure::validation(
            "crosscheck requires a one-dimensional model".to_string(),
        ));
    }
    let manifest = manifest_json("crosscheck", opts);
    write_artifact(&opts.out, "manifest.json", &manifest)?;
    let i0 = model.initial_mode;

    let (_, lat) = lattice_for(&model)?;
    let y_lattice = lat.value(i0, 0, 0);

    let chain = build_binomial_chain(&model.diffusion, model.grid)?;
    let schedule = parse_schedule(opts)?;
    let top = *schedule.penalties.last().unwrap();
    let pen = solve_penalized(&chain, &model, top, schedule.kmax, schedule.eps)?;
    let y_pen = pen.value(i0, 0, 0);

    let space = SpaceGrid::default_for(&model, opts.space_intervals)?;
    let pde = solve_qvi_fd(&model, &space, opts.theta)?;
    let y_pde = pde.value_at(i0, 0, model.diffusion.x0()[0]);

    let batch = simulate_euler_with(
        &model.diffusion,
        model.grid,
        opts.paths,
        opts.seed,
        opts.antithetic,
    );
    let field = solve_lsmc_fixed_point(&batch, &model, &RegressionBasis::polynomial(opts.degree))?;
    let y_lsmc = field.mean0(i0);
    let se = field.se0(i0);

    // tolerances anchored at the lattice; unanchored pairs get the
    // triangle sum of their anchors. The 1e-6 floor keeps degenerate
    // (deterministic-dynamics) runs from failing on rounding dust when
    // the sampling error collapses to zero.
    let tol_vs_lattice = |name: &str| -> f64 {
        match name {
            "pde" => 2e-2 * y_lattice.abs() + 1e-12,
            "penalized" => 1e-2,
            "lsmc" => (3.0 * se).max(1e-6),
            _ => 0.0,
        }
    };
    let methods = [
        ("lattice", y_lattice),
        ("penalized", y_pen),
        ("pde", y_pde),
        ("lsmc", y_lsmc),
    ];

    let mut csv = String::from("method_a,method_b,abs_gap,tolerance,pass\n");
    let mut all_pass = true;
    for (a_idx, (a_name, a_val)) in methods.iter().enumerate() {
        for (b_name, b_val) in methods.iter().skip(a_idx + 1) {
            let gap = (a_val - b_val).abs();
            let tol = tol_vs_lattice(a_name) + tol_vs_lattice(b_name);
            let pass = gap <= tol;
            all_pass &= pass;
            let _ = writeln!(csv, "{a_name},{b_name},{gap},{tol},{pass}");
        }
    }
    write_artifact(&opts.out, "crosscheck.csv", &csv)?;

    let summary = serde_json::json!({
        "method": "crosscheck",
        "manifest_ref": "manifest.json",
        "initial_mode": i0 + 1,
        "y0": {
            "lattice": y_lattice,
            "penalized": y_pen,
            "pde": y_pde,
            "lsmc": y_lsmc,
            "lsmc_se": se,
        },
        "all_pass": all_pass,
    })
    .to_string();
    write_artifact(&opts.out, "summary.json", &summary)?;
    println!("{summary}");

    if all_pass {
        Ok(())
    } else {
        Err(Failure::consistency(
            "crosscheck: at least one method pair exceeds its tolerance (see crosscheck.csv)"
                .to_string(),
        ))
    }
}
