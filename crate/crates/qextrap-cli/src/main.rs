//! Command-line front end: simulate timelines, run extrapolation intervals,
//! reproduce the registered phenomena suites, sweep parameters, and dump the
//! underlying conic programs in standard form.
//!
//! Results go to stdout (or `--out`); diagnostics go to stderr. Exit codes:
//! 0 optimal, 1 usage/validation error or failed phenomena tag,
//! 2 infeasible data, 3 solver failure.

mod config;

use std::io::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};

use qextrap::error::{Error, Result};
use qextrap::extrapolation::{
    assemble_program, certainty_scan, hull_distance, knightian_inner_check,
    selftest_diagnostics, solve_interval_with, CertaintyClass, Interval, RelaxationChoice,
    TauTarget,
};
use qextrap::generators::{dataset_d, suites_by_label, BehaviorTag, NamedSuite};
use qextrap::quantum::{serdes::realization_from_json, simulate_at_times, Scenario};
use qextrap::solver::{backend_by_name, dump::dump_standard_form, Sense, SolveStatus};

use config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "qextrap", version, about = "Rigorous extrapolation of timed quantum measurement statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the result document here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Solver adapter (overrides QEXTRAP_BACKEND).
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Solver tolerance applied to primal, dual, and gap alike.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a realization's timeline and emit a CSV (t,x,a,p).
    Simulate {
        /// Realization file (JSON: dim, state, hamiltonian, povms).
        #[arg(long)]
        realization: PathBuf,
        /// Comma-separated measurement times.
        #[arg(long, value_delimiter = ',', num_args = 0.., allow_hyphen_values = true)]
        times: Vec<f64>,
    },
    /// Solve the extrapolation interval for the configured objective.
    Extrapolate,
    /// Re-check the expected behavior of a registered suite.
    Phenomena {
        /// Suite label: O, D, aha, fogbank, disc, sin, superexp.
        #[arg(long)]
        suite: String,
        /// Ladder size for the D suite.
        #[arg(long)]
        n: Option<usize>,
        /// Energy-grid refinement for certainty checks.
        #[arg(long, default_value_t = 16)]
        m: usize,
        /// Interval-width threshold for approximate full certainty.
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
    },
    /// Re-solve the configured problem over a parameter grid; emit CSV.
    Sweep {
        /// Which parameter the grid varies.
        #[arg(long)]
        axis: Axis,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', num_args = 0.., allow_hyphen_values = true)]
        grid: Vec<f64>,
    },
    /// Print the assembled conic program in standard form.
    Dump {
        /// Which interval endpoint's objective to embed.
        #[arg(long, default_value = "max")]
        sense: SenseArg,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Axis {
    /// Energy-grid refinement m.
    M,
    /// Moment-hierarchy order k.
    K,
    /// Extrapolation time.
    Tau,
    /// Uniform l1 error bar on every estimate.
    Delta,
}

#[derive(Clone, Copy, ValueEnum)]
enum SenseArg {
    Min,
    Max,
}

fn main() {
    let cli = Cli::parse();
    if let Some(name) = &cli.backend {
        if let Err(e) = backend_by_name(name) {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
        std::env::set_var("QEXTRAP_BACKEND", name);
    }
    match run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => 2,
        Error::Solver(_) => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate { realization, times } => cmd_simulate(cli, realization, times),
        Command::Extrapolate => cmd_extrapolate(cli),
        Command::Phenomena { suite, n, m, threshold } => {
            cmd_phenomena(cli, suite, *n, *m, *threshold)
        }
        Command::Sweep { axis, grid } => cmd_sweep(cli, *axis, grid),
        Command::Dump { sense } => cmd_dump(cli, *sense),
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Validation("--config is required for this command".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(&text)
}

fn emit(cli: &Cli, document: &str) -> Result<()> {
    match &cli.out {
        Some(path) => std::fs::write(path, document)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(document.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Error::Validation(format!("stdout: {e}")))
        }
    }
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(cli: &Cli, path: &PathBuf, times: &[f64]) -> Result<i32> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let r = realization_from_json(&text)?;
    let dataset = simulate_at_times(&r, times)?;
    let mut csv = String::from("t,x,a,p\n");
    for (j, point) in dataset.points.iter().enumerate() {
        for (x, col) in point.probs.iter().enumerate() {
            for (a, &p) in col.iter().enumerate() {
                csv.push_str(&format!("{},{x},{a},{p}\n", dataset.times[j]));
            }
        }
    }
    emit(cli, &csv)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// extrapolate
// ---------------------------------------------------------------------------

fn status_str(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::NumericalFailure => "numerical_failure",
    }
}

fn interval_json(iv: &Interval) -> serde_json::Value {
    serde_json::json!({
        "mu_minus": iv.mu_minus,
        "mu_plus": iv.mu_plus,
        "width": iv.width(),
        "status": {
            "minus": status_str(iv.status_minus),
            "plus": status_str(iv.status_plus),
        },
        "gap_bound": iv.gap_bound,
        "delta_perturbed": iv.delta_perturbed,
        "solver_stats": {
            "iterations_minus": iv.iterations.0,
            "iterations_plus": iv.iterations.1,
            "solve_time_s": iv.solve_time_s,
        },
    })
}

fn cmd_extrapolate(cli: &Cli) -> Result<i32> {
    let cfg = load_config(cli)?;
    let problem = cfg.build_problem(&mut |w| eprintln!("warning: {w}"))?;
    let tol = cfg.tolerances(cli.tol);
    let interval = solve_interval_with(&problem, &tol)?;
    let mut doc = serde_json::to_string_pretty(&interval_json(&interval)).expect("json");
    doc.push('\n');
    emit(cli, &doc)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// phenomena
// ---------------------------------------------------------------------------

/// Scenario implied by a bundled noisy dataset and a marked time.
fn suite_scenario(suite: &NamedSuite, tau: f64) -> Scenario {
    let point = &suite.noisy.dataset.points[0];
    Scenario {
        settings: point.probs.len(),
        outcomes: point.probs[0].len(),
        times: suite.noisy.dataset.times.clone(),
        tau,
    }
}

fn suite_relaxation(suite: &NamedSuite, m: usize) -> RelaxationChoice {
    use qextrap::quantum::EnergyConstraint as C;
    use qextrap::relaxations::SoftDecay;
    match suite.constraint {
        C::Hard { e_plus } => RelaxationChoice::HardGrid { e_plus, m },
        C::Soft { e_plus, epsilon } => {
            RelaxationChoice::Soft { e_plus, epsilon, m, decay: SoftDecay::EqualDiag }
        }
        C::Average { e_bar } => RelaxationChoice::Average { e_bar, m, e_plus_override: None },
    }
}

fn linf(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0f64, |acc, (&x, &y)| acc.max((x - y).abs()))
}

fn cmd_phenomena(
    cli: &Cli,
    label: &str,
    n: Option<usize>,
    m: usize,
    threshold: f64,
) -> Result<i32> {
    let suites = match (label, n) {
        ("D", Some(n)) => vec![dataset_d(n, 1.0)?],
        _ => suites_by_label(label)?,
    };
    let mut report = String::new();
    let mut failures = 0usize;
    for (si, suite) in suites.iter().enumerate() {
        suite.check()?;
        let name = format!("{}[{si}]", suite.label);
        if suite.tau_markers.is_empty() {
            report.push_str(&format!("{name}: no behavior markers\n"));
        }
        for marker in &suite.tau_markers {
            let tau = marker.tau;
            let (kind, pass, detail) = match &marker.behavior {
                BehaviorTag::Knightian => {
                    let settings = suite.noisy.dataset.points[0].probs.len();
                    let targets: Vec<usize> = (0..settings).collect();
                    let v =
                        knightian_inner_check(&suite.realizations, &suite.noisy, tau, &targets)?;
                    (
                        "knightian",
                        v.verdict,
                        format!("fitting={} worst_distance={:.3e}", v.fitting, v.worst_distance),
                    )
                }
                BehaviorTag::InnerValue { expected } => {
                    let mut points: Vec<Vec<Vec<f64>>> = Vec::new();
                    for r in &suite.realizations {
                        points.push(simulate_at_times(r, &[tau])?.points[0].probs.clone());
                    }
                    let mut worst = 0.0f64;
                    for (x, target) in expected.iter().enumerate() {
                        let per_setting: Vec<Vec<f64>> =
                            points.iter().map(|p| p[x].clone()).collect();
                        worst = worst.max(hull_distance(&per_setting, target)?);
                    }
                    ("inner_value", worst <= 1e-6, format!("hull_distance={worst:.3e}"))
                }
                BehaviorTag::FullCertainty { expected } => {
                    let scenario = suite_scenario(suite, tau);
                    let objective =
                        vec![vec![0.0; scenario.outcomes]; scenario.settings];
                    let mut problem = qextrap::extrapolation::ExtrapolationProblem::new(
                        suite.noisy.clone(),
                        scenario,
                        objective,
                        suite_relaxation(suite, m),
                    );
                    problem.tau_target = TauTarget::Model;
                    let scan = certainty_scan(&problem, threshold)?;
                    let max_width = scan.max_width();
                    match scan.classification {
                        CertaintyClass::ApproximateFullCertainty { q, max_width } => {
                            let dist = linf(&q, expected);
                            (
                                "full_certainty",
                                dist <= threshold,
                                format!("max_width={max_width:.3e} distance={dist:.3e}"),
                            )
                        }
                        other => (
                            "full_certainty",
                            false,
                            format!("classification={other:?} max_width={max_width:.3e}"),
                        ),
                    }
                }
            };
            if !pass {
                failures += 1;
            }
            report.push_str(&format!(
                "{name} tau={tau:.6} {kind}: {} ({detail})\n",
                if pass { "PASS" } else { "FAIL" },
            ));
        }
        // The ladder dataset additionally self-tests its generating model:
        // revival overlaps vanish and the full spectral weight sits in the
        // ladder windows.
        if suite.label == "D" && !suite.realizations.is_empty() {
            let levels = n.unwrap_or(3);
            let st = selftest_diagnostics(&suite.realizations[0], levels, 1.0, 0.0, &[])?;
            let overlaps_ok = st.overlaps.iter().all(|&v| v <= st.overlap_bound + 1e-9);
            let pass = overlaps_ok && st.window_weight >= 1.0 - 1e-9;
            if !pass {
                failures += 1;
            }
            report.push_str(&format!(
                "{name} selftest: {} (window_weight={} overlap_bound={:.3e})\n",
                if pass { "PASS" } else { "FAIL" },
                st.window_weight,
                st.overlap_bound,
            ));
        }
    }
    report.push_str(&format!(
        "{}: {failures} failed tag(s)\n",
        if failures == 0 { "OK" } else { "FAILED" }
    ));
    emit(cli, &report)?;
    Ok(if failures == 0 { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn apply_axis(cfg: &ScenarioConfig, axis: Axis, value: f64) -> Result<ScenarioConfig> {
    let mut cfg = cfg.clone();
    match axis {
        Axis::M => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Validation(format!(
                    "axis m needs positive integers, got {value}"
                )));
            }
            cfg.relaxation.m = value as usize;
        }
        Axis::K => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Validation(format!(
                    "axis k needs positive integers, got {value}"
                )));
            }
            cfg.relaxation.moment_order = Some(value as usize);
        }
        Axis::Tau => cfg.target.tau = value,
        Axis::Delta => {
            if value < 0.0 {
                return Err(Error::Validation(format!(
                    "axis delta needs non-negative values, got {value}"
                )));
            }
            for col in &mut cfg.data.delta {
                col.iter_mut().for_each(|d| *d = value);
            }
        }
    }
    Ok(cfg)
}

fn sweep_row(cfg: &ScenarioConfig, tol_flag: Option<f64>, value: f64) -> Result<String> {
    let problem = cfg.build_problem(&mut |w| eprintln!("warning: {w}"))?;
    let interval = solve_interval_with(&problem, &cfg.tolerances(tol_flag))?;
    let gap = interval.gap_bound.map_or(String::new(), |g| g.to_string());
    Ok(format!(
        "{value},{},{},{},{gap},{},{}\n",
        interval.mu_minus,
        interval.mu_plus,
        interval.width(),
        status_str(interval.status_minus),
        status_str(interval.status_plus),
    ))
}

fn cmd_sweep(cli: &Cli, axis: Axis, grid: &[f64]) -> Result<i32> {
    let base = load_config(cli)?;
    let configs: Vec<ScenarioConfig> =
        grid.iter().map(|&v| apply_axis(&base, axis, v)).collect::<Result<_>>()?;

    let threads = cli.threads.max(1).min(grid.len().max(1));
    let rows: Mutex<Vec<Option<Result<String>>>> =
        Mutex::new((0..grid.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= grid.len() {
                    break;
                }
                let row = sweep_row(&configs[i], cli.tol, grid[i]);
                rows.lock().expect("rows lock").get_mut(i).map(|slot| *slot = Some(row));
            });
        }
    });

    let mut csv = String::from("value,mu_minus,mu_plus,width,gap_bound,status_minus,status_plus\n");
    for slot in rows.into_inner().expect("rows lock") {
        csv.push_str(&slot.expect("every grid point visited")?);
    }
    emit(cli, &csv)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// dump
// ---------------------------------------------------------------------------

fn cmd_dump(cli: &Cli, sense: SenseArg) -> Result<i32> {
    let cfg = load_config(cli)?;
    let problem = cfg.build_problem(&mut |w| eprintln!("warning: {w}"))?;
    let sense = match sense {
        SenseArg::Min => Sense::Minimize,
        SenseArg::Max => Sense::Maximize,
    };
    let program = assemble_program(&problem, sense)?;
    emit(cli, &dump_standard_form(&program))?;
    Ok(0)
}
