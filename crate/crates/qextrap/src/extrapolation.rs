//! Extrapolation intervals and phenomenon classification.
//!
//! Given noisy estimates of a timed-measurement dataset and an energy
//! constraint, this module computes rigorous min/max bounds on any linear
//! functional of the outcome distribution at a future time by solving the
//! relaxations of [`crate::relaxations`] with data-fit constraints attached.
//! It also certifies Knightian uncertainty from inner witnesses (explicit
//! fitting realizations), scans all outcome probabilities at the target time
//! to detect approximate full certainty, and runs the self-testing
//! diagnostics of the deterministic-revival datasets.

use num_complex::Complex64;

use crate::cones::rounding_epsilon;
use crate::error::{Error, Result};
use crate::quantum::{
    hermitian_eigen, purify, realization_fits, NoisyDataset, Realization, Scenario,
};
use crate::relaxations::{
    gap_bounds, model_a_m, model_s_finite, model_s_m, model_soft, GapBound, ModelHandle,
    SoftDecay,
};
use crate::solver::{
    solve_with, ConicProgram, LinExpr, Sense, SolveResult, SolveStatus, SolverTolerances,
};

/// Error bars of exactly zero are widened to this value inside the SDP fit
/// constraints so the feasible set keeps a strictly interior point.
pub const DELTA_FLOOR: f64 = 1e-9;

/// Tolerance for the convex-hull coverage test of the Knightian check.
pub const HULL_TOL: f64 = 1e-6;

/// Default interval-width threshold for declaring approximate full certainty.
pub const DEFAULT_CERTAINTY_THRESHOLD: f64 = 0.05;

// ---------------------------------------------------------------------------
// Problem statement
// ---------------------------------------------------------------------------

/// Which relaxation to build for an extrapolation problem.
#[derive(Debug, Clone, PartialEq)]
pub enum RelaxationChoice {
    /// Exact model with spectrum inside a known finite energy list.
    Finite { energies: Vec<f64> },
    /// Hard energy cap, discretized on a grid of `m + 1` levels.
    HardGrid { e_plus: f64, m: usize },
    /// Average-energy bound; `e_plus_override` replaces the default cap.
    Average { e_bar: f64, m: usize, e_plus_override: Option<f64> },
    /// Soft spectral-weight bound with a high-energy decay model.
    Soft { e_plus: f64, epsilon: f64, m: usize, decay: SoftDecay },
}

impl RelaxationChoice {
    /// Build the relaxation model for a scenario.
    pub fn build(&self, scenario: &Scenario) -> Result<ModelHandle> {
        match self {
            RelaxationChoice::Finite { energies } => model_s_finite(energies, scenario),
            RelaxationChoice::HardGrid { e_plus, m } => model_s_m(*e_plus, *m, scenario),
            RelaxationChoice::Average { e_bar, m, e_plus_override } => {
                model_a_m(*e_bar, *m, scenario, *e_plus_override)
            }
            RelaxationChoice::Soft { e_plus, epsilon, m, decay } => {
                model_soft(*e_plus, *epsilon, *m, decay, scenario)
            }
        }
    }
}

/// Which quantity at the extrapolation time the objective acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauTarget {
    /// The dataset value `P(a|x,tau)`, linked to the model by the
    /// discretization slack. Intervals are valid outer bounds on the true
    /// future statistics, at the price of an irreducible width of twice the
    /// slack at `tau`.
    Dataset,
    /// The model functional itself, with the fit constraints also applied to
    /// the model's own values (no discretization slack anywhere). The
    /// interval tracks the grid model's prediction; it converges to the true
    /// interval as the grid refines, and the distance is covered by the
    /// reported gap bound. Used for trend diagnostics such as the certainty
    /// scan.
    Model,
}

/// A linear extrapolation query: estimates with error bars, the measurement
/// scenario (including the extrapolation time), objective coefficients
/// `objective[x][a]` on the future outcome distribution, and the relaxation
/// to solve it over.
#[derive(Debug, Clone)]
pub struct ExtrapolationProblem {
    pub noisy: NoisyDataset,
    pub scenario: Scenario,
    /// `objective[x][a]`: coefficient of `P(a|x,tau)`.
    pub objective: Vec<Vec<f64>>,
    pub relaxation: RelaxationChoice,
    pub tau_target: TauTarget,
}

impl ExtrapolationProblem {
    /// An extrapolation problem with the sound dataset-valued target.
    pub fn new(
        noisy: NoisyDataset,
        scenario: Scenario,
        objective: Vec<Vec<f64>>,
        relaxation: RelaxationChoice,
    ) -> Self {
        ExtrapolationProblem { noisy, scenario, objective, relaxation, tau_target: TauTarget::Dataset }
    }

    /// Check shape consistency between the estimates, the scenario, and the
    /// objective.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.noisy.validate(1e-9)?;
        if self.noisy.dataset.times.len() != self.scenario.times.len() {
            return Err(Error::Shape(format!(
                "estimates cover {} times, scenario has {}",
                self.noisy.dataset.times.len(),
                self.scenario.times.len()
            )));
        }
        for (a, b) in self.noisy.dataset.times.iter().zip(&self.scenario.times) {
            if (a - b).abs() > 1e-12 {
                return Err(Error::Shape(format!("time grids differ: {a} vs {b}")));
            }
        }
        if self.noisy.settings() != self.scenario.settings {
            return Err(Error::Shape("setting counts differ".into()));
        }
        if self.objective.len() != self.scenario.settings
            || self.objective.iter().any(|row| row.len() != self.scenario.outcomes)
        {
            return Err(Error::Shape(format!(
                "objective must be {} x {}",
                self.scenario.settings, self.scenario.outcomes
            )));
        }
        for point in &self.noisy.dataset.points {
            if point.probs.iter().any(|row| row.len() != self.scenario.outcomes) {
                return Err(Error::Shape("estimate outcome counts differ from scenario".into()));
            }
        }
        Ok(())
    }
}

/// Result of one min/max extrapolation solve pair.
#[derive(Debug, Clone)]
pub struct Interval {
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub status_minus: SolveStatus,
    pub status_plus: SolveStatus,
    /// Analytic bound on the distance between this interval and the exact
    /// (unrelaxed) one, when a formula applies.
    pub gap_bound: Option<f64>,
    /// Whether any zero error bar was widened to [`DELTA_FLOOR`].
    pub delta_perturbed: bool,
    pub iterations: (usize, usize),
    pub solve_time_s: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.mu_plus - self.mu_minus
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.mu_plus + self.mu_minus)
    }
}

// ---------------------------------------------------------------------------
// Interval solving
// ---------------------------------------------------------------------------

/// Add the l1 fit constraints tying the model's values at the measurement
/// times to the estimates. The dataset target constrains the slack-linked
/// dataset variables (sound outer bounds); the model target constrains the
/// discretized model directly, so the feasible set tracks the grid model and
/// converges as the grid refines. Returns whether any zero error bar was
/// widened to the floor.
fn add_fit_constraints(
    h: &ModelHandle,
    p: &mut ConicProgram,
    noisy: &NoisyDataset,
    target: TauTarget,
) -> bool {
    let source = match target {
        TauTarget::Dataset => &h.probs,
        TauTarget::Model => &h.raw_probs,
    };
    let mut perturbed = false;
    for x in 0..h.scenario.settings {
        for j in 0..h.scenario.times.len() {
            let mut delta = noisy.delta[x][j];
            if delta == 0.0 {
                delta = DELTA_FLOOR;
                perturbed = true;
            }
            let mut budget = LinExpr::zero();
            for (a, expr) in source[x][j].iter().enumerate() {
                let est = noisy.dataset.points[j].probs[x][a];
                let u = p.nonneg_var();
                let mut hi = expr.scaled(1.0);
                hi.push(u, -1.0);
                p.add_le(hi, est);
                let mut lo = expr.scaled(-1.0);
                lo.push(u, -1.0);
                p.add_le(lo, -est);
                budget.push(u, 1.0);
            }
            p.add_le(budget, delta);
        }
    }
    perturbed
}

fn objective_expr(h: &ModelHandle, objective: &[Vec<f64>], target: TauTarget) -> LinExpr {
    let tau_index = h.scenario.times.len();
    let source = match target {
        TauTarget::Dataset => &h.probs,
        TauTarget::Model => &h.raw_probs,
    };
    let mut expr = LinExpr::zero();
    for (x, row) in objective.iter().enumerate() {
        for (a, &f) in row.iter().enumerate() {
            if f != 0.0 {
                expr.add(&source[x][tau_index][a].scaled(f));
            }
        }
    }
    expr.simplify();
    expr
}

/// Worst-case analytic gap bound for a built model, over all constrained
/// times (measurements and the extrapolation time).
pub fn model_gap_bound(h: &ModelHandle) -> Result<f64> {
    use crate::relaxations::RelaxationKind as K;
    let t_max = h
        .all_times()
        .iter()
        .fold(0.0f64, |acc, &t| acc.max(t.abs()));
    match &h.kind {
        K::Finite { .. } => Ok(0.0),
        K::HardGrid { e_plus, m } => {
            gap_bounds(&GapBound::HardGrid { e_plus: *e_plus, m: *m, t_max })
        }
        K::Average { e_bar, m, .. } => {
            gap_bounds(&GapBound::Average { e_bar: *e_bar, t_max, m: *m })
        }
        K::Soft { e_plus, m, decay, .. } => {
            let eps_round = match decay {
                SoftDecay::EqualDiag | SoftDecay::Toeplitz { .. } => 0.0,
                SoftDecay::Moment { order, structure } => rounding_epsilon(
                    structure.num_times(),
                    structure.num_generators(),
                    structure.half_degree(),
                    *order,
                ),
            };
            gap_bounds(&GapBound::Soft { eps_round, e_plus: *e_plus, t_max, m: *m })
        }
    }
}

fn check_solve(res: &SolveResult, sense: &str) -> Result<()> {
    match res.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "no model of the chosen relaxation fits the data within its error bars ({sense} solve)"
        ))),
        SolveStatus::Unbounded => {
            Err(Error::Solver(format!("{sense} solve reported an unbounded objective")))
        }
        SolveStatus::NumericalFailure => {
            Err(Error::Solver(format!("{sense} solve failed numerically")))
        }
    }
}

/// Build the model, add the fit constraints, and form the objective
/// expression for an extrapolation problem.
fn assemble(
    problem: &ExtrapolationProblem,
) -> Result<(ModelHandle, ConicProgram, LinExpr, bool)> {
    problem.validate()?;
    let h = problem.relaxation.build(&problem.scenario)?;
    let mut p = h.program.clone();
    let perturbed = add_fit_constraints(&h, &mut p, &problem.noisy, problem.tau_target);
    let expr = objective_expr(&h, &problem.objective, problem.tau_target);
    Ok((h, p, expr, perturbed))
}

/// The full standard-form conic program of one endpoint of the extrapolation
/// interval (relaxation, fit constraints, and objective included).
pub fn assemble_program(problem: &ExtrapolationProblem, sense: Sense) -> Result<ConicProgram> {
    let (_, mut p, expr, _) = assemble(problem)?;
    p.set_objective(sense, expr);
    Ok(p)
}

/// Solve the min/max extrapolation pair and return the resulting interval.
///
/// The model's dataset values at the measurement times are constrained to the
/// estimates within their l1 error bars; the objective acts on the outcome
/// distribution at the extrapolation time. Infeasible data is reported as an
/// error, not as an interval.
pub fn solve_interval(problem: &ExtrapolationProblem) -> Result<Interval> {
    let (interval, _, _) = solve_interval_detailed(problem)?;
    Ok(interval)
}

/// [`solve_interval`] with explicit solver tolerances.
pub fn solve_interval_with(
    problem: &ExtrapolationProblem,
    tol: &SolverTolerances,
) -> Result<Interval> {
    let (interval, _, _) = solve_interval_detailed_with(problem, tol)?;
    Ok(interval)
}

/// Like [`solve_interval`], also returning the built model and the solver
/// points attaining the two endpoints (min first), for extraction.
pub fn solve_interval_detailed(
    problem: &ExtrapolationProblem,
) -> Result<(Interval, ModelHandle, [SolveResult; 2])> {
    solve_interval_detailed_with(problem, &SolverTolerances::default())
}

/// [`solve_interval_detailed`] with explicit solver tolerances.
pub fn solve_interval_detailed_with(
    problem: &ExtrapolationProblem,
    tol: &SolverTolerances,
) -> Result<(Interval, ModelHandle, [SolveResult; 2])> {
    let (h, p, expr, perturbed) = assemble(problem)?;

    let mut p_min = p.clone();
    p_min.set_objective(Sense::Minimize, expr.clone());
    let res_min = solve_with(&p_min, tol)?;
    check_solve(&res_min, "min")?;

    let mut p_max = p;
    p_max.set_objective(Sense::Maximize, expr);
    let res_max = solve_with(&p_max, tol)?;
    check_solve(&res_max, "max")?;

    let interval = Interval {
        mu_minus: res_min.objective,
        mu_plus: res_max.objective,
        status_minus: res_min.status,
        status_plus: res_max.status,
        gap_bound: model_gap_bound(&h).ok(),
        delta_perturbed: perturbed,
        iterations: (res_min.iterations, res_max.iterations),
        solve_time_s: res_min.solve_time_s + res_max.solve_time_s,
    };
    Ok((interval, h, [res_min, res_max]))
}

// ---------------------------------------------------------------------------
// Knightian uncertainty (inner certificates)
// ---------------------------------------------------------------------------

/// Outcome of the inner-witness Knightian check.
#[derive(Debug, Clone)]
pub struct KnightianVerdict {
    /// True iff, for every target setting, every deterministic outcome
    /// distribution lies in the convex hull of the fitting realizations'
    /// predictions at the target time.
    pub verdict: bool,
    /// Number of supplied realizations that fit the data.
    pub fitting: usize,
    /// `points[i][x][a]`: prediction of fitting realization `i`.
    pub points: Vec<Vec<Vec<f64>>>,
    /// Worst l-infinity distance from a deterministic vertex to the hull.
    pub worst_distance: f64,
}

/// Distance (l-infinity) from `target` to the convex hull of `points`,
/// via a small linear program over the hull weights.
pub fn hull_distance(points: &[Vec<f64>], target: &[f64]) -> Result<f64> {
    let mut p = ConicProgram::new();
    let w0 = p.nonneg_vars(points.len());
    let s = p.nonneg_var();
    let mut total = LinExpr::zero();
    for i in 0..points.len() {
        total.push(w0 + i, 1.0);
    }
    p.add_eq(total, 1.0);
    for (a, &t) in target.iter().enumerate() {
        let mut combo = LinExpr::zero();
        for (i, pt) in points.iter().enumerate() {
            combo.push(w0 + i, pt[a]);
        }
        let mut hi = combo.clone();
        hi.push(s, -1.0);
        p.add_le(hi, t);
        let mut lo = combo.scaled(-1.0);
        lo.push(s, -1.0);
        p.add_le(lo, -t);
    }
    p.set_objective(Sense::Minimize, LinExpr::var(s));
    let res = solve_with(&p, &SolverTolerances::default())?;
    check_solve(&res, "hull-distance")?;
    Ok(res.objective.max(0.0))
}

/// Certify Knightian uncertainty at `tau` from explicit realizations: keep
/// the ones fitting the estimates, and check that for each target setting the
/// convex hull of their predicted distributions covers every deterministic
/// vertex. Convexity of the model sets makes every hull point realizable, so
/// a true verdict is a rigorous inner certificate.
pub fn knightian_inner_check(
    realizations: &[Realization],
    noisy: &NoisyDataset,
    tau: f64,
    targets: &[usize],
) -> Result<KnightianVerdict> {
    let mut points: Vec<Vec<Vec<f64>>> = Vec::new();
    for r in realizations {
        if realization_fits(r, noisy)?.fits(1e-9) {
            let ev = crate::quantum::TimeEvolution::new(r)?;
            let row = (0..r.settings())
                .map(|x| ev.probabilities(x, tau, 0.0))
                .collect::<Result<Vec<_>>>()?;
            points.push(row);
        }
    }
    if points.is_empty() {
        return Ok(KnightianVerdict {
            verdict: false,
            fitting: 0,
            points,
            worst_distance: f64::INFINITY,
        });
    }
    let outcomes = points[0][0].len();
    let mut worst = 0.0f64;
    for &x in targets {
        if x >= points[0].len() {
            return Err(Error::Shape(format!("target setting {x} out of range")));
        }
        let cloud: Vec<Vec<f64>> = points.iter().map(|row| row[x].clone()).collect();
        for a in 0..outcomes {
            let vertex: Vec<f64> =
                (0..outcomes).map(|b| if b == a { 1.0 } else { 0.0 }).collect();
            worst = worst.max(hull_distance(&cloud, &vertex)?);
        }
    }
    Ok(KnightianVerdict {
        verdict: worst <= HULL_TOL,
        fitting: points.len(),
        points,
        worst_distance: worst,
    })
}

// ---------------------------------------------------------------------------
// Certainty scan
// ---------------------------------------------------------------------------

/// Classification of the outcome statistics at the extrapolation time.
#[derive(Debug, Clone, PartialEq)]
pub enum CertaintyClass {
    /// Every outcome probability is pinned within the width threshold;
    /// `q[x][a]` is the candidate distribution (interval midpoints).
    ApproximateFullCertainty { q: Vec<Vec<f64>>, max_width: f64 },
    /// Every interval is essentially the whole [0, 1]: nothing is pinned.
    /// Only an inner certificate ([`knightian_inner_check`]) can upgrade
    /// this to certified Knightian uncertainty.
    KnightianCandidate,
    /// Some probabilities are pinned, others are not.
    Partial,
}

/// Per-outcome intervals at the extrapolation time plus their classification.
#[derive(Debug, Clone)]
pub struct CertaintyReport {
    /// `intervals[x][a]` for `P(a|x,tau)`.
    pub intervals: Vec<Vec<Interval>>,
    pub classification: CertaintyClass,
    pub threshold: f64,
}

impl CertaintyReport {
    pub fn max_width(&self) -> f64 {
        self.intervals
            .iter()
            .flatten()
            .fold(0.0f64, |acc, iv| acc.max(iv.width()))
    }
}

/// Solve one interval per (outcome, setting) indicator at the extrapolation
/// time and classify the result. The problem's objective field is ignored.
///
/// Classification uses the problem's `tau_target`; note the dataset-valued
/// target carries an irreducible width of twice the discretization slack at
/// the extrapolation time, so certainty trends across grid sizes are best
/// read from the [`TauTarget::Model`] target together with the reported gap
/// bound.
pub fn certainty_scan(problem: &ExtrapolationProblem, threshold: f64) -> Result<CertaintyReport> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Precondition("certainty threshold must lie in [0, 1]".into()));
    }
    let settings = problem.scenario.settings;
    let outcomes = problem.scenario.outcomes;
    let mut intervals: Vec<Vec<Interval>> = Vec::with_capacity(settings);
    for x in 0..settings {
        let mut row = Vec::with_capacity(outcomes);
        for a in 0..outcomes {
            let mut q = problem.clone();
            q.objective = vec![vec![0.0; outcomes]; settings];
            q.objective[x][a] = 1.0;
            row.push(solve_interval(&q)?);
        }
        intervals.push(row);
    }
    let max_width = intervals.iter().flatten().fold(0.0f64, |acc, iv| acc.max(iv.width()));
    let min_width = intervals.iter().flatten().fold(1.0f64, |acc, iv| acc.min(iv.width()));
    let classification = if max_width <= threshold {
        let q = intervals
            .iter()
            .map(|row| row.iter().map(Interval::midpoint).collect())
            .collect();
        CertaintyClass::ApproximateFullCertainty { q, max_width }
    } else if min_width >= 1.0 - threshold {
        CertaintyClass::KnightianCandidate
    } else {
        CertaintyClass::Partial
    };
    Ok(CertaintyReport { intervals, classification, threshold })
}

// ---------------------------------------------------------------------------
// Self-testing diagnostics
// ---------------------------------------------------------------------------

/// Diagnostics of the deterministic-revival self-test on `N` levels.
#[derive(Debug, Clone)]
pub struct SelfTestReport {
    /// `|<psi|psi(t_j)>|` at the revival-grid times `t_j`, `j = 1..N-1`.
    pub overlaps: Vec<f64>,
    /// The noise-tolerant bound `sqrt(2 delta - delta^2)` they must obey.
    pub overlap_bound: f64,
    /// Largest squared overlap, driving the window half-width.
    pub epsilon: f64,
    /// Energy windows `[(k - eps^(1/4)) E+/(N-1), (k + eps^(1/4)) E+/(N-1)]`.
    pub windows: Vec<(f64, f64)>,
    /// Spectral weight of the state inside the union of the windows.
    pub window_weight: f64,
    /// `(E, V(E))` pairs of the witness polynomial at requested energies.
    pub witness_values: Vec<(f64, f64)>,
}

/// The spectral witness of the `N`-level self-test: zero exactly at the
/// ladder energies `k E+/(N-1)` and non-negative on `[0, E+]`.
pub fn witness_polynomial(e: f64, n: usize, e_plus: f64) -> f64 {
    let nm1 = (n - 1) as f64;
    let mut v = (std::f64::consts::PI * nm1 * e / e_plus).sin();
    for j in 1..=n.saturating_sub(2) {
        v *= (j as f64 * std::f64::consts::PI / n as f64
            - std::f64::consts::PI * nm1 * e / (n as f64 * e_plus))
            .sin();
    }
    v
}

/// Run the self-testing diagnostics on a realization claimed to reproduce the
/// `N`-level revival dataset within error bars `delta`: state overlaps at the
/// grid times against the noise-tolerant bound, spectral weight inside the
/// ladder-energy windows, and witness-polynomial values at requested
/// energies.
pub fn selftest_diagnostics(
    r: &Realization,
    n: usize,
    e_plus: f64,
    delta: f64,
    witness_energies: &[f64],
) -> Result<SelfTestReport> {
    if n < 2 {
        return Err(Error::Precondition("need at least two levels".into()));
    }
    if e_plus <= 0.0 {
        return Err(Error::Precondition("energy cap must be positive".into()));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Precondition("error bar must lie in [0, 1]".into()));
    }
    let pure;
    let r = if r.state_is_pure() {
        r
    } else {
        pure = purify(r)?;
        &pure
    };
    // Pure-state vector: top eigenvector of the rank-one density matrix.
    let (svals, svecs) = hermitian_eigen(&r.state);
    let top = svals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty spectrum");
    let psi = svecs.column(top).into_owned();

    let (energies, basis) = hermitian_eigen(&r.hamiltonian);
    let phi = basis.adjoint() * &psi;
    let weights: Vec<f64> = phi.iter().map(|c| c.norm_sqr()).collect();

    let times: Vec<f64> = (1..n)
        .map(|j| 2.0 * std::f64::consts::PI * (n - 1) as f64 * j as f64 / (n as f64 * e_plus))
        .collect();
    let overlaps: Vec<f64> = times
        .iter()
        .map(|&t| {
            let z: Complex64 = weights
                .iter()
                .zip(&energies)
                .map(|(&w, &e)| Complex64::from_polar(w, -e * t))
                .sum();
            z.norm()
        })
        .collect();
    let overlap_bound = (2.0 * delta - delta * delta).max(0.0).sqrt();
    let epsilon = overlaps.iter().fold(0.0f64, |acc, &o| acc.max(o * o));

    let half_width = epsilon.powf(0.25) * e_plus / (n - 1) as f64;
    let windows: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let center = k as f64 * e_plus / (n - 1) as f64;
            (center - half_width, center + half_width)
        })
        .collect();
    let in_window = |e: f64| windows.iter().any(|&(lo, hi)| e >= lo - 1e-9 && e <= hi + 1e-9);
    let window_weight: f64 = weights
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| in_window(e))
        .map(|(&w, _)| w)
        .sum();

    let witness_values = witness_energies
        .iter()
        .map(|&e| (e, witness_polynomial(e, n, e_plus)))
        .collect();

    Ok(SelfTestReport {
        overlaps,
        overlap_bound,
        epsilon,
        windows,
        window_weight,
        witness_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{
        aha_suite, dataset_d, dataset_o, fogbank_suite, realization_problematic_sin,
    };
    use crate::quantum::{direct_sum_mixture, simulate_datapoint, Scenario};

    fn scenario_from(noisy: &NoisyDataset, outcomes: usize, tau: f64) -> Scenario {
        Scenario {
            settings: noisy.settings(),
            outcomes,
            times: noisy.dataset.times.clone(),
            tau,
        }
    }

    #[test]
    fn coin_flip_interval_is_symmetric_and_contains_witness() {
        let noisy = dataset_o(4, 1.0, 0.3).unwrap();
        let scenario = scenario_from(&noisy, 2, 2.0);
        let problem = ExtrapolationProblem::new(
            noisy,
            scenario,
            vec![vec![0.0, 1.0]],
            RelaxationChoice::HardGrid { e_plus: 2.0, m: 8 },
        );
        let iv = solve_interval(&problem).unwrap();
        // Inner witness: the sign-flip family reaches 1/2 + 1/2 sin(1/2)^4.
        let witness = 0.5 + 0.5 * 0.5f64.sin().powi(4);
        assert!(iv.mu_plus >= witness - 1e-6, "mu_plus = {} < {witness}", iv.mu_plus);
        assert!(iv.mu_minus <= 1.0 - witness + 1e-6);
        // Outcome-swap symmetry of the uniform dataset.
        assert!(
            ((iv.mu_plus - 0.5) - (0.5 - iv.mu_minus)).abs() < 1e-6,
            "asymmetric interval [{}, {}]",
            iv.mu_minus,
            iv.mu_plus
        );
        assert!(iv.delta_perturbed == false);
        assert!(iv.gap_bound.unwrap() > 0.0);
    }

    #[test]
    fn vacuous_error_bars_free_the_future_point() {
        let noisy = dataset_o(3, 1.0, 1.0).unwrap();
        let scenario = scenario_from(&noisy, 2, 1.5);
        let problem = ExtrapolationProblem::new(
            noisy,
            scenario,
            vec![vec![1.0, 0.0]],
            RelaxationChoice::Finite { energies: vec![0.0, 1.0] },
        );
        let iv = solve_interval(&problem).unwrap();
        assert!(iv.mu_minus.abs() < 1e-6, "mu_minus = {}", iv.mu_minus);
        assert!((iv.mu_plus - 1.0).abs() < 1e-6, "mu_plus = {}", iv.mu_plus);
        assert_eq!(iv.gap_bound, Some(0.0));
    }

    #[test]
    fn joint_clarifying_data_pins_the_revival() {
        let suites = aha_suite(1.0).unwrap();
        let suite = &suites.joint;
        let tau = suite.tau_markers[0].tau;
        let scenario = scenario_from(&suite.noisy, 2, tau);
        let mut problem = ExtrapolationProblem::new(
            suite.noisy.clone(),
            scenario,
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            RelaxationChoice::HardGrid { e_plus: 1.0, m: 12 },
        );
        let iv = solve_interval(&problem).unwrap();
        assert!(iv.delta_perturbed, "exact data should trip the delta floor");
        assert!(iv.mu_minus <= 1.0 + 1e-6 && iv.mu_plus >= 1.0 - 1e-6,
            "interval [{}, {}] misses the certain value 1", iv.mu_minus, iv.mu_plus);
        // The discretized-model value is pinned much harder than the
        // slack-linked dataset value, which carries the full time-grid slack.
        problem.tau_target = TauTarget::Model;
        let iv_model = solve_interval(&problem).unwrap();
        assert!(
            iv_model.width() <= iv.width() + 1e-4,
            "model width {} > dataset width {}",
            iv_model.width(),
            iv.width()
        );
    }

    #[test]
    fn knightian_check_accepts_hull_and_rejects_single_point() {
        let suites = aha_suite(1.0).unwrap();
        let first = &suites.first;
        let tau = first.tau_markers[0].tau;
        let verdict = knightian_inner_check(&first.realizations, &first.noisy, tau, &[0]).unwrap();
        assert!(verdict.verdict, "worst distance {}", verdict.worst_distance);
        assert!(verdict.fitting >= 2);
        let single =
            knightian_inner_check(&first.realizations[..1], &first.noisy, tau, &[0]).unwrap();
        assert!(!single.verdict);
        // A strict mixture of the two witnesses also fits, but its prediction
        // hull is still a single point cloud containing no new vertices.
        let mix =
            direct_sum_mixture(&first.realizations[0], &first.realizations[1], 0.5).unwrap();
        let with_mix = knightian_inner_check(
            &[first.realizations[0].clone(), mix],
            &first.noisy,
            tau,
            &[0],
        )
        .unwrap();
        assert!(with_mix.fitting == 2);
    }

    #[test]
    fn fogbank_has_knightian_uncertainty_at_first_marker() {
        let vertices = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let mut realizations = Vec::new();
        let mut noisy = None;
        let mut tau = 0.0;
        for q in vertices {
            let suite = fogbank_suite(1.0, q).unwrap();
            tau = suite
                .tau_markers
                .iter()
                .find(|m| matches!(m.behavior, crate::generators::BehaviorTag::InnerValue { .. }))
                .map(|m| m.tau)
                .unwrap_or(suite.tau_markers[0].tau);
            realizations.extend(suite.realizations.iter().cloned());
            noisy.get_or_insert(suite.noisy.clone());
        }
        let verdict =
            knightian_inner_check(&realizations, &noisy.unwrap(), tau, &[0]).unwrap();
        assert!(verdict.verdict, "worst distance {}", verdict.worst_distance);
    }

    #[test]
    fn certainty_scan_classifies_exact_revival_as_certain() {
        let suite = dataset_d(2, 1.0).unwrap();
        let tau = suite.tau_markers[0].tau;
        let scenario = scenario_from(&suite.noisy, 2, tau);
        let problem = ExtrapolationProblem::new(
            suite.noisy.clone(),
            scenario,
            vec![vec![0.0, 0.0]],
            RelaxationChoice::Finite { energies: vec![0.0, 1.0] },
        );
        let report = certainty_scan(&problem, DEFAULT_CERTAINTY_THRESHOLD).unwrap();
        match &report.classification {
            CertaintyClass::ApproximateFullCertainty { q, max_width } => {
                assert!(*max_width < 1e-5);
                assert!(q[0][0].abs() < 1e-5, "q = {q:?}");
                assert!((q[0][1] - 1.0).abs() < 1e-5);
            }
            other => panic!("expected full certainty, got {other:?}"),
        }
    }

    #[test]
    fn certainty_scan_flags_vacuous_data_as_knightian_candidate() {
        let noisy = dataset_o(2, 1.0, 1.0).unwrap();
        let scenario = scenario_from(&noisy, 2, 1.7);
        let problem = ExtrapolationProblem::new(
            noisy,
            scenario,
            vec![vec![0.0, 0.0]],
            RelaxationChoice::Finite { energies: vec![0.0, 0.5, 1.0] },
        );
        let report = certainty_scan(&problem, DEFAULT_CERTAINTY_THRESHOLD).unwrap();
        assert_eq!(report.classification, CertaintyClass::KnightianCandidate);
    }

    #[test]
    fn intervals_shrink_as_the_grid_refines() {
        let noisy = dataset_o(4, 1.0, 0.1).unwrap();
        let scenario = scenario_from(&noisy, 2, 1.5);
        let mut widths = Vec::new();
        for m in [6, 12, 24] {
            let problem = ExtrapolationProblem::new(
                noisy.clone(),
                scenario.clone(),
                vec![vec![0.0, 1.0]],
                RelaxationChoice::HardGrid { e_plus: 2.0, m },
            );
            widths.push(solve_interval(&problem).unwrap().width());
        }
        assert!(widths[1] <= widths[0] + 1e-6, "widths {widths:?}");
        assert!(widths[2] <= widths[1] + 1e-6, "widths {widths:?}");
    }

    #[test]
    fn infeasible_data_is_reported_as_infeasible() {
        // A constant-1 dataset at two times cannot coexist with P(0|t3) = 0
        // under a one-point spectrum, which forces constant statistics.
        let mut noisy = dataset_o(3, 1.0, 0.0).unwrap();
        for point in &mut noisy.dataset.points {
            point.probs[0] = vec![1.0, 0.0];
        }
        noisy.dataset.points[2].probs[0] = vec![0.0, 1.0];
        let scenario = scenario_from(&noisy, 2, 2.0);
        let problem = ExtrapolationProblem::new(
            noisy,
            scenario,
            vec![vec![1.0, 0.0]],
            RelaxationChoice::Finite { energies: vec![0.0] },
        );
        match solve_interval(&problem) {
            Err(Error::Infeasible(_)) => {}
            other => panic!("expected infeasible-data error, got {other:?}"),
        }
    }

    #[test]
    fn selftest_reference_state_sits_exactly_on_the_ladder() {
        for n in [2, 3, 4] {
            let suite = dataset_d(n, 1.0).unwrap();
            let report =
                selftest_diagnostics(&suite.realizations[0], n, 1.0, 0.0, &[]).unwrap();
            assert_eq!(report.overlap_bound, 0.0);
            for o in &report.overlaps {
                assert!(*o < 1e-9, "overlap {o}");
            }
            assert!((report.window_weight - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn selftest_tolerates_small_noise() {
        let n = 3;
        let suite = dataset_d(n, 1.0).unwrap();
        let reference = &suite.realizations[0];
        // Perturb the state by mixing in a fixed orthogonal direction.
        let mut psi = crate::quantum::CVec::zeros(n);
        for k in 0..n {
            psi[k] = Complex64::new(1.0 / (n as f64).sqrt(), 0.0);
        }
        let eps = 0.08;
        psi[0] += Complex64::new(eps, 0.0);
        psi[1] -= Complex64::new(eps, 0.0);
        psi /= Complex64::new(psi.norm(), 0.0);
        let perturbed = Realization::from_pure(
            psi,
            reference.hamiltonian.clone(),
            reference.povms.clone(),
        );
        // Measure how badly the perturbed state misses the exact data and
        // use that as the error bar.
        let mut delta = 0.0f64;
        for (j, &t) in suite.noisy.dataset.times.iter().enumerate() {
            let probs = simulate_datapoint(&perturbed, 0, t).unwrap();
            let l1: f64 = probs
                .iter()
                .zip(&suite.noisy.dataset.points[j].probs[0])
                .map(|(a, b)| (a - b).abs())
                .sum();
            delta = delta.max(l1);
        }
        let report = selftest_diagnostics(&perturbed, n, 1.0, delta, &[]).unwrap();
        for o in &report.overlaps {
            assert!(
                *o <= report.overlap_bound + 1e-9,
                "overlap {o} exceeds bound {}",
                report.overlap_bound
            );
        }
        assert!(report.window_weight >= 0.9, "window weight {}", report.window_weight);
    }

    #[test]
    fn witness_vanishes_on_the_ladder_and_stays_nonnegative() {
        for n in [3, 4, 5] {
            let e_plus = 1.3;
            for k in 0..n {
                let e = k as f64 * e_plus / (n - 1) as f64;
                assert!(witness_polynomial(e, n, e_plus).abs() < 1e-12);
            }
            for s in 0..=400 {
                let e = s as f64 / 400.0 * e_plus;
                assert!(
                    witness_polynomial(e, n, e_plus) >= -1e-12,
                    "V({e}) < 0 for n = {n}"
                );
            }
        }
    }

    #[test]
    fn sign_flip_witness_fits_its_own_uniform_data() {
        // Consistency between the interval test's witness value and the
        // bundled realization.
        let suite = realization_problematic_sin(4, 1.0).unwrap();
        let probs = simulate_datapoint(&suite.realizations[0], 0, 2.0).unwrap();
        let witness = 0.5 + 0.5 * 0.5f64.sin().powi(4);
        assert!((probs[1] - witness).abs() < 1e-9);
    }
}
