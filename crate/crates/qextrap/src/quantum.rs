//! Realizations, timelines, and forward simulation.
//!
//! A realization is a tuple (state, Hamiltonian, POVM family) on a
//! finite-dimensional Hilbert space. It generates the timeline
//! `P(a|x,t) = tr(e^{-iHt} rho e^{iHt} M_{a|x})`, evaluated exactly through
//! the eigendecomposition of `H` (never a series expansion, so arbitrarily
//! long times stay exact to rounding).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod serdes;

/// Default absolute tolerance for validation checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Hermitian-symmetry tolerance for matrices that claim to be Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

// ---------------------------------------------------------------------------
// Small complex-matrix helpers
// ---------------------------------------------------------------------------

/// Largest absolute deviation from Hermitian symmetry, `max |M - M†|`.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let adj = m.adjoint();
    (m - adj).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Eigendecomposition of a Hermitian matrix: `(eigenvalues, eigenvectors)`
/// with `M = V diag(e) V†`.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = m.clone().symmetric_eigen();
    (eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors)
}

/// Minimum eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// PSD square root of a Hermitian PSD matrix (negative ripple clipped to 0).
pub fn psd_sqrt(m: &CMat) -> CMat {
    let (ev, v) = hermitian_eigen(m);
    let d = CMat::from_fn(ev.len(), ev.len(), |i, j| {
        if i == j {
            Complex64::new(ev[i].max(0.0).sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    &v * d * v.adjoint()
}

/// Moore-Penrose pseudo-inverse of a Hermitian matrix, inverting only
/// eigenvalues with `|e| > cutoff`.
pub fn hermitian_pinv(m: &CMat, cutoff: f64) -> CMat {
    let (ev, v) = hermitian_eigen(m);
    let d = CMat::from_fn(ev.len(), ev.len(), |i, j| {
        if i == j && ev[i].abs() > cutoff {
            Complex64::new(1.0 / ev[i], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    &v * d * v.adjoint()
}

/// Projector onto the span of eigenvectors with `|e| > cutoff`.
pub fn range_projector(m: &CMat, cutoff: f64) -> CMat {
    let (ev, v) = hermitian_eigen(m);
    let d = CMat::from_fn(ev.len(), ev.len(), |i, j| {
        if i == j && ev[i].abs() > cutoff {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    &v * d * v.adjoint()
}

/// Kronecker product.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// `|v><v|` for a complex vector.
pub fn projector(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// Identity matrix.
pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// A finite-dimensional model generating a timeline: density matrix `state`,
/// Hamiltonian, and one POVM (list of PSD elements summing to identity) per
/// measurement setting.
///
/// The canonical internal state form is a density matrix; use
/// [`Realization::from_pure`] to build one from a state vector.
#[derive(Debug, Clone)]
pub struct Realization {
    pub dim: usize,
    pub state: CMat,
    pub hamiltonian: CMat,
    /// `povms[x][a]` is the element for outcome `a` of setting `x`.
    pub povms: Vec<Vec<CMat>>,
}

/// Measurement layout plus time grid and extrapolation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub settings: usize,
    pub outcomes: usize,
    /// Strictly increasing measurement times.
    pub times: Vec<f64>,
    /// Extrapolation time (any real, typically beyond the last time).
    pub tau: f64,
}

/// Outcome probabilities at one time: `probs[x][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datapoint {
    pub probs: Vec<Vec<f64>>,
}

/// Datapoints on a finite time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub points: Vec<Datapoint>,
}

/// Estimated dataset with per-(setting, time) l1 error bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyDataset {
    pub dataset: Dataset,
    /// `delta[x][j]` bounds `sum_a |P(a|x,t_j) - estimate(a|x,t_j)|`.
    pub delta: Vec<Vec<f64>>,
}

/// Constraint on the energy content of admissible models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EnergyConstraint {
    /// Hamiltonian spectrum contained in `[0, e_plus]`.
    Hard { e_plus: f64 },
    /// Spectral weight of the state at energies `>= e_plus` at most `epsilon`.
    Soft { e_plus: f64, epsilon: f64 },
    /// Mean energy `tr(rho H)` at most `e_bar`.
    Average { e_bar: f64 },
}

impl EnergyConstraint {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            EnergyConstraint::Hard { e_plus } => e_plus > 0.0,
            EnergyConstraint::Soft { e_plus, epsilon } => {
                e_plus > 0.0 && (0.0..=1.0).contains(&epsilon)
            }
            EnergyConstraint::Average { e_bar } => e_bar > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid energy constraint {self:?}")))
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.settings == 0 || self.outcomes == 0 {
            return Err(Error::Validation("scenario needs >= 1 setting and outcome".into()));
        }
        for w in self.times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

impl Datapoint {
    /// Check each setting's column is a probability distribution.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (x, col) in self.probs.iter().enumerate() {
            let sum: f64 = col.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Validation(format!(
                    "probabilities for setting {x} sum to {sum}, not 1"
                )));
            }
            for (a, &p) in col.iter().enumerate() {
                if !(-tol..=1.0 + tol).contains(&p) {
                    return Err(Error::Validation(format!(
                        "probability P({a}|{x}) = {p} outside [0,1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Dataset {
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.times.len() != self.points.len() {
            return Err(Error::Shape(format!(
                "{} times but {} datapoints",
                self.times.len(),
                self.points.len()
            )));
        }
        for p in &self.points {
            p.validate(tol)?;
        }
        Ok(())
    }
}

impl NoisyDataset {
    pub fn validate(&self, tol: f64) -> Result<()> {
        self.dataset.validate(tol)?;
        for col in &self.delta {
            if col.len() != self.dataset.times.len() {
                return Err(Error::Shape("delta grid does not match time grid".into()));
            }
            if col.iter().any(|&d| d < 0.0) {
                return Err(Error::Validation("negative error bar".into()));
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> usize {
        self.delta.len()
    }

    pub fn outcomes(&self) -> usize {
        self.dataset.points.first().map(|p| p.probs[0].len()).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Realization construction and validation
// ---------------------------------------------------------------------------

impl Realization {
    /// Build from a pure state vector (normalized internally to a density
    /// matrix).
    pub fn from_pure(psi: CVec, hamiltonian: CMat, povms: Vec<Vec<CMat>>) -> Self {
        let dim = psi.len();
        Realization { dim, state: projector(&psi), hamiltonian, povms }
    }

    pub fn settings(&self) -> usize {
        self.povms.len()
    }

    pub fn outcomes(&self) -> usize {
        self.povms.first().map(Vec::len).unwrap_or(0)
    }

    /// Check all structural invariants with the given tolerance.
    pub fn validate_with_tol(&self, tol: f64) -> Result<()> {
        let d = self.dim;
        let square = |m: &CMat, what: &str| -> Result<()> {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Validation(format!(
                    "{what} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        square(&self.state, "state")?;
        square(&self.hamiltonian, "hamiltonian")?;
        if hermiticity_defect(&self.state) > HERMITIAN_TOL {
            return Err(Error::Validation("state is not Hermitian".into()));
        }
        if hermiticity_defect(&self.hamiltonian) > HERMITIAN_TOL {
            return Err(Error::Validation("hamiltonian is not Hermitian".into()));
        }
        let tr: Complex64 = self.state.trace();
        if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
            return Err(Error::Validation(format!("state trace {tr} differs from 1")));
        }
        if min_eigenvalue(&self.state) < -tol {
            return Err(Error::Validation(format!(
                "state has negative eigenvalue {}",
                min_eigenvalue(&self.state)
            )));
        }
        if min_eigenvalue(&self.hamiltonian) < -tol {
            return Err(Error::Validation(format!(
                "hamiltonian has negative eigenvalue {}; shift it so H >= 0",
                min_eigenvalue(&self.hamiltonian)
            )));
        }
        if self.povms.is_empty() {
            return Err(Error::Validation("realization needs at least one setting".into()));
        }
        for (x, povm) in self.povms.iter().enumerate() {
            let mut sum = CMat::zeros(d, d);
            for (a, m) in povm.iter().enumerate() {
                square(m, &format!("POVM element ({a}|{x})"))?;
                if hermiticity_defect(m) > HERMITIAN_TOL {
                    return Err(Error::Validation(format!(
                        "POVM element ({a}|{x}) is not Hermitian"
                    )));
                }
                if min_eigenvalue(m) < -tol {
                    return Err(Error::Validation(format!(
                        "POVM element ({a}|{x}) has negative eigenvalue {}",
                        min_eigenvalue(m)
                    )));
                }
                sum += m;
            }
            let defect = (&sum - identity(d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if defect > tol {
                return Err(Error::Validation(format!(
                    "POVM for setting {x} sums to identity only within {defect}"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_tol(DEFAULT_TOL)
    }

    /// Is the state (numerically) rank one?
    pub fn state_is_pure(&self) -> bool {
        let purity: Complex64 = (&self.state * &self.state).trace();
        (purity.re - 1.0).abs() <= 1e-9
    }
}

// ---------------------------------------------------------------------------
// Time evolution and simulation
// ---------------------------------------------------------------------------

/// Cached eigendecomposition of a realization's Hamiltonian, for repeated
/// exact evaluations of `e^{-iHt}`.
pub struct TimeEvolution<'a> {
    r: &'a Realization,
    energies: Vec<f64>,
    /// Eigenbasis `V` with `H = V diag(E) V†`.
    basis: CMat,
    /// State rotated into the eigenbasis, `V† rho V`.
    state_eig: CMat,
    /// POVMs rotated into the eigenbasis.
    povms_eig: Vec<Vec<CMat>>,
}

impl<'a> TimeEvolution<'a> {
    pub fn new(r: &'a Realization) -> Result<Self> {
        r.validate()?;
        let (energies, basis) = hermitian_eigen(&r.hamiltonian);
        let state_eig = basis.adjoint() * &r.state * &basis;
        let povms_eig = r
            .povms
            .iter()
            .map(|povm| povm.iter().map(|m| basis.adjoint() * m * &basis).collect())
            .collect();
        Ok(TimeEvolution { r, energies, basis, state_eig, povms_eig })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `e^{-iHt} rho e^{iHt}` in the original basis.
    pub fn state_at(&self, t: f64) -> CMat {
        let d = self.r.dim;
        let mut rho = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let phase = Complex64::from_polar(1.0, -(self.energies[i] - self.energies[j]) * t);
                rho[(i, j)] = self.state_eig[(i, j)] * phase;
            }
        }
        &self.basis * rho * self.basis.adjoint()
    }

    /// Probabilities of all outcomes of setting `x` at time `t`. With
    /// `jitter > 0`, averages over measurement times `N(t, jitter^2)` in
    /// closed form: each oscillatory term `e^{-i w t}` picks up the factor
    /// `e^{-w^2 jitter^2 / 2}`.
    pub fn probabilities(&self, x: usize, t: f64, jitter: f64) -> Result<Vec<f64>> {
        let povm = self
            .povms_eig
            .get(x)
            .ok_or_else(|| Error::Shape(format!("setting {x} out of range")))?;
        let d = self.r.dim;
        let mut out = Vec::with_capacity(povm.len());
        for m in povm {
            let mut p = Complex64::new(0.0, 0.0);
            // tr(rho(t) M) = sum_ij rho_ij M_ji e^{-i(E_i - E_j) t}.
            for i in 0..d {
                for j in 0..d {
                    let w = self.energies[i] - self.energies[j];
                    let mut factor = Complex64::from_polar(1.0, -w * t);
                    if jitter > 0.0 {
                        factor *= (-w * w * jitter * jitter / 2.0).exp();
                    }
                    p += self.state_eig[(i, j)] * m[(j, i)] * factor;
                }
            }
            out.push(p.re);
        }
        Ok(out)
    }
}

/// `P(a|x,t)` for all outcomes `a`, via exact eigendecomposition.
pub fn simulate_datapoint(r: &Realization, x: usize, t: f64) -> Result<Vec<f64>> {
    TimeEvolution::new(r)?.probabilities(x, t, 0.0)
}

/// Simulate all settings at all scenario times (excluding `tau`).
pub fn simulate_dataset(r: &Realization, scenario: &Scenario) -> Result<Dataset> {
    scenario.validate()?;
    simulate_at_times(r, &scenario.times)
}

/// Simulate all settings at an explicit list of times.
pub fn simulate_at_times(r: &Realization, times: &[f64]) -> Result<Dataset> {
    let ev = TimeEvolution::new(r)?;
    let mut points = Vec::with_capacity(times.len());
    for &t in times {
        let probs = (0..r.settings())
            .map(|x| ev.probabilities(x, t, 0.0))
            .collect::<Result<Vec<_>>>()?;
        points.push(Datapoint { probs });
    }
    Ok(Dataset { times: times.to_vec(), points })
}

/// Closed-form Gaussian time-jitter average of the outcome probabilities of
/// setting `x` around mean time `t_mean` with standard deviation `jitter`.
pub fn gaussian_time_average(
    r: &Realization,
    x: usize,
    t_mean: f64,
    jitter: f64,
) -> Result<Vec<f64>> {
    if jitter < 0.0 {
        return Err(Error::Precondition("jitter must be >= 0".into()));
    }
    TimeEvolution::new(r)?.probabilities(x, t_mean, jitter)
}

// ---------------------------------------------------------------------------
// Purification and mixtures
// ---------------------------------------------------------------------------

/// Purify a realization: pure states are returned unchanged; mixed states are
/// lifted to the doubled space with state `sum_i sqrt(l_i) v_i (x) e_i`,
/// `H (x) I`, and `M (x) I`, which generates the identical timeline.
pub fn purify(r: &Realization) -> Result<Realization> {
    r.validate()?;
    if r.state_is_pure() {
        return Ok(r.clone());
    }
    let d = r.dim;
    let (ev, v) = hermitian_eigen(&r.state);
    let mut psi = CVec::zeros(d * d);
    for (i, &l) in ev.iter().enumerate() {
        if l > 0.0 {
            let w = l.max(0.0).sqrt();
            for j in 0..d {
                // kron(v_i, e_i) places component j of v_i at index j*d + i.
                psi[j * d + i] += v[(j, i)] * Complex64::new(w, 0.0);
            }
        }
    }
    let id = identity(d);
    let h = kron(&r.hamiltonian, &id);
    let povms = r
        .povms
        .iter()
        .map(|povm| povm.iter().map(|m| kron(m, &id)).collect())
        .collect();
    Ok(Realization::from_pure(psi, h, povms))
}

/// Direct-sum mixture of two realizations with weight `lambda` on the first;
/// its timeline is the pointwise mixture of the two timelines.
pub fn direct_sum_mixture(r1: &Realization, r2: &Realization, lambda: f64) -> Result<Realization> {
    if r1.settings() != r2.settings() || r1.outcomes() != r2.outcomes() {
        return Err(Error::Shape("mixture needs matching settings/outcomes".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Precondition("lambda must be in [0,1]".into()));
    }
    let (d1, d2) = (r1.dim, r2.dim);
    let d = d1 + d2;
    let block = |a: &CMat, b: &CMat| -> CMat {
        let mut m = CMat::zeros(d, d);
        m.view_mut((0, 0), (d1, d1)).copy_from(a);
        m.view_mut((d1, d1), (d2, d2)).copy_from(b);
        m
    };
    let state = block(&r1.state.scale(lambda), &r2.state.scale(1.0 - lambda));
    let h = block(&r1.hamiltonian, &r2.hamiltonian);
    let povms = r1
        .povms
        .iter()
        .zip(&r2.povms)
        .map(|(p1, p2)| p1.iter().zip(p2).map(|(a, b)| block(a, b)).collect())
        .collect();
    Ok(Realization { dim: d, state, hamiltonian: h, povms })
}

// ---------------------------------------------------------------------------
// Validation against energy constraints
// ---------------------------------------------------------------------------

/// One check of a constraint-validation report.
#[derive(Debug, Clone)]
pub struct ConstraintCheck {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
}

/// Outcome of validating a realization against an energy constraint.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Check a realization against an energy constraint; structural invariants
/// are reported as a failed check rather than an error.
pub fn validate_realization(r: &Realization, c: &EnergyConstraint) -> ValidationReport {
    validate_realization_with_tol(r, c, DEFAULT_TOL)
}

pub fn validate_realization_with_tol(
    r: &Realization,
    c: &EnergyConstraint,
    tol: f64,
) -> ValidationReport {
    let mut checks = Vec::new();
    match r.validate_with_tol(tol) {
        Ok(()) => checks.push(ConstraintCheck {
            name: "structure".into(),
            passed: true,
            measured: 0.0,
            bound: tol,
        }),
        Err(e) => {
            checks.push(ConstraintCheck {
                name: format!("structure: {e}"),
                passed: false,
                measured: f64::NAN,
                bound: tol,
            });
            return ValidationReport { checks };
        }
    }
    match *c {
        EnergyConstraint::Hard { e_plus } => {
            let ev = hermitian_eigenvalues(&r.hamiltonian);
            let max = ev.last().copied().unwrap_or(0.0);
            let min = ev.first().copied().unwrap_or(0.0);
            checks.push(ConstraintCheck {
                name: "spectrum lower edge".into(),
                passed: min >= -tol,
                measured: min,
                bound: 0.0,
            });
            checks.push(ConstraintCheck {
                name: "spectrum upper edge".into(),
                passed: max <= e_plus + tol,
                measured: max,
                bound: e_plus,
            });
        }
        EnergyConstraint::Soft { e_plus, epsilon } => {
            // Weight of the state on eigenspaces with energy >= e_plus; the
            // cut sits just below e_plus so on-threshold eigenvalues count.
            let (ev, v) = hermitian_eigen(&r.hamiltonian);
            let state_eig = v.adjoint() * &r.state * &v;
            let weight: f64 = ev
                .iter()
                .enumerate()
                .filter(|(_, &e)| e >= e_plus - 1e-12)
                .map(|(i, _)| state_eig[(i, i)].re)
                .sum();
            checks.push(ConstraintCheck {
                name: "high-energy spectral weight".into(),
                passed: weight <= epsilon + tol,
                measured: weight,
                bound: epsilon,
            });
        }
        EnergyConstraint::Average { e_bar } => {
            let mean = (&r.state * &r.hamiltonian).trace().re;
            checks.push(ConstraintCheck {
                name: "mean energy".into(),
                passed: mean <= e_bar + tol,
                measured: mean,
                bound: e_bar,
            });
        }
    }
    ValidationReport { checks }
}

// ---------------------------------------------------------------------------
// Fit predicate
// ---------------------------------------------------------------------------

/// Per-(setting, time) fit violations `sum_a |P - estimate| - delta`.
#[derive(Debug, Clone)]
pub struct FitReport {
    /// `violations[x][j]`.
    pub violations: Vec<Vec<f64>>,
    pub max_violation: f64,
}

impl FitReport {
    pub fn fits(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Compare a simulated dataset against noisy estimates: the dataset fits when
/// every `sum_a |P(a|x,t_j) - estimate(a|x,t_j)|` stays within `delta(x,j)`.
pub fn fit_check(d: &Dataset, nd: &NoisyDataset) -> Result<FitReport> {
    if d.times.len() != nd.dataset.times.len() {
        return Err(Error::Shape(format!(
            "dataset has {} times, estimates have {}",
            d.times.len(),
            nd.dataset.times.len()
        )));
    }
    for (a, b) in d.times.iter().zip(&nd.dataset.times) {
        if (a - b).abs() > 1e-12 {
            return Err(Error::Shape(format!("time grids differ: {a} vs {b}")));
        }
    }
    let settings = nd.settings();
    let mut violations = vec![Vec::with_capacity(d.times.len()); settings];
    let mut max_violation = f64::NEG_INFINITY;
    for (j, (p, q)) in d.points.iter().zip(&nd.dataset.points).enumerate() {
        if p.probs.len() != settings || q.probs.len() != settings {
            return Err(Error::Shape("setting counts differ".into()));
        }
        for x in 0..settings {
            if p.probs[x].len() != q.probs[x].len() {
                return Err(Error::Shape("outcome counts differ".into()));
            }
            let l1: f64 = p.probs[x]
                .iter()
                .zip(&q.probs[x])
                .map(|(a, b)| (a - b).abs())
                .sum();
            let v = l1 - nd.delta[x][j];
            violations[x].push(v);
            max_violation = max_violation.max(v);
        }
    }
    if !max_violation.is_finite() {
        max_violation = 0.0;
    }
    Ok(FitReport { violations, max_violation })
}

/// Convenience: simulate `r` on the estimate grid and run [`fit_check`].
pub fn realization_fits(r: &Realization, nd: &NoisyDataset) -> Result<FitReport> {
    let d = simulate_at_times(r, &nd.dataset.times)?;
    fit_check(&d, nd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Qubit with H = diag(0, w), state |+>, measuring in the |+>/|-> basis:
    /// P(+|t) = (1 + cos(w t)) / 2.
    fn rabi_qubit(w: f64) -> Realization {
        let psi = CVec::from_vec(vec![c(std::f64::consts::FRAC_1_SQRT_2, 0.0); 2]);
        let h = CMat::from_diagonal(&CVec::from_vec(vec![c(0.0, 0.0), c(w, 0.0)]));
        let plus = projector(&psi);
        let minus = identity(2) - &plus;
        Realization::from_pure(psi, h, vec![vec![plus, minus]])
    }

    #[test]
    fn rabi_oscillation_matches_closed_form() {
        let w = 1.3;
        let r = rabi_qubit(w);
        for &t in &[0.0, 0.4, 2.0, 17.5, -3.1, 1e4] {
            let p = simulate_datapoint(&r, 0, t).unwrap();
            let expected = 0.5 * (1.0 + (w * t).cos());
            assert!((p[0] - expected).abs() < 1e-9, "t={t}: {} vs {expected}", p[0]);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evolved_state_keeps_trace_and_spectrum() {
        let r = rabi_qubit(0.7);
        let ev = TimeEvolution::new(&r).unwrap();
        let rho = ev.state_at(5.3);
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        assert!(hermiticity_defect(&rho) < 1e-12);
        // Unitary evolution preserves purity.
        assert!(((&rho * &rho).trace().re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_jitter_damps_each_frequency() {
        let w = 2.0;
        let r = rabi_qubit(w);
        let sigma = 0.3;
        let t = 1.1;
        let avg = gaussian_time_average(&r, 0, t, sigma).unwrap();
        let damping = (-w * w * sigma * sigma / 2.0).exp();
        let expected = 0.5 * (1.0 + (w * t).cos() * damping);
        assert!((avg[0] - expected).abs() < 1e-9, "{} vs {expected}", avg[0]);
        // Midpoint-rule quadrature over the Gaussian agrees.
        let n = 4001;
        let span = 16.0 * sigma;
        let mut quad = 0.0;
        for k in 0..n {
            let s = t - span / 2.0 + (k as f64 + 0.5) * span / n as f64;
            let weight = (-(s - t) * (s - t) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            quad += weight * simulate_datapoint(&r, 0, s).unwrap()[0] * span / n as f64;
        }
        assert!((avg[0] - quad).abs() < 1e-5, "{} vs quadrature {quad}", avg[0]);
    }

    #[test]
    fn purification_preserves_the_timeline() {
        let mixed = direct_sum_mixture(&rabi_qubit(1.0), &rabi_qubit(2.5), 0.3).unwrap();
        // Trace out purity: the direct sum of two pure states is mixed.
        assert!(!mixed.state_is_pure());
        let pure = purify(&mixed).unwrap();
        assert!(pure.state_is_pure());
        for &t in &[0.0, 0.9, 4.2] {
            let a = simulate_datapoint(&mixed, 0, t).unwrap();
            let b = simulate_datapoint(&pure, 0, t).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mixture_timeline_is_pointwise_mixture() {
        let r1 = rabi_qubit(1.0);
        let r2 = rabi_qubit(3.0);
        let mix = direct_sum_mixture(&r1, &r2, 0.25).unwrap();
        mix.validate().unwrap();
        for &t in &[0.3, 2.7] {
            let p1 = simulate_datapoint(&r1, 0, t).unwrap();
            let p2 = simulate_datapoint(&r2, 0, t).unwrap();
            let pm = simulate_datapoint(&mix, 0, t).unwrap();
            for a in 0..2 {
                assert!((pm[a] - (0.25 * p1[a] + 0.75 * p2[a])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn validation_rejects_malformed_realizations() {
        let mut bad_trace = rabi_qubit(1.0);
        bad_trace.state *= c(2.0, 0.0);
        assert!(bad_trace.validate().is_err());

        let mut negative_h = rabi_qubit(1.0);
        negative_h.hamiltonian[(0, 0)] = c(-1.0, 0.0);
        assert!(negative_h.validate().is_err());

        let mut bad_povm = rabi_qubit(1.0);
        bad_povm.povms[0][1] = identity(2);
        assert!(bad_povm.validate().is_err());
    }

    #[test]
    fn energy_constraint_checks_measure_the_right_quantities() {
        let r = rabi_qubit(2.0);
        assert!(validate_realization(&r, &EnergyConstraint::Hard { e_plus: 2.0 }).passed());
        assert!(!validate_realization(&r, &EnergyConstraint::Hard { e_plus: 1.9 }).passed());
        // Mean energy of |+> under diag(0, 2) is 1.
        assert!(validate_realization(&r, &EnergyConstraint::Average { e_bar: 1.0 }).passed());
        assert!(!validate_realization(&r, &EnergyConstraint::Average { e_bar: 0.99 }).passed());
        // Half the weight sits on the level at the cap.
        let soft = EnergyConstraint::Soft { e_plus: 2.0, epsilon: 0.5 };
        assert!(validate_realization(&r, &soft).passed());
        let tight = EnergyConstraint::Soft { e_plus: 2.0, epsilon: 0.4 };
        assert!(!validate_realization(&r, &tight).passed());
    }

    #[test]
    fn fit_check_applies_l1_error_bars_per_setting_and_time() {
        let r = rabi_qubit(1.0);
        let times = vec![0.0, 1.0];
        let exact = simulate_at_times(&r, &times).unwrap();
        let mut estimates = exact.clone();
        estimates.points[1].probs[0][0] += 0.03;
        estimates.points[1].probs[0][1] -= 0.03;
        // The perturbation costs l1 distance 0.06 at the second time only.
        let noisy = NoisyDataset { dataset: estimates, delta: vec![vec![0.0, 0.061]] };
        assert!(realization_fits(&r, &noisy).unwrap().fits(1e-9));
        let too_tight =
            NoisyDataset { dataset: noisy.dataset.clone(), delta: vec![vec![0.0, 0.059]] };
        assert!(!realization_fits(&r, &too_tight).unwrap().fits(1e-9));
    }

    #[test]
    fn spectral_helpers_satisfy_their_identities() {
        let m = CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.5, 0.5), c(0.5, -0.5),
            c(1.0, 0.0)]);
        let s = psd_sqrt(&m);
        assert!(((&s * &s) - &m).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10);
        let pinv = hermitian_pinv(&m, 1e-12);
        let id = &m * pinv;
        assert!((id - identity(2)).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10);
        let proj = range_projector(&projector(&CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)])), 0.5);
        assert!((proj[(0, 0)].re - 1.0).abs() < 1e-12 && proj[(1, 1)].norm() < 1e-12);
    }
}
