//! Cones of high-energy decay matrices.
//!
//! A decay matrix collects the pairwise phases `integral rho(E) e^{-iE(t_j -
//! t_k)} dE` of an energy measure evaluated at the measurement times. This
//! module provides three tractable outer models of that cone — equal-diagonal
//! PSD, Toeplitz-PSD for lattice times, and a torus moment-matrix hierarchy
//! for times with declared integer structure — plus membership testing,
//! rounding of hierarchy members into the exact cone, and an atomic
//! decomposition for the Toeplitz case.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quantum::{hermitian_eigen, hermiticity_defect, CMat, HERMITIAN_TOL};
use crate::solver::{self, ConicProgram, HermitianVar, LinExpr, Sense, SolveResult, SolveStatus};

/// Default residual below which a membership program counts as feasible.
pub const MEMBERSHIP_TOL: f64 = 1e-7;

// ---------------------------------------------------------------------------
// Time structure
// ---------------------------------------------------------------------------

/// Integer structure of the measurement times: `t_k = sum_j a_kj s_j + t_0`
/// with positive generators `s_j` declared non-congruent by the caller
/// (congruence of reals cannot be decided from floats, so it is never
/// inferred).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeStructure {
    generators: Vec<f64>,
    coeffs: Vec<Vec<i64>>,
    offset: f64,
}

impl TimeStructure {
    pub fn new(generators: Vec<f64>, coeffs: Vec<Vec<i64>>, offset: f64) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::Precondition("need at least one generator".into()));
        }
        if generators.iter().any(|&s| s <= 0.0) {
            return Err(Error::Precondition("generators must be positive".into()));
        }
        if coeffs.is_empty() {
            return Err(Error::Precondition("need at least one time row".into()));
        }
        let n = generators.len();
        if coeffs.iter().any(|row| row.len() != n) {
            return Err(Error::Shape(format!("every coefficient row must have {n} entries")));
        }
        Ok(TimeStructure { generators, coeffs, offset })
    }

    /// One-generator lattice `t_k = index_k * step + offset`.
    pub fn lattice(step: f64, indices: &[i64], offset: f64) -> Result<Self> {
        TimeStructure::new(
            vec![step],
            indices.iter().map(|&i| vec![i]).collect(),
            offset,
        )
    }

    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn num_times(&self) -> usize {
        self.coeffs.len()
    }

    pub fn generators(&self) -> &[f64] {
        &self.generators
    }

    pub fn coeffs(&self) -> &[Vec<i64>] {
        &self.coeffs
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Reconstruct the times encoded by the structure.
    pub fn times(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .map(|row| {
                self.offset
                    + row
                        .iter()
                        .zip(&self.generators)
                        .map(|(&a, &s)| a as f64 * s)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Check the reconstructed times match the given ones within 1e-9.
    pub fn check_times(&self, times: &[f64]) -> Result<()> {
        let own = self.times();
        if own.len() != times.len() {
            return Err(Error::Shape(format!(
                "structure encodes {} times, scenario has {}",
                own.len(),
                times.len()
            )));
        }
        for (k, (a, b)) in own.iter().zip(times).enumerate() {
            if (a - b).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "time {k}: structure gives {a}, scenario has {b}"
                )));
            }
        }
        Ok(())
    }

    /// Largest difference `|a_ij - a_kl|` over all coefficient entries; the
    /// minimum admissible moment order.
    pub fn coeff_spread(&self) -> i64 {
        let all: Vec<i64> = self.coeffs.iter().flatten().copied().collect();
        let max = all.iter().max().copied().unwrap_or(0);
        let min = all.iter().min().copied().unwrap_or(0);
        max - min
    }

    /// Half the largest per-generator coefficient difference, rounded up:
    /// the degree parameter of the rounding bound.
    pub fn half_degree(&self) -> i64 {
        let n = self.num_generators();
        let mut worst = 0i64;
        for l in 0..n {
            let col: Vec<i64> = self.coeffs.iter().map(|row| row[l]).collect();
            let spread = col.iter().max().unwrap() - col.iter().min().unwrap();
            worst = worst.max(spread);
        }
        (worst + 1) / 2
    }

    /// Coefficient difference vector `a_k - a_j` (indexes a decay entry).
    fn diff(&self, j: usize, k: usize) -> Vec<i64> {
        (0..self.num_generators()).map(|l| self.coeffs[k][l] - self.coeffs[j][l]).collect()
    }
}

// ---------------------------------------------------------------------------
// Decay models
// ---------------------------------------------------------------------------

/// Tractable outer model for the decay-matrix cone.
#[derive(Debug, Clone, PartialEq)]
pub enum DecayMatrixModel {
    /// PSD with all diagonal entries equal. Exact for three mutually
    /// non-congruent time differences; an outer bound otherwise.
    EqualDiagPsd,
    /// PSD and constant along diagonals. Exact when the times lie on a
    /// one-generator lattice.
    ToeplitzPsd,
    /// Torus moment-matrix relaxation of the given order over the declared
    /// time structure. Converges to the exact cone as the order grows.
    Moment { order: usize, structure: TimeStructure },
}

impl DecayMatrixModel {
    /// Check the model can constrain an `n_times x n_times` decay block.
    pub fn validate(&self, n_times: usize) -> Result<()> {
        if n_times == 0 {
            return Err(Error::Precondition("need at least one time".into()));
        }
        if let DecayMatrixModel::Moment { order, structure } = self {
            if structure.num_times() != n_times {
                return Err(Error::Shape(format!(
                    "time structure has {} rows, decay block needs {n_times}",
                    structure.num_times()
                )));
            }
            let spread = structure.coeff_spread();
            if (*order as i64) < spread {
                return Err(Error::Precondition(format!(
                    "moment order {order} below the required minimum {spread} \
                     (the largest coefficient difference)"
                )));
            }
            let n = structure.num_generators();
            if n > 3 {
                return Err(Error::Unsupported(format!(
                    "moment model supports at most 3 generators (matrix side \
                     (2*order+1)^n); got {n}"
                )));
            }
        }
        Ok(())
    }
}

/// Variable blocks emitted by [`decay_constraints`].
#[derive(Debug, Clone)]
pub struct DecayBlock {
    /// The constrained decay matrix variable.
    pub gamma: HermitianVar,
    /// The auxiliary moment matrix, present for the moment model.
    pub moment: Option<HermitianVar>,
}

/// Enumerate the index vectors `{-order..order}^n` in lexicographic order.
fn moment_indices(order: i64, n: usize) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * (2 * order as usize + 1));
        for prefix in &out {
            for v in -order..=order {
                let mut row = prefix.clone();
                row.push(v);
                next.push(row);
            }
        }
        out = next;
    }
    out
}

/// Add the constraints making `gamma` a member of the model cone; returns
/// handles to the created variable blocks.
pub fn decay_constraints(
    p: &mut ConicProgram,
    model: &DecayMatrixModel,
    n_times: usize,
) -> Result<DecayBlock> {
    model.validate(n_times)?;
    let gamma = p.hermitian_psd(n_times);
    let mut moment = None;
    match model {
        DecayMatrixModel::EqualDiagPsd => {
            for j in 1..n_times {
                let mut e = gamma.re(j, j);
                e.sub(&gamma.re(0, 0));
                p.add_eq(e, 0.0);
            }
        }
        DecayMatrixModel::ToeplitzPsd => {
            // Entries constant along every diagonal.
            for off in 0..n_times {
                for j in 0..n_times.saturating_sub(off + 1) {
                    let (a, b) = ((j, j + off), (j + 1, j + 1 + off));
                    let mut re = gamma.re(a.0, a.1);
                    re.sub(&gamma.re(b.0, b.1));
                    p.add_eq(re, 0.0);
                    if off > 0 {
                        let mut im = gamma.im(a.0, a.1);
                        im.sub(&gamma.im(b.0, b.1));
                        p.add_eq(im, 0.0);
                    }
                }
            }
        }
        DecayMatrixModel::Moment { order, structure } => {
            let n = structure.num_generators();
            let idx = moment_indices(*order as i64, n);
            let w = p.hermitian_psd(idx.len());

            // Entries of the moment matrix depend only on the index
            // difference; tie every entry to the first with the same one.
            let mut canon: HashMap<Vec<i64>, (usize, usize)> = HashMap::new();
            for r in 0..idx.len() {
                for c in r..idx.len() {
                    let d: Vec<i64> = (0..n).map(|l| idx[c][l] - idx[r][l]).collect();
                    match canon.get(&d) {
                        None => {
                            canon.insert(d, (r, c));
                        }
                        Some(&(r0, c0)) => {
                            let mut re = w.re(r, c);
                            re.sub(&w.re(r0, c0));
                            p.add_eq(re, 0.0);
                            let mut im = w.im(r, c);
                            im.sub(&w.im(r0, c0));
                            p.add_eq(im, 0.0);
                        }
                    }
                }
            }

            // gamma_jk equals the moment at difference a_k - a_j. A
            // representative entry always exists because the order bounds
            // every per-generator difference.
            for j in 0..n_times {
                for k in j..n_times {
                    let d = structure.diff(j, k);
                    let (r, c) = moment_entry_for(&d, *order as i64, &idx);
                    let mut re = gamma.re(j, k);
                    re.sub(&w.re(r, c));
                    p.add_eq(re, 0.0);
                    if j != k {
                        let mut im = gamma.im(j, k);
                        im.sub(&w.im(r, c));
                        p.add_eq(im, 0.0);
                    }
                }
            }
            moment = Some(w);
        }
    }
    Ok(DecayBlock { gamma, moment })
}

/// Find moment-matrix coordinates `(r, c)` with `idx[c] - idx[r] = d`.
fn moment_entry_for(d: &[i64], order: i64, idx: &[Vec<i64>]) -> (usize, usize) {
    let n = d.len();
    let mut vr = Vec::with_capacity(n);
    let mut vc = Vec::with_capacity(n);
    for &dl in d {
        debug_assert!(dl.abs() <= order);
        if dl >= 0 {
            vr.push(0);
            vc.push(dl);
        } else {
            vr.push(-dl);
            vc.push(0);
        }
    }
    let pos = |v: &Vec<i64>| idx.iter().position(|w| w == v).expect("index in range");
    (pos(&vr), pos(&vc))
}

// ---------------------------------------------------------------------------
// Membership
// ---------------------------------------------------------------------------

/// Result of a decay-cone membership test.
#[derive(Debug, Clone)]
pub struct MembershipVerdict {
    pub feasible: bool,
    /// Optimal entrywise distance from the tested matrix to the model cone.
    pub residual: f64,
    /// The nearest cone member found by the solver.
    pub nearest: CMat,
    pub solve: SolveResult,
}

/// Test whether a Hermitian matrix lies in the model cone by minimizing the
/// entrywise distance to a member; feasible when the distance is below
/// `MEMBERSHIP_TOL` scaled by the matrix magnitude.
pub fn membership_decay(gamma: &CMat, model: &DecayMatrixModel) -> Result<MembershipVerdict> {
    if gamma.nrows() != gamma.ncols() {
        return Err(Error::Shape("decay matrix must be square".into()));
    }
    if hermiticity_defect(gamma) > HERMITIAN_TOL {
        return Err(Error::Precondition("decay matrix must be Hermitian".into()));
    }
    let n = gamma.nrows();
    let mut p = ConicProgram::new();
    let block = decay_constraints(&mut p, model, n)?;
    let s = p.nonneg_var();
    for j in 0..n {
        for k in j..n {
            let target = gamma[(j, k)];
            let mut parts = vec![(block.gamma.re(j, k), target.re)];
            if j != k {
                // The diagonal imaginary part is identically zero.
                parts.push((block.gamma.im(j, k), target.im));
            }
            for (expr, val) in parts {
                let mut hi = expr.clone();
                hi.push(s, -1.0);
                p.add_le(hi, val);
                let mut lo = expr.scaled(-1.0);
                lo.push(s, -1.0);
                p.add_le(lo, -val);
            }
        }
    }
    p.set_objective(Sense::Minimize, LinExpr::var(s));
    let solve = solver::solve(&p)?;
    if solve.status != SolveStatus::Optimal {
        return Err(Error::Solver(format!(
            "membership program ended with status {:?}",
            solve.status
        )));
    }
    let scale = gamma.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let residual = solve.objective.max(0.0);
    Ok(MembershipVerdict {
        feasible: residual <= MEMBERSHIP_TOL * scale,
        residual,
        nearest: block.gamma.value(&solve.x),
        solve,
    })
}

// ---------------------------------------------------------------------------
// Rounding hierarchy members into the exact cone
// ---------------------------------------------------------------------------

/// Mixing weight for rounding an order-`order` hierarchy member of an
/// `n_times`-point decay matrix over `n_gen` generators with degree `d`.
pub fn rounding_epsilon(n_times: usize, n_gen: usize, d: i64, order: usize) -> f64 {
    let ratio = 1.0 - 6.0 * (d * d) as f64 / (order * order) as f64;
    (n_times * (n_times - 1)) as f64 * (ratio.powi(-(n_gen as i32)) - 1.0)
}

/// Mix a moment-hierarchy member with the scaled identity so the result lies
/// in the exact decay cone: `(gamma + eps*gamma_11*I) / (1 + eps)`.
pub fn round_to_feasible(gamma: &CMat, order: usize, structure: &TimeStructure) -> Result<CMat> {
    let n = gamma.nrows();
    if gamma.ncols() != n || structure.num_times() != n {
        return Err(Error::Shape("matrix size must match the time structure".into()));
    }
    let d = structure.half_degree();
    if (order as i64) < 3 * d {
        return Err(Error::Precondition(format!(
            "rounding needs order >= 3*d = {}, got {order}",
            3 * d
        )));
    }
    let eps = rounding_epsilon(n, structure.num_generators(), d, order);
    if eps > 1.0 {
        return Err(Error::Precondition(format!(
            "rounding weight eps = {eps} exceeds 1; increase the order"
        )));
    }
    let g11 = gamma[(0, 0)].re;
    let mixed = (gamma + CMat::identity(n, n).scale(eps * g11)).scale(1.0 / (1.0 + eps));
    Ok(mixed)
}

// ---------------------------------------------------------------------------
// Moment vectors (for building feasible samples and cross-checks)
// ---------------------------------------------------------------------------

/// Moments `y(k) = sum_l w_l prod_j z_{l,j}^{k_j}` of an atomic measure on
/// the torus, with conjugate symmetry `y(-k) = conj(y(k))`.
#[derive(Debug, Clone)]
pub struct MomentVector {
    pub n: usize,
    y: HashMap<Vec<i64>, Complex64>,
}

impl MomentVector {
    /// Moments of an atomic measure: each atom is (torus angles, weight >= 0)
    /// with `z_j = e^{+i angle_j}`; moments are tabulated for all index
    /// vectors in `{-2*order..2*order}^n` (enough for an order-`order`
    /// moment matrix). With `angle_j = E * s_j` this reproduces the decay
    /// matrix of an energy atom on a time structure with generators `s_j`.
    pub fn from_atoms(n: usize, atoms: &[(Vec<f64>, f64)], order: usize) -> Result<Self> {
        if atoms.iter().any(|(a, w)| a.len() != n || *w < 0.0) {
            return Err(Error::Precondition(
                "each atom needs n angles and a nonnegative weight".into(),
            ));
        }
        let mut y = HashMap::new();
        for k in moment_indices(2 * order as i64, n) {
            let mut v = Complex64::new(0.0, 0.0);
            for (angles, w) in atoms {
                let phase: f64 = k.iter().zip(angles).map(|(&kj, &a)| kj as f64 * a).sum();
                v += Complex64::from_polar(*w, phase);
            }
            y.insert(k, v);
        }
        Ok(MomentVector { n, y })
    }

    pub fn get(&self, k: &[i64]) -> Option<Complex64> {
        self.y.get(k).copied()
    }

    /// Assemble the order-`order` moment matrix `W[j,k] = y(idx_k - idx_j)`.
    pub fn moment_matrix(&self, order: usize) -> CMat {
        let idx = moment_indices(order as i64, self.n);
        DMatrix::from_fn(idx.len(), idx.len(), |r, c| {
            let d: Vec<i64> = (0..self.n).map(|l| idx[c][l] - idx[r][l]).collect();
            self.y[&d]
        })
    }

    /// The decay matrix induced on a time structure: `gamma_jk = y(a_k-a_j)`.
    pub fn gamma(&self, structure: &TimeStructure) -> CMat {
        let n = structure.num_times();
        DMatrix::from_fn(n, n, |j, k| self.y[&structure.diff(j, k)])
    }
}

/// Decay matrix of an atomic energy measure at given times:
/// `gamma_jk = sum_l w_l e^{-i E_l (t_j - t_k)}`.
pub fn gamma_from_atoms(times: &[f64], atoms: &[(f64, f64)]) -> CMat {
    let n = times.len();
    DMatrix::from_fn(n, n, |j, k| {
        atoms
            .iter()
            .map(|&(e, w)| Complex64::from_polar(w, -e * (times[j] - times[k])))
            .sum()
    })
}

// ---------------------------------------------------------------------------
// Atomic decomposition of PSD Toeplitz matrices
// ---------------------------------------------------------------------------

/// Decompose a PSD Toeplitz decay matrix on a lattice with the given step
/// into atoms `(energy, weight)` with `gamma_jk = sum_l w_l
/// e^{-i E_l step (j-k)}`; energies are reported modulo `2 pi / step` in
/// `[0, 2 pi / step)`. The reconstruction is verified to 1e-7 (relative).
pub fn atomic_decomposition_toeplitz(gamma: &CMat, step: f64) -> Result<Vec<(f64, f64)>> {
    let n = gamma.nrows();
    if gamma.ncols() != n || n == 0 {
        return Err(Error::Shape("need a square, nonempty matrix".into()));
    }
    if step <= 0.0 {
        return Err(Error::Precondition("lattice step must be positive".into()));
    }
    if hermiticity_defect(gamma) > 1e-9 {
        return Err(Error::Precondition("matrix must be Hermitian".into()));
    }
    let scale = gamma.iter().map(|z| z.norm()).fold(1.0, f64::max);

    // Read off the symbol y_m by averaging each diagonal; verify Toeplitz.
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for m in 0..n {
        let mut sum = Complex64::new(0.0, 0.0);
        for j in 0..n - m {
            sum += gamma[(j, j + m)];
        }
        y[m] = sum / Complex64::new((n - m) as f64, 0.0);
    }
    for m in 0..n {
        for j in 0..n - m {
            if (gamma[(j, j + m)] - y[m]).norm() > 1e-7 * scale {
                return Err(Error::Precondition(format!(
                    "matrix is not Toeplitz: entry ({j},{}) deviates from its diagonal",
                    j + m
                )));
            }
        }
    }
    let (eigs, _) = hermitian_eigen(gamma);
    if eigs.iter().any(|&e| e < -1e-8 * scale) {
        return Err(Error::Precondition("matrix is not positive semidefinite".into()));
    }
    let y0 = y[0].re;
    if y0 <= 1e-12 * scale {
        return Ok(Vec::new()); // the zero matrix needs no atoms
    }
    if n == 1 {
        return Ok(vec![(0.0, y0)]);
    }

    // If the matrix is (numerically) singular, its columns already satisfy a
    // shift recurrence; otherwise extend the symbol by one lag to the cone
    // boundary so the extension is singular, then recover the atoms there.
    let cutoff = 1e-9 * eigs.iter().cloned().fold(1.0, f64::max);
    let rank = eigs.iter().filter(|&&e| e > cutoff).count();
    let work = if rank < n {
        gamma.clone()
    } else {
        let y_ext = boundary_extension(gamma, &y)?;
        let mut t = CMat::zeros(n + 1, n + 1);
        for j in 0..=n {
            for k in 0..=n {
                let m = k as i64 - j as i64;
                t[(j, k)] = if m >= 0 { seq(&y, y_ext, m as usize) } else {
                    seq(&y, y_ext, (-m) as usize).conj()
                };
            }
        }
        t
    };

    let energies = shift_invariance_energies(&work, step)?;
    let weights = fit_weights(&y, &energies, step)?;
    let atoms: Vec<(f64, f64)> = energies
        .into_iter()
        .zip(weights)
        .filter(|&(_, w)| w > 1e-12 * scale)
        .collect();

    // Verify the reconstruction before returning.
    let recon = DMatrix::from_fn(n, n, |j, k| {
        atoms
            .iter()
            .map(|&(e, w)| Complex64::from_polar(w, -e * step * (j as f64 - k as f64)))
            .sum::<Complex64>()
    });
    let err = (gamma - recon).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if err > 1e-7 * scale {
        return Err(Error::Solver(format!(
            "atomic reconstruction residual {err} exceeds tolerance"
        )));
    }
    Ok(atoms)
}

fn seq(y: &[Complex64], y_ext: Complex64, m: usize) -> Complex64 {
    if m < y.len() { y[m] } else { y_ext }
}

/// Choose the next symbol value `y_n` so the extended Toeplitz matrix is PSD
/// and singular (touches the cone boundary).
fn boundary_extension(gamma: &CMat, y: &[Complex64]) -> Result<Complex64> {
    let n = gamma.nrows();
    // Extended last column is (y_n, y_{n-1}, ..., y_1); split off the unknown.
    let mut c_fixed = DVector::<Complex64>::zeros(n);
    for j in 1..n {
        c_fixed[j] = y[n - j];
    }
    let inv = crate::quantum::hermitian_pinv(gamma, 1e-12 * y[0].re.max(1.0));
    let g00 = inv[(0, 0)].re;
    if g00 <= 0.0 {
        return Err(Error::Solver("degenerate leading entry in Toeplitz extension".into()));
    }
    let ic = &inv * &c_fixed;
    let ic0 = ic[0];
    // The Schur complement of the extension is a quadratic in y_n; put its
    // minimizer at the boundary by adding the right real offset.
    let y_star = -ic0 / Complex64::new(g00, 0.0);
    let q_min = (c_fixed.dotc(&ic)).re - ic0.norm_sqr() / g00;
    let slack = (y[0].re - q_min).max(0.0);
    Ok(y_star + Complex64::new((slack / g00).sqrt(), 0.0))
}

/// Recover atom energies from a (numerically) singular PSD Toeplitz matrix
/// via the shift invariance of its column space.
fn shift_invariance_energies(t: &CMat, step: f64) -> Result<Vec<f64>> {
    let size = t.nrows();
    let (eigs, vecs) = hermitian_eigen(t);
    let cutoff = 1e-9 * eigs.iter().cloned().fold(1.0, f64::max);
    let cols: Vec<usize> = (0..size).filter(|&i| eigs[i] > cutoff).collect();
    let r = cols.len();
    if r == 0 {
        return Ok(Vec::new());
    }
    if r >= size {
        return Err(Error::Solver(
            "signal subspace fills the whole space; cannot separate atoms".into(),
        ));
    }
    let u = DMatrix::from_fn(size, r, |i, j| vecs[(i, cols[j])]);
    let u1 = u.view((0, 0), (size - 1, r)).into_owned();
    let u2 = u.view((1, 0), (size - 1, r)).into_owned();
    let svd = u1.svd(true, true);
    let psi = svd
        .solve(&u2, 1e-12)
        .map_err(|e| Error::Solver(format!("shift-operator least squares failed: {e}")))?;
    let zs = psi
        .eigenvalues()
        .ok_or_else(|| Error::Solver("shift operator has no computable eigenvalues".into()))?;
    let period = 2.0 * std::f64::consts::PI / step;
    let mut energies = Vec::with_capacity(r);
    for z in zs.iter() {
        if z.norm() < 1e-6 {
            continue;
        }
        // Signal columns satisfy v_{j+1} = e^{-i E step} v_j, so the
        // eigenvalue's phase encodes the energy (up to sign).
        let mut e = -z.arg() / step;
        e = e.rem_euclid(period);
        energies.push(e);
    }
    Ok(energies)
}

/// Least squares (clipped to nonnegative) for the atom weights reproducing
/// the Toeplitz symbol: `y_m = sum_l w_l e^{+i E_l step m}`.
fn fit_weights(y: &[Complex64], energies: &[f64], step: f64) -> Result<Vec<f64>> {
    if energies.is_empty() {
        return Ok(Vec::new());
    }
    let n = y.len();
    let r = energies.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, r);
    let mut b = DVector::<f64>::zeros(2 * n);
    for m in 0..n {
        b[2 * m] = y[m].re;
        b[2 * m + 1] = y[m].im;
        for (l, &e) in energies.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, e * step * m as f64);
            a[(2 * m, l)] = phase.re;
            a[(2 * m + 1, l)] = phase.im;
        }
    }
    let svd = a.svd(true, true);
    let w = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::Solver(format!("weight least squares failed: {e}")))?;
    Ok(w.iter().map(|&x| x.max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc_matrix() -> CMat {
        // PSD with equal diagonal but unequal same-lag correlations: a decay
        // matrix candidate that no lattice (Toeplitz) model can accept.
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        CMat::from_row_slice(3, 3, &[one, one, zero, one, one, zero, zero, zero, one])
    }

    #[test]
    fn lattice_structure_roundtrip() {
        let s = TimeStructure::lattice(0.5, &[0, 1, 3], 0.25).unwrap();
        assert_eq!(s.times(), vec![0.25, 0.75, 1.75]);
        s.check_times(&[0.25, 0.75, 1.75]).unwrap();
        assert!(s.check_times(&[0.25, 0.75, 1.8]).is_err());
        assert!(s.check_times(&[0.25, 0.75]).is_err());
        assert_eq!(s.coeff_spread(), 3);
        assert_eq!(s.half_degree(), 2);
    }

    #[test]
    fn structure_rejects_bad_input() {
        assert!(TimeStructure::new(vec![], vec![vec![]], 0.0).is_err());
        assert!(TimeStructure::new(vec![-1.0], vec![vec![0]], 0.0).is_err());
        assert!(TimeStructure::new(vec![1.0], vec![], 0.0).is_err());
        assert!(TimeStructure::new(vec![1.0], vec![vec![0, 1]], 0.0).is_err());
    }

    #[test]
    fn moment_model_validation() {
        let s = TimeStructure::lattice(1.0, &[0, 1, 3], 0.0).unwrap();
        let low = DecayMatrixModel::Moment { order: 2, structure: s.clone() };
        assert!(low.validate(3).is_err());
        let ok = DecayMatrixModel::Moment { order: 3, structure: s.clone() };
        ok.validate(3).unwrap();
        assert!(ok.validate(2).is_err()); // size mismatch
        let wide = TimeStructure::new(
            vec![1.0, 2.0, 3.0, 5.0],
            vec![vec![0, 0, 0, 0], vec![1, 0, 0, 0]],
            0.0,
        )
        .unwrap();
        let too_many = DecayMatrixModel::Moment { order: 1, structure: wide };
        assert!(too_many.validate(2).is_err());
    }

    #[test]
    fn identity_in_all_models() {
        let id = CMat::identity(3, 3);
        let s = TimeStructure::lattice(1.0, &[0, 1, 3], 0.0).unwrap();
        for model in [
            DecayMatrixModel::EqualDiagPsd,
            DecayMatrixModel::ToeplitzPsd,
            DecayMatrixModel::Moment { order: 3, structure: s },
        ] {
            let v = membership_decay(&id, &model).unwrap();
            assert!(v.feasible, "identity rejected by {model:?}: residual {}", v.residual);
        }
    }

    #[test]
    fn discontinuity_matrix_separates_models() {
        let g = disc_matrix();
        let eq = membership_decay(&g, &DecayMatrixModel::EqualDiagPsd).unwrap();
        assert!(eq.feasible, "residual {}", eq.residual);
        let toe = membership_decay(&g, &DecayMatrixModel::ToeplitzPsd).unwrap();
        assert!(!toe.feasible);
        assert!(toe.residual >= 0.4, "residual {}", toe.residual);
    }

    #[test]
    fn atom_matrices_live_in_every_model() {
        let times = [0.0, 0.7, 1.4];
        let g = gamma_from_atoms(&times, &[(1.3, 0.5), (2.9, 0.5)]);
        let s = TimeStructure::lattice(0.7, &[0, 1, 2], 0.0).unwrap();
        for model in [
            DecayMatrixModel::EqualDiagPsd,
            DecayMatrixModel::ToeplitzPsd,
            DecayMatrixModel::Moment { order: 2, structure: s },
        ] {
            let v = membership_decay(&g, &model).unwrap();
            assert!(v.feasible, "atoms rejected by {model:?}: residual {}", v.residual);
        }
    }

    #[test]
    fn membership_requires_hermitian() {
        let mut g = CMat::identity(2, 2);
        g[(0, 1)] = Complex64::new(0.3, 0.0); // not mirrored
        assert!(membership_decay(&g, &DecayMatrixModel::EqualDiagPsd).is_err());
    }

    #[test]
    fn moment_vector_matches_atom_decay_matrix() {
        let s = TimeStructure::new(
            vec![0.3, 0.8],
            vec![vec![0, 0], vec![1, 0], vec![1, 1]],
            0.2,
        )
        .unwrap();
        let atoms = [(0.9, 0.4), (2.1, 0.6)];
        let torus: Vec<(Vec<f64>, f64)> =
            atoms.iter().map(|&(e, w)| (vec![e * 0.3, e * 0.8], w)).collect();
        let mv = MomentVector::from_atoms(2, &torus, 1).unwrap();
        let direct = gamma_from_atoms(&s.times(), &atoms);
        let via_moments = mv.gamma(&s);
        assert!((direct - &via_moments).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
        let w = mv.moment_matrix(1);
        let (eigs, _) = hermitian_eigen(&w);
        assert!(eigs.iter().all(|&e| e > -1e-12));
        // And the decay matrix passes the two-generator moment model.
        let model = DecayMatrixModel::Moment { order: 1, structure: s };
        let v = membership_decay(&via_moments, &model).unwrap();
        assert!(v.feasible, "residual {}", v.residual);
    }

    #[test]
    fn rounding_epsilon_example() {
        assert_relative_eq!(
            rounding_epsilon(2, 1, 1, 10),
            2.0 * (1.0 / 0.94 - 1.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rounding_preconditions() {
        let s = TimeStructure::lattice(1.0, &[0, 1], 0.0).unwrap();
        let g = CMat::identity(2, 2);
        // order below 3*d
        assert!(round_to_feasible(&g, 2, &s).is_err());
        // order = 3*d gives a mixing weight above 1
        assert!(round_to_feasible(&g, 3, &s).is_err());
        // identity is a fixed point of the rounding map
        let rounded = round_to_feasible(&g, 10, &s).unwrap();
        assert!((rounded - g).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn rounded_member_stays_feasible() {
        let s = TimeStructure::lattice(0.5, &[0, 1, 2], 0.0).unwrap();
        let g = gamma_from_atoms(&s.times(), &[(1.0, 0.7), (3.5, 0.3)]);
        let rounded = round_to_feasible(&g, 10, &s).unwrap();
        let v = membership_decay(&rounded, &DecayMatrixModel::ToeplitzPsd).unwrap();
        assert!(v.feasible, "residual {}", v.residual);
        // Atoms of the rounded matrix: originals plus identity smearing keep
        // the total weight equal to the diagonal.
        assert_relative_eq!(rounded[(0, 0)].re, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn decomposition_recovers_single_atom() {
        let times = [0.0, 0.7, 1.4];
        let g = gamma_from_atoms(&times, &[(1.1, 0.8)]);
        let atoms = atomic_decomposition_toeplitz(&g, 0.7).unwrap();
        assert_eq!(atoms.len(), 1);
        assert_relative_eq!(atoms[0].0, 1.1, epsilon = 1e-7);
        assert_relative_eq!(atoms[0].1, 0.8, epsilon = 1e-7);
    }

    #[test]
    fn decomposition_recovers_two_atoms() {
        let times: Vec<f64> = (0..4).map(|j| 0.5 * j as f64).collect();
        let g = gamma_from_atoms(&times, &[(0.9, 0.4), (2.3, 0.6)]);
        let mut atoms = atomic_decomposition_toeplitz(&g, 0.5).unwrap();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(atoms.len(), 2);
        assert_relative_eq!(atoms[0].0, 0.9, epsilon = 1e-6);
        assert_relative_eq!(atoms[0].1, 0.4, epsilon = 1e-6);
        assert_relative_eq!(atoms[1].0, 2.3, epsilon = 1e-6);
        assert_relative_eq!(atoms[1].1, 0.6, epsilon = 1e-6);
    }

    #[test]
    fn decomposition_of_identity_needs_boundary_extension() {
        // The identity is full rank, so the symbol must first be extended to
        // the cone boundary; the atoms then sit at roots of unity.
        let g = CMat::identity(3, 3);
        let atoms = atomic_decomposition_toeplitz(&g, 1.0).unwrap();
        assert_eq!(atoms.len(), 3);
        let total: f64 = atoms.iter().map(|&(_, w)| w).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-7);
        for &(_, w) in &atoms {
            assert_relative_eq!(w, 1.0 / 3.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn decomposition_edge_cases() {
        let zero = CMat::zeros(2, 2);
        assert!(atomic_decomposition_toeplitz(&zero, 1.0).unwrap().is_empty());
        let single = CMat::from_element(1, 1, Complex64::new(0.6, 0.0));
        let atoms = atomic_decomposition_toeplitz(&single, 1.0).unwrap();
        assert_eq!(atoms, vec![(0.0, 0.6)]);
        assert!(atomic_decomposition_toeplitz(&disc_matrix(), 1.0).is_err());
        assert!(atomic_decomposition_toeplitz(&zero, -1.0).is_err());
    }

    #[test]
    fn hierarchy_is_sound_on_random_atomic_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 0.6;
        let s = TimeStructure::lattice(step, &[0, 1, 2], 0.0).unwrap();
        let period = 2.0 * std::f64::consts::PI / step;
        for _ in 0..5 {
            let atoms: Vec<(f64, f64)> = (0..2)
                .map(|_| (rng.gen::<f64>() * period, rng.gen::<f64>() + 0.1))
                .collect();
            let g = gamma_from_atoms(&s.times(), &atoms);
            for order in [2usize, 4] {
                let model = DecayMatrixModel::Moment { order, structure: s.clone() };
                let v = membership_decay(&g, &model).unwrap();
                assert!(v.feasible, "order {order} rejected a true decay matrix: {}", v.residual);
            }
        }
    }
}
