//! SDP relaxations of the energy-constrained dataset sets.
//!
//! Each builder assembles a conic program whose feasible points represent
//! datasets admitting a model of the requested kind: an exact finite-spectrum
//! model, a discretized hard-cap model, an average-energy model, or a soft
//! spectral-weight model with a high-energy decay block. The handles expose
//! the dataset values as linear expressions so callers can add fit
//! constraints and objectives. Extraction routines turn feasible solutions
//! back into explicit realizations, and analytic gap formulas bound the
//! distance between each relaxation and the exact set.

use num_complex::Complex64;

use crate::cones::{
    atomic_decomposition_toeplitz, decay_constraints, DecayBlock, DecayMatrixModel, TimeStructure,
};
use crate::error::{Error, Result};
use crate::quantum::{
    hermitian_eigenvalues, hermitian_pinv, identity, psd_sqrt, range_projector, CMat, CVec,
    Realization, Scenario,
};
use crate::solver::{ConicProgram, HermitianVar, LinExpr, VarId};

// ---------------------------------------------------------------------------
// Kinds and handles
// ---------------------------------------------------------------------------

/// High-energy decay model choice for the soft relaxation.
#[derive(Debug, Clone, PartialEq)]
pub enum SoftDecay {
    /// Equal-diagonal PSD block: valid for any times, loosest.
    EqualDiag,
    /// Toeplitz-PSD block over the full lattice spanned by the given
    /// structure; exact for lattice times. Rows must encode the measurement
    /// times followed by the extrapolation time.
    Toeplitz { lattice: TimeStructure },
    /// Moment-matrix hierarchy over the declared structure (rows: times then
    /// the extrapolation time).
    Moment { order: usize, structure: TimeStructure },
}

/// Which relaxation a [`ModelHandle`] encodes, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum RelaxationKind {
    /// Models with Hamiltonian spectrum inside a given finite energy list.
    Finite { energies: Vec<f64> },
    /// Discretization of the hard energy cap on the grid `{j e_plus/m}`.
    HardGrid { e_plus: f64, m: usize },
    /// Average-energy constraint with discretized low-energy sector.
    Average { e_bar: f64, e_plus: f64, m: usize },
    /// Soft spectral-weight constraint with a decay block.
    Soft { e_plus: f64, epsilon: f64, m: usize, decay: SoftDecay },
}

/// A built relaxation: the conic program plus handles into its blocks.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    pub program: ConicProgram,
    pub kind: RelaxationKind,
    pub scenario: Scenario,
    /// `mtilde[x][a]`: the compressed measurement blocks.
    pub mtilde: Vec<Vec<HermitianVar>>,
    /// `probs[x][j][a]`: dataset value `P(a|x,t_j)`; index `j == N` is the
    /// extrapolation time.
    pub probs: Vec<Vec<Vec<LinExpr>>>,
    /// `raw_probs[x][j][a]`: the block functional at the same indices, before
    /// the discretization slack (equal to `probs` for exact models).
    pub raw_probs: Vec<Vec<Vec<LinExpr>>>,
    /// Level-occupation variables `p_0..p_m` (empty for finite/hard models).
    pub weights: Vec<VarId>,
    /// High-energy decay block (average/soft models).
    pub gamma: Option<DecayBlock>,
    /// Energies of the discretized low-energy levels.
    pub grid: Vec<f64>,
    /// For each time (and the extrapolation time), the index of its
    /// high-sector basis vector inside the decay block.
    pub high_pos: Vec<usize>,
    /// Dimension of the decay block.
    pub high_dim: usize,
    /// Real time represented by each decay-block index (lattice models).
    pub high_times: Option<Vec<f64>>,
}

impl ModelHandle {
    /// All constrained times: the measurement times then the extrapolation
    /// time.
    pub fn all_times(&self) -> Vec<f64> {
        let mut ts = self.scenario.times.clone();
        ts.push(self.scenario.tau);
        ts
    }

    /// The per-time discretization slack of the dataset link (0 for exact
    /// finite models).
    pub fn slack_bound(&self, t: f64) -> f64 {
        match &self.kind {
            RelaxationKind::Finite { .. } => 0.0,
            RelaxationKind::HardGrid { e_plus, m } => {
                2.0 * (e_plus * t.abs() / (2.0 * *m as f64)).sin()
            }
            RelaxationKind::Average { e_plus, m, .. }
            | RelaxationKind::Soft { e_plus, m, .. } => {
                2.0 * (e_plus * t.abs() / *m as f64).sin()
            }
        }
    }
}

fn max_abs_time(scenario: &Scenario) -> f64 {
    scenario
        .times
        .iter()
        .chain(std::iter::once(&scenario.tau))
        .fold(0.0f64, |acc, &t| acc.max(t.abs()))
}

fn phase_vector(energies: &[f64], t: f64) -> Vec<Complex64> {
    energies.iter().map(|&e| Complex64::from_polar(1.0, -e * t)).collect()
}

/// Whether the energy list is symmetric about its midpoint
/// (`E_k + E_{g-1-k}` constant). Such models are invariant under conjugation
/// combined with index reversal, which lets Hermitian variables collapse to
/// real symmetric blocks of half the embedded size.
fn energies_flip_symmetric(energies: &[f64]) -> bool {
    let g = energies.len();
    if g < 2 {
        return true;
    }
    let c = energies[0] + energies[g - 1];
    (0..=g / 2).all(|k| (energies[k] + energies[g - 1 - k] - c).abs() <= 1e-12 * (1.0 + c.abs()))
}

fn alloc_measurements(
    p: &mut ConicProgram,
    scenario: &Scenario,
    dim: usize,
    flip: bool,
) -> Vec<Vec<HermitianVar>> {
    (0..scenario.settings)
        .map(|_| {
            (0..scenario.outcomes)
                .map(|_| if flip { p.hermitian_psd_flip(dim) } else { p.hermitian_psd(dim) })
                .collect()
        })
        .collect()
}

/// Allocate measurement blocks with the completeness relation built in:
/// every setting's outcomes sum to one shared trace-1 diagonal of spectral
/// weights, the last outcome realized as the PSD complement of the others.
/// This replaces a full variable block plus entrywise tying rows per setting
/// with a single affine PSD constraint, which shrinks the solver's KKT
/// system considerably.
fn alloc_complete_measurements(
    p: &mut ConicProgram,
    scenario: &Scenario,
    dim: usize,
    flip: bool,
) -> Vec<Vec<HermitianVar>> {
    if scenario.outcomes == 1 {
        // Degenerate single-outcome case: keep the explicit formulation.
        let mtilde = alloc_measurements(p, scenario, dim, flip);
        constrain_diagonal_sum(p, &mtilde, dim);
        return mtilde;
    }
    // Shared spectral weights; mirrored levels share one weight in the
    // flip-reduced case so the rotated complement stays real.
    let diag: Vec<LinExpr> = if flip {
        let w0 = p.nonneg_vars((dim + 1) / 2);
        (0..dim).map(|i| LinExpr::var(w0 + i.min(dim - 1 - i))).collect()
    } else {
        let w0 = p.nonneg_vars(dim);
        (0..dim).map(|i| LinExpr::var(w0 + i)).collect()
    };
    let mut trace = LinExpr::zero();
    for e in &diag {
        trace.add(e);
    }
    p.add_eq(trace, 1.0);
    (0..scenario.settings)
        .map(|_| {
            let mut row: Vec<HermitianVar> = (0..scenario.outcomes - 1)
                .map(|_| if flip { p.hermitian_psd_flip(dim) } else { p.hermitian_psd(dim) })
                .collect();
            let last = p.hermitian_psd_complement(diag.clone(), row.clone());
            row.push(last);
            row
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Shared construction pieces
// ---------------------------------------------------------------------------

/// Allocate the measurement blocks and the linked dataset variables.
///
/// `eval[j]` is the evaluation vector of time index `j` (measurement times
/// then the extrapolation time); `slack[j]` the l1 budget between the dataset
/// variable and the block functional. A zero slack links them by equality.
fn link_dataset(
    p: &mut ConicProgram,
    mtilde: &[Vec<HermitianVar>],
    eval: &[Vec<Complex64>],
    slack: &[f64],
) -> (Vec<Vec<Vec<LinExpr>>>, Vec<Vec<Vec<LinExpr>>>) {
    let settings = mtilde.len();
    let outcomes = mtilde[0].len();
    let mut probs = vec![Vec::with_capacity(eval.len()); settings];
    let mut raw = vec![Vec::with_capacity(eval.len()); settings];
    for x in 0..settings {
        for (j, psi) in eval.iter().enumerate() {
            let funcs: Vec<LinExpr> =
                (0..outcomes).map(|a| mtilde[x][a].re_sandwich(psi, psi)).collect();
            raw[x].push(funcs.clone());
            if slack[j] == 0.0 {
                probs[x].push(funcs);
                continue;
            }
            // Free dataset entries in the simplex, within l1 slack of the
            // block functionals.
            let mut col = Vec::with_capacity(outcomes);
            let mut total = LinExpr::zero();
            let mut budget = LinExpr::zero();
            for func in &funcs {
                let v = p.nonneg_var();
                p.add_le(LinExpr::var(v), 1.0);
                total.push(v, 1.0);
                let u = p.nonneg_var();
                let mut hi = LinExpr::var(v);
                hi.sub(func);
                hi.push(u, -1.0);
                p.add_le(hi, 0.0);
                let mut lo = func.scaled(1.0);
                lo.push(v, -1.0);
                lo.push(u, -1.0);
                p.add_le(lo, 0.0);
                budget.push(u, 1.0);
                col.push(LinExpr::var(v));
            }
            p.add_eq(total, 1.0);
            p.add_le(budget, slack[j]);
            probs[x].push(col);
        }
    }
    (probs, raw)
}

/// Constrain `sum_a mtilde[x][a]` to a setting-independent, trace-1 diagonal
/// matrix (the finite-spectrum normalization).
fn constrain_diagonal_sum(p: &mut ConicProgram, mtilde: &[Vec<HermitianVar>], dim: usize) {
    let settings = mtilde.len();
    let sum_entry = |x: usize, re: bool, i: usize, j: usize| -> LinExpr {
        let mut e = LinExpr::zero();
        for blk in &mtilde[x] {
            e.add(&if re { blk.re(i, j) } else { blk.im(i, j) });
        }
        e
    };
    for x in 0..settings {
        for i in 0..dim {
            for j in i + 1..dim {
                p.add_eq(sum_entry(x, true, i, j), 0.0);
                p.add_eq(sum_entry(x, false, i, j), 0.0);
            }
        }
        for i in 0..dim {
            if x > 0 {
                let mut e = sum_entry(x, true, i, i);
                e.sub(&sum_entry(0, true, i, i));
                p.add_eq(e, 0.0);
            }
        }
    }
    let mut trace = LinExpr::zero();
    for i in 0..dim {
        trace.add(&sum_entry(0, true, i, i));
    }
    p.add_eq(trace, 1.0);
}

/// Constrain `sum_a mtilde[x][a]` to `diag(p_0..p_{m-1}) (+) gamma` for
/// every setting.
fn constrain_block_sum(
    p: &mut ConicProgram,
    mtilde: &[Vec<HermitianVar>],
    m: usize,
    high_dim: usize,
    weights: &[VarId],
    gamma: &DecayBlock,
) {
    let dim = m + high_dim;
    for blocks in mtilde {
        let sum_re = |i: usize, j: usize| -> LinExpr {
            let mut e = LinExpr::zero();
            for blk in blocks {
                e.add(&blk.re(i, j));
            }
            e
        };
        let sum_im = |i: usize, j: usize| -> LinExpr {
            let mut e = LinExpr::zero();
            for blk in blocks {
                e.add(&blk.im(i, j));
            }
            e
        };
        for i in 0..dim {
            for j in i..dim {
                if i == j && i < m {
                    let mut e = sum_re(i, i);
                    e.push(weights[i], -1.0);
                    p.add_eq(e, 0.0);
                } else if i >= m {
                    let (gi, gj) = (i - m, j - m);
                    let mut re = sum_re(i, j);
                    re.sub(&gamma.gamma.re(gi, gj));
                    p.add_eq(re, 0.0);
                    if i != j {
                        let mut im = sum_im(i, j);
                        im.sub(&gamma.gamma.im(gi, gj));
                        p.add_eq(im, 0.0);
                    }
                } else {
                    // low-sector off-diagonal or low-high cross entry
                    p.add_eq(sum_re(i, j), 0.0);
                    p.add_eq(sum_im(i, j), 0.0);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model builders
// ---------------------------------------------------------------------------

/// Exact SDP model of datasets with Hamiltonian spectrum inside `energies`.
pub fn model_s_finite(energies: &[f64], scenario: &Scenario) -> Result<ModelHandle> {
    if energies.is_empty() {
        return Err(Error::Precondition("need at least one energy level".into()));
    }
    scenario.validate()?;
    let g = energies.len();
    let mut p = ConicProgram::new();
    let mtilde =
        alloc_complete_measurements(&mut p, scenario, g, energies_flip_symmetric(energies));
    let mut ts = scenario.times.clone();
    ts.push(scenario.tau);
    let eval: Vec<Vec<Complex64>> = ts.iter().map(|&t| phase_vector(energies, t)).collect();
    let slack = vec![0.0; ts.len()];
    let (probs, raw_probs) = link_dataset(&mut p, &mtilde, &eval, &slack);
    Ok(ModelHandle {
        program: p,
        kind: RelaxationKind::Finite { energies: energies.to_vec() },
        scenario: scenario.clone(),
        mtilde,
        probs,
        raw_probs,
        weights: Vec::new(),
        gamma: None,
        grid: energies.to_vec(),
        high_pos: Vec::new(),
        high_dim: 0,
        high_times: None,
    })
}

/// Discretized hard-cap model: finite model on the grid `{j e_plus/m}` with a
/// per-time l1 slack `2 sin(e_plus |t| / (2m))`.
pub fn model_s_m(e_plus: f64, m: usize, scenario: &Scenario) -> Result<ModelHandle> {
    scenario.validate()?;
    if e_plus <= 0.0 {
        return Err(Error::Precondition("energy cap must be positive".into()));
    }
    let t_max = max_abs_time(scenario);
    let lower = e_plus * t_max / std::f64::consts::PI;
    if (m as f64) < lower {
        return Err(Error::Precondition(format!(
            "grid size m = {m} below the soundness bound m >= e_plus*max|t|/pi = {lower}"
        )));
    }
    let grid: Vec<f64> = (0..=m).map(|j| j as f64 * e_plus / m as f64).collect();
    let mut p = ConicProgram::new();
    // The uniform grid is symmetric about its midpoint, so the measurement
    // blocks collapse to real symmetric matrices.
    let mtilde = alloc_complete_measurements(&mut p, scenario, grid.len(), true);
    let mut ts = scenario.times.clone();
    ts.push(scenario.tau);
    let eval: Vec<Vec<Complex64>> = ts.iter().map(|&t| phase_vector(&grid, t)).collect();
    let slack: Vec<f64> =
        ts.iter().map(|&t| 2.0 * (e_plus * t.abs() / (2.0 * m as f64)).sin()).collect();
    let (probs, raw_probs) = link_dataset(&mut p, &mtilde, &eval, &slack);
    Ok(ModelHandle {
        program: p,
        kind: RelaxationKind::HardGrid { e_plus, m },
        scenario: scenario.clone(),
        mtilde,
        probs,
        raw_probs,
        weights: Vec::new(),
        gamma: None,
        grid,
        high_pos: Vec::new(),
        high_dim: 0,
        high_times: None,
    })
}

/// Default cap for the average-energy model, balancing the discretization and
/// truncation error terms.
pub fn average_default_e_plus(e_bar: f64, t_max: f64, m: usize) -> f64 {
    (e_bar / (4.0 * t_max * t_max)).powf(1.0 / 3.0) * (m as f64).powf(2.0 / 3.0)
}

/// Average-energy relaxation: occupation weights on the grid `{j e_plus/m}`
/// with mean at most `e_bar`, the cap level folded into an equal-diagonal
/// decay block.
pub fn model_a_m(
    e_bar: f64,
    m: usize,
    scenario: &Scenario,
    e_plus_override: Option<f64>,
) -> Result<ModelHandle> {
    scenario.validate()?;
    if e_bar <= 0.0 {
        return Err(Error::Precondition("mean-energy bound must be positive".into()));
    }
    let t_max = max_abs_time(scenario);
    let e_plus = e_plus_override.unwrap_or_else(|| average_default_e_plus(e_bar, t_max, m));
    if e_plus <= e_bar {
        return Err(Error::Precondition(format!(
            "cap {e_plus} must exceed the mean-energy bound {e_bar}; increase m or the override"
        )));
    }
    check_m_bound(e_plus, m, t_max)?;
    let n_high = scenario.times.len() + 1;
    build_block_model(
        RelaxationKind::Average { e_bar, e_plus, m },
        scenario,
        e_plus,
        m,
        DecayMatrixModel::EqualDiagPsd,
        n_high,
        (0..n_high).collect(),
        None,
    )
}

/// Soft spectral-weight relaxation: at most `epsilon` weight above the cap,
/// with the high-energy sector constrained by the chosen decay model.
pub fn model_soft(
    e_plus: f64,
    epsilon: f64,
    m: usize,
    decay: &SoftDecay,
    scenario: &Scenario,
) -> Result<ModelHandle> {
    scenario.validate()?;
    if e_plus <= 0.0 {
        return Err(Error::Precondition("energy cap must be positive".into()));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Precondition("epsilon must lie in [0, 1]".into()));
    }
    let t_max = max_abs_time(scenario);
    check_m_bound(e_plus, m, t_max)?;
    let mut all = scenario.times.clone();
    all.push(scenario.tau);
    let (model, high_dim, high_pos, high_times) = match decay {
        SoftDecay::EqualDiag => {
            (DecayMatrixModel::EqualDiagPsd, all.len(), (0..all.len()).collect::<Vec<_>>(), None)
        }
        SoftDecay::Toeplitz { lattice } => {
            if lattice.num_generators() != 1 {
                return Err(Error::Precondition(
                    "the Toeplitz decay model needs a single-generator lattice".into(),
                ));
            }
            lattice.check_times(&all).map_err(|e| {
                Error::Precondition(format!(
                    "times (including the extrapolation time) must lie on the lattice: {e}"
                ))
            })?;
            let step = lattice.generators()[0];
            let idx: Vec<i64> = lattice.coeffs().iter().map(|row| row[0]).collect();
            let min = *idx.iter().min().unwrap();
            let max = *idx.iter().max().unwrap();
            let span = (max - min) as usize + 1;
            let pos: Vec<usize> = idx.iter().map(|&i| (i - min) as usize).collect();
            let t0 = lattice.offset() + min as f64 * step;
            let times: Vec<f64> = (0..span).map(|k| t0 + k as f64 * step).collect();
            (DecayMatrixModel::ToeplitzPsd, span, pos, Some(times))
        }
        SoftDecay::Moment { order, structure } => {
            structure.check_times(&all).map_err(|e| {
                Error::Precondition(format!(
                    "times (including the extrapolation time) must match the structure: {e}"
                ))
            })?;
            let model = DecayMatrixModel::Moment { order: *order, structure: structure.clone() };
            model.validate(all.len())?;
            (model, all.len(), (0..all.len()).collect(), None)
        }
    };
    build_block_model(
        RelaxationKind::Soft { e_plus, epsilon, m, decay: decay.clone() },
        scenario,
        e_plus,
        m,
        model,
        high_dim,
        high_pos,
        high_times,
    )
}

fn check_m_bound(e_plus: f64, m: usize, t_max: f64) -> Result<()> {
    let bound = std::f64::consts::PI * e_plus * t_max;
    if (m as f64) <= bound {
        return Err(Error::Precondition(format!(
            "grid size m = {m} below the soundness bound m > pi*e_plus*max|t| = {bound}"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build_block_model(
    kind: RelaxationKind,
    scenario: &Scenario,
    e_plus: f64,
    m: usize,
    decay: DecayMatrixModel,
    high_dim: usize,
    high_pos: Vec<usize>,
    high_times: Option<Vec<f64>>,
) -> Result<ModelHandle> {
    let mut p = ConicProgram::new();
    let grid: Vec<f64> = (0..m).map(|j| j as f64 * e_plus / m as f64).collect();
    let dim = m + high_dim;
    let mtilde: Vec<Vec<HermitianVar>> = (0..scenario.settings)
        .map(|_| (0..scenario.outcomes).map(|_| p.hermitian_psd(dim)).collect())
        .collect();
    // Occupation weights p_0..p_m (grid levels plus the cap level).
    let w0 = p.nonneg_vars(m + 1);
    let weights: Vec<VarId> = (0..=m).map(|j| w0 + j).collect();
    let mut total = LinExpr::zero();
    for &w in &weights {
        total.push(w, 1.0);
    }
    p.add_eq(total, 1.0);
    let gamma = decay_constraints(&mut p, &decay, high_dim)?;
    // The decay block's common diagonal equals the cap-level weight.
    let mut tie = gamma.gamma.re(0, 0);
    tie.push(weights[m], -1.0);
    p.add_eq(tie, 0.0);
    match kind {
        RelaxationKind::Average { e_bar, .. } => {
            let mut mean = LinExpr::zero();
            for (j, &w) in weights.iter().enumerate() {
                mean.push(w, j as f64 * e_plus / m as f64);
            }
            p.add_le(mean, e_bar);
        }
        RelaxationKind::Soft { epsilon, .. } => {
            p.add_le(LinExpr::var(weights[m]), epsilon);
        }
        _ => unreachable!("block models are average or soft"),
    }
    constrain_block_sum(&mut p, &mtilde, m, high_dim, &weights, &gamma);

    // Evaluation vectors: grid phases plus the matching high basis vector.
    let mut ts = scenario.times.clone();
    ts.push(scenario.tau);
    let eval: Vec<Vec<Complex64>> = ts
        .iter()
        .zip(&high_pos)
        .map(|(&t, &pos)| {
            let mut v = phase_vector(&grid, t);
            v.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(high_dim));
            v[m + pos] = Complex64::new(1.0, 0.0);
            v
        })
        .collect();
    let slack: Vec<f64> =
        ts.iter().map(|&t| 2.0 * (e_plus * t.abs() / m as f64).sin()).collect();
    let (probs, raw_probs) = link_dataset(&mut p, &mtilde, &eval, &slack);
    Ok(ModelHandle {
        program: p,
        kind,
        scenario: scenario.clone(),
        mtilde,
        probs,
        raw_probs,
        weights,
        gamma: Some(gamma),
        grid,
        high_pos,
        high_dim,
        high_times,
    })
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// Turn a feasible finite-spectrum (or hard-grid) solution into an explicit
/// realization on the grid.
pub fn extract_realization_finite(h: &ModelHandle, x_sol: &[f64]) -> Result<Realization> {
    if !matches!(h.kind, RelaxationKind::Finite { .. } | RelaxationKind::HardGrid { .. }) {
        return Err(Error::Precondition(
            "finite extraction needs a finite or hard-grid model".into(),
        ));
    }
    let g = h.grid.len();
    let d: CMat = h.mtilde[0].iter().map(|blk| blk.value(x_sol)).sum();
    let lambda = psd_sqrt(&d);
    let pinv = hermitian_pinv(&lambda, 1e-9);
    let kernel = identity(g) - range_projector(&d, 1e-9);
    let hamiltonian = CMat::from_fn(g, g, |i, j| {
        if i == j { Complex64::new(h.grid[i], 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let mut povms = Vec::with_capacity(h.mtilde.len());
    for blocks in &h.mtilde {
        let mut elems: Vec<CMat> =
            blocks.iter().map(|blk| &pinv * blk.value(x_sol) * &pinv).collect();
        elems[0] += kernel.clone();
        povms.push(elems);
    }
    let ones = CVec::from_element(g, Complex64::new(1.0, 0.0));
    let mut psi = &lambda * ones;
    let norm = psi.norm();
    if norm < 1e-9 {
        return Err(Error::Solver("extracted state has vanishing norm".into()));
    }
    psi /= Complex64::new(norm, 0.0);
    Ok(Realization::from_pure(psi, hamiltonian, povms))
}

/// Turn a feasible average-energy solution into the purely low-energy
/// realization guaranteed by the convergence analysis.
pub fn extract_realization_average(h: &ModelHandle, x_sol: &[f64]) -> Result<Realization> {
    let m = match &h.kind {
        RelaxationKind::Average { m, .. } => *m,
        _ => return Err(Error::Precondition("average extraction needs an average model".into())),
    };
    let p_vals: Vec<f64> = h.weights.iter().map(|&w| x_sol[w].max(0.0)).collect();
    let p_cap = p_vals[m];
    if 1.0 - p_cap < 1e-9 {
        return Err(Error::Solver(
            "all weight sits at the cap level; no low-energy realization exists".into(),
        ));
    }
    // Rescale the low block of each measurement by the inverse root weights;
    // levels with zero weight join the kernel completion of outcome 0.
    let scale: Vec<f64> =
        p_vals[..m].iter().map(|&pk| if pk > 1e-12 { 1.0 / pk.sqrt() } else { 0.0 }).collect();
    let mut povms = Vec::with_capacity(h.mtilde.len());
    for blocks in &h.mtilde {
        let mut elems: Vec<CMat> = blocks
            .iter()
            .map(|blk| {
                let full = blk.value(x_sol);
                CMat::from_fn(m, m, |i, j| full[(i, j)] * scale[i] * scale[j])
            })
            .collect();
        let kernel = CMat::from_fn(m, m, |i, j| {
            if i == j && scale[i] == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        elems[0] += kernel;
        povms.push(elems);
    }
    let hamiltonian = CMat::from_fn(m, m, |i, j| {
        if i == j { Complex64::new(h.grid[i], 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let mut psi = CVec::from_iterator(
        m,
        p_vals[..m].iter().map(|&pk| Complex64::new((pk / (1.0 - p_cap)).sqrt(), 0.0)),
    );
    let norm = psi.norm();
    psi /= Complex64::new(norm, 0.0);
    Ok(Realization::from_pure(psi, hamiltonian, povms))
}

/// Turn a feasible soft-model solution with a Toeplitz decay block into an
/// explicit realization whose high-energy levels come from the atomic
/// decomposition of the block.
pub fn extract_realization_soft(h: &ModelHandle, x_sol: &[f64]) -> Result<Realization> {
    let (m, e_plus, lattice) = match &h.kind {
        RelaxationKind::Soft { e_plus, m, decay: SoftDecay::Toeplitz { lattice }, .. } => {
            (*m, *e_plus, lattice)
        }
        _ => {
            return Err(Error::Unsupported(
                "soft extraction needs a soft model with a Toeplitz decay block".into(),
            ))
        }
    };
    let step = lattice.generators()[0];
    let span = h.high_dim;
    let gamma_block = h.gamma.as_ref().expect("soft models carry a decay block");
    let gamma_raw = gamma_block.gamma.value(x_sol);

    // Clean the solver output into an exactly Toeplitz, PSD matrix: average
    // the diagonals, then mix with the identity just enough to clear any
    // residual negative eigenvalue.
    let mut symbol = vec![Complex64::new(0.0, 0.0); span];
    for lag in 0..span {
        let mut sum = Complex64::new(0.0, 0.0);
        for j in 0..span - lag {
            sum += gamma_raw[(j, j + lag)];
        }
        symbol[lag] = sum / Complex64::new((span - lag) as f64, 0.0);
    }
    let p_cap = symbol[0].re.max(0.0);
    symbol[0] = Complex64::new(p_cap, 0.0);
    let mut gamma = CMat::from_fn(span, span, |j, k| {
        let lag = k as i64 - j as i64;
        if lag >= 0 { symbol[lag as usize] } else { symbol[(-lag) as usize].conj() }
    });
    let p_vals: Vec<f64> = h.weights.iter().map(|&w| x_sol[w].max(0.0)).collect();
    let atoms = if p_cap <= 1e-9 {
        Vec::new()
    } else {
        let min_eig = hermitian_eigenvalues(&gamma).into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < 0.0 {
            let lift = -min_eig + 1e-12;
            let mix = p_cap / (p_cap + lift);
            gamma = (gamma + identity(span).scale(lift)).scale(mix);
        }
        atomic_decomposition_toeplitz(&gamma, step)?
    };

    // Lift each atom energy to the congruent value at or above the cap; only
    // the phases at lattice times matter.
    let period = 2.0 * std::f64::consts::PI / step;
    let lifted: Vec<(f64, f64)> = atoms
        .iter()
        .map(|&(e, w)| {
            let mut f = (-e).rem_euclid(period);
            if f < e_plus {
                f += ((e_plus - f) / period).ceil() * period;
            }
            (f, w)
        })
        .collect();
    let r = lifted.len();
    let dim = m + r;
    let high_times = h.high_times.as_ref().expect("Toeplitz models carry lattice times");

    // High-sector frame vectors u_j (columns of the synthesis map) and the
    // pseudo-inverse linking the relaxation's high indices to atom space.
    let synth = CMat::from_fn(r, span, |l, j| {
        Complex64::from_polar(lifted[l].1.sqrt(), -lifted[l].0 * high_times[j])
    });
    let pinv = if r == 0 {
        CMat::zeros(span, 0)
    } else {
        synth
            .clone()
            .pseudo_inverse(1e-9)
            .map_err(|e| Error::Solver(format!("high-sector frame inversion failed: {e}")))?
    };

    // j_map sends the realization space into the relaxation's index space.
    let mut j_map = CMat::zeros(m + span, dim);
    for k in 0..m {
        if p_vals[k] > 1e-12 {
            j_map[(k, k)] = Complex64::new(1.0 / p_vals[k].sqrt(), 0.0);
        }
    }
    for i in 0..span {
        for l in 0..r {
            j_map[(m + i, m + l)] = pinv[(i, l)];
        }
    }

    let mut povms = Vec::with_capacity(h.mtilde.len());
    for blocks in &h.mtilde {
        let mut elems: Vec<CMat> = blocks
            .iter()
            .map(|blk| j_map.adjoint() * blk.value(x_sol) * &j_map)
            .collect();
        // Kernel completion so the elements sum to the identity exactly.
        let total: CMat = elems.iter().sum();
        let mut completion = identity(dim) - total;
        completion = (&completion + completion.adjoint()).scale(0.5);
        elems[0] += completion;
        depolarize_to_psd(&mut elems);
        povms.push(elems);
    }

    let mut h_diag: Vec<f64> = h.grid.clone();
    h_diag.extend(lifted.iter().map(|&(f, _)| f));
    let hamiltonian = CMat::from_fn(dim, dim, |i, j| {
        if i == j { Complex64::new(h_diag[i], 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let mut amps: Vec<Complex64> =
        p_vals[..m].iter().map(|&pk| Complex64::new(pk.sqrt(), 0.0)).collect();
    amps.extend(lifted.iter().map(|&(_, w)| Complex64::new(w.sqrt(), 0.0)));
    let mut psi = CVec::from_iterator(dim, amps);
    let norm = psi.norm();
    if norm < 1e-9 {
        return Err(Error::Solver("extracted state has vanishing norm".into()));
    }
    psi /= Complex64::new(norm, 0.0);
    Ok(Realization::from_pure(psi, hamiltonian, povms))
}

/// Mix a POVM with a touch of white noise to clear numerical negative
/// eigenvalues left by the solver, preserving the sum exactly.
fn depolarize_to_psd(elems: &mut [CMat]) {
    let worst = elems
        .iter()
        .map(|m| hermitian_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    if worst >= 0.0 {
        return;
    }
    let a = elems.len() as f64;
    let dim = elems[0].nrows();
    let eta = (2.0 * a * (-worst + 1e-14)).min(0.5);
    for m in elems.iter_mut() {
        *m = m.scale(1.0 - eta) + identity(dim).scale(eta / a);
    }
}

// ---------------------------------------------------------------------------
// Gap bounds
// ---------------------------------------------------------------------------

/// Analytic distance bounds between each relaxation and the exact set, plus
/// the induced objective-gap bound for extrapolation problems.
#[derive(Debug, Clone, PartialEq)]
pub enum GapBound {
    /// Hard-grid discretization error at the worst time.
    HardGrid { e_plus: f64, m: usize, t_max: f64 },
    /// Average-energy model with the default cap choice.
    Average { e_bar: f64, t_max: f64, m: usize },
    /// Soft model: rounding error of the decay hierarchy plus discretization.
    Soft { eps_round: f64, e_plus: f64, t_max: f64, m: usize },
    /// Objective gap of an extrapolation problem with dataset distance
    /// `eps_m`, error bars at least `r`, objective value `f_p0` at a feasible
    /// dataset, interval estimate `mu`, and `f_max_sum = sum_x max_a
    /// |f(a|x)|`.
    Objective { eps_m: f64, r: f64, mu: f64, f_p0: f64, f_max_sum: f64 },
}

/// Evaluate a [`GapBound`].
pub fn gap_bounds(kind: &GapBound) -> Result<f64> {
    let v = match *kind {
        GapBound::HardGrid { e_plus, m, t_max } => {
            if m == 0 {
                return Err(Error::Precondition("m must be positive".into()));
            }
            2.0 * (e_plus * t_max.abs() / (2.0 * m as f64)).sin()
        }
        GapBound::Average { e_bar, t_max, m } => {
            if m == 0 {
                return Err(Error::Precondition("m must be positive".into()));
            }
            2.0 * (0.25f64.powf(1.0 / 3.0) + 2.0f64.powf(1.0 / 3.0))
                * (e_bar * t_max / m as f64).powf(1.0 / 3.0)
        }
        GapBound::Soft { eps_round, e_plus, t_max, m } => {
            if m == 0 {
                return Err(Error::Precondition("m must be positive".into()));
            }
            2.0 * eps_round / (1.0 + eps_round) + 2.0 * (e_plus * t_max.abs() / m as f64).sin()
        }
        GapBound::Objective { eps_m, r, mu, f_p0, f_max_sum } => {
            if r <= 0.0 {
                return Err(Error::Precondition("error bar r must be positive".into()));
            }
            eps_m * ((mu - f_p0).abs() / r + f_max_sum)
        }
    };
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators;
    use crate::quantum::{simulate_at_times, validate_realization_with_tol, EnergyConstraint};
    use crate::solver::{self, Sense, SolveResult, SolveStatus};
    use approx::assert_relative_eq;

    const PI: f64 = std::f64::consts::PI;

    fn two_outcome_scenario(times: Vec<f64>, tau: f64) -> Scenario {
        Scenario { settings: 1, outcomes: 2, times, tau }
    }

    /// Pin the model's dataset values for the measurement times (not the
    /// extrapolation time) to the given `values[j][x][a]`.
    fn pin_data(p: &mut ConicProgram, h: &ModelHandle, values: &[Vec<Vec<f64>>]) {
        for (j, point) in values.iter().enumerate() {
            for (x, col) in point.iter().enumerate() {
                for (a, &v) in col.iter().enumerate() {
                    p.add_eq(h.probs[x][j][a].clone(), v);
                }
            }
        }
    }

    fn optimize(h: &ModelHandle, obj: &LinExpr, sense: Sense, values: &[Vec<Vec<f64>>]) -> SolveResult {
        let mut p = h.program.clone();
        pin_data(&mut p, h, values);
        p.set_objective(sense, obj.clone());
        solver::solve(&p).unwrap()
    }

    #[test]
    fn single_level_model_pins_constants() {
        let sc = two_outcome_scenario(vec![0.3, 1.1], 5.0);
        let h = model_s_finite(&[0.0], &sc).unwrap();
        let data = vec![vec![vec![0.7, 0.3]]; 2];
        let obj = h.probs[0][2][0].clone();
        let lo = optimize(&h, &obj, Sense::Minimize, &data);
        let hi = optimize(&h, &obj, Sense::Maximize, &data);
        assert_eq!(lo.status, SolveStatus::Optimal);
        assert_eq!(hi.status, SolveStatus::Optimal);
        assert_relative_eq!(lo.objective, 0.7, epsilon = 1e-6);
        assert_relative_eq!(hi.objective, 0.7, epsilon = 1e-6);
    }

    #[test]
    fn two_level_model_forces_revival() {
        // Dataset (1,0) at t=0 and (0,1) at t=pi on spectrum {0,1}: the
        // extrapolated value at 3*pi is forced because the phase vector there
        // repeats the one at pi.
        let sc = two_outcome_scenario(vec![0.0, PI], 3.0 * PI);
        let h = model_s_finite(&[0.0, 1.0], &sc).unwrap();
        let data = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let obj = h.probs[0][2][0].clone();
        let lo = optimize(&h, &obj, Sense::Minimize, &data);
        let hi = optimize(&h, &obj, Sense::Maximize, &data);
        assert_eq!(lo.status, SolveStatus::Optimal);
        assert_eq!(hi.status, SolveStatus::Optimal);
        assert!(lo.objective.abs() < 1e-6, "min {}", lo.objective);
        assert!(hi.objective.abs() < 1e-6, "max {}", hi.objective);
    }

    fn suite_values(suite: &generators::NamedSuite) -> Vec<Vec<Vec<f64>>> {
        suite.noisy.dataset.points.iter().map(|pt| pt.probs.clone()).collect()
    }

    #[test]
    fn three_level_model_accepts_joint_revelation_data() {
        let suites = generators::aha_suite(1.0).unwrap();
        let joint = &suites.joint;
        let sc = Scenario {
            settings: 2,
            outcomes: 2,
            times: joint.noisy.dataset.times.clone(),
            tau: joint.tau_markers[0].tau,
        };
        let h = model_s_finite(&[0.0, 0.5, 1.0], &sc).unwrap();
        let mut p = h.program.clone();
        pin_data(&mut p, &h, &suite_values(joint));
        let r = solver::solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        // Normalization: the compressed measurement sum is trace-1 and
        // setting-independent at the solution.
        let d0: CMat = h.mtilde[0].iter().map(|b| b.value(&r.x)).sum();
        let d1: CMat = h.mtilde[1].iter().map(|b| b.value(&r.x)).sum();
        let tr: f64 = (0..3).map(|i| d0[(i, i)].re).sum();
        assert_relative_eq!(tr, 1.0, epsilon = 1e-6);
        assert!((d0 - d1).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-6);
    }

    #[test]
    fn finite_extraction_round_trips() {
        let sc = two_outcome_scenario(vec![0.0, PI], 3.0 * PI);
        let h = model_s_finite(&[0.0, 1.0], &sc).unwrap();
        let data = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let mut p = h.program.clone();
        pin_data(&mut p, &h, &data);
        p.set_objective(Sense::Maximize, h.probs[0][2][0].clone());
        let r = solver::solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let real = extract_realization_finite(&h, &r.x).unwrap();
        real.validate_with_tol(1e-6).unwrap();
        let sim = simulate_at_times(&real, &[0.0, PI, 3.0 * PI]).unwrap();
        for (j, pt) in sim.points.iter().enumerate() {
            for a in 0..2 {
                let model_val = h.probs[0][j][a].eval(&r.x);
                assert!(
                    (pt.probs[0][a] - model_val).abs() < 1e-5,
                    "time {j} outcome {a}: sim {} vs model {}",
                    pt.probs[0][a],
                    model_val
                );
            }
        }
    }

    #[test]
    fn hard_grid_accepts_revival_ladder_data() {
        let suite = generators::dataset_d(3, 1.0).unwrap();
        let sc = Scenario {
            settings: 1,
            outcomes: 2,
            times: suite.noisy.dataset.times.clone(),
            tau: suite.tau_markers[0].tau,
        };
        let h = model_s_m(1.0, 6, &sc).unwrap();
        let mut p = h.program.clone();
        pin_data(&mut p, &h, &suite_values(&suite));
        let r = solver::solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
    }

    #[test]
    fn hard_grid_rejects_small_m() {
        let sc = two_outcome_scenario(vec![0.0, PI], 16.0 * PI / 3.0);
        let err = model_s_m(1.0, 4, &sc).unwrap_err();
        assert!(err.to_string().contains("bound"), "{err}");
    }

    #[test]
    fn average_model_accepts_constant_data_and_extracts() {
        let sc = two_outcome_scenario(vec![0.5, 1.0], 2.0);
        let h = model_a_m(0.1, 7, &sc, Some(1.0)).unwrap();
        let data = vec![vec![vec![0.5, 0.5]]; 2];
        let mut p = h.program.clone();
        pin_data(&mut p, &h, &data);
        let r = solver::solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let real = extract_realization_average(&h, &r.x).unwrap();
        real.validate_with_tol(1e-6).unwrap();
        let report = validate_realization_with_tol(
            &real,
            &EnergyConstraint::Average { e_bar: 0.1 },
            1e-6,
        );
        assert!(report.passed(), "{report:?}");
        // Lemma-style distance bound: discretization plus truncation terms.
        let sim = simulate_at_times(&real, &sc.times).unwrap();
        for (j, pt) in sim.points.iter().enumerate() {
            let budget = h.slack_bound(sc.times[j]) + 2.0 * (0.1f64 / 1.0).sqrt() + 1e-6;
            let dist: f64 =
                (0..2).map(|a| (pt.probs[0][a] - data[j][0][a]).abs()).sum();
            assert!(dist <= budget, "time {j}: distance {dist} > budget {budget}");
        }
    }

    #[test]
    fn average_model_rejects_small_m() {
        let sc = two_outcome_scenario(vec![0.5, 1.0], 2.0);
        assert!(model_a_m(0.1, 6, &sc, Some(1.0)).is_err());
    }

    #[test]
    fn average_default_cap_example() {
        assert_relative_eq!(average_default_e_plus(1.0, 1.0, 1000), 62.996, epsilon = 1e-3);
    }

    fn disc_scenario_and_lattice() -> (Scenario, TimeStructure) {
        let delta = 0.05;
        let sc = two_outcome_scenario(vec![0.0, delta], 2.0 * delta);
        let lattice = TimeStructure::lattice(delta, &[0, 1, 2], 0.0).unwrap();
        (sc, lattice)
    }

    #[test]
    fn soft_model_feasibility_depends_on_epsilon() {
        let (sc, lattice) = disc_scenario_and_lattice();
        let data = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let decay = SoftDecay::Toeplitz { lattice };
        // Half the spectral weight above the cap: the jump is explainable.
        let h = model_soft(1.0, 0.5, 8, &decay, &sc).unwrap();
        let mut p = h.program.clone();
        pin_data(&mut p, &h, &data);
        let r = solver::solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        // No weight above the cap: a unit jump within dt = 0.05 at energies
        // below 1 cannot be fit. Minimize the uniform deviation needed.
        let h0 = model_soft(1.0, 0.0, 8, &decay.clone(), &sc).unwrap();
        let mut p0 = h0.program.clone();
        let s = p0.nonneg_var();
        for (j, point) in data.iter().enumerate() {
            for (x, col) in point.iter().enumerate() {
                for (a, &v) in col.iter().enumerate() {
                    let mut hi = h0.probs[x][j][a].clone();
                    hi.push(s, -1.0);
                    p0.add_le(hi, v);
                    let mut lo = h0.probs[x][j][a].scaled(-1.0);
                    lo.push(s, -1.0);
                    p0.add_le(lo, -v);
                }
            }
        }
        p0.set_objective(Sense::Minimize, LinExpr::var(s));
        let r0 = solver::solve(&p0).unwrap();
        assert_eq!(r0.status, SolveStatus::Optimal);
        assert!(r0.objective > 0.4, "deviation {} unexpectedly small", r0.objective);
    }

    #[test]
    fn soft_model_requires_lattice_membership() {
        let (sc, _) = disc_scenario_and_lattice();
        let wrong = TimeStructure::lattice(0.05, &[0, 1, 3], 0.0).unwrap();
        assert!(model_soft(1.0, 0.5, 8, &SoftDecay::Toeplitz { lattice: wrong }, &sc).is_err());
    }

    #[test]
    fn soft_extraction_round_trips() {
        let (sc, lattice) = disc_scenario_and_lattice();
        let data = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        let decay = SoftDecay::Toeplitz { lattice };
        let h = model_soft(1.0, 0.5, 8, &decay, &sc).unwrap();
        let mut p = h.program.clone();
        pin_data(&mut p, &h, &data);
        p.set_objective(Sense::Maximize, h.probs[0][2][0].clone());
        let r = solver::solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let real = extract_realization_soft(&h, &r.x).unwrap();
        real.validate_with_tol(1e-5).unwrap();
        let report = validate_realization_with_tol(
            &real,
            &EnergyConstraint::Soft { e_plus: 1.0, epsilon: 0.5 },
            1e-5,
        );
        assert!(report.passed(), "{report:?}");
        // The realization reproduces the compressed-model functionals at the
        // constrained times.
        let m = 8usize;
        let sim = simulate_at_times(&real, &h.all_times()).unwrap();
        for (j, pt) in sim.points.iter().enumerate() {
            let mut psi: Vec<Complex64> = h
                .grid
                .iter()
                .map(|&e| Complex64::from_polar(1.0, -e * h.all_times()[j]))
                .collect();
            psi.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(h.high_dim));
            psi[m + h.high_pos[j]] = Complex64::new(1.0, 0.0);
            let u = CVec::from_iterator(psi.len(), psi.iter().copied());
            for a in 0..2 {
                let mval = h.mtilde[0][a].value(&r.x);
                let target = (u.adjoint() * &mval * &u)[(0, 0)].re;
                assert!(
                    (pt.probs[0][a] - target).abs() < 1e-5,
                    "time {j} outcome {a}: sim {} vs compressed {target}",
                    pt.probs[0][a]
                );
            }
        }
    }

    #[test]
    fn gap_bound_examples() {
        let am = gap_bounds(&GapBound::Average { e_bar: 1.0, t_max: 1.0, m: 1000 }).unwrap();
        assert_relative_eq!(am, 0.377976, epsilon = 1e-5);
        let sm = gap_bounds(&GapBound::HardGrid { e_plus: 2.0, m: 10, t_max: 0.0 }).unwrap();
        assert_eq!(sm, 0.0);
        let obj = gap_bounds(&GapBound::Objective {
            eps_m: 0.0,
            r: 0.1,
            mu: 0.3,
            f_p0: 0.9,
            f_max_sum: 2.0,
        })
        .unwrap();
        assert_eq!(obj, 0.0);
        assert!(gap_bounds(&GapBound::Objective {
            eps_m: 0.1,
            r: 0.0,
            mu: 0.0,
            f_p0: 0.0,
            f_max_sum: 1.0
        })
        .is_err());
    }
}
