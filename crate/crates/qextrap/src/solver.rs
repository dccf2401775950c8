//! Standard-form conic programs and the solve contract.
//!
//! A [`ConicProgram`] holds scalar variables partitioned into cones (free,
//! nonnegative, real symmetric PSD blocks), sparse linear equality and
//! inequality constraints, and a linear objective. Complex Hermitian matrix
//! variables are modeled through the standard real symmetric embedding
//! `X -> [[Re X, -Im X], [Im X, Re X]]` (see [`HermitianEmbedding`] and
//! [`HermitianVar`]).
//!
//! Backends implement [`ConicBackend`]; the crate ships a Clarabel adapter.
//! The backend is selected by the `QEXTRAP_BACKEND` environment variable
//! (default `"clarabel"`). Programs serialize to a deterministic text format
//! via [`dump_standard_form`] / [`parse_standard_form`].

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub mod clarabel_backend;
pub mod dump;

pub use dump::{dump_standard_form, parse_standard_form};

/// Index of a scalar variable inside a [`ConicProgram`].
pub type VarId = usize;

/// The cone a variable block lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// Unrestricted real scalars.
    Free,
    /// Entrywise nonnegative scalars.
    NonNeg,
    /// A real symmetric PSD matrix of the given side length, stored as its
    /// upper triangle in column-major order (`(0,0), (0,1), (1,1), ...`),
    /// one scalar per distinct entry (no off-diagonal scaling).
    Psd { dim: usize },
}

/// A contiguous run of scalar variables living in one cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarBlock {
    pub kind: ConeKind,
    pub start: VarId,
    pub len: usize,
}

/// Optimization sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// A sparse affine expression `sum_i coef_i * x_i + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(id: VarId) -> Self {
        Self { terms: vec![(id, 1.0)], constant: 0.0 }
    }

    pub fn term(id: VarId, coef: f64) -> Self {
        Self { terms: vec![(id, coef)], constant: 0.0 }
    }

    pub fn push(&mut self, id: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((id, coef));
        }
    }

    pub fn add(&mut self, other: &LinExpr) {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
    }

    pub fn sub(&mut self, other: &LinExpr) {
        self.terms.extend(other.terms.iter().map(|&(i, c)| (i, -c)));
        self.constant -= other.constant;
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        LinExpr {
            terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    /// Merge duplicate indices and drop zero coefficients; sorts by index.
    pub fn simplify(&mut self) {
        self.terms.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(VarId, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|&(_, c)| c != 0.0);
        self.terms = out;
    }

    /// Evaluate against a full primal vector.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// A sparse linear constraint row `sum coef_i x_i (=|<=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub terms: Vec<(VarId, f64)>,
    pub rhs: f64,
}

/// An affine positive-semidefiniteness constraint: the real symmetric matrix
/// whose upper-triangle entries (column-major, entry `(i, j)` with `i <= j`
/// at index `j(j+1)/2 + i`, matching [`PsdVar::entry`]) are the given affine
/// expressions must be PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub dim: usize,
    pub entries: Vec<LinExpr>,
}

/// A standard-form conic program.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub blocks: Vec<VarBlock>,
    pub num_vars: usize,
    /// Rows with `sum coef x = rhs`.
    pub eq_rows: Vec<Row>,
    /// Rows with `sum coef x <= rhs`.
    pub le_rows: Vec<Row>,
    /// Affine PSD constraints (no variables of their own).
    pub psd_constraints: Vec<PsdConstraint>,
    /// Linear objective terms (plus constant offset) under `sense`.
    pub objective: Vec<(VarId, f64)>,
    pub obj_constant: f64,
    pub sense: Sense,
}

impl Default for ConicProgram {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a PSD block; resolves matrix entries to scalar variable ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PsdVar {
    pub start: VarId,
    pub dim: usize,
}

impl PsdVar {
    /// Variable id of entry `(i, j)`; symmetric in its arguments.
    pub fn entry(&self, i: usize, j: usize) -> VarId {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        debug_assert!(j < self.dim);
        self.start + j * (j + 1) / 2 + i
    }

    pub fn num_entries(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }
}

impl ConicProgram {
    pub fn new() -> Self {
        ConicProgram {
            blocks: Vec::new(),
            num_vars: 0,
            eq_rows: Vec::new(),
            le_rows: Vec::new(),
            psd_constraints: Vec::new(),
            objective: Vec::new(),
            obj_constant: 0.0,
            sense: Sense::Minimize,
        }
    }

    fn push_block(&mut self, kind: ConeKind, len: usize) -> VarId {
        let start = self.num_vars;
        self.blocks.push(VarBlock { kind, start, len });
        self.num_vars += len;
        start
    }

    /// Allocate one free scalar variable.
    pub fn free_var(&mut self) -> VarId {
        self.push_block(ConeKind::Free, 1)
    }

    /// Allocate `n` free scalar variables; returns the first id.
    pub fn free_vars(&mut self, n: usize) -> VarId {
        self.push_block(ConeKind::Free, n)
    }

    /// Allocate one nonnegative scalar variable.
    pub fn nonneg_var(&mut self) -> VarId {
        self.push_block(ConeKind::NonNeg, 1)
    }

    /// Allocate `n` nonnegative scalar variables; returns the first id.
    pub fn nonneg_vars(&mut self, n: usize) -> VarId {
        self.push_block(ConeKind::NonNeg, n)
    }

    /// Allocate a real symmetric PSD matrix variable of side `dim`.
    pub fn psd_block(&mut self, dim: usize) -> PsdVar {
        let start = self.push_block(ConeKind::Psd { dim }, dim * (dim + 1) / 2);
        PsdVar { start, dim }
    }

    /// Add `expr = rhs`.
    pub fn add_eq(&mut self, expr: LinExpr, rhs: f64) {
        let mut e = expr;
        e.simplify();
        self.eq_rows.push(Row { rhs: rhs - e.constant, terms: e.terms });
    }

    /// Add `expr <= rhs`.
    pub fn add_le(&mut self, expr: LinExpr, rhs: f64) {
        let mut e = expr;
        e.simplify();
        self.le_rows.push(Row { rhs: rhs - e.constant, terms: e.terms });
    }

    /// Add `expr >= rhs`.
    pub fn add_ge(&mut self, expr: LinExpr, rhs: f64) {
        self.add_le(expr.scaled(-1.0), -rhs);
    }

    /// Require the affine real symmetric matrix with the given upper-triangle
    /// entries (in [`PsdVar::entry`] order) to be positive semidefinite.
    pub fn add_psd_constraint(&mut self, dim: usize, mut entries: Vec<LinExpr>) {
        assert_eq!(
            entries.len(),
            dim * (dim + 1) / 2,
            "PSD constraint needs one expression per upper-triangle entry"
        );
        for e in &mut entries {
            e.simplify();
        }
        self.psd_constraints.push(PsdConstraint { dim, entries });
    }

    /// Set the linear objective.
    pub fn set_objective(&mut self, sense: Sense, expr: LinExpr) {
        let mut e = expr;
        e.simplify();
        self.sense = sense;
        self.objective = e.terms;
        self.obj_constant = e.constant;
    }

    /// Basic well-formedness check: all referenced indices valid.
    pub fn validate(&self) -> Result<()> {
        let check = |terms: &[(VarId, f64)]| -> Result<()> {
            for &(i, _) in terms {
                if i >= self.num_vars {
                    return Err(Error::Validation(format!(
                        "variable index {i} out of range ({} variables)",
                        self.num_vars
                    )));
                }
            }
            Ok(())
        };
        for row in self.eq_rows.iter().chain(&self.le_rows) {
            check(&row.terms)?;
        }
        for pc in &self.psd_constraints {
            if pc.entries.len() != pc.dim * (pc.dim + 1) / 2 {
                return Err(Error::Validation(format!(
                    "PSD constraint of side {} has {} entries",
                    pc.dim,
                    pc.entries.len()
                )));
            }
            for e in &pc.entries {
                check(&e.terms)?;
            }
        }
        check(&self.objective)
    }
}

/// Solver termination status, normalized across backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Residuals of a reported solution.
#[derive(Debug, Clone, Copy, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// Outcome of a conic solve.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Objective value in the program's own sense (meaningful when optimal).
    pub objective: f64,
    pub x: Vec<f64>,
    /// Dual vector over the constraint rows, when the backend provides one
    /// (for infeasible programs this is an improving ray).
    pub dual: Option<Vec<f64>>,
    pub residuals: Residuals,
    pub iterations: usize,
    pub solve_time_s: f64,
}

/// Numerical tolerances for a solve.
#[derive(Debug, Clone, Copy)]
pub struct SolverTolerances {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances { tol_primal: 1e-8, tol_dual: 1e-8, tol_gap: 1e-8 }
    }
}

/// Contract implemented by every solver adapter.
pub trait ConicBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, p: &ConicProgram, tol: &SolverTolerances) -> Result<SolveResult>;
}

/// Instantiate a backend by name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn ConicBackend>> {
    match name {
        "clarabel" => Ok(Box::new(clarabel_backend::ClarabelBackend)),
        other => Err(Error::Unsupported(format!(
            "unknown solver backend '{other}' (available: clarabel)"
        ))),
    }
}

/// Backend selected by `QEXTRAP_BACKEND`, defaulting to Clarabel.
pub fn default_backend() -> Result<Box<dyn ConicBackend>> {
    let name = std::env::var("QEXTRAP_BACKEND").unwrap_or_else(|_| "clarabel".into());
    backend_by_name(&name)
}

/// Solve with the default backend and default tolerances.
pub fn solve(p: &ConicProgram) -> Result<SolveResult> {
    solve_with(p, &SolverTolerances::default())
}

/// Solve with the default backend and explicit tolerances.
pub fn solve_with(p: &ConicProgram, tol: &SolverTolerances) -> Result<SolveResult> {
    p.validate()?;
    default_backend()?.solve(p, tol)
}

// ---------------------------------------------------------------------------
// Complex Hermitian <-> real symmetric embedding
// ---------------------------------------------------------------------------

/// The real symmetric embedding of `d x d` complex Hermitian matrices.
///
/// `X` maps to the `2d x 2d` real symmetric matrix
/// `[[Re X, -Im X], [Im X, Re X]]`, which is PSD exactly when `X` is PSD
/// (each eigenvalue of `X` appears twice). Linear functionals translate with
/// a factor `1/2` so that `Re tr(F† X) = tr(embed_functional(F)ᵀ · embed(X))`.
#[derive(Debug, Clone, Copy)]
pub struct HermitianEmbedding {
    pub dim: usize,
}

/// Construct the embedding map for Hermitian blocks of side `d`.
pub fn embed_hermitian(d: usize) -> HermitianEmbedding {
    HermitianEmbedding { dim: d }
}

impl HermitianEmbedding {
    /// Embed a numeric Hermitian matrix into its real symmetric image.
    pub fn embed(&self, x: &DMatrix<Complex64>) -> DMatrix<f64> {
        let d = self.dim;
        assert_eq!((x.nrows(), x.ncols()), (d, d), "embedding dimension mismatch");
        let mut r = DMatrix::<f64>::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                let z = x[(i, j)];
                r[(i, j)] = z.re;
                r[(d + i, d + j)] = z.re;
                r[(i, d + j)] = -z.im;
                r[(d + i, j)] = z.im;
            }
        }
        r
    }

    /// Translate a linear functional `X -> Re tr(F† X)` to the embedded side:
    /// the returned real matrix `G` satisfies `Re tr(F† X) = tr(Gᵀ embed(X))`.
    pub fn embed_functional(&self, f: &DMatrix<Complex64>) -> DMatrix<f64> {
        self.embed(f).scale(0.5)
    }

    /// Recover the Hermitian matrix from an embedded image (averaging the
    /// two copies, useful for numeric solutions).
    pub fn extract(&self, r: &DMatrix<f64>) -> DMatrix<Complex64> {
        let d = self.dim;
        assert_eq!((r.nrows(), r.ncols()), (2 * d, 2 * d), "embedding dimension mismatch");
        DMatrix::from_fn(d, d, |i, j| {
            let re = 0.5 * (r[(i, j)] + r[(d + i, d + j)]);
            let im = 0.5 * (r[(d + i, j)] - r[(i, d + j)]);
            Complex64::new(re, im)
        })
    }
}

/// Internal realization of a complex Hermitian PSD variable.
#[derive(Debug, Clone)]
enum HermRepr {
    /// Generic case: `2d x 2d` real embedding with tying equalities.
    Embedded { block: PsdVar },
    /// Conjugation-symmetric case: `X = B M B^†` with `M` a real symmetric
    /// `d x d` PSD block and `B` a fixed unitary basis (each column has at
    /// most two nonzero entries). Valid exactly for matrices invariant under
    /// the antiunitary symmetry `X = J conj(X) J` defined by the basis.
    Rotated { block: PsdVar, basis: DMatrix<Complex64> },
    /// Completeness complement: `X = diag(diag) - sum_a others_a`, kept PSD
    /// by an affine PSD constraint instead of its own variable block.
    Complement { diag: Vec<LinExpr>, others: Vec<HermitianVar> },
}

/// A complex Hermitian PSD matrix variable.
///
/// The generic realization embeds `X` as a `2d x 2d` real PSD block with
/// tying equalities (equal diagonal copies, antisymmetric imaginary part).
/// When the model has an antiunitary symmetry (see
/// [`ConicProgram::hermitian_psd_flip`]), a rotated `d x d` real block is
/// used instead, quartering the cone size.
#[derive(Debug, Clone)]
pub struct HermitianVar {
    pub dim: usize,
    repr: HermRepr,
}

/// The unitary basis of the flip symmetry `X = J conj(X) J`, where `J`
/// reverses the standard basis: its columns are fixed vectors of the
/// antiunitary map `v -> J conj(v)`, so symmetric matrices become real in
/// this basis.
pub fn flip_symmetry_basis(d: usize) -> DMatrix<Complex64> {
    let mut b = DMatrix::<Complex64>::zeros(d, d);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let half = d / 2;
    for k in 0..half {
        let kf = d - 1 - k;
        // (e_k + e_kf)/sqrt(2) and (i e_k - i e_kf)/sqrt(2): both are fixed
        // by v -> J conj(v).
        b[(k, 2 * k)] = Complex64::new(inv_sqrt2, 0.0);
        b[(kf, 2 * k)] = Complex64::new(inv_sqrt2, 0.0);
        b[(k, 2 * k + 1)] = Complex64::new(0.0, inv_sqrt2);
        b[(kf, 2 * k + 1)] = Complex64::new(0.0, -inv_sqrt2);
    }
    if d % 2 == 1 {
        b[(half, d - 1)] = Complex64::new(1.0, 0.0);
    }
    b
}

impl ConicProgram {
    /// Allocate a `d x d` complex Hermitian PSD matrix variable (generic
    /// real embedding).
    pub fn hermitian_psd(&mut self, d: usize) -> HermitianVar {
        let block = self.psd_block(2 * d);
        // Tie the two real copies together.
        for j in 0..d {
            for i in 0..=j {
                let mut e = LinExpr::var(block.entry(i, j));
                e.push(block.entry(d + i, d + j), -1.0);
                self.add_eq(e, 0.0);
            }
        }
        // Imaginary part is antisymmetric with zero diagonal. The upper-right
        // block stores -Im X at (i, d+j).
        for i in 0..d {
            self.add_eq(LinExpr::var(block.entry(i, d + i)), 0.0);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let mut e = LinExpr::var(block.entry(i, d + j));
                e.push(block.entry(j, d + i), 1.0);
                self.add_eq(e, 0.0);
            }
        }
        HermitianVar { dim: d, repr: HermRepr::Embedded { block } }
    }

    /// Allocate a `d x d` complex Hermitian PSD variable restricted to the
    /// flip symmetry `X = J conj(X) J` (`J` reverses the basis order),
    /// realized as a single `d x d` real symmetric PSD block.
    ///
    /// This is lossless for models whose evaluation vectors are pure phase
    /// vectors over an energy list symmetric about its midpoint
    /// (`E_k + E_{d-1-k}` constant): conjugating and flipping such a model
    /// preserves every dataset functional, so feasible values are unchanged
    /// when variables are averaged onto the symmetric subspace.
    pub fn hermitian_psd_flip(&mut self, d: usize) -> HermitianVar {
        let block = self.psd_block(d);
        HermitianVar { dim: d, repr: HermRepr::Rotated { block, basis: flip_symmetry_basis(d) } }
    }

    /// Allocate the PSD complement `X = diag(diag) - sum_a others_a` of a
    /// completeness relation, enforced as an affine PSD constraint rather
    /// than a fresh variable block with tying equalities.
    ///
    /// `diag` gives the real diagonal entries of the sum in the original
    /// basis. All `others` must share one realization; in the flip-reduced
    /// case `diag[i]` and `diag[d-1-i]` must be the same expression so that
    /// the rotated complement stays real.
    pub fn hermitian_psd_complement(
        &mut self,
        diag: Vec<LinExpr>,
        others: Vec<HermitianVar>,
    ) -> HermitianVar {
        let d = diag.len();
        assert!(!others.is_empty(), "complement needs at least one explicit block");
        assert!(others.iter().all(|o| o.dim == d), "complement dimension mismatch");
        let rotated = matches!(others[0].repr, HermRepr::Rotated { .. });
        assert!(
            others
                .iter()
                .all(|o| matches!(o.repr, HermRepr::Rotated { .. }) == rotated),
            "complement blocks must share a realization"
        );

        if rotated {
            for i in 0..d / 2 {
                assert_eq!(diag[i], diag[d - 1 - i], "flip-asymmetric diagonal in complement");
            }
            let basis = flip_symmetry_basis(d);
            // In the flip basis a flip-symmetric diagonal stays diagonal:
            // (B^† D B)_pq = sum_i conj(B_ip) B_iq D_ii.
            let mut entries = Vec::with_capacity(d * (d + 1) / 2);
            for q in 0..d {
                for p in 0..=q {
                    let mut e = LinExpr::zero();
                    for i in 0..d {
                        let c = (basis[(i, p)].conj() * basis[(i, q)]).re;
                        if c != 0.0 {
                            e.add(&diag[i].scaled(c));
                        }
                    }
                    for o in &others {
                        if let HermRepr::Rotated { block, .. } = &o.repr {
                            e.push(block.entry(p, q), -1.0);
                        }
                    }
                    entries.push(e);
                }
            }
            self.add_psd_constraint(d, entries);
        } else {
            // Embedded blocks: the complement's embedding is
            // diag(diag, diag) minus the embedded summands entrywise.
            let mut entries = Vec::with_capacity(d * (2 * d + 1));
            for q in 0..2 * d {
                for p in 0..=q {
                    let mut e = LinExpr::zero();
                    if p == q {
                        e.add(&diag[p % d]);
                    }
                    for o in &others {
                        if let HermRepr::Embedded { block } = &o.repr {
                            e.push(block.entry(p, q), -1.0);
                        }
                    }
                    entries.push(e);
                }
            }
            self.add_psd_constraint(2 * d, entries);
        }
        HermitianVar { dim: d, repr: HermRepr::Complement { diag, others } }
    }
}

impl HermitianVar {
    /// Coefficients of the real block entries `(p, q), p <= q` appearing in
    /// a complex entry `(B M B^†)[i, j]`, exploiting that `B` columns have at
    /// most two nonzero rows.
    fn rotated_entry(basis: &DMatrix<Complex64>, block: &PsdVar, i: usize, j: usize) -> Vec<(VarId, Complex64)> {
        let d = basis.nrows();
        let mut terms = Vec::new();
        for p in 0..d {
            let bip = basis[(i, p)];
            if bip == Complex64::new(0.0, 0.0) {
                continue;
            }
            for q in 0..d {
                let bjq = basis[(j, q)];
                if bjq == Complex64::new(0.0, 0.0) {
                    continue;
                }
                terms.push((block.entry(p.min(q), p.max(q)), bip * bjq.conj()));
            }
        }
        terms
    }

    /// Affine expression for `Re X[i,j]`.
    pub fn re(&self, i: usize, j: usize) -> LinExpr {
        match &self.repr {
            HermRepr::Embedded { block } => LinExpr::var(block.entry(i.min(j), i.max(j))),
            HermRepr::Rotated { block, basis } => {
                let mut e = LinExpr::zero();
                for (id, c) in Self::rotated_entry(basis, block, i, j) {
                    if c.re != 0.0 {
                        e.push(id, c.re);
                    }
                }
                e.simplify();
                e
            }
            HermRepr::Complement { diag, others } => {
                let mut e = LinExpr::zero();
                if i == j {
                    e.add(&diag[i]);
                }
                for o in others {
                    e.sub(&o.re(i, j));
                }
                e.simplify();
                e
            }
        }
    }

    /// Affine expression for `Im X[i,j]` (zero on the diagonal).
    pub fn im(&self, i: usize, j: usize) -> LinExpr {
        match &self.repr {
            HermRepr::Embedded { block } => {
                if i == j {
                    return LinExpr::zero();
                }
                // embed stores -Im X[i,j] at (i, d+j) for i < d;
                // Im X[j,i] = -Im X[i,j].
                if i < j {
                    LinExpr::term(block.entry(i, self.dim + j), -1.0)
                } else {
                    LinExpr::term(block.entry(j, self.dim + i), 1.0)
                }
            }
            HermRepr::Rotated { block, basis } => {
                if i == j {
                    return LinExpr::zero();
                }
                let mut e = LinExpr::zero();
                for (id, c) in Self::rotated_entry(basis, block, i, j) {
                    if c.im != 0.0 {
                        e.push(id, c.im);
                    }
                }
                e.simplify();
                e
            }
            HermRepr::Complement { others, .. } => {
                let mut e = LinExpr::zero();
                for o in others {
                    e.sub(&o.im(i, j));
                }
                e.simplify();
                e
            }
        }
    }

    /// Affine expression for `Re <u| X |v>` with numeric complex vectors.
    pub fn re_sandwich(&self, u: &[Complex64], v: &[Complex64]) -> LinExpr {
        let d = self.dim;
        assert_eq!(u.len(), d);
        assert_eq!(v.len(), d);
        match &self.repr {
            HermRepr::Embedded { .. } => {
                let mut e = LinExpr::zero();
                for i in 0..d {
                    for j in 0..d {
                        // Re( conj(u_i) X_ij v_j ) = Re(w) Re X_ij - Im(w) Im X_ij
                        // with w = conj(u_i) v_j.
                        let w = u[i].conj() * v[j];
                        if w.re != 0.0 {
                            e.add(&self.re(i, j).scaled(w.re));
                        }
                        if w.im != 0.0 {
                            e.sub(&self.im(i, j).scaled(w.im));
                        }
                    }
                }
                e.simplify();
                e
            }
            HermRepr::Rotated { block, basis } => {
                // Re <u|B M B^†|v> = sum_pq Re[conj(ut_p) vt_q] M_pq with
                // ut = B^† u, vt = B^† v and M real symmetric.
                let ut = basis.adjoint() * nalgebra::DVector::from_column_slice(u);
                let vt = basis.adjoint() * nalgebra::DVector::from_column_slice(v);
                let mut e = LinExpr::zero();
                for p in 0..d {
                    let wpp = (ut[p].conj() * vt[p]).re;
                    if wpp != 0.0 {
                        e.push(block.entry(p, p), wpp);
                    }
                    for q in (p + 1)..d {
                        let w = (ut[p].conj() * vt[q] + ut[q].conj() * vt[p]).re;
                        if w != 0.0 {
                            e.push(block.entry(p, q), w);
                        }
                    }
                }
                e.simplify();
                e
            }
            HermRepr::Complement { diag, others } => {
                let mut e = LinExpr::zero();
                for i in 0..d {
                    let w = (u[i].conj() * v[i]).re;
                    if w != 0.0 {
                        e.add(&diag[i].scaled(w));
                    }
                }
                for o in others {
                    e.sub(&o.re_sandwich(u, v));
                }
                e.simplify();
                e
            }
        }
    }

    /// Read the numeric Hermitian matrix out of a primal solution vector.
    pub fn value(&self, x: &[f64]) -> DMatrix<Complex64> {
        let d = self.dim;
        match &self.repr {
            HermRepr::Embedded { .. } => DMatrix::from_fn(d, d, |i, j| {
                Complex64::new(self.re(i, j).eval(x), self.im(i, j).eval(x))
            }),
            HermRepr::Rotated { block, basis } => {
                let m = DMatrix::<Complex64>::from_fn(d, d, |p, q| {
                    Complex64::new(x[block.entry(p.min(q), p.max(q))], 0.0)
                });
                basis * m * basis.adjoint()
            }
            HermRepr::Complement { diag, others } => {
                let mut m = DMatrix::<Complex64>::from_fn(d, d, |i, j| {
                    if i == j {
                        Complex64::new(diag[i].eval(x), 0.0)
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                });
                for o in others {
                    m -= o.value(x);
                }
                m
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn lp_min_with_lower_bound() {
        let mut p = ConicProgram::new();
        let x = p.nonneg_var();
        p.add_ge(LinExpr::var(x), 3.0);
        p.set_objective(Sense::Minimize, LinExpr::var(x));
        let r = solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 3.0).abs() < 1e-7, "objective {}", r.objective);
    }

    #[test]
    fn sdp_max_trace_product_is_max_eigenvalue() {
        // max tr(CX), X psd, tr X = 1, C = diag(1, 2) -> 2.
        let mut p = ConicProgram::new();
        let x = p.psd_block(2);
        let mut tr = LinExpr::var(x.entry(0, 0));
        tr.push(x.entry(1, 1), 1.0);
        p.add_eq(tr, 1.0);
        let mut obj = LinExpr::var(x.entry(0, 0));
        obj.push(x.entry(1, 1), 2.0);
        p.set_objective(Sense::Maximize, obj);
        let r = solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 2.0).abs() < 1e-7, "objective {}", r.objective);
    }

    #[test]
    fn psd_off_diagonal_entries_are_unscaled() {
        // max X01 with unit diagonal: the optimum is 1 for the plain entry.
        let mut p = ConicProgram::new();
        let x = p.psd_block(2);
        p.add_eq(LinExpr::var(x.entry(0, 0)), 1.0);
        p.add_eq(LinExpr::var(x.entry(1, 1)), 1.0);
        p.set_objective(Sense::Maximize, LinExpr::var(x.entry(0, 1)));
        let r = solve(&p).unwrap();
        assert!((r.objective - 1.0).abs() < 1e-6, "objective {}", r.objective);
    }

    #[test]
    fn hermitian_variable_respects_complex_psd_boundary() {
        // max Im X01 for a 2x2 Hermitian PSD X with unit diagonal -> 1.
        let mut p = ConicProgram::new();
        let x = p.hermitian_psd(2);
        p.add_eq(x.re(0, 0), 1.0);
        p.add_eq(x.re(1, 1), 1.0);
        p.set_objective(Sense::Maximize, x.im(0, 1));
        let r = solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 1.0).abs() < 1e-6, "objective {}", r.objective);
        let m = x.value(&r.x);
        assert!((m[(0, 1)] - c(0.0, 1.0)).norm() < 1e-5);
        assert!((m[(1, 0)] - c(0.0, -1.0)).norm() < 1e-5);
    }

    #[test]
    fn infeasible_program_is_reported() {
        let mut p = ConicProgram::new();
        let x = p.nonneg_var();
        p.add_le(LinExpr::var(x), -1.0);
        p.set_objective(Sense::Minimize, LinExpr::var(x));
        let r = solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_program_is_reported() {
        let mut p = ConicProgram::new();
        let x = p.free_var();
        p.set_objective(Sense::Minimize, LinExpr::var(x));
        let r = solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    #[test]
    fn embedding_maps_hermitian_psd_to_real_psd() {
        let e = embed_hermitian(2);
        let x = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(1.0, 0.0)]);
        let r = e.embed(&x);
        let eigs = r.clone().symmetric_eigen().eigenvalues;
        assert!(eigs.iter().all(|&v| v > -1e-12), "eigs {eigs:?}");
        let back = e.extract(&r);
        assert!((back - &x).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-14);

        let y = DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(0.0, 0.0)]);
        let ry = e.embed(&y);
        let min = ry.symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min < -0.5, "indefinite matrix must embed indefinitely");
    }

    #[test]
    fn embedded_functional_preserves_real_pairing() {
        let e = embed_hermitian(2);
        let x = DMatrix::from_row_slice(2, 2, &[c(0.7, 0.0), c(0.2, 0.4), c(0.2, -0.4), c(0.3, 0.0)]);
        let f = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, -0.1), c(0.5, 0.1), c(-2.0, 0.0)]);
        let lhs = (f.adjoint() * &x).trace().re;
        let rhs = (e.embed_functional(&f).transpose() * e.embed(&x)).trace();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn dump_round_trips_exactly() {
        let mut p = ConicProgram::new();
        let f = p.free_vars(2);
        let n = p.nonneg_var();
        let x = p.psd_block(3);
        p.add_eq(LinExpr::term(f, 0.25), 1.0 / 3.0);
        let mut row = LinExpr::var(f + 1);
        row.push(n, -2.5e-3);
        row.push(x.entry(0, 2), 1e17);
        p.add_le(row, -7.0);
        let mut obj = LinExpr::var(n);
        obj.push(x.entry(1, 1), -0.1);
        obj.constant = 4.25;
        let mut top = LinExpr::var(n);
        top.constant = 0.5;
        p.add_psd_constraint(2, vec![top, LinExpr::term(x.entry(0, 1), -1.0), LinExpr::var(f)]);
        p.set_objective(Sense::Maximize, obj);

        let text = dump_standard_form(&p);
        let q = parse_standard_form(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(text, dump_standard_form(&q));
        // Determinism: a fresh dump of the same program is identical.
        assert_eq!(text, dump_standard_form(&p));
    }

    #[test]
    fn embedded_complement_enforces_completeness_psd() {
        // maximize <e0|D - M|e0> with M Hermitian PSD, M[0,0] pinned to 0.3,
        // D = diag(w), w >= 0, sum w = 1. The complement PSD constraint
        // forces w_0 >= 0.3, so the optimum is 0.7.
        let mut p = ConicProgram::new();
        let m = p.hermitian_psd(2);
        let w = p.nonneg_vars(2);
        let diag: Vec<LinExpr> = (0..2).map(|i| LinExpr::var(w + i)).collect();
        let mut trace = LinExpr::var(w);
        trace.push(w + 1, 1.0);
        p.add_eq(trace, 1.0);
        p.add_eq(m.re(0, 0), 0.3);
        let comp = p.hermitian_psd_complement(diag, vec![m.clone()]);
        let u = [c(1.0, 0.0), c(0.0, 0.0)];
        p.set_objective(Sense::Maximize, comp.re_sandwich(&u, &u));
        let r = solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 0.7).abs() < 1e-6, "objective {}", r.objective);
        // The extracted complement matches diag(w) - M and is PSD.
        let diff = comp.value(&r.x);
        let explicit = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            2,
            (0..2).map(|i| c(r.x[w + i], 0.0)),
        )) - m.value(&r.x);
        assert!((&diff - explicit).norm() < 1e-8);
        let min_eig = diff
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min_eig > -1e-7, "complement eigenvalue {min_eig}");
    }

    #[test]
    fn rotated_complement_matches_analytic_optimum() {
        // Flip-reduced 2x2 blocks have equal diagonals. With the sum pinned
        // to diag(1/2, 1/2) and Re M[0,1] forced to 0.2, PSD of both M and
        // its complement caps <e0|D - M|e0> at 0.3.
        let mut p = ConicProgram::new();
        let m = p.hermitian_psd_flip(2);
        let w = p.nonneg_var();
        let diag = vec![LinExpr::var(w), LinExpr::var(w)];
        p.add_eq(LinExpr::term(w, 2.0), 1.0);
        p.add_eq(m.re(0, 1), 0.2);
        let comp = p.hermitian_psd_complement(diag, vec![m.clone()]);
        let u = [c(1.0, 0.0), c(0.0, 0.0)];
        p.set_objective(Sense::Maximize, comp.re_sandwich(&u, &u));
        let r = solve(&p).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective - 0.3).abs() < 1e-6, "objective {}", r.objective);
        let sum = comp.value(&r.x) + m.value(&r.x);
        assert!((sum[(0, 0)].re - 0.5).abs() < 1e-7);
        assert!(sum[(0, 1)].norm() < 1e-7);
    }

    #[test]
    fn dump_of_empty_program_is_header_only() {
        let p = ConicProgram::new();
        let text = dump_standard_form(&p);
        let q = parse_standard_form(&text).unwrap();
        assert_eq!(p, q);
        assert!(text.starts_with("conicprogram v1\n"));
    }

    #[test]
    fn validate_rejects_out_of_range_indices() {
        let mut p = ConicProgram::new();
        p.free_var();
        p.add_eq(LinExpr::var(5), 0.0);
        assert!(p.validate().is_err());
    }
}
