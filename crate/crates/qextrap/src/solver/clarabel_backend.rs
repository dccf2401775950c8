//! Clarabel adapter for the conic solve contract.

use clarabel::algebra as ca;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use super::{
    ConeKind, ConicBackend, ConicProgram, Residuals, Sense, SolveResult, SolveStatus,
    SolverTolerances,
};
use crate::error::Result;

/// Adapter mapping [`ConicProgram`] onto Clarabel's `Ax + s = b, s in K` form.
pub struct ClarabelBackend;

const SQRT2: f64 = std::f64::consts::SQRT_2;

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, p: &ConicProgram, tol: &SolverTolerances) -> Result<SolveResult> {
        let n = p.num_vars;
        let flip = match p.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };
        let mut q = vec![0.0; n];
        for &(i, c) in &p.objective {
            q[i] += flip * c;
        }

        // Row layout: equalities (Zero cone), inequalities + nonnegative
        // variable bounds (Nonnegative cone), then one scaled-triangle block
        // per PSD variable block.
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row = 0usize;

        for r in &p.eq_rows {
            for &(i, c) in &r.terms {
                triplets.push((row, i, c));
            }
            b.push(r.rhs);
            row += 1;
        }
        if !p.eq_rows.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(p.eq_rows.len()));
        }

        let mut nonneg_rows = 0usize;
        for r in &p.le_rows {
            for &(i, c) in &r.terms {
                triplets.push((row, i, c));
            }
            b.push(r.rhs);
            row += 1;
            nonneg_rows += 1;
        }
        for blk in &p.blocks {
            if blk.kind == ConeKind::NonNeg {
                for k in 0..blk.len {
                    triplets.push((row, blk.start + k, -1.0));
                    b.push(0.0);
                    row += 1;
                    nonneg_rows += 1;
                }
            }
        }
        if nonneg_rows > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg_rows));
        }

        for blk in &p.blocks {
            if let ConeKind::Psd { dim } = blk.kind {
                // s = svec(X) with off-diagonal entries scaled by sqrt(2),
                // upper triangle in column-major order.
                let mut k = 0usize;
                for j in 0..dim {
                    for i in 0..=j {
                        let scale = if i == j { 1.0 } else { SQRT2 };
                        triplets.push((row, blk.start + k, -scale));
                        b.push(0.0);
                        row += 1;
                        k += 1;
                    }
                }
                cones.push(SupportedConeT::PSDTriangleConeT(dim));
            }
        }

        // Affine PSD constraints: s = b - Ax must equal the scaled triangle
        // of the affine matrix, so b carries the constants and A the negated
        // coefficients.
        for pc in &p.psd_constraints {
            let mut k = 0usize;
            for j in 0..pc.dim {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { SQRT2 };
                    let e = &pc.entries[k];
                    for &(id, c) in &e.terms {
                        triplets.push((row, id, -scale * c));
                    }
                    b.push(scale * e.constant);
                    row += 1;
                    k += 1;
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(pc.dim));
        }

        let a = csc_from_triplets(row, n, &mut triplets);
        let p_mat = ca::CscMatrix::spalloc((n, n), 0);

        let mut settings = DefaultSettings::default();
        settings.verbose = false;
        settings.tol_feas = tol.tol_primal.min(tol.tol_dual);
        settings.tol_gap_abs = tol.tol_gap;
        settings.tol_gap_rel = tol.tol_gap;
        // The scalar qdldl factorization wins on small systems, while faer's
        // supernodal LDL handles the dense fronts of large PSD blocks far
        // better. Pick by the total scaled-triangle size unless overridden.
        let psd_rows: usize = p
            .blocks
            .iter()
            .filter_map(|b| match b.kind {
                ConeKind::Psd { dim } => Some(dim * (dim + 1) / 2),
                _ => None,
            })
            .chain(p.psd_constraints.iter().map(|c| c.dim * (c.dim + 1) / 2))
            .sum();
        let auto = if psd_rows > 600 { "faer" } else { "qdldl" };
        settings.direct_solve_method =
            std::env::var("QEXTRAP_LDL").unwrap_or_else(|_| auto.into());

        let mut solver = DefaultSolver::new(&p_mat, &q, &a, &b, &cones, settings)
            .map_err(|e| crate::error::Error::Solver(format!("solver setup failed: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            _ => SolveStatus::NumericalFailure,
        };

        let x = sol.x.clone();
        let objective = flip * sol.obj_val + p.obj_constant;
        let residuals = if status == SolveStatus::Optimal {
            Residuals {
                primal: primal_residual(p, &x),
                dual: (sol.obj_val - sol.obj_val_dual).abs()
                    / (1.0 + sol.obj_val.abs().max(sol.obj_val_dual.abs())),
                gap: (sol.obj_val - sol.obj_val_dual).abs(),
            }
        } else {
            Residuals::default()
        };

        if status == SolveStatus::NumericalFailure {
            return Ok(SolveResult {
                status,
                objective: f64::NAN,
                x,
                dual: Some(sol.z.clone()),
                residuals,
                iterations: sol.iterations as usize,
                solve_time_s: sol.solve_time,
            });
        }

        Ok(SolveResult {
            status,
            objective,
            x,
            dual: Some(sol.z.clone()),
            residuals,
            iterations: sol.iterations as usize,
            solve_time_s: sol.solve_time,
        })
    }
}

/// Worst primal constraint violation of `x` (linear rows, sign constraints,
/// and minimum eigenvalue of each PSD block).
pub fn primal_residual(p: &ConicProgram, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for r in &p.eq_rows {
        let v: f64 = r.terms.iter().map(|&(i, c)| c * x[i]).sum();
        worst = worst.max((v - r.rhs).abs());
    }
    for r in &p.le_rows {
        let v: f64 = r.terms.iter().map(|&(i, c)| c * x[i]).sum();
        worst = worst.max(v - r.rhs);
    }
    for blk in &p.blocks {
        match blk.kind {
            ConeKind::NonNeg => {
                for k in 0..blk.len {
                    worst = worst.max(-x[blk.start + k]);
                }
            }
            ConeKind::Psd { dim } => {
                let mut m = DMatrix::<f64>::zeros(dim, dim);
                let mut k = 0usize;
                for j in 0..dim {
                    for i in 0..=j {
                        m[(i, j)] = x[blk.start + k];
                        m[(j, i)] = x[blk.start + k];
                        k += 1;
                    }
                }
                if let Some(min_eig) = m
                    .symmetric_eigen()
                    .eigenvalues
                    .iter()
                    .cloned()
                    .reduce(f64::min)
                {
                    worst = worst.max(-min_eig);
                }
            }
            ConeKind::Free => {}
        }
    }
    for pc in &p.psd_constraints {
        let mut m = DMatrix::<f64>::zeros(pc.dim, pc.dim);
        let mut k = 0usize;
        for j in 0..pc.dim {
            for i in 0..=j {
                let v = pc.entries[k].eval(x);
                m[(i, j)] = v;
                m[(j, i)] = v;
                k += 1;
            }
        }
        if let Some(min_eig) =
            m.symmetric_eigen().eigenvalues.iter().cloned().reduce(f64::min)
        {
            worst = worst.max(-min_eig);
        }
    }
    worst
}

fn csc_from_triplets(
    rows: usize,
    cols: usize,
    triplets: &mut Vec<(usize, usize, f64)>,
) -> ca::CscMatrix<f64> {
    triplets.sort_by_key(|&(r, c, _)| (c, r));
    // Sum duplicate (row, col) entries in place.
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
    for &(r, c, v) in triplets.iter() {
        match merged.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => merged.push((r, c, v)),
        }
    }
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::with_capacity(merged.len());
    let mut nzval = Vec::with_capacity(merged.len());
    let mut col = 0usize;
    colptr.push(0);
    for &(r, c, v) in &merged {
        while col < c {
            colptr.push(rowval.len());
            col += 1;
        }
        rowval.push(r);
        nzval.push(v);
    }
    while col < cols {
        colptr.push(rowval.len());
        col += 1;
    }
    ca::CscMatrix::new(rows, cols, colptr, rowval, nzval)
}
