//! Jacobi-preconditioned conjugate gradient.

use nalgebra::DMatrix;

use super::sparse::{dot, norm, SparseMatrix};

/// A symmetric positive definite operator, applied matrix-free.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    /// Diagonal used as a Jacobi preconditioner.
    fn diagonal(&self) -> Vec<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|r| (0..self.ncols()).map(|c| self[(r, c)] * x[c]).sum())
            .collect()
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows()).map(|i| self[(i, i)]).collect()
    }
}

/// `JᵀJ + λI`, never formed explicitly.
pub struct NormalOperator<'a> {
    pub jacobian: &'a SparseMatrix,
    pub lambda: f64,
}

impl LinearOperator for NormalOperator<'_> {
    fn dim(&self) -> usize {
        self.jacobian.cols()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let jx = self.jacobian.mul_vec(x);
        let mut y = self.jacobian.tr_mul_vec(&jx);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += self.lambda * xi;
        }
        y
    }

    fn diagonal(&self) -> Vec<f64> {
        self.jacobian.col_sq_norms().into_iter().map(|d| d + self.lambda).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` of the returned iterate.
    pub relative_residual: f64,
    pub converged: bool,
    /// The iteration cap was hit or the operator showed non-positive
    /// curvature; `x` is the best iterate seen.
    pub stagnated: bool,
}

pub const CG_TOLERANCE: f64 = 1e-8;

/// Solves `A x = b` to relative residual `tol`, within `max_iter`
/// iterations (`10·dim` when `None`).
pub fn conjugate_gradient(a: &dyn LinearOperator, b: &[f64], tol: f64, max_iter: Option<usize>) -> CgResult {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let max_iter = max_iter.unwrap_or(10 * n.max(1));
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return CgResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
            stagnated: false,
        };
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut best = (1.0, x.clone());
    let mut iterations = 0;
    let mut stagnated = false;
    while iterations < max_iter {
        let ap = a.apply(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            stagnated = true;
            break;
        }
        let alpha = rz / curvature;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        let rel = norm(&r) / b_norm;
        if rel < best.0 {
            best = (rel, x.clone());
        }
        if rel <= tol {
            break;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // The recurrence residual drifts; report the true one.
    let ax = a.apply(&best.1);
    let true_res: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let relative_residual = norm(&true_res) / b_norm;
    let converged = best.0 <= tol;
    CgResult {
        x: best.1,
        iterations,
        relative_residual,
        converged,
        stagnated: stagnated || !converged,
    }
}

/// Step `δ` solving `(JᵀJ + λI) δ = −Jᵀ r`.
pub fn solve_normal_equations_cg(jacobian: &SparseMatrix, residuals: &[f64], lambda: f64) -> CgResult {
    let g = jacobian.tr_mul_vec(residuals);
    let b: Vec<f64> = g.iter().map(|v| -v).collect();
    conjugate_gradient(&NormalOperator { jacobian, lambda }, &b, CG_TOLERANCE, None)
}
