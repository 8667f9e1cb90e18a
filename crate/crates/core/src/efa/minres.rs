//! Minimum-residual factor extraction.
//!
//! For fixed uniquenesses ψ the least-squares loadings come from the top-m
//! eigenpairs of `R - diag(ψ)`; the remaining discrepancy is the sum of the
//! squared trailing eigenvalues. Minimizing it over ψ drives the diagonal
//! residual to zero, so the optimum coincides with the off-diagonal minres
//! solution.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::EfaError;
use crate::linalg;
use crate::optim::{minimize_bfgs, BfgsOptions, Bounds};

/// Uniquenesses are not allowed below this value; hitting it is reported as
/// a Heywood case.
pub const HEYWOOD_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinresOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MinresOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinresFit {
    /// Unrotated p×m loadings.
    pub loadings: DMatrix<f64>,
    pub psi: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Indices of items whose uniqueness sits on the lower bound.
    pub heywood: Vec<usize>,
}

/// Loadings from the top-m eigenpairs of `R - diag(psi)` and the residual
/// objective (sum of squares of the discarded and negative eigenvalues).
pub fn loadings_for(r: &DMatrix<f64>, psi: &[f64], m: usize) -> (DMatrix<f64>, f64) {
    let p = r.nrows();
    let mut reduced = r.clone();
    for i in 0..p {
        reduced[(i, i)] -= psi[i];
    }
    let (vals, vecs) = linalg::sym_eigen_desc(&reduced);
    let mut l = DMatrix::zeros(p, m);
    let mut f = 0.0;
    for k in 0..p {
        let v = vals[k];
        if k < m && v > 0.0 {
            let s = v.sqrt();
            for i in 0..p {
                l[(i, k)] = vecs[(i, k)] * s;
            }
        } else {
            f += v * v;
        }
    }
    (l, f)
}

fn objective(r: &DMatrix<f64>, psi: &[f64], m: usize) -> (f64, Vec<f64>) {
    let (l, f) = loadings_for(r, psi, m);
    let grad = (0..r.nrows())
        .map(|i| {
            let h: f64 = l.row(i).iter().map(|v| v * v).sum();
            2.0 * (psi[i] + h - r[(i, i)])
        })
        .collect();
    (0.5 * f, scale(grad, 0.5))
}

fn scale(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= s);
    v
}

/// Extracts `m` factors from a correlation matrix by minimum residual.
pub fn fit_minres(r: &DMatrix<f64>, m: usize, opts: &MinresOptions) -> Result<MinresFit, EfaError> {
    let p = r.nrows();
    if m == 0 || m >= p {
        return Err(EfaError::Options(format!("factor count {m} must be in 1..{p}")));
    }
    let start: Vec<f64> = match linalg::smc(r) {
        Some(s) => s.iter().map(|v| 1.0 - v.clamp(0.0, 0.995)).collect(),
        None => vec![0.5; p],
    };
    let upper: Vec<f64> = (0..p).map(|i| r[(i, i)].max(HEYWOOD_BOUND)).collect();
    let bounds = Bounds {
        lower: vec![HEYWOOD_BOUND; p],
        upper,
    };
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        rel_f_tol: f64::INFINITY,
        max_backtracks: 60,
    };
    let out = minimize_bfgs(
        |psi| Some(objective(r, psi, m)),
        start,
        Some(DMatrix::identity(p, p) * 0.5),
        Some(&bounds),
        &bfgs,
    );
    let (mut loadings, f) = loadings_for(r, &out.x, m);
    orient_columns(&mut loadings);
    let heywood = out
        .x
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= HEYWOOD_BOUND * (1.0 + 1e-9))
        .map(|(i, _)| i)
        .collect();
    Ok(MinresFit {
        loadings,
        psi: out.x,
        objective: 0.5 * f,
        iterations: out.iterations,
        converged: out.converged,
        heywood,
    })
}

/// Flips unrotated columns so their sums are non-negative (eigenvectors are
/// sign-ambiguous; this keeps runs reproducible).
fn orient_columns(l: &mut DMatrix<f64>) {
    for k in 0..l.ncols() {
        let s: f64 = l.column(k).sum();
        if s < 0.0 {
            l.column_mut(k).neg_mut();
        }
    }
}

/// Off-diagonal sum of squared residuals of `R - Λ Φ Λ'`.
pub fn offdiag_residual_ss(r: &DMatrix<f64>, implied: &DMatrix<f64>) -> f64 {
    let p = r.nrows();
    let mut s = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                let d = r[(i, j)] - implied[(i, j)];
                s += d * d;
            }
        }
    }
    s
}

pub fn communalities(l: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(l.nrows(), l.row_iter().map(|row| row.iter().map(|v| v * v).sum()))
}
