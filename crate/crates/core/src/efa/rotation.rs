//! Oblique quartimin (oblimin with γ = 0) by gradient projection.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parallel::replicate_rng;
use crate::linalg;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationOptions {
    pub n_starts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the Frobenius norm of the projected gradient.
    pub tol: f64,
    pub seed: u64,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self {
            n_starts: 10,
            max_iter: 1000,
            tol: 1e-8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rotation {
    pub pattern: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    /// Transformation with unit-length columns: pattern = A (T')⁻¹, Φ = T'T.
    pub t: DMatrix<f64>,
    pub criterion: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of starts that met the tolerance.
    pub starts_converged: usize,
}

/// Quartimin criterion and its gradient with respect to the loadings.
pub fn quartimin(l: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let l2 = l.map(|v| v * v);
    let m = l.ncols();
    let n = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { 1.0 });
    let l2n = &l2 * n;
    let f = l2.component_mul(&l2n).sum() / 4.0;
    let g = l.component_mul(&l2n);
    (f, g)
}

fn normalize_columns(x: &mut DMatrix<f64>) {
    for mut c in x.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
}

struct Gpa {
    t: DMatrix<f64>,
    l: DMatrix<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

fn pattern_for(a: &DMatrix<f64>, t: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let tinv = linalg::inverse(t)?;
    Some((a * tinv.transpose(), tinv))
}

fn gpa_oblique(a: &DMatrix<f64>, t0: DMatrix<f64>, opts: &RotationOptions) -> Option<Gpa> {
    let mut t = t0;
    let (mut l, mut tinv) = pattern_for(a, &t)?;
    let (mut f, mut gq) = quartimin(&l);
    let mut g = -(l.transpose() * &gq * &tinv).transpose();
    let mut al = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it;
        let colsum = t.component_mul(&g).row_sum();
        let mut gp = g.clone();
        for k in 0..t.ncols() {
            let c = colsum[k];
            gp.column_mut(k).axpy(-c, &t.column(k), 1.0);
        }
        let s = gp.norm();
        if s < opts.tol {
            converged = true;
            break;
        }
        al *= 2.0;
        let mut step = None;
        for _ in 0..=20 {
            let mut x = &t - &gp * al;
            normalize_columns(&mut x);
            if let Some((lt, tinv_t)) = pattern_for(a, &x) {
                let (ft, gqt) = quartimin(&lt);
                if ft < f - 0.5 * s * s * al {
                    step = Some((x, lt, tinv_t, ft, gqt));
                    break;
                }
            }
            al /= 2.0;
        }
        let Some((x, lt, tinv_t, ft, gqt)) = step else {
            // No decrease found; the incumbent is a stationary point to
            // working precision.
            converged = s < opts.tol.sqrt();
            break;
        };
        t = x;
        l = lt;
        tinv = tinv_t;
        f = ft;
        gq = gqt;
        g = -(l.transpose() * &gq * &tinv).transpose();
        iterations = it + 1;
    }
    Some(Gpa {
        t,
        l,
        f,
        iterations,
        converged,
    })
}

fn random_orthonormal(m: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = replicate_rng(seed, stream);
    let z = DMatrix::<f64>::from_fn(m, m, |_, _| StandardNormal.sample(&mut rng));
    z.qr().q()
}

/// Rotates unrotated loadings `a` (p×m). The first start is the identity;
/// the remaining starts are random orthonormal matrices. The result is put
/// in canonical form (see [`canonicalize`]).
pub fn rotate_oblimin(a: &DMatrix<f64>, opts: &RotationOptions) -> Result<Rotation, Box<Rotation>> {
    let m = a.ncols();
    if m < 2 {
        let mut pattern = a.clone();
        let mut phi = DMatrix::identity(m, m);
        canonicalize(&mut pattern, &mut phi);
        return Ok(Rotation {
            pattern,
            phi,
            t: DMatrix::identity(m, m),
            criterion: 0.0,
            iterations: 0,
            converged: true,
            starts_converged: 1,
        });
    }
    let n_starts = opts.n_starts.max(1);
    let runs: Vec<Option<Gpa>> = (0..n_starts as u64)
        .into_par_iter()
        .map(|s| {
            let t0 = if s == 0 {
                DMatrix::identity(m, m)
            } else {
                random_orthonormal(m, opts.seed, s)
            };
            gpa_oblique(a, t0, opts)
        })
        .collect();
    let starts_converged = runs.iter().flatten().filter(|g| g.converged).count();
    // Best criterion among converged starts; fall back to all starts.
    let pick = |require: bool| {
        runs.iter()
            .flatten()
            .filter(|g| !require || g.converged)
            .min_by(|x, y| x.f.total_cmp(&y.f))
    };
    let best = pick(true).or_else(|| pick(false));
    let Some(best) = best else {
        let mut pattern = a.clone();
        let mut phi = DMatrix::identity(m, m);
        canonicalize(&mut pattern, &mut phi);
        return Err(Box::new(Rotation {
            pattern,
            phi,
            t: DMatrix::identity(m, m),
            criterion: f64::NAN,
            iterations: 0,
            converged: false,
            starts_converged: 0,
        }));
    };
    let mut pattern = best.l.clone();
    let mut phi = linalg::symmetrize(&(best.t.transpose() * &best.t));
    for k in 0..m {
        phi[(k, k)] = 1.0;
    }
    canonicalize(&mut pattern, &mut phi);
    let rot = Rotation {
        pattern,
        phi,
        t: best.t.clone(),
        criterion: best.f,
        iterations: best.iterations,
        converged: best.converged,
        starts_converged,
    };
    if rot.converged {
        Ok(rot)
    } else {
        Err(Box::new(rot))
    }
}

/// Canonical form: each factor's largest-magnitude loading positive, factors
/// ordered by explained variance `diag(Φ Λ'Λ)` (descending).
pub fn canonicalize(pattern: &mut DMatrix<f64>, phi: &mut DMatrix<f64>) {
    let m = pattern.ncols();
    for k in 0..m {
        let col = pattern.column(k);
        let imax = col.iamax();
        if col[imax] < 0.0 {
            pattern.column_mut(k).neg_mut();
            phi.row_mut(k).neg_mut();
            phi.column_mut(k).neg_mut();
        }
    }
    let ev = (&*phi * pattern.transpose() * &*pattern).diagonal();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| ev[y].total_cmp(&ev[x]).then(x.cmp(&y)));
    let p2 = DMatrix::from_fn(pattern.nrows(), m, |i, k| pattern[(i, order[k])]);
    let f2 = DMatrix::from_fn(m, m, |a, b| phi[(order[a], order[b])]);
    *pattern = p2;
    *phi = f2;
}
