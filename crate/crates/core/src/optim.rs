//! Quasi-Newton minimization (BFGS with backtracking line search and
//! optional box constraints by projection) and a bracketing root finder.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when the (projected) gradient norm drops below this.
    pub grad_tol: f64,
    /// ...and the relative objective change of the last step is below this.
    pub rel_f_tol: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            rel_f_tol: 1e-8,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// Convergence record of a minimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    #[serde(skip)]
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: Option<&Bounds>) -> Vec<f64> {
    match bounds {
        None => g.to_vec(),
        Some(b) => g
            .iter()
            .enumerate()
            .map(|(i, &gi)| {
                let at_lower = x[i] <= b.lower[i] && gi > 0.0;
                let at_upper = x[i] >= b.upper[i] && gi < 0.0;
                if at_lower || at_upper {
                    0.0
                } else {
                    gi
                }
            })
            .collect(),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `objective`, which returns `(value, gradient)` or `None` where
/// the function is undefined (the line search then backtracks).
///
/// `h0` seeds the inverse-Hessian approximation; an expected-information
/// inverse makes the first steps Fisher-scoring steps.
pub fn minimize_bfgs<F>(
    mut objective: F,
    x0: Vec<f64>,
    h0: Option<DMatrix<f64>>,
    bounds: Option<&Bounds>,
    opts: &BfgsOptions,
) -> OptimOutcome
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0;
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let Some((mut f, mut g)) = objective(&x) else {
        return OptimOutcome {
            grad_norm: f64::NAN,
            grad: vec![f64::NAN; n],
            x,
            f: f64::NAN,
            iterations: 0,
            converged: false,
            message: "objective undefined at start".into(),
        };
    };
    let h_init = h0.clone();
    let mut h = h0.unwrap_or_else(|| {
        let gn = norm(&g).max(1e-8);
        DMatrix::identity(n, n) * (1.0 / gn).min(1.0)
    });
    let mut last_rel = f64::INFINITY;
    let mut message = String::from("maximum iterations reached");
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iter {
        iterations = iter;
        let pg = projected_gradient(&x, &g, bounds);
        let pg_norm = norm(&pg);
        if pg_norm < opts.grad_tol && (iter == 0 || last_rel < opts.rel_f_tol) {
            converged = true;
            message = "converged".into();
            break;
        }
        let active: Vec<bool> = (0..n).map(|i| pg[i] == 0.0 && g[i] != 0.0).collect();
        let pg_vec = DVector::from_column_slice(&pg);
        let mut d: Vec<f64> = (-(&h * &pg_vec)).iter().copied().collect();
        for i in 0..n {
            if active[i] {
                d[i] = 0.0;
            }
        }
        if dot(&d, &pg) >= 0.0 {
            h = h_init.clone().unwrap_or_else(|| DMatrix::identity(n, n) * (1.0 / pg_norm).min(1.0));
            d = (-(&h * &pg_vec)).iter().copied().collect();
            for i in 0..n {
                if active[i] {
                    d[i] = 0.0;
                }
            }
            if dot(&d, &pg) >= 0.0 {
                d = pg.iter().map(|v| -v).collect();
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Some(b) = bounds {
                b.project(&mut xn);
            }
            if let Some((fn_, gn)) = objective(&xn) {
                let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &step);
                if fn_.is_finite() && fn_ <= f + 1e-4 * decrease.min(0.0) {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            message = "line search failed".into();
            // A stationary point that merely stalls on round-off still counts.
            converged = pg_norm < opts.grad_tol;
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            let sv = DVector::from_column_slice(&s);
            let yv = DVector::from_column_slice(&y);
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            let rho = 1.0 / sy;
            // H+ = H + (sy + y'Hy)(ss')/sy^2 - (Hy s' + s y'H)/sy
            h += (&sv * sv.transpose()) * ((sy + yhy) * rho * rho)
                - (&hy * sv.transpose() + &sv * hy.transpose()) * rho;
        }
        last_rel = (f - fn_).abs() / f.abs().max(1e-300).max(1.0);
        x = xn;
        f = fn_;
        g = gn;
        iterations = iter + 1;
    }
    let pg = projected_gradient(&x, &g, bounds);
    OptimOutcome {
        grad_norm: norm(&pg),
        grad: g,
        x,
        f,
        iterations,
        converged,
        message,
    }
}

/// Brent's method for a root of `f` in `[a, b]`; `f(a)` and `f(b)` must
/// bracket zero.
pub fn brent_root<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> f64 {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    if fa.signum() == fb.signum() {
        return if fa.abs() < fb.abs() { a } else { b };
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_converges() {
        let obj = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            Some((f, g))
        };
        let opts = BfgsOptions {
            max_iter: 2000,
            grad_tol: 1e-9,
            rel_f_tol: 1e-12,
            ..Default::default()
        };
        let out = minimize_bfgs(obj, vec![-1.2, 1.0], None, None, &opts);
        assert!(out.converged, "{}", out.message);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bound_is_respected_and_active() {
        // min (x+1)^2 subject to x >= 0 -> x = 0 with positive gradient.
        let obj = |x: &[f64]| Some(((x[0] + 1.0).powi(2), vec![2.0 * (x[0] + 1.0)]));
        let bounds = Bounds {
            lower: vec![0.0],
            upper: vec![10.0],
        };
        let out = minimize_bfgs(obj, vec![5.0], None, Some(&bounds), &BfgsOptions::default());
        assert!(out.converged);
        assert_eq!(out.x[0], 0.0);
    }

    #[test]
    fn brent_finds_cube_root() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15, 200);
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }
}
