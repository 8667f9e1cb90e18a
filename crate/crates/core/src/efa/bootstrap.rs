//! Case-resampling bootstrap intervals for rotated loadings and factor
//! correlations.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parallel::{quantile, replicate_rng};
use super::{fit_efa, EfaError, EfaOptions, EfaSolution};
use crate::correlation::CorrelationConfig;
use crate::data::NumericMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleScheme {
    /// Rows drawn with replacement.
    Cases,
    /// Every replicate is the original sample (checks the machinery).
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub alpha: f64,
    pub seed: u64,
    pub scheme: ResampleScheme,
    /// Largest tolerated share of failed replicates.
    pub max_failure_rate: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            n_boot: 100,
            alpha: 0.01,
            seed: 1,
            scheme: ResampleScheme::Cases,
            max_failure_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub estimate: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub confidence: f64,
    pub n_boot: usize,
    pub n_failed: usize,
    /// p×m intervals for the pattern loadings.
    pub loadings: Vec<Vec<Interval>>,
    /// m×m intervals for the factor correlations.
    pub phi: Vec<Vec<Interval>>,
    /// Intervals widened so that they contain the full-sample estimate.
    pub widened: usize,
}

/// Tucker congruence between columns of `a` and `b`.
pub fn congruence(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = a.ncols();
    DMatrix::from_fn(m, m, |j, k| {
        let (x, y) = (a.column(j), b.column(k));
        let d = (x.norm_squared() * y.norm_squared()).sqrt();
        if d > 0.0 {
            x.dot(&y) / d
        } else {
            0.0
        }
    })
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

/// Column order and signs mapping `replicate` factors onto `target` factors:
/// `result[j] = (k, s)` means target factor j is replicate factor k times s.
pub fn align(target: &DMatrix<f64>, replicate: &DMatrix<f64>) -> Vec<(usize, f64)> {
    let m = target.ncols();
    let c = congruence(target, replicate);
    let perm: Vec<usize> = if m <= 8 {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for p in permutations(m) {
            let s: f64 = p.iter().enumerate().map(|(j, &k)| c[(j, k)].abs()).sum();
            if s > best.0 {
                best = (s, p);
            }
        }
        best.1
    } else {
        // Greedy matching on the largest remaining |congruence|.
        let mut assigned = vec![usize::MAX; m];
        let mut used = vec![false; m];
        for _ in 0..m {
            let mut top = (f64::NEG_INFINITY, 0, 0);
            for j in (0..m).filter(|&j| assigned[j] == usize::MAX) {
                for k in (0..m).filter(|&k| !used[k]) {
                    if c[(j, k)].abs() > top.0 {
                        top = (c[(j, k)].abs(), j, k);
                    }
                }
            }
            assigned[top.1] = top.2;
            used[top.2] = true;
        }
        assigned
    };
    perm.iter()
        .enumerate()
        .map(|(j, &k)| (k, if c[(j, k)] < 0.0 { -1.0 } else { 1.0 }))
        .collect()
}

fn aligned(sol: &EfaSolution, target: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let map = align(target, &sol.pattern);
    let m = map.len();
    let l = DMatrix::from_fn(sol.pattern.nrows(), m, |i, j| {
        let (k, s) = map[j];
        s * sol.pattern[(i, k)]
    });
    let phi = DMatrix::from_fn(m, m, |a, b| {
        let ((ka, sa), (kb, sb)) = (map[a], map[b]);
        sa * sb * sol.phi[(ka, kb)]
    });
    (l, phi)
}

/// Percentile intervals at confidence `1 − alpha` from `n_boot` replicates
/// aligned to `full`. Replicates that fail to fit are dropped and counted.
pub fn bootstrap_ci(
    x: &NumericMatrix,
    full: &EfaSolution,
    corr: &CorrelationConfig,
    efa: &EfaOptions,
    opts: &BootstrapOptions,
) -> Result<BootstrapCi, EfaError> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(EfaError::Options(format!("alpha {} outside (0, 1)", opts.alpha)));
    }
    let x = x.select(&full.variables).map_err(EfaError::Degenerate)?;
    let m = full.n_factors();
    let n = x.n_rows;
    let reps: Vec<Option<(DMatrix<f64>, DMatrix<f64>)>> = (0..opts.n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let sample = match opts.scheme {
                ResampleScheme::Identity => x.clone(),
                ResampleScheme::Cases => {
                    let mut rng = replicate_rng(opts.seed, b);
                    let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                    x.take_rows(&rows)
                }
            };
            let r = corr.estimate(&sample).ok()?;
            if !r.is_complete() {
                return None;
            }
            let sol = fit_efa(&r, m, n, efa).ok()?;
            sol.converged.then(|| aligned(&sol, &full.pattern))
        })
        .collect();
    let ok: Vec<&(DMatrix<f64>, DMatrix<f64>)> = reps.iter().flatten().collect();
    let n_failed = opts.n_boot - ok.len();
    if ok.is_empty() || n_failed as f64 > opts.max_failure_rate * opts.n_boot as f64 {
        return Err(EfaError::Bootstrap {
            failed: n_failed,
            total: opts.n_boot,
        });
    }
    let mut widened = 0;
    let mut interval = |values: Vec<f64>, est: f64| {
        let mut v = values;
        let lo = quantile(&mut v, opts.alpha / 2.0);
        let hi = quantile(&mut v, 1.0 - opts.alpha / 2.0);
        if est < lo || est > hi {
            widened += 1;
        }
        Interval {
            lower: lo.min(est),
            estimate: est,
            upper: hi.max(est),
        }
    };
    let p = full.pattern.nrows();
    let loadings = (0..p)
        .map(|i| {
            (0..m)
                .map(|j| interval(ok.iter().map(|r| r.0[(i, j)]).collect(), full.pattern[(i, j)]))
                .collect()
        })
        .collect();
    let phi = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| interval(ok.iter().map(|r| r.1[(a, b)]).collect(), full.phi[(a, b)]))
                .collect()
        })
        .collect();
    Ok(BootstrapCi {
        confidence: 1.0 - opts.alpha,
        n_boot: opts.n_boot,
        n_failed,
        loadings,
        phi,
        widened,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_undoes_permutation_and_sign() {
        let t = DMatrix::from_row_slice(4, 3, &[
            0.8, 0.0, 0.1, 0.7, 0.1, 0.0, 0.0, 0.9, 0.0, 0.1, 0.0, 0.6,
        ]);
        let rep = DMatrix::from_fn(4, 3, |i, j| match j {
            0 => -t[(i, 2)],
            1 => t[(i, 0)],
            _ => t[(i, 1)],
        });
        let map = align(&t, &rep);
        assert_eq!(map, vec![(1, 1.0), (2, 1.0), (0, -1.0)]);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
    }
}
