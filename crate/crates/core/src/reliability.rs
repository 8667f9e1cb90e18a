//! Internal-consistency reliability: Cronbach's α (raw and standardized),
//! Guttman's λ6, ω coefficients and average variance extracted.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{pearson_pairwise, CorrelationError};
use crate::data::NumericMatrix;
use crate::efa::parallel::replicate_rng;
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReliabilityError {
    #[error("need at least two items, got {0}")]
    TooFewItems(usize),
    #[error("total scale variance is zero; alpha undefined")]
    ZeroVariance,
    #[error("covariance between `{0}` and `{1}` not computable")]
    Undefined(String, String),
    #[error("item correlation matrix is singular; retry with an explicit ridge")]
    Singular,
    #[error("negative residual variance {value} for item {index}")]
    NegativeResidual { index: usize, value: f64 },
    #[error("loadings ({0}) and residual matrix ({1}) differ in size")]
    Dimension(usize, usize),
    #[error("correlation: {0}")]
    Correlation(#[from] CorrelationError),
}

/// Pairwise-complete covariance matrix (n − 1 denominator).
pub fn pairwise_covariance(x: &NumericMatrix) -> Result<DMatrix<f64>, ReliabilityError> {
    let p = x.n_cols();
    let mut c = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let (a, b): (Vec<f64>, Vec<f64>) = x.columns[i]
                .iter()
                .zip(&x.columns[j])
                .filter(|(u, v)| !u.is_nan() && !v.is_nan())
                .map(|(u, v)| (*u, *v))
                .unzip();
            let n = a.len();
            if n < 2 {
                return Err(ReliabilityError::Undefined(x.names[i].clone(), x.names[j].clone()));
            }
            let ma = a.iter().sum::<f64>() / n as f64;
            let mb = b.iter().sum::<f64>() / n as f64;
            let s: f64 = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum();
            c[(i, j)] = s / (n as f64 - 1.0);
            c[(j, i)] = c[(i, j)];
        }
    }
    Ok(c)
}

/// Raw α from a covariance matrix.
pub fn alpha_from_covariance(c: &DMatrix<f64>) -> Result<f64, ReliabilityError> {
    let k = c.nrows() as f64;
    let total = c.sum();
    if total.abs() < 1e-300 {
        return Err(ReliabilityError::ZeroVariance);
    }
    Ok(k / (k - 1.0) * (1.0 - c.trace() / total))
}

/// Mean off-diagonal correlation.
pub fn average_r(r: &DMatrix<f64>) -> f64 {
    let k = r.nrows();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..i {
            s += r[(i, j)];
        }
    }
    s / (k * (k - 1) / 2) as f64
}

/// Standardized α `k r̄ / (1 + (k − 1) r̄)`.
pub fn std_alpha_from_average(k: usize, avg_r: f64) -> f64 {
    let k = k as f64;
    k * avg_r / (1.0 + (k - 1.0) * avg_r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cronbach {
    pub items: Vec<String>,
    pub raw_alpha: f64,
    pub std_alpha: f64,
    pub average_r: f64,
    pub s_n: f64,
    /// Bootstrap standard error of raw α.
    pub ase: f64,
    /// Mean and sd of the summed scale over complete cases.
    pub scale_mean: f64,
    pub scale_sd: f64,
    /// Mean and sd of the item-average scale over complete cases.
    pub item_mean_scale_mean: f64,
    pub item_mean_scale_sd: f64,
    pub n_complete: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CronbachOptions {
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for CronbachOptions {
    fn default() -> Self {
        Self { n_boot: 200, seed: 1 }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    let ss: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    (m, (ss / (n - 1.0)).sqrt())
}

/// Raw α only, from pairwise covariances.
pub fn raw_alpha(x: &NumericMatrix) -> Result<f64, ReliabilityError> {
    if x.n_cols() < 2 {
        return Err(ReliabilityError::TooFewItems(x.n_cols()));
    }
    alpha_from_covariance(&pairwise_covariance(x)?)
}

pub fn cronbach(x: &NumericMatrix, opts: &CronbachOptions) -> Result<Cronbach, ReliabilityError> {
    let k = x.n_cols();
    if k < 2 {
        return Err(ReliabilityError::TooFewItems(k));
    }
    let raw = raw_alpha(x)?;
    let r = pearson_pairwise(x)?;
    if let Some(m) = r.missing.first() {
        return Err(ReliabilityError::Undefined(m.row.clone(), m.col.clone()));
    }
    let avg = average_r(&r.r);
    let std = std_alpha_from_average(k, avg);

    let n = x.n_rows;
    let reps: Vec<f64> = (0..opts.n_boot as u64)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = replicate_rng(opts.seed, b);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            raw_alpha(&x.take_rows(&rows)).ok()
        })
        .collect();
    let ase = if reps.len() >= 2 { mean_sd(&reps).1 } else { f64::NAN };

    let complete = x.complete_rows();
    let sums: Vec<f64> = complete
        .iter()
        .map(|&i| x.columns.iter().map(|c| c[i]).sum())
        .collect();
    let (scale_mean, scale_sd) = mean_sd(&sums);
    Ok(Cronbach {
        items: x.names.clone(),
        raw_alpha: raw,
        std_alpha: std,
        average_r: avg,
        s_n: k as f64 * avg / (1.0 - avg),
        ase,
        scale_mean,
        scale_sd,
        item_mean_scale_mean: scale_mean / k as f64,
        item_mean_scale_sd: scale_sd / k as f64,
        n_complete: complete.len(),
    })
}

/// Guttman's λ6 `1 − Σ(1 − smc_i) / 1'R1`.
pub fn guttman_lambda6(r: &DMatrix<f64>) -> Result<f64, ReliabilityError> {
    let smc = linalg::spd_inverse(r)
        .and_then(|_| linalg::smc(r))
        .ok_or(ReliabilityError::Singular)?;
    Ok(1.0 - smc.iter().map(|s| 1.0 - s).sum::<f64>() / r.sum())
}

/// λ6 on `R + εI` rescaled to unit diagonal, for singular item sets.
pub fn guttman_lambda6_ridge(r: &DMatrix<f64>, eps: f64) -> Result<f64, ReliabilityError> {
    let k = r.nrows();
    let ridged = (r + DMatrix::identity(k, k) * eps) / (1.0 + eps);
    let mut ridged = ridged;
    for i in 0..k {
        ridged[(i, i)] = 1.0;
    }
    guttman_lambda6(&ridged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Omega {
    /// (Σλ)² / ((Σλ)² + 1'Θ1), residual covariances included.
    pub omega1: f64,
    /// (Σλ)² over the model-implied total variance.
    pub omega2: f64,
    /// (Σλ)² over the observed total variance.
    pub omega3: f64,
}

/// ω coefficients for a one-factor block with standardized loadings and
/// residual (co)variance matrix `theta`. Missing totals fall back to the
/// block's own implied variance.
pub fn omega(
    loadings: &[f64],
    theta: &DMatrix<f64>,
    implied_total: Option<f64>,
    observed_total: Option<f64>,
) -> Result<Omega, ReliabilityError> {
    let k = loadings.len();
    if theta.nrows() != k || theta.ncols() != k {
        return Err(ReliabilityError::Dimension(k, theta.nrows()));
    }
    if let Some(i) = (0..k).find(|&i| theta[(i, i)] < 0.0) {
        return Err(ReliabilityError::NegativeResidual {
            index: i,
            value: theta[(i, i)],
        });
    }
    let s = loadings.iter().sum::<f64>();
    let common = s * s;
    let own = common + theta.sum();
    let omega1 = common / own;
    let omega2 = common / implied_total.unwrap_or(own);
    let omega3 = common / observed_total.or(implied_total).unwrap_or(own);
    Ok(Omega {
        omega1,
        omega2,
        omega3,
    })
}

/// Average variance extracted `Σλ² / k`.
pub fn ave(loadings: &[f64]) -> f64 {
    loadings.iter().map(|l| l * l).sum::<f64>() / loadings.len() as f64
}

/// Reliability battery for one factor's item set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub factor: String,
    #[serde(flatten)]
    pub cronbach: Cronbach,
    pub lambda6: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<Omega>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ave: Option<f64>,
}

pub fn reliability_report(
    factor: &str,
    x_items: &NumericMatrix,
    opts: &CronbachOptions,
) -> Result<ReliabilityReport, ReliabilityError> {
    let c = cronbach(x_items, opts)?;
    let r = pearson_pairwise(x_items)?;
    Ok(ReliabilityReport {
        factor: factor.to_string(),
        cronbach: c,
        lambda6: guttman_lambda6(&r.r).ok(),
        omega: None,
        ave: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equi(k: usize, r: f64) -> DMatrix<f64> {
        DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { r })
    }

    #[test]
    fn std_alpha_closed_form() {
        assert!((std_alpha_from_average(3, 0.5) - 0.75).abs() < 1e-15);
        assert!((alpha_from_covariance(&equi(3, 0.5)).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn perfectly_correlated_items() {
        let col: Vec<f64> = (0..20).map(|i| (i % 5) as f64).collect();
        let x = NumericMatrix::new(
            (0..4).map(|i| format!("I{i}")).collect(),
            vec![col.clone(), col.clone(), col.clone(), col],
            vec![Some(5); 4],
        );
        let c = cronbach(&x, &CronbachOptions { n_boot: 20, seed: 3 }).unwrap();
        assert!((c.raw_alpha - 1.0).abs() < 1e-12);
        assert!((c.std_alpha - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let x = NumericMatrix::new(
            vec!["a".into(), "b".into()],
            vec![vec![1.0; 5], vec![1.0; 5]],
            vec![None, None],
        );
        assert_eq!(raw_alpha(&x), Err(ReliabilityError::ZeroVariance));
    }

    #[test]
    fn lambda6_cases() {
        assert_eq!(guttman_lambda6(&DMatrix::identity(2, 2)).unwrap(), 0.0);
        // R^-1 of the 3x3 r=0.5 matrix has diagonal 1.5, so smc = 1/3 and
        // λ6 = 1 - 3(2/3)/6 = 2/3.
        assert!((guttman_lambda6(&equi(3, 0.5)).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(guttman_lambda6(&equi(2, 1.0)), Err(ReliabilityError::Singular));
        assert!(guttman_lambda6_ridge(&equi(2, 1.0), 1e-3).is_ok());
    }

    #[test]
    fn omega_and_ave_closed_forms() {
        let o = omega(&[1.0, 1.0, 1.0], &DMatrix::zeros(3, 3), None, None).unwrap();
        assert_eq!(o.omega1, 1.0);
        let theta = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.36, 0.36]));
        let o = omega(&[0.8, 0.8], &theta, None, None).unwrap();
        assert!((o.omega1 - 2.56 / 3.28).abs() < 1e-12);
        assert_eq!(o.omega1, o.omega2);
        assert_eq!(o.omega2, o.omega3);
        let bad = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-0.1, 0.36]));
        assert!(omega(&[0.8, 0.8], &bad, None, None).is_err());
        assert_eq!(ave(&[1.0, 1.0]), 1.0);
        assert!((ave(&[0.6, 0.8]) - 0.5).abs() < 1e-15);
    }
}
