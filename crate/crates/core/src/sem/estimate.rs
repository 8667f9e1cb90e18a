//! ML and DWLS estimation with analytic gradients, standard errors,
//! standardized solution and standardized residuals.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Matrices, ParamKind, SemModel};
use super::parser::Op;
use super::SemError;
use crate::data::NumericMatrix;
use crate::efa::parallel::replicate_rng;
use crate::fitindex::{self, FitIndices};
use crate::linalg::{self, mat_rows};
use crate::optim::{minimize_bfgs, BfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ml,
    Dwls,
}

impl std::str::FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ml" | "fml" => Ok(Self::Ml),
            "dwls" => Ok(Self::Dwls),
            other => Err(format!("unknown estimator `{other}` (expected ml or dwls)")),
        }
    }
}

/// Multiplier turning the minimized discrepancy into a test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleScale {
    #[default]
    N,
    NMinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSe {
    pub n_boot: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub scale: SampleScale,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_f_tol: f64,
    /// Cut-off for the largest absolute standardized residual.
    pub residual_threshold: f64,
    pub residuals: bool,
    pub standard_errors: bool,
    /// Bootstrap standard errors for DWLS fits (replaces the sandwich SEs).
    pub bootstrap: Option<BootstrapSe>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            scale: SampleScale::N,
            max_iter: 2000,
            grad_tol: 1e-6,
            rel_f_tol: 1e-10,
            residual_threshold: 2.5,
            residuals: true,
            standard_errors: true,
            bootstrap: None,
        }
    }
}

/// Listwise-complete second moments (divisor n) plus the centered data
/// needed for fourth-moment weights.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub names: Vec<String>,
    pub cov: DMatrix<f64>,
    pub n_used: usize,
    pub n_total: usize,
    centered: Option<DMatrix<f64>>,
}

impl SampleMoments {
    /// Moments of the named columns after listwise deletion.
    pub fn from_data(data: &NumericMatrix, names: &[String]) -> Result<Self, SemError> {
        let sub = data
            .select(names)
            .map_err(|_| {
                let missing = names.iter().find(|n| data.index_of(n).is_none()).cloned();
                SemError::MissingIndicator(missing.unwrap_or_default())
            })?
            .listwise_complete();
        let n = sub.n_rows;
        let p = names.len();
        let mut x = DMatrix::from_fn(n, p, |i, j| sub.columns[j][i]);
        for j in 0..p {
            let mean = if n > 0 { x.column(j).sum() / n as f64 } else { 0.0 };
            x.column_mut(j).add_scalar_mut(-mean);
        }
        let cov = if n > 0 {
            linalg::symmetrize(&(x.transpose() * &x / n as f64))
        } else {
            DMatrix::zeros(p, p)
        };
        Ok(Self {
            names: names.to_vec(),
            cov,
            n_used: n,
            n_total: data.n_rows,
            centered: Some(x),
        })
    }

    /// Moments given directly (ML only; DWLS needs the raw data).
    pub fn from_cov(names: Vec<String>, cov: DMatrix<f64>, n: usize) -> Self {
        Self {
            names,
            cov,
            n_used: n,
            n_total: n,
            centered: None,
        }
    }

    fn positions(&self, wanted: &[String]) -> Result<Vec<usize>, SemError> {
        wanted
            .iter()
            .map(|w| {
                self.names
                    .iter()
                    .position(|n| n == w)
                    .ok_or_else(|| SemError::MissingIndicator(w.clone()))
            })
            .collect()
    }

    /// Moments restricted and reordered to `wanted`.
    pub fn subset(&self, wanted: &[String]) -> Result<Self, SemError> {
        self.subset_with(wanted, true)
    }

    fn subset_with(&self, wanted: &[String], keep_data: bool) -> Result<Self, SemError> {
        let idx = self.positions(wanted)?;
        let k = idx.len();
        Ok(Self {
            names: wanted.to_vec(),
            cov: DMatrix::from_fn(k, k, |i, j| self.cov[(idx[i], idx[j])]),
            n_used: self.n_used,
            n_total: self.n_total,
            centered: self
                .centered
                .as_ref()
                .filter(|_| keep_data)
                .map(|x| DMatrix::from_fn(x.nrows(), k, |r, j| x[(r, idx[j])])),
        })
    }

    /// Fourth-moment (distribution-free) asymptotic covariance of vech(S).
    pub fn adf_gamma(&self) -> Option<DMatrix<f64>> {
        let x = self.centered.as_ref()?;
        let n = x.nrows();
        let pairs = linalg::vech_pairs(x.ncols());
        let z = DMatrix::from_fn(n, pairs.len(), |r, k| x[(r, pairs[k].0)] * x[(r, pairs[k].1)]);
        let s = DVector::from_vec(linalg::vech(&self.cov));
        let g = z.transpose() * &z / n as f64 - &s * s.transpose();
        Some(linalg::symmetrize(&g))
    }

    fn rows(&self, rows: &[usize]) -> Option<Self> {
        let x = self.centered.as_ref()?;
        let p = x.ncols();
        let mut y = DMatrix::from_fn(rows.len(), p, |r, j| x[(rows[r], j)]);
        let n = rows.len();
        for j in 0..p {
            let mean = y.column(j).sum() / n as f64;
            y.column_mut(j).add_scalar_mut(-mean);
        }
        Some(Self {
            names: self.names.clone(),
            cov: linalg::symmetrize(&(y.transpose() * &y / n as f64)),
            n_used: n,
            n_total: n,
            centered: Some(y),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub lhs: String,
    pub op: Op,
    pub rhs: String,
    pub free: bool,
    pub est: f64,
    pub se: Option<f64>,
    pub z: Option<f64>,
    /// Estimate rescaled to unit latent and observed variances.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Raw residuals `s_ij − σ̂_ij`.
    #[serde(with = "mat_rows")]
    pub raw: DMatrix<f64>,
    /// Standardized residuals (0 where the residual variance vanishes).
    #[serde(with = "mat_rows")]
    pub standardized: DMatrix<f64>,
    pub max_abs: f64,
    pub max_pair: (String, String),
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemFit {
    pub estimator: Estimator,
    pub observed: Vec<String>,
    pub factors: Vec<String>,
    pub params: Vec<ParamEstimate>,
    /// Free-parameter vector at the optimum.
    pub theta: Vec<f64>,
    #[serde(with = "mat_rows")]
    pub sample: DMatrix<f64>,
    #[serde(with = "mat_rows")]
    pub implied: DMatrix<f64>,
    /// Standardized latent covariance (factor correlations).
    #[serde(with = "mat_rows")]
    pub factor_correlation: DMatrix<f64>,
    pub n_free: usize,
    pub n_moments: usize,
    pub chi2: f64,
    pub df: i64,
    pub chi2_baseline: f64,
    pub df_baseline: i64,
    pub indices: FitIndices,
    pub srmr: f64,
    pub n_used: usize,
    pub n_total: usize,
    pub scale: SampleScale,
    /// Information criteria (ML only).
    pub log_likelihood: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub convergence: Convergence,
    /// Variance parameters estimated below zero.
    pub heywood: Vec<String>,
    /// Invalid values: Heywood cases, standardized |correlation| > 1,
    /// non-positive-definite implied covariance.
    pub invalid: Vec<String>,
    /// Every free loading, regression and covariance is positive.
    pub all_positive: bool,
    pub residuals: Option<ResidualReport>,
    pub bootstrap: Option<BootstrapSe>,
}

impl SemFit {
    /// Converged with no invalid parameter values.
    pub fn is_valid(&self) -> bool {
        self.convergence.converged && self.invalid.is_empty()
    }

    pub fn param(&self, lhs: &str, op: Op, rhs: &str) -> Option<&ParamEstimate> {
        self.params
            .iter()
            .find(|p| p.op == op && ((p.lhs == lhs && p.rhs == rhs) || (op == Op::Covary && p.lhs == rhs && p.rhs == lhs)))
    }
}

/// ML discrepancy `ln|Σ| + tr(SΣ⁻¹) − ln|S| − p` and its gradient; `None`
/// where Σ(θ) is not positive definite.
pub fn ml_objective(model: &SemModel, s: &DMatrix<f64>, log_det_s: f64, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mats = model.matrices(theta).ok()?;
    ml_from_mats(model, s, log_det_s, &mats)
}

fn ml_from_mats(model: &SemModel, s: &DMatrix<f64>, log_det_s: f64, mats: &Matrices) -> Option<(f64, Vec<f64>)> {
    let p = s.nrows();
    let chol = Cholesky::new(mats.sigma.clone())?;
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let sinv_s = &inv * s;
    let f = log_det + sinv_s.trace() - log_det_s - p as f64;
    let w = linalg::symmetrize(&(&inv - &sinv_s * &inv));
    let g = model.gradient_from_w(mats, &w);
    (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
}

fn dwls_from_mats(model: &SemModel, s: &DMatrix<f64>, weights: &[f64], mats: &Matrices) -> Option<(f64, Vec<f64>)> {
    let p = s.nrows();
    let mut w = DMatrix::zeros(p, p);
    let mut f = 0.0;
    let mut k = 0;
    for i in 0..p {
        for j in 0..=i {
            let e = s[(i, j)] - mats.sigma[(i, j)];
            f += weights[k] * e * e;
            if i == j {
                w[(i, i)] = -2.0 * weights[k] * e;
            } else {
                w[(i, j)] = -weights[k] * e;
                w[(j, i)] = -weights[k] * e;
            }
            k += 1;
        }
    }
    let g = model.gradient_from_w(mats, &w);
    (f.is_finite() && g.iter().all(|v| v.is_finite())).then_some((f, g))
}

/// Jacobian of vech Σ with respect to the free parameters.
fn delta(model: &SemModel, mats: &Matrices) -> DMatrix<f64> {
    let ds = model.sigma_derivatives(mats);
    let pairs = linalg::vech_pairs(model.p());
    DMatrix::from_fn(pairs.len(), model.n_free, |r, k| ds[k][(pairs[r].0, pairs[r].1)])
}

/// Expected Hessian of F_ML: `tr(Σ⁻¹ Σ_a Σ⁻¹ Σ_b)`.
fn ml_expected_hessian(model: &SemModel, mats: &Matrices) -> Option<DMatrix<f64>> {
    let inv = linalg::spd_inverse(&mats.sigma)?;
    let ps: Vec<DMatrix<f64>> = model.sigma_derivatives(mats).iter().map(|d| &inv * d).collect();
    let pts: Vec<DMatrix<f64>> = ps.iter().map(|m| m.transpose()).collect();
    let q = model.n_free;
    let mut h = DMatrix::zeros(q, q);
    for a in 0..q {
        for b in 0..=a {
            let v = ps[a].dot(&pts[b]);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Some(h)
}

/// Normal-theory asymptotic covariance of vech(S): `σ_ik σ_jl + σ_il σ_jk`.
fn normal_gamma(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let pairs = linalg::vech_pairs(sigma.nrows());
    let n = pairs.len();
    DMatrix::from_fn(n, n, |a, b| {
        let (i, j) = pairs[a];
        let (k, l) = pairs[b];
        sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)]
    })
}

fn scale_n(n: usize, scale: SampleScale) -> f64 {
    match scale {
        SampleScale::N => n as f64,
        SampleScale::NMinusOne => n.saturating_sub(1) as f64,
    }
}

/// ML fit on a data matrix (listwise deletion over the model's indicators).
pub fn fit_ml(model: &SemModel, data: &NumericMatrix, opts: &FitOptions) -> Result<SemFit, SemError> {
    let moments = SampleMoments::from_data(data, &model.indicators)?;
    fit(model, &moments, Estimator::Ml, opts)
}

/// DWLS fit on a data matrix (listwise deletion over the model's indicators).
pub fn fit_dwls(model: &SemModel, data: &NumericMatrix, opts: &FitOptions) -> Result<SemFit, SemError> {
    let moments = SampleMoments::from_data(data, &model.indicators)?;
    fit(model, &moments, Estimator::Dwls, opts)
}

struct Prepared {
    s: DMatrix<f64>,
    log_det_s: f64,
    gamma: Option<DMatrix<f64>>,
    weights: Vec<f64>,
}

fn prepare(model: &SemModel, moments: &SampleMoments, estimator: Estimator) -> Result<(SampleMoments, Prepared), SemError> {
    let sub = moments.subset_with(&model.indicators, estimator == Estimator::Dwls)?;
    if model.df() < 0 {
        return Err(SemError::NegativeDf { df: model.df() });
    }
    if sub.n_used < model.n_free.max(2) {
        return Err(SemError::TooFewObservations {
            n_used: sub.n_used,
            n_free: model.n_free,
        });
    }
    let s = sub.cov.clone();
    if s.iter().any(|v| !v.is_finite()) {
        return Err(SemError::NonFinite("sample covariance".into()));
    }
    let log_det_s = linalg::spd_log_det(&s).ok_or(SemError::NotPositiveDefinite("sample covariance"))?;
    let (gamma, weights) = match estimator {
        Estimator::Ml => (None, Vec::new()),
        Estimator::Dwls => {
            let g = sub.adf_gamma().ok_or(SemError::NotPositiveDefinite(
                "fourth-moment matrix (raw data required for DWLS)",
            ))?;
            let pairs = linalg::vech_pairs(model.p());
            let mut w = Vec::with_capacity(pairs.len());
            for (k, &(i, j)) in pairs.iter().enumerate() {
                let d = g[(k, k)];
                if !(d > 1e-14 * s[(i, i)] * s[(j, j)]) {
                    return Err(SemError::ZeroWeight(format!(
                        "({}, {})",
                        model.indicators[i], model.indicators[j]
                    )));
                }
                w.push(1.0 / d);
            }
            (Some(g), w)
        }
    };
    Ok((
        sub,
        Prepared {
            s,
            log_det_s,
            gamma,
            weights,
        },
    ))
}

/// Fits `model` to `moments` with the chosen estimator.
pub fn fit(model: &SemModel, moments: &SampleMoments, estimator: Estimator, opts: &FitOptions) -> Result<SemFit, SemError> {
    let (sub, prep) = prepare(model, moments, estimator)?;
    let x0 = model.start_values(&prep.s);
    estimate(model, &sub, &prep, estimator, opts, x0, true)
}

fn estimate(
    model: &SemModel,
    sub: &SampleMoments,
    prep: &Prepared,
    estimator: Estimator,
    opts: &FitOptions,
    x0: Vec<f64>,
    full_report: bool,
) -> Result<SemFit, SemError> {
    let p = model.p();
    let s = &prep.s;
    let objective = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let mats = model.matrices(x).ok()?;
        match estimator {
            Estimator::Ml => ml_from_mats(model, s, prep.log_det_s, &mats),
            Estimator::Dwls => {
                // Keep iterates in the region where Σ is positive definite.
                Cholesky::new(mats.sigma.clone())?;
                dwls_from_mats(model, s, &prep.weights, &mats)
            }
        }
    };
    let h0 = model.matrices(&x0).ok().and_then(|mats| match estimator {
        Estimator::Ml => ml_expected_hessian(model, &mats).and_then(|h| linalg::spd_inverse(&h)),
        Estimator::Dwls => {
            let d = delta(model, &mats);
            let v = DMatrix::from_diagonal(&DVector::from_column_slice(&prep.weights));
            linalg::spd_inverse(&(d.transpose() * v * &d * 2.0))
        }
    });
    let bfgs = BfgsOptions {
        max_iter: opts.max_iter,
        grad_tol: opts.grad_tol,
        rel_f_tol: opts.rel_f_tol,
        max_backtracks: 60,
    };
    let out = minimize_bfgs(objective, x0, h0, None, &bfgs);
    let theta = out.x.clone();
    let mats = model.matrices(&theta)?;
    let n = sub.n_used;
    let nf = scale_n(n, opts.scale);
    let f_min = out.f.max(0.0);
    let chi2 = nf * f_min;
    let df = model.df();
    let df_b = (p * (p - 1) / 2) as i64;
    let chi2_b = match estimator {
        Estimator::Ml => {
            let ld: f64 = (0..p).map(|i| s[(i, i)].ln()).sum();
            nf * (ld - prep.log_det_s)
        }
        Estimator::Dwls => {
            let mut t = 0.0;
            let mut k = 0;
            for i in 0..p {
                for j in 0..=i {
                    if i != j {
                        t += prep.weights[k] * s[(i, j)] * s[(i, j)];
                    }
                    k += 1;
                }
            }
            nf * t
        }
    };
    let indices = fitindex::fit_indices(chi2, df as f64, chi2_b, df_b as f64, nf);
    let srmr = fitindex::srmr(s, &mats.sigma).unwrap_or(f64::NAN);

    let sigma_pd = Cholesky::new(mats.sigma.clone()).is_some();
    let mut convergence = Convergence {
        converged: out.converged,
        iterations: out.iterations,
        grad_norm: out.grad_norm,
        objective: out.f,
        message: out.message.clone(),
    };
    if !sigma_pd {
        convergence.converged = false;
    }

    let (log_likelihood, aic, bic) = match estimator {
        Estimator::Ml if sigma_pd => {
            let ld = linalg::spd_log_det(&mats.sigma).unwrap_or(f64::NAN);
            let inv = linalg::spd_inverse(&mats.sigma).unwrap_or_else(|| DMatrix::zeros(p, p));
            let ll = -(n as f64) / 2.0 * (ld + (s * inv).trace() + p as f64 * (2.0 * std::f64::consts::PI).ln());
            let q = model.n_free as f64;
            (Some(ll), Some(-2.0 * ll + 2.0 * q), Some(-2.0 * ll + q * (n as f64).ln()))
        }
        _ => (None, None, None),
    };

    // Standard errors and residuals.
    let mut se: Option<Vec<f64>> = None;
    let mut resid = None;
    if full_report && sigma_pd {
        if estimator == Estimator::Ml && opts.standard_errors {
            // Inverse expected information: (n/2 · tr(Σ⁻¹Σ_aΣ⁻¹Σ_b))⁻¹.
            if let Some(hinv) = ml_expected_hessian(model, &mats).and_then(|h| linalg::inverse(&h)) {
                se = Some((0..model.n_free).map(|k| (2.0 * hinv[(k, k)] / n as f64).max(0.0).sqrt()).collect());
            }
        }
        let need_dwls_se = estimator == Estimator::Dwls && opts.standard_errors && opts.bootstrap.is_none();
        if opts.residuals || need_dwls_se {
            let d = delta(model, &mats);
            let (v, gamma) = match estimator {
                Estimator::Ml => {
                    let g = normal_gamma(&mats.sigma);
                    (linalg::spd_inverse(&g), Some(g))
                }
                Estimator::Dwls => (
                    Some(DMatrix::from_diagonal(&DVector::from_column_slice(&prep.weights))),
                    prep.gamma.clone(),
                ),
            };
            if let (Some(v), Some(gamma)) = (v, gamma) {
                let dv = d.transpose() * &v;
                if let Some(bread) = linalg::inverse(&(&dv * &d)) {
                    if need_dwls_se {
                        let acov = &bread * (&dv * &gamma * dv.transpose()) * &bread / n as f64;
                        se = Some((0..model.n_free).map(|k| acov[(k, k)].max(0.0).sqrt()).collect());
                    }
                    if opts.residuals {
                        let h = &bread * &dv;
                        let ident = DMatrix::<f64>::identity(d.nrows(), d.nrows());
                        let proj = ident - &d * h;
                        let ac = &proj * &gamma * proj.transpose() / n as f64;
                        resid = Some(residual_report(model, s, &mats.sigma, &ac, opts.residual_threshold));
                    }
                }
            }
        }
        if estimator == Estimator::Dwls && opts.standard_errors {
            if let Some(bs) = opts.bootstrap {
                se = Some(bootstrap_se(model, sub, opts, &theta, bs));
            }
        }
    }

    let (params, factor_correlation, invalid_std) = standardized(model, &mats, &theta, se.as_deref());
    let mut heywood = Vec::new();
    let mut all_positive = true;
    for par in &model.params {
        let Some(k) = par.free else { continue };
        if par.is_variance() {
            if theta[k] < 0.0 {
                heywood.push(par.label());
            }
        } else if theta[k] <= 0.0 {
            all_positive = false;
        }
    }
    let mut invalid: Vec<String> = heywood.iter().map(|h| format!("negative variance: {h}")).collect();
    invalid.extend(invalid_std);
    if !sigma_pd {
        invalid.push("implied covariance not positive definite".into());
    }
    if !chi2.is_finite() {
        invalid.push("non-finite test statistic".into());
    }

    Ok(SemFit {
        estimator,
        observed: model.indicators.clone(),
        factors: model.factors.clone(),
        params,
        theta,
        sample: s.clone(),
        implied: mats.sigma.clone(),
        factor_correlation,
        n_free: model.n_free,
        n_moments: model.n_moments(),
        chi2,
        df,
        chi2_baseline: chi2_b,
        df_baseline: df_b,
        indices,
        srmr,
        n_used: n,
        n_total: sub.n_total,
        scale: opts.scale,
        log_likelihood,
        aic,
        bic,
        convergence,
        heywood,
        invalid,
        all_positive,
        residuals: resid,
        bootstrap: if estimator == Estimator::Dwls { opts.bootstrap } else { None },
    })
}

fn bootstrap_se(
    model: &SemModel,
    sub: &SampleMoments,
    opts: &FitOptions,
    theta: &[f64],
    bs: BootstrapSe,
) -> Vec<f64> {
    let n = sub.n_used;
    let reps: Vec<Vec<f64>> = (0..bs.n_boot)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = replicate_rng(bs.seed, b as u64);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let m = sub.rows(&rows)?;
            let (m, p) = prepare(model, &m, Estimator::Dwls).ok()?;
            let mut o = opts.clone();
            o.bootstrap = None;
            o.residuals = false;
            o.standard_errors = false;
            let f = estimate(model, &m, &p, Estimator::Dwls, &o, theta.to_vec(), false).ok()?;
            f.convergence.converged.then_some(f.theta)
        })
        .collect();
    let q = theta.len();
    if reps.len() < 2 {
        return vec![f64::NAN; q];
    }
    (0..q)
        .map(|k| {
            let mean = reps.iter().map(|r| r[k]).sum::<f64>() / reps.len() as f64;
            let var = reps.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
            var.sqrt()
        })
        .collect()
}

/// Parameter table with raw and standardized estimates, the standardized
/// latent covariance matrix and any standardized |correlation| > 1.
fn standardized(
    model: &SemModel,
    mats: &Matrices,
    theta: &[f64],
    se: Option<&[f64]>,
) -> (Vec<ParamEstimate>, DMatrix<f64>, Vec<String>) {
    let sd_obs: Vec<f64> = (0..model.p()).map(|i| mats.sigma[(i, i)].max(0.0).sqrt()).collect();
    let sd_lat: Vec<f64> = (0..model.m()).map(|k| mats.phi[(k, k)].max(0.0).sqrt()).collect();
    let div = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
    let mut invalid = Vec::new();
    let params = model
        .params
        .iter()
        .map(|par| {
            let est = par.free.map_or(par.value, |k| theta[k]);
            let (r, c) = (par.row, par.col);
            let std = match par.kind {
                ParamKind::Loading => div(est * sd_lat[c], sd_obs[r]),
                ParamKind::Regression => div(est * sd_lat[c], sd_lat[r]),
                ParamKind::LatentCov if r == c => div(est, mats.phi[(r, r)]),
                ParamKind::LatentCov => div(est, (mats.psi[(r, r)] * mats.psi[(c, c)]).max(0.0).sqrt()),
                ParamKind::ResidualCov if r == c => div(est, mats.sigma[(r, r)]),
                ParamKind::ResidualCov => div(est, (mats.theta[(r, r)] * mats.theta[(c, c)]).max(0.0).sqrt()),
            };
            if r != c && matches!(par.kind, ParamKind::LatentCov | ParamKind::ResidualCov) && std.abs() > 1.0 {
                invalid.push(format!("standardized |correlation| > 1: {} = {std:.4}", par.label()));
            }
            let se_k = par.free.and_then(|k| se.map(|s| s[k])).filter(|v| v.is_finite());
            ParamEstimate {
                lhs: par.lhs.clone(),
                op: par.op,
                rhs: par.rhs.clone(),
                free: par.free.is_some(),
                est,
                se: se_k,
                z: se_k.filter(|&s| s > 0.0).map(|s| est / s),
                std,
            }
        })
        .collect();
    let m = model.m();
    let corr = DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            1.0
        } else {
            div(mats.phi[(a, b)], sd_lat[a] * sd_lat[b])
        }
    });
    for a in 0..m {
        for b in 0..a {
            if corr[(a, b)].abs() > 1.0 {
                invalid.push(format!(
                    "factor correlation |{} , {}| = {:.4} > 1",
                    model.factors[a], model.factors[b], corr[(a, b)]
                ));
            }
        }
    }
    (params, corr, invalid)
}

fn residual_report(
    model: &SemModel,
    s: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    acov: &DMatrix<f64>,
    threshold: f64,
) -> ResidualReport {
    let p = model.p();
    let raw = s - sigma;
    let mut z = DMatrix::zeros(p, p);
    let pairs = linalg::vech_pairs(p);
    let mut max_abs = 0.0;
    let mut max_pair = (model.indicators[0].clone(), model.indicators[0].clone());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let var = acov[(k, k)];
        let scale = (s[(i, i)] * s[(j, j)]).abs();
        let v = if var > 1e-12 * scale * scale.max(1.0) {
            raw[(i, j)] / var.sqrt()
        } else {
            0.0
        };
        z[(i, j)] = v;
        z[(j, i)] = v;
        if v.abs() > max_abs {
            max_abs = v.abs();
            max_pair = (model.indicators[i].clone(), model.indicators[j].clone());
        }
    }
    ResidualReport {
        raw,
        standardized: z,
        max_abs,
        max_pair,
        threshold,
        pass: max_abs < threshold,
    }
}
