//! Exploratory factor analysis: parallel analysis, minres extraction,
//! quartimin rotation, model fit, bootstrap intervals and item pruning.

pub mod bootstrap;
pub mod minres;
pub mod parallel;
pub mod prune;
pub mod rotation;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{CorrelationError, CorrelationEstimate};
use crate::fitindex;
use crate::linalg::{self, mat_rows};

pub use bootstrap::{bootstrap_ci, BootstrapCi, BootstrapOptions, Interval, ResampleScheme};
pub use minres::{fit_minres, MinresFit, MinresOptions};
pub use parallel::{parallel_analysis, NullScheme, ParallelAnalysis, ParallelOptions};
pub use prune::{prune_items, PruneCriteria, PruneOptions, PruneResult, PruneRule};
pub use rotation::{rotate_oblimin, RotationOptions};

#[derive(Debug, Error)]
pub enum EfaError {
    #[error("correlation: {0}")]
    Correlation(#[from] CorrelationError),
    #[error("need at least 3 variables, got {0}")]
    TooFewVariables(usize),
    #[error("correlation between `{0}` and `{1}` is not finite")]
    NonFinite(String, String),
    #[error("correlation matrix is singular")]
    Singular,
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("invalid options: {0}")]
    Options(String),
    #[error("rotation did not converge from any start (best criterion {criterion})")]
    Rotation { criterion: f64 },
    #[error("bootstrap: {failed} of {total} replicates failed")]
    Bootstrap { failed: usize, total: usize },
}

pub(crate) fn check_finite(r: &CorrelationEstimate) -> Result<(), EfaError> {
    let p = r.p();
    for i in 0..p {
        for j in 0..=i {
            if !r.r[(i, j)].is_finite() {
                return Err(EfaError::NonFinite(
                    r.variables[i].clone(),
                    r.variables[j].clone(),
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EfaOptions {
    pub minres: MinresOptions,
    pub rotation: RotationOptions,
}

/// Discrepancy-based fit of an EFA solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfaFit {
    pub f_ml: f64,
    pub chi2: f64,
    pub df: f64,
    pub chi2_null: f64,
    pub df_null: f64,
    pub n_obs: usize,
    pub tli: Option<f64>,
    pub rmsea: Option<f64>,
    pub rmsea_lower: Option<f64>,
    pub rmsea_upper: Option<f64>,
    pub bic: Option<f64>,
    /// Off-diagonal root mean square residual of R − ΛΦΛ'.
    pub rms_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undefined: Option<String>,
}

/// A rotated factor solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfaSolution {
    pub variables: Vec<String>,
    pub factors: Vec<String>,
    #[serde(with = "mat_rows")]
    pub pattern: DMatrix<f64>,
    #[serde(with = "mat_rows")]
    pub phi: DMatrix<f64>,
    pub h2: Vec<f64>,
    pub u2: Vec<f64>,
    /// Hofmann complexity per item; `None` for an all-zero row.
    pub complexity: Vec<Option<f64>>,
    /// Uniquenesses from the extraction (bounded below by the Heywood clamp).
    pub psi: Vec<f64>,
    pub fit: Option<EfaFit>,
    pub n_obs_effective: usize,
    pub converged: bool,
    pub extraction_iterations: usize,
    pub rotation_criterion: f64,
    pub heywood: Vec<String>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BootstrapCi>,
}

impl EfaSolution {
    pub fn n_factors(&self) -> usize {
        self.pattern.ncols()
    }

    /// ΛΦΛ' + diag(u2).
    pub fn implied(&self) -> DMatrix<f64> {
        let mut s = &self.pattern * &self.phi * self.pattern.transpose();
        for i in 0..s.nrows() {
            s[(i, i)] += self.u2[i];
        }
        s
    }

    /// Index of the factor with the largest absolute loading per item.
    pub fn primary_factor(&self) -> Vec<usize> {
        self.pattern
            .row_iter()
            .map(|row| row.transpose().iamax())
            .collect()
    }

    /// Items whose largest absolute loading (at least `min_loading`) is on
    /// each factor.
    pub fn factor_items(&self, min_loading: f64) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_factors()];
        for (i, row) in self.pattern.row_iter().enumerate() {
            let k = row.transpose().iamax();
            if row[k].abs() >= min_loading {
                out[k].push(i);
            }
        }
        out
    }

    /// Converged, no Heywood case, and every factor has at least two items
    /// with a salient primary loading.
    pub fn is_admissible(&self, min_loading: f64) -> bool {
        self.converged
            && self.heywood.is_empty()
            && self.factor_items(min_loading).iter().all(|v| v.len() >= 2)
    }
}

/// Hofmann's index `(Σλ²)² / Σλ⁴` per row; `None` for all-zero rows.
pub fn item_complexity(pattern: &DMatrix<f64>) -> Vec<Option<f64>> {
    pattern
        .row_iter()
        .map(|row| {
            let s2: f64 = row.iter().map(|v| v * v).sum();
            let s4: f64 = row.iter().map(|v| v.powi(4)).sum();
            (s4 > 0.0).then(|| s2 * s2 / s4)
        })
        .collect()
}

/// ML discrepancy of the extracted solution, χ² = (N−1)F, TLI against the
/// independence model, RMSEA with 90% interval and BIC = χ² − df ln N.
pub fn efa_fit(r: &DMatrix<f64>, implied: &DMatrix<f64>, m: usize, n_obs: usize) -> EfaFit {
    let p = r.nrows() as f64;
    let mf = m as f64;
    let df = ((p - mf).powi(2) - (p + mf)) / 2.0;
    let df_null = p * (p - 1.0) / 2.0;
    let n1 = n_obs as f64 - 1.0;
    let ln_r = linalg::spd_log_det(r);
    let f_ml = match (ln_r, linalg::spd_log_det(implied), linalg::spd_inverse(implied)) {
        (Some(lr), Some(ls), Some(inv)) => ls - lr + (r * inv).trace() - p,
        _ => f64::NAN,
    };
    let chi2 = n1 * f_ml.max(0.0);
    let chi2_null = ln_r.map_or(f64::NAN, |l| -n1 * l);
    let rms_residual = {
        let k = (r.nrows() * (r.nrows() - 1)) as f64;
        (minres::offdiag_residual_ss(r, implied) / k).sqrt()
    };
    let mut fit = EfaFit {
        f_ml,
        chi2,
        df,
        chi2_null,
        df_null,
        n_obs,
        tli: None,
        rmsea: None,
        rmsea_lower: None,
        rmsea_upper: None,
        bic: None,
        rms_residual,
        undefined: None,
    };
    if !f_ml.is_finite() || !chi2_null.is_finite() {
        fit.undefined = Some("sample or implied matrix not positive definite".into());
        return fit;
    }
    if df <= 0.0 {
        fit.undefined = Some(format!("{df} degrees of freedom"));
        return fit;
    }
    let idx = fitindex::fit_indices(chi2, df, chi2_null, df_null, n1);
    fit.tli = idx.tli;
    fit.rmsea = idx.rmsea;
    fit.rmsea_lower = idx.rmsea_lower;
    fit.rmsea_upper = idx.rmsea_upper;
    fit.bic = Some(chi2 - df * (n_obs as f64).ln());
    fit
}

pub fn factor_labels(m: usize) -> Vec<String> {
    (1..=m).map(|k| format!("MR{k}")).collect()
}

/// Minres extraction, quartimin rotation and fit for `m` factors.
pub fn fit_efa(
    r: &CorrelationEstimate,
    m: usize,
    n_obs: usize,
    opts: &EfaOptions,
) -> Result<EfaSolution, EfaError> {
    check_finite(r)?;
    let p = r.p();
    if p < 3 {
        return Err(EfaError::TooFewVariables(p));
    }
    let ext = fit_minres(&r.r, m, &opts.minres)?;
    let mut flags = Vec::new();
    if !ext.converged {
        flags.push(format!(
            "extraction stopped after {} iterations without converging",
            ext.iterations
        ));
    }
    let rot = match rotate_oblimin(&ext.loadings, &opts.rotation) {
        Ok(r) => r,
        Err(best) => {
            flags.push(format!(
                "rotation did not converge; best incumbent criterion {}",
                best.criterion
            ));
            if !best.criterion.is_finite() {
                return Err(EfaError::Rotation {
                    criterion: best.criterion,
                });
            }
            *best
        }
    };
    let h2: Vec<f64> = minres::communalities(&ext.loadings).iter().copied().collect();
    let u2: Vec<f64> = h2.iter().map(|h| 1.0 - h).collect();
    let heywood: Vec<String> = ext.heywood.iter().map(|&i| r.variables[i].clone()).collect();
    if !heywood.is_empty() {
        flags.push(format!(
            "Heywood case: uniqueness clamped at {} for {}",
            minres::HEYWOOD_BOUND,
            heywood.join(", ")
        ));
    }
    let mut implied = &ext.loadings * ext.loadings.transpose();
    for i in 0..p {
        implied[(i, i)] += ext.psi[i];
    }
    let fit = efa_fit(&r.r, &implied, m, n_obs);
    if let Some(why) = &fit.undefined {
        flags.push(format!("fit indices undefined: {why}"));
    }
    Ok(EfaSolution {
        variables: r.variables.clone(),
        factors: factor_labels(m),
        complexity: item_complexity(&rot.pattern),
        pattern: rot.pattern,
        phi: rot.phi,
        h2,
        u2,
        psi: ext.psi,
        fit: Some(fit),
        n_obs_effective: n_obs,
        converged: ext.converged && rot.converged,
        extraction_iterations: ext.iterations,
        rotation_criterion: rot.criterion,
        heywood,
        flags,
        ci: None,
    })
}

/// One candidate of a bracketed fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BracketCandidate {
    pub m: usize,
    pub rmsea: Option<f64>,
    pub admissible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bracket {
    pub suggested: usize,
    pub candidates: Vec<BracketCandidate>,
    pub chosen: usize,
    pub pinned: bool,
    pub solution: EfaSolution,
}

/// Fits `suggested − 1`, `suggested` and `suggested + 1` factors and picks
/// the admissible candidate with the lowest RMSEA (ties go to the candidate
/// closest to the suggestion). `pinned` overrides the choice.
pub fn fit_bracket(
    r: &CorrelationEstimate,
    suggested: usize,
    n_obs: usize,
    opts: &EfaOptions,
    min_loading: f64,
    pinned: Option<usize>,
) -> Result<Bracket, EfaError> {
    let p = r.p();
    let centre = pinned.unwrap_or(suggested).max(1);
    let lo = centre.saturating_sub(1).max(1);
    let hi = (centre + 1).min(p - 1);
    let mut candidates = Vec::new();
    let mut solutions: Vec<(usize, EfaSolution)> = Vec::new();
    for m in lo..=hi {
        match fit_efa(r, m, n_obs, opts) {
            Ok(sol) => {
                let rmsea = sol.fit.as_ref().and_then(|f| f.rmsea);
                candidates.push(BracketCandidate {
                    m,
                    rmsea,
                    admissible: sol.is_admissible(min_loading),
                    error: None,
                });
                solutions.push((m, sol));
            }
            Err(e) => candidates.push(BracketCandidate {
                m,
                rmsea: None,
                admissible: false,
                error: Some(e.to_string()),
            }),
        }
    }
    let chosen = if let Some(m) = pinned {
        m
    } else {
        let key = |c: &BracketCandidate| {
            (
                !c.admissible,
                c.rmsea.map_or(f64::INFINITY, |v| (v * 1e6).round() / 1e6),
                c.m.abs_diff(suggested.max(1)),
                c.m,
            )
        };
        let best = candidates
            .iter()
            .filter(|c| c.error.is_none())
            .min_by(|a, b| {
                let (ka, kb) = (key(a), key(b));
                ka.0.cmp(&kb.0)
                    .then(ka.1.total_cmp(&kb.1))
                    .then(ka.2.cmp(&kb.2))
                    .then(ka.3.cmp(&kb.3))
            });
        match best {
            Some(c) => c.m,
            None => {
                return Err(EfaError::Degenerate(format!(
                    "no factor count in {lo}..={hi} could be fitted"
                )))
            }
        }
    };
    let solution = match solutions.into_iter().find(|(m, _)| *m == chosen) {
        Some((_, s)) => s,
        None => fit_efa(r, chosen, n_obs, opts)?,
    };
    Ok(Bracket {
        suggested,
        candidates,
        chosen,
        pinned: pinned.is_some(),
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::CorrMethod;

    fn estimate(r: DMatrix<f64>) -> CorrelationEstimate {
        let p = r.nrows();
        CorrelationEstimate {
            variables: (0..p).map(|i| format!("X{i}")).collect(),
            min_eigenvalue: linalg::min_eigenvalue(&r),
            r,
            pair_n: vec![vec![1000; p]; p],
            method: vec![vec![CorrMethod::Pearson; p]; p],
            missing: Vec::new(),
            psd_repaired: false,
        }
    }

    fn from_loadings(l: &DMatrix<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = l * phi * l.transpose();
        for i in 0..r.nrows() {
            r[(i, i)] = 1.0;
        }
        r
    }

    #[test]
    fn complexity_examples() {
        let l = DMatrix::from_row_slice(3, 2, &[0.7, 0.0, 0.5, 0.5, 0.0, 0.0]);
        let c = item_complexity(&l);
        assert!((c[0].unwrap() - 1.0).abs() < 1e-15);
        assert!((c[1].unwrap() - 2.0).abs() < 1e-15);
        assert!(c[2].is_none());
    }

    #[test]
    fn identity_gives_zero_loadings() {
        let ext = fit_minres(&DMatrix::identity(5, 5), 1, &MinresOptions::default()).unwrap();
        assert!(ext.loadings.iter().all(|v| v.abs() < 1e-6));
        assert!(minres::communalities(&ext.loadings).iter().all(|h| *h < 1e-10));
    }

    #[test]
    fn one_factor_recovered() {
        let lam = DMatrix::from_column_slice(3, 1, &[0.9, 0.8, 0.7]);
        let r = from_loadings(&lam, &DMatrix::identity(1, 1));
        let ext = fit_minres(&r, 1, &MinresOptions::default()).unwrap();
        assert!(ext.converged);
        for i in 0..3 {
            assert!((ext.loadings[(i, 0)].abs() - lam[(i, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn uniqueness_perturbation_does_not_improve_objective() {
        let lam = DMatrix::from_row_slice(
            6,
            2,
            &[0.8, 0.1, 0.7, 0.0, 0.6, 0.2, 0.1, 0.7, 0.0, 0.6, 0.2, 0.5],
        );
        let mut r = from_loadings(&lam, &DMatrix::identity(2, 2));
        r[(0, 5)] += 0.03;
        r[(5, 0)] += 0.03;
        let ext = fit_minres(&r, 2, &MinresOptions::default()).unwrap();
        let base = |psi: &[f64]| {
            let (l, _) = minres::loadings_for(&r, psi, 2);
            let mut implied = &l * l.transpose();
            for i in 0..6 {
                implied[(i, i)] = r[(i, i)];
            }
            minres::offdiag_residual_ss(&r, &implied)
        };
        let f0 = base(&ext.psi);
        for i in 0..6 {
            for d in [-1e-3, 1e-3] {
                let mut psi = ext.psi.clone();
                psi[i] += d;
                assert!(base(&psi) >= f0 - 1e-12, "item {i} step {d}");
            }
        }
    }

    #[test]
    fn rotation_recovers_simple_structure() {
        let a = DMatrix::from_row_slice(
            6,
            2,
            &[0.8, 0.0, 0.7, 0.0, 0.6, 0.0, 0.0, 0.8, 0.0, 0.7, 0.0, 0.6],
        );
        let th: f64 = 0.6;
        let mix = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let mixed = &a * mix;
        let rot = rotate_oblimin(&mixed, &RotationOptions::default()).unwrap();
        assert!((rot.phi[(0, 1)]).abs() < 1e-6);
        for i in 0..6 {
            let row = rot.pattern.row(i);
            let big = row.amax();
            let small = row.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
            assert!((big - a.row(i).amax()).abs() < 1e-6);
            assert!(small < 1e-6);
        }
        let h_before = minres::communalities(&mixed);
        let implied = &rot.pattern * &rot.phi * rot.pattern.transpose();
        for i in 0..6 {
            assert!((implied[(i, i)] - h_before[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn canonical_form_absorbs_sign_flips() {
        let a = DMatrix::from_row_slice(
            6,
            2,
            &[0.8, 0.1, 0.7, 0.0, 0.6, 0.2, 0.1, 0.7, 0.0, 0.6, 0.2, 0.5],
        );
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let (mut p1, mut f1) = (a.clone(), phi.clone());
        rotation::canonicalize(&mut p1, &mut f1);
        let mut p2 = a.clone();
        p2.column_mut(1).neg_mut();
        let mut f2 = phi.clone();
        f2[(0, 1)] = -0.3;
        f2[(1, 0)] = -0.3;
        rotation::canonicalize(&mut p2, &mut f2);
        assert_eq!(p1, p2);
        assert_eq!(f1, f2);
    }

    #[test]
    fn saturated_fit_is_perfect() {
        // Three variables and one factor leave zero degrees of freedom.
        let lam = DMatrix::from_column_slice(3, 1, &[0.9, 0.8, 0.7]);
        let r = estimate(from_loadings(&lam, &DMatrix::identity(1, 1)));
        let sol = fit_efa(&r, 1, 500, &EfaOptions::default()).unwrap();
        let fit = sol.fit.unwrap();
        assert_eq!(fit.df, 0.0);
        assert!(fit.undefined.is_some());
        // Four indicators of one factor: df = 2, exact fit.
        let lam = DMatrix::from_column_slice(4, 1, &[0.9, 0.8, 0.7, 0.6]);
        let r = estimate(from_loadings(&lam, &DMatrix::identity(1, 1)));
        let sol = fit_efa(&r, 1, 500, &EfaOptions::default()).unwrap();
        let fit = sol.fit.unwrap();
        assert_eq!(fit.df, 2.0);
        assert_eq!(fit.rmsea, Some(0.0));
        assert!(fit.chi2 < 1e-8);
        // Zero discrepancy puts the uncapped TLI at or above 1.
        assert!(fit.tli.unwrap() >= 1.0);
    }

    #[test]
    fn h2_and_u2_sum_to_one() {
        let lam = DMatrix::from_row_slice(
            6,
            2,
            &[0.8, 0.0, 0.7, 0.0, 0.6, 0.0, 0.0, 0.7, 0.0, 0.6, 0.0, 0.5],
        );
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let r = estimate(from_loadings(&lam, &phi));
        let sol = fit_efa(&r, 2, 1000, &EfaOptions::default()).unwrap();
        for (h, u) in sol.h2.iter().zip(&sol.u2) {
            assert!((h + u - 1.0).abs() < 1e-8 && *h >= 0.0 && *h <= 1.0);
        }
        assert!(linalg::is_psd(&sol.phi, 1e-10));
        assert!((sol.phi[(0, 1)] - 0.4).abs() < 1e-4);
    }
}
