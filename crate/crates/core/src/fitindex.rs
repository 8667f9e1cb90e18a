//! Incremental and absolute fit indices shared by the factor-analysis and
//! structural-equation fits.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dist::invert_noncentrality;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    pub cfi: f64,
    /// `None` when the model has no degrees of freedom.
    pub tli: Option<f64>,
    pub nfi: f64,
    pub rmsea: Option<f64>,
    pub rmsea_lower: Option<f64>,
    pub rmsea_upper: Option<f64>,
}

/// RMSEA point estimate `sqrt(max(χ² − df, 0) / (df · n))`.
pub fn rmsea(chi2: f64, df: f64, n: f64) -> Option<f64> {
    (df > 0.0).then(|| ((chi2 - df).max(0.0) / (df * n)).sqrt())
}

/// 90% RMSEA interval from the noncentral chi-square distribution: the lower
/// bound uses the noncentrality with `P(X ≤ χ²) = 0.95`, the upper bound the
/// one with `P(X ≤ χ²) = 0.05`; each is 0 when even the central distribution
/// falls below its target.
pub fn rmsea_ci(chi2: f64, df: f64, n: f64) -> Option<(f64, f64)> {
    if df <= 0.0 {
        return None;
    }
    let lo = invert_noncentrality(chi2, df, 0.95);
    let hi = invert_noncentrality(chi2, df, 0.05);
    Some(((lo / (df * n)).sqrt(), (hi / (df * n)).sqrt()))
}

/// CFI, TLI, NFI and RMSEA with its interval against an independence
/// baseline. `n` is the RMSEA sample-size multiplier.
pub fn fit_indices(chi2_m: f64, df_m: f64, chi2_b: f64, df_b: f64, n: f64) -> FitIndices {
    let num = (chi2_m - df_m).max(0.0);
    let den = (chi2_b - df_b).max(chi2_m - df_m).max(0.0);
    let cfi = if den == 0.0 { 1.0 } else { 1.0 - num / den };
    let tli = (df_m > 0.0 && df_b > 0.0)
        .then(|| ((chi2_b / df_b) - (chi2_m / df_m)) / ((chi2_b / df_b) - 1.0));
    let nfi = (chi2_b - chi2_m) / chi2_b;
    let ci = rmsea_ci(chi2_m, df_m, n);
    FitIndices {
        cfi,
        tli,
        nfi,
        rmsea: rmsea(chi2_m, df_m, n),
        rmsea_lower: ci.map(|c| c.0),
        rmsea_upper: ci.map(|c| c.1),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SrmrError {
    #[error("dimension mismatch: {0}x{0} vs {1}x{1}")]
    Dimension(usize, usize),
    #[error("non-positive variance for variable {0}")]
    ZeroDiagonal(usize),
}

/// Standardized root mean square residual over the unique moments (i ≤ j).
pub fn srmr(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64, SrmrError> {
    let p = s.nrows();
    if sigma.nrows() != p || s.ncols() != p || sigma.ncols() != p {
        return Err(SrmrError::Dimension(p, sigma.nrows()));
    }
    if let Some(i) = (0..p).find(|&i| s[(i, i)] <= 0.0) {
        return Err(SrmrError::ZeroDiagonal(i));
    }
    let mut acc = 0.0;
    let mut count = 0.0;
    for i in 0..p {
        for j in i..p {
            let z = (s[(i, j)] - sigma[(i, j)]) / (s[(i, i)] * s[(j, j)]).sqrt();
            acc += z * z;
            count += 1.0;
        }
    }
    Ok((acc / count).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_boundary() {
        let f = fit_indices(40.0, 40.0, 5000.0, 78.0, 1000.0);
        assert_eq!(f.rmsea, Some(0.0));
        assert_eq!(f.cfi, 1.0);
        let (lo, hi) = (f.rmsea_lower.unwrap(), f.rmsea_upper.unwrap());
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0);
    }

    #[test]
    fn zero_df_leaves_rmsea_and_tli_undefined() {
        let f = fit_indices(0.0, 0.0, 500.0, 10.0, 100.0);
        assert!(f.rmsea.is_none() && f.tli.is_none());
        assert_eq!(f.cfi, 1.0);
    }

    #[test]
    fn srmr_two_by_two() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let v = srmr(&s, &sigma).unwrap();
        assert!((v - 0.1 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(srmr(&s, &s).unwrap(), 0.0);
        let zero = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(srmr(&zero, &s).is_err());
    }

    #[test]
    fn ci_brackets_point() {
        let f = fit_indices(350.0, 60.0, 40000.0, 78.0, 20000.0);
        let r = f.rmsea.unwrap();
        assert!(f.rmsea_lower.unwrap() <= r && r <= f.rmsea_upper.unwrap());
    }
}
