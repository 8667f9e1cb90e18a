//! Synthetic survey data from a factor model: multivariate-normal factors
//! (from Φ or from structural coefficients), normal unique parts, and
//! optional discretization at fixed thresholds.
//!
//! Normal deviates come from `rand_distr::StandardNormal` (ziggurat) driven
//! by ChaCha8 streams, one stream per block of rows, so output does not
//! depend on thread count or platform.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efa::parallel::replicate_rng;
use crate::ingest::{OrdinalDataset, Provenance, Schema, VariableKind, VariableSpec};
use crate::linalg::{self, mat_rows};

/// Rows generated per random stream.
pub const BLOCK_ROWS: usize = 4096;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("implied correlation matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(String),
}

/// Structural coefficients among standardized factors. Residual
/// correlations are given for covariance edges; residual variances follow
/// from the unit-variance constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralSpec {
    /// (from, to, coefficient)
    pub regressions: Vec<(String, String, f64)>,
    /// (a, b, residual correlation)
    #[serde(default)]
    pub covariances: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub items: Vec<String>,
    pub factors: Vec<String>,
    #[serde(with = "mat_rows")]
    pub lambda: DMatrix<f64>,
    #[serde(with = "mat_rows")]
    pub phi: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structural: Option<StructuralSpec>,
    /// Per-item increasing cut points; `None` gives continuous scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<Vec<f64>>>,
    pub n: usize,
    pub seed: u64,
    /// Probability that any item cell is set missing (uniform MAR mask).
    #[serde(default)]
    pub missing_rate: f64,
    /// Metadata column assigned round-robin over rows, e.g. survey waves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waves: Option<(String, Vec<i64>)>,
}

/// Thresholds cutting a standard normal into `levels` equiprobable classes.
pub fn equiprobable_thresholds(levels: usize) -> Vec<f64> {
    (1..levels)
        .map(|k| crate::dist::norm_quantile(k as f64 / levels as f64))
        .collect()
}

impl GeneratorSpec {
    pub fn p(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn m(&self) -> usize {
        self.lambda.ncols()
    }

    /// Factor correlation matrix actually used (structural coefficients
    /// override `phi`).
    pub fn factor_correlation(&self) -> Result<DMatrix<f64>, SynthError> {
        match &self.structural {
            None => Ok(self.phi.clone()),
            Some(s) => structural_phi(&self.factors, s),
        }
    }

    /// ΛΦΛ' + diag(1 − h²).
    pub fn implied_correlation(&self) -> Result<DMatrix<f64>, SynthError> {
        let phi = self.factor_correlation()?;
        let mut r = &self.lambda * phi * self.lambda.transpose();
        for i in 0..self.p() {
            r[(i, i)] = 1.0;
        }
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (p, m) = (self.p(), self.m());
        if self.items.len() != p || self.factors.len() != m {
            return Err(SynthError::Spec(format!(
                "lambda is {p}x{m} but {} items and {} factors are named",
                self.items.len(),
                self.factors.len()
            )));
        }
        if self.structural.is_none() && (self.phi.nrows() != m || self.phi.ncols() != m) {
            return Err(SynthError::Spec("phi must be m x m".into()));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(SynthError::Spec(format!("missing rate {} outside [0, 1)", self.missing_rate)));
        }
        if let Some(t) = &self.thresholds {
            if t.len() != p {
                return Err(SynthError::Spec(format!("{} threshold lists for {p} items", t.len())));
            }
            for (i, cuts) in t.iter().enumerate() {
                if cuts.windows(2).any(|w| w[0] >= w[1]) || cuts.iter().any(|c| !c.is_finite()) {
                    return Err(SynthError::Spec(format!(
                        "thresholds of `{}` are not strictly increasing",
                        self.items[i]
                    )));
                }
            }
        }
        let phi = self.factor_correlation()?;
        if m > 0 && linalg::spd_log_det(&phi).is_none() {
            return Err(SynthError::NotPositiveDefinite);
        }
        let common = &self.lambda * &phi * self.lambda.transpose();
        for i in 0..p {
            if common[(i, i)] >= 1.0 {
                return Err(SynthError::Spec(format!(
                    "item `{}` has communality {} ≥ 1",
                    self.items[i],
                    common[(i, i)]
                )));
            }
        }
        if linalg::spd_log_det(&self.implied_correlation()?).is_none() {
            return Err(SynthError::NotPositiveDefinite);
        }
        Ok(())
    }
}

/// Correlation matrix of standardized factors under structural equations
/// `f = B f + ζ`: exogenous variances are 1, endogenous residual variances
/// are solved so every factor has unit variance.
pub fn structural_phi(factors: &[String], s: &StructuralSpec) -> Result<DMatrix<f64>, SynthError> {
    let m = factors.len();
    let idx = |n: &str| {
        factors
            .iter()
            .position(|f| f == n)
            .ok_or_else(|| SynthError::Spec(format!("unknown factor `{n}`")))
    };
    let mut b = DMatrix::zeros(m, m);
    for (from, to, c) in &s.regressions {
        b[(idx(to)?, idx(from)?)] = *c;
    }
    let a = linalg::inverse(&(DMatrix::identity(m, m) - &b))
        .ok_or_else(|| SynthError::Spec("structural coefficients are cyclic or singular".into()))?;
    let mut cov_edges = Vec::new();
    for (x, y, r) in &s.covariances {
        cov_edges.push((idx(x)?, idx(y)?, *r));
    }
    let mut psi_diag = vec![1.0; m];
    let build = |d: &[f64]| {
        let mut psi = DMatrix::from_diagonal(&DVector::from_column_slice(d));
        for &(i, j, r) in &cov_edges {
            let v = r * (d[i] * d[j]).sqrt();
            psi[(i, j)] = v;
            psi[(j, i)] = v;
        }
        &a * psi * a.transpose()
    };
    for _ in 0..500 {
        let phi = build(&psi_diag);
        let mut change: f64 = 0.0;
        for i in 0..m {
            let delta = 1.0 - phi[(i, i)];
            psi_diag[i] += delta;
            change = change.max(delta.abs());
        }
        if psi_diag.iter().any(|v| *v <= 0.0) {
            return Err(SynthError::Spec(
                "structural coefficients explain more than the unit factor variance".into(),
            ));
        }
        if change < 1e-14 {
            break;
        }
    }
    let phi = linalg::symmetrize(&build(&psi_diag));
    Ok(DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { phi[(i, j)] }))
}

/// Generated data: item scores (levels or continuous) and the latent factors.
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: OrdinalDataset,
    /// n×m factor scores.
    pub factors: DMatrix<f64>,
}

pub fn generate(spec: &GeneratorSpec) -> Result<OrdinalDataset, SynthError> {
    generate_with_factors(spec).map(|g| g.dataset)
}

pub fn generate_with_factors(spec: &GeneratorSpec) -> Result<Generated, SynthError> {
    spec.validate()?;
    let (p, m, n) = (spec.p(), spec.m(), spec.n);
    let phi = spec.factor_correlation()?;
    let chol = if m > 0 {
        phi.clone().cholesky().ok_or(SynthError::NotPositiveDefinite)?.l()
    } else {
        DMatrix::zeros(0, 0)
    };
    let common = &spec.lambda * &phi * spec.lambda.transpose();
    let unique_sd: Vec<f64> = (0..p).map(|i| (1.0 - common[(i, i)]).sqrt()).collect();

    let n_blocks = n.div_ceil(BLOCK_ROWS);
    let blocks: Vec<(Vec<Vec<Option<f64>>>, Vec<f64>)> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let rows = BLOCK_ROWS.min(n - b * BLOCK_ROWS);
            let mut rng = replicate_rng(spec.seed, b as u64);
            let mut cols = vec![Vec::with_capacity(rows); p];
            let mut fac = Vec::with_capacity(rows * m);
            let mut z = DVector::zeros(m);
            for _ in 0..rows {
                for k in 0..m {
                    z[k] = StandardNormal.sample(&mut rng);
                }
                let f = &chol * &z;
                fac.extend(f.iter().copied());
                for i in 0..p {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    let mut x = unique_sd[i] * e;
                    for k in 0..m {
                        x += spec.lambda[(i, k)] * f[k];
                    }
                    let value = match &spec.thresholds {
                        Some(t) => (1 + t[i].partition_point(|c| *c < x)) as f64,
                        None => x,
                    };
                    let missing = spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate;
                    cols[i].push((!missing).then_some(value));
                }
            }
            (cols, fac)
        })
        .collect();

    let mut columns = vec![Vec::with_capacity(n); p];
    let mut fac_all = Vec::with_capacity(n * m);
    for (cols, fac) in blocks {
        for (dst, src) in columns.iter_mut().zip(cols) {
            dst.extend(src);
        }
        fac_all.extend(fac);
    }
    let factors = DMatrix::from_row_slice(n, m, &fac_all);
    let mut metadata = BTreeMap::new();
    if let Some((name, waves)) = &spec.waves {
        if waves.is_empty() {
            return Err(SynthError::Spec("wave list is empty".into()));
        }
        metadata.insert(
            name.clone(),
            (0..n).map(|r| Some(waves[r % waves.len()] as f64)).collect(),
        );
    }
    Ok(Generated {
        dataset: OrdinalDataset {
            variables: item_specs(spec),
            columns,
            metadata,
            provenance: Provenance {
                source: format!("synthetic (seed {})", spec.seed),
                filter: "all rows".into(),
                source_rows: n,
            },
        },
        factors,
    })
}

fn item_specs(spec: &GeneratorSpec) -> Vec<VariableSpec> {
    spec.items
        .iter()
        .enumerate()
        .map(|(i, name)| match &spec.thresholds {
            Some(t) => VariableSpec::ordinal(name, 1..=(t[i].len() as i64 + 1)),
            None => VariableSpec::numeric(name),
        })
        .collect()
}

/// Schema describing generated data, readable by the ingest module.
pub fn schema_for(spec: &GeneratorSpec) -> Schema {
    let mut variables = item_specs(spec);
    for v in &mut variables {
        if v.kind == VariableKind::Ordinal {
            v.label = Some("synthetic ordinal item".into());
        }
    }
    Schema {
        metadata: spec.waves.iter().map(|(n, _)| n.clone()).collect(),
        variables,
    }
}

/// Writes `data.csv`, `schema.toml` and `spec.json` into `dir`.
pub fn write_generated(dir: &Path, spec: &GeneratorSpec, data: &OrdinalDataset) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    data.write_csv_file(&dir.join("data.csv"))?;
    let schema = toml::to_string(&schema_for(spec)).map_err(|e| SynthError::Serialize(e.to_string()))?;
    std::fs::write(dir.join("schema.toml"), schema)?;
    let echo = serde_json::to_string_pretty(spec).map_err(|e| SynthError::Serialize(e.to_string()))?;
    std::fs::write(dir.join("spec.json"), echo + "\n")?;
    Ok(())
}

/// Reference four-factor religiosity structure: 13 items, oblique factors,
/// ordinal items with the level counts of the recoded survey variables.
pub fn reference_four_factor(n: usize, seed: u64) -> GeneratorSpec {
    #[rustfmt::skip]
    let rows: [(&str, [f64; 4], usize); 13] = [
        ("V30", [0.74, -0.03, 0.07, 0.01], 4),
        ("V31", [0.90, 0.01, 0.05, -0.01], 4),
        ("V32", [0.91, 0.03, -0.09, 0.00], 4),
        ("V33", [0.64, 0.00, 0.10, 0.07], 4),
        ("V46", [0.02, 0.96, -0.02, -0.05], 8),
        ("V47", [0.04, 0.77, -0.04, 0.07], 8),
        ("V48", [-0.08, 0.67, 0.18, 0.10], 9),
        ("V28", [0.16, 0.00, 0.70, 0.09], 6),
        ("V29", [0.01, 0.05, 0.94, -0.05], 4),
        ("V51", [0.05, 0.01, 0.54, 0.30], 7),
        ("V49", [0.11, 0.05, 0.31, 0.50], 11),
        ("V50", [0.05, -0.04, -0.09, 0.70], 11),
        ("ATTEND", [0.02, 0.12, 0.04, 0.76], 6),
    ];
    #[rustfmt::skip]
    let phi = DMatrix::from_row_slice(4, 4, &[
        1.00, 0.41, 0.69, 0.63,
        0.41, 1.00, 0.52, 0.56,
        0.69, 0.52, 1.00, 0.62,
        0.63, 0.56, 0.62, 1.00,
    ]);
    let lambda = DMatrix::from_fn(13, 4, |i, k| rows[i].1[k]);
    GeneratorSpec {
        items: rows.iter().map(|r| r.0.to_string()).collect(),
        factors: crate::efa::factor_labels(4),
        lambda,
        phi,
        structural: None,
        thresholds: Some(rows.iter().map(|r| equiprobable_thresholds(r.2)).collect()),
        n,
        seed,
        missing_rate: 0.0,
        waves: None,
    }
}
