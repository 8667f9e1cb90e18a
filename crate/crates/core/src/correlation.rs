//! Pairwise-complete correlation matrices: Pearson, Spearman (midranks per
//! pair) and a mixed matrix that uses two-step polychoric estimates for
//! pairs of low-cardinality ordinal columns.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::NumericMatrix;
use crate::dist::{bvn_pdf, bvn_rect, norm_quantile};
use crate::linalg::{self, mat_rows};

/// Smallest number of complete pairs for a defined cell.
pub const MIN_PAIRS: usize = 3;
pub const MAX_POLYCHORIC_LEVELS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrMethod {
    Pearson,
    Spearman,
    Polychoric,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelationError {
    #[error("need at least two columns, got {0}")]
    TooFewColumns(usize),
    #[error("no complete pairs")]
    Empty,
    #[error("a marginal has a single observed category; polychoric correlation undefined")]
    SingleCategory,
    #[error("{0} observed categories; polychoric estimation supports 2..={MAX_POLYCHORIC_LEVELS}")]
    TooManyLevels(usize),
}

/// A cell that could not be estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub row: String,
    pub col: String,
    pub reason: String,
}

/// Symmetric correlation matrix with pairwise sample sizes and the method
/// used in each cell. Undefined cells hold `NaN` and are listed in `missing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub variables: Vec<String>,
    #[serde(with = "mat_rows")]
    pub r: DMatrix<f64>,
    pub pair_n: Vec<Vec<usize>>,
    pub method: Vec<Vec<CorrMethod>>,
    pub missing: Vec<MissingCell>,
    /// Smallest eigenvalue of `r` (NaN when cells are missing).
    pub min_eigenvalue: f64,
    /// Set when `r` was replaced by its nearest correlation matrix.
    #[serde(default)]
    pub psd_repaired: bool,
}

impl CorrelationEstimate {
    pub fn p(&self) -> usize {
        self.variables.len()
    }

    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue >= -1e-10
    }

    /// Smallest pairwise sample size over off-diagonal cells.
    pub fn min_pair_n(&self) -> usize {
        let p = self.p();
        let mut m = usize::MAX;
        for i in 0..p {
            for j in 0..i {
                m = m.min(self.pair_n[i][j]);
            }
        }
        if m == usize::MAX {
            self.pair_n.first().map_or(0, |r| r[0])
        } else {
            m
        }
    }

    /// Counts of cells per method (upper triangle).
    pub fn method_counts(&self) -> BTreeMap<CorrMethod, usize> {
        let mut out = BTreeMap::new();
        for i in 0..self.p() {
            for j in 0..i {
                *out.entry(self.method[i][j]).or_insert(0) += 1;
            }
        }
        out
    }

    /// Sub-matrix for the named variables, in that order.
    pub fn select(&self, names: &[String]) -> Result<Self, String> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.variables
                    .iter()
                    .position(|v| v == n)
                    .ok_or_else(|| format!("variable `{n}` not in correlation matrix"))
            })
            .collect::<Result<_, _>>()?;
        let k = idx.len();
        let r = DMatrix::from_fn(k, k, |a, b| self.r[(idx[a], idx[b])]);
        let pair_n = (0..k)
            .map(|a| (0..k).map(|b| self.pair_n[idx[a]][idx[b]]).collect())
            .collect();
        let method = (0..k)
            .map(|a| (0..k).map(|b| self.method[idx[a]][idx[b]]).collect())
            .collect();
        let missing = self
            .missing
            .iter()
            .filter(|m| names.contains(&m.row) && names.contains(&m.col))
            .cloned()
            .collect();
        Ok(finish(names.to_vec(), r, pair_n, method, missing))
    }

    /// Replaces `r` by the nearest correlation matrix (Frobenius norm).
    /// Only defined when no cell is missing.
    pub fn repaired(&self) -> Option<Self> {
        if !self.is_complete() {
            return None;
        }
        let mut out = self.clone();
        out.r = linalg::nearest_correlation(&self.r, 2000, 1e-12);
        out.min_eigenvalue = linalg::min_eigenvalue(&out.r);
        out.psd_repaired = true;
        Some(out)
    }

    /// Writes the matrix as delimited text with a header row.
    pub fn write_matrix<W: Write>(&self, out: W) -> std::io::Result<()> {
        let p = self.p();
        write_table(out, &self.variables, |i, j| format!("{}", self.r[(i, j)]), p)
    }

    /// Writes the pairwise sample sizes as delimited text.
    pub fn write_pair_n<W: Write>(&self, out: W) -> std::io::Result<()> {
        let p = self.p();
        write_table(out, &self.variables, |i, j| self.pair_n[i][j].to_string(), p)
    }
}

fn write_table<W: Write>(
    out: W,
    names: &[String],
    cell: impl Fn(usize, usize) -> String,
    p: usize,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..p {
        let mut rec = vec![names[i].clone()];
        rec.extend((0..p).map(|j| {
            let s = cell(i, j);
            if s == "NaN" {
                String::new()
            } else {
                s
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush()
}

/// Largest absolute difference between two estimates over cells defined in
/// both; `None` when the variable lists differ.
pub fn max_abs_difference(a: &CorrelationEstimate, b: &CorrelationEstimate) -> Option<f64> {
    if a.variables != b.variables {
        return None;
    }
    let mut m: f64 = 0.0;
    for (x, y) in a.r.iter().zip(b.r.iter()) {
        if x.is_finite() && y.is_finite() {
            m = m.max((x - y).abs());
        }
    }
    Some(m)
}

fn finish(
    variables: Vec<String>,
    r: DMatrix<f64>,
    pair_n: Vec<Vec<usize>>,
    method: Vec<Vec<CorrMethod>>,
    missing: Vec<MissingCell>,
) -> CorrelationEstimate {
    let min_eigenvalue = if missing.is_empty() {
        linalg::min_eigenvalue(&r)
    } else {
        f64::NAN
    };
    CorrelationEstimate {
        variables,
        r,
        pair_n,
        method,
        missing,
        min_eigenvalue,
        psd_repaired: false,
    }
}

fn complete_pairs(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    x.iter()
        .zip(y)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| (*a, *b))
        .unzip()
}

/// Pearson correlation of two fully observed slices (two-pass).
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let r = sxy / (sxx * syy).sqrt();
    r.clamp(-1.0, 1.0)
}

/// Midranks (1-based; ties share the mean of their positions).
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&midranks(x), &midranks(y))
}

/// Two-step polychoric estimate for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polychoric {
    pub rho: f64,
    pub thresholds_x: Vec<f64>,
    pub thresholds_y: Vec<f64>,
    pub n: usize,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Contingency table of two integer-coded columns over complete pairs.
/// Categories are the distinct observed values in ascending order.
pub fn contingency(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let (cx, cy) = complete_pairs(x, y);
    let cats = |v: &[f64]| {
        let mut c: Vec<f64> = v.to_vec();
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    };
    let (kx, ky) = (cats(&cx), cats(&cy));
    let mut table = vec![vec![0.0; ky.len()]; kx.len()];
    for (a, b) in cx.iter().zip(&cy) {
        let i = kx.partition_point(|v| v < a);
        let j = ky.partition_point(|v| v < b);
        table[i][j] += 1.0;
    }
    (kx, ky, table)
}

fn thresholds(margin: &[f64], n: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(margin.len() + 1);
    out.push(f64::NEG_INFINITY);
    let mut cum = 0.0;
    for m in &margin[..margin.len() - 1] {
        cum += m;
        out.push(norm_quantile(cum / n));
    }
    out.push(f64::INFINITY);
    out
}

/// Polychoric correlation from a contingency table (rows: x categories).
pub fn polychoric_table(table: &[Vec<f64>]) -> Result<Polychoric, CorrelationError> {
    let kx = table.len();
    let ky = table.first().map_or(0, Vec::len);
    let n: f64 = table.iter().flatten().sum();
    if n == 0.0 {
        return Err(CorrelationError::Empty);
    }
    let row_m: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_m: Vec<f64> = (0..ky).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let observed = |m: &[f64]| m.iter().filter(|v| **v > 0.0).count();
    if observed(&row_m) < 2 || observed(&col_m) < 2 {
        return Err(CorrelationError::SingleCategory);
    }
    if kx > MAX_POLYCHORIC_LEVELS || ky > MAX_POLYCHORIC_LEVELS {
        return Err(CorrelationError::TooManyLevels(kx.max(ky)));
    }
    let tx = thresholds(&row_m, n);
    let ty = thresholds(&col_m, n);

    // Log-likelihood, score and expected information in rho.
    let eval = |rho: f64| {
        let (mut ll, mut score, mut info) = (0.0, 0.0, 0.0);
        for i in 0..kx {
            for j in 0..ky {
                let (a0, a1, b0, b1) = (tx[i], tx[i + 1], ty[j], ty[j + 1]);
                let p = bvn_rect(a0, a1, b0, b1, rho).max(1e-300);
                let dp = bvn_pdf(a1, b1, rho) - bvn_pdf(a0, b1, rho) - bvn_pdf(a1, b0, rho)
                    + bvn_pdf(a0, b0, rho);
                let c = table[i][j];
                if c > 0.0 {
                    ll += c * p.ln();
                    score += c * dp / p;
                }
                info += n * dp * dp / p;
            }
        }
        (ll, score, info)
    };

    // Start from the Pearson correlation of the category indices.
    let mut sxy = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..kx {
        for j in 0..ky {
            mx += i as f64 * table[i][j];
            my += j as f64 * table[i][j];
        }
    }
    mx /= n;
    my /= n;
    let (mut sxx, mut syy) = (0.0, 0.0);
    for i in 0..kx {
        for j in 0..ky {
            let (dx, dy) = (i as f64 - mx, j as f64 - my);
            sxy += dx * dy * table[i][j];
            sxx += dx * dx * table[i][j];
            syy += dy * dy * table[i][j];
        }
    }
    let r0 = (sxy / (sxx * syy).sqrt()).clamp(-0.95, 0.95);

    const Z_MAX: f64 = 10.0;
    let mut z = r0.atanh();
    let mut rho = z.tanh();
    let (mut ll, mut score, mut info) = eval(rho);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=500 {
        iterations = it;
        let jac = 1.0 - rho * rho;
        // Fisher scoring step in z = atanh(rho).
        let mut dz = if info > 0.0 { score / (info * jac) } else { 0.0 };
        dz = dz.clamp(-1.0, 1.0);
        let mut accepted = None;
        for _ in 0..60 {
            let zn = (z + dz).clamp(-Z_MAX, Z_MAX);
            let rn = zn.tanh();
            let e = eval(rn);
            if e.0 >= ll - 1e-12 * ll.abs() {
                accepted = Some((zn, rn, e));
                break;
            }
            dz *= 0.5;
        }
        let Some((zn, rn, e)) = accepted else {
            // No ascent possible along the scoring direction: accept when the
            // remaining scoring step is negligible.
            converged = info > 0.0 && (score / info).abs() < 1e-8;
            break;
        };
        let delta = rn - rho;
        z = zn;
        rho = rn;
        (ll, score, info) = e;
        if delta.abs() < 1e-8 {
            converged = true;
            break;
        }
        if z.abs() >= Z_MAX {
            // Boundary solution: the likelihood keeps increasing towards |rho| = 1.
            break;
        }
    }
    Ok(Polychoric {
        rho,
        thresholds_x: tx[1..kx].to_vec(),
        thresholds_y: ty[1..ky].to_vec(),
        n: n as usize,
        log_likelihood: ll,
        iterations,
        converged,
    })
}

/// Polychoric correlation of two ordinal columns (`NaN` = missing).
pub fn polychoric(x: &[f64], y: &[f64]) -> Result<Polychoric, CorrelationError> {
    let (_, _, table) = contingency(x, y);
    polychoric_table(&table)
}

type CellResult = (usize, Result<f64, String>);

fn build(
    x: &NumericMatrix,
    cell: impl Fn(usize, usize) -> (CorrMethod, CellResult) + Sync,
) -> Result<CorrelationEstimate, CorrelationError> {
    let p = x.n_cols();
    if p < 2 {
        return Err(CorrelationError::TooFewColumns(p));
    }
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let results: Vec<(CorrMethod, CellResult)> = pairs.par_iter().map(|&(i, j)| cell(i, j)).collect();

    let counts = x.observed_counts();
    let mut r = DMatrix::identity(p, p);
    let mut pair_n = vec![vec![0; p]; p];
    let mut method = vec![vec![CorrMethod::Pearson; p]; p];
    let mut missing = Vec::new();
    for i in 0..p {
        pair_n[i][i] = counts[i];
    }
    for (&(i, j), (m, (n, res))) in pairs.iter().zip(results) {
        pair_n[i][j] = n;
        pair_n[j][i] = n;
        method[i][j] = m;
        method[j][i] = m;
        let v = match res {
            Ok(v) => v,
            Err(reason) => {
                missing.push(MissingCell {
                    row: x.names[i].clone(),
                    col: x.names[j].clone(),
                    reason,
                });
                f64::NAN
            }
        };
        r[(i, j)] = v;
        r[(j, i)] = v;
    }
    for i in 0..p {
        method[i][i] = method[(i + 1) % p][i];
    }
    for m in &missing {
        log::warn!("correlation {}-{} undefined: {}", m.row, m.col, m.reason);
    }
    Ok(finish(x.names.clone(), r, pair_n, method, missing))
}

fn pairwise(
    x: &NumericMatrix,
    i: usize,
    j: usize,
    f: fn(&[f64], &[f64]) -> f64,
) -> CellResult {
    let (a, b) = complete_pairs(&x.columns[i], &x.columns[j]);
    let n = a.len();
    if n < MIN_PAIRS {
        return (n, Err(format!("only {n} complete pairs")));
    }
    let v = f(&a, &b);
    if v.is_nan() {
        (n, Err("zero variance among complete pairs".into()))
    } else {
        (n, Ok(v))
    }
}

pub fn pearson_pairwise(x: &NumericMatrix) -> Result<CorrelationEstimate, CorrelationError> {
    build(x, |i, j| (CorrMethod::Pearson, pairwise(x, i, j, pearson)))
}

pub fn spearman_pairwise(x: &NumericMatrix) -> Result<CorrelationEstimate, CorrelationError> {
    build(x, |i, j| (CorrMethod::Spearman, pairwise(x, i, j, spearman)))
}

/// Polychoric for pairs of ordinal columns with at most `polychoric_max_levels`
/// levels each, Spearman for every other pair.
pub fn mixed_correlation(
    x: &NumericMatrix,
    polychoric_max_levels: usize,
) -> Result<CorrelationEstimate, CorrelationError> {
    let small = |j: usize| matches!(x.levels[j], Some(l) if l <= polychoric_max_levels);
    build(x, |i, j| {
        if small(i) && small(j) {
            let (a, b) = complete_pairs(&x.columns[i], &x.columns[j]);
            let n = a.len();
            let res = if n < MIN_PAIRS {
                Err(format!("only {n} complete pairs"))
            } else {
                match polychoric(&a, &b) {
                    Ok(pc) if pc.converged => Ok(pc.rho),
                    Ok(pc) => {
                        log::warn!(
                            "polychoric {}-{} stopped at rho={:.6} without converging",
                            x.names[i],
                            x.names[j],
                            pc.rho
                        );
                        Ok(pc.rho)
                    }
                    Err(e) => Err(e.to_string()),
                }
            };
            (CorrMethod::Polychoric, (n, res))
        } else {
            (CorrMethod::Spearman, pairwise(x, i, j, spearman))
        }
    })
}

/// Correlation method selector used by configuration files and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Pearson,
    Spearman,
    Mixed,
}

impl std::str::FromStr for MethodChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pearson" => Ok(Self::Pearson),
            "spearman" => Ok(Self::Spearman),
            "mixed" | "polychoric" => Ok(Self::Mixed),
            other => Err(format!("unknown correlation method `{other}`")),
        }
    }
}

pub fn correlate(
    x: &NumericMatrix,
    method: MethodChoice,
    polychoric_max_levels: usize,
) -> Result<CorrelationEstimate, CorrelationError> {
    match method {
        MethodChoice::Pearson => pearson_pairwise(x),
        MethodChoice::Spearman => spearman_pairwise(x),
        MethodChoice::Mixed => mixed_correlation(x, polychoric_max_levels),
    }
}

/// Method plus the polychoric level cutoff, as carried through the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationConfig {
    pub method: MethodChoice,
    #[serde(default = "default_max_levels")]
    pub polychoric_max_levels: usize,
}

fn default_max_levels() -> usize {
    6
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            method: MethodChoice::Mixed,
            polychoric_max_levels: default_max_levels(),
        }
    }
}

impl CorrelationConfig {
    pub fn estimate(&self, x: &NumericMatrix) -> Result<CorrelationEstimate, CorrelationError> {
        correlate(x, self.method, self.polychoric_max_levels)
    }
}

/// Comparison of the three methods on the same data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodComparison {
    pub pearson_vs_spearman: f64,
    pub pearson_vs_mixed: f64,
    pub spearman_vs_mixed: f64,
}

pub fn compare_methods(
    x: &NumericMatrix,
    polychoric_max_levels: usize,
) -> Result<MethodComparison, CorrelationError> {
    let p = pearson_pairwise(x)?;
    let s = spearman_pairwise(x)?;
    let m = mixed_correlation(x, polychoric_max_levels)?;
    Ok(MethodComparison {
        pearson_vs_spearman: max_abs_difference(&p, &s).unwrap_or(f64::NAN),
        pearson_vs_mixed: max_abs_difference(&p, &m).unwrap_or(f64::NAN),
        spearman_vs_mixed: max_abs_difference(&s, &m).unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(cols: Vec<Vec<f64>>, levels: Vec<Option<usize>>) -> NumericMatrix {
        let names = (0..cols.len()).map(|i| format!("X{i}")).collect();
        NumericMatrix::new(names, cols, levels)
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1., 2., 3., 4.], &[4., 3., 2., 1.]) + 1.0).abs() < 1e-15);
        assert!((pearson(&[1., 2., 3., 4., 5.], &[2., 1., 4., 3., 5.]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1., 2., 3.], &[3., 1., 2.]) + 0.5).abs() < 1e-12);
        let r = spearman(&[1., 1., 2.], &[1., 2., 3.]);
        assert!((r - 3f64.sqrt() / 2.0).abs() < 1e-12);
        let x = [0.3, 1.2, 2.5, 7.0, 9.9];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pairwise_uses_complete_cases_and_flags_short_pairs() {
        let nan = f64::NAN;
        let x = mat(
            vec![
                vec![1., 2., 3., 4., nan],
                vec![2., 4., 6., 8., 1.],
                vec![nan, nan, 1., 2., 3.],
            ],
            vec![None; 3],
        );
        let est = pearson_pairwise(&x).unwrap();
        assert_eq!(est.r[(0, 1)], 1.0);
        assert_eq!(est.pair_n[0][1], 4);
        assert_eq!(est.pair_n[0][0], 4);
        assert_eq!(est.pair_n[0][2], 2);
        assert!(est.r[(0, 2)].is_nan());
        assert_eq!(est.missing.len(), 1);
        assert!(est.r[(1, 2)].is_finite());
        for i in 0..3 {
            assert_eq!(est.r[(i, i)], 1.0);
        }
    }

    #[test]
    fn independence_table_gives_zero() {
        let pc = polychoric_table(&[vec![25., 25.], vec![25., 25.]]).unwrap();
        assert!(pc.rho.abs() < 1e-8);
        assert!(pc.thresholds_x[0].abs() < 1e-12 && pc.thresholds_y[0].abs() < 1e-12);
        assert!(pc.converged);
    }

    #[test]
    fn threshold_at_one_sd() {
        let pc = polychoric_table(&[vec![4000., 4413.], vec![800., 787.]]).unwrap();
        assert!((pc.thresholds_x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn single_category_is_undefined() {
        let err = polychoric(&[1., 1., 1., 1.], &[1., 2., 1., 2.]).unwrap_err();
        assert_eq!(err, CorrelationError::SingleCategory);
        let x = mat(vec![vec![1., 1., 1., 1.], vec![1., 2., 1., 2.]], vec![Some(2), Some(2)]);
        let est = mixed_correlation(&x, 6).unwrap();
        assert_eq!(est.missing.len(), 1);
    }

    #[test]
    fn zero_cells_do_not_break_the_likelihood() {
        let pc = polychoric_table(&[vec![30., 10., 0.], vec![5., 40., 5.], vec![0., 10., 30.]]).unwrap();
        assert!(pc.converged);
        assert!(pc.rho > 0.7 && pc.rho < 1.0);
    }

    #[test]
    fn mixed_rule_selects_method_per_cell() {
        let a = vec![1., 2., 3., 4., 1., 2., 3., 4., 2., 3.];
        let b = vec![1., 2., 2., 4., 1., 3., 3., 4., 2., 4.];
        let c = vec![1., 5., 7., 11., 2., 4., 8., 10., 3., 6.];
        let x = mat(vec![a, b, c], vec![Some(4), Some(4), Some(11)]);
        let est = mixed_correlation(&x, 6).unwrap();
        assert_eq!(est.method[0][1], CorrMethod::Polychoric);
        assert_eq!(est.method[0][2], CorrMethod::Spearman);
        assert_eq!(est.method[1][2], CorrMethod::Spearman);
        let only11 = x.select(&["X2".to_string(), "X2".to_string()]).unwrap();
        let est = mixed_correlation(&only11, 6).unwrap();
        assert_eq!(est.method_counts().get(&CorrMethod::Spearman), Some(&1));
    }

    #[test]
    fn inversion_symmetry_of_polychoric() {
        let table = vec![vec![20., 12., 3.], vec![8., 30., 9.], vec![2., 11., 25.]];
        let pc = polychoric_table(&table).unwrap();
        let flipped_rows: Vec<Vec<f64>> = table.iter().rev().cloned().collect();
        let one = polychoric_table(&flipped_rows).unwrap();
        assert!((one.rho + pc.rho).abs() < 1e-7);
        let both: Vec<Vec<f64>> = flipped_rows
            .iter()
            .map(|r| r.iter().rev().copied().collect())
            .collect();
        let two = polychoric_table(&both).unwrap();
        assert!((two.rho - pc.rho).abs() < 1e-7);
    }

    #[test]
    fn repair_produces_psd() {
        let mut est = pearson_pairwise(&mat(
            vec![vec![1., 2., 3., 4.], vec![1., 3., 2., 4.], vec![4., 1., 3., 2.]],
            vec![None; 3],
        ))
        .unwrap();
        est.r = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        let fixed = est.repaired().unwrap();
        assert!(fixed.psd_repaired && fixed.is_psd());
    }
}
