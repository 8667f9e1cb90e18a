//! Parallel analysis on SMC-reduced eigenvalues.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EfaError;
use crate::correlation::{pearson_pairwise, CorrelationEstimate};
use crate::data::NumericMatrix;
use crate::linalg;

/// Which null envelope drives the suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullScheme {
    /// Independent standard-normal data of the same shape.
    Simulated,
    /// Each column permuted independently (missing cells travel with it).
    Resampled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParallelOptions {
    pub n_resamples: usize,
    pub quantile: f64,
    pub scheme: NullScheme,
    /// Also compute the envelope of the other scheme for the report.
    pub both_envelopes: bool,
    pub seed: u64,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        Self {
            n_resamples: 100,
            quantile: 0.95,
            scheme: NullScheme::Simulated,
            both_envelopes: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelAnalysis {
    pub variables: Vec<String>,
    pub observed: Vec<f64>,
    pub simulated: Option<Vec<f64>>,
    pub resampled: Option<Vec<f64>>,
    pub scheme: NullScheme,
    pub quantile: f64,
    pub n_resamples: usize,
    /// Rows per simulated null data set.
    pub n_null: usize,
    pub suggested: usize,
}

/// Eigenvalues of `R` with squared multiple correlations on the diagonal.
pub fn reduced_eigenvalues(r: &DMatrix<f64>) -> Result<Vec<f64>, EfaError> {
    let smc = linalg::smc(r).ok_or(EfaError::Singular)?;
    let mut reduced = r.clone();
    for i in 0..r.nrows() {
        reduced[(i, i)] = smc[i].clamp(0.0, 1.0);
    }
    Ok(linalg::sym_eigenvalues_desc(&reduced))
}

/// Type-7 sample quantile.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

fn envelope(reps: &[Vec<f64>], q: f64) -> Vec<f64> {
    let p = reps[0].len();
    (0..p)
        .map(|k| {
            let mut col: Vec<f64> = reps.iter().map(|r| r[k]).collect();
            quantile(&mut col, q)
        })
        .collect()
}

pub(crate) fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn simulated_replicate(n: usize, p: usize, seed: u64, rep: u64) -> Result<Vec<f64>, EfaError> {
    let mut rng = replicate_rng(seed, rep);
    let z = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let means = z.row_mean();
    let mut centered = z;
    for mut row in centered.row_iter_mut() {
        row -= &means;
    }
    let cov = centered.tr_mul(&centered);
    reduced_eigenvalues(&linalg::cov_to_cor(&cov))
}

fn resampled_replicate(x: &NumericMatrix, seed: u64, rep: u64) -> Result<Vec<f64>, EfaError> {
    let mut rng = replicate_rng(seed, rep);
    let mut perm = x.clone();
    for col in perm.columns.iter_mut() {
        col.shuffle(&mut rng);
    }
    let est = pearson_pairwise(&perm)?;
    if !est.is_complete() {
        return Err(EfaError::Degenerate(format!(
            "permuted data leaves undefined correlations ({} cells)",
            est.missing.len()
        )));
    }
    reduced_eigenvalues(&est.r)
}

/// Compares observed reduced eigenvalues of `r` (estimated from `x`) with
/// the chosen quantile of null eigenvalues. The suggestion is the number of
/// leading observed eigenvalues above the envelope.
pub fn parallel_analysis(
    x: &NumericMatrix,
    r: &CorrelationEstimate,
    opts: &ParallelOptions,
) -> Result<ParallelAnalysis, EfaError> {
    let p = r.p();
    if p < 3 {
        return Err(EfaError::TooFewVariables(p));
    }
    if opts.n_resamples < 20 {
        return Err(EfaError::Options(format!(
            "parallel analysis needs at least 20 resamples, got {}",
            opts.n_resamples
        )));
    }
    if !(0.0..1.0).contains(&opts.quantile) || opts.quantile <= 0.0 {
        return Err(EfaError::Options(format!("quantile {} outside (0, 1)", opts.quantile)));
    }
    super::check_finite(r)?;
    let observed = reduced_eigenvalues(&r.r)?;
    let n_null = mean_pair_n(r);

    let want_sim = opts.scheme == NullScheme::Simulated || opts.both_envelopes;
    let want_res = opts.scheme == NullScheme::Resampled || opts.both_envelopes;
    let simulated = if want_sim {
        let reps: Vec<Vec<f64>> = (0..opts.n_resamples as u64)
            .into_par_iter()
            .map(|rep| simulated_replicate(n_null, p, opts.seed, rep))
            .collect::<Result<_, _>>()?;
        Some(envelope(&reps, opts.quantile))
    } else {
        None
    };
    let resampled = if want_res {
        let reps: Vec<Vec<f64>> = (0..opts.n_resamples as u64)
            .into_par_iter()
            .map(|rep| resampled_replicate(x, opts.seed ^ 0x5eed_0000_0000, rep))
            .collect::<Result<_, _>>()?;
        Some(envelope(&reps, opts.quantile))
    } else {
        None
    };
    let env = match opts.scheme {
        NullScheme::Simulated => simulated.as_ref(),
        NullScheme::Resampled => resampled.as_ref(),
    }
    .expect("selected envelope computed");
    let suggested = observed
        .iter()
        .zip(env)
        .take_while(|(o, e)| o > e)
        .count();
    Ok(ParallelAnalysis {
        variables: r.variables.clone(),
        observed,
        simulated,
        resampled,
        scheme: opts.scheme,
        quantile: opts.quantile,
        n_resamples: opts.n_resamples,
        n_null,
        suggested,
    })
}

/// Mean off-diagonal pairwise sample size, used as the null data length.
fn mean_pair_n(r: &CorrelationEstimate) -> usize {
    let p = r.p();
    let mut sum = 0.0;
    let mut k = 0.0;
    for i in 0..p {
        for j in 0..i {
            sum += r.pair_n[i][j] as f64;
            k += 1.0;
        }
    }
    ((sum / k).round() as usize).max(p + 2)
}
