//! Iterative item pruning: parallel analysis, bracketed fits, removal of
//! items that violate the communality / loading / cross-loading rules, then
//! removal of factors with too few items or insufficient reliability.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::parallel::{parallel_analysis, ParallelAnalysis, ParallelOptions};
use super::{fit_bracket, BracketCandidate, EfaError, EfaOptions, EfaSolution};
use crate::correlation::CorrelationConfig;
use crate::data::NumericMatrix;
use crate::reliability::raw_alpha;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneCriteria {
    pub min_communality: f64,
    pub min_loading: f64,
    pub cross_loading_threshold: f64,
    pub min_alpha: f64,
    pub min_items_per_factor: usize,
}

impl Default for PruneCriteria {
    fn default() -> Self {
        Self {
            min_communality: 0.40,
            min_loading: 0.32,
            cross_loading_threshold: 0.32,
            min_alpha: 0.70,
            min_items_per_factor: 3,
        }
    }
}

impl PruneCriteria {
    pub fn validate(&self) -> Result<(), EfaError> {
        let unit = [
            ("min_communality", self.min_communality),
            ("min_loading", self.min_loading),
            ("cross_loading_threshold", self.cross_loading_threshold),
            ("min_alpha", self.min_alpha),
        ];
        for (name, v) in unit {
            if !(v > 0.0 && v < 1.0) {
                return Err(EfaError::Options(format!("{name} = {v} outside (0, 1)")));
            }
        }
        if self.min_items_per_factor < 2 {
            return Err(EfaError::Options("min_items_per_factor must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneRule {
    /// h² at or below the communality threshold.
    LowCommunality,
    /// No loading above the loading threshold.
    LowLoading,
    /// Loadings above the cross-loading threshold on two or more factors.
    CrossLoading,
    /// The item's factor has α at or below the reliability threshold.
    FactorReliability,
    /// The item's factor has fewer items than required.
    FactorSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub variable: String,
    pub rule: PruneRule,
    /// The statistic that triggered the rule (h², max |λ|, second |λ|, or α).
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneStep {
    pub iteration: usize,
    pub variables: Vec<String>,
    pub suggested: usize,
    pub bracket: Vec<BracketCandidate>,
    pub chosen: usize,
    pub stage: u8,
    pub removals: Vec<Removal>,
    /// Raw α of each factor's item set when stage 2 was evaluated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub factor_alpha: Vec<(String, usize, Option<f64>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneOptions {
    pub correlation: CorrelationConfig,
    pub parallel: ParallelOptions,
    pub efa: EfaOptions,
    /// Fix the factor count instead of choosing from the bracket.
    pub pinned_factors: Option<usize>,
    pub max_iterations: usize,
}

impl Default for PruneOptions {
    fn default() -> Self {
        Self {
            correlation: CorrelationConfig::default(),
            parallel: ParallelOptions::default(),
            efa: EfaOptions::default(),
            pinned_factors: None,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneResult {
    pub trace: Vec<PruneStep>,
    pub retained: Vec<String>,
    pub removed: Vec<Removal>,
    pub parallel: ParallelAnalysis,
    pub solution: EfaSolution,
    pub cycle: bool,
    pub exhausted: bool,
}

/// Items violating the stage-1 rules, in variable order.
pub fn stage1_violations(sol: &EfaSolution, c: &PruneCriteria) -> Vec<Removal> {
    let mut out = Vec::new();
    for (i, name) in sol.variables.iter().enumerate() {
        let row: Vec<f64> = sol.pattern.row(i).iter().map(|v| v.abs()).collect();
        let max = row.iter().copied().fold(0.0, f64::max);
        let salient: Vec<f64> = row
            .iter()
            .copied()
            .filter(|v| *v > c.cross_loading_threshold)
            .collect();
        let (rule, value) = if sol.h2[i] <= c.min_communality {
            (PruneRule::LowCommunality, sol.h2[i])
        } else if max <= c.min_loading {
            (PruneRule::LowLoading, max)
        } else if salient.len() >= 2 {
            let mut s = salient;
            s.sort_by(|a, b| b.total_cmp(a));
            (PruneRule::CrossLoading, s[1])
        } else {
            continue;
        };
        out.push(Removal {
            variable: name.clone(),
            rule,
            value,
            factor: None,
        });
    }
    out
}

/// Runs the pruning loop on the columns of `x`.
pub fn prune_items(
    x: &NumericMatrix,
    criteria: &PruneCriteria,
    opts: &PruneOptions,
) -> Result<PruneResult, EfaError> {
    criteria.validate()?;
    let mut vars: Vec<String> = x.names.clone();
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut trace = Vec::new();
    let mut removed = Vec::new();
    let mut cycle = false;
    let n_obs = x.n_rows;
    for iteration in 1..=opts.max_iterations {
        if !seen.insert(vars.clone()) {
            cycle = true;
            log::warn!("pruning revisited a variable set; stopping");
            break;
        }
        let xs = x.select(&vars).map_err(EfaError::Degenerate)?;
        let r = opts.correlation.estimate(&xs)?;
        let pa = parallel_analysis(&xs, &r, &opts.parallel)?;
        let bracket = fit_bracket(
            &r,
            pa.suggested.max(1),
            n_obs,
            &opts.efa,
            criteria.min_loading,
            opts.pinned_factors,
        )?;
        let sol = &bracket.solution;
        let mut step = PruneStep {
            iteration,
            variables: vars.clone(),
            suggested: pa.suggested,
            bracket: bracket.candidates.clone(),
            chosen: bracket.chosen,
            stage: 1,
            removals: stage1_violations(sol, criteria),
            factor_alpha: Vec::new(),
        };
        if step.removals.is_empty() {
            step.stage = 2;
            let groups = sol.factor_items(criteria.min_loading);
            for (k, items) in groups.iter().enumerate() {
                let names: Vec<String> = items.iter().map(|&i| vars[i].clone()).collect();
                let alpha = if names.len() >= 2 {
                    raw_alpha(&xs.select(&names).map_err(EfaError::Degenerate)?).ok()
                } else {
                    None
                };
                step.factor_alpha.push((sol.factors[k].clone(), names.len(), alpha));
                let (rule, value) = if names.len() < criteria.min_items_per_factor {
                    (PruneRule::FactorSize, names.len() as f64)
                } else if alpha.is_none_or(|a| a <= criteria.min_alpha) {
                    (PruneRule::FactorReliability, alpha.unwrap_or(f64::NAN))
                } else {
                    continue;
                };
                for n in names {
                    step.removals.push(Removal {
                        variable: n,
                        rule,
                        value,
                        factor: Some(sol.factors[k].clone()),
                    });
                }
            }
        }
        if step.removals.is_empty() {
            trace.push(step);
            return Ok(PruneResult {
                trace,
                retained: vars,
                removed,
                parallel: pa,
                solution: bracket.solution,
                cycle,
                exhausted: false,
            });
        }
        let drop: BTreeSet<&str> = step.removals.iter().map(|r| r.variable.as_str()).collect();
        let next: Vec<String> = vars.iter().filter(|v| !drop.contains(v.as_str())).cloned().collect();
        removed.extend(step.removals.iter().cloned());
        for r in &step.removals {
            log::info!("iteration {iteration}: removing {} ({:?}, {:.3})", r.variable, r.rule, r.value);
        }
        trace.push(step);
        if next.len() < 3 {
            return Err(EfaError::TooFewVariables(next.len()));
        }
        vars = next;
    }
    // Out of iterations or cycling: report the state reached.
    let xs = x.select(&vars).map_err(EfaError::Degenerate)?;
    let r = opts.correlation.estimate(&xs)?;
    let pa = parallel_analysis(&xs, &r, &opts.parallel)?;
    let bracket = fit_bracket(
        &r,
        pa.suggested.max(1),
        n_obs,
        &opts.efa,
        criteria.min_loading,
        opts.pinned_factors,
    )?;
    Ok(PruneResult {
        trace,
        retained: vars,
        removed,
        parallel: pa,
        solution: bracket.solution,
        cycle,
        exhausted: !cycle,
    })
}
