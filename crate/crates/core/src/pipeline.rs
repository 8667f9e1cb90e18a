//! End-to-end analysis: ingest, correlations, EFA pruning, reliability,
//! CFA and the structural search, driven by one TOML config.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! ingest/report.json
//! correlation/report.json      correlation/matrix.csv
//! efa/report.json              efa/pattern.txt
//! reliability/report.json
//! cfa/report.json              cfa/model.txt
//! search/report.json           search/leaderboard.txt   search/top_tier.txt
//! summary.json                 summary.txt
//! ```
//!
//! Stage seeds derive from the single `seed`: parallel analysis `seed`,
//! rotation starts `seed + 1`, EFA bootstrap `seed + 2`, reliability
//! bootstrap `seed + 3`, CFA bootstrap `seed + 4`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{CorrelationConfig, CorrelationEstimate};
use crate::data::NumericMatrix;
use crate::efa::{
    bootstrap_ci, prune_items, BootstrapOptions, EfaOptions, EfaSolution, NullScheme, ParallelOptions,
    PruneCriteria, PruneOptions, PruneResult, RotationOptions,
};
use crate::ingest::{load_dataset, recode, to_numeric, OrdinalDataset, RowFilter, Schema, VariableKind};
use crate::reliability::{self, omega, reliability_report, CronbachOptions, Omega, ReliabilityReport};
use crate::report;
use crate::search::{
    enumerate_structures, reconcile_count, run_search, CountReconciliation, EnumerationRule, Measurement,
    SearchOptions, SearchResult,
};
use crate::sem::{self, BootstrapSe, Estimator, Identification, FitOptions, Op, SampleMoments, SampleScale, SemFit, SemModel};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSplit {
    /// Metadata column holding the wave (survey year).
    pub column: String,
    /// Waves used for the exploratory stages.
    pub efa: Vec<i64>,
    /// Waves used for CFA and the structural search.
    pub confirm: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfaSection {
    pub criteria: PruneCriteria,
    pub pinned_factors: Option<usize>,
    pub max_iterations: usize,
    pub parallel_resamples: usize,
    pub parallel_quantile: f64,
    pub null_scheme: NullScheme,
    pub rotation_starts: usize,
    /// Bootstrap replicates for loading and Φ intervals (0 disables).
    pub bootstrap: usize,
    pub ci_alpha: f64,
}

impl Default for EfaSection {
    fn default() -> Self {
        Self {
            criteria: PruneCriteria::default(),
            pinned_factors: None,
            max_iterations: 50,
            parallel_resamples: 100,
            parallel_quantile: 0.95,
            null_scheme: NullScheme::Simulated,
            rotation_starts: RotationOptions::default().n_starts,
            bootstrap: 100,
            ci_alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReliabilitySection {
    /// Replicates for the standard error of α.
    pub n_boot: usize,
}

impl Default for ReliabilitySection {
    fn default() -> Self {
        Self { n_boot: 200 }
    }
}

/// CFA settings and acceptance thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfaSection {
    pub enabled: bool,
    /// Model file overriding the measurement derived from the EFA.
    pub model: Option<PathBuf>,
    pub estimator: Estimator,
    pub scale: SampleScale,
    /// Identify factors by unit variance instead of a unit first loading.
    pub unit_variance: bool,
    /// Bootstrap replicates for DWLS standard errors (0 disables).
    pub bootstrap: usize,
    pub min_std_loading: f64,
    pub min_ave: f64,
    pub min_reliability: f64,
    pub max_std_residual: f64,
}

impl Default for CfaSection {
    fn default() -> Self {
        Self {
            enabled: true,
            model: None,
            estimator: Estimator::Dwls,
            scale: SampleScale::N,
            unit_variance: false,
            bootstrap: 0,
            min_std_loading: 0.50,
            min_ave: 0.50,
            min_reliability: 0.70,
            max_std_residual: 2.50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub enabled: bool,
    pub estimator: Estimator,
    pub scale: SampleScale,
    pub rule: EnumerationRule,
    pub sinks: Option<Vec<String>>,
    /// Rows in the text leaderboard.
    pub leaderboard: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            enabled: true,
            estimator: Estimator::Ml,
            scale: SampleScale::N,
            rule: EnumerationRule::default(),
            sinks: None,
            leaderboard: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: PathBuf,
    /// Inferred from the data when absent.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub jobs: Option<usize>,
    pub waves: WaveSplit,
    /// Extra row filters applied to both splits (e.g. countries).
    #[serde(default)]
    pub filters: BTreeMap<String, Vec<i64>>,
    #[serde(default)]
    pub correlation: CorrelationConfig,
    #[serde(default)]
    pub efa: EfaSection,
    #[serde(default)]
    pub reliability: ReliabilitySection,
    #[serde(default)]
    pub cfa: CfaSection,
    #[serde(default)]
    pub search: SearchSection,
}

fn default_seed() -> u64 {
    1
}

impl PipelineConfig {
    /// Parses a config; relative paths are resolved against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data);
        fix(&mut cfg.output_dir);
        if let Some(p) = cfg.schema.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.cfa.model.as_mut() {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.waves.efa.is_empty() || self.waves.confirm.is_empty() {
            return bad("both wave lists must be non-empty".into());
        }
        let shared: Vec<i64> = self
            .waves
            .efa
            .iter()
            .filter(|w| self.waves.confirm.contains(w))
            .copied()
            .collect();
        if !shared.is_empty() {
            return bad(format!(
                "EFA and CFA/SEM waves must be disjoint; {shared:?} appear in both"
            ));
        }
        if self.filters.contains_key(&self.waves.column) {
            return bad(format!("`{}` is the wave column and cannot also be a filter", self.waves.column));
        }
        self.efa
            .criteria
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(self.efa.parallel_quantile > 0.0 && self.efa.parallel_quantile < 1.0) {
            return bad("efa.parallel_quantile must lie in (0, 1)".into());
        }
        if !(self.efa.ci_alpha > 0.0 && self.efa.ci_alpha < 1.0) {
            return bad("efa.ci_alpha must lie in (0, 1)".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1".into());
        }
        let c = &self.cfa;
        for (name, v) in [
            ("cfa.min_std_loading", c.min_std_loading),
            ("cfa.min_ave", c.min_ave),
            ("cfa.min_reliability", c.min_reliability),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} = {v} outside [0, 1)"));
            }
        }
        if c.max_std_residual <= 0.0 {
            return bad("cfa.max_std_residual must be positive".into());
        }
        Ok(())
    }

    pub fn efa_filter(&self) -> RowFilter {
        self.filter_with(&self.waves.efa)
    }

    pub fn confirm_filter(&self) -> RowFilter {
        self.filter_with(&self.waves.confirm)
    }

    fn filter_with(&self, waves: &[i64]) -> RowFilter {
        let mut f = RowFilter::column_in(&self.waves.column, waves.iter().copied());
        for (col, vals) in &self.filters {
            f = f.and(col, vals.iter().copied());
        }
        f
    }
}

/// One acceptance check with its observed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value > threshold,
        }
    }

    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value < threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub stage: String,
    /// Converged and every check passed.
    pub ok: bool,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub stages: Vec<StageStatus>,
    /// Stage that raised an error, if any; later stages did not run.
    pub failed: Option<String>,
}

impl PipelineOutcome {
    pub fn ok(&self) -> bool {
        self.failed.is_none() && self.stages.iter().all(|s| s.ok)
    }
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    pub kind: VariableKind,
    pub levels: usize,
    pub observed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub filter: String,
    pub source_rows: usize,
    pub rows: usize,
    pub variables: Vec<VariableSummary>,
}

impl SplitSummary {
    pub fn of(d: &OrdinalDataset) -> Self {
        Self {
            filter: d.provenance.filter.clone(),
            source_rows: d.provenance.source_rows,
            rows: d.n_rows(),
            variables: d
                .variables
                .iter()
                .zip(&d.columns)
                .map(|(v, col)| VariableSummary {
                    name: v.name.clone(),
                    kind: v.kind,
                    levels: v.valid_levels.len(),
                    observed: col.iter().filter(|c| c.is_some()).count(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema_inferred: bool,
    pub efa: SplitSummary,
    pub confirm: SplitSummary,
}

/// Loads and recodes both wave splits.
pub fn ingest_splits(cfg: &PipelineConfig) -> Result<(OrdinalDataset, OrdinalDataset, IngestReport), PipelineError> {
    let err = stage_err("ingest");
    let (schema, inferred) = match &cfg.schema {
        Some(p) => (Schema::load(p).map_err(|e| err(e.to_string()))?, false),
        None => {
            let text = std::fs::read_to_string(&cfg.data).map_err(|source| PipelineError::Io {
                path: cfg.data.clone(),
                source,
            })?;
            let mut meta = vec![cfg.waves.column.clone()];
            meta.extend(cfg.filters.keys().cloned());
            let s = Schema::infer(&text, &meta, crate::correlation::MAX_POLYCHORIC_LEVELS)
                .map_err(|e| err(e.to_string()))?;
            (s, true)
        }
    };
    let load = |f: &RowFilter| -> Result<OrdinalDataset, PipelineError> {
        let d = load_dataset(&cfg.data, &schema, f).map_err(|e| err(e.to_string()))?;
        recode(&d).map_err(|e| err(e.to_string()))
    };
    let efa = load(&cfg.efa_filter())?;
    let confirm = load(&cfg.confirm_filter())?;
    if efa.n_rows() == 0 {
        return Err(err(format!("no rows match the EFA filter ({})", efa.provenance.filter)));
    }
    if confirm.n_rows() == 0 {
        return Err(err(format!("no rows match the CFA filter ({})", confirm.provenance.filter)));
    }
    let report = IngestReport {
        schema_inferred: inferred,
        efa: SplitSummary::of(&efa),
        confirm: SplitSummary::of(&confirm),
    };
    Ok((efa, confirm, report))
}

// ---------------------------------------------------------------- EFA

pub fn prune_options(cfg: &PipelineConfig) -> PruneOptions {
    PruneOptions {
        correlation: cfg.correlation,
        parallel: ParallelOptions {
            n_resamples: cfg.efa.parallel_resamples,
            quantile: cfg.efa.parallel_quantile,
            scheme: cfg.efa.null_scheme,
            seed: cfg.seed,
            ..ParallelOptions::default()
        },
        efa: EfaOptions {
            rotation: RotationOptions {
                n_starts: cfg.efa.rotation_starts,
                seed: cfg.seed.wrapping_add(1),
                ..RotationOptions::default()
            },
            ..EfaOptions::default()
        },
        pinned_factors: cfg.efa.pinned_factors,
        max_iterations: cfg.efa.max_iterations,
    }
}

/// Pruning followed by bootstrap intervals on the final solution.
pub fn efa_stage(x: &NumericMatrix, cfg: &PipelineConfig) -> Result<PruneResult, PipelineError> {
    let err = stage_err("efa");
    let opts = prune_options(cfg);
    let mut res = prune_items(x, &cfg.efa.criteria, &opts).map_err(|e| err(e.to_string()))?;
    if cfg.efa.bootstrap > 0 {
        let bo = BootstrapOptions {
            n_boot: cfg.efa.bootstrap,
            alpha: cfg.efa.ci_alpha,
            seed: cfg.seed.wrapping_add(2),
            ..BootstrapOptions::default()
        };
        let ci = bootstrap_ci(x, &res.solution, &opts.correlation, &opts.efa, &bo).map_err(|e| err(e.to_string()))?;
        res.solution.ci = Some(ci);
    }
    Ok(res)
}

/// One block per factor holding the items whose primary loading is on it.
pub fn measurement_from_efa(sol: &EfaSolution, min_loading: f64) -> Measurement {
    Measurement {
        blocks: sol
            .factors
            .iter()
            .zip(sol.factor_items(min_loading))
            .filter(|(_, items)| !items.is_empty())
            .map(|(f, items)| (f.clone(), items.iter().map(|&i| sol.variables[i].clone()).collect()))
            .collect(),
    }
}

// ---------------------------------------------------------------- reliability

pub fn reliability_stage(
    x: &NumericMatrix,
    measurement: &Measurement,
    n_boot: usize,
    seed: u64,
) -> Result<Vec<ReliabilityReport>, PipelineError> {
    let err = stage_err("reliability");
    measurement
        .blocks
        .iter()
        .map(|(f, items)| {
            let sub = x.select(items).map_err(&err)?;
            reliability_report(f, &sub, &CronbachOptions { n_boot, seed }).map_err(|e| err(e.to_string()))
        })
        .collect()
}

// ---------------------------------------------------------------- CFA

/// Standardized loadings, AVE and ω for one measurement block of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockReliability {
    pub factor: String,
    pub items: Vec<String>,
    pub std_loadings: Vec<f64>,
    pub ave: f64,
    pub omega: Option<Omega>,
    /// Raw α of the block on the fitted data.
    pub alpha: Option<f64>,
}

/// Table-5 style block summaries from a fitted measurement model.
pub fn block_reliability(fit: &SemFit, measurement: &Measurement, x: Option<&NumericMatrix>) -> Vec<BlockReliability> {
    let idx = |name: &str| fit.observed.iter().position(|o| o == name);
    measurement
        .blocks
        .iter()
        .map(|(f, items)| {
            let std_loadings: Vec<f64> = items
                .iter()
                .map(|i| fit.param(f, Op::Measure, i).map_or(f64::NAN, |p| p.std))
                .collect();
            let pos: Vec<Option<usize>> = items.iter().map(|i| idx(i)).collect();
            let omega_val = if pos.iter().all(Option::is_some) {
                let pos: Vec<usize> = pos.into_iter().flatten().collect();
                let k = pos.len();
                let sd = |i: usize| fit.implied[(i, i)].sqrt();
                let theta = DMatrix::from_fn(k, k, |a, b| {
                    let (ia, ib) = (pos[a], pos[b]);
                    fit.param(&items[a], Op::Covary, &items[b])
                        .map_or(0.0, |p| p.est / (sd(ia) * sd(ib)))
                });
                let sum_block = |m: &DMatrix<f64>| {
                    let mut s = 0.0;
                    for &a in &pos {
                        for &b in &pos {
                            s += m[(a, b)] / (m[(a, a)] * m[(b, b)]).sqrt();
                        }
                    }
                    s
                };
                omega(&std_loadings, &theta, Some(sum_block(&fit.implied)), Some(sum_block(&fit.sample))).ok()
            } else {
                None
            };
            let alpha = x
                .and_then(|x| x.select(items).ok())
                .and_then(|sub| reliability::raw_alpha(&sub).ok());
            BlockReliability {
                factor: f.clone(),
                items: items.clone(),
                ave: reliability::ave(&std_loadings),
                std_loadings,
                omega: omega_val,
                alpha,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaReport {
    pub model: String,
    pub fit: SemFit,
    pub blocks: Vec<BlockReliability>,
    pub checks: Vec<Check>,
}

/// Acceptance checks on loadings, AVE, composite reliability and
/// standardized residuals.
pub fn cfa_checks(fit: &SemFit, blocks: &[BlockReliability], c: &CfaSection) -> Vec<Check> {
    let mut out = Vec::new();
    for b in blocks {
        let min_l = b.std_loadings.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        out.push(Check::above(format!("{} min |std loading|", b.factor), min_l, c.min_std_loading));
        out.push(Check::above(format!("{} AVE", b.factor), b.ave, c.min_ave));
        let rel = b.omega.map_or(f64::NAN, |o| o.omega1);
        out.push(Check::above(format!("{} omega", b.factor), rel, c.min_reliability));
    }
    if let Some(r) = &fit.residuals {
        out.push(Check::below("max |standardized residual|", r.max_abs, c.max_std_residual));
    }
    out
}

pub fn cfa_stage(
    x: &NumericMatrix,
    model_text: &str,
    c: &CfaSection,
    seed: u64,
) -> Result<(CfaReport, Measurement), PipelineError> {
    let err = stage_err("cfa");
    let ident = if c.unit_variance {
        Identification::UnitVariance
    } else {
        Identification::Marker
    };
    let model = SemModel::parse(model_text, ident).map_err(|e| err(e.to_string()))?;
    let measurement = Measurement::from_model(&model);
    let opts = FitOptions {
        scale: c.scale,
        residual_threshold: c.max_std_residual,
        bootstrap: (c.bootstrap > 0).then_some(BootstrapSe {
            n_boot: c.bootstrap,
            seed: seed.wrapping_add(4),
        }),
        ..FitOptions::default()
    };
    let fit = match c.estimator {
        Estimator::Ml => sem::fit_ml(&model, x, &opts),
        Estimator::Dwls => sem::fit_dwls(&model, x, &opts),
    }
    .map_err(|e| err(e.to_string()))?;
    let blocks = block_reliability(&fit, &measurement, Some(x));
    let checks = cfa_checks(&fit, &blocks, c);
    Ok((
        CfaReport {
            model: model.to_dsl(),
            fit,
            blocks,
            checks,
        },
        measurement,
    ))
}

// ---------------------------------------------------------------- search

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub rule: String,
    pub count: CountReconciliation,
    pub result: SearchResult,
}

pub fn search_stage(
    x: &NumericMatrix,
    measurement: &Measurement,
    s: &SearchSection,
    jobs: Option<usize>,
) -> Result<SearchReport, PipelineError> {
    let err = stage_err("search");
    let factors = measurement.factors();
    let skeletons = enumerate_structures(&factors, &s.rule).map_err(|e| err(e.to_string()))?;
    if skeletons.is_empty() {
        return Err(err(format!(
            "rule `{}` admits no structure over the {} retained factors",
            s.rule.describe(),
            factors.len()
        )));
    }
    let moments = SampleMoments::from_data(x, &measurement.indicators()).map_err(|e| err(e.to_string()))?;
    let opts = SearchOptions {
        estimator: s.estimator,
        fit: FitOptions {
            scale: s.scale,
            ..SearchOptions::default().fit
        },
        jobs,
        sinks: s.sinks.clone(),
    };
    let result = run_search(&skeletons, measurement, &moments, &opts).map_err(|e| err(e.to_string()))?;
    Ok(SearchReport {
        rule: s.rule.describe(),
        count: reconcile_count(factors.len(), &s.rule, skeletons.len()),
        result,
    })
}

// ---------------------------------------------------------------- driver

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    write_file(path, &to_json(value))
}

fn matrix_csv(c: &CorrelationEstimate) -> String {
    let mut buf = Vec::new();
    c.write_matrix(&mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("utf-8 csv")
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    stages: Vec<StageStatus>,
    summary: String,
}

impl Run<'_> {
    fn record(&mut self, stage: &str, converged: bool, checks: Vec<Check>, notes: Vec<String>) {
        let ok = converged && checks.iter().all(|c| c.pass);
        log::info!("stage {stage}: {}", if ok { "ok" } else { "not ok" });
        self.stages.push(StageStatus {
            stage: stage.to_string(),
            ok,
            checks,
            notes,
        });
    }

    fn finish(&self, failed: Option<String>) -> Result<PipelineOutcome, PipelineError> {
        let outcome = PipelineOutcome {
            stages: self.stages.clone(),
            failed,
        };
        write_json(&self.out.join("summary.json"), &outcome)?;
        let mut text = self.summary.clone();
        text.push_str(&report::render_outcome(&outcome));
        write_file(&self.out.join("summary.txt"), &text)?;
        Ok(outcome)
    }

    fn stages(&mut self) -> Result<(), PipelineError> {
        let cfg = self.cfg;
        let out = self.out.clone();

        let (efa_data, confirm_data, ingest) = ingest_splits(cfg)?;
        write_json(&out.join("ingest/report.json"), &ingest)?;
        self.summary.push_str(&report::render_ingest(&ingest));
        self.record("ingest", true, Vec::new(), Vec::new());

        let x_efa = to_numeric(&efa_data);
        let x_confirm = to_numeric(&confirm_data);
        let corr = cfg
            .correlation
            .estimate(&x_efa)
            .map_err(|e| stage_err("correlation")(e.to_string()))?;
        write_json(&out.join("correlation/report.json"), &corr)?;
        write_file(&out.join("correlation/matrix.csv"), &matrix_csv(&corr))?;
        self.summary.push_str(&report::render_correlation(&corr));
        let mut notes = x_efa.notices.clone();
        if !corr.missing.is_empty() {
            notes.push(format!("{} correlation cells undefined", corr.missing.len()));
        }
        self.record("correlation", corr.is_complete(), Vec::new(), notes);

        let pruned = efa_stage(&x_efa, cfg)?;
        write_json(&out.join("efa/report.json"), &pruned)?;
        let efa_text = report::render_prune(&pruned);
        write_file(&out.join("efa/pattern.txt"), &efa_text)?;
        self.summary.push_str(&efa_text);
        let mut notes = Vec::new();
        if pruned.cycle {
            notes.push("pruning revisited an earlier item set".into());
        }
        if pruned.exhausted {
            notes.push("pruning hit the iteration limit".into());
        }
        let converged = pruned.solution.converged && !pruned.cycle && !pruned.exhausted;
        self.record("efa", converged, Vec::new(), notes);

        let efa_measurement = measurement_from_efa(&pruned.solution, cfg.efa.criteria.min_loading);
        if efa_measurement.blocks.is_empty() {
            return Err(stage_err("efa")("no factor retained any items".into()));
        }
        let rel = reliability_stage(&x_efa, &efa_measurement, cfg.reliability.n_boot, cfg.seed.wrapping_add(3))?;
        write_json(&out.join("reliability/report.json"), &rel)?;
        self.summary.push_str(&report::render_reliability(&rel));
        let checks = rel
            .iter()
            .map(|r| Check::above(format!("{} raw alpha", r.factor), r.cronbach.raw_alpha, cfg.efa.criteria.min_alpha))
            .collect();
        self.record("reliability", true, checks, Vec::new());

        if !cfg.cfa.enabled {
            return Ok(());
        }
        let model_text = match &cfg.cfa.model {
            Some(p) => std::fs::read_to_string(p).map_err(|source| PipelineError::Io {
                path: p.clone(),
                source,
            })?,
            None => efa_measurement.cfa_dsl(),
        };
        let (cfa, measurement) = cfa_stage(&x_confirm, &model_text, &cfg.cfa, cfg.seed)?;
        write_json(&out.join("cfa/report.json"), &cfa)?;
        write_file(&out.join("cfa/model.txt"), &cfa.model)?;
        self.summary.push_str(&report::render_cfa(&cfa));
        let mut notes = cfa.fit.invalid.clone();
        if !cfa.fit.convergence.converged {
            notes.push(cfa.fit.convergence.message.clone());
        }
        self.record("cfa", cfa.fit.convergence.converged, cfa.checks.clone(), notes);

        if !cfg.search.enabled {
            return Ok(());
        }
        let search = search_stage(&x_confirm, &measurement, &cfg.search, None)?;
        write_json(&out.join("search/report.json"), &search)?;
        let board = report::render_search(&search, cfg.search.leaderboard);
        write_file(&out.join("search/leaderboard.txt"), &board)?;
        let mut top = String::new();
        for sk in &search.result.top_tier {
            let _ = writeln!(top, "# {}\n{}", sk.key, sk.to_dsl(&search.result.measurement));
        }
        write_file(&out.join("search/top_tier.txt"), &top)?;
        self.summary.push_str(&board);
        let ranked = search.result.n_ranked > 0;
        let notes = vec![format!(
            "{} candidate structures; reference count {} (gap {})",
            search.count.realized, search.count.reference, search.count.gap
        )];
        self.record("search", ranked, Vec::new(), notes);
        Ok(())
    }
}

/// Runs every stage, persisting each report as it completes. A failing
/// stage stops the run; its name is recorded in the outcome and returned
/// as the error, and earlier outputs stay on disk.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    if !cfg.data.exists() {
        return Err(PipelineError::Config(format!("data file {} not found", cfg.data.display())));
    }
    if let Some(s) = cfg.schema.as_ref().filter(|s| !s.exists()) {
        return Err(PipelineError::Config(format!("schema file {} not found", s.display())));
    }
    let go = || {
        let mut run = Run {
            cfg,
            out: cfg.output_dir.clone(),
            stages: Vec::new(),
            summary: String::new(),
        };
        match run.stages() {
            Ok(()) => run.finish(None),
            Err(e) => {
                let stage = match &e {
                    PipelineError::Stage { stage, .. } => stage.to_string(),
                    _ => "io".to_string(),
                };
                run.finish(Some(stage))?;
                Err(e)
            }
        }
    };
    match cfg.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?
            .install(go),
        None => go(),
    }
}
