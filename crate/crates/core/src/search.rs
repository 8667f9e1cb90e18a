//! Exhaustive structural search: enumerate directed/covariance edge
//! configurations among factors, fit each with a fixed measurement part,
//! rank by (SRMR, RMSEA, CFI, TLI) and summarize what the best tier shares.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sem::{self, Estimator, FitOptions, SampleMoments, SemError};

/// Reference count of candidate diagrams the realized enumeration is
/// reconciled against.
pub const REFERENCE_COUNT: usize = 588;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("structure search needs 1 to 6 factors, got {0}")]
    FactorCount(usize),
    #[error("duplicate factor name `{0}`")]
    DuplicateFactor(String),
    #[error("measurement model: {0}")]
    Measurement(#[source] SemError),
    #[error("measurement model has regressions or factor covariances; give the measurement blocks only")]
    MeasurementHasStructure,
    #[error("skeleton nodes {skeleton:?} do not match the measurement factors {measurement:?}")]
    NodeMismatch {
        skeleton: Vec<String>,
        measurement: Vec<String>,
    },
    #[error("no skeletons to fit")]
    Empty,
    #[error("all {0} models failed; first failure: {1}")]
    AllFailed(usize, String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// Every pair is absent, a covariance, or one of the two directions.
    #[default]
    Mixed,
    /// As `Mixed`, but covariances only between nodes without incoming
    /// directed edges.
    ExogenousCovariancesOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EnumerationRule {
    pub kind: RuleKind,
    /// Keep only skeletons with at least this many edges.
    pub min_edges: Option<usize>,
    /// Keep only skeletons with at most this many edges.
    pub max_edges: Option<usize>,
}

impl EnumerationRule {
    pub fn describe(&self) -> String {
        let mut s = match self.kind {
            RuleKind::Mixed => "mixed: each pair absent, covariance, or directed either way; acyclic".to_string(),
            RuleKind::ExogenousCovariancesOnly => {
                "exogenous covariances only: covariances only between nodes without incoming paths; acyclic".to_string()
            }
        };
        if let Some(lo) = self.min_edges {
            let _ = write!(s, "; at least {lo} edges");
        }
        if let Some(hi) = self.max_edges {
            let _ = write!(s, "; at most {hi} edges");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StructuralSkeleton {
    pub nodes: Vec<String>,
    /// `(from, to)` node indices.
    pub directed: Vec<(usize, usize)>,
    /// Unordered pairs stored with the smaller index first.
    pub covariances: Vec<(usize, usize)>,
    pub key: String,
}

impl StructuralSkeleton {
    pub fn new(nodes: Vec<String>, mut directed: Vec<(usize, usize)>, covariances: Vec<(usize, usize)>) -> Self {
        directed.sort_unstable();
        directed.dedup();
        let mut covariances: Vec<(usize, usize)> = covariances.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        covariances.sort_unstable();
        covariances.dedup();
        let key = canonical_key(&nodes, &directed, &covariances);
        Self {
            nodes,
            directed,
            covariances,
            key,
        }
    }

    pub fn n_edges(&self) -> usize {
        self.directed.len() + self.covariances.len()
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn has_directed(&self, from: &str, to: &str) -> bool {
        match (self.index(from), self.index(to)) {
            (Some(a), Some(b)) => self.directed.contains(&(a, b)),
            _ => false,
        }
    }

    pub fn has_covariance(&self, a: &str, b: &str) -> bool {
        match (self.index(a), self.index(b)) {
            (Some(a), Some(b)) => self.covariances.contains(&(a.min(b), a.max(b))),
            _ => false,
        }
    }

    /// True when a directed path leads from `from` to `to`.
    pub fn has_path(&self, from: &str, to: &str) -> bool {
        match (self.index(from), self.index(to)) {
            (Some(a), Some(b)) if a != b => self.paths_into(b).iter().any(|p| p[0] == a),
            _ => false,
        }
    }

    /// All directed paths ending at `sink` (node index sequences).
    pub fn paths_into(&self, sink: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![vec![sink]];
        while let Some(path) = stack.pop() {
            let head = path[0];
            for &(from, to) in &self.directed {
                if to == head && !path.contains(&from) {
                    let mut p = vec![from];
                    p.extend(&path);
                    out.push(p.clone());
                    stack.push(p);
                }
            }
        }
        out.sort();
        out
    }

    pub fn is_acyclic(&self) -> bool {
        sem::model::is_acyclic(self.nodes.len(), &self.directed)
    }

    /// Human-readable edge labels (`A -> B`, `A ~~ B`).
    pub fn edge_labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .directed
            .iter()
            .map(|&(a, b)| format!("{} -> {}", self.nodes[a], self.nodes[b]))
            .chain(
                self.covariances
                    .iter()
                    .map(|&(a, b)| format!("{} ~~ {}", self.nodes[a], self.nodes[b])),
            )
            .collect();
        v.sort();
        v
    }

    /// Structural lines in the model language.
    pub fn structural_dsl(&self) -> String {
        let mut out = String::new();
        for (t, name) in self.nodes.iter().enumerate() {
            let preds: Vec<&str> = self
                .directed
                .iter()
                .filter(|e| e.1 == t)
                .map(|e| self.nodes[e.0].as_str())
                .collect();
            if !preds.is_empty() {
                let _ = writeln!(out, "{name} ~ {}", preds.join(" + "));
            }
        }
        for &(a, b) in &self.covariances {
            let _ = writeln!(out, "{} ~~ {}", self.nodes[a], self.nodes[b]);
        }
        out
    }

    /// Full model text: measurement blocks followed by the structure.
    pub fn to_dsl(&self, measurement: &Measurement) -> String {
        let mut out = measurement.dsl();
        out.push_str(&self.structural_dsl());
        out
    }
}

/// Order-independent key built from sorted name-based edge labels.
pub fn canonical_key(nodes: &[String], directed: &[(usize, usize)], covariances: &[(usize, usize)]) -> String {
    let mut d: Vec<String> = directed
        .iter()
        .map(|&(a, b)| format!("{}>{}", nodes[a], nodes[b]))
        .collect();
    let mut c: Vec<String> = covariances
        .iter()
        .map(|&(a, b)| {
            let (x, y) = if nodes[a] <= nodes[b] { (a, b) } else { (b, a) };
            format!("{}~{}", nodes[x], nodes[y])
        })
        .collect();
    d.sort();
    c.sort();
    format!("{}|{}", d.join(","), c.join(","))
}

fn check_nodes(factors: &[String]) -> Result<(), SearchError> {
    if factors.is_empty() || factors.len() > 6 {
        return Err(SearchError::FactorCount(factors.len()));
    }
    let mut seen = BTreeSet::new();
    for f in factors {
        if !seen.insert(f) {
            return Err(SearchError::DuplicateFactor(f.clone()));
        }
    }
    Ok(())
}

/// Visits every admissible configuration as `(directed, covariances)` in a
/// fixed order. Acyclicity is enforced while edges are added.
fn visit<F: FnMut(&[(usize, usize)], &[(usize, usize)])>(n: usize, rule: &EnumerationRule, mut f: F) {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut directed = Vec::new();
    let mut covs = Vec::new();
    // reach[v]: bitmask of nodes reachable from v via directed edges
    fn reaches(directed: &[(usize, usize)], from: usize, to: usize) -> bool {
        let mut seen = 0u64;
        let mut stack = vec![from];
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            for &(a, b) in directed {
                if a == v && seen & (1 << b) == 0 {
                    seen |= 1 << b;
                    stack.push(b);
                }
            }
        }
        false
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: FnMut(&[(usize, usize)], &[(usize, usize)])>(
        k: usize,
        pairs: &[(usize, usize)],
        n: usize,
        rule: &EnumerationRule,
        directed: &mut Vec<(usize, usize)>,
        covs: &mut Vec<(usize, usize)>,
        f: &mut F,
    ) {
        let edges = directed.len() + covs.len();
        if rule.max_edges.is_some_and(|hi| edges > hi) {
            return;
        }
        if rule.min_edges.is_some_and(|lo| edges + (pairs.len() - k) < lo) {
            return;
        }
        if k == pairs.len() {
            if rule.kind == RuleKind::ExogenousCovariancesOnly {
                let has_in = |v: usize| directed.iter().any(|e| e.1 == v);
                if covs.iter().any(|&(a, b)| has_in(a) || has_in(b)) {
                    return;
                }
            }
            f(directed, covs);
            return;
        }
        let (a, b) = pairs[k];
        rec(k + 1, pairs, n, rule, directed, covs, f);
        covs.push((a, b));
        rec(k + 1, pairs, n, rule, directed, covs, f);
        covs.pop();
        for (from, to) in [(a, b), (b, a)] {
            if !reaches(directed, to, from) {
                directed.push((from, to));
                rec(k + 1, pairs, n, rule, directed, covs, f);
                directed.pop();
            }
        }
    }
    rec(0, &pairs, n, rule, &mut directed, &mut covs, &mut f);
}

/// Enumerates structural skeletons over `factors` under `rule`,
/// deduplicated by canonical key and sorted by key.
pub fn enumerate_structures(factors: &[String], rule: &EnumerationRule) -> Result<Vec<StructuralSkeleton>, SearchError> {
    check_nodes(factors)?;
    let mut out: BTreeMap<String, StructuralSkeleton> = BTreeMap::new();
    visit(factors.len(), rule, |d, c| {
        let s = StructuralSkeleton::new(factors.to_vec(), d.to_vec(), c.to_vec());
        out.entry(s.key.clone()).or_insert(s);
    });
    Ok(out.into_values().collect())
}

/// Number of skeletons `enumerate_structures` would produce for `n` nodes.
pub fn count_structures(n: usize, rule: &EnumerationRule) -> usize {
    let mut count = 0;
    visit(n, rule, |_, _| count += 1);
    count
}

/// Realized count against the reference count of 588 candidate diagrams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountReconciliation {
    pub rule: String,
    pub realized: usize,
    pub reference: usize,
    pub gap: i64,
    /// Counts under related rules for the same node count, for comparison.
    pub alternatives: BTreeMap<String, usize>,
}

pub fn reconcile_count(n: usize, rule: &EnumerationRule, realized: usize) -> CountReconciliation {
    let mut alternatives = BTreeMap::new();
    let mixed = EnumerationRule::default();
    let exo = EnumerationRule {
        kind: RuleKind::ExogenousCovariancesOnly,
        ..mixed
    };
    alternatives.insert("mixed".into(), count_structures(n, &mixed));
    alternatives.insert("exogenous_covariances_only".into(), count_structures(n, &exo));
    alternatives.insert("directed_acyclic_only".into(), count_dags(n));
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs > 0 {
        let no_saturated = EnumerationRule {
            max_edges: Some(pairs - 1),
            ..mixed
        };
        alternatives.insert("mixed_without_saturated".into(), count_structures(n, &no_saturated));
    }
    CountReconciliation {
        rule: rule.describe(),
        realized,
        reference: REFERENCE_COUNT,
        gap: realized as i64 - REFERENCE_COUNT as i64,
        alternatives,
    }
}

fn count_dags(n: usize) -> usize {
    let mut count = 0;
    visit(n, &EnumerationRule::default(), |_, c| {
        if c.is_empty() {
            count += 1;
        }
    });
    count
}

/// Fixed measurement blocks shared by every candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub blocks: Vec<(String, Vec<String>)>,
}

impl Measurement {
    /// Reads `F =~ a + b + ...` lines; anything structural is rejected.
    pub fn parse(text: &str) -> Result<Self, SearchError> {
        let model = sem::parse_model(text).map_err(SearchError::Measurement)?;
        if !model.regressions.is_empty() || !model.latent_covariances.is_empty() {
            return Err(SearchError::MeasurementHasStructure);
        }
        Ok(Self::from_model(&model))
    }

    pub fn from_model(model: &sem::SemModel) -> Self {
        Self {
            blocks: model
                .factors
                .iter()
                .zip(&model.measurement)
                .map(|(f, items)| (f.clone(), items.iter().map(|&i| model.indicators[i].clone()).collect()))
                .collect(),
        }
    }

    pub fn factors(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.0.clone()).collect()
    }

    pub fn indicators(&self) -> Vec<String> {
        self.blocks.iter().flat_map(|b| b.1.iter().cloned()).collect()
    }

    pub fn dsl(&self) -> String {
        let mut out = String::new();
        for (f, items) in &self.blocks {
            let _ = writeln!(out, "{f} =~ {}", items.join(" + "));
        }
        out
    }

    /// Measurement plus every factor covariance: the all-covariance CFA.
    pub fn cfa_dsl(&self) -> String {
        let mut out = self.dsl();
        for (i, a) in self.blocks.iter().enumerate() {
            for b in &self.blocks[i + 1..] {
                let _ = writeln!(out, "{} ~~ {}", a.0, b.0);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub key: String,
    pub edges: Vec<String>,
    pub n_free: usize,
    pub df: i64,
    pub chi2: Option<f64>,
    pub cfi: Option<f64>,
    pub tli: Option<f64>,
    pub nfi: Option<f64>,
    pub rmsea: Option<f64>,
    pub rmsea_lower: Option<f64>,
    pub rmsea_upper: Option<f64>,
    pub srmr: Option<f64>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub invalid: Vec<String>,
    pub error: Option<String>,
    /// 1-based position in the ranking (ranked entries only).
    pub rank: Option<usize>,
    /// 1-based tier (ranked entries only).
    pub tier: Option<usize>,
}

impl SearchEntry {
    pub fn is_ranked(&self) -> bool {
        self.error.is_none() && self.converged && self.invalid.is_empty()
    }

    /// The four ranking indices rounded to 4 decimals, oriented so smaller
    /// is better.
    pub fn rank_key(&self) -> (i64, i64, i64, i64) {
        let r = |v: Option<f64>, worst: f64| (v.filter(|x| x.is_finite()).unwrap_or(worst) * 1e4).round() as i64;
        (
            r(self.srmr, 1e9),
            r(self.rmsea, 1e9),
            -r(self.cfi, -1e9),
            -r(self.tli, -1e9),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedProperties {
    /// Edges present in every tier member.
    pub present_in_all: Vec<String>,
    /// Possible edges (both directions and covariance per pair) absent from
    /// every member.
    pub absent_from_all: Vec<String>,
    /// Per sink: directed paths into it, per member key.
    pub paths_into_sink: BTreeMap<String, BTreeMap<String, Vec<Vec<String>>>>,
    /// Per sink: nodes with a directed path into it in every member.
    pub common_ancestors: BTreeMap<String, Vec<String>>,
}

/// What every member of `tier` has in common. `sinks` defaults to nodes
/// without outgoing directed edges in every member.
pub fn shared_properties(tier: &[&StructuralSkeleton], sinks: Option<&[String]>) -> SharedProperties {
    let Some(first) = tier.first() else {
        return SharedProperties {
            present_in_all: Vec::new(),
            absent_from_all: Vec::new(),
            paths_into_sink: BTreeMap::new(),
            common_ancestors: BTreeMap::new(),
        };
    };
    let nodes = &first.nodes;
    let n = nodes.len();
    let mut candidates = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                candidates.push(format!("{} -> {}", nodes[a], nodes[b]));
            }
            if a < b {
                candidates.push(format!("{} ~~ {}", nodes[a], nodes[b]));
            }
        }
    }
    let labels: Vec<BTreeSet<String>> = tier.iter().map(|s| s.edge_labels().into_iter().collect()).collect();
    let mut present_in_all: Vec<String> = candidates
        .iter()
        .filter(|e| labels.iter().all(|l| l.contains(*e)))
        .cloned()
        .collect();
    let mut absent_from_all: Vec<String> = candidates
        .iter()
        .filter(|e| labels.iter().all(|l| !l.contains(*e)))
        .cloned()
        .collect();
    present_in_all.sort();
    absent_from_all.sort();

    let sinks: Vec<String> = match sinks {
        Some(s) => s.to_vec(),
        None => (0..n)
            .filter(|&v| tier.iter().all(|s| s.directed.iter().all(|e| e.0 != v)))
            .map(|v| nodes[v].clone())
            .collect(),
    };
    let mut paths_into_sink = BTreeMap::new();
    let mut common_ancestors = BTreeMap::new();
    for sink in &sinks {
        let mut per_member = BTreeMap::new();
        let mut common: Option<BTreeSet<String>> = None;
        for s in tier {
            let Some(t) = s.index(sink) else { continue };
            let paths = s.paths_into(t);
            let anc: BTreeSet<String> = paths.iter().map(|p| s.nodes[p[0]].clone()).collect();
            common = Some(match common {
                None => anc,
                Some(c) => c.intersection(&anc).cloned().collect(),
            });
            per_member.insert(
                s.key.clone(),
                paths
                    .iter()
                    .map(|p| p.iter().map(|&i| s.nodes[i].clone()).collect())
                    .collect(),
            );
        }
        paths_into_sink.insert(sink.clone(), per_member);
        common_ancestors.insert(sink.clone(), common.unwrap_or_default().into_iter().collect());
    }
    SharedProperties {
        present_in_all,
        absent_from_all,
        paths_into_sink,
        common_ancestors,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub estimator: Estimator,
    pub fit: FitOptions,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    /// Sinks for the shared-property report (default: common sinks).
    pub sinks: Option<Vec<String>>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            estimator: Estimator::Ml,
            fit: FitOptions {
                residuals: false,
                standard_errors: false,
                ..FitOptions::default()
            },
            jobs: None,
            sinks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub measurement: Measurement,
    pub n_models: usize,
    pub n_ranked: usize,
    /// All entries sorted by key; ranked ones carry rank and tier.
    pub entries: Vec<SearchEntry>,
    /// Keys in rank order.
    pub ranking: Vec<String>,
    /// Keys per tier, best first.
    pub tiers: Vec<Vec<String>>,
    pub top_tier: Vec<StructuralSkeleton>,
    pub shared: SharedProperties,
    pub n_used: usize,
    pub n_total: usize,
}

impl SearchResult {
    pub fn entry(&self, key: &str) -> Option<&SearchEntry> {
        self.entries
            .binary_search_by(|e| e.key.as_str().cmp(key))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Text leaderboard of the first `top` ranked models.
    pub fn leaderboard(&self, top: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>4} {:>4} {:>6} {:>4} {:>12} {:>7} {:>7} {:>7} {:>7} {:>7}  edges",
            "rank", "tier", "params", "df", "chi2", "SRMR", "RMSEA", "CFI", "TLI", "NFI"
        );
        for key in self.ranking.iter().take(top) {
            let Some(e) = self.entry(key) else { continue };
            let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(
                out,
                "{:>4} {:>4} {:>6} {:>4} {:>12.3} {:>7} {:>7} {:>7} {:>7} {:>7}  {}",
                e.rank.unwrap_or(0),
                e.tier.unwrap_or(0),
                e.n_free,
                e.df,
                e.chi2.unwrap_or(f64::NAN),
                f(e.srmr),
                f(e.rmsea),
                f(e.cfi),
                f(e.tli),
                f(e.nfi),
                e.edges.join(", ")
            );
        }
        let _ = writeln!(out, "{} of {} models ranked", self.n_ranked, self.n_models);
        out
    }
}

fn fit_one(sk: &StructuralSkeleton, measurement: &Measurement, moments: &SampleMoments, opts: &SearchOptions) -> SearchEntry {
    let text = sk.to_dsl(measurement);
    let mut e = SearchEntry {
        key: sk.key.clone(),
        edges: sk.edge_labels(),
        n_free: 0,
        df: 0,
        chi2: None,
        cfi: None,
        tli: None,
        nfi: None,
        rmsea: None,
        rmsea_lower: None,
        rmsea_upper: None,
        srmr: None,
        aic: None,
        bic: None,
        converged: false,
        iterations: 0,
        invalid: Vec::new(),
        error: None,
        rank: None,
        tier: None,
    };
    let model = match sem::parse_model(&text) {
        Ok(m) => m,
        Err(err) => {
            e.error = Some(err.to_string());
            return e;
        }
    };
    e.n_free = model.n_free;
    e.df = model.df();
    match sem::fit(&model, moments, opts.estimator, &opts.fit) {
        Ok(f) => {
            e.chi2 = Some(f.chi2);
            e.cfi = Some(f.indices.cfi);
            e.tli = f.indices.tli;
            e.nfi = Some(f.indices.nfi);
            e.rmsea = f.indices.rmsea;
            e.rmsea_lower = f.indices.rmsea_lower;
            e.rmsea_upper = f.indices.rmsea_upper;
            e.srmr = Some(f.srmr);
            e.aic = f.aic;
            e.bic = f.bic;
            e.converged = f.convergence.converged;
            e.iterations = f.convergence.iterations;
            e.invalid = f.invalid;
            if !e.converged {
                log::info!("{}: not converged ({})", sk.key, f.convergence.message);
            }
        }
        Err(err) => {
            log::info!("{}: fit failed: {err}", sk.key);
            e.error = Some(err.to_string());
        }
    }
    e
}

/// Fits every skeleton (in parallel) and ranks the valid fits.
pub fn run_search(
    skeletons: &[StructuralSkeleton],
    measurement: &Measurement,
    moments: &SampleMoments,
    opts: &SearchOptions,
) -> Result<SearchResult, SearchError> {
    if skeletons.is_empty() {
        return Err(SearchError::Empty);
    }
    let factors = measurement.factors();
    if let Some(s) = skeletons.iter().find(|s| s.nodes != factors) {
        return Err(SearchError::NodeMismatch {
            skeleton: s.nodes.clone(),
            measurement: factors,
        });
    }
    // Restrict moments once so each fit does not copy the full data.
    let moments = moments
        .subset(&measurement.indicators())
        .map_err(SearchError::Measurement)?;
    let work = || -> Vec<SearchEntry> {
        skeletons
            .par_iter()
            .map(|s| fit_one(s, measurement, &moments, opts))
            .collect()
    };
    let mut entries = match opts.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| SearchError::Pool(e.to_string()))?
            .install(work),
        None => work(),
    };
    let by_key: BTreeMap<&str, &StructuralSkeleton> = skeletons.iter().map(|s| (s.key.as_str(), s)).collect();
    entries.sort_by(|a, b| a.key.cmp(&b.key));
    entries.dedup_by(|a, b| a.key == b.key);

    let mut ranked: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].is_ranked()).collect();
    if ranked.is_empty() {
        let first = entries
            .iter()
            .find_map(|e| {
                e.error
                    .clone()
                    .or_else(|| (!e.invalid.is_empty()).then(|| format!("{}: {}", e.key, e.invalid.join("; "))))
                    .or_else(|| (!e.converged).then(|| format!("{}: not converged", e.key)))
            })
            .unwrap_or_default();
        return Err(SearchError::AllFailed(entries.len(), first));
    }
    ranked.sort_by(|&a, &b| {
        entries[a]
            .rank_key()
            .cmp(&entries[b].rank_key())
            .then_with(|| entries[a].key.cmp(&entries[b].key))
    });
    let mut tiers: Vec<Vec<String>> = Vec::new();
    let mut last = None;
    for (pos, &i) in ranked.iter().enumerate() {
        let k = entries[i].rank_key();
        if last != Some(k) {
            tiers.push(Vec::new());
            last = Some(k);
        }
        entries[i].rank = Some(pos + 1);
        entries[i].tier = Some(tiers.len());
        tiers.last_mut().expect("tier pushed").push(entries[i].key.clone());
    }
    let ranking: Vec<String> = ranked.iter().map(|&i| entries[i].key.clone()).collect();
    let top_tier: Vec<StructuralSkeleton> = tiers[0].iter().filter_map(|k| by_key.get(k.as_str()).map(|s| (*s).clone())).collect();
    let refs: Vec<&StructuralSkeleton> = top_tier.iter().collect();
    let shared = shared_properties(&refs, opts.sinks.as_deref());
    Ok(SearchResult {
        measurement: measurement.clone(),
        n_models: entries.len(),
        n_ranked: ranked.len(),
        entries,
        ranking,
        tiers,
        top_tier,
        shared,
        n_used: moments.n_used,
        n_total: moments.n_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("MR{i}")).collect()
    }

    #[test]
    fn small_counts() {
        let r = EnumerationRule::default();
        assert_eq!(enumerate_structures(&names(1), &r).unwrap().len(), 1);
        assert_eq!(enumerate_structures(&names(2), &r).unwrap().len(), 4);
        assert!(enumerate_structures(&names(7), &r).is_err());
    }

    /// Brute force over all 4^pairs assignments with an explicit cycle check.
    fn brute(n: usize, rule: &EnumerationRule) -> BTreeSet<String> {
        let nodes = names(n);
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let mut out = BTreeSet::new();
        for code in 0..4usize.pow(pairs.len() as u32) {
            let mut c = code;
            let (mut d, mut cv) = (Vec::new(), Vec::new());
            for &(a, b) in &pairs {
                match c % 4 {
                    1 => cv.push((a, b)),
                    2 => d.push((a, b)),
                    3 => d.push((b, a)),
                    _ => {}
                }
                c /= 4;
            }
            if !sem::model::is_acyclic(n, &d) {
                continue;
            }
            if rule.kind == RuleKind::ExogenousCovariancesOnly
                && cv.iter().any(|&(a, b)| d.iter().any(|e| e.1 == a || e.1 == b))
            {
                continue;
            }
            let edges = d.len() + cv.len();
            if rule.max_edges.is_some_and(|h| edges > h) || rule.min_edges.is_some_and(|l| edges < l) {
                continue;
            }
            out.insert(canonical_key(&nodes, &d, &cv));
        }
        out
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for rule in [
            EnumerationRule::default(),
            EnumerationRule {
                kind: RuleKind::ExogenousCovariancesOnly,
                ..Default::default()
            },
            EnumerationRule {
                min_edges: Some(5),
                max_edges: Some(5),
                ..Default::default()
            },
        ] {
            let got: BTreeSet<String> = enumerate_structures(&names(4), &rule)
                .unwrap()
                .into_iter()
                .map(|s| s.key)
                .collect();
            assert_eq!(got, brute(4, &rule));
            assert_eq!(count_structures(4, &rule), got.len());
        }
    }

    #[test]
    fn shared_properties_single_member() {
        let s = StructuralSkeleton::new(names(3), vec![(0, 1), (1, 2)], vec![]);
        let p = shared_properties(&[&s], None);
        assert_eq!(p.present_in_all, s.edge_labels());
        assert_eq!(p.common_ancestors["MR3"], vec!["MR1".to_string(), "MR2".to_string()]);
        assert!(p.absent_from_all.contains(&"MR3 -> MR1".to_string()));
        assert!(s.has_path("MR1", "MR3"));
        assert!(!s.has_path("MR3", "MR1"));
    }

    #[test]
    fn dsl_export_reparses() {
        let m = Measurement::parse("MR1 =~ a + b + c\nMR2 =~ d + e + f\nMR3 =~ g + h + i").unwrap();
        let s = StructuralSkeleton::new(m.factors(), vec![(0, 2), (1, 2)], vec![(0, 1)]);
        let model = sem::parse_model(&s.to_dsl(&m)).unwrap();
        assert_eq!(model.regressions.len(), 2);
        assert_eq!(model.latent_covariances.len(), 1);
        assert!(Measurement::parse("MR1 =~ a + b\nMR2 =~ c + d\nMR1 ~~ MR2").is_err());
    }
}
