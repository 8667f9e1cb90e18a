//! Acceptance criteria. Every test writes one `criterion N: PASS|FAIL|SKIP`
//! line to stderr (uncaptured) and then asserts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, Normal};

use latvar::correlation::{polychoric, CorrelationConfig, MethodChoice};
use latvar::efa::bootstrap::align;
use latvar::efa::{fit_efa, prune_items, EfaOptions, PruneCriteria, PruneOptions};
use latvar::fitindex::{fit_indices, srmr};
use latvar::ingest::{load_dataset, recode, to_numeric, RowFilter, Schema};
use latvar::pipeline::{self, PipelineConfig};
use latvar::reliability::{ave, cronbach, omega, CronbachOptions};
use latvar::search::{enumerate_structures, run_search, EnumerationRule, Measurement, RuleKind, SearchOptions};
use latvar::sem::{self, ml_objective, FitOptions, Identification, SampleMoments, SemModel};
use latvar::synth::{generate, reference_four_factor, write_generated, GeneratorSpec, StructuralSpec};
use latvar::NumericMatrix;

const CFA4: &str = include_str!("../../../models/cfa4.txt");
const SEM5: &str = include_str!("../../../models/sem_five_edges.txt");

fn verdict(n: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {tag} - {detail}");
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Pattern and Φ differences after matching factor order and signs to the
/// target. Rows are matched by item name.
fn aligned_errors(
    target_items: &[String],
    target_lambda: &DMatrix<f64>,
    target_phi: &DMatrix<f64>,
    sol: &latvar::EfaSolution,
) -> Option<(f64, f64)> {
    if sol.n_factors() != target_lambda.ncols() {
        return None;
    }
    let rows: Vec<usize> = target_items
        .iter()
        .map(|v| sol.variables.iter().position(|s| s == v))
        .collect::<Option<_>>()?;
    let est = DMatrix::from_fn(rows.len(), sol.n_factors(), |i, k| sol.pattern[(rows[i], k)]);
    let map = align(target_lambda, &est);
    let mut max_l: f64 = 0.0;
    for i in 0..rows.len() {
        for (j, &(k, s)) in map.iter().enumerate() {
            max_l = max_l.max((s * est[(i, k)] - target_lambda[(i, j)]).abs());
        }
    }
    let mut max_phi: f64 = 0.0;
    for (a, &(ka, sa)) in map.iter().enumerate() {
        for (b, &(kb, sb)) in map.iter().enumerate() {
            max_phi = max_phi.max((sa * sb * sol.phi[(ka, kb)] - target_phi[(a, b)]).abs());
        }
    }
    Some((max_l, max_phi))
}

// ------------------------------------------------------------------ 1

#[test]
fn criterion_1_synthetic_recovery() {
    let spec = reference_four_factor(20_000, 2024);
    let x = to_numeric(&generate(&spec).unwrap());
    let opts = PruneOptions {
        correlation: CorrelationConfig {
            method: MethodChoice::Mixed,
            polychoric_max_levels: 11,
        },
        ..PruneOptions::default()
    };
    let t = Instant::now();
    let res = prune_items(&x, &PruneCriteria::default(), &opts).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let suggested = res.trace[0].suggested;
    let errs = aligned_errors(&spec.items, &spec.lambda, &spec.phi, &res.solution);
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let budget = 120.0;
    let pass = suggested == 4
        && res.retained.len() == 13
        && errs.is_some_and(|(l, p)| l <= 0.05 && p <= 0.05)
        && secs < budget;
    // Recovery on the full item set, reported for diagnosis only.
    let full = {
        let r = opts.correlation.estimate(&x).unwrap();
        let sol = fit_efa(&r, 4, x.n_rows, &EfaOptions::default()).unwrap();
        aligned_errors(&spec.items, &spec.lambda, &spec.phi, &sol)
    };
    let removed: Vec<String> = res.removed.iter().map(|r| format!("{} ({:?})", r.variable, r.rule)).collect();
    verdict(
        1,
        pass,
        &format!(
            "parallel analysis suggests {suggested}; retained {}/13 (removed: {}); max |dλ| {} max |dΦ| {}; unpruned 13-item solution max |dλ| {} max |dΦ| {}; {secs:.1}s on {cores} core(s), budget {budget:.0}s",
            res.retained.len(),
            if removed.is_empty() { "none".into() } else { removed.join(", ") },
            errs.map_or("n/a".into(), |e| format!("{:.4}", e.0)),
            errs.map_or("n/a".into(), |e| format!("{:.4}", e.1)),
            full.map_or("n/a".into(), |e| format!("{:.4}", e.0)),
            full.map_or("n/a".into(), |e| format!("{:.4}", e.1)),
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 2

#[test]
fn criterion_2_closed_form_reliability() {
    // Centered, mutually orthogonal columns of equal norm; pairwise sums of
    // them correlate exactly 0.5.
    let a = [1.0, -1.0, 1.0, -1.0];
    let b = [1.0, 1.0, -1.0, -1.0];
    let c = [1.0, -1.0, -1.0, 1.0];
    let add = |u: &[f64; 4], v: &[f64; 4]| -> Vec<f64> { u.iter().zip(v).map(|(p, q)| p + q).collect() };
    let x = NumericMatrix::new(
        vec!["I1".into(), "I2".into(), "I3".into()],
        vec![add(&a, &b), add(&b, &c), add(&c, &a)],
        vec![None; 3],
    );
    let alpha = cronbach(&x, &CronbachOptions { n_boot: 10, seed: 1 }).unwrap();
    let ave_v = ave(&[0.6, 0.8]);
    let theta = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.36, 0.36]));
    let om = omega(&[0.8, 0.8], &theta, None, None).unwrap();
    let expected_omega = 2.56 / 3.28;
    let pass = close(alpha.std_alpha, 0.75, 1e-10)
        && close(ave_v, 0.5, 1e-12)
        && close(om.omega1, expected_omega, 1e-5)
        && close(om.omega1, 0.78049, 1e-5);
    verdict(
        2,
        pass,
        &format!(
            "std alpha {:.12}, AVE {:.12}, omega {:.6}",
            alpha.std_alpha, ave_v, om.omega1
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 3

#[derive(Deserialize)]
struct FitCase {
    chi2_m: f64,
    df_m: f64,
    chi2_b: f64,
    df_b: f64,
    n: f64,
    s: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    cfi: f64,
    tli: Option<f64>,
    nfi: f64,
    rmsea: Option<f64>,
    rmsea_lower: Option<f64>,
    rmsea_upper: Option<f64>,
    srmr: f64,
}

#[test]
fn criterion_3_fit_index_oracle() {
    let text = include_str!("fixtures/fit_indices.json");
    let cases: Vec<FitCase> = serde_json::from_str(text).unwrap();
    let rows = |m: &[Vec<f64>]| DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j]);
    let opt_close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => close(x, y, 1e-8),
        (None, None) => true,
        _ => false,
    };
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut boundary = 0;
    for c in &cases {
        let f = fit_indices(c.chi2_m, c.df_m, c.chi2_b, c.df_b, c.n);
        let s = srmr(&rows(&c.s), &rows(&c.sigma)).unwrap();
        let ok = close(f.cfi, c.cfi, 1e-8)
            && opt_close(f.tli, c.tli)
            && close(f.nfi, c.nfi, 1e-8)
            && opt_close(f.rmsea, c.rmsea)
            && opt_close(f.rmsea_lower, c.rmsea_lower)
            && opt_close(f.rmsea_upper, c.rmsea_upper)
            && close(s, c.srmr, 1e-8);
        for (a, b) in [
            (Some(f.cfi), Some(c.cfi)),
            (f.tli, c.tli),
            (Some(f.nfi), Some(c.nfi)),
            (f.rmsea, c.rmsea),
            (f.rmsea_lower, c.rmsea_lower),
            (f.rmsea_upper, c.rmsea_upper),
            (Some(s), Some(c.srmr)),
        ] {
            if let (Some(a), Some(b)) = (a, b) {
                worst = worst.max((a - b).abs());
            }
        }
        if !ok {
            failures += 1;
        }
        if c.chi2_m == c.df_m {
            boundary += 1;
            if f.rmsea != Some(0.0) || f.cfi != 1.0 {
                failures += 1;
            }
        }
    }
    let direct = fit_indices(40.0, 40.0, 900.0, 45.0, 500.0);
    let pass = failures == 0 && boundary > 0 && direct.rmsea == Some(0.0) && direct.cfi == 1.0;
    verdict(
        3,
        pass,
        &format!(
            "{} instances, {failures} mismatches, max |diff| {worst:.2e}, {boundary} chi2 = df boundary cases",
            cases.len()
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 4

fn continuous_reference(n: usize, seed: u64) -> NumericMatrix {
    let mut spec = reference_four_factor(n, seed);
    spec.thresholds = None;
    to_numeric(&generate(&spec).unwrap())
}

#[test]
fn criterion_4_gradient_and_nesting() {
    let x = continuous_reference(2000, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_rel: f64 = 0.0;
    let mut points = 0;
    for text in [CFA4, SEM5] {
        let model = SemModel::parse(text, Identification::Marker).unwrap();
        let m = SampleMoments::from_data(&x, &model.indicators).unwrap();
        let log_det = latvar::linalg::spd_log_det(&m.cov).unwrap();
        let start = model.start_values(&m.cov);
        let mut done = 0;
        while done < 50 {
            let theta: Vec<f64> = start
                .iter()
                .map(|v| v * rng.random_range(0.6..1.4) + rng.random_range(-0.1..0.1))
                .collect();
            let Some((_, g)) = ml_objective(&model, &m.cov, log_det, &theta) else {
                continue;
            };
            let mut fd = vec![0.0; theta.len()];
            let mut ok = true;
            for k in 0..theta.len() {
                let h = 1e-5 * theta[k].abs().max(1.0);
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                match (
                    ml_objective(&model, &m.cov, log_det, &tp),
                    ml_objective(&model, &m.cov, log_det, &tm),
                ) {
                    (Some((fp, _)), Some((fm, _))) => fd[k] = (fp - fm) / (2.0 * h),
                    _ => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
            let err = g.iter().zip(&fd).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            worst_rel = worst_rel.max(err / scale);
            done += 1;
            points += 1;
        }
    }

    // Nested pairs: the all-covariance CFA against copies with one or two
    // factor covariances removed.
    let free_model = SemModel::parse(CFA4, Identification::Marker).unwrap();
    let opts = FitOptions {
        residuals: false,
        standard_errors: false,
        ..FitOptions::default()
    };
    let free = sem::fit_ml(&free_model, &x, &opts).unwrap();
    let measurement = Measurement::from_model(&free_model);
    let f = measurement.factors();
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|a| (a + 1..4).map(move |b| (a, b))).collect();
    let mut drops: Vec<Vec<usize>> = (0..6).map(|i| vec![i]).collect();
    for i in 0..6 {
        for j in i + 1..6 {
            drops.push(vec![i, j]);
        }
    }
    drops.truncate(20);
    let mut worst_gap = f64::INFINITY;
    let mut all_converged = free.convergence.converged;
    for d in &drops {
        let mut text = measurement.dsl();
        for (k, &(a, b)) in pairs.iter().enumerate() {
            if !d.contains(&k) {
                text.push_str(&format!("{} ~~ {}\n", f[a], f[b]));
            }
        }
        let restricted = SemModel::parse(&text, Identification::Marker).unwrap();
        assert_eq!(restricted.n_free + d.len(), free_model.n_free);
        let r = sem::fit_ml(&restricted, &x, &opts).unwrap();
        all_converged &= r.convergence.converged;
        worst_gap = worst_gap.min(r.chi2 - free.chi2);
    }
    let pass = points == 100 && worst_rel <= 1e-5 && worst_gap >= -1e-4 && all_converged;
    verdict(
        4,
        pass,
        &format!(
            "max relative gradient error {worst_rel:.2e} over {points} points; min restricted - free chi2 {worst_gap:.3e} over {} nested pairs",
            drops.len()
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 5

#[test]
fn criterion_5_df_bookkeeping() {
    let cfa = SemModel::parse(CFA4, Identification::Marker).unwrap();
    let best = SemModel::parse(SEM5, Identification::Marker).unwrap();
    let pass = cfa.n_free == 32 && cfa.df() == 59 && best.n_free == 31 && best.df() == 60;
    verdict(
        5,
        pass,
        &format!(
            "CFA {} free / df {}; five-edge structural model {} free / df {}",
            cfa.n_free,
            cfa.df(),
            best.n_free,
            best.df()
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 6

#[test]
fn criterion_6_polychoric_accuracy() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let q: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|&p| normal.inverse_cdf(p)).collect();
    let cut = |z: f64| 1.0 + q.iter().filter(|&&t| z > t).count() as f64;
    let mut worst_rho: f64 = 0.0;
    let mut worst_tau: f64 = 0.0;
    let mut details = Vec::new();
    for (i, &rho) in [-0.7, 0.0, 0.5].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + i as u64);
        let n = 100_000;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let b = rho * a + (1.0f64 - rho * rho).sqrt() * e;
            x.push(cut(a));
            y.push(cut(b));
        }
        let p = polychoric(&x, &y).unwrap();
        worst_rho = worst_rho.max((p.rho - rho).abs());
        for (t, g) in p.thresholds_x.iter().chain(&p.thresholds_y).zip(q.iter().chain(&q)) {
            worst_tau = worst_tau.max((t - g).abs());
        }
        details.push(format!("rho {rho:+.1} -> {:+.4}", p.rho));
    }
    let pass = worst_rho <= 0.02 && worst_tau <= 0.01;
    verdict(
        6,
        pass,
        &format!(
            "{}; max |drho| {worst_rho:.4}, max |dtau| {worst_tau:.4}",
            details.join(", ")
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 7

const MEASUREMENT: &str = "MR1 =~ V30 + V31 + V32 + V33\nMR2 =~ V46 + V47 + V48\nMR3 =~ V28 + V29 + V51\nMR4 =~ V49 + V50 + ATTEND\n";
const GENERATOR_KEY: &str = "MR1>MR2,MR1>MR3,MR4>MR1,MR4>MR3|MR2~MR4";

/// Reference loadings reduced to their primary column (simple structure),
/// continuous scores, and a five-edge structural model among the factors.
fn structural_generator(n: usize, seed: u64) -> GeneratorSpec {
    let mut spec = reference_four_factor(n, seed);
    spec.thresholds = None;
    for i in 0..spec.lambda.nrows() {
        let k = spec.lambda.row(i).transpose().iamax();
        for j in 0..spec.lambda.ncols() {
            if j != k {
                spec.lambda[(i, j)] = 0.0;
            }
        }
    }
    spec.structural = Some(StructuralSpec {
        regressions: vec![
            ("MR4".into(), "MR1".into(), 0.5),
            ("MR4".into(), "MR3".into(), 0.4),
            ("MR1".into(), "MR3".into(), 0.3),
            ("MR1".into(), "MR2".into(), 0.3),
        ],
        covariances: vec![("MR2".into(), "MR4".into(), 0.4)],
    });
    spec
}

fn has_cycle(n: usize, edges: &[(usize, usize)]) -> bool {
    fn dfs(u: usize, adj: &[Vec<usize>], state: &mut [u8]) -> bool {
        state[u] = 1;
        for &v in &adj[u] {
            if state[v] == 1 || (state[v] == 0 && dfs(v, adj, state)) {
                return true;
            }
        }
        state[u] = 2;
        false
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    let mut state = vec![0u8; n];
    (0..n).any(|u| state[u] == 0 && dfs(u, &adj, &mut state))
}

#[test]
fn criterion_7_search_behavior() {
    // Enumeration: no cycles, no duplicate keys, under every rule.
    let names: Vec<String> = ["MR1", "MR2", "MR3", "MR4"].iter().map(|s| s.to_string()).collect();
    let mut enum_ok = true;
    let mut enumerated = 0;
    for n in 1..=4 {
        for kind in [RuleKind::Mixed, RuleKind::ExogenousCovariancesOnly] {
            let rule = EnumerationRule {
                kind,
                ..EnumerationRule::default()
            };
            let all = enumerate_structures(&names[..n], &rule).unwrap();
            let mut keys = HashSet::new();
            for sk in &all {
                enum_ok &= !has_cycle(sk.nodes.len(), &sk.directed);
                enum_ok &= keys.insert(sk.key.clone());
            }
            enumerated += all.len();
        }
    }

    let measurement = Measurement::parse(MEASUREMENT).unwrap();
    let rule = EnumerationRule {
        min_edges: Some(5),
        max_edges: Some(5),
        ..EnumerationRule::default()
    };
    let skeletons = enumerate_structures(&measurement.factors(), &rule).unwrap();
    assert!(skeletons.iter().any(|s| s.key == GENERATOR_KEY));
    let opts = SearchOptions::default();

    // Saturated skeletons against the all-covariance CFA on one data set.
    let x0 = to_numeric(&generate(&structural_generator(20_000, 0)).unwrap());
    let m0 = SampleMoments::from_data(&x0, &measurement.indicators()).unwrap();
    let cfa = sem::fit(
        &sem::parse_model(&measurement.cfa_dsl()).unwrap(),
        &m0,
        sem::Estimator::Ml,
        &opts.fit,
    )
    .unwrap();
    let saturated = enumerate_structures(
        &measurement.factors(),
        &EnumerationRule {
            min_edges: Some(6),
            ..EnumerationRule::default()
        },
    )
    .unwrap();
    let sat = run_search(&saturated, &measurement, &m0, &opts).unwrap();
    let sat_gap = sat
        .entries
        .iter()
        .map(|e| e.chi2.map_or(f64::INFINITY, |c| (c - cfa.chi2).abs()))
        .fold(0.0f64, f64::max);

    let seeds = 100;
    let mut hits = 0;
    let mut tier_sizes = BTreeMap::new();
    for seed in 0..seeds {
        let x = if seed == 0 {
            x0.clone()
        } else {
            to_numeric(&generate(&structural_generator(20_000, seed)).unwrap())
        };
        let m = SampleMoments::from_data(&x, &measurement.indicators()).unwrap();
        let res = run_search(&skeletons, &measurement, &m, &opts).unwrap();
        if res.tiers.first().is_some_and(|t| t.iter().any(|k| k == GENERATOR_KEY)) {
            hits += 1;
        }
        *tier_sizes.entry(res.tiers.first().map_or(0, Vec::len)).or_insert(0) += 1;
    }
    let pass = enum_ok && hits >= 95 && sat_gap <= 1e-4;
    verdict(
        7,
        pass,
        &format!(
            "generator class in top tier for {hits}/{seeds} seeds (top-tier sizes {tier_sizes:?}); {enumerated} enumerated structures acyclic and unique: {enum_ok}; {} saturated structures, max |chi2 - CFA chi2| {sat_gap:.2e}",
            saturated.len()
        ),
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 8

#[test]
fn criterion_8_issp_reproduction() {
    let Some(data) = std::env::var_os("LATVAR_ISSP_DATA").map(PathBuf::from) else {
        let _ = writeln!(
            std::io::stderr(),
            "criterion 8: SKIP - set LATVAR_ISSP_DATA to a ZA5070 export (CSV/TSV with a YEAR column)"
        );
        return;
    };
    let schema_path = std::env::var_os("LATVAR_ISSP_SCHEMA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/issp_schema.toml"));
    let schema = Schema::load(&schema_path).unwrap();
    let load = |years: &[i64]| {
        let d = load_dataset(&data, &schema, &RowFilter::column_in("YEAR", years.iter().copied())).unwrap();
        to_numeric(&recode(&d).unwrap())
    };
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        if !ok {
            fails.push(format!("{name}: {detail}"));
        }
    };

    // EFA on the first two waves.
    let x_efa = load(&[1991, 1998]);
    let opts = PruneOptions {
        correlation: CorrelationConfig {
            method: MethodChoice::Pearson,
            polychoric_max_levels: 6,
        },
        ..PruneOptions::default()
    };
    let res = prune_items(&x_efa, &PruneCriteria::default(), &opts).unwrap();
    let table = reference_four_factor(1, 1);
    match aligned_errors(&table.items, &table.lambda, &table.phi, &res.solution) {
        Some((l, p)) => {
            check("loadings", l <= 0.02, format!("max |dλ| {l:.3}"));
            check("factor correlations", p <= 0.01, format!("max |dΦ| {p:.3}"));
        }
        None => check("factor structure", false, format!("{} factors retained", res.solution.n_factors())),
    }
    let rmsea = res.solution.fit.as_ref().and_then(|f| f.rmsea).unwrap_or(f64::NAN);
    check("EFA RMSEA", close(rmsea, 0.034, 0.002), format!("{rmsea:.4}"));
    let blocks = pipeline::measurement_from_efa(&res.solution, 0.32);
    let rel = pipeline::reliability_stage(&x_efa, &blocks, 50, 1).unwrap();
    // (first item, raw α, std α) for the four retained factors.
    let expected = [("V30", 0.90, 0.90), ("V46", 0.87, 0.87), ("V28", 0.89, 0.90), ("V49", 0.75, 0.81)];
    for (item, raw, std) in expected {
        let found = blocks
            .blocks
            .iter()
            .position(|b| b.1.iter().any(|i| i == item))
            .map(|k| &rel[k].cronbach);
        match found {
            Some(c) => check(
                "alpha",
                close(c.raw_alpha, raw, 0.01) && close(c.std_alpha, std, 0.01),
                format!("factor with {item}: raw {:.3} std {:.3}", c.raw_alpha, c.std_alpha),
            ),
            None => check("alpha", false, format!("no factor holds {item}")),
        }
    }

    // DWLS CFA and the ML search on the last wave.
    let x_cfa = load(&[2008]);
    let cfa_model = SemModel::parse(CFA4, Identification::Marker).unwrap();
    let cfa = sem::fit_dwls(&cfa_model, &x_cfa, &FitOptions::default()).unwrap();
    let tli = cfa.indices.tli.unwrap_or(f64::NAN);
    check("CFA CFI", close(cfa.indices.cfi, 0.997, 0.005), format!("{:.4}", cfa.indices.cfi));
    check("CFA TLI", close(tli, 0.997, 0.005), format!("{tli:.4}"));
    check("CFA n_used", cfa.n_used == 23636, format!("{}", cfa.n_used));

    let measurement = Measurement::parse(MEASUREMENT).unwrap();
    let rule = EnumerationRule {
        max_edges: Some(5),
        ..EnumerationRule::default()
    };
    let skeletons = enumerate_structures(&measurement.factors(), &rule).unwrap();
    let m = SampleMoments::from_data(&x_cfa, &measurement.indicators()).unwrap();
    let search = run_search(&skeletons, &measurement, &m, &SearchOptions::default()).unwrap();
    let top = search.tiers.first().cloned().unwrap_or_default();
    check("top tier size", top.len() == 4, format!("{}", top.len()));
    if let Some(e) = top.first().and_then(|k| search.entry(k)) {
        for (name, v, target) in [
            ("SRMR", e.srmr, 0.0344),
            ("RMSEA", e.rmsea, 0.0735),
            ("CFI", e.cfi, 0.9675),
            ("TLI", e.tli, 0.9575),
        ] {
            let v = v.unwrap_or(f64::NAN);
            check(name, close(v, target, 0.005), format!("{v:.4}"));
        }
    }
    let members: Vec<_> = search.top_tier.iter().collect();
    let no_31 = members.iter().all(|s| !s.has_directed("MR3", "MR1"));
    let path_43 = members.iter().all(|s| s.has_path("MR4", "MR3"));
    check("no MR3 -> MR1", no_31, String::new());
    check("path MR4 -> MR3", path_43, String::new());

    let pass = fails.is_empty();
    verdict(
        8,
        pass,
        &if pass {
            "all ISSP targets reproduced".to_string()
        } else {
            fails.join("; ")
        },
    );
    assert!(pass);
}

// ------------------------------------------------------------------ 9

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_9_pipeline_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = reference_four_factor(3000, 99);
    spec.waves = Some(("YEAR".into(), vec![1991, 1998, 2008]));
    spec.missing_rate = 0.02;
    write_generated(&tmp.path().join("synthetic"), &spec, &generate(&spec).unwrap()).unwrap();
    let config = |out: &str| {
        format!(
            r#"
            data = "synthetic/data.csv"
            schema = "synthetic/schema.toml"
            output_dir = "{out}"
            seed = 5
            [waves]
            column = "YEAR"
            efa = [1991, 1998]
            confirm = [2008]
            [efa]
            bootstrap = 10
            parallel_resamples = 20
            [reliability]
            n_boot = 20
            [cfa]
            bootstrap = 10
            [search]
            rule = {{ kind = "mixed", max_edges = 2 }}
            "#
        )
    };
    let run = |out: &str| {
        let cfg = PipelineConfig::from_toml_str(&config(out), tmp.path()).unwrap();
        let outcome = pipeline::run_pipeline(&cfg).unwrap();
        (outcome, snapshot(&tmp.path().join(out)))
    };
    let (o1, a) = run("run1");
    let (o2, b) = run("run2");
    let files: BTreeSet<&PathBuf> = a.keys().collect();
    let differing: Vec<String> = a
        .iter()
        .filter(|(k, v)| b.get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let complete = ["ingest", "correlation", "efa", "reliability", "cfa", "search"]
        .iter()
        .all(|s| a.contains_key(&PathBuf::from(s).join("report.json")));
    let pass = o1 == o2 && a.len() == b.len() && differing.is_empty() && complete;
    verdict(
        9,
        pass,
        &format!(
            "{} JSON reports compared, {} differ, all stages written: {complete}",
            files.len(),
            differing.len()
        ),
    );
    assert!(pass);
}
