//! Plain-text tables rendered from the JSON report types.

use std::fmt::Write as _;

use crate::correlation::CorrelationEstimate;
use crate::efa::{EfaSolution, PruneResult};
use crate::pipeline::{CfaReport, Check, IngestReport, PipelineOutcome, SearchReport};
use crate::reliability::ReliabilityReport;
use crate::sem::SemFit;

fn opt(v: Option<f64>, dp: usize) -> String {
    v.filter(|x| x.is_finite())
        .map_or_else(|| "-".to_string(), |x| format!("{x:.dp$}"))
}

fn rule(out: &mut String, title: &str) {
    let _ = writeln!(out, "\n== {title} ==");
}

pub fn render_ingest(r: &IngestReport) -> String {
    let mut out = String::new();
    rule(&mut out, "data");
    for (name, s) in [("EFA", &r.efa), ("CFA/SEM", &r.confirm)] {
        let _ = writeln!(
            out,
            "{name:<8} {} of {} rows ({}), {} variables",
            s.rows,
            s.source_rows,
            s.filter,
            s.variables.len()
        );
    }
    if r.schema_inferred {
        let _ = writeln!(out, "schema inferred from the data");
    }
    out
}

pub fn render_correlation(c: &CorrelationEstimate) -> String {
    let mut out = String::new();
    rule(&mut out, "correlations");
    let counts: Vec<String> = c
        .method_counts()
        .iter()
        .map(|(m, n)| format!("{m:?}: {n}").to_lowercase())
        .collect();
    let _ = writeln!(
        out,
        "{} variables; cells by method {}; smallest pairwise n {}; min eigenvalue {:.4}{}",
        c.p(),
        counts.join(", "),
        c.min_pair_n(),
        c.min_eigenvalue,
        if c.psd_repaired { " (repaired)" } else { "" }
    );
    if !c.missing.is_empty() {
        let _ = writeln!(out, "{} undefined cells", c.missing.len());
    }
    out
}

/// Pattern matrix with h2/u2/complexity, then factor correlations.
pub fn render_efa_solution(s: &EfaSolution) -> String {
    let mut out = String::new();
    let m = s.n_factors();
    let _ = write!(out, "{:<10}", "item");
    for f in &s.factors {
        let _ = write!(out, " {f:>7}");
    }
    let _ = writeln!(out, " {:>6} {:>6} {:>5}", "h2", "u2", "com");
    for (i, v) in s.variables.iter().enumerate() {
        let _ = write!(out, "{v:<10}");
        for k in 0..m {
            let _ = write!(out, " {:>7.2}", s.pattern[(i, k)]);
        }
        let _ = writeln!(
            out,
            " {:>6.2} {:>6.2} {:>5}",
            s.h2[i],
            s.u2[i],
            opt(s.complexity[i], 1)
        );
    }
    let _ = writeln!(out, "\nfactor correlations");
    for a in 0..m {
        let _ = write!(out, "{:<10}", s.factors[a]);
        for b in 0..m {
            match &s.ci {
                Some(ci) if a != b => {
                    let iv = ci.phi[a][b];
                    let _ = write!(out, " {:>5.2} [{:.2}, {:.2}]", s.phi[(a, b)], iv.lower, iv.upper);
                }
                _ => {
                    let _ = write!(out, " {:>5.2}", s.phi[(a, b)]);
                }
            }
        }
        let _ = writeln!(out);
    }
    if let Some(ci) = &s.ci {
        let _ = writeln!(
            out,
            "{:.0}% intervals from {} bootstrap replicates ({} failed)",
            100.0 * ci.confidence,
            ci.n_boot,
            ci.n_failed
        );
    }
    if let Some(f) = &s.fit {
        let mean_com = {
            let v: Vec<f64> = s.complexity.iter().flatten().copied().collect();
            v.iter().sum::<f64>() / v.len().max(1) as f64
        };
        let _ = writeln!(
            out,
            "mean item complexity {:.1}; TLI {}; RMSEA {} ({}; {}); BIC {}",
            mean_com,
            opt(f.tli, 3),
            opt(f.rmsea, 3),
            opt(f.rmsea_lower, 3),
            opt(f.rmsea_upper, 3),
            opt(f.bic, 2)
        );
    }
    out
}

pub fn render_prune(p: &PruneResult) -> String {
    let mut out = String::new();
    rule(&mut out, "exploratory factor analysis");
    for step in &p.trace {
        let removed: Vec<String> = step
            .removals
            .iter()
            .map(|r| format!("{} ({:?} {:.3})", r.variable, r.rule, r.value))
            .collect();
        let _ = writeln!(
            out,
            "iteration {}: {} items, suggested {}, chosen {}, stage {}: {}",
            step.iteration,
            step.variables.len(),
            step.suggested,
            step.chosen,
            step.stage,
            if removed.is_empty() { "no removals".to_string() } else { removed.join(", ") }
        );
    }
    let _ = writeln!(out, "retained {} items\n", p.retained.len());
    out.push_str(&render_efa_solution(&p.solution));
    out
}

/// Columns: raw α, std α, λ6, average r, S/N, ase, scale mean, scale sd.
pub fn render_reliability(rows: &[ReliabilityReport]) -> String {
    let mut out = String::new();
    rule(&mut out, "reliability");
    let _ = writeln!(
        out,
        "{:<8} {:>6} {:>6} {:>6} {:>9} {:>6} {:>6} {:>7} {:>6}",
        "factor", "raw_a", "std_a", "G6", "average_r", "S/N", "ase", "mean", "sd"
    );
    for r in rows {
        let c = &r.cronbach;
        let _ = writeln!(
            out,
            "{:<8} {:>6.2} {:>6.2} {:>6} {:>9.2} {:>6.2} {:>6.3} {:>7.2} {:>6.2}",
            r.factor,
            c.raw_alpha,
            c.std_alpha,
            opt(r.lambda6, 2),
            c.average_r,
            c.s_n,
            c.ase,
            c.scale_mean,
            c.scale_sd
        );
    }
    out
}

pub fn render_sem_fit(f: &SemFit) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:?} estimation, {} of {} observations; {}",
        f.estimator,
        f.n_used,
        f.n_total,
        if f.convergence.converged {
            format!("converged in {} iterations", f.convergence.iterations)
        } else {
            format!("NOT converged: {}", f.convergence.message)
        }
    );
    let ix = &f.indices;
    let _ = writeln!(
        out,
        "chi2 {:.3} on {} df (baseline {:.3} on {}); CFI {:.3} TLI {} NFI {:.3}",
        f.chi2,
        f.df,
        f.chi2_baseline,
        f.df_baseline,
        ix.cfi,
        opt(ix.tli, 3),
        ix.nfi
    );
    let _ = writeln!(
        out,
        "RMSEA {} [{}, {}]  SRMR {:.4}  AIC {}  BIC {}",
        opt(ix.rmsea, 4),
        opt(ix.rmsea_lower, 4),
        opt(ix.rmsea_upper, 4),
        f.srmr,
        opt(f.aic, 3),
        opt(f.bic, 3)
    );
    let _ = writeln!(
        out,
        "\n{:<8} {:<3} {:<8} {:>9} {:>8} {:>8} {:>7}",
        "lhs", "op", "rhs", "est", "se", "z", "std"
    );
    for p in &f.params {
        let _ = writeln!(
            out,
            "{:<8} {:<3} {:<8} {:>9.3} {:>8} {:>8} {:>7.3}{}",
            p.lhs,
            p.op.symbol(),
            p.rhs,
            p.est,
            opt(p.se, 3),
            opt(p.z, 2),
            p.std,
            if p.free { "" } else { "  (fixed)" }
        );
    }
    if let Some(r) = &f.residuals {
        let _ = writeln!(
            out,
            "\nmax |standardized residual| {:.3} at {}~{} ({} {:.2})",
            r.max_abs,
            r.max_pair.0,
            r.max_pair.1,
            if r.pass { "below" } else { "ABOVE" },
            r.threshold
        );
    }
    for s in &f.invalid {
        let _ = writeln!(out, "invalid: {s}");
    }
    out
}

fn render_checks(out: &mut String, checks: &[Check]) {
    for c in checks {
        let _ = writeln!(
            out,
            "[{}] {} = {:.3} (threshold {:.2})",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
}

pub fn render_cfa(r: &CfaReport) -> String {
    let mut out = String::new();
    rule(&mut out, "confirmatory factor analysis");
    out.push_str(&render_sem_fit(&r.fit));
    let _ = writeln!(
        out,
        "\n{:<8} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "factor", "alpha", "omega1", "omega2", "omega3", "AVE"
    );
    for b in &r.blocks {
        let o = |f: fn(&crate::reliability::Omega) -> f64| opt(b.omega.as_ref().map(f), 3);
        let _ = writeln!(
            out,
            "{:<8} {:>7} {:>7} {:>7} {:>7} {:>7.3}",
            b.factor,
            opt(b.alpha, 3),
            o(|w| w.omega1),
            o(|w| w.omega2),
            o(|w| w.omega3),
            b.ave
        );
    }
    render_checks(&mut out, &r.checks);
    out
}

pub fn render_search(r: &SearchReport, top: usize) -> String {
    let res = &r.result;
    let mut out = String::new();
    rule(&mut out, "structural search");
    let _ = writeln!(out, "rule: {}", r.rule);
    let alts: Vec<String> = r.count.alternatives.iter().map(|(k, v)| format!("{k} {v}")).collect();
    let _ = writeln!(
        out,
        "{} candidates (reference {}, gap {}; other rules: {})\n",
        r.count.realized,
        r.count.reference,
        r.count.gap,
        alts.join(", ")
    );
    out.push_str(&res.leaderboard(top));
    if let Some(first) = res.tiers.first() {
        let _ = writeln!(
            out,
            "\ntop tier ({} models)\n{:<44} {:>7} {:>7} {:>7} {:>12} {:>12}",
            first.len(),
            "model",
            "NFI",
            "RMSEA_l",
            "RMSEA_u",
            "AIC",
            "BIC"
        );
        for key in first {
            if let Some(e) = res.entry(key) {
                let _ = writeln!(
                    out,
                    "{:<44} {:>7} {:>7} {:>7} {:>12} {:>12}",
                    e.key,
                    opt(e.nfi, 4),
                    opt(e.rmsea_lower, 4),
                    opt(e.rmsea_upper, 4),
                    opt(e.aic, 3),
                    opt(e.bic, 3)
                );
            }
        }
    }
    let sh = &res.shared;
    let _ = writeln!(out, "\nin every top-tier model: {}", sh.present_in_all.join(", "));
    let _ = writeln!(out, "in no top-tier model: {}", sh.absent_from_all.join(", "));
    for (sink, anc) in &sh.common_ancestors {
        let _ = writeln!(out, "directed paths into {sink} in every model from: {}", anc.join(", "));
    }
    out
}

pub fn render_outcome(o: &PipelineOutcome) -> String {
    let mut out = String::new();
    rule(&mut out, "stages");
    for s in &o.stages {
        let _ = writeln!(out, "{:<12} {}", s.stage, if s.ok { "ok" } else { "NOT OK" });
        for n in &s.notes {
            let _ = writeln!(out, "    {n}");
        }
        for c in s.checks.iter().filter(|c| !c.pass) {
            let _ = writeln!(out, "    failed check: {} = {:.3} (threshold {:.2})", c.name, c.value, c.threshold);
        }
    }
    if let Some(f) = &o.failed {
        let _ = writeln!(out, "stopped: stage `{f}` failed");
    }
    out
}
