//! Validated model, parameter table and the LISREL-style matrices
//! `Σ = Λ A Ψ A' Λ' + Θ` with `A = (I − B)⁻¹`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::parser::{parse_statements, Modifier, Op, Statement, Term};
use super::SemError;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identification {
    /// First loading of each factor fixed to 1.
    #[default]
    Marker,
    /// Latent (residual) variances fixed to 1, all loadings free.
    UnitVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// `Λ[row, col]`: indicator `row` on factor `col`.
    Loading,
    /// `B[row, col]`: factor `col` → factor `row`.
    Regression,
    /// `Ψ[row, col]`: latent (residual) variance or covariance.
    LatentCov,
    /// `Θ[row, col]`: residual variance or covariance of indicators.
    ResidualCov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub lhs: String,
    pub op: Op,
    pub rhs: String,
    pub kind: ParamKind,
    pub row: usize,
    pub col: usize,
    /// Position in the free-parameter vector, `None` when fixed.
    pub free: Option<usize>,
    /// Fixed value (ignored for free parameters).
    pub value: f64,
}

impl Parameter {
    pub fn is_variance(&self) -> bool {
        matches!(self.kind, ParamKind::LatentCov | ParamKind::ResidualCov) && self.row == self.col
    }

    pub fn label(&self) -> String {
        format!("{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

/// A parsed and validated model. Immutable once built; fits share it freely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemModel {
    pub factors: Vec<String>,
    /// Observed indicators in order of first appearance.
    pub indicators: Vec<String>,
    /// Per factor, indices into `indicators`.
    pub measurement: Vec<Vec<usize>>,
    /// `(dependent, predictor)` factor index pairs.
    pub regressions: Vec<(usize, usize)>,
    pub latent_covariances: Vec<(usize, usize)>,
    pub residual_covariances: Vec<(usize, usize)>,
    pub identification: Identification,
    pub params: Vec<Parameter>,
    pub n_free: usize,
}

/// Parameter matrices at a given parameter vector.
#[derive(Debug, Clone)]
pub struct Matrices {
    pub lambda: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    /// `(I − B)⁻¹`.
    pub a: DMatrix<f64>,
    /// Latent covariance `A Ψ A'`.
    pub phi: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Parses and validates model text with marker identification.
pub fn parse_model(text: &str) -> Result<SemModel, SemError> {
    SemModel::parse(text, Identification::Marker)
}

fn unknown(t: &Term) -> SemError {
    SemError::UnknownName {
        name: t.name.clone(),
        line: t.line,
        column: t.column,
    }
}

impl SemModel {
    pub fn parse(text: &str, identification: Identification) -> Result<Self, SemError> {
        let statements = parse_statements(text)?;
        Self::from_statements(&statements, identification)
    }

    pub fn from_statements(statements: &[Statement], identification: Identification) -> Result<Self, SemError> {
        let mut factors: Vec<String> = Vec::new();
        let mut indicators: Vec<String> = Vec::new();
        let mut owner: BTreeMap<String, String> = BTreeMap::new();
        let mut measurement: Vec<Vec<usize>> = Vec::new();
        let mut loading_mods: BTreeMap<(usize, usize), Modifier> = BTreeMap::new();

        for st in statements.iter().filter(|s| s.op == Op::Measure) {
            let f = match factors.iter().position(|x| *x == st.lhs.name) {
                Some(f) => f,
                None => {
                    factors.push(st.lhs.name.clone());
                    measurement.push(Vec::new());
                    factors.len() - 1
                }
            };
            for t in &st.rhs {
                if let Some(prev) = owner.get(&t.name) {
                    return Err(SemError::DuplicateMeasurement {
                        indicator: t.name.clone(),
                        first: prev.clone(),
                        second: st.lhs.name.clone(),
                        line: t.line,
                        column: t.column,
                    });
                }
                owner.insert(t.name.clone(), st.lhs.name.clone());
                indicators.push(t.name.clone());
                let i = indicators.len() - 1;
                measurement[f].push(i);
                if let Some(m) = t.modifier {
                    loading_mods.insert((i, f), m);
                }
            }
        }
        if factors.is_empty() {
            return Err(SemError::EmptyModel);
        }
        for st in statements.iter().filter(|s| s.op == Op::Measure) {
            if let Some(t) = st.rhs.iter().find(|t| factors.contains(&t.name)) {
                return Err(SemError::Invalid {
                    line: t.line,
                    column: t.column,
                    message: format!("`{}` is a factor; higher-order factors are not supported", t.name),
                });
            }
        }
        let fidx = |t: &Term| factors.iter().position(|x| *x == t.name);
        let iidx = |t: &Term| indicators.iter().position(|x| *x == t.name);

        let mut regressions = Vec::new();
        let mut reg_mods = BTreeMap::new();
        let mut latent_covariances = Vec::new();
        let mut residual_covariances = Vec::new();
        let mut cov_mods: BTreeMap<(bool, usize, usize), Modifier> = BTreeMap::new();
        let mut seen: BTreeSet<(u8, usize, usize)> = BTreeSet::new();

        for st in statements {
            match st.op {
                Op::Measure => {}
                Op::Regress => {
                    let Some(dep) = fidx(&st.lhs) else {
                        return Err(if iidx(&st.lhs).is_some() {
                            SemError::Invalid {
                                line: st.lhs.line,
                                column: st.lhs.column,
                                message: format!("regressions are among factors; `{}` is an indicator", st.lhs.name),
                            }
                        } else {
                            unknown(&st.lhs)
                        });
                    };
                    for t in &st.rhs {
                        let pred = fidx(t).ok_or_else(|| unknown(t))?;
                        if pred == dep {
                            return Err(SemError::Cycle {
                                path: vec![t.name.clone(), t.name.clone()],
                            });
                        }
                        if !seen.insert((0, dep, pred)) {
                            return Err(SemError::DuplicateParameter {
                                label: format!("{} ~ {}", st.lhs.name, t.name),
                                line: t.line,
                            });
                        }
                        regressions.push((dep, pred));
                        if let Some(m) = t.modifier {
                            reg_mods.insert((dep, pred), m);
                        }
                    }
                }
                Op::Covary => {
                    for t in &st.rhs {
                        let (latent, a, b) = match (fidx(&st.lhs), fidx(t), iidx(&st.lhs), iidx(t)) {
                            (Some(a), Some(b), _, _) => (true, a, b),
                            (_, _, Some(a), Some(b)) => (false, a, b),
                            (None, None, None, _) | (None, _, None, None) => return Err(unknown(&st.lhs)),
                            (_, None, _, None) => return Err(unknown(t)),
                            _ => {
                                return Err(SemError::Invalid {
                                    line: t.line,
                                    column: t.column,
                                    message: format!(
                                        "covariance between factor and indicator: {} ~~ {}",
                                        st.lhs.name, t.name
                                    ),
                                })
                            }
                        };
                        let (hi, lo) = (a.max(b), a.min(b));
                        if !seen.insert((if latent { 1 } else { 2 }, hi, lo)) {
                            return Err(SemError::DuplicateParameter {
                                label: format!("{} ~~ {}", st.lhs.name, t.name),
                                line: t.line,
                            });
                        }
                        if a != b {
                            if latent {
                                latent_covariances.push((hi, lo));
                            } else {
                                residual_covariances.push((hi, lo));
                            }
                        }
                        if let Some(m) = t.modifier {
                            cov_mods.insert((latent, hi, lo), m);
                        }
                    }
                }
            }
        }
        if let Some(path) = find_cycle(factors.len(), &regressions) {
            return Err(SemError::Cycle {
                path: path.into_iter().map(|k| factors[k].clone()).collect(),
            });
        }

        // Parameter table.
        let mut params = Vec::new();
        let mut n_free = 0;
        let mut push = |lhs: &str, op: Op, rhs: &str, kind, row, col, free: bool, value: f64| {
            params.push(Parameter {
                lhs: lhs.to_string(),
                op,
                rhs: rhs.to_string(),
                kind,
                row,
                col,
                free: free.then(|| {
                    n_free += 1;
                    n_free - 1
                }),
                value,
            });
        };
        let resolve = |m: Option<&Modifier>, default_free: bool, default_value: f64| match m {
            Some(Modifier::Fixed(v)) => (false, *v),
            Some(Modifier::Free) => (true, 0.0),
            None => (default_free, default_value),
        };
        for (f, items) in measurement.iter().enumerate() {
            for (pos, &i) in items.iter().enumerate() {
                let marker = pos == 0 && identification == Identification::Marker;
                let (free, v) = resolve(loading_mods.get(&(i, f)), !marker, 1.0);
                push(&factors[f], Op::Measure, &indicators[i], ParamKind::Loading, i, f, free, v);
            }
        }
        for &(dep, pred) in &regressions {
            let (free, v) = resolve(reg_mods.get(&(dep, pred)), true, 0.0);
            push(&factors[dep], Op::Regress, &factors[pred], ParamKind::Regression, dep, pred, free, v);
        }
        for (k, name) in factors.iter().enumerate() {
            let unit = identification == Identification::UnitVariance;
            let (free, v) = resolve(cov_mods.get(&(true, k, k)), !unit, 1.0);
            push(name, Op::Covary, name, ParamKind::LatentCov, k, k, free, v);
        }
        for &(a, b) in &latent_covariances {
            let (free, v) = resolve(cov_mods.get(&(true, a, b)), true, 0.0);
            push(&factors[a], Op::Covary, &factors[b], ParamKind::LatentCov, a, b, free, v);
        }
        for (i, name) in indicators.iter().enumerate() {
            let (free, v) = resolve(cov_mods.get(&(false, i, i)), true, 0.0);
            push(name, Op::Covary, name, ParamKind::ResidualCov, i, i, free, v);
        }
        for &(a, b) in &residual_covariances {
            let (free, v) = resolve(cov_mods.get(&(false, a, b)), true, 0.0);
            push(&indicators[a], Op::Covary, &indicators[b], ParamKind::ResidualCov, a, b, free, v);
        }

        Ok(Self {
            factors,
            indicators,
            measurement,
            regressions,
            latent_covariances,
            residual_covariances,
            identification,
            params,
            n_free,
        })
    }

    pub fn p(&self) -> usize {
        self.indicators.len()
    }

    pub fn m(&self) -> usize {
        self.factors.len()
    }

    /// Unique second moments `p(p+1)/2`.
    pub fn n_moments(&self) -> usize {
        let p = self.p();
        p * (p + 1) / 2
    }

    pub fn n_fixed(&self) -> usize {
        self.params.len() - self.n_free
    }

    /// Degrees of freedom (negative for underidentified models).
    pub fn df(&self) -> i64 {
        self.n_moments() as i64 - self.n_free as i64
    }

    pub fn is_endogenous(&self, k: usize) -> bool {
        self.regressions.iter().any(|&(d, _)| d == k)
    }

    pub fn free_params(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter().filter(|p| p.free.is_some())
    }

    /// Builds all matrices at the free-parameter vector `theta`.
    pub fn matrices(&self, theta: &[f64]) -> Result<Matrices, SemError> {
        if theta.len() != self.n_free {
            return Err(SemError::ParameterLength {
                expected: self.n_free,
                got: theta.len(),
            });
        }
        let (p, m) = (self.p(), self.m());
        let mut lambda = DMatrix::zeros(p, m);
        let mut b = DMatrix::zeros(m, m);
        let mut psi = DMatrix::zeros(m, m);
        let mut th = DMatrix::zeros(p, p);
        for par in &self.params {
            let v = par.free.map_or(par.value, |k| theta[k]);
            let (r, c) = (par.row, par.col);
            match par.kind {
                ParamKind::Loading => lambda[(r, c)] = v,
                ParamKind::Regression => b[(r, c)] = v,
                ParamKind::LatentCov => {
                    psi[(r, c)] = v;
                    psi[(c, r)] = v;
                }
                ParamKind::ResidualCov => {
                    th[(r, c)] = v;
                    th[(c, r)] = v;
                }
            }
        }
        let a = linalg::inverse(&(DMatrix::identity(m, m) - &b)).ok_or(SemError::Singular("I - B"))?;
        let phi = linalg::symmetrize(&(&a * &psi * a.transpose()));
        let sigma = linalg::symmetrize(&(&lambda * &phi * lambda.transpose() + &th));
        Ok(Matrices {
            lambda,
            b,
            psi,
            theta: th,
            a,
            phi,
            sigma,
        })
    }

    /// Gradient of any discrepancy whose differential is `tr(W dΣ)` for a
    /// symmetric `W`, with respect to the free parameters.
    pub fn gradient_from_w(&self, mats: &Matrices, w: &DMatrix<f64>) -> Vec<f64> {
        let lphi = &mats.lambda * &mats.phi;
        let wlphi = w * &lphi;
        let mm = mats.lambda.transpose() * w * &mats.lambda;
        let ama = mats.a.transpose() * &mm * &mats.a;
        let phima = &mats.phi * &mm * &mats.a;
        let mut g = vec![0.0; self.n_free];
        for par in &self.params {
            let Some(k) = par.free else { continue };
            let (r, c) = (par.row, par.col);
            g[k] = match par.kind {
                ParamKind::Loading => 2.0 * wlphi[(r, c)],
                ParamKind::Regression => 2.0 * phima[(c, r)],
                ParamKind::LatentCov if r == c => ama[(r, r)],
                ParamKind::LatentCov => 2.0 * ama[(r, c)],
                ParamKind::ResidualCov if r == c => w[(r, r)],
                ParamKind::ResidualCov => 2.0 * w[(r, c)],
            };
        }
        g
    }

    /// `∂Σ/∂θ_k` for every free parameter.
    pub fn sigma_derivatives(&self, mats: &Matrices) -> Vec<DMatrix<f64>> {
        let p = self.p();
        let lphi = &mats.lambda * &mats.phi;
        let mut out = vec![DMatrix::zeros(p, p); self.n_free];
        for par in &self.params {
            let Some(k) = par.free else { continue };
            let (r, c) = (par.row, par.col);
            let d = match par.kind {
                ParamKind::Loading => {
                    let mut d = DMatrix::zeros(p, p);
                    for j in 0..p {
                        d[(r, j)] += lphi[(j, c)];
                        d[(j, r)] += lphi[(j, c)];
                    }
                    d
                }
                ParamKind::Regression => {
                    let x = mats.a.column(r) * mats.phi.row(c);
                    let dphi = &x + x.transpose();
                    &mats.lambda * dphi * mats.lambda.transpose()
                }
                ParamKind::LatentCov => {
                    let x = mats.a.column(r) * mats.a.column(c).transpose();
                    let dphi = if r == c { x } else { &x + x.transpose() };
                    &mats.lambda * dphi * mats.lambda.transpose()
                }
                ParamKind::ResidualCov => {
                    let mut d = DMatrix::zeros(p, p);
                    d[(r, c)] = 1.0;
                    d[(c, r)] = 1.0;
                    d
                }
            };
            out[k] = d;
        }
        out
    }

    /// Start values from the sample covariance: free loadings 0.7 (scaled to
    /// the indicator/marker variance ratio), residual variances half the
    /// observed variance, latent variances 0.05 below the 0.5 share left by
    /// the marker's residual start, regressions and covariances 0.
    pub fn start_values(&self, s: &DMatrix<f64>) -> Vec<f64> {
        let mut x = vec![0.0; self.n_free];
        let marker_var = |f: usize| {
            self.measurement[f]
                .first()
                .map_or(1.0, |&i| s[(i, i)].max(1e-8))
        };
        for par in &self.params {
            let Some(k) = par.free else { continue };
            let (r, c) = (par.row, par.col);
            x[k] = match par.kind {
                ParamKind::Loading => match self.identification {
                    Identification::Marker => 0.7 * (s[(r, r)].max(1e-8) / marker_var(c)).sqrt(),
                    Identification::UnitVariance => 0.7 * s[(r, r)].max(1e-8).sqrt(),
                },
                ParamKind::LatentCov if r == c => match self.identification {
                    Identification::Marker => 0.45 * marker_var(r),
                    Identification::UnitVariance => 1.0,
                },
                ParamKind::ResidualCov if r == c => 0.5 * s[(r, r)].max(1e-8),
                _ => 0.0,
            };
        }
        x
    }

    /// Renders the model back to the DSL (round-trips through `parse`).
    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        let term = |par: &Parameter, default_free: bool, default_value: f64| -> String {
            match (par.free, default_free) {
                (Some(_), true) => par.rhs.clone(),
                (Some(_), false) => format!("NA*{}", par.rhs),
                (None, false) if par.value == default_value => par.rhs.clone(),
                (None, _) => format!("{}*{}", par.value, par.rhs),
            }
        };
        for (f, name) in self.factors.iter().enumerate() {
            let terms: Vec<String> = self
                .params
                .iter()
                .filter(|p| p.kind == ParamKind::Loading && p.col == f)
                .enumerate()
                .map(|(pos, p)| {
                    let marker = pos == 0 && self.identification == Identification::Marker;
                    term(p, !marker, 1.0)
                })
                .collect();
            let _ = writeln!(out, "{name} =~ {}", terms.join(" + "));
        }
        for par in self.params.iter().filter(|p| p.kind == ParamKind::Regression) {
            let _ = writeln!(out, "{} ~ {}", par.lhs, term(par, true, 0.0));
        }
        let unit = self.identification == Identification::UnitVariance;
        for par in self.params.iter().filter(|p| p.op == Op::Covary) {
            let default_free = !(unit && par.kind == ParamKind::LatentCov && par.row == par.col);
            let default_value = if default_free { 0.0 } else { 1.0 };
            let is_default = (par.free.is_some() == default_free)
                && (par.free.is_some() || par.value == default_value);
            if par.row == par.col && is_default {
                continue;
            }
            let _ = writeln!(out, "{} ~~ {}", par.lhs, term(par, default_free, default_value));
        }
        out
    }
}

/// Returns a directed cycle among the regression edges, if any.
fn find_cycle(m: usize, regressions: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut adj = vec![Vec::new(); m];
    for &(dep, pred) in regressions {
        adj[pred].push(dep);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; m];
    let mut stack = Vec::new();
    fn dfs(v: usize, adj: &[Vec<usize>], state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for &w in &adj[v] {
            if state[w] == 1 {
                let start = stack.iter().position(|&x| x == w).unwrap_or(0);
                let mut cyc = stack[start..].to_vec();
                cyc.push(w);
                return Some(cyc);
            }
            if state[w] == 0 {
                if let Some(c) = dfs(w, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }
    (0..m).find_map(|v| if state[v] == 0 { dfs(v, &adj, &mut state, &mut stack) } else { None })
}

/// True when the directed edges `(from, to)` over `m` nodes contain no cycle.
pub fn is_acyclic(m: usize, edges: &[(usize, usize)]) -> bool {
    let regressions: Vec<(usize, usize)> = edges.iter().map(|&(from, to)| (to, from)).collect();
    find_cycle(m, &regressions).is_none()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CFA4: &str = "\
MR1 =~ V30 + V31 + V32 + V33
MR2 =~ V46 + V47 + V48
MR3 =~ V28 + V29 + V51
MR4 =~ V49 + V50 + ATTEND
MR1 ~~ MR2 + MR3 + MR4
MR2 ~~ MR3 + MR4
MR3 ~~ MR4
";

    #[test]
    fn four_factor_cfa_counts() {
        let m = parse_model(CFA4).unwrap();
        assert_eq!(m.p(), 13);
        assert_eq!(m.n_moments(), 91);
        assert_eq!(m.n_free, 32);
        assert_eq!(m.df(), 59);
        assert_eq!(m.n_free + m.n_fixed(), m.params.len());
    }

    #[test]
    fn marker_fixed_to_one() {
        let m = parse_model("MR1 =~ V30+V31+V32+V33").unwrap();
        let l: Vec<_> = m.params.iter().filter(|p| p.kind == ParamKind::Loading).collect();
        assert_eq!(l.len(), 4);
        assert!(l[0].free.is_none() && l[0].value == 1.0);
        assert!(l[1..].iter().all(|p| p.free.is_some()));
    }

    #[test]
    fn cycles_rejected() {
        let e = parse_model("A =~ a1 + a2\nB =~ b1 + b2\nA ~ B\nB ~ A").unwrap_err();
        assert!(matches!(e, SemError::Cycle { .. }), "{e}");
        let e = parse_model("A =~ a1\nB =~ b1\nC =~ c1\nB ~ A\nC ~ B\nA ~ C").unwrap_err();
        match e {
            SemError::Cycle { path } => assert_eq!(path.len(), 4),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn validation_errors() {
        let e = parse_model("A =~ x1 + x2\nB =~ x2 + x3").unwrap_err();
        assert!(matches!(e, SemError::DuplicateMeasurement { ref indicator, .. } if indicator == "x2"));
        let e = parse_model("A =~ x1 + x2\nA ~~ Z").unwrap_err();
        assert!(matches!(e, SemError::UnknownName { ref name, line: 2, column: 6 } if name == "Z"), "{e}");
        let e = parse_model("A =~ x1 + x2\nB =~ x3\nA ~~ B\nB ~~ A").unwrap_err();
        assert!(matches!(e, SemError::DuplicateParameter { .. }));
        assert!(parse_model("A =~ x1 + x2\nA ~~ x1").is_err());
    }

    #[test]
    fn implied_hand_expansion() {
        let m = parse_model("F =~ a + b").unwrap();
        // free: loading b, psi, theta_a, theta_b
        let mats = m.matrices(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(mats.sigma, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
    }

    #[test]
    fn derivatives_match_gradient_contraction() {
        let m = parse_model("A =~ a1 + a2 + a3\nB =~ b1 + b2 + b3\nB ~ A\na1 ~~ b1").unwrap();
        let theta: Vec<f64> = (0..m.n_free).map(|k| 0.3 + 0.05 * k as f64).collect();
        let mats = m.matrices(&theta).unwrap();
        let w = DMatrix::from_fn(6, 6, |i, j| 0.1 * ((i + j) as f64).sin() + if i == j { 0.5 } else { 0.0 });
        let w = linalg::symmetrize(&w);
        let g = m.gradient_from_w(&mats, &w);
        let ds = m.sigma_derivatives(&mats);
        for k in 0..m.n_free {
            let tr = (&w * &ds[k]).trace();
            assert!((tr - g[k]).abs() < 1e-12, "param {k}: {tr} vs {}", g[k]);
        }
    }

    #[test]
    fn dsl_round_trip() {
        let text = "A =~ NA*a1 + a2 + 0.5*a3\nB =~ b1 + b2\nB ~ A\nA ~~ 1*A\na1 ~~ b1";
        let m = parse_model(text).unwrap();
        let again = parse_model(&m.to_dsl()).unwrap();
        assert_eq!(m, again);
        let u = SemModel::parse(CFA4, Identification::UnitVariance).unwrap();
        assert_eq!(u, SemModel::parse(&u.to_dsl(), Identification::UnitVariance).unwrap());
        assert_eq!(u.n_free, 32);
    }
}
