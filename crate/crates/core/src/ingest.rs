//! Survey table ingestion: schema-driven validity masking, level merging,
//! polarity inversion and conversion to a numeric analysis matrix.
//!
//! Invalid answers are masked per variable; rows are never dropped here.
//! Each estimator applies its own deletion policy later.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::NumericMatrix;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("schema error: column `{0}` missing from the data header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {reason} (value `{value}`)")]
    BadCell {
        /// 1-based data row (header excluded).
        row: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("recode error in `{variable}`: {reason}")]
    Recode { variable: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableKind {
    Ordinal,
    Numeric,
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub from: i64,
    pub to: i64,
}

/// Recoding rules for one survey variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, rename = "levels")]
    pub valid_levels: Vec<i64>,
    #[serde(default, rename = "invalid")]
    pub invalid_codes: Vec<i64>,
    #[serde(default, rename = "invert")]
    pub invert_polarity: bool,
    #[serde(default)]
    pub merges: Vec<Merge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl VariableSpec {
    pub fn ordinal(name: &str, levels: std::ops::RangeInclusive<i64>) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Ordinal,
            valid_levels: levels.collect(),
            invalid_codes: Vec::new(),
            invert_polarity: false,
            merges: Vec::new(),
            label: None,
        }
    }

    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Numeric,
            valid_levels: Vec::new(),
            invalid_codes: Vec::new(),
            invert_polarity: false,
            merges: Vec::new(),
            label: None,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let err = |m: String| Err(IngestError::Schema(format!("`{}`: {m}", self.name)));
        if self.valid_levels.windows(2).any(|w| w[0] >= w[1]) {
            return err("valid levels must be strictly increasing".into());
        }
        match self.kind {
            VariableKind::Ordinal => {
                if self.valid_levels.is_empty() {
                    return err("ordinal variable needs at least one valid level".into());
                }
            }
            VariableKind::Numeric | VariableKind::Nominal => {
                if self.invert_polarity {
                    return err("polarity inversion applies to ordinal variables only".into());
                }
            }
        }
        if let Some(c) = self
            .invalid_codes
            .iter()
            .find(|c| self.valid_levels.contains(c))
        {
            return err(format!("code {c} is declared both valid and invalid"));
        }
        let sources: BTreeSet<i64> = self.merges.iter().map(|m| m.from).collect();
        for m in &self.merges {
            if !self.valid_levels.contains(&m.from) {
                return err(format!("merge source {} is not a valid level", m.from));
            }
            if !self.valid_levels.contains(&m.to) {
                return err(format!("merge target {} is not a valid level", m.to));
            }
            if sources.contains(&m.to) {
                return err(format!("merge target {} is itself merged away", m.to));
            }
        }
        Ok(())
    }

    fn accepts_code(&self) -> bool {
        !matches!(self.kind, VariableKind::Numeric)
    }
}

/// Declarative schema: the variables to load and the metadata columns
/// (wave, country, ...) available to row filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub metadata: Vec<String>,
    #[serde(rename = "variable")]
    pub variables: Vec<VariableSpec>,
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self, IngestError> {
        let schema: Schema =
            toml::from_str(text).map_err(|e| IngestError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Schema guessed from a delimited table: integer columns with at most
    /// `max_levels` distinct values become ordinal on their observed codes,
    /// everything else numeric. Columns listed in `metadata` are kept as
    /// metadata.
    pub fn infer(text: &str, metadata: &[String], max_levels: usize) -> Result<Self, IngestError> {
        let delim = detect_delimiter(text.lines().next().unwrap_or(""));
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delim)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut codes: Vec<Option<BTreeSet<i64>>> = vec![Some(BTreeSet::new()); header.len()];
        for rec in rdr.records() {
            let rec = rec?;
            for (j, slot) in codes.iter_mut().enumerate() {
                let raw = rec.get(j).unwrap_or("");
                if raw.is_empty() {
                    continue;
                }
                let Some(set) = slot else { continue };
                match raw.parse::<f64>() {
                    Ok(v) if v.fract() == 0.0 && v.abs() < 1e9 => {
                        set.insert(v as i64);
                        if set.len() > max_levels {
                            *slot = None;
                        }
                    }
                    _ => *slot = None,
                }
            }
        }
        let variables = header
            .iter()
            .zip(codes)
            .filter(|(h, _)| !metadata.contains(h))
            .map(|(h, c)| match c {
                Some(set) if !set.is_empty() => VariableSpec {
                    valid_levels: set.into_iter().collect(),
                    ..VariableSpec::ordinal(h, 1..=1)
                },
                _ => VariableSpec::numeric(h),
            })
            .collect();
        let schema = Schema {
            metadata: metadata.to_vec(),
            variables,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let mut seen = BTreeSet::new();
        for v in &self.variables {
            v.validate()?;
            if !seen.insert(v.name.as_str()) {
                return Err(IngestError::Schema(format!("duplicate variable `{}`", v.name)));
            }
        }
        Ok(())
    }
}

/// Conjunction of "metadata column takes one of these values" clauses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub clauses: Vec<(String, BTreeSet<i64>)>,
}

impl RowFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn column_in(column: &str, values: impl IntoIterator<Item = i64>) -> Self {
        Self {
            clauses: vec![(column.to_string(), values.into_iter().collect())],
        }
    }

    pub fn and(mut self, column: &str, values: impl IntoIterator<Item = i64>) -> Self {
        self.clauses
            .push((column.to_string(), values.into_iter().collect()));
        self
    }

    fn describe(&self) -> String {
        if self.clauses.is_empty() {
            return "all rows".into();
        }
        self.clauses
            .iter()
            .map(|(c, v)| {
                let vals: Vec<String> = v.iter().map(i64::to_string).collect();
                format!("{c} in {{{}}}", vals.join(","))
            })
            .collect::<Vec<_>>()
            .join(" and ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub filter: String,
    pub source_rows: usize,
}

/// Recoded survey records, stored column-wise. Missing cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalDataset {
    pub variables: Vec<VariableSpec>,
    pub columns: Vec<Vec<Option<f64>>>,
    pub metadata: BTreeMap<String, Vec<Option<f64>>>,
    pub provenance: Provenance,
}

impl OrdinalDataset {
    pub fn n_rows(&self) -> usize {
        self.columns
            .first()
            .map(Vec::len)
            .or_else(|| self.metadata.values().next().map(Vec::len))
            .unwrap_or(0)
    }

    /// Writes metadata columns followed by the variables as comma-separated
    /// text; missing cells are empty fields.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.metadata.keys().map(String::as_str).collect();
        header.extend(self.variables.iter().map(|v| v.name.as_str()));
        w.write_record(&header)?;
        let cell = |v: &Option<f64>| v.map_or_else(String::new, crate::data::format_cell);
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for r in 0..self.n_rows() {
            rec.clear();
            rec.extend(self.metadata.values().map(|c| cell(&c[r])));
            rec.extend(self.columns.iter().map(|c| cell(&c[r])));
            w.write_record(&rec)?;
        }
        w.flush()
    }

    pub fn write_csv_file(&self, path: &Path) -> std::io::Result<()> {
        let f = fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .map(|j| self.columns[j].as_slice())
    }
}

fn detect_delimiter(first_line: &str) -> u8 {
    let tabs = first_line.matches('\t').count();
    let commas = first_line.matches(',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

/// Loads a delimited table (comma or tab, detected from the header line),
/// keeps rows matching `filter`, and validates every schema variable.
pub fn load_dataset(
    path: &Path,
    schema: &Schema,
    filter: &RowFilter,
) -> Result<OrdinalDataset, IngestError> {
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    load_dataset_from_str(&text, &path.display().to_string(), schema, filter)
}

pub fn load_dataset_from_str(
    text: &str,
    source: &str,
    schema: &Schema,
    filter: &RowFilter,
) -> Result<OrdinalDataset, IngestError> {
    schema.validate()?;
    let delim = detect_delimiter(text.lines().next().unwrap_or(""));
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delim)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let var_idx: Vec<usize> = schema
        .variables
        .iter()
        .map(|v| find(&v.name))
        .collect::<Result<_, _>>()?;
    let mut meta_names: Vec<String> = schema.metadata.clone();
    for (c, _) in &filter.clauses {
        if !meta_names.contains(c) {
            meta_names.push(c.clone());
        }
    }
    let meta_idx: Vec<usize> = meta_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<_, _>>()?;

    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); schema.variables.len()];
    let mut metadata: Vec<Vec<Option<f64>>> = vec![Vec::new(); meta_names.len()];
    let mut source_rows = 0;
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec?;
        source_rows += 1;
        let row = row_no + 1;
        let mut meta_vals = Vec::with_capacity(meta_idx.len());
        for (k, &j) in meta_idx.iter().enumerate() {
            let raw = rec.get(j).unwrap_or("");
            let v = if raw.is_empty() {
                None
            } else {
                Some(raw.parse::<f64>().map_err(|_| IngestError::BadCell {
                    row,
                    column: meta_names[k].clone(),
                    value: raw.to_string(),
                    reason: "metadata value is not numeric".into(),
                })?)
            };
            meta_vals.push(v);
        }
        let keep = filter.clauses.iter().all(|(c, allowed)| {
            let k = meta_names.iter().position(|n| n == c).expect("filter column registered");
            matches!(meta_vals[k], Some(v) if v.fract() == 0.0 && allowed.contains(&(v as i64)))
        });
        if !keep {
            continue;
        }
        for (k, v) in meta_vals.into_iter().enumerate() {
            metadata[k].push(v);
        }
        for (k, (spec, &j)) in schema.variables.iter().zip(&var_idx).enumerate() {
            let raw = rec.get(j).unwrap_or("");
            columns[k].push(parse_cell(spec, raw, row)?);
        }
    }
    Ok(OrdinalDataset {
        variables: schema.variables.clone(),
        columns,
        metadata: meta_names.into_iter().zip(metadata).collect(),
        provenance: Provenance {
            source: source.to_string(),
            filter: filter.describe(),
            source_rows,
        },
    })
}

fn parse_cell(spec: &VariableSpec, raw: &str, row: usize) -> Result<Option<f64>, IngestError> {
    if raw.is_empty() {
        return Ok(None);
    }
    let bad = |reason: &str| IngestError::BadCell {
        row,
        column: spec.name.clone(),
        value: raw.to_string(),
        reason: reason.to_string(),
    };
    let v: f64 = raw.parse().map_err(|_| bad("not a number"))?;
    if !v.is_finite() {
        return Err(bad("not a finite number"));
    }
    let as_code = (v.fract() == 0.0).then_some(v as i64);
    if let Some(c) = as_code {
        if spec.invalid_codes.contains(&c) {
            return Ok(None);
        }
    }
    if !spec.accepts_code() {
        return Ok(Some(v));
    }
    match as_code {
        Some(c) if spec.valid_levels.contains(&c) => Ok(Some(v)),
        Some(_) => Err(bad("code is neither a valid level nor a declared invalid code")),
        None => Err(bad("expected an integer level code")),
    }
}

/// Applies merges, renumbers levels contiguously from 1, then inverts
/// polarity where requested. The returned specs describe the new coding
/// (levels `1..=L`, no merges, inversion consumed), so recoding twice is
/// the same as recoding once.
pub fn recode(dataset: &OrdinalDataset) -> Result<OrdinalDataset, IngestError> {
    let mut out = dataset.clone();
    for (spec, col) in out.variables.iter_mut().zip(out.columns.iter_mut()) {
        if spec.kind != VariableKind::Ordinal {
            continue;
        }
        spec.validate()?;
        let sources: BTreeSet<i64> = spec.merges.iter().map(|m| m.from).collect();
        let kept: Vec<i64> = spec
            .valid_levels
            .iter()
            .copied()
            .filter(|l| !sources.contains(l))
            .collect();
        if kept.len() < 2 {
            return Err(IngestError::Recode {
                variable: spec.name.clone(),
                reason: format!("merges leave {} level(s); at least two required", kept.len()),
            });
        }
        let n_levels = kept.len() as i64;
        let mut map: BTreeMap<i64, i64> = kept
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i as i64 + 1))
            .collect();
        for m in &spec.merges {
            let target = map[&m.to];
            map.insert(m.from, target);
        }
        if spec.invert_polarity {
            for v in map.values_mut() {
                *v = n_levels + 1 - *v;
            }
        }
        for cell in col.iter_mut() {
            if let Some(v) = cell {
                let code = *v as i64;
                let mapped = map.get(&code).ok_or_else(|| IngestError::Recode {
                    variable: spec.name.clone(),
                    reason: format!("code {code} is not a declared level"),
                })?;
                *v = *mapped as f64;
            }
        }
        let old_invalid: Vec<i64> = spec.invalid_codes.clone();
        spec.valid_levels = (1..=n_levels).collect();
        spec.invalid_codes = old_invalid
            .into_iter()
            .filter(|c| !spec.valid_levels.contains(c))
            .collect();
        spec.merges.clear();
        spec.invert_polarity = false;
    }
    Ok(out)
}

/// Converts a recoded dataset to the analysis matrix. Ordinal levels become
/// their integer codes, numeric columns pass through, nominal columns are
/// dropped with a notice.
pub fn to_numeric(dataset: &OrdinalDataset) -> NumericMatrix {
    let mut names = Vec::new();
    let mut cols = Vec::new();
    let mut levels = Vec::new();
    let mut notices = Vec::new();
    for (spec, col) in dataset.variables.iter().zip(&dataset.columns) {
        match spec.kind {
            VariableKind::Nominal => {
                notices.push(format!(
                    "nominal variable `{}` excluded from the analysis matrix",
                    spec.name
                ));
                continue;
            }
            VariableKind::Ordinal => levels.push(Some(spec.valid_levels.len())),
            VariableKind::Numeric => levels.push(None),
        }
        let values: Vec<f64> = col.iter().map(|c| c.unwrap_or(f64::NAN)).collect();
        if values.iter().all(|v| v.is_nan()) {
            log::warn!("column `{}` has no observed values", spec.name);
            notices.push(format!("column `{}` has no observed values", spec.name));
        }
        names.push(spec.name.clone());
        cols.push(values);
    }
    let mut m = NumericMatrix::new(names, cols, levels);
    m.n_rows = dataset.n_rows();
    m.notices = notices;
    m
}
