//! Column-major numeric analysis matrix with NaN as the missing marker.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Analysis matrix: one column per variable, `NaN` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericMatrix {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Number of ordered levels for ordinal columns, `None` for numeric ones.
    pub levels: Vec<Option<usize>>,
    pub n_rows: usize,
    /// Notices raised while building the matrix (excluded or empty columns).
    #[serde(default)]
    pub notices: Vec<String>,
}

impl NumericMatrix {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, levels: Vec<Option<usize>>) -> Self {
        let n_rows = columns.first().map_or(0, Vec::len);
        debug_assert!(columns.iter().all(|c| c.len() == n_rows));
        debug_assert_eq!(names.len(), columns.len());
        Self {
            names,
            columns,
            levels,
            n_rows,
            notices: Vec::new(),
        }
    }

    /// Builds a fully observed continuous matrix from a row-major array.
    pub fn from_dmatrix(names: Vec<String>, m: &DMatrix<f64>) -> Self {
        let columns = (0..m.ncols())
            .map(|j| m.column(j).iter().copied().collect())
            .collect();
        let levels = vec![None; m.ncols()];
        Self::new(names, columns, levels)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Sub-matrix with the named columns in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self, String> {
        let mut cols = Vec::with_capacity(names.len());
        let mut levels = Vec::with_capacity(names.len());
        for n in names {
            let j = self
                .index_of(n)
                .ok_or_else(|| format!("column `{n}` not present"))?;
            cols.push(self.columns[j].clone());
            levels.push(self.levels[j]);
        }
        Ok(Self::new(names.to_vec(), cols, levels))
    }

    /// Sub-matrix of the given rows (rows may repeat, as in a bootstrap).
    pub fn take_rows(&self, rows: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        Self::new(self.names.clone(), columns, self.levels.clone())
    }

    /// Rows with every column observed.
    pub fn complete_rows(&self) -> Vec<usize> {
        (0..self.n_rows)
            .filter(|&r| self.columns.iter().all(|c| !c[r].is_nan()))
            .collect()
    }

    pub fn listwise_complete(&self) -> Self {
        self.take_rows(&self.complete_rows())
    }

    /// Number of observed cells per column.
    pub fn observed_counts(&self) -> Vec<usize> {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|v| !v.is_nan()).count())
            .collect()
    }

    /// Writes a comma-separated table with a header row; missing cells are
    /// written as empty fields and integer-valued cells without decimals.
    pub fn write_csv<W: Write>(&self, out: W, extra: &[(String, Vec<f64>)]) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = extra.iter().map(|(n, _)| n.as_str()).collect();
        header.extend(self.names.iter().map(String::as_str));
        w.write_record(&header)?;
        let mut rec = Vec::with_capacity(header.len());
        for r in 0..self.n_rows {
            rec.clear();
            for (_, col) in extra {
                rec.push(format_cell(col[r]));
            }
            for col in &self.columns {
                rec.push(format_cell(col[r]));
            }
            w.write_record(&rec)?;
        }
        w.flush()
    }

    pub fn write_csv_file(&self, path: &Path, extra: &[(String, Vec<f64>)]) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), extra)
    }
}

pub(crate) fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
