//! Datasets with missing entries, plus the CSV formats used by the CLI.
//!
//! Matrix CSV: a header row of column names, one row per sample, missing
//! cells written as empty fields (the literal `NaN` is also accepted on
//! read). Graph files come in two flavors: an edge list (`from,to,weight`)
//! and a dense matrix using the matrix CSV format.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightedDag;

/// An `N x d` observation matrix paired with a binary observation mask.
/// Masked cells are scrubbed to NaN at construction; the mask is
/// authoritative and no consumer may read a masked value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedDataset {
    x: Array2<f64>,
    observed: Array2<bool>,
}

impl MaskedDataset {
    /// Builds a dataset, rejecting shape mismatches, rows with no observed
    /// entry, and non-finite observed values.
    pub fn new(x: Array2<f64>, observed: Array2<bool>) -> Result<Self> {
        if x.dim() != observed.dim() {
            return Err(Error::Shape(format!(
                "data {:?} vs mask {:?}",
                x.dim(),
                observed.dim()
            )));
        }
        for (i, row) in observed.rows().into_iter().enumerate() {
            if !row.iter().any(|o| *o) {
                return Err(Error::FullyMissingRow { row: i });
            }
        }
        let mut x = x;
        for ((i, j), obs) in observed.indexed_iter() {
            if *obs {
                if !x[[i, j]].is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite observed value at ({i},{j})"
                    )));
                }
            } else {
                x[[i, j]] = f64::NAN;
            }
        }
        Ok(MaskedDataset { x, observed })
    }

    pub fn from_complete(x: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(x.dim(), true);
        Self::new(x, mask)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Raw values; masked cells hold NaN.
    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn observed(&self) -> &Array2<bool> {
        &self.observed
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[[i, j]]
    }

    pub fn row_observed_indices(&self, i: usize) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.observed[[i, j]]).collect()
    }

    pub fn row_missing_indices(&self, i: usize) -> Vec<usize> {
        (0..self.d()).filter(|&j| !self.observed[[i, j]]).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.n_missing() as f64 / (self.n() * self.d()) as f64
    }

    /// Copy of the data with masked cells replaced by zero.
    pub fn zero_imputed(&self) -> Array2<f64> {
        let mut out = self.x.clone();
        for ((i, j), obs) in self.observed.indexed_iter() {
            if !*obs {
                out[[i, j]] = 0.0;
            }
        }
        out
    }

    /// The full matrix when nothing is missing.
    pub fn complete_matrix(&self) -> Option<Array2<f64>> {
        (self.n_missing() == 0).then(|| self.x.clone())
    }

    /// Per-column mean of squares over observed cells (uncentered variance,
    /// matching the zero-mean model convention). Errors on a fully missing
    /// column.
    pub fn observed_column_second_moments(&self) -> Result<Array1<f64>> {
        let d = self.d();
        let mut out = Array1::zeros(d);
        for j in 0..d {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..self.n() {
                if self.observed[[i, j]] {
                    sum += self.x[[i, j]] * self.x[[i, j]];
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::FullyMissingColumn { col: j });
            }
            out[j] = sum / count as f64;
        }
        Ok(out)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<(Self, Vec<String>)> {
        let (x, observed, names) = read_masked_matrix(path)?;
        Ok((Self::new(x, observed)?, names))
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P, names: &[String]) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(names)?;
        for i in 0..self.n() {
            let record: Vec<String> = (0..self.d())
                .map(|j| {
                    if self.observed[[i, j]] {
                        format!("{}", self.x[[i, j]])
                    } else {
                        String::new()
                    }
                })
                .collect();
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Default column names `x0..x{d-1}`.
pub fn default_column_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

fn read_masked_matrix<P: AsRef<Path>>(
    path: P,
) -> Result<(Array2<f64>, Array2<bool>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let names: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let d = names.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != d {
            return Err(Error::Shape(format!(
                "row {} has {} fields, expected {}",
                n + 1,
                record.len(),
                d
            )));
        }
        for field in record.iter() {
            let field = field.trim();
            if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                values.push(f64::NAN);
                mask.push(false);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|e| Error::Numeric(format!("bad number {field:?}: {e}")))?;
                values.push(v);
                mask.push(true);
            }
        }
        n += 1;
    }
    let x = Array2::from_shape_vec((n, d), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let observed = Array2::from_shape_vec((n, d), mask)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok((x, observed, names))
}

/// Reads a complete (no missing entries) matrix CSV.
pub fn read_matrix_csv<P: AsRef<Path>>(path: P) -> Result<(Array2<f64>, Vec<String>)> {
    let (x, observed, names) = read_masked_matrix(path)?;
    if observed.iter().any(|o| !*o) {
        return Err(Error::Numeric(
            "matrix file contains missing cells; use the masked loader".into(),
        ));
    }
    Ok((x, names))
}

pub fn write_matrix_csv<P: AsRef<Path>>(path: P, m: &Array2<f64>, names: &[String]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(names)?;
    for row in m.rows() {
        let record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes a weight matrix as an edge list with header `from,to,weight`.
pub fn write_edge_list_csv<P: AsRef<Path>>(path: P, g: &WeightedDag) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["from", "to", "weight"])?;
    for (i, j, w) in g.edges() {
        writer.write_record(&[i.to_string(), j.to_string(), format!("{w}")])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads an edge list into a weight matrix. When `d` is `None` the node
/// count is inferred as `max index + 1`.
pub fn read_edge_list_csv<P: AsRef<Path>>(path: P, d: Option<usize>) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut max_idx = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Shape(format!(
                "edge record has {} fields, expected 3",
                record.len()
            )));
        }
        let from: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::Numeric(format!("bad node index: {e}")))?;
        let to: usize = record[1]
            .trim()
            .parse()
            .map_err(|e| Error::Numeric(format!("bad node index: {e}")))?;
        let w: f64 = record[2]
            .trim()
            .parse()
            .map_err(|e| Error::Numeric(format!("bad weight: {e}")))?;
        max_idx = max_idx.max(from).max(to);
        edges.push((from, to, w));
    }
    let dim = match d {
        Some(dim) => {
            if max_idx >= dim && !edges.is_empty() {
                return Err(Error::Shape(format!(
                    "edge index {max_idx} out of range for d={dim}"
                )));
            }
            dim
        }
        None => {
            if edges.is_empty() {
                return Err(Error::Config(
                    "cannot infer node count from an empty edge list".into(),
                ));
            }
            max_idx + 1
        }
    };
    let mut w = Array2::zeros((dim, dim));
    for (from, to, weight) in edges {
        w[[from, to]] = weight;
    }
    Ok(w)
}
