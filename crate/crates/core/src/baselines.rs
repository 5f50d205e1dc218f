//! Two-step baselines: impute first, then hand the completed matrix to any
//! complete-data solver.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::estep::{expected_suff_stats_from_cov, row_conditional_moments, SufficientStats};

/// A completed matrix plus which cells were filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedDataset {
    pub x: Array2<f64>,
    pub imputed: Array2<bool>,
}

/// Fills each missing cell with its column's observed mean.
pub fn mean_impute(data: &MaskedDataset) -> Result<ImputedDataset> {
    let (n, d) = (data.n(), data.d());
    let mut means = vec![0.0; d];
    for j in 0..d {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if data.is_observed(i, j) {
                sum += data.x()[[i, j]];
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::FullyMissingColumn { col: j });
        }
        means[j] = sum / count as f64;
    }
    let mut x = Array2::zeros((n, d));
    let mut imputed = Array2::from_elem((n, d), false);
    for i in 0..n {
        for j in 0..d {
            if data.is_observed(i, j) {
                x[[i, j]] = data.x()[[i, j]];
            } else {
                x[[i, j]] = means[j];
                imputed[[i, j]] = true;
            }
        }
    }
    Ok(ImputedDataset { x, imputed })
}

/// Unstructured Gaussian EM: iterate the exact E-step with the covariance
/// replaced by the expected statistic itself (no structure learning in the
/// M-step), then impute with the final conditional means. Returns the
/// completed data and the final statistic.
pub fn gaussian_em_impute(
    data: &MaskedDataset,
    iters: usize,
) -> Result<(ImputedDataset, SufficientStats)> {
    if iters == 0 {
        return Err(Error::Config("need at least one EM iteration".into()));
    }
    let d = data.d();
    let init = data.observed_column_second_moments()?;
    let mut sigma = Array2::zeros((d, d));
    for j in 0..d {
        sigma[[j, j]] = init[j];
    }
    let mut stats = None;
    for _ in 0..iters {
        let out = expected_suff_stats_from_cov(data, &sigma)?;
        sigma = out.stats.matrix().clone();
        stats = Some(out.stats);
    }
    let stats = stats.expect("iters >= 1");

    let mut x = Array2::zeros((data.n(), d));
    let mut imputed = Array2::from_elem((data.n(), d), false);
    for i in 0..data.n() {
        let moments = row_conditional_moments(data, i, &sigma)?;
        for j in 0..d {
            x[[i, j]] = moments.xhat[j];
            if !data.is_observed(i, j) {
                imputed[[i, j]] = true;
            }
        }
    }
    Ok((ImputedDataset { x, imputed }, stats))
}

/// Drops every row containing a missing cell. The result may be empty;
/// that is a reportable outcome, not an error.
pub fn listwise_delete(data: &MaskedDataset) -> Array2<f64> {
    let d = data.d();
    let keep: Vec<usize> = (0..data.n())
        .filter(|&i| (0..d).all(|j| data.is_observed(i, j)))
        .collect();
    let mut x = Array2::zeros((keep.len(), d));
    for (r, &i) in keep.iter().enumerate() {
        for j in 0..d {
            x[[r, j]] = data.x()[[i, j]];
        }
    }
    x
}
