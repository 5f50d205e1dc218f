//! Structure-recovery and distribution-recovery scoring.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{dag_to_cpdag, PairState, WeightedDag};

/// Structural Hamming distance breakdown: `shd = extra + missing + reversed`
/// with unit reversal cost; precision/recall/F1 count exactly-oriented edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureScore {
    pub shd: usize,
    pub extra: usize,
    pub missing: usize,
    pub reversed: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pattern edit distance between two DAGs: per node pair, one addition,
/// deletion, or reversal fixes any disagreement, so each differing pair
/// costs exactly 1. Weights are ignored.
pub fn shd(est: &WeightedDag, truth: &WeightedDag) -> Result<StructureScore> {
    let d = est.dim();
    if truth.dim() != d {
        return Err(Error::Shape(format!(
            "estimated d={} vs truth d={}",
            d,
            truth.dim()
        )));
    }
    let state = |g: &WeightedDag, i: usize, j: usize| -> u8 {
        if g.weights()[[i, j]] != 0.0 {
            1
        } else if g.weights()[[j, i]] != 0.0 {
            2
        } else {
            0
        }
    };
    let mut extra = 0;
    let mut missing = 0;
    let mut reversed = 0;
    let mut true_positive = 0usize;
    for i in 0..d {
        for j in (i + 1)..d {
            let t = state(truth, i, j);
            let e = state(est, i, j);
            match (t, e) {
                (0, 0) => {}
                (a, b) if a == b => true_positive += 1,
                (0, _) => extra += 1,
                (_, 0) => missing += 1,
                _ => reversed += 1,
            }
        }
    }
    let est_edges = est.edge_count();
    let truth_edges = truth.edge_count();
    let fp = est_edges - true_positive;
    let fn_ = truth_edges - true_positive;
    let precision = if est_edges == 0 {
        if truth_edges == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        true_positive as f64 / (true_positive + fp) as f64
    };
    let recall = if truth_edges == 0 {
        if est_edges == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        true_positive as f64 / (true_positive + fn_) as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(StructureScore {
        shd: extra + missing + reversed,
        extra,
        missing,
        reversed,
        precision,
        recall,
        f1,
    })
}

/// SHD between the CPDAGs of two DAGs: adjacency mismatches cost 1, and so
/// does every orientation-class disagreement on a shared adjacency
/// (directed vs undirected, or opposing directions).
pub fn shd_cpdag(est: &WeightedDag, truth: &WeightedDag) -> Result<usize> {
    let d = est.dim();
    if truth.dim() != d {
        return Err(Error::Shape(format!(
            "estimated d={} vs truth d={}",
            d,
            truth.dim()
        )));
    }
    let ce = dag_to_cpdag(est);
    let ct = dag_to_cpdag(truth);
    let mut distance = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let a = ce.pair_state(i, j);
            let b = ct.pair_state(i, j);
            if a != b {
                distance += 1;
            } else {
                debug_assert!(matches!(
                    a,
                    PairState::None | PairState::Forward | PairState::Backward | PairState::Undirected
                ));
            }
        }
    }
    Ok(distance)
}

/// Frobenius norm of the difference of two equally-shaped matrices.
pub fn cov_frobenius(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(crate::linalg::frobenius_distance(a, b))
}
