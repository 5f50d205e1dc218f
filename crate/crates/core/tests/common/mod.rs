//! Shared helpers for the oracle test suites.
#![allow(dead_code)]

use missdag::WeightedDag;
use ndarray::Array2;
use std::collections::BTreeSet;

/// Every DAG on `d` labeled nodes (unit weights), by filtering all directed
/// graphs on the off-diagonal positions. Feasible for d <= 4.
pub fn all_dags(d: usize) -> Vec<WeightedDag> {
    let positions: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << positions.len()) {
        let mut m = Array2::<f64>::zeros((d, d));
        for (bit, &(i, j)) in positions.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                m[[i, j]] = 1.0;
            }
        }
        if let Ok(g) = WeightedDag::into_dag(m) {
            out.push(g);
        }
    }
    out
}

/// Markov-equivalence-class key: (skeleton, v-structures). Two DAGs are
/// Markov equivalent iff these coincide.
pub fn mec_key(g: &WeightedDag) -> (BTreeSet<(usize, usize)>, BTreeSet<(usize, usize, usize)>) {
    let d = g.dim();
    let w = g.weights();
    let mut skeleton = BTreeSet::new();
    for (i, j, _) in g.edges() {
        skeleton.insert((i.min(j), i.max(j)));
    }
    let mut vstructs = BTreeSet::new();
    for j in 0..d {
        let parents: Vec<usize> = (0..d).filter(|&i| w[[i, j]] != 0.0).collect();
        for (pi, &a) in parents.iter().enumerate() {
            for &b in parents.iter().skip(pi + 1) {
                let adjacent = w[[a, b]] != 0.0 || w[[b, a]] != 0.0;
                if !adjacent {
                    vstructs.insert((a.min(b), a.max(b), j));
                }
            }
        }
    }
    (skeleton, vstructs)
}

/// Central finite-difference gradient of a scalar function of a flat slice.
pub fn finite_difference_grad<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Max relative error between an analytic and a finite-difference gradient.
/// Entries far below the gradient's own scale are measured against that
/// scale: the finite-difference probe carries subtractive-cancellation noise
/// proportional to the objective's magnitude, not the entry's.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .fold(0.0f64, |m, a| m.max(a.abs()))
        .max(1e-6);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let denom = a.abs().max(n.abs()).max(1e-3 * scale);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
