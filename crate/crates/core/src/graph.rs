//! Weighted DAGs, the smooth acyclicity measure, thresholding, and CPDAG
//! conversion.
//!
//! The convention throughout the crate: entry `w[i][j] != 0` means the edge
//! `i -> j` (variable `i` is a parent of variable `j`).

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::matrix_exp;

/// A real weight matrix whose nonzero pattern is verified acyclic with an
/// exactly-zero diagonal. Raw candidate matrices live in plain `Array2`s
/// until validated through [`WeightedDag::into_dag`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDag {
    weights: Array2<f64>,
}

impl WeightedDag {
    /// Validates a candidate matrix and wraps it. Fails on non-square input,
    /// a nonzero diagonal (a self-loop is a length-1 cycle), or any directed
    /// cycle in the nonzero pattern.
    pub fn into_dag(weights: Array2<f64>) -> Result<Self> {
        if !is_acyclic(&weights.view())? {
            return Err(Error::Cyclic);
        }
        Ok(WeightedDag { weights })
    }

    /// The edgeless graph on `d` nodes.
    pub fn empty(d: usize) -> Self {
        WeightedDag {
            weights: Array2::zeros((d, d)),
        }
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = Array2::zeros((d, d));
        for &(from, to, weight) in edges {
            if from >= d || to >= d {
                return Err(Error::Shape(format!(
                    "edge ({from},{to}) out of range for d={d}"
                )));
            }
            w[[from, to]] = weight;
        }
        Self::into_dag(w)
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn into_weights(self) -> Array2<f64> {
        self.weights
    }

    /// Iterator over `(from, to, weight)` for every nonzero entry.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let d = self.dim();
        (0..d).flat_map(move |i| {
            (0..d).filter_map(move |j| {
                let w = self.weights[[i, j]];
                (w != 0.0).then_some((i, j, w))
            })
        })
    }

    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    /// 0/1 adjacency pattern.
    pub fn adjacency(&self) -> Array2<f64> {
        self.weights.mapv(|w| if w != 0.0 { 1.0 } else { 0.0 })
    }

    /// A topological order of the nodes (parents before children).
    pub fn topological_order(&self) -> Vec<usize> {
        topological_order_of(&self.weights.view())
            .expect("WeightedDag invariant guarantees acyclicity")
    }
}

/// True iff the nonzero pattern of a square matrix has no directed cycle.
/// Uses Kahn's algorithm on the induced digraph.
pub fn is_acyclic(m: &ArrayView2<f64>) -> Result<bool> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(topological_order_of(m).is_some())
}

fn topological_order_of(m: &ArrayView2<f64>) -> Option<Vec<usize>> {
    let d = m.nrows();
    let mut indegree = vec![0usize; d];
    for j in 0..d {
        for i in 0..d {
            if m[[i, j]] != 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..d).filter(|&j| indegree[j] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(node) = queue.pop() {
        order.push(node);
        for j in 0..d {
            if m[[node, j]] != 0.0 {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push(j);
                }
            }
        }
    }
    (order.len() == d).then_some(order)
}

/// The smooth acyclicity measure `h(m) = Tr(exp(m ∘ m)) - d` and its gradient
/// `2 * exp(m ∘ m)^T ∘ m`, where `∘` is the elementwise product.
///
/// `h >= 0` always, and `h = 0` exactly when the nonzero pattern is acyclic.
pub fn h_acyclicity(m: &ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    let d = m.nrows();
    if d != m.ncols() {
        return Err(Error::NonSquare {
            rows: d,
            cols: m.ncols(),
        });
    }
    let squared = m.mapv(|v| v * v);
    let e = matrix_exp(&squared.view());
    let value = e.diag().sum() - d as f64;
    let grad = 2.0 * &e.t().to_owned() * m;
    Ok((value, grad))
}

/// Zeroes entries below `threshold` in magnitude, then removes the smallest
/// surviving entry repeatedly until the pattern is acyclic.
pub fn threshold_to_dag(m: &ArrayView2<f64>, threshold: f64) -> Result<WeightedDag> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let mut w = m.mapv(|v| if v.abs() < threshold { 0.0 } else { v });
    while !is_acyclic(&w.view())? {
        let mut min_pos = None;
        let mut min_abs = f64::INFINITY;
        for ((i, j), &v) in w.indexed_iter() {
            if v != 0.0 && v.abs() < min_abs {
                min_abs = v.abs();
                min_pos = Some((i, j));
            }
        }
        let (i, j) = min_pos.expect("cyclic pattern must have a nonzero entry");
        w[[i, j]] = 0.0;
    }
    WeightedDag::into_dag(w)
}

/// A completed partially directed acyclic graph: the canonical representative
/// of a Markov equivalence class. Compelled edges stay directed, reversible
/// edges are undirected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpdag {
    d: usize,
    directed: BTreeSet<(usize, usize)>,
    undirected: BTreeSet<(usize, usize)>,
}

impl Cpdag {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn directed_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.directed
    }

    /// Undirected edges stored as `(min, max)` pairs.
    pub fn undirected_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.undirected
    }

    /// Orientation class of the pair `(i, j)` with `i < j`.
    pub fn pair_state(&self, i: usize, j: usize) -> PairState {
        debug_assert!(i < j);
        if self.undirected.contains(&(i, j)) {
            PairState::Undirected
        } else if self.directed.contains(&(i, j)) {
            PairState::Forward
        } else if self.directed.contains(&(j, i)) {
            PairState::Backward
        } else {
            PairState::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairState {
    None,
    Forward,
    Backward,
    Undirected,
}

/// Converts a DAG to the CPDAG of its Markov equivalence class: orient
/// v-structures, close under the Meek rules, leave the rest undirected.
pub fn dag_to_cpdag(g: &WeightedDag) -> Cpdag {
    let d = g.dim();
    let w = g.weights();
    let mut adj = vec![vec![false; d]; d];
    for (i, j, _) in g.edges() {
        adj[i][j] = true;
        adj[j][i] = true;
    }
    let mut dir = vec![vec![false; d]; d];

    // V-structures: a -> j <- b with a, b non-adjacent are compelled.
    for j in 0..d {
        let parents: Vec<usize> = (0..d).filter(|&i| w[[i, j]] != 0.0).collect();
        for (pi, &a) in parents.iter().enumerate() {
            for &b in parents.iter().skip(pi + 1) {
                if !adj[a][b] {
                    dir[a][j] = true;
                    dir[b][j] = true;
                }
            }
        }
    }

    let und = |adj: &Vec<Vec<bool>>, dir: &Vec<Vec<bool>>, x: usize, y: usize| {
        adj[x][y] && !dir[x][y] && !dir[y][x]
    };

    // Meek rules R1-R3 to a fixed point. R4 is only needed with background
    // knowledge, which never arises when starting from a DAG's v-structures.
    let mut changed = true;
    while changed {
        changed = false;
        for a in 0..d {
            for b in 0..d {
                if dir[a][b] {
                    // R1: a -> b, b - c, a and c non-adjacent => b -> c.
                    for c in 0..d {
                        if c != a && und(&adj, &dir, b, c) && !adj[a][c] {
                            dir[b][c] = true;
                            changed = true;
                        }
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..d {
                if !und(&adj, &dir, a, b) {
                    continue;
                }
                // R2: a -> c -> b with a - b => a -> b.
                let chain = (0..d).any(|c| dir[a][c] && dir[c][b]);
                if chain {
                    dir[a][b] = true;
                    changed = true;
                    continue;
                }
                // R3: a - c -> b and a - e -> b with c, e non-adjacent => a -> b.
                let mut fires = false;
                for c in 0..d {
                    if !(und(&adj, &dir, a, c) && dir[c][b]) {
                        continue;
                    }
                    for e in (c + 1)..d {
                        if und(&adj, &dir, a, e) && dir[e][b] && !adj[c][e] {
                            fires = true;
                            break;
                        }
                    }
                    if fires {
                        break;
                    }
                }
                if fires {
                    dir[a][b] = true;
                    changed = true;
                }
            }
        }
    }

    let mut directed = BTreeSet::new();
    let mut undirected = BTreeSet::new();
    for i in 0..d {
        for j in 0..d {
            if dir[i][j] {
                directed.insert((i, j));
            } else if i < j && adj[i][j] && !dir[j][i] {
                undirected.insert((i, j));
            }
        }
    }
    Cpdag {
        d,
        directed,
        undirected,
    }
}
