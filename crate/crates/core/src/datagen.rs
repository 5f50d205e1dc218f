//! Synthetic ground truth: random graphs, SEM parameterization, sampling,
//! and missingness masking.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::graph::{is_acyclic, WeightedDag};
use crate::model::{MlpNode, MlpSem, NoiseFamily, SemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphModel {
    /// Erdos-Renyi: a fixed number of node pairs chosen uniformly, oriented
    /// by a random permutation.
    Er,
    /// Scale-free: Barabasi-Albert preferential attachment, old nodes point
    /// to new ones, node labels shuffled afterwards.
    Sf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub d: usize,
    /// Expected edges per node; the graph carries about `k*d` edges.
    pub k: f64,
    pub model: GraphModel,
    pub seed: u64,
}

impl GraphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config("graph needs at least 2 nodes".into()));
        }
        if self.k < 1.0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !self.k.is_finite() {
            return Err(Error::Config("k must be finite".into()));
        }
        Ok(())
    }

    /// Requested edges, capped at the number of node pairs (a 2-node graph
    /// with k = 1 carries its single possible edge).
    pub fn edge_target(&self) -> usize {
        let max_edges = self.d * (self.d - 1) / 2;
        ((self.k * self.d as f64).floor() as usize).min(max_edges)
    }
}

/// Samples a DAG skeleton (0/1 matrix) according to the spec. Deterministic
/// in the spec's seed.
pub fn sample_graph(spec: &GraphSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.d;
    let skeleton = match spec.model {
        GraphModel::Er => {
            let mut pairs: Vec<(usize, usize)> = (0..d)
                .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
                .collect();
            pairs.shuffle(&mut rng);
            pairs.truncate(spec.edge_target());
            let order = random_permutation(d, &mut rng);
            let mut pos = vec![0usize; d];
            for (p, &node) in order.iter().enumerate() {
                pos[node] = p;
            }
            let mut m = Array2::zeros((d, d));
            for (a, b) in pairs {
                if pos[a] < pos[b] {
                    m[[a, b]] = 1.0;
                } else {
                    m[[b, a]] = 1.0;
                }
            }
            m
        }
        GraphModel::Sf => {
            let k = (spec.k.round() as usize).max(1);
            // Preferential attachment using a repeated-node bag; every new
            // node attaches to up to k distinct earlier nodes.
            let mut bag: Vec<usize> = vec![0];
            let mut edges: Vec<(usize, usize)> = Vec::new();
            for t in 1..d {
                let m_t = k.min(t);
                let mut targets = Vec::with_capacity(m_t);
                while targets.len() < m_t {
                    let pick = bag[rng.random_range(0..bag.len())];
                    if !targets.contains(&pick) {
                        targets.push(pick);
                    }
                }
                for &old in &targets {
                    edges.push((old, t));
                    bag.push(old);
                }
                bag.push(t);
            }
            let relabel = random_permutation(d, &mut rng);
            let mut m = Array2::zeros((d, d));
            for (old, new) in edges {
                m[[relabel[old], relabel[new]]] = 1.0;
            }
            m
        }
    };
    debug_assert!(is_acyclic(&skeleton.view())?);
    Ok(skeleton)
}

fn random_permutation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    order
}

/// One draw from Uniform([-2,-0.5] ∪ [0.5,2]) with equal interval probability.
pub fn sample_edge_weight<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let magnitude = 0.5 + 1.5 * rng.random::<f64>();
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Assigns random weights to a skeleton's edges, row-major draw order.
pub fn sample_weights<R: Rng + ?Sized>(skeleton: &Array2<f64>, rng: &mut R) -> Result<WeightedDag> {
    if !is_acyclic(&skeleton.view())? {
        return Err(Error::Cyclic);
    }
    let mut w = Array2::zeros(skeleton.dim());
    for ((i, j), s) in skeleton.indexed_iter() {
        if *s != 0.0 {
            w[[i, j]] = sample_edge_weight(rng);
        }
    }
    WeightedDag::into_dag(w)
}

/// Builds a random per-node MLP respecting the skeleton: node `j`'s hidden
/// layer reads only its parents; root nodes get no function. Weights share
/// the edge-weight distribution; no biases.
pub fn random_mlp_sem<R: Rng + ?Sized>(
    skeleton: &Array2<f64>,
    hidden: usize,
    rng: &mut R,
) -> Result<MlpSem> {
    if !is_acyclic(&skeleton.view())? {
        return Err(Error::Cyclic);
    }
    let d = skeleton.nrows();
    let mut nodes = Vec::with_capacity(d);
    for j in 0..d {
        let parents: Vec<usize> = (0..d).filter(|&i| skeleton[[i, j]] != 0.0).collect();
        if parents.is_empty() {
            nodes.push(None);
            continue;
        }
        let mut w1 = Array2::zeros((hidden, d));
        for h in 0..hidden {
            for &p in &parents {
                w1[[h, p]] = sample_edge_weight(rng);
            }
        }
        let w2 = Array1::from_shape_fn(hidden, |_| sample_edge_weight(rng));
        nodes.push(Some(MlpNode {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: 0.0,
        }));
    }
    Ok(MlpSem { d, nodes })
}

fn sample_noise<R: Rng + ?Sized>(family: NoiseFamily, scale: f64, rng: &mut R) -> f64 {
    match family {
        NoiseFamily::GaussianEv | NoiseFamily::GaussianNv => {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        }
        NoiseFamily::Gumbel => Gumbel::new(0.0, scale)
            .expect("positive scale")
            .sample(rng),
        NoiseFamily::Laplace => {
            // Inverse CDF; not provided by rand_distr.
            let u: f64 = rng.random::<f64>() - 0.5;
            -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }
        NoiseFamily::Exponential => {
            let u: f64 = rng.random();
            -scale * (1.0 - u).ln()
        }
    }
}

/// Simulates `n` samples in topological order: `x_j = f_j(x) + z_j`.
/// Noise is drawn column-by-column up front, so the draw sequence (and hence
/// bit-level output) does not depend on the topological order chosen.
pub fn simulate_sem<R: Rng + ?Sized>(model: &SemModel, n: usize, rng: &mut R) -> Result<Array2<f64>> {
    let d = model.dim();
    let structure = model.f.structure();
    if !is_acyclic(&structure.view())? {
        return Err(Error::Cyclic);
    }
    let mut noise = Array2::zeros((n, d));
    for j in 0..d {
        let scale = model.noise.scales()[j];
        for i in 0..n {
            noise[[i, j]] = sample_noise(model.noise.family, scale, rng);
        }
    }
    let order = topo_order(&structure)?;
    let mut x = Array2::zeros((n, d));
    for &j in &order {
        match &model.f {
            crate::model::SemFunction::Linear(w) => {
                let coef = w.column(j);
                for i in 0..n {
                    x[[i, j]] = x.row(i).dot(&coef) + noise[[i, j]];
                }
            }
            crate::model::SemFunction::Mlp(mlp) => {
                if let Some(node) = &mlp.nodes[j] {
                    let vals = node.eval_batch(&x);
                    for i in 0..n {
                        x[[i, j]] = vals[i] + noise[[i, j]];
                    }
                } else {
                    for i in 0..n {
                        x[[i, j]] = noise[[i, j]];
                    }
                }
            }
        }
    }
    Ok(x)
}

fn topo_order(structure: &Array2<f64>) -> Result<Vec<usize>> {
    let d = structure.nrows();
    let mut indeg = vec![0usize; d];
    for j in 0..d {
        for i in 0..d {
            if structure[[i, j]] != 0.0 {
                indeg[j] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..d).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(d);
    while let Some(v) = queue.pop() {
        order.push(v);
        for j in 0..d {
            if structure[[v, j]] != 0.0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push(j);
                }
            }
        }
    }
    if order.len() != d {
        return Err(Error::Cyclic);
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    /// Target missing rate over maskable cells, in [0, 1).
    pub rate: f64,
    /// Fraction of columns kept fully observed under MAR/MNAR.
    pub fully_observed_fraction: f64,
    /// Optional fixed logistic weights (one per variable); random when None.
    pub logistic_weights: Option<Array1<f64>>,
}

impl MissingnessSpec {
    pub fn new(mechanism: Mechanism, rate: f64) -> Result<Self> {
        let spec = MissingnessSpec {
            mechanism,
            rate,
            fully_observed_fraction: 0.3,
            logistic_weights: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "missing rate {} must be in [0, 1)",
                self.rate
            )));
        }
        if self.mechanism != Mechanism::Mcar
            && !(0.0..=1.0).contains(&self.fully_observed_fraction)
        {
            return Err(Error::Config(
                "fully_observed_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

const MCAR_ROW_RETRIES: usize = 1000;

/// Masks a complete matrix according to the mechanism.
///
/// MCAR masks each cell independently with probability `rate`. MAR keeps a
/// random set of columns fully observed and masks the rest through a logistic
/// model on the observed columns; MNAR self-masks each remaining column
/// through a logistic model on its own value. For MAR/MNAR the intercept is
/// calibrated so the realized missing rate over maskable cells matches the
/// target exactly (up to integer rounding).
pub fn apply_missingness<R: Rng + ?Sized>(
    x: &Array2<f64>,
    spec: &MissingnessSpec,
    rng: &mut R,
) -> Result<MaskedDataset> {
    spec.validate()?;
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(Error::Shape("empty data matrix".into()));
    }
    let mut observed = Array2::from_elem((n, d), true);
    match spec.mechanism {
        Mechanism::Mcar => {
            for i in 0..n {
                let mut tries = 0;
                loop {
                    let mut any_observed = false;
                    for j in 0..d {
                        let keep = rng.random::<f64>() > spec.rate;
                        observed[[i, j]] = keep;
                        any_observed |= keep;
                    }
                    if any_observed || spec.rate == 0.0 {
                        break;
                    }
                    tries += 1;
                    if tries >= MCAR_ROW_RETRIES {
                        return Err(Error::Masking(format!(
                            "row {i} resampled {MCAR_ROW_RETRIES} times without an observed cell"
                        )));
                    }
                }
            }
        }
        Mechanism::Mar => {
            let n_full = ((spec.fully_observed_fraction * d as f64).ceil() as usize)
                .clamp(1, d);
            if n_full == d {
                return Err(Error::Masking(
                    "all columns marked fully observed; nothing to mask".into(),
                ));
            }
            let mut cols: Vec<usize> = (0..d).collect();
            cols.shuffle(rng);
            let (full_cols, mask_cols) = cols.split_at(n_full);
            let weights = logistic_weights(spec, full_cols.len(), rng);
            // Row score shared by all maskable cells in that row.
            let mut scores = Array1::zeros(n);
            for i in 0..n {
                let mut s = 0.0;
                for (widx, &c) in full_cols.iter().enumerate() {
                    s += weights[widx] * x[[i, c]];
                }
                scores[i] = s;
            }
            let mut cells = Vec::with_capacity(n * mask_cols.len());
            for &c in mask_cols {
                for i in 0..n {
                    cells.push((i, c, scores[i]));
                }
            }
            mask_by_logistic(&cells, spec.rate, rng, &mut observed)?;
        }
        Mechanism::Mnar => {
            let n_full = ((spec.fully_observed_fraction * d as f64).ceil() as usize)
                .clamp(1, d);
            if n_full == d {
                return Err(Error::Masking(
                    "all columns marked fully observed; nothing to mask".into(),
                ));
            }
            let mut cols: Vec<usize> = (0..d).collect();
            cols.shuffle(rng);
            let mask_cols = &cols[n_full..];
            let weights = logistic_weights(spec, mask_cols.len(), rng);
            // Self-masking: calibrate per column so each column hits the rate.
            for (widx, &c) in mask_cols.iter().enumerate() {
                let cells: Vec<(usize, usize, f64)> =
                    (0..n).map(|i| (i, c, weights[widx] * x[[i, c]])).collect();
                mask_by_logistic(&cells, spec.rate, rng, &mut observed)?;
            }
        }
    }
    MaskedDataset::new(x.clone(), observed)
}

fn logistic_weights<R: Rng + ?Sized>(
    spec: &MissingnessSpec,
    len: usize,
    rng: &mut R,
) -> Vec<f64> {
    match &spec.logistic_weights {
        Some(w) => (0..len).map(|i| w[i % w.len()]).collect(),
        None => (0..len)
            .map(|_| {
                let magnitude = 1.0 + rng.random::<f64>();
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect(),
    }
}

/// Masks cells with probability `sigmoid(score + b)`, choosing the intercept
/// `b` so that exactly `round(rate * cells)` cells end up masked.
///
/// Cell (i, j, score) is masked iff `u_ij < sigmoid(score + b)`, i.e. iff
/// `b > logit(u_ij) - score`; selecting the intercept between the target-th
/// and next order statistics of those critical values realizes the target
/// count exactly, which is the bisection's fixed point without iteration.
fn mask_by_logistic<R: Rng + ?Sized>(
    cells: &[(usize, usize, f64)],
    rate: f64,
    rng: &mut R,
    observed: &mut Array2<bool>,
) -> Result<()> {
    let total = cells.len();
    let target = (rate * total as f64).round() as usize;
    if target == 0 {
        return Ok(());
    }
    let mut criticals: Vec<(f64, usize)> = cells
        .iter()
        .enumerate()
        .map(|(idx, &(_, _, score))| {
            let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
            let logit = (u / (1.0 - u)).ln();
            (logit - score, idx)
        })
        .collect();
    criticals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for &(_, idx) in criticals.iter().take(target) {
        let (i, j, _) = cells[idx];
        observed[[i, j]] = false;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NoiseSpec, SemFunction};
    use ndarray::array;

    #[test]
    fn er_graph_has_exact_edge_count_and_is_acyclic() {
        let spec = GraphSpec {
            d: 10,
            k: 1.0,
            model: GraphModel::Er,
            seed: 5,
        };
        let m = sample_graph(&spec).unwrap();
        let edges = m.iter().filter(|v| **v != 0.0).count();
        assert_eq!(edges, 10);
        assert!(is_acyclic(&m.view()).unwrap());
    }

    #[test]
    fn two_node_graph_is_the_single_edge() {
        let spec = GraphSpec {
            d: 2,
            k: 1.0,
            model: GraphModel::Er,
            seed: 0,
        };
        let m = sample_graph(&spec).unwrap();
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn fixed_seed_reproduces_graph() {
        for model in [GraphModel::Er, GraphModel::Sf] {
            let spec = GraphSpec {
                d: 12,
                k: 2.0,
                model,
                seed: 77,
            };
            let a = sample_graph(&spec).unwrap();
            let b = sample_graph(&spec).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sf_graph_acyclic_with_roughly_kd_edges() {
        let spec = GraphSpec {
            d: 20,
            k: 2.0,
            model: GraphModel::Sf,
            seed: 3,
        };
        let m = sample_graph(&spec).unwrap();
        assert!(is_acyclic(&m.view()).unwrap());
        let edges = m.iter().filter(|v| **v != 0.0).count();
        // sum_t min(k, t) = kd - k(k+1)/2 for d > k.
        assert_eq!(edges, 2 * 20 - 3);
    }

    #[test]
    fn oversized_edge_request_caps_at_all_pairs() {
        let spec = GraphSpec {
            d: 3,
            k: 2.0,
            model: GraphModel::Er,
            seed: 0,
        };
        let m = sample_graph(&spec).unwrap();
        assert_eq!(m.iter().filter(|v| **v != 0.0).count(), 3);
        assert!(is_acyclic(&m.view()).unwrap());
    }

    #[test]
    fn invalid_specs_rejected() {
        for (d, k) in [(1usize, 1.0f64), (5, 0.5), (5, f64::INFINITY)] {
            let spec = GraphSpec {
                d,
                k,
                model: GraphModel::Er,
                seed: 0,
            };
            assert!(sample_graph(&spec).is_err(), "d={d} k={k}");
        }
    }

    #[test]
    fn weights_live_in_the_stated_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let skeleton = sample_graph(&GraphSpec {
            d: 15,
            k: 2.0,
            model: GraphModel::Er,
            seed: 9,
        })
        .unwrap();
        let g = sample_weights(&skeleton, &mut rng).unwrap();
        for (_, _, w) in g.edges() {
            assert!((0.5..=2.0).contains(&w.abs()), "weight {w}");
        }
    }

    #[test]
    fn weight_signs_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut negatives = 0usize;
        let total = 10_000;
        for _ in 0..total {
            if sample_edge_weight(&mut rng) < 0.0 {
                negatives += 1;
            }
        }
        let fraction = negatives as f64 / total as f64;
        assert!((fraction - 0.5).abs() < 0.02, "fraction {fraction}");
    }

    #[test]
    fn empty_skeleton_gives_zero_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = sample_weights(&Array2::zeros((4, 4)), &mut rng).unwrap();
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn simulate_fixed_seed_is_bit_reproducible() {
        let w = array![[0.0, 1.5], [0.0, 0.0]];
        let model = SemModel::new(
            SemFunction::Linear(w),
            NoiseSpec::equal(NoiseFamily::GaussianEv, 1.0, 2).unwrap(),
        )
        .unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let a = simulate_sem(&model, 50, &mut r1).unwrap();
        let b = simulate_sem(&model, 50, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rate_zero_masks_nothing() {
        let x = Array2::from_elem((5, 3), 1.0);
        let spec = MissingnessSpec::new(Mechanism::Mcar, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = apply_missingness(&x, &spec, &mut rng).unwrap();
        assert_eq!(data.n_missing(), 0);
    }

    #[test]
    fn mcar_hits_target_rate() {
        let x = Array2::from_shape_fn((1000, 100), |(i, j)| (i * j) as f64);
        let spec = MissingnessSpec::new(Mechanism::Mcar, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = apply_missingness(&x, &spec, &mut rng).unwrap();
        let frac = data.missing_fraction();
        assert!((frac - 0.3).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn mar_keeps_designated_columns_fully_observed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((200, 10), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let spec = MissingnessSpec::new(Mechanism::Mar, 0.2).unwrap();
        let data = apply_missingness(&x, &spec, &mut rng).unwrap();
        let mut fully_observed = 0usize;
        for j in 0..10 {
            if (0..200).all(|i| data.is_observed(i, j)) {
                fully_observed += 1;
            }
        }
        assert_eq!(fully_observed, 3);
        // Realized rate over maskable cells matches the target.
        let miss = data.n_missing() as f64;
        let maskable = (200 * 7) as f64;
        assert!((miss / maskable - 0.2).abs() < 0.01);
    }

    #[test]
    fn mnar_calibrates_each_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((500, 10), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let spec = MissingnessSpec::new(Mechanism::Mnar, 0.25).unwrap();
        let data = apply_missingness(&x, &spec, &mut rng).unwrap();
        for j in 0..10 {
            let miss = (0..500).filter(|&i| !data.is_observed(i, j)).count();
            assert!(miss == 0 || (miss as f64 / 500.0 - 0.25).abs() < 0.01);
        }
    }
}
