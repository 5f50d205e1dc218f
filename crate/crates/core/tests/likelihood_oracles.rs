//! Independent-density oracles: the noise-space joint density must agree
//! with the dense multivariate Gaussian it implies, the Jacobian determinant
//! of an acyclic system is exactly one, and the sufficient-statistic
//! likelihood is consistent with sample averages of the joint density.

mod common;

use missdag::datagen::{sample_graph, sample_weights, simulate_sem, GraphModel, GraphSpec};
use missdag::estep::SufficientStats;
use missdag::likelihood::{
    gaussian_suffstat_loglik, joint_logdensity, DensityKind, NoiseDensity, LN_2PI,
};
use missdag::linalg::{det, inverse};
use missdag::model::{NoiseFamily, NoiseSpec, SemFunction, SemModel};
use missdag::{GaussianParams, ResidualModel};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dag_weights(d: usize, seed: u64) -> Array2<f64> {
    let spec = GraphSpec {
        d,
        k: 2.0_f64.min((d - 1) as f64 / 2.0).max(1.0),
        model: GraphModel::Er,
        seed,
    };
    let skeleton = sample_graph(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    sample_weights(&skeleton, &mut rng)
        .unwrap()
        .into_weights()
}

/// Dense zero-mean multivariate Gaussian log-density.
fn mvn_logpdf(x: &Array1<f64>, sigma: &Array2<f64>) -> f64 {
    let d = x.len();
    let inv = inverse(&sigma.view()).unwrap();
    let quad = x.dot(&inv.dot(x));
    let logdet = det(&sigma.view()).unwrap().ln();
    -0.5 * (d as f64 * LN_2PI + logdet + quad)
}

#[test]
fn joint_logdensity_matches_dense_gaussian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..50 {
        let d = 2 + trial % 5;
        let w = random_dag_weights(d, 100 + trial as u64);
        let noise_var = Array1::from_shape_fn(d, |_| 0.5 + rng.random::<f64>());
        let params = GaussianParams::new(w.clone(), noise_var.clone()).unwrap();
        let sigma = params.sigma_x().unwrap();
        let theta = ResidualModel::new(
            SemFunction::Linear(w),
            NoiseDensity::new(DensityKind::Gaussian),
            noise_var.mapv(f64::sqrt),
        )
        .unwrap();
        for _ in 0..5 {
            let x = Array1::from_shape_fn(d, |_| rng.random::<f64>() * 4.0 - 2.0);
            let noise_space = joint_logdensity(&theta, &x.view());
            let dense = mvn_logpdf(&x, &sigma);
            assert!(
                (noise_space - dense).abs() < 1e-8,
                "d={d}: {noise_space} vs {dense}"
            );
        }
    }
}

#[test]
fn acyclic_jacobian_determinant_is_one() {
    for trial in 0..100 {
        let d = 2 + trial % 19;
        let w = random_dag_weights(d, 500 + trial as u64);
        let i_minus_w = Array2::eye(d) - &w;
        let dt = det(&i_minus_w.view()).unwrap();
        assert!((dt.abs() - 1.0).abs() < 1e-9, "d={d}: |det| = {}", dt.abs());
    }
}

#[test]
fn non_ancestor_shift_leaves_other_residual_terms_unchanged() {
    // Markov factorization: changing a node's value only moves its own and
    // its children's residual terms; with no children, only its own.
    let w = ndarray::array![[0.0, 1.2, 0.0], [0.0, 0.0, 0.8], [0.0, 0.0, 0.0]];
    let theta = ResidualModel::new(
        SemFunction::Linear(w),
        NoiseDensity::new(DensityKind::Gaussian),
        ndarray::array![1.0, 1.0, 1.0],
    )
    .unwrap();
    let base = ndarray::array![0.3, -0.7, 1.1];
    // Node 2 is a sink: shifting it changes only its own term.
    let mut shifted = base.clone();
    shifted[2] += 5.0;
    let term = |x: &Array1<f64>, j: usize| {
        let r = x[j] - theta.f().eval_node(j, &x.view());
        NoiseDensity::new(DensityKind::Gaussian).logpdf(r)
    };
    for j in 0..2 {
        assert!((term(&base, j) - term(&shifted, j)).abs() < 1e-14);
    }
}

#[test]
fn suffstat_loglik_at_truth_matches_monte_carlo_average() {
    let d = 4;
    let w = random_dag_weights(d, 777);
    let noise_var = Array1::from_elem(d, 1.0);
    let model = SemModel::new(
        SemFunction::Linear(w.clone()),
        NoiseSpec::equal(NoiseFamily::GaussianEv, 1.0, d).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 100_000;
    let x = simulate_sem(&model, n, &mut rng).unwrap();
    let t = SufficientStats::from_complete(&x).unwrap();
    let params = GaussianParams::new(w.clone(), noise_var.clone()).unwrap();
    let from_stats = gaussian_suffstat_loglik(&t, &params).unwrap();

    let theta = ResidualModel::new(
        SemFunction::Linear(w),
        NoiseDensity::new(DensityKind::Gaussian),
        noise_var.mapv(f64::sqrt),
    )
    .unwrap();
    let mc_average: f64 = x
        .rows()
        .into_iter()
        .map(|row| joint_logdensity(&theta, &row))
        .sum::<f64>()
        / n as f64;
    assert!(
        (from_stats - mc_average).abs() < 0.01,
        "{from_stats} vs {mc_average}"
    );
}

#[test]
fn linear_gaussian_child_variance_example() {
    // X2 = 1.5 X1 + Z with unit noises: Var(X2) = 1.5^2 + 1 = 3.25.
    let w = ndarray::array![[0.0, 1.5], [0.0, 0.0]];
    let model = SemModel::new(
        SemFunction::Linear(w),
        NoiseSpec::equal(NoiseFamily::GaussianEv, 1.0, 2).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = simulate_sem(&model, 10_000, &mut rng).unwrap();
    let var: f64 = x.column(1).iter().map(|v| v * v).sum::<f64>() / 10_000.0;
    assert!((var - 3.25).abs() < 0.15, "sample variance {var}");
}

#[test]
fn empty_graph_columns_are_uncorrelated() {
    let d = 4;
    let model = SemModel::new(
        SemFunction::Linear(Array2::zeros((d, d))),
        NoiseSpec::equal(NoiseFamily::GaussianEv, 1.0, d).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 20_000;
    let x = simulate_sem(&model, n, &mut rng).unwrap();
    let bound = 4.0 / (n as f64).sqrt();
    for a in 0..d {
        for b in (a + 1)..d {
            let cov: f64 = x
                .column(a)
                .iter()
                .zip(x.column(b).iter())
                .map(|(u, v)| u * v)
                .sum::<f64>()
                / n as f64;
            assert!(cov.abs() < bound, "cov({a},{b}) = {cov}");
        }
    }
}

#[test]
fn gumbel_noise_has_the_right_skewness() {
    // Skewness of a Gumbel is 12 sqrt(6) zeta(3) / pi^3 ~ 1.1395,
    // independent of location and scale.
    let d = 1;
    let model = SemModel::new(
        SemFunction::Linear(Array2::zeros((d, d))),
        NoiseSpec::equal(NoiseFamily::Gumbel, 1.0, d).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let n = 200_000;
    let x = simulate_sem(&model, n, &mut rng).unwrap();
    let col = x.column(0);
    let mean = col.sum() / n as f64;
    let m2 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let m3 = col.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
    let skew = m3 / m2.powf(1.5);
    assert!((skew - 1.1395).abs() < 0.1, "sample skewness {skew}");
}

#[test]
fn mcar_mask_is_independent_of_values() {
    use missdag::datagen::{apply_missingness, Mechanism, MissingnessSpec};
    let n = 2_000;
    let d = 10;
    let model = SemModel::new(
        SemFunction::Linear(Array2::zeros((d, d))),
        NoiseSpec::equal(NoiseFamily::GaussianEv, 1.0, d).unwrap(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let x = simulate_sem(&model, n, &mut rng).unwrap();
    let spec = MissingnessSpec::new(Mechanism::Mcar, 0.3).unwrap();
    let data = apply_missingness(&x, &spec, &mut rng).unwrap();
    // Correlation between the mask indicator and the value across all cells.
    let total = (n * d) as f64;
    let mask_mean = 1.0 - data.missing_fraction();
    let value_mean = x.sum() / total;
    let mut cov = 0.0;
    let mut var_mask = 0.0;
    let mut var_value = 0.0;
    for ((i, j), &v) in x.indexed_iter() {
        let m = if data.is_observed(i, j) { 1.0 } else { 0.0 };
        cov += (m - mask_mean) * (v - value_mean);
        var_mask += (m - mask_mean).powi(2);
        var_value += (v - value_mean).powi(2);
    }
    let corr = cov / (var_mask.sqrt() * var_value.sqrt());
    assert!(corr.abs() < 4.0 / total.sqrt(), "correlation {corr}");
}
