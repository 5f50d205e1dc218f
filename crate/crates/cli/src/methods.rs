//! Benchmark methods: the EM learner and the impute-then-fit baselines,
//! plus the per-cell data pipeline shared by `bench` and `generate`.

use missdag::baselines::{gaussian_em_impute, listwise_delete, mean_impute};
use missdag::data::MaskedDataset;
use missdag::datagen::{
    apply_missingness, random_mlp_sem, sample_graph, sample_weights, simulate_sem,
};
use missdag::em::{complete_data_fit, run_missdag, EmConfig};
use missdag::model::{NoiseSpec, SemFunction, SemModel};
use missdag::seed::derive_seed;
use missdag::{Error, WeightedDag};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentSpec;
use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MissDag,
    MeanImpute,
    GaussianEmImpute,
    Listwise,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self, AppError> {
        match name {
            "missdag" => Ok(Method::MissDag),
            "mean" | "mean_impute" => Ok(Method::MeanImpute),
            "gaussian_em" | "gaussian_em_impute" => Ok(Method::GaussianEmImpute),
            "listwise" | "listwise_deletion" => Ok(Method::Listwise),
            other => Err(AppError::config(format!("unknown method {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::MissDag => "missdag",
            Method::MeanImpute => "mean",
            Method::GaussianEmImpute => "gaussian_em",
            Method::Listwise => "listwise",
        }
    }
}

/// Ground truth plus data for one benchmark cell.
pub struct CellData {
    pub truth: WeightedDag,
    pub clean: Array2<f64>,
    pub masked: MaskedDataset,
}

/// Seed streams: the graph, weights, data, and mask draws are separate
/// deterministic functions of the repeat seed, so every method at a given
/// (seed, mechanism, rate) sees the same dataset.
pub fn generate_cell(
    spec: &ExperimentSpec,
    seed: u64,
    mechanism: &str,
    rate: f64,
) -> Result<CellData, AppError> {
    let graph_spec = spec.graph_spec(derive_seed(seed, 0x6772_6170))?;
    let skeleton = sample_graph(&graph_spec).map_err(AppError::runtime_from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7765_6967));

    let family = spec.noise_family()?;
    let d = spec.graph.d;
    let noise = if spec.sem.equal_scale {
        NoiseSpec::equal(family, spec.sem.noise_scale, d)
    } else {
        NoiseSpec::sample_scales(family, d, &mut rng)
    }
    .map_err(AppError::runtime_from)?;

    let (truth, f) = match spec.sem.function.as_str() {
        "linear" => {
            let dag = sample_weights(&skeleton, &mut rng).map_err(AppError::runtime_from)?;
            let f = SemFunction::Linear(dag.weights().clone());
            (dag, f)
        }
        "mlp" => {
            let mlp = random_mlp_sem(&skeleton, spec.sem.gen_hidden, &mut rng)
                .map_err(AppError::runtime_from)?;
            let truth =
                WeightedDag::into_dag(skeleton.clone()).map_err(AppError::runtime_from)?;
            (truth, SemFunction::Mlp(mlp))
        }
        other => return Err(AppError::config(format!("unknown sem.function {other:?}"))),
    };
    let model = SemModel::new(f, noise).map_err(AppError::runtime_from)?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6461_7461));
    let clean = simulate_sem(&model, spec.sem.n, &mut data_rng).map_err(AppError::runtime_from)?;

    let miss_spec = spec.missingness_spec(mechanism, rate)?;
    let mask_stream = derive_seed(seed, mask_stream_id(mechanism, rate));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_stream);
    let masked =
        apply_missingness(&clean, &miss_spec, &mut mask_rng).map_err(AppError::runtime_from)?;
    Ok(CellData {
        truth,
        clean,
        masked,
    })
}

fn mask_stream_id(mechanism: &str, rate: f64) -> u64 {
    let mut id = rate.to_bits();
    for b in mechanism.bytes() {
        id = id.wrapping_mul(31).wrapping_add(b as u64);
    }
    id
}

pub struct MethodOutput {
    pub graph: WeightedDag,
}

/// Runs one method on masked data under a shared EM configuration.
pub fn run_method(
    method: Method,
    data: &MaskedDataset,
    cfg: &EmConfig,
) -> Result<MethodOutput, Error> {
    match method {
        Method::MissDag => {
            let trace = run_missdag(data, cfg)?;
            Ok(MethodOutput {
                graph: trace.final_dag,
            })
        }
        Method::MeanImpute => {
            let imputed = mean_impute(data)?;
            let fit = complete_data_fit(&imputed.x, cfg)?;
            Ok(MethodOutput { graph: fit.dag })
        }
        Method::GaussianEmImpute => {
            let (imputed, _) = gaussian_em_impute(data, cfg.em_iters)?;
            let fit = complete_data_fit(&imputed.x, cfg)?;
            Ok(MethodOutput { graph: fit.dag })
        }
        Method::Listwise => {
            let kept = listwise_delete(data);
            if kept.nrows() < data.d().max(2) {
                return Err(Error::Numeric(format!(
                    "listwise deletion kept {} of {} rows; too few to fit",
                    kept.nrows(),
                    data.n()
                )));
            }
            let fit = complete_data_fit(&kept, cfg)?;
            Ok(MethodOutput { graph: fit.dag })
        }
    }
}
