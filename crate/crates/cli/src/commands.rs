//! Subcommand implementations other than the benchmark grid.

use std::path::Path;

use missdag::baselines::{gaussian_em_impute, listwise_delete, mean_impute};
use missdag::data::{
    default_column_names, read_edge_list_csv, read_matrix_csv, write_edge_list_csv,
    write_matrix_csv, MaskedDataset,
};
use missdag::datagen::{apply_missingness, MissingnessSpec};
use missdag::em::{run_missdag, EmConfig, EmTrace};
use missdag::linalg::frobenius_distance;
use missdag::metrics::{shd, shd_cpdag};
use missdag::mstep::SolverConfig;
use missdag::{threshold_to_dag, WeightedDag};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{self, ExperimentSpec};
use crate::methods::generate_cell;
use crate::{AppError, RunArgs};

pub fn generate(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<(), AppError> {
    let spec = ExperimentSpec::load(config_path)?;
    let seed = seed.unwrap_or(spec.run.seeds[0]);
    let mechanism = spec.missingness.mechanisms[0].clone();
    let rate = spec.missingness.rates[0];
    let cell = generate_cell(&spec, seed, &mechanism, rate)?;

    std::fs::create_dir_all(out).map_err(AppError::runtime_from)?;
    write_edge_list_csv(out.join("truth_graph.csv"), &cell.truth)
        .map_err(AppError::runtime_from)?;
    let names = default_column_names(spec.graph.d);
    write_matrix_csv(
        out.join("truth_graph_dense.csv"),
        cell.truth.weights(),
        &names,
    )
    .map_err(AppError::runtime_from)?;
    write_matrix_csv(out.join("data_clean.csv"), &cell.clean, &names)
        .map_err(AppError::runtime_from)?;
    cell.masked
        .write_csv(out.join("data_masked.csv"), &names)
        .map_err(AppError::runtime_from)?;

    let manifest = format!(
        "command = generate\nseed = {seed}\nmechanism = {mechanism}\nrate = {rate}\n\n\
         [graph]\nd = {}\nk = {}\nmodel = {}\n\n\
         [sem]\nfunction = {}\nnoise = {}\nn = {}\nnoise_scale = {}\nequal_scale = {}\n",
        spec.graph.d,
        spec.graph.k,
        spec.graph.model,
        spec.sem.function,
        spec.sem.noise,
        spec.sem.n,
        spec.sem.noise_scale,
        spec.sem.equal_scale,
    );
    std::fs::write(out.join("manifest.txt"), manifest).map_err(AppError::runtime_from)?;
    println!("wrote truth graph, clean data, masked data, manifest to {}", out.display());
    Ok(())
}

pub fn mask(
    data: &Path,
    mechanism: &str,
    rate: f64,
    fully_observed_fraction: f64,
    seed: u64,
    out: &Path,
) -> Result<(), AppError> {
    let (x, names) = read_matrix_csv(data).map_err(|e| AppError::config(e.to_string()))?;
    let mut spec = MissingnessSpec::new(config::parse_mechanism(mechanism)?, rate)
        .map_err(|e| AppError::config(e.to_string()))?;
    spec.fully_observed_fraction = fully_observed_fraction;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masked = apply_missingness(&x, &spec, &mut rng).map_err(AppError::runtime_from)?;
    masked.write_csv(out, &names).map_err(AppError::runtime_from)?;
    println!(
        "masked {} of {} cells ({:.1}%)",
        masked.n_missing(),
        masked.n() * masked.d(),
        100.0 * masked.missing_fraction()
    );
    Ok(())
}

pub fn impute(data: &Path, method: &str, iters: usize, out: &Path) -> Result<(), AppError> {
    let (masked, names) = MaskedDataset::load_csv(data).map_err(|e| AppError::config(e.to_string()))?;
    let completed = match method {
        "mean" => mean_impute(&masked).map_err(AppError::runtime_from)?.x,
        "gaussian-em" | "gaussian_em" => {
            gaussian_em_impute(&masked, iters)
                .map_err(AppError::runtime_from)?
                .0
                .x
        }
        "listwise" => listwise_delete(&masked),
        other => {
            return Err(AppError::config(format!(
                "impute method must be mean, gaussian-em, or listwise, got {other:?}"
            )))
        }
    };
    write_matrix_csv(out, &completed, &names).map_err(AppError::runtime_from)?;
    println!("wrote {} rows to {}", completed.nrows(), out.display());
    Ok(())
}

pub fn run(args: &RunArgs) -> Result<(), AppError> {
    let data = match (&args.data, &args.imputed_csv) {
        (Some(path), None) => {
            MaskedDataset::load_csv(path)
                .map_err(|e| AppError::config(e.to_string()))?
                .0
        }
        (None, Some(path)) => {
            let (x, _) = read_matrix_csv(path).map_err(|e| AppError::config(e.to_string()))?;
            MaskedDataset::from_complete(x).map_err(|e| AppError::config(e.to_string()))?
        }
        _ => {
            return Err(AppError::config(
                "exactly one of --data and --imputed-csv is required",
            ))
        }
    };
    let cfg = em_config_from_run_args(args)?;
    let trace = run_missdag(&data, &cfg).map_err(AppError::runtime_from)?;
    write_run_artifacts(&args.out, &trace, args.truth.as_deref(), cfg.solver.threshold)?;
    println!(
        "{} EM iteration(s), final graph has {} edge(s); artifacts in {}",
        trace.n_iterations(),
        trace.final_dag.edge_count(),
        args.out.display()
    );
    Ok(())
}

pub fn em_config_from_run_args(args: &RunArgs) -> Result<EmConfig, AppError> {
    let class = config::parse_model_class(&args.model_class)?;
    let mut solver = match args.solver.as_str() {
        "hard_al" => SolverConfig::for_class(class),
        "soft" => SolverConfig::soft(class),
        "exhaustive" => {
            let mut c = SolverConfig::for_class(class);
            c.method = missdag::mstep::SolverMethod::ExhaustiveExact;
            c
        }
        other => {
            return Err(AppError::config(format!(
                "--solver must be hard_al, soft, or exhaustive, got {other:?}"
            )))
        }
    };
    if let Some(l1) = args.lambda1 {
        solver.lambda1 = l1;
    }
    if let Some(l2) = args.lambda2 {
        solver.lambda2 = l2;
    }
    if let Some(t) = args.threshold {
        solver.threshold = t;
    }
    if let Some(h) = args.mlp_hidden {
        solver.mlp_hidden = h;
    }
    let mut cfg = EmConfig::new(solver).with_seed(args.seed);
    cfg.em_iters = args.em_iters;
    cfg.ns = args.ns;
    Ok(cfg)
}

pub fn write_run_artifacts(
    out: &Path,
    trace: &EmTrace,
    truth: Option<&Path>,
    threshold: f64,
) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(AppError::runtime_from)?;
    write_edge_list_csv(out.join("graph.csv"), &trace.final_dag).map_err(AppError::runtime_from)?;
    let d = trace.final_dag.dim();
    write_matrix_csv(
        out.join("graph_dense.csv"),
        trace.final_dag.weights(),
        &default_column_names(d),
    )
    .map_err(AppError::runtime_from)?;
    let json = serde_json::to_string(trace)
        .map_err(|e| AppError::runtime(format!("trace serialization: {e}")))?;
    std::fs::write(out.join("trace.json"), json).map_err(AppError::runtime_from)?;
    export_trace_csvs(trace, out, truth, threshold)?;
    Ok(())
}

/// Writes `trace.csv` (one row per EM iteration; per-iteration SHD and
/// weight distance to the truth when given) and `trace_weights.csv` (the
/// candidate matrices in long format, iteration 0 = initialization).
pub fn export_trace_csvs(
    trace: &EmTrace,
    out: &Path,
    truth: Option<&Path>,
    threshold: f64,
) -> Result<(), AppError> {
    std::fs::create_dir_all(out).map_err(AppError::runtime_from)?;
    let truth_dag = truth
        .map(|p| load_truth(p, trace.final_dag.dim()))
        .transpose()?;

    let mut writer = csv::Writer::from_path(out.join("trace.csv"))
        .map_err(|e| AppError::runtime(e.to_string()))?;
    let mut header = vec![
        "iter",
        "obs_loglik",
        "h_pre",
        "edge_count",
        "wall_secs",
        "accept_rate",
        "jitter_count",
    ];
    if truth_dag.is_some() {
        header.push("shd_to_truth");
        header.push("frob_weights_to_truth");
    }
    writer
        .write_record(&header)
        .map_err(|e| AppError::runtime(e.to_string()))?;
    for (t, it) in trace.iterations.iter().enumerate() {
        let mut record = vec![
            (t + 1).to_string(),
            format!("{}", it.obs_loglik),
            format!("{}", it.h_pre),
            it.edge_count.to_string(),
            format!("{}", it.wall_secs),
            it.accept_rate.map(|r| format!("{r}")).unwrap_or_default(),
            it.jitter_count.to_string(),
        ];
        if let Some(truth_dag) = &truth_dag {
            let pruned = threshold_to_dag(&it.weights.view(), threshold)
                .map_err(AppError::runtime_from)?;
            let score = shd(&pruned, truth_dag).map_err(AppError::runtime_from)?;
            record.push(score.shd.to_string());
            let dist = frobenius_distance(&it.weights.view(), &truth_dag.weights().view());
            record.push(format!("{dist}"));
        }
        writer
            .write_record(&record)
            .map_err(|e| AppError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(AppError::runtime_from)?;

    trace
        .write_weights_csv(out.join("trace_weights.csv"))
        .map_err(AppError::runtime_from)?;
    Ok(())
}

fn load_truth(path: &Path, d: usize) -> Result<WeightedDag, AppError> {
    let w = if path.file_name().is_some_and(|n| {
        n.to_string_lossy().contains("dense")
    }) {
        read_matrix_csv(path)
            .map_err(|e| AppError::config(e.to_string()))?
            .0
    } else {
        read_edge_list_csv(path, Some(d)).map_err(|e| AppError::config(e.to_string()))?
    };
    WeightedDag::into_dag(w).map_err(|e| AppError::config(format!("truth graph: {e}")))
}

pub fn evaluate(est: &Path, truth: &Path, d: Option<usize>, out: &Path) -> Result<(), AppError> {
    let est_w = read_edge_list_csv(est, d).map_err(|e| AppError::config(e.to_string()))?;
    let dim = est_w.nrows();
    let truth_w = read_edge_list_csv(truth, Some(dim.max(d.unwrap_or(0))))
        .map_err(|e| AppError::config(e.to_string()))?;
    let est_dag = WeightedDag::into_dag(est_w)
        .map_err(|e| AppError::config(format!("estimated graph: {e}")))?;
    let truth_dag = WeightedDag::into_dag(truth_w)
        .map_err(|e| AppError::config(format!("truth graph: {e}")))?;
    let score = shd(&est_dag, &truth_dag).map_err(AppError::runtime_from)?;
    let cpdag_distance = shd_cpdag(&est_dag, &truth_dag).map_err(AppError::runtime_from)?;

    let mut writer =
        csv::Writer::from_path(out).map_err(|e| AppError::runtime(e.to_string()))?;
    writer
        .write_record([
            "shd",
            "shd_cpdag",
            "extra",
            "missing",
            "reversed",
            "precision",
            "recall",
            "f1",
        ])
        .map_err(|e| AppError::runtime(e.to_string()))?;
    writer
        .write_record(&[
            score.shd.to_string(),
            cpdag_distance.to_string(),
            score.extra.to_string(),
            score.missing.to_string(),
            score.reversed.to_string(),
            format!("{}", score.precision),
            format!("{}", score.recall),
            format!("{}", score.f1),
        ])
        .map_err(|e| AppError::runtime(e.to_string()))?;
    writer.flush().map_err(AppError::runtime_from)?;
    println!("shd = {}, shd_cpdag = {}", score.shd, cpdag_distance);
    Ok(())
}

pub fn trace(
    run_dir: &Path,
    out: &Path,
    truth: Option<&Path>,
    threshold: f64,
) -> Result<(), AppError> {
    let path = run_dir.join("trace.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        AppError::config(format!("missing run artifact {}: {e}", path.display()))
    })?;
    let trace: EmTrace = serde_json::from_str(&text)
        .map_err(|e| AppError::config(format!("corrupt trace artifact: {e}")))?;
    export_trace_csvs(&trace, out, truth, threshold)?;
    println!(
        "exported {} iteration(s) to {}",
        trace.n_iterations(),
        out.display()
    );
    Ok(())
}
