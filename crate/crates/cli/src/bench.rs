//! The benchmark grid: (mechanism x rate x seed x method) cells, each an
//! isolated deterministic unit, with per-run rows and an aggregate table.

use std::path::Path;

use missdag::em::EmConfig;
use missdag::metrics::{shd, shd_cpdag};

use crate::config::ExperimentSpec;
use crate::methods::{generate_cell, run_method, Method};
use crate::AppError;

#[derive(Debug, Clone)]
pub struct RunRow {
    pub mechanism: String,
    pub rate: f64,
    pub method: &'static str,
    pub seed: u64,
    pub status: &'static str,
    pub shd: Option<usize>,
    pub shd_cpdag: Option<usize>,
    pub extra: Option<usize>,
    pub missing: Option<usize>,
    pub reversed: Option<usize>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub edges_est: Option<usize>,
    pub edges_true: Option<usize>,
    pub message: String,
}

pub struct BenchOutcome {
    pub rows: Vec<RunRow>,
    pub n_ok: usize,
    pub n_failed: usize,
}

struct Cell {
    mechanism: String,
    rate: f64,
    seed: u64,
    method: Method,
}

pub fn execute(spec: &ExperimentSpec) -> Result<BenchOutcome, AppError> {
    let methods: Vec<Method> = spec
        .methods
        .methods
        .iter()
        .map(|name| Method::parse(name))
        .collect::<Result<_, _>>()?;
    let solver = spec.solver_config()?;

    let mut cells = Vec::new();
    for mechanism in &spec.missingness.mechanisms {
        for &rate in &spec.missingness.rates {
            for &seed in &spec.run.seeds {
                for &method in &methods {
                    cells.push(Cell {
                        mechanism: mechanism.clone(),
                        rate,
                        seed,
                        method,
                    });
                }
            }
        }
    }

    let run_cell = |cell: &Cell| -> RunRow {
        let mut row = RunRow {
            mechanism: cell.mechanism.clone(),
            rate: cell.rate,
            method: cell.method.name(),
            seed: cell.seed,
            status: "ok",
            shd: None,
            shd_cpdag: None,
            extra: None,
            missing: None,
            reversed: None,
            precision: None,
            recall: None,
            f1: None,
            edges_est: None,
            edges_true: None,
            message: String::new(),
        };
        let outcome = (|| -> Result<(), String> {
            let data = generate_cell(spec, cell.seed, &cell.mechanism, cell.rate)
                .map_err(|e| e.to_string())?;
            let mut cfg = EmConfig::new(solver.clone()).with_seed(cell.seed);
            cfg.em_iters = spec.run.em_iters;
            cfg.ns = spec.run.ns;
            let output =
                run_method(cell.method, &data.masked, &cfg).map_err(|e| e.to_string())?;
            let score = shd(&output.graph, &data.truth).map_err(|e| e.to_string())?;
            let cpdag_distance =
                shd_cpdag(&output.graph, &data.truth).map_err(|e| e.to_string())?;
            row.shd = Some(score.shd);
            row.shd_cpdag = Some(cpdag_distance);
            row.extra = Some(score.extra);
            row.missing = Some(score.missing);
            row.reversed = Some(score.reversed);
            row.precision = Some(score.precision);
            row.recall = Some(score.recall);
            row.f1 = Some(score.f1);
            row.edges_est = Some(output.graph.edge_count());
            row.edges_true = Some(data.truth.edge_count());
            Ok(())
        })();
        if let Err(message) = outcome {
            row.status = "error";
            row.message = message;
        }
        row
    };

    #[cfg(feature = "parallel")]
    let rows: Vec<RunRow> = {
        use rayon::prelude::*;
        cells.par_iter().map(run_cell).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<RunRow> = cells.iter().map(run_cell).collect();

    let n_ok = rows.iter().filter(|r| r.status == "ok").count();
    let n_failed = rows.len() - n_ok;
    Ok(BenchOutcome {
        rows,
        n_ok,
        n_failed,
    })
}

pub fn write_runs_csv(rows: &[RunRow], path: &Path) -> Result<(), AppError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| AppError::runtime(e.to_string()))?;
    writer
        .write_record([
            "mechanism",
            "rate",
            "method",
            "seed",
            "status",
            "shd",
            "shd_cpdag",
            "extra",
            "missing",
            "reversed",
            "precision",
            "recall",
            "f1",
            "edges_est",
            "edges_true",
            "message",
        ])
        .map_err(|e| AppError::runtime(e.to_string()))?;
    let fmt_usize = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    let fmt_f64 = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in rows {
        writer
            .write_record(&[
                row.mechanism.clone(),
                format!("{}", row.rate),
                row.method.to_string(),
                row.seed.to_string(),
                row.status.to_string(),
                fmt_usize(row.shd),
                fmt_usize(row.shd_cpdag),
                fmt_usize(row.extra),
                fmt_usize(row.missing),
                fmt_usize(row.reversed),
                fmt_f64(row.precision),
                fmt_f64(row.recall),
                fmt_f64(row.f1),
                fmt_usize(row.edges_est),
                fmt_usize(row.edges_true),
                row.message.clone(),
            ])
            .map_err(|e| AppError::runtime(e.to_string()))?;
    }
    writer.flush().map_err(AppError::runtime_from)?;
    Ok(())
}

/// One aggregate row per (mechanism, rate, method): mean and sample
/// standard deviation over the successful runs, in grid order.
pub fn write_aggregate_csv(
    spec: &ExperimentSpec,
    rows: &[RunRow],
    path: &Path,
) -> Result<(), AppError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| AppError::runtime(e.to_string()))?;
    writer
        .write_record([
            "mechanism",
            "rate",
            "method",
            "n_ok",
            "n_failed",
            "shd_mean",
            "shd_std",
            "shd_cpdag_mean",
            "shd_cpdag_std",
            "f1_mean",
            "f1_std",
        ])
        .map_err(|e| AppError::runtime(e.to_string()))?;
    for mechanism in &spec.missingness.mechanisms {
        for &rate in &spec.missingness.rates {
            for name in &spec.methods.methods {
                let method = Method::parse(name)?.name();
                let group: Vec<&RunRow> = rows
                    .iter()
                    .filter(|r| {
                        r.mechanism == *mechanism && r.rate == rate && r.method == method
                    })
                    .collect();
                let ok: Vec<&&RunRow> = group.iter().filter(|r| r.status == "ok").collect();
                let n_failed = group.len() - ok.len();
                let stats = |select: &dyn Fn(&RunRow) -> f64| -> (f64, f64) {
                    if ok.is_empty() {
                        return (f64::NAN, f64::NAN);
                    }
                    let vals: Vec<f64> = ok.iter().map(|r| select(r)).collect();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let std = if vals.len() > 1 {
                        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                            / (vals.len() - 1) as f64)
                            .sqrt()
                    } else {
                        0.0
                    };
                    (mean, std)
                };
                let (shd_mean, shd_std) = stats(&|r| r.shd.unwrap() as f64);
                let (cp_mean, cp_std) = stats(&|r| r.shd_cpdag.unwrap() as f64);
                let (f1_mean, f1_std) = stats(&|r| r.f1.unwrap());
                writer
                    .write_record(&[
                        mechanism.clone(),
                        format!("{rate}"),
                        method.to_string(),
                        ok.len().to_string(),
                        n_failed.to_string(),
                        format!("{shd_mean}"),
                        format!("{shd_std}"),
                        format!("{cp_mean}"),
                        format!("{cp_std}"),
                        format!("{f1_mean}"),
                        format!("{f1_std}"),
                    ])
                    .map_err(|e| AppError::runtime(e.to_string()))?;
            }
        }
    }
    writer.flush().map_err(AppError::runtime_from)?;
    Ok(())
}

pub fn run_bench(config_path: &Path, out_override: Option<&Path>) -> Result<i32, AppError> {
    let spec = ExperimentSpec::load(config_path)?;
    let out = out_override
        .map(|p| p.to_path_buf())
        .or_else(|| spec.output.as_ref().map(|o| o.dir.clone()))
        .ok_or_else(|| AppError::config("no output dir: pass --out or set [output] dir"))?;
    std::fs::create_dir_all(&out).map_err(AppError::runtime_from)?;

    let outcome = execute(&spec)?;
    write_runs_csv(&outcome.rows, &out.join("runs.csv"))?;
    write_aggregate_csv(&spec, &outcome.rows, &out.join("aggregate.csv"))?;
    println!(
        "{} cells ({} ok, {} failed); results in {}",
        outcome.rows.len(),
        outcome.n_ok,
        outcome.n_failed,
        out.display()
    );
    if outcome.n_ok == 0 {
        return Ok(2);
    }
    Ok(0)
}
