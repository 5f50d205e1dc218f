//! DAG-constrained score maximization: the hard-constraint augmented
//! Lagrangian schedule, the soft-penalty variant, the linear non-Gaussian
//! solver, the per-node-MLP solver, and an exhaustive exact solver for
//! small problems.

mod lbfgs;
pub mod objective;

pub use lbfgs::{minimize as lbfgs_minimize, LbfgsConfig, LbfgsResult};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estep::SufficientStats;
use crate::graph::{h_acyclicity, threshold_to_dag, WeightedDag};
use crate::likelihood::RESIDUAL_VAR_FLOOR;
use crate::linalg::{chol_solve_vec, cholesky, det, inverse};
use crate::model::MlpSem;
use objective::{GaussianProfiledObjective, LogCoshObjective, MlpLayout, MlpObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverMethod {
    /// Augmented Lagrangian driving `h` to zero (hard constraint).
    HardAl,
    /// Single penalized solve with `lambda2 * h` (soft constraint).
    Soft,
    /// Exhaustive DAG enumeration; exact argmax, small d only.
    ExhaustiveExact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelClass {
    LinearGaussianEv,
    LinearGaussianNv,
    LinearLogCosh,
    MlpAnm,
}

impl ModelClass {
    pub fn is_gaussian(self) -> bool {
        matches!(self, ModelClass::LinearGaussianEv | ModelClass::LinearGaussianNv)
    }
}

/// Augmented-Lagrangian schedule constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlSettings {
    pub alpha0: f64,
    /// Initial penalty weight; the schedule moves it to 1 at the first
    /// increase since multiplicative growth cannot leave zero.
    pub rho0: f64,
    pub beta: f64,
    pub gamma: f64,
    pub h_min: f64,
    pub rho_max: f64,
    pub max_outer: usize,
}

impl Default for AlSettings {
    fn default() -> Self {
        AlSettings {
            alpha0: 0.0,
            rho0: 0.0,
            beta: 10.0,
            gamma: 0.25,
            h_min: 1e-8,
            rho_max: 1e16,
            max_outer: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub model_class: ModelClass,
    /// Sparsity coefficient (l1 on linear weights, group norms for MLPs).
    pub lambda1: f64,
    /// Soft DAG coefficient, or l2 weight decay for MLPs.
    pub lambda2: f64,
    pub al: AlSettings,
    /// Final pruning threshold on the candidate structure.
    pub threshold: f64,
    /// Soft solver only: add the -log|det(I-W)| likelihood term.
    pub include_logdet: bool,
    pub mlp_hidden: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl SolverConfig {
    /// Hard-constraint defaults per model class.
    pub fn for_class(model_class: ModelClass) -> Self {
        let (lambda1, lambda2) = match model_class {
            ModelClass::LinearGaussianEv | ModelClass::LinearGaussianNv => (0.1, 0.0),
            ModelClass::LinearLogCosh => (0.1, 0.0),
            ModelClass::MlpAnm => (0.03, 0.01),
        };
        SolverConfig {
            method: SolverMethod::HardAl,
            model_class,
            lambda1,
            lambda2,
            al: AlSettings::default(),
            threshold: 0.3,
            include_logdet: false,
            mlp_hidden: 10,
            inner_tol: 1e-6,
            inner_max_iter: 500,
        }
    }

    /// Soft-penalty defaults (likelihood + l1 + lambda2 * h).
    pub fn soft(model_class: ModelClass) -> Self {
        SolverConfig {
            method: SolverMethod::Soft,
            lambda1: 5e-2,
            lambda2: 5e-3,
            ..Self::for_class(model_class)
        }
    }

    fn inner_config(&self) -> LbfgsConfig {
        LbfgsConfig {
            tol_grad: self.inner_tol,
            max_iter: self.inner_max_iter,
            ..LbfgsConfig::default()
        }
    }
}

/// One outer iteration of a solve, exportable as CSV by callers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterIterRecord {
    pub objective: f64,
    pub h: f64,
    pub rho: f64,
    pub alpha: f64,
}

/// Unified solver output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// Final thresholded graph.
    pub dag: WeightedDag,
    /// Pre-threshold candidate structure (weights, or group norms for MLPs).
    pub weights_pre: Array2<f64>,
    /// Noise parameters at the pre-threshold optimum: variances for Gaussian
    /// classes, residual scales (standard deviations) otherwise.
    pub noise: Array1<f64>,
    pub mlp: Option<MlpSem>,
    /// Acyclicity value at the pre-threshold optimum.
    pub h_pre: f64,
    pub trace: Vec<OuterIterRecord>,
    pub converged: bool,
}

/// Runs the augmented-Lagrangian schedule over an abstract state. `solve`
/// minimizes the sub-problem at fixed `(alpha, rho)` from a warm state and
/// returns `(state, h, objective)`.
fn al_schedule<S: Clone, F>(al: &AlSettings, s0: S, mut solve: F) -> (S, f64, Vec<OuterIterRecord>, bool)
where
    F: FnMut(f64, f64, &S) -> (S, f64, f64),
{
    let mut trace = Vec::new();
    // First sub-problem at the configured (alpha0, rho0); with the defaults
    // this is the unconstrained penalized fit.
    let (mut state, mut h_cur, obj) = solve(al.alpha0, al.rho0, &s0);
    let mut alpha = al.alpha0;
    let mut rho = al.rho0.max(1.0);
    trace.push(OuterIterRecord {
        objective: obj,
        h: h_cur,
        rho: al.rho0,
        alpha,
    });

    for _ in 0..al.max_outer {
        if h_cur <= al.h_min || rho > al.rho_max {
            break;
        }
        let (mut s_new, mut h_new, mut obj_new);
        loop {
            let (s, h, o) = solve(alpha, rho, &state);
            s_new = s;
            h_new = h;
            obj_new = o;
            if h_new > al.gamma * h_cur && rho < al.rho_max {
                rho *= al.beta;
            } else {
                break;
            }
        }
        state = s_new;
        h_cur = h_new;
        alpha += rho * h_cur;
        trace.push(OuterIterRecord {
            objective: obj_new,
            h: h_cur,
            rho,
            alpha,
        });
    }
    let converged = h_cur <= al.h_min;
    (state, h_cur, trace, converged)
}

/// Minimizes `smooth(W) + lambda1 * ||W||_1 + alpha h + rho/2 h^2` over
/// off-diagonal W via the positive/negative split, nonnegativity bounds, and
/// the projected L-BFGS inner solver.
fn solve_linear_subproblem<F>(
    smooth: &F,
    d: usize,
    lambda1: f64,
    alpha: f64,
    rho: f64,
    w0: &Array2<f64>,
    inner: &LbfgsConfig,
) -> (Array2<f64>, f64, f64)
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let n_half = d * d;
    let mut x0 = vec![0.0; 2 * n_half];
    for ((i, j), &w) in w0.indexed_iter() {
        if i != j {
            x0[i * d + j] = w.max(0.0);
            x0[n_half + i * d + j] = (-w).max(0.0);
        }
    }
    let lower = vec![0.0; 2 * n_half];
    let mut w_buf = Array2::<f64>::zeros((d, d));

    let result = lbfgs::minimize(
        |params, grad| {
            for i in 0..d {
                for j in 0..d {
                    w_buf[[i, j]] = if i == j {
                        0.0
                    } else {
                        params[i * d + j] - params[n_half + i * d + j]
                    };
                }
            }
            let (v, g_smooth) = smooth(&w_buf);
            if !v.is_finite() {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return f64::INFINITY;
            }
            let (h, gh) = h_acyclicity(&w_buf.view()).expect("square by construction");
            let coef = alpha + rho * h;
            let mut value = v + alpha * h + 0.5 * rho * h * h;
            for i in 0..d {
                for j in 0..d {
                    let idx = i * d + j;
                    if i == j {
                        grad[idx] = 0.0;
                        grad[n_half + idx] = 0.0;
                        continue;
                    }
                    let gw = g_smooth[[i, j]] + coef * gh[[i, j]];
                    grad[idx] = gw + lambda1;
                    grad[n_half + idx] = -gw + lambda1;
                    value += lambda1 * (params[idx] + params[n_half + idx]);
                }
            }
            value
        },
        x0,
        Some(&lower),
        inner,
    );

    let mut w = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            if i != j {
                w[[i, j]] = result.x[i * d + j] - result.x[n_half + i * d + j];
            }
        }
    }
    let (h, _) = h_acyclicity(&w.view()).expect("square by construction");
    (w, h, result.f)
}

fn run_linear_solver<F>(
    smooth: &F,
    d: usize,
    cfg: &SolverConfig,
    warm: Option<&Array2<f64>>,
) -> Result<(Array2<f64>, f64, Vec<OuterIterRecord>, bool)>
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
{
    let w0 = warm.cloned().unwrap_or_else(|| Array2::zeros((d, d)));
    let inner = cfg.inner_config();
    match cfg.method {
        SolverMethod::HardAl => {
            let (w, h, trace, converged) = al_schedule(&cfg.al, w0, |alpha, rho, start| {
                solve_linear_subproblem(smooth, d, cfg.lambda1, alpha, rho, start, &inner)
            });
            Ok((w, h, trace, converged))
        }
        SolverMethod::Soft => {
            // lambda2 * h is exactly the sub-problem with alpha = lambda2, rho = 0.
            let (w, h, obj) =
                solve_linear_subproblem(smooth, d, cfg.lambda1, cfg.lambda2, 0.0, &w0, &inner);
            let trace = vec![OuterIterRecord {
                objective: obj,
                h,
                rho: 0.0,
                alpha: cfg.lambda2,
            }];
            Ok((w, h, trace, true))
        }
        SolverMethod::ExhaustiveExact => Err(Error::Config(
            "exhaustive search is only available through the Gaussian solver".into(),
        )),
    }
}

/// Fits a linear Gaussian model to the sufficient statistic by maximizing
/// the profiled likelihood minus `lambda1 * ||W||_1` under the acyclicity
/// treatment selected in the config, then prunes with the threshold.
pub fn fit_linear_gaussian(
    t: &SufficientStats,
    cfg: &SolverConfig,
    warm: Option<&Array2<f64>>,
) -> Result<FitResult> {
    if !cfg.model_class.is_gaussian() {
        return Err(Error::Config(
            "fit_linear_gaussian requires a Gaussian model class".into(),
        ));
    }
    if cfg.method == SolverMethod::ExhaustiveExact {
        return fit_exhaustive_gaussian(t, cfg);
    }
    let d = t.dim();
    let obj = GaussianProfiledObjective {
        t: t.matrix(),
        equal_variance: cfg.model_class == ModelClass::LinearGaussianEv,
    };
    let include_logdet = cfg.include_logdet && cfg.method == SolverMethod::Soft;
    let smooth = |w: &Array2<f64>| -> (f64, Array2<f64>) {
        let (mut v, mut g) = obj.value_grad(w);
        if include_logdet && v.is_finite() {
            let i_minus_w = Array2::eye(w.nrows()) - w;
            match (det(&i_minus_w.view()), inverse(&i_minus_w.view())) {
                (Ok(dt), Ok(inv)) if dt != 0.0 => {
                    v -= dt.abs().ln();
                    g += &inv.t();
                }
                _ => return (f64::INFINITY, Array2::zeros(w.dim())),
            }
        }
        (v, g)
    };
    let (w, h_pre, trace, converged) = run_linear_solver(&smooth, d, cfg, warm)?;
    let noise = obj.profiled_variances(&w);
    let dag = threshold_to_dag(&w.view(), cfg.threshold)?;
    Ok(FitResult {
        dag,
        weights_pre: w,
        noise,
        mlp: None,
        h_pre,
        trace,
        converged,
    })
}

const EXHAUSTIVE_MAX_D: usize = 5;

/// Exact Gaussian M-step by full DAG enumeration: every structure is scored
/// with per-node least squares on `T`, profiled noise variances, and an
/// edge-count penalty `lambda1 * |E|`. Global argmax, ties broken by
/// enumeration order.
pub fn fit_exhaustive_gaussian(t: &SufficientStats, cfg: &SolverConfig) -> Result<FitResult> {
    let d = t.dim();
    if d > EXHAUSTIVE_MAX_D {
        return Err(Error::Config(format!(
            "exhaustive search supports d <= {EXHAUSTIVE_MAX_D}, got {d}"
        )));
    }
    let equal_variance = cfg.model_class == ModelClass::LinearGaussianEv;
    let tm = t.matrix();
    let positions: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let n_masks: u64 = 1u64 << positions.len();

    let mut best_score = f64::NEG_INFINITY;
    let mut best_w: Option<Array2<f64>> = None;
    let mut best_noise: Option<Array1<f64>> = None;

    let mut adj = [[false; EXHAUSTIVE_MAX_D]; EXHAUSTIVE_MAX_D];
    for mask in 0..n_masks {
        for row in adj.iter_mut() {
            row.fill(false);
        }
        for (bit, &(i, j)) in positions.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                adj[i][j] = true;
            }
        }
        if !small_acyclic(&adj, d) {
            continue;
        }
        let mut w = Array2::<f64>::zeros((d, d));
        let mut rss = Array1::<f64>::zeros(d);
        let mut edges = 0usize;
        let mut feasible = true;
        for j in 0..d {
            let parents: Vec<usize> = (0..d).filter(|&i| adj[i][j]).collect();
            edges += parents.len();
            if parents.is_empty() {
                rss[j] = tm[[j, j]];
            } else {
                let k = parents.len();
                let mut tpp = Array2::zeros((k, k));
                let mut tpj = Array1::zeros(k);
                for (a, &pa) in parents.iter().enumerate() {
                    tpj[a] = tm[[pa, j]];
                    for (b, &pb) in parents.iter().enumerate() {
                        tpp[[a, b]] = tm[[pa, pb]];
                    }
                }
                let Ok(l) = cholesky(&tpp.view()) else {
                    feasible = false;
                    break;
                };
                let coef = chol_solve_vec(&l, &tpj.view());
                rss[j] = tm[[j, j]] - coef.dot(&tpj);
                for (a, &pa) in parents.iter().enumerate() {
                    w[[pa, j]] = coef[a];
                }
            }
            if rss[j] <= RESIDUAL_VAR_FLOOR {
                feasible = false;
                break;
            }
        }
        if !feasible {
            continue;
        }
        let loglik = if equal_variance {
            let sigma2 = rss.sum() / d as f64;
            -0.5 * d as f64 * (crate::likelihood::LN_2PI + sigma2.ln() + 1.0)
        } else {
            rss.iter()
                .map(|&r| -0.5 * (crate::likelihood::LN_2PI + r.ln() + 1.0))
                .sum()
        };
        let score = loglik - cfg.lambda1 * edges as f64;
        if score > best_score {
            best_score = score;
            let noise = if equal_variance {
                Array1::from_elem(d, rss.sum() / d as f64)
            } else {
                rss.clone()
            };
            best_w = Some(w);
            best_noise = Some(noise);
        }
    }

    let w = best_w.ok_or_else(|| Error::Numeric("no feasible DAG structure".into()))?;
    let noise = best_noise.expect("set together with best_w");
    let (h_pre, _) = h_acyclicity(&w.view())?;
    let dag = WeightedDag::into_dag(w.clone())?;
    Ok(FitResult {
        dag,
        weights_pre: w,
        noise,
        mlp: None,
        h_pre,
        trace: vec![OuterIterRecord {
            objective: -best_score,
            h: h_pre,
            rho: 0.0,
            alpha: 0.0,
        }],
        converged: true,
    })
}

fn small_acyclic(adj: &[[bool; EXHAUSTIVE_MAX_D]; EXHAUSTIVE_MAX_D], d: usize) -> bool {
    let mut indeg = [0usize; EXHAUSTIVE_MAX_D];
    for j in 0..d {
        for i in 0..d {
            if adj[i][j] {
                indeg[j] += 1;
            }
        }
    }
    let mut stack = [0usize; EXHAUSTIVE_MAX_D];
    let mut top = 0;
    for (j, &deg) in indeg.iter().take(d).enumerate() {
        if deg == 0 {
            stack[top] = j;
            top += 1;
        }
    }
    let mut seen = 0;
    while top > 0 {
        top -= 1;
        let v = stack[top];
        seen += 1;
        for j in 0..d {
            if adj[v][j] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    stack[top] = j;
                    top += 1;
                }
            }
        }
    }
    seen == d
}

/// Fits a linear model under the standardized log-cosh likelihood to stacked
/// completions (or complete data).
pub fn fit_linear_logcosh(
    x: &Array2<f64>,
    cfg: &SolverConfig,
    warm: Option<&Array2<f64>>,
) -> Result<FitResult> {
    let d = x.ncols();
    if x.nrows() == 0 {
        return Err(Error::Shape("empty data matrix".into()));
    }
    let obj = LogCoshObjective::new(x);
    let smooth = |w: &Array2<f64>| obj.value_grad(w);
    let (w, h_pre, trace, converged) = run_linear_solver(&smooth, d, cfg, warm)?;
    let scales = obj.residual_scales(&w);
    for (j, s) in scales.iter().enumerate() {
        if s * s <= RESIDUAL_VAR_FLOOR {
            return Err(Error::DegenerateResidual {
                node: j,
                value: s * s,
                floor: RESIDUAL_VAR_FLOOR,
            });
        }
    }
    let dag = threshold_to_dag(&w.view(), cfg.threshold)?;
    Ok(FitResult {
        dag,
        weights_pre: w,
        noise: scales,
        mlp: None,
        h_pre,
        trace,
        converged,
    })
}

/// Initialization of the MLP solver.
pub enum MlpInit<'a> {
    /// Small uniform weights in [-scale, scale], biases zero.
    Random { seed: u64, scale: f64 },
    Warm(&'a MlpSem),
}

/// Fits one small MLP per node under the standardized Gaussian likelihood
/// with group-sparse first-layer inputs, ridge decay, and the acyclicity
/// schedule on the input-norm adjacency.
pub fn fit_mlp_anm(x: &Array2<f64>, cfg: &SolverConfig, init: MlpInit) -> Result<FitResult> {
    let d = x.ncols();
    let n = x.nrows();
    if n < d {
        return Err(Error::Config(format!(
            "need at least d={d} samples, got {n}"
        )));
    }
    if cfg.method == SolverMethod::ExhaustiveExact {
        return Err(Error::Config("no exhaustive MLP solver".into()));
    }
    let layout = MlpLayout {
        d,
        hidden: cfg.mlp_hidden,
    };
    let mut params0 = match init {
        MlpInit::Warm(sem) => layout.pack(sem),
        MlpInit::Random { seed, scale } => {
            // All parameters (biases included) start small uniform. Zero
            // biases would confine each net to constant-plus-odd functions
            // of its inputs and strand the optimizer on that plateau.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..layout.total())
                .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        }
    };
    layout.mask_self_inputs(&mut params0);

    let obj = MlpObjective {
        x,
        layout: MlpLayout {
            d,
            hidden: cfg.mlp_hidden,
        },
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
    };
    let inner = cfg.inner_config();

    let solve = |alpha: f64, rho: f64, start: &Vec<f64>| -> (Vec<f64>, f64, f64) {
        let result = lbfgs::minimize(
            |params, grad| obj.value_grad(params, alpha, rho, grad).value,
            start.clone(),
            None,
            &inner,
        );
        let mut scratch = vec![0.0; result.x.len()];
        let eval = obj.value_grad(&result.x, 0.0, 0.0, &mut scratch);
        (result.x, eval.h, result.f)
    };

    let (params, h_pre, trace, converged) = match cfg.method {
        SolverMethod::HardAl => al_schedule(&cfg.al, params0, |a, r, s| solve(a, r, s)),
        SolverMethod::Soft => {
            let (p, h, o) = solve(cfg.lambda2, 0.0, &params0);
            (
                p,
                h,
                vec![OuterIterRecord {
                    objective: o,
                    h,
                    rho: 0.0,
                    alpha: cfg.lambda2,
                }],
                true,
            )
        }
        SolverMethod::ExhaustiveExact => unreachable!("rejected above"),
    };

    let mut scratch = vec![0.0; params.len()];
    let eval = obj.value_grad(&params, 0.0, 0.0, &mut scratch);
    if !eval.value.is_finite() {
        return Err(Error::Numeric("degenerate MLP residuals at optimum".into()));
    }
    let sem = obj.layout.unpack(&params);
    let adjacency = eval.adjacency;
    let scales = eval.mse.mapv(f64::sqrt);
    let dag = threshold_to_dag(&adjacency.view(), cfg.threshold)?;
    Ok(FitResult {
        dag,
        weights_pre: adjacency,
        noise: scales,
        mlp: Some(sem),
        h_pre,
        trace,
        converged,
    })
}
