//! Limited-memory BFGS with optional lower bounds via gradient projection.
//!
//! The augmented-Lagrangian sub-problems here are smooth after the l1 split,
//! with simple nonnegativity bounds; projected L-BFGS with an Armijo
//! backtracking search along the projected path handles them reliably at
//! these dimensions.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Convergence on the infinity norm of the projected gradient.
    pub tol_grad: f64,
    pub max_iter: usize,
    /// Stall tolerance: stop after several consecutive accepted steps whose
    /// relative objective change falls below this.
    pub f_tol_rel: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            tol_grad: 1e-6,
            max_iter: 500,
            f_tol_rel: 1e-9,
        }
    }
}

/// Consecutive negligible-progress steps before giving up on further
/// decrease. Projected steps near an active set can zigzag, so one stalled
/// step is not yet evidence of convergence.
const STALL_LIMIT: usize = 3;

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub grad_inf_norm: f64,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: Option<&[f64]>) {
    if let Some(lb) = lower {
        for (xi, &l) in x.iter_mut().zip(lb) {
            if *xi < l {
                *xi = l;
            }
        }
    }
}

fn projected_grad_inf_norm(x: &[f64], g: &[f64], lower: Option<&[f64]>) -> f64 {
    let mut norm: f64 = 0.0;
    for i in 0..x.len() {
        let at_bound = lower.map_or(false, |lb| x[i] <= lb[i]);
        let gi = if at_bound && g[i] > 0.0 { 0.0 } else { g[i] };
        norm = norm.max(gi.abs());
    }
    norm
}

/// Minimizes `f` starting from `x0`, optionally subject to `x >= lower`.
/// The objective closure writes the gradient into its second argument and
/// returns the value.
pub fn minimize<F>(mut obj: F, x0: Vec<f64>, lower: Option<&[f64]>, cfg: &LbfgsConfig) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    project(&mut x, lower);
    let mut g = vec![0.0; n];
    let mut f = obj(&x, &mut g);

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new(); // (s, y, 1/s'y)
    let mut direction = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut converged = false;
    let mut grad_norm = projected_grad_inf_norm(&x, &g, lower);
    let mut iterations = 0;
    let mut stall_count = 0usize;

    for iter in 0..cfg.max_iter {
        iterations = iter + 1;
        if grad_norm < cfg.tol_grad {
            converged = true;
            break;
        }

        // Two-loop recursion for d = -H g.
        direction.copy_from_slice(&g);
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &direction);
            alphas.push(a);
            axpy(&mut direction, y, -a);
        }
        if let Some((s, y, _)) = history.back() {
            let sy = dot(s, y);
            let yy = dot(y, y);
            if yy > 0.0 {
                scale(&mut direction, sy / yy);
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &direction);
            axpy(&mut direction, s, a - b);
        }
        for v in direction.iter_mut() {
            *v = -*v;
        }

        // Make sure we are descending; otherwise fall back to steepest descent.
        if dot(&direction, &g) >= 0.0 {
            for i in 0..n {
                direction[i] = -g[i];
            }
            history.clear();
        }

        // Backtracking Armijo search along the projected path.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + step * direction[i];
            }
            project(&mut x_new, lower);
            let f_new = obj(&x_new, &mut g_new);
            let mut gd = 0.0;
            for i in 0..n {
                gd += g[i] * (x_new[i] - x[i]);
            }
            if f_new.is_finite() && f_new <= f + 1e-4 * gd {
                // Curvature pair from the projected step.
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                let ss = dot(&s, &s).sqrt();
                let yy = dot(&y, &y).sqrt();
                if sy > 1e-12 * ss * yy {
                    if history.len() == cfg.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                let f_change = (f - f_new).abs();
                let f_prev = f;
                x.copy_from_slice(&x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                grad_norm = projected_grad_inf_norm(&x, &g, lower);
                accepted = true;
                if f_change <= cfg.f_tol_rel * f_prev.abs().max(1.0) {
                    stall_count += 1;
                } else {
                    stall_count = 0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if history.is_empty() {
                // Steepest descent cannot make progress either; stop here.
                break;
            }
            // Drop the quasi-Newton model and retry with steepest descent.
            history.clear();
            continue;
        }
        if stall_count >= STALL_LIMIT {
            converged = grad_norm < cfg.tol_grad;
            break;
        }
    }

    if grad_norm < cfg.tol_grad {
        converged = true;
    }
    LbfgsResult {
        x,
        f,
        iterations,
        grad_inf_norm: grad_norm,
        converged,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(out: &mut [f64], v: &[f64], a: f64) {
    for (o, x) in out.iter_mut().zip(v) {
        *o += a * x;
    }
}

fn scale(v: &mut [f64], a: f64) {
    for x in v.iter_mut() {
        *x *= a;
    }
}
