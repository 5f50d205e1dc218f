// temporary: count evals inside one logcosh fit
use missdag::mstep::objective::LogCoshObjective;
use missdag::mstep::{fit_linear_logcosh, lbfgs_minimize, LbfgsConfig, ModelClass, SolverConfig};
use missdag::datagen::*;
use missdag::model::*;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let d = 5;
    let skeleton = sample_graph(&GraphSpec { d, k: 1.0, model: GraphModel::Er, seed: 1 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dag = sample_weights(&skeleton, &mut rng).unwrap();
    let model = SemModel::new(
        SemFunction::Linear(dag.weights().clone()),
        NoiseSpec::equal(NoiseFamily::Laplace, 1.0, d).unwrap(),
    ).unwrap();
    let x = simulate_sem(&model, 20_000, &mut rng).unwrap();

    // time a single objective evaluation
    let obj = LogCoshObjective::new(&x);
    let w = Array2::<f64>::zeros((d, d));
    let t0 = Instant::now();
    for _ in 0..50 { let _ = obj.value_grad(&w); }
    println!("single eval: {:.3}ms", t0.elapsed().as_secs_f64() / 50.0 * 1e3);

    // count evals in a raw unconstrained-ish subproblem via lbfgs
    let n_half = d * d;
    let mut evals = 0usize;
    let mut w_buf = Array2::<f64>::zeros((d, d));
    let cfg = LbfgsConfig::default();
    let lower = vec![0.0; 2 * n_half];
    let t0 = Instant::now();
    let res = lbfgs_minimize(
        |params, grad| {
            evals += 1;
            for i in 0..d { for j in 0..d {
                w_buf[[i, j]] = if i == j { 0.0 } else { params[i*d+j] - params[n_half + i*d+j] };
            }}
            let (v, gw) = obj.value_grad(&w_buf);
            let (h, gh) = missdag::h_acyclicity(&w_buf.view()).unwrap();
            let (alpha, rho) = (0.0, 1.0);
            let coef = alpha + rho * h;
            let mut value = v + 0.5 * rho * h * h;
            for i in 0..d { for j in 0..d {
                let idx = i*d+j;
                if i == j { grad[idx] = 0.0; grad[n_half+idx] = 0.0; continue; }
                let g = gw[[i,j]] + coef * gh[[i,j]];
                grad[idx] = g + 0.1; grad[n_half+idx] = -g + 0.1;
                value += 0.1 * (params[idx] + params[n_half+idx]);
            }}
            value
        },
        vec![0.0; 2*n_half], Some(&lower), &cfg,
    );
    println!("subproblem: evals={evals} iters={} gnorm={:.2e} in {:.2}s", res.iterations, res.grad_inf_norm, t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let cfg = SolverConfig::for_class(ModelClass::LinearLogCosh);
    let fit = fit_linear_logcosh(&x, &cfg, None).unwrap();
    println!("full fit: {:.2}s, {} outer records, h={:.2e}", t0.elapsed().as_secs_f64(), fit.trace.len(), fit.h_pre);
}
