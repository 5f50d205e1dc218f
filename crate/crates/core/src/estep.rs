//! Posterior machinery for the E-step: exact conditional-Gaussian expected
//! sufficient statistics, and Monte Carlo completion via rejection sampling
//! when no closed form exists.
//!
//! Rows are processed independently with per-row RNG streams derived from a
//! single seed, so results are reproducible regardless of thread schedule.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::likelihood::{joint_logdensity, GaussianParams, ResidualModel, LN_2PI};
use crate::linalg::{chol_logdet, chol_solve_mat, chol_solve_vec, cholesky};
use crate::par;
use crate::seed::derive_seed;

/// Pilot draws used to size the rejection envelope per row.
const PILOT_DRAWS: usize = 256;
/// Multiplicative safety factor on the pilot maximum density ratio.
const ENVELOPE_SAFETY: f64 = 1.5;

/// The second-moment statistic `T ~ E[X^T X] / N`, symmetric PSD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    t: Array2<f64>,
    n: usize,
}

impl SufficientStats {
    /// Validates symmetry and positive semidefiniteness (within 1e-8,
    /// relative to the diagonal scale).
    pub fn new(t: Array2<f64>, n: usize) -> Result<Self> {
        let d = t.nrows();
        if t.ncols() != d {
            return Err(Error::NonSquare {
                rows: d,
                cols: t.ncols(),
            });
        }
        let scale = t.diag().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in (i + 1)..d {
                if (t[[i, j]] - t[[j, i]]).abs() > 1e-8 * scale {
                    return Err(Error::NotPsd(format!(
                        "asymmetric statistic at ({i},{j})"
                    )));
                }
            }
        }
        let jitter = 1e-8 * scale;
        let mut probe = t.clone();
        for i in 0..d {
            probe[[i, i]] += jitter;
        }
        cholesky(&probe.view())
            .map_err(|_| Error::NotPsd("statistic fails the shifted Cholesky probe".into()))?;
        Ok(SufficientStats { t, n })
    }

    /// `X^T X / N` from a complete data matrix.
    pub fn from_complete(x: &Array2<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Shape("empty data matrix".into()));
        }
        let t = x.t().dot(x) / n as f64;
        Self::new(t, n)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.t
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// Output of the exact E-step: the expected statistic plus the number of
/// rows whose observed block needed diagonal jitter.
#[derive(Debug, Clone)]
pub struct EStepOutput {
    pub stats: SufficientStats,
    pub jitter_count: usize,
}

/// Conditional moments of one row under a joint Gaussian covariance.
pub(crate) struct RowMoments {
    /// Observed values with conditional means filled in at missing indices.
    pub xhat: Array1<f64>,
    /// Missing indices and the conditional covariance block among them.
    pub cond: Option<(Vec<usize>, Array2<f64>)>,
    pub jittered: bool,
}

pub(crate) fn row_conditional_moments(
    data: &MaskedDataset,
    i: usize,
    sigma_x: &Array2<f64>,
) -> Result<RowMoments> {
    let d = data.d();
    let obs = data.row_observed_indices(i);
    let miss = data.row_missing_indices(i);
    let mut xhat = Array1::zeros(d);
    for &j in &obs {
        xhat[j] = data.x()[[i, j]];
    }
    if miss.is_empty() {
        return Ok(RowMoments {
            xhat,
            cond: None,
            jittered: false,
        });
    }

    let k = obs.len();
    let m = miss.len();
    let mut sigma_oo = Array2::zeros((k, k));
    for (a, &ja) in obs.iter().enumerate() {
        for (b, &jb) in obs.iter().enumerate() {
            sigma_oo[[a, b]] = sigma_x[[ja, jb]];
        }
    }
    let mut sigma_om = Array2::zeros((k, m));
    for (a, &ja) in obs.iter().enumerate() {
        for (b, &jb) in miss.iter().enumerate() {
            sigma_om[[a, b]] = sigma_x[[ja, jb]];
        }
    }
    let mut sigma_mm = Array2::zeros((m, m));
    for (a, &ja) in miss.iter().enumerate() {
        for (b, &jb) in miss.iter().enumerate() {
            sigma_mm[[a, b]] = sigma_x[[ja, jb]];
        }
    }

    let (chol, jittered) = factor_with_jitter(&sigma_oo)
        .map_err(|e| Error::Numeric(format!("observed block of row {i}: {e}")))?;

    let x_o = Array1::from_iter(obs.iter().map(|&j| data.x()[[i, j]]));
    let alpha = chol_solve_vec(&chol, &x_o.view());
    let mean_m = sigma_om.t().dot(&alpha);
    for (b, &jb) in miss.iter().enumerate() {
        xhat[jb] = mean_m[b];
    }

    let solved = chol_solve_mat(&chol, &sigma_om.view());
    let mut cond = sigma_mm - sigma_om.t().dot(&solved);
    // Enforce exact symmetry against accumulated round-off.
    for a in 0..m {
        for b in (a + 1)..m {
            let avg = 0.5 * (cond[[a, b]] + cond[[b, a]]);
            cond[[a, b]] = avg;
            cond[[b, a]] = avg;
        }
    }
    Ok(RowMoments {
        xhat,
        cond: Some((miss, cond)),
        jittered,
    })
}

/// Cholesky with a single 1e-8-scale diagonal jitter retry.
fn factor_with_jitter(a: &Array2<f64>) -> Result<(Array2<f64>, bool)> {
    match cholesky(&a.view()) {
        Ok(l) => Ok((l, false)),
        Err(_) => {
            let scale = a.diag().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let mut shifted = a.clone();
            for i in 0..a.nrows() {
                shifted[[i, i]] += 1e-8 * scale;
            }
            let l = cholesky(&shifted.view())?;
            Ok((l, true))
        }
    }
}

/// Exact E-step for linear Gaussian models: the expectation of `X^T X / N`
/// given the observed entries. For a row the contribution to entry `(a, b)`
/// is `xhat_a * xhat_b`, plus the conditional covariance when both `a` and
/// `b` are missing in that row.
pub fn expected_suff_stats(data: &MaskedDataset, params: &GaussianParams) -> Result<EStepOutput> {
    let sigma_x = params.sigma_x()?;
    expected_suff_stats_from_cov(data, &sigma_x)
}

/// Same computation driven by an explicit joint covariance. Used both by the
/// structured E-step and by unstructured Gaussian imputation.
pub fn expected_suff_stats_from_cov(
    data: &MaskedDataset,
    sigma_x: &Array2<f64>,
) -> Result<EStepOutput> {
    let n = data.n();
    let d = data.d();
    if sigma_x.dim() != (d, d) {
        return Err(Error::Shape(format!(
            "covariance {:?} does not match data dimension {d}",
            sigma_x.dim()
        )));
    }
    if n == 0 {
        return Err(Error::Shape("empty dataset".into()));
    }

    let partials = par::try_map_chunks(n, |range| -> Result<(Array2<f64>, usize)> {
        let mut t_local = Array2::<f64>::zeros((d, d));
        let mut jitters = 0usize;
        for i in range {
            let moments = row_conditional_moments(data, i, sigma_x)?;
            if moments.jittered {
                jitters += 1;
            }
            for a in 0..d {
                let xa = moments.xhat[a];
                for b in 0..d {
                    t_local[[a, b]] += xa * moments.xhat[b];
                }
            }
            if let Some((miss, cond)) = &moments.cond {
                for (ai, &a) in miss.iter().enumerate() {
                    for (bi, &b) in miss.iter().enumerate() {
                        t_local[[a, b]] += cond[[ai, bi]];
                    }
                }
            }
        }
        Ok((t_local, jitters))
    })?;

    let mut t = Array2::<f64>::zeros((d, d));
    let mut jitter_count = 0usize;
    for (partial, jitters) in partials {
        t += &partial;
        jitter_count += jitters;
    }
    t /= n as f64;
    // The accumulation is symmetric up to round-off; make it exact.
    for a in 0..d {
        for b in (a + 1)..d {
            let avg = 0.5 * (t[[a, b]] + t[[b, a]]);
            t[[a, b]] = avg;
            t[[b, a]] = avg;
        }
    }
    Ok(EStepOutput {
        stats: SufficientStats::new(t, n)?,
        jitter_count,
    })
}

/// Observed-data Gaussian log-likelihood for an explicit covariance:
/// the sum over rows of `log N(x_o; 0, Sigma_oo)`.
pub fn observed_loglik_gaussian_cov(
    data: &MaskedDataset,
    sigma_x: &Array2<f64>,
) -> Result<(f64, usize)> {
    let n = data.n();
    let d = data.d();
    if sigma_x.dim() != (d, d) {
        return Err(Error::Shape("covariance does not match data".into()));
    }
    let partials = par::try_map_chunks(n, |range| -> Result<(f64, usize)> {
        let mut acc = 0.0;
        let mut jitters = 0usize;
        for i in range {
            let obs = data.row_observed_indices(i);
            let k = obs.len();
            let mut sigma_oo = Array2::zeros((k, k));
            for (a, &ja) in obs.iter().enumerate() {
                for (b, &jb) in obs.iter().enumerate() {
                    sigma_oo[[a, b]] = sigma_x[[ja, jb]];
                }
            }
            let (chol, jittered) = factor_with_jitter(&sigma_oo)
                .map_err(|e| Error::Numeric(format!("observed block of row {i}: {e}")))?;
            if jittered {
                jitters += 1;
            }
            let x_o = Array1::from_iter(obs.iter().map(|&j| data.x()[[i, j]]));
            let alpha = chol_solve_vec(&chol, &x_o.view());
            let quad = x_o.dot(&alpha);
            acc += -0.5 * (k as f64 * LN_2PI + chol_logdet(&chol) + quad);
        }
        Ok((acc, jitters))
    })?;
    let mut total = 0.0;
    let mut jitter_count = 0;
    for (v, j) in partials {
        total += v;
        jitter_count += j;
    }
    Ok((total, jitter_count))
}

/// Proposal for the Monte Carlo completion: independent zero-centered
/// Gaussians with per-variable standard deviations estimated from the
/// zero-imputed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalDist {
    std: Array1<f64>,
}

impl ProposalDist {
    pub fn new(std: Array1<f64>) -> Result<Self> {
        if std.iter().any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(Error::Config(
                "proposal standard deviations must be positive".into(),
            ));
        }
        Ok(ProposalDist { std })
    }

    pub fn from_zero_imputed(data: &MaskedDataset) -> Result<Self> {
        let imputed = data.zero_imputed();
        let n = imputed.nrows() as f64;
        let mut std = Array1::zeros(imputed.ncols());
        for j in 0..imputed.ncols() {
            let var = imputed.column(j).iter().map(|v| v * v).sum::<f64>() / n;
            if var <= 1e-12 {
                return Err(Error::Config(format!(
                    "proposal variance for column {j} is degenerate"
                )));
            }
            std[j] = var.sqrt();
        }
        Ok(ProposalDist { std })
    }

    pub fn std(&self) -> &Array1<f64> {
        &self.std
    }

    fn sample<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * self.std[j]
    }

    /// Log-density of the listed coordinates of `row` under the proposal.
    pub fn logpdf_coords(&self, coords: &[usize], row: &ArrayView1<f64>) -> f64 {
        let mut acc = 0.0;
        for &j in coords {
            let s = self.std[j];
            let z = row[j] / s;
            acc += -0.5 * (LN_2PI + z * z) - s.ln();
        }
        acc
    }
}

/// Rejection statistics for one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptStats {
    /// Rejection trials drawn (pilot draws excluded).
    pub attempts: u64,
    pub accepts: u64,
    /// Final log envelope constant `log c_r`; NaN for fully observed rows.
    pub log_envelope: f64,
}

/// Per-row posterior completions: `ns` completed d-vectors per original row,
/// agreeing with the row on its observed coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionSet {
    stacked: Array2<f64>,
    ns: usize,
    row_stats: Vec<AcceptStats>,
}

impl CompletionSet {
    /// All completions stacked `(n * ns) x d`; completions of row `i` occupy
    /// rows `i*ns .. (i+1)*ns`.
    pub fn stacked(&self) -> &Array2<f64> {
        &self.stacked
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    pub fn n_rows(&self) -> usize {
        self.row_stats.len()
    }

    pub fn row_stats(&self) -> &[AcceptStats] {
        &self.row_stats
    }

    pub fn row_completions(&self, i: usize) -> ndarray::ArrayView2<'_, f64> {
        self.stacked
            .slice(ndarray::s![i * self.ns..(i + 1) * self.ns, ..])
    }

    /// Pooled acceptance rate over rows that actually sampled.
    pub fn acceptance_rate(&self) -> f64 {
        let attempts: u64 = self.row_stats.iter().map(|s| s.attempts).sum();
        let accepts: u64 = self.row_stats.iter().map(|s| s.accepts).sum();
        if attempts == 0 {
            1.0
        } else {
            accepts as f64 / attempts as f64
        }
    }

    /// Debug dump: one record per completion with its source row index.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let d = self.stacked.ncols();
        let mut header = vec!["row".to_string(), "sample".to_string()];
        header.extend((0..d).map(|j| format!("x{j}")));
        writer.write_record(&header)?;
        for i in 0..self.n_rows() {
            for k in 0..self.ns {
                let mut record = vec![i.to_string(), k.to_string()];
                record.extend(
                    self.stacked
                        .row(i * self.ns + k)
                        .iter()
                        .map(|v| format!("{v}")),
                );
                writer.write_record(&record)?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Draws `ns` exact posterior samples of each row's missing coordinates by
/// rejection sampling against the proposal.
///
/// The per-row envelope `c_r` is sized from a pilot batch and inflated by a
/// safety factor; any later envelope violation raises `c_r` and restarts
/// that row so the sampler stays exact. Rows exceeding
/// `ns * max_attempts_per_sample` trials fail with diagnostics.
pub fn mc_complete(
    data: &MaskedDataset,
    theta: &ResidualModel,
    ns: usize,
    proposal: &ProposalDist,
    seed: u64,
    max_attempts_per_sample: usize,
) -> Result<CompletionSet> {
    if ns == 0 {
        return Err(Error::Config("ns must be at least 1".into()));
    }
    let d = data.d();
    if theta.dim() != d || proposal.std.len() != d {
        return Err(Error::Shape(
            "model/proposal dimension does not match data".into(),
        ));
    }
    let n = data.n();
    let per_row = par::try_map_collect(n, |i| complete_row(data, theta, ns, proposal, seed, i, max_attempts_per_sample))?;

    let mut stacked = Array2::zeros((n * ns, d));
    let mut row_stats = Vec::with_capacity(n);
    for (i, (comps, stats)) in per_row.into_iter().enumerate() {
        stacked
            .slice_mut(ndarray::s![i * ns..(i + 1) * ns, ..])
            .assign(&comps);
        row_stats.push(stats);
    }
    Ok(CompletionSet {
        stacked,
        ns,
        row_stats,
    })
}

fn complete_row(
    data: &MaskedDataset,
    theta: &ResidualModel,
    ns: usize,
    proposal: &ProposalDist,
    seed: u64,
    row: usize,
    max_attempts_per_sample: usize,
) -> Result<(Array2<f64>, AcceptStats)> {
    let d = data.d();
    let miss = data.row_missing_indices(row);
    let mut base = Array1::zeros(d);
    for j in 0..d {
        if data.is_observed(row, j) {
            base[j] = data.x()[[row, j]];
        }
    }
    let mut comps = Array2::zeros((ns, d));
    if miss.is_empty() {
        for k in 0..ns {
            comps.row_mut(k).assign(&base);
        }
        return Ok((
            comps,
            AcceptStats {
                attempts: 0,
                accepts: 0,
                log_envelope: f64::NAN,
            },
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, row as u64));
    let mut candidate = base.clone();
    let log_ratio = |candidate: &Array1<f64>| {
        joint_logdensity(theta, &candidate.view())
            - proposal.logpdf_coords(&miss, &candidate.view())
    };

    let mut pilot_max = f64::NEG_INFINITY;
    for _ in 0..PILOT_DRAWS {
        for &j in &miss {
            candidate[j] = proposal.sample(j, &mut rng);
        }
        pilot_max = pilot_max.max(log_ratio(&candidate));
    }
    if !pilot_max.is_finite() {
        return Err(Error::Numeric(format!(
            "pilot density ratios non-finite at row {row}"
        )));
    }
    let mut log_cr = ENVELOPE_SAFETY.ln() + pilot_max;

    let budget = ns as u64 * max_attempts_per_sample as u64;
    let mut attempts = 0u64;
    let mut accepted = 0usize;
    while accepted < ns {
        if attempts >= budget {
            return Err(Error::AcceptanceBudget {
                row,
                attempts,
                accepted,
                needed: ns,
                log_envelope: log_cr,
            });
        }
        attempts += 1;
        for &j in &miss {
            candidate[j] = proposal.sample(j, &mut rng);
        }
        let lr = log_ratio(&candidate);
        if lr > log_cr {
            // Envelope violated: the accepted set is no longer an exact
            // posterior sample. Raise the constant and restart this row.
            log_cr = ENVELOPE_SAFETY.ln() + lr;
            accepted = 0;
            continue;
        }
        let u: f64 = rng.random();
        if u.ln() < lr - log_cr {
            comps.row_mut(accepted).assign(&candidate);
            accepted += 1;
        }
    }
    Ok((
        comps,
        AcceptStats {
            attempts,
            accepts: ns as u64,
            log_envelope: log_cr,
        },
    ))
}

/// The Monte Carlo expected complete-data log-likelihood: the average over
/// the `ns` completions of each row of the joint log-density under `theta`,
/// summed over rows. Averaging (rather than summing) over `ns` keeps values
/// comparable across `ns` choices without changing the M-step argmax.
pub fn mc_q_value(completions: &CompletionSet, theta: &ResidualModel) -> f64 {
    let stacked = completions.stacked();
    let total: f64 = stacked
        .rows()
        .into_iter()
        .map(|row| joint_logdensity(theta, &row))
        .sum();
    total / completions.ns() as f64
}

/// Importance-style estimate of the observed-data log-likelihood from the
/// rejection statistics: for each sampled row, `E[accept] = p(x_o) / c_r`.
/// Diagnostic only (biased for the log, and restarts skew the rate).
pub fn mc_observed_loglik_estimate(completions: &CompletionSet, theta: &ResidualModel) -> f64 {
    let mut total = 0.0;
    for (i, stats) in completions.row_stats().iter().enumerate() {
        if stats.attempts == 0 {
            let row = completions.stacked().row(i * completions.ns());
            total += joint_logdensity(theta, &row);
        } else if stats.accepts > 0 {
            total += (stats.accepts as f64 / stats.attempts as f64).ln() + stats.log_envelope;
        }
    }
    total
}
