//! Model comparison: posterior likelihood ratio, the mixture-weight Gibbs
//! sampler, batch-means standard errors and predictive interval checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::filter::{bb_forward_filter, ue_forward_filter, FilterOutput, ReturnsSeries};
use crate::matops::logdet_spd;
use crate::randsamp::{sample_beta, sample_mvnormal_prec, RngHandle};
use crate::smoother::{bb_backward_sample, ue_backward_sample, PrecisionPath, SmoothedEnsemble};
use crate::stats::{mean, variance};
use crate::volproc::{BbHyper, UeHyper};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `(1/2) log|Φ| - (1/2) r'Φr`, the data-dependent part of `log N(r | 0, Φ^{-1})`.
fn normal_log_kernel(r: &[f64], phi: &crate::matops::SymPd) -> f64 {
    let rc = phi.chol().as_matrix();
    let q = r.len();
    let mut quad = 0.0;
    for i in 0..q {
        let mut s = 0.0;
        for j in i..q {
            s += rc[(i, j)] * r[j];
        }
        quad += s * s;
    }
    0.5 * logdet_spd(phi) - 0.5 * quad
}

/// `log L(Φ_{0:T}) = Σ_{t=1}^T log N_q(r_t | 0, Φ_t^{-1})`.
pub fn path_loglik(path: &PrecisionPath, data: &ReturnsSeries) -> Result<f64> {
    if path.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: path.len() });
    }
    if path.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), found: path.dim() });
    }
    let c = 0.5 * data.dim() as f64 * LN_2PI;
    Ok((0..data.len()).map(|t| normal_log_kernel(data.get(t), path.phi(t + 1)) - c).sum())
}

/// `log Σ exp(x_i)`, shifted by the maximum.
pub fn lse(xs: &[f64]) -> Result<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if m == f64::NEG_INFINITY || m.is_nan() {
        return Ok(m);
    }
    Ok(m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
}

/// `LSE(x) - log N`: the log of the average of `exp(x_i)`.
pub fn log_mean_exp(xs: &[f64]) -> Result<f64> {
    Ok(lse(xs)? - (xs.len() as f64).ln())
}

/// Log posterior likelihood ratio from per-draw log-likelihoods.
pub fn log_plr_from_logliks(ll_u: &[f64], ll_b: &[f64]) -> Result<f64> {
    Ok(log_mean_exp(ll_u)? - log_mean_exp(ll_b)?)
}

/// `log { E[L(Φ^U) | D_T] / E[L(Φ^B) | D_T] }` estimated from two ensembles.
/// Cached log-likelihoods are used when present.
pub fn log_plr(ens_u: &SmoothedEnsemble, ens_b: &SmoothedEnsemble, data: &ReturnsSeries) -> Result<f64> {
    let get = |e: &SmoothedEnsemble| -> Result<Vec<f64>> {
        match e.logliks() {
            Some(ll) => Ok(ll.to_vec()),
            None => e.paths().iter().map(|p| path_loglik(p, data)).collect(),
        }
    };
    log_plr_from_logliks(&get(ens_u)?, &get(ens_b)?)
}

/// `P(z_t = 1)` from the two unnormalized log weights.
pub fn z_probability(log_w1: f64, log_w0: f64) -> f64 {
    let d = log_w0 - log_w1;
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Standard error of the mean from `n_batches` equal batches (remainder dropped).
pub fn batch_means_se(samples: &[f64], n_batches: usize) -> Result<f64> {
    if n_batches < 2 {
        return Err(Error::invalid("batch means need at least two batches"));
    }
    let size = samples.len() / n_batches;
    if size < 1 {
        return Err(Error::invalid(format!("{} samples cannot fill {n_batches} batches", samples.len())));
    }
    let means: Vec<f64> = samples.chunks_exact(size).take(n_batches).map(mean).collect();
    Ok((variance(&means) / n_batches as f64).sqrt())
}

/// How the two precision paths are produced inside the Gibbs sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureMode {
    /// Each model's path is refreshed from its own imputed series.
    #[default]
    Full,
    /// Both components share the UE path and the observed returns, so the
    /// likelihood terms cancel.
    Tied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub a0: f64,
    pub b0: f64,
    pub iterations: usize,
    /// Defaults to 10% of `iterations`.
    pub burn_in: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub mode: MixtureMode,
}

impl MixtureConfig {
    pub fn new(a0: f64, b0: f64, iterations: usize, seed: u64) -> Self {
        MixtureConfig { a0, b0, iterations, burn_in: None, seed, mode: MixtureMode::Full }
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iterations / 10)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0 && self.b0 > 0.0) || !self.a0.is_finite() || !self.b0.is_finite() {
            return Err(Error::invalid(format!("Beta prior shapes must be positive, got ({}, {})", self.a0, self.b0)));
        }
        if self.iterations <= self.burn_in() {
            return Err(Error::invalid(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations,
                self.burn_in()
            )));
        }
        Ok(())
    }
}

/// Post-burn-in draws of the mixture sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTrace {
    pub alpha: Vec<f64>,
    /// `z_{1:T}` per kept iteration.
    pub z: Vec<Vec<bool>>,
    /// `(a_1, b_1)` for every iteration, burn-in included.
    pub beta_shapes: Vec<(f64, f64)>,
    pub alpha_init: f64,
    pub z_init: Vec<bool>,
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub alpha_mean: f64,
    pub alpha_se: f64,
    pub prob_alpha_below_half: f64,
    pub prob_alpha_below_half_se: f64,
    pub n_kept: usize,
    pub n_batches: usize,
}

impl MixtureTrace {
    /// Posterior summaries with batch-means standard errors (default `floor(sqrt(N))` batches).
    pub fn summary(&self, n_batches: Option<usize>) -> Result<MixtureSummary> {
        let n = self.alpha.len();
        let nb = n_batches.unwrap_or((n as f64).sqrt().floor() as usize);
        let below: Vec<f64> = self.alpha.iter().map(|a| if *a < 0.5 { 1.0 } else { 0.0 }).collect();
        Ok(MixtureSummary {
            alpha_mean: mean(&self.alpha),
            alpha_se: batch_means_se(&self.alpha, nb)?,
            prob_alpha_below_half: mean(&below),
            prob_alpha_below_half_se: batch_means_se(&below, nb)?,
            n_kept: n,
            n_batches: nb,
        })
    }

    /// Posterior mean of each `z_t`.
    pub fn z_means(&self) -> Vec<f64> {
        let t = self.z_init.len();
        let n = self.z.len() as f64;
        (0..t).map(|i| self.z.iter().filter(|z| z[i]).count() as f64 / n).collect()
    }
}

fn ffbs_ue(series: &ReturnsSeries, ue: &UeHyper, rng: &mut RngHandle) -> Result<PrecisionPath> {
    ue_backward_sample(&ue_forward_filter(series, ue)?, ue, rng)
}

fn ffbs_bb(series: &ReturnsSeries, bb: &BbHyper, rng: &mut RngHandle) -> Result<PrecisionPath> {
    bb_backward_sample(&bb_forward_filter(series, bb)?, bb, rng)
}

/// Gibbs sampler for the mixture weight `α` in
/// `r_t ~ α N(0, (Φ^U_t)^{-1}) + (1 - α) N(0, (Φ^B_t)^{-1})`.
///
/// Each sweep, given `z`: impute the unobserved component returns, draw
/// `α ~ Beta(a0 + Σz, b0 + T - Σz)`, refresh both paths by forward filtering
/// and backward sampling, then draw each `z_t` by comparing `r^U_t` under
/// `Φ^U_t` with `r^B_t` under `Φ^B_t`, where one of the two is the observed
/// return and the other the current imputation.
/// Initial state: `α` from its prior, `z_t ~ Bernoulli(1/2)`, paths sampled
/// from the observed series.
pub fn mixture_gibbs(data: &ReturnsSeries, ue: &UeHyper, bb: &BbHyper, cfg: &MixtureConfig) -> Result<MixtureTrace> {
    cfg.validate()?;
    let t_len = data.len();
    if t_len == 0 {
        return Err(Error::invalid("the mixture sampler needs at least one observation"));
    }
    if ue.q() != data.dim() || bb.q() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), found: ue.q() });
    }
    let q = data.dim();
    let mut rng = RngHandle::new(cfg.seed);
    let mut alpha = sample_beta(cfg.a0, cfg.b0, &mut rng)?;
    let mut z: Vec<bool> = (0..t_len).map(|_| rng.bernoulli(0.5)).collect();
    let alpha_init = alpha;
    let z_init = z.clone();
    let mut phi_u = ffbs_ue(data, ue, &mut rng)?;
    let mut phi_b = match cfg.mode {
        MixtureMode::Full => ffbs_bb(data, bb, &mut rng)?,
        MixtureMode::Tied => phi_u.clone(),
    };
    let burn = cfg.burn_in();
    let mut trace = MixtureTrace {
        alpha: Vec::with_capacity(cfg.iterations - burn),
        z: Vec::with_capacity(cfg.iterations - burn),
        beta_shapes: Vec::with_capacity(cfg.iterations),
        alpha_init,
        z_init,
        burn_in: burn,
    };
    for iter in 0..cfg.iterations {
        let mut r_u = Vec::with_capacity(t_len);
        let mut r_b = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let r = data.get(t).to_vec();
            if cfg.mode == MixtureMode::Tied {
                r_b.push(r.clone());
                r_u.push(r);
            } else if z[t] {
                r_b.push(sample_mvnormal_prec(phi_b.phi(t + 1), &mut rng));
                r_u.push(r);
            } else {
                r_u.push(sample_mvnormal_prec(phi_u.phi(t + 1), &mut rng));
                r_b.push(r);
            }
        }
        let ones = z.iter().filter(|v| **v).count() as f64;
        let (a1, b1) = (cfg.a0 + ones, cfg.b0 + t_len as f64 - ones);
        alpha = sample_beta(a1, b1, &mut rng)?;
        trace.beta_shapes.push((a1, b1));
        let series_u = ReturnsSeries::new(q, r_u, None)?;
        phi_u = ffbs_ue(&series_u, ue, &mut rng)?;
        let series_b = ReturnsSeries::new(q, r_b, None)?;
        phi_b = match cfg.mode {
            MixtureMode::Full => ffbs_bb(&series_b, bb, &mut rng)?,
            MixtureMode::Tied => phi_u.clone(),
        };
        let (la, lb) = (alpha.ln(), (1.0 - alpha).ln());
        for (t, zt) in z.iter_mut().enumerate() {
            let w1 = la + normal_log_kernel(series_u.get(t), phi_u.phi(t + 1));
            let w0 = lb + normal_log_kernel(series_b.get(t), phi_b.phi(t + 1));
            *zt = rng.bernoulli(z_probability(w1, w0));
        }
        if iter >= burn {
            trace.alpha.push(alpha);
            trace.z.push(z.clone());
        }
    }
    Ok(trace)
}

/// Central predictive intervals for each `r_{i,t}` from the one-step forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcResult {
    pub level: f64,
    /// Upper interval ends; the intervals are `[-upper, upper]`.
    pub upper: Vec<Vec<f64>>,
    /// Interval lengths per time and coordinate.
    pub lengths: Vec<Vec<f64>>,
    /// Running fraction of observed returns inside their intervals, all coordinates pooled.
    pub coverage: Vec<f64>,
}

/// Predictive intervals from the univariate-t margins of the forecast: with
/// `ν = n_t + 1 - q` and scale `S = discount D_{t-1} / ν`, `r_{i,t}` is
/// `t_ν(0, S_ii)`.
pub fn ppc_intervals(filt: &FilterOutput, data: &ReturnsSeries, level: f64) -> Result<PpcResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("interval level must lie in (0, 1), got {level}")));
    }
    if filt.len() != data.len() || filt.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: filt.len(), found: data.len() });
    }
    if filt.k != 1.0 {
        return Err(Error::invalid("predictive intervals need a k = 1 returns filter"));
    }
    let q = data.dim();
    let mut upper = Vec::with_capacity(data.len());
    let mut lengths = Vec::with_capacity(data.len());
    let mut coverage = Vec::with_capacity(data.len());
    let mut inside = 0usize;
    for t in 0..data.len() {
        let nu = filt.prior_df_path()[t] + 1.0 - q as f64;
        let dist = StudentsT::new(0.0, 1.0, nu).map_err(|e| Error::invalid(e.to_string()))?;
        let tq = dist.inverse_cdf(0.5 * (1.0 + level));
        let d = filt.d(t);
        let up: Vec<f64> = (0..q).map(|i| tq * (filt.discount * d.get(i, i) / nu).sqrt()).collect();
        inside += data.get(t).iter().zip(&up).filter(|(r, u)| r.abs() <= **u).count();
        coverage.push(inside as f64 / ((t + 1) * q) as f64);
        lengths.push(up.iter().map(|u| 2.0 * u).collect());
        upper.push(up);
    }
    Ok(PpcResult { level, upper, lengths, coverage })
}
