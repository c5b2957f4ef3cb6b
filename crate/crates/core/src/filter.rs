//! Forward filtering, one-step forecast densities, marginal likelihood and
//! the hyperparameter grid search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{inv_upper, logdet_spd, quad_form, spd_inverse, SymMatrix, SymPd, UpperTri};
use crate::specfun::{log_gamma, log_multigamma};
use crate::volproc::{bb_beta_shapes, BbHyper, ModelTag, UeHyper};

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// A `T x q` series of return vectors with optional timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsSeries {
    q: usize,
    returns: Vec<Vec<f64>>,
    timestamps: Option<Vec<String>>,
}

impl ReturnsSeries {
    pub fn new(q: usize, returns: Vec<Vec<f64>>, timestamps: Option<Vec<String>>) -> Result<Self> {
        if q == 0 {
            return Err(Error::invalid("returns dimension must be at least 1"));
        }
        for (t, r) in returns.iter().enumerate() {
            if r.len() != q {
                return Err(Error::DimensionMismatch { expected: q, found: r.len() });
            }
            if let Some(c) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse { row: t + 1, column: c + 1, message: "non-finite return".into() });
            }
        }
        if let Some(ts) = &timestamps {
            if ts.len() != returns.len() {
                return Err(Error::DimensionMismatch { expected: returns.len(), found: ts.len() });
            }
        }
        Ok(ReturnsSeries { q, returns, timestamps })
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Return at 0-based position `t` (time `t + 1`).
    pub fn get(&self, t: usize) -> &[f64] {
        &self.returns[t]
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }

    /// Rows `range`, keeping their timestamps.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ReturnsSeries {
        ReturnsSeries {
            q: self.q,
            returns: self.returns[range.clone()].to_vec(),
            timestamps: self.timestamps.as_ref().map(|ts| ts[range].to_vec()),
        }
    }

    fn check_dim(&self, q: usize) -> Result<()> {
        if self.q != q {
            return Err(Error::DimensionMismatch { expected: q, found: self.q });
        }
        Ok(())
    }
}

/// Filtered posteriors `Φ_t | D_t ~ Wishart(k_t, (k D_t)^{-1})`, `t = 0..T`.
#[derive(Debug, Clone, Serialize)]
pub struct FilterOutput {
    pub model: ModelTag,
    pub k: f64,
    pub discount: f64,
    d: Vec<SymPd>,
    post_df: Vec<f64>,
    prior_df: Vec<f64>,
    #[serde(skip)]
    p: Vec<UpperTri>,
    #[serde(skip)]
    p_inv: Vec<UpperTri>,
    log_forecast: Vec<f64>,
    log_marginal: f64,
}

impl FilterOutput {
    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.d.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.d[0].dim()
    }

    /// `D_t`, `t = 0..=T`.
    pub fn d(&self, t: usize) -> &SymPd {
        &self.d[t]
    }

    pub fn d_path(&self) -> &[SymPd] {
        &self.d
    }

    /// Posterior df `k_t`, `t = 0..=T`.
    pub fn post_df(&self, t: usize) -> f64 {
        self.post_df[t]
    }

    pub fn post_df_path(&self) -> &[f64] {
        &self.post_df
    }

    /// Prior df of `Φ_t | D_{t-1}`, `t = 1..=T` (index `t - 1`).
    pub fn prior_df_path(&self) -> &[f64] {
        &self.prior_df
    }

    /// `P_t = uchol((k D_t)^{-1})`.
    pub fn p(&self, t: usize) -> &UpperTri {
        &self.p[t]
    }

    pub fn p_inv(&self, t: usize) -> &UpperTri {
        &self.p_inv[t]
    }

    /// `log p(y_t | D_{t-1})`, `t = 1..=T` (index `t - 1`).
    pub fn log_forecasts(&self) -> &[f64] {
        &self.log_forecast
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }
}

fn scale_factor(d: &SymPd, k: f64) -> Result<(UpperTri, UpperTri)> {
    let p = spd_inverse(&d.scaled(k)?)?.chol().clone();
    let p_inv = inv_upper(&p)?;
    Ok((p, p_inv))
}

/// Prior df schedule: UE keeps `n` and `n + k`; BB follows `k_t = β k_{t-1} + k`.
enum DfSchedule<'a> {
    Ue(&'a UeHyper),
    Bb(&'a BbHyper),
}

impl DfSchedule<'_> {
    fn initial(&self) -> f64 {
        match self {
            DfSchedule::Ue(h) => h.n() + h.k(),
            DfSchedule::Bb(h) => h.k0(),
        }
    }
    fn prior(&self, post_prev: f64) -> f64 {
        match self {
            DfSchedule::Ue(h) => h.n(),
            DfSchedule::Bb(h) => h.beta() * post_prev,
        }
    }
    fn posterior(&self, post_prev: f64) -> f64 {
        match self {
            DfSchedule::Ue(h) => h.n() + h.k(),
            DfSchedule::Bb(h) => h.next_df(post_prev),
        }
    }
    fn check(&self, post: f64, q: usize) -> Result<()> {
        if let DfSchedule::Bb(h) = self {
            bb_beta_shapes(q, post, h.beta())?;
        }
        Ok(())
    }
}

struct Observation<'a> {
    y: SymMatrix,
    kind: ObsKind<'a>,
}

enum ObsKind<'a> {
    Return(&'a [f64]),
    Wishart(&'a SymPd),
}

fn run_filter<'a>(
    model: ModelTag,
    k: f64,
    discount: f64,
    d0: &SymPd,
    sched: DfSchedule<'_>,
    obs: impl Iterator<Item = Observation<'a>>,
) -> Result<FilterOutput> {
    let q = d0.dim();
    let mut d = vec![d0.clone()];
    let mut post_df = vec![sched.initial()];
    let mut prior_df = Vec::new();
    let mut log_forecast = Vec::new();
    sched.check(post_df[0], q)?;
    for o in obs {
        let d_prev = d.last().expect("nonempty");
        let k_prev = *post_df.last().expect("nonempty");
        let n_prior = sched.prior(k_prev);
        let d_next = SymPd::from_sym(d_prev.as_sym().scale_add(discount, &o.y)?)?;
        let lf = match o.kind {
            ObsKind::Return(r) => forecast_logdensity(r, d_prev, n_prior, discount)?,
            ObsKind::Wishart(y) => wishart_forecast_logdensity(y, d_prev, &d_next, n_prior, k, discount)?,
        };
        let k_next = sched.posterior(k_prev);
        sched.check(k_next, q)?;
        log_forecast.push(lf);
        prior_df.push(n_prior);
        post_df.push(k_next);
        d.push(d_next);
    }
    let mut p = Vec::with_capacity(d.len());
    let mut p_inv = Vec::with_capacity(d.len());
    for dt in &d {
        let (a, b) = scale_factor(dt, k)?;
        p.push(a);
        p_inv.push(b);
    }
    let log_marginal = log_forecast.iter().sum();
    Ok(FilterOutput { model, k, discount, d, post_df, prior_df, p, p_inv, log_forecast, log_marginal })
}

fn require_unit_k(k: f64) -> Result<()> {
    if k != 1.0 {
        return Err(Error::invalid(format!(
            "the returns filter uses y_t = r_t r_t' and needs k = 1, got k = {k}"
        )));
    }
    Ok(())
}

fn return_obs(data: &ReturnsSeries) -> impl Iterator<Item = Observation<'_>> {
    data.returns.iter().map(|r| Observation { y: SymMatrix::outer(r), kind: ObsKind::Return(r) })
}

/// UE filter on returns, `y_t = r_t r_t'`, `D_t = λ D_{t-1} + y_t`.
pub fn ue_forward_filter(data: &ReturnsSeries, ue: &UeHyper) -> Result<FilterOutput> {
    data.check_dim(ue.q())?;
    require_unit_k(ue.k())?;
    run_filter(ModelTag::Ue, ue.k(), ue.lambda(), ue.d0(), DfSchedule::Ue(ue), return_obs(data))
}

/// BB filter on returns, `D_t = b D_{t-1} + y_t`, `k_t = β k_{t-1} + k`.
pub fn bb_forward_filter(data: &ReturnsSeries, bb: &BbHyper) -> Result<FilterOutput> {
    data.check_dim(bb.q())?;
    require_unit_k(bb.k())?;
    run_filter(ModelTag::Bb, bb.k(), bb.b(), bb.d0(), DfSchedule::Bb(bb), return_obs(data))
}

fn wishart_obs(ys: &[SymPd], q: usize) -> Result<impl Iterator<Item = Observation<'_>>> {
    if let Some(y) = ys.iter().find(|y| y.dim() != q) {
        return Err(Error::DimensionMismatch { expected: q, found: y.dim() });
    }
    Ok(ys.iter().map(|y| Observation { y: y.as_sym().clone(), kind: ObsKind::Wishart(y) }))
}

/// UE filter on full-rank Wishart observations `y_t ~ Wishart(k, (k Φ_t)^{-1})`.
pub fn ue_forward_filter_wishart(ys: &[SymPd], ue: &UeHyper) -> Result<FilterOutput> {
    let obs = wishart_obs(ys, ue.q())?;
    run_filter(ModelTag::Ue, ue.k(), ue.lambda(), ue.d0(), DfSchedule::Ue(ue), obs)
}

/// BB filter on full-rank Wishart observations.
pub fn bb_forward_filter_wishart(ys: &[SymPd], bb: &BbHyper) -> Result<FilterOutput> {
    let obs = wishart_obs(ys, bb.q())?;
    run_filter(ModelTag::Bb, bb.k(), bb.b(), bb.d0(), DfSchedule::Bb(bb), obs)
}

/// Log density of the one-step forecast of `r_t` when `k = 1` and
/// `Φ_t | D_{t-1} ~ Wishart(n, (λ D_{t-1})^{-1})`: a multivariate t with
/// `n + 1 - q` degrees of freedom.
pub fn forecast_logdensity(r: &[f64], d_prev: &SymPd, n: f64, lambda: f64) -> Result<f64> {
    let q = d_prev.dim();
    if !(n > q as f64 - 1.0) {
        return Err(Error::invalid(format!("forecast df n = {n} must exceed q - 1")));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid(format!("discount must be positive, got {lambda}")));
    }
    let quad = quad_form(r, d_prev)?;
    let logdet = q as f64 * lambda.ln() + logdet_spd(d_prev);
    Ok(t_kernel_const(q, n)? - 0.5 * logdet - 0.5 * (n + 1.0) * (quad / lambda).ln_1p())
}

fn t_kernel_const(q: usize, n: f64) -> Result<f64> {
    Ok(log_gamma(0.5 * (n + 1.0))? - log_gamma(0.5 * (n + 1.0 - q as f64))? - 0.5 * q as f64 * LN_PI)
}

/// Log density of a full-rank Wishart observation `y_t` given `D_{t-1}`,
/// integrating `Φ_t ~ Wishart(n, (k λ D_{t-1})^{-1})`; `d_next = λ D_{t-1} + y_t`.
pub fn wishart_forecast_logdensity(
    y: &SymPd,
    d_prev: &SymPd,
    d_next: &SymPd,
    n: f64,
    k: f64,
    lambda: f64,
) -> Result<f64> {
    let q = y.dim();
    if !(k > q as f64 - 1.0) {
        return Err(Error::invalid(format!("Wishart observations need k > q - 1, got k = {k}")));
    }
    let qf = q as f64;
    Ok(0.5 * (k - qf - 1.0) * logdet_spd(y) + log_multigamma(q, 0.5 * (n + k))?
        - log_multigamma(q, 0.5 * k)?
        - log_multigamma(q, 0.5 * n)?
        + 0.5 * n * (qf * lambda.ln() + logdet_spd(d_prev))
        - 0.5 * (n + k) * logdet_spd(d_next))
}

/// `log |λ D_{t-1} + r r'|` from `log |D_{t-1}|` by the rank-one determinant lemma.
pub fn logdet_update(logdet_prev: f64, r: &[f64], d_prev: &SymPd, lambda: f64, q: usize) -> Result<f64> {
    if r.len() != q || d_prev.dim() != q {
        return Err(Error::DimensionMismatch { expected: q, found: r.len() });
    }
    let quad = quad_form(r, d_prev)?;
    Ok((quad / lambda).ln_1p() + q as f64 * lambda.ln() + logdet_prev)
}

/// Log marginal likelihood of returns under UE with `k = 1` (or matched BB),
/// with `log |D_t|` carried by [`logdet_update`].
pub fn marginal_loglik(data: &ReturnsSeries, n: f64, lambda: f64, d0: &SymPd) -> Result<f64> {
    let q = d0.dim();
    data.check_dim(q)?;
    if !(n > q as f64 - 1.0) || !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!("invalid (n, lambda) = ({n}, {lambda}) for q = {q}")));
    }
    let c = t_kernel_const(q, n)?;
    let qf = q as f64;
    let mut d = d0.clone();
    let mut logdet = logdet_spd(d0);
    let mut total = 0.0;
    for r in &data.returns {
        let quad = quad_form(r, &d)?;
        total += c - 0.5 * (qf * lambda.ln() + logdet) - 0.5 * (n + 1.0) * (quad / lambda).ln_1p();
        logdet = logdet_update(logdet, r, &d, lambda, q)?;
        d = SymPd::from_sym(d.as_sym().scale_add(lambda, &SymMatrix::outer(r))?)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: f64,
    pub lambda: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub n_star: f64,
    pub lambda_star: f64,
    pub best_loglik: f64,
    /// Every grid point, `n`-major in the order given.
    pub surface: Vec<GridPoint>,
}

/// Maximizes [`marginal_loglik`] over `n_grid x lambda_grid`. Ties go to the
/// smallest `n`, then the smallest `λ`.
pub fn grid_search(data: &ReturnsSeries, d0: &SymPd, n_grid: &[f64], lambda_grid: &[f64]) -> Result<GridResult> {
    if n_grid.is_empty() || lambda_grid.is_empty() {
        return Err(Error::invalid("grid search needs nonempty n and lambda grids"));
    }
    let q = d0.dim() as f64;
    if let Some(n) = n_grid.iter().find(|n| !(**n > q - 1.0) || !n.is_finite()) {
        return Err(Error::invalid(format!("grid value n = {n} must exceed q - 1")));
    }
    if let Some(l) = lambda_grid.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
        return Err(Error::invalid(format!("grid value lambda = {l} must lie in (0, 1)")));
    }
    let points: Vec<(f64, f64)> = n_grid.iter().flat_map(|n| lambda_grid.iter().map(move |l| (*n, *l))).collect();
    let surface = points
        .par_iter()
        .map(|(n, lambda)| {
            marginal_loglik(data, *n, *lambda, d0).map(|loglik| GridPoint { n: *n, lambda: *lambda, loglik })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = surface.iter().find(|p| p.loglik.is_nan()) {
        return Err(Error::invalid(format!("marginal likelihood is NaN at n = {}, lambda = {}", bad.n, bad.lambda)));
    }
    let best = surface
        .iter()
        .min_by(|a, b| {
            b.loglik
                .total_cmp(&a.loglik)
                .then(a.n.total_cmp(&b.n))
                .then(a.lambda.total_cmp(&b.lambda))
        })
        .expect("nonempty grid");
    Ok(GridResult { n_star: best.n, lambda_star: best.lambda, best_loglik: best.loglik, surface })
}

/// Discount `λ = (n - q - 1)/(n - q - 1 + k)` tied to `n`.
pub fn constrained_lambda(n: f64, k: f64, q: usize) -> Result<f64> {
    let m = n - q as f64 - 1.0;
    if !(m > 0.0) || !(k >= 0.0) {
        return Err(Error::invalid(format!("constrained lambda needs n > q + 1 and k >= 0, got n = {n}, k = {k}")));
    }
    Ok(m / (m + k))
}
