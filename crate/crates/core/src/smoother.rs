//! Backward sampling of precision paths `Φ_{0:T} | D_T`, path ensembles,
//! correlation summaries and the forward/backward joint-consistency oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilterOutput, ReturnsSeries};
use crate::matops::{congruence, correlation_from_precision, inv_upper, spd_inverse, uchol, SymPd, UpperTri};
use crate::randsamp::{
    sample_bartlett_factor, sample_chi2, sample_wishart_bartlett, sample_wishart_pd, stream_id, RngHandle,
    WishartSpec,
};
use crate::stats::{mean, quantile_sorted, two_sample_z};
use crate::volproc::{bb_evolve_with_factor, ue_evolve, BbHyper, ModelHyper, ModelTag, UeHyper};

const TAG_ENSEMBLE: u16 = 1;
const TAG_JOINT_A: u16 = 2;
const TAG_JOINT_B: u16 = 3;

/// One sampled path `Φ_0, ..., Φ_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPath {
    pub model: ModelTag,
    pub seed: u64,
    pub stream: u64,
    phi: Vec<SymPd>,
}

impl PrecisionPath {
    pub fn new(model: ModelTag, seed: u64, stream: u64, phi: Vec<SymPd>) -> Result<Self> {
        let q = phi.first().ok_or_else(|| Error::invalid("a path holds at least Φ_0"))?.dim();
        if let Some(p) = phi.iter().find(|p| p.dim() != q) {
            return Err(Error::DimensionMismatch { expected: q, found: p.dim() });
        }
        Ok(PrecisionPath { model, seed, stream, phi })
    }

    pub fn dim(&self) -> usize {
        self.phi[0].dim()
    }

    /// `T`; the path holds `T + 1` matrices.
    pub fn len(&self) -> usize {
        self.phi.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn phi(&self, t: usize) -> &SymPd {
        &self.phi[t]
    }

    pub fn phis(&self) -> &[SymPd] {
        &self.phi
    }
}

/// Independent backward-sampled paths, optionally with their log-likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedEnsemble {
    pub model: ModelTag,
    paths: Vec<PrecisionPath>,
    logliks: Option<Vec<f64>>,
}

impl SmoothedEnsemble {
    pub fn new(model: ModelTag, paths: Vec<PrecisionPath>) -> Result<Self> {
        let first = paths.first().ok_or(Error::EmptyEnsemble)?;
        let (q, t) = (first.dim(), first.len());
        if let Some(p) = paths.iter().find(|p| p.dim() != q || p.len() != t) {
            return Err(Error::DimensionMismatch { expected: t, found: p.len() });
        }
        Ok(SmoothedEnsemble { model, paths, logliks: None })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[PrecisionPath] {
        &self.paths
    }

    pub fn dim(&self) -> usize {
        self.paths[0].dim()
    }

    pub fn horizon(&self) -> usize {
        self.paths[0].len()
    }

    /// Cached `log L(Φ_{0:T})` per path, if computed.
    pub fn logliks(&self) -> Option<&[f64]> {
        self.logliks.as_deref()
    }

    /// Computes and caches the per-path log-likelihoods of `data`.
    pub fn with_logliks(mut self, data: &ReturnsSeries) -> Result<Self> {
        let ll = self
            .paths
            .par_iter()
            .map(|p| crate::compare::path_loglik(p, data))
            .collect::<Result<Vec<_>>>()?;
        self.logliks = Some(ll);
        Ok(self)
    }
}

fn require_model(filt: &FilterOutput, want: ModelTag) -> Result<()> {
    if filt.model != want {
        return Err(Error::invalid(format!("expected a {want} filter output, got {}", filt.model)));
    }
    Ok(())
}

/// UE backward draw `Φ_t = λ Φ_{t+1} + Z_t`, `Z_t ~ Wishart(k, P_t'P_t)`.
pub fn ue_backward_step(phi_next: &SymPd, p_t: &UpperTri, lambda: f64, k: f64, rng: &mut RngHandle) -> Result<SymPd> {
    let z = sample_wishart_bartlett(&WishartSpec::new(k, p_t.clone())?, rng)?;
    SymPd::from_sym(phi_next.as_sym().scale_add(lambda, &z)?)
}

/// Samples `Φ_{0:T} | D_T` under UE.
pub fn ue_backward_sample(filt: &FilterOutput, ue: &UeHyper, rng: &mut RngHandle) -> Result<PrecisionPath> {
    require_model(filt, ModelTag::Ue)?;
    let t_max = filt.len();
    let mut rev = Vec::with_capacity(t_max + 1);
    rev.push(sample_wishart_pd(&WishartSpec::new(filt.post_df(t_max), filt.p(t_max).clone())?, rng)?);
    for t in (0..t_max).rev() {
        let next = rev.last().expect("nonempty");
        let phi = ue_backward_step(next, filt.p(t), ue.lambda(), ue.k(), rng)?;
        rev.push(phi);
    }
    rev.reverse();
    PrecisionPath::new(ModelTag::Ue, rng.seed(), rng.stream(), rev)
}

/// Per-path diagnostics of the BB backward sampler.
#[derive(Debug, Clone, Default)]
pub struct BbBackwardTrace {
    /// `(u*_{ii,t})² - (ũ*_{ii,t+1})²` for each step and coordinate.
    pub increments: Vec<Vec<f64>>,
    /// `(1 - β) k_t` at each step, aligned with `increments`.
    pub increment_df: Vec<f64>,
    /// Largest below-diagonal magnitude of the dense bridge products.
    pub bridge_lower_max: f64,
    /// Smallest diagonal entry of the bridge products.
    pub bridge_diag_min: f64,
    /// Largest entrywise gap between the bridge and `uchol(b P_t^{-T} Φ_{t+1} P_t^{-1})`.
    pub bridge_vs_explicit: f64,
    /// Whether off-diagonal Bartlett entries were carried over bit-exactly.
    pub off_diagonal_copied: bool,
}

fn lower_max(m: &nalgebra::DMatrix<f64>) -> f64 {
    let q = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..q {
        for j in 0..i {
            worst = worst.max(m[(i, j)].abs());
        }
    }
    worst
}

/// Descending Bartlett step: keeps `ũ`'s off-diagonal and sets
/// `u*_ii = sqrt(ũ_ii² + θ_i)`, `θ_i ~ χ²((1-β) k_t)`.
fn bb_descend(tilde: &UpperTri, theta_df: f64, rng: &mut RngHandle) -> Result<UpperTri> {
    let mut u = tilde.as_matrix().clone();
    for i in 0..tilde.dim() {
        let theta = sample_chi2(theta_df, rng)?;
        u[(i, i)] = (u[(i, i)] * u[(i, i)] + theta).sqrt();
    }
    Ok(UpperTri::from_upper_part(&u))
}

fn theta_df(beta: f64, k_t: f64) -> Result<f64> {
    let df = (1.0 - beta) * k_t;
    if !(df > 0.0) {
        return Err(Error::invalid(format!("(1 - beta) k_t = {df} must be positive")));
    }
    Ok(df)
}

/// BB backward draw of `Φ_t | Φ_{t+1}, D_t` through the explicit factor
/// `Ũ* = uchol(b P_t^{-T} Φ_{t+1} P_t^{-1})`.
pub fn bb_backward_step(
    phi_next: &SymPd,
    p_t: &UpperTri,
    k_t: f64,
    b: f64,
    beta: f64,
    rng: &mut RngHandle,
) -> Result<SymPd> {
    let p_inv = inv_upper(p_t)?;
    let tilde = uchol(&congruence(p_inv.as_matrix(), phi_next.as_sym()).scaled(b))?;
    let u = bb_descend(&tilde, theta_df(beta, k_t)?, rng)?;
    SymPd::from_sym(u.mul(p_t).gram())
}

/// Samples `Φ_{0:T} | D_T` under BB: a Bartlett draw at `T`, then one
/// chi-square per coordinate and step.
pub fn bb_backward_sample(filt: &FilterOutput, bb: &BbHyper, rng: &mut RngHandle) -> Result<PrecisionPath> {
    bb_backward_core(filt, bb, rng, None)
}

/// [`bb_backward_sample`] that also records sampler diagnostics.
pub fn bb_backward_sample_traced(
    filt: &FilterOutput,
    bb: &BbHyper,
    rng: &mut RngHandle,
) -> Result<(PrecisionPath, BbBackwardTrace)> {
    let mut trace = BbBackwardTrace { bridge_diag_min: f64::INFINITY, off_diagonal_copied: true, ..Default::default() };
    let path = bb_backward_core(filt, bb, rng, Some(&mut trace))?;
    Ok((path, trace))
}

fn bb_backward_core(
    filt: &FilterOutput,
    bb: &BbHyper,
    rng: &mut RngHandle,
    mut trace: Option<&mut BbBackwardTrace>,
) -> Result<PrecisionPath> {
    require_model(filt, ModelTag::Bb)?;
    let q = filt.dim();
    let t_max = filt.len();
    let sqrt_b = bb.b().sqrt();
    let mut u_star = sample_bartlett_factor(q, filt.post_df(t_max), rng)?;
    let mut rev = vec![SymPd::from_sym(u_star.mul(filt.p(t_max)).gram())?];
    for t in (0..t_max).rev() {
        // Ũ*_{t+1} = sqrt(b) U*_{t+1} P_{t+1} P_t^{-1}
        let dense = u_star.as_matrix() * filt.p(t + 1).as_matrix() * filt.p_inv(t).as_matrix() * sqrt_b;
        let tilde = UpperTri::from_upper_part(&dense);
        let df = theta_df(bb.beta(), filt.post_df(t))?;
        let next = bb_descend(&tilde, df, rng)?;
        let phi = SymPd::from_sym(next.mul(filt.p(t)).gram())?;
        if let Some(tr) = trace.as_deref_mut() {
            tr.bridge_lower_max = tr.bridge_lower_max.max(lower_max(&dense));
            for i in 0..q {
                tr.bridge_diag_min = tr.bridge_diag_min.min(tilde.diag(i));
            }
            let explicit = uchol(&congruence(filt.p_inv(t).as_matrix(), rev.last().expect("nonempty").as_sym()).scaled(bb.b()))?;
            let gap = (explicit.as_matrix() - tilde.as_matrix()).abs().max();
            tr.bridge_vs_explicit = tr.bridge_vs_explicit.max(gap);
            for i in 0..q {
                for j in (i + 1)..q {
                    tr.off_diagonal_copied &= next.get(i, j).to_bits() == tilde.get(i, j).to_bits();
                }
            }
            tr.increments.push((0..q).map(|i| next.diag(i).powi(2) - tilde.diag(i).powi(2)).collect());
            tr.increment_df.push(df);
        }
        rev.push(phi);
        u_star = next;
    }
    rev.reverse();
    PrecisionPath::new(ModelTag::Bb, rng.seed(), rng.stream(), rev)
}

/// Backward sample under either model.
pub fn backward_sample(filt: &FilterOutput, hyper: &ModelHyper, rng: &mut RngHandle) -> Result<PrecisionPath> {
    match hyper {
        ModelHyper::Ue(h) => ue_backward_sample(filt, h, rng),
        ModelHyper::Bb(h) => bb_backward_sample(filt, h, rng),
    }
}

/// `n_draws` independent backward paths; draw `i` uses substream `(seed, i)`
/// so results do not depend on the worker count.
pub fn sample_ensemble(filt: &FilterOutput, hyper: &ModelHyper, n_draws: usize, seed: u64) -> Result<SmoothedEnsemble> {
    if n_draws == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let paths = (0..n_draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngHandle::substream(seed, stream_id(TAG_ENSEMBLE, i));
            backward_sample(filt, hyper, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    SmoothedEnsemble::new(hyper.tag(), paths)
}

/// Per-time quantiles of `ρ_ij` computed from `Σ_t = Φ_t^{-1}`.
/// Returns one row per `t = 0..=T`, one column per requested quantile.
pub fn correlation_summary(ens: &SmoothedEnsemble, pair: (usize, usize), quantiles: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (i, j) = pair;
    let q = ens.dim();
    if i == j || i >= q || j >= q {
        return Err(Error::invalid(format!("correlation pair ({i}, {j}) is invalid for q = {q}")));
    }
    if ens.len() < 2 {
        return Err(Error::invalid("correlation summary needs at least two draws"));
    }
    if quantiles.is_empty() || quantiles.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("quantile levels must lie in [0, 1]"));
    }
    (0..=ens.horizon())
        .into_par_iter()
        .map(|t| {
            let mut rho = ens
                .paths
                .iter()
                .map(|p| correlation_from_precision(p.phi(t), i, j))
                .collect::<Result<Vec<_>>>()?;
            rho.sort_by(f64::total_cmp);
            Ok(quantiles.iter().map(|p| quantile_sorted(&rho, *p)).collect())
        })
        .collect()
}

/// Which joint sampler of `(Φ_t, Φ_{t+1}) | D_t` to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointRoute {
    /// Filtered posterior at `t`, then one forward transition.
    Forward,
    /// Prior at `t + 1`, then one backward step.
    Backward,
}

/// One joint sampler: a model, its hyperparameters and a route.
#[derive(Debug, Clone, Copy)]
pub struct JointGenerator<'a> {
    pub hyper: &'a ModelHyper,
    pub route: JointRoute,
}

/// Time-slice inputs: `D_t` and, for BB, the posterior df `k_t`. UE always
/// uses `k_t = n + k`.
#[derive(Debug, Clone)]
pub struct JointSlice {
    pub d_t: SymPd,
    pub k_t: f64,
}

fn joint_draw(g: &JointGenerator<'_>, slice: &JointSlice, p_t: &UpperTri, rng: &mut RngHandle) -> Result<(SymPd, SymPd)> {
    let k = g.hyper.k();
    match (g.hyper, g.route) {
        (ModelHyper::Ue(h), JointRoute::Forward) => {
            let phi_t = sample_wishart_pd(&WishartSpec::new(h.n() + h.k(), p_t.clone())?, rng)?;
            let phi_next = ue_evolve(&phi_t, h, rng)?;
            Ok((phi_t, phi_next))
        }
        (ModelHyper::Bb(h), JointRoute::Forward) => {
            let phi_t = sample_wishart_pd(&WishartSpec::new(slice.k_t, p_t.clone())?, rng)?;
            let phi_next = bb_evolve_with_factor(&phi_t, p_t, slice.k_t, h, rng)?;
            Ok((phi_t, phi_next))
        }
        (ModelHyper::Ue(h), JointRoute::Backward) => {
            let prior = WishartSpec::from_scale(h.n(), &spd_inverse(&slice.d_t.scaled(k * h.lambda())?)?)?;
            let phi_next = sample_wishart_pd(&prior, rng)?;
            let phi_t = ue_backward_step(&phi_next, p_t, h.lambda(), k, rng)?;
            Ok((phi_t, phi_next))
        }
        (ModelHyper::Bb(h), JointRoute::Backward) => {
            let prior = WishartSpec::from_scale(h.beta() * slice.k_t, &spd_inverse(&slice.d_t.scaled(k * h.b())?)?)?;
            let phi_next = sample_wishart_pd(&prior, rng)?;
            let phi_t = bb_backward_step(&phi_next, p_t, slice.k_t, h.b(), h.beta(), rng)?;
            Ok((phi_t, phi_next))
        }
    }
}

/// Unique entries of `Φ_t` then `Φ_{t+1}`, with labels.
fn joint_features(q: usize) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    for (name, _) in [("phi_t", 0), ("phi_t1", 1)] {
        for i in 0..q {
            for j in i..q {
                out.push((format!("{name}[{}{}]", i + 1, j + 1), i != j));
            }
        }
    }
    out
}

fn feature_values(pair: &(SymPd, SymPd)) -> Vec<f64> {
    let q = pair.0.dim();
    let mut v = Vec::with_capacity(q * (q + 1));
    for m in [&pair.0, &pair.1] {
        for i in 0..q {
            for j in i..q {
                v.push(m.get(i, j));
            }
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZStat {
    pub label: String,
    pub z: f64,
    pub involves_off_diagonal: bool,
}

/// Two-sample z statistics between two joint samples of `(Φ_t, Φ_{t+1})`:
/// first moments of every unique entry and second moments of every pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n_draws: usize,
    pub first: Vec<ZStat>,
    pub second: Vec<ZStat>,
}

impl MomentReport {
    pub fn max_abs_z(&self) -> f64 {
        self.first.iter().chain(&self.second).map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_first(&self) -> f64 {
        self.first.iter().map(|s| s.z.abs()).fold(0.0, f64::max)
    }

    /// Largest |z| among second moments involving an off-diagonal entry.
    pub fn max_abs_off_diagonal_second(&self) -> f64 {
        self.second.iter().filter(|s| s.involves_off_diagonal).map(|s| s.z.abs()).fold(0.0, f64::max)
    }
}

fn draw_joint(g: &JointGenerator<'_>, slice: &JointSlice, p_t: &UpperTri, n: usize, seed: u64, tag: u16) -> Result<Vec<Vec<f64>>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngHandle::substream(seed, stream_id(tag, i));
            joint_draw(g, slice, p_t, &mut rng).map(|pair| feature_values(&pair))
        })
        .collect()
}

/// Compares the joint laws produced by two generators at one time slice.
/// Both target `p(Φ_t, Φ_{t+1} | D_t)` when they describe the same model.
pub fn joint_consistency_oracle(
    a: JointGenerator<'_>,
    b: JointGenerator<'_>,
    slice: &JointSlice,
    n_draws: usize,
    seed: u64,
) -> Result<MomentReport> {
    let q = slice.d_t.dim();
    if a.hyper.q() != q || b.hyper.q() != q {
        return Err(Error::DimensionMismatch { expected: q, found: a.hyper.q().max(b.hyper.q()) });
    }
    if a.hyper.k() != b.hyper.k() {
        return Err(Error::invalid("both generators must share the likelihood df k"));
    }
    if n_draws < 2 {
        return Err(Error::invalid("the oracle needs at least two draws per side"));
    }
    let p_t = spd_inverse(&slice.d_t.scaled(a.hyper.k())?)?.chol().clone();
    let xa = draw_joint(&a, slice, &p_t, n_draws, seed, TAG_JOINT_A)?;
    let xb = draw_joint(&b, slice, &p_t, n_draws, seed, TAG_JOINT_B)?;
    let feats = joint_features(q);
    let column = |xs: &[Vec<f64>], f: &dyn Fn(&[f64]) -> f64| xs.iter().map(|x| f(x)).collect::<Vec<f64>>();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (i, (li, oi)) in feats.iter().enumerate() {
        let ca = column(&xa, &|x| x[i]);
        let cb = column(&xb, &|x| x[i]);
        first.push(ZStat { label: li.clone(), z: two_sample_z(&ca, &cb), involves_off_diagonal: *oi });
        for (j, (lj, oj)) in feats.iter().enumerate().skip(i) {
            let ca = column(&xa, &|x| x[i] * x[j]);
            let cb = column(&xb, &|x| x[i] * x[j]);
            second.push(ZStat {
                label: format!("{li}*{lj}"),
                z: two_sample_z(&ca, &cb),
                involves_off_diagonal: *oi || *oj,
            });
        }
    }
    Ok(MomentReport { n_draws, first, second })
}

/// Ensemble mean of `Φ_t` entries, one row per `t`, upper triangle row-major.
pub fn ensemble_mean_entries(ens: &SmoothedEnsemble) -> Vec<Vec<f64>> {
    let q = ens.dim();
    (0..=ens.horizon())
        .map(|t| {
            let mut row = Vec::new();
            for i in 0..q {
                for j in i..q {
                    let xs: Vec<f64> = ens.paths.iter().map(|p| p.phi(t).get(i, j)).collect();
                    row.push(mean(&xs));
                }
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{bb_forward_filter, ue_forward_filter};
    use crate::matops::SymMatrix;
    use crate::randsamp::sample_mvnormal_prec;
    use crate::stats::{ks_statistic, variance};
    use crate::volproc::{example1_moments, match_ue_to_bb};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn series(q: usize, t: usize, seed: u64) -> ReturnsSeries {
        let mut rng = RngHandle::new(seed);
        let prec = SymPd::identity(q);
        ReturnsSeries::new(q, (0..t).map(|_| sample_mvnormal_prec(&prec, &mut rng)).collect(), None).unwrap()
    }

    fn matched(q: usize, n: f64, lambda: f64) -> (UeHyper, BbHyper) {
        let ue = UeHyper::new(1.0, n, lambda, SymPd::identity(q)).unwrap();
        let bb = match_ue_to_bb(&ue).unwrap();
        (ue, bb)
    }

    #[test]
    fn ue_increments_are_rank_k() {
        let data = series(3, 8, 1);
        let (ue, _) = matched(3, 5.0, 0.8);
        let f = ue_forward_filter(&data, &ue).unwrap();
        let mut rng = RngHandle::new(2);
        let path = ue_backward_sample(&f, &ue, &mut rng).unwrap();
        assert_eq!(path.len(), 8);
        for t in 0..8 {
            let z = path.phi(t).as_matrix() - path.phi(t + 1).as_matrix() * 0.8;
            let ev = z.symmetric_eigenvalues();
            let mut ev: Vec<f64> = ev.iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let scale = ev[2].abs();
            assert!(ev[0].abs() < 1e-9 * scale && ev[1].abs() < 1e-9 * scale, "{ev:?}");
            assert!(ev[2] > 0.0);
        }
    }

    #[test]
    fn paths_are_reproducible_and_pd() {
        let data = series(2, 30, 3);
        let (ue, bb) = matched(2, 4.0, 0.9);
        let fu = ue_forward_filter(&data, &ue).unwrap();
        let fb = bb_forward_filter(&data, &bb).unwrap();
        let eu = sample_ensemble(&fu, &ModelHyper::Ue(ue.clone()), 50, 7).unwrap();
        let eu2 = sample_ensemble(&fu, &ModelHyper::Ue(ue), 50, 7).unwrap();
        assert_eq!(eu, eu2);
        let eb = sample_ensemble(&fb, &ModelHyper::Bb(bb), 50, 7).unwrap();
        assert_eq!(eb.horizon(), 30);
        assert_ne!(eu.paths()[0].phi(0), eb.paths()[0].phi(0));
    }

    #[test]
    fn wrong_filter_model_rejected() {
        let data = series(2, 3, 4);
        let (ue, bb) = matched(2, 4.0, 0.9);
        let fu = ue_forward_filter(&data, &ue).unwrap();
        assert!(bb_backward_sample(&fu, &bb, &mut RngHandle::new(1)).is_err());
    }

    #[test]
    fn bb_trace_invariants() {
        let data = series(3, 25, 5);
        let d0 = SymPd::from_rows(&[vec![1.0, 0.3, 0.1], vec![0.3, 1.2, -0.2], vec![0.1, -0.2, 0.9]]).unwrap();
        let bb = BbHyper::new(1.0, 0.85, 0.8, 9.0, d0).unwrap();
        let f = bb_forward_filter(&data, &bb).unwrap();
        let mut rng = RngHandle::new(6);
        let mut incs = Vec::new();
        for _ in 0..200 {
            let (_, tr) = bb_backward_sample_traced(&f, &bb, &mut rng).unwrap();
            assert!(tr.off_diagonal_copied);
            assert!(tr.bridge_lower_max < 1e-10);
            assert!(tr.bridge_diag_min > 0.0);
            assert!(tr.bridge_vs_explicit < 1e-8, "{}", tr.bridge_vs_explicit);
            incs.push(tr.increments[0][1]);
            assert!((tr.increment_df[0] - 0.15 * f.post_df(24)).abs() < 1e-12);
        }
        let chi = ChiSquared::new(0.15 * f.post_df(24)).unwrap();
        assert!(ks_statistic(&incs, |x| chi.cdf(x)) < 1.95 / (incs.len() as f64).sqrt());
    }

    #[test]
    fn terminal_slice_is_filtered_posterior() {
        let d = SymPd::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let empty = ReturnsSeries::new(2, vec![], None).unwrap();
        let ue = UeHyper::new(1.0, 4.0, 0.9, d.clone()).unwrap();
        let bb = match_ue_to_bb(&ue).unwrap();
        let fu = ue_forward_filter(&empty, &ue).unwrap();
        let fb = bb_forward_filter(&empty, &bb).unwrap();
        let mean = spd_inverse(&d).unwrap().scaled(5.0).unwrap();
        for (f, h) in [(fu, ModelHyper::Ue(ue)), (fb, ModelHyper::Bb(bb))] {
            let e = sample_ensemble(&f, &h, 40_000, 8).unwrap();
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let xs: Vec<f64> = e.paths().iter().map(|p| p.phi(0).get(i, j)).collect();
                let se = (variance(&xs) / xs.len() as f64).sqrt();
                assert!((crate::stats::mean(&xs) - mean.get(i, j)).abs() < 4.0 * se);
            }
        }
    }

    #[test]
    fn bb_backward_step_matches_diagonal_case_moments() {
        let ups = UpperTri::from_rows(&[vec![1.2, 0.6], vec![0.0, 0.5]]).unwrap();
        let lambda = 0.6;
        let phi_next = SymPd::from_sym(ups.gram()).unwrap();
        let (_, bbm) = example1_moments(&ups, lambda).unwrap();
        let mut rng = RngHandle::new(9);
        let n = 200_000;
        let draws: Vec<SymPd> = (0..n)
            .map(|_| bb_backward_step(&phi_next, &UpperTri::identity(2), 1.0 / (1.0 - lambda), lambda, lambda, &mut rng).unwrap())
            .collect();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let xs: Vec<f64> = draws.iter().map(|d| d.get(i, j)).collect();
            let se = (variance(&xs) / n as f64).sqrt();
            assert!((crate::stats::mean(&xs) - bbm.mean[i][j]).abs() < 4.0 * se, "({i},{j})");
        }
    }

    #[test]
    fn joint_oracle_same_generator_passes() {
        let (ue, _) = matched(2, 4.5, 0.8);
        let h = ModelHyper::Ue(ue);
        let g = JointGenerator { hyper: &h, route: JointRoute::Forward };
        let slice = JointSlice { d_t: SymPd::identity(2), k_t: 5.5 };
        let rep = joint_consistency_oracle(g, g, &slice, 4000, 10).unwrap();
        assert_eq!(rep.first.len(), 6);
        assert_eq!(rep.second.len(), 21);
        assert!(rep.max_abs_z() < 5.0);
    }

    #[test]
    fn correlation_summary_cases() {
        let phi = SymPd::from_diagonal(&[1.0, 2.0]).unwrap();
        let path = PrecisionPath::new(ModelTag::Ue, 0, 0, vec![phi.clone(), phi]).unwrap();
        let ens = SmoothedEnsemble::new(ModelTag::Ue, vec![path.clone(), path]).unwrap();
        let s = correlation_summary(&ens, (0, 1), &[0.025, 0.5, 0.975]).unwrap();
        assert_eq!(s, vec![vec![0.0; 3]; 2]);
        assert!(correlation_summary(&ens, (1, 1), &[0.5]).is_err());
        assert!(correlation_summary(&ens, (0, 1), &[1.5]).is_err());

        let m = SymPd::from_sym(SymMatrix::from_rows(&[vec![2.0, -0.7], vec![-0.7, 1.0]]).unwrap()).unwrap();
        let rho = correlation_from_precision(&m, 0, 1).unwrap();
        let path = PrecisionPath::new(ModelTag::Bb, 0, 0, vec![m]).unwrap();
        let ens = SmoothedEnsemble::new(ModelTag::Bb, vec![path.clone(), path]).unwrap();
        let s = correlation_summary(&ens, (0, 1), &[0.1, 0.9]).unwrap();
        assert_eq!(s, vec![vec![rho, rho]]);
        assert!(SmoothedEnsemble::new(ModelTag::Bb, vec![]).is_err());
    }
}
