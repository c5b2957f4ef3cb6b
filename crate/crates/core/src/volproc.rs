//! The two Wishart volatility processes.
//!
//! Both share the likelihood `y_t | Φ_t ~ Wishart_q(k, (k Φ_t)^{-1})` and
//! differ in the state evolution:
//!
//! * Uhlig-extended (UE): `Φ_t = (U P)' Ψ_t (U P) / λ` with
//!   `Ψ_t ~ MatrixBeta_q(n/2, k/2)`;
//! * beta-Bartlett (BB): `Φ_t = (Ũ P)'(Ũ P) / b` where `Ũ` copies the
//!   Bartlett factor `U` of `Φ_{t-1}` off the diagonal and shrinks each squared
//!   diagonal entry by an independent beta variate.
//!
//! Here `Φ_{t-1} = (U P)'(U P)` is the Bartlett decomposition of the previous
//! state relative to the scale factor `P`. Inside a filter `P` is
//! `uchol((k D_{t-1})^{-1})`; the standalone samplers take `P = uchol(Φ_{t-1})`
//! and `U = I`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{congruence, inv_upper, SymMatrix, SymPd, UpperTri};
use crate::randsamp::{sample_beta, sample_matrix_beta, RngHandle};
use crate::specfun::{chi2_shifted_sqrt_mean, sqrt_beta_moment};

fn check_discount(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

/// Likelihood degrees of freedom: a positive integer below `q` or a real above `q - 1`.
fn check_likelihood_df(k: f64, q: usize) -> Result<()> {
    let integer_below = k >= 1.0 && k.fract() == 0.0 && k < q as f64;
    if !k.is_finite() || !(integer_below || k > q as f64 - 1.0) {
        return Err(Error::invalid(format!(
            "likelihood df k = {k} must be a positive integer below q = {q} or a real above q - 1"
        )));
    }
    Ok(())
}

/// Hyperparameters of the Uhlig-extended process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UeHyper {
    q: usize,
    k: f64,
    n: f64,
    lambda: f64,
    d0: SymPd,
}

impl UeHyper {
    pub fn new(k: f64, n: f64, lambda: f64, d0: SymPd) -> Result<Self> {
        let q = d0.dim();
        check_likelihood_df(k, q)?;
        check_discount("lambda", lambda)?;
        if !(n > q as f64 - 1.0) || !n.is_finite() {
            return Err(Error::invalid(format!("evolution df n = {n} must exceed q - 1 = {}", q - 1)));
        }
        Ok(UeHyper { q, k, n, lambda, d0 })
    }

    pub fn q(&self) -> usize {
        self.q
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn n(&self) -> f64 {
        self.n
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn d0(&self) -> &SymPd {
        &self.d0
    }

    /// Same hyperparameters with a different prior scale.
    pub fn with_d0(&self, d0: SymPd) -> Result<Self> {
        UeHyper::new(self.k, self.n, self.lambda, d0)
    }
}

/// Hyperparameters of the beta-Bartlett process.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BbHyper {
    q: usize,
    k: f64,
    beta: f64,
    b: f64,
    k0: f64,
    d0: SymPd,
}

impl BbHyper {
    pub fn new(k: f64, beta: f64, b: f64, k0: f64, d0: SymPd) -> Result<Self> {
        let q = d0.dim();
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid(format!("likelihood df k must be positive, got {k}")));
        }
        check_discount("beta", beta)?;
        check_discount("b", b)?;
        if !(k0 > 0.0 && k0.is_finite()) {
            return Err(Error::invalid(format!("prior df k0 must be positive, got {k0}")));
        }
        if !(beta * k0 > q as f64 - 1.0) {
            return Err(Error::invalid(format!(
                "beta * k0 = {} must exceed q - 1 = {} so every beta shape stays positive",
                beta * k0,
                q - 1
            )));
        }
        Ok(BbHyper { q, k, beta, b, k0, d0 })
    }

    pub fn q(&self) -> usize {
        self.q
    }
    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn k0(&self) -> f64 {
        self.k0
    }
    pub fn d0(&self) -> &SymPd {
        &self.d0
    }

    pub fn with_d0(&self, d0: SymPd) -> Result<Self> {
        BbHyper::new(self.k, self.beta, self.b, self.k0, d0)
    }

    /// Next posterior df `β k_prev + k`. A value within rounding of `k_prev`
    /// is snapped to it so that the fixed point `k/(1-β)` is held exactly.
    pub fn next_df(&self, k_prev: f64) -> f64 {
        let next = self.beta * k_prev + self.k;
        if (next - k_prev).abs() <= 8.0 * f64::EPSILON * k_prev.abs() {
            k_prev
        } else {
            next
        }
    }
}

/// Either process's hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ModelHyper {
    Ue(UeHyper),
    Bb(BbHyper),
}

impl ModelHyper {
    pub fn q(&self) -> usize {
        match self {
            ModelHyper::Ue(h) => h.q(),
            ModelHyper::Bb(h) => h.q(),
        }
    }
    pub fn k(&self) -> f64 {
        match self {
            ModelHyper::Ue(h) => h.k(),
            ModelHyper::Bb(h) => h.k(),
        }
    }
    pub fn d0(&self) -> &SymPd {
        match self {
            ModelHyper::Ue(h) => h.d0(),
            ModelHyper::Bb(h) => h.d0(),
        }
    }
    /// Degrees of freedom of the prior on `Φ_0`.
    pub fn prior_df(&self) -> f64 {
        match self {
            ModelHyper::Ue(h) => h.n() + h.k(),
            ModelHyper::Bb(h) => h.k0(),
        }
    }
    pub fn tag(&self) -> ModelTag {
        match self {
            ModelHyper::Ue(_) => ModelTag::Ue,
            ModelHyper::Bb(_) => ModelTag::Bb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Ue,
    Bb,
}

impl ModelTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelTag::Ue => "ue",
            ModelTag::Bb => "bb",
        }
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps UE hyperparameters onto the BB process with identical priors,
/// filtered posteriors and one-step forecasts:
/// `k0 = n + k`, `β = n/(n + k)`, `b = λ`, same `D_0`.
pub fn match_ue_to_bb(ue: &UeHyper) -> Result<BbHyper> {
    let k0 = ue.n + ue.k;
    let bb = BbHyper::new(ue.k, ue.n / k0, ue.lambda, k0, ue.d0.clone());
    debug_assert!(bb.is_ok(), "n > q - 1 guarantees beta * k0 > q - 1");
    bb
}

/// Inverse of [`match_ue_to_bb`]. Fails unless `(1 - β) k0 = k`.
pub fn match_bb_to_ue(bb: &BbHyper) -> Result<UeHyper> {
    let n = bb.k0 - bb.k;
    if ((1.0 - bb.beta) * bb.k0 - bb.k).abs() > 1e-10 * bb.k0 {
        return Err(Error::invalid(format!(
            "BB hyperparameters are not matched: (1 - beta) k0 = {} but k = {}",
            (1.0 - bb.beta) * bb.k0,
            bb.k
        )));
    }
    UeHyper::new(bb.k, n, bb.b, bb.d0.clone())
}

/// Entrywise conditional means and variances of a random symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl MomentTable {
    fn new(q: usize) -> Self {
        MomentTable { mean: vec![vec![0.0; q]; q], var: vec![vec![0.0; q]; q] }
    }
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Bartlett factor `U = uchol(Φ) P^{-1}` of `Φ` relative to the scale factor `P`.
pub fn bartlett_relative_to(phi: &SymPd, p: &UpperTri) -> Result<UpperTri> {
    if p.dim() != phi.dim() {
        return Err(Error::DimensionMismatch { expected: phi.dim(), found: p.dim() });
    }
    Ok(phi.chol().mul(&inv_upper(p)?))
}

/// One UE transition `Φ_t | Φ_{t-1}`.
pub fn ue_evolve(phi_prev: &SymPd, ue: &UeHyper, rng: &mut RngHandle) -> Result<SymPd> {
    if phi_prev.dim() != ue.q {
        return Err(Error::DimensionMismatch { expected: ue.q, found: phi_prev.dim() });
    }
    // (U P) is uchol(Φ_{t-1}) whatever scale factor P is used.
    let psi = sample_matrix_beta(ue.q, ue.n, ue.k, rng)?;
    let phi = congruence(phi_prev.chol().as_matrix(), &psi).scaled(1.0 / ue.lambda);
    SymPd::from_sym(phi)
}

/// One BB transition with `P = uchol(Φ_{t-1})`, `U = I`.
pub fn bb_evolve(phi_prev: &SymPd, k_prev: f64, bb: &BbHyper, rng: &mut RngHandle) -> Result<SymPd> {
    if phi_prev.dim() != bb.q {
        return Err(Error::DimensionMismatch { expected: bb.q, found: phi_prev.dim() });
    }
    bb_evolve_factored(&UpperTri::identity(bb.q), phi_prev.chol(), k_prev, bb, rng)
}

/// One BB transition in filter context, with scale factor `p_prev = uchol((k D_{t-1})^{-1})`.
pub fn bb_evolve_with_factor(
    phi_prev: &SymPd,
    p_prev: &UpperTri,
    k_prev: f64,
    bb: &BbHyper,
    rng: &mut RngHandle,
) -> Result<SymPd> {
    let u = bartlett_relative_to(phi_prev, p_prev)?;
    bb_evolve_factored(&u, p_prev, k_prev, bb, rng)
}

/// Beta shapes `((β k_prev - i + 1)/2, (1 - β) k_prev / 2)` for `i = 1..q`.
pub fn bb_beta_shapes(q: usize, k_prev: f64, beta: f64) -> Result<Vec<(f64, f64)>> {
    let b_shape = 0.5 * (1.0 - beta) * k_prev;
    let shapes: Vec<(f64, f64)> = (0..q).map(|i| (0.5 * (beta * k_prev - i as f64), b_shape)).collect();
    if shapes.iter().any(|(a, b)| !(*a > 0.0 && *b > 0.0)) {
        return Err(Error::invalid(format!(
            "beta * k_prev - q + 1 = {} must be positive for the beta shocks",
            beta * k_prev - q as f64 + 1.0
        )));
    }
    Ok(shapes)
}

fn bb_evolve_factored(
    u: &UpperTri,
    p: &UpperTri,
    k_prev: f64,
    bb: &BbHyper,
    rng: &mut RngHandle,
) -> Result<SymPd> {
    let q = bb.q;
    let shapes = bb_beta_shapes(q, k_prev, bb.beta)?;
    let mut tilde = u.as_matrix().clone();
    for (i, (a, b)) in shapes.into_iter().enumerate() {
        let eta = sample_beta(a, b, rng)?;
        tilde[(i, i)] *= eta.sqrt();
    }
    let tilde = UpperTri::from_upper_part(&tilde);
    SymPd::from_sym(tilde.mul(p).gram().scaled(1.0 / bb.b))
}

/// `E(Φ_t | Φ_{t-1})` under UE: `n / (λ (n + k)) Φ_{t-1}`.
pub fn expected_ue_step(phi_prev: &SymPd, ue: &UeHyper) -> Result<SymPd> {
    if phi_prev.dim() != ue.q {
        return Err(Error::DimensionMismatch { expected: ue.q, found: phi_prev.dim() });
    }
    phi_prev.scaled(ue.n / (ue.lambda * (ue.n + ue.k)))
}

/// `E[Ũ'Ũ]` for a BB transition from Bartlett factor `u`, with beta shapes
/// `((n - i + 1)/2, k/2)`:
///
/// `Σ_{l < i∧j} u_li u_lj + δ_ij (n-i+1) u_ii² / (n-i+1+k) + (1-δ_ij) g(i, j)`
/// where `g(i, j) = E[sqrt(η_m)] u_mm u_{m, i∨j}` and `m = i∧j`.
pub fn expected_tilde_gram(u: &UpperTri, n: f64, k: f64) -> Result<DMatrix<f64>> {
    let q = u.dim();
    let mut out = DMatrix::zeros(q, q);
    for i in 0..q {
        let diag_factor = (n - i as f64) / (n - i as f64 + k);
        let half_moment = sqrt_beta_moment(i + 1, n, k)?;
        for j in i..q {
            let mut s = 0.0;
            for l in 0..i {
                s += u.get(l, i) * u.get(l, j);
            }
            if i == j {
                s += diag_factor * u.get(i, i) * u.get(i, i);
            } else {
                s += half_moment * u.get(i, i) * u.get(i, j);
            }
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    Ok(out)
}

/// `E(Φ_t | Φ_{t-1})` under BB in filter context, given the posterior df
/// `k_prev` of `Φ_{t-1}`. The equivalent UE parameters follow from the inverse
/// matching map: `n = β k_prev`, `k = (1 - β) k_prev`.
pub fn expected_bb_step(phi_prev: &SymPd, p_prev: &UpperTri, bb: &BbHyper, k_prev: f64) -> Result<SymPd> {
    let n_equiv = bb.beta * k_prev;
    let k_equiv = (1.0 - bb.beta) * k_prev;
    bb_beta_shapes(bb.q, k_prev, bb.beta)?;
    let u = bartlett_relative_to(phi_prev, p_prev)?;
    let e = expected_tilde_gram(&u, n_equiv, k_equiv)?;
    let sym = SymMatrix::new(e)?;
    SymPd::from_sym(congruence(p_prev.as_matrix(), &sym).scaled(1.0 / bb.b))
}

/// `E(Φ^U_t - Φ^B_t | Φ_{t-1})` under matched hyperparameters, from
/// `(1/λ) P' [ n/(n+k) U'U - E(Ũ'Ũ) ] P`, with the bracket expanded entrywise.
pub fn expectation_difference(phi_prev: &SymPd, p_prev: &UpperTri, matched: &UeHyper) -> Result<SymMatrix> {
    let (n, k) = (matched.n, matched.k);
    let c = n / (n + k);
    let u = bartlett_relative_to(phi_prev, p_prev)?;
    let q = u.dim();
    let mut bracket = DMatrix::zeros(q, q);
    for i in 0..q {
        let diag_factor = (n - i as f64) / (n - i as f64 + k);
        let half_moment = sqrt_beta_moment(i + 1, n, k)?;
        for j in i..q {
            let mut shared = 0.0;
            for l in 0..i {
                shared += u.get(l, i) * u.get(l, j);
            }
            let lead = u.get(i, i) * u.get(i, j);
            let coef = if i == j { diag_factor } else { half_moment };
            let v = (c - 1.0) * shared + (c - coef) * lead;
            bracket[(i, j)] = v;
            bracket[(j, i)] = v;
        }
    }
    Ok(congruence(p_prev.as_matrix(), &SymMatrix::new(bracket)?).scaled(1.0 / matched.lambda))
}

/// Conditional moments of `Φ_t | Φ_{t+1}` for UE and BB when `k = 1`, the
/// filter scale factor is the identity and `Υ = uchol(Φ_{t+1})`.
///
/// Returns `(ue, bb)`. A zero diagonal in `upsilon` is accepted as the
/// boundary case `λ υ_ii² = 0`.
pub fn example1_moments(upsilon: &UpperTri, lambda: f64) -> Result<(MomentTable, MomentTable)> {
    check_discount("lambda", lambda)?;
    let q = upsilon.dim();
    if (0..q).any(|i| upsilon.diag(i) < 0.0) {
        return Err(Error::invalid("upsilon must have a nonnegative diagonal"));
    }
    let mut ue = MomentTable::new(q);
    let mut bb = MomentTable::new(q);
    for i in 0..q {
        let uii = upsilon.diag(i);
        // sqrt(2λ) U(-1/2, 0, λ υ_ii² / 2) = sqrt(λ) E[sqrt(λ υ_ii² + θ)], θ ~ χ²_1
        let root_mean = chi2_shifted_sqrt_mean(lambda * uii * uii)?;
        for j in i..q {
            let mut shared = 0.0;
            for l in 0..i {
                shared += upsilon.get(l, i) * upsilon.get(l, j);
            }
            let uij = upsilon.get(i, j);
            let (em_u, v_u, em_b, v_b) = if i == j {
                let e = lambda * (shared + uii * uii) + 1.0;
                (e, 2.0, e, 2.0)
            } else {
                let h = lambda.sqrt() * uij * root_mean;
                let e_u = lambda * (shared + uii * uij);
                let e_b = lambda * shared + h;
                let v_b = lambda * lambda * uij * uij * uii * uii + lambda * uij * uij - h * h;
                (e_u, 1.0, e_b, v_b)
            };
            for (t, e, v) in [(&mut ue, em_u, v_u), (&mut bb, em_b, v_b)] {
                t.mean[i][j] = e;
                t.mean[j][i] = e;
                t.var[i][j] = v;
                t.var[j][i] = v;
            }
        }
    }
    Ok((ue, bb))
}

/// Conditional moments of `Φ_t | Φ_{t+1}` for `k = 1` when
/// `Φ_{t+1} = diag(φ)` and `D_t^{-1} = diag(d)`. Returns `(ue, bb)`.
pub fn diagonal_conditional_moments(
    phi_next_diag: &[f64],
    d_diag: &[f64],
    lambda: f64,
) -> Result<(MomentTable, MomentTable)> {
    check_discount("lambda", lambda)?;
    let q = phi_next_diag.len();
    if d_diag.len() != q {
        return Err(Error::DimensionMismatch { expected: q, found: d_diag.len() });
    }
    if q == 0 || phi_next_diag.iter().chain(d_diag).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("diagonal inputs must be positive"));
    }
    let mut ue = MomentTable::new(q);
    let mut bb = MomentTable::new(q);
    for i in 0..q {
        let e = lambda * phi_next_diag[i] + d_diag[i];
        ue.mean[i][i] = e;
        bb.mean[i][i] = e;
        bb.var[i][i] = 2.0 * d_diag[i] * d_diag[i];
        for j in 0..q {
            let delta = if i == j { d_diag[i] * d_diag[i] } else { 0.0 };
            ue.var[i][j] = delta + d_diag[i] * d_diag[j];
        }
    }
    Ok((ue, bb))
}
