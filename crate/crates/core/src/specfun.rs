//! Special functions behind the closed-form conditional moments: log-gamma,
//! the half-moment of a beta variate, and Tricomi's confluent hypergeometric
//! function `U(a, b, z)` on the small parameter region the moments need.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_pos(x))
}

pub(crate) fn ln_gamma_pos(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Log of the multivariate gamma function `Γ_q(a)`.
pub fn log_multigamma(q: usize, a: f64) -> Result<f64> {
    if !(a > (q as f64 - 1.0) / 2.0) {
        return Err(Error::invalid(format!("multivariate gamma needs a > (q-1)/2, got a = {a}, q = {q}")));
    }
    let mut s = 0.25 * (q * (q.saturating_sub(1))) as f64 * PI.ln();
    for j in 0..q {
        s += ln_gamma_pos(a - 0.5 * j as f64);
    }
    Ok(s)
}

/// `E[sqrt(eta)]` for `eta ~ Beta((n - m + 1)/2, k/2)`:
///
/// `Γ((n-m+2)/2) Γ((n-m+k+1)/2) / (Γ((n-m+1)/2) Γ((n-m+k+2)/2))`.
pub fn sqrt_beta_moment(m: usize, n: f64, k: f64) -> Result<f64> {
    let a = n - m as f64 + 1.0;
    if m == 0 || !(a > 0.0) || !(k > 0.0) || !n.is_finite() || !k.is_finite() {
        return Err(Error::invalid(format!(
            "sqrt_beta_moment needs m >= 1, n - m + 1 > 0 and k > 0 (m = {m}, n = {n}, k = {k})"
        )));
    }
    let lv = ln_gamma_pos((a + 1.0) / 2.0) + ln_gamma_pos((a + k) / 2.0)
        - ln_gamma_pos(a / 2.0)
        - ln_gamma_pos((a + k + 1.0) / 2.0);
    Ok(lv.exp())
}

/// Arguments of Tricomi's `U(a, b, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TricomiArgs {
    pub a: f64,
    pub b: f64,
    pub z: f64,
}

impl TricomiArgs {
    pub fn new(a: f64, b: f64, z: f64) -> Self {
        TricomiArgs { a, b, z }
    }
}

/// Relative accuracy targeted by the quadrature behind [`tricomi_u`].
pub const TRICOMI_REL_TOL: f64 = 1e-12;

/// Tricomi's confluent hypergeometric function `U(a, b, z)`.
///
/// Supported regimes:
/// * `a > 0`, `z > 0`: the integral `(1/Γ(a)) ∫_0^∞ e^{-zt} t^{a-1} (1+t)^{b-a-1} dt`
///   evaluated by adaptive Gauss-Kronrod quadrature;
/// * `a = -1/2`, `b = 0`, `z >= 0`: Kummer's transformation
///   `U(-1/2, 0, z) = z U(1/2, 2, z)`, with the `z -> 0` limit `1/sqrt(pi)`.
pub fn tricomi_u(args: TricomiArgs) -> Result<f64> {
    let TricomiArgs { a, b, z } = args;
    if !(a.is_finite() && b.is_finite() && z.is_finite()) {
        return Err(Error::invalid("Tricomi arguments must be finite"));
    }
    if a == -0.5 && b == 0.0 {
        if z < 0.0 {
            return Err(Error::invalid(format!("U(-1/2, 0, z) needs z >= 0, got {z}")));
        }
        if z == 0.0 {
            return Ok(1.0 / PI.sqrt());
        }
        return Ok(z * tricomi_integral(0.5, 2.0, z));
    }
    if a > 0.0 && z > 0.0 {
        return Ok(tricomi_integral(a, b, z));
    }
    Err(Error::invalid(format!(
        "U(a, b, z) is supported for a > 0, z > 0 or (a, b) = (-1/2, 0); got ({a}, {b}, {z})"
    )))
}

/// `E[sqrt(c + theta)]` for `theta ~ chi2(1)`, i.e. `sqrt(2) U(-1/2, 0, c/2)`.
pub fn chi2_shifted_sqrt_mean(c: f64) -> Result<f64> {
    Ok(2f64.sqrt() * tricomi_u(TricomiArgs::new(-0.5, 0.0, 0.5 * c))?)
}

fn tricomi_integral(a: f64, b: f64, z: f64) -> f64 {
    let smooth = |t: f64| (-z * t).exp() * (1.0 + t).powf(b - a - 1.0);
    // [0, 1]: t = u^{1/a} absorbs the t^{a-1} endpoint singularity.
    let head = integrate(|u: f64| smooth(u.powf(1.0 / a)), 0.0, 1.0) / a;
    // [1, inf): t = 1 + s / (z (1 - s)) puts the exponential decay scale mid-interval.
    let scale = 1.0 / z;
    let tail = integrate(
        |s: f64| {
            if s >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - s;
            let t = 1.0 + scale * s / w;
            let f = t.powf(a - 1.0) * smooth(t) * scale / (w * w);
            if f.is_finite() {
                f
            } else {
                0.0
            }
        },
        0.0,
        1.0,
    );
    (head + tail) * (-ln_gamma_pos(a)).exp()
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive 15-point Gauss-Kronrod quadrature on a finite interval.
pub(crate) fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const MAX_INTERVALS: usize = 4000;
    let (r0, e0) = gk15(&f, a, b);
    let mut parts = vec![(a, b, r0, e0)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= (TRICOMI_REL_TOL * total.abs()).max(1e-300) || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty partition");
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (rl, el) = gk15(&f, lo, mid);
        let (rr, er) = gk15(&f, mid, hi);
        parts.push((lo, mid, rl, el));
        parts.push((mid, hi, rr, er));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randsamp::{sample_beta, sample_chi2, RngHandle};
    use crate::stats::{mean, variance};

    #[test]
    fn log_gamma_anchors() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-15);
        assert!((log_gamma(0.5).unwrap() - PI.sqrt().ln()).abs() < 1e-14);
        assert!((log_gamma(7.0).unwrap() - 720f64.ln()).abs() < 1e-13);
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-2.0).is_err());
    }

    #[test]
    fn log_gamma_known_values() {
        assert!((log_gamma(0.5).unwrap() - 0.5 * PI.ln()).abs() < 1e-14);
        assert!((log_gamma(1.5).unwrap() - (0.5 * PI.sqrt()).ln()).abs() < 1e-14);
        // Stirling with two correction terms at x = 200.
        let x = 200.0f64;
        let stirling = (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3));
        assert!((log_gamma(x).unwrap() - stirling).abs() < 1e-12 * stirling);
    }

    #[test]
    fn multigamma_reduces_to_gamma() {
        assert!((log_multigamma(1, 2.5).unwrap() - log_gamma(2.5).unwrap()).abs() < 1e-15);
        // Γ_2(a) = sqrt(pi) Γ(a) Γ(a - 1/2)
        let want = 0.5 * PI.ln() + log_gamma(3.0).unwrap() + log_gamma(2.5).unwrap();
        assert!((log_multigamma(2, 3.0).unwrap() - want).abs() < 1e-13);
        assert!(log_multigamma(3, 0.9).is_err());
    }

    #[test]
    fn sqrt_beta_moment_arcsine() {
        let v = sqrt_beta_moment(1, 1.0, 1.0).unwrap();
        assert!((v - 2.0 / PI).abs() < 1e-14);
    }

    #[test]
    fn sqrt_beta_moment_monte_carlo() {
        let (m, n, k) = (1, 5.0, 1.0);
        let mut rng = RngHandle::new(21);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_beta((n - m as f64 + 1.0) / 2.0, k / 2.0, &mut rng).unwrap().sqrt())
            .collect();
        let se = (variance(&xs) / xs.len() as f64).sqrt();
        assert!((mean(&xs) - sqrt_beta_moment(m, n, k).unwrap()).abs() < 4.0 * se);
    }

    #[test]
    fn sqrt_beta_moment_limits_and_errors() {
        let v = sqrt_beta_moment(1, 1e6, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-5 && v < 1.0);
        assert!(sqrt_beta_moment(3, 2.0, 1.0).is_err());
        assert!(sqrt_beta_moment(1, 2.0, 0.0).is_err());
        assert!(sqrt_beta_moment(0, 2.0, 1.0).is_err());
    }

    // e * E1(1) from the convergent series E1(x) = -γ - ln x - Σ (-x)^j / (j j!).
    fn e_times_e1_at_one() -> f64 {
        let euler = 0.577_215_664_901_532_9;
        let mut s = 0.0;
        let mut term = 1.0;
        for j in 1..40 {
            term *= -1.0 / j as f64;
            s += term / j as f64;
        }
        std::f64::consts::E * (-euler - s)
    }

    #[test]
    fn tricomi_exponential_integral_case() {
        let u = tricomi_u(TricomiArgs::new(1.0, 1.0, 1.0)).unwrap();
        let oracle = e_times_e1_at_one();
        assert!((oracle - 0.596_347).abs() < 1e-6);
        assert!((u - oracle).abs() < 1e-8 * oracle);
    }

    #[test]
    fn tricomi_limits() {
        let u0 = tricomi_u(TricomiArgs::new(-0.5, 0.0, 0.0)).unwrap();
        assert!((u0 - 1.0 / PI.sqrt()).abs() < 1e-15);
        let big = tricomi_u(TricomiArgs::new(0.5, 2.0, 100.0)).unwrap();
        assert!((big - 0.1).abs() < 0.02 * 0.1);
        // z -> 0 continuity of the Kummer branch.
        let small = tricomi_u(TricomiArgs::new(-0.5, 0.0, 1e-8)).unwrap();
        assert!((small - u0).abs() < 1e-3);
    }

    #[test]
    fn tricomi_rejects_unsupported() {
        assert!(tricomi_u(TricomiArgs::new(-1.0, 0.0, 1.0)).is_err());
        assert!(tricomi_u(TricomiArgs::new(1.0, 1.0, 0.0)).is_err());
        assert!(tricomi_u(TricomiArgs::new(-0.5, 0.0, -1.0)).is_err());
    }

    #[test]
    fn tricomi_kummer_branch_increasing() {
        let zs = [0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0];
        let vals: Vec<f64> = zs.iter().map(|z| tricomi_u(TricomiArgs::new(-0.5, 0.0, *z)).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
    }

    #[test]
    fn chi2_bridge_small_sample() {
        let mut rng = RngHandle::new(22);
        for c in [0.0, 1.0] {
            let xs: Vec<f64> = (0..200_000).map(|_| (c + sample_chi2(1.0, &mut rng).unwrap()).sqrt()).collect();
            let se = (variance(&xs) / xs.len() as f64).sqrt();
            assert!((mean(&xs) - chi2_shifted_sqrt_mean(c).unwrap()).abs() < 4.0 * se);
        }
    }
}
