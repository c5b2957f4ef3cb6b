//! Seeded sampling of the scalar and matrix laws used by the volatility processes.
//!
//! Every draw flows through an [`RngHandle`], a ChaCha20 stream keyed by
//! `(seed, stream)`. ChaCha output is specified bit-for-bit, so a seed and a
//! call sequence reproduce the same draws on every platform.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::matops::{gram, inv_upper, solve_upper, uchol, congruence, SymMatrix, SymPd, UpperTri};

/// Generator identification echoed into run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha20Rng (rand_chacha 0.9) with rand_distr 0.5 samplers";

/// A seeded random stream.
#[derive(Debug, Clone)]
pub struct RngHandle {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle::substream(seed, 0)
    }

    /// Independent stream `stream` under the same seed.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngHandle { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

/// Stream id for job `index` under a numeric `tag`, so per-job streams do not
/// depend on how jobs are spread across workers.
pub fn stream_id(tag: u16, index: u64) -> u64 {
    ((tag as u64) << 48) ^ (index & 0x0000_FFFF_FFFF_FFFF)
}

/// Chi-square draw with real, positive degrees of freedom.
pub fn sample_chi2(df: f64, rng: &mut RngHandle) -> Result<f64> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::invalid(format!("chi-square df must be positive, got {df}")));
    }
    let g = Gamma::new(0.5 * df, 2.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(g.sample(&mut rng.rng))
}

pub fn sample_beta(a: f64, b: f64, rng: &mut RngHandle) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!("beta shapes must be positive, got ({a}, {b})")));
    }
    let d = Beta::new(a, b).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(d.sample(&mut rng.rng))
}

/// Wishart law `Wishart_q(df, P'P)` described by its degrees of freedom and
/// the upper Cholesky factor `P` of its scale matrix.
#[derive(Debug, Clone)]
pub struct WishartSpec {
    pub df: f64,
    pub scale_chol: UpperTri,
}

impl WishartSpec {
    pub fn new(df: f64, scale_chol: UpperTri) -> Result<Self> {
        let spec = WishartSpec { df, scale_chol };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with scale `scale` (factorized here).
    pub fn from_scale(df: f64, scale: &SymPd) -> Result<Self> {
        WishartSpec::new(df, scale.chol().clone())
    }

    pub fn dim(&self) -> usize {
        self.scale_chol.dim()
    }

    pub fn is_full_rank(&self) -> bool {
        self.df > self.dim() as f64 - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        validate_wishart_df(self.df, self.dim())
    }
}

fn is_rank_deficient_df(df: f64, q: usize) -> bool {
    df >= 1.0 && df.fract() == 0.0 && df < q as f64
}

fn validate_wishart_df(df: f64, q: usize) -> Result<()> {
    if !df.is_finite() || !(df > q as f64 - 1.0 || is_rank_deficient_df(df, q)) {
        return Err(Error::invalid(format!(
            "Wishart df {df} must exceed q - 1 = {} or be a positive integer below q",
            q as f64 - 1.0
        )));
    }
    Ok(())
}

/// Bartlett factor `U`: upper triangular with `u_ij ~ N(0, 1)` above the
/// diagonal and `u_ii^2 ~ chi2(df - i + 1)` (1-based `i`) on it.
pub fn sample_bartlett_factor(q: usize, df: f64, rng: &mut RngHandle) -> Result<UpperTri> {
    if !(df > q as f64 - 1.0) {
        return Err(Error::invalid(format!("Bartlett factor needs df > q - 1, got df = {df}, q = {q}")));
    }
    let mut u = DMatrix::<f64>::zeros(q, q);
    for i in 0..q {
        u[(i, i)] = sample_chi2(df - i as f64, rng)?.sqrt();
        for j in (i + 1)..q {
            u[(i, j)] = rng.standard_normal();
        }
    }
    Ok(UpperTri::from_upper_part(&u))
}

/// Wishart draw `(U P)'(U P)` via the Bartlett decomposition. Integer `df < q`
/// gives a rank-`df` draw built from `df` outer products of `N(0, P'P)` vectors.
pub fn sample_wishart_bartlett(spec: &WishartSpec, rng: &mut RngHandle) -> Result<SymMatrix> {
    spec.validate()?;
    let q = spec.dim();
    if spec.is_full_rank() {
        let u = sample_bartlett_factor(q, spec.df, rng)?;
        Ok(u.mul(&spec.scale_chol).gram())
    } else {
        let rows = spec.df as usize;
        let z = DMatrix::from_fn(rows, q, |_, _| rng.standard_normal());
        Ok(gram(&(z * spec.scale_chol.as_matrix())))
    }
}

/// Full-rank Wishart draw, checked positive definite.
pub fn sample_wishart_pd(spec: &WishartSpec, rng: &mut RngHandle) -> Result<SymPd> {
    if !spec.is_full_rank() {
        return Err(Error::invalid(format!(
            "df {} gives a singular Wishart draw in dimension {}",
            spec.df,
            spec.dim()
        )));
    }
    SymPd::from_sym(sample_wishart_bartlett(spec, rng)?)
}

/// Matrix-beta draw `B = (T^{-1})' A1 T^{-1}` with `T = uchol(A1 + A2)`,
/// `A1 ~ Wishart(n1, I)`, `A2 ~ Wishart(n2, I)`.
///
/// Either degree of freedom may be a positive integer below `q`, provided
/// `A1 + A2` is full rank (`n1 + n2 > q - 1`).
pub fn sample_matrix_beta(q: usize, n1: f64, n2: f64, rng: &mut RngHandle) -> Result<SymMatrix> {
    if q == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    validate_wishart_df(n1, q)?;
    validate_wishart_df(n2, q)?;
    if !(n1 + n2 > q as f64 - 1.0) {
        return Err(Error::invalid(format!("n1 + n2 = {} must exceed q - 1", n1 + n2)));
    }
    let ident = UpperTri::identity(q);
    let a1 = sample_wishart_bartlett(&WishartSpec { df: n1, scale_chol: ident.clone() }, rng)?;
    let a2 = sample_wishart_bartlett(&WishartSpec { df: n2, scale_chol: ident }, rng)?;
    let t = uchol(&a1.scale_add(1.0, &a2)?)?;
    let t_inv = inv_upper(&t)?;
    Ok(congruence(t_inv.as_matrix(), &a1))
}

/// Zero-mean normal draw with covariance `prec^{-1}`.
pub fn sample_mvnormal_prec(prec: &SymPd, rng: &mut RngHandle) -> Vec<f64> {
    let z: Vec<f64> = (0..prec.dim()).map(|_| rng.standard_normal()).collect();
    solve_upper(prec.chol(), &z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_statistic, mean, variance};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    const N: usize = 100_000;

    fn within_se(xs: &[f64], target: f64, sd: f64, k: f64) -> bool {
        (mean(xs) - target).abs() < k * sd / (xs.len() as f64).sqrt()
    }

    #[test]
    fn reproducible_streams() {
        let mut a = RngHandle::new(7);
        let mut b = RngHandle::new(7);
        let spec = WishartSpec::from_scale(4.5, &SymPd::identity(3)).unwrap();
        for _ in 0..10 {
            assert_eq!(sample_chi2(0.7, &mut a).unwrap().to_bits(), sample_chi2(0.7, &mut b).unwrap().to_bits());
            assert_eq!(sample_beta(0.5, 2.0, &mut a).unwrap(), sample_beta(0.5, 2.0, &mut b).unwrap());
            assert_eq!(sample_wishart_bartlett(&spec, &mut a).unwrap(), sample_wishart_bartlett(&spec, &mut b).unwrap());
            assert_eq!(sample_matrix_beta(3, 5.0, 1.0, &mut a).unwrap(), sample_matrix_beta(3, 5.0, 1.0, &mut b).unwrap());
        }
        let mut c = RngHandle::substream(7, 1);
        assert_ne!(RngHandle::new(7).uniform(), c.uniform());
    }

    #[test]
    fn chi2_moments() {
        let mut rng = RngHandle::new(11);
        let xs: Vec<f64> = (0..N).map(|_| sample_chi2(2.0, &mut rng).unwrap()).collect();
        assert!(within_se(&xs, 2.0, 2.0, 4.0));
        let xs: Vec<f64> = (0..N).map(|_| sample_chi2(0.5, &mut rng).unwrap()).collect();
        assert!(within_se(&xs, 0.5, 1.0, 4.0));
        assert!(xs.iter().all(|x| *x >= 0.0));
        assert!(matches!(sample_chi2(-1.0, &mut rng), Err(Error::InvalidParameter(_))));
        assert!(sample_chi2(0.0, &mut rng).is_err());
    }

    #[test]
    fn beta_moments_and_uniform_case() {
        let mut rng = RngHandle::new(12);
        let xs: Vec<f64> = (0..N).map(|_| sample_beta(1.0, 1.0, &mut rng).unwrap()).collect();
        assert!(ks_statistic(&xs, |x| x.clamp(0.0, 1.0)) < 1.95 / (N as f64).sqrt());
        let xs: Vec<f64> = (0..N).map(|_| sample_beta(3.0, 2.0, &mut rng).unwrap()).collect();
        assert!(within_se(&xs, 0.6, (0.6 * 0.4 / 6.0f64).sqrt(), 4.0));
        assert!(xs.iter().all(|x| *x > 0.0 && *x < 1.0));
        // E[sqrt(eta)] for Beta(1/2, 1/2) is 2/pi; Var = E[eta] - (2/pi)^2.
        let xs: Vec<f64> = (0..N).map(|_| sample_beta(0.5, 0.5, &mut rng).unwrap().sqrt()).collect();
        let m = 2.0 / std::f64::consts::PI;
        assert!(within_se(&xs, m, (0.5 - m * m).sqrt(), 4.0));
        assert!(sample_beta(0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn wishart_scalar_case_matches_scaled_chi2() {
        let mut rng = RngHandle::new(13);
        let p = 1.7;
        let spec = WishartSpec::new(3.0, UpperTri::from_diagonal(&[p])).unwrap();
        let xs: Vec<f64> = (0..N).map(|_| sample_wishart_bartlett(&spec, &mut rng).unwrap().get(0, 0)).collect();
        let chi = ChiSquared::new(3.0).unwrap();
        assert!(ks_statistic(&xs, |x| chi.cdf(x / (p * p))) < 1.95 / (N as f64).sqrt());
        let unit = WishartSpec::new(3.0, UpperTri::identity(1)).unwrap();
        let xs: Vec<f64> = (0..N).map(|_| sample_wishart_bartlett(&unit, &mut rng).unwrap().get(0, 0)).collect();
        assert!(within_se(&xs, 3.0, 6f64.sqrt(), 4.0));
    }

    #[test]
    fn wishart_mean_two_by_two() {
        let mut rng = RngHandle::new(14);
        let spec = WishartSpec::new(5.0, UpperTri::identity(2)).unwrap();
        let draws: Vec<SymMatrix> = (0..N).map(|_| sample_wishart_bartlett(&spec, &mut rng).unwrap()).collect();
        let d00: Vec<f64> = draws.iter().map(|w| w.get(0, 0)).collect();
        let d11: Vec<f64> = draws.iter().map(|w| w.get(1, 1)).collect();
        let d01: Vec<f64> = draws.iter().map(|w| w.get(0, 1)).collect();
        // Var(W_ii) = 2 df, Var(W_ij) = df for identity scale.
        assert!(within_se(&d00, 5.0, 10f64.sqrt(), 4.0));
        assert!(within_se(&d11, 5.0, 10f64.sqrt(), 4.0));
        assert!(within_se(&d01, 0.0, 5f64.sqrt(), 4.0));
    }

    #[test]
    fn wishart_rank_deficient() {
        let mut rng = RngHandle::new(15);
        let spec = WishartSpec::new(1.0, UpperTri::identity(3)).unwrap();
        let w = sample_wishart_bartlett(&spec, &mut rng).unwrap();
        match uchol(&w) {
            Err(Error::NotPositiveDefinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected rank-deficient draw, got {other:?}"),
        }
        let eig = w.as_matrix().clone().symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-12 && ev[1].abs() < 1e-12 && ev[2] > 0.0);
        assert!(WishartSpec::new(1.5, UpperTri::identity(3)).is_err());
        assert!(sample_wishart_pd(&spec, &mut rng).is_err());
    }

    #[test]
    fn matrix_beta_scalar_reduces_to_beta() {
        let mut rng = RngHandle::new(16);
        let xs: Vec<f64> = (0..N).map(|_| sample_matrix_beta(1, 5.0, 1.0, &mut rng).unwrap().get(0, 0)).collect();
        let (a, b) = (2.5, 0.5);
        let m = a / (a + b);
        let v = a * b / ((a + b) * (a + b) * (a + b + 1.0));
        assert!(within_se(&xs, m, v.sqrt(), 4.0));
        // Variance check: squared deviations have mean v.
        let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        let sd_sq = variance(&sq).sqrt();
        assert!((mean(&sq) - v).abs() < 4.0 * sd_sq / (N as f64).sqrt());
    }

    #[test]
    fn matrix_beta_eigenvalues_in_unit_interval() {
        let mut rng = RngHandle::new(17);
        for (n1, n2) in [(3.0, 2.5), (1.0, 4.0), (5.0, 1.0), (1.2, 1.0)] {
            for _ in 0..500 {
                let b = sample_matrix_beta(2, n1, n2, &mut rng).unwrap();
                let ev = b.as_matrix().clone().symmetric_eigen().eigenvalues;
                assert!(ev.iter().all(|e| *e > -1e-12 && *e < 1.0 + 1e-12), "{ev:?}");
            }
        }
        assert!(sample_matrix_beta(3, 0.5, 1.0, &mut rng).is_err());
        assert!(sample_matrix_beta(3, 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn mvnormal_precision_covariances() {
        let mut rng = RngHandle::new(18);
        let cases = [
            (SymPd::identity(2), [[1.0f64, 0.0], [0.0, 1.0]]),
            (SymPd::from_diagonal(&[4.0, 1.0]).unwrap(), [[0.25, 0.0], [0.0, 1.0]]),
            (
                SymPd::from_rows(&[vec![4.0, 2.0], vec![2.0, 5.0]]).unwrap(),
                [[5.0 / 16.0, -2.0 / 16.0], [-2.0 / 16.0, 4.0 / 16.0]],
            ),
        ];
        for (prec, cov) in cases {
            let xs: Vec<Vec<f64>> = (0..N).map(|_| sample_mvnormal_prec(&prec, &mut rng)).collect();
            for i in 0..2 {
                for j in 0..2 {
                    let prod: Vec<f64> = xs.iter().map(|x| x[i] * x[j]).collect();
                    // Var(x_i x_j) = S_ii S_jj + S_ij^2 for zero-mean normals.
                    let sd = (cov[i][i] * cov[j][j] + cov[i][j] * cov[i][j]).sqrt();
                    assert!(within_se(&prod, cov[i][j], sd, 4.0), "entry ({i},{j})");
                }
            }
        }
    }
}
