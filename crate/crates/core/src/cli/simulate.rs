//! Forward simulation of returns and the true precision path.

use chrono::{Days, NaiveDate};

use crate::error::{Error, Result};
use crate::filter::ReturnsSeries;
use crate::matops::{spd_inverse, SymMatrix};
use crate::randsamp::{sample_mvnormal_prec, sample_wishart_pd, RngHandle, WishartSpec};
use crate::smoother::PrecisionPath;
use crate::volproc::{bb_evolve_with_factor, ue_evolve, ModelHyper};

/// `YYYY-MM-DD` dates on consecutive days from `start`.
pub fn daily_timestamps(start: &str, count: usize) -> Result<Vec<String>> {
    let d0 = NaiveDate::parse_from_str(start, "%Y-%m-%d")
        .map_err(|e| Error::Config(format!("bad start date '{start}': {e}")))?;
    (0..count as u64)
        .map(|i| {
            d0.checked_add_days(Days::new(i))
                .map(|d| d.format("%Y-%m-%d").to_string())
                .ok_or_else(|| Error::Config("date range overflows".into()))
        })
        .collect()
}

/// Draws `Φ_0` from the prior, evolves `T` steps and draws
/// `r_t ~ N(0, Φ_t^{-1})`. The BB evolution uses the filter's scale factor
/// `P_{t-1} = uchol((k D_{t-1})^{-1})`, so `D_t` and `k_t` are tracked alongside.
pub fn simulate(hyper: &ModelHyper, t_len: usize, seed: u64) -> Result<(ReturnsSeries, PrecisionPath)> {
    if hyper.k() != 1.0 {
        return Err(Error::invalid("return simulation uses k = 1"));
    }
    let q = hyper.q();
    let mut rng = RngHandle::new(seed);
    let k = hyper.k();
    let prior = WishartSpec::from_scale(hyper.prior_df(), &spd_inverse(&hyper.d0().scaled(k)?)?)?;
    let mut phi = vec![sample_wishart_pd(&prior, &mut rng)?];
    let mut returns = Vec::with_capacity(t_len);
    let mut d = hyper.d0().clone();
    let mut k_t = hyper.prior_df();
    for _ in 0..t_len {
        let prev = phi.last().expect("nonempty");
        let next = match hyper {
            ModelHyper::Ue(h) => ue_evolve(prev, h, &mut rng)?,
            ModelHyper::Bb(h) => {
                let p = spd_inverse(&d.scaled(k)?)?.chol().clone();
                let next = bb_evolve_with_factor(prev, &p, k_t, h, &mut rng)?;
                k_t = h.next_df(k_t);
                next
            }
        };
        let r = sample_mvnormal_prec(&next, &mut rng);
        if let ModelHyper::Bb(h) = hyper {
            d = crate::matops::SymPd::from_sym(d.as_sym().scale_add(h.b(), &SymMatrix::outer(&r))?)?;
        }
        returns.push(r);
        phi.push(next);
    }
    let series = ReturnsSeries::new(q, returns, None)?;
    Ok((series, PrecisionPath::new(hyper.tag(), seed, 0, phi)?))
}

/// Lag-1 autocorrelation of a scalar sequence.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let m = crate::stats::mean(xs);
    let num: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    num / den
}
