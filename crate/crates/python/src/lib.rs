//! Python bindings for wishvol-core.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wishvol_core::compare::{self, MixtureConfig, MixtureMode};
use wishvol_core::filter::{self, FilterOutput, ReturnsSeries};
use wishvol_core::matops::SymPd;
use wishvol_core::smoother::{self, SmoothedEnsemble};
use wishvol_core::specfun::{tricomi_u as core_tricomi, TricomiArgs};
use wishvol_core::volproc::{self, ModelHyper};

create_exception!(wishvol, WishvolError, PyException);

type Rows = Vec<Vec<f64>>;

fn err(e: wishvol_core::Error) -> PyErr {
    WishvolError::new_err(format!("{}: {e}", e.kind()))
}

fn spd(rows: Vec<Vec<f64>>) -> PyResult<SymPd> {
    SymPd::from_rows(&rows).map_err(err)
}

fn series(returns: Vec<Vec<f64>>) -> PyResult<ReturnsSeries> {
    let q = returns.first().map(|r| r.len()).unwrap_or(0);
    ReturnsSeries::new(q, returns, None).map_err(err)
}

/// Uhlig-extended hyperparameters.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
pub struct UeHyper {
    inner: volproc::UeHyper,
}

#[pymethods]
impl UeHyper {
    #[new]
    #[pyo3(signature = (n, lam, d0, k = 1.0))]
    fn new(n: f64, lam: f64, d0: Vec<Vec<f64>>, k: f64) -> PyResult<Self> {
        Ok(UeHyper { inner: volproc::UeHyper::new(k, n, lam, spd(d0)?).map_err(err)? })
    }
    #[getter]
    fn n(&self) -> f64 {
        self.inner.n()
    }
    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }
    #[getter]
    fn k(&self) -> f64 {
        self.inner.k()
    }
    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }
    /// The BB process with identical forecasts.
    fn matched(&self) -> PyResult<BbHyper> {
        Ok(BbHyper { inner: volproc::match_ue_to_bb(&self.inner).map_err(err)? })
    }
    fn __repr__(&self) -> String {
        format!("UeHyper(n={}, lam={}, k={}, q={})", self.inner.n(), self.inner.lambda(), self.inner.k(), self.inner.q())
    }
}

/// Beta-Bartlett hyperparameters.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
pub struct BbHyper {
    inner: volproc::BbHyper,
}

#[pymethods]
impl BbHyper {
    #[new]
    #[pyo3(signature = (beta, b, k0, d0, k = 1.0))]
    fn new(beta: f64, b: f64, k0: f64, d0: Vec<Vec<f64>>, k: f64) -> PyResult<Self> {
        Ok(BbHyper { inner: volproc::BbHyper::new(k, beta, b, k0, spd(d0)?).map_err(err)? })
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }
    #[getter]
    fn b(&self) -> f64 {
        self.inner.b()
    }
    #[getter]
    fn k0(&self) -> f64 {
        self.inner.k0()
    }
    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }
    fn matched(&self) -> PyResult<UeHyper> {
        Ok(UeHyper { inner: volproc::match_bb_to_ue(&self.inner).map_err(err)? })
    }
    fn __repr__(&self) -> String {
        format!("BbHyper(beta={}, b={}, k0={}, q={})", self.inner.beta(), self.inner.b(), self.inner.k0(), self.inner.q())
    }
}

#[derive(FromPyObject)]
enum AnyHyper {
    Ue(UeHyper),
    Bb(BbHyper),
}

impl AnyHyper {
    fn model(&self) -> ModelHyper {
        match self {
            AnyHyper::Ue(h) => ModelHyper::Ue(h.inner.clone()),
            AnyHyper::Bb(h) => ModelHyper::Bb(h.inner.clone()),
        }
    }
}

fn run_filter(data: &ReturnsSeries, h: &ModelHyper) -> PyResult<FilterOutput> {
    match h {
        ModelHyper::Ue(u) => filter::ue_forward_filter(data, u),
        ModelHyper::Bb(b) => filter::bb_forward_filter(data, b),
    }
    .map_err(err)
}

/// Forward-filter output.
#[pyclass(frozen)]
pub struct Filtered {
    inner: FilterOutput,
}

#[pymethods]
impl Filtered {
    #[getter]
    fn log_forecasts(&self) -> Vec<f64> {
        self.inner.log_forecasts().to_vec()
    }
    #[getter]
    fn log_marginal(&self) -> f64 {
        self.inner.log_marginal()
    }
    #[getter]
    fn post_df(&self) -> Vec<f64> {
        self.inner.post_df_path().to_vec()
    }
    /// `D_t` as nested lists, `t = 0..=T`.
    fn d(&self, t: usize) -> PyResult<Vec<Vec<f64>>> {
        if t > self.inner.len() {
            return Err(WishvolError::new_err(format!("t = {t} is past T = {}", self.inner.len())));
        }
        Ok(self.inner.d(t).to_rows())
    }
    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Forward filter of returns under either process.
#[pyfunction]
fn forward_filter(returns: Vec<Vec<f64>>, hyper: AnyHyper) -> PyResult<Filtered> {
    Ok(Filtered { inner: run_filter(&series(returns)?, &hyper.model())? })
}

#[pyfunction]
fn marginal_loglik(returns: Vec<Vec<f64>>, n: f64, lam: f64, d0: Vec<Vec<f64>>) -> PyResult<f64> {
    filter::marginal_loglik(&series(returns)?, n, lam, &spd(d0)?).map_err(err)
}

/// Returns `{"n_star", "lambda_star", "best_loglik", "surface"}`; the surface
/// holds `(n, lambda, loglik)` tuples.
#[pyfunction]
fn grid_search<'py>(
    py: Python<'py>,
    returns: Vec<Vec<f64>>,
    d0: Vec<Vec<f64>>,
    n_grid: Vec<f64>,
    lambda_grid: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let data = series(returns)?;
    let d0 = spd(d0)?;
    let g = py.detach(|| filter::grid_search(&data, &d0, &n_grid, &lambda_grid)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("n_star", g.n_star)?;
    out.set_item("lambda_star", g.lambda_star)?;
    out.set_item("best_loglik", g.best_loglik)?;
    let surface: Vec<(f64, f64, f64)> = g.surface.iter().map(|p| (p.n, p.lambda, p.loglik)).collect();
    out.set_item("surface", surface)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (n, q, k = 1.0))]
fn constrained_lambda(n: f64, q: usize, k: f64) -> PyResult<f64> {
    filter::constrained_lambda(n, k, q).map_err(err)
}

/// Backward-sampled precision paths.
#[pyclass(frozen)]
pub struct Ensemble {
    inner: SmoothedEnsemble,
}

#[pymethods]
impl Ensemble {
    fn __len__(&self) -> usize {
        self.inner.len()
    }
    /// Path-level log likelihoods of the returns.
    #[getter]
    fn logliks(&self) -> Option<Vec<f64>> {
        self.inner.logliks().map(|l| l.to_vec())
    }
    /// `Φ_t` of draw `i` as nested lists.
    fn phi(&self, i: usize, t: usize) -> PyResult<Vec<Vec<f64>>> {
        let path = self.inner.paths().get(i).ok_or_else(|| WishvolError::new_err(format!("no draw {i}")))?;
        if t > path.len() {
            return Err(WishvolError::new_err(format!("t = {t} is past T = {}", path.len())));
        }
        Ok(path.phi(t).to_rows())
    }
    /// Per-time quantiles of the implied correlation of coordinates `i`, `j` (0-based).
    #[pyo3(signature = (i, j, quantiles = vec![0.025, 0.5, 0.975]))]
    fn correlation(&self, i: usize, j: usize, quantiles: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        smoother::correlation_summary(&self.inner, (i, j), &quantiles).map_err(err)
    }
}

#[pyfunction]
fn smooth(py: Python<'_>, returns: Vec<Vec<f64>>, hyper: AnyHyper, draws: usize, seed: u64) -> PyResult<Ensemble> {
    let data = series(returns)?;
    let h = hyper.model();
    let ens = py
        .detach(|| {
            let f = match &h {
                ModelHyper::Ue(u) => filter::ue_forward_filter(&data, u),
                ModelHyper::Bb(b) => filter::bb_forward_filter(&data, b),
            }?;
            smoother::sample_ensemble(&f, &h, draws, seed)?.with_logliks(&data)
        })
        .map_err(err)?;
    Ok(Ensemble { inner: ens })
}

#[pyfunction]
fn log_plr(ll_u: Vec<f64>, ll_b: Vec<f64>) -> PyResult<f64> {
    compare::log_plr_from_logliks(&ll_u, &ll_b).map_err(err)
}

/// Mixture-weight Gibbs sampler; returns the post-burn-in `α` trace and its summary.
#[pyfunction]
#[pyo3(signature = (returns, ue, bb, iterations, seed, a0 = 1.0, b0 = 1.0, burn_in = None))]
#[allow(clippy::too_many_arguments)]
fn mixture<'py>(
    py: Python<'py>,
    returns: Vec<Vec<f64>>,
    ue: UeHyper,
    bb: BbHyper,
    iterations: usize,
    seed: u64,
    a0: f64,
    b0: f64,
    burn_in: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let data = series(returns)?;
    let cfg = MixtureConfig { a0, b0, iterations, burn_in, seed, mode: MixtureMode::Full };
    let (trace, s) = py
        .detach(|| {
            let trace = compare::mixture_gibbs(&data, &ue.inner, &bb.inner, &cfg)?;
            let s = trace.summary(None)?;
            Ok::<_, wishvol_core::Error>((trace, s))
        })
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("alpha", trace.alpha)?;
    out.set_item("alpha_mean", s.alpha_mean)?;
    out.set_item("alpha_se", s.alpha_se)?;
    out.set_item("prob_alpha_below_half", s.prob_alpha_below_half)?;
    out.set_item("prob_alpha_below_half_se", s.prob_alpha_below_half_se)?;
    Ok(out)
}

/// Predictive interval upper ends and running coverage.
#[pyfunction]
#[pyo3(signature = (returns, hyper, level = 0.95))]
fn ppc(returns: Vec<Vec<f64>>, hyper: AnyHyper, level: f64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let data = series(returns)?;
    let f = run_filter(&data, &hyper.model())?;
    let r = compare::ppc_intervals(&f, &data, level).map_err(err)?;
    Ok((r.upper, r.coverage))
}

/// Simulated returns and the true precision path.
#[pyfunction]
fn simulate(hyper: AnyHyper, t: usize, seed: u64) -> PyResult<(Rows, Vec<Rows>)> {
    let (s, path) = wishvol_core::cli::simulate::simulate(&hyper.model(), t, seed).map_err(err)?;
    Ok((s.returns().to_vec(), path.phis().iter().map(|p| p.to_rows()).collect()))
}

#[pyfunction]
fn tricomi_u(a: f64, b: f64, z: f64) -> PyResult<f64> {
    core_tricomi(TricomiArgs::new(a, b, z)).map_err(err)
}

#[pymodule]
fn wishvol(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WishvolError", m.py().get_type::<WishvolError>())?;
    m.add_class::<UeHyper>()?;
    m.add_class::<BbHyper>()?;
    m.add_class::<Filtered>()?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(forward_filter, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_loglik, m)?)?;
    m.add_function(wrap_pyfunction!(grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(constrained_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(log_plr, m)?)?;
    m.add_function(wrap_pyfunction!(mixture, m)?)?;
    m.add_function(wrap_pyfunction!(ppc, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(tricomi_u, m)?)?;
    Ok(())
}
