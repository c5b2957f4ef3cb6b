//! Command dispatch and the results bundle.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cli::args::Command;
use crate::cli::config::{ModelSelector, RunConfig};
use crate::cli::io::{d0_from_presample, demean, load_returns_csv, write_returns_csv, Table};
use crate::cli::simulate::{daily_timestamps, simulate};
use crate::compare::{log_plr, mixture_gibbs, ppc_intervals, MixtureConfig};
use crate::error::{Error, Result};
use crate::filter::{
    bb_forward_filter, constrained_lambda, grid_search, marginal_loglik, ue_forward_filter, FilterOutput,
    ReturnsSeries,
};
use crate::matops::SymPd;
use crate::randsamp::RNG_ALGORITHM;
use crate::smoother::{correlation_summary, sample_ensemble, SmoothedEnsemble};
use crate::volproc::{match_ue_to_bb, BbHyper, ModelHyper, UeHyper};

/// Largest tolerated gap between UE and matched-BB forecast log densities.
pub const MATCHED_FORECAST_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: Command,
    pub seed: u64,
    pub rng_algorithm: String,
    pub version: String,
    pub wall_time_secs: f64,
    pub config: RunConfig,
    /// How `D_0` was obtained.
    pub d0_source: String,
    pub warnings: Vec<String>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

/// Per-time tables and scalar summaries of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub metadata: Metadata,
    pub scalars: BTreeMap<String, f64>,
    pub tables: BTreeMap<String, Table>,
}

impl ResultsBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn results_file_name(&self) -> String {
        format!("{}_results_seed{}.json", self.metadata.command.name(), self.metadata.seed)
    }

    pub fn table_file_name(&self, table: &str) -> String {
        format!("{}_{table}_seed{}.csv", self.metadata.command.name(), self.metadata.seed)
    }

    /// Writes each table as CSV and the whole bundle as JSON.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, table) in &self.tables {
            let file = self.table_file_name(name);
            table.write_csv(&dir.join(&file))?;
            self.metadata.files.push(file);
        }
        let file = self.results_file_name();
        self.metadata.files.push(file.clone());
        std::fs::write(dir.join(file), self.to_json()?)?;
        Ok(())
    }
}

struct Prepared {
    data: ReturnsSeries,
    d0: SymPd,
    d0_source: String,
    warnings: Vec<String>,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let path = cfg.data.as_ref().ok_or_else(|| Error::Config("no input data: set `data` in the config".into()))?;
    let all = load_returns_csv(path, cfg.q)?;
    let n0 = cfg.prior.presample;
    if n0 > all.len() {
        return Err(Error::Config(format!("presample of {n0} rows exceeds the {} available", all.len())));
    }
    let pre = all.slice(0..n0);
    let mut data = all.slice(n0..all.len());
    let mut warnings = Vec::new();
    if cfg.prior.demean {
        if n0 == 0 {
            return Err(Error::Config("demean needs a presample".into()));
        }
        data = demean(&data, &pre)?;
    }
    let (d0, d0_source) = match (&cfg.prior.d0, n0) {
        (Some(rows), _) => (SymPd::from_rows(rows)?, "config".to_string()),
        (None, 0) => return Err(Error::Config("set prior.d0 or a positive prior.presample".into())),
        (None, _) => {
            let pre = if cfg.prior.demean { demean(&pre, &pre)? } else { pre };
            let est = d0_from_presample(&pre, cfg.prior.ridge)?;
            warnings.extend(est.warning);
            (est.d0, format!("presample of {n0} rows, ridge {}", est.ridge_used))
        }
    };
    if d0.dim() != data.dim() {
        return Err(Error::DimensionMismatch { expected: data.dim(), found: d0.dim() });
    }
    Ok(Prepared { data, d0, d0_source, warnings })
}

fn run_filter(data: &ReturnsSeries, h: &ModelHyper) -> Result<FilterOutput> {
    match h {
        ModelHyper::Ue(u) => ue_forward_filter(data, u),
        ModelHyper::Bb(b) => bb_forward_filter(data, b),
    }
}

/// Fails unless the two filters give the same forecast densities.
pub fn check_matched_forecasts(fu: &FilterOutput, fb: &FilterOutput) -> Result<f64> {
    let gap = fu
        .log_forecasts()
        .iter()
        .zip(fb.log_forecasts())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if !(gap <= MATCHED_FORECAST_TOL) || fu.d_path() != fb.d_path() {
        return Err(Error::Consistency(format!(
            "matched UE and BB filters disagree (max forecast gap {gap:e})"
        )));
    }
    Ok(gap)
}

fn time_key(data: &ReturnsSeries, t: usize) -> String {
    match (t, data.timestamps()) {
        (0, _) => "initial".into(),
        (t, Some(ts)) => ts[t - 1].clone(),
        (t, None) => t.to_string(),
    }
}

fn upper_labels(prefix: &str, q: usize) -> Vec<String> {
    let mut v = Vec::new();
    for i in 1..=q {
        for j in i..=q {
            v.push(format!("{prefix}{i}{j}"));
        }
    }
    v
}

fn upper_entries(m: &SymPd) -> Vec<f64> {
    let q = m.dim();
    let mut v = Vec::new();
    for i in 0..q {
        for j in i..q {
            v.push(m.get(i, j));
        }
    }
    v
}

fn filter_table(data: &ReturnsSeries, f: &FilterOutput) -> Table {
    let mut cols = vec!["log_forecast".to_string(), "cum_loglik".into(), "post_df".into()];
    cols.extend(upper_labels("d", f.dim()));
    let mut table = Table::new("time", cols);
    let mut cum = 0.0;
    for t in 0..=f.len() {
        let lf = if t == 0 { 0.0 } else { f.log_forecasts()[t - 1] };
        cum += lf;
        let mut row = vec![lf, cum, f.post_df(t)];
        row.extend(upper_entries(f.d(t)));
        table.push(time_key(data, t), row);
    }
    table
}

fn pair_hypers(cfg: &RunConfig, d0: &SymPd) -> Result<(UeHyper, BbHyper)> {
    let ue = cfg.ue_hyper(d0.clone())?;
    let bb = match (cfg.model, &cfg.bb) {
        (ModelSelector::Matched, _) | (_, None) => match_ue_to_bb(&ue)?,
        (_, Some(_)) => {
            let mut c = cfg.clone();
            c.model = ModelSelector::Bb;
            c.bb_hyper(d0.clone())?
        }
    };
    Ok((ue, bb))
}

struct Output {
    scalars: BTreeMap<String, f64>,
    tables: BTreeMap<String, Table>,
    d0_source: String,
    warnings: Vec<String>,
}

impl Output {
    fn new(d0_source: String, warnings: Vec<String>) -> Self {
        Output { scalars: BTreeMap::new(), tables: BTreeMap::new(), d0_source, warnings }
    }
}

fn cmd_simulate(cfg: &RunConfig) -> Result<(Output, ReturnsSeries)> {
    let sim = cfg.simulate.as_ref().ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
    let (d0, source) = match &cfg.prior.d0 {
        Some(rows) => (SymPd::from_rows(rows)?, "config"),
        None => (SymPd::identity(sim.q), "identity"),
    };
    if d0.dim() != sim.q {
        return Err(Error::DimensionMismatch { expected: sim.q, found: d0.dim() });
    }
    let hyper = match cfg.model {
        ModelSelector::Bb => ModelHyper::Bb(cfg.bb_hyper(d0)?),
        _ => ModelHyper::Ue(cfg.ue_hyper(d0)?),
    };
    let (series, truth) = simulate(&hyper, sim.t, cfg.seed)?;
    let series = ReturnsSeries::new(sim.q, series.returns().to_vec(), Some(daily_timestamps(&sim.start, sim.t)?))?;
    let mut out = Output::new(source.into(), Vec::new());
    let mut table = Table::new("time", upper_labels("phi", sim.q));
    for t in 0..=sim.t {
        table.push(time_key(&series, t), upper_entries(truth.phi(t)));
    }
    out.tables.insert("truth".into(), table);
    out.scalars.insert("t".into(), sim.t as f64);
    out.scalars.insert("q".into(), sim.q as f64);
    Ok((out, series))
}

fn cmd_filter(cfg: &RunConfig, p: Prepared) -> Result<Output> {
    let mut out = Output::new(p.d0_source, p.warnings);
    let mut fits = Vec::new();
    for h in cfg.hypers(p.d0.clone())? {
        let f = run_filter(&p.data, &h)?;
        out.scalars.insert(format!("log_marginal_{}", h.tag()), f.log_marginal());
        out.tables.insert(format!("filter_{}", h.tag()), filter_table(&p.data, &f));
        fits.push(f);
    }
    if let [fu, fb] = fits.as_slice() {
        out.scalars.insert("matched_max_forecast_gap".into(), check_matched_forecasts(fu, fb)?);
    }
    Ok(out)
}

fn cmd_grid(cfg: &RunConfig, p: Prepared) -> Result<Output> {
    let n_grid = cfg.grid.n_values()?;
    let l_grid = cfg.grid.lambda_values()?;
    let g = grid_search(&p.data, &p.d0, &n_grid, &l_grid)?;
    let mut out = Output::new(p.d0_source, p.warnings);
    let mut table = Table::new("point", vec!["n".into(), "lambda".into(), "loglik".into()]);
    for (i, gp) in g.surface.iter().enumerate() {
        table.push(i.to_string(), vec![gp.n, gp.lambda, gp.loglik]);
    }
    out.tables.insert("surface".into(), table);
    out.scalars.insert("n_star".into(), g.n_star);
    out.scalars.insert("lambda_star".into(), g.lambda_star);
    out.scalars.insert("best_loglik".into(), g.best_loglik);
    let q = p.data.dim();
    let mut constrained: Option<(f64, f64, f64)> = None;
    for n in n_grid.iter().copied().filter(|n| *n > q as f64 + 1.0) {
        let lambda = constrained_lambda(n, 1.0, q)?;
        let ll = marginal_loglik(&p.data, n, lambda, &p.d0)?;
        if constrained.is_none_or(|(_, _, best)| ll > best) {
            constrained = Some((n, lambda, ll));
        }
    }
    if let Some((n, lambda, ll)) = constrained {
        out.scalars.insert("constrained_n_star".into(), n);
        out.scalars.insert("constrained_lambda_star".into(), lambda);
        out.scalars.insert("constrained_best_loglik".into(), ll);
    }
    Ok(out)
}

fn ensemble_for(cfg: &RunConfig, data: &ReturnsSeries, h: &ModelHyper) -> Result<(FilterOutput, SmoothedEnsemble)> {
    let f = run_filter(data, h)?;
    let ens = sample_ensemble(&f, h, cfg.draws, cfg.seed)?.with_logliks(data)?;
    Ok((f, ens))
}

fn corr_pairs(cfg: &RunConfig, q: usize) -> Result<Vec<(usize, usize)>> {
    if cfg.smooth.pairs.is_empty() {
        return Ok((0..q).flat_map(|i| ((i + 1)..q).map(move |j| (i, j))).collect());
    }
    cfg.smooth
        .pairs
        .iter()
        .map(|&(i, j)| {
            if i == 0 || j == 0 || i > q || j > q || i == j {
                Err(Error::Config(format!("correlation pair ({i}, {j}) is invalid for q = {q}")))
            } else {
                Ok((i - 1, j - 1))
            }
        })
        .collect()
}

fn cmd_smooth(cfg: &RunConfig, p: Prepared) -> Result<Output> {
    let mut out = Output::new(p.d0_source, p.warnings);
    let q = p.data.dim();
    let pairs = corr_pairs(cfg, q)?;
    let mut fits = Vec::new();
    for h in cfg.hypers(p.d0.clone())? {
        let (f, ens) = ensemble_for(cfg, &p.data, &h)?;
        for &(i, j) in &pairs {
            let cols = cfg.smooth.quantiles.iter().map(|x| format!("q{x}")).collect();
            let mut table = Table::new("time", cols);
            for (t, row) in correlation_summary(&ens, (i, j), &cfg.smooth.quantiles)?.into_iter().enumerate() {
                table.push(time_key(&p.data, t), row);
            }
            out.tables.insert(format!("corr_{}_{}{}", h.tag(), i + 1, j + 1), table);
        }
        let ll = ens.logliks().expect("computed above");
        let mut table = Table::new("draw", vec!["loglik".into()]);
        for (d, v) in ll.iter().enumerate() {
            table.push(d.to_string(), vec![*v]);
        }
        out.tables.insert(format!("logliks_{}", h.tag()), table);
        out.scalars.insert(format!("mean_path_loglik_{}", h.tag()), crate::stats::mean(ll));
        fits.push(f);
    }
    if let [fu, fb] = fits.as_slice() {
        out.scalars.insert("matched_max_forecast_gap".into(), check_matched_forecasts(fu, fb)?);
    }
    Ok(out)
}

fn cmd_plr(cfg: &RunConfig, p: Prepared) -> Result<Output> {
    let mut out = Output::new(p.d0_source, p.warnings);
    let (hu, hb) = match cfg.model {
        ModelSelector::Matched => {
            let hs = cfg.hypers(p.d0.clone())?;
            (hs[0].clone(), hs[1].clone())
        }
        // Self-comparison: both sides come from the same model and seed.
        _ => {
            let h = cfg.hypers(p.d0.clone())?.remove(0);
            (h.clone(), h)
        }
    };
    let (fu, eu) = ensemble_for(cfg, &p.data, &hu)?;
    let (fb, eb) = ensemble_for(cfg, &p.data, &hb)?;
    if cfg.model == ModelSelector::Matched {
        out.scalars.insert("matched_max_forecast_gap".into(), check_matched_forecasts(&fu, &fb)?);
    }
    out.scalars.insert("log_plr".into(), log_plr(&eu, &eb, &p.data)?);
    let mut table = Table::new("draw", vec![format!("loglik_{}", hu.tag()), format!("loglik_{}_b", hb.tag())]);
    let (lu, lb) = (eu.logliks().expect("computed"), eb.logliks().expect("computed"));
    for d in 0..lu.len().max(lb.len()) {
        table.push(d.to_string(), vec![lu[d], lb[d]]);
    }
    table.columns = vec!["loglik_a".into(), "loglik_b".into()];
    out.tables.insert("logliks".into(), table);
    Ok(out)
}

fn cmd_mixture(cfg: &RunConfig, p: Prepared) -> Result<Output> {
    let mut out = Output::new(p.d0_source, p.warnings);
    let (ue, bb) = pair_hypers(cfg, &p.d0)?;
    let m = &cfg.mixture;
    let mc = MixtureConfig { a0: m.a0, b0: m.b0, iterations: m.iterations, burn_in: m.burn_in, seed: cfg.seed, mode: m.mode };
    let trace = mixture_gibbs(&p.data, &ue, &bb, &mc)?;
    let s = trace.summary(m.batches)?;
    out.scalars.insert("alpha_mean".into(), s.alpha_mean);
    out.scalars.insert("alpha_se".into(), s.alpha_se);
    out.scalars.insert("prob_alpha_below_half".into(), s.prob_alpha_below_half);
    out.scalars.insert("prob_alpha_below_half_se".into(), s.prob_alpha_below_half_se);
    out.scalars.insert("n_kept".into(), s.n_kept as f64);
    out.scalars.insert("n_batches".into(), s.n_batches as f64);
    out.scalars.insert("burn_in".into(), trace.burn_in as f64);
    out.scalars.insert("alpha_init".into(), trace.alpha_init);
    let mut table = Table::new("iteration", vec!["alpha".into()]);
    for (i, a) in trace.alpha.iter().enumerate() {
        table.push((trace.burn_in + i).to_string(), vec![*a]);
    }
    out.tables.insert("alpha_trace".into(), table);
    let mut table = Table::new("time", vec!["z_mean".into()]);
    for (t, z) in trace.z_means().into_iter().enumerate() {
        table.push(time_key(&p.data, t + 1), vec![z]);
    }
    out.tables.insert("z_means".into(), table);
    Ok(out)
}

fn cmd_ppc(cfg: &RunConfig, p: Prepared) -> Result<Output> {
    let mut out = Output::new(p.d0_source, p.warnings);
    let q = p.data.dim();
    let mut fits = Vec::new();
    let mut uppers = Vec::new();
    for h in cfg.hypers(p.d0.clone())? {
        let f = run_filter(&p.data, &h)?;
        let ppc = ppc_intervals(&f, &p.data, cfg.ppc.level)?;
        let mut cols: Vec<String> = (1..=q).map(|i| format!("length{i}")).collect();
        cols.push("coverage".into());
        let mut table = Table::new("time", cols);
        for t in 0..p.data.len() {
            let mut row = ppc.lengths[t].clone();
            row.push(ppc.coverage[t]);
            table.push(time_key(&p.data, t + 1), row);
        }
        out.tables.insert(format!("ppc_{}", h.tag()), table);
        if let Some(c) = ppc.coverage.last() {
            out.scalars.insert(format!("terminal_coverage_{}", h.tag()), *c);
        }
        uppers.push(ppc.upper);
        fits.push(f);
    }
    if let [fu, fb] = fits.as_slice() {
        out.scalars.insert("matched_max_forecast_gap".into(), check_matched_forecasts(fu, fb)?);
        let gap = uppers[0].iter().flatten().zip(uppers[1].iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.scalars.insert("matched_max_interval_gap".into(), gap);
    }
    Ok(out)
}

/// Runs one command, writes its outputs under `cfg.out` and returns the bundle.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<ResultsBundle> {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let (out, simulated) = pool.install(|| -> Result<(Output, Option<ReturnsSeries>)> {
        if cmd == Command::Simulate {
            let (o, s) = cmd_simulate(cfg)?;
            return Ok((o, Some(s)));
        }
        let p = prepare(cfg)?;
        let o = match cmd {
            Command::Filter => cmd_filter(cfg, p)?,
            Command::GridSearch => cmd_grid(cfg, p)?,
            Command::Smooth => cmd_smooth(cfg, p)?,
            Command::ComparePlr => cmd_plr(cfg, p)?,
            Command::CompareMixture => cmd_mixture(cfg, p)?,
            Command::Ppc => cmd_ppc(cfg, p)?,
            Command::Simulate => unreachable!("handled above"),
        };
        Ok((o, None))
    })?;
    let mut bundle = ResultsBundle {
        metadata: Metadata {
            command: cmd,
            seed: cfg.seed,
            rng_algorithm: RNG_ALGORITHM.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_secs: 0.0,
            config: cfg.clone(),
            d0_source: out.d0_source,
            warnings: out.warnings,
            files: Vec::new(),
        },
        scalars: out.scalars,
        tables: out.tables,
    };
    std::fs::create_dir_all(&cfg.out)?;
    if let Some(series) = simulated {
        let file = format!("simulate_returns_seed{}.csv", cfg.seed);
        write_returns_csv(&cfg.out.join(&file), &series)?;
        bundle.metadata.files.push(file);
    }
    bundle.metadata.wall_time_secs = start.elapsed().as_secs_f64();
    bundle.write(&cfg.out)?;
    Ok(bundle)
}

/// Machine-readable error record.
pub fn error_record(cmd: Option<Command>, err: &Error) -> serde_json::Value {
    serde_json::json!({
        "status": "error",
        "command": cmd.map(|c| c.name()),
        "kind": err.kind(),
        "message": err.to_string(),
    })
}
