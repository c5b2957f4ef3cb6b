//! Run configuration, read from TOML and overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compare::MixtureMode;
use crate::error::{Error, Result};
use crate::matops::SymPd;
use crate::volproc::{match_ue_to_bb, BbHyper, ModelHyper, UeHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelSelector {
    Ue,
    Bb,
    /// UE plus the BB process matched to it.
    #[default]
    Matched,
}

/// Ridge added to the presample average before the PD check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ridge {
    /// Multiple of the mean diagonal added to every diagonal entry.
    Fixed(f64),
    /// `"auto"`: no ridge unless the raw average is not PD.
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Explicit `D_0`; takes precedence over the presample.
    pub d0: Option<Vec<Vec<f64>>>,
    /// Leading rows used to estimate `D_0`; they are excluded from the analysis.
    #[serde(default)]
    pub presample: usize,
    #[serde(default)]
    pub ridge: Ridge,
    /// Subtract the presample mean from every return.
    #[serde(default)]
    pub demean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeConfig {
    pub n: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BbConfig {
    pub beta: f64,
    pub b: f64,
    pub k0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_min: f64,
    pub n_max: f64,
    #[serde(default = "one")]
    pub n_step: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_step: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_min: 3.0, n_max: 20.0, n_step: 1.0, lambda_min: 0.6, lambda_max: 0.99, lambda_step: 0.001 }
    }
}

fn arith_grid(lo: f64, hi: f64, step: f64, name: &str) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("{name} grid needs min <= max and a positive step")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect())
}

impl GridConfig {
    pub fn n_values(&self) -> Result<Vec<f64>> {
        arith_grid(self.n_min, self.n_max, self.n_step, "n")
    }

    pub fn lambda_values(&self) -> Result<Vec<f64>> {
        arith_grid(self.lambda_min, self.lambda_max, self.lambda_step, "lambda")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Number of returns `T`.
    pub t: usize,
    pub q: usize,
    /// First timestamp, `YYYY-MM-DD`; consecutive days follow.
    #[serde(default = "default_start")]
    pub start: String,
}

fn default_start() -> String {
    "2000-01-01".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothConfig {
    /// 1-based coordinate pairs; all pairs when empty.
    #[serde(default)]
    pub pairs: Vec<(usize, usize)>,
    #[serde(default = "default_quantiles")]
    pub quantiles: Vec<f64>,
}

fn default_quantiles() -> Vec<f64> {
    vec![0.025, 0.5, 0.975]
}

impl Default for SmoothConfig {
    fn default() -> Self {
        SmoothConfig { pairs: Vec::new(), quantiles: default_quantiles() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    #[serde(default = "one")]
    pub a0: f64,
    #[serde(default = "one")]
    pub b0: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub burn_in: Option<usize>,
    pub batches: Option<usize>,
    #[serde(default)]
    pub mode: MixtureMode,
}

fn default_iterations() -> usize {
    10_000
}

impl Default for MixtureSection {
    fn default() -> Self {
        MixtureSection { a0: 1.0, b0: 1.0, iterations: default_iterations(), burn_in: None, batches: None, mode: MixtureMode::Full }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpcConfig {
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_level() -> f64 {
    0.95
}

impl Default for PpcConfig {
    fn default() -> Self {
        PpcConfig { level: default_level() }
    }
}

/// Everything a command needs. Omitted sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSelector,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Input CSV of returns.
    pub data: Option<PathBuf>,
    /// Expected number of return columns; inferred from the header when absent.
    pub q: Option<usize>,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub prior: PriorConfig,
    pub ue: Option<UeConfig>,
    pub bb: Option<BbConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub smooth: SmoothConfig,
    #[serde(default)]
    pub mixture: MixtureSection,
    #[serde(default)]
    pub ppc: PpcConfig,
}

fn default_draws() -> usize {
    1000
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are resolved against the config file.
        if let (Some(data), Some(dir)) = (&cfg.data, path.parent()) {
            if data.is_relative() {
                cfg.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// UE hyperparameters with `k = 1`.
    pub fn ue_hyper(&self, d0: SymPd) -> Result<UeHyper> {
        let ue = self.ue.as_ref().ok_or_else(|| Error::Config("missing [ue] section".into()))?;
        UeHyper::new(1.0, ue.n, ue.lambda, d0)
    }

    /// BB hyperparameters with `k = 1`: the `[bb]` section, or the match of `[ue]`
    /// in matched mode.
    pub fn bb_hyper(&self, d0: SymPd) -> Result<BbHyper> {
        match (self.model, &self.bb) {
            (ModelSelector::Matched, _) => match_ue_to_bb(&self.ue_hyper(d0)?),
            (_, Some(bb)) => BbHyper::new(1.0, bb.beta, bb.b, bb.k0, d0),
            (_, None) => Err(Error::Config("missing [bb] section".into())),
        }
    }

    /// The models a command runs: one, or UE and matched BB.
    pub fn hypers(&self, d0: SymPd) -> Result<Vec<ModelHyper>> {
        Ok(match self.model {
            ModelSelector::Ue => vec![ModelHyper::Ue(self.ue_hyper(d0)?)],
            ModelSelector::Bb => vec![ModelHyper::Bb(self.bb_hyper(d0)?)],
            ModelSelector::Matched => {
                vec![ModelHyper::Ue(self.ue_hyper(d0.clone())?), ModelHyper::Bb(self.bb_hyper(d0)?)]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model, ModelSelector::Matched);
        assert_eq!(cfg.draws, 1000);
        assert_eq!(cfg.prior.ridge, Ridge::Auto(AutoTag::Auto));
        let text = r#"
            seed = 7
            model = "bb"
            data = "returns.csv"
            [prior]
            presample = 20
            ridge = 0.001
            [ue]
            n = 5.0
            lambda = 0.8
            [bb]
            beta = 0.8
            b = 0.8
            k0 = 6.0
            [grid]
            n_min = 3
            n_max = 20
            lambda_min = 0.6
            lambda_max = 0.99
            lambda_step = 0.001
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.prior.ridge, Ridge::Fixed(0.001));
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.grid.n_values().unwrap().len(), 18);
        let lam = cfg.grid.lambda_values().unwrap();
        assert_eq!(lam.len(), 391);
        assert_eq!(lam[1], 0.601);
        assert_eq!(*lam.last().unwrap(), 0.99);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(RunConfig::from_toml_str("sed = 3").is_err());
        assert!(RunConfig::from_toml_str("[prior]\nridge = \"sometimes\"").is_err());
    }

    #[test]
    fn matched_hypers() {
        let cfg = RunConfig::from_toml_str("[ue]\nn = 5.0\nlambda = 0.799").unwrap();
        let hs = cfg.hypers(SymPd::identity(3)).unwrap();
        match &hs[1] {
            ModelHyper::Bb(bb) => assert_eq!((bb.k0(), bb.b()), (6.0, 0.799)),
            _ => panic!("expected BB"),
        }
        let cfg = RunConfig::from_toml_str("model = \"bb\"").unwrap();
        assert!(cfg.hypers(SymPd::identity(2)).is_err());
    }
}
