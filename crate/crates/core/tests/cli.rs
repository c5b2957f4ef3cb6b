use std::path::Path;
use std::process::Command as Proc;

use wishvol_core::cli::{ResultsBundle, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_wishvol");

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> std::process::Output {
    Proc::new(BIN).args(args).output().unwrap()
}

fn bundle(dir: &Path, name: &str) -> ResultsBundle {
    ResultsBundle::from_json(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

/// Simulates a short series into `dir` and returns a config that analyses it.
fn setup(dir: &Path) -> std::path::PathBuf {
    let sim = write_config(
        dir,
        "seed = 21\nmodel = \"ue\"\n[ue]\nn = 20.0\nlambda = 0.95\n[simulate]\nt = 120\nq = 2\nstart = \"2020-03-01\"\n",
    );
    let out = dir.join("sim");
    let o = run(&["simulate", "--config", sim.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    write_config(
        dir,
        "seed = 5\ndraws = 60\ndata = \"sim/simulate_returns_seed21.csv\"\n\
         [prior]\npresample = 20\n[ue]\nn = 20.0\nlambda = 0.95\n\
         [grid]\nn_min = 3\nn_max = 6\nlambda_min = 0.9\nlambda_max = 0.99\nlambda_step = 0.03\n\
         [mixture]\niterations = 100\n",
    )
}

#[test]
fn every_subcommand_writes_seeded_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("res");
    let (cfg, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["filter", "grid-search", "smooth", "compare-plr", "compare-mixture", "ppc"] {
        let o = run(&[cmd, "--config", cfg, "--out", out_s]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let b = bundle(&out, &format!("{cmd}_results_seed5.json"));
        assert_eq!(b.metadata.seed, 5);
        for f in &b.metadata.files {
            assert!(f.contains("seed5"), "{f}");
            assert!(out.join(f).exists(), "{f}");
        }
    }
    let mix = bundle(&out, "compare-mixture_results_seed5.json");
    for key in ["alpha_mean", "alpha_se", "prob_alpha_below_half", "prob_alpha_below_half_se"] {
        assert!(mix.scalars.contains_key(key), "{key}");
    }
    let filt = bundle(&out, "filter_results_seed5.json");
    assert_eq!(filt.scalars["matched_max_forecast_gap"], 0.0);
    assert_eq!(filt.tables["filter_ue"].len(), 101);
    assert_eq!(filt.tables["filter_ue"].keys[1], "2020-03-21");
}

#[test]
fn same_seed_reproduces_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        let r = run(&["smooth", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap(), "--draws", "40"]);
        assert!(r.status.success());
    }
    for f in ["smooth_corr_bb_12_seed5.csv", "smooth_corr_ue_12_seed5.csv", "smooth_logliks_bb_seed5.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ba = bundle(&a, "smooth_results_seed5.json");
    assert_eq!(ba.metadata.config.draws, 40);
    assert_eq!(ResultsBundle::from_json(&ba.to_json().unwrap()).unwrap(), ba);
    let bb = bundle(&b, "smooth_results_seed5.json");
    assert_eq!(ba.scalars, bb.scalars);
    assert_eq!(ba.tables, bb.tables);
}

#[test]
fn self_comparison_plr_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("res");
    let o = run(&["compare-plr", "--config", cfg.to_str().unwrap(), "--model", "ue", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(bundle(&out, "compare-plr_results_seed5.json").scalars["log_plr"], 0.0);
}

#[test]
fn default_grid_has_full_surface() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let cfg = write_config(
        dir.path(),
        "seed = 1\nmodel = \"ue\"\ndata = \"sim/simulate_returns_seed21.csv\"\n[prior]\npresample = 20\n[ue]\nn = 20.0\nlambda = 0.95\n",
    );
    let out = dir.path().join("grid");
    let o = run(&["grid-search", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let b = bundle(&out, "grid-search_results_seed1.json");
    assert_eq!(b.tables["surface"].len(), 18 * 391);
    let lam = b.scalars["lambda_star"];
    assert!((0.6..=0.99).contains(&lam));
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("err");
    let cfg = write_config(dir.path(), "data = \"missing.csv\"\n[prior]\npresample = 2\n[ue]\nn = 5.0\nlambda = 0.9\n");
    let o = run(&["filter", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let rec: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["kind"], "IoError");
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(file, rec);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "date,a,b\n2024-01-02,0.1,0.2\n2024-01-03,0.1,oops\n").unwrap();
    let cfg = write_config(dir.path(), "data = \"bad.csv\"\n[prior]\nd0 = [[1.0, 0.0], [0.0, 1.0]]\n[ue]\nn = 5.0\nlambda = 0.9\n");
    let o = run(&["filter", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let rec: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["kind"], "ParseError");
    assert!(rec["message"].as_str().unwrap().contains("row 3"), "{rec}");

    std::fs::write(&bad, "date,a,b\n2024-01-02,0.1,0.2\n2024-01-03,0.1,-0.3\n").unwrap();
    let o = run(&["filter", "--config", cfg.to_str().unwrap(), "--model", "bb", "--out", out.to_str().unwrap()]);
    let rec: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(rec["kind"], "ConfigError");
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "seed = 3\ndraws = 10\nmodel = \"ue\"\n");
    let cli = <wishvol_core::cli::Cli as clap::Parser>::parse_from([
        "wishvol", "smooth", "--config", p.to_str().unwrap(), "--seed", "9", "--model", "matched", "--draws", "77",
    ]);
    let cfg: RunConfig = cli.resolve_config().unwrap();
    assert_eq!((cfg.seed, cfg.draws), (9, 77));
    assert_eq!(cfg.model, wishvol_core::cli::ModelSelector::Matched);
}
