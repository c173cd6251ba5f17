use std::path::{Path, PathBuf};
use std::process::Command;

use stable_gvar::driver::Chain;
use stable_gvar::io::{read_manifest, write_series_csv, DrawWriter};
use stable_gvar::simulate::{simulate_dataset, GridSpec};
use stable_gvar::HyperParams;
use stable_gvar_cli::fit::{chain_file, cmd_fit, load_chains, load_data, state_file, RUN_FILE};
use stable_gvar_cli::report::{analyze_prior_draws, cmd_forecast, cmd_summarize};
use stable_gvar_cli::{CliError, Config};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stable-gvar"))
}

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.run.n_chains = 2;
    cfg.run.n_warmup = 150;
    cfg.run.n_samples = 150;
    cfg.run.thin = 3;
    cfg.run.adapt_steps = 100;
    cfg.forecast.n_mc = 200;
    cfg.forecast.holdout = 10;
    cfg.forecast.horizons = vec![1, 2];
    cfg
}

fn dataset(dir: &Path, n: usize, m: usize) -> (PathBuf, PathBuf) {
    let grid = GridSpec {
        ns: vec![n],
        ms: vec![m],
        ps: vec![1],
        rs: vec![0.5],
        replicates: 1,
        burn: 200,
        seed: 11,
    };
    let ds = simulate_dataset(&grid, 0, 0).unwrap();
    let data = dir.join("y.csv");
    write_series_csv(&data, &ds.series).unwrap();
    let truth = dir.join("y.truth.json");
    stable_gvar::io::TruthFile::new(&ds.params, &ds.truth)
        .write(&truth)
        .unwrap();
    (data, truth)
}

#[test]
fn config_init_round_trips() {
    let out = bin().args(["config", "init"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = Config::parse(&text).unwrap();
    assert_eq!(cfg, Config::default());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(&path, "[run]\nchainz = 3\n").unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("c.toml");
    let mut cfg = Config::default();
    cfg.simulate = GridSpec {
        ns: vec![50, 80],
        ms: vec![2],
        ps: vec![1, 2],
        rs: vec![0.5],
        replicates: 2,
        burn: 100,
        seed: 3,
    };
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    for d in ["a", "b"] {
        let st = bin()
            .args(["simulate", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(tmp.path().join(d))
            .output()
            .unwrap()
            .status;
        assert!(st.success());
    }
    let rows = read_manifest(&tmp.path().join("a").join("manifest.csv")).unwrap();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        for f in [&row.data, &row.truth] {
            let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
            let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }
}

#[test]
fn too_short_series_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("y.csv");
    std::fs::write(&data, "a,b\n0.1,0.2\n0.3,-0.1\n").unwrap();
    let out = bin()
        .args(["fit", "--p", "2", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let missing = bin()
        .args(["fit", "--data"])
        .arg(tmp.path().join("nope.csv"))
        .arg("--out")
        .arg(tmp.path().join("o"))
        .output()
        .unwrap();
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn resume_reproduces_an_uninterrupted_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, _) = dataset(tmp.path(), 80, 3);
    let cfg = small_config();
    let full = tmp.path().join("full");
    cmd_fit(&cfg, &data, &full, false, 50).unwrap();

    let (y, _) = load_data(&cfg, &data).unwrap();
    let spec = cfg.model.spec(y.m()).unwrap();
    // Chain 0 is cut mid-sampling, chain 1 while still adapting.
    for (c, stop) in [(0usize, 200u64), (1, 40)] {
        let cut = tmp.path().join("cut");
        if c == 0 {
            std::fs::create_dir_all(&cut).unwrap();
            for f in ["meta.json", RUN_FILE, "standardization.json"] {
                std::fs::copy(full.join(f), cut.join(f)).unwrap();
            }
        }
        let mut chain = Chain::new(&y, &spec, &cfg.run, c).unwrap();
        let mut writer = DrawWriter::create(&chain_file(&cut, c)).unwrap();
        let mut checkpoint = None;
        // Draws written after the checkpoint must be discarded on resume.
        while chain.state().iteration < stop + 20 && !chain.is_finished() {
            if let Some(d) = chain.step().unwrap() {
                writer.write(&d).unwrap();
            }
            if chain.state().iteration == stop {
                checkpoint = Some(serde_json::to_vec(chain.state()).unwrap());
            }
        }
        writer.flush().unwrap();
        std::fs::write(state_file(&cut, c), checkpoint.unwrap()).unwrap();
    }
    let cut = tmp.path().join("cut");
    cmd_fit(&cfg, &data, &cut, true, 50).unwrap();
    for c in 0..2 {
        assert_eq!(
            std::fs::read(chain_file(&full, c)).unwrap(),
            std::fs::read(chain_file(&cut, c)).unwrap(),
            "chain {c}"
        );
    }

    let mut other = cfg.clone();
    other.run.seed += 1;
    assert!(matches!(
        cmd_fit(&other, &data, &cut, true, 50),
        Err(CliError::Config(_))
    ));
}

#[test]
fn forecast_and_summarize() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, truth) = dataset(tmp.path(), 100, 3);
    let cfg = small_config();
    let run = tmp.path().join("run");
    cmd_fit(&cfg, &data, &run, false, 0).unwrap();
    let (meta, chains) = load_chains(&run).unwrap();
    assert_eq!(meta.m, 3);
    assert!(chains.iter().all(|c| c.len() == 50));

    let fc = cmd_forecast(&cfg, &run, &data, &tmp.path().join("fc")).unwrap();
    assert!(!fc.scores.is_empty());
    assert!(fc.scores.iter().all(|r| r.log_score.is_finite()));
    assert!(tmp.path().join("fc").join("scores.csv").exists());
    assert!(tmp.path().join("fc").join("predictive.csv").exists());

    let mut no_holdout = cfg.clone();
    no_holdout.forecast.holdout = 0;
    assert!(cmd_forecast(&no_holdout, &run, &data, &tmp.path().join("fc0")).is_err());

    let with_truth = cmd_summarize(&run, Some(&truth), &tmp.path().join("s1")).unwrap();
    assert!(!with_truth.misclassification.is_empty());
    let plain = cmd_summarize(&run, None, &tmp.path().join("s2")).unwrap();
    assert!(plain.misclassification.is_empty());
    for f in [
        "directed.csv",
        "undirected.csv",
        "graph.json",
        "graph_majority.json",
        "summary.json",
    ] {
        assert!(tmp.path().join("s2").join(f).exists(), "{f}");
    }
    let graph: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("s2").join("graph.json")).unwrap())
            .unwrap();
    assert_eq!(graph["nodes"].as_array().unwrap().len(), 3);

    let out = bin()
        .arg("summarize")
        .arg(&run)
        .arg("--out")
        .arg(tmp.path().join("s3"))
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn prior_check_flags_mismatched_hyperparameters() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "prior-check",
            "--warmup",
            "500",
            "--samples",
            "20000",
            "--thin",
            "10",
            "--chains",
            "1",
            "--out",
        ])
        .arg(tmp.path().join("pc"))
        .output()
        .unwrap();
    // Exit code 4 signals a flagged discrepancy; either way a report is written.
    assert!(
        matches!(out.status.code(), Some(0 | 4)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(tmp.path().join("pc").join("prior_check.json")).unwrap();
    assert!(text.contains("\"n_draws\": 2000"));

    // The same draws tested against a different prior must be flagged.
    let mut cfg = small_config();
    cfg.run.n_chains = 1;
    cfg.run.n_warmup = 500;
    cfg.run.n_samples = 20000;
    cfg.run.thin = 10;
    cfg.run.prior_only = true;
    let run = tmp.path().join("run");
    let (data, _) = dataset(tmp.path(), 60, 3);
    cmd_fit(&cfg, &data, &run, false, 0).unwrap();
    let draws: Vec<_> = load_chains(&run).unwrap().1.concat();
    let mut wrong = HyperParams::default_for(3);
    wrong.a1 = 3.0;
    wrong.c1 = 6.0;
    let rep = analyze_prior_draws(&draws, &wrong, 0.01, 3.0);
    assert!(!rep.pass);
    assert!(rep
        .ks
        .iter()
        .filter(|r| r.parameter == "u" || r.parameter == "vartheta")
        .all(|r| r.flagged));
    assert!(rep.indicators.iter().all(|r| r.flagged));
    // Under the true prior only occasional false alarms among the many tests.
    let right = analyze_prior_draws(&draws, &HyperParams::default_for(3), 0.01, 3.0);
    assert!(
        right.n_flagged <= 2 && right.n_flagged + 6 < rep.n_flagged,
        "{right:?}"
    );
}
