//! `forecast`, `summarize` and `prior-check`.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use stable_gvar::driver::{fit, pooled_draws};
use stable_gvar::evaluate::{
    batch_means_se, classify_indicators, distance_distribution, edge_probabilities,
    hamming_distance_posterior, indicator_probabilities, ks_test, mean, misclassification_rate,
    mixture_quantile, off_diagonal_entries, predictive_ensemble, rolling_score_report, split_rhat,
    upper_entries, ClassificationRule, ScoreRow,
};
use stable_gvar::io::{
    write_json, write_matrix_csv, write_scores_csv, GraphJson, Standardization, TruthFile,
};
use stable_gvar::{ChainDraw, HyperParams, TimeSeries};

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::fit::{load_chains, STANDARDIZATION_FILE};
use prior_cdf::{beta_cdf, gamma_cdf};

/// Prior CDFs through statrs.
mod prior_cdf {
    use statrs::distribution::{Beta, ContinuousCDF, Gamma};

    pub fn beta_cdf(a: f64, b: f64) -> impl Fn(f64) -> f64 {
        let d = Beta::new(a, b).expect("validated shape parameters");
        move |x| d.cdf(x)
    }

    /// Shape `a`, rate `b`.
    pub fn gamma_cdf(a: f64, b: f64) -> impl Fn(f64) -> f64 {
        let d = Gamma::new(a, b).expect("validated shape parameters");
        move |x| d.cdf(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRow {
    pub horizon: usize,
    pub variable: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

/// Predictive summaries `h` steps past the end of `y`.
pub fn predictive_summary(
    draws: &[ChainDraw],
    y: &TimeSeries,
    horizons: &[usize],
) -> CliResult<Vec<PredictiveRow>> {
    let mut rows = Vec::new();
    for &h in horizons {
        let ens = predictive_ensemble(draws, y, h)?;
        let mean = ens.mixture_mean();
        let cov = ens.mixture_cov();
        for (k, name) in y.names().iter().enumerate() {
            let comps = ens.marginal(k);
            rows.push(PredictiveRow {
                horizon: h,
                variable: name.clone(),
                mean: mean[k],
                sd: cov[(k, k)].sqrt(),
                q05: mixture_quantile(&comps, 0.05),
                q50: mixture_quantile(&comps, 0.5),
                q95: mixture_quantile(&comps, 0.95),
            });
        }
    }
    Ok(rows)
}

pub struct ForecastOutput {
    pub scores: Vec<ScoreRow>,
    pub predictive: Vec<PredictiveRow>,
}

/// Rolling hold-out scores over the last `forecast.holdout` observations of
/// `data`, plus predictive summaries past its end.
pub fn cmd_forecast(
    cfg: &Config,
    run_dir: &Path,
    data: &Path,
    out: &Path,
) -> CliResult<ForecastOutput> {
    cfg.validate()?;
    let (meta, chains) = load_chains(run_dir)?;
    let draws: Vec<ChainDraw> = chains.into_iter().flatten().collect();
    let raw = stable_gvar::io::read_series_csv(data).map_err(CliError::data)?;
    let st_path = run_dir.join(STANDARDIZATION_FILE);
    let y = if st_path.exists() {
        let st: Standardization = serde_json::from_slice(&std::fs::read(&st_path)?)
            .map_err(|e| CliError::Data(e.to_string()))?;
        st.apply(&raw).map_err(CliError::data)?
    } else {
        raw
    };
    if y.m() != meta.m || y.names() != meta.names.as_slice() {
        return Err(CliError::Data(format!(
            "data columns {:?} do not match the fitted variables {:?}",
            y.names(),
            meta.names
        )));
    }
    let fc = &cfg.forecast;
    let max_h = fc.horizons.iter().copied().max().unwrap_or(1);
    if fc.holdout < max_h {
        return Err(CliError::Data(format!(
            "hold-out of {} points leaves nothing to score at horizon {max_h}",
            fc.holdout
        )));
    }
    if y.n() <= fc.holdout + meta.p {
        return Err(CliError::Data(format!(
            "series of {} points is too short for a hold-out of {}",
            y.n(),
            fc.holdout
        )));
    }
    let vars: Vec<usize> = if fc.variables.is_empty() {
        (0..y.m()).collect()
    } else {
        fc.variables
            .iter()
            .map(|v| {
                y.names()
                    .iter()
                    .position(|n| n == v)
                    .ok_or_else(|| CliError::Config(format!("unknown variable {v}")))
            })
            .collect::<CliResult<_>>()?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(fc.seed);
    let scores = rolling_score_report(
        &draws,
        &y,
        y.n() - fc.holdout,
        &fc.horizons,
        &vars,
        fc.n_mc,
        &mut rng,
    )?;
    let predictive = predictive_summary(&draws, &y, &fc.horizons)?;
    std::fs::create_dir_all(out)?;
    write_scores_csv(&out.join("scores.csv"), &scores)?;
    let mut w = csv_writer(&out.join("predictive.csv"))?;
    for row in &predictive {
        w.serialize(row).map_err(|e| CliError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(ForecastOutput { scores, predictive })
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(e.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisclassificationRow {
    pub target: String,
    pub rule: String,
    pub rate: Option<f64>,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub n_chains: usize,
    pub n_draws: usize,
    /// Split R-hat of the scalar summaries when at least two chains hold draws.
    pub rhat: Vec<(String, f64)>,
    pub majority_graph: GraphJson,
    pub misclassification: Vec<MisclassificationRow>,
    /// `(distance, posterior probability)` against the true directed graph.
    pub hamming: Vec<(usize, f64)>,
    pub hamming_mean: Option<f64>,
}

pub fn rules() -> [(&'static str, ClassificationRule); 2] {
    [
        ("naive", ClassificationRule::Naive),
        ("confident", ClassificationRule::CONFIDENT),
    ]
}

/// Misclassification of the indicators and of the undirected edges.
pub fn misclassification_table(
    draws: &[ChainDraw],
    truth: &TruthFile,
) -> CliResult<Vec<MisclassificationRow>> {
    let (params, t) = truth.to_parts().map_err(CliError::data)?;
    let probs = indicator_probabilities(draws)?;
    if probs.len() != params.phi.len() || probs[0].nrows() != truth.m {
        return Err(CliError::Data(
            "truth dimensions do not match the chains".into(),
        ));
    }
    let ind_p = off_diagonal_entries(&probs);
    let ind_t = off_diagonal_entries(&t.gamma);
    let (_, und) = edge_probabilities(draws)?;
    let edge_p = upper_entries(&und);
    let truth_adj = DMatrix::from_fn(truth.m, truth.m, |a, b| t.g2.has_edge(a, b));
    let edge_t = upper_entries(&truth_adj);
    let mut rows = Vec::new();
    for (target, p, tr) in [("gamma", &ind_p, &ind_t), ("g2", &edge_p, &edge_t)] {
        for (name, rule) in rules() {
            let mc = misclassification_rate(&classify_indicators(p, rule), tr)?;
            rows.push(MisclassificationRow {
                target: target.into(),
                rule: name.into(),
                rate: mc.rate,
                coverage: mc.coverage,
            });
        }
    }
    Ok(rows)
}

fn scalar_traces(chains: &[Vec<ChainDraw>]) -> Vec<(String, Vec<Vec<f64>>)> {
    let get: [(&str, fn(&ChainDraw) -> f64); 4] = [
        ("u", |d| d.expanded.u),
        ("tau", |d| d.expanded.tau),
        ("vartheta", |d| d.expanded.vartheta),
        ("omega", |d| d.expanded.omega),
    ];
    get.iter()
        .map(|(n, f)| {
            (
                n.to_string(),
                chains.iter().map(|c| c.iter().map(f).collect()).collect(),
            )
        })
        .collect()
}

/// Edge probabilities, graph JSON and, given a truth file, recovery metrics.
pub fn cmd_summarize(run_dir: &Path, truth: Option<&Path>, out: &Path) -> CliResult<SummaryReport> {
    let (meta, chains) = load_chains(run_dir)?;
    let draws: Vec<ChainDraw> = chains.iter().flatten().cloned().collect();
    let (directed, undirected) = edge_probabilities(&draws)?;
    std::fs::create_dir_all(out)?;
    write_matrix_csv(&out.join("directed.csv"), &meta.names, &directed)?;
    write_matrix_csv(&out.join("undirected.csv"), &meta.names, &undirected)?;
    for (s, probs) in indicator_probabilities(&draws)?.iter().enumerate() {
        write_matrix_csv(
            &out.join(format!("indicators_lag{}.csv", s + 1)),
            &meta.names,
            probs,
        )?;
    }
    write_json(
        &out.join("graph.json"),
        &GraphJson::from_probabilities(&meta.names, &directed, &undirected, -1.0),
    )?;
    let majority = GraphJson::from_probabilities(&meta.names, &directed, &undirected, 0.5);
    write_json(&out.join("graph_majority.json"), &majority)?;

    let with_draws: Vec<Vec<ChainDraw>> =
        chains.iter().filter(|c| !c.is_empty()).cloned().collect();
    let mut rhat = Vec::new();
    if with_draws.len() >= 2 {
        let len = with_draws.iter().map(Vec::len).min().unwrap_or(0);
        let trimmed: Vec<Vec<ChainDraw>> = with_draws.iter().map(|c| c[..len].to_vec()).collect();
        for (name, traces) in scalar_traces(&trimmed) {
            if let Ok(r) = split_rhat(&traces) {
                rhat.push((name, r));
            }
        }
    }
    let mut report = SummaryReport {
        n_chains: chains.len(),
        n_draws: draws.len(),
        rhat,
        majority_graph: majority,
        misclassification: Vec::new(),
        hamming: Vec::new(),
        hamming_mean: None,
    };
    if let Some(path) = truth {
        let tf = TruthFile::read(path).map_err(CliError::data)?;
        report.misclassification = misclassification_table(&draws, &tf)?;
        let dist =
            hamming_distance_posterior(&draws, &tf.directed_adjacency().map_err(CliError::data)?);
        report.hamming_mean = Some(dist.iter().sum::<usize>() as f64 / dist.len() as f64);
        report.hamming = distance_distribution(&dist);
        let mut w = csv_writer(&out.join("misclassification.csv"))?;
        for row in &report.misclassification {
            w.serialize(row).map_err(|e| CliError::Io(e.into()))?;
        }
        w.flush()?;
    }
    write_json(&out.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub parameter: String,
    pub statistic: f64,
    pub p_value: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub label: String,
    pub frequency: f64,
    pub se: f64,
    pub expected: f64,
    pub z: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCheckReport {
    pub config_hash: String,
    pub n_draws: usize,
    pub ks: Vec<KsRow>,
    pub indicators: Vec<FrequencyRow>,
    pub edges: Vec<FrequencyRow>,
    /// Moments of `K` over draws with the full graph, where `K ~ W(d, D)`.
    pub precision_full_graph: Vec<FrequencyRow>,
    pub n_flagged: usize,
    pub pass: bool,
}

fn frequency_row(label: String, trace: &[f64], expected: f64, z_limit: f64) -> FrequencyRow {
    let frequency = mean(trace);
    let se = batch_means_se(trace).max(1e-12);
    let z = (frequency - expected) / se;
    FrequencyRow {
        label,
        frequency,
        se,
        expected,
        z,
        flagged: z.abs() > z_limit,
    }
}

/// Compares prior-only draws with the analytic prior marginals of `hp`.
pub fn analyze_prior_draws(
    draws: &[ChainDraw],
    hp: &HyperParams,
    alpha: f64,
    z_limit: f64,
) -> PriorCheckReport {
    let col = |f: fn(&ChainDraw) -> f64| draws.iter().map(f).collect::<Vec<f64>>();
    let mut ks = Vec::new();
    let tests: [(&str, Vec<f64>, Box<dyn Fn(f64) -> f64>); 4] = [
        ("u", col(|d| d.expanded.u), Box::new(beta_cdf(hp.a1, hp.a2))),
        (
            "tau",
            col(|d| d.expanded.tau),
            Box::new(gamma_cdf(hp.b1, hp.b2)),
        ),
        (
            "vartheta",
            col(|d| d.expanded.vartheta),
            Box::new(beta_cdf(hp.c1, hp.c2)),
        ),
        (
            "omega",
            col(|d| d.expanded.omega),
            Box::new(gamma_cdf(hp.e1, hp.e2)),
        ),
    ];
    for (name, xs, cdf) in tests {
        let (statistic, p_value) = ks_test(&xs, cdf);
        ks.push(KsRow {
            parameter: name.into(),
            statistic,
            p_value,
            flagged: p_value < alpha,
        });
    }

    let m = draws[0].k.nrows();
    let p = draws[0].expanded.gamma.len();
    let theta = hp.c1 / (hp.c1 + hp.c2);
    let mut indicators = Vec::new();
    for s in 0..p {
        for j in 0..m {
            for i in 0..m {
                if i != j {
                    let trace: Vec<f64> = draws
                        .iter()
                        .map(|d| f64::from(u8::from(d.expanded.gamma[s][(i, j)])))
                        .collect();
                    indicators.push(frequency_row(
                        format!("gamma[{}][{i},{j}]", s + 1),
                        &trace,
                        theta,
                        z_limit,
                    ));
                }
            }
        }
    }
    let mut edges = Vec::new();
    for b in 1..m {
        for a in 0..b {
            let trace: Vec<f64> = draws
                .iter()
                .map(|d| f64::from(u8::from(d.g2.has_edge(a, b))))
                .collect();
            edges.push(frequency_row(
                format!("edge[{a},{b}]"),
                &trace,
                0.5,
                z_limit,
            ));
        }
    }

    let full: Vec<&ChainDraw> = draws
        .iter()
        .filter(|d| d.g2.n_edges() == m * (m - 1) / 2)
        .collect();
    let mut precision_full_graph = Vec::new();
    if full.len() >= 100 {
        // Kernel |K|^{(d-2)/2} exp(-tr(KD)/2) is a Wishart with d + m - 1
        // degrees of freedom and scale D^{-1}.
        let df = hp.d + m as f64 - 1.0;
        let sigma = hp
            .big_d
            .clone()
            .try_inverse()
            .expect("validated positive definite");
        for j in 0..m {
            for i in j..m {
                let trace: Vec<f64> = full.iter().map(|d| d.k[(i, j)]).collect();
                precision_full_graph.push(frequency_row(
                    format!("E K[{i},{j}]"),
                    &trace,
                    df * sigma[(i, j)],
                    z_limit,
                ));
                let second: Vec<f64> = trace.iter().map(|v| v * v).collect();
                let expected = df * (sigma[(i, j)].powi(2) + sigma[(i, i)] * sigma[(j, j)])
                    + (df * sigma[(i, j)]).powi(2);
                precision_full_graph.push(frequency_row(
                    format!("E K[{i},{j}]^2"),
                    &second,
                    expected,
                    z_limit,
                ));
            }
        }
    }
    let n_flagged = ks.iter().filter(|r| r.flagged).count()
        + [&indicators, &edges, &precision_full_graph]
            .iter()
            .flat_map(|v| v.iter())
            .filter(|r| r.flagged)
            .count();
    PriorCheckReport {
        config_hash: String::new(),
        n_draws: draws.len(),
        ks,
        indicators,
        edges,
        precision_full_graph,
        n_flagged,
        pass: n_flagged == 0,
    }
}

/// Runs the sampler with the likelihood switched off and checks the draws
/// against the prior. The placeholder series only shapes the starting point.
pub fn cmd_prior_check(cfg: &Config, out: &Path) -> CliResult<PriorCheckReport> {
    cfg.validate()?;
    let m = cfg.prior_check.m;
    if m < 2 {
        return Err(CliError::Config("prior_check.m must be at least 2".into()));
    }
    let spec = cfg.model.spec(m)?;
    let mut run = cfg.run.clone();
    run.prior_only = true;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let n = 50 + 5 * spec.p;
    let y = TimeSeries::new(DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal)))
        .map_err(CliError::data)?;
    let outputs = fit(&y, &spec, &run)?;
    let draws = pooled_draws(&outputs);
    let mut report = analyze_prior_draws(
        &draws,
        &spec.hyper,
        cfg.prior_check.alpha,
        cfg.prior_check.z_limit,
    );
    report.config_hash = cfg.hash();
    std::fs::create_dir_all(out)?;
    write_json(&out.join("prior_check.json"), &report)?;
    Ok(report)
}
