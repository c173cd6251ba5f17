//! Browser bindings for a small interactive demo.
//!
//! Every operation takes and returns JSON. The `*_json` functions are plain
//! Rust and testable natively; the `#[wasm_bindgen]` wrappers only convert
//! errors. Matrices travel as row-major `Vec<Vec<f64>>` (one row per inner
//! vector) and lag blocks as a list of such matrices.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use stable_gvar::driver::{fit, pooled_draws, RunConfig};
use stable_gvar::evaluate::{
    edge_probabilities, indicator_probabilities, mixture_quantile, predictive_ensemble,
};
use stable_gvar::simulate::{simulate_params, simulate_series};
use stable_gvar::stationary::{companion, eigenvalues, inverse_map, spectral_radius_of};
use stable_gvar::{HyperParams, ModelSpec, TimeSeries};
use wasm_bindgen::prelude::*;

type Matrix = Vec<Vec<f64>>;

fn to_rows(a: &DMatrix<f64>) -> Matrix {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &Matrix, m: usize) -> Result<DMatrix<f64>, String> {
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        return Err(format!("expected a {m}x{m} matrix"));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

fn run<Req: for<'a> Deserialize<'a>, Resp: Serialize>(
    input: &str,
    f: impl FnOnce(Req) -> Result<Resp, String>,
) -> Result<String, String> {
    let req = serde_json::from_str(input).map_err(|e| format!("invalid request: {e}"))?;
    serde_json::to_string(&f(req)?).map_err(|e| e.to_string())
}

#[derive(Debug, Deserialize)]
pub struct MapRequest {
    /// Unconstrained lag blocks.
    pub z: Vec<Matrix>,
    /// Target spectral radius in (0, 1).
    pub u: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MapResponse {
    pub phi: Vec<Matrix>,
    /// Companion eigenvalues of the mapped coefficients as `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    pub rho: f64,
    /// Spectral radius of the unconstrained blocks.
    pub rho_z: f64,
}

/// Maps unconstrained blocks into the stationary region.
pub fn stationary_map(req: MapRequest) -> Result<MapResponse, String> {
    let m = req.z.first().map_or(0, Vec::len);
    if m == 0 {
        return Err("at least one non-empty lag block is required".into());
    }
    let z = req
        .z
        .iter()
        .map(|b| from_rows(b, m))
        .collect::<Result<Vec<_>, _>>()?;
    let (phi, rho_z) = inverse_map(&z, req.u).map_err(|e| e.to_string())?;
    let c = companion(&phi).map_err(|e| e.to_string())?;
    let eig = eigenvalues(&c.materialize()).map_err(|e| e.to_string())?;
    Ok(MapResponse {
        rho: spectral_radius_of(&phi).map_err(|e| e.to_string())?,
        phi: phi.iter().map(to_rows).collect(),
        eigenvalues: eig.iter().map(|v| [v.re, v.im]).collect(),
        rho_z,
    })
}

#[derive(Debug, Deserialize)]
pub struct SimulateRequest {
    pub m: usize,
    pub p: usize,
    /// Probability that an off-diagonal coefficient or edge is absent.
    pub r: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulateResponse {
    /// One row per time point.
    pub series: Matrix,
    pub phi: Vec<Matrix>,
    pub k: Matrix,
    pub rho: f64,
    /// `[from, to, lag]` for every active off-diagonal coefficient.
    pub directed: Vec<[usize; 3]>,
    pub undirected: Vec<[usize; 2]>,
}

/// Draws a sparse stationary model and a series from it.
pub fn simulate(req: SimulateRequest) -> Result<SimulateResponse, String> {
    if req.n == 0 || req.n > 5000 {
        return Err("n must lie in 1..=5000".into());
    }
    let hp = HyperParams::default_for(req.m);
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let (params, truth) =
        simulate_params(req.m, req.p, req.r, &hp, &mut rng).map_err(|e| e.to_string())?;
    let y = simulate_series(&params, req.n, 500, &mut rng).map_err(|e| e.to_string())?;
    let mut directed = Vec::new();
    for (s, g) in truth.gamma.iter().enumerate() {
        for i in 0..req.m {
            for j in 0..req.m {
                if i != j && g[(i, j)] {
                    directed.push([j, i, s + 1]);
                }
            }
        }
    }
    Ok(SimulateResponse {
        series: to_rows(y.data()),
        rho: spectral_radius_of(&params.phi).map_err(|e| e.to_string())?,
        phi: params.phi.iter().map(to_rows).collect(),
        k: to_rows(&params.k),
        directed,
        undirected: truth.g2.edges().into_iter().map(|(a, b)| [a, b]).collect(),
    })
}

#[derive(Debug, Deserialize)]
pub struct FitRequest {
    pub series: Matrix,
    pub p: usize,
    pub warmup: usize,
    pub samples: usize,
    pub thin: usize,
    pub seed: u64,
    /// Largest forecast horizon.
    pub horizon: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Band {
    pub horizon: usize,
    pub variable: usize,
    pub mean: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitResponse {
    pub draws: usize,
    pub divergences: usize,
    pub mean_accept_stat: f64,
    pub step_size: f64,
    /// Per lag, entry `[i][j]` is the probability that variable `j` at that
    /// lag predicts variable `i`.
    pub directed: Vec<Matrix>,
    pub undirected: Matrix,
    pub bands: Vec<Band>,
}

/// Short single-chain fit followed by predictive bands past the series end.
pub fn fit_forecast(req: FitRequest) -> Result<FitResponse, String> {
    let n = req.series.len();
    let m = req.series.first().map_or(0, Vec::len);
    if m == 0 || req.series.iter().any(|r| r.len() != m) {
        return Err("series must be a non-empty rectangular table".into());
    }
    if req.horizon == 0 || req.horizon > 50 {
        return Err("horizon must lie in 1..=50".into());
    }
    let y = TimeSeries::new(DMatrix::from_fn(n, m, |t, k| req.series[t][k]))
        .map_err(|e| e.to_string())?;
    let spec = ModelSpec::with_defaults(m, req.p).map_err(|e| e.to_string())?;
    y.check_order(req.p).map_err(|e| e.to_string())?;
    let run = RunConfig {
        n_chains: 1,
        n_warmup: req.warmup,
        n_samples: req.samples,
        thin: req.thin,
        seed: req.seed,
        adapt_steps: 200,
        ..RunConfig::default()
    };
    run.validate().map_err(|e| e.to_string())?;
    let out = fit(&y, &spec, &run).map_err(|e| e.to_string())?;
    let diag = &out[0].diagnostics;
    let draws = pooled_draws(&out);
    if draws.is_empty() {
        return Err("no draws were retained".into());
    }
    let (_, und) = edge_probabilities(&draws).map_err(|e| e.to_string())?;
    let ind = indicator_probabilities(&draws).map_err(|e| e.to_string())?;
    let mut bands = Vec::new();
    for h in 1..=req.horizon {
        let ens = predictive_ensemble(&draws, &y, h).map_err(|e| e.to_string())?;
        let mean = ens.mixture_mean();
        for k in 0..m {
            let comps = ens.marginal(k);
            bands.push(Band {
                horizon: h,
                variable: k,
                mean: mean[k],
                q05: mixture_quantile(&comps, 0.05),
                q50: mixture_quantile(&comps, 0.5),
                q95: mixture_quantile(&comps, 0.95),
            });
        }
    }
    Ok(FitResponse {
        draws: draws.len(),
        divergences: diag.divergences,
        mean_accept_stat: diag.mean_accept_stat,
        step_size: diag.step_size,
        directed: ind.iter().map(to_rows).collect(),
        undirected: to_rows(&und),
        bands,
    })
}

pub fn stationary_map_json(input: &str) -> Result<String, String> {
    run(input, stationary_map)
}

pub fn simulate_json(input: &str) -> Result<String, String> {
    run(input, simulate)
}

pub fn fit_forecast_json(input: &str) -> Result<String, String> {
    run(input, fit_forecast)
}

#[wasm_bindgen(js_name = stationaryMap)]
pub fn stationary_map_js(input: &str) -> Result<String, JsError> {
    stationary_map_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(input: &str) -> Result<String, JsError> {
    simulate_json(input).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fitForecast)]
pub fn fit_forecast_js(input: &str) -> Result<String, JsError> {
    fit_forecast_json(input).map_err(|e| JsError::new(&e))
}
