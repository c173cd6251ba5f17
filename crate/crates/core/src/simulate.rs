//! Ground-truth parameters and synthetic series for simulation studies.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwishart::{sample_gwishart, GWishartParams};
use crate::stationary::{inverse_map, spectral_radius_of};
use crate::types::{HyperParams, StableVarParams, TimeSeries, UndirectedGraph};

/// Block-Gibbs sweeps used for ground-truth precision draws.
pub const TRUTH_SWEEPS: usize = 100;
/// Default number of discarded initial steps.
pub const DEFAULT_BURN: usize = 500;

/// Generating structure of a simulated parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub gamma: Vec<DMatrix<bool>>,
    pub z_tilde: Vec<DMatrix<f64>>,
    pub u: f64,
    pub g2: UndirectedGraph,
}

/// Draws `u ~ U(0, 1)`, indicators and edges `~ Bern(1 - r)`, effect sizes
/// `~ N(0, 1)`, maps to `Phi` through the inverse map and draws `K | G2`
/// from the G-Wishart with the given `d` and `D`.
pub fn simulate_params<R: Rng + ?Sized>(
    m: usize,
    p: usize,
    r: f64,
    hp: &HyperParams,
    rng: &mut R,
) -> Result<(StableVarParams, Truth)> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidParameter(format!(
            "sparsity proportion must lie in [0, 1], got {r}"
        )));
    }
    if m == 0 || p == 0 {
        return Err(Error::InvalidParameter("m and p must be positive".into()));
    }
    hp.validate(m)?;
    for _ in 0..100 {
        let u: f64 = rng.random();
        if u == 0.0 {
            continue;
        }
        let gamma: Vec<DMatrix<bool>> = (0..p)
            .map(|_| DMatrix::from_fn(m, m, |i, j| i == j || rng.random::<f64>() < 1.0 - r))
            .collect();
        let z_tilde: Vec<DMatrix<f64>> = (0..p)
            .map(|_| DMatrix::from_fn(m, m, |_, _| rng.sample(StandardNormal)))
            .collect();
        let z: Vec<DMatrix<f64>> = z_tilde
            .iter()
            .zip(&gamma)
            .map(|(zt, g)| zt.zip_map(g, |v, on| if on { v } else { 0.0 }))
            .collect();
        let phi = match inverse_map(&z, u) {
            Ok((phi, _)) => phi,
            Err(Error::NilpotentCompanion(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut g2 = UndirectedGraph::empty(m);
        for j in 1..m {
            for i in 0..j {
                if rng.random::<f64>() < 1.0 - r {
                    g2.set_edge(i, j, true);
                }
            }
        }
        let k = sample_gwishart(
            &GWishartParams::new(hp.d, hp.big_d.clone(), g2.clone())?,
            TRUTH_SWEEPS,
            rng,
        )?;
        return Ok((
            StableVarParams { phi, k },
            Truth {
                gamma,
                z_tilde,
                u,
                g2,
            },
        ));
    }
    Err(Error::NilpotentCompanion(0.0))
}

/// Iterates the VAR from a zero state with `N(0, K^{-1})` innovations and
/// returns the `n` observations after the first `burn`.
pub fn simulate_series<R: Rng + ?Sized>(
    params: &StableVarParams,
    n: usize,
    burn: usize,
    rng: &mut R,
) -> Result<TimeSeries> {
    let p = params.phi.len();
    let m = params.k.nrows();
    if p == 0 || params.phi.iter().any(|ph| ph.shape() != (m, m)) {
        return Err(Error::Dimension(
            "coefficient matrices must match the precision".into(),
        ));
    }
    let rho = spectral_radius_of(&params.phi)?;
    if rho >= 1.0 {
        return Err(Error::NonStationary(rho));
    }
    // Innovation factor: eps = L^{-T} z with K = L L^T.
    let chol = params
        .k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?;
    let lt = chol.l().transpose();
    let total = n + burn;
    let mut hist: Vec<DVector<f64>> = vec![DVector::zeros(m); p];
    let mut out = DMatrix::zeros(n, m);
    for t in 0..total {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?;
        let mut y = eps;
        for (s, ph) in params.phi.iter().enumerate() {
            y += ph * &hist[s];
        }
        hist.rotate_right(1);
        hist[0] = y.clone();
        if t >= burn {
            out.set_row(t - burn, &y.transpose());
        }
    }
    TimeSeries::new(out)
}

/// One cell of an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub ps: Vec<usize>,
    pub rs: Vec<f64>,
    pub replicates: usize,
    pub burn: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    /// A single cell of the sparse regime.
    fn default() -> Self {
        Self {
            ns: vec![200],
            ms: vec![5],
            ps: vec![1],
            rs: vec![0.9],
            replicates: 1,
            burn: DEFAULT_BURN,
            seed: 1,
        }
    }
}

impl GridSpec {
    /// Every cell in the order n, m, p, r (last varies fastest).
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &n in &self.ns {
            for &m in &self.ms {
                for &p in &self.ps {
                    for &r in &self.rs {
                        out.push(GridCell { n, m, p, r });
                    }
                }
            }
        }
        out
    }

    pub fn n_datasets(&self) -> usize {
        self.cells().len() * self.replicates
    }
}

/// A simulated dataset with its generating parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub id: String,
    pub cell: GridCell,
    pub replicate: usize,
    pub params: StableVarParams,
    pub truth: Truth,
    pub series: TimeSeries,
}

/// Simulates one replicate of one cell from its own random stream.
pub fn simulate_dataset(
    spec: &GridSpec,
    cell_index: usize,
    replicate: usize,
) -> Result<SimulatedDataset> {
    let cells = spec.cells();
    let cell = *cells
        .get(cell_index)
        .ok_or_else(|| Error::InvalidParameter(format!("cell {cell_index} outside the grid")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((cell_index * spec.replicates + replicate) as u64);
    let hp = HyperParams::default_for(cell.m);
    let (params, truth) = simulate_params(cell.m, cell.p, cell.r, &hp, &mut rng)?;
    let series = simulate_series(&params, cell.n, spec.burn, &mut rng)?;
    let id = format!(
        "n{}_m{}_p{}_r{}_rep{:02}",
        cell.n,
        cell.m,
        cell.p,
        cell.r,
        replicate + 1
    );
    Ok(SimulatedDataset {
        id,
        cell,
        replicate,
        params,
        truth,
        series,
    })
}

/// All datasets of the grid, in cell-major order.
pub fn run_experiment_grid(spec: &GridSpec) -> Result<Vec<SimulatedDataset>> {
    let jobs: Vec<(usize, usize)> = (0..spec.cells().len())
        .flat_map(|c| (0..spec.replicates).map(move |r| (c, r)))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(c, r)| simulate_dataset(spec, c, r))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter()
            .map(|&(c, r)| simulate_dataset(spec, c, r))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gwishart::check_precision;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn fully_sparse_and_fully_dense() {
        let hp = HyperParams::default_for(4);
        let (params, truth) = simulate_params(4, 2, 1.0, &hp, &mut rng(1)).unwrap();
        for ph in &params.phi {
            for j in 0..4 {
                for i in 0..4 {
                    if i != j {
                        assert_eq!(ph[(i, j)], 0.0);
                    }
                }
            }
        }
        assert_eq!(truth.g2.n_edges(), 0);
        let (_, truth) = simulate_params(4, 2, 0.0, &hp, &mut rng(2)).unwrap();
        assert!(truth.gamma.iter().all(|g| g.iter().all(|&v| v)));
        assert_eq!(truth.g2.n_edges(), 6);
    }

    #[test]
    fn structural_postconditions() {
        let hp = HyperParams::default_for(3);
        let mut r = rng(3);
        for _ in 0..50 {
            let (params, truth) = simulate_params(3, 2, 0.5, &hp, &mut r).unwrap();
            let rho = spectral_radius_of(&params.phi).unwrap();
            assert!(rho < 1.0);
            assert!((rho - truth.u).abs() < 1e-9);
            check_precision(&params.k, &truth.g2).unwrap();
        }
    }

    #[test]
    fn white_noise_covariance() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let params = StableVarParams {
            phi: vec![DMatrix::zeros(2, 2)],
            k: k.clone(),
        };
        let n = 100_000;
        let y = simulate_series(&params, n, 0, &mut rng(4)).unwrap();
        let cov = y.data().transpose() * y.data() / n as f64;
        let sigma = k.try_inverse().unwrap();
        // Standard error of a covariance entry is at most sqrt(2) * max variance / sqrt(n).
        let tol = 4.0 * 2f64.sqrt() * sigma.max() / (n as f64).sqrt();
        assert!((cov - sigma).abs().max() < tol);
    }

    #[test]
    fn ar1_autocorrelation() {
        let phi = 0.6;
        let params = StableVarParams {
            phi: vec![DMatrix::from_element(1, 1, phi)],
            k: DMatrix::identity(1, 1),
        };
        let n = 100_000;
        let y = simulate_series(&params, n, 500, &mut rng(5)).unwrap();
        let x = y.data().column(0);
        let mean = x.mean();
        let num: f64 = (1..n).map(|t| (x[t] - mean) * (x[t - 1] - mean)).sum();
        let den: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        // Bartlett: var(r1) ~ (1 - phi^2) / n.
        let se = ((1.0 - phi * phi) / n as f64).sqrt();
        assert!((num / den - phi).abs() < 3.0 * se);
    }

    #[test]
    fn rejects_non_stationary() {
        let params = StableVarParams {
            phi: vec![DMatrix::from_element(1, 1, 1.01)],
            k: DMatrix::identity(1, 1),
        };
        assert!(matches!(
            simulate_series(&params, 10, 0, &mut rng(6)),
            Err(Error::NonStationary(_))
        ));
    }

    #[test]
    fn grid_counts_and_determinism() {
        let paper = GridSpec {
            ns: vec![200, 1000],
            ms: vec![5, 10, 20],
            ps: vec![1, 2, 4],
            rs: vec![0.1, 0.5, 0.9],
            replicates: 10,
            burn: 500,
            seed: 1,
        };
        assert_eq!(paper.n_datasets(), 540);
        let small = GridSpec {
            ns: vec![50],
            ms: vec![2],
            ps: vec![1],
            rs: vec![0.5],
            replicates: 1,
            burn: 50,
            seed: 9,
        };
        let a = run_experiment_grid(&small).unwrap();
        let b = run_experiment_grid(&small).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, b);
    }
}
