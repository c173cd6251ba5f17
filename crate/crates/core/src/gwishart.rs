//! G-Wishart kernel and an edgewise block Gibbs sampler.
//!
//! The kernel is `|K|^{(d-2)/2} exp(-tr(K D) / 2)` on positive-definite `K`
//! with `K_ab = 0` for every non-edge. Updates work on the Schur complement
//! `A = K_ee - K_{e,r} K_r^{-1} K_{r,e}` of a vertex pair `e`, which equals
//! `(Sigma_ee)^{-1}` for `Sigma = K^{-1}` and whose full conditional is a
//! 2x2 Wishart independent of the rest of the matrix.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{is_positive_definite, UndirectedGraph};

/// Block-Gibbs sweeps used for auxiliary prior draws.
pub const DEFAULT_AUX_SWEEPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GWishartParams {
    pub d: f64,
    pub big_d: DMatrix<f64>,
    pub g2: UndirectedGraph,
}

impl GWishartParams {
    pub fn new(d: f64, big_d: DMatrix<f64>, g2: UndirectedGraph) -> Result<Self> {
        if !(d > 2.0) {
            return Err(Error::InvalidParameter(format!(
                "G-Wishart shape must exceed 2, got {d}"
            )));
        }
        if big_d.shape() != (g2.m(), g2.m()) || !is_positive_definite(&big_d) {
            return Err(Error::NotPositiveDefinite(
                "inverse scale must be positive definite and match the graph".into(),
            ));
        }
        Ok(Self { d, big_d, g2 })
    }
}

/// Checks `K` is positive definite with zeros at every non-edge.
pub fn check_precision(k: &DMatrix<f64>, g2: &UndirectedGraph) -> Result<()> {
    let m = g2.m();
    if k.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "precision is {:?}, graph has {m} vertices",
            k.shape()
        )));
    }
    for b in 0..m {
        for a in 0..b {
            if !g2.has_edge(a, b) && (k[(a, b)] != 0.0 || k[(b, a)] != 0.0) {
                return Err(Error::ZeroPatternMismatch(a, b));
            }
        }
    }
    if !is_positive_definite(k) {
        return Err(Error::NotPositiveDefinite("precision matrix".into()));
    }
    Ok(())
}

/// `((d - 2)/2) log det K - tr(K D)/2`; the normalising constant is omitted.
pub fn log_gwishart_unnormalised(k: &DMatrix<f64>, params: &GWishartParams) -> Result<f64> {
    check_precision(k, &params.g2)?;
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?;
    let log_det = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let trace = (k * &params.big_d).trace();
    Ok(0.5 * (params.d - 2.0) * log_det - 0.5 * trace)
}

/// `D^{-1}` restricted to the graph's zero pattern, diagonally loaded until positive definite.
pub fn initial_precision(g2: &UndirectedGraph, big_d: &DMatrix<f64>) -> DMatrix<f64> {
    let m = g2.m();
    let inv = big_d
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::identity(m, m));
    let mut k = DMatrix::from_fn(m, m, |i, j| {
        if i == j || g2.has_edge(i, j) {
            inv[(i, j)]
        } else {
            0.0
        }
    });
    let mut load = 1e-6;
    while !is_positive_definite(&k) {
        for i in 0..m {
            k[(i, i)] += load;
        }
        load *= 10.0;
    }
    k
}

fn inverse_pd(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    k.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::GWishartConditioning("precision lost positive definiteness".into()))
}

/// Schur complement of the pair `(i, j)`: `(Sigma_ee)^{-1}`.
pub fn pair_schur(sigma: &DMatrix<f64>, i: usize, j: usize) -> Result<Matrix2<f64>> {
    let s = Matrix2::new(sigma[(i, i)], sigma[(i, j)], sigma[(j, i)], sigma[(j, j)]);
    s.try_inverse()
        .filter(|a| a[(0, 0)] > 0.0 && a.determinant() > 0.0)
        .ok_or_else(|| {
            Error::GWishartConditioning(format!("singular Schur complement at ({i}, {j})"))
        })
}

/// Draws `A ~ W_2` with density proportional to `|A|^{(delta-2)/2} exp(-tr(A D_ee)/2)`,
/// i.e. a standard Wishart with `delta + 1` degrees of freedom and scale `D_ee^{-1}`.
pub fn sample_pair_block<R: Rng + ?Sized>(
    delta: f64,
    d_ee: &Matrix2<f64>,
    rng: &mut R,
) -> Result<Matrix2<f64>> {
    let scale = d_ee
        .try_inverse()
        .and_then(|s| s.cholesky())
        .ok_or_else(|| {
            Error::GWishartConditioning("inverse scale block not positive definite".into())
        })?;
    let l = scale.l();
    let df = delta + 1.0;
    let c1: f64 = ChiSquared::new(df)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sample(rng);
    let c2: f64 = ChiSquared::new(df - 1.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sample(rng);
    let n21: f64 = StandardNormal.sample(rng);
    let b = Matrix2::new(c1.sqrt(), 0.0, n21, c2.sqrt());
    let lb = l * b;
    Ok(lb * lb.transpose())
}

/// Draws the Schur complement of a single vertex: `Gamma(delta/2, rate D_ii/2)`.
pub fn sample_vertex_block<R: Rng + ?Sized>(delta: f64, d_ii: f64, rng: &mut R) -> Result<f64> {
    let g =
        Gamma::new(0.5 * delta, 2.0 / d_ii).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Replaces the `(i, j)` block of `K` by `new_block` and updates `Sigma = K^{-1}`
/// with the rank-two Woodbury identity.
pub fn apply_pair_update(
    k: &mut DMatrix<f64>,
    sigma: &mut DMatrix<f64>,
    i: usize,
    j: usize,
    new_block: &Matrix2<f64>,
) -> Result<()> {
    let old = Matrix2::new(k[(i, i)], k[(i, j)], k[(j, i)], k[(j, j)]);
    let delta = new_block - old;
    let s_ee = Matrix2::new(sigma[(i, i)], sigma[(i, j)], sigma[(j, i)], sigma[(j, j)]);
    let inner = (Matrix2::identity() + s_ee * delta)
        .try_inverse()
        .ok_or_else(|| Error::GWishartConditioning("Woodbury update singular".into()))?;
    let core = delta * inner;
    let m = k.nrows();
    let mut cols = DMatrix::zeros(m, 2);
    cols.set_column(0, &sigma.column(i));
    cols.set_column(1, &sigma.column(j));
    let core_d = DMatrix::from_row_slice(
        2,
        2,
        &[core[(0, 0)], core[(0, 1)], core[(1, 0)], core[(1, 1)]],
    );
    let corr = &cols * core_d * cols.transpose();
    *sigma -= corr;
    k[(i, i)] = new_block[(0, 0)];
    k[(j, j)] = new_block[(1, 1)];
    let off = 0.5 * (new_block[(0, 1)] + new_block[(1, 0)]);
    k[(i, j)] = off;
    k[(j, i)] = off;
    Ok(())
}

fn apply_vertex_update(
    k: &mut DMatrix<f64>,
    sigma: &mut DMatrix<f64>,
    i: usize,
    new_value: f64,
) -> Result<()> {
    let delta = new_value - k[(i, i)];
    let denom = 1.0 + sigma[(i, i)] * delta;
    if !(denom > 0.0) {
        return Err(Error::GWishartConditioning(format!(
            "vertex update at {i} lost positive definiteness"
        )));
    }
    let col = sigma.column(i).into_owned();
    *sigma -= (&col * col.transpose()) * (delta / denom);
    k[(i, i)] = new_value;
    Ok(())
}

/// One systematic sweep of the edgewise block Gibbs sampler targeting
/// `W_G(delta, D)`: a 2x2 Wishart block update for every edge, and
/// sequential diagonal updates for both endpoints of every non-edge.
pub fn gwishart_sweep<R: Rng + ?Sized>(
    k: &mut DMatrix<f64>,
    g2: &UndirectedGraph,
    delta: f64,
    big_d: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let m = g2.m();
    let mut sigma = inverse_pd(k)?;
    if m == 1 {
        let a_cur = 1.0 / sigma[(0, 0)];
        let c = k[(0, 0)] - a_cur;
        let a_new = sample_vertex_block(delta, big_d[(0, 0)], rng)?;
        k[(0, 0)] = a_new + c;
        return Ok(());
    }
    for j in 1..m {
        for i in 0..j {
            if g2.has_edge(i, j) {
                let a_cur = pair_schur(&sigma, i, j)?;
                let c = Matrix2::new(k[(i, i)], k[(i, j)], k[(j, i)], k[(j, j)]) - a_cur;
                let d_ee = Matrix2::new(big_d[(i, i)], big_d[(i, j)], big_d[(j, i)], big_d[(j, j)]);
                let a_new = sample_pair_block(delta, &d_ee, rng)?;
                apply_pair_update(k, &mut sigma, i, j, &(a_new + c))?;
            } else {
                for v in [i, j] {
                    let a_cur = 1.0 / sigma[(v, v)];
                    let c = k[(v, v)] - a_cur;
                    let a_new = sample_vertex_block(delta, big_d[(v, v)], rng)?;
                    apply_vertex_update(k, &mut sigma, v, a_new + c)?;
                }
            }
        }
    }
    Ok(())
}

/// Approximate draw from `W_G(d, D)` after `n_sweeps` block Gibbs sweeps.
pub fn sample_gwishart<R: Rng + ?Sized>(
    params: &GWishartParams,
    n_sweeps: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut k = initial_precision(&params.g2, &params.big_d);
    for _ in 0..n_sweeps.max(1) {
        gwishart_sweep(&mut k, &params.g2, params.d, &params.big_d, rng)?;
    }
    check_precision(&k, &params.g2)?;
    Ok(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(g2: UndirectedGraph) -> GWishartParams {
        let m = g2.m();
        GWishartParams::new(3.0, DMatrix::identity(m, m), g2).unwrap()
    }

    #[test]
    fn kernel_identity() {
        let p = params(UndirectedGraph::full(4));
        assert_relative_eq!(
            log_gwishart_unnormalised(&DMatrix::identity(4, 4), &p).unwrap(),
            -2.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn kernel_scalar() {
        let p = params(UndirectedGraph::full(1));
        let k = 2.7;
        let got = log_gwishart_unnormalised(&DMatrix::from_element(1, 1, k), &p).unwrap();
        assert_relative_eq!(got, 0.5 * k.ln() - k / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn kernel_rejects_pattern_mismatch() {
        let p = params(UndirectedGraph::empty(2));
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 2.0]);
        assert!(matches!(
            log_gwishart_unnormalised(&k, &p),
            Err(Error::ZeroPatternMismatch(0, 1))
        ));
    }

    #[test]
    fn kernel_differences_match_wishart() {
        // Standard Wishart with n = d + m - 1 dof and scale D^{-1} has log kernel
        // ((n - m - 1)/2) log|K| - tr(D K)/2.
        let m = 3;
        let d = 3.0;
        let big_d = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let p = GWishartParams::new(d, big_d.clone(), UndirectedGraph::full(m)).unwrap();
        let k1 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.4, 0.0, 0.4, 1.5]);
        let k2 = DMatrix::from_row_slice(3, 3, &[3.0, -0.5, 0.3, -0.5, 1.0, 0.1, 0.3, 0.1, 0.8]);
        let n = d + m as f64 - 1.0;
        let wish = |k: &DMatrix<f64>| {
            0.5 * (n - m as f64 - 1.0) * k.determinant().ln() - 0.5 * (&big_d * k).trace()
        };
        let diff = log_gwishart_unnormalised(&k1, &p).unwrap()
            - log_gwishart_unnormalised(&k2, &p).unwrap();
        assert_relative_eq!(diff, wish(&k1) - wish(&k2), epsilon = 1e-12);
    }

    #[test]
    fn sampler_respects_pattern_and_definiteness() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = UndirectedGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]).unwrap();
        let p = params(g.clone());
        for _ in 0..50 {
            let k = sample_gwishart(&p, 3, &mut rng).unwrap();
            check_precision(&k, &g).unwrap();
            assert!(k.clone().symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn woodbury_tracks_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = UndirectedGraph::full(4);
        let mut k = initial_precision(&g, &DMatrix::identity(4, 4));
        for _ in 0..5 {
            gwishart_sweep(&mut k, &g, 7.0, &DMatrix::identity(4, 4), &mut rng).unwrap();
        }
        let mut sigma = k.clone().try_inverse().unwrap();
        let new = Matrix2::new(
            k[(1, 1)] + 0.3,
            k[(1, 3)] - 0.1,
            k[(1, 3)] - 0.1,
            k[(3, 3)] + 0.2,
        );
        apply_pair_update(&mut k, &mut sigma, 1, 3, &new).unwrap();
        let direct = k.clone().try_inverse().unwrap();
        assert!((sigma - direct).abs().max() < 1e-10);
    }

    #[test]
    fn empty_graph_diagonals_are_gamma() {
        // Kernel k^{(d-2)/2} exp(-k D_ii / 2): Gamma(d/2, rate D_ii/2), mean d / D_ii.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let big_d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let p = GWishartParams::new(3.0, big_d.clone(), UndirectedGraph::empty(3)).unwrap();
        let n = 20_000;
        let mut sums = [0.0; 3];
        let mut k = initial_precision(&p.g2, &p.big_d);
        for _ in 0..n {
            gwishart_sweep(&mut k, &p.g2, p.d, &p.big_d, &mut rng).unwrap();
            for i in 0..3 {
                sums[i] += k[(i, i)];
            }
        }
        for i in 0..3 {
            let mean = 3.0 / big_d[(i, i)];
            let sd = (1.5f64).sqrt() * 2.0 / big_d[(i, i)];
            // Each sweep touches every diagonal twice, so draws are independent.
            let se = sd / (n as f64).sqrt();
            assert!((sums[i] / n as f64 - mean).abs() < 3.0 * se, "vertex {i}");
        }
    }

    #[test]
    fn full_graph_moments_match_wishart_mean() {
        // Mean (d + m - 1) D^{-1}; with m = 2 each sweep is one exact block draw.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let big_d = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 2.0]);
        let p = GWishartParams::new(3.0, big_d.clone(), UndirectedGraph::full(2)).unwrap();
        let n = 10_000;
        let mut sum = DMatrix::zeros(2, 2);
        let mut k = initial_precision(&p.g2, &p.big_d);
        let mut k11 = Vec::with_capacity(n);
        for _ in 0..n {
            gwishart_sweep(&mut k, &p.g2, p.d, &p.big_d, &mut rng).unwrap();
            sum += &k;
            k11.push(k[(0, 0)]);
        }
        let mean = sum / n as f64;
        let sigma = big_d.try_inverse().unwrap();
        let expected = &sigma * 4.0;
        // Var(K_ij) = dof (sigma_ij^2 + sigma_ii sigma_jj).
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let var = 4.0 * (sigma[(i, j)].powi(2) + sigma[(i, i)] * sigma[(j, j)]);
            let se = (var / n as f64).sqrt();
            assert!(
                (mean[(i, j)] - expected[(i, j)]).abs() < 3.0 * se,
                "entry ({i},{j})"
            );
        }
    }
}
