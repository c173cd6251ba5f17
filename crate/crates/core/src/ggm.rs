//! Joint update of the precision matrix and its conditional independence graph.
//!
//! Each edge move toggles one vertex pair. Both graphs share every coordinate
//! of `K` except one: writing the pair's Schur complement as `A = U^T U` with
//! `U = [[u11, x], [0, u22]]`, the edge-free graph pins `x` to the value that
//! makes `K_ij = 0`, while with the edge `x` is free and Gaussian given the
//! rest. Adding an edge draws `x` from that Gaussian conditional, so the
//! acceptance ratio depends only on the remaining coordinates and on the
//! ratio of prior normalising constants, which is replaced by an unbiased
//! single-draw estimate from an auxiliary prior sample on the proposed graph.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gwishart::{
    apply_pair_update, gwishart_sweep, pair_schur, sample_gwishart, GWishartParams,
    DEFAULT_AUX_SWEEPS,
};
use crate::types::UndirectedGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GgmConfig {
    /// Edge toggles proposed per call.
    pub n_edge_proposals: usize,
    /// Block-Gibbs sweeps for each auxiliary prior draw.
    pub aux_sweeps: usize,
}

impl Default for GgmConfig {
    fn default() -> Self {
        Self {
            n_edge_proposals: 1,
            aux_sweeps: DEFAULT_AUX_SWEEPS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GgmStats {
    pub proposed: usize,
    pub accepted: usize,
    /// Moves or refreshes abandoned after a failed block conditional.
    pub numerical_failures: usize,
}

impl std::ops::AddAssign for GgmStats {
    fn add_assign(&mut self, o: Self) {
        self.proposed += o.proposed;
        self.accepted += o.accepted;
        self.numerical_failures += o.numerical_failures;
    }
}

fn inverse_pd(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    k.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::GWishartConditioning("precision lost positive definiteness".into()))
}

/// Coordinates of the pair `(i, j)` that the edge move works in.
struct PairCoords {
    /// `K_ee - A`, fixed by the rest of the matrix.
    c: Matrix2<f64>,
    a: Matrix2<f64>,
    u11: f64,
    /// Value of `x` that zeroes `K_ij`.
    x_removed: f64,
}

fn pair_coords(k: &DMatrix<f64>, sigma: &DMatrix<f64>, i: usize, j: usize) -> Result<PairCoords> {
    let a = pair_schur(sigma, i, j)?;
    let c = Matrix2::new(k[(i, i)], k[(i, j)], k[(j, i)], k[(j, j)]) - a;
    let u11 = a[(0, 0)].sqrt();
    Ok(PairCoords {
        c,
        a,
        u11,
        x_removed: -c[(0, 1)] / u11,
    })
}

/// Log acceptance ratio for adding edge `(i, j)`, given the current
/// coordinates, posterior scale `d_post`, prior scale `d_prior` and the
/// auxiliary draw's coordinates.
fn log_ratio_add(
    cur: &PairCoords,
    aux: &PairCoords,
    d_post: &DMatrix<f64>,
    d_prior: &DMatrix<f64>,
    i: usize,
    j: usize,
) -> f64 {
    let m_post = -cur.u11 * d_post[(i, j)] / d_post[(j, j)];
    let m_prior = -aux.u11 * d_prior[(i, j)] / d_prior[(j, j)];
    (cur.u11 / aux.u11).ln()
        + 0.5 * (d_prior[(j, j)] / d_post[(j, j)]).ln()
        + 0.5 * d_post[(j, j)] * (cur.x_removed - m_post).powi(2)
        - 0.5 * d_prior[(j, j)] * (aux.x_removed - m_prior).powi(2)
}

#[allow(clippy::too_many_arguments)]
fn edge_move<R: Rng + ?Sized>(
    k: &mut DMatrix<f64>,
    g2: &mut UndirectedGraph,
    i: usize,
    j: usize,
    d: f64,
    d_prior: &DMatrix<f64>,
    d_post: &DMatrix<f64>,
    aux_sweeps: usize,
    rng: &mut R,
) -> Result<bool> {
    let adding = !g2.has_edge(i, j);
    let mut proposed = g2.clone();
    proposed.toggle(i, j);

    let mut sigma = inverse_pd(k)?;
    let cur = pair_coords(k, &sigma, i, j)?;
    let aux_k = sample_gwishart(
        &GWishartParams::new(d, d_prior.clone(), proposed.clone())?,
        aux_sweeps,
        rng,
    )?;
    let aux = pair_coords(&aux_k, &inverse_pd(&aux_k)?, i, j)?;

    let log_add = log_ratio_add(&cur, &aux, d_post, d_prior, i, j);
    let log_r = if adding { log_add } else { -log_add };
    if !log_r.is_finite() {
        return Err(Error::GWishartConditioning(format!(
            "non-finite acceptance ratio for edge ({i}, {j})"
        )));
    }
    if rng.random::<f64>().ln() >= log_r {
        return Ok(false);
    }

    let x_cur = cur.a[(0, 1)] / cur.u11;
    let u22_sq = cur.a[(1, 1)] - x_cur * x_cur;
    let x_new = if adding {
        let mean = -cur.u11 * d_post[(i, j)] / d_post[(j, j)];
        mean + rng.sample::<f64, _>(StandardNormal) / d_post[(j, j)].sqrt()
    } else {
        cur.x_removed
    };
    let a12 = cur.u11 * x_new;
    let a_new = Matrix2::new(cur.a[(0, 0)], a12, a12, x_new * x_new + u22_sq);
    let mut block = a_new + cur.c;
    if !adding {
        block[(0, 1)] = 0.0;
        block[(1, 0)] = 0.0;
    }
    let mut k_new = k.clone();
    apply_pair_update(&mut k_new, &mut sigma, i, j, &block)?;
    if k_new.clone().cholesky().is_none() {
        return Err(Error::GWishartConditioning(format!(
            "edge ({i}, {j}) update lost positive definiteness"
        )));
    }
    *k = k_new;
    *g2 = proposed;
    Ok(true)
}

fn pair_from_index(r: usize) -> (usize, usize) {
    // Pairs enumerated column-wise: (0,1), (0,2), (1,2), (0,3), ...
    let mut j = 1;
    let mut start = 0;
    while start + j <= r {
        start += j;
        j += 1;
    }
    (r - start, j)
}

/// Edge moves followed by one block-Gibbs refresh of `K` targeting
/// `W_{G}(d + n, D + S)` on the resulting graph.
///
/// `s` is the residual scatter matrix and `n` the number of residuals; pass a
/// zero matrix and `0` to sample from the prior.
#[allow(clippy::too_many_arguments)]
pub fn ggm_step<R: Rng + ?Sized>(
    k: &mut DMatrix<f64>,
    g2: &mut UndirectedGraph,
    s: &DMatrix<f64>,
    n: usize,
    d: f64,
    big_d: &DMatrix<f64>,
    cfg: &GgmConfig,
    rng: &mut R,
) -> Result<GgmStats> {
    let m = g2.m();
    if k.shape() != (m, m) || s.shape() != (m, m) || big_d.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "ggm_step expects {m}x{m} matrices"
        )));
    }
    let d_post = big_d + s;
    let delta_post = d + n as f64;
    let mut stats = GgmStats::default();
    let n_pairs = m * (m - 1) / 2;
    if n_pairs > 0 {
        for _ in 0..cfg.n_edge_proposals {
            let (i, j) = pair_from_index(rng.random_range(0..n_pairs));
            stats.proposed += 1;
            match edge_move(k, g2, i, j, d, big_d, &d_post, cfg.aux_sweeps, rng) {
                Ok(true) => stats.accepted += 1,
                Ok(false) => {}
                Err(e) if e.is_numerical() => stats.numerical_failures += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let mut refreshed = k.clone();
    match gwishart_sweep(&mut refreshed, g2, delta_post, &d_post, rng) {
        Ok(()) if refreshed.clone().cholesky().is_some() => *k = refreshed,
        Ok(()) => stats.numerical_failures += 1,
        Err(e) if e.is_numerical() => stats.numerical_failures += 1,
        Err(e) => return Err(e),
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gwishart::{check_precision, initial_precision};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_enumeration_covers_upper_triangle() {
        let pairs: Vec<_> = (0..6).map(pair_from_index).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]);
    }

    #[test]
    fn output_respects_pattern_and_pd() {
        let m = 4;
        let mut g2 = UndirectedGraph::full(m);
        let mut k = initial_precision(&g2, &DMatrix::identity(m, m));
        let s = DMatrix::from_fn(m, m, |i, j| if i == j { 20.0 } else { 3.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GgmConfig {
            n_edge_proposals: 3,
            aux_sweeps: 10,
        };
        for _ in 0..300 {
            ggm_step(
                &mut k,
                &mut g2,
                &s,
                25,
                3.0,
                &DMatrix::identity(m, m),
                &cfg,
                &mut rng,
            )
            .unwrap();
            check_precision(&k, &g2).unwrap();
        }
    }

    #[test]
    fn removal_zeroes_entry_exactly() {
        let m = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = GgmConfig {
            n_edge_proposals: 1,
            aux_sweeps: 5,
        };
        let mut g2 = UndirectedGraph::full(m);
        let mut k = initial_precision(&g2, &DMatrix::identity(m, m));
        let zero = DMatrix::zeros(m, m);
        let mut removed = 0;
        for _ in 0..500 {
            let before = g2.n_edges();
            ggm_step(
                &mut k,
                &mut g2,
                &zero,
                0,
                3.0,
                &DMatrix::identity(m, m),
                &cfg,
                &mut rng,
            )
            .unwrap();
            removed += usize::from(g2.n_edges() < before);
            for (a, b) in UndirectedGraph::full(m).edges() {
                if !g2.has_edge(a, b) {
                    assert_eq!(k[(a, b)], 0.0);
                    assert_eq!(k[(b, a)], 0.0);
                }
            }
        }
        assert!(removed > 0);
    }

    #[test]
    fn m1_refreshes_only() {
        let mut g2 = UndirectedGraph::empty(1);
        let mut k = DMatrix::identity(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let st = ggm_step(
            &mut k,
            &mut g2,
            &DMatrix::from_element(1, 1, 4.0),
            10,
            3.0,
            &DMatrix::identity(1, 1),
            &GgmConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(st.proposed, 0);
        assert!(k[(0, 0)] > 0.0);
    }

    #[test]
    fn empty_truth_gives_low_edge_probabilities() {
        // Independent components, n = 1000.
        let m = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1000;
        let y = DMatrix::from_fn(n, m, |_, c| {
            rng.sample::<f64, _>(StandardNormal) * (1.0 + c as f64 * 0.3)
        });
        let s = y.transpose() * &y;
        let mut g2 = UndirectedGraph::full(m);
        let mut k = initial_precision(&g2, &DMatrix::identity(m, m));
        let cfg = GgmConfig {
            n_edge_proposals: 1,
            aux_sweeps: 20,
        };
        let iters = 4000;
        let mut counts = DMatrix::<f64>::zeros(m, m);
        for t in 0..iters {
            ggm_step(
                &mut k,
                &mut g2,
                &s,
                n,
                3.0,
                &DMatrix::identity(m, m),
                &cfg,
                &mut rng,
            )
            .unwrap();
            if t >= 500 {
                for (a, b) in g2.edges() {
                    counts[(a, b)] += 1.0;
                }
            }
        }
        for (a, b) in UndirectedGraph::full(m).edges() {
            assert!(counts[(a, b)] / ((iters - 500) as f64) < 0.5);
        }
    }
}
