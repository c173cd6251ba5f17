//! Log densities of the hierarchical spike-and-slab prior and the graph prior.

use nalgebra::DMatrix;
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::Result;
use crate::types::{ExpandedParams, ModelSpec, MuMode, UndirectedGraph};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Coordinates in which a density is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinates {
    /// `(u, vartheta, tau, omega)` on their natural supports.
    Natural,
    /// `(logit u, logit vartheta, log tau, log omega)`, with the
    /// change-of-variable terms included.
    Transformed,
}

pub fn log_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)
}

/// Gamma with shape `a` and rate `b`.
pub fn log_gamma_pdf(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) + (a - 1.0) * x.ln() - b * x
}

pub fn log_normal_pdf(x: f64, mean: f64, precision: f64) -> f64 {
    0.5 * (precision.ln() - LN_2PI) - 0.5 * precision * (x - mean).powi(2)
}

/// Continuous part of the prior: `u`, `tau`, `vartheta`, `omega`, optional
/// `mu`, and every effect size. The indicator prior is excluded.
pub fn log_prior_continuous(
    x: &ExpandedParams,
    spec: &ModelSpec,
    coords: Coordinates,
) -> Result<f64> {
    x.validate(spec)?;
    let h = &spec.hyper;
    let mut lp = log_beta_pdf(x.u, h.a1, h.a2)
        + log_gamma_pdf(x.tau, h.b1, h.b2)
        + log_beta_pdf(x.vartheta, h.c1, h.c2)
        + log_gamma_pdf(x.omega, h.e1, h.e2);
    if let (MuMode::Random { f1, f2 }, Some(mu)) = (h.mu_mode, x.mu) {
        lp += log_normal_pdf(mu, f1, 1.0 / (f2 * f2));
    }
    let mean = x.diag_mean(h);
    for zt in &x.z_tilde {
        for j in 0..spec.m {
            for i in 0..spec.m {
                lp += if i == j {
                    log_normal_pdf(zt[(i, j)], mean, x.omega)
                } else {
                    log_normal_pdf(zt[(i, j)], 0.0, x.tau)
                };
            }
        }
    }
    if coords == Coordinates::Transformed {
        lp += x.u.ln()
            + (1.0 - x.u).ln()
            + x.vartheta.ln()
            + (1.0 - x.vartheta).ln()
            + x.tau.ln()
            + x.omega.ln();
    }
    Ok(lp)
}

/// `sum_{s, i != j} [gamma log vartheta + (1 - gamma) log(1 - vartheta)]`.
pub fn log_prior_indicators(gamma: &[DMatrix<bool>], vartheta: f64) -> f64 {
    let (on, total) = count_off_diagonal(gamma);
    let off = total - on;
    let term = |count: usize, logp: f64| if count == 0 { 0.0 } else { count as f64 * logp };
    term(on, vartheta.ln()) + term(off, (1.0 - vartheta).ln())
}

/// `(active, total)` off-diagonal indicator counts.
pub fn count_off_diagonal(gamma: &[DMatrix<bool>]) -> (usize, usize) {
    let mut on = 0;
    let mut total = 0;
    for g in gamma {
        let m = g.nrows();
        for j in 0..m {
            for i in 0..m {
                if i != j {
                    total += 1;
                    on += usize::from(g[(i, j)]);
                }
            }
        }
    }
    (on, total)
}

/// Uniform prior over undirected graphs.
pub fn log_graph_prior(_g2: &UndirectedGraph) -> f64 {
    0.0
}
