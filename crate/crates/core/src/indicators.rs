//! Systematic-scan Gibbs updates of the off-diagonal inclusion indicators.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{log_det_pd, stack, LagGram};
use crate::stationary::{companion, pattern_is_acyclic, spectral_radius, NILPOTENT_TOL};
use crate::types::{sigmoid, ExpandedParams, TimeSeries};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanStats {
    /// Indicators whose value changed.
    pub n_changed: usize,
    /// Flips refused because they made the companion nilpotent.
    pub n_nilpotent: usize,
}

/// Log-likelihood of the masked expanded coefficients; `None` when the
/// companion of `Z` is nilpotent.
fn masked_log_likelihood(
    gram: &LagGram,
    k: &DMatrix<f64>,
    log_det_k: f64,
    x: &ExpandedParams,
) -> Result<Option<f64>> {
    let z = x.z();
    let c = companion(&z)?;
    let rho = spectral_radius(&c)?.rho;
    if rho < NILPOTENT_TOL {
        return Ok(None);
    }
    let scale = x.u / rho;
    let mut b = stack(&z);
    let m = gram.m;
    for s in 0..gram.p {
        b.view_mut((0, s * m), (m, m))
            .scale_mut(scale.powi(s as i32 + 1));
    }
    Ok(Some(gram.log_likelihood(&b, k, log_det_k)))
}

fn is_nilpotent(x: &ExpandedParams) -> Result<bool> {
    Ok(pattern_is_acyclic(&companion(&x.z())?.materialize()))
}

/// One sweep over `gamma_{s,ij}`, `i != j`, in the order lag, column, row.
///
/// With `use_likelihood` false the likelihood is treated as constant, so the
/// update draws from the prior conditional while still refusing nilpotent
/// configurations.
pub fn gibbs_scan_indicators<R: Rng + ?Sized>(
    x: &mut ExpandedParams,
    gram: &LagGram,
    k: &DMatrix<f64>,
    use_likelihood: bool,
    rng: &mut R,
) -> Result<ScanStats> {
    let (m, p) = (x.m(), x.p());
    if gram.m != m || gram.p != p {
        return Err(Error::Dimension(
            "gram and parameter dimensions differ".into(),
        ));
    }
    let log_det_k = log_det_pd(k)?;
    let log_odds_prior = x.vartheta.ln() - (1.0 - x.vartheta).ln();
    let mut stats = ScanStats::default();

    let eval = |x: &ExpandedParams| -> Result<Option<f64>> {
        if use_likelihood {
            masked_log_likelihood(gram, k, log_det_k, x)
        } else {
            Ok((!is_nilpotent(x)?).then_some(0.0))
        }
    };
    let mut current = eval(x)?;

    for s in 0..p {
        for j in 0..m {
            for i in 0..m {
                if i == j {
                    continue;
                }
                let old = x.gamma[s][(i, j)];
                let (ll1, ll0) = if x.z_tilde[s][(i, j)] == 0.0 {
                    // Masking a zero effect leaves Z unchanged.
                    (current, current)
                } else {
                    x.gamma[s][(i, j)] = !old;
                    let flipped = eval(x)?;
                    x.gamma[s][(i, j)] = old;
                    if old {
                        (current, flipped)
                    } else {
                        (flipped, current)
                    }
                };
                let new = match (ll1, ll0) {
                    (Some(l1), Some(l0)) => rng.random::<f64>() < sigmoid(log_odds_prior + l1 - l0),
                    (Some(_), None) => {
                        stats.n_nilpotent += 1;
                        true
                    }
                    (None, Some(_)) => {
                        stats.n_nilpotent += 1;
                        false
                    }
                    (None, None) => return Err(Error::NilpotentCompanion(0.0)),
                };
                if new != old {
                    x.gamma[s][(i, j)] = new;
                    current = if new { ll1 } else { ll0 };
                    stats.n_changed += 1;
                }
            }
        }
    }
    Ok(stats)
}

/// Convenience form building the lag Gram matrices from the series.
pub fn gibbs_scan_indicators_series<R: Rng + ?Sized>(
    x: &ExpandedParams,
    y: &TimeSeries,
    k: &DMatrix<f64>,
    rng: &mut R,
) -> Result<(ExpandedParams, ScanStats)> {
    let gram = LagGram::new(y, x.p())?;
    let mut out = x.clone();
    let stats = gibbs_scan_indicators(&mut out, &gram, k, true, rng)?;
    Ok((out, stats))
}
