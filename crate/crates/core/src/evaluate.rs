//! Posterior summaries, graph recovery metrics, forecast scores and MCMC diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::likelihood::predictive_moments;
use crate::types::{derive_mixed_graph, ChainDraw, TimeSeries, DEFAULT_ZERO_TOL};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

// ---------------------------------------------------------------------------
// Graph summaries

/// Posterior probabilities of directed edges (`[b, a]` is `a -> b`) and undirected edges.
pub fn edge_probabilities(draws: &[ChainDraw]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = draws
        .first()
        .ok_or_else(|| Error::InvalidParameter("no draws".into()))?;
    let m = first.k.nrows();
    let mut directed = DMatrix::zeros(m, m);
    let mut undirected = DMatrix::zeros(m, m);
    for d in draws {
        let g = derive_mixed_graph(d, DEFAULT_ZERO_TOL);
        for b in 0..m {
            for a in 0..m {
                if g.directed[(b, a)] {
                    directed[(b, a)] += 1.0;
                }
                if a != b && g.undirected.has_edge(a, b) {
                    undirected[(b, a)] += 1.0;
                }
            }
        }
    }
    let n = draws.len() as f64;
    Ok((directed / n, undirected / n))
}

/// Posterior inclusion probability of every indicator, one matrix per lag.
pub fn indicator_probabilities(draws: &[ChainDraw]) -> Result<Vec<DMatrix<f64>>> {
    let first = draws
        .first()
        .ok_or_else(|| Error::InvalidParameter("no draws".into()))?;
    let mut probs: Vec<DMatrix<f64>> = first
        .expanded
        .gamma
        .iter()
        .map(|g| DMatrix::zeros(g.nrows(), g.ncols()))
        .collect();
    for d in draws {
        for (p, g) in probs.iter_mut().zip(&d.expanded.gamma) {
            for (pv, &gv) in p.iter_mut().zip(g.iter()) {
                if gv {
                    *pv += 1.0;
                }
            }
        }
    }
    let n = draws.len() as f64;
    Ok(probs.into_iter().map(|p| p / n).collect())
}

/// Off-diagonal entries in the order lag, column, row.
pub fn off_diagonal_entries<T: Copy + nalgebra::Scalar>(mats: &[DMatrix<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for mat in mats {
        for j in 0..mat.ncols() {
            for i in 0..mat.nrows() {
                if i != j {
                    out.push(mat[(i, j)]);
                }
            }
        }
    }
    out
}

/// Strict upper triangle in the order column, row.
pub fn upper_entries<T: Copy + nalgebra::Scalar>(mat: &DMatrix<T>) -> Vec<T> {
    let mut out = Vec::new();
    for j in 1..mat.ncols() {
        for i in 0..j {
            out.push(mat[(i, j)]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ClassificationRule {
    /// 1 iff the probability exceeds 0.5.
    Naive,
    /// 1 above `hi`, 0 below `lo`, abstain otherwise.
    Confident { lo: f64, hi: f64 },
}

impl ClassificationRule {
    pub const CONFIDENT: Self = ClassificationRule::Confident { lo: 0.1, hi: 0.9 };

    pub fn classify(&self, p: f64) -> Option<bool> {
        match *self {
            ClassificationRule::Naive => Some(p > 0.5),
            ClassificationRule::Confident { lo, hi } => {
                if p > hi {
                    Some(true)
                } else if p < lo {
                    Some(false)
                } else {
                    None
                }
            }
        }
    }
}

pub fn classify_indicators(probs: &[f64], rule: ClassificationRule) -> Vec<Option<bool>> {
    probs.iter().map(|&p| rule.classify(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    /// Error rate among classified entries; absent when everything abstained.
    pub rate: Option<f64>,
    /// Fraction of entries that received a label.
    pub coverage: f64,
}

pub fn misclassification_rate(
    labels: &[Option<bool>],
    truth: &[bool],
) -> Result<Misclassification> {
    if labels.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} truths",
            labels.len(),
            truth.len()
        )));
    }
    let mut classified = 0usize;
    let mut wrong = 0usize;
    for (l, &t) in labels.iter().zip(truth) {
        if let Some(v) = l {
            classified += 1;
            wrong += usize::from(*v != t);
        }
    }
    let n = labels.len().max(1) as f64;
    Ok(Misclassification {
        rate: (classified > 0).then(|| wrong as f64 / classified as f64),
        coverage: classified as f64 / n,
    })
}

/// Per-draw Hamming distance between the directed graph of the draw and `truth`
/// (`truth[(b, a)]` is `a -> b`; the diagonal is ignored).
pub fn hamming_distance_posterior(draws: &[ChainDraw], truth: &DMatrix<bool>) -> Vec<usize> {
    draws
        .iter()
        .map(|d| {
            let g = derive_mixed_graph(d, DEFAULT_ZERO_TOL);
            let m = truth.nrows();
            let mut dist = 0;
            for b in 0..m {
                for a in 0..m {
                    if a != b && g.directed[(b, a)] != truth[(b, a)] {
                        dist += 1;
                    }
                }
            }
            dist
        })
        .collect()
}

/// Empirical distribution `(distance, probability)` sorted by distance.
pub fn distance_distribution(distances: &[usize]) -> Vec<(usize, f64)> {
    let mut counts = std::collections::BTreeMap::new();
    for &d in distances {
        *counts.entry(d).or_insert(0usize) += 1;
    }
    let n = distances.len().max(1) as f64;
    counts.into_iter().map(|(d, c)| (d, c as f64 / n)).collect()
}

// ---------------------------------------------------------------------------
// Predictive distributions

/// Equally weighted Gaussian mixture, one component per posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveEnsemble {
    pub horizon: usize,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl PredictiveEnsemble {
    pub fn new(horizon: usize, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        if means.is_empty() || means.len() != covs.len() {
            return Err(Error::InvalidParameter(
                "ensemble needs matching, non-empty means and covariances".into(),
            ));
        }
        Ok(Self {
            horizon,
            means,
            covs,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// `(mean, variance)` of each component's `k`-th coordinate.
    pub fn marginal(&self, k: usize) -> Vec<(f64, f64)> {
        self.means
            .iter()
            .zip(&self.covs)
            .map(|(mu, c)| (mu[k], c[(k, k)]))
            .collect()
    }

    pub fn mixture_mean(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for mu in &self.means {
            acc += mu;
        }
        acc / self.len() as f64
    }

    pub fn mixture_cov(&self) -> DMatrix<f64> {
        let mean = self.mixture_mean();
        let mut acc = DMatrix::zeros(self.dim(), self.dim());
        for (mu, c) in self.means.iter().zip(&self.covs) {
            let d = mu - &mean;
            acc += c + &d * d.transpose();
        }
        acc / self.len() as f64
    }

    /// `n` draws: a component chosen uniformly, then a Gaussian draw from it.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<DVector<f64>>> {
        let factors = self.cholesky_factors()?;
        let dim = self.dim();
        Ok((0..n)
            .map(|_| {
                let c = rng.random_range(0..self.len());
                let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.means[c] + &factors[c] * z
            })
            .collect())
    }

    fn cholesky_factors(&self) -> Result<Vec<DMatrix<f64>>> {
        self.covs.iter().map(psd_factor).collect()
    }
}

/// Lower factor `L` with `L L^T = C` for a positive semi-definite `C`.
fn psd_factor(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = c.clone().symmetric_eigen();
    if eig
        .eigenvalues
        .iter()
        .any(|&v| v < -1e-10 * c.abs().max().max(1.0))
    {
        return Err(Error::NotPositiveDefinite("predictive covariance".into()));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Mixture of per-draw `h`-step predictives conditional on all of `y`.
pub fn predictive_ensemble(
    draws: &[ChainDraw],
    y: &TimeSeries,
    h: usize,
) -> Result<PredictiveEnsemble> {
    if draws.is_empty() {
        return Err(Error::InvalidParameter("no draws".into()));
    }
    let mut means = Vec::with_capacity(draws.len());
    let mut covs = Vec::with_capacity(draws.len());
    for d in draws {
        let (mu, c) = predictive_moments(y, &d.phi, &d.k, h)?;
        means.push(mu);
        covs.push(c);
    }
    PredictiveEnsemble::new(h, means, covs)
}

// ---------------------------------------------------------------------------
// Scores

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Quantile of a univariate Gaussian mixture by bisection.
pub fn mixture_quantile(components: &[(f64, f64)], prob: f64) -> f64 {
    let cdf = |x: f64| {
        components
            .iter()
            .map(|&(m, v)| std_normal_cdf((x - m) / v.sqrt()))
            .sum::<f64>()
            / components.len() as f64
    };
    let lo0 = components
        .iter()
        .map(|&(m, v)| m - 10.0 * v.sqrt())
        .fold(f64::INFINITY, f64::min);
    let hi0 = components
        .iter()
        .map(|&(m, v)| m + 10.0 * v.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// `E|X|` for `X ~ N(mu, var)`.
fn abs_moment(mu: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return mu.abs();
    }
    let s = var.sqrt();
    let z = mu / s;
    mu * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * s * std_normal_pdf(z)
}

/// Closed-form CRPS of an equally weighted univariate Gaussian mixture.
pub fn crps_mixture(components: &[(f64, f64)], obs: f64) -> f64 {
    let n = components.len() as f64;
    let first: f64 = components
        .iter()
        .map(|&(mu, var)| abs_moment(obs - mu, var))
        .sum::<f64>()
        / n;
    let mut second = 0.0;
    for (a, &(mi, vi)) in components.iter().enumerate() {
        // Symmetric pairs counted twice, the diagonal once.
        second += abs_moment(0.0, 2.0 * vi);
        for &(mj, vj) in &components[a + 1..] {
            second += 2.0 * abs_moment(mi - mj, vi + vj);
        }
    }
    first - 0.5 * second / (n * n)
}

pub fn crps(ens: &PredictiveEnsemble, obs: f64, k: usize) -> f64 {
    crps_mixture(&ens.marginal(k), obs)
}

/// Sample-based CRPS `(1/M) sum |x_i - y| - (1/2M^2) sum sum |x_i - x_j|`.
pub fn crps_ensemble(samples: &[f64], obs: f64) -> f64 {
    let n = samples.len() as f64;
    let first = samples.iter().map(|x| (x - obs).abs()).sum::<f64>() / n;
    // Pairwise sum via sorted order: sum_{i<j} (x_(j) - x_(i)).
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 - (n - 1.0)))
        .sum();
    first - pair_sum / (n * n)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Negative log density of a univariate equally weighted Gaussian mixture.
pub fn log_score_mixture(components: &[(f64, f64)], obs: f64) -> f64 {
    let logs: Vec<f64> = components
        .iter()
        .map(|&(mu, var)| -0.5 * (LN_2PI + var.ln()) - 0.5 * (obs - mu).powi(2) / var)
        .collect();
    -(log_sum_exp(&logs) - (components.len() as f64).ln())
}

pub fn log_score_marginal(ens: &PredictiveEnsemble, obs: f64, k: usize) -> f64 {
    log_score_mixture(&ens.marginal(k), obs)
}

/// Negative log density of the full multivariate mixture at `obs`.
pub fn log_score(ens: &PredictiveEnsemble, obs: &DVector<f64>) -> Result<f64> {
    let dim = ens.dim() as f64;
    let mut logs = Vec::with_capacity(ens.len());
    for (mu, c) in ens.means.iter().zip(&ens.covs) {
        let ch = c
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("predictive covariance".into()))?;
        let l = ch.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let r = obs - mu;
        let w = l
            .solve_lower_triangular(&r)
            .ok_or_else(|| Error::NotPositiveDefinite("predictive covariance".into()))?;
        logs.push(-0.5 * (dim * LN_2PI + log_det + w.norm_squared()));
    }
    Ok(-(log_sum_exp(&logs) - (ens.len() as f64).ln()))
}

/// Two-sum energy score estimator on explicit samples.
pub fn energy_score_samples(samples: &[DVector<f64>], obs: &DVector<f64>) -> f64 {
    let n = samples.len() as f64;
    let first = samples.iter().map(|x| (x - obs).norm()).sum::<f64>() / n;
    let mut pair = 0.0;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            pair += (a - b).norm();
        }
    }
    first - pair / (n * n)
}

/// Energy score of the mixture, estimated from `n_mc` draws.
pub fn energy_score<R: Rng + ?Sized>(
    ens: &PredictiveEnsemble,
    obs: &DVector<f64>,
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_mc < 2 {
        return Err(Error::InvalidParameter(
            "energy score needs at least two samples".into(),
        ));
    }
    Ok(energy_score_samples(&ens.sample(n_mc, rng)?, obs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub horizon: usize,
    /// Variable name, or `"joint"` for the multivariate row.
    pub variable: String,
    pub crps: Option<f64>,
    pub log_score: f64,
    pub energy_score: Option<f64>,
    pub n_targets: usize,
}

/// Averages scores over every hold-out target `t = n_fit + h, ..., n` (1-based),
/// each forecast conditioning on the first `t - h` observations. Produces one
/// row per reported variable plus one joint row per horizon.
pub fn rolling_score_report<R: Rng + ?Sized>(
    draws: &[ChainDraw],
    y_full: &TimeSeries,
    n_fit: usize,
    horizons: &[usize],
    report_vars: &[usize],
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<ScoreRow>> {
    let n = y_full.n();
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::InvalidParameter(
            "horizons must be a non-empty list of positive integers".into(),
        ));
    }
    if n < n_fit + max_h {
        return Err(Error::InvalidData(format!(
            "hold-out has {} points but the longest horizon is {max_h}",
            n.saturating_sub(n_fit)
        )));
    }
    if let Some(&v) = report_vars.iter().find(|&&v| v >= y_full.m()) {
        return Err(Error::Dimension(format!("variable index {v} out of range")));
    }
    let mut rows = Vec::new();
    for &h in horizons {
        let targets: Vec<usize> = (n_fit + h..=n).collect();
        let mut crps_sum = vec![0.0; report_vars.len()];
        let mut ls_sum = vec![0.0; report_vars.len()];
        let mut joint_ls = 0.0;
        let mut es_sum = 0.0;
        for &t in &targets {
            let history = y_full.head(t - h);
            let ens = predictive_ensemble(draws, &history, h)?;
            let obs = y_full.obs(t - 1);
            for (r, &k) in report_vars.iter().enumerate() {
                crps_sum[r] += crps(&ens, obs[k], k);
                ls_sum[r] += log_score_marginal(&ens, obs[k], k);
            }
            joint_ls += log_score(&ens, &obs)?;
            es_sum += energy_score(&ens, &obs, n_mc, rng)?;
        }
        let nt = targets.len() as f64;
        for (r, &k) in report_vars.iter().enumerate() {
            rows.push(ScoreRow {
                horizon: h,
                variable: y_full.names()[k].clone(),
                crps: Some(crps_sum[r] / nt),
                log_score: ls_sum[r] / nt,
                energy_score: None,
                n_targets: targets.len(),
            });
        }
        rows.push(ScoreRow {
            horizon: h,
            variable: "joint".into(),
            crps: None,
            log_score: joint_ls / nt,
            energy_score: Some(es_sum / nt),
            n_targets: targets.len(),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Diagnostics

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let mu = mean(x);
    x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Monte Carlo standard error of the mean by non-overlapping batch means,
/// with about `sqrt(n)` batches.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let n = x.len();
    let b = ((n as f64).sqrt() as usize).max(2);
    let size = n / b;
    if size == 0 {
        return (variance(x) / n as f64).sqrt();
    }
    let means: Vec<f64> = (0..b).map(|k| mean(&x[k * size..(k + 1) * size])).collect();
    (variance(&means) / b as f64).sqrt()
}

/// Split potential scale reduction factor over equal-length chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if chains.is_empty() || len < 4 {
        return Err(Error::InvalidParameter(
            "split R-hat needs chains of at least four draws".into(),
        ));
    }
    let half = len / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half..2 * half]])
        .collect();
    let n = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = mean(&halves.iter().map(|h| variance(h)).collect::<Vec<_>>());
    let b = n * variance(&means);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Ok((var_plus / w).sqrt())
}

/// One-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{all_active, ExpandedParams, UndirectedGraph};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixture_quantile_matches_normal_and_symmetry() {
        assert_relative_eq!(
            mixture_quantile(&[(0.0, 1.0)], 0.95),
            1.6448536269514722,
            epsilon = 1e-9
        );
        assert_relative_eq!(mixture_quantile(&[(1.0, 4.0)], 0.5), 1.0, epsilon = 1e-9);
        let comps = [(-2.0, 0.5), (2.0, 0.5)];
        assert_relative_eq!(mixture_quantile(&comps, 0.5), 0.0, epsilon = 1e-9);
        assert_relative_eq!(
            mixture_quantile(&comps, 0.1),
            -mixture_quantile(&comps, 0.9),
            epsilon = 1e-9
        );
    }

    fn draw(gamma: Vec<DMatrix<bool>>, g2: UndirectedGraph) -> ChainDraw {
        let m = gamma[0].nrows();
        let p = gamma.len();
        ChainDraw {
            iteration: 0,
            expanded: ExpandedParams {
                z_tilde: vec![DMatrix::from_element(m, m, 0.3); p],
                gamma,
                u: 0.5,
                tau: 1.0,
                vartheta: 0.5,
                omega: 1.0,
                mu: None,
            },
            phi: vec![DMatrix::zeros(m, m); p],
            k: DMatrix::identity(m, m),
            g2,
        }
    }

    #[test]
    fn gaussian_crps_closed_form() {
        let v = crps_mixture(&[(0.0, 1.0)], 0.0);
        assert_relative_eq!(
            v,
            (2f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt(),
            epsilon = 1e-12
        );
        assert!((v - 0.23370).abs() < 1e-4);
        // Textbook form sigma (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)).
        for &(mu, var, y) in &[(0.3, 2.0, -1.0), (-1.0, 0.5, 0.7)] {
            let s: f64 = f64::sqrt(var);
            let z = (y - mu) / s;
            let expected = s
                * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z)
                    - 1.0 / std::f64::consts::PI.sqrt());
            assert_relative_eq!(crps_mixture(&[(mu, var)], y), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_forecast_scores_zero() {
        assert!(crps_mixture(&[(1.5, 1e-16)], 1.5) < 1e-7);
        let obs = DVector::from_vec(vec![1.0, 2.0]);
        let samples = vec![obs.clone(); 10];
        assert_eq!(energy_score_samples(&samples, &obs), 0.0);
    }

    #[test]
    fn crps_ensemble_matches_naive_pair_sum() {
        let xs: [f64; 5] = [0.3, -1.2, 2.0, 0.7, 0.7];
        let y: f64 = 0.1;
        let n = xs.len() as f64;
        let mut naive = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / n;
        let mut pair = 0.0;
        for a in &xs {
            for b in &xs {
                pair += (a - b).abs();
            }
        }
        naive -= pair / (2.0 * n * n);
        assert_relative_eq!(crps_ensemble(&xs, y), naive, epsilon = 1e-12);
    }

    #[test]
    fn log_score_cases() {
        assert_relative_eq!(
            log_score_mixture(&[(0.0, 1.0)], 0.0),
            0.5 * LN_2PI,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            log_score_mixture(&[(0.4, 2.0), (0.4, 2.0)], 1.0),
            log_score_mixture(&[(0.4, 2.0)], 1.0),
            epsilon = 1e-12
        );
        let a: f64 = 1.7;
        let sym = log_score_mixture(&[(a, 1.0), (-a, 1.0)], 0.0);
        assert_relative_eq!(sym, -std_normal_pdf(a).ln(), epsilon = 1e-12);
        // Far tail stays finite.
        assert!(log_score_mixture(&[(0.0, 1.0)], 1e3).is_finite());
    }

    #[test]
    fn multivariate_log_score_reduces_to_product() {
        let ens = PredictiveEnsemble::new(
            1,
            vec![DVector::from_vec(vec![0.5, -1.0])],
            vec![DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]))],
        )
        .unwrap();
        let obs = DVector::from_vec(vec![0.0, 0.3]);
        let expected =
            log_score_mixture(&[(0.5, 2.0)], 0.0) + log_score_mixture(&[(-1.0, 0.5)], 0.3);
        assert_relative_eq!(log_score(&ens, &obs).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn energy_score_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<DVector<f64>> = (0..50)
            .map(|_| DVector::from_fn(3, |_, _| rng.sample(StandardNormal)))
            .collect();
        let obs = DVector::from_vec(vec![0.2, -0.1, 1.0]);
        let shift = DVector::from_vec(vec![5.0, -3.0, 2.0]);
        let moved: Vec<_> = samples.iter().map(|s| s + &shift).collect();
        assert_relative_eq!(
            energy_score_samples(&samples, &obs),
            energy_score_samples(&moved, &(&obs + &shift)),
            epsilon = 1e-10
        );
    }

    #[test]
    fn classification_rules() {
        assert_eq!(ClassificationRule::Naive.classify(0.5), Some(false));
        assert_eq!(ClassificationRule::CONFIDENT.classify(0.95), Some(true));
        assert_eq!(ClassificationRule::CONFIDENT.classify(0.5), None);
        assert_eq!(ClassificationRule::CONFIDENT.classify(0.9), None);
        assert_eq!(ClassificationRule::CONFIDENT.classify(0.05), Some(false));
    }

    #[test]
    fn misclassification_arithmetic() {
        let truth = [true, false, true, false, true, true, false, false];
        let perfect: Vec<_> = truth.iter().map(|&t| Some(t)).collect();
        assert_eq!(
            misclassification_rate(&perfect, &truth).unwrap(),
            Misclassification {
                rate: Some(0.0),
                coverage: 1.0
            }
        );
        let none = vec![None; 8];
        assert_eq!(misclassification_rate(&none, &truth).unwrap().rate, None);
        let half = [
            Some(true),
            Some(true),
            Some(false),
            Some(false),
            None,
            None,
            None,
            None,
        ];
        let r = misclassification_rate(&half, &truth).unwrap();
        assert_eq!(r.rate, Some(0.5));
        assert_eq!(r.coverage, 0.5);
    }

    #[test]
    fn edge_probabilities_simple() {
        let m = 3;
        let mut g_a = all_active(m, 1);
        let g_b = all_active(m, 1);
        g_a[0][(2, 0)] = false;
        let d1 = draw(g_a, UndirectedGraph::full(m));
        let d2 = draw(g_b, UndirectedGraph::from_edges(m, &[(0, 1)]).unwrap());
        let (dir, und) = edge_probabilities(&[d1, d2]).unwrap();
        assert_eq!(dir[(2, 0)], 0.5);
        assert_eq!(dir[(0, 2)], 1.0);
        assert_eq!(dir[(1, 1)], 0.0);
        assert_eq!(und, und.transpose());
        assert_eq!(und[(0, 1)], 1.0);
        assert_eq!(und[(1, 2)], 0.5);
    }

    #[test]
    fn hamming_point_masses() {
        let m = 3;
        let gamma = all_active(m, 2);
        let d = draw(gamma.clone(), UndirectedGraph::empty(m));
        let truth = DMatrix::from_fn(m, m, |i, j| i != j);
        assert_eq!(
            hamming_distance_posterior(&[d.clone(), d.clone()], &truth),
            vec![0, 0]
        );
        let mut off = truth.clone();
        off[(1, 2)] = false;
        assert_eq!(
            distance_distribution(&hamming_distance_posterior(&[d.clone(), d], &off)),
            vec![(1, 1.0)]
        );
    }

    #[test]
    fn hamming_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 4;
        let truth = DMatrix::from_fn(m, m, |i, j| i != j && rng.random::<bool>());
        for _ in 0..20 {
            let gamma: Vec<_> = (0..2)
                .map(|_| DMatrix::from_fn(m, m, |i, j| i == j || rng.random::<bool>()))
                .collect();
            let d = draw(gamma.clone(), UndirectedGraph::empty(m));
            let mut naive = 0;
            for b in 0..m {
                for a in 0..m {
                    if a != b {
                        let any = gamma.iter().any(|g| g[(b, a)]);
                        naive += usize::from(any != truth[(b, a)]);
                    }
                }
            }
            assert_eq!(hamming_distance_posterior(&[d], &truth)[0], naive);
        }
    }

    #[test]
    fn split_rhat_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        assert!(split_rhat(&chains).unwrap() < 1.01);
        let shifted: Vec<Vec<f64>> = chains
            .iter()
            .enumerate()
            .map(|(c, x)| x.iter().map(|v| v + 3.0 * c as f64).collect())
            .collect();
        assert!(split_rhat(&shifted).unwrap() > 1.5);
    }

    #[test]
    fn ks_uniform_and_shifted() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        let (_, p) = ks_test(&u, |x| x.clamp(0.0, 1.0));
        assert!(p > 0.01);
        let shifted: Vec<f64> = u.iter().map(|x| x * x).collect();
        let (_, p) = ks_test(&shifted, |x| x.clamp(0.0, 1.0));
        assert!(p < 1e-6);
    }

    #[test]
    fn batch_means_se_iid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..40_000).map(|_| rng.sample(StandardNormal)).collect();
        let se = batch_means_se(&x);
        assert!((se / (1.0 / 200.0) - 1.0).abs() < 0.25);
    }
}
