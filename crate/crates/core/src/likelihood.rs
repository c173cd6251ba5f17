//! Conditional Gaussian likelihood, its gradient through the inverse map,
//! residual statistics and parameter-conditional predictive moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::priors::{count_off_diagonal, log_prior_continuous, log_prior_indicators, Coordinates};
use crate::stationary::{
    companion, inverse_map, spectral_radius, spectral_radius_gradient_robust, CompanionMatrix,
    NILPOTENT_TOL,
};
use crate::types::{ExpandedParams, ModelSpec, MuMode, ParamLayout, TimeSeries};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Cross-product matrices of the lagged design, computed once per dataset.
///
/// With `x_t = (y_{t-1}, ..., y_{t-p})` and `B = (phi_1, ..., phi_p)`, the
/// residual scatter is `S = Syy - B Sxy - Syx B^T + B Sxx B^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagGram {
    pub syy: DMatrix<f64>,
    /// `sum_t y_t x_t^T`, `m x mp`.
    pub syx: DMatrix<f64>,
    pub sxx: DMatrix<f64>,
    pub n_eff: usize,
    pub m: usize,
    pub p: usize,
}

impl LagGram {
    pub fn new(y: &TimeSeries, p: usize) -> Result<Self> {
        y.check_order(p)?;
        let (n, m) = (y.n(), y.m());
        let data = y.data();
        let mut syy = DMatrix::zeros(m, m);
        let mut syx = DMatrix::zeros(m, m * p);
        let mut sxx = DMatrix::zeros(m * p, m * p);
        let mut x = DVector::zeros(m * p);
        for t in p..n {
            for s in 0..p {
                for k in 0..m {
                    x[s * m + k] = data[(t - s - 1, k)];
                }
            }
            let yt = data.row(t).transpose();
            syy.ger(1.0, &yt, &yt, 1.0);
            syx.ger(1.0, &yt, &x, 1.0);
            sxx.ger(1.0, &x, &x, 1.0);
        }
        Ok(Self {
            syy,
            syx,
            sxx,
            n_eff: n - p,
            m,
            p,
        })
    }

    /// A gram of zero observations, for running the sampler without data.
    pub fn empty(m: usize, p: usize) -> Self {
        Self {
            syy: DMatrix::zeros(m, m),
            syx: DMatrix::zeros(m, m * p),
            sxx: DMatrix::zeros(m * p, m * p),
            n_eff: 0,
            m,
            p,
        }
    }

    /// Residual scatter matrix for stacked coefficients `b` (`m x mp`).
    pub fn scatter(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let bsxy = b * self.syx.transpose();
        let mut s = &self.syy - &bsxy - bsxy.transpose() + b * &self.sxx * b.transpose();
        s = (&s + s.transpose()) * 0.5;
        s
    }

    /// `log p(y_{p+1:n} | y_{1:p}, B, K)` given a Cholesky factor of `K`.
    pub fn log_likelihood(&self, b: &DMatrix<f64>, k: &DMatrix<f64>, log_det_k: f64) -> f64 {
        let s = self.scatter(b);
        let n = self.n_eff as f64;
        -0.5 * n * self.m as f64 * LN_2PI + 0.5 * n * log_det_k - 0.5 * (k * s).trace()
    }
}

/// Stacks lag matrices into `B = (phi_1, ..., phi_p)`.
pub fn stack(phi: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = phi[0].nrows();
    let mut b = DMatrix::zeros(m, m * phi.len());
    for (s, ph) in phi.iter().enumerate() {
        b.view_mut((0, s * m), (m, m)).copy_from(ph);
    }
    b
}

pub fn log_det_pd(k: &DMatrix<f64>) -> Result<f64> {
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?;
    Ok(2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>())
}

fn check_dims(y: &TimeSeries, phi: &[DMatrix<f64>], k: &DMatrix<f64>) -> Result<()> {
    let m = y.m();
    if phi.is_empty() || phi.iter().any(|ph| ph.shape() != (m, m)) || k.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "coefficients and precision must be {m}x{m}"
        )));
    }
    Ok(())
}

/// Conditional log-likelihood, one Gaussian term per `t = p+1, ..., n`.
pub fn log_likelihood(y: &TimeSeries, phi: &[DMatrix<f64>], k: &DMatrix<f64>) -> Result<f64> {
    check_dims(y, phi, k)?;
    let p = phi.len();
    y.check_order(p)?;
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?;
    let l = chol.l();
    let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let m = y.m();
    let mut total = 0.0;
    for t in p..y.n() {
        let mut eps = y.obs(t);
        for (s, ph) in phi.iter().enumerate() {
            eps -= ph * y.obs(t - s - 1);
        }
        // eps^T K eps = |L^T eps|^2.
        let q = (l.transpose() * &eps).norm_squared();
        total += -0.5 * m as f64 * LN_2PI + 0.5 * log_det - 0.5 * q;
    }
    Ok(total)
}

/// Likelihood as a function of the expanded parameters.
pub fn log_likelihood_expanded(
    y: &TimeSeries,
    x: &ExpandedParams,
    k: &DMatrix<f64>,
) -> Result<f64> {
    let (phi, _) = inverse_map(&x.z(), x.u)?;
    log_likelihood(y, &phi, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub s: DMatrix<f64>,
    pub n: usize,
    pub residuals: DMatrix<f64>,
}

impl SufficientStats {
    /// Statistics of an empty dataset.
    pub fn none(m: usize) -> Self {
        Self {
            s: DMatrix::zeros(m, m),
            n: 0,
            residuals: DMatrix::zeros(0, m),
        }
    }
}

pub fn sufficient_stats(y: &TimeSeries, phi: &[DMatrix<f64>]) -> Result<SufficientStats> {
    let p = phi.len();
    y.check_order(p)?;
    let m = y.m();
    if phi.iter().any(|ph| ph.shape() != (m, m)) {
        return Err(Error::Dimension(format!("coefficients must be {m}x{m}")));
    }
    let n_eff = y.n() - p;
    let mut residuals = DMatrix::zeros(n_eff, m);
    for t in p..y.n() {
        let mut eps = y.obs(t);
        for (s, ph) in phi.iter().enumerate() {
            eps -= ph * y.obs(t - s - 1);
        }
        residuals.set_row(t - p, &eps.transpose());
    }
    let s = residuals.transpose() * &residuals;
    Ok(SufficientStats {
        s,
        n: n_eff,
        residuals,
    })
}

/// Mean and covariance of `y_{n+h}` given the observed series and fixed parameters.
pub fn predictive_moments(
    y: &TimeSeries,
    phi: &[DMatrix<f64>],
    k: &DMatrix<f64>,
    h: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dims(y, phi, k)?;
    if h == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let p = phi.len();
    y.check_order(p - 1)?;
    let m = y.m();
    let sigma = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("precision matrix".into()))?
        .inverse();
    let c = companion(phi)?.materialize();
    let n = y.n();
    let mut state = DVector::zeros(m * p);
    for s in 0..p {
        state.rows_mut(s * m, m).copy_from(&y.obs(n - 1 - s));
    }
    let mut cov = DMatrix::zeros(m, m);
    // power = C^j; A_j is its top-left block.
    let mut power = DMatrix::identity(m * p, m * p);
    for _ in 0..h {
        let a = power.view((0, 0), (m, m)).into_owned();
        cov += &a * &sigma * a.transpose();
        state = &c * state;
        power = &c * power;
    }
    let mean = state.rows(0, m).into_owned();
    Ok((mean, (&cov + cov.transpose()) * 0.5))
}

/// Log full-conditional density of the continuous block, in transformed
/// coordinates, with its gradient. Indicators and precision are held fixed.
#[derive(Debug, Clone)]
pub struct ContinuousTarget {
    pub spec: ModelSpec,
    pub layout: ParamLayout,
    pub gram: LagGram,
    pub gamma: Vec<DMatrix<bool>>,
    pub k: DMatrix<f64>,
    log_det_k: f64,
    /// Disables the likelihood so the chain targets the prior.
    pub prior_only: bool,
}

impl ContinuousTarget {
    pub fn new(
        spec: &ModelSpec,
        gram: LagGram,
        gamma: Vec<DMatrix<bool>>,
        k: DMatrix<f64>,
        prior_only: bool,
    ) -> Result<Self> {
        let log_det_k = log_det_pd(&k)?;
        Ok(Self {
            layout: spec.layout(),
            spec: spec.clone(),
            gram,
            gamma,
            k,
            log_det_k,
            prior_only,
        })
    }

    pub fn set_gamma(&mut self, gamma: Vec<DMatrix<bool>>) {
        self.gamma = gamma;
    }

    pub fn set_precision(&mut self, k: DMatrix<f64>) -> Result<()> {
        self.log_det_k = log_det_pd(&k)?;
        self.k = k;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Log-likelihood of `Z = Gamma o Z~` at `u`, or an error when `C_z` is nilpotent.
    pub fn log_likelihood_z(&self, z: &[DMatrix<f64>], u: f64) -> Result<f64> {
        let c = companion(z)?;
        let rho_z = spectral_radius(&c)?.rho;
        if !(rho_z >= NILPOTENT_TOL) {
            return Err(Error::NilpotentCompanion(rho_z));
        }
        let b = scaled_stack(&stack(z), u / rho_z, self.gram.m, self.gram.p);
        Ok(self.gram.log_likelihood(&b, &self.k, self.log_det_k))
    }

    /// Log density at `theta`; `-inf` outside the support.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let mut scratch = vec![0.0; theta.len()];
        self.log_density_and_grad(theta, &mut scratch, false)
    }

    /// Log density with gradient written into `grad`.
    pub fn logp_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.log_density_and_grad(theta, grad, true)
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64], want_grad: bool) -> f64 {
        let lay = self.layout;
        let (m, p) = (lay.m, lay.p);
        let x = lay.unpack(theta, &self.gamma);
        if !(x.u > 0.0
            && x.u < 1.0
            && x.vartheta > 0.0
            && x.vartheta < 1.0
            && x.tau > 0.0
            && x.omega > 0.0)
            || !x.tau.is_finite()
            || !x.omega.is_finite()
        {
            return f64::NEG_INFINITY;
        }
        let h = &self.spec.hyper;
        let mut lp = match log_prior_continuous(&x, &self.spec, Coordinates::Transformed) {
            Ok(v) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        lp += log_prior_indicators(&self.gamma, x.vartheta);
        let (n_on, n_ind) = count_off_diagonal(&self.gamma);
        let mean = x.diag_mean(h);

        if want_grad {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut sum_off = 0.0;
            let mut sum_diag = 0.0;
            let mut sum_diag_dev = 0.0;
            for s in 0..p {
                let zt = &x.z_tilde[s];
                for j in 0..m {
                    for i in 0..m {
                        let v = zt[(i, j)];
                        let idx = lay.z_index(s, i, j);
                        if i == j {
                            grad[idx] = -x.omega * (v - mean);
                            sum_diag += (v - mean).powi(2);
                            sum_diag_dev += v - mean;
                        } else {
                            grad[idx] = -x.tau * v;
                            sum_off += v * v;
                        }
                    }
                }
            }
            let (u, th) = (x.u, x.vartheta);
            grad[lay.logit_u()] = h.a1 * (1.0 - u) - h.a2 * u;
            grad[lay.logit_vartheta()] =
                (h.c1 + n_on as f64) * (1.0 - th) - (h.c2 + (n_ind - n_on) as f64) * th;
            let n_off = (p * m * (m - 1)) as f64;
            let n_diag = (p * m) as f64;
            grad[lay.log_tau()] = h.b1 - h.b2 * x.tau + 0.5 * n_off - 0.5 * x.tau * sum_off;
            grad[lay.log_omega()] = h.e1 - h.e2 * x.omega + 0.5 * n_diag - 0.5 * x.omega * sum_diag;
            if let (Some(idx), MuMode::Random { f1, f2 }) = (lay.mu(), h.mu_mode) {
                grad[idx] = -(mean - f1) / (f2 * f2) + x.omega * sum_diag_dev;
            }
        }

        if self.prior_only {
            return lp;
        }

        let z = x.z();
        let c = match companion(&z) {
            Ok(c) => c,
            Err(_) => return f64::NEG_INFINITY,
        };
        let rho_z = match spectral_radius(&c) {
            Ok(sr) if sr.rho >= NILPOTENT_TOL && sr.rho.is_finite() => sr.rho,
            _ => return f64::NEG_INFINITY,
        };
        let scale = x.u / rho_z;
        let b = scaled_stack(&stack(&z), scale, m, p);
        let ll = self.gram.log_likelihood(&b, &self.k, self.log_det_k);
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp += ll;

        if want_grad {
            match likelihood_gradient(&self.gram, &self.k, &c, &z, &b, x.u, rho_z) {
                Ok((dz, d_eta_u)) => {
                    for s in 0..p {
                        for j in 0..m {
                            for i in 0..m {
                                if self.gamma[s][(i, j)] {
                                    grad[lay.z_index(s, i, j)] += dz[s][(i, j)];
                                }
                            }
                        }
                    }
                    grad[lay.logit_u()] += d_eta_u;
                }
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        lp
    }
}

fn scaled_stack(b: &DMatrix<f64>, scale: f64, m: usize, p: usize) -> DMatrix<f64> {
    let mut out = b.clone();
    for s in 0..p {
        let f = scale.powi(s as i32 + 1);
        out.view_mut((0, s * m), (m, m)).scale_mut(f);
    }
    out
}

/// Gradient of the log-likelihood with respect to the unmasked `Z_s` and to
/// `logit u`, passing through `phi_s = (u / rho(C_z))^s Z_s`.
fn likelihood_gradient(
    gram: &LagGram,
    k: &DMatrix<f64>,
    c: &CompanionMatrix,
    z: &[DMatrix<f64>],
    b: &DMatrix<f64>,
    u: f64,
    rho_z: f64,
) -> Result<(Vec<DMatrix<f64>>, f64)> {
    let (m, p) = (gram.m, gram.p);
    // dL/dB = K (Syx - B Sxx).
    let g_b = k * (&gram.syx - b * &gram.sxx);
    let scale = u / rho_z;
    let mut dl_dscale = 0.0;
    for s in 0..p {
        let g_s = g_b.view((0, s * m), (m, m));
        let inner = g_s.component_mul(&z[s]).sum();
        dl_dscale += (s + 1) as f64 * scale.powi(s as i32) * inner;
    }
    let drho = spectral_radius_gradient_robust(c)?;
    let dscale_drho = -u / (rho_z * rho_z);
    let dz = (0..p)
        .map(|s| {
            let g_s = g_b.view((0, s * m), (m, m)).into_owned();
            g_s * scale.powi(s as i32 + 1) + &drho[s] * (dl_dscale * dscale_drho)
        })
        .collect();
    // d scale / d logit u = scale (1 - u).
    Ok((dz, dl_dscale * scale * (1.0 - u)))
}

/// Gradient of the log full conditional of the continuous block at `x`.
pub fn grad_log_target_continuous(
    y: &TimeSeries,
    x: &ExpandedParams,
    k: &DMatrix<f64>,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    x.validate(spec)?;
    let gram = LagGram::new(y, spec.p)?;
    let target = ContinuousTarget::new(spec, gram, x.gamma.clone(), k.clone(), false)?;
    let theta = spec.layout().pack(x);
    let mut grad = vec![0.0; theta.len()];
    let lp = target.logp_and_grad(&theta, &mut grad);
    if !lp.is_finite() {
        return Err(Error::NonFiniteInitialDensity);
    }
    Ok(grad)
}
