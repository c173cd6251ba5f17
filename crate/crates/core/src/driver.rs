//! Warm-up and the three-block Metropolis-within-Gibbs cycle.
//!
//! A chain first adapts the NUTS step size and mass matrix with every
//! indicator switched on and the precision held at a ridge estimate. It then
//! repeats: NUTS on the continuous block, a systematic indicator scan, and
//! an edge move plus refresh of `(K, G2)`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ggm::{ggm_step, GgmConfig, GgmStats};
use crate::gwishart::initial_precision;
use crate::indicators::gibbs_scan_indicators;
use crate::likelihood::{stack, ContinuousTarget, LagGram};
use crate::nuts::{
    find_reasonable_step_size, nuts_step, AdaptationSchedule, DualAveraging, NutsConfig, NutsState,
    WindowAdapter,
};
use crate::stationary::{inverse_map, spectral_radius_of};
use crate::types::{
    all_active, ChainDraw, ExpandedParams, ModelSpec, MuMode, TimeSeries, UndirectedGraph,
};

const INIT_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n_chains: usize,
    /// Burn-in iterations of the full cycle after adaptation.
    pub n_warmup: usize,
    pub n_samples: usize,
    pub thin: usize,
    pub seed: u64,
    /// NUTS adaptation steps run before burn-in; 0 skips adaptation.
    pub adapt_steps: usize,
    pub max_tree_depth: usize,
    pub target_accept: f64,
    pub initial_step_size: f64,
    pub ggm: GgmConfig,
    /// Keeps tuning the step size by dual averaging through burn-in and
    /// freezes it before the first retained iteration.
    pub burnin_step_adapt: bool,
    /// Switches the likelihood off so the chain targets the prior.
    pub prior_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_chains: 2,
            n_warmup: 25_000,
            n_samples: 25_000,
            thin: 10,
            seed: 1,
            adapt_steps: 1000,
            max_tree_depth: 10,
            target_accept: 0.8,
            initial_step_size: 0.1,
            ggm: GgmConfig::default(),
            burnin_step_adapt: true,
            prior_only: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin < 1 || self.n_samples < 1 || self.n_chains < 1 {
            return Err(Error::InvalidParameter(
                "thin, n_samples and n_chains must be at least 1".into(),
            ));
        }
        if self.adapt_steps != 0 && self.adapt_steps < 100 {
            return Err(Error::InvalidParameter(
                "adapt_steps must be 0 or at least 100".into(),
            ));
        }
        NutsConfig {
            max_tree_depth: self.max_tree_depth,
            target_accept: self.target_accept,
            step_size: self.initial_step_size,
            inv_mass_diag: vec![1.0],
        }
        .validate(1)
    }

    /// Draws emitted per chain.
    pub fn draws_per_chain(&self) -> usize {
        self.n_samples / self.thin
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub adapt_divergences: usize,
    pub divergences: usize,
    pub nuts_steps: usize,
    pub leapfrog_steps: usize,
    pub mean_accept_stat: f64,
    pub max_tree_depth_hits: usize,
    pub nilpotent_rejections: usize,
    pub indicator_changes: usize,
    pub ggm: GgmStats,
    pub step_size: f64,
    pub inv_mass_diag: Vec<f64>,
    pub draws_emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Adapting { adapter: Box<WindowAdapter> },
    Sampling,
}

/// Everything needed to continue a chain bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub chain: usize,
    pub x: ExpandedParams,
    pub k: DMatrix<f64>,
    pub g2: UndirectedGraph,
    pub nuts: NutsConfig,
    pub phase: Phase,
    /// Step-size tuner active during burn-in.
    pub burnin_dual: Option<DualAveraging>,
    /// Completed iterations of the full cycle.
    pub iteration: u64,
    pub rng: ChaCha8Rng,
    pub diagnostics: ChainDiagnostics,
}

fn burnin_tuner(run: &RunConfig, nuts: &NutsConfig) -> Option<DualAveraging> {
    (run.burnin_step_adapt && run.n_warmup > 0)
        .then(|| DualAveraging::new(nuts.target_accept, nuts.step_size))
}

/// Per-chain random stream.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Dense ridge-regularised inverse of the least-squares residual covariance.
pub fn ridge_precision(gram: &LagGram, spec: &ModelSpec) -> DMatrix<f64> {
    let m = spec.m;
    let fallback = || initial_precision(&UndirectedGraph::full(m), &spec.hyper.big_d);
    if gram.n_eff == 0 {
        return fallback();
    }
    let mp = gram.sxx.nrows();
    let scale = gram.sxx.trace() / mp as f64;
    let reg = &gram.sxx + DMatrix::identity(mp, mp) * (1e-8 * scale.max(1e-300));
    let Some(chol) = reg.cholesky() else {
        return fallback();
    };
    let b = chol.solve(&gram.syx.transpose()).transpose();
    let cov = gram.scatter(&b) / gram.n_eff as f64;
    let lambda = 0.1 * cov.trace() / m as f64;
    let ridge = &cov + DMatrix::identity(m, m) * lambda.max(1e-12);
    match ridge.cholesky() {
        Some(c) => {
            let k = c.inverse();
            (&k + k.transpose()) * 0.5
        }
        None => fallback(),
    }
}

/// Univariate least-squares AR(p) coefficients of one variable.
fn univariate_ar(y: &TimeSeries, var: usize, p: usize) -> Option<Vec<f64>> {
    let n = y.n();
    if n <= 2 * p {
        return None;
    }
    let data = y.data();
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = nalgebra::DVector::zeros(p);
    for t in p..n {
        let x = nalgebra::DVector::from_fn(p, |s, _| data[(t - s - 1, var)]);
        xtx.ger(1.0, &x, &x, 1.0);
        xty.axpy(data[(t, var)], &x, 1.0);
    }
    let coef = xtx.cholesky()?.solve(&xty);
    coef.iter()
        .all(|c| c.is_finite())
        .then(|| coef.iter().copied().collect())
}

/// Starting point: diagonal effects from univariate AR fits, small random
/// off-diagonal effects, all indicators on, `u` at the blocks' spectral radius,
/// hyperparameters at prior means, full graph and ridge precision.
pub fn initialize_state<R: Rng + ?Sized>(
    y: &TimeSeries,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<(ExpandedParams, DMatrix<f64>, UndirectedGraph)> {
    let (m, p) = (spec.m, spec.p);
    if y.m() != m {
        return Err(Error::Dimension(format!(
            "data has {} variables, model {m}",
            y.m()
        )));
    }
    let h = &spec.hyper;
    let mut z_tilde = vec![DMatrix::zeros(m, m); p];
    for var in 0..m {
        let coefs = univariate_ar(y, var, p).unwrap_or_else(|| {
            let mut c = vec![0.0; p];
            c[0] = 0.5;
            c
        });
        for (s, c) in coefs.into_iter().enumerate() {
            z_tilde[s][(var, var)] = c;
        }
    }
    for zs in z_tilde.iter_mut() {
        for j in 0..m {
            for i in 0..m {
                if i != j {
                    zs[(i, j)] = 0.1 * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    // Matching u to the starting blocks makes the initial coefficients the
    // AR estimates themselves. A u far below the data's persistence pushes
    // the blocks onto eigenvalue collisions of their companion, where the
    // spectral radius is not differentiable and NUTS stalls.
    let u = match spectral_radius_of(&z_tilde) {
        Ok(rho) if rho.is_finite() && rho > 0.0 => rho.clamp(0.05, 0.99),
        _ => Beta::new(h.a1, h.a2)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(rng)
            .clamp(1e-6, 1.0 - 1e-6),
    };
    let mu = match h.mu_mode {
        MuMode::Random { f1, .. } => Some(f1),
        MuMode::Fixed { .. } => None,
    };
    let x = ExpandedParams {
        z_tilde,
        gamma: all_active(m, p),
        u,
        tau: h.b1 / h.b2,
        vartheta: h.c1 / (h.c1 + h.c2),
        omega: h.e1 / h.e2,
        mu,
    };
    x.validate(spec)?;
    let gram = LagGram::new(y, p)?;
    Ok((x, ridge_precision(&gram, spec), UndirectedGraph::full(m)))
}

/// Replaces the continuous block with a draw from a standard-normal-ish prior.
fn redraw_continuous<R: Rng + ?Sized>(
    x: &mut ExpandedParams,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<()> {
    for zs in x.z_tilde.iter_mut() {
        for v in zs.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    let beta = Beta::new(spec.hyper.a1, spec.hyper.a2)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    x.u = beta.sample(rng).clamp(1e-6, 1.0 - 1e-6);
    Ok(())
}

/// One MCMC chain, advanced an iteration at a time.
pub struct Chain {
    spec: ModelSpec,
    run: RunConfig,
    target: ContinuousTarget,
    state: ChainState,
}

impl Chain {
    pub fn new(y: &TimeSeries, spec: &ModelSpec, run: &RunConfig, chain: usize) -> Result<Self> {
        run.validate()?;
        spec.hyper.validate(spec.m)?;
        y.check_order(spec.p)?;
        let mut rng = chain_rng(run.seed, chain);
        let (mut x, k, g2) = initialize_state(y, spec, &mut rng)?;
        let gram = LagGram::new(y, spec.p)?;
        let target = ContinuousTarget::new(spec, gram, x.gamma.clone(), k.clone(), run.prior_only)?;

        let layout = spec.layout();
        let mut attempts = 0;
        let state0 = loop {
            match NutsState::new(&target, layout.pack(&x)) {
                Ok(s) => break s,
                Err(Error::NonFiniteInitialDensity) if attempts + 1 < INIT_ATTEMPTS => {
                    attempts += 1;
                    redraw_continuous(&mut x, spec, &mut rng)?;
                }
                Err(e) => return Err(e),
            }
        };
        let mut nuts = NutsConfig {
            max_tree_depth: run.max_tree_depth,
            target_accept: run.target_accept,
            step_size: run.initial_step_size,
            inv_mass_diag: vec![1.0; layout.dim()],
        };
        nuts.step_size = find_reasonable_step_size(
            &target,
            &state0,
            nuts.step_size,
            &nuts.inv_mass_diag,
            &mut rng,
        )?;
        let phase = if run.adapt_steps == 0 {
            Phase::Sampling
        } else {
            Phase::Adapting {
                adapter: Box::new(WindowAdapter::new(
                    AdaptationSchedule::new(run.adapt_steps),
                    nuts.clone(),
                )),
            }
        };
        let burnin_dual = (run.adapt_steps == 0)
            .then(|| burnin_tuner(run, &nuts))
            .flatten();
        let state = ChainState {
            chain,
            x,
            k,
            g2,
            nuts,
            phase,
            burnin_dual,
            iteration: 0,
            rng,
            diagnostics: ChainDiagnostics::default(),
        };
        Ok(Self {
            spec: spec.clone(),
            run: run.clone(),
            target,
            state,
        })
    }

    /// Continues from a saved state.
    pub fn resume(
        y: &TimeSeries,
        spec: &ModelSpec,
        run: &RunConfig,
        state: ChainState,
    ) -> Result<Self> {
        run.validate()?;
        state.x.validate(spec)?;
        let gram = LagGram::new(y, spec.p)?;
        let target = ContinuousTarget::new(
            spec,
            gram,
            state.x.gamma.clone(),
            state.k.clone(),
            run.prior_only,
        )?;
        Ok(Self {
            spec: spec.clone(),
            run: run.clone(),
            target,
            state,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn total_iterations(&self) -> u64 {
        (self.run.n_warmup + self.run.n_samples) as u64
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.state.phase, Phase::Sampling)
            && self.state.iteration >= self.total_iterations()
    }

    /// Advances one adaptation step or one full cycle; returns a draw when
    /// the cycle lands on a thinned post-burn-in iteration.
    pub fn step(&mut self) -> Result<Option<ChainDraw>> {
        if self.is_finished() {
            return Ok(None);
        }
        let layout = self.spec.layout();
        let st = &mut self.state;
        if let Phase::Adapting { adapter } = &mut st.phase {
            // The target keeps all indicators on and K fixed during adaptation.
            let current = NutsState::new(&self.target, layout.pack(&st.x))?;
            let next = adapter.advance(&self.target, &current, &mut st.rng)?;
            st.x = layout.unpack(&next.position, &st.x.gamma);
            if adapter.is_done() {
                st.nuts = adapter.config.clone();
                st.diagnostics.adapt_divergences = adapter.n_divergent;
                st.diagnostics.step_size = st.nuts.step_size;
                st.diagnostics.inv_mass_diag = st.nuts.inv_mass_diag.clone();
                st.phase = Phase::Sampling;
                st.burnin_dual = burnin_tuner(&self.run, &st.nuts);
            }
            return Ok(None);
        }

        self.target.set_gamma(st.x.gamma.clone());
        self.target.set_precision(st.k.clone())?;
        let current = NutsState::new(&self.target, layout.pack(&st.x))?;
        let (next, stats) = nuts_step(&self.target, &current, &st.nuts, &mut st.rng)?;
        st.x = layout.unpack(&next.position, &st.x.gamma);
        let d = &mut st.diagnostics;
        d.nuts_steps += 1;
        d.leapfrog_steps += stats.n_leapfrog;
        d.divergences += usize::from(stats.divergent);
        d.max_tree_depth_hits += usize::from(stats.tree_depth >= st.nuts.max_tree_depth);
        d.mean_accept_stat += (stats.accept_stat - d.mean_accept_stat) / d.nuts_steps as f64;
        if let Some(dual) = &mut st.burnin_dual {
            st.nuts.step_size = dual.update(stats.accept_stat);
            if st.iteration + 1 >= self.run.n_warmup as u64 {
                st.nuts.step_size = dual.final_step_size();
                st.diagnostics.step_size = st.nuts.step_size;
                st.burnin_dual = None;
            }
        }

        let scan = gibbs_scan_indicators(
            &mut st.x,
            &self.target.gram,
            &st.k,
            !self.run.prior_only,
            &mut st.rng,
        )?;
        st.diagnostics.nilpotent_rejections += scan.n_nilpotent;
        st.diagnostics.indicator_changes += scan.n_changed;

        let (phi, _) = inverse_map(&st.x.z(), st.x.u)?;
        let m = self.spec.m;
        let (s, n) = if self.run.prior_only {
            (DMatrix::zeros(m, m), 0)
        } else {
            (
                self.target.gram.scatter(&stack(&phi)),
                self.target.gram.n_eff,
            )
        };
        let h = &self.spec.hyper;
        let ggm = ggm_step(
            &mut st.k,
            &mut st.g2,
            &s,
            n,
            h.d,
            &h.big_d,
            &self.run.ggm,
            &mut st.rng,
        )?;
        st.diagnostics.ggm += ggm;

        st.iteration += 1;
        let warm = self.run.n_warmup as u64;
        if st.iteration > warm && (st.iteration - warm) % self.run.thin as u64 == 0 {
            let (phi, _) = inverse_map(&st.x.z(), st.x.u)?;
            let rho = spectral_radius_of(&phi)?;
            if !(rho < 1.0) {
                return Err(Error::NonStationary(rho));
            }
            st.diagnostics.draws_emitted += 1;
            return Ok(Some(ChainDraw {
                iteration: st.iteration,
                expanded: st.x.clone(),
                phi,
                k: st.k.clone(),
                g2: st.g2.clone(),
            }));
        }
        Ok(None)
    }
}

/// Runs one chain to completion, passing every emitted draw to `sink`.
pub fn fit_chain(
    y: &TimeSeries,
    spec: &ModelSpec,
    run: &RunConfig,
    chain: usize,
    mut sink: impl FnMut(&ChainDraw) -> Result<()>,
) -> Result<ChainDiagnostics> {
    let mut c = Chain::new(y, spec, run, chain)?;
    while !c.is_finished() {
        if let Some(draw) = c.step()? {
            sink(&draw)?;
        }
    }
    Ok(c.state.diagnostics.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub chain: usize,
    pub draws: Vec<ChainDraw>,
    pub diagnostics: ChainDiagnostics,
}

/// Runs all chains, in parallel when the `parallel` feature is enabled.
pub fn fit(y: &TimeSeries, spec: &ModelSpec, run: &RunConfig) -> Result<Vec<ChainOutput>> {
    let one = |chain: usize| -> Result<ChainOutput> {
        let mut draws = Vec::with_capacity(run.draws_per_chain());
        let diagnostics = fit_chain(y, spec, run, chain, |d| {
            draws.push(d.clone());
            Ok(())
        })?;
        Ok(ChainOutput {
            chain,
            draws,
            diagnostics,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..run.n_chains).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..run.n_chains).map(one).collect()
    }
}

/// Draws of every chain concatenated in chain order.
pub fn pooled_draws(outputs: &[ChainOutput]) -> Vec<ChainDraw> {
    outputs
        .iter()
        .flat_map(|o| o.draws.iter().cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate_params, simulate_series};
    use crate::types::HyperParams;

    fn small_data(seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, _) =
            simulate_params(3, 1, 0.5, &HyperParams::default_for(3), &mut rng).unwrap();
        simulate_series(&params, 80, 100, &mut rng).unwrap()
    }

    fn quick_run() -> RunConfig {
        RunConfig {
            n_chains: 2,
            n_warmup: 50,
            n_samples: 100,
            thin: 5,
            seed: 3,
            adapt_steps: 150,
            ..RunConfig::default()
        }
    }

    #[test]
    fn initial_state_is_valid_and_deterministic() {
        let y = small_data(1);
        let spec = ModelSpec::with_defaults(3, 2).unwrap();
        let a = initialize_state(&y, &spec, &mut chain_rng(4, 0)).unwrap();
        let b = initialize_state(&y, &spec, &mut chain_rng(4, 0)).unwrap();
        assert_eq!(a, b);
        a.0.validate(&spec).unwrap();
        crate::gwishart::check_precision(&a.1, &a.2).unwrap();
    }

    #[test]
    fn initial_target_finite_on_random_data() {
        let spec = ModelSpec::with_defaults(3, 2).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = TimeSeries::new(DMatrix::from_fn(30, 3, |_, _| rng.sample(StandardNormal)))
                .unwrap();
            let (x, k, _) = initialize_state(&y, &spec, &mut rng).unwrap();
            let target = ContinuousTarget::new(
                &spec,
                LagGram::new(&y, 2).unwrap(),
                x.gamma.clone(),
                k,
                false,
            )
            .unwrap();
            assert!(target.log_density(&spec.layout().pack(&x)).is_finite());
        }
    }

    #[test]
    fn ridge_handles_short_series() {
        // n - p < m: the residual covariance is singular without the ridge.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = TimeSeries::new(DMatrix::from_fn(5, 4, |_, _| rng.sample(StandardNormal))).unwrap();
        let spec = ModelSpec::with_defaults(4, 1).unwrap();
        let k = ridge_precision(&LagGram::new(&y, 1).unwrap(), &spec);
        assert!(crate::types::is_positive_definite(&k));
    }

    #[test]
    fn fit_emits_expected_draws_reproducibly() {
        let y = small_data(5);
        let spec = ModelSpec::with_defaults(3, 1).unwrap();
        let run = quick_run();
        let a = fit(&y, &spec, &run).unwrap();
        let b = fit(&y, &spec, &run).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        for out in &a {
            assert_eq!(out.draws.len(), 20);
            assert_eq!(out.draws[0].iteration, 55);
            for d in &out.draws {
                assert!(spectral_radius_of(&d.phi).unwrap() < 1.0);
                crate::gwishart::check_precision(&d.k, &d.g2).unwrap();
            }
        }
        assert_ne!(a[0].draws, a[1].draws);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let y = small_data(6);
        let spec = ModelSpec::with_defaults(3, 1).unwrap();
        let run = quick_run();
        let mut full = Vec::new();
        fit_chain(&y, &spec, &run, 0, |d| {
            full.push(d.clone());
            Ok(())
        })
        .unwrap();

        let mut c = Chain::new(&y, &spec, &run, 0).unwrap();
        let mut resumed = Vec::new();
        for _ in 0..230 {
            if let Some(d) = c.step().unwrap() {
                resumed.push(d);
            }
        }
        let saved = serde_json::to_string(c.state()).unwrap();
        let state: ChainState = serde_json::from_str(&saved).unwrap();
        let mut c = Chain::resume(&y, &spec, &run, state).unwrap();
        while !c.is_finished() {
            if let Some(d) = c.step().unwrap() {
                resumed.push(d);
            }
        }
        assert_eq!(full, resumed);
    }
}
