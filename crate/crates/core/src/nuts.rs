//! No-U-Turn sampler with multinomial trajectory sampling, a diagonal mass
//! matrix and windowed step-size / mass adaptation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy error above which a trajectory is declared divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Log density with gradient, evaluated in place.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Returns `log p(x)` and writes its gradient into `grad`. Points outside
    /// the support return `-inf`; `grad` is then unspecified.
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl LogDensity for crate::likelihood::ContinuousTarget {
    fn dim(&self) -> usize {
        crate::likelihood::ContinuousTarget::dim(self)
    }

    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        crate::likelihood::ContinuousTarget::logp_and_grad(self, x, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NutsConfig {
    pub max_tree_depth: usize,
    pub target_accept: f64,
    pub step_size: f64,
    pub inv_mass_diag: Vec<f64>,
}

impl NutsConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            max_tree_depth: 10,
            target_accept: 0.8,
            step_size: 0.1,
            inv_mass_diag: vec![1.0; dim],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_tree_depth < 1 {
            return Err(Error::InvalidParameter(
                "max_tree_depth must be at least 1".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidParameter(
                "target_accept must lie in (0, 1)".into(),
            ));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter("step_size must be positive".into()));
        }
        if self.inv_mass_diag.len() != dim
            || self
                .inv_mass_diag
                .iter()
                .any(|&v| !(v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidParameter(format!(
                "inv_mass_diag must be {dim} positive values"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NutsStats {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

/// Position with cached log density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct NutsState {
    pub position: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
}

impl NutsState {
    pub fn new<T: LogDensity + ?Sized>(target: &T, position: Vec<f64>) -> Result<Self> {
        if position.len() != target.dim() {
            return Err(Error::Dimension(format!(
                "state has {} entries, target {}",
                position.len(),
                target.dim()
            )));
        }
        let mut grad = vec![0.0; position.len()];
        let logp = target.logp_and_grad(&position, &mut grad);
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteInitialDensity);
        }
        Ok(Self {
            position,
            logp,
            grad,
        })
    }
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(inv_mass)
        .map(|(pi, mi)| pi * pi * mi)
        .sum::<f64>()
}

fn hamiltonian(z: &Point, inv_mass: &[f64]) -> f64 {
    let h = -z.logp + kinetic(&z.p, inv_mass);
    if h.is_nan() {
        f64::INFINITY
    } else {
        h
    }
}

/// One leapfrog step of size `eps` (negative to integrate backwards).
fn leapfrog<T: LogDensity + ?Sized>(target: &T, z: &mut Point, eps: f64, inv_mass: &[f64]) {
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
    for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(inv_mass) {
        *q += eps * m * p;
    }
    z.logp = target.logp_and_grad(&z.q, &mut z.grad);
    if !z.logp.is_finite() {
        z.logp = f64::NEG_INFINITY;
        return;
    }
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
}

/// Public leapfrog for integrator tests: returns `(q', p', logp')`.
pub fn leapfrog_step<T: LogDensity + ?Sized>(
    target: &T,
    q: &[f64],
    p: &[f64],
    eps: f64,
    inv_mass: &[f64],
) -> (Vec<f64>, Vec<f64>, f64) {
    let mut grad = vec![0.0; q.len()];
    let logp = target.logp_and_grad(q, &mut grad);
    let mut z = Point {
        q: q.to_vec(),
        p: p.to_vec(),
        grad,
        logp,
    };
    leapfrog(target, &mut z, eps, inv_mass);
    (z.q, z.p, z.logp)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sharp(p: &[f64], inv_mass: &[f64]) -> Vec<f64> {
    p.iter().zip(inv_mass).map(|(a, b)| a * b).collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_minus, rho) > 0.0 && dot(p_sharp_plus, rho) > 0.0
}

/// Edge momenta of a subtree: `beg` is the end adjacent to the existing
/// trajectory, `end` the far end.
struct Edges {
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    ps_beg: Vec<f64>,
    ps_end: Vec<f64>,
}

struct TreeCtx<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    inv_mass: &'a [f64],
    eps: f64,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<T: LogDensity + ?Sized> TreeCtx<'_, T> {
    /// Extends the trajectory from `z` by `2^depth` leapfrog steps. On return
    /// `z` is the far end, `propose` the multinomial pick within the subtree.
    fn build<R: Rng + ?Sized>(
        &mut self,
        depth: usize,
        z: &mut Point,
        propose: &mut Point,
        rho: &mut Vec<f64>,
        log_sum_weight: &mut f64,
        rng: &mut R,
    ) -> Option<Edges> {
        if depth == 0 {
            leapfrog(self.target, z, self.eps, self.inv_mass);
            self.n_leapfrog += 1;
            let h = hamiltonian(z, self.inv_mass);
            if h - self.h0 > MAX_ENERGY_ERROR {
                self.divergent = true;
                return None;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, self.h0 - h);
            self.sum_metro_prob += if self.h0 - h > 0.0 {
                1.0
            } else {
                (self.h0 - h).exp()
            };
            propose.clone_from(z);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            let ps = sharp(&z.p, self.inv_mass);
            return Some(Edges {
                p_beg: z.p.clone(),
                p_end: z.p.clone(),
                ps_beg: ps.clone(),
                ps_end: ps,
            });
        }

        let dim = z.q.len();
        let mut rho_left = vec![0.0; dim];
        let mut lsw_left = f64::NEG_INFINITY;
        let left = self.build(depth - 1, z, propose, &mut rho_left, &mut lsw_left, rng)?;

        let mut propose_right = z.clone();
        let mut rho_right = vec![0.0; dim];
        let mut lsw_right = f64::NEG_INFINITY;
        let right = self.build(
            depth - 1,
            z,
            &mut propose_right,
            &mut rho_right,
            &mut lsw_right,
            rng,
        )?;

        let lsw_subtree = log_add_exp(lsw_left, lsw_right);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        if lsw_right > lsw_subtree || rng.random::<f64>() < (lsw_right - lsw_subtree).exp() {
            *propose = propose_right;
        }

        let rho_subtree = add(&rho_left, &rho_right);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&left.ps_beg, &right.ps_end, &rho_subtree);
        persist &= no_u_turn(&left.ps_beg, &right.ps_beg, &add(&rho_left, &right.p_beg));
        persist &= no_u_turn(&left.ps_end, &right.ps_end, &add(&rho_right, &left.p_end));
        persist.then_some(Edges {
            p_beg: left.p_beg,
            p_end: right.p_end,
            ps_beg: left.ps_beg,
            ps_end: right.ps_end,
        })
    }
}

/// One NUTS transition from `state`.
pub fn nuts_step<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &NutsState,
    cfg: &NutsConfig,
    rng: &mut R,
) -> Result<(NutsState, NutsStats)> {
    if !state.logp.is_finite() {
        return Err(Error::NonFiniteInitialDensity);
    }
    let inv_mass = &cfg.inv_mass_diag;
    let p0: Vec<f64> = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let z0 = Point {
        q: state.position.clone(),
        p: p0,
        grad: state.grad.clone(),
        logp: state.logp,
    };
    let h0 = hamiltonian(&z0, inv_mass);

    let mut z_fwd = z0.clone();
    let mut z_bck = z0.clone();
    let mut z_sample = z0.clone();
    let ps0 = sharp(&z0.p, inv_mass);
    let mut fwd = Edges {
        p_beg: z0.p.clone(),
        p_end: z0.p.clone(),
        ps_beg: ps0.clone(),
        ps_end: ps0.clone(),
    };
    let mut bck = Edges {
        p_beg: z0.p.clone(),
        p_end: z0.p.clone(),
        ps_beg: ps0.clone(),
        ps_end: ps0,
    };
    let mut rho = z0.p.clone();
    let mut log_sum_weight = 0.0;
    let mut depth = 0;

    let mut ctx = TreeCtx {
        target,
        inv_mass,
        eps: cfg.step_size,
        h0,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    while depth < cfg.max_tree_depth {
        let mut rho_sub = vec![0.0; rho.len()];
        let mut lsw_sub = f64::NEG_INFINITY;
        let mut propose = z0.clone();
        let forward = rng.random::<bool>();
        ctx.eps = if forward {
            cfg.step_size
        } else {
            -cfg.step_size
        };
        let edges = if forward {
            ctx.build(
                depth,
                &mut z_fwd,
                &mut propose,
                &mut rho_sub,
                &mut lsw_sub,
                rng,
            )
        } else {
            ctx.build(
                depth,
                &mut z_bck,
                &mut propose,
                &mut rho_sub,
                &mut lsw_sub,
                rng,
            )
        };
        let Some(edges) = edges else { break };
        depth += 1;

        if lsw_sub > log_sum_weight || rng.random::<f64>() < (lsw_sub - log_sum_weight).exp() {
            z_sample = propose;
        }
        log_sum_weight = log_add_exp(log_sum_weight, lsw_sub);

        // Old trajectory momenta and the new subtree, glued at the seam.
        let rho_old = rho.clone();
        for (r, s) in rho.iter_mut().zip(&rho_sub) {
            *r += s;
        }
        let (seam_old, outer_old) = if forward { (&fwd, &bck) } else { (&bck, &fwd) };
        let mut persist = no_u_turn(&outer_old.ps_end, &edges.ps_end, &rho);
        persist &= no_u_turn(
            &outer_old.ps_end,
            &edges.ps_beg,
            &add(&rho_old, &edges.p_beg),
        );
        persist &= no_u_turn(
            &seam_old.ps_end,
            &edges.ps_end,
            &add(&rho_sub, &seam_old.p_end),
        );
        if forward {
            fwd = edges;
        } else {
            bck = edges;
        }
        if !persist {
            break;
        }
    }

    let n = ctx.n_leapfrog.max(1);
    let stats = NutsStats {
        accept_stat: ctx.sum_metro_prob / n as f64,
        tree_depth: depth,
        n_leapfrog: ctx.n_leapfrog,
        divergent: ctx.divergent,
        energy: hamiltonian(&z_sample, inv_mass),
    };
    Ok((
        NutsState {
            position: z_sample.q,
            logp: z_sample.logp,
            grad: z_sample.grad,
        },
        stats,
    ))
}

/// Heuristic initial step size: doubles or halves until a single leapfrog
/// step crosses acceptance 0.8.
pub fn find_reasonable_step_size<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    state: &NutsState,
    initial: f64,
    inv_mass: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let mut eps = initial;
    let threshold = 0.8f64.ln();
    let mut direction = 0i32;
    for _ in 0..100 {
        let p: Vec<f64> = inv_mass
            .iter()
            .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
            .collect();
        let mut z = Point {
            q: state.position.clone(),
            p,
            grad: state.grad.clone(),
            logp: state.logp,
        };
        let h0 = hamiltonian(&z, inv_mass);
        leapfrog(target, &mut z, eps, inv_mass);
        let delta = h0 - hamiltonian(&z, inv_mass);
        let up = delta > threshold;
        if direction == 0 {
            direction = if up { 1 } else { -1 };
        } else if (direction == 1) != up {
            break;
        }
        eps = if direction == 1 { eps * 2.0 } else { eps * 0.5 };
        if eps > 1e7 {
            return Err(Error::AdaptationFailed(
                "posterior is improper in some direction; step size diverged".into(),
            ));
        }
        if eps < 1e-300 {
            return Err(Error::AdaptationFailed(
                "no acceptable step size; try a smaller initial step".into(),
            ));
        }
    }
    Ok(eps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualAveraging {
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    pub delta: f64,
    mu: f64,
    log_eps_bar: f64,
    h_bar: f64,
    t: f64,
}

impl DualAveraging {
    pub fn new(delta: f64, eps: f64) -> Self {
        let mut da = Self {
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            delta,
            mu: 0.0,
            log_eps_bar: 0.0,
            h_bar: 0.0,
            t: 0.0,
        };
        da.restart(eps);
        da
    }

    pub fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.log_eps_bar = 0.0;
        self.h_bar = 0.0;
        self.t = 0.0;
    }

    /// Feeds one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        self.t += 1.0;
        let accept = if accept_stat.is_finite() {
            accept_stat.min(1.0)
        } else {
            0.0
        };
        let eta = 1.0 / (self.t + self.t0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.delta - accept);
        let log_eps = self.mu - self.t.sqrt() / self.gamma * self.h_bar;
        let w = self.t.powf(-self.kappa);
        self.log_eps_bar = w * log_eps + (1.0 - w) * self.log_eps_bar;
        log_eps.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Warm-up windows: an initial fast buffer, doubling slow windows for mass
/// estimation, and a terminal fast buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationSchedule {
    pub warmup_steps: usize,
    pub init_buffer: usize,
    pub term_buffer: usize,
    /// Half-open `[start, end)` slow windows.
    pub slow_windows: Vec<(usize, usize)>,
}

impl AdaptationSchedule {
    pub fn new(warmup_steps: usize) -> Self {
        Self::with_buffers(warmup_steps, 75, 50, 25)
    }

    pub fn with_buffers(warmup_steps: usize, init: usize, term: usize, base: usize) -> Self {
        let (init, term, base) = if init + term + base > warmup_steps {
            let i = (0.15 * warmup_steps as f64) as usize;
            let t = (0.1 * warmup_steps as f64) as usize;
            (i, t, warmup_steps.saturating_sub(i + t))
        } else {
            (init, term, base)
        };
        let slow_end = warmup_steps.saturating_sub(term);
        let mut windows = Vec::new();
        let mut start = init;
        let mut size = base;
        while start < slow_end && size > 0 {
            let mut end = start + size;
            // A window that would leave less than twice its size is stretched to the end.
            if end + 2 * size > slow_end {
                end = slow_end;
            }
            windows.push((start, end));
            start = end;
            size *= 2;
        }
        Self {
            warmup_steps,
            init_buffer: init,
            term_buffer: warmup_steps - slow_end.max(init),
            slow_windows: windows,
        }
    }

    pub fn in_slow_window(&self, step: usize) -> bool {
        self.slow_windows
            .iter()
            .any(|&(a, b)| step >= a && step < b)
    }

    pub fn ends_slow_window(&self, step: usize) -> bool {
        self.slow_windows.iter().any(|&(_, b)| step + 1 == b)
    }
}

/// Running per-coordinate mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// Sample variances shrunk towards `1e-3`.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 1.0 };
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        let dim = self.mean.len();
        *self = Self::new(dim);
    }
}

/// Resumable warm-up state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAdapter {
    pub schedule: AdaptationSchedule,
    pub config: NutsConfig,
    pub dual: DualAveraging,
    pub welford: Welford,
    pub step: usize,
    pub n_divergent: usize,
    pub accept_trace: Vec<f64>,
}

impl WindowAdapter {
    pub fn new(schedule: AdaptationSchedule, config: NutsConfig) -> Self {
        let dim = config.inv_mass_diag.len();
        let dual = DualAveraging::new(config.target_accept, config.step_size);
        Self {
            schedule,
            config,
            dual,
            welford: Welford::new(dim),
            step: 0,
            n_divergent: 0,
            accept_trace: Vec::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.warmup_steps
    }

    /// Runs one warm-up transition and updates the adaptation state.
    pub fn advance<T: LogDensity + ?Sized, R: Rng + ?Sized>(
        &mut self,
        target: &T,
        state: &NutsState,
        rng: &mut R,
    ) -> Result<NutsState> {
        let (next, stats) = nuts_step(target, state, &self.config, rng)?;
        self.n_divergent += usize::from(stats.divergent);
        self.accept_trace.push(stats.accept_stat);
        self.config.step_size = self.dual.update(stats.accept_stat);
        if self.schedule.in_slow_window(self.step) {
            self.welford.push(&next.position);
        }
        if self.schedule.ends_slow_window(self.step) {
            self.config.inv_mass_diag = self.welford.regularized_variance();
            self.welford.reset();
            self.config.step_size = find_reasonable_step_size(
                target,
                &next,
                self.config.step_size,
                &self.config.inv_mass_diag,
                rng,
            )?;
            self.dual.restart(self.config.step_size);
        }
        self.step += 1;
        if self.is_done() {
            if self.n_divergent == self.step {
                return Err(Error::AdaptationFailed(
                    "every warm-up transition diverged; try a smaller initial step size".into(),
                ));
            }
            self.config.step_size = self.dual.final_step_size();
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationOutcome {
    pub config: NutsConfig,
    pub state: NutsState,
    pub accept_trace: Vec<f64>,
    pub n_divergent: usize,
}

/// Runs the full warm-up from `init`.
pub fn run_window_adaptation<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: Vec<f64>,
    schedule: AdaptationSchedule,
    base: NutsConfig,
    rng: &mut R,
) -> Result<AdaptationOutcome> {
    if schedule.warmup_steps < 100 {
        return Err(Error::InvalidParameter(
            "window adaptation needs at least 100 steps".into(),
        ));
    }
    base.validate(target.dim())?;
    let mut state = NutsState::new(target, init)?;
    let mut cfg = base;
    cfg.step_size =
        find_reasonable_step_size(target, &state, cfg.step_size, &cfg.inv_mass_diag, rng)?;
    let mut adapter = WindowAdapter::new(schedule, cfg);
    while !adapter.is_done() {
        state = adapter.advance(target, &state, rng)?;
    }
    Ok(AdaptationOutcome {
        config: adapter.config,
        state,
        accept_trace: adapter.accept_trace,
        n_divergent: adapter.n_divergent,
    })
}
