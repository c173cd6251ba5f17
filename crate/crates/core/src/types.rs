//! Domain types shared by every stage of the pipeline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default threshold below which an externally supplied coefficient counts as zero.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

/// An `n x m` panel of observations, one row per time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    data: DMatrix<f64>,
    names: Vec<String>,
}

impl TimeSeries {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let names = (1..=data.ncols()).map(|k| format!("y{k}")).collect();
        Self::with_names(data, names)
    }

    pub fn with_names(data: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidData("time series must be non-empty".into()));
        }
        if names.len() != data.ncols() {
            return Err(Error::Dimension(format!(
                "{} names for {} variables",
                names.len(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (t, k) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::InvalidData(format!(
                "non-finite value at row {}, column {}",
                t + 1,
                k + 1
            )));
        }
        Ok(Self { data, names })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Observation at zero-based time index `t` as a column vector.
    pub fn obs(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }

    /// The first `len` observations.
    pub fn head(&self, len: usize) -> TimeSeries {
        TimeSeries {
            data: self.data.rows(0, len).into_owned(),
            names: self.names.clone(),
        }
    }

    /// Checks the series is long enough to condition on `p` lags.
    pub fn check_order(&self, p: usize) -> Result<()> {
        if self.n() <= p {
            return Err(Error::InvalidData(format!(
                "series has {} observations; need more than the model order {}",
                self.n(),
                p
            )));
        }
        Ok(())
    }
}

/// Prior for the mean of the diagonal effect sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuMode {
    /// Diagonal effect sizes centred on a known value (usually zero).
    Fixed { value: f64 },
    /// `mu ~ N(f1, f2^2)`.
    Random { f1: f64, f2: f64 },
}

impl Default for MuMode {
    fn default() -> Self {
        MuMode::Fixed { value: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub e1: f64,
    pub e2: f64,
    pub d: f64,
    pub big_d: DMatrix<f64>,
    pub mu_mode: MuMode,
}

impl HyperParams {
    /// Defaults used in the simulation study, with `D = I_m`.
    pub fn default_for(m: usize) -> Self {
        Self {
            a1: 1.0,
            a2: 1.0,
            b1: 2.01,
            b2: 1.01,
            c1: 2.0,
            c2: 2.0,
            e1: 2.01,
            e2: 1.01,
            d: 3.0,
            big_d: DMatrix::identity(m, m),
            mu_mode: MuMode::default(),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        let positive = [
            ("a1", self.a1),
            ("a2", self.a2),
            ("b1", self.b1),
            ("b2", self.b2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("e1", self.e1),
            ("e2", self.e2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.d > 2.0) {
            return Err(Error::InvalidParameter(format!(
                "d must exceed 2, got {}",
                self.d
            )));
        }
        if self.big_d.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "D is {:?}, expected {m}x{m}",
                self.big_d.shape()
            )));
        }
        if !is_symmetric(&self.big_d, 1e-12) || !is_positive_definite(&self.big_d) {
            return Err(Error::NotPositiveDefinite(
                "D must be symmetric positive definite".into(),
            ));
        }
        if let MuMode::Random { f2, .. } = self.mu_mode {
            if !(f2 > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "f2 must be positive, got {f2}"
                )));
            }
        }
        Ok(())
    }

    pub fn random_mu(&self) -> bool {
        matches!(self.mu_mode, MuMode::Random { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub m: usize,
    pub p: usize,
    pub hyper: HyperParams,
}

impl ModelSpec {
    pub fn new(m: usize, p: usize, hyper: HyperParams) -> Result<Self> {
        if m == 0 || p == 0 {
            return Err(Error::InvalidParameter(format!(
                "need m >= 1 and p >= 1, got m={m}, p={p}"
            )));
        }
        hyper.validate(m)?;
        Ok(Self { m, p, hyper })
    }

    pub fn with_defaults(m: usize, p: usize) -> Result<Self> {
        Self::new(m, p, HyperParams::default_for(m))
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            m: self.m,
            p: self.p,
            random_mu: self.hyper.random_mu(),
        }
    }

    /// Number of off-diagonal indicators, `p m (m - 1)`.
    pub fn n_indicators(&self) -> usize {
        self.p * self.m * (self.m - 1)
    }
}

/// Stationary coefficient matrices together with the error precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableVarParams {
    pub phi: Vec<DMatrix<f64>>,
    pub k: DMatrix<f64>,
}

/// The parameter-expanded representation sampled by the MCMC scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedParams {
    pub z_tilde: Vec<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<bool>>,
    pub u: f64,
    pub tau: f64,
    pub vartheta: f64,
    pub omega: f64,
    pub mu: Option<f64>,
}

impl ExpandedParams {
    pub fn m(&self) -> usize {
        self.z_tilde.first().map_or(0, |z| z.nrows())
    }

    pub fn p(&self) -> usize {
        self.z_tilde.len()
    }

    /// `Z_s = Gamma_s o Z~_s`.
    pub fn z(&self) -> Vec<DMatrix<f64>> {
        self.z_tilde
            .iter()
            .zip(&self.gamma)
            .map(|(zt, g)| {
                DMatrix::from_fn(zt.nrows(), zt.ncols(), |i, j| {
                    if g[(i, j)] {
                        zt[(i, j)]
                    } else {
                        0.0
                    }
                })
            })
            .collect()
    }

    /// Number of active off-diagonal indicators.
    pub fn n_active(&self) -> usize {
        self.gamma
            .iter()
            .map(|g| {
                let m = g.nrows();
                (0..m)
                    .flat_map(|j| (0..m).map(move |i| (i, j)))
                    .filter(|&(i, j)| i != j && g[(i, j)])
                    .count()
            })
            .sum()
    }

    /// Mean used for the diagonal effect sizes.
    pub fn diag_mean(&self, hyper: &HyperParams) -> f64 {
        match hyper.mu_mode {
            MuMode::Fixed { value } => value,
            MuMode::Random { .. } => self.mu.unwrap_or(0.0),
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let (m, p) = (spec.m, spec.p);
        if self.z_tilde.len() != p || self.gamma.len() != p {
            return Err(Error::Dimension(format!("expected {p} lag matrices")));
        }
        for (zt, g) in self.z_tilde.iter().zip(&self.gamma) {
            if zt.shape() != (m, m) || g.shape() != (m, m) {
                return Err(Error::Dimension(format!("lag matrices must be {m}x{m}")));
            }
            if (0..m).any(|i| !g[(i, i)]) {
                return Err(Error::InvalidParameter(
                    "diagonal indicators must be fixed at 1".into(),
                ));
            }
            if zt.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite effect size".into()));
            }
        }
        if !(self.u > 0.0 && self.u < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "u must lie in (0,1), got {}",
                self.u
            )));
        }
        if !(self.vartheta > 0.0 && self.vartheta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "vartheta must lie in (0,1), got {}",
                self.vartheta
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite())
            || !(self.omega > 0.0 && self.omega.is_finite())
        {
            return Err(Error::InvalidParameter(
                "tau and omega must be positive".into(),
            ));
        }
        if spec.hyper.random_mu() != self.mu.is_some() {
            return Err(Error::InvalidParameter(
                "mu must be present exactly when its prior is random".into(),
            ));
        }
        Ok(())
    }
}

/// Undirected graph on `m` vertices stored as a symmetric adjacency matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndirectedGraph {
    adj: DMatrix<bool>,
}

impl UndirectedGraph {
    pub fn empty(m: usize) -> Self {
        Self {
            adj: DMatrix::from_element(m, m, false),
        }
    }

    pub fn full(m: usize) -> Self {
        Self {
            adj: DMatrix::from_fn(m, m, |i, j| i != j),
        }
    }

    pub fn from_adjacency(adj: DMatrix<bool>) -> Result<Self> {
        let m = adj.nrows();
        if adj.ncols() != m {
            return Err(Error::Dimension("adjacency must be square".into()));
        }
        for i in 0..m {
            if adj[(i, i)] {
                return Err(Error::InvalidParameter(format!("self-loop at vertex {i}")));
            }
            for j in 0..i {
                if adj[(i, j)] != adj[(j, i)] {
                    return Err(Error::InvalidParameter(
                        "adjacency must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(Self { adj })
    }

    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(m);
        for &(a, b) in edges {
            if a == b || a >= m || b >= m {
                return Err(Error::InvalidParameter(format!("invalid edge ({a}, {b})")));
            }
            g.set_edge(a, b, true);
        }
        Ok(g)
    }

    pub fn m(&self) -> usize {
        self.adj.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<bool> {
        &self.adj
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[(a, b)]
    }

    pub fn set_edge(&mut self, a: usize, b: usize, present: bool) {
        debug_assert_ne!(a, b);
        self.adj[(a, b)] = present;
        self.adj[(b, a)] = present;
    }

    pub fn toggle(&mut self, a: usize, b: usize) {
        let present = self.has_edge(a, b);
        self.set_edge(a, b, !present);
    }

    /// Edges `(a, b)` with `a < b`, ordered by `b` then `a`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let m = self.m();
        (0..m)
            .flat_map(|b| (0..b).map(move |a| (a, b)))
            .filter(|&(a, b)| self.adj[(a, b)])
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.edges().len()
    }
}

/// Directed (Granger-causal) and undirected (contemporaneous) edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedGraph {
    pub m: usize,
    /// Entry `(b, a)` is set iff `a -> b`.
    pub directed: DMatrix<bool>,
    pub undirected: UndirectedGraph,
}

impl MixedGraph {
    /// Builds the graph from dense coefficient matrices.
    pub fn from_coefficients(phi: &[DMatrix<f64>], g2: &UndirectedGraph, zero_tol: f64) -> Self {
        let m = g2.m();
        let directed = DMatrix::from_fn(m, m, |b, a| {
            a != b && phi.iter().any(|ph| ph[(b, a)].abs() > zero_tol)
        });
        Self {
            m,
            directed,
            undirected: g2.clone(),
        }
    }

    /// Builds the graph from spike-and-slab indicators.
    pub fn from_indicators(gamma: &[DMatrix<bool>], g2: &UndirectedGraph) -> Self {
        let m = g2.m();
        let directed = DMatrix::from_fn(m, m, |b, a| a != b && gamma.iter().any(|g| g[(b, a)]));
        Self {
            m,
            directed,
            undirected: g2.clone(),
        }
    }

    pub fn n_directed(&self) -> usize {
        self.directed.iter().filter(|&&e| e).count()
    }
}

/// One stored posterior sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraw {
    pub iteration: u64,
    pub expanded: ExpandedParams,
    pub phi: Vec<DMatrix<f64>>,
    pub k: DMatrix<f64>,
    pub g2: UndirectedGraph,
}

/// Mixed graph of a posterior draw. Indicators are authoritative; `zero_tol`
/// only matters for draws whose indicators are unavailable.
pub fn derive_mixed_graph(draw: &ChainDraw, zero_tol: f64) -> MixedGraph {
    if draw.expanded.gamma.len() == draw.phi.len() && !draw.expanded.gamma.is_empty() {
        MixedGraph::from_indicators(&draw.expanded.gamma, &draw.g2)
    } else {
        MixedGraph::from_coefficients(&draw.phi, &draw.g2, zero_tol)
    }
}

/// Layout of the continuous parameter vector:
/// `vec(Z~_1), ..., vec(Z~_p), logit u, logit vartheta, log tau, log omega[, mu]`,
/// where `vec` stacks columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub m: usize,
    pub p: usize,
    pub random_mu: bool,
}

impl ParamLayout {
    pub fn dim(&self) -> usize {
        self.p * self.m * self.m + 4 + usize::from(self.random_mu)
    }

    /// Index of `z~_{s,ij}` (zero-based `s`).
    pub fn z_index(&self, s: usize, i: usize, j: usize) -> usize {
        s * self.m * self.m + j * self.m + i
    }

    pub fn logit_u(&self) -> usize {
        self.p * self.m * self.m
    }

    pub fn logit_vartheta(&self) -> usize {
        self.logit_u() + 1
    }

    pub fn log_tau(&self) -> usize {
        self.logit_u() + 2
    }

    pub fn log_omega(&self) -> usize {
        self.logit_u() + 3
    }

    pub fn mu(&self) -> Option<usize> {
        self.random_mu.then(|| self.logit_u() + 4)
    }

    pub fn pack(&self, x: &ExpandedParams) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.dim());
        for zt in &x.z_tilde {
            theta.extend_from_slice(zt.as_slice());
        }
        theta.push(logit(x.u));
        theta.push(logit(x.vartheta));
        theta.push(x.tau.ln());
        theta.push(x.omega.ln());
        if self.random_mu {
            theta.push(x.mu.unwrap_or(0.0));
        }
        theta
    }

    /// Inverse of [`pack`](Self::pack); indicators are supplied separately.
    pub fn unpack(&self, theta: &[f64], gamma: &[DMatrix<bool>]) -> ExpandedParams {
        let mm = self.m * self.m;
        let z_tilde = (0..self.p)
            .map(|s| DMatrix::from_column_slice(self.m, self.m, &theta[s * mm..(s + 1) * mm]))
            .collect();
        ExpandedParams {
            z_tilde,
            gamma: gamma.to_vec(),
            u: sigmoid(theta[self.logit_u()]),
            vartheta: sigmoid(theta[self.logit_vartheta()]),
            tau: theta[self.log_tau()].exp(),
            omega: theta[self.log_omega()].exp(),
            mu: self.mu().map(|k| theta[k]),
        }
    }

    /// Human-readable name of each coordinate, one-based indices.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        for s in 0..self.p {
            for j in 0..self.m {
                for i in 0..self.m {
                    out.push(format!("z_tilde[{},{},{}]", s + 1, i + 1, j + 1));
                }
            }
        }
        out.extend(["logit_u", "logit_vartheta", "log_tau", "log_omega"].map(String::from));
        if self.random_mu {
            out.push("mu".into());
        }
        out
    }
}

/// Indicator matrices with every entry set (diagonal included).
pub fn all_active(m: usize, p: usize) -> Vec<DMatrix<bool>> {
    vec![DMatrix::from_element(m, m, true); p]
}

pub fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    a.is_square()
        && (0..a.nrows())
            .all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol * (1.0 + a[(i, j)].abs())))
}

pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.is_square() && a.clone().cholesky().is_some()
}
