//! The edge move and refresh against exact two-node posteriors and the
//! uniform graph prior.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stable_gvar::evaluate::batch_means_se;
use stable_gvar::ggm::{ggm_step, GgmConfig};
use stable_gvar::gwishart::initial_precision;
use stable_gvar::UndirectedGraph;
use statrs::function::gamma::ln_gamma;

/// `log int_0^inf exp(f(u)) du` by Simpson's rule around the mode.
fn log_quad(f: impl Fn(f64) -> f64, upper: f64) -> f64 {
    let n = 200_000;
    let h = upper / n as f64;
    let vals: Vec<f64> = (0..=n).map(|k| f((k as f64 * h).max(1e-300))).collect();
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (k, v) in vals.iter().enumerate() {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * (v - mx).exp();
    }
    mx + (s * h / 3.0).ln()
}

/// Normaliser of the 2x2 kernel on the full graph, by quadrature in the
/// Cholesky coordinates `A11 = a^2, A12 = a x, A22 = x^2 + b^2`
/// (Jacobian `4 a^2 b`), with `x` integrated in closed form.
fn log_i_full_quadrature(delta: f64, d: &DMatrix<f64>) -> f64 {
    let (d11, d12, d22) = (d[(0, 0)], d[(0, 1)], d[(1, 1)]);
    let schur = d11 - d12 * d12 / d22;
    let ua = 4.0 * ((delta + 2.0) / schur).sqrt() + 10.0 / schur.sqrt();
    let ub = 4.0 * ((delta + 2.0) / d22).sqrt() + 10.0 / d22.sqrt();
    let ia = log_quad(|a| 4f64.ln() + delta * a.ln() - 0.5 * a * a * schur, ua);
    let ib = log_quad(|b| (delta - 1.0) * b.ln() - 0.5 * b * b * d22, ub);
    0.5 * (2.0 * std::f64::consts::PI / d22).ln() + ia + ib
}

fn log_i_full_closed(delta: f64, d: &DMatrix<f64>) -> f64 {
    // Wishart with delta + 1 degrees of freedom.
    let nu = delta + 1.0;
    let gamma2 = 0.5 * std::f64::consts::PI.ln() + ln_gamma(nu / 2.0) + ln_gamma(nu / 2.0 - 0.5);
    nu * 2f64.ln() - 0.5 * nu * d.determinant().ln() + gamma2
}

fn log_i_empty_quadrature(delta: f64, d: &DMatrix<f64>) -> f64 {
    (0..2)
        .map(|i| {
            let di = d[(i, i)];
            // k = v^2 keeps the integrand smooth at the origin.
            log_quad(
                |v| 2f64.ln() + (delta - 1.0) * v.ln() - 0.5 * di * v * v,
                4.0 * ((delta + 2.0) / di).sqrt() + 10.0 / di.sqrt(),
            )
        })
        .sum()
}

fn log_i_empty_closed(delta: f64, d: &DMatrix<f64>) -> f64 {
    (0..2)
        .map(|i| ln_gamma(delta / 2.0) + 0.5 * delta * (2.0 / d[(i, i)]).ln())
        .sum()
}

#[test]
fn quadrature_matches_closed_forms() {
    let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.5]);
    for delta in [3.0, 7.5, 40.0] {
        assert!((log_i_full_quadrature(delta, &d) - log_i_full_closed(delta, &d)).abs() < 1e-8);
        assert!((log_i_empty_quadrature(delta, &d) - log_i_empty_closed(delta, &d)).abs() < 1e-8);
    }
}

fn two_node_data(n: usize, corr: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (1.0 - corr * corr).sqrt();
    let mut y = DMatrix::zeros(n, 2);
    for t in 0..n {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        y[(t, 0)] = a;
        y[(t, 1)] = corr * a + c * b;
    }
    y
}

#[test]
fn two_node_posterior_edge_probability() {
    let n = 200;
    let y = two_node_data(n, 0.2, 7);
    let s = y.transpose() * &y;
    let d = 3.0;
    let big_d = DMatrix::identity(2, 2);
    let post_d = &big_d + &s;
    let post_delta = d + n as f64;
    let log_bf = (log_i_full_quadrature(post_delta, &post_d) - log_i_full_quadrature(d, &big_d))
        - (log_i_empty_quadrature(post_delta, &post_d) - log_i_empty_quadrature(d, &big_d));
    let exact = 1.0 / (1.0 + (-log_bf).exp());

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g2 = UndirectedGraph::full(2);
    let mut k = initial_precision(&g2, &big_d);
    let cfg = GgmConfig::default();
    let iters = 60_000;
    let mut trace = Vec::with_capacity(iters);
    for t in 0..iters + 1000 {
        ggm_step(&mut k, &mut g2, &s, n, d, &big_d, &cfg, &mut rng).unwrap();
        if t >= 1000 {
            trace.push(if g2.has_edge(0, 1) { 1.0 } else { 0.0 });
        }
    }
    let freq = trace.iter().sum::<f64>() / iters as f64;
    let se = batch_means_se(&trace);
    println!("two-node edge probability: sampler {freq:.4} (se {se:.4}), exact {exact:.4}");
    assert!(exact > 0.1 && exact < 0.9, "uninformative oracle {exact}");
    assert!((freq - exact).abs() < 0.03);
}

#[test]
fn prior_edges_are_fair_coins() {
    let m = 3;
    let big_d = DMatrix::identity(m, m);
    let zero = DMatrix::zeros(m, m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g2 = UndirectedGraph::full(m);
    let mut k = initial_precision(&g2, &big_d);
    let cfg = GgmConfig {
        n_edge_proposals: 1,
        aux_sweeps: 20,
    };
    let iters = 40_000;
    let mut traces = vec![Vec::with_capacity(iters); 3];
    for _ in 0..iters {
        ggm_step(&mut k, &mut g2, &zero, 0, 3.0, &big_d, &cfg, &mut rng).unwrap();
        for (e, (a, b)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            traces[e].push(if g2.has_edge(a, b) { 1.0 } else { 0.0 });
        }
    }
    for tr in &traces {
        let freq = tr.iter().sum::<f64>() / iters as f64;
        let se = batch_means_se(tr);
        assert!(
            (freq - 0.5).abs() < 3.0 * se + 0.005,
            "edge frequency {freq} (se {se})"
        );
    }
}
