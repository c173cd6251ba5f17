use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stable_gvar::evaluate::{batch_means_se, ks_test, mean, std_normal_cdf, variance};
use stable_gvar::nuts::*;

struct DiagGauss(Vec<f64>);

impl LogDensity for DiagGauss {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for ((g, &xi), &s) in grad.iter_mut().zip(x).zip(&self.0) {
            lp -= 0.5 * (xi / s).powi(2);
            *g = -xi / (s * s);
        }
        lp
    }
}

/// Correlated bivariate Gaussian with unit variances.
struct Corr2(f64);

impl LogDensity for Corr2 {
    fn dim(&self) -> usize {
        2
    }
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.0;
        let d = 1.0 - r * r;
        grad[0] = -(x[0] - r * x[1]) / d;
        grad[1] = -(x[1] - r * x[0]) / d;
        -0.5 * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1]) / d
    }
}

fn sample<T: LogDensity>(
    target: &T,
    cfg: &NutsConfig,
    init: Vec<f64>,
    n: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<NutsStats>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = NutsState::new(target, init).unwrap();
    let mut draws = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(n);
    for _ in 0..n {
        let (next, st) = nuts_step(target, &state, cfg, &mut rng).unwrap();
        state = next;
        draws.push(state.position.clone());
        stats.push(st);
    }
    (draws, stats)
}

fn column(draws: &[Vec<f64>], k: usize) -> Vec<f64> {
    draws.iter().map(|d| d[k]).collect()
}

#[test]
fn standard_normal_moments() {
    let target = DiagGauss(vec![1.0; 10]);
    let mut cfg = NutsConfig::new(10);
    cfg.step_size = 0.5;
    let (draws, stats) = sample(&target, &cfg, vec![0.0; 10], 20_000, 1);
    for k in 0..10 {
        let x = column(&draws, k);
        let se = batch_means_se(&x);
        assert!(
            mean(&x).abs() < 4.0 * se,
            "coordinate {k}: mean {}",
            mean(&x)
        );
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert!(
            (mean(&sq) - 1.0).abs() < 4.0 * batch_means_se(&sq),
            "coordinate {k}: second moment {}",
            mean(&sq)
        );
    }
    assert!(stats.iter().all(|s| !s.divergent));
    // Thinned marginal is N(0, 1).
    let thinned: Vec<f64> = column(&draws, 0).into_iter().step_by(10).collect();
    let (_, p) = ks_test(&thinned, std_normal_cdf);
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn correlated_gaussian_covariance() {
    let target = Corr2(0.9);
    let mut cfg = NutsConfig::new(2);
    cfg.step_size = 0.2;
    let (draws, _) = sample(&target, &cfg, vec![0.0; 2], 20_000, 2);
    let prod: Vec<f64> = draws.iter().map(|d| d[0] * d[1]).collect();
    assert!(
        (mean(&prod) - 0.9).abs() < 4.0 * batch_means_se(&prod),
        "E[xy] {}",
        mean(&prod)
    );
}

#[test]
fn adaptation_learns_scales_and_acceptance() {
    let mut scales = vec![1.0; 10];
    scales[9] = 10.0;
    let target = DiagGauss(scales);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = run_window_adaptation(
        &target,
        vec![0.5; 10],
        AdaptationSchedule::new(1000),
        NutsConfig::new(10),
        &mut rng,
    )
    .unwrap();
    for &v in &out.config.inv_mass_diag[..9] {
        assert!((0.5..=2.0).contains(&v), "unit coordinate variance {v}");
    }
    let scaled = out.config.inv_mass_diag[9];
    assert!(
        (50.0..=200.0).contains(&scaled),
        "scaled coordinate variance {scaled}"
    );

    let (draws, stats) = sample(&target, &out.config, out.state.position.clone(), 4000, 4);
    let accept = mean(&stats.iter().map(|s| s.accept_stat).collect::<Vec<_>>());
    assert!((accept - 0.8).abs() < 0.1, "mean acceptance {accept}");
    let wide = column(&draws, 9);
    assert!(
        (variance(&wide) / 100.0 - 1.0).abs() < 0.25,
        "variance {}",
        variance(&wide)
    );
}

#[test]
fn ill_conditioned_without_adaptation_still_correct() {
    let target = DiagGauss(vec![0.01, 1.0]);
    let mut cfg = NutsConfig::new(2);
    cfg.step_size = 0.01;
    let (draws, stats) = sample(&target, &cfg, vec![0.0; 2], 10_000, 5);
    assert!(stats.iter().all(|s| !s.divergent));
    let x = column(&draws, 1);
    let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    assert!((mean(&sq) - 1.0).abs() < 4.0 * batch_means_se(&sq));
    let y = column(&draws, 0);
    assert!((variance(&y).sqrt() / 0.01 - 1.0).abs() < 0.1);
}
