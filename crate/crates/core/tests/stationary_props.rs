use approx::assert_relative_eq;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use stable_gvar::stationary::*;

fn mats(v: &[f64], m: usize, p: usize) -> Vec<DMatrix<f64>> {
    v.chunks(m * m)
        .take(p)
        .map(|c| DMatrix::from_column_slice(m, m, c))
        .collect()
}

/// Roots of `x^p - a_1 x^{p-1} - ... - a_p` by Durand-Kerner iteration.
fn ar_poly_roots(a: &[f64]) -> Vec<Complex64> {
    let p = a.len();
    let eval = |x: Complex64| {
        let mut v = Complex64::new(1.0, 0.0);
        for &c in a {
            v = v * x - c;
        }
        v
    };
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..p).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..2000 {
        let prev = roots.clone();
        for i in 0..p {
            let denom: Complex64 = (0..p)
                .filter(|&j| j != i)
                .map(|j| roots[i] - roots[j])
                .product();
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
        }
        if roots.iter().zip(&prev).all(|(a, b)| (a - b).norm() < 1e-15) {
            break;
        }
    }
    roots
}

/// `|det|` of the numerical Jacobian of `(phi, nu) -> (Z, u)`.
fn fd_jacobian_det(phi: &[DMatrix<f64>], nu: f64) -> f64 {
    let (m, p) = (phi[0].nrows(), phi.len());
    let dim = m * m * p + 1;
    let flat = |phi: &[DMatrix<f64>], nu: f64| -> Vec<f64> {
        let (z, u) = forward_map(phi, nu).unwrap();
        z.iter()
            .flat_map(|a| a.iter().copied().collect::<Vec<_>>())
            .chain(std::iter::once(u))
            .collect()
    };
    let base: Vec<f64> = phi
        .iter()
        .flat_map(|a| a.iter().copied().collect::<Vec<_>>())
        .chain(std::iter::once(nu))
        .collect();
    let h = 1e-6;
    let mut jac = DMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[k] += h;
        minus[k] -= h;
        let fp = flat(&mats(&plus, m, p), plus[dim - 1]);
        let fm = flat(&mats(&minus, m, p), minus[dim - 1]);
        for r in 0..dim {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac.determinant().abs()
}

fn stable_params(raw: Vec<f64>, m: usize, p: usize, u: f64) -> Option<(Vec<DMatrix<f64>>, f64)> {
    let z = mats(&raw, m, p);
    inverse_map(&z, u).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inverse_then_forward_is_identity(
        m in 1usize..4, p in 1usize..5,
        raw in proptest::collection::vec(-2.0f64..2.0, 48),
        u in 0.01f64..0.99,
    ) {
        let z = mats(&raw, m, p);
        let (phi, nu) = inverse_map(&z, u).unwrap();
        prop_assert!(spectral_radius_of(&phi).unwrap() < 1.0);
        let (z2, u2) = forward_map(&phi, nu).unwrap();
        prop_assert!((u2 - u).abs() < 1e-10);
        for (a, b) in z.iter().zip(&z2) {
            prop_assert!((a - b).abs().max() < 1e-10 * (1.0 + a.abs().max()));
        }
    }

    #[test]
    fn forward_then_inverse_is_identity(
        m in 1usize..4, p in 1usize..4,
        raw in proptest::collection::vec(-2.0f64..2.0, 36),
        u in 0.05f64..0.95, nu in 0.2f64..5.0,
    ) {
        let (phi, _) = stable_params(raw, m, p, u).unwrap();
        let (z, u2) = forward_map(&phi, nu).unwrap();
        let (phi2, nu2) = inverse_map(&z, u2).unwrap();
        prop_assert!((nu2 - nu).abs() < 1e-10 * nu);
        for (a, b) in phi.iter().zip(&phi2) {
            prop_assert!((a - b).abs().max() < 1e-10);
        }
    }

    #[test]
    fn scalar_radius_matches_polynomial_roots(a in proptest::collection::vec(-1.5f64..1.5, 1..6)) {
        let phi: Vec<DMatrix<f64>> = a.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect();
        prop_assume!(a.iter().any(|&c| c != 0.0));
        let rho = spectral_radius_of(&phi).unwrap();
        let oracle = ar_poly_roots(&a).iter().map(|r| r.norm()).fold(0.0, f64::max);
        prop_assert!((rho - oracle).abs() < 1e-7 * (1.0 + oracle), "{} vs {}", rho, oracle);
    }

    #[test]
    fn radius_bounded_by_gelfand_norms(m in 1usize..4, p in 1usize..4, raw in proptest::collection::vec(-1.0f64..1.0, 36)) {
        let z = mats(&raw, m, p);
        let c = companion(&z).unwrap().materialize();
        let rho = spectral_radius_of(&z).unwrap();
        // rho <= ||C^k||^{1/k} for every k and every sub-multiplicative norm.
        let mut pow = c.clone();
        for k in 1..=16 {
            prop_assert!(rho <= pow.norm().powf(1.0 / k as f64) * (1.0 + 1e-9));
            pow = &pow * &c;
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(
        mp in prop_oneof![Just((1usize, 1usize)), Just((2, 1)), Just((2, 2))],
        raw in proptest::collection::vec(-1.5f64..1.5, 8),
        u in 0.1f64..0.9, nu in 0.5f64..2.0,
    ) {
        let (m, p) = mp;
        let Some((phi, _)) = stable_params(raw, m, p, u) else { return Ok(()) };
        let sr = spectral_radius(&companion(&phi).unwrap()).unwrap();
        prop_assume!(sr.gap > 1e-3);
        let exact = log_jacobian_det(&phi, nu).unwrap();
        let numeric = fd_jacobian_det(&phi, nu).ln();
        prop_assert!((exact - numeric).abs() < 1e-6 * exact.abs().max(1.0), "{} vs {}", exact, numeric);
    }
}

#[test]
fn durand_kerner_oracle_sanity() {
    // x^2 - 0.5x - 0.06 = (x - 0.6)(x + 0.1)
    let mut r: Vec<f64> = ar_poly_roots(&[0.5, 0.06]).iter().map(|c| c.re).collect();
    r.sort_by(f64::total_cmp);
    assert_relative_eq!(r[0], -0.1, epsilon = 1e-12);
    assert_relative_eq!(r[1], 0.6, epsilon = 1e-12);
}
