//! Companion matrices, spectral radii and the zero-preserving bijection
//! between stationary coefficients `(phi, nu)` and unconstrained `(Z, u)`.
//!
//! The forward map is `Z_s = nu^s phi_s`, `u = rho(C_phi)`; the inverse is
//! `phi_s = u^s Z_s / rho(C_z)^s`, `nu = rho(C_z) / u`. Every entry is scaled
//! by a strictly positive number, so zeros are preserved exactly, and
//! `rho(C_phi) = u < 1` for every output of the inverse map.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Modulus gap below which the dominant eigenvalue is treated as non-simple.
pub const DEGENERATE_GAP_TOL: f64 = 1e-8;
/// Step of the central finite-difference fallback for the spectral-radius gradient.
pub const FD_STEP: f64 = 1e-6;
/// Spectral radius below which the companion counts as nilpotent.
pub const NILPOTENT_TOL: f64 = 1e-300;

const SCHUR_EPS: f64 = 1e-14;
const SCHUR_MAX_ITER: usize = 10_000;

/// Block companion matrix, stored as its top block row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompanionMatrix {
    blocks: Vec<DMatrix<f64>>,
}

impl CompanionMatrix {
    pub fn m(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn order(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Dense `mp x mp` form.
    pub fn materialize(&self) -> DMatrix<f64> {
        let (m, p) = (self.m(), self.order());
        let mut c = DMatrix::zeros(m * p, m * p);
        for (s, b) in self.blocks.iter().enumerate() {
            c.view_mut((0, s * m), (m, m)).copy_from(b);
        }
        for k in m..m * p {
            c[(k, k - m)] = 1.0;
        }
        c
    }

    /// Top block row as one `m x mp` matrix.
    pub fn top_row(&self) -> DMatrix<f64> {
        let (m, p) = (self.m(), self.order());
        let mut b = DMatrix::zeros(m, m * p);
        for (s, blk) in self.blocks.iter().enumerate() {
            b.view_mut((0, s * m), (m, m)).copy_from(blk);
        }
        b
    }
}

pub fn companion(mats: &[DMatrix<f64>]) -> Result<CompanionMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Dimension("need at least one lag matrix".into()))?;
    let m = first.nrows();
    if m == 0 || mats.iter().any(|a| a.shape() != (m, m)) {
        return Err(Error::Dimension(
            "lag matrices must all be square and of equal size".into(),
        ));
    }
    Ok(CompanionMatrix {
        blocks: mats.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralRadius {
    pub rho: f64,
    pub dominant_eigenvalue: Complex64,
    /// Modulus gap between the dominant eigenvalue (with its conjugate, if
    /// complex) and the next eigenvalue.
    pub gap: f64,
}

/// All eigenvalues of a dense real matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if pattern_is_acyclic(a) {
        return Ok(vec![Complex64::new(0.0, 0.0); a.nrows()]);
    }
    if a.nrows() == 1 {
        return Ok(vec![Complex64::new(a[(0, 0)], 0.0)]);
    }
    let schur = nalgebra::Schur::try_new(a.clone(), SCHUR_EPS, SCHUR_MAX_ITER)
        .ok_or(Error::EigenNonConvergence)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// True when the digraph with an arc `i -> j` for every non-zero `a_ij` has
/// no cycle. Such a matrix is permutation-similar to a strictly triangular
/// one, so it is nilpotent exactly; Schur would only return eigenvalues at
/// rounding level, which is useless for detecting a zero spectral radius.
pub fn pattern_is_acyclic(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let mut indegree = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut stack: Vec<usize> = (0..n).filter(|&j| indegree[j] == 0).collect();
    let mut seen = 0;
    while let Some(i) = stack.pop() {
        seen += 1;
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    stack.push(j);
                }
            }
        }
    }
    seen == n
}

pub fn spectral_radius(c: &CompanionMatrix) -> Result<SpectralRadius> {
    spectrum_summary(&eigenvalues(&c.materialize())?)
}

fn spectrum_summary(eigs: &[Complex64]) -> Result<SpectralRadius> {
    if eigs.iter().any(|l| !l.re.is_finite() || !l.im.is_finite()) {
        return Err(Error::EigenNonConvergence);
    }
    // Dominant eigenvalue; among a conjugate pair prefer the upper half-plane member.
    let mut dom = 0;
    for (k, l) in eigs.iter().enumerate() {
        let (nk, nd) = (l.norm(), eigs[dom].norm());
        if nk > nd || (nk == nd && l.im > eigs[dom].im) {
            dom = k;
        }
    }
    let lambda = eigs[dom];
    let rho = lambda.norm();
    let partner = (lambda.im != 0.0).then(|| {
        let target = lambda.conj();
        (0..eigs.len()).filter(|&k| k != dom).min_by(|&a, &b| {
            (eigs[a] - target)
                .norm()
                .total_cmp(&(eigs[b] - target).norm())
        })
    });
    let partner = partner.flatten();
    let next = eigs
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != dom && Some(k) != partner)
        .map(|(_, l)| l.norm())
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
    Ok(SpectralRadius {
        rho,
        dominant_eigenvalue: lambda,
        gap: rho - next.unwrap_or(0.0),
    })
}

/// Spectral radius of the companion built from `mats`.
pub fn spectral_radius_of(mats: &[DMatrix<f64>]) -> Result<f64> {
    Ok(spectral_radius(&companion(mats)?)?.rho)
}

/// `(phi, nu) -> (Z, u)`.
pub fn forward_map(phi: &[DMatrix<f64>], nu: f64) -> Result<(Vec<DMatrix<f64>>, f64)> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "nu must be positive, got {nu}"
        )));
    }
    let rho = spectral_radius(&companion(phi)?)?.rho;
    if rho >= 1.0 {
        return Err(Error::NonStationary(rho));
    }
    let z = phi
        .iter()
        .enumerate()
        .map(|(s, ph)| ph * nu.powi(s as i32 + 1))
        .collect();
    Ok((z, rho))
}

/// `(Z, u) -> (phi, nu)`. The output always satisfies `rho(C_phi) = u`.
pub fn inverse_map(z: &[DMatrix<f64>], u: f64) -> Result<(Vec<DMatrix<f64>>, f64)> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "u must lie in (0,1), got {u}"
        )));
    }
    let rho_z = spectral_radius(&companion(z)?)?.rho;
    inverse_map_with_radius(z, u, rho_z)
}

/// Inverse map when `rho(C_z)` is already known.
pub fn inverse_map_with_radius(
    z: &[DMatrix<f64>],
    u: f64,
    rho_z: f64,
) -> Result<(Vec<DMatrix<f64>>, f64)> {
    if !(rho_z >= NILPOTENT_TOL) {
        return Err(Error::NilpotentCompanion(rho_z));
    }
    let scale = u / rho_z;
    let phi = z
        .iter()
        .enumerate()
        .map(|(s, zs)| zs * scale.powi(s as i32 + 1))
        .collect();
    Ok((phi, rho_z / u))
}

/// `log |J|` of the forward map: `(q - 1) log nu + log rho(C_phi)` with
/// `q = m^2 p (p + 1) / 2`.
pub fn log_jacobian_det(phi: &[DMatrix<f64>], nu: f64) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "nu must be positive, got {nu}"
        )));
    }
    let c = companion(phi)?;
    let rho = spectral_radius(&c)?.rho;
    if rho <= 0.0 {
        return Err(Error::NilpotentCompanion(rho));
    }
    let (m, p) = (c.m() as f64, c.order() as f64);
    let q = m * m * p * (p + 1.0) / 2.0;
    Ok((q - 1.0) * nu.ln() + rho.ln())
}

/// Solves for an eigenvector of `a` at eigenvalue `lambda` by shifted inverse iteration.
fn eigenvector(a: &DMatrix<f64>, lambda: Complex64) -> Option<DVector<Complex64>> {
    let n = a.nrows();
    let shift = lambda + Complex64::new(1e-10 * lambda.norm().max(1.0), 0.0);
    let mut shifted: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    for k in 0..n {
        shifted[(k, k)] -= shift;
    }
    let lu = shifted.lu();
    let mut v = DVector::from_fn(n, |k, _| {
        Complex64::new(1.0 + 0.1 * k as f64, 0.05 * k as f64)
    });
    for _ in 0..3 {
        v = lu.solve(&v)?;
        let norm = v.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        v.unscale_mut(norm);
    }
    Some(v)
}

/// Gradient of `rho(C)` with respect to the top block row of `C`, returned
/// as one `m x m` matrix per lag.
///
/// Uses `d rho / d C_ij = Re(conj(lambda) / |lambda| * w_i r_j / (w^T r))`
/// with `C r = lambda r` and `C^T w = lambda w`.
pub fn spectral_radius_gradient(c: &CompanionMatrix) -> Result<Vec<DMatrix<f64>>> {
    let dense = c.materialize();
    let sr = spectrum_summary(&eigenvalues(&dense)?)?;
    if sr.gap < DEGENERATE_GAP_TOL || sr.rho <= 0.0 {
        return Err(Error::DegenerateSpectrum(sr.gap));
    }
    let lambda = sr.dominant_eigenvalue;
    let right = eigenvector(&dense, lambda).ok_or(Error::DegenerateSpectrum(sr.gap))?;
    let left = eigenvector(&dense.transpose(), lambda).ok_or(Error::DegenerateSpectrum(sr.gap))?;
    let denom = left
        .iter()
        .zip(right.iter())
        .map(|(w, r)| w * r)
        .sum::<Complex64>();
    // Nearly orthogonal left/right vectors mean a nearly defective eigenvalue.
    if denom.norm() < 1e-8 {
        return Err(Error::DegenerateSpectrum(sr.gap));
    }
    let phase = lambda.conj() / (sr.rho * denom);
    let (m, p) = (c.m(), c.order());
    Ok((0..p)
        .map(|s| DMatrix::from_fn(m, m, |i, j| (phase * left[i] * right[s * m + j]).re))
        .collect())
}

/// Central finite-difference gradient of `rho(C)` over the top block row.
pub fn spectral_radius_gradient_fd(c: &CompanionMatrix, h: f64) -> Result<Vec<DMatrix<f64>>> {
    let mut blocks = c.blocks.clone();
    let (m, p) = (c.m(), c.order());
    let mut grad = vec![DMatrix::zeros(m, m); p];
    for s in 0..p {
        for j in 0..m {
            for i in 0..m {
                let orig = blocks[s][(i, j)];
                blocks[s][(i, j)] = orig + h;
                let up = spectral_radius_of(&blocks)?;
                blocks[s][(i, j)] = orig - h;
                let down = spectral_radius_of(&blocks)?;
                blocks[s][(i, j)] = orig;
                grad[s][(i, j)] = (up - down) / (2.0 * h);
            }
        }
    }
    Ok(grad)
}

/// Analytic gradient, falling back to finite differences on a degenerate spectrum.
pub fn spectral_radius_gradient_robust(c: &CompanionMatrix) -> Result<Vec<DMatrix<f64>>> {
    match spectral_radius_gradient(c) {
        Err(Error::DegenerateSpectrum(_)) => spectral_radius_gradient_fd(c, FD_STEP),
        other => other,
    }
}
