//! Rotations, Euler angles, Wigner matrices, coupling coefficients, and
//! quadrature on SO(3).
//!
//! Euler angles follow the z-y-z convention: R(α, β, γ) = Rz(α)·Ry(β)·Rz(γ)
//! with β ∈ [0, π]. Wigner matrices use the phase convention matched to the
//! harmonics in [`crate::sphharm`], so the covariance identity
//! Y_{nm}(R⁻¹x̂) = Σ_{m'} D^n_{m'm}(R)·Y_{nm'}(x̂) holds exactly for both the
//! complex and the real basis. Matrix rows and columns are indexed by
//! ascending m ∈ {−j, …, j} throughout (index m + j).

mod wigner;

pub use wigner::{
    clebsch_gordan, kronecker_decompose, real_coupling, real_structure_matrix,
    wigner_d_matrix, wigner_d_real, wigner_small_d,
};

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};
use thiserror::Error;

/// Unnormalized volume of SO(3) in Euler coordinates, ∫ dα sinβ dβ dγ.
pub const HAAR_VOLUME: f64 = 8.0 * PI * PI;

/// Errors from rotation utilities and SO(3) quadrature.
#[derive(Debug, Clone, Error)]
pub enum So3Error {
    #[error("quadrature order must be at least 1, got {order}")]
    OrderTooSmall { order: u32 },
}

/// Builds the rotation Rz(α)·Ry(β)·Rz(γ).
pub fn rotation_from_euler(alpha: f64, beta: f64, gamma: f64) -> Rotation3<f64> {
    let rz_a = Rotation3::from_axis_angle(&Vector3::z_axis(), alpha);
    let ry_b = Rotation3::from_axis_angle(&Vector3::y_axis(), beta);
    let rz_g = Rotation3::from_axis_angle(&Vector3::z_axis(), gamma);
    rz_a * ry_b * rz_g
}

/// Recovers z-y-z Euler angles (α, β, γ) with β ∈ [0, π] and α, γ ∈ (−π, π].
///
/// At the gimbal-locked cases β ∈ {0, π} only α ± γ is determined; the
/// convention γ = 0 is used there.
pub fn euler_from_rotation(r: &Rotation3<f64>) -> (f64, f64, f64) {
    let m: &Matrix3<f64> = r.matrix();
    let sin_beta = (m[(0, 2)].powi(2) + m[(1, 2)].powi(2)).sqrt();
    let beta = sin_beta.atan2(m[(2, 2)]);
    if sin_beta > 1e-12 {
        let alpha = m[(1, 2)].atan2(m[(0, 2)]);
        let gamma = m[(2, 1)].atan2(-m[(2, 0)]);
        (alpha, beta, gamma)
    } else if m[(2, 2)] > 0.0 {
        // R = Rz(α + γ); put everything into α.
        let alpha = m[(1, 0)].atan2(m[(0, 0)]);
        (alpha, 0.0, 0.0)
    } else {
        // R = Rz(α)·Ry(π): first row is (−cos α, −sin α, 0).
        let alpha = (-m[(0, 1)]).atan2(-m[(0, 0)]);
        (alpha, PI, 0.0)
    }
}

/// Gauss–Legendre nodes and weights on [−1, 1]; exact for polynomials of
/// degree ≤ 2n − 1.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Standard initial guess followed by Newton iteration on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

/// Legendre polynomial P_n(x) and its derivative by the standard recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0_f64;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// One node of an SO(3) quadrature rule.
#[derive(Debug, Clone)]
pub struct SO3Node {
    pub rotation: Rotation3<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Weight against the normalized Haar measure (weights sum to 1).
    pub weight: f64,
}

/// A quadrature rule on SO(3) against the normalized Haar measure.
#[derive(Debug, Clone)]
pub struct SO3Quadrature {
    pub order: u32,
    pub nodes: Vec<SO3Node>,
}

impl SO3Quadrature {
    /// Integral of `f` against the normalized Haar measure.
    pub fn integrate<F: FnMut(&SO3Node) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().map(|n| n.weight * f(n)).sum()
    }
}

/// Product quadrature on SO(3): uniform grids of 2·order+1 points in α and
/// γ, Gauss–Legendre with order+1 points in cos β.
///
/// The rule integrates any product D^{j}_{m'm}·D^{j'}_{μ'μ} of Wigner-matrix
/// entries exactly for j, j' ≤ order: the uniform grids annihilate the
/// surviving α/γ frequencies (bounded by 2·order) and Gauss–Legendre handles
/// the resulting polynomial of degree ≤ j + j' in cos β. Weights sum to 1.
pub fn so3_quadrature(order: u32) -> Result<SO3Quadrature, So3Error> {
    if order < 1 {
        return Err(So3Error::OrderTooSmall { order });
    }
    let n_angle = (2 * order + 1) as usize;
    let gl = gauss_legendre(order as usize + 1);
    let mut nodes = Vec::with_capacity(n_angle * n_angle * gl.len());
    for ia in 0..n_angle {
        let alpha = 2.0 * PI * ia as f64 / n_angle as f64;
        for &(x, w) in &gl {
            let beta = x.acos();
            for ig in 0..n_angle {
                let gamma = 2.0 * PI * ig as f64 / n_angle as f64;
                nodes.push(SO3Node {
                    rotation: rotation_from_euler(alpha, beta, gamma),
                    alpha,
                    beta,
                    gamma,
                    weight: w / (2.0 * (n_angle * n_angle) as f64),
                });
            }
        }
    }
    Ok(SO3Quadrature { order, nodes })
}

/// Pullback integral through the projection g ↦ g·ẑ: evaluates
/// ∫_{SO(3)} f(g·ẑ) dg against the normalized Haar measure.
///
/// For integrable f on S² this equals c·∫_{S²} f dA with a constant c that
/// does not depend on f; the test suite measures c (= 1/4π) from the rule
/// itself rather than assuming it.
pub fn hopf_pullback<F: Fn(&Vector3<f64>) -> f64>(f: F, quad: &SO3Quadrature) -> f64 {
    let z = Vector3::z();
    quad.nodes
        .iter()
        .map(|n| n.weight * f(&(n.rotation * z)))
        .sum()
}
