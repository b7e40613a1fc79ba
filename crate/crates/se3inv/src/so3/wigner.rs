//! Wigner rotation matrices, Clebsch–Gordan coefficients, and the real
//! coupling matrices used to project tensor products onto irreducibles.
//!
//! All matrices index rows/columns by ascending m (index m + j). The complex
//! rotation matrix carries the same phase convention as the harmonics in
//! [`crate::sphharm`] — relative to the textbook matrix it is conjugated by
//! diag((−1)^m), which leaves every intertwining identity with standard
//! Clebsch–Gordan coefficients intact because the signs cancel along the
//! selection rule M = m₁ + m₂.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, RwLock};

use nalgebra::{DMatrix, Rotation3};
use num_complex::Complex64;

use crate::so3::euler_from_rotation;
use crate::util::ln_factorial;

/// Wigner small-d entry d^j_{m',m}(β) by the factorial sum formula.
pub fn wigner_small_d(j: u32, mp: i32, m: i32, beta: f64) -> f64 {
    let j = j as i64;
    let (mp, m) = (mp as i64, m as i64);
    assert!(mp.abs() <= j && m.abs() <= j, "orders must satisfy |m| ≤ j");
    let cos_half = (beta / 2.0).cos();
    let sin_half = (beta / 2.0).sin();
    let prefactor_ln = 0.5
        * (ln_factorial((j + mp) as usize)
            + ln_factorial((j - mp) as usize)
            + ln_factorial((j + m) as usize)
            + ln_factorial((j - m) as usize));
    let k_min = 0.max(m - mp);
    let k_max = (j + m).min(j - mp);
    let mut sum = 0.0_f64;
    for k in k_min..=k_max {
        let denom_ln = ln_factorial(k as usize)
            + ln_factorial((j + m - k) as usize)
            + ln_factorial((j - mp - k) as usize)
            + ln_factorial((mp - m + k) as usize);
        let sign = if (mp - m + k).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let cos_pow = (2 * j + m - mp - 2 * k) as i32;
        let sin_pow = (mp - m + 2 * k) as i32;
        sum += sign
            * (prefactor_ln - denom_ln).exp()
            * cos_half.powi(cos_pow)
            * sin_half.powi(sin_pow);
    }
    sum
}

/// Complex rotation matrix D^j(α, β, γ) in this crate's phase convention:
/// entry (m', m) is (−1)^{m'+m}·e^{−i m' α}·d^j_{m'm}(β)·e^{−i m γ}.
///
/// With the harmonics of [`crate::sphharm`] it satisfies
/// Y_{jm}(R⁻¹x̂) = Σ_{m'} D^j_{m'm}(R)·Y_{jm'}(x̂).
pub fn wigner_d_matrix(j: u32, alpha: f64, beta: f64, gamma: f64) -> DMatrix<Complex64> {
    let dim = (2 * j + 1) as usize;
    let mut out = DMatrix::zeros(dim, dim);
    for mp in -(j as i32)..=(j as i32) {
        for m in -(j as i32)..=(j as i32) {
            let little = wigner_small_d(j, mp, m, beta);
            let sign = if (mp + m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let phase = Complex64::from_polar(1.0, -(mp as f64) * alpha - (m as f64) * gamma);
            out[((mp + j as i32) as usize, (m + j as i32) as usize)] =
                sign * little * phase;
        }
    }
    out
}

/// Unitary change of basis U^j from complex to real harmonics:
/// Y^R_{jm} = Σ_{m'} U^j_{m,m'}·Y_{jm'} (rows: real index, columns: complex).
pub fn real_structure_matrix(j: u32) -> DMatrix<Complex64> {
    let dim = (2 * j + 1) as usize;
    let mut u = DMatrix::zeros(dim, dim);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    u[(j as usize, j as usize)] = Complex64::new(1.0, 0.0);
    for mu in 1..=(j as i32) {
        let sign = if mu % 2 == 0 { 1.0 } else { -1.0 };
        let row_pos = (mu + j as i32) as usize;
        let row_neg = (-mu + j as i32) as usize;
        // Y^R_{j,μ}  = (Y_{jμ} + (−1)^μ Y_{j,−μ})/√2
        u[(row_pos, row_pos)] = Complex64::new(inv_sqrt2, 0.0);
        u[(row_pos, row_neg)] = Complex64::new(sign * inv_sqrt2, 0.0);
        // Y^R_{j,−μ} = −i(Y_{jμ} − (−1)^μ Y_{j,−μ})/√2
        u[(row_neg, row_pos)] = Complex64::new(0.0, -inv_sqrt2);
        u[(row_neg, row_neg)] = Complex64::new(0.0, sign * inv_sqrt2);
    }
    u
}

static REAL_WIGNER_CACHE_KEYS: LazyLock<RwLock<HashMap<u32, Arc<DMatrix<Complex64>>>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

fn cached_real_structure(j: u32) -> Arc<DMatrix<Complex64>> {
    if let Some(u) = REAL_WIGNER_CACHE_KEYS.read().unwrap().get(&j) {
        return u.clone();
    }
    let u = Arc::new(real_structure_matrix(j));
    REAL_WIGNER_CACHE_KEYS.write().unwrap().insert(j, u.clone());
    u
}

/// Real rotation matrix W^j(R) acting on real-harmonic coefficient vectors:
/// if f = Σ c_m·Y^R_{jm} then f∘R⁻¹ = Σ (W c)_m·Y^R_{jm}.
///
/// Computed as conj(U)·D^j·Uᵀ from the complex matrix; the result is real to
/// rounding, and the imaginary residue is dropped.
pub fn wigner_d_real(j: u32, r: &Rotation3<f64>) -> DMatrix<f64> {
    let (alpha, beta, gamma) = euler_from_rotation(r);
    let d = wigner_d_matrix(j, alpha, beta, gamma);
    let u = cached_real_structure(j);
    let w = u.map(|z| z.conj()) * d * u.transpose();
    debug_assert!(
        w.iter().map(|z| z.im.abs()).fold(0.0, f64::max) < 1e-10,
        "real rotation matrix has nonreal residue"
    );
    w.map(|z| z.re)
}

/// Clebsch–Gordan coefficient ⟨j₁ m₁ j₂ m₂ | J M⟩ for integer spins, by the
/// Racah factorial sum. Returns 0 when a selection rule fails
/// (M ≠ m₁ + m₂, J outside |j₁−j₂|..j₁+j₂, or any |m| > j).
pub fn clebsch_gordan(j1: u32, m1: i32, j2: u32, m2: i32, jj: u32, mm: i32) -> f64 {
    let (j1i, j2i, jji) = (j1 as i64, j2 as i64, jj as i64);
    let (m1, m2, mm) = (m1 as i64, m2 as i64, mm as i64);
    if mm != m1 + m2
        || m1.abs() > j1i
        || m2.abs() > j2i
        || mm.abs() > jji
        || jji < (j1i - j2i).abs()
        || jji > j1i + j2i
    {
        return 0.0;
    }
    let lf = |x: i64| ln_factorial(x as usize);
    // Triangle coefficient Δ(j₁ j₂ J)², in logs.
    let delta_ln = lf(j1i + j2i - jji) + lf(j1i - j2i + jji) + lf(-j1i + j2i + jji)
        - lf(j1i + j2i + jji + 1);
    let pref_ln = 0.5
        * (delta_ln
            + ((2 * jji + 1) as f64).ln()
            + lf(jji + mm)
            + lf(jji - mm)
            + lf(j1i - m1)
            + lf(j1i + m1)
            + lf(j2i - m2)
            + lf(j2i + m2));
    let k_min = 0.max(j2i - jji - m1).max(j1i + m2 - jji);
    let k_max = (j1i + j2i - jji).min(j1i - m1).min(j2i + m2);
    let mut sum = 0.0_f64;
    for k in k_min..=k_max {
        let denom_ln = lf(k)
            + lf(j1i + j2i - jji - k)
            + lf(j1i - m1 - k)
            + lf(j2i + m2 - k)
            + lf(jji - j2i + m1 + k)
            + lf(jji - j1i - m2 + k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * (pref_ln - denom_ln).exp();
    }
    sum
}

static COUPLING_CACHE: LazyLock<RwLock<HashMap<(u32, u32, u32), Arc<DMatrix<f64>>>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

/// Real coupling matrix G^J for j₁ ⊗ j₂ → J: a (2J+1) × (2j₁+1)(2j₂+1) real
/// matrix with orthonormal rows satisfying
/// G·(W^{j₁}(R) ⊗ W^{j₂}(R)) = W^J(R)·G for every rotation R.
///
/// Columns are indexed by pairs (m₁, m₂) with m₁ slow and m₂ fast (matching
/// the Kronecker product W^{j₁} ⊗ W^{j₂}). The overall sign is fixed by
/// making the first entry of magnitude above 1e−8 (row-major) positive.
pub fn real_coupling(j1: u32, j2: u32, jj: u32) -> Arc<DMatrix<f64>> {
    if let Some(g) = COUPLING_CACHE.read().unwrap().get(&(j1, j2, jj)) {
        return g.clone();
    }
    let g = Arc::new(build_real_coupling(j1, j2, jj));
    COUPLING_CACHE.write().unwrap().insert((j1, j2, jj), g.clone());
    g
}

fn build_real_coupling(j1: u32, j2: u32, jj: u32) -> DMatrix<f64> {
    assert!(
        jj >= j1.abs_diff(j2) && jj <= j1 + j2,
        "J = {jj} outside the coupling range of ({j1}, {j2})"
    );
    let (d1, d2, dj) = ((2 * j1 + 1) as usize, (2 * j2 + 1) as usize, (2 * jj + 1) as usize);
    // Complex Clebsch–Gordan matrix, rows M, columns (m₁, m₂).
    let mut c = DMatrix::<Complex64>::zeros(dj, d1 * d2);
    for mm in -(jj as i32)..=(jj as i32) {
        for m1 in -(j1 as i32)..=(j1 as i32) {
            for m2 in -(j2 as i32)..=(j2 as i32) {
                let v = clebsch_gordan(j1, m1, j2, m2, jj, mm);
                if v != 0.0 {
                    let col = ((m1 + j1 as i32) as usize) * d2 + (m2 + j2 as i32) as usize;
                    c[((mm + jj as i32) as usize, col)] = Complex64::new(v, 0.0);
                }
            }
        }
    }
    let uj = cached_real_structure(jj);
    let u1 = cached_real_structure(j1);
    let u2 = cached_real_structure(j2);
    let u12 = u1.kronecker(&u2);
    let g_complex = uj.as_ref() * c * u12.adjoint();
    // The real intertwiner space is one-dimensional, so the real and
    // imaginary parts are proportional; keep the dominant one.
    let re = g_complex.map(|z| z.re);
    let im = g_complex.map(|z| z.im);
    let (mut g, other) = if re.norm() >= im.norm() { (re, im) } else { (im, re) };
    assert!(
        other.norm() < 1e-10 * g.norm().max(1.0),
        "real and imaginary parts both significant in coupling ({j1},{j2},{jj})"
    );
    // Restore orthonormal rows (the dominant part carries |cos φ| of the norm).
    let scale = (dj as f64).sqrt() / g.norm();
    g *= scale;
    // Deterministic overall sign.
    if let Some(first) = g.iter().find(|v| v.abs() > 1e-8) {
        if *first < 0.0 {
            g.neg_mut();
        }
    }
    g
}

/// Decomposition of the real tensor product j₁ ⊗ j₂ into irreducibles:
/// returns (J, G^J) for J = |j₁−j₂|, …, j₁+j₂. Stacking the G^J vertically
/// gives an orthogonal matrix.
pub fn kronecker_decompose(j1: u32, j2: u32) -> Vec<(u32, Arc<DMatrix<f64>>)> {
    (j1.abs_diff(j2)..=(j1 + j2))
        .map(|jj| (jj, real_coupling(j1, j2, jj)))
        .collect()
}
