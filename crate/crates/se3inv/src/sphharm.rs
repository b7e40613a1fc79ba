//! Real and complex spherical harmonics, associated Legendre functions, and
//! the solid-harmonic polynomial basis r^a·Y^R_{bc} of R³.
//!
//! Conventions, fixed once here and relied on everywhere else:
//! - `assoc_legendre(n, m, x)` returns P^m_n(x) with the Condon–Shortley
//!   factor (−1)^m inside P^m_n.
//! - `eval_y` applies a further (−1)^m in front of the normalization
//!   √((2n+1)(n−m)!/(4π(n+m)!)), so the two sign factors cancel and the
//!   resulting complex harmonics have a positive leading coefficient
//!   (e.g. Y₁₁ = +√(3/8π)·sinθ·e^{iφ}). They are orthonormal on S² and
//!   satisfy Y_{n,−m} = (−1)^m·conj(Y_{nm}).
//! - `eval_y_real` combines them into the real orthonormal basis:
//!   √2·Im Y_{n|m|} for m < 0, the (real) Y_{n0} for m = 0, and
//!   √2·Re Y_{nm} for m > 0.
//!
//! The homogeneous polynomial r^a·Y^R_{bc} (a ≥ b, a − b even, |c| ≤ b) is
//! expanded exactly in the monomial basis with integer combinatorics, so the
//! monomial ↔ solid-harmonic changes of basis round-trip to working precision.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, LazyLock, RwLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::util::binomial;

/// Hard cap on polynomial / harmonic degrees handled by the cached tables.
pub const DEGREE_CAP: u32 = 12;

/// Below this value of sinθ a direction is treated as a pole and φ is set
/// to 0; every Y_{nm} with m ≠ 0 vanishes there, so the choice is harmless.
pub const POLE_SIN_THETA: f64 = 1e-14;

/// Errors from harmonic evaluation and basis conversion.
#[derive(Debug, Clone, Error)]
pub enum SphharmError {
    #[error("argument x = {x} outside [-1, 1]")]
    ArgumentOutOfRange { x: f64 },
    #[error("order m = {m} exceeds degree n = {n}")]
    OrderExceedsDegree { n: u32, m: u32 },
    #[error("degree {degree} exceeds the table cap {cap}")]
    DegreeOverflow { degree: u32, cap: u32 },
}

/// Index (n, m) of a spherical harmonic, |m| ≤ n.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SHIndex {
    pub n: u32,
    pub m: i32,
}

impl SHIndex {
    /// Validated constructor.
    pub fn new(n: u32, m: i32) -> Result<Self, SphharmError> {
        if m.unsigned_abs() > n {
            return Err(SphharmError::OrderExceedsDegree {
                n,
                m: m.unsigned_abs(),
            });
        }
        Ok(Self { n, m })
    }

    /// All indices with degree ≤ `n_max`, in canonical (n asc, m asc) order.
    pub fn all_up_to(n_max: u32) -> Vec<SHIndex> {
        let mut out = Vec::new();
        for n in 0..=n_max {
            for m in -(n as i32)..=(n as i32) {
                out.push(SHIndex { n, m });
            }
        }
        out
    }
}

/// A direction on S² in polar coordinates: colatitude θ ∈ [0, π] and
/// longitude φ ∈ [0, 2π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalDirection {
    pub theta: f64,
    pub phi: f64,
}

impl SphericalDirection {
    /// Builds the direction of a (not necessarily unit) nonzero 3-vector.
    ///
    /// At the poles (sinθ below [`POLE_SIN_THETA`]) the longitude is fixed
    /// to 0.
    pub fn from_vector(v: &nalgebra::Vector3<f64>) -> Self {
        let r = v.norm();
        let cos_theta = if r > 0.0 { (v.z / r).clamp(-1.0, 1.0) } else { 1.0 };
        let theta = cos_theta.acos();
        let rho = v.xy().norm();
        let phi = if r == 0.0 || rho / r < POLE_SIN_THETA {
            0.0
        } else {
            let raw = v.y.atan2(v.x);
            if raw < 0.0 { raw + 2.0 * PI } else { raw }
        };
        Self { theta, phi }
    }

    /// The unit 3-vector with these polar coordinates.
    pub fn to_unit_vector(&self) -> nalgebra::Vector3<f64> {
        let (st, ct) = (self.theta.sin(), self.theta.cos());
        let (sp, cp) = (self.phi.sin(), self.phi.cos());
        nalgebra::Vector3::new(st * cp, st * sp, ct)
    }
}

/// Basis element r^a·Y^R_{bc} of the degree-a homogeneous polynomials,
/// with a ≥ b, a − b even, |c| ≤ b.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SolidHarmonicBasisElement {
    pub a: u32,
    pub b: u32,
    pub c: i32,
}

impl SolidHarmonicBasisElement {
    /// Validated constructor.
    pub fn new(a: u32, b: u32, c: i32) -> Option<Self> {
        if b <= a && (a - b) % 2 == 0 && c.unsigned_abs() <= b {
            Some(Self { a, b, c })
        } else {
            None
        }
    }

    /// Canonical list of elements of homogeneous degree exactly `a`
    /// (b ascending from a mod 2, c ascending).
    pub fn of_degree(a: u32) -> Vec<Self> {
        let mut out = Vec::new();
        let mut b = a % 2;
        while b <= a {
            for c in -(b as i32)..=(b as i32) {
                out.push(Self { a, b, c });
            }
            b += 2;
        }
        out
    }

    /// Canonical list of all elements with a ≤ `d` (a ascending, then as in
    /// [`Self::of_degree`]).
    pub fn all_up_to(d: u32) -> Vec<Self> {
        (0..=d).flat_map(Self::of_degree).collect()
    }
}

/// Monomial x^i·y^j·z^k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Monomial {
    pub i: u32,
    pub j: u32,
    pub k: u32,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.i + self.j + self.k
    }

    /// Canonical list of the monomials of degree exactly `a`
    /// (i descending, then j descending).
    pub fn of_degree(a: u32) -> Vec<Self> {
        let mut out = Vec::new();
        for i in (0..=a).rev() {
            for j in (0..=(a - i)).rev() {
                out.push(Self { i, j, k: a - i - j });
            }
        }
        out
    }

    /// Position of this monomial inside [`Self::of_degree`] of its degree.
    pub fn index_in_degree(&self) -> usize {
        let a = self.degree();
        let s = (a - self.i) as usize;
        s * (s + 1) / 2 + (a - self.i - self.j) as usize
    }

    /// Evaluates the monomial at a point.
    pub fn eval(&self, p: &nalgebra::Vector3<f64>) -> f64 {
        p.x.powi(self.i as i32) * p.y.powi(self.j as i32) * p.z.powi(self.k as i32)
    }
}

/// A real polynomial on R³ of bounded total degree, stored sparsely over
/// monomial exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialCoefficients {
    pub degree: u32,
    pub coeffs: BTreeMap<Monomial, f64>,
}

impl PolynomialCoefficients {
    /// Empty polynomial with a degree bound.
    pub fn zero(degree: u32) -> Self {
        Self { degree, coeffs: BTreeMap::new() }
    }

    /// Adds `value` to the coefficient of `m`, enforcing the degree bound.
    pub fn add_term(&mut self, m: Monomial, value: f64) -> Result<(), SphharmError> {
        if m.degree() > self.degree {
            return Err(SphharmError::DegreeOverflow { degree: m.degree(), cap: self.degree });
        }
        *self.coeffs.entry(m).or_insert(0.0) += value;
        Ok(())
    }

    /// Evaluates the polynomial at a point.
    pub fn eval(&self, p: &nalgebra::Vector3<f64>) -> f64 {
        self.coeffs.iter().map(|(m, c)| c * m.eval(p)).sum()
    }
}

// ---------------------------------------------------------------------------
// Associated Legendre functions
// ---------------------------------------------------------------------------

/// P^m_n(x) with the Condon–Shortley factor (−1)^m included, 0 ≤ m ≤ n,
/// |x| ≤ 1.
///
/// Evaluated by the three-term upward recurrence in n at fixed m, which is
/// stable in this regime; the derivative (Rodrigues) form it reproduces is
/// kept to the test suite as an oracle.
pub fn assoc_legendre(n: u32, m: u32, x: f64) -> Result<f64, SphharmError> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(SphharmError::ArgumentOutOfRange { x });
    }
    if m > n {
        return Err(SphharmError::OrderExceedsDegree { n, m });
    }
    // P^m_m = (−1)^m (2m−1)!! (1−x²)^{m/2}
    let mut pmm = 1.0_f64;
    if m > 0 {
        let somx2 = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
    }
    if n == m {
        return Ok(pmm);
    }
    // P^m_{m+1} = x (2m+1) P^m_m
    let mut pm_prev = pmm;
    let mut pm = x * (2 * m + 1) as f64 * pmm;
    if n == m + 1 {
        return Ok(pm);
    }
    // (n−m) P^m_n = x(2n−1) P^m_{n−1} − (n+m−1) P^m_{n−2}
    for nn in (m + 2)..=n {
        let next = (x * (2 * nn - 1) as f64 * pm - (nn + m - 1) as f64 * pm_prev)
            / (nn - m) as f64;
        pm_prev = pm;
        pm = next;
    }
    Ok(pm)
}

/// Normalization √((2n+1)(n−m)!/(4π(n+m)!)) for 0 ≤ m ≤ n.
fn y_norm(n: u32, m: u32) -> f64 {
    let mut ratio = 1.0_f64; // (n−m)!/(n+m)!
    for k in (n - m + 1)..=(n + m) {
        ratio /= k as f64;
    }
    ((2 * n + 1) as f64 * ratio / (4.0 * PI)).sqrt()
}

/// Complex spherical harmonic Y_{nm}(θ, φ).
///
/// For m ≥ 0 this is (−1)^m·√((2n+1)(n−m)!/(4π(n+m)!))·P^m_n(cosθ)·e^{imφ};
/// negative orders go through P^{−m}_n = (−1)^m (n−m)!/(n+m)!·P^m_n, so the
/// conjugation-parity relation Y_{n,−m} = (−1)^m·conj(Y_{nm}) is a testable
/// consequence rather than a definition.
pub fn eval_y(idx: SHIndex, dir: SphericalDirection) -> Complex64 {
    let n = idx.n;
    let x = dir.theta.cos();
    if idx.m >= 0 {
        let m = idx.m as u32;
        let p = assoc_legendre(n, m, x).expect("valid index and |cosθ| ≤ 1");
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let amp = sign * y_norm(n, m) * p;
        Complex64::from_polar(1.0, idx.m as f64 * dir.phi) * amp
    } else {
        let mu = idx.m.unsigned_abs();
        let p_pos = assoc_legendre(n, mu, x).expect("valid index and |cosθ| ≤ 1");
        // P^{−μ}_n = (−1)^μ (n−μ)!/(n+μ)! P^μ_n
        let mut ratio = 1.0_f64;
        for k in (n - mu + 1)..=(n + mu) {
            ratio /= k as f64;
        }
        let sign = if mu % 2 == 0 { 1.0 } else { -1.0 };
        let p_neg = sign * ratio * p_pos;
        // (−1)^m √((2n+1)(n−m)!/(4π(n+m)!)) with m = −μ
        let norm_neg = ((2 * n + 1) as f64 / (4.0 * PI)
            * (1.0 / ratio))
            .sqrt();
        let amp = sign * norm_neg * p_neg;
        Complex64::from_polar(1.0, idx.m as f64 * dir.phi) * amp
    }
}

/// Real orthonormal spherical harmonic Y^R_{nm}(θ, φ):
/// √2·Im Y_{n|m|} for m < 0, Y_{n0} for m = 0, √2·Re Y_{nm} for m > 0.
pub fn eval_y_real(idx: SHIndex, dir: SphericalDirection) -> f64 {
    let sqrt2 = std::f64::consts::SQRT_2;
    match idx.m.cmp(&0) {
        std::cmp::Ordering::Less => {
            let y = eval_y(SHIndex { n: idx.n, m: -idx.m }, dir);
            sqrt2 * y.im
        }
        std::cmp::Ordering::Equal => eval_y(idx, dir).re,
        std::cmp::Ordering::Greater => {
            let y = eval_y(idx, dir);
            sqrt2 * y.re
        }
    }
}

/// Convenience: Y^R_{nm} at a unit 3-vector.
pub fn eval_y_real_vec(idx: SHIndex, v: &nalgebra::Vector3<f64>) -> f64 {
    eval_y_real(idx, SphericalDirection::from_vector(v))
}

// ---------------------------------------------------------------------------
// Exact monomial expansion of solid harmonics
// ---------------------------------------------------------------------------

/// Coefficients (×2^b, exact integers) of d^μ/dt^μ P_b(t): entry j is the
/// coefficient of t^j.
fn legendre_derivative_int(b: u32, mu: u32) -> Vec<i128> {
    // 2^b·P_b(t) = Σ_k (−1)^k C(b,k) C(2b−2k,b) t^{b−2k}
    let b_us = b as usize;
    let mut p = vec![0_i128; b_us + 1];
    for k in 0..=(b_us / 2) {
        let sign = if k % 2 == 0 { 1 } else { -1 };
        let coeff = binomial(b_us, k) as i128 * binomial(2 * b_us - 2 * k, b_us) as i128;
        p[b_us - 2 * k] = sign * coeff;
    }
    // Differentiate μ times.
    let mu = mu as usize;
    if mu > b_us {
        return vec![0];
    }
    let mut q = vec![0_i128; b_us - mu + 1];
    for j in 0..=(b_us - mu) {
        let mut fall = 1_i128;
        for t in 1..=mu {
            fall *= (j + t) as i128;
        }
        q[j] = p[j + mu] * fall;
    }
    q
}

/// Exact monomial expansion of the homogeneous degree-a polynomial
/// r^a·Y^R_{bc} = (x²+y²+z²)^{(a−b)/2} · (r^b·Y^R_{bc}).
pub fn solid_element_monomials(el: SolidHarmonicBasisElement) -> Vec<(Monomial, f64)> {
    let (a, b, c) = (el.a, el.b, el.c);
    let mu = c.unsigned_abs();
    let q = legendre_derivative_int(b, mu);
    let norm = y_norm(b, mu) / (2.0_f64).powi(b as i32);
    let scale = if c == 0 { norm } else { std::f64::consts::SQRT_2 * norm };

    // (x+iy)^μ split into real/imaginary integer parts over (x-power, y-power).
    // Re for c ≥ 0, Im for c < 0.
    let mut angular: Vec<(u32, u32, i128)> = Vec::new();
    for t in 0..=mu {
        let bin = binomial(mu as usize, t as usize) as i128;
        if c >= 0 && t % 2 == 0 {
            let sign = if (t / 2) % 2 == 0 { 1 } else { -1 };
            angular.push((mu - t, t, sign * bin));
        } else if c < 0 && t % 2 == 1 {
            let sign = if ((t - 1) / 2) % 2 == 0 { 1 } else { -1 };
            angular.push((mu - t, t, sign * bin));
        }
    }

    let mut acc: HashMap<Monomial, f64> = HashMap::new();
    let p_extra = (a - b) / 2; // extra (x²+y²+z²)^{p_extra} factor
    for (jz, &qj) in q.iter().enumerate() {
        if qj == 0 {
            continue;
        }
        let rem = b - mu - jz as u32;
        debug_assert_eq!(rem % 2, 0, "parity of the Legendre derivative");
        let p_total = rem / 2 + p_extra;
        // (x²+y²+z²)^{p_total} = Σ multinomial(p; α,β,γ) x^{2α} y^{2β} z^{2γ}
        for alpha in 0..=p_total {
            for beta in 0..=(p_total - alpha) {
                let gamma = p_total - alpha - beta;
                let multi = binomial(p_total as usize, alpha as usize)
                    * binomial((p_total - alpha) as usize, beta as usize);
                for &(px, py, ang) in &angular {
                    let mono = Monomial {
                        i: px + 2 * alpha,
                        j: py + 2 * beta,
                        k: jz as u32 + 2 * gamma,
                    };
                    let val = scale * (qj as f64) * multi * (ang as f64);
                    *acc.entry(mono).or_insert(0.0) += val;
                }
            }
        }
    }
    let mut out: Vec<(Monomial, f64)> =
        acc.into_iter().filter(|(_, v)| *v != 0.0).collect();
    out.sort_by_key(|(m, _)| *m);
    out
}

// ---------------------------------------------------------------------------
// Monomial ↔ solid-harmonic change of basis
// ---------------------------------------------------------------------------

/// Change-of-basis matrices for one homogeneous degree: `to_monomial` has
/// the monomial expansions of the solid elements as columns, `to_solid` is
/// its inverse.
pub struct DegreeBlock {
    pub degree: u32,
    pub elements: Vec<SolidHarmonicBasisElement>,
    pub monomials: Vec<Monomial>,
    pub to_monomial: DMatrix<f64>,
    pub to_solid: DMatrix<f64>,
}

static DEGREE_BLOCKS: LazyLock<RwLock<HashMap<u32, Arc<DegreeBlock>>>> =
    LazyLock::new(|| RwLock::new(HashMap::new()));

/// Cached change-of-basis block for homogeneous degree `a` ≤ [`DEGREE_CAP`].
pub fn degree_block(a: u32) -> Result<Arc<DegreeBlock>, SphharmError> {
    if a > DEGREE_CAP {
        return Err(SphharmError::DegreeOverflow { degree: a, cap: DEGREE_CAP });
    }
    if let Some(block) = DEGREE_BLOCKS.read().unwrap().get(&a) {
        return Ok(block.clone());
    }
    let elements = SolidHarmonicBasisElement::of_degree(a);
    let monomials = Monomial::of_degree(a);
    let dim = monomials.len();
    assert_eq!(elements.len(), dim, "solid and monomial bases must match in size");
    let mut to_monomial = DMatrix::zeros(dim, dim);
    for (col, el) in elements.iter().enumerate() {
        for (mono, coeff) in solid_element_monomials(*el) {
            to_monomial[(mono.index_in_degree(), col)] = coeff;
        }
    }
    let to_solid = to_monomial
        .clone()
        .lu()
        .try_inverse()
        .expect("solid-harmonic basis is nonsingular per degree");
    let block = Arc::new(DegreeBlock { degree: a, elements, monomials, to_monomial, to_solid });
    DEGREE_BLOCKS.write().unwrap().insert(a, block.clone());
    Ok(block)
}

/// Expands a polynomial in the solid-harmonic basis.
///
/// The change of basis is block-diagonal over homogeneous degrees, so each
/// homogeneous part is converted independently.
pub fn monomial_to_solid(
    poly: &PolynomialCoefficients,
) -> Result<BTreeMap<SolidHarmonicBasisElement, f64>, SphharmError> {
    let mut out = BTreeMap::new();
    for a in 0..=poly.degree {
        let block = degree_block(a)?;
        let dim = block.monomials.len();
        let mut vec = nalgebra::DVector::zeros(dim);
        let mut any = false;
        for (mono, coeff) in poly.coeffs.iter().filter(|(m, _)| m.degree() == a) {
            vec[mono.index_in_degree()] = *coeff;
            any = true;
        }
        if !any {
            continue;
        }
        let solid = &block.to_solid * vec;
        for (row, el) in block.elements.iter().enumerate() {
            if solid[row] != 0.0 {
                out.insert(*el, solid[row]);
            }
        }
    }
    Ok(out)
}

/// Expands a solid-harmonic combination back into monomials.
pub fn solid_to_monomial(
    coeffs: &BTreeMap<SolidHarmonicBasisElement, f64>,
) -> Result<PolynomialCoefficients, SphharmError> {
    let degree = coeffs.keys().map(|el| el.a).max().unwrap_or(0);
    let mut poly = PolynomialCoefficients::zero(degree);
    for a in 0..=degree {
        let block = degree_block(a)?;
        let mut vec = nalgebra::DVector::zeros(block.elements.len());
        let mut any = false;
        for (col, el) in block.elements.iter().enumerate() {
            if let Some(v) = coeffs.get(el) {
                vec[col] = *v;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let mono = &block.to_monomial * vec;
        for (row, m) in block.monomials.iter().enumerate() {
            if mono[row] != 0.0 {
                poly.add_term(*m, mono[row])?;
            }
        }
    }
    Ok(poly)
}
