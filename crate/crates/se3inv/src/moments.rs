//! Moment tensors of oriented surface measures and their translational
//! self-correlation.
//!
//! A sampled surface measure lives on R³ × S² (point, normal). Its moment
//! tensor collects ∫ r^a·Y^R_{bc}(x̂)·Y^R_{nm}(s) dδ(x, s) over solid
//! harmonics of degree a ≤ d and normal harmonics of degree n ≤ d'.
//! Accumulation runs in the monomial basis (cheap per sample) and converts
//! to the solid-harmonic basis once per channel.
//!
//! The translational correlation pairs every two normal channels through the
//! moment-generating-function product: the output spatial moments are the
//! moments of the difference set {x_i − x_j}, which makes the result exactly
//! translation invariant.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sphharm::{
    degree_block, eval_y_real_vec, Monomial, SHIndex, SolidHarmonicBasisElement, DEGREE_CAP,
};
use crate::surface::SampledMeasure;

/// Errors from moment computation.
#[derive(Debug, Clone, Error)]
pub enum MomentsError {
    #[error("spatial degree {d} exceeds the cap {cap}")]
    DegreeOverflow { d: u32, cap: u32 },
    #[error("sample measure is empty")]
    EmptySample,
    #[error("tensors have mismatched degree caps: ({0}, {1}) vs ({2}, {3})")]
    CapMismatch(u32, u32, u32, u32),
}

// ---------------------------------------------------------------------------
// Canonical index maps
// ---------------------------------------------------------------------------

/// Number of monomials of total degree ≤ d.
pub fn monomial_count(d: u32) -> usize {
    let d = d as usize;
    (d + 1) * (d + 2) * (d + 3) / 6
}

/// Canonical position of a monomial in the degree-ascending list
/// (per-degree order as in [`Monomial::of_degree`]).
pub fn monomial_position(m: &Monomial) -> usize {
    let a = m.degree();
    let offset = if a == 0 { 0 } else { monomial_count(a - 1) };
    offset + m.index_in_degree()
}

/// Canonical position of a spherical-harmonic index: n² + (m + n).
pub fn channel_position(idx: &SHIndex) -> usize {
    (idx.n * idx.n) as usize + (idx.m + idx.n as i32) as usize
}

/// Number of channels with degree ≤ d'.
pub fn channel_count(d_prime: u32) -> usize {
    ((d_prime + 1) * (d_prime + 1)) as usize
}

/// Canonical position of a solid element in the degree-ascending list
/// (per-degree order as in [`SolidHarmonicBasisElement::of_degree`]).
pub fn solid_position(el: &SolidHarmonicBasisElement) -> usize {
    // Degrees < a contribute the same total as monomials of degree ≤ a−1.
    let offset = if el.a == 0 { 0 } else { monomial_count(el.a - 1) };
    let parity = (el.a % 2) as usize;
    let k = ((el.b - el.a % 2) / 2) as usize; // same-parity orders below b
    // Σ_{t<k} (2(parity + 2t) + 1) = k(2·parity + 1) + 2k(k−1)
    let within = k * (2 * parity + 1) + 2 * k * k.saturating_sub(1);
    offset + within + (el.c + el.b as i32) as usize
}

/// Number of solid elements with degree ≤ d (equals the monomial count).
pub fn solid_count(d: u32) -> usize {
    monomial_count(d)
}

// ---------------------------------------------------------------------------
// Rho moment tensor
// ---------------------------------------------------------------------------

/// Moments of a surface measure against solid harmonics (rows, degree ≤ d)
/// times normal-sphere harmonics (columns, degree ≤ d').
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoMomentTensor {
    pub d: u32,
    pub d_prime: u32,
    /// Row-major dense storage, rows = solid elements, cols = channels.
    data: Vec<f64>,
}

impl RhoMomentTensor {
    pub fn zeros(d: u32, d_prime: u32) -> Self {
        Self {
            d,
            d_prime,
            data: vec![0.0; solid_count(d) * channel_count(d_prime)],
        }
    }

    fn cols(&self) -> usize {
        channel_count(self.d_prime)
    }

    pub fn entry(&self, el: &SolidHarmonicBasisElement, idx: &SHIndex) -> f64 {
        self.data[solid_position(el) * self.cols() + channel_position(idx)]
    }

    pub fn entry_mut(&mut self, el: &SolidHarmonicBasisElement, idx: &SHIndex) -> &mut f64 {
        let pos = solid_position(el) * self.cols() + channel_position(idx);
        &mut self.data[pos]
    }

    /// The column of spatial solid-harmonic moments for one normal channel.
    pub fn channel_column(&self, idx: &SHIndex) -> DVector<f64> {
        let cols = self.cols();
        let col = channel_position(idx);
        DVector::from_iterator(
            solid_count(self.d),
            (0..solid_count(self.d)).map(|r| self.data[r * cols + col]),
        )
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            d: self.d,
            d_prime: self.d_prime,
            data: self.data.iter().map(|v| v * lambda).collect(),
        }
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }
}

/// Computes the moment tensor of a sampled measure by monomial accumulation.
///
/// Each sample contributes w·x^α·Y^R_{nm}(s) to the monomial moments of
/// channel (n, m); the monomial block of each total degree is then converted
/// to solid harmonics. Accumulation is chunked and reduced in a fixed order,
/// so results are reproducible under parallel execution.
pub fn compute_rho_moments(
    measure: &SampledMeasure,
    d: u32,
    d_prime: u32,
) -> Result<RhoMomentTensor, MomentsError> {
    if d > DEGREE_CAP || d_prime > DEGREE_CAP {
        return Err(MomentsError::DegreeOverflow { d: d.max(d_prime), cap: DEGREE_CAP });
    }
    if measure.samples.is_empty() {
        return Err(MomentsError::EmptySample);
    }
    let mono = monomial_moments(measure, d, d_prime);
    Ok(monomial_to_rho(&mono, d, d_prime))
}

/// Monomial moments per channel: rows = monomials (degree ≤ d), columns =
/// channels (degree ≤ d').
fn monomial_moments(measure: &SampledMeasure, d: u32, d_prime: u32) -> DMatrix<f64> {
    let n_mono = monomial_count(d);
    let n_chan = channel_count(d_prime);
    let channels = SHIndex::all_up_to(d_prime);
    let chunks: Vec<DMatrix<f64>> = measure
        .samples
        .par_chunks(2048)
        .map(|chunk| {
            let mut local = DMatrix::<f64>::zeros(n_mono, n_chan);
            let mut powers = vec![0.0_f64; n_mono];
            let mut harmonics = vec![0.0_f64; n_chan];
            for s in chunk {
                monomial_powers(&s.point.coords, d, &mut powers);
                for (ci, idx) in channels.iter().enumerate() {
                    harmonics[ci] = eval_y_real_vec(*idx, &s.normal);
                }
                for (mi, &p) in powers.iter().enumerate() {
                    let wp = s.weight * p;
                    for (ci, &h) in harmonics.iter().enumerate() {
                        local[(mi, ci)] += wp * h;
                    }
                }
            }
            local
        })
        .collect();
    // Fixed-order pairwise tree reduction for determinism.
    reduce_pairwise(chunks, n_mono, n_chan)
}

fn reduce_pairwise(mut chunks: Vec<DMatrix<f64>>, rows: usize, cols: usize) -> DMatrix<f64> {
    if chunks.is_empty() {
        return DMatrix::zeros(rows, cols);
    }
    while chunks.len() > 1 {
        let mut next = Vec::with_capacity(chunks.len().div_ceil(2));
        let mut iter = chunks.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(a + b),
                None => next.push(a),
            }
        }
        chunks = next;
    }
    chunks.pop().unwrap()
}

/// Fills `out` with x^α for all monomials α of degree ≤ d in canonical order.
fn monomial_powers(p: &nalgebra::Vector3<f64>, d: u32, out: &mut [f64]) {
    let mut pos = 0;
    for a in 0..=d {
        for i in (0..=a).rev() {
            let xi = p.x.powi(i as i32);
            for j in (0..=(a - i)).rev() {
                let k = a - i - j;
                out[pos] = xi * p.y.powi(j as i32) * p.z.powi(k as i32);
                pos += 1;
            }
        }
    }
}

/// Converts per-channel monomial moments to the solid-harmonic basis.
///
/// Both are linear functionals paired against basis functions, so the
/// conversion is the transpose of the polynomial change of basis:
/// ρ_(a,b,c) = Σ_α T[α, (a,b,c)]·m_α with T the solid→monomial expansion.
fn monomial_to_rho(mono: &DMatrix<f64>, d: u32, d_prime: u32) -> RhoMomentTensor {
    let mut out = RhoMomentTensor::zeros(d, d_prime);
    let n_chan = channel_count(d_prime);
    for a in 0..=d {
        let block = degree_block(a).expect("degree within cap");
        let row0 = if a == 0 { 0 } else { monomial_count(a - 1) };
        let rows = block.monomials.len();
        let mono_block = mono.rows(row0, rows);
        let solid_block = block.to_monomial.transpose() * mono_block;
        for r in 0..rows {
            for c in 0..n_chan {
                out.data[(row0 + r) * n_chan + c] = solid_block[(r, c)];
            }
        }
    }
    out
}

/// Reflects the spatial argument (x ↦ −x): entries scale by (−1)^a, the
/// normal channel index is untouched.
pub fn reflect_moments(t: &RhoMomentTensor) -> RhoMomentTensor {
    let mut out = t.clone();
    let n_chan = out.cols();
    for (r, el) in SolidHarmonicBasisElement::all_up_to(t.d).iter().enumerate() {
        if el.a % 2 == 1 {
            for c in 0..n_chan {
                out.data[r * n_chan + c] = -out.data[r * n_chan + c];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Translational correlation tensor
// ---------------------------------------------------------------------------

/// Solid-harmonic coefficients of the translational self-correlation,
/// indexed by (spatial element; channel (n,m); channel (n',m')).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslationalTensor {
    pub d: u32,
    pub d_prime: u32,
    /// Rows = solid elements (degree ≤ d); columns = channel pairs with
    /// (n,m) slow and (n',m') fast.
    data: Vec<f64>,
}

impl TranslationalTensor {
    pub fn zeros(d: u32, d_prime: u32) -> Self {
        let n = channel_count(d_prime);
        Self { d, d_prime, data: vec![0.0; solid_count(d) * n * n] }
    }

    fn pair_cols(&self) -> usize {
        let n = channel_count(self.d_prime);
        n * n
    }

    pub fn entry(
        &self,
        el: &SolidHarmonicBasisElement,
        first: &SHIndex,
        second: &SHIndex,
    ) -> f64 {
        let n = channel_count(self.d_prime);
        let col = channel_position(first) * n + channel_position(second);
        self.data[solid_position(el) * self.pair_cols() + col]
    }

    /// Spatial coefficient vector for one channel pair.
    pub fn pair_column(&self, first: &SHIndex, second: &SHIndex) -> DVector<f64> {
        let n = channel_count(self.d_prime);
        let col = channel_position(first) * n + channel_position(second);
        let w = self.pair_cols();
        DVector::from_iterator(
            solid_count(self.d),
            (0..solid_count(self.d)).map(|r| self.data[r * w + col]),
        )
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Multi-index factorial α! = i!·j!·k! for every monomial of degree ≤ d.
fn monomial_factorials(d: u32) -> Vec<f64> {
    let fact = |n: u32| crate::util::factorial(n as usize);
    all_monomials(d).iter().map(|m| fact(m.i) * fact(m.j) * fact(m.k)).collect()
}

/// All monomials of degree ≤ d in canonical order.
fn all_monomials(d: u32) -> Vec<Monomial> {
    (0..=d).flat_map(Monomial::of_degree).collect()
}

/// Translational self-correlation via the MGF product: for every channel
/// pair ((n,m), (n',m')) the output spatial moments are those of the signed
/// measure Σ_{i,j} w_i·Y^R_{nm}(s_i)·w_j·Y^R_{n'm'}(s_j)·δ_{x_i − x_j},
/// truncated at total spatial degree d.
///
/// Computed entirely from the input tensor: each channel's moment vector is
/// converted to monomials, scaled by 1/α! into exponential coefficients, the
/// second factor is reflected (x ↦ −x), the two series are multiplied
/// (Cauchy product), and the result is rescaled by γ! and converted back.
pub fn convolve_translational(t: &RhoMomentTensor) -> TranslationalTensor {
    let (d, d_prime) = (t.d, t.d_prime);
    let monomials = all_monomials(d);
    let n_mono = monomials.len();
    let facts = monomial_factorials(d);
    let n_chan = channel_count(d_prime);

    // Monomial moments per channel: m = (to_solid)ᵀ · ρ, per degree block.
    let mut mono = DMatrix::<f64>::zeros(n_mono, n_chan);
    for a in 0..=d {
        let block = degree_block(a).expect("degree within cap");
        let row0 = if a == 0 { 0 } else { monomial_count(a - 1) };
        let rows = block.monomials.len();
        let mut rho_block = DMatrix::<f64>::zeros(rows, n_chan);
        for r in 0..rows {
            for c in 0..n_chan {
                rho_block[(r, c)] = t.data[(row0 + r) * n_chan + c];
            }
        }
        let mono_block = block.to_solid.transpose() * rho_block;
        mono.rows_mut(row0, rows).copy_from(&mono_block);
    }

    // Exponential (MGF) coefficients; the reflected copy gets (−1)^{|β|}.
    let mut exp_plus = mono.clone();
    let mut exp_minus = mono;
    for (r, m) in monomials.iter().enumerate() {
        let parity = if m.degree() % 2 == 0 { 1.0 } else { -1.0 };
        for c in 0..n_chan {
            exp_plus[(r, c)] /= facts[r];
            exp_minus[(r, c)] = parity * exp_minus[(r, c)] / facts[r];
        }
    }

    // Precompute index pairs (α, β) → γ with |α| + |β| ≤ d.
    let mut products: Vec<(usize, usize, usize)> = Vec::new();
    for (ia, ma) in monomials.iter().enumerate() {
        for (ib, mb) in monomials.iter().enumerate() {
            if ma.degree() + mb.degree() <= d {
                let sum = Monomial { i: ma.i + mb.i, j: ma.j + mb.j, k: ma.k + mb.k };
                products.push((ia, ib, monomial_position(&sum)));
            }
        }
    }

    let mut out = TranslationalTensor::zeros(d, d_prime);
    let pair_cols = out.pair_cols();
    let mut conv = DMatrix::<f64>::zeros(n_mono, pair_cols);
    for c1 in 0..n_chan {
        for c2 in 0..n_chan {
            let col = c1 * n_chan + c2;
            for &(ia, ib, ig) in &products {
                conv[(ig, col)] += exp_plus[(ia, c1)] * exp_minus[(ib, c2)];
            }
        }
    }
    // Rescale by γ! and convert each degree block to solid harmonics.
    for (r, f) in facts.iter().enumerate() {
        for c in 0..pair_cols {
            conv[(r, c)] *= f;
        }
    }
    for a in 0..=d {
        let block = degree_block(a).expect("degree within cap");
        let row0 = if a == 0 { 0 } else { monomial_count(a - 1) };
        let rows = block.monomials.len();
        let solid_block = block.to_monomial.transpose() * conv.rows(row0, rows);
        for r in 0..rows {
            for c in 0..pair_cols {
                out.data[(row0 + r) * pair_cols + c] = solid_block[(r, c)];
            }
        }
    }
    out
}

/// Report of the bilinear-contraction audit of [`convolve_translational`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticFormReport {
    pub entries_checked: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Verifies that every output entry of the translational correlation is the
/// explicit bilinear contraction of input entries, recomputed through
/// binomial products instead of the factorial-scaled series, and compared
/// entry by entry.
pub fn quadratic_form_check(
    t_in: &RhoMomentTensor,
    t_out: &TranslationalTensor,
    tol: f64,
) -> Result<QuadraticFormReport, MomentsError> {
    if t_in.d != t_out.d || t_in.d_prime != t_out.d_prime {
        return Err(MomentsError::CapMismatch(
            t_in.d, t_in.d_prime, t_out.d, t_out.d_prime,
        ));
    }
    let d = t_in.d;
    let monomials = all_monomials(d);
    let n_chan = channel_count(t_in.d_prime);

    // Independent route: monomial moments via explicit per-degree solves.
    let mut mono = DMatrix::<f64>::zeros(monomials.len(), n_chan);
    for a in 0..=d {
        let block = degree_block(a).expect("degree within cap");
        let row0 = if a == 0 { 0 } else { monomial_count(a - 1) };
        let rows = block.monomials.len();
        let mut rho_block = DMatrix::<f64>::zeros(rows, n_chan);
        for r in 0..rows {
            for c in 0..n_chan {
                rho_block[(r, c)] = t_in.data[(row0 + r) * n_chan + c];
            }
        }
        // Solve to_monomialᵀ · m = ρ instead of using the cached inverse.
        let lu = block.to_monomial.transpose().lu();
        let solved = lu.solve(&rho_block).expect("basis conversion is nonsingular");
        mono.rows_mut(row0, rows).copy_from(&solved);
    }

    let binom = |n: u32, k: u32| crate::util::binomial(n as usize, k as usize);
    let mut max_abs = 0.0_f64;
    let mut max_rel = 0.0_f64;
    let mut checked = 0usize;
    let channels = SHIndex::all_up_to(t_in.d_prime);
    for el in SolidHarmonicBasisElement::all_up_to(d) {
        let a = el.a;
        let block = degree_block(a).expect("degree within cap");
        let col_in_degree = solid_position(&el) - if a == 0 { 0 } else { monomial_count(a - 1) };
        for first in &channels {
            for second in &channels {
                // Independent value: Σ_γ T[γ, el] Σ_{α ≤ γ} C(γ, α)·
                //   m₁[α]·(−1)^{|γ−α|}·m₂[γ−α].
                let mut value = 0.0;
                for (gi, gamma) in block.monomials.iter().enumerate() {
                    let t_coeff = block.to_monomial[(gi, col_in_degree)];
                    if t_coeff == 0.0 {
                        continue;
                    }
                    let mut inner = 0.0;
                    for ai in 0..=gamma.i {
                        for aj in 0..=gamma.j {
                            for ak in 0..=gamma.k {
                                let alpha = Monomial { i: ai, j: aj, k: ak };
                                let beta = Monomial {
                                    i: gamma.i - ai,
                                    j: gamma.j - aj,
                                    k: gamma.k - ak,
                                };
                                let sign = if beta.degree() % 2 == 0 { 1.0 } else { -1.0 };
                                let coeff = binom(gamma.i, ai) * binom(gamma.j, aj) * binom(gamma.k, ak);
                                inner += coeff
                                    * sign
                                    * mono[(monomial_position(&alpha), channel_position(first))]
                                    * mono[(monomial_position(&beta), channel_position(second))];
                            }
                        }
                    }
                    value += t_coeff * inner;
                }
                let got = t_out.entry(&el, first, second);
                let abs = (got - value).abs();
                let rel = abs / got.abs().max(value.abs()).max(1e-300);
                max_abs = max_abs.max(abs);
                if abs > 1e-14 {
                    max_rel = max_rel.max(rel);
                }
                checked += 1;
            }
        }
    }
    Ok(QuadraticFormReport {
        entries_checked: checked,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        pass: max_abs < tol || max_rel < tol,
    })
}
