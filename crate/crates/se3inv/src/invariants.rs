//! Rotation-invariant descriptors of the translational correlation tensor.
//!
//! Every spatial/channel block of the correlation tensor transforms under a
//! rotation as the tensor product of three real irreducible representations
//! (spatial order b, channel degrees n and n'). Coupling n ⊗ n' → ĵ and then
//! b ⊗ ĵ → J turns each block into a list of vectors that transform in the
//! single irrep J; the complete set of degree-2 rotation invariants of two
//! such vectors with equal J is their inner product. The descriptor collects
//! these inner products, normalized by 2J+1, over pairs of coupled channels
//! that share the same spherical structure (n, n', ĵ, J).
//!
//! Two independent evaluation paths are provided. The algebraic path uses
//! the coupling matrices directly. The quadrature path never trusts them:
//! it rotates the tensor blockwise over an SO(3) quadrature, re-extracts the
//! coupled vectors at every node, and Haar-averages the pairings, which
//! converges to the same invariants exactly when the couplings intertwine.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{
    channel_count, compute_rho_moments, convolve_translational, solid_position, MomentsError,
    TranslationalTensor,
};
use crate::so3::{wigner_d_real, real_coupling, SO3Quadrature};
use crate::sphharm::{SHIndex, SolidHarmonicBasisElement};
use crate::surface::{SampledMeasure, SurfaceSample};

/// Errors from descriptor computation.
#[derive(Debug, Clone, Error)]
pub enum InvariantsError {
    #[error("descriptors have different caps: ({0}, {1}) vs ({2}, {3})")]
    CapMismatch(u32, u32, u32, u32),
    #[error("quadrature order {order} is below the required minimum {required}")]
    QuadratureOrderTooSmall { order: u32, required: u32 },
    #[error(transparent)]
    Moments(#[from] MomentsError),
}

/// Version stamp written into serialized descriptors.
pub const DESCRIPTOR_FORMAT_VERSION: u32 = 1;

/// How the entries are normalized: each pairing is divided by 2J+1.
pub const DESCRIPTOR_NORMALIZATION: &str = "pair-gram/(2J+1)";

/// Identity of one coupled channel: spatial block (a, b), channel degrees
/// (n, n'), intermediate coupling ĵ of n ⊗ n', and total spin J of b ⊗ ĵ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelKey {
    pub a: u32,
    pub b: u32,
    pub n: u32,
    pub n_prime: u32,
    pub j_hat: u32,
    pub j_total: u32,
}

/// All coupled channels for caps (d, d') in canonical order: a ascending,
/// b ascending within a, then n, n', ĵ, J ascending.
pub fn channel_keys(d: u32, d_prime: u32) -> Vec<ChannelKey> {
    let mut keys = Vec::new();
    for a in 0..=d {
        let mut b = a % 2;
        loop {
            for n in 0..=d_prime {
                for n_prime in 0..=d_prime {
                    for j_hat in n.abs_diff(n_prime)..=(n + n_prime) {
                        for j_total in b.abs_diff(j_hat)..=(b + j_hat) {
                            keys.push(ChannelKey { a, b, n, n_prime, j_hat, j_total });
                        }
                    }
                }
            }
            if b == a {
                break;
            }
            b += 2;
        }
    }
    keys
}

/// Descriptor entry positions: pairs (i, j), i ≤ j, of channel indices into
/// [`channel_keys`] whose spherical structure (n, n', ĵ, J) agrees, in
/// lexicographic (i, j) order.
pub fn descriptor_pairs(d: u32, d_prime: u32) -> Vec<(usize, usize)> {
    let keys = channel_keys(d, d_prime);
    let mut groups: std::collections::BTreeMap<(u32, u32, u32, u32), Vec<usize>> =
        std::collections::BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        groups.entry((k.n, k.n_prime, k.j_hat, k.j_total)).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for members in groups.values() {
        for (p, &i) in members.iter().enumerate() {
            for &j in &members[p..] {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// How a descriptor was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DescriptorMethod {
    /// Algebraic contraction through coupling matrices.
    Cg,
    /// Haar-averaged pairing over an SO(3) quadrature of the given order.
    Quadrature { order: u32 },
}

/// Flat vector of rotation invariants with its provenance.
///
/// Entry k corresponds to the k-th element of
/// [`descriptor_pairs`]`(d, d_prime)` and equals ⟨z_i, z_j⟩/(2J+1) for the
/// coupled channel vectors z of the source tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantDescriptor {
    pub format_version: u32,
    pub d: u32,
    pub d_prime: u32,
    pub method: DescriptorMethod,
    pub normalization: String,
    /// Whether the source measure was translated to its area centroid.
    pub centered: bool,
    pub entries: Vec<f64>,
}

impl InvariantDescriptor {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Coupled channel extraction
// ---------------------------------------------------------------------------

/// Extracts the coupled vector of every channel, in [`channel_keys`] order.
pub(crate) fn coupled_vectors(f: &TranslationalTensor) -> Vec<DVector<f64>> {
    let (d, d_prime) = (f.d, f.d_prime);
    let mut out = Vec::new();
    for a in 0..=d {
        let mut b = a % 2;
        loop {
            for n in 0..=d_prime {
                for n_prime in 0..=d_prime {
                    // Spatial × (m, m') block: rows c ∈ [−b, b], columns
                    // (m, m') with m slow.
                    let rows = (2 * b + 1) as usize;
                    let cols = ((2 * n + 1) * (2 * n_prime + 1)) as usize;
                    let mut block = DMatrix::<f64>::zeros(rows, cols);
                    for (ri, c) in (-(b as i32)..=b as i32).enumerate() {
                        let el = SolidHarmonicBasisElement { a, b, c };
                        for (mi, m) in (-(n as i32)..=n as i32).enumerate() {
                            for (mpi, mp) in (-(n_prime as i32)..=n_prime as i32).enumerate() {
                                block[(ri, mi * (2 * n_prime as usize + 1) + mpi)] = f.entry(
                                    &el,
                                    &SHIndex { n, m },
                                    &SHIndex { n: n_prime, m: mp },
                                );
                            }
                        }
                    }
                    for j_hat in n.abs_diff(n_prime)..=(n + n_prime) {
                        let g1 = real_coupling(n, n_prime, j_hat);
                        // y has rows c, columns m_ĵ.
                        let y = &block * g1.transpose();
                        for j_total in b.abs_diff(j_hat)..=(b + j_hat) {
                            let g2 = real_coupling(b, j_hat, j_total);
                            // Flatten y with the spatial index slow, matching
                            // the coupling's column convention.
                            let yv = DVector::from_iterator(
                                y.nrows() * y.ncols(),
                                (0..y.nrows())
                                    .flat_map(|r| (0..y.ncols()).map(move |c| (r, c)))
                                    .map(|(r, c)| y[(r, c)]),
                            );
                            out.push(g2.as_ref() * yv);
                        }
                    }
                }
            }
            if b == a {
                break;
            }
            b += 2;
        }
    }
    out
}

fn descriptor_from_vectors(
    f: &TranslationalTensor,
    z: &[DVector<f64>],
    keys: &[ChannelKey],
    method: DescriptorMethod,
) -> InvariantDescriptor {
    let pairs = descriptor_pairs(f.d, f.d_prime);
    let entries = pairs
        .iter()
        .map(|&(i, j)| z[i].dot(&z[j]) / (2 * keys[i].j_total + 1) as f64)
        .collect();
    InvariantDescriptor {
        format_version: DESCRIPTOR_FORMAT_VERSION,
        d: f.d,
        d_prime: f.d_prime,
        method,
        normalization: DESCRIPTOR_NORMALIZATION.to_string(),
        centered: false,
        entries,
    }
}

/// Algebraic path: couples every block to total spin J through the coupling
/// matrices and collects the matched-J pairings.
pub fn so3_convolve_cg(f: &TranslationalTensor) -> Result<InvariantDescriptor, InvariantsError> {
    let keys = channel_keys(f.d, f.d_prime);
    let z = coupled_vectors(f);
    debug_assert_eq!(keys.len(), z.len());
    Ok(descriptor_from_vectors(f, &z, &keys, DescriptorMethod::Cg))
}

// ---------------------------------------------------------------------------
// Quadrature path
// ---------------------------------------------------------------------------

/// Applies the blockwise rotation action: each (a, b) spatial block is
/// multiplied by the real Wigner matrix of order b, each channel index by
/// the matrix of its degree.
fn rotate_tensor(
    f: &TranslationalTensor,
    w: &[DMatrix<f64>], // real Wigner matrices indexed by degree
) -> TranslationalTensor {
    let (d, d_prime) = (f.d, f.d_prime);
    let n_chan = channel_count(d_prime);
    let pair_cols = n_chan * n_chan;
    let n_solid = crate::moments::solid_count(d);

    // Stage 1: spatial index. Blocks of rows (a, b) are contiguous.
    let mut stage1 = vec![0.0_f64; n_solid * pair_cols];
    for a in 0..=d {
        let mut b = a % 2;
        loop {
            let row0 = solid_position(&SolidHarmonicBasisElement { a, b, c: -(b as i32) });
            let dim = (2 * b + 1) as usize;
            let wb = &w[b as usize];
            for r in 0..dim {
                for c in 0..pair_cols {
                    let mut acc = 0.0;
                    for rp in 0..dim {
                        acc += wb[(r, rp)] * f.raw_data()[(row0 + rp) * pair_cols + c];
                    }
                    stage1[(row0 + r) * pair_cols + c] = acc;
                }
            }
            if b == a {
                break;
            }
            b += 2;
        }
    }

    // Stage 2 and 3: the two channel indices, one block-diagonal degree at
    // a time. Column index is pos1 * n_chan + pos2 with pos = n² + (m + n).
    let mut stage2 = vec![0.0_f64; n_solid * pair_cols];
    for n in 0..=d_prime {
        let wn = &w[n as usize];
        let dim = (2 * n + 1) as usize;
        let base = (n * n) as usize;
        for m in 0..dim {
            for other in 0..n_chan {
                let col = (base + m) * n_chan + other;
                for r in 0..n_solid {
                    let mut acc = 0.0;
                    for mp in 0..dim {
                        acc += wn[(m, mp)] * stage1[r * pair_cols + (base + mp) * n_chan + other];
                    }
                    stage2[r * pair_cols + col] = acc;
                }
            }
        }
    }
    let mut out = TranslationalTensor::zeros(d, d_prime);
    let data = out.raw_data_mut();
    for n in 0..=d_prime {
        let wn = &w[n as usize];
        let dim = (2 * n + 1) as usize;
        let base = (n * n) as usize;
        for m in 0..dim {
            for other in 0..n_chan {
                let col = other * n_chan + (base + m);
                for r in 0..n_solid {
                    let mut acc = 0.0;
                    for mp in 0..dim {
                        acc += wn[(m, mp)] * stage2[r * pair_cols + other * n_chan + (base + mp)];
                    }
                    data[r * pair_cols + col] = acc;
                }
            }
        }
    }
    out
}

/// Quadrature path: rotates the tensor over the SO(3) nodes, re-extracts the
/// coupled vectors at each node, and Haar-averages the matched pairings.
///
/// Requires `quad.order ≥ 2·d'`. With order ≥ d + 2d' the Haar average is
/// exact and agrees with [`so3_convolve_cg`] to rounding error.
pub fn so3_convolve_quadrature(
    f: &TranslationalTensor,
    quad: &SO3Quadrature,
) -> Result<InvariantDescriptor, InvariantsError> {
    let required = 2 * f.d_prime;
    if quad.order < required {
        return Err(InvariantsError::QuadratureOrderTooSmall { order: quad.order, required });
    }
    let keys = channel_keys(f.d, f.d_prime);
    let pairs = descriptor_pairs(f.d, f.d_prime);
    let max_degree = f.d.max(f.d_prime) as usize;
    let mut entries = vec![0.0_f64; pairs.len()];
    for node in &quad.nodes {
        let w: Vec<DMatrix<f64>> = (0..=max_degree)
            .map(|j| wigner_d_real(j as u32, &node.rotation))
            .collect();
        let rotated = rotate_tensor(f, &w);
        let z = coupled_vectors(&rotated);
        for (e, &(i, j)) in entries.iter_mut().zip(&pairs) {
            *e += node.weight * z[i].dot(&z[j]) / (2 * keys[i].j_total + 1) as f64;
        }
    }
    Ok(InvariantDescriptor {
        format_version: DESCRIPTOR_FORMAT_VERSION,
        d: f.d,
        d_prime: f.d_prime,
        method: DescriptorMethod::Quadrature { order: quad.order },
        normalization: DESCRIPTOR_NORMALIZATION.to_string(),
        centered: false,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Distance and pipeline
// ---------------------------------------------------------------------------

/// Euclidean distance between two descriptors with identical caps.
pub fn descriptor_distance(
    a: &InvariantDescriptor,
    b: &InvariantDescriptor,
) -> Result<f64, InvariantsError> {
    if a.d != b.d || a.d_prime != b.d_prime || a.entries.len() != b.entries.len() {
        return Err(InvariantsError::CapMismatch(a.d, a.d_prime, b.d, b.d_prime));
    }
    let sq: Vec<f64> = a
        .entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    Ok(crate::util::pairwise_sum(&sq).sqrt())
}

/// Translates a measure so its weighted centroid sits at the origin.
pub fn center_measure(measure: &SampledMeasure) -> SampledMeasure {
    let c = measure.centroid();
    SampledMeasure {
        samples: measure
            .samples
            .iter()
            .map(|s| SurfaceSample {
                point: s.point - c.coords,
                normal: s.normal,
                weight: s.weight,
            })
            .collect(),
    }
}

/// Full pipeline from a sampled measure to its invariant descriptor:
/// centering, moment tensor, translational correlation, algebraic coupling.
pub fn descriptor_for_measure(
    measure: &SampledMeasure,
    d: u32,
    d_prime: u32,
) -> Result<InvariantDescriptor, InvariantsError> {
    let centered = center_measure(measure);
    let rho = compute_rho_moments(&centered, d, d_prime)?;
    let f = convolve_translational(&rho);
    let mut descriptor = so3_convolve_cg(&f)?;
    descriptor.centered = true;
    Ok(descriptor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::RhoMomentTensor;
    use crate::so3::so3_quadrature;
    use crate::surface::{apply_rigid, make_shape, sample_measure, ShapeKind, TriangleRule};
    use approx::assert_relative_eq;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_tensor(rng: &mut ChaCha8Rng, d: u32, d_prime: u32) -> TranslationalTensor {
        let mut t = TranslationalTensor::zeros(d, d_prime);
        for v in t.raw_data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn channel_enumeration_respects_triangle_ranges() {
        let keys = channel_keys(4, 3);
        assert!(!keys.is_empty());
        for k in &keys {
            assert!(k.b <= k.a && (k.a - k.b) % 2 == 0, "bad spatial block {k:?}");
            assert!(k.j_hat >= k.n.abs_diff(k.n_prime) && k.j_hat <= k.n + k.n_prime);
            assert!(k.j_total >= k.b.abs_diff(k.j_hat) && k.j_total <= k.b + k.j_hat);
        }
        // Sorted canonical order and no duplicates.
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), keys.len());

        let pairs = descriptor_pairs(4, 3);
        let mut seen = pairs.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, pairs, "pair list must be sorted and unique");
        for &(i, j) in &pairs {
            assert!(i <= j);
            let (ki, kj) = (keys[i], keys[j]);
            assert_eq!(
                (ki.n, ki.n_prime, ki.j_hat, ki.j_total),
                (kj.n, kj.n_prime, kj.j_hat, kj.j_total),
                "paired channels must share spherical structure"
            );
        }
    }

    #[test]
    fn zero_tensor_gives_zero_descriptor() {
        let f = TranslationalTensor::zeros(3, 2);
        let d = so3_convolve_cg(&f).unwrap();
        assert!(d.entries.iter().all(|&v| v == 0.0));
        let q = so3_quadrature(4).unwrap();
        let dq = so3_convolve_quadrature(&f, &q).unwrap();
        assert_eq!(d.entries.len(), dq.entries.len());
        assert!(dq.entries.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_sphere_tensor_is_pure_spin_zero() {
        // The exact unit-sphere moment tensor is diagonal: entry
        // ((a,b,c),(n,m)) = δ_{(b,c),(n,m)}. Its correlation descriptor must
        // vanish in every J ≠ 0 pairing because the source is rotation
        // invariant, and the fully scalar channel must equal 4π.
        let (dd, dp) = (4, 3);
        let mut rho = RhoMomentTensor::zeros(dd, dp);
        for el in SolidHarmonicBasisElement::all_up_to(dd) {
            if el.b <= dp {
                *rho.entry_mut(&el, &SHIndex { n: el.b, m: el.c }) = 1.0;
            }
        }
        let f = convolve_translational(&rho);
        let desc = so3_convolve_cg(&f).unwrap();
        let keys = channel_keys(dd, dp);
        let pairs = descriptor_pairs(dd, dp);
        let scale = desc.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(scale > 1.0, "sphere descriptor should have unit-scale entries");
        for (&(i, _), &v) in pairs.iter().zip(&desc.entries) {
            if keys[i].j_total != 0 {
                assert!(
                    v.abs() <= 1e-10 * scale,
                    "J={} channel {i} should vanish on the sphere, got {v}",
                    keys[i].j_total
                );
            }
        }
        // The (a,b,n,n',ĵ,J) = (0,0,0,0,0,0) self-pairing: the correlation
        // mass is (4π·Y₀₀²)... the solid-harmonic coefficient is √(4π), so
        // the pairing is 4π.
        let idx = pairs
            .iter()
            .position(|&(i, j)| i == 0 && j == 0)
            .expect("scalar self-pair present");
        assert_relative_eq!(desc.entries[idx], 4.0 * PI, max_relative = 1e-12);
    }

    #[test]
    fn meshed_sphere_descriptor_is_nearly_spin_zero() {
        let mesh = make_shape(&ShapeKind::Sphere { radius: 1.0 }, 4);
        let measure = sample_measure(&mesh, TriangleRule::ThreePoint);
        let desc = descriptor_for_measure(&measure, 3, 2).unwrap();
        let keys = channel_keys(3, 2);
        let pairs = descriptor_pairs(3, 2);
        let scale = desc.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for (&(i, _), &v) in pairs.iter().zip(&desc.entries) {
            if keys[i].j_total != 0 {
                assert!(
                    v.abs() <= 1e-4 * scale,
                    "J={} entry {v} too large for a meshed sphere",
                    keys[i].j_total
                );
            }
        }
    }

    #[test]
    fn descriptor_is_invariant_under_rigid_motions() {
        let mesh = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.3, c: 1.7 }, 2);
        let base = descriptor_for_measure(&sample_measure(&mesh, TriangleRule::ThreePoint), 4, 3)
            .unwrap();
        let norm = base.entries.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for trial in 0..5 {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0_f64),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let rot = Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(axis),
                rng.gen_range(0.0..2.0 * PI),
            );
            let shift = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let moved = apply_rigid(&mesh, &rot, &shift);
            let other =
                descriptor_for_measure(&sample_measure(&moved, TriangleRule::ThreePoint), 4, 3)
                    .unwrap();
            let dist = descriptor_distance(&base, &other).unwrap();
            assert!(
                dist <= 1e-9 * norm,
                "trial {trial}: rigid motion changed descriptor by {dist} (norm {norm})"
            );
        }
    }

    #[test]
    fn quadrature_path_matches_algebraic_path_on_random_tensors() {
        // The decisive cross-check of the coupling machinery: the quadrature
        // path rotates blocks with Wigner matrices and never uses the
        // couplings' intertwining property, yet must reproduce the algebraic
        // entries exactly once the quadrature is sharp enough (order ≥ d+2d').
        let (dd, dp) = (2, 2);
        let quad = so3_quadrature(dd + 2 * dp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for trial in 0..3 {
            let f = random_tensor(&mut rng, dd, dp);
            let a = so3_convolve_cg(&f).unwrap();
            let b = so3_convolve_quadrature(&f, &quad).unwrap();
            let scale = a.entries.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            for (i, (x, y)) in a.entries.iter().zip(&b.entries).enumerate() {
                assert!(
                    (x - y).abs() <= 1e-10 * scale,
                    "trial {trial}, entry {i}: algebraic {x} vs quadrature {y}"
                );
            }
        }
    }

    #[test]
    fn insufficient_quadrature_order_is_rejected() {
        let f = TranslationalTensor::zeros(2, 2);
        let quad = so3_quadrature(3).unwrap();
        assert!(matches!(
            so3_convolve_quadrature(&f, &quad),
            Err(InvariantsError::QuadratureOrderTooSmall { order: 3, required: 4 })
        ));
    }

    #[test]
    fn descriptor_scales_with_fourth_power_of_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut rho = RhoMomentTensor::zeros(3, 2);
        // Random moment tensor; the full pipeline is degree 4 in it.
        let el_list = SolidHarmonicBasisElement::all_up_to(3);
        for el in &el_list {
            for idx in SHIndex::all_up_to(2) {
                *rho.entry_mut(el, &idx) = rng.gen_range(-1.0..1.0);
            }
        }
        let lambda = 1.7_f64;
        let base = so3_convolve_cg(&convolve_translational(&rho)).unwrap();
        let scaled = so3_convolve_cg(&convolve_translational(&rho.scaled(lambda))).unwrap();
        for (x, y) in base.entries.iter().zip(&scaled.entries) {
            assert_relative_eq!(
                lambda.powi(4) * *x,
                *y,
                epsilon = 1e-12,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn distance_basics_and_cap_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let f = random_tensor(&mut rng, 2, 1);
        let a = so3_convolve_cg(&f).unwrap();
        assert_eq!(descriptor_distance(&a, &a).unwrap(), 0.0);

        let g = random_tensor(&mut rng, 2, 1);
        let b = so3_convolve_cg(&g).unwrap();
        let dab = descriptor_distance(&a, &b).unwrap();
        assert!(dab > 0.0);
        assert_relative_eq!(
            dab,
            descriptor_distance(&b, &a).unwrap(),
            max_relative = 1e-15
        );

        let c = so3_convolve_cg(&random_tensor(&mut rng, 2, 2)).unwrap();
        assert!(matches!(
            descriptor_distance(&a, &c),
            Err(InvariantsError::CapMismatch(..))
        ));
    }

    #[test]
    fn distinct_shapes_are_separated() {
        let s1 = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.0, c: 1.0 }, 2);
        let s2 = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.0, c: 1.4 }, 2);
        let d1 = descriptor_for_measure(&sample_measure(&s1, TriangleRule::ThreePoint), 3, 2)
            .unwrap();
        let d2 = descriptor_for_measure(&sample_measure(&s2, TriangleRule::ThreePoint), 3, 2)
            .unwrap();
        let norm = d1.entries.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dist = descriptor_distance(&d1, &d2).unwrap();
        assert!(
            dist > 1e-3 * norm,
            "descriptors of distinct ellipsoids too close: {dist} vs norm {norm}"
        );
    }
}
