//! Embedded self-test suites for the deployed binary.
//!
//! Each suite re-derives a small, independent ground truth (algebraic
//! identities, brute-force summation, closed-form geometry) and checks the
//! library against it at tight tolerances. A corruption hook lets callers
//! verify that the harness actually detects damage: it perturbs one
//! coupling-table entry and must turn exactly that suite red, by name.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fiber::{iota4, psi, tau};
use crate::invariants::{
    descriptor_distance, descriptor_for_measure, so3_convolve_cg, so3_convolve_quadrature,
};
use crate::moments::{
    compute_rho_moments, convolve_translational, monomial_count, TranslationalTensor,
};
use crate::so3::{
    kronecker_decompose, real_coupling, rotation_from_euler, so3_quadrature, wigner_d_real,
};
use crate::sphharm::{degree_block, eval_y_real_vec, Monomial, SHIndex};
use crate::surface::{
    apply_rigid, make_shape, sample_measure, SampledMeasure, ShapeKind, SurfaceSample,
    TriangleRule,
};

/// Outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Measured worst defect and the tolerance it was held to.
    pub detail: String,
}

/// Damage injected to prove the harness detects it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// Perturbs one entry of a coupling table inside the table suite.
    CouplingTable,
}

fn verdict(name: &'static str, defect: f64, tol: f64) -> SuiteResult {
    SuiteResult {
        name,
        passed: defect.is_finite() && defect <= tol,
        detail: format!("max defect {defect:.3e} (tolerance {tol:.1e})"),
    }
}

/// Coupling tables: completeness and orthonormality of the real coupling
/// blocks for a spread of degree pairs, with the Kronecker decomposition
/// reassembling the identity.
fn suite_coupling_tables(corruption: Option<Corruption>) -> SuiteResult {
    let mut defect: f64 = 0.0;
    for (j1, j2) in [(1u32, 1u32), (2, 1), (2, 2), (3, 2)] {
        let dim = ((2 * j1 + 1) * (2 * j2 + 1)) as usize;
        let mut completeness = nalgebra::DMatrix::<f64>::zeros(dim, dim);
        for jj in j1.abs_diff(j2)..=j1 + j2 {
            let mut g = (*real_coupling(j1, j2, jj)).clone();
            if corruption == Some(Corruption::CouplingTable) && jj == j1 + j2 {
                g[(0, 0)] += 1e-3;
            }
            // Rows are orthonormal; the blocks together resolve the identity
            // on the product space.
            let ggt = &g * g.transpose();
            let eye = nalgebra::DMatrix::<f64>::identity(ggt.nrows(), ggt.ncols());
            defect = defect.max((ggt - eye).abs().max());
            completeness += g.transpose() * &g;
        }
        let eye = nalgebra::DMatrix::<f64>::identity(dim, dim);
        defect = defect.max((completeness - eye).abs().max());

        for (jj, g) in kronecker_decompose(j1, j2) {
            let reference = real_coupling(j1, j2, jj);
            defect = defect.max((&*g - &*reference).abs().max());
        }
    }
    verdict("coupling-tables", defect, 1e-12)
}

/// Wigner matrices: orthogonality and the homomorphism property on seeded
/// random rotations for degrees up to 4.
fn suite_wigner() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut defect: f64 = 0.0;
    for _ in 0..6 {
        let r1 = rotation_from_euler(
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::PI),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let r2 = rotation_from_euler(
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::PI),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        for j in 0..=4u32 {
            let w1 = wigner_d_real(j, &r1);
            let w2 = wigner_d_real(j, &r2);
            let w12 = wigner_d_real(j, &(r1 * r2));
            let eye = nalgebra::DMatrix::<f64>::identity(w1.nrows(), w1.ncols());
            defect = defect.max((&w1 * w1.transpose() - &eye).abs().max());
            defect = defect.max((&w1 * &w2 - w12).abs().max());
        }
    }
    verdict("wigner-representation", defect, 1e-10)
}

/// Moment descriptor invariance: a rigidly moved mesh must give the same
/// descriptor as the original.
fn suite_descriptor_invariance() -> SuiteResult {
    let mesh = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.2, c: 0.8 }, 2);
    let rotation = rotation_from_euler(0.7, 1.1, -0.4);
    let moved = apply_rigid(&mesh, &rotation, &Vector3::new(0.4, -1.2, 2.0));
    let a = sample_measure(&mesh, TriangleRule::ThreePoint);
    let b = sample_measure(&moved, TriangleRule::ThreePoint);
    let (d, d_prime) = (3, 2);
    let result = descriptor_for_measure(&a, d, d_prime).and_then(|da| {
        let db = descriptor_for_measure(&b, d, d_prime)?;
        let scale = da.entries.iter().map(|e| e * e).sum::<f64>().sqrt();
        Ok(descriptor_distance(&da, &db)? / scale.max(1e-300))
    });
    match result {
        Ok(relative) => verdict("descriptor-invariance", relative, 1e-8),
        Err(e) => SuiteResult {
            name: "descriptor-invariance",
            passed: false,
            detail: format!("pipeline error: {e}"),
        },
    }
}

/// Translational correlation against brute-force pair summation on a tiny
/// point cloud.
fn suite_translation_product() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let samples: Vec<SurfaceSample> = (0..6)
        .map(|_| {
            let normal = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            SurfaceSample {
                point: nalgebra::Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                normal,
                weight: rng.gen_range(0.2..1.0),
            }
        })
        .collect();
    let measure = SampledMeasure { samples };
    let d = 4u32;
    let f: TranslationalTensor = match compute_rho_moments(&measure, d, 1) {
        Ok(t) => convolve_translational(&t),
        Err(e) => {
            return SuiteResult {
                name: "translation-product",
                passed: false,
                detail: format!("moment error: {e}"),
            }
        }
    };
    let channels = [SHIndex { n: 0, m: 0 }, SHIndex { n: 1, m: 0 }, SHIndex { n: 1, m: 1 }];
    let mut defect: f64 = 0.0;
    for first in &channels {
        for second in &channels {
            let mut brute = vec![0.0_f64; monomial_count(d)];
            for si in &measure.samples {
                for sj in &measure.samples {
                    let w = si.weight
                        * eval_y_real_vec(*first, &si.normal)
                        * sj.weight
                        * eval_y_real_vec(*second, &sj.normal);
                    let diff = si.point - sj.point;
                    let mut row = 0usize;
                    for a in 0..=d {
                        for m in Monomial::of_degree(a) {
                            brute[row] += w
                                * diff.x.powi(m.i as i32)
                                * diff.y.powi(m.j as i32)
                                * diff.z.powi(m.k as i32);
                            row += 1;
                        }
                    }
                }
            }
            let col = f.pair_column(first, second);
            for a in 0..=d {
                let block = degree_block(a).expect("block within cap");
                let row0 = if a == 0 { 0 } else { monomial_count(a - 1) };
                let rows = block.monomials.len();
                let mono = block.to_solid.transpose() * col.rows(row0, rows).clone_owned();
                for r in 0..rows {
                    let expected = brute[row0 + r];
                    defect =
                        defect.max((mono[r] - expected).abs() / expected.abs().max(1.0));
                }
            }
        }
    }
    verdict("translation-product", defect, 1e-12)
}

/// Canonical frames: the section/frame round-trip rebuilds seeded random
/// configurations exactly.
fn suite_canonical_section() -> SuiteResult {
    fn dir(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen_range(-1.0_f64..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                return v.normalize();
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut defect: f64 = 0.0;
    let mut checked = 0;
    while checked < 50 {
        let scale = rng.gen_range(0.5..3.0);
        let a = dir(&mut rng) * scale;
        let (b, c) = (dir(&mut rng), dir(&mut rng));
        let (Ok(g), Ok((r, i))) = (tau(&a, &b, &c, 0.05), iota4(&a, &b, &c, 0.05)) else {
            continue;
        };
        let Ok((a2, b2, c2)) = psi(&g, r, &i, 0.05) else {
            continue;
        };
        defect = defect.max((a2 - a).norm()).max((b2 - b).norm()).max((c2 - c).norm());
        checked += 1;
    }
    verdict("canonical-section", defect, 1e-10)
}

/// Descriptor paths: the algebraic contraction agrees with the averaged
/// quadrature pairing on a random tensor.
fn suite_descriptor_paths() -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (d, d_prime) = (2u32, 1u32);
    let mut t = TranslationalTensor::zeros(d, d_prime);
    for v in t.raw_data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let result = (|| {
        let quad = so3_quadrature(d + 2 * d_prime)?;
        let a = so3_convolve_cg(&t)?;
        let b = so3_convolve_quadrature(&t, &quad)?;
        let defect = a
            .entries
            .iter()
            .zip(&b.entries)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0_f64, f64::max);
        Ok::<f64, Box<dyn std::error::Error>>(defect)
    })();
    match result {
        Ok(defect) => verdict("descriptor-paths", defect, 1e-10),
        Err(e) => SuiteResult {
            name: "descriptor-paths",
            passed: false,
            detail: format!("pipeline error: {e}"),
        },
    }
}

/// Runs every embedded suite, optionally injecting damage to verify the
/// harness catches it.
pub fn run_all(corruption: Option<Corruption>) -> Vec<SuiteResult> {
    vec![
        suite_coupling_tables(corruption),
        suite_wigner(),
        suite_descriptor_invariance(),
        suite_translation_product(),
        suite_canonical_section(),
        suite_descriptor_paths(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_unperturbed() {
        let results = run_all(None);
        assert_eq!(results.len(), 6);
        for r in &results {
            assert!(r.passed, "suite {} failed: {}", r.name, r.detail);
        }
    }

    #[test]
    fn coupling_corruption_turns_exactly_that_suite_red() {
        let results = run_all(Some(Corruption::CouplingTable));
        for r in &results {
            if r.name == "coupling-tables" {
                assert!(!r.passed, "corruption was not detected: {}", r.detail);
            } else {
                assert!(r.passed, "corruption leaked into {}: {}", r.name, r.detail);
            }
        }
    }
}
