//! Numerical audits of the two rank conditions behind fiber reconstruction.
//!
//! The first condition (⋆) concerns pairs of surface points with equal
//! normals: both shape operators must be nondegenerate, and away from the
//! diagonal the difference of the two second fundamental forms (in a common
//! tangent frame) must have full rank. The second condition (⋆⋆) concerns
//! pairs of point-pairs with equal invariant 4-tuples: the invariant map
//! must have rank 4 along the pair space, and the rotation relating the two
//! configurations must change the shape operator at full rank — unless that
//! rotation is a global symmetry of the surface, in which case the two
//! configurations describe the same rigid copy and are exempt.
//!
//! All checks are sampled audits on a triangle mesh: candidates are found
//! by spatial hashing, ranks are decided against scale-aware thresholds,
//! failing weight is accumulated into a bad fraction, and the verdict is
//! pass / fail / inconclusive with monotone dependence on the tolerances.

use std::collections::HashMap;

use nalgebra::{DMatrix, Matrix2, Matrix3, Point3, Rotation3, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fiber::{iota3, tau, vertex_areas};
use crate::surface::{estimate_shape_operator, MeshError, TriangleMesh, VertexGeometry};

/// Errors from the genericity audits.
#[derive(Debug, Error)]
pub enum GenericityError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Verdict of an audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "pass"),
            Verdict::Fail => write!(f, "fail"),
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

/// Thresholds and budgets shared by both audits.
#[derive(Debug, Clone, Copy)]
pub struct GenericityTolerances {
    /// Angle under which two vertex normals count as equal.
    pub angle_tol: f64,
    /// Relative threshold on σ_min of a shape operator (vs curvature scale).
    pub shape_rank_rel: f64,
    /// Relative threshold on σ_min of a shape-operator difference
    /// (vs curvature scale). Larger than `shape_rank_rel` because the
    /// difference inherits the curvature-estimation error of both slots.
    pub difference_rank_rel: f64,
    /// Relative threshold on σ_min of the rotated-shape differences in the
    /// pair-of-pairs audit, where a candidate only counts as degenerate
    /// when both slots are simultaneously near-singular.
    pub x4_difference_rank_rel: f64,
    /// Threshold on σ₄/σ₁ of the invariant-map Jacobian.
    pub iota_rank_rel: f64,
    /// Invariant-tuple distance under which two pair elements count equal.
    pub match_tol: f64,
    /// Multiples of the mesh spacing treated as the diagonal family.
    pub diagonal_factor: f64,
    /// Bad fraction below which the audit passes.
    pub pass_fraction: f64,
    /// Bad fraction above which the audit fails.
    pub fail_fraction: f64,
    /// Maximum number of pair-of-pair candidates examined.
    pub x4_budget: usize,
    /// Maximum number of pair elements entering the ι₄ index.
    pub x4_elements: usize,
    /// Multiples of the mesh spacing for the global-symmetry probe.
    pub deck_tol_factor: f64,
}

impl GenericityTolerances {
    /// Defaults scaled to the mesh resolution.
    pub fn for_mesh(mesh: &TriangleMesh) -> Self {
        let h = mesh.mean_spacing();
        Self {
            angle_tol: (2.0 * h).clamp(0.05, 0.25),
            shape_rank_rel: 1e-3,
            difference_rank_rel: 0.05,
            x4_difference_rank_rel: 0.01,
            iota_rank_rel: 1e-3,
            match_tol: 0.75 * h,
            diagonal_factor: 2.5,
            pass_fraction: 0.01,
            fail_fraction: 0.05,
            x4_budget: 200_000,
            x4_elements: 60_000,
            deck_tol_factor: 1.0,
        }
    }
}

/// Curvature scale of the audited surface: the mean absolute principal
/// curvature, floored by the inverse bounding radius so that flat surfaces
/// still get a meaningful rank threshold.
pub fn curvature_scale(geometry: &[VertexGeometry], mesh: &TriangleMesh) -> f64 {
    let mean = geometry
        .iter()
        .map(|g| (g.principal.0.abs() + g.principal.1.abs()) / 2.0)
        .sum::<f64>()
        / geometry.len().max(1) as f64;
    let bound = mesh
        .vertices
        .iter()
        .map(|v| v.coords.norm())
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    mean.max(0.1 / bound)
}

// ---------------------------------------------------------------------------
// X₂ candidates
// ---------------------------------------------------------------------------

/// One equal-normal candidate: an ordered vertex pair.
#[derive(Debug, Clone, Copy)]
pub struct X2Candidate {
    pub first: usize,
    pub second: usize,
    /// Angle between the two normals.
    pub angle: f64,
    /// True when the two points are within a few spacings of each other
    /// (the zero-difference family, present on every surface).
    pub diagonal: bool,
}

/// Spatial hash on unit vectors with cubic cells of the given size.
fn normal_index(normals: &[Vector3<f64>], cell: f64) -> HashMap<(i32, i32, i32), Vec<usize>> {
    let mut map: HashMap<(i32, i32, i32), Vec<usize>> = HashMap::new();
    for (idx, n) in normals.iter().enumerate() {
        let key = (
            (n.x / cell).floor() as i32,
            (n.y / cell).floor() as i32,
            (n.z / cell).floor() as i32,
        );
        map.entry(key).or_default().push(idx);
    }
    map
}

/// All ordered vertex pairs whose normals agree within `angle_tol`,
/// including every diagonal pair (m, m). Found through a spatial index on
/// the normals, so the cost is near-linear for surfaces whose Gauss map is
/// finite-to-one.
///
/// A pair is classified as diagonal when its two points can lie on the same
/// sheet of the normal constraint: along the surface a normal rotation of
/// `angle_tol` reaches at most `angle_tol / σ_min(S)` away, so anything
/// inside that radius (floored by a few mesh spacings) is the sampled
/// thickening of the x = x' family rather than a genuine second preimage.
pub fn find_x2_candidates(
    mesh: &TriangleMesh,
    geometry: &[VertexGeometry],
    tol: &GenericityTolerances,
) -> Vec<X2Candidate> {
    let angle_tol = tol.angle_tol;
    let h = mesh.mean_spacing();
    let normals: Vec<Vector3<f64>> = geometry.iter().map(|g| g.normal).collect();
    let sigma_min: Vec<f64> = geometry
        .iter()
        .map(|g| sigma_of_2x2(&g.shape).1.max(1e-9))
        .collect();
    let cell = angle_tol.max(1e-3);
    let index = normal_index(&normals, cell);
    let mut out = Vec::new();
    for (i, n) in normals.iter().enumerate() {
        out.push(X2Candidate { first: i, second: i, angle: 0.0, diagonal: true });
        let base = (
            (n.x / cell).floor() as i32,
            (n.y / cell).floor() as i32,
            (n.z / cell).floor() as i32,
        );
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = index.get(&(base.0 + dx, base.1 + dy, base.2 + dz))
                    else {
                        continue;
                    };
                    for &j in bucket {
                        if j == i {
                            continue;
                        }
                        let cosine = n.dot(&normals[j]).clamp(-1.0, 1.0);
                        let angle = cosine.acos();
                        if angle <= angle_tol {
                            let sheet_reach =
                                angle_tol / sigma_min[i].min(sigma_min[j]);
                            let diagonal_dist =
                                (tol.diagonal_factor * h).max(2.0 * sheet_reach);
                            out.push(X2Candidate {
                                first: i,
                                second: j,
                                angle,
                                diagonal: (mesh.vertices[i] - mesh.vertices[j]).norm()
                                    <= diagonal_dist,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Property ⋆
// ---------------------------------------------------------------------------

/// Worst offenders recorded by the ⋆ audit.
#[derive(Debug, Clone)]
pub struct X2Witness {
    pub first: usize,
    pub second: usize,
    pub normal: Vector3<f64>,
    /// Singular values of the two shape operators.
    pub sigma_first: (f64, f64),
    pub sigma_second: (f64, f64),
    /// σ_min of the difference map, absent on diagonal pairs.
    pub sigma_difference: Option<f64>,
    pub diagonal: bool,
}

/// Result of the ⋆ audit.
#[derive(Debug, Clone)]
pub struct StarReport {
    pub candidates: usize,
    pub diagonal_candidates: usize,
    pub curvature_scale: f64,
    pub shape_rank_tol: f64,
    pub difference_rank_tol: f64,
    /// Weight fraction failing the shape-operator rank requirement.
    pub bad_fraction_shape: f64,
    /// Weight fraction failing the difference-map rank requirement
    /// (non-diagonal candidates only).
    pub bad_fraction_difference: f64,
    /// Combined failing weight fraction.
    pub bad_fraction: f64,
    pub verdict: Verdict,
    pub witnesses: Vec<X2Witness>,
}

fn sigma_of_2x2(m: &Matrix2<f64>) -> (f64, f64) {
    let svd = m.svd(false, false);
    let s = svd.singular_values;
    (s[0].max(s[1]), s[0].min(s[1]))
}

/// Shape operator of vertex `g` expressed in the tangent frame of `at`.
fn shape_in_frame(g: &VertexGeometry, at: &VertexGeometry) -> Matrix2<f64> {
    let amb = g.ambient_shape();
    let [t1, t2] = at.frame;
    Matrix2::new(
        (t1.transpose() * amb * t1)[0],
        (t1.transpose() * amb * t2)[0],
        (t2.transpose() * amb * t1)[0],
        (t2.transpose() * amb * t2)[0],
    )
}

fn verdict_from_fraction(bad: f64, candidates: usize, tol: &GenericityTolerances) -> Verdict {
    if candidates < 10 {
        Verdict::Inconclusive
    } else if bad < tol.pass_fraction {
        Verdict::Pass
    } else if bad > tol.fail_fraction {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

/// Audits property ⋆: on every equal-normal candidate both shape operators
/// must be nondegenerate, and on non-diagonal candidates the difference of
/// the two operators (in a common tangent frame) must be nondegenerate too.
pub fn check_star(
    mesh: &TriangleMesh,
    tol: &GenericityTolerances,
) -> Result<StarReport, GenericityError> {
    let geometry = estimate_shape_operator(mesh)?;
    let areas = vertex_areas(mesh);
    let scale = curvature_scale(&geometry, mesh);
    let shape_tol = tol.shape_rank_rel * scale;
    let difference_tol = tol.difference_rank_rel * scale;
    let candidates = find_x2_candidates(mesh, &geometry, tol);

    struct Outcome {
        weight: f64,
        shape_bad: bool,
        difference_bad: bool,
        witness: X2Witness,
    }
    let outcomes: Vec<Outcome> = candidates
        .par_iter()
        .map(|c| {
            let (gi, gj) = (&geometry[c.first], &geometry[c.second]);
            let s1 = sigma_of_2x2(&gi.shape);
            let s2 = sigma_of_2x2(&gj.shape);
            let shape_bad = s1.1 <= shape_tol || s2.1 <= shape_tol;
            let (difference_bad, sigma_difference) = if c.diagonal {
                (false, None)
            } else {
                let diff = gi.shape - shape_in_frame(gj, gi);
                let sd = sigma_of_2x2(&diff).1;
                (sd <= difference_tol, Some(sd))
            };
            Outcome {
                weight: areas[c.first] * areas[c.second],
                shape_bad,
                difference_bad,
                witness: X2Witness {
                    first: c.first,
                    second: c.second,
                    normal: gi.normal,
                    sigma_first: s1,
                    sigma_second: s2,
                    sigma_difference,
                    diagonal: c.diagonal,
                },
            }
        })
        .collect();

    let total: f64 = outcomes.iter().map(|o| o.weight).sum();
    let bad_shape: f64 = outcomes.iter().filter(|o| o.shape_bad).map(|o| o.weight).sum();
    let bad_difference: f64 =
        outcomes.iter().filter(|o| o.difference_bad).map(|o| o.weight).sum();
    let bad: f64 = outcomes
        .iter()
        .filter(|o| o.shape_bad || o.difference_bad)
        .map(|o| o.weight)
        .sum();
    let denom = total.max(f64::MIN_POSITIVE);

    let mut ranked: Vec<&Outcome> =
        outcomes.iter().filter(|o| o.shape_bad || o.difference_bad).collect();
    ranked.sort_by(|a, b| {
        let ka = a.witness.sigma_difference.unwrap_or(a.witness.sigma_first.1);
        let kb = b.witness.sigma_difference.unwrap_or(b.witness.sigma_first.1);
        ka.total_cmp(&kb)
    });
    let witnesses = ranked.iter().take(8).map(|o| o.witness.clone()).collect();

    let bad_fraction = (bad / denom).max(0.0);
    Ok(StarReport {
        candidates: candidates.len(),
        diagonal_candidates: candidates.iter().filter(|c| c.diagonal).count(),
        curvature_scale: scale,
        shape_rank_tol: shape_tol,
        difference_rank_tol: difference_tol,
        bad_fraction_shape: (bad_shape / denom).max(0.0),
        bad_fraction_difference: (bad_difference / denom).max(0.0),
        bad_fraction,
        verdict: verdict_from_fraction(bad_fraction, candidates.len(), tol),
        witnesses,
    })
}

impl StarReport {
    /// Structured key/value view of the report.
    pub fn key_values(&self) -> Vec<(String, String)> {
        vec![
            ("property".into(), "star".into()),
            ("candidates".into(), self.candidates.to_string()),
            ("diagonal_candidates".into(), self.diagonal_candidates.to_string()),
            ("curvature_scale".into(), format!("{:.6e}", self.curvature_scale)),
            ("shape_rank_tol".into(), format!("{:.6e}", self.shape_rank_tol)),
            ("difference_rank_tol".into(), format!("{:.6e}", self.difference_rank_tol)),
            ("bad_fraction_shape".into(), format!("{:.6e}", self.bad_fraction_shape)),
            ("bad_fraction_difference".into(), format!("{:.6e}", self.bad_fraction_difference)),
            ("bad_fraction".into(), format!("{:.6e}", self.bad_fraction)),
            ("verdict".into(), self.verdict.to_string()),
        ]
    }

    /// Human-readable report.
    pub fn text(&self) -> String {
        let mut s = String::from("first rank audit\n");
        for (k, v) in self.key_values() {
            s.push_str(&format!("  {k:<26}{v}\n"));
        }
        for w in &self.witnesses {
            s.push_str(&format!(
                "  witness ({}, {}){} sigma=({:.3e},{:.3e})/({:.3e},{:.3e}) diff={}\n",
                w.first,
                w.second,
                if w.diagonal { " [diag]" } else { "" },
                w.sigma_first.0,
                w.sigma_first.1,
                w.sigma_second.0,
                w.sigma_second.1,
                w.sigma_difference.map_or("-".into(), |d| format!("{d:.3e}")),
            ));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Property ⋆⋆
// ---------------------------------------------------------------------------

/// Worst offenders recorded by the ⋆⋆ audit.
#[derive(Debug, Clone)]
pub struct X4Witness {
    pub pair_first: (usize, usize),
    pub pair_second: (usize, usize),
    /// Angle of the rotation relating the two configurations.
    pub rotation_angle: f64,
    /// σ₄/σ₁ of the invariant-map Jacobians at both elements.
    pub iota_rank_ratio: (f64, f64),
    /// σ_min of the rotated-shape difference at both slots, absent when the
    /// candidate was exempt as a global symmetry.
    pub sigma_difference: Option<(f64, f64)>,
    pub deck: bool,
}

/// Result of the ⋆⋆ audit.
#[derive(Debug, Clone)]
pub struct StarStarReport {
    pub elements: usize,
    pub candidates: usize,
    pub deck_candidates: usize,
    pub curvature_scale: f64,
    pub iota_rank_tol: f64,
    pub difference_rank_tol: f64,
    /// Weight fraction failing the invariant-map rank requirement.
    pub bad_fraction_iota: f64,
    /// Weight fraction failing the rotated-shape difference requirement.
    pub bad_fraction_difference: f64,
    pub bad_fraction: f64,
    pub verdict: Verdict,
    pub witnesses: Vec<X4Witness>,
}

impl StarStarReport {
    /// Structured key/value view of the report.
    pub fn key_values(&self) -> Vec<(String, String)> {
        vec![
            ("property".into(), "star_star".into()),
            ("elements".into(), self.elements.to_string()),
            ("candidates".into(), self.candidates.to_string()),
            ("deck_candidates".into(), self.deck_candidates.to_string()),
            ("curvature_scale".into(), format!("{:.6e}", self.curvature_scale)),
            ("iota_rank_tol".into(), format!("{:.6e}", self.iota_rank_tol)),
            ("difference_rank_tol".into(), format!("{:.6e}", self.difference_rank_tol)),
            ("bad_fraction_iota".into(), format!("{:.6e}", self.bad_fraction_iota)),
            ("bad_fraction_difference".into(), format!("{:.6e}", self.bad_fraction_difference)),
            ("bad_fraction".into(), format!("{:.6e}", self.bad_fraction)),
            ("verdict".into(), self.verdict.to_string()),
        ]
    }

    /// Human-readable report.
    pub fn text(&self) -> String {
        let mut s = String::from("second rank audit\n");
        for (k, v) in self.key_values() {
            s.push_str(&format!("  {k:<26}{v}\n"));
        }
        for w in &self.witnesses {
            s.push_str(&format!(
                "  witness ({},{})~({},{}){} angle={:.3} iota=({:.3e},{:.3e}) diff={}\n",
                w.pair_first.0,
                w.pair_first.1,
                w.pair_second.0,
                w.pair_second.1,
                if w.deck { " [deck]" } else { "" },
                w.rotation_angle,
                w.iota_rank_ratio.0,
                w.iota_rank_ratio.1,
                w.sigma_difference
                    .map_or("-".into(), |(a, b)| format!("({a:.3e},{b:.3e})")),
            ));
        }
        s
    }
}

/// Second-order jet of a vertex: perturbed position and normal for tangent
/// displacement `du` in the vertex frame.
fn jet(g: &VertexGeometry, du: &Vector2<f64>) -> (Point3<f64>, Vector3<f64>) {
    let [t1, t2] = g.frame;
    let tangent = t1 * du.x + t2 * du.y;
    let height = 0.5 * (du.transpose() * g.shape * du)[0];
    let point = g.point + tangent - height * g.normal;
    let normal = (g.normal + g.ambient_shape() * tangent).normalize();
    (point, normal)
}

/// Raw invariant 5-tuple (r, c12, c02, c01, det) of a configuration.
fn iota_tuple(pa: &Point3<f64>, na: &Vector3<f64>, pb: &Point3<f64>, nb: &Vector3<f64>) -> [f64; 5] {
    let t = pa - pb;
    let r = t.norm();
    let i = iota3(&(t / r), na, nb);
    [r, i.c12, i.c02, i.c01, i.det]
}

/// σ₄/σ₁ of the finite-difference Jacobian of the invariant map along the
/// four tangent parameters of a pair element.
fn iota_rank_ratio(ga: &VertexGeometry, gb: &VertexGeometry, step: f64) -> f64 {
    let mut jac = DMatrix::<f64>::zeros(5, 4);
    for (col, (slot, dir)) in [(0usize, 0usize), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
        let mut du = Vector2::zeros();
        du[*dir] = step;
        let (plus, minus) = if *slot == 0 {
            let (pa_p, na_p) = jet(ga, &du);
            let (pa_m, na_m) = jet(ga, &(-du));
            (
                iota_tuple(&pa_p, &na_p, &gb.point, &gb.normal),
                iota_tuple(&pa_m, &na_m, &gb.point, &gb.normal),
            )
        } else {
            let (pb_p, nb_p) = jet(gb, &du);
            let (pb_m, nb_m) = jet(gb, &(-du));
            (
                iota_tuple(&ga.point, &ga.normal, &pb_p, &nb_p),
                iota_tuple(&ga.point, &ga.normal, &pb_m, &nb_m),
            )
        };
        for row in 0..5 {
            jac[(row, col)] = (plus[row] - minus[row]) / (2.0 * step);
        }
    }
    let svd = jac.svd(false, false);
    let s = &svd.singular_values;
    let (mut smax, mut smin) = (0.0_f64, f64::INFINITY);
    for k in 0..4 {
        smax = smax.max(s[k]);
        smin = smin.min(s[k]);
    }
    if smax <= 0.0 {
        0.0
    } else {
        smin / smax
    }
}

/// Spatial hash over vertex positions for the global-symmetry probe.
struct VertexIndex {
    cell: f64,
    map: HashMap<(i32, i32, i32), Vec<usize>>,
}

impl VertexIndex {
    fn build(mesh: &TriangleMesh, cell: f64) -> Self {
        let mut map: HashMap<(i32, i32, i32), Vec<usize>> = HashMap::new();
        for (idx, v) in mesh.vertices.iter().enumerate() {
            let key = (
                (v.x / cell).floor() as i32,
                (v.y / cell).floor() as i32,
                (v.z / cell).floor() as i32,
            );
            map.entry(key).or_default().push(idx);
        }
        Self { cell, map }
    }

    fn near(&self, p: &Point3<f64>, mesh: &TriangleMesh, tol: f64) -> bool {
        let base = (
            (p.x / self.cell).floor() as i32,
            (p.y / self.cell).floor() as i32,
            (p.z / self.cell).floor() as i32,
        );
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.map.get(&(base.0 + dx, base.1 + dy, base.2 + dz))
                    {
                        if bucket.iter().any(|&v| (mesh.vertices[v] - p).norm() <= tol) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// True when the rotation maps the mesh onto itself within `tol` at a
/// spread of probe vertices — i.e. it is a global (deck) symmetry.
fn is_deck_symmetry(
    g: &Rotation3<f64>,
    mesh: &TriangleMesh,
    index: &VertexIndex,
    tol: f64,
) -> bool {
    let n = mesh.vertices.len();
    let step = (n / 16).max(1);
    (0..n).step_by(step).all(|k| {
        let moved = Point3::from(g * mesh.vertices[k].coords);
        index.near(&moved, mesh, tol)
    })
}

/// Audits property ⋆⋆ on a budgeted sample of pair-of-pair candidates with
/// equal invariant tuples: the invariant map must have rank 4 at both
/// elements, and the relating rotation must change the shape operator at
/// full rank at both slots unless it is a global symmetry of the surface.
pub fn check_star_star<R: Rng>(
    mesh: &TriangleMesh,
    tol: &GenericityTolerances,
    rng: &mut R,
) -> Result<StarStarReport, GenericityError> {
    let geometry = estimate_shape_operator(mesh)?;
    let areas = vertex_areas(mesh);
    let scale = curvature_scale(&geometry, mesh);
    let h = mesh.mean_spacing();
    let difference_tol = tol.x4_difference_rank_rel * scale;
    let n = mesh.vertices.len();
    let diagonal_dist = tol.diagonal_factor * h;

    // Pair elements: a budgeted random sample of ordered vertex pairs away
    // from the diagonal.
    let full = n * n;
    let mut elements: Vec<(usize, usize)> = Vec::new();
    if full <= tol.x4_elements {
        for i in 0..n {
            for j in 0..n {
                if i != j && (mesh.vertices[i] - mesh.vertices[j]).norm() > diagonal_dist {
                    elements.push((i, j));
                }
            }
        }
    } else {
        while elements.len() < tol.x4_elements {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j && (mesh.vertices[i] - mesh.vertices[j]).norm() > diagonal_dist {
                elements.push((i, j));
            }
        }
    }

    // Invariant tuples and bucket index, stratifying candidates over the
    // invariant space.
    let tuples: Vec<[f64; 5]> = elements
        .par_iter()
        .map(|&(i, j)| {
            iota_tuple(
                &geometry[i].point,
                &geometry[i].normal,
                &geometry[j].point,
                &geometry[j].normal,
            )
        })
        .collect();
    let cell = tol.match_tol.max(1e-9);
    let mut buckets: std::collections::BTreeMap<[i64; 5], Vec<usize>> = Default::default();
    for (idx, t) in tuples.iter().enumerate() {
        let key = [
            (t[0] / cell).floor() as i64,
            (t[1] / cell).floor() as i64,
            (t[2] / cell).floor() as i64,
            (t[3] / cell).floor() as i64,
            (t[4] / cell).floor() as i64,
        ];
        buckets.entry(key).or_default().push(idx);
    }
    let occupied = buckets.values().filter(|b| b.len() >= 2).count().max(1);
    let quota = (tol.x4_budget / occupied).max(4);
    let mut candidate_ids: Vec<(usize, usize)> = Vec::new();
    for bucket in buckets.values() {
        if bucket.len() < 2 {
            continue;
        }
        let mut taken = 0;
        'bucket: for a in 0..bucket.len() {
            for b in (a + 1)..bucket.len() {
                let (ia, ib) = (bucket[a], bucket[b]);
                if dist5(&tuples[ia], &tuples[ib]) > tol.match_tol {
                    continue;
                }
                candidate_ids.push((ia, ib));
                taken += 1;
                if taken >= quota || candidate_ids.len() >= tol.x4_budget {
                    break 'bucket;
                }
            }
        }
        if candidate_ids.len() >= tol.x4_budget {
            break;
        }
    }

    // Per-element invariant-map rank, computed once per element involved.
    let mut involved: Vec<usize> = candidate_ids
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect();
    involved.sort_unstable();
    involved.dedup();
    let step = 0.01 * h;
    let ratios: HashMap<usize, f64> = involved
        .par_iter()
        .map(|&e| {
            let (i, j) = elements[e];
            (e, iota_rank_ratio(&geometry[i], &geometry[j], step))
        })
        .collect();

    let vertex_index = VertexIndex::build(mesh, h.max(1e-9));
    let deck_tol = tol.deck_tol_factor * h;

    struct Outcome {
        weight: f64,
        iota_bad: bool,
        difference_bad: bool,
        deck: bool,
        witness: X4Witness,
    }
    let outcomes: Vec<Outcome> = candidate_ids
        .par_iter()
        .filter_map(|&(ea, eb)| {
            let (ia, ja) = elements[ea];
            let (ib, jb) = elements[eb];
            let ratio_a = ratios[&ea];
            let ratio_b = ratios[&eb];
            // A quotient-type degeneracy (continuous symmetry collapsing
            // the invariant map) depresses the rank at every element at
            // once, so a matched candidate witnesses it only when both of
            // its elements are rank-deficient; one low-rank element alone
            // is a brush with the map's thin critical locus, which every
            // surface has.
            let iota_bad = ratio_a <= tol.iota_rank_rel && ratio_b <= tol.iota_rank_rel;

            // Rotation relating the two configurations via their canonical
            // frames; skip candidates too close to the frame degeneracy.
            let diff_a = geometry[ia].point - geometry[ja].point;
            let diff_b = geometry[ib].point - geometry[jb].point;
            let ta = tau(&diff_a, &geometry[ia].normal, &geometry[ja].normal, 0.02).ok()?;
            let tb = tau(&diff_b, &geometry[ib].normal, &geometry[jb].normal, 0.02).ok()?;
            let g = ta * tb.inverse();

            let deck = is_deck_symmetry(&g, mesh, &vertex_index, deck_tol);
            let (difference_bad, sigma_difference) = if deck {
                (false, None)
            } else {
                // A spurious rigid match needs the rotated shape operator to
                // agree at both slots at once; an isolated near-singular slot
                // is an accident of the sampling, not a degeneracy.
                let d1 = rotated_difference(&g, &geometry[ib], &geometry[ia]);
                let d2 = rotated_difference(&g, &geometry[jb], &geometry[ja]);
                (d1 <= difference_tol && d2 <= difference_tol, Some((d1, d2)))
            };
            let weight =
                areas[ia] * areas[ja] * areas[ib] * areas[jb];
            let rotation_angle =
                (((g.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos();
            Some(Outcome {
                weight,
                iota_bad,
                difference_bad,
                deck,
                witness: X4Witness {
                    pair_first: (ia, ja),
                    pair_second: (ib, jb),
                    rotation_angle,
                    iota_rank_ratio: (ratio_a, ratio_b),
                    sigma_difference,
                    deck,
                },
            })
        })
        .collect();

    let total: f64 = outcomes.iter().map(|o| o.weight).sum();
    let denom = total.max(f64::MIN_POSITIVE);
    let bad_iota: f64 = outcomes.iter().filter(|o| o.iota_bad).map(|o| o.weight).sum();
    let bad_difference: f64 =
        outcomes.iter().filter(|o| o.difference_bad).map(|o| o.weight).sum();
    let bad: f64 = outcomes
        .iter()
        .filter(|o| o.iota_bad || o.difference_bad)
        .map(|o| o.weight)
        .sum();

    let mut ranked: Vec<&Outcome> =
        outcomes.iter().filter(|o| o.iota_bad || o.difference_bad).collect();
    ranked.sort_by(|a, b| {
        a.witness
            .iota_rank_ratio
            .0
            .min(a.witness.iota_rank_ratio.1)
            .total_cmp(&b.witness.iota_rank_ratio.0.min(b.witness.iota_rank_ratio.1))
    });
    let witnesses = ranked.iter().take(8).map(|o| o.witness.clone()).collect();

    let bad_fraction = (bad / denom).max(0.0);
    Ok(StarStarReport {
        elements: elements.len(),
        candidates: outcomes.len(),
        deck_candidates: outcomes.iter().filter(|o| o.deck).count(),
        curvature_scale: scale,
        iota_rank_tol: tol.iota_rank_rel,
        difference_rank_tol: difference_tol,
        bad_fraction_iota: (bad_iota / denom).max(0.0),
        bad_fraction_difference: (bad_difference / denom).max(0.0),
        bad_fraction,
        verdict: verdict_from_fraction(bad_fraction, outcomes.len(), tol),
        witnesses,
    })
}

fn dist5(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// σ_min of (g·S_from·gᵀ − S_to) restricted to the tangent plane at `to`.
fn rotated_difference(g: &Rotation3<f64>, from: &VertexGeometry, to: &VertexGeometry) -> f64 {
    let rotated: Matrix3<f64> = g.matrix() * from.ambient_shape() * g.matrix().transpose();
    let diff = rotated - to.ambient_shape();
    let [t1, t2] = to.frame;
    let m = Matrix2::new(
        (t1.transpose() * diff * t1)[0],
        (t1.transpose() * diff * t2)[0],
        (t2.transpose() * diff * t1)[0],
        (t2.transpose() * diff * t2)[0],
    );
    sigma_of_2x2(&m).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{make_shape, ShapeKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn merged_translated_spheres() -> TriangleMesh {
        let a = make_shape(&ShapeKind::Sphere { radius: 1.0 }, 2);
        let mut b = make_shape(&ShapeKind::Sphere { radius: 1.0 }, 2);
        let offset = Vector3::new(4.0, 0.0, 0.0);
        let n = a.vertices.len();
        let mut vertices = a.vertices.clone();
        vertices.extend(b.vertices.drain(..).map(|v| v + offset));
        let mut faces = a.faces.clone();
        faces.extend(b.faces.iter().map(|f| [f[0] + n, f[1] + n, f[2] + n]));
        TriangleMesh { vertices, faces }
    }

    #[test]
    fn sphere_candidates_are_diagonal_only() {
        let mesh = make_shape(&ShapeKind::Sphere { radius: 1.0 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let geometry = estimate_shape_operator(&mesh).unwrap();
        let candidates = find_x2_candidates(&mesh, &geometry, &tol);
        assert!(candidates.iter().any(|c| c.first == c.second));
        for c in &candidates {
            assert!(
                c.diagonal,
                "sphere produced a non-diagonal equal-normal pair ({}, {})",
                c.first, c.second
            );
        }
    }

    #[test]
    fn torus_candidates_include_the_two_to_one_pairs() {
        let mesh = make_shape(&ShapeKind::Torus { major: 2.0, minor: 0.5 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let geometry = estimate_shape_operator(&mesh).unwrap();
        let candidates = find_x2_candidates(&mesh, &geometry, &tol);
        let nondiag: Vec<&X2Candidate> = candidates.iter().filter(|c| !c.diagonal).collect();
        assert!(
            !nondiag.is_empty(),
            "torus must have far-apart equal-normal pairs"
        );
        // A two-to-one Gauss pair goes to (π − θ, φ + π) in torus angles:
        // its difference vector is horizontal with norm twice the major
        // radius. Every surviving non-diagonal candidate must look like
        // that — nothing from the same neighborhood may leak through.
        for c in &nondiag {
            let d = mesh.vertices[c.first] - mesh.vertices[c.second];
            assert!(
                d.z.abs() < 0.5 && (3.0..=5.0).contains(&d.norm()),
                "non-diagonal candidate is not an across-the-hole pair: {d:?}"
            );
        }
    }

    #[test]
    fn translated_spheres_give_four_candidate_families() {
        let mesh = merged_translated_spheres();
        let tol = GenericityTolerances::for_mesh(&mesh);
        let geometry = estimate_shape_operator(&mesh).unwrap();
        let candidates = find_x2_candidates(&mesh, &geometry, &tol);
        let half = mesh.vertices.len() / 2;
        let mut families = std::collections::BTreeSet::new();
        for c in &candidates {
            families.insert((c.first >= half, c.second >= half));
        }
        assert_eq!(
            families.len(),
            4,
            "ordered component pairs should give four families: {families:?}"
        );
    }

    #[test]
    fn ellipsoid_passes_the_first_audit() {
        let mesh = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.3, c: 1.7 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let report = check_star(&mesh, &tol).unwrap();
        assert_eq!(report.verdict, Verdict::Pass, "report:\n{}", report.text());
        assert!(report.bad_fraction < 0.01);
    }

    #[test]
    fn disc_fails_the_first_audit_by_flatness() {
        let mesh = make_shape(&ShapeKind::Disc { radius: 1.0 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let report = check_star(&mesh, &tol).unwrap();
        assert_eq!(report.verdict, Verdict::Fail, "report:\n{}", report.text());
        assert!(
            report.bad_fraction_shape > 0.5,
            "flat disc must fail through the shape-operator rank: {}",
            report.bad_fraction_shape
        );
    }

    #[test]
    fn torus_fails_the_first_audit_on_the_two_to_one_pairs() {
        let mesh = make_shape(&ShapeKind::Torus { major: 2.0, minor: 0.5 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let report = check_star(&mesh, &tol).unwrap();
        assert_eq!(report.verdict, Verdict::Fail, "report:\n{}", report.text());
        assert!(
            report.bad_fraction_difference > tol.fail_fraction,
            "torus must fail through the difference map: {}",
            report.bad_fraction_difference
        );
    }

    #[test]
    fn sphere_fails_the_second_audit_by_invariant_rank() {
        let mesh = make_shape(&ShapeKind::Sphere { radius: 1.0 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let report = check_star_star(&mesh, &tol, &mut rng).unwrap();
        assert_eq!(report.verdict, Verdict::Fail, "report:\n{}", report.text());
        assert!(
            report.bad_fraction_iota > tol.fail_fraction,
            "sphere must fail through the invariant rank: {}",
            report.bad_fraction_iota
        );
    }

    #[test]
    fn generic_ellipsoid_passes_the_second_audit() {
        let mesh = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.3, c: 1.7 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        let report = check_star_star(&mesh, &tol, &mut rng).unwrap();
        assert_eq!(report.verdict, Verdict::Pass, "report:\n{}", report.text());
        assert!(report.bad_fraction < 0.01, "bad fraction {}", report.bad_fraction);
    }

    #[test]
    fn axisymmetric_ellipsoid_fails_the_second_audit() {
        let mesh = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.0, c: 1.5 }, 3);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let report = check_star_star(&mesh, &tol, &mut rng).unwrap();
        assert_eq!(report.verdict, Verdict::Fail, "report:\n{}", report.text());
    }

    #[test]
    fn reports_are_reproducible_for_a_fixed_seed() {
        let mesh = make_shape(&ShapeKind::Ellipsoid { a: 1.0, b: 1.3, c: 1.7 }, 2);
        let tol = GenericityTolerances::for_mesh(&mesh);
        let mut rng1 = ChaCha8Rng::seed_from_u64(73);
        let mut rng2 = ChaCha8Rng::seed_from_u64(73);
        let r1 = check_star_star(&mesh, &tol, &mut rng1).unwrap();
        let r2 = check_star_star(&mesh, &tol, &mut rng2).unwrap();
        assert_eq!(r1.candidates, r2.candidates);
        assert_eq!(r1.bad_fraction.to_bits(), r2.bad_fraction.to_bits());
        assert_eq!(r1.text(), r2.text());
    }

    #[test]
    fn verdicts_are_monotone_in_the_rank_tolerance() {
        // Tightening the rank tolerance can only shrink the bad set.
        let mesh = make_shape(&ShapeKind::Torus { major: 2.0, minor: 0.5 }, 3);
        let base = GenericityTolerances::for_mesh(&mesh);
        let loose = GenericityTolerances { difference_rank_rel: 0.05, ..base };
        let tight = GenericityTolerances { difference_rank_rel: 1e-6, ..base };
        let r_loose = check_star(&mesh, &loose).unwrap();
        let r_tight = check_star(&mesh, &tight).unwrap();
        assert!(
            r_tight.bad_fraction_difference <= r_loose.bad_fraction_difference,
            "tightening must not grow the bad set: {} vs {}",
            r_tight.bad_fraction_difference,
            r_loose.bad_fraction_difference
        );
    }
}
