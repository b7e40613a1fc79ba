//! Triangle meshes of oriented surfaces: file I/O, analytic generators,
//! quadrature sampling of the area measure, and shape-operator estimation.
//!
//! Orientation is carried by face winding; generators produce outward
//! normals. The shape operator uses the Gauss-map-derivative sign
//! convention: a sphere with outward normals has positive principal
//! curvatures.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sphharm::{eval_y_real_vec, SHIndex};
use crate::util::pairwise_sum;

/// Errors from mesh loading, validation, and differential estimation.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported mesh format for path {path:?} (expected .off or .obj)")]
    UnsupportedFormat { path: std::path::PathBuf },
    #[error("face {face} is degenerate (repeated vertex or zero area)")]
    DegenerateFace { face: usize },
    #[error("vertex index {index} out of range at face {face}")]
    IndexOutOfRange { face: usize, index: usize },
    #[error("mesh is not consistently oriented: edge ({a}, {b}) traversed twice in the same direction")]
    NonOrientable { a: usize, b: usize },
    #[error("edge ({a}, {b}) is shared by more than two faces")]
    NonManifold { a: usize, b: usize },
    #[error("vertex {vertex} has only {count} two-ring neighbors (need at least 5)")]
    TooFewNeighbors { vertex: usize, count: usize },
    #[error("jet fit at vertex {vertex} is singular")]
    SingularFit { vertex: usize },
}

/// An oriented triangle mesh.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

/// One quadrature sample of the surface measure.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
    /// Area weight; weights of all samples sum to the total surface area.
    pub weight: f64,
}

/// Quadrature samples of a surface's area measure.
#[derive(Debug, Clone)]
pub struct SampledMeasure {
    pub samples: Vec<SurfaceSample>,
}

impl SampledMeasure {
    /// Total mass (= surface area), summed pairwise for reproducibility.
    pub fn total_weight(&self) -> f64 {
        let w: Vec<f64> = self.samples.iter().map(|s| s.weight).collect();
        pairwise_sum(&w)
    }

    /// Area-weighted centroid of the sampled measure.
    pub fn centroid(&self) -> Point3<f64> {
        let total = self.total_weight();
        let mut acc = Vector3::zeros();
        for s in &self.samples {
            acc += s.weight * s.point.coords;
        }
        Point3::from(acc / total)
    }
}

/// Symmetric per-triangle quadrature rules with positive weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum TriangleRule {
    /// Centroid rule, exact for affine integrands.
    Centroid,
    /// Three-point rule, exact for quadratics.
    #[default]
    ThreePoint,
    /// Six-point rule, exact for quartics.
    SixPoint,
    /// Seven-point rule, exact for quintics.
    SevenPoint,
}

impl TriangleRule {
    /// Barycentric nodes and weights (weights sum to 1).
    pub fn nodes(&self) -> Vec<([f64; 3], f64)> {
        match self {
            TriangleRule::Centroid => {
                vec![([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 1.0)]
            }
            TriangleRule::ThreePoint => {
                let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
                vec![
                    ([a, b, b], 1.0 / 3.0),
                    ([b, a, b], 1.0 / 3.0),
                    ([b, b, a], 1.0 / 3.0),
                ]
            }
            TriangleRule::SixPoint => {
                let mut nodes = Vec::with_capacity(6);
                let groups = [
                    (0.108_103_018_168_070, 0.445_948_490_915_965, 0.223_381_589_678_011),
                    (0.816_847_572_980_459, 0.091_576_213_509_771, 0.109_951_743_655_322),
                ];
                for (a, b, w) in groups {
                    nodes.push(([a, b, b], w));
                    nodes.push(([b, a, b], w));
                    nodes.push(([b, b, a], w));
                }
                nodes
            }
            TriangleRule::SevenPoint => {
                let mut nodes = vec![([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0)];
                let s15 = 15.0_f64.sqrt();
                let groups = [
                    (
                        (6.0 - s15) / 21.0,
                        (9.0 + 2.0 * s15) / 21.0,
                        (155.0 - s15) / 1200.0,
                    ),
                    (
                        (6.0 + s15) / 21.0,
                        (9.0 - 2.0 * s15) / 21.0,
                        (155.0 + s15) / 1200.0,
                    ),
                ];
                for (b, a, w) in groups {
                    nodes.push(([a, b, b], w));
                    nodes.push(([b, a, b], w));
                    nodes.push(([b, b, a], w));
                }
                nodes
            }
        }
    }

    /// Highest polynomial degree integrated exactly.
    pub fn degree(&self) -> u32 {
        match self {
            TriangleRule::Centroid => 1,
            TriangleRule::ThreePoint => 2,
            TriangleRule::SixPoint => 4,
            TriangleRule::SevenPoint => 5,
        }
    }
}

impl TriangleMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Unnormalized face normal (cross product; length = 2·area).
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.faces[f];
        let e1 = self.vertices[b] - self.vertices[a];
        let e2 = self.vertices[c] - self.vertices[a];
        e1.cross(&e2)
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        self.face_cross(f).normalize()
    }

    /// Total surface area (pairwise-summed).
    pub fn total_area(&self) -> f64 {
        let areas: Vec<f64> = (0..self.faces.len()).map(|f| self.face_area(f)).collect();
        pairwise_sum(&areas)
    }

    /// Mesh spacing scale: square root of the mean face area.
    pub fn mean_spacing(&self) -> f64 {
        (self.total_area() / self.face_count() as f64).sqrt()
    }

    /// Axis-aligned bounding box (min corner, max corner).
    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Validates indices, face non-degeneracy, orientability (consistent
    /// winding), and edge manifoldness. Boundary edges are allowed.
    pub fn validate(&self) -> Result<(), MeshError> {
        let nv = self.vertices.len();
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, face) in self.faces.iter().enumerate() {
            for &idx in face {
                if idx >= nv {
                    return Err(MeshError::IndexOutOfRange { face: fi, index: idx });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(MeshError::DegenerateFace { face: fi });
            }
            if self.face_area(fi) <= 0.0 || !self.face_area(fi).is_finite() {
                return Err(MeshError::DegenerateFace { face: fi });
            }
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                let dir = edge_count.entry((a, b)).or_insert(0);
                *dir += 1;
                if *dir > 1 {
                    return Err(MeshError::NonOrientable { a, b });
                }
            }
        }
        for (&(a, b), &n_ab) in &edge_count {
            if a < b {
                let n_ba = edge_count.get(&(b, a)).copied().unwrap_or(0);
                if n_ab + n_ba > 2 {
                    return Err(MeshError::NonManifold { a, b });
                }
            }
        }
        Ok(())
    }

    /// Vertex-to-vertex adjacency via shared edges.
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); self.vertices.len()];
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj.into_iter()
            .map(|s| {
                let mut v: Vec<usize> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect()
    }

    /// Area-weighted average of incident face normals, per vertex.
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        let mut normals = vec![Vector3::zeros(); self.vertices.len()];
        for f in 0..self.faces.len() {
            let cross = self.face_cross(f);
            for &v in &self.faces[f] {
                normals[v] += cross;
            }
        }
        normals
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 { n / len } else { Vector3::z() }
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Loads a mesh from an OFF or OBJ file (by extension) and validates it.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh, MeshError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mesh = match ext.as_deref() {
        Some("off") => parse_off(reader)?,
        Some("obj") => parse_obj(reader)?,
        _ => return Err(MeshError::UnsupportedFormat { path: path.to_path_buf() }),
    };
    mesh.validate()?;
    Ok(mesh)
}

fn parse_off<R: BufRead>(reader: R) -> Result<TriangleMesh, MeshError> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| match l {
            Ok(s) => {
                let t = s.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        });
    let parse_err = |line: usize, message: &str| MeshError::Parse {
        line,
        message: message.to_string(),
    };
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(0, "empty file"))?;
    let header = header?;
    if header.trim() != "OFF" {
        return Err(parse_err(line_no, "expected OFF header"));
    }
    let (line_no, counts) = lines
        .next()
        .ok_or_else(|| parse_err(0, "missing counts line"))?;
    let counts = counts?;
    let parts: Vec<&str> = counts.split_whitespace().collect();
    if parts.len() < 2 {
        return Err(parse_err(line_no, "counts line needs vertex and face counts"));
    }
    let nv: usize = parts[0]
        .parse()
        .map_err(|_| parse_err(line_no, "bad vertex count"))?;
    let nf: usize = parts[1]
        .parse()
        .map_err(|_| parse_err(line_no, "bad face count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "unexpected end of vertex list"))?;
        let line = line?;
        let nums: Result<Vec<f64>, _> =
            line.split_whitespace().take(3).map(str::parse).collect();
        let nums = nums.map_err(|_| parse_err(line_no, "bad vertex coordinates"))?;
        if nums.len() != 3 {
            return Err(parse_err(line_no, "vertex line needs 3 coordinates"));
        }
        vertices.push(Point3::new(nums[0], nums[1], nums[2]));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (line_no, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "unexpected end of face list"))?;
        let line = line?;
        let nums: Result<Vec<usize>, _> = line.split_whitespace().map(str::parse).collect();
        let nums = nums.map_err(|_| parse_err(line_no, "bad face indices"))?;
        if nums.is_empty() || nums[0] != 3 || nums.len() < 4 {
            return Err(parse_err(line_no, "only triangular faces are supported"));
        }
        faces.push([nums[1], nums[2], nums[3]]);
    }
    Ok(TriangleMesh { vertices, faces })
}

fn parse_obj<R: BufRead>(reader: R) -> Result<TriangleMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        match parts.next() {
            Some("v") => {
                let nums: Result<Vec<f64>, _> = parts.clone().take(3).map(str::parse).collect();
                let nums = nums.map_err(|_| MeshError::Parse {
                    line: line_no,
                    message: "bad vertex coordinates".into(),
                })?;
                if nums.len() != 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: "vertex line needs 3 coordinates".into(),
                    });
                }
                vertices.push(Point3::new(nums[0], nums[1], nums[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for token in parts {
                    let first = token.split('/').next().unwrap_or("");
                    let v: i64 = first.parse().map_err(|_| MeshError::Parse {
                        line: line_no,
                        message: format!("bad face index {token:?}"),
                    })?;
                    if v < 1 {
                        return Err(MeshError::Parse {
                            line: line_no,
                            message: "face indices must be positive".into(),
                        });
                    }
                    idx.push((v - 1) as usize);
                }
                if idx.len() != 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: "only triangular faces are supported".into(),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {} // ignore normals, texture coords, groups, materials
        }
    }
    Ok(TriangleMesh { vertices, faces })
}

/// Writes a mesh in OFF format.
pub fn save_mesh(path: &Path, mesh: &TriangleMesh) -> Result<(), MeshError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "OFF")?;
    writeln!(file, "{} {} 0", mesh.vertices.len(), mesh.faces.len())?;
    for v in &mesh.vertices {
        writeln!(file, "{:.17} {:.17} {:.17}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(file, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Analytic generators
// ---------------------------------------------------------------------------

/// Shapes with analytic generators. `resolution` scales mesh density.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    /// Icosphere of the given radius.
    Sphere { radius: f64 },
    /// Icosphere scaled anisotropically to semi-axes (a, b, c).
    Ellipsoid { a: f64, b: f64, c: f64 },
    /// Torus with major radius (center to tube center) and minor radius.
    Torus { major: f64, minor: f64 },
    /// Open cylinder wall segment: radius, height, and covered angle
    /// fraction in (0, 1]; has boundary.
    CylinderPatch { radius: f64, height: f64, arc_fraction: f64 },
    /// Ellipsoid with a smooth random radial perturbation (relative
    /// amplitude, deterministic in the seed); breaks all symmetries.
    PerturbedEllipsoid { a: f64, b: f64, c: f64, amplitude: f64, seed: u64 },
    /// Flat disc of the given radius in the xy-plane; has boundary.
    Disc { radius: f64 },
}

/// Builds a triangle mesh for a shape at the given resolution level
/// (each +1 roughly quadruples the face count).
pub fn make_shape(kind: &ShapeKind, resolution: u32) -> TriangleMesh {
    let mesh = match kind {
        ShapeKind::Sphere { radius } => {
            let mut m = icosphere(resolution);
            for v in &mut m.vertices {
                v.coords *= *radius;
            }
            m
        }
        ShapeKind::Ellipsoid { a, b, c } => {
            let mut m = icosphere(resolution);
            for v in &mut m.vertices {
                v.x *= a;
                v.y *= b;
                v.z *= c;
            }
            m
        }
        ShapeKind::Torus { major, minor } => torus(*major, *minor, resolution),
        ShapeKind::CylinderPatch { radius, height, arc_fraction } => {
            cylinder_patch(*radius, *height, *arc_fraction, resolution)
        }
        ShapeKind::PerturbedEllipsoid { a, b, c, amplitude, seed } => {
            let mut m = icosphere(resolution);
            let field = RadialField::from_seed(*seed);
            for v in &mut m.vertices {
                let dir = v.coords.normalize();
                let scale = 1.0 + amplitude * field.eval(&dir);
                v.coords = dir * scale;
                v.x *= a;
                v.y *= b;
                v.z *= c;
            }
            m
        }
        ShapeKind::Disc { radius } => disc(*radius, resolution),
    };
    debug_assert!(mesh.validate().is_ok(), "generator produced an invalid mesh");
    mesh
}

/// Smooth random scalar field on S²: a fixed random combination of
/// harmonics of degrees 3–6.
struct RadialField {
    terms: Vec<(SHIndex, f64)>,
}

impl RadialField {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        for _ in 0..10 {
            let n = rng.gen_range(3..=6_u32);
            let m = rng.gen_range(-(n as i32)..=(n as i32));
            let c = rng.gen_range(-1.0..1.0_f64);
            terms.push((SHIndex { n, m }, c));
        }
        // Normalize so the field has unit sup-norm scale.
        let norm: f64 = terms.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
        for (_, c) in &mut terms {
            *c /= norm.max(1e-9);
        }
        Self { terms }
    }

    fn eval(&self, dir: &Vector3<f64>) -> f64 {
        self.terms
            .iter()
            .map(|(idx, c)| c * eval_y_real_vec(*idx, dir))
            .sum()
    }
}

/// Unit icosphere: icosahedron subdivided `level` times, vertices projected
/// to the unit sphere, outward winding.
fn icosphere(level: u32) -> TriangleMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let mut vertices: Vec<Point3<f64>> = raw
        .iter()
        .map(|&(x, y, z)| Point3::from(Vector3::new(x, y, z).normalize()))
        .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = (vertices[a].coords + vertices[b].coords).normalize();
                vertices.push(Point3::from(m));
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            new_faces.push([a, ab, ca]);
            new_faces.push([b, bc, ab]);
            new_faces.push([c, ca, bc]);
            new_faces.push([ab, bc, ca]);
        }
        faces = new_faces;
    }
    let mut mesh = TriangleMesh { vertices, faces };
    orient_outward(&mut mesh, |p| p.coords);
    mesh
}

/// Flips faces whose winding normal disagrees with a reference outward field.
fn orient_outward<F: Fn(&Point3<f64>) -> Vector3<f64>>(mesh: &mut TriangleMesh, outward: F) {
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.faces[f];
        let centroid = Point3::from(
            (mesh.vertices[a].coords + mesh.vertices[b].coords + mesh.vertices[c].coords) / 3.0,
        );
        if mesh.face_cross(f).dot(&outward(&centroid)) < 0.0 {
            mesh.faces[f] = [a, c, b];
        }
    }
}

/// Torus mesh parameterized by major angle φ and tube angle θ.
fn torus(major: f64, minor: f64, level: u32) -> TriangleMesh {
    let n_major = 8 * 2_usize.pow(level);
    let n_minor = 4 * 2_usize.pow(level);
    let mut vertices = Vec::with_capacity(n_major * n_minor);
    for iu in 0..n_major {
        let phi = 2.0 * std::f64::consts::PI * iu as f64 / n_major as f64;
        for iv in 0..n_minor {
            let theta = 2.0 * std::f64::consts::PI * iv as f64 / n_minor as f64;
            let rho = major + minor * theta.cos();
            vertices.push(Point3::new(
                rho * phi.cos(),
                rho * phi.sin(),
                minor * theta.sin(),
            ));
        }
    }
    let mut faces = Vec::with_capacity(2 * n_major * n_minor);
    let at = |iu: usize, iv: usize| (iu % n_major) * n_minor + (iv % n_minor);
    for iu in 0..n_major {
        for iv in 0..n_minor {
            let (v00, v10, v01, v11) =
                (at(iu, iv), at(iu + 1, iv), at(iu, iv + 1), at(iu + 1, iv + 1));
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    let mut mesh = TriangleMesh { vertices, faces };
    // Outward direction: away from the tube's center circle.
    orient_outward(&mut mesh, move |p| {
        let rho = (p.x * p.x + p.y * p.y).sqrt().max(1e-12);
        let ring = Vector3::new(major * p.x / rho, major * p.y / rho, 0.0);
        p.coords - ring
    });
    mesh
}

/// Open cylinder wall: z ∈ [−h/2, h/2], angle ∈ [0, 2π·arc_fraction].
fn cylinder_patch(radius: f64, height: f64, arc_fraction: f64, level: u32) -> TriangleMesh {
    let arc = 2.0 * std::f64::consts::PI * arc_fraction.clamp(0.05, 1.0);
    let closed = (arc_fraction - 1.0).abs() < 1e-12;
    let n_angle = 12 * 2_usize.pow(level);
    let n_z = 6 * 2_usize.pow(level);
    let n_angle_verts = if closed { n_angle } else { n_angle + 1 };
    let mut vertices = Vec::with_capacity(n_angle_verts * (n_z + 1));
    for ia in 0..n_angle_verts {
        let angle = arc * ia as f64 / n_angle as f64;
        for iz in 0..=n_z {
            let z = height * (iz as f64 / n_z as f64 - 0.5);
            vertices.push(Point3::new(radius * angle.cos(), radius * angle.sin(), z));
        }
    }
    let at = |ia: usize, iz: usize| (ia % n_angle_verts) * (n_z + 1) + iz;
    let mut faces = Vec::new();
    for ia in 0..n_angle {
        for iz in 0..n_z {
            let (v00, v10, v01, v11) = (
                at(ia, iz),
                at(ia + 1, iz),
                at(ia, iz + 1),
                at(ia + 1, iz + 1),
            );
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    let mut mesh = TriangleMesh { vertices, faces };
    orient_outward(&mut mesh, |p| Vector3::new(p.x, p.y, 0.0));
    mesh
}

/// Flat disc in the xy-plane: center fan plus concentric ring strips,
/// oriented with +z normals.
fn disc(radius: f64, level: u32) -> TriangleMesh {
    let n_rings = 4 * 2_usize.pow(level);
    let n_angle = 12 * 2_usize.pow(level);
    let mut vertices = vec![Point3::new(0.0, 0.0, 0.0)];
    for ir in 1..=n_rings {
        let r = radius * ir as f64 / n_rings as f64;
        for ia in 0..n_angle {
            let angle = 2.0 * std::f64::consts::PI * ia as f64 / n_angle as f64;
            vertices.push(Point3::new(r * angle.cos(), r * angle.sin(), 0.0));
        }
    }
    let ring_at = |ir: usize, ia: usize| 1 + (ir - 1) * n_angle + (ia % n_angle);
    let mut faces = Vec::new();
    for ia in 0..n_angle {
        faces.push([0, ring_at(1, ia), ring_at(1, ia + 1)]);
    }
    for ir in 1..n_rings {
        for ia in 0..n_angle {
            let (v00, v10, v01, v11) = (
                ring_at(ir, ia),
                ring_at(ir + 1, ia),
                ring_at(ir, ia + 1),
                ring_at(ir + 1, ia + 1),
            );
            faces.push([v00, v10, v11]);
            faces.push([v00, v11, v01]);
        }
    }
    TriangleMesh { vertices, faces }
}

/// Applies the rigid motion x ↦ R·x + t to all vertices.
pub fn apply_rigid(mesh: &TriangleMesh, rotation: &Rotation3<f64>, translation: &Vector3<f64>) -> TriangleMesh {
    TriangleMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|v| Point3::from(rotation * v.coords + translation))
            .collect(),
        faces: mesh.faces.clone(),
    }
}

// ---------------------------------------------------------------------------
// Measure sampling
// ---------------------------------------------------------------------------

/// Samples the surface measure with a per-triangle quadrature rule; sample
/// weights sum to the total area, normals come from face winding.
pub fn sample_measure(mesh: &TriangleMesh, rule: TriangleRule) -> SampledMeasure {
    let nodes = rule.nodes();
    let mut samples = Vec::with_capacity(mesh.faces.len() * nodes.len());
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.faces[f];
        let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        let cross = mesh.face_cross(f);
        let area = 0.5 * cross.norm();
        let normal = cross / cross.norm();
        for &(bary, w) in &nodes {
            let point = Point3::from(
                bary[0] * pa.coords + bary[1] * pb.coords + bary[2] * pc.coords,
            );
            samples.push(SurfaceSample { point, normal, weight: w * area });
        }
    }
    SampledMeasure { samples }
}

// ---------------------------------------------------------------------------
// Shape-operator estimation
// ---------------------------------------------------------------------------

/// Differential data estimated at a mesh vertex.
#[derive(Debug, Clone)]
pub struct VertexGeometry {
    pub point: Point3<f64>,
    pub normal: Vector3<f64>,
    /// Orthonormal tangent frame (t₁, t₂) with t₁ × t₂ = normal.
    pub frame: [Vector3<f64>; 2],
    /// Shape operator in the tangent frame (Gauss-map derivative).
    pub shape: Matrix2<f64>,
    /// Principal curvatures, κ₁ ≥ κ₂.
    pub principal: (f64, f64),
}

impl VertexGeometry {
    /// Shape operator as an ambient 3×3 matrix (zero on the normal), which
    /// is independent of the tangent-frame gauge.
    pub fn ambient_shape(&self) -> Matrix3<f64> {
        let [t1, t2] = self.frame;
        let s = &self.shape;
        s[(0, 0)] * t1 * t1.transpose()
            + s[(0, 1)] * t1 * t2.transpose()
            + s[(1, 0)] * t2 * t1.transpose()
            + s[(1, 1)] * t2 * t2.transpose()
    }
}

/// Estimates the shape operator at every vertex by a least-squares quadratic
/// height fit over the two-ring neighborhood (at least 5 neighbors needed).
pub fn estimate_shape_operator(mesh: &TriangleMesh) -> Result<Vec<VertexGeometry>, MeshError> {
    let adjacency = mesh.vertex_adjacency();
    let normals = mesh.vertex_normals();
    let mut out = Vec::with_capacity(mesh.vertices.len());
    for v in 0..mesh.vertices.len() {
        let neighbors = two_ring(v, &adjacency);
        if neighbors.len() < 5 {
            return Err(MeshError::TooFewNeighbors { vertex: v, count: neighbors.len() });
        }
        let n = normals[v];
        let t1 = pick_tangent(&n);
        let t2 = n.cross(&t1);
        let p0 = mesh.vertices[v];

        // Fit h(u, w) = ½a·u² + b·u·w + ½c·w² + d·u + e·w  (5 unknowns).
        let rows = neighbors.len();
        let mut a_mat = nalgebra::DMatrix::zeros(rows, 5);
        let mut rhs = nalgebra::DVector::zeros(rows);
        for (row, &nb) in neighbors.iter().enumerate() {
            let d = mesh.vertices[nb] - p0;
            let (u, w, h) = (d.dot(&t1), d.dot(&t2), d.dot(&n));
            a_mat[(row, 0)] = 0.5 * u * u;
            a_mat[(row, 1)] = u * w;
            a_mat[(row, 2)] = 0.5 * w * w;
            a_mat[(row, 3)] = u;
            a_mat[(row, 4)] = w;
            rhs[row] = h;
        }
        let svd = nalgebra::SVD::new(a_mat, true, true);
        let sol = svd
            .solve(&rhs, 1e-12)
            .map_err(|_| MeshError::SingularFit { vertex: v })?;
        let (ca, cb, cc, cd, ce) = (sol[0], sol[1], sol[2], sol[3], sol[4]);

        let grad_norm2 = cd * cd + ce * ce;
        let first = Matrix2::new(1.0 + cd * cd, cd * ce, cd * ce, 1.0 + ce * ce);
        let second = Matrix2::new(ca, cb, cb, cc) / (1.0 + grad_norm2).sqrt();
        let inv_first = first
            .try_inverse()
            .ok_or(MeshError::SingularFit { vertex: v })?;
        // Gauss-map derivative: sign flip relative to the height Hessian.
        let shape = -inv_first * second;
        let tr = shape.trace();
        let det = shape.determinant();
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let principal = (tr / 2.0 + disc, tr / 2.0 - disc);
        out.push(VertexGeometry {
            point: p0,
            normal: n,
            frame: [t1, t2],
            shape,
            principal,
        });
    }
    Ok(out)
}

/// Breadth-first two-ring neighborhood of a vertex (excluding the vertex).
fn two_ring(v: usize, adjacency: &[Vec<usize>]) -> Vec<usize> {
    let mut seen = HashSet::from([v]);
    let mut queue = VecDeque::from([(v, 0_u32)]);
    let mut out = Vec::new();
    while let Some((u, depth)) = queue.pop_front() {
        if depth == 2 {
            continue;
        }
        for &nb in &adjacency[u] {
            if seen.insert(nb) {
                out.push(nb);
                queue.push_back((nb, depth + 1));
            }
        }
    }
    out.sort_unstable();
    out
}

/// A unit vector orthogonal to `n`.
fn pick_tangent(n: &Vector3<f64>) -> Vector3<f64> {
    let trial = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    (trial - n * trial.dot(n)).normalize()
}

/// Largest absolute principal curvature over all vertices.
pub fn max_curvature(geometry: &[VertexGeometry]) -> f64 {
    geometry
        .iter()
        .map(|g| g.principal.0.abs().max(g.principal.1.abs()))
        .fold(0.0, f64::max)
}
