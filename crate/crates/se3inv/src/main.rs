//! Command-line driver for the invariant-descriptor library.
//!
//! Subcommands cover the full pipeline: mesh generation, descriptor
//! computation and comparison, the two genericity audits, fiber-based
//! reconstruction, and the embedded self-tests. Every run prints its
//! effective seed so results can be replayed exactly.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 unreadable or
//! invalid input data, 3 numerical degeneracy or failing self-test.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use se3inv::config::{
    cache_dir, parse_shape_spec, read_descriptor, write_descriptor, write_point_cloud,
    ConfigError, OutputFormat, RunConfig,
};
use se3inv::fiber::{reconstruct, FiberError, ReconstructParams, SurfaceBounds};
use se3inv::genericity::{check_star, check_star_star, GenericityError, GenericityTolerances};
use se3inv::invariants::{
    center_measure, channel_keys, descriptor_distance, descriptor_for_measure, descriptor_pairs,
    so3_convolve_quadrature, InvariantsError,
};
use se3inv::moments::{compute_rho_moments, convolve_translational, MomentsError};
use se3inv::selftest::{run_all, Corruption};
use se3inv::so3::{so3_quadrature, So3Error};
use se3inv::surface::{
    estimate_shape_operator, load_mesh, make_shape, max_curvature, sample_measure, save_mesh,
    MeshError, TriangleMesh, TriangleRule,
};

// ---------------------------------------------------------------------------
// Error mapping
// ---------------------------------------------------------------------------

/// CLI failure carrying the process exit code.
enum CliError {
    /// Bad flags, parameters, or configuration (exit 1).
    Usage(String),
    /// Unreadable or invalid input data (exit 2).
    Input(String),
    /// Numerical degeneracy in an otherwise valid run (exit 3).
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<GenericityError> for CliError {
    fn from(e: GenericityError) -> Self {
        match e {
            GenericityError::Mesh(m) => m.into(),
        }
    }
}

impl From<So3Error> for CliError {
    fn from(e: So3Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<FiberError> for CliError {
    fn from(e: FiberError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<MomentsError> for CliError {
    fn from(e: MomentsError) -> Self {
        match e {
            MomentsError::DegreeOverflow { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<InvariantsError> for CliError {
    fn from(e: InvariantsError) -> Self {
        match e {
            InvariantsError::QuadratureOrderTooSmall { .. } => CliError::Usage(e.to_string()),
            InvariantsError::CapMismatch(..) => CliError::Input(e.to_string()),
            InvariantsError::Moments(m) => m.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Parse(_) | ConfigError::Version { .. } | ConfigError::Shape(..) => {
                CliError::Usage(e.to_string())
            }
            ConfigError::Io { .. } | ConfigError::Descriptor { .. } => {
                CliError::Input(e.to_string())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Argument definitions
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "se3inv",
    version,
    about = "Rigid-motion invariant descriptors of oriented surfaces"
)]
struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage; printed with each run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Algebraic contraction through coupling matrices.
    Cg,
    /// Haar-averaged pairing over a rotation quadrature.
    Quadrature,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reference mesh and write it to a file.
    Gen {
        /// Shape spec: sphere:R | ellipsoid:A,B,C | torus:MAJ,MIN | disc:R |
        /// cylinder:R,H,ARC | perturbed:A,B,C,AMP,SEED.
        #[arg(long)]
        shape: Option<String>,
        /// Subdivision level of the generated mesh.
        #[arg(long)]
        resolution: Option<u32>,
        /// Output mesh path (.off or .obj).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the invariant descriptor of a mesh.
    Invariants {
        /// Input mesh (.off or .obj).
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Spatial degree cap.
        #[arg(long, value_name = "D")]
        caps_d: Option<u32>,
        /// Normal degree cap.
        #[arg(long = "caps-dprime", value_name = "D'")]
        caps_d_prime: Option<u32>,
        /// Contraction method.
        #[arg(long, value_enum, default_value_t = Method::Cg)]
        method: Method,
        /// Rotation quadrature order (quadrature method only).
        #[arg(long)]
        quad_order: Option<u32>,
        /// Triangle rule: centroid | three-point | six-point | seven-point.
        #[arg(long)]
        rule: Option<String>,
        /// Output descriptor path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Output encoding: binary | text.
        #[arg(long)]
        format: Option<String>,
    },
    /// Compare two descriptor files and print their distance.
    Compare {
        /// First descriptor file.
        first: PathBuf,
        /// Second descriptor file.
        second: PathBuf,
    },
    /// Audit a mesh against both genericity requirements.
    Check {
        /// Input mesh (.off or .obj).
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Relative rank tolerance for the shape test of the first audit.
        #[arg(long)]
        rank_tol: Option<f64>,
    },
    /// Recover rigid copies of a surface from its pair statistics.
    Reconstruct {
        /// Input mesh (.off or .obj).
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Classification ball radius (defaults to the resolution policy).
        #[arg(long)]
        eps: Option<f64>,
        /// Number of fibers to aggregate.
        #[arg(long)]
        fibers: Option<usize>,
        /// Margin around the degenerate invariant curve.
        #[arg(long)]
        margin_d1: Option<f64>,
        /// Margin around the parallel-slot configuration set.
        #[arg(long)]
        margin_delta: Option<f64>,
        /// Directory for candidate point clouds (written as OFF).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the embedded self-test suites.
    Selftest {
        /// Corrupt one coupling-table entry to prove detection works.
        #[arg(long)]
        corrupt_table: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Invariants { .. } => "invariants",
            Command::Compare { .. } => "compare",
            Command::Check { .. } => "check",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Selftest { .. } => "selftest",
        }
    }
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

/// Prints one stdout line, exiting quietly if the reader closed the pipe.
/// Every file side effect happens before the first print, so an early exit
/// never loses work.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    }};
}

fn parse_rule(name: &str) -> Result<TriangleRule, CliError> {
    match name {
        "centroid" => Ok(TriangleRule::Centroid),
        "three-point" => Ok(TriangleRule::ThreePoint),
        "six-point" => Ok(TriangleRule::SixPoint),
        "seven-point" => Ok(TriangleRule::SevenPoint),
        other => Err(CliError::Usage(format!(
            "unknown triangle rule {other:?} (expected centroid, three-point, six-point, or seven-point)"
        ))),
    }
}

fn load_mesh_arg(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<TriangleMesh, CliError> {
    let path = flag
        .or_else(|| cfg.mesh.clone())
        .ok_or_else(|| CliError::Usage("no input mesh: pass --mesh or set it in the config".into()))?;
    Ok(load_mesh(&path)?)
}

fn effective_seed(flag: Option<u64>, cfg: &RunConfig) -> u64 {
    flag.unwrap_or(cfg.seed)
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

fn cmd_gen(
    cfg: &RunConfig,
    seed: u64,
    shape: Option<String>,
    resolution: Option<u32>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let kind = match shape {
        Some(spec) => parse_shape_spec(&spec)?,
        None => cfg
            .shape
            .clone()
            .ok_or_else(|| CliError::Usage("no shape: pass --shape or set [shape] in the config".into()))?,
    };
    let resolution = resolution.unwrap_or(cfg.resolution);
    let out = out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("no output path: pass --out or set it in the config".into()))?;
    let mesh = make_shape(&kind, resolution);
    save_mesh(&out, &mesh)?;
    out!("command gen");
    out!("seed {seed}");
    out!("out {}", out.display());
    out!("vertices {}", mesh.vertices.len());
    out!("faces {}", mesh.faces.len());
    out!("area {:.6}", mesh.total_area());
    out!("spacing {:.6}", mesh.mean_spacing());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_invariants(
    cfg: &RunConfig,
    seed: u64,
    mesh: Option<PathBuf>,
    caps_d: Option<u32>,
    caps_d_prime: Option<u32>,
    method: Method,
    quad_order: Option<u32>,
    rule: Option<String>,
    out: Option<PathBuf>,
    format: Option<String>,
) -> Result<(), CliError> {
    let mesh = load_mesh_arg(mesh, cfg)?;
    let d = caps_d.unwrap_or(cfg.caps_d);
    let d_prime = caps_d_prime.unwrap_or(cfg.caps_d_prime);
    let rule = parse_rule(rule.as_deref().unwrap_or(&cfg.surface_rule))?;
    let measure = sample_measure(&mesh, rule);
    let descriptor = match method {
        Method::Cg => descriptor_for_measure(&measure, d, d_prime)?,
        Method::Quadrature => {
            let order = quad_order.unwrap_or(cfg.quad_order);
            let quad = so3_quadrature(order)?;
            let centered = center_measure(&measure);
            let rho = compute_rho_moments(&centered, d, d_prime)?;
            let f = convolve_translational(&rho);
            let mut descriptor = so3_convolve_quadrature(&f, &quad)?;
            descriptor.centered = true;
            descriptor
        }
    };
    let written = match out.or_else(|| cfg.out.clone()) {
        Some(path) => {
            let format = match format {
                Some(name) => name
                    .parse::<OutputFormat>()
                    .map_err(|e| CliError::Usage(e.to_string()))?,
                None => cfg.format,
            };
            write_descriptor(&path, &descriptor, format, seed)?;
            Some(path)
        }
        None => None,
    };
    out!("command invariants");
    out!("seed {seed}");
    out!("caps {d} {d_prime}");
    out!(
        "method {}",
        match method {
            Method::Cg => "cg".to_string(),
            Method::Quadrature => format!("quadrature {}", quad_order.unwrap_or(cfg.quad_order)),
        }
    );
    out!("normalization {}", descriptor.normalization);
    out!("entries {}", descriptor.entries.len());
    let norm = descriptor.entries.iter().map(|e| e * e).sum::<f64>().sqrt();
    out!("norm {norm:.12e}");
    if let Some(path) = written {
        out!("out {}", path.display());
    }
    Ok(())
}

fn cmd_compare(seed: u64, first: &Path, second: &Path) -> Result<(), CliError> {
    let a = read_descriptor(first)?;
    let b = read_descriptor(second)?;
    let distance = descriptor_distance(&a, &b)?;
    out!("command compare");
    out!("seed {seed}");
    out!("caps {} {}", a.d, a.d_prime);
    out!("distance {distance:.12e}");
    // Per-degree breakdown: each entry belongs to the total degree of its
    // coupled channel pair.
    let keys = channel_keys(a.d, a.d_prime);
    let pairs = descriptor_pairs(a.d, a.d_prime);
    if pairs.len() == a.entries.len() {
        let max_j = keys.iter().map(|k| k.j_total).max().unwrap_or(0);
        let mut per_j = vec![0.0_f64; max_j as usize + 1];
        for (k, (i, _)) in pairs.iter().enumerate() {
            let diff = a.entries[k] - b.entries[k];
            per_j[keys[*i].j_total as usize] += diff * diff;
        }
        for (j, sq) in per_j.iter().enumerate() {
            out!("distance_j{j} {:.12e}", sq.sqrt());
        }
    }
    Ok(())
}

fn cmd_check(
    cfg: &RunConfig,
    seed: u64,
    mesh: Option<PathBuf>,
    rank_tol: Option<f64>,
) -> Result<(), CliError> {
    let mesh = load_mesh_arg(mesh, cfg)?;
    let mut tol = GenericityTolerances::for_mesh(&mesh);
    if let Some(v) = rank_tol.or(cfg.rank_tol) {
        tol.shape_rank_rel = v;
    }
    let star = check_star(&mesh, &tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let star_star = check_star_star(&mesh, &tol, &mut rng)?;
    out!("command check");
    out!("seed {seed}");
    out!("{}", star.text().trim_end());
    out!("{}", star_star.text().trim_end());
    out!("overall {}", if star.verdict == star_star.verdict { format!("{}", star.verdict) } else { "Mixed".to_string() });
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_reconstruct(
    cfg: &RunConfig,
    seed: u64,
    mesh: Option<PathBuf>,
    eps: Option<f64>,
    fibers: Option<usize>,
    margin_d1: Option<f64>,
    margin_delta: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let mesh = load_mesh_arg(mesh, cfg)?;
    let measure = sample_measure(&mesh, TriangleRule::ThreePoint);
    let geometry = estimate_shape_operator(&mesh)?;
    let (lo, hi) = mesh.bounding_box();
    let bounds = SurfaceBounds {
        radius: 0.5 * (hi - lo).norm(),
        curvature_max: max_curvature(&geometry),
        spacing: mesh.mean_spacing(),
    };
    let defaults = ReconstructParams::default();
    let params = ReconstructParams {
        n_fibers: fibers.or(cfg.fibers).unwrap_or(defaults.n_fibers),
        margin_d1: margin_d1.or(cfg.margin_d1).unwrap_or(defaults.margin_d1),
        margin_delta: margin_delta.or(cfg.margin_delta).unwrap_or(defaults.margin_delta),
        eps_override: eps.or(cfg.eps),
        ..defaults
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = reconstruct(&mesh, &measure, &bounds, &params, &mut rng)?;
    let out_dir = out.or_else(|| cfg.out.clone());
    let mut cloud_paths = Vec::new();
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
        for (i, c) in result.candidates.iter().enumerate() {
            let path = dir.join(format!("candidate_{i:02}.off"));
            let cloud: Vec<[f64; 3]> = c.points.iter().map(|(p, _)| [p.x, p.y, p.z]).collect();
            write_point_cloud(&path, &cloud)?;
            cloud_paths.push(path);
        }
    }
    out!("command reconstruct");
    out!("seed {seed}");
    out!("eps {:.6}", result.eps);
    out!("fibers {}", result.traces.len());
    for (i, t) in result.traces.iter().enumerate() {
        out!(
            "fiber {i}: radius {:.4} copies {} balls empty/single/double {}/{}/{} components {}",
            t.spec.radius, t.copies_found, t.empty_balls, t.single_balls, t.double_balls,
            t.components
        );
    }
    out!("candidates {}", result.candidates.len());
    for (i, c) in result.candidates.iter().enumerate() {
        let hausdorff = c
            .hausdorff
            .map(|h| format!("{h:.6}"))
            .unwrap_or_else(|| "n/a".to_string());
        out!(
            "candidate {i}: points {} residual {:.6} hausdorff {hausdorff}",
            c.points.len(),
            c.residual
        );
        if let Some(path) = cloud_paths.get(i) {
            out!("candidate {i} out {}", path.display());
        }
    }
    Ok(())
}

fn cmd_selftest(seed: u64, corrupt_table: bool) -> Result<(), CliError> {
    let corruption = corrupt_table.then_some(Corruption::CouplingTable);
    let results = run_all(corruption);
    let mut report = String::new();
    let mut all_passed = true;
    for r in &results {
        report.push_str(&format!(
            "suite {}: {} — {}\n",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.detail
        ));
        all_passed &= r.passed;
    }
    let scratch = cache_dir().join("selftest-report.txt");
    let report_written = std::fs::write(&scratch, &report).is_ok();
    out!("command selftest");
    out!("seed {seed}");
    out!("{}", report.trim_end());
    if report_written {
        out!("report {}", scratch.display());
    }
    if all_passed {
        out!("selftest pass");
        Ok(())
    } else {
        Err(CliError::Numeric("one or more self-test suites failed".into()))
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(pinned) = &cfg.command {
        if pinned != cli.command.name() {
            return Err(CliError::Usage(format!(
                "configuration pins command {pinned:?} but {:?} was invoked",
                cli.command.name()
            )));
        }
    }
    let seed = effective_seed(cli.seed, &cfg);
    match cli.command {
        Command::Gen { shape, resolution, out } => cmd_gen(&cfg, seed, shape, resolution, out),
        Command::Invariants {
            mesh,
            caps_d,
            caps_d_prime,
            method,
            quad_order,
            rule,
            out,
            format,
        } => cmd_invariants(
            &cfg, seed, mesh, caps_d, caps_d_prime, method, quad_order, rule, out, format,
        ),
        Command::Compare { first, second } => cmd_compare(seed, &first, &second),
        Command::Check { mesh, rank_tol } => cmd_check(&cfg, seed, mesh, rank_tol),
        Command::Reconstruct { mesh, eps, fibers, margin_d1, margin_delta, out } => {
            cmd_reconstruct(&cfg, seed, mesh, eps, fibers, margin_d1, margin_delta, out)
        }
        Command::Selftest { corrupt_table } => cmd_selftest(seed, corrupt_table),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
