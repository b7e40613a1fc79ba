//! End-to-end tests of the command-line interface: exit codes, output
//! formats, determinism, and the configuration precedence rules.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_se3inv"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal death")
}

fn gen_mesh(dir: &Path, name: &str, spec: &str, resolution: &str) -> String {
    let path = dir.join(name).to_str().unwrap().to_string();
    let out = run(&["gen", "--shape", spec, "--resolution", resolution, "--out", &path]);
    assert_eq!(code(&out), 0, "gen failed: {}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["invariants", "--help"])), 0);
}

#[test]
fn unknown_subcommands_and_flags_are_usage_errors() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["invariants", "--bogus-flag"])), 1);
    assert_eq!(code(&run(&["gen", "--shape", "hexagon:1", "--out", "/tmp/x.off"])), 1);
    assert_eq!(code(&run(&["invariants"])), 1, "missing mesh is a usage error");
}

#[test]
fn absent_input_files_are_input_errors() {
    let out = run(&["invariants", "--mesh", "/nonexistent/mesh.off"]);
    assert_eq!(code(&out), 2);
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a descriptor at all").unwrap();
    let junk = junk.to_str().unwrap();
    assert_eq!(code(&run(&["compare", junk, junk])), 2);
}

#[test]
fn descriptor_round_trip_is_deterministic_across_formats() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = gen_mesh(dir.path(), "ell.off", "ellipsoid:1,1.3,1.7", "2");
    let b1 = dir.path().join("a1.bin").to_str().unwrap().to_string();
    let b2 = dir.path().join("a2.bin").to_str().unwrap().to_string();
    let txt = dir.path().join("a.txt").to_str().unwrap().to_string();
    for (path, format) in [(&b1, "binary"), (&b2, "binary"), (&txt, "text")] {
        let out = run(&[
            "invariants", "--mesh", &mesh, "--caps-d", "3", "--caps-dprime", "2", "--out",
            path, "--format", format,
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout_of(&out).contains("seed 0"));
    }
    // Equal inputs must produce byte-identical files.
    assert_eq!(std::fs::read(&b1).unwrap(), std::fs::read(&b2).unwrap());
    // The text export must round-trip exactly, so the distance is zero.
    let out = run(&["compare", &b1, &txt]);
    assert_eq!(code(&out), 0);
    let text = stdout_of(&out);
    assert!(text.contains("distance 0.000000000000e0"), "nonzero distance:\n{text}");
    assert!(text.contains("distance_j0"), "per-degree breakdown missing:\n{text}");
}

#[test]
fn quadrature_method_needs_a_sufficient_order() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = gen_mesh(dir.path(), "sph.off", "sphere:1", "1");
    let short = run(&[
        "invariants", "--mesh", &mesh, "--caps-d", "2", "--caps-dprime", "2", "--method",
        "quadrature", "--quad-order", "1",
    ]);
    assert_eq!(code(&short), 1, "insufficient order must be a usage error");
    let ok = run(&[
        "invariants", "--mesh", &mesh, "--caps-d", "2", "--caps-dprime", "1", "--method",
        "quadrature", "--quad-order", "3",
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(stdout_of(&ok).contains("method quadrature 3"));
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = gen_mesh(dir.path(), "ell.off", "ellipsoid:1,1.2,0.8", "1");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "config_version = 1\ncommand = \"invariants\"\ncaps_d = 2\ncaps_d_prime = 1\nseed = 9\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = run(&["invariants", "--config", cfg, "--mesh", &mesh]);
    assert_eq!(code(&out), 0);
    let text = stdout_of(&out);
    assert!(text.contains("seed 9") && text.contains("caps 2 1"), "config ignored:\n{text}");
    let out = run(&["invariants", "--config", cfg, "--mesh", &mesh, "--seed", "11"]);
    assert!(stdout_of(&out).contains("seed 11"), "flag must beat config");
    // The file pins its command; running another one is a usage error.
    assert_eq!(code(&run(&["check", "--config", cfg, "--mesh", &mesh])), 1);
    // Unknown keys and wrong versions are rejected.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "config_version = 1\nnot_a_key = 3\n").unwrap();
    assert_eq!(code(&run(&["invariants", "--config", bad.to_str().unwrap()])), 1);
    std::fs::write(&bad, "config_version = 99\n").unwrap();
    assert_eq!(code(&run(&["invariants", "--config", bad.to_str().unwrap()])), 1);
}

#[test]
fn check_reports_both_audits_on_a_torus() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = gen_mesh(dir.path(), "torus.off", "torus:2,0.5", "0");
    let out = run(&["check", "--mesh", &mesh, "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_of(&out);
    assert!(text.contains("first rank audit"), "missing first audit:\n{text}");
    assert!(text.contains("second rank audit"), "missing second audit:\n{text}");
    assert!(text.contains("seed 5"));
    assert_eq!(text.matches("verdict").count(), 2, "expected two verdict lines:\n{text}");
}

#[test]
fn reconstruct_writes_candidates_and_reports_degeneracy() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = gen_mesh(dir.path(), "ell.off", "ellipsoid:1,1.3,1.7", "2");
    let rec = dir.path().join("rec");
    let out = run(&[
        "reconstruct", "--mesh", &mesh, "--seed", "3", "--fibers", "1", "--out",
        rec.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_of(&out);
    assert!(text.contains("candidates"), "no candidate summary:\n{text}");
    assert!(rec.join("candidate_00.off").exists(), "no point cloud written");
    // A mesh too coarse for the fiber radius window is a degeneracy error.
    let coarse = gen_mesh(dir.path(), "coarse.off", "ellipsoid:1,1.3,1.7", "1");
    let out = run(&["reconstruct", "--mesh", &coarse, "--seed", "3"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn selftest_passes_and_corruption_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["selftest"])
        .env("SE3INV_CACHE_DIR", dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_of(&out);
    assert!(text.contains("selftest pass"));
    assert_eq!(text.matches(": pass").count(), 6, "expected six suites:\n{text}");
    assert!(
        dir.path().join("selftest-report.txt").exists(),
        "cache dir override was not honored"
    );
    let out = bin()
        .args(["selftest", "--corrupt-table"])
        .env("SE3INV_CACHE_DIR", dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(code(&out), 3, "corruption must fail the run");
    assert!(stdout_of(&out).contains("suite coupling-tables: FAIL"));
}
