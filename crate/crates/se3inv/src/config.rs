//! Run configuration and descriptor file formats for the command-line tool.
//!
//! A run is described by (in increasing precedence) built-in defaults, an
//! optional TOML configuration file, and command-line flags. Descriptors
//! are stored either in a fixed binary container or as a line-oriented
//! text export; both round-trip bit-exactly.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::invariants::{DescriptorMethod, InvariantDescriptor, DESCRIPTOR_FORMAT_VERSION};
use crate::surface::ShapeKind;

/// Version of the configuration schema.
pub const CONFIG_VERSION: u32 = 1;

/// Magic prefix of the binary descriptor container.
pub const DESCRIPTOR_MAGIC: &[u8; 8] = b"SE3INVD1";

/// Errors from configuration and descriptor I/O.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Parse(String),
    #[error("unsupported configuration version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("malformed descriptor file {path}: {reason}")]
    Descriptor { path: PathBuf, reason: String },
    #[error("malformed shape specification '{0}': {1}")]
    Shape(String, String),
}

/// Output format for descriptor files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Binary,
    Text,
}

impl std::str::FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(OutputFormat::Binary),
            "text" => Ok(OutputFormat::Text),
            other => Err(format!("unknown format '{other}' (expected binary or text)")),
        }
    }
}

/// Declarative description of a run, loadable from TOML. Every field has a
/// default; command-line flags override file values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Schema version of this file.
    pub config_version: u32,
    /// Subcommand to run when none is given on the command line.
    pub command: Option<String>,
    /// Input mesh path.
    pub mesh: Option<PathBuf>,
    /// Output path (file or prefix, command-dependent).
    pub out: Option<PathBuf>,
    /// Spatial degree cap d.
    pub caps_d: u32,
    /// Sphere-harmonic degree cap d′.
    pub caps_d_prime: u32,
    /// Rotation-group quadrature order for the quadrature descriptor path.
    pub quad_order: u32,
    /// Surface quadrature rule: centroid, three-point, six-point, seven-point.
    pub surface_rule: String,
    /// RNG seed used by every randomized stage.
    pub seed: u64,
    /// Descriptor output format.
    pub format: OutputFormat,
    /// Relative rank tolerance for the genericity audits.
    pub rank_tol: Option<f64>,
    /// Margin around the invariant-coordinate degenerate curves.
    pub margin_d1: Option<f64>,
    /// Margin around the frame-degenerate directions.
    pub margin_delta: Option<f64>,
    /// Ball radius for reconstruction (defaults to the built-in policy).
    pub eps: Option<f64>,
    /// Number of fibers sampled during reconstruction.
    pub fibers: Option<usize>,
    /// Shape to generate (for the gen command).
    pub shape: Option<ShapeKind>,
    /// Mesh resolution level (for the gen command).
    pub resolution: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            command: None,
            mesh: None,
            out: None,
            caps_d: 4,
            caps_d_prime: 3,
            quad_order: 10,
            surface_rule: "three-point".into(),
            seed: 0,
            format: OutputFormat::Binary,
            rank_tol: None,
            margin_d1: None,
            margin_delta: None,
            eps: None,
            fibers: None,
            shape: None,
            resolution: 3,
        }
    }
}

impl RunConfig {
    /// Loads and validates a TOML configuration file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if config.config_version != CONFIG_VERSION {
            return Err(ConfigError::Version {
                found: config.config_version,
                expected: CONFIG_VERSION,
            });
        }
        Ok(config)
    }
}

/// Scratch/cache directory override. The only environment variable the
/// tool reads; unset means the system temporary directory.
pub fn cache_dir() -> PathBuf {
    std::env::var_os("SE3INV_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir)
}

/// Parses a compact shape specification of the form `name:p1,p2,...`:
/// `sphere:R`, `ellipsoid:A,B,C`, `torus:MAJOR,MINOR`, `disc:R`,
/// `cylinder:R,H,ARC`, `perturbed:A,B,C,AMP,SEED`.
pub fn parse_shape_spec(spec: &str) -> Result<ShapeKind, ConfigError> {
    let err = |reason: &str| ConfigError::Shape(spec.to_string(), reason.to_string());
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let parts: Vec<f64> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(&format!("bad number: {e}")))?
    };
    let want = |n: usize| {
        if parts.len() == n {
            Ok(())
        } else {
            Err(err(&format!("expected {n} parameters, got {}", parts.len())))
        }
    };
    match name {
        "sphere" => {
            want(1)?;
            Ok(ShapeKind::Sphere { radius: parts[0] })
        }
        "ellipsoid" => {
            want(3)?;
            Ok(ShapeKind::Ellipsoid { a: parts[0], b: parts[1], c: parts[2] })
        }
        "torus" => {
            want(2)?;
            Ok(ShapeKind::Torus { major: parts[0], minor: parts[1] })
        }
        "disc" => {
            want(1)?;
            Ok(ShapeKind::Disc { radius: parts[0] })
        }
        "cylinder" => {
            want(3)?;
            Ok(ShapeKind::CylinderPatch {
                radius: parts[0],
                height: parts[1],
                arc_fraction: parts[2],
            })
        }
        "perturbed" => {
            want(5)?;
            Ok(ShapeKind::PerturbedEllipsoid {
                a: parts[0],
                b: parts[1],
                c: parts[2],
                amplitude: parts[3],
                seed: parts[4] as u64,
            })
        }
        other => Err(err(&format!("unknown shape '{other}'"))),
    }
}

// ---------------------------------------------------------------------------
// Descriptor container
// ---------------------------------------------------------------------------

fn io_err(path: &Path, source: std::io::Error) -> ConfigError {
    ConfigError::Io { path: path.to_path_buf(), source }
}

fn bad(path: &Path, reason: impl Into<String>) -> ConfigError {
    ConfigError::Descriptor { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes a descriptor in the fixed binary container: an 8-byte magic,
/// little-endian header words (format version, caps, method tag and
/// order, centering flag, normalization string), and the entries as
/// little-endian doubles.
pub fn write_descriptor_binary(
    path: &Path,
    descriptor: &InvariantDescriptor,
) -> Result<(), ConfigError> {
    let mut buf: Vec<u8> = Vec::with_capacity(64 + 8 * descriptor.entries.len());
    buf.extend_from_slice(DESCRIPTOR_MAGIC);
    buf.extend_from_slice(&descriptor.format_version.to_le_bytes());
    buf.extend_from_slice(&descriptor.d.to_le_bytes());
    buf.extend_from_slice(&descriptor.d_prime.to_le_bytes());
    let (tag, order) = match descriptor.method {
        DescriptorMethod::Cg => (0u32, 0u32),
        DescriptorMethod::Quadrature { order } => (1u32, order),
    };
    buf.extend_from_slice(&tag.to_le_bytes());
    buf.extend_from_slice(&order.to_le_bytes());
    buf.extend_from_slice(&(descriptor.centered as u32).to_le_bytes());
    let norm = descriptor.normalization.as_bytes();
    buf.extend_from_slice(&(norm.len() as u32).to_le_bytes());
    buf.extend_from_slice(norm);
    buf.extend_from_slice(&(descriptor.entries.len() as u64).to_le_bytes());
    for &e in &descriptor.entries {
        buf.extend_from_slice(&e.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| io_err(path, e))
}

/// Writes a descriptor as a line-oriented text export: `key value` header
/// lines, then one full-precision entry per line.
pub fn write_descriptor_text(
    path: &Path,
    descriptor: &InvariantDescriptor,
    seed: u64,
) -> Result<(), ConfigError> {
    let mut out = String::new();
    out.push_str("se3inv-descriptor\n");
    out.push_str(&format!("format_version {}\n", descriptor.format_version));
    out.push_str(&format!("d {}\n", descriptor.d));
    out.push_str(&format!("d_prime {}\n", descriptor.d_prime));
    let method = match descriptor.method {
        DescriptorMethod::Cg => "cg 0".to_string(),
        DescriptorMethod::Quadrature { order } => format!("quadrature {order}"),
    };
    out.push_str(&format!("method {method}\n"));
    out.push_str(&format!("normalization {}\n", descriptor.normalization));
    out.push_str(&format!("centered {}\n", descriptor.centered as u32));
    out.push_str(&format!("seed {seed}\n"));
    out.push_str(&format!("entries {}\n", descriptor.entries.len()));
    for &e in &descriptor.entries {
        out.push_str(&format!("{e:.17e}\n"));
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Writes a descriptor in the requested format.
pub fn write_descriptor(
    path: &Path,
    descriptor: &InvariantDescriptor,
    format: OutputFormat,
    seed: u64,
) -> Result<(), ConfigError> {
    match format {
        OutputFormat::Binary => write_descriptor_binary(path, descriptor),
        OutputFormat::Text => write_descriptor_text(path, descriptor, seed),
    }
}

/// Reads a descriptor file in either format, detected from its content.
pub fn read_descriptor(path: &Path) -> Result<InvariantDescriptor, ConfigError> {
    let mut file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut data = Vec::new();
    file.read_to_end(&mut data).map_err(|e| io_err(path, e))?;
    if data.starts_with(DESCRIPTOR_MAGIC) {
        read_descriptor_binary(path, &data)
    } else if data.starts_with(b"se3inv-descriptor") {
        read_descriptor_text(path, &data)
    } else {
        Err(bad(path, "neither the binary magic nor the text header"))
    }
}

fn read_descriptor_binary(path: &Path, data: &[u8]) -> Result<InvariantDescriptor, ConfigError> {
    let mut pos = DESCRIPTOR_MAGIC.len();
    let take_u32 = |pos: &mut usize| -> Result<u32, ConfigError> {
        let end = *pos + 4;
        let bytes = data.get(*pos..end).ok_or_else(|| bad(path, "truncated header"))?;
        *pos = end;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()))
    };
    let format_version = take_u32(&mut pos)?;
    if format_version != DESCRIPTOR_FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {format_version}")));
    }
    let d = take_u32(&mut pos)?;
    let d_prime = take_u32(&mut pos)?;
    let tag = take_u32(&mut pos)?;
    let order = take_u32(&mut pos)?;
    let centered = take_u32(&mut pos)?;
    let norm_len = take_u32(&mut pos)? as usize;
    let method = match tag {
        0 => DescriptorMethod::Cg,
        1 => DescriptorMethod::Quadrature { order },
        other => return Err(bad(path, format!("unknown method tag {other}"))),
    };
    let norm_end = pos + norm_len;
    let norm_bytes = data.get(pos..norm_end).ok_or_else(|| bad(path, "truncated header"))?;
    let normalization = String::from_utf8(norm_bytes.to_vec())
        .map_err(|_| bad(path, "normalization is not UTF-8"))?;
    pos = norm_end;
    let count_bytes = data.get(pos..pos + 8).ok_or_else(|| bad(path, "truncated header"))?;
    let count = u64::from_le_bytes(count_bytes.try_into().unwrap()) as usize;
    pos += 8;
    let payload = data.get(pos..).ok_or_else(|| bad(path, "truncated payload"))?;
    if payload.len() != 8 * count {
        return Err(bad(
            path,
            format!("payload holds {} bytes, header promises {}", payload.len(), 8 * count),
        ));
    }
    let entries: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(InvariantDescriptor {
        format_version,
        d,
        d_prime,
        method,
        normalization,
        centered: centered != 0,
        entries,
    })
}

fn read_descriptor_text(path: &Path, data: &[u8]) -> Result<InvariantDescriptor, ConfigError> {
    let text = std::str::from_utf8(data).map_err(|_| bad(path, "not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some("se3inv-descriptor") {
        return Err(bad(path, "missing text header"));
    }
    let mut format_version = None;
    let mut d = None;
    let mut d_prime = None;
    let mut method = None;
    let mut normalization = None;
    let mut centered = None;
    let mut count = None;
    for line in lines.by_ref() {
        let (key, value) =
            line.split_once(' ').ok_or_else(|| bad(path, format!("bad header line '{line}'")))?;
        let parse_u32 = |v: &str| {
            v.parse::<u32>().map_err(|_| bad(path, format!("bad value '{v}' for {key}")))
        };
        match key {
            "format_version" => format_version = Some(parse_u32(value)?),
            "d" => d = Some(parse_u32(value)?),
            "d_prime" => d_prime = Some(parse_u32(value)?),
            "method" => {
                let (name, order) =
                    value.split_once(' ').ok_or_else(|| bad(path, "bad method line"))?;
                method = Some(match name {
                    "cg" => DescriptorMethod::Cg,
                    "quadrature" => DescriptorMethod::Quadrature { order: parse_u32(order)? },
                    other => return Err(bad(path, format!("unknown method '{other}'"))),
                });
            }
            "normalization" => normalization = Some(value.to_string()),
            "centered" => centered = Some(parse_u32(value)? != 0),
            "seed" => {}
            "entries" => {
                count = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| bad(path, format!("bad entry count '{value}'")))?,
                );
                break;
            }
            other => return Err(bad(path, format!("unknown header key '{other}'"))),
        }
    }
    let count = count.ok_or_else(|| bad(path, "missing entry count"))?;
    let entries: Vec<f64> = lines
        .map(|l| l.trim().parse::<f64>().map_err(|_| bad(path, format!("bad entry '{l}'"))))
        .collect::<Result<_, _>>()?;
    if entries.len() != count {
        return Err(bad(path, format!("expected {count} entries, found {}", entries.len())));
    }
    let format_version = format_version.ok_or_else(|| bad(path, "missing format_version"))?;
    if format_version != DESCRIPTOR_FORMAT_VERSION {
        return Err(bad(path, format!("unsupported format version {format_version}")));
    }
    Ok(InvariantDescriptor {
        format_version,
        d: d.ok_or_else(|| bad(path, "missing d"))?,
        d_prime: d_prime.ok_or_else(|| bad(path, "missing d_prime"))?,
        method: method.ok_or_else(|| bad(path, "missing method"))?,
        normalization: normalization.ok_or_else(|| bad(path, "missing normalization"))?,
        centered: centered.ok_or_else(|| bad(path, "missing centered"))?,
        entries,
    })
}

/// Writes a point cloud as an OFF file with vertices only.
pub fn write_point_cloud(path: &Path, points: &[[f64; 3]]) -> Result<(), ConfigError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    (|| -> std::io::Result<()> {
        writeln!(w, "OFF")?;
        writeln!(w, "{} 0 0", points.len())?;
        for p in points {
            writeln!(w, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2])?;
        }
        Ok(())
    })()
    .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariants::DESCRIPTOR_NORMALIZATION;

    fn sample_descriptor() -> InvariantDescriptor {
        InvariantDescriptor {
            format_version: DESCRIPTOR_FORMAT_VERSION,
            d: 3,
            d_prime: 2,
            method: DescriptorMethod::Quadrature { order: 7 },
            normalization: DESCRIPTOR_NORMALIZATION.to_string(),
            centered: true,
            entries: vec![1.0, -2.5, 3.25e-17, f64::MIN_POSITIVE, -0.0, 7.125],
        }
    }

    #[test]
    fn binary_container_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = sample_descriptor();
        write_descriptor_binary(&path, &d).unwrap();
        let back = read_descriptor(&path).unwrap();
        assert_eq!(back.d, d.d);
        assert_eq!(back.d_prime, d.d_prime);
        assert_eq!(back.method, d.method);
        assert_eq!(back.normalization, d.normalization);
        assert_eq!(back.centered, d.centered);
        let bits: Vec<u64> = d.entries.iter().map(|e| e.to_bits()).collect();
        let back_bits: Vec<u64> = back.entries.iter().map(|e| e.to_bits()).collect();
        assert_eq!(bits, back_bits);
    }

    #[test]
    fn text_export_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        let d = sample_descriptor();
        write_descriptor_text(&path, &d, 42).unwrap();
        let back = read_descriptor(&path).unwrap();
        assert_eq!(back.method, d.method);
        let bits: Vec<u64> = d.entries.iter().map(|e| e.to_bits()).collect();
        let back_bits: Vec<u64> = back.entries.iter().map(|e| e.to_bits()).collect();
        assert_eq!(bits, back_bits, "17-significant-digit text must round-trip doubles");
    }

    #[test]
    fn corrupted_files_are_rejected_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = sample_descriptor();
        write_descriptor_binary(&path, &d).unwrap();
        let mut data = std::fs::read(&path).unwrap();
        data.truncate(data.len() - 3);
        std::fs::write(&path, &data).unwrap();
        let err = read_descriptor(&path).unwrap_err();
        assert!(matches!(err, ConfigError::Descriptor { .. }), "got {err:?}");

        let garbage = dir.path().join("g.bin");
        std::fs::write(&garbage, b"not a descriptor at all").unwrap();
        assert!(read_descriptor(&garbage).is_err());
    }

    #[test]
    fn config_defaults_and_overrides_parse() {
        let config: RunConfig = toml::from_str("").unwrap();
        assert_eq!(config.caps_d, 4);
        assert_eq!(config.caps_d_prime, 3);
        assert_eq!(config.format, OutputFormat::Binary);

        let config: RunConfig = toml::from_str(
            r#"
            caps_d = 3
            seed = 99
            format = "text"
            [shape]
            kind = "ellipsoid"
            a = 1.0
            b = 1.3
            c = 1.7
            "#,
        )
        .unwrap();
        assert_eq!(config.caps_d, 3);
        assert_eq!(config.seed, 99);
        assert_eq!(config.format, OutputFormat::Text);
        assert_eq!(config.shape, Some(ShapeKind::Ellipsoid { a: 1.0, b: 1.3, c: 1.7 }));

        let err = toml::from_str::<RunConfig>("no_such_key = 1").unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    #[test]
    fn shape_specs_parse_and_reject() {
        assert_eq!(parse_shape_spec("sphere:2.0").unwrap(), ShapeKind::Sphere { radius: 2.0 });
        assert_eq!(
            parse_shape_spec("torus:2,0.5").unwrap(),
            ShapeKind::Torus { major: 2.0, minor: 0.5 }
        );
        assert_eq!(
            parse_shape_spec("perturbed:1,1.3,1.7,0.05,7").unwrap(),
            ShapeKind::PerturbedEllipsoid { a: 1.0, b: 1.3, c: 1.7, amplitude: 0.05, seed: 7 }
        );
        assert!(parse_shape_spec("sphere").is_err());
        assert!(parse_shape_spec("cube:1").is_err());
        assert!(parse_shape_spec("torus:2,x").is_err());
    }
}
