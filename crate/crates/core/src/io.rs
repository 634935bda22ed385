//! Field files, illumination tables, power-density manifests and covering files.
//!
//! A field file is a text header followed by node values, x fastest:
//!
//! ```text
//! powerdense-field 1
//! dim 2
//! lower 0 0
//! upper 1 1
//! shape 65 65
//! kind matrix 2 2 symmetric
//! encoding csv
//! data
//! ```
//!
//! With `encoding csv` each node is one line of comma-separated components; with
//! `encoding f64le` the payload is raw little-endian doubles.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{NoiseKind, NoiseProvenance, PowerDensityData};
use crate::error::{Error, Result};
use crate::field::{MatrixField, ScalarField, VectorField};
use crate::forward::Illumination;
use crate::grid::Grid;
use crate::recon3d::covering::{Covering, Subdomain};
use crate::recon3d::rotation_ode::Frame;

const MAGIC: &str = "powerdense-field 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Csv,
    F64Le,
}

impl std::str::FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Encoding::Csv),
            "f64le" => Ok(Encoding::F64Le),
            other => Err(Error::Format(format!("unknown encoding {other:?}"))),
        }
    }
}

impl std::fmt::Display for Encoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Encoding::Csv => "csv",
            Encoding::F64Le => "f64le",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Vector,
    Matrix { rows: usize, cols: usize, symmetric: bool },
}

impl FieldKind {
    fn components(&self, dim: usize) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector => dim,
            FieldKind::Matrix { rows, cols, .. } => rows * cols,
        }
    }
}

/// Contents of a field file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub grid: Grid,
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

impl FieldFile {
    pub fn into_scalar(self) -> Result<ScalarField> {
        match self.kind {
            FieldKind::Scalar => ScalarField::new(self.grid, self.values),
            k => Err(Error::Format(format!("expected a scalar field, found {k:?}"))),
        }
    }

    pub fn into_vector(self) -> Result<VectorField> {
        match self.kind {
            FieldKind::Vector => VectorField::new(self.grid, self.values),
            k => Err(Error::Format(format!("expected a vector field, found {k:?}"))),
        }
    }

    pub fn into_matrix(self) -> Result<MatrixField> {
        match self.kind {
            FieldKind::Matrix { rows, cols, symmetric } => {
                MatrixField::new(self.grid, rows, cols, self.values, symmetric)
            }
            k => Err(Error::Format(format!("expected a matrix field, found {k:?}"))),
        }
    }
}

fn join(xs: impl Iterator<Item = String>) -> String {
    xs.collect::<Vec<_>>().join(" ")
}

/// Encode a field file in memory.
pub fn encode_field(grid: &Grid, kind: FieldKind, values: &[f64], encoding: Encoding) -> Result<Vec<u8>> {
    let ncomp = kind.components(grid.dim());
    if values.len() != ncomp * grid.len() {
        return Err(Error::Format(format!(
            "{} values for {} nodes of {ncomp} components",
            values.len(),
            grid.len()
        )));
    }
    let kind_line = match kind {
        FieldKind::Scalar => "scalar".to_string(),
        FieldKind::Vector => "vector".to_string(),
        FieldKind::Matrix { rows, cols, symmetric } => {
            format!("matrix {rows} {cols} {}", if symmetric { "symmetric" } else { "general" })
        }
    };
    let mut out = format!(
        "{MAGIC}\ndim {}\nlower {}\nupper {}\nshape {}\nkind {kind_line}\nencoding {encoding}\ndata\n",
        grid.dim(),
        join(grid.lower().iter().map(|x| format!("{x:e}"))),
        join(grid.upper().iter().map(|x| format!("{x:e}"))),
        join(grid.shape().iter().map(|x| x.to_string())),
    )
    .into_bytes();
    match encoding {
        Encoding::Csv => {
            for node in values.chunks(ncomp) {
                let line = node.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
                out.extend_from_slice(line.as_bytes());
                out.push(b'\n');
            }
        }
        Encoding::F64Le => values.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

fn header_line<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<Vec<&'a str>> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Format(format!("missing header line {key:?}")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Format(format!("expected header {key:?}, found {line:?}")));
    }
    Ok(parts.collect())
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("cannot parse {s:?}")))
}

/// Decode a field file from memory.
pub fn decode_field(bytes: &[u8]) -> Result<FieldFile> {
    const DATA: &[u8] = b"\ndata\n";
    let split = bytes
        .windows(DATA.len())
        .position(|w| w == DATA)
        .ok_or_else(|| Error::Format("no data marker".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Format("header is not text".into()))?;
    let payload = &bytes[split + DATA.len()..];
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format("not a field file".into()));
    }
    let dim: usize = parse(header_line(&mut lines, "dim")?.first().copied().unwrap_or(""))?;
    let lower: Vec<f64> = header_line(&mut lines, "lower")?.into_iter().map(parse).collect::<Result<_>>()?;
    let upper: Vec<f64> = header_line(&mut lines, "upper")?.into_iter().map(parse).collect::<Result<_>>()?;
    let shape: Vec<usize> = header_line(&mut lines, "shape")?.into_iter().map(parse).collect::<Result<_>>()?;
    if shape.len() != dim {
        return Err(Error::Format(format!("shape has {} entries for dim {dim}", shape.len())));
    }
    let grid = Grid::new(&lower, &upper, &shape)?;
    let kind = match header_line(&mut lines, "kind")?.as_slice() {
        ["scalar"] => FieldKind::Scalar,
        ["vector"] => FieldKind::Vector,
        ["matrix", r, c, sym] => FieldKind::Matrix {
            rows: parse(r)?,
            cols: parse(c)?,
            symmetric: match *sym {
                "symmetric" => true,
                "general" => false,
                other => return Err(Error::Format(format!("unknown matrix flag {other:?}"))),
            },
        },
        other => return Err(Error::Format(format!("unknown field kind {other:?}"))),
    };
    let encoding: Encoding = parse(header_line(&mut lines, "encoding")?.first().copied().unwrap_or(""))?;
    let ncomp = kind.components(dim);
    let values: Vec<f64> = match encoding {
        Encoding::Csv => {
            let text = std::str::from_utf8(payload).map_err(|_| Error::Format("payload is not text".into()))?;
            let mut v = Vec::with_capacity(ncomp * grid.len());
            for (k, line) in text.lines().enumerate() {
                let before = v.len();
                for x in line.split(',') {
                    v.push(parse::<f64>(x.trim())?);
                }
                if v.len() - before != ncomp {
                    return Err(Error::Format(format!("line {k} has {} of {ncomp} components", v.len() - before)));
                }
            }
            v
        }
        Encoding::F64Le => {
            if !payload.len().is_multiple_of(8) {
                return Err(Error::Format("payload is not a whole number of doubles".into()));
            }
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
                .collect()
        }
    };
    if values.len() != ncomp * grid.len() {
        return Err(Error::Format(format!(
            "{} values for {} nodes of {ncomp} components",
            values.len(),
            grid.len()
        )));
    }
    Ok(FieldFile { grid, kind, values })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_field(path: &Path, grid: &Grid, kind: FieldKind, values: &[f64], encoding: Encoding) -> Result<()> {
    write_bytes(path, &encode_field(grid, kind, values, encoding)?)
}

pub fn read_field(path: &Path) -> Result<FieldFile> {
    decode_field(&read_bytes(path)?).map_err(|e| e.context(path.display().to_string()))
}

pub fn write_scalar(path: &Path, f: &ScalarField, encoding: Encoding) -> Result<()> {
    write_field(path, f.grid(), FieldKind::Scalar, f.values(), encoding)
}

pub fn write_vector(path: &Path, f: &VectorField, encoding: Encoding) -> Result<()> {
    write_field(path, f.grid(), FieldKind::Vector, f.values(), encoding)
}

pub fn write_matrix(path: &Path, f: &MatrixField, encoding: Encoding) -> Result<()> {
    let kind = FieldKind::Matrix {
        rows: f.rows(),
        cols: f.cols(),
        symmetric: f.is_symmetric(),
    };
    write_field(path, f.grid(), kind, f.values(), encoding)
}

/// Boundary values as `node,x,y[,z],value` rows in node order.
pub fn write_illumination(path: &Path, grid: &Grid, g: &Illumination) -> Result<()> {
    let axes = ["x", "y", "z"];
    let mut out = format!("node,{},value\n", axes[..grid.dim()].join(","));
    for (node, value) in g.iter() {
        let p = grid.point(node);
        let coords: Vec<String> = p[..grid.dim()].iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&format!("{node},{},{value:e}\n", coords.join(",")));
    }
    write_bytes(path, out.as_bytes())
}

pub fn read_illumination(path: &Path, grid: &Grid) -> Result<Illumination> {
    let text = read_text(path)?;
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != grid.dim() + 2 {
            return Err(Error::Format(format!("{}: bad row {line:?}", path.display())));
        }
        nodes.push(parse::<usize>(cols[0].trim())?);
        values.push(parse::<f64>(cols[cols.len() - 1].trim())?);
    }
    Illumination::new(grid, nodes, values)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseRecord {
    pub kind: String,
    pub amplitude: f64,
    pub seed: u64,
    pub reference_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EntryRecord {
    pub i: usize,
    pub j: usize,
    pub file: String,
}

/// Manifest of a power-density data directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DataManifest {
    pub m: usize,
    pub zeta: f64,
    pub zeta_removed: bool,
    pub grid_hash: String,
    pub rank_deficient: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseRecord>,
    /// Boundary condition files, in solution order, relative to the manifest.
    #[serde(default)]
    pub illuminations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covering: Option<String>,
    pub entries: Vec<EntryRecord>,
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Format(e.to_string()))
}

fn from_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Write `h_i_j.field` for `i <= j` and `manifest.toml` into `dir`.
pub fn write_power_density(
    dir: &Path,
    data: &PowerDensityData,
    zeta: f64,
    illuminations: &[String],
    covering: Option<String>,
    encoding: Encoding,
) -> Result<PathBuf> {
    let m = data.m();
    let mut entries = Vec::new();
    for i in 0..m {
        for j in i..m {
            let file = format!("h_{i}_{j}.field");
            write_scalar(&dir.join(&file), &data.entry(i, j), encoding)?;
            entries.push(EntryRecord { i, j, file });
        }
    }
    let manifest = DataManifest {
        m,
        zeta,
        zeta_removed: data.zeta_removed,
        grid_hash: data.grid().hash_hex(),
        rank_deficient: data.rank_deficient,
        noise: data.noise.map(|n| NoiseRecord {
            kind: n.kind.to_string(),
            amplitude: n.amplitude,
            seed: n.seed,
            reference_norm: n.reference_norm,
        }),
        illuminations: illuminations.to_vec(),
        covering,
        entries,
    };
    let path = dir.join("manifest.toml");
    write_bytes(&path, to_toml(&manifest)?.as_bytes())?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<DataManifest> {
    from_toml(path)
}

/// Load the data described by a manifest; the grid hash is checked.
pub fn read_power_density(manifest_path: &Path) -> Result<(DataManifest, PowerDensityData)> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let m = manifest.m;
    let mut fields: Vec<Option<ScalarField>> = vec![None; m * m];
    for e in &manifest.entries {
        if e.i >= m || e.j >= m {
            return Err(Error::Format(format!("entry ({}, {}) outside {m}x{m}", e.i, e.j)));
        }
        let f = read_field(&dir.join(&e.file))?.into_scalar()?;
        fields[e.i * m + e.j] = Some(f.clone());
        fields[e.j * m + e.i] = Some(f);
    }
    let fields: Vec<ScalarField> = fields
        .into_iter()
        .enumerate()
        .map(|(k, f)| f.ok_or_else(|| Error::Format(format!("missing entry ({}, {})", k / m, k % m))))
        .collect::<Result<_>>()?;
    let grid = fields[0].grid().clone();
    if grid.hash_hex() != manifest.grid_hash {
        return Err(Error::Format("grid hash does not match the manifest".into()));
    }
    let mut values = Vec::with_capacity(m * m * grid.len());
    for n in 0..grid.len() {
        values.extend(fields.iter().map(|f| f.at(n)));
    }
    let mut data = PowerDensityData::from_field(MatrixField::new(grid, m, m, values, true)?)?;
    data.zeta_removed = manifest.zeta_removed;
    data.noise = manifest
        .noise
        .as_ref()
        .map(|n| -> Result<NoiseProvenance> {
            Ok(NoiseProvenance {
                kind: n.kind.parse::<NoiseKind>()?,
                amplitude: n.amplitude,
                seed: n.seed,
                reference_norm: n.reference_norm,
            })
        })
        .transpose()?;
    Ok((manifest, data))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct SubdomainRecord {
    lower: [f64; 3],
    upper: [f64; 3],
    triple: [usize; 3],
    signs: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct CoveringRecord {
    c0: f64,
    subdomain: Vec<SubdomainRecord>,
}

pub fn write_covering(path: &Path, covering: &Covering) -> Result<()> {
    let rec = CoveringRecord {
        c0: covering.c0,
        subdomain: covering
            .subdomains
            .iter()
            .map(|s| SubdomainRecord {
                lower: s.lower,
                upper: s.upper,
                triple: s.triple,
                signs: s.signs,
            })
            .collect(),
    };
    write_bytes(path, to_toml(&rec)?.as_bytes())
}

pub fn read_covering(path: &Path) -> Result<Covering> {
    let rec: CoveringRecord = from_toml(path)?;
    if rec.subdomain.iter().any(|s| s.signs.iter().any(|x| x.abs() != 1.0)) {
        return Err(Error::Format(format!("{}: signs must be +1 or -1", path.display())));
    }
    Ok(Covering {
        c0: rec.c0,
        subdomains: rec
            .subdomain
            .into_iter()
            .map(|s| Subdomain {
                lower: s.lower,
                upper: s.upper,
                triple: s.triple,
                signs: s.signs,
            })
            .collect(),
    })
}

/// Initial frame of a 3D anchor: stacked columns relative to one subdomain.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub subdomain: usize,
    pub frame: Frame,
}

pub fn write_frame(path: &Path, rec: &FrameRecord) -> Result<()> {
    write_bytes(path, to_toml(rec)?.as_bytes())
}

pub fn read_frame(path: &Path) -> Result<FrameRecord> {
    from_toml(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_encodings_round_trip_exactly() {
        let g = Grid::new(&[0.0, -1.0], &[2.0, 1.0], &[5, 4]).unwrap();
        let vals: Vec<f64> = (0..g.len() * 4).map(|k| (k as f64 * 0.37).sin() / 3.0).collect();
        let kind = FieldKind::Matrix {
            rows: 2,
            cols: 2,
            symmetric: false,
        };
        for enc in [Encoding::Csv, Encoding::F64Le] {
            let back = decode_field(&encode_field(&g, kind, &vals, enc).unwrap()).unwrap();
            assert_eq!(back.grid, g);
            assert_eq!(back.kind, kind);
            assert_eq!(back.values, vals);
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let g = Grid::unit(2, 3).unwrap();
        let mut bytes = encode_field(&g, FieldKind::Scalar, &[1.0; 9], Encoding::F64Le).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(decode_field(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn data_directory_round_trips() {
        let dir = std::env::temp_dir().join(format!("powerdense-io-{}", std::process::id()));
        let g = Grid::unit(2, 6).unwrap();
        let s = [
            VectorField::from_fn(&g, |p| [1.0 + p[0], 0.2, 0.0]).unwrap(),
            VectorField::from_fn(&g, |p| [0.1, 1.0 + p[1] * p[0], 0.0]).unwrap(),
        ];
        let data = crate::acquisition::synthesize_h(&s).unwrap();
        let g1 = Illumination::from_fn(&g, |p| p[0]).unwrap();
        write_illumination(&dir.join("g1.csv"), &g, &g1).unwrap();
        let path = write_power_density(&dir, &data, 0.3, &["g1.csv".into()], None, Encoding::Csv).unwrap();
        let (manifest, back) = read_power_density(&path).unwrap();
        assert_eq!(back.h.values(), data.h.values());
        assert_eq!(manifest.illuminations, vec!["g1.csv".to_string()]);
        let g1b = read_illumination(&dir.join("g1.csv"), &g).unwrap();
        assert_eq!(g1b.values(), g1.values());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn covering_file_round_trips() {
        let cov = Covering {
            c0: 2.5,
            subdomains: vec![Subdomain {
                lower: [-1.0, -1.0, -1.0],
                upper: [0.5, 2.0, 2.0],
                triple: [0, 1, 3],
                signs: [1.0, 1.0, -1.0],
            }],
        };
        let path = std::env::temp_dir().join(format!("powerdense-cov-{}.toml", std::process::id()));
        write_covering(&path, &cov).unwrap();
        assert_eq!(read_covering(&path).unwrap(), cov);
        fs::remove_file(&path).ok();
    }
}
