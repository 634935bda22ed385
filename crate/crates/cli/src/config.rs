//! Experiment configuration files.
//!
//! ```toml
//! seed = 7
//! dimension = 2
//! c0 = 0.1
//! output = "out/bump2d"
//! route = "direct"              # or "fourier"
//!
//! [phantom]
//! kind = "bump"
//! amplitude = 1.0
//! center = [0.5, 0.5, 0.5]
//! width = 0.2
//!
//! [grid]
//! resolutions = [65, 129]
//!
//! [illumination]
//! kind = "linear"               # "cgo" in three dimensions
//!
//! [noise]
//! kind = "gaussian"
//! amplitude = 0.0
//! sweep = [1e-4, 1e-3, 1e-2]
//!
//! [anchors]
//! point = [0.5, 0.5]
//! ```
//!
//! `c0` bounds `sqrt(det H)` from below in two dimensions and is the determinant
//! target of the slab covering in three.

use std::path::{Path, PathBuf};

use powerdense::acquisition::{NoiseKind, NoiseModel};
use powerdense::algebra::Construction;
use powerdense::io::Encoding;
use powerdense::phantom::Phantom;
use powerdense::Grid;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSpec {
    /// Unit conductivity.
    Identity,
    Constant { value: f64 },
    Exponential { rate: Vec<f64> },
    Bump { amplitude: f64, center: Vec<f64>, width: f64 },
    HarmonicSquare { offset: f64, slope: Vec<f64>, curvature: f64 },
    Periodic { amplitude: f64, periods: [f64; 2] },
}

fn pad3(v: &[f64], field: &str) -> CliResult<[f64; 3]> {
    if v.len() > 3 {
        return Err(CliError::Config(format!("{field} has {} entries", v.len())));
    }
    let mut out = [0.0; 3];
    out[..v.len()].copy_from_slice(v);
    Ok(out)
}

impl PhantomSpec {
    pub fn phantom(&self) -> CliResult<Phantom> {
        Ok(match self {
            PhantomSpec::Identity => Phantom::Constant { value: 1.0 },
            PhantomSpec::Constant { value } => Phantom::Constant { value: *value },
            PhantomSpec::Exponential { rate } => Phantom::Exponential {
                rate: pad3(rate, "phantom.rate")?,
            },
            PhantomSpec::Bump {
                amplitude,
                center,
                width,
            } => Phantom::Bump {
                amplitude: *amplitude,
                center: pad3(center, "phantom.center")?,
                width: *width,
            },
            PhantomSpec::HarmonicSquare {
                offset,
                slope,
                curvature,
            } => Phantom::HarmonicSquare {
                offset: *offset,
                slope: pad3(slope, "phantom.slope")?,
                curvature: *curvature,
            },
            PhantomSpec::Periodic { amplitude, periods } => Phantom::Periodic {
                amplitude: *amplitude,
                periods: *periods,
            },
        })
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per axis, one entry per refinement level.
    pub resolutions: Vec<usize>,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum IlluminationKind {
    /// `g_i = x_i`.
    Linear,
    /// Complex geometrical optics traces.
    Cgo,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IlluminationSpec {
    pub kind: IlluminationKind,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    std::f64::consts::PI
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    #[default]
    Direct,
    Fourier,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_noise_kind")]
    pub kind: String,
    #[serde(default)]
    pub amplitude: f64,
    /// Amplitudes for `sweep`.
    #[serde(default)]
    pub sweep: Vec<f64>,
}

fn default_noise_kind() -> String {
    "gaussian".into()
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: default_noise_kind(),
            amplitude: 0.0,
            sweep: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnchorSpec {
    /// Where `log sigma` (and in 3D the frame) is known; snapped to the nearest node.
    pub point: Vec<f64>,
    /// Known value; defaults to the phantom's.
    #[serde(default)]
    pub log_sigma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoveringSpec {
    /// Node layers shared by consecutive slabs.
    #[serde(default = "default_overlap")]
    pub overlap: usize,
}

fn default_overlap() -> usize {
    3
}

impl Default for CoveringSpec {
    fn default() -> Self {
        CoveringSpec {
            overlap: default_overlap(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructionSpec {
    #[default]
    GramSchmidt,
    Symmetric,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncodingSpec {
    #[default]
    Csv,
    F64le,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dimension: usize,
    pub c0: f64,
    pub output: PathBuf,
    #[serde(default)]
    pub route: Route,
    #[serde(default)]
    pub construction: ConstructionSpec,
    #[serde(default)]
    pub encoding: EncodingSpec,
    /// Relative residual of the forward solves.
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    pub phantom: PhantomSpec,
    pub grid: GridSpec,
    pub illumination: IlluminationSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub anchors: AnchorSpec,
    #[serde(default)]
    pub covering: CoveringSpec,
}

fn default_solver_tol() -> f64 {
    1e-12
}

/// A validated configuration and the digest of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
    pub path: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<LoadedConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = ExperimentConfig::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        Ok(LoadedConfig {
            config,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
            path: path.to_path_buf(),
        })
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = self.dimension;
        if !(2..=3).contains(&d) {
            return bad(format!("dimension must be 2 or 3, got {d}"));
        }
        if self.grid.resolutions.is_empty() || self.grid.resolutions.iter().any(|&n| n < 3) {
            return bad("grid.resolutions needs entries of at least 3".into());
        }
        for (name, ext) in [("grid.lower", &self.grid.lower), ("grid.upper", &self.grid.upper)] {
            if let Some(v) = ext {
                if v.len() != d {
                    return bad(format!("{name} has {} entries for dimension {d}", v.len()));
                }
            }
        }
        if self.anchors.point.len() != d {
            return bad(format!(
                "anchors.point has {} entries for dimension {d}",
                self.anchors.point.len()
            ));
        }
        if !(self.c0 >= 0.0) {
            return bad(format!("c0 must be non-negative, got {}", self.c0));
        }
        match (d, self.illumination.kind) {
            (2, IlluminationKind::Cgo) => return bad("illumination.kind = \"cgo\" needs dimension 3".into()),
            (3, IlluminationKind::Linear) => return bad("illumination.kind = \"linear\" needs dimension 2".into()),
            _ => {}
        }
        self.noise_kind()?;
        if !(self.noise.amplitude >= 0.0) || self.noise.sweep.iter().any(|a| !(*a >= 0.0)) {
            return bad("noise amplitudes must be non-negative".into());
        }
        if self.noise.sweep.windows(2).any(|w| w[0] > w[1]) {
            return bad("noise.sweep must be sorted".into());
        }
        self.phantom.phantom()?;
        Ok(())
    }

    pub fn grid(&self, n: usize) -> CliResult<Grid> {
        let d = self.dimension;
        let lower = self.grid.lower.clone().unwrap_or(vec![0.0; d]);
        let upper = self.grid.upper.clone().unwrap_or(vec![1.0; d]);
        Grid::new(&lower, &upper, &vec![n; d]).map_err(|e| CliError::Config(format!("grid: {e}")))
    }

    pub fn noise_kind(&self) -> CliResult<NoiseKind> {
        self.noise
            .kind
            .parse()
            .map_err(|_| CliError::Config(format!("noise.kind {:?} is not gaussian or uniform", self.noise.kind)))
    }

    pub fn noise_model(&self, amplitude: f64, seed: u64) -> CliResult<NoiseModel> {
        Ok(NoiseModel {
            kind: self.noise_kind()?,
            amplitude,
            seed,
        })
    }

    pub fn construction(&self) -> Construction {
        match self.construction {
            ConstructionSpec::GramSchmidt => Construction::GramSchmidt,
            ConstructionSpec::Symmetric => Construction::SymmetricInverseSqrt,
        }
    }

    pub fn encoding(&self) -> Encoding {
        match self.encoding {
            EncodingSpec::Csv => Encoding::Csv,
            EncodingSpec::F64le => Encoding::F64Le,
        }
    }
}
