//! Deterministic CSV tables and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Fixed scientific formatting for every float written to a report.
pub fn fmt(x: f64) -> String {
    format!("{x:.15e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

/// Columns appended to every row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<(Vec<String>, String)>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// One row of cells plus the hash of the grid it refers to.
    pub fn push(&mut self, cells: Vec<String>, grid_hash: &str) {
        assert_eq!(cells.len(), self.columns.len(), "row width");
        self.rows.push((cells, grid_hash.to_string()));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, prov: &Provenance) -> String {
        let mut out = self.columns.join(",");
        out.push_str(",grid_hash,config_hash,seed\n");
        for (cells, grid) in &self.rows {
            out.push_str(&cells.join(","));
            out.push_str(&format!(",{grid},{},{}\n", prov.config_hash, prov.seed));
        }
        out
    }
}

/// Collects the files of one command so the manifest can list their digests.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    prov: Provenance,
    files: Vec<FileRecord>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: &'a str,
    seed: u64,
    grids: Vec<String>,
    files: &'a [FileRecord],
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

impl Outputs {
    pub fn create(root: &Path, prov: Provenance) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Outputs {
            root: root.to_path_buf(),
            prov,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    /// Path under the output root, with parent directories created.
    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        Ok(p)
    }

    /// Record a file written by other means.
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let p = self.root.join(rel);
        let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileRecord {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        self.record(rel)?;
        Ok(p)
    }

    pub fn write_table(&mut self, rel: &str, table: &Table) -> CliResult<PathBuf> {
        let text = table.render(&self.prov);
        self.write(rel, text.as_bytes())
    }

    /// `manifest.toml` listing every recorded file; no timestamps.
    pub fn finish(mut self, command: &str, grids: &[String]) -> CliResult<PathBuf> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut grids = grids.to_vec();
        grids.sort();
        grids.dedup();
        let manifest = RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: &self.prov.config_hash,
            seed: self.prov.seed,
            grids,
            files: &self.files,
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
        let p = self.path("manifest.toml")?;
        fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        Ok(p)
    }
}
