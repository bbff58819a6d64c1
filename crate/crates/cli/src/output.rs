use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

/// Version of the CSV and manifest layouts.
pub const FORMAT_VERSION: u32 = 1;

/// Files of one command run. Every CSV starts with a `#` line carrying the
/// format version and the configuration hash.
pub struct Outputs {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a, S: Serialize> {
    format_version: u32,
    command: &'a str,
    config_sha256: &'a str,
    config: &'a RunConfig,
    status: &'a str,
    files: &'a [String],
    summary: S,
}

impl Outputs {
    pub fn create(cfg: &RunConfig) -> Result<Self> {
        let dir = cfg.output_dir();
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, hash: cfg.hash(), files: Vec::new() })
    }

    pub fn dir(&self) -> &PathBuf {
        &self.dir
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    /// `body` writes the column header and the rows.
    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let hash = self.hash.clone();
        let mut out = self.open(name)?;
        writeln!(out, "# kamtori format_version={FORMAT_VERSION} config_sha256={hash}")?;
        body(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut out = self.open(name)?;
        serde_json::to_writer_pretty(&mut out, value)?;
        writeln!(out)?;
        out.flush()?;
        Ok(())
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish<S: Serialize>(mut self, command: &str, cfg: &RunConfig, status: &str, summary: S) -> Result<()> {
        let files = self.files.clone();
        let hash = self.hash.clone();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            command,
            config_sha256: &hash,
            config: cfg,
            status,
            files: &files,
            summary,
        };
        self.json("manifest.json", &manifest)
    }
}
