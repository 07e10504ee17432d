//! Output bookkeeping: every produced file is listed with its size and SHA-256.
//! The manifest is the only output carrying a timestamp.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use harnack_lab::io::write_json;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub command: &'static str,
    /// "pass", "fail" or "error".
    pub status: &'static str,
    /// False when the run stopped early; the listed files are then partial.
    pub complete: bool,
    pub failures: &'a [String],
    pub error: Option<String>,
    pub config: &'a ExperimentConfig,
    pub files: Vec<FileEntry>,
    pub created_unix: u64,
}

/// Collects the files written into one output directory.
pub struct Outputs {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    /// Runs `write` on `dir/name` and records the file.
    pub fn add(&mut self, name: &str, write: impl FnOnce(&Path) -> harnack_lab::Result<()>) -> harnack_lab::Result<()> {
        let path = self.dir.join(name);
        write(&path)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> harnack_lab::Result<()> {
        self.add(name, |p| write_json(p, value))
    }

    pub fn entries(&self) -> std::io::Result<Vec<FileEntry>> {
        self.files
            .iter()
            .map(|name| {
                let bytes = std::fs::read(self.dir.join(name))?;
                Ok(FileEntry { path: name.clone(), bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) })
            })
            .collect()
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
