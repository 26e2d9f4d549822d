//! Result files and the manifest that lists them with checksums.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

pub struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("output directory {} is not writable", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: hex(&Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    /// Writes the manifest; `record` is merged with the file list.
    pub fn finish(self, mut record: serde_json::Value) -> Result<()> {
        record["files"] = serde_json::to_value(&self.files)?;
        let mut s = serde_json::to_string_pretty(&record)?;
        s.push('\n');
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
    }
}

