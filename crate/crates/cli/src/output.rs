//! Atomic file emission and the per-directory manifest.
//!
//! `manifest.txt` has one line per file written into the directory:
//! `<file> sha256=<content hash> config=<config hash> seed=<seed> command=<cmd>`,
//! sorted by file name. Rerunning a command replaces its own lines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rislab::fsutil::write_atomic;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.txt";

pub struct OutputDir {
    dir: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    written: Vec<(String, String)>,
}

impl OutputDir {
    pub fn new(dir: &Path, command: &str, config_hash: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, bytes).map_err(|e| match e {
            rislab::Error::Io(io) => CliError::io(&path, io),
            other => other.into(),
        })?;
        self.written.push((name.to_string(), hex::encode(Sha256::digest(bytes))));
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.dir.join(MANIFEST);
        let mut lines: BTreeMap<String, String> = BTreeMap::new();
        if let Ok(old) = std::fs::read_to_string(&path) {
            for line in old.lines() {
                if let Some((name, _)) = line.split_once(' ') {
                    lines.insert(name.to_string(), line.to_string());
                }
            }
        }
        for (name, hash) in &self.written {
            lines.insert(
                name.clone(),
                format!(
                    "{name} sha256={hash} config={} seed={} command={}",
                    self.config_hash, self.seed, self.command
                ),
            );
        }
        let mut text = String::new();
        for line in lines.values() {
            text.push_str(line);
            text.push('\n');
        }
        write_atomic(&path, text.as_bytes()).map_err(|e| match e {
            rislab::Error::Io(io) => CliError::io(&path, io),
            other => other.into(),
        })?;
        Ok(path)
    }
}

/// CSV text from a header and pre-formatted rows.
pub fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// gnuplot script plotting columns of a CSV file against its first column.
pub fn gnuplot(data: &str, title: &str, xlabel: &str, ylabel: &str, columns: &[(usize, &str)], style: &str) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\nset grid\nplot "
    );
    let parts: Vec<String> = columns
        .iter()
        .map(|(c, name)| format!("'{data}' using 1:{c} with {style} title '{name}'"))
        .collect();
    s.push_str(&parts.join(", \\\n     "));
    s.push('\n');
    s
}
