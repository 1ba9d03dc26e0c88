//! Output directory handling and the per-command run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use elfs_core::data::manifest_sidecar_path;
use serde::Serialize;

use crate::config::Resolver;
use crate::CliError;

/// Tracks every file a command opens or produces. The lists end up in
/// `run_manifest_<command>.json`.
pub struct Run {
    command: &'static str,
    out: PathBuf,
    files_read: Vec<PathBuf>,
    files_written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a BTreeMap<String, String>,
    unused_config_keys: Vec<String>,
    files_read: Vec<String>,
    files_written: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out)
            .with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Run {
            command,
            out: out.to_path_buf(),
            files_read: Vec::new(),
            files_written: Vec::new(),
        })
    }

    /// Records `path` as an input and hands it back.
    pub fn input(&mut self, path: &Path) -> PathBuf {
        if !self.files_read.iter().any(|p| p == path) {
            self.files_read.push(path.to_path_buf());
        }
        path.to_path_buf()
    }

    /// Path of an output file under the output directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.files_written.push(p.clone());
        p
    }

    /// Like [`output`](Self::output), also recording the JSON sidecar that
    /// accompanies an embedding file.
    pub fn output_embeddings(&mut self, name: &str) -> PathBuf {
        let p = self.output(name);
        self.files_written.push(manifest_sidecar_path(&p));
        p
    }

    pub fn finish(self, resolver: &Resolver) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: resolver.resolved(),
            unused_config_keys: resolver.unused_keys(),
            files_read: self
                .files_read
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            files_written: self
                .files_written
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
        };
        let path = self.out.join(format!("run_manifest_{}.json", self.command));
        let json = serde_json::to_string_pretty(&manifest).context("serializing run manifest")?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
