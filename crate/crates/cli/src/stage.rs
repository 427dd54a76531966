//! Stage output directories and run manifests.
//!
//! A stage writes into a hidden sibling directory and is moved into place
//! only once every file is written, so a failed run leaves no partial output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use llmerge_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Stage {
    name: String,
    target: PathBuf,
    staging: PathBuf,
    /// Move files into an existing directory instead of replacing it.
    merge: bool,
    inputs: BTreeMap<String, String>,
    committed: bool,
}

impl Stage {
    pub fn begin(name: &str, target: PathBuf, merge: bool) -> Result<Stage> {
        let parent = target.parent().map(Path::to_path_buf).unwrap_or_default();
        let leaf = target
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.to_owned());
        let staging = parent.join(format!(".{leaf}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Stage {
            name: name.to_owned(),
            target,
            staging,
            merge,
            inputs: BTreeMap::new(),
            committed: false,
        })
    }

    pub fn staging_dir(&self) -> PathBuf {
        self.staging.clone()
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.staging.join(file)
    }

    /// Records an input under a stable label such as `data/registry.csv`.
    pub fn input(&mut self, label: impl Into<String>, path: &Path) -> Result<()> {
        self.inputs.insert(label.into(), sha256_file(path)?);
        Ok(())
    }

    pub fn commit(mut self, cfg: &RunConfig) -> Result<Manifest> {
        let mut outputs = BTreeMap::new();
        let mut files: Vec<PathBuf> = fs::read_dir(&self.staging)
            .map_err(|e| Error::io(&self.staging, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(&self.staging, err)))
            .collect::<Result<_>>()?;
        files.sort();
        for f in &files {
            let name = f.file_name().expect("file").to_string_lossy().into_owned();
            outputs.insert(name, sha256_file(f)?);
        }
        let manifest = Manifest {
            stage: self.name.clone(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            inputs: std::mem::take(&mut self.inputs),
            outputs,
        };
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        let mpath = self.staging.join(MANIFEST);
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;

        if self.merge {
            fs::create_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
            for f in files.iter().chain(std::iter::once(&mpath)) {
                let dest = self.target.join(f.file_name().expect("file"));
                fs::rename(f, &dest).map_err(|e| Error::io(&dest, e))?;
            }
            fs::remove_dir_all(&self.staging).map_err(|e| Error::io(&self.staging, e))?;
        } else {
            if self.target.exists() {
                fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
            }
            fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        self.committed = true;
        Ok(manifest)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
