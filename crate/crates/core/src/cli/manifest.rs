use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Record of one command invocation. `config` is the effective configuration,
/// so `--config manifest.toml` repeats the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    /// Seeds as decimal strings; TOML integers cannot hold every `u64`.
    pub seeds: BTreeMap<String, String>,
    /// Input file -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) -> SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub results: toml::Table,
    pub config: RunConfig,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        let mut seeds = BTreeMap::new();
        seeds.insert("master".into(), config.seed.to_string());
        Ok(Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config.to_toml()?.as_bytes()),
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            results: toml::Table::new(),
            config: config.clone(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = file_sha256(path)?;
        self.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn result(&mut self, key: &str, value: impl Into<toml::Value>) {
        self.results.insert(key.into(), value.into());
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let text = toml::to_string(self).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        let path = out.join(MANIFEST_FILE);
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Writes files into the output directory and remembers their hashes.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.written.insert(name.into(), sha256_hex(contents));
        Ok(path)
    }

    /// Register a file that a library call wrote directly.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let h = file_sha256(&self.path(name))?;
        self.written.insert(name.into(), h);
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.outputs = self.written;
        manifest.write(&self.root)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::Preset;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::preset(Preset::Sas);
        cfg.seed = 42;
        let mut m = Manifest::new("sample", &cfg).unwrap();
        m.seed("chains", u64::MAX);
        m.result("jump_acceptance", 0.5);
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", b"x\n1\n").unwrap();
        let m = out.finish(m).unwrap();
        let back = Manifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seeds["chains"], u64::MAX.to_string());
        assert_eq!(back.outputs["a.csv"], sha256_hex(b"x\n1\n"));
        let cfg2 = RunConfig::load(&dir.path().join(MANIFEST_FILE), None).unwrap();
        assert_eq!(cfg2, cfg);
    }
}
