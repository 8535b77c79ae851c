//! Run directory layout and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use commlab::artifacts::{write_json, FORMAT_VERSION};
use commlab::config::Config;
use commlab::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub struct RunDir {
    pub root: PathBuf,
    pub config: Config,
}

impl RunDir {
    /// Explicit config file first, then the run's own snapshot, then defaults.
    pub fn open(root: &Path, config: Option<&Path>) -> Result<Self> {
        let snapshot = root.join("config.json");
        let config = match config {
            Some(p) if !p.exists() => return Err(Error::MissingArtifact(format!("config file {}", p.display())).into()),
            Some(p) => Config::load(p)?,
            None if snapshot.exists() => Config::load(&snapshot)?,
            None => Config::default(),
        };
        config.validate()?;
        Ok(RunDir { root: root.to_path_buf(), config })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Path of an upstream artifact, or an error naming who writes it.
    pub fn require(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(format!("{} (run `commlab {producer}` first)", p.display())).into())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub subcommand: String,
    pub arguments: Vec<String>,
    pub config: Config,
    pub seeds: Vec<u64>,
    /// Relative path to sha256 of every file read or written.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(subcommand: &str, arguments: Vec<String>, config: &Config) -> Self {
        Manifest {
            version: FORMAT_VERSION,
            subcommand: subcommand.to_string(),
            arguments,
            config: config.clone(),
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, run: &RunDir, path: &Path) -> Result<()> {
        hash_into(&mut self.inputs, &run.root, path)
    }

    pub fn output(&mut self, run: &RunDir, path: &Path) -> Result<()> {
        hash_into(&mut self.outputs, &run.root, path)
    }

    /// Writes the config snapshot and `manifests/<subcommand>-<args hash>.json`,
    /// so different invocations of one subcommand keep separate manifests.
    pub fn finish(mut self, run: &RunDir) -> Result<PathBuf> {
        self.seeds.sort_unstable();
        self.seeds.dedup();
        write_json(&run.path("config.json"), &run.config)?;
        let key = hex::encode(Sha256::digest(self.arguments.join("\u{1f}").as_bytes()));
        let path = run.path(&format!("manifests/{}-{}.json", self.subcommand, &key[..8]));
        write_json(&path, &self)?;
        Ok(path)
    }
}

fn hash_into(map: &mut BTreeMap<String, String>, root: &Path, path: &Path) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> =
            fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            hash_into(map, root, &e)?;
        }
        return Ok(());
    }
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let rel = path.strip_prefix(root).unwrap_or(path);
    map.insert(rel.to_string_lossy().replace('\\', "/"), hex::encode(Sha256::digest(&bytes)));
    Ok(())
}
