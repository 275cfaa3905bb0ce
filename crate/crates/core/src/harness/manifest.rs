use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::io::{read_file, write_atomic};
use crate::rng::RNG_ALGORITHM;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

/// Provenance of one command run; written last, atomically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub rng_algorithm: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub files: Vec<FileRecord>,
    pub timings: Vec<Timing>,
    /// Derived quantities worth keeping next to the outputs (e.g. timing ratios).
    pub measurements: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Accumulates outputs and timings while a command runs.
#[derive(Debug)]
pub struct RunRecorder {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl RunRecorder {
    pub fn new(command: &str, out_dir: &Path, config: serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| crate::PixcueError::io(out_dir, e))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                rng_algorithm: RNG_ALGORITHM.into(),
                config,
                seeds: BTreeMap::new(),
                files: Vec::new(),
                timings: Vec::new(),
                measurements: BTreeMap::new(),
            },
        })
    }

    /// Continues an existing manifest, e.g. to register files added later.
    pub fn resume(out_dir: &Path, manifest: RunManifest) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            manifest,
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.into(), seed);
    }

    pub fn measure(&mut self, name: &str, value: f64) {
        self.manifest.measurements.insert(name.into(), value);
    }

    /// Runs `f` and records its wall-clock time.
    pub fn timed<T>(&mut self, label: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.manifest.timings.push(Timing {
            label: label.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    /// Writes `bytes` to `relative` under the output directory and records it.
    pub fn write(&mut self, relative: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out_dir.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| crate::PixcueError::io(parent, e))?;
        }
        write_atomic(&path, bytes)?;
        self.record(relative, bytes);
        Ok(path)
    }

    /// Records a file already present under the output directory.
    pub fn record(&mut self, relative: &str, bytes: &[u8]) {
        self.manifest.files.retain(|f| f.path != relative);
        self.manifest.files.push(FileRecord {
            path: relative.into(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.manifest.files
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        let json = serde_json::to_vec_pretty(&self.manifest)?;
        write_atomic(&self.out_dir.join(MANIFEST_NAME), &json)?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_slice(&read_file(&dir.join(MANIFEST_NAME))?)?)
}
