//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to reproduce a stage's outputs. Wall-clock timings
/// live in a sibling file so reruns produce byte-identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub scenario_path: Option<String>,
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, String>,
    pub timings_file: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Serialize)]
struct Timing {
    stage: String,
    millis: f64,
}

/// Collects written files and per-stage timings for one command.
pub struct Output {
    root: PathBuf,
    files: Vec<PathBuf>,
    timings: Vec<Timing>,
    clock: Instant,
}

impl Output {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root).map_err(|e| Failure::io(root, e))?;
        Ok(Output {
            root: root.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        })
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, contents: &str) -> Result<(), Failure> {
        let rel = rel.as_ref();
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Failure::io(&path, e))?;
        self.track(rel);
        Ok(())
    }

    /// Record a file some other writer produced under the root.
    pub fn track(&mut self, rel: impl AsRef<Path>) {
        let rel = rel.as_ref().to_path_buf();
        if !self.files.contains(&rel) {
            self.files.push(rel);
        }
    }

    /// Close the current stage and start timing the next one.
    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(Timing {
            stage: stage.to_string(),
            millis: (now - self.clock).as_secs_f64() * 1e3,
        });
        self.clock = now;
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest, Failure> {
        let timings = serde_json::to_string_pretty(&self.timings).expect("plain data") + "\n";
        let timings_path = self.root.join(TIMINGS_FILE);
        fs::write(&timings_path, timings).map_err(|e| Failure::io(&timings_path, e))?;

        self.files.sort();
        manifest.timings_file = TIMINGS_FILE.to_string();
        manifest.files = self
            .files
            .iter()
            .map(|rel| {
                let path = self.root.join(rel);
                let data = fs::read(&path).map_err(|e| Failure::io(&path, e))?;
                Ok(FileEntry {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    bytes: data.len() as u64,
                    sha256: hex::encode(Sha256::digest(&data)),
                })
            })
            .collect::<Result<_, Failure>>()?;
        let text = serde_json::to_string_pretty(&manifest).expect("plain data") + "\n";
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| Failure::io(&path, e))?;
        Ok(manifest)
    }
}

impl RunManifest {
    pub fn new(command: &str, output_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: None,
            seed: None,
            scenario_path: None,
            output_dir: output_dir.display().to_string(),
            settings: BTreeMap::new(),
            timings_file: String::new(),
            files: Vec::new(),
        }
    }
}

/// Read a whole input file. A missing file is a usage error.
pub fn read_input(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Failure::usage(format!("{what} not found: {}", path.display()))
        } else {
            Failure::io(path, e)
        }
    })
}

/// Relative paths of every regular file below `dir`, sorted.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Failure::io(&d, e))? {
            let entry = entry.map_err(|e| Failure::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir).expect("below dir").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}
