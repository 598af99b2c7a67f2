use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::Config;

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub groundalign: String,
    pub cli: String,
}

/// What a command ran with and what it produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_sha256: String,
    pub config: Config,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub outputs: Vec<PathBuf>,
    #[serde(default)]
    pub labels: Map<String, Value>,
    #[serde(default)]
    pub metrics: Map<String, Value>,
    pub started_unix: u64,
    pub elapsed_secs: f64,
}

pub struct Recorder {
    manifest: RunManifest,
    start: Instant,
}

impl Recorder {
    pub fn new(command: &str, config: &Config, seed: Option<u64>) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            manifest: RunManifest {
                command: command.to_owned(),
                args: std::env::args().skip(1).collect(),
                config_sha256: config.sha256(),
                config: config.clone(),
                seed,
                versions: Versions {
                    groundalign: groundalign_version().to_owned(),
                    cli: env!("CARGO_PKG_VERSION").to_owned(),
                },
                outputs: Vec::new(),
                labels: Map::new(),
                metrics: Map::new(),
                started_unix,
                elapsed_secs: 0.0,
            },
            start: Instant::now(),
        }
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.manifest.outputs.push(path.into());
    }

    pub fn metric(&mut self, key: &str, value: impl Into<Value>) {
        self.manifest.metrics.insert(key.to_owned(), value.into());
    }

    pub fn label(&mut self, key: &str, value: impl Into<Value>) {
        self.manifest.labels.insert(key.to_owned(), value.into());
    }

    /// Writes the manifest to `path`.
    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.manifest.elapsed_secs = self.start.elapsed().as_secs_f64();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// The library crate shares the workspace version.
fn groundalign_version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// `DIR/run.json` for directory outputs, `FILE.run.json` next to files.
pub fn manifest_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join(MANIFEST_FILE)
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        output.with_file_name(name)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
