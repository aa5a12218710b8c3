use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use provenance_core::config::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Machine-readable record of one command run. Everything except
/// `started_unix` and `timings_ms` is a function of the inputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config_sha256: String,
    /// Effective configuration in config-file syntax; `--config` accepts the
    /// manifest itself to replay a run.
    pub config_text: String,
    pub config: PipelineConfig,
    pub started_unix: u64,
    pub timings_ms: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub outputs: Vec<PathBuf>,
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        let config_text = cfg.to_text();
        Self {
            tool: format!("provenance {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config_sha256: config_hash(&config_text),
            config_text,
            config: cfg.clone(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            timings_ms: BTreeMap::new(),
            counts: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn count(&mut self, name: &str, n: impl TryInto<u64>) {
        self.counts.insert(name.to_string(), n.try_into().unwrap_or(u64::MAX));
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// `DIR/manifest-COMMAND.json` for directory outputs, `FILE.COMMAND.manifest.json` otherwise.
    pub fn write_next_to(&self, out: &Path) -> anyhow::Result<PathBuf> {
        let path = if out.is_dir() {
            out.join(format!("manifest-{}.json", self.command))
        } else {
            let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            out.with_file_name(format!("{name}.{}.manifest.json", self.command))
        };
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path)
    }
}

/// Reads a config file, or the embedded config of a run manifest.
pub fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| provenance_core::Error::Io { path: path.to_path_buf(), source: e })?;
    if let Ok(serde_json::Value::Object(map)) = serde_json::from_str::<serde_json::Value>(&text) {
        if let Some(serde_json::Value::String(embedded)) = map.get("config_text") {
            return Ok(PipelineConfig::parse(embedded)?);
        }
    }
    Ok(PipelineConfig::parse(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            config_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_replays_its_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::preset("surf2k").unwrap();
        cfg.filter.rank_k = 17;
        let m = Manifest::new("query", &cfg);
        let path = m.write_next_to(dir.path()).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg);
    }
}
