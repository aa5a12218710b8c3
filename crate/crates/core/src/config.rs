//! Whole-pipeline configuration: named presets plus `key = value` files with
//! `[section]` headers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::filtering::FilterConfig;
use crate::graphs::ExpansionConfig;
use crate::index::IndexConfig;
use crate::pairwise::MatchConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builder {
    Kruskal,
    Clustered,
}

impl std::str::FromStr for Builder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kruskal" => Ok(Builder::Kruskal),
            "clustered" => Ok(Builder::Clustered),
            _ => Err(Error::InvalidConfig(format!("unknown graph builder `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Top of the rank handed to pairwise analysis.
    pub candidates: usize,
    pub builder: Builder,
    pub expansion: ExpansionConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            candidates: 50,
            builder: Builder::Clustered,
            expansion: ExpansionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset: String,
    pub detector: DetectorConfig,
    pub index: IndexConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    pub filter: FilterConfig,
    pub graph: GraphConfig,
    pub paths: Paths,
    pub workers: usize,
    /// Descriptors drawn from the feature files to train the index.
    pub training_sample: usize,
}

pub const PRESETS: [&str; 4] = ["surf2k", "surf5k", "dsurf", "dsurf-if"];

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset("dsurf").expect("built-in preset")
    }
}

impl PipelineConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (detector, if_iterations) = match name {
            "surf2k" => (DetectorConfig::surf2k(), 0),
            "surf5k" => (DetectorConfig::surf5k(), 0),
            "dsurf" => (DetectorConfig::dsurf(), 0),
            "dsurf-if" => (DetectorConfig::dsurf(), 2),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            preset: name.to_string(),
            detector,
            index: IndexConfig::default(),
            matching: MatchConfig::default(),
            filter: FilterConfig {
                if_iterations,
                ..FilterConfig::default()
            },
            graph: GraphConfig::default(),
            paths: Paths::default(),
            workers: 1,
            training_sample: 200_000,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.index.validate()?;
        self.matching.validate()?;
        self.filter.validate()?;
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if self.graph.candidates == 0 {
            return Err(Error::InvalidConfig("graph candidates must be at least 1".into()));
        }
        if !(self.graph.expansion.alpha >= 0.0) {
            return Err(Error::InvalidConfig("expansion alpha must be non-negative".into()));
        }
        if self.training_sample < self.index.min_training_size() {
            return Err(Error::InvalidConfig(format!(
                "training_sample {} below the index minimum {}",
                self.training_sample,
                self.index.min_training_size()
            )));
        }
        Ok(())
    }

    /// Parses a config file. A top-level `preset = NAME` selects the base
    /// values (default `dsurf`); every other key overrides one field.
    /// Sections: `[detector]`, `[index]`, `[match]`, `[filter]`, `[graph]`,
    /// `[expansion]`, `[paths]`; top-level keys are `preset`, `workers`,
    /// `training_sample`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String, String, usize)> = Vec::new();
        let mut section = String::new();
        let mut preset = "dsurf".to_string();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().trim_matches('"').to_string());
            if section.is_empty() && k == "preset" {
                preset = v;
            } else {
                entries.push((section.clone(), k, v, n + 1));
            }
        }

        let mut tree = serde_json::to_value(Self::preset(&preset)?)?;
        for (section, key, value, line) in entries {
            let slot = match section.as_str() {
                "" => tree.get_mut(&key),
                "expansion" => tree["graph"]["expansion"].get_mut(&key),
                s => tree.get_mut(s).and_then(|t| t.get_mut(&key)),
            }
            .filter(|v| !v.is_object())
            .ok_or_else(|| {
                Error::InvalidConfig(format!("line {line}: unknown key `{key}` in section [{section}]"))
            })?;
            *slot = convert(slot, &value)
                .ok_or_else(|| Error::InvalidConfig(format!("line {line}: bad value `{value}` for `{key}`")))?;
        }
        let cfg: Self = serde_json::from_value(tree)
            .map_err(|e| Error::InvalidConfig(format!("config does not deserialize: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// The config in the format [`PipelineConfig::parse`] reads, with every
    /// field spelled out.
    pub fn to_text(&self) -> String {
        let tree = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        let mut sections: Vec<(String, &serde_json::Map<String, Value>)> = Vec::new();
        if let Value::Object(top) = &tree {
            for (k, v) in top {
                match v {
                    Value::Object(map) if k == "graph" => {
                        sections.push((k.clone(), map));
                        if let Some(Value::Object(e)) = map.get("expansion") {
                            sections.push(("expansion".into(), e));
                        }
                    }
                    Value::Object(map) => sections.push((k.clone(), map)),
                    v => {
                        let _ = writeln!(out, "{k} = {}", scalar(v));
                    }
                }
            }
        }
        for (name, map) in sections {
            let _ = writeln!(out, "\n[{name}]");
            for (k, v) in map.iter().filter(|(_, v)| !v.is_object()) {
                if !v.is_null() {
                    let _ = writeln!(out, "{k} = {}", scalar(v));
                }
            }
        }
        out
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn convert(current: &Value, text: &str) -> Option<Value> {
    match current {
        Value::Bool(_) => text.parse::<bool>().ok().map(Value::Bool),
        Value::Number(n) if n.is_u64() => text.parse::<u64>().ok().map(Value::from),
        Value::Number(_) => text.parse::<f64>().ok().map(Value::from),
        _ => Some(Value::String(text.to_string())),
    }
}
