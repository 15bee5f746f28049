//! Experiment configuration files.
//!
//! A config is TOML. Top-level keys and the `[local]`, `[partition]`,
//! `[model]` and `[seeds]` sections map onto [`ExperimentConfig`]; the
//! `[data]` section selects the dataset. Every key is optional:
//!
//! ```toml
//! algorithm = "fedmr"          # fedmr | fedavg | fedprox | fedmr_no_mr
//! num_clients = 100
//! participation_fraction = 0.1
//! rounds = 100
//! pretrain_rounds = 0
//!
//! [local]
//! epochs = 5
//! batch_size = 50
//! learning_rate = 0.01
//! momentum = 0.9
//!
//! [partition]
//! scheme = "dirichlet"         # iid | dirichlet
//! alpha = 0.5
//!
//! [model]
//! kind = "mlp"
//! hidden = [64, 64]
//!
//! [data]
//! source = "synthetic"         # synthetic | idx
//! ```
//!
//! `--set a.b=value` overrides are applied to the parsed document before it
//! is resolved, so validation sees the final values.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SyntheticKind;
use crate::error::{Error, Result};
use crate::orchestrator::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    // synthetic
    pub kind: SyntheticKind,
    pub num_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub dim: usize,
    pub noise: f64,
    pub separation: f64,
    // idx
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            kind: SyntheticKind::Blobs,
            num_classes: 10,
            train_samples: 5000,
            test_samples: 1000,
            dim: 16,
            noise: 1.0,
            separation: 1.0,
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
        }
    }
}

impl DataConfig {
    /// The four IDX paths, in train-images, train-labels, test-images,
    /// test-labels order, each checked for presence.
    pub fn idx_paths(&self) -> Result<[&PathBuf; 4]> {
        let fields = [
            ("data.train_images", &self.train_images),
            ("data.train_labels", &self.train_labels),
            ("data.test_images", &self.test_images),
            ("data.test_labels", &self.test_labels),
        ];
        let mut out = Vec::with_capacity(4);
        for (field, path) in fields {
            let path = path
                .as_ref()
                .ok_or_else(|| Error::config(field, "required when data.source = \"idx\""))?;
            if !path.is_file() {
                return Err(Error::config(field, format!("file {} not found", path.display())));
            }
            out.push(path);
        }
        Ok([out[0], out[1], out[2], out[3]])
    }

    pub fn validate(&self) -> Result<()> {
        match self.source {
            DataSource::Idx => {
                self.idx_paths()?;
            }
            DataSource::Synthetic => {
                if self.num_classes < 2 {
                    return Err(Error::config("data.num_classes", "must be at least 2"));
                }
                if self.train_samples < self.num_classes {
                    return Err(Error::config("data.train_samples", "must cover every class"));
                }
                if self.test_samples == 0 {
                    return Err(Error::config("data.test_samples", "must be at least 1"));
                }
                if self.dim == 0 || (self.kind == SyntheticKind::Spiral && self.dim != 2) {
                    return Err(Error::config("data.dim", "must be positive (2 for spirals)"));
                }
                if !(self.noise >= 0.0 && self.noise.is_finite()) {
                    return Err(Error::config("data.noise", "must be a non-negative number"));
                }
                if !(self.separation > 0.0 && self.separation.is_finite()) {
                    return Err(Error::config("data.separation", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// A fully defaulted and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub experiment: ExperimentConfig,
    pub data: DataConfig,
}

/// Parses `key=value`. The value is read as a TOML literal, falling back to
/// a bare string (`algorithm=fedavg`).
pub fn parse_override(arg: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::ConfigParse(format!("override `{arg}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::ConfigParse(format!("override `{arg}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply_override(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut table = doc;
    for (depth, part) in parts.iter().enumerate() {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| {
            Error::config(parts[..=depth].join("."), "is a value, not a section")
        })?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl ResolvedConfig {
    pub fn from_toml_str(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut doc, key, value.clone())?;
        }
        let data = match doc.remove("data") {
            Some(v) => v
                .try_into::<DataConfig>()
                .map_err(|e| Error::ConfigParse(format!("in [data]: {e}")))?,
            None => DataConfig::default(),
        };
        let experiment: ExperimentConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e| Error::ConfigParse(e.to_string()))?;
        let resolved = Self { experiment, data };
        resolved.validate()?;
        Ok(resolved)
    }

    pub fn from_file(path: &std::path::Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        self.data.validate()
    }

    /// Canonical TOML with every default spelled out. Parsing it back gives
    /// an identical config.
    pub fn to_toml_string(&self) -> String {
        let mut doc = toml::Table::try_from(&self.experiment).expect("config serializes");
        doc.insert(
            "data".into(),
            toml::Value::try_from(&self.data).expect("data config serializes"),
        );
        toml::to_string(&doc).expect("table serializes")
    }

    /// SHA-256 over the canonical TOML and, for IDX data, the input files.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.to_toml_string().as_bytes());
        if self.data.source == DataSource::Idx {
            for path in self.data.idx_paths()? {
                h.update(std::fs::read(path)?);
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// The subset of the config that determines client shards and test data.
    pub fn data_fingerprint(&self) -> String {
        let e = &self.experiment;
        format!(
            "num_clients = {}\ndata_seed = {}\n{}{}",
            e.num_clients,
            e.seeds.data,
            toml::to_string(&e.partition).expect("serializes"),
            toml::to_string(&self.data).expect("serializes")
        )
    }
}
