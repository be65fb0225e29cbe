//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PartitionScheme;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Nonlinearity};
use crate::protocol::{PayloadMode, TrainRule, ZoRule};
use crate::scalar::Precision;
use crate::zo::SplitConfig;

/// Environment variables starting with this prefix override config keys;
/// `__` separates table levels (`FEDSPZO_METHOD__P1=4` sets `method.p1`).
pub const ENV_PREFIX: &str = "FEDSPZO_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub rounds: u32,
    pub n_clients: usize,
    pub sample_fraction: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    /// Learning rate μ.
    pub lr: f64,
    /// Perturbation scale ε; unused by `fedavg_fo`.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default = "default_payload_mode")]
    pub payload_mode: PayloadMode,
    #[serde(default = "default_eval_every")]
    pub eval_every: u32,
    /// Check every server reconstruction against the client's parameters.
    #[serde(default)]
    pub verify_reconstruction: bool,
    pub method: MethodConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default = "default_partition")]
    pub partition: PartitionScheme,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Fedspzo {
        p1: usize,
        p2: usize,
        /// Derived from `p2 / (2·p1)`; if given it must agree.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ps: Option<usize>,
    },
    CentralZo {
        p: usize,
    },
    ForwardZo {
        p: usize,
    },
    FedavgFo,
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Fedspzo { .. } => "fedspzo",
            MethodConfig::CentralZo { .. } => "central_zo",
            MethodConfig::ForwardZo { .. } => "forward_zo",
            MethodConfig::FedavgFo => "fedavg_fo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Nonlinearity,
    /// Index of the first θ₂ layer; defaults to the classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Held-out share, stratified by class.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        spread: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

fn default_eps() -> f64 {
    1e-3
}
fn default_precision() -> Precision {
    Precision::F64
}
fn default_payload_mode() -> PayloadMode {
    PayloadMode::ScalarsOnly
}
fn default_eval_every() -> u32 {
    10
}
fn default_partition() -> PartitionScheme {
    PartitionScheme::Iid
}
fn default_nonlinearity() -> Nonlinearity {
    Nonlinearity::Tanh
}
fn default_true() -> bool {
    true
}
fn default_test_fraction() -> f64 {
    0.2
}

fn field(path: &str, detail: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {detail}"))
}

impl ExperimentConfig {
    /// Parses TOML text, validates it and fills derived fields.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::config(format!("invalid TOML: {e}")))?;
        Self::from_table(table)
    }

    /// Reads `path`, applies `FEDSPZO_*` overrides from `env`, then validates.
    ///
    /// Relative CSV paths are resolved against the config file's directory.
    pub fn load<I>(path: &Path, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("{}: invalid TOML: {e}", path.display())))?;
        apply_env_overrides(&mut table, env)?;
        let mut cfg = Self::from_table(table)?;
        if let DataSource::Csv { path: csv, .. } = &mut cfg.data.source {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let mut cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.message().to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    /// Checks every constraint and fills `method.ps`.
    pub fn resolve(&mut self) -> Result<()> {
        if self.rounds == 0 {
            return Err(field("rounds", "must be at least 1"));
        }
        if self.n_clients == 0 {
            return Err(field("n_clients", "must be at least 1"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return Err(field("sample_fraction", format!("must lie in (0, 1], got {}", self.sample_fraction)));
        }
        if self.local_steps == 0 {
            return Err(field("local_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(field("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(field("eps", format!("must be positive, got {}", self.eps)));
        }
        if self.eval_every == 0 {
            return Err(field("eval_every", "must be at least 1"));
        }
        match &mut self.method {
            MethodConfig::Fedspzo { p1, p2, ps } => {
                if *p1 == 0 {
                    return Err(field("method.p1", "must be at least 1"));
                }
                if *p2 == 0 || *p2 % (2 * *p1) != 0 {
                    return Err(field(
                        "method.p2",
                        format!("P2 = {p2} must equal 2·P1·Ps for an integer Ps ≥ 1 (P1 = {p1})"),
                    ));
                }
                let derived = *p2 / (2 * *p1);
                if let Some(given) = *ps {
                    if given != derived {
                        return Err(field("method.ps", format!("{given} disagrees with P2/(2·P1) = {derived}")));
                    }
                }
                *ps = Some(derived);
            }
            MethodConfig::CentralZo { p } | MethodConfig::ForwardZo { p } => {
                if *p == 0 {
                    return Err(field("method.p", "must be at least 1"));
                }
            }
            MethodConfig::FedavgFo => {}
        }
        if self.model.hidden.contains(&0) {
            return Err(field("model.hidden", "layer widths must be positive"));
        }
        if let Some(cut) = self.model.cut {
            if cut > self.model.hidden.len() {
                return Err(field(
                    "model.cut",
                    format!("{cut} exceeds the index of the classifier layer ({})", self.model.hidden.len()),
                ));
            }
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return Err(field("data.test_fraction", "must lie in (0, 1)"));
        }
        match &self.data.source {
            DataSource::Blobs { n, dim, classes, spread } => {
                if *classes < 2 || *dim == 0 || *n < *classes {
                    return Err(field("data.source", "blobs need classes ≥ 2, dim ≥ 1 and n ≥ classes"));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(field("data.source.spread", "must be finite and non-negative"));
                }
            }
            DataSource::Csv { label_column, .. } => {
                if label_column.is_empty() {
                    return Err(field("data.source.label_column", "must not be empty"));
                }
            }
        }
        if let PartitionScheme::Dirichlet { alpha } = self.partition {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(field("partition.alpha", "must be positive"));
            }
        }
        Ok(())
    }

    /// Clients sampled per round: `max(1, round(fraction · n))`.
    pub fn clients_per_round(&self) -> usize {
        ((self.sample_fraction * self.n_clients as f64).round() as usize).clamp(1, self.n_clients)
    }

    /// Model for inputs of width `input` and `classes` outputs.
    pub fn model_spec(&self, input: usize, classes: usize) -> Result<ModelSpec> {
        ModelSpec::mlp(input, &self.model.hidden, classes, self.model.nonlinearity, self.model.cut)
    }

    pub fn train_rule(&self) -> Result<TrainRule> {
        let rule = match self.method {
            MethodConfig::Fedspzo { p1, p2, .. } => TrainRule::Zo(ZoRule::Split(SplitConfig::new(p1, p2, self.eps, self.lr)?)),
            MethodConfig::CentralZo { p } => TrainRule::Zo(ZoRule::Central {
                p,
                eps: self.eps,
                mu: self.lr,
            }),
            MethodConfig::ForwardZo { p } => TrainRule::Zo(ZoRule::Forward {
                p,
                eps: self.eps,
                mu: self.lr,
            }),
            MethodConfig::FedavgFo => TrainRule::FirstOrder { mu: self.lr },
        };
        Ok(rule)
    }

    /// Fully resolved TOML; parsing it yields an identical config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialize config: {e}")))
    }
}

/// Applies `FEDSPZO_A__B=value` entries to `table` as `a.b = value`.
///
/// Values are read as TOML literals when they parse as one and as strings otherwise.
pub fn apply_env_overrides<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut overrides: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|rest| (rest.to_ascii_lowercase(), v)))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let path: Vec<&str> = key.split("__").collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::config(format!("malformed override key {ENV_PREFIX}{}", key.to_ascii_uppercase())));
        }
        let value = parse_literal(&raw);
        let (last, parents) = path.split_last().expect("split yields at least one part");
        let mut cursor = &mut *table;
        for part in parents {
            let entry = cursor
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cursor = entry
                .as_table_mut()
                .ok_or_else(|| field(&path.join("."), format!("`{part}` is not a table")))?;
        }
        cursor.insert(last.to_string(), value);
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
