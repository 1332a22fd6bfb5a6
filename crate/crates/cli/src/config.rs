//! Experiment configuration: one TOML file plus `--set key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use fgssl_core::augment::{AugmentConfig, AugmentPair};
use fgssl_core::diffcore::SgdConfig;
use fgssl_core::federation::{Method, TrainConfig};
use fgssl_core::graph::SbmSpec;
use fgssl_core::losses::{FgsdConfig, FnscConfig, KeySource};
use serde::{Deserialize, Serialize};

/// A problem with the configuration; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub loss: LossSection,
    #[serde(default)]
    pub prox: ProxSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub cka: CkaSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// Exactly one of `path` or `sbm`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: Option<PathBuf>,
    pub sbm: Option<SbmSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Keep `masks.tsv` from the dataset directory instead of re-splitting.
    pub use_dataset_masks: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.6, 0.2, 0.2],
            seed: 0,
            use_dataset_masks: false,
        }
    }
}

/// Louvain (`clients`, `seed`) or a partition file, not both.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    /// Client count for Louvain partitioning; 5 when unset.
    pub clients: Option<usize>,
    pub seed: u64,
    /// Read `partition.tsv` instead of running Louvain.
    pub file: Option<PathBuf>,
}

impl PartitionConfig {
    pub const DEFAULT_CLIENTS: usize = 5;

    pub fn clients(&self) -> usize {
        self.clients.unwrap_or(Self::DEFAULT_CLIENTS)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub methods: Vec<Method>,
    pub rounds: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub reset_velocity: bool,
    pub precision: Precision,
    pub save_client_checkpoints: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            methods: vec![Method::Fgssl],
            rounds: t.rounds,
            epochs: t.epochs,
            steps_per_epoch: t.steps_per_epoch,
            lr: t.sgd.lr,
            momentum: t.sgd.momentum,
            weight_decay: t.sgd.weight_decay,
            reset_velocity: t.reset_velocity,
            precision: Precision::F64,
            save_client_checkpoints: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub heads: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden: 128, heads: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub tau: f64,
    pub omega: f64,
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub key_source: KeySource,
}

impl Default for LossSection {
    fn default() -> Self {
        let (c, d) = (FnscConfig::default(), FgsdConfig::default());
        Self {
            tau: c.tau,
            omega: d.omega,
            lambda_c: c.lambda,
            lambda_d: d.lambda,
            key_source: c.key_source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxSection {
    pub mu: f64,
}

impl Default for ProxSection {
    fn default() -> Self {
        Self {
            mu: TrainConfig::default().prox_mu,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViewSection {
    pub edge: Option<f64>,
    pub feat: Option<f64>,
}

impl ViewSection {
    fn resolve(&self, default: AugmentConfig) -> AugmentConfig {
        AugmentConfig {
            edge: self.edge.unwrap_or(default.edge),
            feat: self.feat.unwrap_or(default.feat),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub weak: ViewSection,
    pub strong: ViewSection,
}

impl AugmentSection {
    pub fn resolve(&self) -> AugmentPair {
        let d = AugmentPair::default();
        AugmentPair {
            strong: self.strong.resolve(d.strong),
            weak: self.weak.resolve(d.weak),
        }
    }
}

/// Value lists for `sweep`; empty lists keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub tau: Vec<f64>,
    pub omega: Vec<f64>,
    pub lambda_c: Vec<f64>,
    pub lambda_d: Vec<f64>,
    pub lr: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CkaSection {
    pub checkpoints: Vec<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a config file and applies `key=value` overrides on top.
    pub fn load(path: &Path, overrides: &[String]) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides)?;
        // relative data paths are resolved against the config file
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            cfg.dataset.path.as_mut().map(fix);
            cfg.partition.file.as_mut().map(fix);
            cfg.cka.checkpoints.iter_mut().for_each(fix);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| bad(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e| bad(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match (&self.dataset.path, &self.dataset.sbm) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(bad("set exactly one of dataset.path and dataset.sbm")),
        }
        if self.seeds.is_empty() {
            return Err(bad("seed list is empty"));
        }
        if self.train.methods.is_empty() {
            return Err(bad("train.methods is empty"));
        }
        if self.partition.file.is_some() && self.partition.clients.is_some() {
            return Err(bad("set at most one of partition.file and partition.clients"));
        }
        if self.partition.clients() == 0 {
            return Err(bad("partition.clients must be at least 1"));
        }
        for m in &self.train.methods {
            self.train_config(*m).validate().map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }

    pub fn train_config(&self, method: Method) -> TrainConfig {
        TrainConfig {
            method,
            rounds: self.train.rounds,
            epochs: self.train.epochs,
            steps_per_epoch: self.train.steps_per_epoch,
            sgd: SgdConfig {
                lr: self.train.lr,
                momentum: self.train.momentum,
                weight_decay: self.train.weight_decay,
            },
            reset_velocity: self.train.reset_velocity,
            hidden: self.model.hidden,
            heads: self.model.heads,
            fnsc: FnscConfig {
                tau: self.loss.tau,
                lambda: self.loss.lambda_c,
                key_source: self.loss.key_source,
            },
            fgsd: FgsdConfig {
                omega: self.loss.omega,
                lambda: self.loss.lambda_d,
            },
            augment: self.augment.resolve(),
            prox_mu: self.prox.mu,
        }
    }
}

/// Parses `FGSSL_SEED`-style seed lists: `3` or `0,1,2`.
pub fn parse_seed_list(s: &str) -> anyhow::Result<Vec<u64>> {
    let seeds = s
        .split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| bad(format!("bad seed {t:?} in {s:?}"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(bad("empty seed list"));
    }
    Ok(seeds)
}

/// Sets `a.b.c = value`, creating intermediate tables. Values are TOML
/// literals; anything that does not parse as one is taken as a string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> anyhow::Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| bad(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| bad(format!("override {key:?}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
