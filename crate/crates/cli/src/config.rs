//! TOML run configuration, command-line overrides and config hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use graphcnnpred::backtest::CeqParams;
use graphcnnpred::dataprep::{LabelScheme, PanelMode, SplitSpec};
use graphcnnpred::dataset::PrepareOptions;
use graphcnnpred::model::{HeadKind, PoolKind, Preset};
use graphcnnpred::trainer::{ExperimentPlan, TrainConfig};
use graphcnnpred::Market;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const DATA_DIR_ENV: &str = "GRAPHCNNPRED_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the five market files.
    pub dir: Option<PathBuf>,
    /// Per-market file overrides keyed by index code, e.g. `NASDAQ`.
    pub files: BTreeMap<String, PathBuf>,
    /// `combined` or `single:<CODE>`.
    pub mode: String,
    /// `65-15-20` or `42-8-50`.
    pub split: String,
    pub window: usize,
    pub horizon: usize,
    pub tau: f64,
    pub signed_threshold: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: None,
            files: BTreeMap::new(),
            mode: "combined".into(),
            split: "65-15-20".into(),
            window: 60,
            horizon: 1,
            tau: 0.7,
            signed_threshold: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub presets: Vec<String>,
    /// `01` or `012`.
    pub labeling: String,
    /// Optional; must agree with `labeling` when given.
    pub head: Option<String>,
    pub pool: String,
    /// Replaces every conv kernel length.
    pub conv_kernel: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            presets: Preset::ALL.iter().map(|p| p.name().to_string()).collect(),
            labeling: "012".into(),
            head: None,
            pool: "max".into(),
            conv_kernel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub run: RunSection,
    pub backtest: CeqParams,
}

/// Flags that override config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub presets: Option<Vec<String>>,
    pub split: Option<String>,
    pub labeling: Option<String>,
    pub tau: Option<f64>,
}

/// A validated configuration with every field parsed.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub files: [PathBuf; 5],
    pub prepare: PrepareOptions,
    pub presets: Vec<Preset>,
    pub labeling: LabelScheme,
    pub head: HeadKind,
    pub pool: PoolKind,
    pub conv_kernel: Option<usize>,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub ceq: CeqParams,
}

fn cfg_err(field: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {e}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
        if let Some(v) = &o.seeds {
            self.run.seeds = v.clone();
        }
        if let Some(v) = &o.presets {
            self.model.presets = v.clone();
        }
        if let Some(v) = &o.split {
            self.data.split = v.clone();
        }
        if let Some(v) = &o.labeling {
            self.model.labeling = v.clone();
        }
        if let Some(v) = o.tau {
            self.data.tau = v;
        }
    }

    /// Parse and cross-check every field. Data directory precedence: config,
    /// then the environment variable, then `./data`.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let d = &self.data;
        let mode: PanelMode = d.mode.parse().map_err(|e| cfg_err("data.mode", e))?;
        let split: SplitSpec = d.split.parse().map_err(|e| cfg_err("data.split", e))?;
        if !(d.tau > 0.0 && d.tau <= 1.0) {
            return Err(cfg_err("data.tau", format!("must lie in (0, 1], got {}", d.tau)));
        }
        if d.window < 2 {
            return Err(cfg_err("data.window", "must be at least 2"));
        }
        if !(1..=graphcnnpred::dataprep::MAX_HORIZON).contains(&d.horizon) {
            return Err(cfg_err("data.horizon", "must lie in 1..=10"));
        }
        for code in d.files.keys() {
            code.parse::<Market>().map_err(|e| cfg_err("data.files", e))?;
        }
        let dir = d
            .dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"));
        let files = Market::ALL.map(|m| {
            d.files
                .get(m.code())
                .cloned()
                .unwrap_or_else(|| dir.join(m.default_file()))
        });

        let m = &self.model;
        if m.presets.is_empty() {
            return Err(cfg_err("model.presets", "at least one preset is required"));
        }
        let mut presets = Vec::new();
        for p in &m.presets {
            let p: Preset = p.parse().map_err(|e| cfg_err("model.presets", e))?;
            if !presets.contains(&p) {
                presets.push(p);
            }
        }
        let labeling: LabelScheme = m.labeling.parse().map_err(|e| cfg_err("model.labeling", e))?;
        let head = HeadKind::for_labels(labeling);
        if let Some(h) = &m.head {
            let given = match h.as_str() {
                "binary5" => HeadKind::Binary5,
                "ternary15" => HeadKind::Ternary15,
                other => return Err(cfg_err("model.head", format!("unknown head `{other}`"))),
            };
            if given != head {
                return Err(cfg_err(
                    "model.head",
                    format!("{h} does not match labeling {}", m.labeling),
                ));
            }
        }
        let pool: PoolKind = m.pool.parse().map_err(|e| cfg_err("model.pool", e))?;
        if m.conv_kernel == Some(0) {
            return Err(cfg_err("model.conv_kernel", "must be positive"));
        }
        self.train.validate().map_err(|e| cfg_err("train", e))?;
        if self.run.seeds.is_empty() {
            return Err(cfg_err("run.seeds", "at least one seed is required"));
        }
        if !(self.backtest.gamma >= 0.0 && self.backtest.gamma.is_finite()) {
            return Err(cfg_err("backtest.gamma", "must be non-negative"));
        }
        Ok(Resolved {
            files,
            prepare: PrepareOptions {
                mode,
                split,
                window: d.window,
                horizon: d.horizon,
                tau: d.tau,
                signed_threshold: d.signed_threshold,
            },
            presets,
            labeling,
            head,
            pool,
            conv_kernel: m.conv_kernel,
            train: self.train.clone(),
            seeds: self.run.seeds.clone(),
            out: self.run.out.clone(),
            ceq: self.backtest,
        })
    }
}

fn sha256_json(value: &serde_json::Value) -> [u8; 32] {
    let text = serde_json::to_string(value).expect("json values serialise");
    Sha256::digest(text.as_bytes()).into()
}

pub fn hex(hash: &[u8; 32]) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

impl Resolved {
    /// SHA-256 of the canonical JSON of every input to `prepare`.
    pub fn prepare_hash(&self) -> [u8; 32] {
        let p = &self.prepare;
        sha256_json(&serde_json::json!({
            "files": self.files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
            "mode": p.mode.to_string(),
            "split": p.split.to_string(),
            "window": p.window,
            "horizon": p.horizon,
            "tau": p.tau,
            "signed_threshold": p.signed_threshold,
        }))
    }

    /// Hash stamped into a weight file: the dataset plus everything that
    /// shapes and trains the network.
    pub fn weights_hash(&self, dataset_hash: &[u8; 32], preset: Preset, seed: u64) -> [u8; 32] {
        sha256_json(&serde_json::json!({
            "dataset": hex(dataset_hash),
            "preset": preset.name(),
            "head": self.head,
            "pool": self.pool.name(),
            "conv_kernel": self.conv_kernel,
            "train": self.train,
            "seed": seed,
        }))
    }

    pub fn plan(&self) -> ExperimentPlan {
        ExperimentPlan {
            presets: self.presets.clone(),
            seeds: self.seeds.clone(),
            pool: self.pool,
            head: self.head,
            train: self.train.clone(),
            conv_kernel: self.conv_kernel,
        }
    }
}
