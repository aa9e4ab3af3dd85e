//! Experiment configuration.
//!
//! A TOML file where every key is optional; missing keys take the defaults
//! below (the shipped desk-scale scenario). Unknown keys are rejected.
//! Command-line overrides use dotted paths (`phase2.lambda=0.25`) and are
//! applied before validation.
//!
//! All random streams derive from the master `seed`; see [`crate::seed`].

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::data::PartitionSpec;
use crate::ecl::{Phase2Config, ScalingScheme};
use crate::error::{Error, Result};
use crate::eval::BaselineConfig;
use crate::fed::FedConfig;
use crate::nncore::ArchSpec;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DataSource,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Synthetic samples per class before long-tail shaping.
    pub per_class: usize,
    /// Standard deviation of the synthetic class clusters.
    pub spread: f64,
    pub imbalance_factor: f64,
    /// Synthetic balanced test pool size per class.
    pub test_pool_per_class: usize,
    /// Size of each client's distribution-matched test set.
    pub client_test_size: usize,
    pub train_csv: Option<PathBuf>,
    pub test_csv: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            source: DataSource::Synthetic,
            num_classes: 10,
            input_dim: 32,
            per_class: 500,
            spread: 0.5,
            imbalance_factor: 100.0,
            test_pool_per_class: 250,
            client_test_size: 200,
            train_csv: None,
            test_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub num_clients: usize,
    pub alpha: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        PartitionSection {
            num_clients: 10,
            alpha: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub block_widths: Vec<usize>,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            block_widths: vec![128, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase1Section {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub lr: f64,
    /// Defaults to `round(0.4 · rounds)`.
    pub lr_milestone_round: Option<usize>,
    pub lr_after_milestone: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for Phase1Section {
    fn default() -> Self {
        Phase1Section {
            rounds: 100,
            clients_per_round: 8,
            local_epochs: 2,
            lr: 0.1,
            lr_milestone_round: None,
            lr_after_milestone: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Section {
    pub num_experts: usize,
    pub lambda: f64,
    pub scaling: ScalingScheme,
    pub classifier_epochs: usize,
    pub expert_epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub reinit_expert_classifier: bool,
}

impl Default for Phase2Section {
    fn default() -> Self {
        Phase2Section {
            num_experts: 2,
            lambda: 0.5,
            scaling: ScalingScheme::EclScaling,
            classifier_epochs: 30,
            expert_epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            reinit_expert_classifier: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesSection {
    pub local: bool,
    pub fedavg_ft: bool,
    pub local_epochs: usize,
    pub local_lr: f64,
    /// Defaults to `phase2.expert_epochs`.
    pub fedavg_ft_epochs: Option<usize>,
    /// Defaults to `phase2.lr`.
    pub fedavg_ft_lr: Option<f64>,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        BaselinesSection {
            local: true,
            fedavg_ft: true,
            local_epochs: 60,
            local_lr: 0.05,
            fedavg_ft_epochs: None,
            fedavg_ft_lr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Extra ECL evaluations at these λ values (no retraining).
    pub lambda_sweep: Vec<f64>,
    /// Extra ECL evaluations under these scaling schemes.
    pub scaling_sweep: Vec<ScalingScheme>,
    /// Also evaluate every method on each client's distribution-matched
    /// test set, reported as `<method>/matched`.
    pub matched: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            lambda_sweep: Vec::new(),
            scaling_sweep: Vec::new(),
            matched: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub partition: PartitionSection,
    pub arch: ArchSection,
    pub phase1: Phase1Section,
    pub phase2: Phase2Section,
    pub baselines: BaselinesSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

fn check(cond: bool, key: &str, message: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `path` (dotted) in `table` to `value`, creating tables as needed.
fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::config(path, "empty key"))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses TOML text and applies `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string().trim_end().to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.as_str(), "override must look like key=value"))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<root>".to_string() } else { path };
            Error::config(key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `None` means all defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config(p.display().to_string(), format!("cannot read config file: {e}")))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        check(d.num_classes >= 1, "dataset.num_classes", "must be >= 1")?;
        check(d.input_dim >= 1, "dataset.input_dim", "must be >= 1")?;
        check(d.per_class >= 1, "dataset.per_class", "must be >= 1")?;
        check(
            d.spread >= 0.0 && d.spread.is_finite(),
            "dataset.spread",
            "must be finite and >= 0",
        )?;
        check(
            d.imbalance_factor >= 1.0 && d.imbalance_factor.is_finite(),
            "dataset.imbalance_factor",
            "must be finite and >= 1",
        )?;
        check(d.client_test_size >= 1, "dataset.client_test_size", "must be >= 1")?;
        check(
            d.test_pool_per_class >= 1,
            "dataset.test_pool_per_class",
            "must be >= 1",
        )?;
        if d.source == DataSource::Csv {
            check(
                d.train_csv.is_some(),
                "dataset.train_csv",
                "required when source = \"csv\"",
            )?;
            check(
                d.test_csv.is_some(),
                "dataset.test_csv",
                "required when source = \"csv\"",
            )?;
        }

        let p = &self.partition;
        check(p.num_clients >= 1, "partition.num_clients", "must be >= 1")?;
        check(
            p.alpha > 0.0 && p.alpha.is_finite(),
            "partition.alpha",
            "must be finite and > 0",
        )?;

        check(
            !self.arch.block_widths.is_empty(),
            "arch.block_widths",
            "must be non-empty",
        )?;
        check(
            !self.arch.block_widths.contains(&0),
            "arch.block_widths",
            "widths must be >= 1",
        )?;

        let f = &self.phase1;
        check(
            (1..=p.num_clients).contains(&f.clients_per_round),
            "phase1.clients_per_round",
            format!("must lie in [1, partition.num_clients = {}]", p.num_clients),
        )?;
        check(
            self.milestone() <= f.rounds,
            "phase1.lr_milestone_round",
            format!("must be <= phase1.rounds = {}", f.rounds),
        )?;
        check(f.lr >= 0.0 && f.lr.is_finite(), "phase1.lr", "must be finite and >= 0")?;
        check(
            f.lr_after_milestone >= 0.0 && f.lr_after_milestone.is_finite(),
            "phase1.lr_after_milestone",
            "must be finite and >= 0",
        )?;
        check(
            (0.0..1.0).contains(&f.momentum),
            "phase1.momentum",
            "must lie in [0, 1)",
        )?;
        check(f.weight_decay >= 0.0, "phase1.weight_decay", "must be >= 0")?;
        check(f.batch_size >= 1, "phase1.batch_size", "must be >= 1")?;

        let e = &self.phase2;
        check(e.num_experts >= 1, "phase2.num_experts", "must be >= 1")?;
        check(
            (0.0..=1.0).contains(&e.lambda),
            "phase2.lambda",
            format!("{} is outside [0, 1]", e.lambda),
        )?;
        check(e.lr >= 0.0 && e.lr.is_finite(), "phase2.lr", "must be finite and >= 0")?;
        check(
            (0.0..1.0).contains(&e.momentum),
            "phase2.momentum",
            "must lie in [0, 1)",
        )?;
        check(e.weight_decay >= 0.0, "phase2.weight_decay", "must be >= 0")?;
        check(e.batch_size >= 1, "phase2.batch_size", "must be >= 1")?;

        let b = &self.baselines;
        check(
            b.local_lr >= 0.0 && b.local_lr.is_finite(),
            "baselines.local_lr",
            "must be finite and >= 0",
        )?;
        if let Some(lr) = b.fedavg_ft_lr {
            check(
                lr >= 0.0 && lr.is_finite(),
                "baselines.fedavg_ft_lr",
                "must be finite and >= 0",
            )?;
        }

        for (i, l) in self.eval.lambda_sweep.iter().enumerate() {
            check(
                (0.0..=1.0).contains(l),
                &format!("eval.lambda_sweep[{i}]"),
                format!("{l} is outside [0, 1]"),
            )?;
        }
        Ok(())
    }

    pub fn milestone(&self) -> usize {
        self.phase1
            .lr_milestone_round
            .unwrap_or_else(|| (0.4 * self.phase1.rounds as f64).round() as usize)
    }

    pub fn sub_seed(&self, role: &str, index: u64) -> u64 {
        derive_seed(self.seed, role, index)
    }

    pub fn arch_spec(&self) -> ArchSpec {
        ArchSpec {
            input_dim: self.dataset.input_dim,
            block_widths: self.arch.block_widths.clone(),
            num_classes: self.dataset.num_classes,
            init_seed: self.sub_seed("init-global", 0),
        }
    }

    pub fn partition_spec(&self) -> PartitionSpec {
        PartitionSpec {
            num_clients: self.partition.num_clients,
            alpha: self.partition.alpha,
            seed: self.sub_seed("partition", 0),
        }
    }

    pub fn fed_config(&self) -> FedConfig {
        let f = &self.phase1;
        FedConfig {
            rounds: f.rounds,
            clients_total: self.partition.num_clients,
            clients_per_round: f.clients_per_round,
            local_epochs: f.local_epochs,
            lr: f.lr,
            lr_milestone_round: self.milestone(),
            lr_after_milestone: f.lr_after_milestone,
            momentum: f.momentum,
            weight_decay: f.weight_decay,
            batch_size: f.batch_size,
            seed: self.sub_seed("phase1", 0),
        }
    }

    pub fn phase2_config(&self) -> Phase2Config {
        let e = &self.phase2;
        Phase2Config {
            num_experts: e.num_experts,
            lambda: e.lambda,
            scaling: e.scaling,
            classifier_epochs: e.classifier_epochs,
            expert_epochs: e.expert_epochs,
            lr: e.lr,
            momentum: e.momentum,
            weight_decay: e.weight_decay,
            batch_size: e.batch_size,
            reinit_expert_classifier: e.reinit_expert_classifier,
            seed: self.sub_seed("phase2", 0),
        }
    }

    pub fn local_baseline(&self) -> BaselineConfig {
        BaselineConfig {
            epochs: self.baselines.local_epochs,
            lr: self.baselines.local_lr,
            momentum: self.phase2.momentum,
            weight_decay: self.phase2.weight_decay,
            batch_size: self.phase2.batch_size,
            seed: self.sub_seed("baseline-local", 0),
        }
    }

    pub fn fedavg_ft_baseline(&self) -> BaselineConfig {
        BaselineConfig {
            epochs: self.baselines.fedavg_ft_epochs.unwrap_or(self.phase2.expert_epochs),
            lr: self.baselines.fedavg_ft_lr.unwrap_or(self.phase2.lr),
            momentum: self.phase2.momentum,
            weight_decay: self.phase2.weight_decay,
            batch_size: self.phase2.batch_size,
            seed: self.sub_seed("baseline-fedavg-ft", 0),
        }
    }
}
