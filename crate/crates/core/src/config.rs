//! Run configuration, read from JSON with unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::CcThresholds;
use crate::datagen::DatasetSpec;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Fixed cluster count, loss-based identity, full-batch least squares.
    CSysid,
    /// Incremental clustering with mini-batched Adam.
    IcSysid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clustering {
    Cc,
    #[default]
    Ecc,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Glorot bound shrunk by 0.1.
    #[default]
    GlorotScaled,
    /// Unscaled Glorot bound.
    Glorot,
    /// Perturbed ground truth (requires known generating systems).
    Warm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generate in-process.
    Spec(DatasetSpec),
    /// Load an exported dataset directory.
    Path(PathBuf),
}

fn default_eta() -> f64 {
    0.25
}
fn default_rounds() -> usize {
    1000
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub method: Method,
    #[serde(default)]
    pub clustering: Clustering,
    #[serde(default)]
    pub apply_cm: bool,
    /// Initial cluster count; forced to 1 for the incremental method.
    #[serde(default = "one")]
    pub k_init: usize,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default = "default_eta")]
    pub warm_eta: f64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub thresholds: CcThresholds,
    #[serde(default)]
    pub train: TrainConfig,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Incremental method with enhanced ClusterCraft on the synthetic benchmark.
    pub fn ic_sysid(dataset: DatasetSpec) -> Self {
        Self {
            name: None,
            method: Method::IcSysid,
            clustering: Clustering::Ecc,
            apply_cm: false,
            k_init: 1,
            init: InitScheme::GlorotScaled,
            warm_eta: default_eta(),
            max_rounds: default_rounds(),
            repetitions: 1,
            thresholds: CcThresholds::default(),
            train: TrainConfig::default(),
            dataset: DatasetSource::Spec(dataset),
            master_seed: 0,
            output_dir: None,
        }
    }

    /// Baseline with `k` clusters.
    pub fn c_sysid(dataset: DatasetSpec, k: usize, init: InitScheme) -> Self {
        Self {
            method: Method::CSysid,
            clustering: Clustering::None,
            k_init: k,
            init,
            ..Self::ic_sysid(dataset)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        // relative dataset paths are relative to the config file
        if let DatasetSource::Path(p) = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Cluster count at round 0.
    pub fn initial_clusters(&self) -> usize {
        match self.method {
            Method::IcSysid => 1,
            Method::CSysid => self.k_init,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.method == Method::CSysid && self.k_init == 0 {
            return bad("k_init must be at least 1".into());
        }
        if self.init == InitScheme::Warm && !(self.warm_eta > 0.0 && self.warm_eta < 0.5) {
            return bad(format!("warm_eta must lie in (0, 1/2), got {}", self.warm_eta));
        }
        self.thresholds.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"method": "ic_sysid", "dataset": {"path": "x"}, "bogus": 1}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))));
        let nested = r#"{"method": "ic_sysid", "dataset": {"path": "x"}, "train": {"lr": 1}}"#;
        assert!(RunConfig::from_json(nested).is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_json(r#"{"method": "ic_sysid", "dataset": {"path": "d"}}"#).unwrap();
        assert_eq!(cfg.clustering, Clustering::Ecc);
        assert_eq!(cfg.max_rounds, 1000);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.thresholds.poor_fit, 0.5);
        assert_eq!(cfg.initial_clusters(), 1);
    }

    #[test]
    fn incremental_method_always_starts_with_one_cluster() {
        let mut cfg = RunConfig::ic_sysid(DatasetSpec::benchmark_default());
        cfg.k_init = 7;
        assert_eq!(cfg.initial_clusters(), 1);
        let cfg = RunConfig::c_sysid(DatasetSpec::benchmark_default(), 5, InitScheme::Warm);
        assert_eq!(cfg.initial_clusters(), 5);
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::c_sysid(DatasetSpec::benchmark_default(), 5, InitScheme::Glorot);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn invalid_values() {
        let mut cfg = RunConfig::ic_sysid(DatasetSpec::benchmark_default());
        cfg.max_rounds = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::c_sysid(DatasetSpec::benchmark_default(), 5, InitScheme::Warm);
        cfg.warm_eta = 0.5;
        assert!(cfg.validate().is_err());
    }
}
