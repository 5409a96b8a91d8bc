//! Flat application config: every sub-config's fields share one namespace.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::MelConfig;
use crate::engine::TrainingConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::ModelConfig;

/// Dataset locations and split convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// `<data_root>/<speaker>/<utterance>.wav`
    pub data_root: PathBuf,
    /// All artifacts land below this directory.
    pub work_dir: PathBuf,
    /// Explicit checkpoint for `convert`/`evaluate`/`--resume`; empty means
    /// `<work_dir>/checkpoints/latest.safetensors`.
    pub checkpoint_path: PathBuf,
    pub eval_count_per_speaker: usize,
    pub pad_policy: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            data_root: PathBuf::from("data"),
            work_dir: PathBuf::from("work"),
            checkpoint_path: PathBuf::new(),
            eval_count_per_speaker: 35,
            pad_policy: "reflect".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    #[serde(flatten)]
    pub data: DataConfig,
    #[serde(flatten)]
    pub mel: MelConfig,
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub training: TrainingConfig,
    #[serde(flatten)]
    pub eval: EvalConfig,
}

impl AppConfig {
    /// Every key a config document may contain.
    pub fn known_keys() -> BTreeSet<String> {
        match serde_json::to_value(Self::default()) {
            Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
            _ => BTreeSet::new(),
        }
    }

    /// Parses a TOML document, rejecting keys no sub-config owns.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid TOML: {e}")))?;
        let known = Self::known_keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {unknown:?}")));
        }
        let config: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("bad config value: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        self.training.validate()?;
        self.eval.validate()?;
        crate::audio::pad_policies().create(&self.data.pad_policy)?;
        crate::model::conditioning::conditionings().create(&self.model.conditioning)?;
        Ok(())
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.data.work_dir.join("checkpoints")
    }

    pub fn checkpoint_file(&self) -> PathBuf {
        if self.data.checkpoint_path.as_os_str().is_empty() {
            self.checkpoint_dir().join("latest.safetensors")
        } else {
            self.data.checkpoint_path.clone()
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data.work_dir.join("manifest.jsonl")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.data.work_dir.join("features")
    }

    pub fn training_log_path(&self) -> PathBuf {
        self.data.work_dir.join("train_log.jsonl")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = AppConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(AppConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn keys_are_flat_and_unique() {
        let keys = AppConfig::known_keys();
        for k in ["sample_rate", "w_cycle", "adam_beta2", "content_dim", "cepstrum_order", "work_dir"] {
            assert!(keys.contains(k), "{k}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = AppConfig::from_toml_str("w_cycle = 1.0\nw_cylce = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("w_cylce"), "{err}");
    }

    #[test]
    fn partial_document_keeps_defaults() {
        let cfg = AppConfig::from_toml_str("batch_size = 4\nn_mels = 40\n").unwrap();
        assert_eq!(cfg.training.batch_size, 4);
        assert_eq!(cfg.mel.n_mels, 40);
        assert_eq!(cfg.training.weights.w_same, 50.0);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(AppConfig::from_toml_str("w_domain = -1.0").is_err());
        assert!(AppConfig::from_toml_str("pad_policy = \"mirror\"").is_err());
        assert!(AppConfig::from_toml_str("batch_size = \"eight\"").is_err());
    }
}
