//! The single JSON configuration file shared by every subcommand.
//!
//! Sections: `model`, `train`, `infer`, `synth`, `ablate`, plus a top-level
//! `seed`. Missing keys take their defaults and unknown keys are rejected.
//! The top-level seed (or `CRS_SEED` when set) replaces the `train.seed` and
//! `synth.seed` fields.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ablation::AblationConfig;
use crate::decoder::ModelConfig;
use crate::error::{Error, Result};
use crate::segmenter::InferenceConfig;
use crate::synth::SynthSpec;
use crate::trainer::TrainConfig;

pub const SEED_ENV: &str = "CRS_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub infer: InferenceConfig,
    pub synth: SynthSpec,
    pub ablate: AblationConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    /// Replaces the seed from `CRS_SEED` if set, then propagates it.
    pub fn resolve(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        self.apply_seed(self.seed);
        self.validate()?;
        Ok(self)
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| e.context("model"))?;
        self.train.validate().map_err(|e| e.context("train"))?;
        self.synth.validate().map_err(|e| e.context("synth"))?;
        self.ablate.validate().map_err(|e| e.context("ablate"))?;
        if !(0.0..=1.0).contains(&self.infer.binarize_threshold) {
            return Err(Error::Config("infer.binarize_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Every configuration key as a dotted path with its default value.
pub fn config_keys() -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, child, out);
                }
            }
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let v = serde_json::to_value(Config::default()).expect("configuration serializes");
    let mut out = Vec::new();
    walk("", &v, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let err = Config::from_json("{\n\"model\": {\"levls\": 3}\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn json_round_trip() {
        let mut c = Config::default();
        c.model.hidden_width = 4;
        c.apply_seed(9);
        assert_eq!(Config::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn keys_cover_every_section() {
        let keys = config_keys();
        for k in [
            "seed",
            "model.consistency_mode",
            "train.learning_rate",
            "infer.z_overlap",
            "synth.shape",
            "ablate.modes",
        ] {
            assert!(keys.iter().any(|(name, _)| name == k), "{k}");
        }
    }
}
