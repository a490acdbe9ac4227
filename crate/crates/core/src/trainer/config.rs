use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Width preset for the acoustic model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelPreset {
    #[default]
    Default,
    Small,
}

impl ModelPreset {
    pub fn build(self, content_dim: usize, sv_dims: &[usize]) -> ModelConfig {
        match self {
            ModelPreset::Default => ModelConfig::for_dims(content_dim, sv_dims),
            ModelPreset::Small => ModelConfig::small(content_dim, sv_dims),
        }
    }
}

/// Flat training configuration; every key is optional in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iters: u64,
    pub weight_decay: f64,
    pub seed: u64,
    pub reference_duration_s: f64,
    pub euler_steps_eval: usize,
    pub lambda_tim: f64,
    /// The timbre loss is switched on after this many iterations.
    pub tim_warmup_iters: u64,
    pub grad_clip: f64,
    /// Random training crop length in mel frames; 0 trains on whole utterances.
    pub crop_frames: usize,
    pub checkpoint_every: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub model: ModelPreset,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            max_iters: 5000,
            weight_decay: 0.01,
            seed: 0,
            reference_duration_s: 4.0,
            euler_steps_eval: 20,
            lambda_tim: 0.05,
            tim_warmup_iters: 0,
            grad_clip: 1.0,
            crop_frames: 0,
            checkpoint_every: 1000,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            model: ModelPreset::Default,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda_tim >= 0.0) {
            return bad("weight_decay and lambda_tim must be >= 0");
        }
        if !(self.reference_duration_s > 0.0) || self.euler_steps_eval == 0 {
            return bad("reference_duration_s and euler_steps_eval must be positive");
        }
        if !(self.grad_clip > 0.0) || self.checkpoint_every == 0 {
            return bad("grad_clip and checkpoint_every must be positive");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and adam_eps must be positive");
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `.json` files are read as JSON, anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.batch_size, c.max_iters, c.weight_decay), (1e-4, 8, 5000, 0.01));
        assert_eq!((c.reference_duration_s, c.euler_steps_eval, c.lambda_tim), (4.0, 20, 0.05));
        c.validate().unwrap();
    }

    #[test]
    fn partial_files_fill_in_defaults() {
        let c = TrainConfig::from_toml_str("max_iters = 3\nmodel = \"small\"\n").unwrap();
        assert_eq!(c.max_iters, 3);
        assert_eq!(c.model, ModelPreset::Small);
        assert_eq!(c.batch_size, 8);
        let j = TrainConfig::from_json_str(r#"{"seed": 9, "lambda_tim": 0.0}"#).unwrap();
        assert_eq!((j.seed, j.lambda_tim), (9, 0.0));
    }

    #[test]
    fn unknown_keys_list_the_valid_ones() {
        for err in [
            TrainConfig::from_toml_str("learning_rat = 1.0").unwrap_err(),
            TrainConfig::from_json_str(r#"{"learning_rat": 1.0}"#).unwrap_err(),
        ] {
            let msg = err.to_string();
            assert!(msg.contains("learning_rat") && msg.contains("learning_rate") && msg.contains("batch_size"), "{msg}");
        }
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(TrainConfig::from_toml_str("batch_size = 0").is_err());
        assert!(TrainConfig::from_toml_str("learning_rate = -1.0").is_err());
        assert!(TrainConfig::from_toml_str("learning_rate = 0.0").is_ok());
    }
}
