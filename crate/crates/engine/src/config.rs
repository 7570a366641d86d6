use std::path::Path;

use dragstream_core::metrics::MetricConfig;
use dragstream_core::model::ModelConfig;
use dragstream_core::optim::OptimConfig;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// Noise seeding. Cutoff draws use `optim.rng_seed`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSeeds {
    /// Base seed for per-frame initial noise.
    pub noise: u64,
}

impl Default for SessionSeeds {
    fn default() -> Self {
        Self { noise: 1 }
    }
}

/// Everything a session needs; the whole file is optional field by field.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub metrics: MetricConfig,
    pub seeds: SessionSeeds,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate(&self.model)?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Seed that pins the initial noise of frame `k`.
    pub fn noise_seed(&self, k: usize) -> u64 {
        self.seeds
            .noise
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(k as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(EngineConfig::from_toml("").unwrap(), EngineConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = EngineConfig::default();
        cfg.model.seed = 42;
        cfg.optim.adsr = false;
        assert_eq!(EngineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn field_level_errors() {
        let err = EngineConfig::from_toml("[optim]\nlr = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("lr"), "{err}");
        let err = EngineConfig::from_toml("[model]\nheads = 5\n").unwrap_err();
        assert!(err.to_string().contains("heads"), "{err}");
        assert!(EngineConfig::from_toml("[model]\nbogus = 1\n").is_err());
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let text = include_str!("../../../engine.toml");
        assert_eq!(EngineConfig::from_toml(text).unwrap(), EngineConfig::default());
    }
}
