//! TOML run configuration: every section optional, unknown keys rejected.

use serde::Deserialize;
use svs_core::corpus::CorpusConfig;
use svs_core::error::{Result, SvsError};
use svs_core::models::baseline::BaselineConfig;
use svs_core::models::f0_dar::F0ModelConfig;
use svs_core::models::spectral_dar::SpectralModelConfig;
use std::path::Path;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub f0: F0ModelConfig,
    pub spectral: SpectralModelConfig,
    pub baseline: BaselineConfig,
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Overrides the per-model default learning rate when set.
    pub base_lr: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 10,
            batch_size: 4,
            seed: 7,
            base_lr: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                toml::from_str(&text)
                    .map_err(|e| SvsError::Data(format!("{}: {e}", p.display())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c.corpus.n_songs, 25);
        assert_eq!(c.f0.history_len, 2);
        assert_eq!(c.spectral.prenet.attn_layers, 3);
        assert_eq!(c.baseline.n_layers, 3);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c: RunConfig = toml::from_str(
            "[corpus]\nn_songs = 5\n\n[f0]\nhistory_len = 3\n\n[train]\nepochs = 2\n",
        )
        .unwrap();
        assert_eq!(c.corpus.n_songs, 5);
        assert_eq!(c.corpus.utts_per_song, 6);
        assert_eq!(c.f0.history_len, 3);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.batch_size, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[corpus]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<RunConfig>("nonsense = true\n").is_err());
    }
}
