//! Run configuration: the experiment settings plus an optional plant file.

use std::fs;
use std::path::{Path, PathBuf};

use clqr_core::benchmarks::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::app::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    /// Master seed; overrides the graph and noise seeds above.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Plant JSON; the consensus generator is used when absent. Relative
    /// paths are resolved against the config file's directory.
    pub model: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))?;
        if let Some(seed) = cfg.seed.take() {
            cfg.experiment = cfg.experiment.with_seed(seed);
        }
        if let Some(model) = &cfg.model {
            if model.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                cfg.model = Some(base.join(model));
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"kappa": 0.5, "sampling": {"dt": 0.02, "intervals": 10, "substeps": 4}}"#,
        )
        .unwrap();
        assert_eq!(cfg.experiment.kappa, 0.5);
        assert_eq!(cfg.experiment.sampling.intervals, 10);
        assert_eq!(cfg.experiment.consensus.area_sizes, vec![30, 120]);
        assert!(cfg.model.is_none());
    }

    #[test]
    fn master_seed_derives_both_streams() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"seed": 26}"#).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.experiment, ExperimentConfig::seeded(26));
        assert!(cfg.seed.is_none());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.experiment.kappa = 0.02;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn round_trips_through_json() {
        let a = RunConfig {
            model: Some("plant.json".into()),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&a).unwrap();
        let b: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(a, b);
    }
}
