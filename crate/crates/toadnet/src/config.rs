//! Run configuration: one TOML file covering dataset location, synthetic
//! generation, augmentation, backbone, and training. Everything is
//! validated up front and unknown keys are rejected, so a typo fails the
//! run before any work starts.

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::BackboneConfig;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub toad: usize,
    pub not_toad: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { toad: 66, not_toad: 669, seed: 1, height: 720, width: 1280 }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.toad == 0 || self.not_toad == 0 {
            return Err(Error::Config(format!(
                "both classes required: toad = {}, not_toad = {}",
                self.toad, self.not_toad
            )));
        }
        if self.height < 32 || self.width < 32 {
            return Err(Error::Config(format!(
                "scene shape {}x{} is smaller than one model cell",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset root; `synth` writes here, `train`/`eval` read from here.
    pub dataset: PathBuf,
    /// Run artifacts: checkpoints, history, reports.
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data/synth"),
            out_dir: PathBuf::from("runs/default"),
            synth: SynthConfig::default(),
            augment: AugmentConfig::default(),
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(Error::Config("dataset path must not be empty".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must not be empty".into()));
        }
        self.synth.validate()?;
        self.augment.validate()?;
        self.backbone.validate()?;
        self.train.validate()
    }
}

/// Parse and validate a TOML run configuration.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_yields_the_defaults() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.synth.toad, 66);
        assert_eq!(cfg.synth.not_toad, 669);
        assert_eq!(cfg.train.initial_lr, 1e-4);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.augment.crop1, 720);
        assert_eq!(cfg.augment.crop2, 704);
    }

    #[test]
    fn partial_tables_override_only_their_fields() {
        let cfg: RunConfig = toml::from_str(
            "dataset = \"data/x\"\n[train]\ninitial_lr = 0.01\n[train.loss]\nkind = \"weighted_bce\"\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset, PathBuf::from("data/x"));
        assert_eq!(cfg.train.initial_lr, 0.01);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.loss.kind, crate::losses::LossKind::WeightedBce);
        assert_eq!(cfg.train.loss.positive_weight, 100.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nbogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[augment]\ncrop3 = 2").is_err());
    }

    #[test]
    fn toml_roundtrip_preserves_the_config() {
        let mut cfg = RunConfig::default();
        cfg.train.split_seed = 99;
        cfg.augment.crop2 = 160;
        cfg.augment.crop1 = 192;
        cfg.backbone.channels = vec![8, 16, 24, 32, 48];
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.synth.toad = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.augment.crop2 = 100;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.train.plateau_patience = 40;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.backbone.channels = vec![1, 2];
        assert!(cfg.validate().is_err());

        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn file_loading_validates_and_reports_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[synth]\nseed = 9\n").unwrap();
        let cfg = load_run_config(&path).unwrap();
        assert_eq!(cfg.synth.seed, 9);

        std::fs::write(&path, "[synth]\ntoad = 0\n").unwrap();
        let err = load_run_config(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("both classes required"));

        let missing = load_run_config(&dir.path().join("nope.toml")).unwrap_err();
        assert_eq!(missing.exit_code(), 2);
    }
}
