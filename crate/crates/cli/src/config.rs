use std::path::Path;

use anyhow::{bail, Context, Result};
use qoe_lens::features::FeatureMode;
use qoe_lens::model::{Grid, Hyperparams, Target};
use qoe_lens::pipeline::PipelineConfig;
use qoe_lens::synth::SynthCalibration;
use serde::{Deserialize, Serialize};

/// Effective run configuration. Built from defaults, then the `--config`
/// file, then command-line flags.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub slot_seconds: f64,
    pub threshold: u32,
    pub mode: FeatureMode,
    pub target: Target,
    pub folds: usize,
    /// Used by `train`.
    pub hyperparams: Hyperparams,
    /// Used by `pipeline`.
    pub grid: Grid,
    pub calibration: SynthCalibration,
}

impl Default for AppConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        AppConfig {
            seed: p.seed,
            slot_seconds: p.slot_seconds,
            threshold: p.threshold,
            mode: FeatureMode::Udp,
            target: Target::Fps,
            folds: p.folds,
            hyperparams: Hyperparams::default(),
            grid: p.grid,
            calibration: SynthCalibration::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub slot_seconds: Option<f64>,
    pub threshold: Option<u32>,
    pub mode: Option<FeatureMode>,
    pub target: Option<Target>,
}

impl AppConfig {
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<AppConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => AppConfig::default(),
        };
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = flags.slot_seconds {
            cfg.slot_seconds = v;
        }
        if let Some(v) = flags.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = flags.mode {
            cfg.mode = v;
        }
        if let Some(v) = flags.target {
            cfg.target = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.slot_seconds.is_finite() && self.slot_seconds > 0.0) {
            bail!("slot_seconds must be a positive number, got {}", self.slot_seconds);
        }
        self.pipeline().validate()?;
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            slot_seconds: self.slot_seconds,
            threshold: self.threshold,
            folds: self.folds,
            seed: self.seed,
            grid: self.grid.clone(),
            ..PipelineConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 5, "threshold": 300, "mode": "rtp"}"#).unwrap();
        let flags = Overrides {
            seed: Some(9),
            ..Overrides::default()
        };
        let cfg = AppConfig::load(Some(&path), &flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.threshold, 300);
        assert_eq!(cfg.mode, FeatureMode::Rtp);
        assert_eq!(cfg.slot_seconds, 1.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sed": 5}"#).unwrap();
        assert!(AppConfig::load(Some(&path), &Overrides::default()).is_err());
        let flags = Overrides {
            slot_seconds: Some(0.0),
            ..Overrides::default()
        };
        assert!(AppConfig::load(None, &flags).is_err());
    }
}
