//! TOML experiment configuration. Every field has a default, so a minimal
//! file only needs a `[dataset]` table.
//!
//! ```toml
//! seed = 3
//!
//! [dataset]
//! count = 250
//!
//! [model]
//! combine = "sweep"
//!
//! [msi]
//! bg_threshold = 0.3
//!
//! [seg.train]
//! epochs = 30
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{LoadOptions, Normalization, SplitRatios, SynthSpec};
use crate::error::{Error, Result};
use crate::kd::KdTrainConfig;
use crate::models::{BackboneConfig, CombineMode};
use crate::msi::ScaleSet;
use crate::segnet::{SegNetConfig, SegTrainConfig};
use crate::tensor::FlipAxis;

/// The literal string `"sweep"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Sweep,
}

/// A fixed value or `"sweep"` (choose by validation change-IoU).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Setting<T> {
    Fixed(T),
    Sweep(Sweep),
}

impl<T: Copy> Setting<T> {
    pub fn fixed(&self) -> Option<T> {
        match self {
            Setting::Fixed(v) => Some(*v),
            Setting::Sweep(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Directory with `A/`, `B/`, `label/`; synthetic data is generated when absent.
    pub path: Option<PathBuf>,
    pub synthetic: SynthSpec,
    /// Total synthetic pairs before splitting.
    pub count: usize,
    /// Tile side for real scenes; `None` keeps the images whole.
    pub tile: Option<usize>,
    pub split: SplitRatios,
    /// Minimum changed-pixel fraction for an image-level "change" label.
    pub min_change_fraction: f64,
    pub normalization: Normalization,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            synthetic: SynthSpec::default(),
            count: 250,
            tile: None,
            split: SplitRatios::default(),
            min_change_fraction: 0.0,
            normalization: Normalization::UnitRange,
        }
    }
}

impl DatasetConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            normalization: self.normalization,
            min_change_fraction: self.min_change_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub combine: Setting<CombineMode>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            combine: Setting::Fixed(CombineMode::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsiConfig {
    pub scales: Vec<f64>,
    pub flip: bool,
    pub flip_axis: FlipAxis,
    pub bg_threshold: Setting<f64>,
}

impl Default for MsiConfig {
    fn default() -> Self {
        let s = ScaleSet::default();
        MsiConfig {
            scales: s.scales,
            flip: s.flip,
            flip_axis: s.flip_axis,
            bg_threshold: Setting::Fixed(0.3),
        }
    }
}

impl MsiConfig {
    pub fn scale_set(&self) -> ScaleSet {
        ScaleSet {
            scales: self.scales.clone(),
            flip: self.flip,
            flip_axis: self.flip_axis,
        }
    }
}

/// Which segmentation checkpoint the evaluation stage scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegSelect {
    #[default]
    BestVal,
    Final,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub train: SegTrainConfig,
    pub net: SegNetConfig,
    pub select: SegSelect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub kd: KdTrainConfig,
    pub msi: MsiConfig,
    pub seg: SegConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.is_none() {
            self.dataset.synthetic.validate()?;
            if self.dataset.count < 3 {
                return Err(Error::config("synthetic dataset needs at least three pairs"));
            }
        }
        if self.dataset.tile == Some(0) {
            return Err(Error::config("tile size must be positive"));
        }
        if !(0.0..1.0).contains(&self.dataset.min_change_fraction) {
            return Err(Error::config("min_change_fraction must lie in [0, 1)"));
        }
        self.model.backbone.validate()?;
        self.seg.net.backbone.validate()?;
        self.kd.validate()?;
        self.msi.scale_set().validate()?;
        if let Some(t) = self.msi.bg_threshold.fixed() {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::config("bg_threshold must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[dataset]\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.kd.lambda, 10.0);
        assert_eq!(cfg.kd.batch_size, 8);
        assert_eq!(cfg.kd.epochs, 20);
        assert_eq!(cfg.kd.initial_lr, 1e-3);
        assert_eq!(cfg.seg.train.batch_size, 16);
        assert_eq!(cfg.seg.train.epochs, 50);
        assert_eq!(cfg.seg.train.initial_lr, 0.007);
    }

    #[test]
    fn sweep_settings_parse() {
        let cfg = ExperimentConfig::from_toml_str(
            "[dataset]\ncount = 30\n[model]\ncombine = \"sweep\"\n[msi]\nbg_threshold = \"sweep\"\nscales = [1.0, 2.0]\nflip = false\n",
        )
        .unwrap();
        assert_eq!(cfg.model.combine, Setting::Sweep(Sweep::Sweep));
        assert_eq!(cfg.msi.bg_threshold, Setting::Sweep(Sweep::Sweep));
        assert_eq!(cfg.msi.scales, vec![1.0, 2.0]);
        assert!(!cfg.msi.flip);

        let cfg = ExperimentConfig::from_toml_str("[model]\ncombine = \"concat\"\n[msi]\nbg_threshold = 0.4\n").unwrap();
        assert_eq!(cfg.model.combine, Setting::Fixed(CombineMode::Concat));
        assert_eq!(cfg.msi.bg_threshold, Setting::Fixed(0.4));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 9;
        cfg.model.combine = Setting::Sweep(Sweep::Sweep);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("[msi]\nbg_threshold = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[model]\ncombine = \"multiply\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[dataset]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[kd]\nlambda = -1.0\n").is_err());
    }
}
