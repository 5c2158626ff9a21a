//! Run configuration: one TOML document with a section per stage, layered
//! over a scale preset.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::cam::CamMethod;
use crate::error::{Error, Result};
use crate::imaging::ImagingConfig;
use crate::model::{build_reference_net, build_vdcnet, ModelGraph, ReferenceConfig, VdcNetConfig};
use crate::ops::PoolMode;
use crate::synth::SynthParams;
use crate::train::{Thresholds, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Half,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "half" => Ok(Preset::Half),
            _ => Err(Error::Config(format!("unknown preset {s:?} (full, half)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 20240601,
            preset: Preset::Half,
            run_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    pub damaged_frac: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 322,
            damaged_frac: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Vdcnet,
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub width_multiplier: f64,
    pub head: PoolMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Vdcnet,
            width_multiplier: 1.0,
            head: PoolMode::Avg,
        }
    }
}

impl ModelConfig {
    /// Graph for square inputs of `input_size` pixels.
    pub fn build(&self, input_size: usize) -> Result<Arc<ModelGraph>> {
        let g = match self.arch {
            Arch::Vdcnet => build_vdcnet(&VdcNetConfig {
                input_size,
                width_multiplier: self.width_multiplier,
                head: self.head,
                ..VdcNetConfig::default()
            })?,
            Arch::Reference => build_reference_net(&ReferenceConfig {
                input_size,
                width_multiplier: self.width_multiplier,
                head: self.head,
                ..ReferenceConfig::default()
            })?,
        };
        Ok(Arc::new(g))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of parent images held out for testing.
    pub test_frac: f64,
    /// Share of the remaining parents used to monitor training in `train`.
    pub val_frac: f64,
    pub folds: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_frac: 0.1,
            val_frac: 0.1,
            folds: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CamSubset {
    Test,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamConfig {
    pub method: CamMethod,
    pub alpha: f64,
    /// Mask dilation (px) for localization energy.
    pub dilation: usize,
    pub subset: CamSubset,
    /// Masked inputs per forward pass in Score-CAM.
    pub score_batch: usize,
    /// Images timed by `benchmark-cam`.
    pub benchmark_samples: usize,
    /// Tiles per row of the overlay contact sheet.
    pub sheet_columns: usize,
}

impl Default for CamConfig {
    fn default() -> Self {
        CamConfig {
            method: CamMethod::GradCam,
            alpha: 0.5,
            dilation: 5,
            subset: CamSubset::Test,
            score_batch: 16,
            benchmark_samples: 4,
            sheet_columns: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreviewConfig {
    pub samples: usize,
    pub variants: usize,
}

impl Default for PreviewConfig {
    fn default() -> Self {
        PreviewConfig { samples: 4, variants: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetConfig,
    pub synth: SynthParams,
    pub imaging: ImagingConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    pub eval: Thresholds,
    pub cam: CamConfig,
    pub preview: PreviewConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Half)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (synth, imaging, width) = match preset {
            Preset::Full => (SynthParams::full(), ImagingConfig::full(), 1.0),
            Preset::Half => (SynthParams::half(), ImagingConfig::half(), 1.0 / 16.0),
        };
        RunConfig {
            run: RunSection {
                preset,
                ..RunSection::default()
            },
            dataset: DatasetConfig::default(),
            synth,
            imaging,
            augment: AugmentConfig::default(),
            model: ModelConfig {
                width_multiplier: width,
                ..ModelConfig::default()
            },
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            eval: Thresholds::default(),
            cam: CamConfig::default(),
            preview: PreviewConfig::default(),
        }
    }

    /// Parses `text` over the preset it names (or `preset_override`).
    pub fn from_toml(text: &str, preset_override: Option<Preset>) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let named = user
            .get("run")
            .and_then(|r| r.get("preset"))
            .and_then(|p| p.as_str())
            .map(str::parse)
            .transpose()?;
        let preset = preset_override.or(named).unwrap_or(Preset::Half);
        let mut base = toml::Table::try_from(RunConfig::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        if let Some(toml::Value::Table(run)) = base.get_mut("run") {
            run.insert("preset".into(), toml::Value::String(preset_name(preset).into()));
        }
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset_override: Option<Preset>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, preset_override).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.run_dir = None;
        hex::encode(&Sha256::digest(c.to_toml().as_bytes())[..8])
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.imaging.validate()?;
        self.augment.validate()?;
        self.train.validate()?;
        if self.dataset.count < 2 || !(0.0..=1.0).contains(&self.dataset.damaged_frac) {
            return Err(Error::Config("dataset: need count >= 2 and damaged_frac in [0, 1]".into()));
        }
        if self.imaging.crop_size > self.synth.image_size {
            return Err(Error::Config(format!(
                "imaging.crop_size {} exceeds synth.image_size {}",
                self.imaging.crop_size, self.synth.image_size
            )));
        }
        if !(0.0..1.0).contains(&self.split.test_frac) || !(0.0..1.0).contains(&self.split.val_frac) || self.split.folds < 2 {
            return Err(Error::Config("split: fractions must lie in [0, 1) and folds >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.cam.alpha) || self.cam.score_batch == 0 {
            return Err(Error::Config("cam: alpha must lie in [0, 1] and score_batch be positive".into()));
        }
        self.model.build(self.imaging.tile_size).map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(())
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Full => "full",
        Preset::Half => "half",
    }
}

/// Recursively overlays `over` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
