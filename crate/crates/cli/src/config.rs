//! Pipeline configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration; command-line flags override it.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use idt_core::cellcrop::{ColorDetectParams, CropFormat, SynthSpec};
use idt_core::color::HueBand;
use idt_core::dtree::{Criterion, TreeParams};
use idt_core::featviz::VizParams;
use idt_core::illuminate::{IlluminateOptions, NodeObjective};
use idt_core::model::{HyperParams, Preset};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub extract: ExtractConfig,
    pub train: TrainConfig,
    pub features: FeaturesConfig,
    pub viz: VizConfig,
    pub tree: TreeConfig,
    pub illuminate: IlluminateConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    Dir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Raw image root (`<dir>/<class>/*`) when `source = "dir"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Keep only these classes. All classes when empty.
    pub classes: Vec<String>,
    /// Train share of each class.
    pub split_fraction: f64,
    pub synth_n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_spec: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            dir: None,
            classes: Vec::new(),
            split_fraction: 0.8,
            synth_n: 200,
            synth_spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub hue_band: (f64, f64),
    pub min_saturation: f64,
    pub min_area: usize,
    pub format: CropFormat,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        let d = ColorDetectParams::default();
        Self {
            hue_band: (d.hue_band.lo, d.hue_band.hi),
            min_saturation: d.min_saturation,
            min_area: d.min_area,
            format: CropFormat::Png,
        }
    }
}

impl ExtractConfig {
    pub fn params(&self) -> ColorDetectParams {
        ColorDetectParams {
            hue_band: HueBand::new(self.hue_band.0, self.hue_band.1),
            min_saturation: self.min_saturation,
            min_area: self.min_area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        Self {
            preset: Preset::Cnn4,
            epochs: hp.epochs,
            batch_size: hp.batch_size,
            learning_rate: hp.learning_rate,
            momentum: hp.momentum,
            weight_decay: hp.weight_decay,
        }
    }
}

impl TrainConfig {
    pub fn hyper_params(&self, seed: u64) -> HyperParams {
        HyperParams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesConfig {
    /// Defaults to the model's designated feature layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VizConfig {
    pub steps: usize,
    pub step_size: f64,
    pub jitter_pixels: usize,
    pub tv_weight: f64,
    pub l2_weight: f64,
    pub dead_threshold: f64,
}

impl Default for VizConfig {
    fn default() -> Self {
        let p = VizParams::default();
        Self {
            steps: p.steps,
            step_size: p.step_size,
            jitter_pixels: p.jitter_pixels,
            tv_weight: p.tv_weight,
            l2_weight: p.l2_weight,
            dead_threshold: p.dead_threshold,
        }
    }
}

impl VizConfig {
    pub fn params(&self, seed: u64) -> VizParams {
        VizParams {
            steps: self.steps,
            step_size: self.step_size,
            seed,
            jitter_pixels: self.jitter_pixels,
            tv_weight: self.tv_weight,
            l2_weight: self.l2_weight,
            dead_threshold: self.dead_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub criterion: Criterion,
    /// Feature names (`row_col_channel`) never used for splits.
    pub exclude: Vec<String>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        let p = TreeParams::default();
        Self {
            max_depth: p.max_depth,
            min_samples_split: p.min_samples_split,
            min_samples_leaf: p.min_samples_leaf,
            criterion: p.criterion,
            exclude: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IlluminateConfig {
    pub examples_per_leaf: usize,
    pub objective: NodeObjective,
}

impl Default for IlluminateConfig {
    fn default() -> Self {
        let o = IlluminateOptions::default();
        Self {
            examples_per_leaf: o.examples_per_leaf,
            objective: o.objective,
        }
    }
}

impl IlluminateConfig {
    pub fn options(&self) -> IlluminateOptions {
        IlluminateOptions {
            examples_per_leaf: self.examples_per_leaf,
            objective: self.objective,
            ..IlluminateOptions::default()
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The file at `path`, or defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn synth_spec(&self) -> Result<SynthSpec> {
        match &self.data.synth_spec {
            None => Ok(SynthSpec::default()),
            Some(p) => load_synth_spec(p),
        }
    }
}

/// A synthetic dataset spec in JSON (`.json`) or TOML (anything else).
pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading synth spec {}", path.display()))?;
    let spec: SynthSpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    spec.validate()?;
    Ok(spec)
}
