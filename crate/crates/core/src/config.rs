//! Run configuration: one JSON file with full defaults covering the
//! preprocessing pipeline, dataset generation, training, and evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cwt::ScaleGrid;
use crate::preprocess::{AlsConfig, PeakConfig};
use crate::{Error, Result};

/// How scalogram rendering picks its normalization amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Each image is scaled by its own max |coefficient|.
    PerImage,
    /// One amplitude shared across the whole image set, so pure gain
    /// changes stay visible.
    Global,
}

/// Settings for the trace -> scalogram-image pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub als_lambda: f64,
    pub als_w: f64,
    pub peak_min_height: f64,
    pub peak_min_spacing_seconds: f64,
    pub window_seconds: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub scale_count: usize,
    pub image_size: usize,
    pub normalization: NormalizationMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            als_lambda: 1e4,
            als_w: 0.5,
            peak_min_height: 0.1,
            peak_min_spacing_seconds: 10.0,
            window_seconds: 10.0,
            scale_min: 0.2,
            scale_max: 5.0,
            scale_count: 32,
            image_size: 64,
            normalization: NormalizationMode::PerImage,
        }
    }
}

impl PipelineConfig {
    pub fn als(&self) -> AlsConfig {
        AlsConfig {
            lambda: self.als_lambda,
            w: self.als_w,
        }
    }

    pub fn peaks(&self) -> PeakConfig {
        PeakConfig {
            min_height: self.peak_min_height,
            min_spacing_seconds: self.peak_min_spacing_seconds,
        }
    }

    pub fn scale_grid(&self) -> Result<ScaleGrid> {
        ScaleGrid::log_spaced(self.scale_min, self.scale_max, self.scale_count)
    }

    pub fn validate(&self) -> Result<()> {
        self.als().validate()?;
        self.peaks().validate()?;
        self.scale_grid()?;
        if !(self.window_seconds > 0.0) {
            return Err(Error::Invalid("window_seconds must be positive".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Invalid("image_size must be positive".into()));
        }
        Ok(())
    }
}

/// Settings for the synthetic trace and dataset generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub noise_sigma: f64,
    pub shift_seconds: f64,
    pub amp_factors: Vec<f64>,
    pub train_fraction: f64,
    pub trace_duration: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_class: 56,
            noise_sigma: 0.01,
            shift_seconds: 2.0,
            amp_factors: vec![0.5, 0.75, 1.2, 1.5, 2.5],
            train_fraction: 0.7,
            trace_duration: 60.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 4 {
            return Err(Error::Invalid("n_per_class must be >= 4".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Invalid("train_fraction must be in (0, 1)".into()));
        }
        if self.amp_factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::Invalid("amplitude factors must be positive".into()));
        }
        Ok(())
    }
}

/// Settings for similarity evaluation and the trace scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub n_way: usize,
    /// Trial count; `None` falls back to the coupon-collector estimate
    /// for the test-set size.
    pub trials: Option<usize>,
    pub threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n_way: 20,
            trials: None,
            threshold: 0.5,
        }
    }
}

/// Top-level configuration, the schema of the `--config` JSON file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub synth: SynthConfig,
    pub train: crate::nn::TrainConfig,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.synth.validate()?;
        self.train.validate()?;
        if self.eval.n_way < 2 {
            return Err(Error::Invalid("n_way must be >= 2".into()));
        }
        Ok(())
    }
}
