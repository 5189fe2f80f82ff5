//! Synthetic step-wise traces, anomaly induction (time shifts and
//! amplitude shifts), and materialization of the three image datasets.

use std::fs;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{NormalizationMode, PipelineConfig, SynthConfig};
use crate::cwt::{cwt_transform, render_scalogram_with_amplitude, Scalogram, ScalogramImage};
use crate::preprocess::{
    detect_peaks, estimate_baseline_als, extract_oob_windows, extract_window_at, normalize_minmax,
    subtract_baseline, Baseline, Polarity,
};
use crate::trace::Signal;
use crate::{Error, Result};

/// Sampling interval of all generated traces, in seconds.
pub const DT: f64 = 0.1;

pub const GENERATOR_VERSION: &str = "1.0";

const MAX_RETRIES: usize = 10;

/// Recipe for one piecewise-constant trace with additive Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecipe {
    /// Transition times in seconds, strictly increasing, inside (0, duration).
    pub step_times: Vec<f64>,
    /// Target level after each transition, in [0, 1].
    pub step_levels: Vec<f64>,
    /// Level before the first transition.
    pub start_level: f64,
    pub noise_sigma: f64,
    pub duration: f64,
    pub rng_seed: u64,
}

impl StepRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.step_times.len() != self.step_levels.len() {
            return Err(Error::Invalid(
                "step_times and step_levels lengths differ".into(),
            ));
        }
        if !(self.duration > 0.0) {
            return Err(Error::Invalid("duration must be positive".into()));
        }
        for w in self.step_times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Invalid(
                    "step_times must be strictly increasing".into(),
                ));
            }
        }
        if self
            .step_times
            .iter()
            .any(|&t| !(t > 0.0 && t < self.duration))
        {
            return Err(Error::Invalid(
                "step_times must lie inside (0, duration)".into(),
            ));
        }
        if self
            .step_levels
            .iter()
            .chain(std::iter::once(&self.start_level))
            .any(|&l| !(0.0..=1.0).contains(&l))
        {
            return Err(Error::Invalid("levels must lie in [0, 1]".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Invalid("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// An induced deviation from the recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnomalySpec {
    TimeShift { shift_seconds: f64 },
    AmplitudeShift { factor: f64 },
}

/// Piecewise-constant signal at `DT` following the recipe, plus i.i.d.
/// Gaussian noise. Deterministic per recipe seed.
pub fn generate_step_trace(recipe: &StepRecipe) -> Result<Signal> {
    recipe.validate()?;
    let n = (recipe.duration / DT).round() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(recipe.rng_seed);
    let noise = Normal::new(0.0, recipe.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * DT;
        let mut level = recipe.start_level;
        for (k, &st) in recipe.step_times.iter().enumerate() {
            if t >= st {
                level = recipe.step_levels[k];
            }
        }
        let eps = if recipe.noise_sigma > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        values.push(level + eps);
    }
    Signal::new(values, DT, "synthetic")
}

/// Shifts the whole signal by a whole number of samples
/// (`round(shift_seconds / dt)`), filling the exposed edge with the
/// nearest original boundary value. Positive shifts move events later.
pub fn induce_time_shift(signal: &Signal, shift_seconds: f64) -> Signal {
    let k = (shift_seconds / signal.dt).round() as isize;
    let n = signal.len() as isize;
    let values = (0..n)
        .map(|i| {
            let src = (i - k).clamp(0, n - 1);
            signal.values[src as usize]
        })
        .collect();
    Signal {
        values,
        dt: signal.dt,
        name: signal.name.clone(),
    }
}

/// Scales the step excursions while preserving the slow baseline:
/// `output = baseline + factor * (signal - baseline)`.
pub fn induce_amplitude_shift(signal: &Signal, baseline: &Baseline, factor: f64) -> Result<Signal> {
    if !(factor > 0.0) {
        return Err(Error::Invalid(format!(
            "factor must be positive, got {factor}"
        )));
    }
    if signal.len() != baseline.values.len() {
        return Err(Error::Shape(format!(
            "signal length {} != baseline length {}",
            signal.len(),
            baseline.values.len()
        )));
    }
    let values = signal
        .values
        .iter()
        .zip(&baseline.values)
        .map(|(s, b)| b + factor * (s - b))
        .collect();
    signal.with_values(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Image path relative to the manifest's directory.
    pub path: String,
    pub label: String,
    pub split: Split,
}

/// Index of a rendered dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub generator_version: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for name in &self.class_names {
            if !seen.insert(name) {
                return Err(Error::Invalid(format!("duplicate class name '{name}'")));
            }
        }
        for e in &self.entries {
            if !self.class_names.iter().any(|c| c == &e.label) {
                return Err(Error::Invalid(format!(
                    "entry '{}' has unknown label '{}'",
                    e.path, e.label
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let path = root.as_ref().join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == label)
    }

    /// Loads every referenced image into memory.
    pub fn load_images(&self, root: impl AsRef<Path>) -> Result<LabeledImageDataset> {
        let root = root.as_ref();
        let mut images = Vec::with_capacity(self.entries.len());
        let mut labels = Vec::with_capacity(self.entries.len());
        let mut splits = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let idx = self
                .class_index(&e.label)
                .ok_or_else(|| Error::Invalid(format!("unknown label '{}'", e.label)))?;
            images.push(ScalogramImage::load_png(root.join(&e.path))?);
            labels.push(idx);
            splits.push(e.split);
        }
        Ok(LabeledImageDataset {
            class_names: self.class_names.clone(),
            images,
            labels,
            splits,
        })
    }
}

/// A dataset materialized in memory: images with class indices and
/// split assignments.
#[derive(Debug, Clone)]
pub struct LabeledImageDataset {
    pub class_names: Vec<String>,
    pub images: Vec<ScalogramImage>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl LabeledImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }
}

/// Options shared by the dataset builders.
#[derive(Debug, Clone, Default)]
pub struct DatasetOptions {
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub seed: u64,
}

pub const DATASET1_CLASSES: [&str; 3] = ["H_L", "L_H", "O_o_B"];
pub const DATASET2_CLASSES: [&str; 7] = ["H_L", "L_H", "O_o_B", "L_H_L", "L_H_R", "H_L_L", "H_L_R"];

#[derive(Debug, Clone, Copy)]
enum ClassKind {
    Step { polarity: Polarity, shift_sign: f64 },
    Oob,
}

fn class_kind(label: &str) -> ClassKind {
    match label {
        "H_L" => ClassKind::Step {
            polarity: Polarity::FallingStep,
            shift_sign: 0.0,
        },
        "L_H" => ClassKind::Step {
            polarity: Polarity::RisingStep,
            shift_sign: 0.0,
        },
        "O_o_B" => ClassKind::Oob,
        "L_H_L" => ClassKind::Step {
            polarity: Polarity::RisingStep,
            shift_sign: -1.0,
        },
        "L_H_R" => ClassKind::Step {
            polarity: Polarity::RisingStep,
            shift_sign: 1.0,
        },
        "H_L_L" => ClassKind::Step {
            polarity: Polarity::FallingStep,
            shift_sign: -1.0,
        },
        "H_L_R" => ClassKind::Step {
            polarity: Polarity::FallingStep,
            shift_sign: 1.0,
        },
        other => panic!("unknown class label '{other}'"),
    }
}

/// splitmix64-style seed derivation so per-image sub-seeds depend only
/// on (dataset seed, image counter, retry attempt), never on thread
/// scheduling.
pub fn derive_seed(seed: u64, stream: u64, attempt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(attempt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One generated scalogram plus the bookkeeping tests rely on.
pub struct GeneratedScalogram {
    pub scalogram: Scalogram,
    /// Window center in the parent trace.
    pub center_index: usize,
    /// Offset of the step peak from the window center, in samples
    /// (zero for unshifted classes, `None` for O_o_B).
    pub peak_offset: Option<isize>,
}

/// Runs the full trace -> residual -> window -> CWT pipeline for one
/// class instance. Fails if the generated trace does not contain the
/// expected step signature.
pub fn generate_class_scalogram(
    label: &str,
    opts: &DatasetOptions,
    sub_seed: u64,
) -> Result<GeneratedScalogram> {
    let kind = class_kind(label);
    let duration = opts.synth.trace_duration;
    let mut rng = ChaCha20Rng::seed_from_u64(sub_seed);

    let high = rng.gen_range(0.3..1.0);
    let rise_t = duration / 3.0 + rng.gen_range(-1.0..1.0);
    let fall_t = 2.0 * duration / 3.0 + rng.gen_range(-1.0..1.0);
    let recipe = StepRecipe {
        step_times: vec![rise_t, fall_t],
        step_levels: vec![high, 0.1],
        start_level: 0.1,
        noise_sigma: opts.synth.noise_sigma,
        duration,
        rng_seed: derive_seed(sub_seed, 1, 0),
    };

    let raw = generate_step_trace(&recipe)?;
    let signal = match kind {
        ClassKind::Step { shift_sign, .. } if shift_sign != 0.0 => {
            induce_time_shift(&raw, shift_sign * opts.synth.shift_seconds)
        }
        _ => raw,
    };

    let norm = normalize_minmax(&signal);
    let baseline = estimate_baseline_als(&norm, &opts.pipeline.als())?;
    let residual = subtract_baseline(&norm, &baseline)?;
    let peaks = detect_peaks(&residual, &opts.pipeline.peaks())?;
    let grid = opts.pipeline.scale_grid()?;

    let (window, peak_offset) = match kind {
        ClassKind::Step {
            polarity,
            shift_sign,
        } => {
            // Windows are cut at the recipe's expected step time, so a
            // time shift shows up as a displaced peak inside the window.
            let expected_t = if polarity == Polarity::RisingStep {
                rise_t
            } else {
                fall_t
            };
            let center = (expected_t / DT).round() as usize;
            let offset = (shift_sign * opts.synth.shift_seconds / DT).round() as isize;
            let want = center as isize + offset;
            let found = peaks
                .iter()
                .any(|p| p.polarity == polarity && (p.index as isize - want).abs() <= 5);
            if !found {
                return Err(Error::Invalid(format!(
                    "no {polarity:?} peak near index {want} for class {label}"
                )));
            }
            (
                extract_window_at(&residual, center, opts.pipeline.window_seconds),
                Some(offset),
            )
        }
        ClassKind::Oob => {
            let w = extract_oob_windows(
                &residual,
                &peaks,
                opts.pipeline.window_seconds,
                1,
                derive_seed(sub_seed, 2, 0),
            )?
            .remove(0);
            (w, None)
        }
    };

    let scalogram = cwt_transform(&window, &grid, DT)?;
    Ok(GeneratedScalogram {
        center_index: window.center_index,
        peak_offset,
        scalogram,
    })
}

fn generate_with_retries(
    label: &str,
    opts: &DatasetOptions,
    counter: u64,
) -> Result<GeneratedScalogram> {
    let mut last = String::new();
    for attempt in 0..MAX_RETRIES {
        let sub = derive_seed(opts.seed, counter, attempt as u64);
        match generate_class_scalogram(label, opts, sub) {
            Ok(g) => return Ok(g),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::Generation {
        label: label.to_string(),
        retries: MAX_RETRIES,
        reason: last,
    })
}

fn build_step_dataset(
    out_dir: &Path,
    opts: &DatasetOptions,
    classes: &[&str],
) -> Result<DatasetManifest> {
    opts.synth.validate()?;
    opts.pipeline.validate()?;
    let n = opts.synth.n_per_class;
    let jobs: Vec<(usize, &str, usize)> = classes
        .iter()
        .enumerate()
        .flat_map(|(ci, &label)| (0..n).map(move |i| (ci, label, i)))
        .collect();

    let generated: Vec<GeneratedScalogram> = jobs
        .par_iter()
        .map(|&(ci, label, i)| generate_with_retries(label, opts, (ci * n + i) as u64))
        .collect::<Result<Vec<_>>>()?;

    let amplitude = match opts.pipeline.normalization {
        NormalizationMode::PerImage => None,
        NormalizationMode::Global => Some(
            generated
                .iter()
                .fold(0.0f64, |m, g| m.max(g.scalogram.max_abs())),
        ),
    };

    let n_train = (n as f64 * opts.synth.train_fraction).round() as usize;
    let mut entries = Vec::with_capacity(jobs.len());
    for (&(_, label, i), g) in jobs.iter().zip(&generated) {
        let img = render_scalogram_with_amplitude(
            &g.scalogram,
            amplitude.unwrap_or_else(|| g.scalogram.max_abs()),
            opts.pipeline.image_size,
        )?;
        let rel = format!("{label}/{label}_{i:03}_{}.png", g.center_index);
        let full = out_dir.join(&rel);
        fs::create_dir_all(full.parent().unwrap()).map_err(|e| Error::io(&full, e))?;
        img.save_png(&full)?;
        entries.push(ManifestEntry {
            path: rel,
            label: label.to_string(),
            split: if i < n_train {
                Split::Train
            } else {
                Split::Test
            },
        });
    }

    let manifest = DatasetManifest {
        class_names: classes.iter().map(|s| s.to_string()).collect(),
        entries,
        seed: opts.seed,
        generator_version: GENERATOR_VERSION.to_string(),
    };
    manifest.validate()?;
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Dataset-1: the three base classes (default 56 images each).
pub fn build_dataset1(out_dir: impl AsRef<Path>, opts: &DatasetOptions) -> Result<DatasetManifest> {
    build_step_dataset(out_dir.as_ref(), opts, &DATASET1_CLASSES)
}

///// Dataset-2: Dataset-1's classes plus the four time-shift classes.
pub fn build_dataset2(out_dir: impl AsRef<Path>, opts: &DatasetOptions) -> Result<DatasetManifest> {
    build_step_dataset(out_dir.as_ref(), opts, &DATASET2_CLASSES)
}

/// Formats an amplitude factor as a Dataset-3 class name, e.g. `f1.20`.
pub fn factor_class_name(factor: f64) -> String {
    format!("f{factor:.2}")
}

/// Recovers (peak group, factor) from a Dataset-3 manifest entry.
pub fn dataset3_group_and_factor(entry: &ManifestEntry) -> Result<(String, f64)> {
    let factor: f64 = entry
        .label
        .strip_prefix('f')
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Invalid(format!("not a factor label: '{}'", entry.label)))?;
    let file = entry.path.rsplit('/').next().unwrap_or(&entry.path);
    let group = file
        .split('_')
        .next()
        .ok_or_else(|| Error::Invalid(format!("bad dataset-3 path '{}'", entry.path)))?;
    Ok((group.to_string(), factor))
}

/// Dataset-3: one non-anomalous two-peak trace; per peak, the original
/// window plus one window per amplitude factor, rendered with a single
/// normalization amplitude shared across all 12 images.
pub fn build_dataset3(out_dir: impl AsRef<Path>, opts: &DatasetOptions) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    opts.synth.validate()?;
    opts.pipeline.validate()?;
    let duration = opts.synth.trace_duration;
    let rise_t = duration / 3.0;
    let fall_t = 2.0 * duration / 3.0;
    let recipe = StepRecipe {
        step_times: vec![rise_t, fall_t],
        step_levels: vec![0.8, 0.1],
        start_level: 0.1,
        noise_sigma: opts.synth.noise_sigma,
        duration,
        rng_seed: derive_seed(opts.seed, 3001, 0),
    };
    let raw = generate_step_trace(&recipe)?;
    let norm = normalize_minmax(&raw);
    let baseline = estimate_baseline_als(&norm, &opts.pipeline.als())?;
    let grid = opts.pipeline.scale_grid()?;

    let mut factors: Vec<f64> = opts.synth.amp_factors.clone();
    factors.push(1.0);
    factors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    factors.dedup();

    let peak_centers = [
        (rise_t / DT).round() as usize,
        (fall_t / DT).round() as usize,
    ];

    let mut items: Vec<(String, String, Scalogram)> = Vec::new();
    for &factor in &factors {
        let shifted = if factor == 1.0 {
            norm.clone()
        } else {
            induce_amplitude_shift(&norm, &baseline, factor)?
        };
        let shifted_baseline = estimate_baseline_als(&shifted, &opts.pipeline.als())?;
        let residual = subtract_baseline(&shifted, &shifted_baseline)?;
        for (k, &center) in peak_centers.iter().enumerate() {
            let window = extract_window_at(&residual, center, opts.pipeline.window_seconds);
            let scalogram = cwt_transform(&window, &grid, DT)?;
            let label = factor_class_name(factor);
            let rel = format!("{label}/peak{}_{center}.png", k + 1);
            items.push((label, rel, scalogram));
        }
    }

    // Shared amplitude: pure gain must stay visible across the group.
    let amplitude = items.iter().fold(0.0f64, |m, (_, _, s)| m.max(s.max_abs()));

    let mut entries = Vec::with_capacity(items.len());
    for (label, rel, scalogram) in &items {
        let img = render_scalogram_with_amplitude(scalogram, amplitude, opts.pipeline.image_size)?;
        let full = out_dir.join(rel);
        fs::create_dir_all(full.parent().unwrap()).map_err(|e| Error::io(&full, e))?;
        img.save_png(&full)?;
        entries.push(ManifestEntry {
            path: rel.clone(),
            label: label.clone(),
            split: Split::Train,
        });
    }

    let manifest = DatasetManifest {
        class_names: factors.iter().map(|&f| factor_class_name(f)).collect(),
        entries,
        seed: opts.seed,
        generator_version: GENERATOR_VERSION.to_string(),
    };
    manifest.validate()?;
    manifest.save(out_dir)?;
    Ok(manifest)
}
