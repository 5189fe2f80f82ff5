//! Siamese similarity scoring and sliding-window trace comparison.
//!
//! Both branches share one trained classifier; the similarity of two
//! windows is the dot product of their class-probability vectors, so a
//! confident same-class pair scores near 1 and a confident
//! different-class pair scores near 0.

use serde::{Deserialize, Serialize};

use crate::config::{NormalizationMode, PipelineConfig};
use crate::cwt::{cwt_transform, render_scalogram_with_amplitude, ScalogramImage};
use crate::eval::ProbModel;
use crate::preprocess::{
    detect_peaks, estimate_baseline_als, extract_window_at, normalize_minmax, subtract_baseline,
};
use crate::trace::Signal;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Dot-product similarity of two windows' probability vectors, in [0, 1].
pub fn similarity<M: ProbModel>(model: &M, a: &ScalogramImage, b: &ScalogramImage) -> Result<f64> {
    let pa = model.class_probabilities(a)?;
    let pb = model.class_probabilities(b)?;
    if pa.len() != pb.len() {
        return Err(Error::Shape("probability vectors differ in length".into()));
    }
    Ok(pa.iter().zip(&pb).map(|(x, y)| x * y).sum())
}

/// One compared window pair along the scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVerdict {
    /// Window center index in the shared sampling grid.
    pub time_index: usize,
    pub window_center_seconds: f64,
    /// True when the center came from a detected reference peak rather
    /// than a regularly spaced probe.
    pub at_reference_peak: bool,
    pub score: f64,
    pub anchor_class: String,
    pub query_class: String,
    pub is_anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub variable: String,
    pub threshold: f64,
    pub model_checksum: Option<u64>,
    pub verdicts: Vec<SimilarityVerdict>,
}

impl ScanReport {
    pub fn any_anomaly(&self) -> bool {
        self.verdicts.iter().any(|v| v.is_anomaly)
    }
}

/// Normalize, estimate the ALS baseline, and return the residual.
pub fn preprocess_residual(signal: &Signal, cfg: &PipelineConfig) -> Result<Signal> {
    let normalized = normalize_minmax(signal);
    let baseline = estimate_baseline_als(&normalized, &cfg.als())?;
    subtract_baseline(&normalized, &baseline)
}

/// Window centers for a scan: every detected reference peak, plus
/// regularly spaced probes (one per `peak_min_spacing_seconds`) in
/// stretches with no nearby peak, so out-of-band regions are compared
/// too. Probes keep one full window length clear of the trace edges,
/// where the baseline fit has boundary transients that would be scored
/// against a model never trained on them. Sorted by time.
pub fn scan_centers(
    reference_residual: &Signal,
    cfg: &PipelineConfig,
) -> Result<Vec<(usize, bool)>> {
    let peaks = detect_peaks(reference_residual, &cfg.peaks())?;
    let spacing = (cfg.peak_min_spacing_seconds / reference_residual.dt).round() as usize;
    let spacing = spacing.max(1);
    let n = reference_residual.len();
    let half = crate::preprocess::window_half_width(cfg.window_seconds, reference_residual.dt);
    let margin = 2 * half;

    let mut centers: Vec<(usize, bool)> = peaks.iter().map(|p| (p.index, true)).collect();
    let mut probe = spacing / 2;
    while probe < n {
        if probe >= margin
            && probe + margin < n
            && !peaks.iter().any(|p| p.index.abs_diff(probe) < spacing)
        {
            centers.push((probe, false));
        }
        probe += spacing;
    }
    centers.sort_unstable();
    Ok(centers)
}

/// Compares a query trace variable against a reference, window by
/// window. Windows are cut at the reference's peak and probe centers in
/// both traces, imaged with the configured normalization (global mode
/// shares the amplitude within each pair), and scored; a score below
/// `threshold` flags the window as anomalous.
pub fn scan_trace<M: ProbModel>(
    model: &M,
    class_names: &[String],
    reference: &Signal,
    query: &Signal,
    cfg: &PipelineConfig,
    threshold: f64,
) -> Result<ScanReport> {
    cfg.validate()?;
    if (reference.dt - query.dt).abs() > 1e-12 {
        return Err(Error::Invalid(format!(
            "sampling intervals differ: reference {} s, query {} s",
            reference.dt, query.dt
        )));
    }
    if reference.len() != query.len() {
        return Err(Error::Invalid(format!(
            "trace lengths differ: reference {}, query {}",
            reference.len(),
            query.len()
        )));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Invalid(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }

    let ref_residual = preprocess_residual(reference, cfg)?;
    let query_residual = preprocess_residual(query, cfg)?;
    let centers = scan_centers(&ref_residual, cfg)?;
    let grid = cfg.scale_grid()?;

    let mut verdicts = Vec::with_capacity(centers.len());
    for (center, at_peak) in centers {
        let rw = extract_window_at(&ref_residual, center, cfg.window_seconds);
        let qw = extract_window_at(&query_residual, center, cfg.window_seconds);
        let rs = cwt_transform(&rw, &grid, reference.dt)?;
        let qs = cwt_transform(&qw, &grid, reference.dt)?;
        let (ra, qa) = match cfg.normalization {
            NormalizationMode::PerImage => (rs.max_abs(), qs.max_abs()),
            NormalizationMode::Global => {
                let shared = rs.max_abs().max(qs.max_abs());
                (shared, shared)
            }
        };
        let ri = render_scalogram_with_amplitude(&rs, ra, cfg.image_size)?;
        let qi = render_scalogram_with_amplitude(&qs, qa, cfg.image_size)?;

        let anchor_probs = model.class_probabilities(&ri)?;
        let query_probs = model.class_probabilities(&qi)?;
        if anchor_probs.len() != class_names.len() || query_probs.len() != class_names.len() {
            return Err(Error::Shape(format!(
                "model emits {} classes, expected {}",
                anchor_probs.len(),
                class_names.len()
            )));
        }
        let score: f64 = anchor_probs
            .iter()
            .zip(&query_probs)
            .map(|(x, y)| x * y)
            .sum();
        verdicts.push(SimilarityVerdict {
            time_index: center,
            window_center_seconds: center as f64 * reference.dt,
            at_reference_peak: at_peak,
            score,
            anchor_class: class_names[argmax(&anchor_probs)].clone(),
            query_class: class_names[argmax(&query_probs)].clone(),
            is_anomaly: score < threshold,
        });
    }

    Ok(ScanReport {
        variable: reference.name.clone(),
        threshold,
        model_checksum: None,
        verdicts,
    })
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_step_trace, StepRecipe, DT};
    use proptest::prelude::*;

    /// Near-one-hot probabilities keyed off mean image brightness, so
    /// windows that image alike score near 1 and unlike windows near 0.
    struct BrightnessBucketStub;

    impl ProbModel for BrightnessBucketStub {
        fn class_probabilities(&self, image: &ScalogramImage) -> Result<Vec<f64>> {
            let mean =
                image.pixels.iter().map(|&p| p as f64).sum::<f64>() / image.pixels.len() as f64;
            let bucket = ((mean / 256.0) * 8.0).floor().min(7.0) as usize;
            let mut p = vec![0.01 / 7.0; 8];
            p[bucket] = 0.99;
            Ok(p)
        }
    }

    fn stub_classes() -> Vec<String> {
        (0..8).map(|i| format!("b{i}")).collect()
    }

    fn step_signal(seed: u64) -> Signal {
        // Long enough that probe windows exist clear of the peaks and
        // the edge margins.
        let recipe = StepRecipe {
            step_times: vec![20.0, 40.0],
            step_levels: vec![0.8, 0.1],
            start_level: 0.1,
            noise_sigma: 0.005,
            duration: 120.0,
            rng_seed: seed,
        };
        generate_step_trace(&recipe).unwrap()
    }

    #[test]
    fn identical_traces_are_clean() {
        let cfg = PipelineConfig::default();
        let s = step_signal(11);
        let report = scan_trace(&BrightnessBucketStub, &stub_classes(), &s, &s, &cfg, 0.5).unwrap();
        assert!(!report.any_anomaly(), "verdicts: {:?}", report.verdicts);
        assert!(report.verdicts.iter().any(|v| v.at_reference_peak));
        assert!(report.verdicts.iter().any(|v| !v.at_reference_peak));
        assert!(report
            .verdicts
            .windows(2)
            .all(|w| w[0].time_index < w[1].time_index));
        // Identical inputs can never disagree on the predicted class.
        assert!(report
            .verdicts
            .iter()
            .all(|v| v.anchor_class == v.query_class));

        // JSON round trip reproduces the records.
        let text = serde_json::to_string(&report).unwrap();
        let back: ScanReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn localized_amplitude_anomaly_is_flagged_at_a_peak() {
        // A uniform whole-trace amplitude change would be cancelled by
        // min-max normalization; a single step at a different height is
        // not, because the trace extremes pin the scale.
        let mut cfg = PipelineConfig::default();
        cfg.normalization = crate::config::NormalizationMode::Global;
        let pulses = |second_height: f64| StepRecipe {
            step_times: vec![10.0, 20.0, 35.0, 45.0],
            step_levels: vec![0.8, 0.1, second_height, 0.1],
            start_level: 0.1,
            noise_sigma: 0.005,
            duration: 60.0,
            rng_seed: 11,
        };
        // The query's first pulse matches the reference and pins the
        // min-max scale, so the reduced second pulse stays reduced.
        let reference = generate_step_trace(&pulses(0.8)).unwrap();
        let query = generate_step_trace(&pulses(0.35)).unwrap();
        let report = scan_trace(
            &BrightnessBucketStub,
            &stub_classes(),
            &reference,
            &query,
            &cfg,
            0.5,
        )
        .unwrap();
        assert!(report.any_anomaly());
        // The altered steps themselves are flagged.
        assert!(report
            .verdicts
            .iter()
            .filter(|v| v.at_reference_peak)
            .any(|v| v.is_anomaly));
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let cfg = PipelineConfig::default();
        let a = step_signal(1);
        let b = Signal::new(a.values[..a.len() - 5].to_vec(), DT, "p").unwrap();
        assert!(scan_trace(&BrightnessBucketStub, &stub_classes(), &a, &b, &cfg, 0.5).is_err());
        let c = Signal::new(a.values.clone(), DT * 2.0, "p").unwrap();
        assert!(scan_trace(&BrightnessBucketStub, &stub_classes(), &a, &c, &cfg, 0.5).is_err());
        assert!(scan_trace(&BrightnessBucketStub, &stub_classes(), &a, &a, &cfg, 1.5).is_err());
    }

    #[test]
    fn scan_centers_cover_quiet_stretches() {
        let cfg = PipelineConfig::default();
        let s = step_signal(3);
        let residual = preprocess_residual(&s, &cfg).unwrap();
        let centers = scan_centers(&residual, &cfg).unwrap();
        let spacing = (cfg.peak_min_spacing_seconds / DT).round() as usize;
        let half = crate::preprocess::window_half_width(cfg.window_seconds, DT);
        // Away from the edge margins, no sample is further than one
        // spacing from some center.
        for i in ((2 * half)..(s.len() - 2 * half)).step_by(7) {
            assert!(
                centers.iter().any(|&(c, _)| c.abs_diff(i) <= spacing),
                "sample {i} uncovered"
            );
        }
        // Probes never sit inside the edge margins.
        assert!(centers
            .iter()
            .filter(|&&(_, at_peak)| !at_peak)
            .all(|&(c, _)| c >= 2 * half && c + 2 * half < s.len()));
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_and_bounded(seed_a in 0u64..500, seed_b in 0u64..500) {
            use rand::prelude::*;
            use rand_chacha::ChaCha20Rng;
            let mk = |seed: u64| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let mut img = ScalogramImage::filled(6, 6, 0);
                for p in img.pixels.iter_mut() {
                    *p = rng.gen();
                }
                img
            };
            let (a, b) = (mk(seed_a), mk(seed_b));
            let ab = similarity(&BrightnessBucketStub, &a, &b).unwrap();
            let ba = similarity(&BrightnessBucketStub, &b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            // Self-similarity is the sum of squared probabilities, at
            // least 1/num_classes.
            let aa = similarity(&BrightnessBucketStub, &a, &a).unwrap();
            prop_assert!(aa >= 1.0 / 8.0);
            prop_assert!(aa >= ab - 1e-12);
        }
    }
}
