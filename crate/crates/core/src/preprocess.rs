//! Signal conditioning ahead of the CWT: min-max scaling, penalized
//! least-squares baseline estimation and removal, step-signature peak
//! detection, and window extraction.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::pentadiag::SymPentaMatrix;
use crate::trace::{Signal, TimeWindow};
use crate::{Error, Result};

/// Baseline smoother parameters.
///
/// The baseline z minimizes `sum_i w (y_i - z_i)^2 + lambda sum_i (d2 z_i)^2`
/// where `d2 z_i = z_i - 2 z_{i-1} + z_{i-2}`. The fidelity weight is a
/// fixed scalar, so the minimizer is a single linear solve.
#[derive(Debug, Clone, Copy)]
pub struct AlsConfig {
    pub lambda: f64,
    pub w: f64,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            lambda: 1e4,
            w: 0.5,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Invalid(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.w > 0.0 && self.w <= 1.0) {
            return Err(Error::Invalid(format!(
                "w must be in (0, 1], got {}",
                self.w
            )));
        }
        Ok(())
    }
}

/// Slow component of a signal, same length as its source.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub values: Vec<f64>,
}

/// Peak acceptance rules on the baseline-corrected signal.
#[derive(Debug, Clone, Copy)]
pub struct PeakConfig {
    /// Minimum |residual| for an accepted peak, in normalized units.
    pub min_height: f64,
    /// Minimum spacing between accepted peaks, in seconds.
    pub min_spacing_seconds: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        PeakConfig {
            min_height: 0.1,
            min_spacing_seconds: 10.0,
        }
    }
}

impl PeakConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_height > 0.0) || !(self.min_spacing_seconds > 0.0) {
            return Err(Error::Invalid("peak config values must be positive".into()));
        }
        Ok(())
    }
}

/// Direction of the step that produced a residual peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    RisingStep,
    FallingStep,
}

/// One accepted step signature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakEvent {
    pub index: usize,
    /// Signed residual value at `index`.
    pub amplitude: f64,
    pub polarity: Polarity,
}

/// Affine map of the samples onto [0, 1]. Constant signals map to zeros.
pub fn normalize_minmax(signal: &Signal) -> Signal {
    let min = signal.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = signal
        .values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let values = if max > min {
        let span = max - min;
        signal.values.iter().map(|v| (v - min) / span).collect()
    } else {
        vec![0.0; signal.len()]
    };
    Signal {
        values,
        dt: signal.dt,
        name: signal.name.clone(),
    }
}

/// Exact minimizer of the penalized least-squares baseline cost, via the
/// normal equations `(w I + lambda D^T D) z = w y` with D the
/// second-difference operator. The system is pentadiagonal SPD.
pub fn estimate_baseline_als(signal: &Signal, cfg: &AlsConfig) -> Result<Baseline> {
    cfg.validate()?;
    let n = signal.len();
    if n < 3 {
        return Err(Error::Invalid(format!(
            "baseline needs >= 3 samples for second differences, got {n}"
        )));
    }

    // Accumulate lambda * D^T D over the (n-2) second-difference rows.
    let mut diag = vec![0.0; n];
    let mut off1 = vec![0.0; n - 1];
    let mut off2 = vec![0.0; n - 2];
    const STENCIL: [f64; 3] = [1.0, -2.0, 1.0];
    for row in 0..n - 2 {
        for a in 0..3 {
            diag[row + a] += cfg.lambda * STENCIL[a] * STENCIL[a];
            if a + 1 < 3 {
                off1[row + a] += cfg.lambda * STENCIL[a] * STENCIL[a + 1];
            }
        }
        off2[row] += cfg.lambda * STENCIL[0] * STENCIL[2];
    }
    for d in diag.iter_mut() {
        *d += cfg.w;
    }

    let system = SymPentaMatrix::new(diag, off1, off2)?;
    let rhs: Vec<f64> = signal.values.iter().map(|y| cfg.w * y).collect();
    let values = system.solve(&rhs)?;
    Ok(Baseline { values })
}

/// Pointwise `signal - baseline`.
pub fn subtract_baseline(signal: &Signal, baseline: &Baseline) -> Result<Signal> {
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
        .map(|(s, b)| s - b)
        .collect();
    signal.with_values(values)
}

fn spacing_samples(cfg: &PeakConfig, dt: f64) -> usize {
    ((cfg.min_spacing_seconds / dt).round() as usize).max(1)
}

/// Local maxima of |residual| above `min_height`, thinned greedily
/// largest-first so survivors are at least the minimum spacing apart.
pub fn detect_peaks(residual: &Signal, cfg: &PeakConfig) -> Result<Vec<PeakEvent>> {
    cfg.validate()?;
    let r = &residual.values;
    let n = r.len();
    if n < 3 {
        return Ok(Vec::new());
    }
    let spacing = spacing_samples(cfg, residual.dt);

    // Candidate local maxima of the absolute residual; plateaus keep
    // their leftmost sample.
    let mut candidates: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        let v = r[i].abs();
        if v >= cfg.min_height && v > r[i - 1].abs() && v >= r[i + 1].abs() {
            candidates.push(i);
        }
    }

    candidates.sort_by(|&a, &b| r[b].abs().partial_cmp(&r[a].abs()).unwrap().then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for &i in &candidates {
        if accepted.iter().all(|&j| i.abs_diff(j) >= spacing) {
            accepted.push(i);
        }
    }
    accepted.sort_unstable();

    let lobe = (spacing / 4).max(1);
    let peaks = accepted
        .into_iter()
        .map(|i| PeakEvent {
            index: i,
            amplitude: r[i],
            polarity: polarity_at(r, i, lobe),
        })
        .collect();
    Ok(peaks)
}

/// A rising step leaves a negative residual lobe before the transition
/// and a positive lobe after it; compare mean residual on each side.
fn polarity_at(r: &[f64], i: usize, lobe: usize) -> Polarity {
    let lo = i.saturating_sub(lobe);
    let hi = (i + lobe + 1).min(r.len());
    let before: f64 = r[lo..i].iter().sum();
    let after: f64 = r[i + 1..hi].iter().sum();
    if after >= before {
        Polarity::RisingStep
    } else {
        Polarity::FallingStep
    }
}

/// Number of samples in a window of the given duration.
pub fn window_len(window_seconds: f64, dt: f64) -> usize {
    2 * window_half_width(window_seconds, dt) + 1
}

pub fn window_half_width(window_seconds: f64, dt: f64) -> usize {
    (window_seconds / dt / 2.0).round() as usize
}

/// Cuts a window of `window_seconds` centered at `center_index`,
/// zero-padding where the window overlaps a signal edge.
pub fn extract_window_at(signal: &Signal, center_index: usize, window_seconds: f64) -> TimeWindow {
    let half = window_half_width(window_seconds, signal.dt);
    let n = signal.len() as isize;
    let c = center_index as isize;
    let samples = (-(half as isize)..=half as isize)
        .map(|j| {
            let idx = c + j;
            if idx >= 0 && idx < n {
                signal.values[idx as usize]
            } else {
                0.0
            }
        })
        .collect();
    TimeWindow {
        center_index,
        half_width_samples: half,
        samples,
    }
}

pub fn extract_window(signal: &Signal, peak: &PeakEvent, window_seconds: f64) -> TimeWindow {
    extract_window_at(signal, peak.index, window_seconds)
}

/// Samples `count` windows (without replacement) whose centers keep at
/// least half a window length away from every detected peak.
pub fn extract_oob_windows(
    residual: &Signal,
    peaks: &[PeakEvent],
    window_seconds: f64,
    count: usize,
    rng_seed: u64,
) -> Result<Vec<TimeWindow>> {
    if residual.duration() <= window_seconds {
        return Err(Error::Invalid(format!(
            "signal duration {} s not longer than window {} s",
            residual.duration(),
            window_seconds
        )));
    }
    let min_gap = window_seconds / 2.0 / residual.dt;
    let valid: Vec<usize> = (0..residual.len())
        .filter(|&i| {
            peaks
                .iter()
                .all(|p| (i.abs_diff(p.index)) as f64 >= min_gap)
        })
        .collect();
    if valid.len() < count {
        return Err(Error::InsufficientSpan {
            requested: count,
            achievable: valid.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    let centers: Vec<usize> = valid.choose_multiple(&mut rng, count).cloned().collect();
    Ok(centers
        .into_iter()
        .map(|c| extract_window_at(residual, c, window_seconds))
        .collect())
}
