//! Mexican-hat continuous wavelet transform of peak windows and the
//! rendering of coefficient arrays into fixed-size RGB scalogram images.

use std::f64::consts::PI;
use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::trace::TimeWindow;
use crate::{Error, Result};

/// Mid-gray used for degenerate (all-zero) scalograms and by the
/// augmentation transforms.
pub const MID_GRAY: u8 = 128;

/// Normalized Mexican hat wavelet, the second derivative of a Gaussian:
/// `psi(t) = 2 / (sqrt(3) * pi^(1/4)) * (1 - t^2) * exp(-t^2 / 2)`.
/// Real-valued, so it equals its own complex conjugate.
pub fn ricker(t: f64) -> f64 {
    let norm = 2.0 / (3.0f64.sqrt() * PI.powf(0.25));
    norm * (1.0 - t * t) * (-0.5 * t * t).exp()
}

/// Strictly increasing positive wavelet scales, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    pub scales: Vec<f64>,
}

impl ScaleGrid {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Invalid("scale grid must be nonempty".into()));
        }
        if scales[0] <= 0.0 {
            return Err(Error::Invalid("scales must be positive".into()));
        }
        if scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("scales must be strictly increasing".into()));
        }
        Ok(ScaleGrid { scales })
    }

    /// Logarithmically spaced grid from `min` to `max` inclusive.
    pub fn log_spaced(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(min > 0.0) || max <= min {
            return Err(Error::Invalid(format!(
                "bad log grid: min {min}, max {max}, count {count}"
            )));
        }
        let (lmin, lmax) = (min.ln(), max.ln());
        let scales = (0..count)
            .map(|i| (lmin + (lmax - lmin) * i as f64 / (count - 1) as f64).exp())
            .collect();
        ScaleGrid::new(scales)
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

/// CWT coefficients over (scale, time): rows follow the scale grid,
/// columns the window samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    /// `coefficients[s][n]`, row s = scale index, column n = time index.
    pub coefficients: Vec<Vec<f64>>,
    pub scale_grid: ScaleGrid,
    pub dt: f64,
}

impl Scalogram {
    pub fn max_abs(&self) -> f64 {
        self.coefficients
            .iter()
            .flatten()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Direct evaluation of the discrete CWT:
/// `coefficients[s][n] = sum_{n'} x[n'] * psi((n' - n) * dt / scale_s)`.
pub fn cwt_transform(window: &TimeWindow, grid: &ScaleGrid, dt: f64) -> Result<Scalogram> {
    if window.is_empty() {
        return Err(Error::Invalid("window must be nonempty".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("dt must be positive, got {dt}")));
    }
    let x = &window.samples;
    let n = x.len();
    let mut coefficients = Vec::with_capacity(grid.len());
    for &scale in &grid.scales {
        let mut row = vec![0.0; n];
        // psi(k * dt / scale) depends only on the lag k = n' - n.
        let lags: Vec<f64> = (0..n).map(|k| ricker(k as f64 * dt / scale)).collect();
        for (center, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (sample_idx, &xv) in x.iter().enumerate() {
                let lag = sample_idx.abs_diff(center);
                acc += xv * lags[lag];
            }
            *out = acc;
        }
        coefficients.push(row);
    }
    Ok(Scalogram {
        coefficients,
        scale_grid: grid.clone(),
        dt,
    })
}

/// Fixed-size 8-bit RGB image, row-major, no alpha.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalogramImage {
    pub width: usize,
    pub height: usize,
    /// `height * width * 3` channel bytes.
    pub pixels: Vec<u8>,
    pub source_class_hint: Option<String>,
}

impl ScalogramImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        ScalogramImage {
            width,
            height,
            pixels: vec![value; width * height * 3],
            source_class_hint: None,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, _> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("pixel buffer matches dimensions");
        buf.save(path.as_ref())?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.into_rgb8();
        Ok(ScalogramImage {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.into_raw(),
            source_class_hint: None,
        })
    }
}

/// Signed diverging colormap on t in [-1, 1]: blue at -1, white at 0,
/// red at +1. Negating t swaps the red and blue channels exactly.
fn diverging_rgb(t: f64) -> [f64; 3] {
    let t = t.clamp(-1.0, 1.0);
    if t >= 0.0 {
        [255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t)]
    } else {
        [255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0]
    }
}

/// Renders with per-image symmetric normalization (`A = max|coefficients|`).
pub fn render_scalogram(s: &Scalogram, size: usize) -> Result<ScalogramImage> {
    render_scalogram_with_amplitude(s, s.max_abs(), size)
}

/// Renders with a caller-supplied normalization amplitude, for modes
/// where one amplitude is shared across a whole dataset.
///
/// Rows map to scales (largest scale at the bottom), columns to time;
/// the colormapped grid is resampled to `size`x`size` bilinearly.
pub fn render_scalogram_with_amplitude(
    s: &Scalogram,
    amplitude: f64,
    size: usize,
) -> Result<ScalogramImage> {
    if size == 0 {
        return Err(Error::Invalid("image size must be positive".into()));
    }
    if s.coefficients.is_empty() || s.coefficients[0].is_empty() {
        return Err(Error::Invalid("scalogram must be nonempty".into()));
    }
    if s.coefficients.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "scalogram contains non-finite values".into(),
        ));
    }
    if amplitude == 0.0 {
        return Ok(ScalogramImage::filled(size, size, MID_GRAY));
    }

    let rows = s.coefficients.len();
    let cols = s.coefficients[0].len();
    let mapped: Vec<[f64; 3]> = s
        .coefficients
        .iter()
        .flat_map(|row| row.iter().map(|&v| diverging_rgb(v / amplitude)))
        .collect();

    let mut out = ScalogramImage::filled(size, size, 0);
    for r in 0..size {
        let sr = if size > 1 {
            r as f64 * (rows - 1) as f64 / (size - 1) as f64
        } else {
            0.0
        };
        let r0 = sr.floor() as usize;
        let r1 = (r0 + 1).min(rows - 1);
        let fr = sr - r0 as f64;
        for c in 0..size {
            let sc = if size > 1 {
                c as f64 * (cols - 1) as f64 / (size - 1) as f64
            } else {
                0.0
            };
            let c0 = sc.floor() as usize;
            let c1 = (c0 + 1).min(cols - 1);
            let fc = sc - c0 as f64;
            let mut rgb = [0u8; 3];
            for ch in 0..3 {
                let top = mapped[r0 * cols + c0][ch] * (1.0 - fc) + mapped[r0 * cols + c1][ch] * fc;
                let bot = mapped[r1 * cols + c0][ch] * (1.0 - fc) + mapped[r1 * cols + c1][ch] * fc;
                rgb[ch] = (top * (1.0 - fr) + bot * fr).round().clamp(0.0, 255.0) as u8;
            }
            out.set(r, c, rgb);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse_window(len: usize, at: usize, height: f64) -> TimeWindow {
        let mut samples = vec![0.0; len];
        samples[at] = height;
        TimeWindow {
            center_index: len / 2,
            half_width_samples: len / 2,
            samples,
        }
    }

    #[test]
    fn ricker_closed_form_values() {
        // 2 / (sqrt(3) * pi^(1/4)), evaluated independently at high precision.
        assert!((ricker(0.0) - 0.8673250705840776).abs() < 1e-15);
        assert_eq!(ricker(1.0), 0.0);
        assert_eq!(ricker(-1.0), 0.0);
        // ricker(10) = C * (1 - 100) * exp(-50) = -1.656125e-20.
        assert!((ricker(10.0) / -1.656125e-20 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn grid_validation() {
        assert!(ScaleGrid::new(vec![]).is_err());
        assert!(ScaleGrid::new(vec![0.0, 1.0]).is_err());
        assert!(ScaleGrid::new(vec![1.0, 1.0]).is_err());
        let g = ScaleGrid::log_spaced(0.2, 5.0, 32).unwrap();
        assert_eq!(g.len(), 32);
        assert!((g.scales[0] - 0.2).abs() < 1e-12);
        assert!((g.scales[31] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn impulse_reproduces_sampled_wavelet() {
        let grid = ScaleGrid::log_spaced(0.2, 5.0, 8).unwrap();
        let n0 = 37;
        let s = cwt_transform(&impulse_window(101, n0, 1.0), &grid, 0.1).unwrap();
        for (si, &scale) in grid.scales.iter().enumerate() {
            for n in 0..101 {
                let expect = ricker((n0 as f64 - n as f64) * 0.1 / scale);
                assert!(
                    (s.coefficients[si][n] - expect).abs() < 1e-12,
                    "scale {si} col {n}"
                );
            }
        }
    }

    #[test]
    fn zero_input_gives_zero_scalogram() {
        let grid = ScaleGrid::log_spaced(0.2, 5.0, 4).unwrap();
        let w = TimeWindow {
            center_index: 10,
            half_width_samples: 10,
            samples: vec![0.0; 21],
        };
        let s = cwt_transform(&w, &grid, 0.1).unwrap();
        assert!(s.coefficients.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn linearity() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let grid = ScaleGrid::log_spaced(0.2, 5.0, 16).unwrap();
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| TimeWindow {
            center_index: 50,
            half_width_samples: 50,
            samples: (0..101).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let (x, y) = (mk(&mut rng), mk(&mut rng));
        let (a, b) = (1.7, -0.4);
        let combo = TimeWindow {
            center_index: 50,
            half_width_samples: 50,
            samples: x
                .samples
                .iter()
                .zip(&y.samples)
                .map(|(xi, yi)| a * xi + b * yi)
                .collect(),
        };
        let sx = cwt_transform(&x, &grid, 0.1).unwrap();
        let sy = cwt_transform(&y, &grid, 0.1).unwrap();
        let sc = cwt_transform(&combo, &grid, 0.1).unwrap();
        for s in 0..grid.len() {
            for n in 0..101 {
                let expect = a * sx.coefficients[s][n] + b * sy.coefficients[s][n];
                assert!((sc.coefficients[s][n] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn time_covariance_in_interior() {
        let grid = ScaleGrid::new(vec![0.3]).unwrap();
        let shift = 7usize;
        let base = impulse_window(101, 50, 1.0);
        let shifted = impulse_window(101, 50 + shift, 1.0);
        let sb = cwt_transform(&base, &grid, 0.1).unwrap();
        let ss = cwt_transform(&shifted, &grid, 0.1).unwrap();
        // Columns far from the boundary shift with the input.
        for n in 30..60 {
            assert!((ss.coefficients[0][n + shift] - sb.coefficients[0][n]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_scalogram_renders_mid_gray() {
        let s = Scalogram {
            coefficients: vec![vec![0.0; 21]; 4],
            scale_grid: ScaleGrid::log_spaced(0.2, 5.0, 4).unwrap(),
            dt: 0.1,
        };
        let img = render_scalogram(&s, 64).unwrap();
        assert!(img.pixels.iter().all(|&p| p == MID_GRAY));
    }

    #[test]
    fn negation_swaps_red_and_blue() {
        let grid = ScaleGrid::log_spaced(0.2, 5.0, 8).unwrap();
        let w = impulse_window(101, 40, 1.0);
        let s = cwt_transform(&w, &grid, 0.1).unwrap();
        let neg = Scalogram {
            coefficients: s
                .coefficients
                .iter()
                .map(|row| row.iter().map(|v| -v).collect())
                .collect(),
            scale_grid: s.scale_grid.clone(),
            dt: s.dt,
        };
        let a = render_scalogram(&s, 64).unwrap();
        let b = render_scalogram(&neg, 64).unwrap();
        for r in 0..64 {
            for c in 0..64 {
                let pa = a.get(r, c);
                let pb = b.get(r, c);
                assert!(pa[0].abs_diff(pb[2]) <= 1);
                assert!(pa[1].abs_diff(pb[1]) <= 1);
                assert!(pa[2].abs_diff(pb[0]) <= 1);
            }
        }
    }

    #[test]
    fn impulse_saturates_its_time_column() {
        let grid = ScaleGrid::log_spaced(0.2, 5.0, 32).unwrap();
        let w = impulse_window(101, 25, 1.0);
        let s = cwt_transform(&w, &grid, 0.1).unwrap();
        let img = render_scalogram(&s, 64).unwrap();
        let saturation = |c: usize| -> u32 {
            (0..64)
                .map(|r| {
                    let p = img.get(r, c);
                    p.iter().map(|&ch| (255 - ch) as u32).sum::<u32>()
                })
                .sum()
        };
        let best = (0..64).max_by_key(|&c| saturation(c)).unwrap();
        let expect = (25.0_f64 * 63.0 / 100.0).round() as usize;
        assert!(best.abs_diff(expect) <= 1, "best {best}, expect {expect}");
    }

    #[test]
    fn render_size_independent_of_input_shape() {
        for (rows, cols) in [(3usize, 7usize), (32, 101), (5, 400)] {
            let s = Scalogram {
                coefficients: (0..rows)
                    .map(|r| (0..cols).map(|c| ((r * 31 + c) as f64).sin()).collect())
                    .collect(),
                scale_grid: ScaleGrid::log_spaced(0.2, 5.0, rows.max(2)).unwrap(),
                dt: 0.1,
            };
            let img = render_scalogram(&s, 48).unwrap();
            assert_eq!((img.width, img.height), (48, 48));
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.png");
        let grid = ScaleGrid::log_spaced(0.2, 5.0, 8).unwrap();
        let s = cwt_transform(&impulse_window(51, 20, 0.7), &grid, 0.1).unwrap();
        let img = render_scalogram(&s, 32).unwrap();
        img.save_png(&p).unwrap();
        let back = ScalogramImage::load_png(&p).unwrap();
        assert_eq!(img.pixels, back.pixels);
    }
}
