//! Image augmentation for the two training tasks.

use rand::Rng;

use crate::cwt::{ScalogramImage, MID_GRAY};

const DROPOUT_P: f64 = 0.05;

/// Task-1 augmentation: with probability `augment_probability` applies
/// one uniformly chosen transform (rotation by 90/180/270, horizontal
/// or vertical flip, contrast scaling about mid-gray, or pixel dropout
/// to mid-gray); otherwise returns the image unchanged.
pub fn augment_task1(
    image: &ScalogramImage,
    augment_probability: f64,
    rng: &mut impl Rng,
) -> ScalogramImage {
    if !rng.gen_bool(augment_probability.clamp(0.0, 1.0)) {
        return image.clone();
    }
    match rng.gen_range(0..7u8) {
        0 => rotate90(image),
        1 => rotate180(image),
        2 => rotate270(image),
        3 => flip_horizontal(image),
        4 => flip_vertical(image),
        5 => {
            let scale = rng.gen_range(0.8..1.2);
            contrast(image, scale)
        }
        _ => dropout(image, DROPOUT_P, rng),
    }
}

pub fn flip_horizontal(image: &ScalogramImage) -> ScalogramImage {
    let mut out = image.clone();
    for r in 0..image.height {
        for c in 0..image.width {
            out.set(r, image.width - 1 - c, image.get(r, c));
        }
    }
    out
}

pub fn flip_vertical(image: &ScalogramImage) -> ScalogramImage {
    let mut out = image.clone();
    for r in 0..image.height {
        for c in 0..image.width {
            out.set(image.height - 1 - r, c, image.get(r, c));
        }
    }
    out
}

/// Clockwise quarter turn; requires a square image.
pub fn rotate90(image: &ScalogramImage) -> ScalogramImage {
    assert_eq!(image.width, image.height, "rotation requires square images");
    let n = image.width;
    let mut out = image.clone();
    for r in 0..n {
        for c in 0..n {
            out.set(c, n - 1 - r, image.get(r, c));
        }
    }
    out
}

pub fn rotate180(image: &ScalogramImage) -> ScalogramImage {
    flip_horizontal(&flip_vertical(image))
}

pub fn rotate270(image: &ScalogramImage) -> ScalogramImage {
    rotate90(&rotate180(image))
}

/// Scales channel values about mid-gray and clamps to 8-bit range.
pub fn contrast(image: &ScalogramImage, scale: f64) -> ScalogramImage {
    let mut out = image.clone();
    for p in out.pixels.iter_mut() {
        let v = MID_GRAY as f64 + scale * (*p as f64 - MID_GRAY as f64);
        *p = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Sets each pixel (all three channels) to mid-gray with probability `p`.
pub fn dropout(image: &ScalogramImage, p: f64, rng: &mut impl Rng) -> ScalogramImage {
    let mut out = image.clone();
    for r in 0..image.height {
        for c in 0..image.width {
            if rng.gen_bool(p) {
                out.set(r, c, [MID_GRAY; 3]);
            }
        }
    }
    out
}

/// Task-2 augmentation: per-channel histogram equalization. Each channel
/// value v maps to `floor(255 * cdf(v))` where the CDF includes v's own
/// count, so the brightest occupied level maps to 255 (a uniform image
/// therefore maps to all-255).
pub fn augment_task2_histeq(image: &ScalogramImage) -> ScalogramImage {
    let mut out = image.clone();
    let n = (image.width * image.height) as f64;
    for ch in 0..3 {
        let mut hist = [0u64; 256];
        for i in (ch..image.pixels.len()).step_by(3) {
            hist[image.pixels[i] as usize] += 1;
        }
        let mut lut = [0u8; 256];
        let mut cum = 0u64;
        for v in 0..256 {
            cum += hist[v];
            lut[v] = (255.0 * cum as f64 / n).floor().min(255.0) as u8;
        }
        for i in (ch..out.pixels.len()).step_by(3) {
            out.pixels[i] = lut[out.pixels[i] as usize];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn checkerboard(size: usize) -> ScalogramImage {
        let mut img = ScalogramImage::filled(size, size, 0);
        for r in 0..size {
            for c in 0..size {
                let v = (((r / 3 + c / 5) % 2) * 200 + r % 50) as u8;
                img.set(r, c, [v, v.wrapping_add(30), v.wrapping_add(60)]);
            }
        }
        img
    }

    #[test]
    fn zero_probability_is_identity() {
        let img = checkerboard(16);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..20 {
            assert_eq!(augment_task1(&img, 0.0, &mut rng).pixels, img.pixels);
        }
    }

    #[test]
    fn flips_are_involutions() {
        let img = checkerboard(16);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)).pixels, img.pixels);
        assert_eq!(flip_vertical(&flip_vertical(&img)).pixels, img.pixels);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = checkerboard(12);
        let r = rotate90(&rotate90(&rotate90(&rotate90(&img))));
        assert_eq!(r.pixels, img.pixels);
        assert_eq!(rotate270(&rotate90(&img)).pixels, img.pixels);
    }

    #[test]
    fn augment_preserves_shape_and_range() {
        let img = checkerboard(16);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..50 {
            let out = augment_task1(&img, 1.0, &mut rng);
            assert_eq!((out.width, out.height), (16, 16));
            assert_eq!(out.pixels.len(), img.pixels.len());
        }
    }

    #[test]
    fn dropout_count_within_binomial_bounds() {
        let img = ScalogramImage::filled(64, 64, 200);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let out = dropout(&img, 0.05, &mut rng);
        let altered = (0..64 * 64)
            .filter(|&i| out.pixels[i * 3] == MID_GRAY)
            .count();
        // np = 204.8, 3 sigma ~ 42.
        assert!((altered as f64 - 204.8).abs() < 42.0, "altered {altered}");
    }

    #[test]
    fn histeq_uniform_image_maps_to_255() {
        let img = ScalogramImage::filled(8, 8, MID_GRAY);
        let out = augment_task2_histeq(&img);
        assert!(out.pixels.iter().all(|&p| p == 255));
    }

    #[test]
    fn histeq_two_level_image() {
        // Half the pixels at 50, half at 200: CDF rule sends them to
        // floor(255 * 0.5) = 127 and floor(255 * 1.0) = 255.
        let mut img = ScalogramImage::filled(2, 2, 50);
        img.set(0, 0, [200; 3]);
        img.set(0, 1, [200; 3]);
        let out = augment_task2_histeq(&img);
        assert_eq!(out.get(0, 0), [255; 3]);
        assert_eq!(out.get(1, 0), [127; 3]);
    }

    #[test]
    fn histeq_cdf_is_near_linear() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut img = ScalogramImage::filled(64, 64, 0);
        for p in img.pixels.iter_mut() {
            *p = rng.gen();
        }
        let out = augment_task2_histeq(&img);
        let n = (out.width * out.height) as f64;
        for ch in 0..3 {
            let mut hist = [0u64; 256];
            for i in (ch..out.pixels.len()).step_by(3) {
                hist[out.pixels[i] as usize] += 1;
            }
            let mut cum = 0.0;
            for v in 0..256 {
                cum += hist[v] as f64 / n;
                if hist[v] > 0 {
                    let target = (v as f64 + 1.0) / 256.0;
                    assert!(
                        (cum - target).abs() <= 1.0 / 256.0 + 1e-9,
                        "channel {ch} level {v}: cdf {cum} vs {target}"
                    );
                }
            }
        }
    }
}
