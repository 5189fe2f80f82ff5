//! Small PNG renderings for reports: scan timelines, confusion
//! matrices, and N-way trial montages.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::eval::{ConfusionMatrix, NWayTrial};
use crate::siamese::ScanReport;
use crate::synth::LabeledImageDataset;
use crate::{Error, Result};

const CELL: u32 = 24;

fn save(img: RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save(path).map_err(Error::from)
}

/// One column per compared window: bar height is the similarity score,
/// green for clean windows and red for flagged ones; probe windows are
/// drawn dimmer than peak windows.
pub fn render_scan_timeline(report: &ScanReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if report.verdicts.is_empty() {
        return Err(Error::Invalid("scan report has no verdicts".into()));
    }
    let h = 100u32;
    let w = report.verdicts.len() as u32 * CELL;
    let mut img = RgbImage::from_pixel(w, h, Rgb([250, 250, 250]));

    let ty = h - 1 - (report.threshold.clamp(0.0, 1.0) * (h - 1) as f64) as u32;
    for x in 0..w {
        img.put_pixel(x, ty, Rgb([120, 120, 120]));
    }
    for (i, v) in report.verdicts.iter().enumerate() {
        let color = match (v.is_anomaly, v.at_reference_peak) {
            (true, true) => Rgb([200, 30, 30]),
            (true, false) => Rgb([230, 120, 120]),
            (false, true) => Rgb([30, 160, 60]),
            (false, false) => Rgb([140, 200, 150]),
        };
        let top = h - 1 - (v.score.clamp(0.0, 1.0) * (h - 1) as f64) as u32;
        for x in i as u32 * CELL + 2..(i as u32 + 1) * CELL - 2 {
            for y in top..h {
                img.put_pixel(x, y, color);
            }
        }
    }
    save(img, path)
}

/// Grid shaded by count, row-normalized; the diagonal reads dark when
/// the classifier is accurate.
pub fn render_confusion_png(cm: &ConfusionMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let c = cm.class_names.len() as u32;
    if c == 0 {
        return Err(Error::Invalid("empty confusion matrix".into()));
    }
    let mut img = RgbImage::from_pixel(c * CELL, c * CELL, Rgb([255, 255, 255]));
    for t in 0..c as usize {
        let row_total = cm.row_sum(t).max(1) as f64;
        for p in 0..c as usize {
            let frac = cm.counts[t][p] as f64 / row_total;
            let shade = (255.0 * (1.0 - frac)) as u8;
            let color = if t == p {
                Rgb([shade, 255u8.min(shade.saturating_add(40)), shade])
            } else {
                Rgb([255u8.min(shade.saturating_add(40)), shade, shade])
            };
            for x in p as u32 * CELL..(p as u32 + 1) * CELL {
                for y in t as u32 * CELL..(t as u32 + 1) * CELL {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    save(img, path)
}

/// One row per trial: the anchor image, a separator, then the
/// candidates in order; the chosen candidate gets a green border when
/// correct and red otherwise, and the true match a thin blue border.
pub fn render_nway_montage(
    dataset: &LabeledImageDataset,
    trials: &[NWayTrial],
    max_rows: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let rows = trials.len().min(max_rows);
    if rows == 0 {
        return Err(Error::Invalid("no trials to render".into()));
    }
    let tile = dataset.images[trials[0].anchor].width as u32;
    let gap = 4u32;
    let n = trials[0].candidates.len() as u32;
    let w = (n + 1) * (tile + gap) + gap;
    let h = rows as u32 * (tile + gap) + gap;
    let mut img = RgbImage::from_pixel(w, h, Rgb([30, 30, 30]));

    let blit = |img: &mut RgbImage, src: usize, x0: u32, y0: u32| {
        let s = &dataset.images[src];
        for r in 0..s.height {
            for c in 0..s.width {
                let [pr, pg, pb] = s.get(r, c);
                img.put_pixel(x0 + c as u32, y0 + r as u32, Rgb([pr, pg, pb]));
            }
        }
    };
    let border = |img: &mut RgbImage, x0: u32, y0: u32, color: Rgb<u8>, thick: u32| {
        for d in 0..thick {
            for x in x0..x0 + tile {
                img.put_pixel(x, y0 + d, color);
                img.put_pixel(x, y0 + tile - 1 - d, color);
            }
            for y in y0..y0 + tile {
                img.put_pixel(x0 + d, y, color);
                img.put_pixel(x0 + tile - 1 - d, y, color);
            }
        }
    };

    for (row, trial) in trials.iter().take(rows).enumerate() {
        let y0 = gap + row as u32 * (tile + gap);
        blit(&mut img, trial.anchor, gap, y0);
        for (k, &cand) in trial.candidates.iter().enumerate() {
            let x0 = gap + (k as u32 + 1) * (tile + gap) + gap;
            blit(&mut img, cand, x0, y0);
            if k == trial.correct_position {
                border(&mut img, x0, y0, Rgb([60, 90, 220]), 1);
            }
            if k == trial.chosen_position {
                let ok = trial.chosen_position == trial.correct_position;
                let color = if ok {
                    Rgb([40, 200, 70])
                } else {
                    Rgb([220, 40, 40])
                };
                border(&mut img, x0, y0, color, 2);
            }
        }
    }
    save(img, path)
}
