//! Evaluation harness: confusion matrices, coupon-collector N-way
//! validation, and the amplitude-shift similarity table.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::cwt::ScalogramImage;
use crate::nn::CompactCnn;
use crate::synth::{dataset3_group_and_factor, DatasetManifest, LabeledImageDataset, Split};
use crate::{Error, Result};

/// Anything that maps an image to a class-probability vector. The
/// trained CNN implements it; tests use stub implementations.
pub trait ProbModel {
    fn class_probabilities(&self, image: &ScalogramImage) -> Result<Vec<f64>>;
}

impl ProbModel for CompactCnn {
    fn class_probabilities(&self, image: &ScalogramImage) -> Result<Vec<f64>> {
        Ok(self.forward(image)?.probs)
    }
}

/// Counts of (true class, predicted class) pairs; rows are true classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total() as f64
    }

    pub fn row_sum(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    /// Off-diagonal (true, predicted, count) triples.
    pub fn errors(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &c) in row.iter().enumerate() {
                if t != p && c > 0 {
                    out.push((t, p, c));
                }
            }
        }
        out
    }
}

/// Builds a confusion matrix from (true, predicted) index pairs.
pub fn confusion_matrix_from_predictions(
    class_names: Vec<String>,
    pairs: &[(usize, usize)],
) -> Result<ConfusionMatrix> {
    let c = class_names.len();
    let mut counts = vec![vec![0usize; c]; c];
    for &(t, p) in pairs {
        if t >= c || p >= c {
            return Err(Error::Invalid(format!(
                "class index out of range: ({t}, {p})"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names,
    })
}

/// Evaluates the model on one split of the dataset.
pub fn confusion_matrix<M: ProbModel>(
    model: &M,
    dataset: &LabeledImageDataset,
    split: Split,
) -> Result<ConfusionMatrix> {
    let idx = dataset.split_indices(split);
    if idx.is_empty() {
        return Err(Error::Invalid("split is empty".into()));
    }
    let mut pairs = Vec::with_capacity(idx.len());
    for i in idx {
        let probs = model.class_probabilities(&dataset.images[i])?;
        if probs.len() != dataset.class_names.len() {
            return Err(Error::Shape(format!(
                "model emits {} classes, dataset has {}",
                probs.len(),
                dataset.class_names.len()
            )));
        }
        let predicted = argmax(&probs);
        pairs.push((dataset.labels[i], predicted));
    }
    confusion_matrix_from_predictions(dataset.class_names.clone(), &pairs)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

/// Expected number of trials for every one of `m` test images to be
/// sampled at least once (coupon collector), rounded half-up:
/// `round(sum_{i=1..m} m / i)`.
pub fn expected_coupon_trials(m: usize) -> Result<u64> {
    if m < 1 {
        return Err(Error::Invalid("coupon collector needs m >= 1".into()));
    }
    let sum: f64 = (1..=m).map(|i| m as f64 / i as f64).sum();
    Ok((sum + 0.5).floor() as u64)
}

/// N-way validation settings.
#[derive(Debug, Clone, Copy)]
pub struct NWayConfig {
    pub n_way: usize,
    pub trials: usize,
    pub rng_seed: u64,
}

impl NWayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::Invalid("n_way must be >= 2".into()));
        }
        if self.trials < 1 {
            return Err(Error::Invalid("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// One recorded N-way trial, for reporting and the montage rendering.
#[derive(Debug, Clone, Serialize)]
pub struct NWayTrial {
    pub anchor: usize,
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
    pub correct_position: usize,
    pub chosen_position: usize,
}

/// Runs k N-way trials: each samples an anchor plus N candidates of
/// which exactly one shares the anchor's class; the candidate with the
/// highest dot-product similarity is the prediction. Ties break to the
/// lowest candidate index. Returns (accuracy, trials).
pub fn n_way_validation<M: ProbModel>(
    model: &M,
    dataset: &LabeledImageDataset,
    cfg: &NWayConfig,
) -> Result<(f64, Vec<NWayTrial>)> {
    cfg.validate()?;
    let test = dataset.split_indices(Split::Test);
    if test.len() < cfg.n_way + 1 {
        return Err(Error::Invalid(format!(
            "test split has {} images, need at least N + 1 = {}",
            test.len(),
            cfg.n_way + 1
        )));
    }
    let distinct: std::collections::HashSet<usize> =
        test.iter().map(|&i| dataset.labels[i]).collect();
    if distinct.len() < 2 {
        return Err(Error::Invalid("test split needs at least 2 classes".into()));
    }

    // Probability vectors are fixed per image; compute each once.
    let mut probs = vec![Vec::new(); dataset.len()];
    for &i in &test {
        probs[i] = model.class_probabilities(&dataset.images[i])?;
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.rng_seed);
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut correct = 0usize;
    for _ in 0..cfg.trials {
        let mut attempts = 0;
        let (anchor, positive) = loop {
            attempts += 1;
            if attempts > 100 {
                return Err(Error::Invalid(
                    "no class supplies a same-class candidate after 100 resamples".into(),
                ));
            }
            let anchor = *test.choose(&mut rng).unwrap();
            let same: Vec<usize> = test
                .iter()
                .filter(|&&i| i != anchor && dataset.labels[i] == dataset.labels[anchor])
                .cloned()
                .collect();
            if let Some(&positive) = same.choose(&mut rng) {
                break (anchor, positive);
            }
        };
        let others: Vec<usize> = test
            .iter()
            .filter(|&&i| dataset.labels[i] != dataset.labels[anchor])
            .cloned()
            .collect();
        if others.len() < cfg.n_way - 1 {
            return Err(Error::Invalid(format!(
                "only {} distinct-class images for {}-way trial",
                others.len(),
                cfg.n_way
            )));
        }
        let mut candidates: Vec<usize> = others
            .choose_multiple(&mut rng, cfg.n_way - 1)
            .cloned()
            .collect();
        candidates.push(positive);
        candidates.shuffle(&mut rng);
        let correct_position = candidates.iter().position(|&i| i == positive).unwrap();

        let scores: Vec<f64> = candidates
            .iter()
            .map(|&i| dot(&probs[anchor], &probs[i]))
            .collect();
        let chosen_position = argmax(&scores);
        if chosen_position == correct_position {
            correct += 1;
        }
        trials.push(NWayTrial {
            anchor,
            candidates,
            scores,
            correct_position,
            chosen_position,
        });
    }
    Ok((correct as f64 / cfg.trials as f64, trials))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One row of the amplitude-shift similarity table.
#[derive(Debug, Clone, Serialize)]
pub struct AmplitudeScore {
    pub group: String,
    pub factor: f64,
    pub score: f64,
}

/// Loads Dataset-3 images with their (peak group, factor) metadata.
pub fn load_dataset3_items(
    manifest: &DatasetManifest,
    root: impl AsRef<Path>,
) -> Result<Vec<(String, f64, ScalogramImage)>> {
    let root = root.as_ref();
    let mut items = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let (group, factor) = dataset3_group_and_factor(e)?;
        let image = ScalogramImage::load_png(root.join(&e.path))?;
        items.push((group, factor, image));
    }
    Ok(items)
}

/// Per peak group, scores the factor-1.0 anchor against every image in
/// the group. Output ordered by (group, factor).
pub fn amplitude_similarity_table<M: ProbModel>(
    model: &M,
    items: &[(String, f64, ScalogramImage)],
) -> Result<Vec<AmplitudeScore>> {
    let mut groups: Vec<String> = items.iter().map(|(g, _, _)| g.clone()).collect();
    groups.sort();
    groups.dedup();

    let mut out = Vec::new();
    for group in &groups {
        let members: Vec<&(String, f64, ScalogramImage)> =
            items.iter().filter(|(g, _, _)| g == group).collect();
        let anchor = members
            .iter()
            .find(|(_, f, _)| *f == 1.0)
            .ok_or_else(|| Error::Invalid(format!("group '{group}' has no factor-1.0 anchor")))?;
        let anchor_probs = model.class_probabilities(&anchor.2)?;
        let mut rows: Vec<AmplitudeScore> = Vec::with_capacity(members.len());
        for (_, factor, image) in &members {
            let probs = model.class_probabilities(image)?;
            rows.push(AmplitudeScore {
                group: group.clone(),
                factor: *factor,
                score: dot(&anchor_probs, &probs),
            });
        }
        rows.sort_by(|a, b| a.factor.partial_cmp(&b.factor).unwrap());
        out.extend(rows);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stub that reads the class index from the top-left red channel and
    /// emits its one-hot vector.
    struct OracleStub {
        classes: usize,
    }

    impl ProbModel for OracleStub {
        fn class_probabilities(&self, image: &ScalogramImage) -> Result<Vec<f64>> {
            let mut p = vec![0.0; self.classes];
            p[image.get(0, 0)[0] as usize % self.classes] = 1.0;
            Ok(p)
        }
    }

    struct UniformStub {
        classes: usize,
    }

    impl ProbModel for UniformStub {
        fn class_probabilities(&self, _image: &ScalogramImage) -> Result<Vec<f64>> {
            Ok(vec![1.0 / self.classes as f64; self.classes])
        }
    }

    /// One-hot at a pseudo-random class derived from the image bytes,
    /// uncorrelated with the true label.
    struct HashStub {
        classes: usize,
    }

    impl ProbModel for HashStub {
        fn class_probabilities(&self, image: &ScalogramImage) -> Result<Vec<f64>> {
            let h = crate::nn::checksum64(&image.pixels);
            let mut p = vec![0.0; self.classes];
            p[(h % self.classes as u64) as usize] = 1.0;
            Ok(p)
        }
    }

    fn labeled_dataset(classes: usize, per_class: usize) -> LabeledImageDataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                let mut img = ScalogramImage::filled(4, 4, ((c * 31 + i * 7) % 251) as u8);
                img.set(0, 0, [c as u8, 0, 0]);
                images.push(img);
                labels.push(c);
                splits.push(Split::Test);
            }
        }
        LabeledImageDataset {
            class_names: (0..classes).map(|c| format!("c{c}")).collect(),
            images,
            labels,
            splits,
        }
    }

    #[test]
    fn coupon_trials_paper_values() {
        assert_eq!(expected_coupon_trials(1).unwrap(), 1);
        assert_eq!(expected_coupon_trials(42).unwrap(), 182);
        assert_eq!(expected_coupon_trials(98).unwrap(), 506);
        assert!(expected_coupon_trials(0).is_err());
    }

    #[test]
    fn coupon_trials_monotone() {
        let mut prev = 0;
        for m in 1..500 {
            let k = expected_coupon_trials(m).unwrap();
            assert!(k >= prev, "m={m}");
            prev = k;
        }
    }

    #[test]
    fn perfect_stub_gives_diagonal_confusion() {
        let ds = labeled_dataset(3, 4);
        let cm = confusion_matrix(&OracleStub { classes: 3 }, &ds, Split::Test).unwrap();
        assert_eq!(cm.total(), 12);
        assert_eq!(cm.accuracy(), 1.0);
        assert!(cm.errors().is_empty());
    }

    #[test]
    fn forced_error_lands_off_diagonal() {
        let mut ds = labeled_dataset(3, 1);
        // Mislabel one image: its pixel says class 0 but its label is 2.
        ds.images[2].set(0, 0, [0, 0, 0]);
        let cm = confusion_matrix(&OracleStub { classes: 3 }, &ds, Split::Test).unwrap();
        assert_eq!(cm.errors(), vec![(2, 0, 1)]);
        assert_eq!(cm.row_sum(2), 1);
    }

    #[test]
    fn empty_split_is_error() {
        let mut ds = labeled_dataset(2, 2);
        ds.splits = vec![Split::Train; 4];
        assert!(confusion_matrix(&OracleStub { classes: 2 }, &ds, Split::Test).is_err());
    }

    #[test]
    fn nway_oracle_stub_is_perfect() {
        let ds = labeled_dataset(5, 6);
        let cfg = NWayConfig {
            n_way: 10,
            trials: 100,
            rng_seed: 3,
        };
        let (acc, trials) = n_way_validation(&OracleStub { classes: 5 }, &ds, &cfg).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(trials.len(), 100);
        for t in &trials {
            assert_eq!(t.candidates.len(), 10);
        }
    }

    #[test]
    fn nway_uniform_stub_is_chance_level() {
        let ds = labeled_dataset(5, 8);
        let n = 10.0f64;
        let k = 600usize;
        let cfg = NWayConfig {
            n_way: 10,
            trials: k,
            rng_seed: 5,
        };
        let (acc, _) = n_way_validation(&UniformStub { classes: 5 }, &ds, &cfg).unwrap();
        let sigma = ((1.0 / n) * (1.0 - 1.0 / n) / k as f64).sqrt();
        assert!(
            (acc - 1.0 / n).abs() <= 3.0 * sigma,
            "accuracy {acc} vs chance {}",
            1.0 / n
        );
    }

    #[test]
    fn nway_hash_stub_stays_near_chance() {
        let ds = labeled_dataset(5, 8);
        let k = 600usize;
        let cfg = NWayConfig {
            n_way: 10,
            trials: k,
            rng_seed: 7,
        };
        let (acc, _) = n_way_validation(&HashStub { classes: 5 }, &ds, &cfg).unwrap();
        let sigma = (0.1f64 * 0.9 / k as f64).sqrt();
        assert!(acc <= 0.1 + 3.0 * sigma, "accuracy {acc}");
    }

    #[test]
    fn nway_preconditions() {
        let ds = labeled_dataset(2, 2);
        let cfg = NWayConfig {
            n_way: 10,
            trials: 5,
            rng_seed: 1,
        };
        assert!(n_way_validation(&OracleStub { classes: 2 }, &ds, &cfg).is_err());
    }

    #[test]
    fn amplitude_table_with_stub() {
        // Soft stub whose probabilities drift with image brightness, so
        // nearby factors score higher.
        struct BrightnessStub;
        impl ProbModel for BrightnessStub {
            fn class_probabilities(&self, image: &ScalogramImage) -> Result<Vec<f64>> {
                let mean =
                    image.pixels.iter().map(|&p| p as f64).sum::<f64>() / image.pixels.len() as f64;
                let t = mean / 255.0;
                Ok(vec![t, 1.0 - t])
            }
        }
        let mk = |brightness: u8| ScalogramImage::filled(4, 4, brightness);
        let items = vec![
            ("peak1".to_string(), 0.5, mk(40)),
            ("peak1".to_string(), 1.0, mk(120)),
            ("peak1".to_string(), 1.2, mk(140)),
            ("peak2".to_string(), 1.0, mk(200)),
            ("peak2".to_string(), 2.5, mk(90)),
        ];
        let table = amplitude_similarity_table(&BrightnessStub, &items).unwrap();
        assert_eq!(table.len(), 5);
        assert!(table.windows(2).all(|w| w[0].group <= w[1].group));
        let p1: Vec<&AmplitudeScore> = table.iter().filter(|r| r.group == "peak1").collect();
        let anchor = p1.iter().find(|r| r.factor == 1.0).unwrap();
        // Anchor self-score is the dot of its probs with themselves.
        let t = 120.0 / 255.0;
        assert!((anchor.score - (t * t + (1.0 - t) * (1.0 - t))).abs() < 1e-12);
        // Every row matches the hand-computed dot product.
        let expect = |bright: f64| {
            let x = bright / 255.0;
            t * x + (1.0 - t) * (1.0 - x)
        };
        let score_of = |f: f64| p1.iter().find(|r| r.factor == f).unwrap().score;
        assert!((score_of(0.5) - expect(40.0)).abs() < 1e-12);
        assert!((score_of(1.2) - expect(140.0)).abs() < 1e-12);
        assert!(table.iter().all(|r| (0.0..=1.0).contains(&r.score)));

        // Missing anchor is an error.
        let bad = vec![("peak1".to_string(), 0.5, mk(40))];
        assert!(amplitude_similarity_table(&BrightnessStub, &bad).is_err());
    }
}
