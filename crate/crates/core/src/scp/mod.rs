//! Spike-count-pattern detector: class-conditional archetypes of last-layer
//! spike counts, scored by L1 distance to the nearest archetype.

mod cluster;

pub use cluster::{agglomerative_cluster, l1, Clustering};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::backproject_f32;
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::snn::{ForwardTrace, Layer, NetworkModel};

/// Samples simulated per parallel work unit while collecting counts.
const COLLECT_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Samples per class in each of the archetype and calibration splits.
    pub per_class: usize,
    pub target_tpr: f64,
    pub max_clusters: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            per_class: 1000,
            target_tpr: 0.95,
            max_clusters: 10,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(Error::config("per_class must be at least 1"));
        }
        if !(self.target_tpr > 0.0 && self.target_tpr <= 1.0) {
            return Err(Error::config("target_tpr must lie in (0, 1]"));
        }
        if self.max_clusters == 0 {
            return Err(Error::config("max_clusters must be at least 1"));
        }
        Ok(())
    }
}

/// Last-layer spike counts of one dataset sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountSample {
    pub index: usize,
    pub counts: Vec<u32>,
}

/// Archetypes and threshold of one predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub centroids: Vec<Vec<f32>>,
    /// Dataset indices of the members of each cluster.
    pub members: Vec<Vec<u32>>,
    pub threshold: f64,
    /// Centroids mapped back to the input of the dense chain.
    pub backprojected: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScpDetector {
    /// Index of the spiking layer whose counts are used.
    pub layer_index: usize,
    pub width: usize,
    pub target_tpr: f64,
    pub classes: BTreeMap<usize, ClassModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    InDistribution,
    OutOfDistribution,
}

/// Predicted label and last-layer counts of a sample, encoded with the
/// sample index as its seed.
pub fn sample_counts(
    model: &NetworkModel,
    ds: &ImageDataset,
    index: usize,
) -> Result<(usize, Vec<u32>)> {
    let p = model.predict(ds.image(index), index as u64)?;
    Ok((p.label, p.trace.last_layer_counts()))
}

/// Walks a seeded permutation of `ds` and fills `splits` consecutive buckets
/// of up to `per_class` samples per predicted class. A sample lands in the
/// first split whose bucket for its class still has room, so the splits are
/// disjoint.
fn collect_splits(
    model: &NetworkModel,
    ds: &ImageDataset,
    per_class: usize,
    splits: usize,
    seed: u64,
) -> Result<Vec<BTreeMap<usize, Vec<CountSample>>>> {
    if model.last_spiking_index().is_none() {
        return Err(Error::Fit("model has no spiking layer".into()));
    }
    if ds.dim() != model.input_len() {
        return Err(Error::Fit(format!(
            "dataset images have {} pixels, model expects {}",
            ds.dim(),
            model.input_len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let classes = model.class_count;
    let mut out: Vec<BTreeMap<usize, Vec<CountSample>>> = vec![BTreeMap::new(); splits];
    let mut filled = 0;
    let needed = classes * splits;
    for chunk in order.chunks(COLLECT_CHUNK) {
        let results: Vec<Result<(usize, Vec<u32>)>> = chunk
            .par_iter()
            .map(|&i| sample_counts(model, ds, i))
            .collect();
        for (&index, r) in chunk.iter().zip(results) {
            let (label, counts) = r?;
            for split in out.iter_mut() {
                let bucket = split.entry(label).or_default();
                if bucket.len() < per_class {
                    bucket.push(CountSample { index, counts });
                    if bucket.len() == per_class && label < classes {
                        filled += 1;
                    }
                    break;
                }
            }
        }
        if filled == needed {
            break;
        }
    }
    Ok(out)
}

fn missing_classes(split: &BTreeMap<usize, Vec<CountSample>>, classes: usize) -> Vec<usize> {
    (0..classes)
        .filter(|c| split.get(c).is_none_or(|b| b.is_empty()))
        .collect()
}

/// Up to `per_class` count vectors for every class, keyed by predicted label.
pub fn collect_class_counts(
    model: &NetworkModel,
    ds: &ImageDataset,
    per_class: usize,
    seed: u64,
) -> Result<BTreeMap<usize, Vec<CountSample>>> {
    if per_class == 0 {
        return Err(Error::arg("per_class must be at least 1"));
    }
    let split = collect_splits(model, ds, per_class, 1, seed)?.remove(0);
    let missing = missing_classes(&split, model.class_count);
    if !missing.is_empty() {
        return Err(Error::Fit(format!(
            "no samples predicted as class(es) {missing:?}"
        )));
    }
    Ok(split)
}

/// Per-coordinate lower median: the element at index `ceil(n/2) - 1` of the
/// sorted values.
pub fn lower_median(members: &[&[u32]]) -> Vec<f32> {
    let Some(first) = members.first() else {
        return Vec::new();
    };
    let mut column = Vec::with_capacity(members.len());
    (0..first.len())
        .map(|d| {
            column.clear();
            column.extend(members.iter().map(|m| m[d]));
            column.sort_unstable();
            column[members.len().div_ceil(2) - 1] as f32
        })
        .collect()
}

/// Smallest calibration score such that at least `target` of the scores are
/// less than or equal to it.
pub fn calibrate_threshold(scores: &[f64], target: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Fit("no calibration scores".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = (1..=n)
        .find(|&k| k as f64 / n as f64 >= target)
        .unwrap_or(n);
    Ok(sorted[k - 1])
}

fn backproject_centroids(dense: &[&Layer], centroids: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
    centroids
        .iter()
        .map(|m| {
            let q: Vec<f64> = m.iter().map(|&v| f64::from(v)).collect();
            backproject_f32(dense, &q)
        })
        .collect()
}

fn l1_to_centroid(counts: &[u32], centroid: &[f32]) -> f64 {
    counts
        .iter()
        .zip(centroid)
        .map(|(&q, &c)| (f64::from(q) - f64::from(c)).abs())
        .sum()
}

impl ScpDetector {
    /// A detector with no fitted classes.
    pub fn empty(layer_index: usize, width: usize, target_tpr: f64) -> Self {
        ScpDetector {
            layer_index,
            width,
            target_tpr,
            classes: BTreeMap::new(),
        }
    }

    /// Builds archetypes from one split of `train` and calibrates each class
    /// threshold on a second, disjoint split.
    pub fn fit(model: &NetworkModel, train: &ImageDataset, cfg: &DetectorConfig) -> Result<Self> {
        Ok(Self::fit_with_calibration(model, train, cfg)?.0)
    }

    /// As [`ScpDetector::fit`], also returning the calibration split.
    pub fn fit_with_calibration(
        model: &NetworkModel,
        train: &ImageDataset,
        cfg: &DetectorConfig,
    ) -> Result<(Self, BTreeMap<usize, Vec<CountSample>>)> {
        cfg.validate()?;
        let mut splits = collect_splits(model, train, cfg.per_class, 2, cfg.seed)?;
        let classes = model.class_count;
        for (split, name) in splits.iter().zip(["archetype", "calibration"]) {
            let missing = missing_classes(split, classes);
            if !missing.is_empty() {
                return Err(Error::Fit(format!(
                    "{name} split has no samples predicted as class(es) {missing:?}"
                )));
            }
        }
        let calibration = splits.pop().expect("two splits");
        let archetype = splits.pop().expect("two splits");
        let dense = model.dense_chain();

        let fitted: Vec<Result<(usize, ClassModel)>> = (0..classes)
            .into_par_iter()
            .map(|c| {
                let samples = &archetype[&c];
                let vectors: Vec<Vec<u32>> = samples.iter().map(|s| s.counts.clone()).collect();
                let clustering = agglomerative_cluster(&vectors, cfg.max_clusters);
                let groups = clustering.members();
                let centroids: Vec<Vec<f32>> = groups
                    .iter()
                    .map(|g| {
                        let refs: Vec<&[u32]> = g.iter().map(|&i| vectors[i].as_slice()).collect();
                        lower_median(&refs)
                    })
                    .collect();
                let members = groups
                    .iter()
                    .map(|g| g.iter().map(|&i| samples[i].index as u32).collect())
                    .collect();
                let scores: Vec<f64> = calibration[&c]
                    .iter()
                    .map(|s| {
                        centroids
                            .iter()
                            .map(|m| l1_to_centroid(&s.counts, m))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect();
                let threshold = calibrate_threshold(&scores, cfg.target_tpr)?;
                let backprojected = backproject_centroids(&dense, &centroids)?;
                log::debug!(
                    "class {c}: {} clusters (silhouette {:.3}), threshold {threshold}",
                    clustering.clusters,
                    clustering.silhouette
                );
                Ok((
                    c,
                    ClassModel {
                        centroids,
                        members,
                        threshold,
                        backprojected,
                    },
                ))
            })
            .collect();

        let layer_index = model
            .last_spiking_index()
            .expect("checked during collection");
        let mut det = ScpDetector::empty(layer_index, model.last_spiking_width(), cfg.target_tpr);
        for r in fitted {
            let (c, m) = r?;
            det.classes.insert(c, m);
        }
        Ok((det, calibration))
    }

    /// Recomputes the cached centroid reconstructions for `model`'s weights.
    pub fn refresh_backprojections(&mut self, model: &NetworkModel) -> Result<()> {
        let dense = model.dense_chain();
        for class in self.classes.values_mut() {
            class.backprojected = backproject_centroids(&dense, &class.centroids)?;
        }
        Ok(())
    }

    fn class(&self, predicted: usize) -> Result<&ClassModel> {
        self.classes
            .get(&predicted)
            .ok_or_else(|| Error::Lookup(format!("class {predicted} was not fitted")))
    }

    /// Index of the nearest centroid of `predicted` and its L1 distance.
    pub fn closest_centroid(&self, counts: &[u32], predicted: usize) -> Result<(usize, f64)> {
        if counts.len() != self.width {
            return Err(Error::Shape(format!(
                "{} counts given, detector expects {}",
                counts.len(),
                self.width
            )));
        }
        let class = self.class(predicted)?;
        let mut best = (0, f64::INFINITY);
        for (m, centroid) in class.centroids.iter().enumerate() {
            let d = l1_to_centroid(counts, centroid);
            if d < best.1 {
                best = (m, d);
            }
        }
        Ok(best)
    }

    pub fn score_counts(&self, counts: &[u32], predicted: usize) -> Result<f64> {
        Ok(self.closest_centroid(counts, predicted)?.1)
    }

    /// Minimum L1 distance between the trace's last-layer counts and the
    /// archetypes of the predicted class. Higher means more anomalous.
    pub fn ood_score(&self, trace: &ForwardTrace, predicted: usize) -> Result<f64> {
        self.score_counts(&trace.last_layer_counts(), predicted)
    }

    pub fn threshold(&self, predicted: usize) -> Result<f64> {
        Ok(self.class(predicted)?.threshold)
    }

    pub fn decide(&self, score: f64, predicted: usize) -> Result<Decision> {
        Ok(if score > self.threshold(predicted)? {
            Decision::OutOfDistribution
        } else {
            Decision::InDistribution
        })
    }
}
