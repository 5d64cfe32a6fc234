use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bptt_gradients, Adam, Sample, TrainConfig};
use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::snn::NetworkModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    /// Fraction of samples classified correctly while being trained on.
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NetworkModel,
    pub history: Vec<EpochStats>,
}

/// Encoder seed of a training presentation. Each epoch draws fresh spikes;
/// the high word keeps training seeds apart from the evaluation seeds, which
/// are the bare sample index.
pub fn train_sample_seed(epoch: usize, index: usize) -> u64 {
    ((epoch as u64 + 1) << 32) | index as u64
}

/// Trains a copy of `model` with Adam on mini-batches of `train`.
pub fn fit_classifier(
    model: &NetworkModel,
    train: &ImageDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if train.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    if train.class_count != model.class_count {
        return Err(Error::arg(format!(
            "dataset has {} classes, model {}",
            train.class_count, model.class_count
        )));
    }
    if train.dim() != model.input_len() {
        return Err(Error::arg(format!(
            "dataset images have {} pixels, model expects {}",
            train.dim(),
            model.input_len()
        )));
    }

    let mut model = model.clone();
    let mut opt = Adam::new(
        &model.layers,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut loss, mut correct) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = idx
                .iter()
                .map(|&i| Sample {
                    x: train.image(i),
                    label: train.label(i),
                    seed: train_sample_seed(epoch, i),
                })
                .collect();
            let g = bptt_gradients(&model, &batch, cfg).map_err(|e| Error::Training {
                epoch,
                reason: e.to_string(),
            })?;
            if !g.loss.is_finite() || g.layers.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    reason: format!("non-finite loss or gradient (loss {})", g.loss),
                });
            }
            opt.step(&mut model.layers, &g.layers, 1.0 / batch.len() as f64);
            loss += g.loss;
            correct += g.correct;
        }
        let stats = EpochStats {
            epoch,
            loss: loss / train.len() as f64,
            accuracy: correct as f64 / train.len() as f64,
        };
        log::info!(
            "epoch {} loss {:.5} accuracy {:.4}",
            stats.epoch,
            stats.loss,
            stats.accuracy
        );
        history.push(stats);
    }
    Ok(TrainOutcome { model, history })
}
