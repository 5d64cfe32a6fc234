//! Input-space relevance maps for detector decisions.

mod render;

pub use render::{display_range, to_heatmap, write_csv, write_pgm, Aggregation, Heatmap};

use crate::error::{Error, Result};
use crate::scp::ScpDetector;
use crate::snn::{ForwardTrace, Layer, NetworkModel};

/// Maps `q` back through `layers` (forward order) with `q <- W^T q`, then
/// zeroes negative entries.
pub fn backproject(layers: &[&Layer], q: &[f64]) -> Result<Vec<f64>> {
    let mut current = q.to_vec();
    for layer in layers.iter().rev() {
        if current.len() != layer.kind.output_len() {
            return Err(Error::config(format!(
                "vector of length {} cannot pass back through a layer with {} outputs",
                current.len(),
                layer.kind.output_len()
            )));
        }
        let mut next = vec![0.0; layer.kind.input_len()];
        layer.backward_input(&current, &mut next);
        current = next;
    }
    clamp_negative(&mut current);
    Ok(current)
}

pub fn clamp_negative(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Back-projection rounded to f32, the precision in which centroid
/// reconstructions are cached.
pub(crate) fn backproject_f32(layers: &[&Layer], q: &[f64]) -> Result<Vec<f32>> {
    Ok(backproject(layers, q)?
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap {
    /// `|bp(query) - bp(closest centroid)|` at the input of the dense chain.
    pub values: Vec<f64>,
    pub predicted_label: usize,
    pub closest_centroid: usize,
    pub score: f64,
    /// Score minus the class threshold; positive means flagged.
    pub score_margin: f64,
}

/// Relevance of each input of the dense chain for the detector's verdict on
/// `trace`.
pub fn relevance(
    det: &ScpDetector,
    model: &NetworkModel,
    trace: &ForwardTrace,
    predicted: usize,
) -> Result<RelevanceMap> {
    let counts = trace.last_layer_counts();
    let (m, score) = det.closest_centroid(&counts, predicted)?;
    let class = &det.classes[&predicted];
    let cached = class
        .backprojected
        .get(m)
        .ok_or_else(|| Error::Lookup(format!("no cached reconstruction for centroid {m}")))?;
    let q: Vec<f64> = counts.iter().map(|&c| f64::from(c)).collect();
    let query = backproject_f32(&model.dense_chain(), &q)?;
    if query.len() != cached.len() {
        return Err(Error::Shape(format!(
            "reconstruction has {} values, cached centroid {}",
            query.len(),
            cached.len()
        )));
    }
    let values = query
        .iter()
        .zip(cached)
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
        .collect();
    Ok(RelevanceMap {
        values,
        predicted_label: predicted,
        closest_centroid: m,
        score,
        score_margin: score - class.threshold,
    })
}
