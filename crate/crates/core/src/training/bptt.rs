use rayon::prelude::*;

use super::{surrogate_derivative, SurrogateSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::snn::{argmax, Heaviside, LayerKind, NetworkModel, SpikeFn, Tape};

/// Samples per parallel work unit. Fixed so that the reduction order, and
/// therefore the summed gradient, does not depend on the thread count.
const CHUNK: usize = 8;

/// One training example with the seed of its spike encoding.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f32],
    pub label: usize,
    pub seed: u64,
}

/// Batch-summed loss gradients, one buffer per layer (empty for layers
/// without weights), in the layer's weight layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
    /// Summed cross-entropy over the batch.
    pub loss: f64,
    /// Samples whose prediction matched the label.
    pub correct: usize,
    pub samples: usize,
}

impl Gradients {
    pub fn zeros(model: &NetworkModel) -> Self {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.kind.weight_len()])
                .collect(),
            loss: 0.0,
            correct: 0,
            samples: 0,
        }
    }

    fn clear(&mut self) {
        self.layers.iter_mut().for_each(|l| l.fill(0.0));
        self.loss = 0.0;
        self.correct = 0;
        self.samples = 0;
    }

    fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self.loss += other.loss;
        self.correct += other.correct;
        self.samples += other.samples;
    }
}

/// Cross-entropy of `softmax(logits)` against `label`, and the softmax.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    let probs = logits.iter().map(|&l| (l - lse).exp()).collect();
    (lse - logits[label], probs)
}

/// Gradients of the summed batch loss with respect to every weight.
///
/// The loss is cross-entropy on the softmax of the peak readout voltages.
/// Each peak passes its gradient to the first time step attaining it, and
/// the spike function's derivative is replaced by the surrogate.
pub fn bptt_gradients(
    model: &NetworkModel,
    batch: &[Sample<'_>],
    cfg: &TrainConfig,
) -> Result<Gradients> {
    bptt_with(model, &Heaviside, batch, cfg.surrogate())
}

pub(crate) fn bptt_with<S: SpikeFn>(
    model: &NetworkModel,
    spike: &S,
    batch: &[Sample<'_>],
    surrogate: SurrogateSpec,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    for s in batch {
        if s.label >= model.class_count {
            return Err(Error::arg(format!(
                "label {} outside {} classes",
                s.label, model.class_count
            )));
        }
    }
    let partial: Vec<Result<Gradients>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            // Every sample gets its own buffer so the batch total is an
            // exact sum of per-sample gradients.
            let mut g = Gradients::zeros(model);
            let mut one = Gradients::zeros(model);
            for s in chunk {
                one.clear();
                accumulate_sample(model, spike, s, surrogate, &mut one)?;
                g.add(&one);
            }
            Ok(g)
        })
        .collect();
    let mut total = Gradients::zeros(model);
    for g in partial {
        total.add(&g?);
    }
    Ok(total)
}

fn accumulate_sample<S: SpikeFn>(
    model: &NetworkModel,
    spike: &S,
    sample: &Sample<'_>,
    surrogate: SurrogateSpec,
    out: &mut Gradients,
) -> Result<()> {
    let mut tape = Tape::default();
    let trace = model.run_with(spike, sample.x, sample.seed, Some(&mut tape))?;
    let logits = trace.logits();
    let (loss, probs) = cross_entropy(&logits, sample.label);
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    out.loss += loss;
    out.samples += 1;
    if argmax(&logits) == sample.label {
        out.correct += 1;
    }

    let steps = trace.steps;
    let classes = trace.class_count;
    let mut peak_step = vec![0usize; classes];
    for (c, best) in peak_step.iter_mut().enumerate() {
        for t in 1..steps {
            if trace.readout(t, c) > trace.readout(*best, c) {
                *best = t;
            }
        }
    }

    let dt = model.encoder.dt;
    let layers = &model.layers;
    let n = layers.len();
    let state_len = |l: usize| {
        if layers[l].lif.is_some() {
            layers[l].kind.output_len()
        } else {
            0
        }
    };
    // Adjoints of v and zeta after the step being processed.
    let mut gv: Vec<Vec<f64>> = (0..n).map(|l| vec![0.0; state_len(l)]).collect();
    let mut gzeta: Vec<Vec<f64>> = (0..n).map(|l| vec![0.0; state_len(l)]).collect();
    // g_act[l + 1] is the adjoint of layer l's output at the current step.
    let mut g_act: Vec<Vec<f64>> = std::iter::once(model.input_len())
        .chain(layers.iter().map(|l| l.kind.output_len()))
        .map(|w| vec![0.0; w])
        .collect();

    for t in (0..steps).rev() {
        for l in (0..n).rev() {
            let layer = &layers[l];
            let (below, here) = g_act.split_at_mut(l + 1);
            let g_below = &mut below[l];
            let g_here = &here[0];
            let in_len = layer.kind.input_len();
            match layer.kind {
                LayerKind::Readout { .. } => {
                    let p = layer.lif.as_ref().expect("validated");
                    let (a, b) = p.rates(dt);
                    for c in 0..classes {
                        if peak_step[c] == t {
                            let y = if c == sample.label { 1.0 } else { 0.0 };
                            gv[l][c] += probs[c] - y;
                        }
                    }
                    let x = &tape.inputs[l][t * in_len..(t + 1) * in_len];
                    layer.accumulate_weight_grad(x, &gzeta[l], &mut out.layers[l]);
                    if l > 0 {
                        layer.backward_input(&gzeta[l], g_below);
                    }
                    for (v, z) in gv[l].iter_mut().zip(gzeta[l].iter_mut()) {
                        let (gvn, gzn) = (*v, *z);
                        *z = (1.0 - b) * gzn + a * gvn;
                        *v = (1.0 - a) * gvn;
                    }
                }
                LayerKind::FullyConnected { .. } | LayerKind::Conv2d { .. } => {
                    let p = layer.lif.as_ref().expect("validated");
                    let (a, b) = p.rates(dt);
                    let w = layer.kind.output_len();
                    let x = &tape.inputs[l][t * in_len..(t + 1) * in_len];
                    layer.accumulate_weight_grad(x, &gzeta[l], &mut out.layers[l]);
                    if l > 0 {
                        layer.backward_input(&gzeta[l], g_below);
                    }
                    let vs = &tape.v[l][t * w..(t + 1) * w];
                    let zs = &tape.z[l][t * w..(t + 1) * w];
                    for i in 0..w {
                        let (gvn, gzn) = (gv[l][i], gzeta[l][i]);
                        let g_reset = (1.0 - a) * gvn;
                        let g_spike = g_here[i] - g_reset * (vs[i] - p.v_reset);
                        let sigma = surrogate_derivative(vs[i], p.v_th, surrogate);
                        let through_spike = if sigma == 0.0 { 0.0 } else { g_spike * sigma };
                        gv[l][i] = g_reset * (1.0 - zs[i]) + through_spike;
                        gzeta[l][i] = (1.0 - b) * gzn + a * gvn;
                    }
                }
                LayerKind::AvgPool { .. } | LayerKind::Flatten { .. } => {
                    if l > 0 {
                        layer.backward_input(g_here, g_below);
                    }
                }
            }
        }
    }
    Ok(())
}
