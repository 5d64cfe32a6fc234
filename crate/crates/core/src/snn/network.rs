use super::layer::{Layer, LayerKind};
use super::neuron::{li_update, lif_update, Heaviside, NeuronState, SpikeFn};
use crate::encoding::{encoder_rng, fill_step, EncoderConfig, SpikeRaster};
use crate::error::{Error, Result};

/// An ordered stack of layers ending in a leaky-integrator readout.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub layers: Vec<Layer>,
    pub encoder: EncoderConfig,
    pub class_count: usize,
    /// `(channels, height, width)` of the encoded input.
    pub input_shape: (usize, usize, usize),
}

/// Spikes of every spiking layer plus the readout voltage trajectory of one
/// simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub spikes_per_layer: Vec<SpikeRaster>,
    /// Row-major `steps x class_count`.
    pub readout_voltage: Vec<f64>,
    pub steps: usize,
    pub class_count: usize,
}

impl ForwardTrace {
    pub fn readout(&self, t: usize, c: usize) -> f64 {
        self.readout_voltage[t * self.class_count + c]
    }

    /// Raster of the spiking layer feeding the readout.
    ///
    /// # Panics
    /// If the network has no spiking layer.
    pub fn last_spiking(&self) -> &SpikeRaster {
        self.spikes_per_layer
            .last()
            .expect("network has at least one spiking layer")
    }

    /// Per-neuron spike counts of the last spiking layer.
    pub fn last_layer_counts(&self) -> Vec<u32> {
        self.last_spiking().counts()
    }

    /// Peak readout voltage of every class over the window.
    pub fn logits(&self) -> Vec<f64> {
        (0..self.class_count)
            .map(|c| {
                (0..self.steps)
                    .map(|t| self.readout(t, c))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub label: usize,
    pub trace: ForwardTrace,
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Values recorded during a forward pass that the backward pass needs.
/// All buffers are flattened `steps x width` per layer.
#[derive(Debug, Default)]
pub(crate) struct Tape {
    /// Layer input at each step (weighted layers only).
    pub inputs: Vec<Vec<f64>>,
    /// Membrane voltage entering each step (spiking layers only).
    pub v: Vec<Vec<f64>>,
    /// Spike function output (spiking layers only).
    pub z: Vec<Vec<f64>>,
}

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let Some(last) = self.layers.last() else {
            return Err(Error::config("network has no layers"));
        };
        let readouts = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Readout { .. }))
            .count();
        if readouts != 1 || !matches!(last.kind, LayerKind::Readout { .. }) {
            return Err(Error::config("exactly one readout layer, placed last"));
        }
        if last.kind.output_len() != self.class_count {
            return Err(Error::config(format!(
                "readout width {} differs from class count {}",
                last.kind.output_len(),
                self.class_count
            )));
        }
        let (c, h, w) = self.input_shape;
        let mut width = c * h * w;
        for layer in &self.layers {
            layer.validate()?;
            if layer.kind.input_len() != width {
                return Err(Error::config(format!(
                    "{:?} expects {} inputs, previous stage yields {width}",
                    layer.kind,
                    layer.kind.input_len()
                )));
            }
            width = layer.kind.output_len();
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        let (c, h, w) = self.input_shape;
        c * h * w
    }

    pub fn steps(&self) -> usize {
        self.encoder.step_count()
    }

    /// Indices of spiking layers in order.
    pub fn spiking_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| self.layers[i].kind.is_spiking())
            .collect()
    }

    pub fn last_spiking_index(&self) -> Option<usize> {
        self.spiking_layers().last().copied()
    }

    /// Width of the last spiking layer (0 when there is none).
    pub fn last_spiking_width(&self) -> usize {
        self.last_spiking_index()
            .map_or(0, |i| self.layers[i].kind.output_len())
    }

    /// Fully connected layers from the first one up to the last spiking
    /// layer, in forward order.
    pub fn dense_chain(&self) -> Vec<&Layer> {
        let Some(last) = self.last_spiking_index() else {
            return Vec::new();
        };
        self.layers[..=last]
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::FullyConnected { .. }))
            .collect()
    }

    /// Shape of the feature map entering the first fully connected layer,
    /// or `None` when that layer reads the encoded input directly.
    pub fn feature_map_shape(&self) -> Option<(usize, usize, usize)> {
        let first_fc = self
            .layers
            .iter()
            .position(|l| matches!(l.kind, LayerKind::FullyConnected { .. }))?;
        self.layers[..first_fc]
            .iter()
            .rev()
            .find_map(|l| l.kind.output_shape())
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::config(format!(
                "input of {} features, network expects {}",
                x.len(),
                self.input_len()
            )));
        }
        if let Some(d) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg(format!("feature {d} = {} outside [0,1]", x[d])));
        }
        Ok(())
    }

    /// Encodes `x` and runs every layer for the whole window.
    pub fn simulate(&self, x: &[f32], sample_seed: u64) -> Result<ForwardTrace> {
        self.run(x, sample_seed, None)
    }

    pub fn predict(&self, x: &[f32], sample_seed: u64) -> Result<Prediction> {
        let trace = self.simulate(x, sample_seed)?;
        let logits = trace.logits();
        let label = argmax(&logits);
        Ok(Prediction {
            logits,
            label,
            trace,
        })
    }

    pub(crate) fn run(
        &self,
        x: &[f32],
        sample_seed: u64,
        tape: Option<&mut Tape>,
    ) -> Result<ForwardTrace> {
        self.run_with(&Heaviside, x, sample_seed, tape)
    }

    pub(crate) fn run_with<S: SpikeFn>(
        &self,
        spike: &S,
        x: &[f32],
        sample_seed: u64,
        mut tape: Option<&mut Tape>,
    ) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let steps = self.steps();
        let dt = self.encoder.dt;
        let classes = self.class_count;
        let n = self.layers.len();
        let mut rng = encoder_rng(&self.encoder, sample_seed);
        let scale = self.encoder.max_probability();

        // acts[0] is the encoded input, acts[l + 1] the output of layer l.
        let mut acts: Vec<Vec<f64>> = std::iter::once(x.len())
            .chain(self.layers.iter().map(|l| l.kind.output_len()))
            .map(|w| vec![0.0; w])
            .collect();
        let mut currents: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| {
                if l.lif.is_some() {
                    vec![0.0; l.kind.output_len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let mut states: Vec<NeuronState> = self
            .layers
            .iter()
            .map(|l| {
                NeuronState::zeros(if l.lif.is_some() {
                    l.kind.output_len()
                } else {
                    0
                })
            })
            .collect();
        let mut spikes: Vec<Vec<f64>> = self
            .layers
            .iter()
            .map(|l| {
                vec![
                    0.0;
                    if l.kind.is_spiking() {
                        l.kind.output_len()
                    } else {
                        0
                    }
                ]
            })
            .collect();
        let mut rasters: Vec<SpikeRaster> = self
            .layers
            .iter()
            .filter(|l| l.kind.is_spiking())
            .map(|l| SpikeRaster::zeros(steps, l.kind.output_len()))
            .collect();
        let mut voltage = vec![0.0; steps * classes];
        let mut input_bits = vec![0u8; x.len()];

        if let Some(tape) = tape.as_deref_mut() {
            tape.inputs = vec![Vec::new(); n];
            tape.v = vec![Vec::new(); n];
            tape.z = vec![Vec::new(); n];
            for (l, layer) in self.layers.iter().enumerate() {
                if layer.kind.has_weights() {
                    tape.inputs[l].reserve(steps * layer.kind.input_len());
                }
                if layer.kind.is_spiking() {
                    tape.v[l].reserve(steps * layer.kind.output_len());
                    tape.z[l].reserve(steps * layer.kind.output_len());
                }
            }
        }

        for t in 0..steps {
            fill_step(&mut input_bits, x, scale, &mut rng);
            for (a, &b) in acts[0].iter_mut().zip(&input_bits) {
                *a = f64::from(b);
            }
            let mut raster_idx = 0;
            for (l, layer) in self.layers.iter().enumerate() {
                let (lo, hi) = acts.split_at_mut(l + 1);
                let inp = &lo[l];
                let out = &mut hi[0];
                if let Some(tape) = tape.as_deref_mut() {
                    if layer.kind.has_weights() {
                        tape.inputs[l].extend_from_slice(inp);
                    }
                }
                match layer.kind {
                    LayerKind::FullyConnected { .. } | LayerKind::Conv2d { .. } => {
                        let p = layer.lif.as_ref().expect("validated");
                        layer.forward_linear(inp, &mut currents[l]);
                        let st = &mut states[l];
                        if let Some(tape) = tape.as_deref_mut() {
                            tape.v[l].extend_from_slice(&st.v);
                        }
                        lif_update(
                            spike,
                            &mut st.v,
                            &mut st.zeta,
                            &currents[l],
                            &mut spikes[l],
                            p,
                            dt,
                        );
                        if let Some(tape) = tape.as_deref_mut() {
                            tape.z[l].extend_from_slice(&spikes[l]);
                        }
                        for (bit, &z) in rasters[raster_idx].row_mut(t).iter_mut().zip(&spikes[l]) {
                            *bit = u8::from(z >= 0.5);
                        }
                        raster_idx += 1;
                        out.copy_from_slice(&spikes[l]);
                    }
                    LayerKind::Readout { .. } => {
                        let p = layer.lif.as_ref().expect("validated");
                        layer.forward_linear(inp, &mut currents[l]);
                        let st = &mut states[l];
                        li_update(&mut st.v, &mut st.zeta, &currents[l], p, dt);
                        voltage[t * classes..(t + 1) * classes].copy_from_slice(&st.v);
                        out.copy_from_slice(&st.v);
                    }
                    LayerKind::AvgPool { .. } | LayerKind::Flatten { .. } => {
                        layer.forward_linear(inp, out);
                    }
                }
            }
        }

        if voltage.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("readout voltage diverged".into()));
        }
        Ok(ForwardTrace {
            spikes_per_layer: rasters,
            readout_voltage: voltage,
            steps,
            class_count: classes,
        })
    }
}
