//! Layer kinds and their linear maps.
//!
//! Weight layouts:
//! - fully connected and readout: input-major, `w[i * outputs + o]`, i.e.
//!   the transpose of the usual `out x in` matrix, so that a sparse spike
//!   vector selects contiguous rows;
//! - convolution: `w[((f * in_c + c) * 3 + ki) * 3 + kj]`, 3x3 valid
//!   cross-correlation with stride 1.

use serde::{Deserialize, Serialize};

use super::neuron::LifParams;
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
pub const POOL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        filters: usize,
        in_height: usize,
        in_width: usize,
    },
    AvgPool {
        channels: usize,
        in_height: usize,
        in_width: usize,
    },
    Flatten {
        width: usize,
    },
    Readout {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerKind {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerKind::FullyConnected { inputs, .. } | LayerKind::Readout { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels,
                in_height,
                in_width,
                ..
            } => in_channels * in_height * in_width,
            LayerKind::AvgPool {
                channels,
                in_height,
                in_width,
            } => channels * in_height * in_width,
            LayerKind::Flatten { width } => width,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerKind::FullyConnected { outputs, .. } | LayerKind::Readout { outputs, .. } => {
                outputs
            }
            LayerKind::Conv2d {
                filters,
                in_height,
                in_width,
                ..
            } => filters * (in_height - KERNEL + 1) * (in_width - KERNEL + 1),
            LayerKind::AvgPool {
                channels,
                in_height,
                in_width,
            } => channels * (in_height / POOL) * (in_width / POOL),
            LayerKind::Flatten { width } => width,
        }
    }

    /// `(channels, height, width)` of the output feature map, when spatial.
    pub fn output_shape(&self) -> Option<(usize, usize, usize)> {
        match *self {
            LayerKind::Conv2d {
                filters,
                in_height,
                in_width,
                ..
            } => Some((filters, in_height - KERNEL + 1, in_width - KERNEL + 1)),
            LayerKind::AvgPool {
                channels,
                in_height,
                in_width,
            } => Some((channels, in_height / POOL, in_width / POOL)),
            _ => None,
        }
    }

    pub fn weight_len(&self) -> usize {
        match *self {
            LayerKind::FullyConnected { inputs, outputs }
            | LayerKind::Readout { inputs, outputs } => inputs * outputs,
            LayerKind::Conv2d {
                in_channels,
                filters,
                ..
            } => filters * in_channels * KERNEL * KERNEL,
            LayerKind::AvgPool { .. } | LayerKind::Flatten { .. } => 0,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::FullyConnected { inputs, .. } | LayerKind::Readout { inputs, .. } => inputs,
            LayerKind::Conv2d { in_channels, .. } => in_channels * KERNEL * KERNEL,
            _ => 0,
        }
    }

    /// Layers followed by LIF neurons.
    pub fn is_spiking(&self) -> bool {
        matches!(
            self,
            LayerKind::FullyConnected { .. } | LayerKind::Conv2d { .. }
        )
    }

    pub fn has_weights(&self) -> bool {
        self.weight_len() > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub weights: Vec<f32>,
    /// Neuron parameters for spiking layers and the readout integrator.
    pub lif: Option<LifParams>,
}

impl Layer {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.kind.weight_len() {
            return Err(Error::config(format!(
                "{:?} expects {} weights, has {}",
                self.kind,
                self.kind.weight_len(),
                self.weights.len()
            )));
        }
        if let LayerKind::Conv2d {
            in_height,
            in_width,
            ..
        } = self.kind
        {
            if in_height < KERNEL || in_width < KERNEL {
                return Err(Error::config("feature map smaller than kernel"));
            }
        }
        if let LayerKind::AvgPool {
            in_height,
            in_width,
            ..
        } = self.kind
        {
            if in_height % POOL != 0 || in_width % POOL != 0 {
                return Err(Error::config(format!(
                    "pooling needs even map sides, got {in_height}x{in_width}"
                )));
            }
        }
        match (&self.kind, &self.lif) {
            (k, None) if k.is_spiking() || matches!(k, LayerKind::Readout { .. }) => {
                Err(Error::config(format!("{k:?} needs neuron parameters")))
            }
            (_, Some(p)) if self.kind.is_spiking() => p.validate(),
            _ => Ok(()),
        }
    }

    /// `out = W x`, overwriting `out`.
    pub(crate) fn forward_linear(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match self.kind {
            LayerKind::FullyConnected { outputs, .. } | LayerKind::Readout { outputs, .. } => {
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let row = &self.weights[i * outputs..(i + 1) * outputs];
                    for (o, &w) in out.iter_mut().zip(row) {
                        *o += xi * f64::from(w);
                    }
                }
            }
            LayerKind::Conv2d {
                in_channels,
                filters,
                in_height,
                in_width,
            } => {
                let (oh, ow) = (in_height - KERNEL + 1, in_width - KERNEL + 1);
                for c in 0..in_channels {
                    for y in 0..in_height {
                        for xx in 0..in_width {
                            let val = x[(c * in_height + y) * in_width + xx];
                            if val == 0.0 {
                                continue;
                            }
                            for ki in 0..KERNEL {
                                if y < ki || y - ki >= oh {
                                    continue;
                                }
                                let i = y - ki;
                                for kj in 0..KERNEL {
                                    if xx < kj || xx - kj >= ow {
                                        continue;
                                    }
                                    let j = xx - kj;
                                    for f in 0..filters {
                                        let w = self.weights
                                            [((f * in_channels + c) * KERNEL + ki) * KERNEL + kj];
                                        out[(f * oh + i) * ow + j] += val * f64::from(w);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::AvgPool {
                channels,
                in_height,
                in_width,
            } => {
                let (oh, ow) = (in_height / POOL, in_width / POOL);
                let norm = 1.0 / (POOL * POOL) as f64;
                for c in 0..channels {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut s = 0.0;
                            for di in 0..POOL {
                                for dj in 0..POOL {
                                    s += x[(c * in_height + i * POOL + di) * in_width
                                        + j * POOL
                                        + dj];
                                }
                            }
                            out[(c * oh + i) * ow + j] = s * norm;
                        }
                    }
                }
            }
            LayerKind::Flatten { .. } => out.copy_from_slice(x),
        }
    }

    /// Accumulates `dL/dW` given the layer input `x` and `dL/d(Wx)`.
    pub(crate) fn accumulate_weight_grad(&self, x: &[f64], g_out: &[f64], grad: &mut [f64]) {
        match self.kind {
            LayerKind::FullyConnected { outputs, .. } | LayerKind::Readout { outputs, .. } => {
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let row = &mut grad[i * outputs..(i + 1) * outputs];
                    for (g, &go) in row.iter_mut().zip(g_out) {
                        *g += xi * go;
                    }
                }
            }
            LayerKind::Conv2d {
                in_channels,
                filters,
                in_height,
                in_width,
            } => {
                let (oh, ow) = (in_height - KERNEL + 1, in_width - KERNEL + 1);
                for c in 0..in_channels {
                    for y in 0..in_height {
                        for xx in 0..in_width {
                            let val = x[(c * in_height + y) * in_width + xx];
                            if val == 0.0 {
                                continue;
                            }
                            for ki in 0..KERNEL {
                                if y < ki || y - ki >= oh {
                                    continue;
                                }
                                let i = y - ki;
                                for kj in 0..KERNEL {
                                    if xx < kj || xx - kj >= ow {
                                        continue;
                                    }
                                    let j = xx - kj;
                                    for f in 0..filters {
                                        grad[((f * in_channels + c) * KERNEL + ki) * KERNEL
                                            + kj] += val * g_out[(f * oh + i) * ow + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }

    /// `g_in = J^T g_out` for the layer's linear map, overwriting `g_in`.
    pub(crate) fn backward_input(&self, g_out: &[f64], g_in: &mut [f64]) {
        g_in.fill(0.0);
        match self.kind {
            LayerKind::FullyConnected { outputs, .. } | LayerKind::Readout { outputs, .. } => {
                for (i, gi) in g_in.iter_mut().enumerate() {
                    let row = &self.weights[i * outputs..(i + 1) * outputs];
                    *gi = row.iter().zip(g_out).map(|(&w, &g)| f64::from(w) * g).sum();
                }
            }
            LayerKind::Conv2d {
                in_channels,
                filters,
                in_height,
                in_width,
            } => {
                let (oh, ow) = (in_height - KERNEL + 1, in_width - KERNEL + 1);
                for f in 0..filters {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = g_out[(f * oh + i) * ow + j];
                            if g == 0.0 {
                                continue;
                            }
                            for c in 0..in_channels {
                                for ki in 0..KERNEL {
                                    for kj in 0..KERNEL {
                                        let w = self.weights
                                            [((f * in_channels + c) * KERNEL + ki) * KERNEL + kj];
                                        g_in[(c * in_height + i + ki) * in_width + j + kj] +=
                                            f64::from(w) * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::AvgPool {
                channels,
                in_height,
                in_width,
            } => {
                let (oh, ow) = (in_height / POOL, in_width / POOL);
                let norm = 1.0 / (POOL * POOL) as f64;
                for c in 0..channels {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = g_out[(c * oh + i) * ow + j] * norm;
                            for di in 0..POOL {
                                for dj in 0..POOL {
                                    g_in[(c * in_height + i * POOL + di) * in_width
                                        + j * POOL
                                        + dj] = g;
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Flatten { .. } => g_in.copy_from_slice(g_out),
        }
    }

    /// Weight at row `o`, column `i` of the `out x in` matrix of a dense
    /// layer.
    pub fn dense_weight(&self, o: usize, i: usize) -> f32 {
        match self.kind {
            LayerKind::FullyConnected { outputs, .. } | LayerKind::Readout { outputs, .. } => {
                self.weights[i * outputs + o]
            }
            _ => panic!("dense_weight on {:?}", self.kind),
        }
    }
}
