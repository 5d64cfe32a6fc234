//! Architecture strings in the compact layer notation, e.g.
//! `784E-200fc0.25-LI` or
//! `784E-20conv0.2avgpool-50conv0.2-Flatten-300fc0.1-LI`.
//!
//! `<n>E` is the encoded input, `<n>fc<v_th>` a fully connected LIF layer,
//! `<n>conv<v_th>` a 3x3 convolution with `<n>` filters (an `avgpool`
//! suffix appends 2x2 average pooling), `Flatten` reshapes a feature map,
//! and `LI` is the leaky-integrator readout sized to the class count. A
//! width prefix such as `10LI` must then equal the class count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerKind};
use super::network::NetworkModel;
use super::neuron::LifParams;
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};

pub const PRESETS: [(&str, &str); 4] = [
    ("FC1", "784E-200fc0.25-LI"),
    ("FC2", "784E-300fc0.25-200fc0.25-LI"),
    (
        "CNN1",
        "784E-20conv0.2avgpool-50conv0.2-Flatten-300fc0.1-LI",
    ),
    (
        "CNN2",
        "784E-20conv0.2avgpool-50conv0.2-Flatten-500fc0.1-300fc0.05-LI",
    ),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stage {
    Encoder {
        features: usize,
    },
    Dense {
        width: usize,
        v_th: f64,
    },
    Conv {
        filters: usize,
        v_th: f64,
        pool: bool,
    },
    Flatten,
    Readout {
        width: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub notation: String,
    pub stages: Vec<Stage>,
}

fn split_number(tok: &str) -> Result<(usize, &str)> {
    let digits = tok.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return Err(Error::config(format!("layer {tok:?} has no width")));
    }
    let n = tok[..digits]
        .parse()
        .map_err(|_| Error::config(format!("bad width in {tok:?}")))?;
    Ok((n, &tok[digits..]))
}

fn parse_threshold(s: &str, tok: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| *v > 0.0)
        .ok_or_else(|| Error::config(format!("bad threshold in {tok:?}")))
}

impl Architecture {
    /// Parses a preset name (`FC1`, `FC2`, `CNN1`, `CNN2`) or a notation
    /// string.
    pub fn parse(spec: &str) -> Result<Self> {
        let notation = PRESETS
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(spec.trim()))
            .map_or(spec.trim(), |(_, n)| n)
            .to_string();
        let mut stages = Vec::new();
        for raw in notation.split('-') {
            let tok: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
            let lower = tok.to_ascii_lowercase();
            if lower == "flatten" {
                stages.push(Stage::Flatten);
                continue;
            }
            if lower == "li" {
                stages.push(Stage::Readout { width: None });
                continue;
            }
            let (n, rest) = split_number(&lower)?;
            if rest == "li" {
                stages.push(Stage::Readout { width: Some(n) });
            } else if rest == "e" {
                stages.push(Stage::Encoder { features: n });
            } else if let Some(th) = rest.strip_prefix("fc") {
                stages.push(Stage::Dense {
                    width: n,
                    v_th: parse_threshold(th, &tok)?,
                });
            } else if let Some(th) = rest.strip_prefix("conv") {
                let (th, pool) = match th.strip_suffix("avgpool") {
                    Some(t) => (t, true),
                    None => (th, false),
                };
                stages.push(Stage::Conv {
                    filters: n,
                    v_th: parse_threshold(th, &tok)?,
                    pool,
                });
            } else {
                return Err(Error::config(format!("unknown layer {tok:?}")));
            }
        }
        if !matches!(stages.first(), Some(Stage::Encoder { .. })) {
            return Err(Error::config("architecture must start with <n>E"));
        }
        if !matches!(stages.last(), Some(Stage::Readout { .. })) {
            return Err(Error::config("architecture must end with LI"));
        }
        Ok(Self { notation, stages })
    }

    /// Builds the layer stack with weights drawn uniformly from
    /// `+-1/sqrt(fan_in)`.
    pub fn build(
        &self,
        class_count: usize,
        encoder: EncoderConfig,
        init_seed: u64,
    ) -> Result<NetworkModel> {
        let Stage::Encoder { features } = self.stages[0] else {
            unreachable!("checked in parse")
        };
        let has_conv = self.stages.iter().any(|s| matches!(s, Stage::Conv { .. }));
        let side = (features as f64).sqrt().round() as usize;
        let input_shape = if side * side == features {
            (1, side, side)
        } else if has_conv {
            return Err(Error::config(format!(
                "convolution needs a square input, {features} is not"
            )));
        } else {
            (1, 1, features)
        };

        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut layers = Vec::new();
        // (channels, height, width) when spatial; width alone otherwise.
        let mut spatial = has_conv.then_some(input_shape);
        let mut width = features;
        let mut push = |kind: LayerKind, lif: Option<LifParams>, layers: &mut Vec<Layer>| {
            let fan_in = kind.fan_in().max(1) as f64;
            let bound = 1.0 / fan_in.sqrt();
            let weights = (0..kind.weight_len())
                .map(|_| rng.random_range(-bound..bound) as f32)
                .collect();
            layers.push(Layer { kind, weights, lif });
        };

        for stage in &self.stages[1..] {
            match *stage {
                Stage::Encoder { .. } => {
                    return Err(Error::config("encoder stage may only appear first"))
                }
                Stage::Conv {
                    filters,
                    v_th,
                    pool,
                } => {
                    let Some((c, h, w)) = spatial else {
                        return Err(Error::config("convolution after flatten"));
                    };
                    let kind = LayerKind::Conv2d {
                        in_channels: c,
                        filters,
                        in_height: h,
                        in_width: w,
                    };
                    push(kind, Some(LifParams::with_threshold(v_th)), &mut layers);
                    let mut shape = kind.output_shape().expect("spatial");
                    if pool {
                        let kind = LayerKind::AvgPool {
                            channels: shape.0,
                            in_height: shape.1,
                            in_width: shape.2,
                        };
                        push(kind, None, &mut layers);
                        shape = kind.output_shape().expect("spatial");
                    }
                    spatial = Some(shape);
                    width = shape.0 * shape.1 * shape.2;
                }
                Stage::Flatten => {
                    push(LayerKind::Flatten { width }, None, &mut layers);
                    spatial = None;
                }
                Stage::Dense { width: out, v_th } => {
                    if spatial.is_some() && has_conv {
                        return Err(Error::config("fully connected layer needs Flatten first"));
                    }
                    let kind = LayerKind::FullyConnected {
                        inputs: width,
                        outputs: out,
                    };
                    push(kind, Some(LifParams::with_threshold(v_th)), &mut layers);
                    width = out;
                }
                Stage::Readout { width: declared } => {
                    if let Some(w) = declared.filter(|&w| w != class_count) {
                        return Err(Error::config(format!(
                            "readout width {w} differs from class count {class_count}"
                        )));
                    }
                    if spatial.is_some() && has_conv {
                        return Err(Error::config("readout needs Flatten first"));
                    }
                    let kind = LayerKind::Readout {
                        inputs: width,
                        outputs: class_count,
                    };
                    push(
                        kind,
                        Some(LifParams::with_threshold(f64::INFINITY)),
                        &mut layers,
                    );
                    width = class_count;
                }
            }
        }
        let model = NetworkModel {
            layers,
            encoder,
            class_count,
            input_shape,
        };
        model.validate()?;
        Ok(model)
    }
}
