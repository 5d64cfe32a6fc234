use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snn::NetworkModel;

/// How feature maps are collapsed across filters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Sum,
}

/// Row-major image-sized relevance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Renders relevance values in the input's geometry. Dense models unflatten
/// row-major; convolutional models collapse the feature maps across filters
/// and upsample bilinearly to the input size.
pub fn to_heatmap(
    values: &[f64],
    model: &NetworkModel,
    aggregation: Aggregation,
) -> Result<Heatmap> {
    let (_, height, width) = model.input_shape;
    match model.feature_map_shape() {
        None => {
            if values.len() != height * width {
                return Err(Error::Shape(format!(
                    "{} relevance values for a {height}x{width} input",
                    values.len()
                )));
            }
            Ok(Heatmap {
                height,
                width,
                values: values.to_vec(),
            })
        }
        Some((filters, fh, fw)) => {
            if values.len() != filters * fh * fw {
                return Err(Error::Shape(format!(
                    "{} relevance values for {filters}x{fh}x{fw} feature maps",
                    values.len()
                )));
            }
            let mut plane = vec![0.0; fh * fw];
            for map in values.chunks(fh * fw) {
                for (p, v) in plane.iter_mut().zip(map) {
                    *p += v;
                }
            }
            if aggregation == Aggregation::Mean {
                plane.iter_mut().for_each(|p| *p /= filters as f64);
            }
            Ok(Heatmap {
                height,
                width,
                values: bilinear(&plane, fh, fw, height, width),
            })
        }
    }
}

/// Bilinear resampling with pixel centres aligned and edge clamping.
fn bilinear(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let axis = |d: usize, s: usize, n: usize| {
        let x = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(s - 1);
        (i0, i1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for r in 0..dh {
        let (r0, r1, fr) = axis(r, sh, dh);
        for c in 0..dw {
            let (c0, c1, fc) = axis(c, sw, dw);
            let top = src[r0 * sw + c0] * (1.0 - fc) + src[r0 * sw + c1] * fc;
            let bottom = src[r1 * sw + c0] * (1.0 - fc) + src[r1 * sw + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// `[q-quantile, max]` over every pixel of `maps`, quantile by linear
/// interpolation between order statistics.
pub fn display_range(maps: &[Heatmap], q: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::arg(format!("quantile {q} outside [0, 1]")));
    }
    let mut all: Vec<f64> = maps.iter().flat_map(|m| m.values.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::arg("no heatmap values"));
    }
    all.sort_by(f64::total_cmp);
    let pos = q * (all.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let quantile = all[lo] + (all[hi] - all[lo]) * (pos - lo as f64);
    Ok((quantile, *all.last().expect("non-empty")))
}

/// Binary 8-bit PGM with values clipped to `range` and scaled to 0..=255.
pub fn write_pgm(path: &Path, map: &Heatmap, range: (f64, f64)) -> Result<()> {
    let (lo, hi) = range;
    let span = hi - lo;
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{} {}\n255\n", map.width, map.height)?;
    let bytes: Vec<u8> = map
        .values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v.clamp(lo, hi) - lo) / span) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Un-clipped values as `row,col,value`.
pub fn write_csv(path: &Path, map: &Heatmap) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "col", "value"])?;
    for r in 0..map.height {
        for c in 0..map.width {
            w.write_record([r.to_string(), c.to_string(), map.get(r, c).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
