//! Poisson rate coding of normalized features into binary spike rasters.
//!
//! Every feature fires at step `t` with probability `x_d * r_max * dt`. The
//! uniform draws come from a ChaCha stream keyed by the encoder seed and the
//! sample index, consumed in `(step, feature)` order, so a raster depends
//! only on `(seed, sample, feature, step)` and never on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Maximum firing rate in spikes per second.
    pub r_max: f64,
    /// Step width in seconds.
    pub dt: f64,
    /// Simulated window in seconds.
    pub sim_time: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            r_max: 1000.0,
            dt: 1e-3,
            sim_time: 50e-3,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.sim_time > 0.0 && self.r_max >= 0.0) {
            return Err(Error::config(format!("invalid encoder timing {self:?}")));
        }
        if self.r_max * self.dt > 1.0 + 1e-12 {
            return Err(Error::config(format!(
                "r_max * dt = {} would allow more than one spike per step",
                self.r_max * self.dt
            )));
        }
        let steps = self.sim_time / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) || steps.round() < 1.0 {
            return Err(Error::config(format!(
                "simulation time {} is not a whole number of {} steps",
                self.sim_time, self.dt
            )));
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        (self.sim_time / self.dt).round() as usize
    }

    /// Per-step firing probability at full intensity.
    pub fn max_probability(&self) -> f64 {
        (self.r_max * self.dt).min(1.0)
    }
}

/// Binary `steps x width` spike tensor, row-major by step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeRaster {
    steps: usize,
    width: usize,
    bits: Vec<u8>,
}

impl SpikeRaster {
    pub fn zeros(steps: usize, width: usize) -> Self {
        Self {
            steps,
            width,
            bits: vec![0; steps * width],
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, t: usize, d: usize) -> u8 {
        self.bits[t * self.width + d]
    }

    pub fn set(&mut self, t: usize, d: usize, spike: bool) {
        self.bits[t * self.width + d] = u8::from(spike);
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.bits[t * self.width..(t + 1) * self.width]
    }

    pub(crate) fn row_mut(&mut self, t: usize) -> &mut [u8] {
        &mut self.bits[t * self.width..(t + 1) * self.width]
    }

    /// Spike count of every column over the whole window.
    pub fn counts(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.width];
        for t in 0..self.steps {
            for (c, &b) in out.iter_mut().zip(self.row(t)) {
                *c += u32::from(b);
            }
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.bits.iter().map(|&b| u64::from(b)).sum()
    }

    /// CSV with one row per step and one 0/1 column per feature.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.bits.len() * 2 + 16);
        for d in 0..self.width {
            if d > 0 {
                s.push(',');
            }
            s.push_str(&format!("f{d}"));
        }
        s.push('\n');
        for t in 0..self.steps {
            for (d, b) in self.row(t).iter().enumerate() {
                if d > 0 {
                    s.push(',');
                }
                s.push(if *b == 1 { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

fn check_features(x: &[f32]) -> Result<()> {
    match x.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(d) => Err(Error::arg(format!("feature {d} = {} outside [0,1]", x[d]))),
        None => Ok(()),
    }
}

/// Encodes one sample. `sample_index` selects the random stream.
pub fn poisson_encode(x: &[f32], cfg: &EncoderConfig, sample_index: u64) -> Result<SpikeRaster> {
    cfg.validate()?;
    check_features(x)?;
    let mut raster = SpikeRaster::zeros(cfg.step_count(), x.len());
    let mut rng = encoder_rng(cfg, sample_index);
    let scale = cfg.max_probability();
    for t in 0..raster.steps {
        fill_step(raster.row_mut(t), x, scale, &mut rng);
    }
    Ok(raster)
}

pub(crate) fn encoder_rng(cfg: &EncoderConfig, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(sample_index);
    rng
}

/// Draws one step of spikes. Consumes exactly one uniform per feature.
pub(crate) fn fill_step(out: &mut [u8], x: &[f32], scale: f64, rng: &mut ChaCha8Rng) {
    for (o, &xd) in out.iter_mut().zip(x) {
        let u: f64 = rng.random();
        *o = u8::from(u < f64::from(xd) * scale);
    }
}
