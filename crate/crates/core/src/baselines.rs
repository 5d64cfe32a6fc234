//! Logit-based detectors. Every score is oriented so that higher means more
//! likely out-of-distribution.

use crate::error::{Error, Result};
use crate::snn::argmax;

/// Temperatures swept for ODIN and Energy.
pub const TEMPERATURE_GRID: [f64; 6] = [1.0, 2.0, 5.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq)]
pub struct LogitRecord {
    pub logits: Vec<f64>,
    pub predicted: usize,
}

impl LogitRecord {
    pub fn new(logits: Vec<f64>) -> Self {
        let predicted = argmax(&logits);
        LogitRecord { logits, predicted }
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "temperature must be positive and finite, got {t}"
        )))
    }
}

/// Negative maximum softmax probability of `logits / t`.
fn neg_max_softmax(logits: &[f64], t: f64) -> f64 {
    let scaled = logits.iter().map(|&l| l / t);
    let m = scaled.clone().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scaled.map(|v| (v - m).exp()).sum();
    -1.0 / denom
}

pub fn msp_score(r: &LogitRecord) -> f64 {
    neg_max_softmax(&r.logits, 1.0)
}

pub fn odin_score(r: &LogitRecord, temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    Ok(neg_max_softmax(&r.logits, temperature))
}

/// `-T log sum exp(logits / T)`.
pub fn energy_score(r: &LogitRecord, temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    Ok(-temperature * log_sum_exp(r.logits.iter().map(|&l| l / temperature)))
}
