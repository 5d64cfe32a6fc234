//! Leaky integrate-and-fire and leaky integrator dynamics.
//!
//! One step of a LIF population, with `a = dt / tau_mem` and
//! `b = dt / tau_syn`:
//!
//! ```text
//! z      = H(v - v_th)                      spike on the entering voltage
//! v_r    = v - z * (v - v_reset)            jump
//! v'     = v_r + a * (v_leak - v_r + zeta)  forward Euler, membrane
//! zeta'  = zeta * (1 - b) + input           forward Euler, synapse
//! ```
//!
//! The leaky integrator is the same update without the threshold test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane time constant in seconds.
    pub tau_mem: f64,
    /// Synaptic time constant in seconds.
    pub tau_syn: f64,
    pub v_leak: f64,
    pub v_reset: f64,
    #[serde(with = "extended_f64")]
    pub v_th: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_mem: 5e-3,
            tau_syn: 10e-3,
            v_leak: 0.0,
            v_reset: 0.0,
            v_th: 1.0,
        }
    }
}

impl LifParams {
    pub fn with_threshold(v_th: f64) -> Self {
        Self {
            v_th,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_mem > 0.0 && self.tau_syn > 0.0) {
            return Err(Error::config("time constants must be positive"));
        }
        if !(self.v_th > self.v_reset) {
            return Err(Error::config(format!(
                "threshold {} must exceed reset {}",
                self.v_th, self.v_reset
            )));
        }
        Ok(())
    }

    /// `(dt / tau_mem, dt / tau_syn)`.
    pub fn rates(&self, dt: f64) -> (f64, f64) {
        (dt / self.tau_mem, dt / self.tau_syn)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    pub v: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl NeuronState {
    pub fn zeros(n: usize) -> Self {
        Self {
            v: vec![0.0; n],
            zeta: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(&self.zeta).all(|x| x.is_finite())
    }
}

fn check(state: &NeuronState, input: &[f64]) -> Result<()> {
    if state.v.len() != state.zeta.len() || state.v.len() != input.len() {
        return Err(Error::Shape(format!(
            "state of {} neurons fed {} inputs",
            state.v.len(),
            input.len()
        )));
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite input current".into()));
    }
    Ok(())
}

/// Advances a LIF population by one step, returning the new state and the
/// emitted spikes.
pub fn lif_step(
    state: &NeuronState,
    input_current: &[f64],
    p: &LifParams,
    dt: f64,
) -> Result<(NeuronState, Vec<u8>)> {
    check(state, input_current)?;
    let mut next = state.clone();
    let mut spikes = vec![0.0; state.len()];
    lif_update(
        &Heaviside,
        &mut next.v,
        &mut next.zeta,
        input_current,
        &mut spikes,
        p,
        dt,
    );
    Ok((next, spikes.into_iter().map(|z| z as u8).collect()))
}

/// Advances a leaky integrator population by one step.
pub fn li_step(
    state: &NeuronState,
    input_current: &[f64],
    p: &LifParams,
    dt: f64,
) -> Result<NeuronState> {
    check(state, input_current)?;
    let mut next = state.clone();
    li_update(&mut next.v, &mut next.zeta, input_current, p, dt);
    Ok(next)
}

/// Spike nonlinearity applied to `v - v_th`.
pub(crate) trait SpikeFn: Sync {
    fn fire(&self, over_threshold: f64) -> f64;
}

/// The step function used for simulation and inference.
pub(crate) struct Heaviside;

impl SpikeFn for Heaviside {
    #[inline]
    fn fire(&self, over_threshold: f64) -> f64 {
        if over_threshold >= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

pub(crate) fn lif_update<S: SpikeFn>(
    spike: &S,
    v: &mut [f64],
    zeta: &mut [f64],
    input: &[f64],
    spikes: &mut [f64],
    p: &LifParams,
    dt: f64,
) {
    let (a, b) = p.rates(dt);
    for i in 0..v.len() {
        let z = spike.fire(v[i] - p.v_th);
        spikes[i] = z;
        let vr = if z == 0.0 {
            v[i]
        } else if z == 1.0 {
            p.v_reset
        } else {
            v[i] - z * (v[i] - p.v_reset)
        };
        v[i] = vr + a * (p.v_leak - vr + zeta[i]);
        zeta[i] = zeta[i] * (1.0 - b) + input[i];
    }
}

pub(crate) fn li_update(v: &mut [f64], zeta: &mut [f64], input: &[f64], p: &LifParams, dt: f64) {
    let (a, b) = p.rates(dt);
    for i in 0..v.len() {
        v[i] += a * (p.v_leak - v[i] + zeta[i]);
        zeta[i] = zeta[i] * (1.0 - b) + input[i];
    }
}

/// Serde for `f64` that also carries infinities and NaN (as strings).
pub(crate) mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else if x.is_nan() {
            s.serialize_str("nan")
        } else if *x > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}
