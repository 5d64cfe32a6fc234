//! Out-of-distribution scorers selectable by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::baselines::{energy_score, msp_score, odin_score, LogitRecord, TEMPERATURE_GRID};
use crate::error::{Error, Result};
use crate::scp::ScpDetector;

/// What a scorer may inspect about one simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub logits: Vec<f64>,
    pub predicted: usize,
    /// Spike counts of the last spiking layer.
    pub counts: Vec<u32>,
}

pub trait OodScorer: Send + Sync {
    /// Column label, e.g. `msp` or `energy_t10`.
    fn name(&self) -> String;
    /// Higher means more likely out-of-distribution.
    fn score(&self, obs: &Observation) -> Result<f64>;
}

/// Everything a scorer family may need at construction.
#[derive(Clone, Default)]
pub struct ScorerContext {
    pub detector: Option<Arc<ScpDetector>>,
    pub temperatures: Vec<f64>,
}

impl ScorerContext {
    fn temperatures(&self) -> &[f64] {
        if self.temperatures.is_empty() {
            &TEMPERATURE_GRID
        } else {
            &self.temperatures
        }
    }
}

struct Scp(Arc<ScpDetector>);

impl OodScorer for Scp {
    fn name(&self) -> String {
        "scp".into()
    }
    fn score(&self, obs: &Observation) -> Result<f64> {
        self.0.score_counts(&obs.counts, obs.predicted)
    }
}

struct Msp;

impl OodScorer for Msp {
    fn name(&self) -> String {
        "msp".into()
    }
    fn score(&self, obs: &Observation) -> Result<f64> {
        Ok(msp_score(&LogitRecord::new(obs.logits.clone())))
    }
}

struct Odin(f64);

impl OodScorer for Odin {
    fn name(&self) -> String {
        format!("odin_t{}", self.0)
    }
    fn score(&self, obs: &Observation) -> Result<f64> {
        odin_score(&LogitRecord::new(obs.logits.clone()), self.0)
    }
}

struct Energy(f64);

impl OodScorer for Energy {
    fn name(&self) -> String {
        format!("energy_t{}", self.0)
    }
    fn score(&self, obs: &Observation) -> Result<f64> {
        energy_score(&LogitRecord::new(obs.logits.clone()), self.0)
    }
}

type Builder = fn(&ScorerContext) -> Result<Vec<Box<dyn OodScorer>>>;

/// Scorer families by name. Temperature-scaled families expand into one
/// scorer per temperature.
pub struct DetectorRegistry {
    builders: BTreeMap<String, Builder>,
}

impl Default for DetectorRegistry {
    fn default() -> Self {
        let mut r = DetectorRegistry {
            builders: BTreeMap::new(),
        };
        r.register("scp", |ctx| {
            let det = ctx
                .detector
                .clone()
                .ok_or_else(|| Error::config("scp scorer needs a fitted detector"))?;
            Ok(vec![Box::new(Scp(det))])
        });
        r.register("msp", |_| Ok(vec![Box::new(Msp)]));
        r.register("odin", |ctx| {
            Ok(ctx
                .temperatures()
                .iter()
                .map(|&t| Box::new(Odin(t)) as Box<dyn OodScorer>)
                .collect())
        });
        r.register("energy", |ctx| {
            Ok(ctx
                .temperatures()
                .iter()
                .map(|&t| Box::new(Energy(t)) as Box<dyn OodScorer>)
                .collect())
        });
        r
    }
}

impl DetectorRegistry {
    pub fn register(&mut self, family: &str, build: Builder) {
        self.builders.insert(family.to_string(), build);
    }

    pub fn families(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, family: &str, ctx: &ScorerContext) -> Result<Vec<Box<dyn OodScorer>>> {
        let build = self.builders.get(family).ok_or_else(|| {
            Error::config(format!(
                "unknown detector '{family}', expected one of {:?}",
                self.families()
            ))
        })?;
        build(ctx)
    }
}

/// Family of a scorer column name (`energy_t10` -> `energy`).
pub fn family_of(name: &str) -> &str {
    name.split_once("_t").map_or(name, |(f, _)| f)
}
