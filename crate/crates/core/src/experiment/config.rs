use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::Aggregation;
use crate::baselines::TEMPERATURE_GRID;
use crate::data::read_idx_labels;
use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::registry::DetectorRegistry;
use crate::scp::DetectorConfig;
use crate::snn::Architecture;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Synthesis {
    /// MNIST-Square built from the in-distribution test images.
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSpec {
    pub name: String,
    #[serde(default)]
    pub images: Option<PathBuf>,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub synthesize: Option<Synthesis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub surrogate_beta: f64,
    /// Stratified subset of the training split; the whole split when absent.
    pub subset: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            surrogate_beta: t.surrogate_beta,
            subset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSettings {
    pub per_class: usize,
    pub target_tpr: f64,
    pub max_clusters: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        let d = DetectorConfig::default();
        DetectorSettings {
            per_class: d.per_class,
            target_tpr: d.target_tpr,
            max_clusters: d.max_clusters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    /// Stratified subset of the in-distribution test split.
    pub id_test_samples: Option<usize>,
    /// Stratified subset of every OoD dataset.
    pub ood_samples: Option<usize>,
    /// TPR at which the FPR column is reported.
    pub fpr_tpr: f64,
    pub temperatures: Vec<f64>,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            id_test_samples: Some(2000),
            ood_samples: Some(2000),
            fpr_tpr: 0.95,
            temperatures: TEMPERATURE_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSettings {
    /// Heatmaps rendered per OoD dataset, taken from flagged samples.
    pub samples: usize,
    /// Training samples whose heatmaps set the display range.
    pub range_samples: usize,
    pub aggregation: Aggregation,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        AttributionSettings {
            samples: 8,
            range_samples: 100,
            aggregation: Aggregation::Mean,
        }
    }
}

fn default_detectors() -> Vec<String> {
    ["scp", "msp", "odin", "energy"].map(String::from).to_vec()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Preset name (`FC1`, `FC2`, `CNN1`, `CNN2`) or layer notation.
    pub architecture: String,
    pub seed: u64,
    pub id_dataset: DatasetSpec,
    #[serde(default)]
    pub ood_datasets: Vec<OodSpec>,
    #[serde(default)]
    pub encoder: EncoderSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub detector: DetectorSettings,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<String>,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub attribution: AttributionSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Encoder settings; the encoder seed is the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub r_max: f64,
    pub dt: f64,
    pub sim_time: f64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let e = EncoderConfig::default();
        EncoderSettings {
            r_max: e.r_max,
            dt: e.dt,
            sim_time: e.sim_time,
        }
    }
}

/// Independent seeds for each randomized step, derived from the experiment
/// seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub encoder: u64,
    pub init: u64,
    pub train_subset: u64,
    pub train_order: u64,
    pub detector: u64,
    pub id_test: u64,
    pub ood: u64,
    pub square: u64,
    pub attribution: u64,
    pub sign_test: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        let s = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Seeds {
            encoder: seed,
            init: s(1),
            train_subset: s(2),
            train_order: s(3),
            detector: s(4),
            id_test: s(5),
            ood: s(6),
            square: s(7),
            attribution: s(8),
            sign_test: s(9),
        }
    }
}

/// Command-line values that replace configuration keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub train_subset: Option<usize>,
    pub per_class: Option<usize>,
    pub target_tpr: Option<f64>,
    pub max_clusters: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid configuration: {e}")))
    }

    /// Reads a configuration file; relative dataset and output paths are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative(base);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.id_dataset;
        for p in [
            &mut d.train_images,
            &mut d.train_labels,
            &mut d.test_images,
            &mut d.test_labels,
        ] {
            fix(p);
        }
        for o in &mut self.ood_datasets {
            o.images.iter_mut().for_each(fix);
            o.labels.iter_mut().for_each(fix);
        }
        fix(&mut self.output_dir);
    }

    /// Applies `SNNOOD_SEED` from the environment, then explicit overrides.
    pub fn apply(&mut self, env_seed: Option<&str>, o: &Overrides) -> Result<()> {
        if let Some(s) = env_seed {
            self.seed = s.trim().parse().map_err(|_| {
                Error::config(format!("SNNOOD_SEED '{s}' is not an unsigned integer"))
            })?;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = o.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = o.train_subset {
            self.train.subset = Some(v);
        }
        if let Some(v) = o.per_class {
            self.detector.per_class = v;
        }
        if let Some(v) = o.target_tpr {
            self.detector.target_tpr = v;
        }
        if let Some(v) = o.max_clusters {
            self.detector.max_clusters = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            r_max: self.encoder.r_max,
            dt: self.encoder.dt,
            sim_time: self.encoder.sim_time,
            seed: self.seeds().encoder,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            surrogate_beta: t.surrogate_beta,
            seed: self.seeds().train_order,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            per_class: self.detector.per_class,
            target_tpr: self.detector.target_tpr,
            max_clusters: self.detector.max_clusters,
            seed: self.seeds().detector,
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    /// Checks everything that can be checked without loading images:
    /// names, paths, numeric settings, detector names, and that the
    /// architecture builds for the class count found in the label file.
    pub fn validate(&self) -> Result<()> {
        let safe = |s: &str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        };
        if !safe(&self.name) {
            return Err(Error::config(format!(
                "experiment name '{}' must be a plain file name",
                self.name
            )));
        }
        let d = &self.id_dataset;
        for p in [
            &d.train_images,
            &d.train_labels,
            &d.test_images,
            &d.test_labels,
        ] {
            require_file(p)?;
        }
        let mut names = vec![d.name.clone()];
        for o in &self.ood_datasets {
            if !safe(&o.name) {
                return Err(Error::config(format!(
                    "OoD dataset name '{}' must be a plain file name",
                    o.name
                )));
            }
            if names.contains(&o.name) {
                return Err(Error::config(format!(
                    "dataset name '{}' used twice",
                    o.name
                )));
            }
            names.push(o.name.clone());
            match (&o.images, &o.labels, o.synthesize) {
                (Some(i), Some(l), None) => {
                    require_file(i)?;
                    require_file(l)?;
                }
                (None, None, Some(_)) => {}
                _ => {
                    return Err(Error::config(format!(
                        "OoD dataset '{}' needs either images and labels or synthesize",
                        o.name
                    )))
                }
            }
        }
        self.encoder().validate()?;
        self.train_config().validate()?;
        if self.train.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        self.detector_config().validate()?;
        let e = &self.evaluation;
        if !(e.fpr_tpr > 0.0 && e.fpr_tpr <= 1.0) {
            return Err(Error::config("evaluation.fpr_tpr must lie in (0, 1]"));
        }
        if e.temperatures.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::config("temperatures must be positive"));
        }
        if self.detectors.is_empty() {
            return Err(Error::config("no detectors listed"));
        }
        let registry = DetectorRegistry::default();
        for det in &self.detectors {
            if !registry.families().contains(&det.as_str()) {
                return Err(Error::config(format!(
                    "unknown detector '{det}', expected one of {:?}",
                    registry.families()
                )));
            }
        }
        let arch = Architecture::parse(&self.architecture)?;
        let mut labels = BufReader::new(File::open(&d.train_labels)?);
        let classes = read_idx_labels(&mut labels)?
            .into_iter()
            .map(usize::from)
            .max()
            .map_or(0, |m| m + 1);
        arch.build(classes, self.encoder(), self.seeds().init)?;
        Ok(())
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::config(format!(
            "dataset file {} does not exist",
            p.display()
        )))
    }
}
