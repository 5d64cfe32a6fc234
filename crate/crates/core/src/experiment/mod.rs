//! End-to-end experiment pipeline driven by an [`ExperimentConfig`].
//!
//! Output tree under `<output_dir>/<name>/`: `model.bin`, `detector.bin`,
//! `train_log.csv`, `scores/<id>_vs_<ood>.csv`, `metrics.csv` and
//! `heatmaps/`. While a stage runs, an `INCOMPLETE` file names it; the file
//! stays behind when the stage fails.

mod compare;
mod config;

pub use compare::{compare_report, CompareMode, CompareSummary};
pub use config::{
    AttributionSettings, DatasetSpec, DetectorSettings, EncoderSettings, EvaluationSettings,
    ExperimentConfig, OodSpec, Overrides, Seeds, Synthesis, TrainSettings,
};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::attribution::{display_range, relevance, to_heatmap, write_csv, write_pgm, Heatmap};
use crate::data::{load_idx, make_mnist_square, stratified_sample, ImageDataset};
use crate::error::{Error, Result};
use crate::evaluation::{detection_metrics, DetectionMetrics, ScoredSet};
use crate::registry::{family_of, DetectorRegistry, Observation, OodScorer, ScorerContext};
use crate::scp::{Decision, ScpDetector};
use crate::snn::{Architecture, NetworkModel};
use crate::store::{load_detector, load_model, save_detector, save_model, ArtifactStore};
use crate::training::{fit_classifier, EpochStats};

/// Pipeline stages, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Train,
    Fit,
    Evaluate,
    Attribute,
    Compare,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Train => 3,
            Stage::Fit => 4,
            Stage::Evaluate => 5,
            Stage::Attribute => 6,
            Stage::Compare => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Train => "train",
            Stage::Fit => "fit-detector",
            Stage::Evaluate => "evaluate",
            Stage::Attribute => "attribute",
            Stage::Compare => "compare",
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

pub(crate) trait InStage<T> {
    fn in_stage(self, stage: Stage) -> StageResult<T>;
}

impl<T> InStage<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> StageResult<T> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Scorers of one family, keyed by family name.
type Family = (String, Vec<Box<dyn OodScorer>>);

pub const MARKER: &str = "INCOMPLETE";

/// Runs `body` with the run directory flagged as incomplete.
fn guarded<T>(dir: &Path, stage: Stage, body: impl FnOnce() -> Result<T>) -> StageResult<T> {
    fs::create_dir_all(dir)
        .map_err(Error::from)
        .in_stage(stage)?;
    let marker = dir.join(MARKER);
    fs::write(&marker, format!("{}\n", stage.name()))
        .map_err(Error::from)
        .in_stage(stage)?;
    let out = body().in_stage(stage)?;
    fs::remove_file(&marker)
        .map_err(Error::from)
        .in_stage(stage)?;
    Ok(out)
}

/// Summary of a finished evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMetrics {
    pub id_dataset: String,
    pub ood_dataset: String,
    /// `(family, best scorer name, metrics)` in configuration order.
    pub families: Vec<(String, String, DetectionMetrics)>,
}

/// One rendered heatmap.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionRecord {
    pub dataset: String,
    pub index: usize,
    pub predicted: usize,
    pub score: f64,
    pub margin: f64,
    pub flagged: bool,
    pub pgm: PathBuf,
    pub csv: PathBuf,
}

impl AttributionRecord {
    pub fn summary(&self) -> String {
        format!(
            "{} #{}: predicted class {}, score {}, margin {:+} ({})",
            self.dataset,
            self.index,
            self.predicted,
            self.score,
            self.margin,
            if self.flagged { "OoD" } else { "ID" }
        )
    }
}

/// Where to take the image for a single attribution.
#[derive(Debug, Clone, PartialEq)]
pub enum AttributionInput {
    /// Sample `index` of a configured dataset, identified by name.
    Dataset { name: String, index: usize },
    /// An 8-bit binary PGM of the input resolution.
    Image(PathBuf),
}

pub struct Experiment {
    pub cfg: ExperimentConfig,
}

impl Experiment {
    /// Validates `cfg` before any compute.
    pub fn new(cfg: ExperimentConfig) -> StageResult<Self> {
        cfg.validate().in_stage(Stage::Config)?;
        Ok(Experiment { cfg })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.cfg.run_dir()
    }

    fn store(&self) -> ArtifactStore {
        ArtifactStore::new(self.run_dir())
    }

    fn id_train(&self) -> Result<ImageDataset> {
        let d = &self.cfg.id_dataset;
        Ok(load_idx(&d.train_images, &d.train_labels)?.with_name(&d.name))
    }

    fn id_test(&self) -> Result<ImageDataset> {
        let d = &self.cfg.id_dataset;
        let full = load_idx(&d.test_images, &d.test_labels)?.with_name(&d.name);
        subsample(
            full,
            self.cfg.evaluation.id_test_samples,
            self.cfg.seeds().id_test,
        )
    }

    fn ood_sets(&self) -> Result<Vec<ImageDataset>> {
        let seeds = self.cfg.seeds();
        let n = self.cfg.evaluation.ood_samples;
        self.cfg
            .ood_datasets
            .iter()
            .map(|o| {
                let ds = match (&o.images, &o.labels, o.synthesize) {
                    (Some(i), Some(l), None) => subsample(load_idx(i, l)?, n, seeds.ood)?,
                    (None, None, Some(Synthesis::Square)) => {
                        let d = &self.cfg.id_dataset;
                        let base = load_idx(&d.test_images, &d.test_labels)?;
                        make_mnist_square(&subsample(base, n, seeds.ood)?, seeds.square)?
                    }
                    _ => {
                        return Err(Error::config(format!(
                            "OoD dataset '{}' is malformed",
                            o.name
                        )))
                    }
                };
                Ok(ds.with_name(&o.name))
            })
            .collect()
    }

    /// Trains the classifier and writes `model.bin` and `train_log.csv`.
    pub fn train(&self) -> StageResult<(NetworkModel, Vec<EpochStats>)> {
        let dir = self.run_dir();
        guarded(&dir, Stage::Train, || {
            let seeds = self.cfg.seeds();
            let train = subsample(self.id_train()?, self.cfg.train.subset, seeds.train_subset)?;
            let arch = Architecture::parse(&self.cfg.architecture)?;
            let init = arch.build(train.class_count, self.cfg.encoder(), seeds.init)?;
            log::info!(
                "training {} on {} images of {}",
                arch.notation,
                train.len(),
                train.name
            );
            let outcome = fit_classifier(&init, &train, &self.cfg.train_config())?;
            save_model(&self.store().model_path(), &outcome.model)?;
            let mut w = csv::Writer::from_path(dir.join("train_log.csv"))?;
            w.write_record(["epoch", "loss", "accuracy"])?;
            for e in &outcome.history {
                w.write_record([
                    e.epoch.to_string(),
                    e.loss.to_string(),
                    e.accuracy.to_string(),
                ])?;
            }
            w.flush()?;
            Ok((outcome.model, outcome.history))
        })
    }

    pub fn load_model(&self) -> Result<NetworkModel> {
        let path = self.store().model_path();
        if !path.is_file() {
            return Err(Error::config(format!(
                "{} not found; run train first",
                path.display()
            )));
        }
        load_model(&path)
    }

    pub fn load_detector(&self) -> Result<ScpDetector> {
        let path = self.store().detector_path();
        if !path.is_file() {
            return Err(Error::config(format!(
                "{} not found; run fit-detector first",
                path.display()
            )));
        }
        load_detector(&path)
    }

    /// Fits the SCP detector on the training split and writes `detector.bin`.
    pub fn fit_detector(&self) -> StageResult<ScpDetector> {
        guarded(&self.run_dir(), Stage::Fit, || {
            let model = self.load_model()?;
            let train = self.id_train()?;
            let det = ScpDetector::fit(&model, &train, &self.cfg.detector_config())?;
            save_detector(&self.store().detector_path(), &det)?;
            for (c, m) in &det.classes {
                log::info!(
                    "class {c}: {} archetype(s), threshold {}",
                    m.centroids.len(),
                    m.threshold
                );
            }
            Ok(det)
        })
    }

    fn scorers(&self, det: &Arc<ScpDetector>) -> Result<Vec<Family>> {
        let registry = DetectorRegistry::default();
        let ctx = ScorerContext {
            detector: Some(det.clone()),
            temperatures: self.cfg.evaluation.temperatures.clone(),
        };
        self.cfg
            .detectors
            .iter()
            .map(|f| Ok((f.clone(), registry.build(f, &ctx)?)))
            .collect()
    }

    /// Scores the ID test set against every OoD set; writes per-sample score
    /// CSVs and `metrics.csv`.
    pub fn evaluate(&self) -> StageResult<Vec<PairMetrics>> {
        let dir = self.run_dir();
        guarded(&dir, Stage::Evaluate, || {
            let model = self.load_model()?;
            let det = Arc::new(self.load_detector()?);
            let families = self.scorers(&det)?;
            let id = self.id_test()?;
            let id_obs = observe(&model, &id)?;
            let id_acc = id_obs
                .iter()
                .enumerate()
                .filter(|(i, o)| o.predicted == id.label(*i))
                .count() as f64
                / id.len().max(1) as f64;
            log::info!(
                "{} test accuracy {id_acc:.4} on {} images",
                id.name,
                id.len()
            );

            fs::create_dir_all(dir.join("scores"))?;
            let target = self.cfg.evaluation.fpr_tpr;
            let mut out = Vec::new();
            for ood in self.ood_sets()? {
                let ood_obs = observe(&model, &ood)?;
                let path = dir
                    .join("scores")
                    .join(format!("{}_vs_{}.csv", id.name, ood.name));
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["sample_id", "detector", "score", "is_id"])?;
                let mut pair = PairMetrics {
                    id_dataset: id.name.clone(),
                    ood_dataset: ood.name.clone(),
                    families: Vec::new(),
                };
                for (family, scorers) in &families {
                    let mut best: Option<(String, DetectionMetrics)> = None;
                    for s in scorers {
                        let name = s.name();
                        let id_scores = score_all(s.as_ref(), &id_obs)?;
                        let ood_scores = score_all(s.as_ref(), &ood_obs)?;
                        for (set, scores, is_id) in [
                            (&id.name, &id_scores, true),
                            (&ood.name, &ood_scores, false),
                        ] {
                            for (i, v) in scores.iter().enumerate() {
                                w.write_record([
                                    format!("{set}:{i}"),
                                    name.clone(),
                                    v.to_string(),
                                    is_id.to_string(),
                                ])?;
                            }
                        }
                        let m = detection_metrics(
                            &ScoredSet::from_groups(&id_scores, &ood_scores)?,
                            target,
                        )?;
                        if best.as_ref().is_none_or(|(_, b)| m.auroc > b.auroc) {
                            best = Some((name, m));
                        }
                    }
                    let (name, m) = best.ok_or_else(|| {
                        Error::config(format!("detector '{family}' has no scorers"))
                    })?;
                    log::info!(
                        "{} vs {} {name}: AUROC {:.4} AUPR {:.4} FPR {:.4}",
                        id.name,
                        ood.name,
                        m.auroc,
                        m.aupr,
                        m.fpr
                    );
                    pair.families.push((family.clone(), name, m));
                }
                w.flush()?;
                out.push(pair);
            }
            write_metrics(&dir.join("metrics.csv"), &out, target)?;
            Ok(out)
        })
    }

    /// Display range from relevance heatmaps of training samples.
    fn display_range(&self, model: &NetworkModel, det: &ScpDetector) -> Result<(f64, f64)> {
        let a = &self.cfg.attribution;
        let train = subsample(
            self.id_train()?,
            Some(a.range_samples),
            self.cfg.seeds().attribution,
        )?;
        let maps: Vec<Heatmap> = (0..train.len())
            .into_par_iter()
            .map(|i| {
                let p = model.predict(train.image(i), i as u64)?;
                let r = relevance(det, model, &p.trace, p.label)?;
                to_heatmap(&r.values, model, a.aggregation)
            })
            .collect::<Result<_>>()?;
        display_range(&maps, det.target_tpr)
    }

    fn render(
        &self,
        model: &NetworkModel,
        det: &ScpDetector,
        range: (f64, f64),
        dataset: &str,
        index: usize,
        x: &[f32],
    ) -> Result<AttributionRecord> {
        let p = model.predict(x, index as u64)?;
        let r = relevance(det, model, &p.trace, p.label)?;
        let map = to_heatmap(&r.values, model, self.cfg.attribution.aggregation)?;
        let dir = self.run_dir().join("heatmaps");
        fs::create_dir_all(&dir)?;
        let stem = format!("{dataset}_{index}");
        let pgm = dir.join(format!("{stem}.pgm"));
        let csv = dir.join(format!("{stem}.csv"));
        write_pgm(&pgm, &map, range)?;
        write_csv(&csv, &map)?;
        Ok(AttributionRecord {
            dataset: dataset.to_string(),
            index,
            predicted: r.predicted_label,
            score: r.score,
            margin: r.score_margin,
            flagged: det.decide(r.score, p.label)? == Decision::OutOfDistribution,
            pgm,
            csv,
        })
    }

    /// Renders heatmaps for the first flagged samples of every OoD set and
    /// writes `heatmaps/summary.csv`.
    pub fn attribute(&self) -> StageResult<Vec<AttributionRecord>> {
        let dir = self.run_dir();
        guarded(&dir, Stage::Attribute, || {
            let model = self.load_model()?;
            let det = self.load_detector()?;
            let range = self.display_range(&model, &det)?;
            let mut records = Vec::new();
            for ood in self.ood_sets()? {
                let flagged = first_flagged(&model, &det, &ood, self.cfg.attribution.samples)?;
                for i in flagged {
                    records.push(self.render(&model, &det, range, &ood.name, i, ood.image(i))?);
                }
            }
            write_attribution_summary(&dir.join("heatmaps").join("summary.csv"), &records)?;
            Ok(records)
        })
    }

    /// Renders the heatmap of a single input.
    pub fn attribute_one(&self, input: &AttributionInput) -> StageResult<AttributionRecord> {
        guarded(&self.run_dir(), Stage::Attribute, || {
            let model = self.load_model()?;
            let det = self.load_detector()?;
            let range = self.display_range(&model, &det)?;
            match input {
                AttributionInput::Dataset { name, index } => {
                    let ds = if *name == self.cfg.id_dataset.name {
                        self.id_test()?
                    } else {
                        self.ood_sets()?
                            .into_iter()
                            .find(|d| d.name == *name)
                            .ok_or_else(|| Error::config(format!("no dataset named '{name}'")))?
                    };
                    if *index >= ds.len() {
                        return Err(Error::arg(format!(
                            "index {index} outside {} samples",
                            ds.len()
                        )));
                    }
                    self.render(&model, &det, range, name, *index, ds.image(*index))
                }
                AttributionInput::Image(path) => {
                    let x = read_pgm(path)?;
                    let stem = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("image")
                        .to_string();
                    self.render(&model, &det, range, &stem, 0, &x)
                }
            }
        })
    }

    /// Every stage in order.
    pub fn run(&self) -> StageResult<Vec<PairMetrics>> {
        let dir = self.run_dir();
        fs::create_dir_all(&dir)
            .map_err(Error::from)
            .in_stage(Stage::Config)?;
        fs::write(dir.join(MARKER), "run\n")
            .map_err(Error::from)
            .in_stage(Stage::Config)?;
        let json = serde_json::to_string_pretty(&self.cfg)
            .map_err(Error::from)
            .in_stage(Stage::Config)?;
        fs::write(dir.join("config.json"), json + "\n")
            .map_err(Error::from)
            .in_stage(Stage::Config)?;
        self.train()?;
        self.fit_detector()?;
        let metrics = self.evaluate()?;
        if self.cfg.attribution.samples > 0 {
            self.attribute()?;
        }
        Ok(metrics)
    }
}

/// Runs the whole pipeline for a validated configuration.
pub fn run_experiment(cfg: ExperimentConfig) -> StageResult<Vec<PairMetrics>> {
    Experiment::new(cfg)?.run()
}

fn subsample(ds: ImageDataset, n: Option<usize>, seed: u64) -> Result<ImageDataset> {
    match n {
        Some(n) if n < ds.len() => stratified_sample(&ds, n, seed),
        _ => Ok(ds),
    }
}

/// Simulates every sample with its index as encoder seed.
pub fn observe(model: &NetworkModel, ds: &ImageDataset) -> Result<Vec<Observation>> {
    if ds.dim() != model.input_len() {
        return Err(Error::Shape(format!(
            "{} images have {} pixels, model expects {}",
            ds.name,
            ds.dim(),
            model.input_len()
        )));
    }
    (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let p = model.predict(ds.image(i), i as u64)?;
            Ok(Observation {
                counts: p.trace.last_layer_counts(),
                logits: p.logits,
                predicted: p.label,
            })
        })
        .collect()
}

fn score_all(s: &dyn OodScorer, obs: &[Observation]) -> Result<Vec<f64>> {
    obs.iter().map(|o| s.score(o)).collect()
}

fn first_flagged(
    model: &NetworkModel,
    det: &ScpDetector,
    ds: &ImageDataset,
    n: usize,
) -> Result<Vec<usize>> {
    let obs = observe(model, ds)?;
    let mut out = Vec::new();
    for (i, o) in obs.iter().enumerate() {
        if out.len() == n {
            break;
        }
        let score = det.score_counts(&o.counts, o.predicted)?;
        if det.decide(score, o.predicted)? == Decision::OutOfDistribution {
            out.push(i);
        }
    }
    Ok(out)
}

fn fpr_label(target: f64) -> String {
    format!("fpr{}", (target * 100.0).round() as u32)
}

fn write_metrics(path: &Path, pairs: &[PairMetrics], target: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let Some(first) = pairs.first() else {
        w.write_record(["id_dataset", "ood_dataset"])?;
        w.flush()?;
        return Ok(());
    };
    let fpr = fpr_label(target);
    let mut header = vec!["id_dataset".to_string(), "ood_dataset".to_string()];
    for (family, name, _) in &first.families {
        header.extend([
            format!("{family}_auroc"),
            format!("{family}_aupr"),
            format!("{family}_{fpr}"),
        ]);
        if name != family {
            header.push(format!("{family}_temperature"));
        }
    }
    w.write_record(&header)?;
    for p in pairs {
        let mut row = vec![p.id_dataset.clone(), p.ood_dataset.clone()];
        for (family, name, m) in &p.families {
            row.extend([m.auroc.to_string(), m.aupr.to_string(), m.fpr.to_string()]);
            if name != family {
                row.push(
                    name.trim_start_matches(family_of(name))
                        .trim_start_matches("_t")
                        .to_string(),
                );
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_attribution_summary(path: &Path, records: &[AttributionRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "dataset",
        "sample_id",
        "predicted",
        "score",
        "margin",
        "flagged",
    ])?;
    for r in records {
        w.write_record([
            r.dataset.clone(),
            r.index.to_string(),
            r.predicted.to_string(),
            r.score.to_string(),
            r.margin.to_string(),
            r.flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary (P5) 8-bit PGM into `[0, 1]` pixels.
pub fn read_pgm(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!(
                "{}: truncated PGM header",
                path.display()
            )));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("{}: bad PGM header field {s:?}", path.display())))
    };
    if fields[0] != "P5" {
        return Err(Error::Format(format!(
            "{}: not a binary PGM",
            path.display()
        )));
    }
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(Error::Format(format!(
            "{}: only 8-bit PGM is supported",
            path.display()
        )));
    }
    let data = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| Error::Format(format!("{}: expected {} pixels", path.display(), w * h)))?;
    Ok(data
        .iter()
        .map(|&b| (f32::from(b) / max as f32).min(1.0))
        .collect())
}
