use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snn_ood::data::read_idx_images;
use snn_ood::encoding::poisson_encode;
use snn_ood::experiment::{
    compare_report, AttributionInput, CompareMode, Experiment, ExperimentConfig, Overrides, Stage,
    StageError,
};
use snn_ood::Error;

#[derive(Parser)]
#[command(
    name = "snn-ood",
    version,
    about = "Spiking network training and spike count pattern OoD detection"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the configuration and SNNOOD_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Stratified training subset size.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Args, Default)]
struct FitArgs {
    /// Samples per class for each of the archetype and calibration splits.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    target_tpr: Option<f64>,
    #[arg(long)]
    max_clusters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the classifier.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Fit the spike count pattern detector on a trained model.
    FitDetector {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Score ID and OoD sets and write metrics.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render relevance heatmaps.
    Attribute {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset name for --index (defaults to the ID dataset).
        #[arg(long)]
        dataset: Option<String>,
        /// Sample index within the evaluated dataset.
        #[arg(long, conflicts_with = "image")]
        index: Option<usize>,
        /// 8-bit binary PGM input.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Train, fit, evaluate and attribute in one go.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Ranks, critical distance and sign tests over metric tables.
    Compare {
        #[arg(required = true)]
        tables: Vec<PathBuf>,
        #[arg(long, short, default_value = "comparison")]
        out: PathBuf,
        /// Concatenate rows instead of joining detector columns.
        #[arg(long)]
        stack: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the spike raster of one image as CSV.
    EncodePreview(PreviewArgs),
}

#[derive(Args)]
struct PreviewArgs {
    /// IDX image file.
    #[arg(long, required_unless_present = "config")]
    images: Option<PathBuf>,
    /// Take the ID test images and encoder settings from a configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    sim_time: Option<f64>,
    /// Output file (stdout by default).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn load(args: &ConfigArgs, train: &TrainArgs, fit: &FitArgs) -> Result<Experiment, StageError> {
    let err = |source| StageError {
        stage: Stage::Config,
        source,
    };
    let mut cfg = ExperimentConfig::load(&args.config).map_err(err)?;
    let env = std::env::var("SNNOOD_SEED").ok();
    let overrides = Overrides {
        seed: args.seed,
        epochs: train.epochs,
        learning_rate: train.learning_rate,
        batch_size: train.batch_size,
        train_subset: train.subset,
        per_class: fit.per_class,
        target_tpr: fit.target_tpr,
        max_clusters: fit.max_clusters,
        output_dir: args.output_dir.clone(),
    };
    cfg.apply(env.as_deref(), &overrides).map_err(err)?;
    Experiment::new(cfg)
}

fn encode_preview(args: PreviewArgs) -> Result<(), Error> {
    let PreviewArgs {
        images,
        config,
        index,
        seed,
        r_max,
        dt,
        sim_time,
        out,
    } = args;
    let (path, mut enc) = match &config {
        Some(c) => {
            let mut cfg = ExperimentConfig::load(c)?;
            cfg.apply(
                std::env::var("SNNOOD_SEED").ok().as_deref(),
                &Overrides::default(),
            )?;
            (
                images.unwrap_or(cfg.id_dataset.test_images.clone()),
                cfg.encoder(),
            )
        }
        None => (images.expect("clap requires images"), Default::default()),
    };
    enc.seed = seed.unwrap_or(enc.seed);
    enc.r_max = r_max.unwrap_or(enc.r_max);
    enc.dt = dt.unwrap_or(enc.dt);
    enc.sim_time = sim_time.unwrap_or(enc.sim_time);
    let (n, rows, cols, bytes) = read_idx_images(&mut BufReader::new(File::open(&path)?))?;
    if index >= n {
        return Err(Error::Argument(format!("index {index} outside {n} images")));
    }
    let d = rows * cols;
    let x: Vec<f32> = bytes[index * d..(index + 1) * d]
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    let csv = poisson_encode(&x, &enc, index as u64)?.to_csv();
    match out {
        Some(p) => std::fs::write(p, csv)?,
        None => io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), StageError> {
    match cmd {
        Command::Train { cfg, train } => {
            let exp = load(&cfg, &train, &FitArgs::default())?;
            let (_, history) = exp.train()?;
            if let Some(last) = history.last() {
                println!(
                    "epoch {}: loss {:.4}, accuracy {:.4}",
                    last.epoch, last.loss, last.accuracy
                );
            }
        }
        Command::FitDetector { cfg, fit } => {
            let exp = load(&cfg, &TrainArgs::default(), &fit)?;
            let det = exp.fit_detector()?;
            println!("fitted {} classes", det.classes.len());
        }
        Command::Evaluate { cfg } => {
            let exp = load(&cfg, &TrainArgs::default(), &FitArgs::default())?;
            print_metrics(&exp.evaluate()?);
        }
        Command::Attribute {
            cfg,
            dataset,
            index,
            image,
        } => {
            let exp = load(&cfg, &TrainArgs::default(), &FitArgs::default())?;
            let input = match (image, index) {
                (Some(p), _) => Some(AttributionInput::Image(p)),
                (None, Some(i)) => Some(AttributionInput::Dataset {
                    name: dataset.unwrap_or_else(|| exp.cfg.id_dataset.name.clone()),
                    index: i,
                }),
                (None, None) => None,
            };
            let records = match input {
                Some(input) => vec![exp.attribute_one(&input)?],
                None => exp.attribute()?,
            };
            for r in records {
                println!("{} -> {}", r.summary(), r.pgm.display());
            }
        }
        Command::Run { cfg, train, fit } => {
            let exp = load(&cfg, &train, &fit)?;
            print_metrics(&exp.run()?);
        }
        Command::Compare {
            tables,
            out,
            stack,
            seed,
        } => {
            let mode = if stack {
                CompareMode::Stack
            } else {
                CompareMode::Join
            };
            let s = compare_report(&tables, mode, &out, seed).map_err(|source| StageError {
                stage: Stage::Compare,
                source,
            })?;
            for (d, r) in s.table.detectors.iter().zip(&s.average_ranks) {
                println!("{d}: average rank {r:.3}");
            }
            println!("critical distance {:.4}", s.critical_distance);
        }
        Command::EncodePreview(args) => {
            encode_preview(args).map_err(|source| StageError {
                stage: Stage::Config,
                source,
            })?;
        }
    }
    Ok(())
}

fn print_metrics(pairs: &[snn_ood::experiment::PairMetrics]) {
    for p in pairs {
        for (family, name, m) in &p.families {
            println!(
                "{} vs {} {family} ({name}): AUROC {:.4} AUPR {:.4} FPR {:.4}",
                p.id_dataset, p.ood_dataset, m.auroc, m.aupr, m.fpr
            );
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
        {
            eprintln!("cannot size worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
