#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn write_idx(dir: &Path, stem: &str, images: &[Vec<u8>], labels: &[u8]) -> (PathBuf, PathBuf) {
    let img = dir.join(format!("{stem}-images-idx3-ubyte"));
    let lab = dir.join(format!("{stem}-labels-idx1-ubyte"));
    let mut bytes = Vec::new();
    for w in [0x803u32, images.len() as u32, 28, 28] {
        bytes.extend_from_slice(&w.to_be_bytes());
    }
    images.iter().for_each(|i| bytes.extend_from_slice(i));
    fs::write(&img, bytes).unwrap();
    let mut bytes = Vec::new();
    for w in [0x801u32, labels.len() as u32] {
        bytes.extend_from_slice(&w.to_be_bytes());
    }
    bytes.extend_from_slice(labels);
    fs::write(&lab, bytes).unwrap();
    (img, lab)
}

/// Three classes, each a bright horizontal band at its own height plus
/// faint noise.
pub fn bands(n: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = (i % 3) as u8;
        let mut img: Vec<u8> = (0..784).map(|_| rng.random_range(0..40)).collect();
        let top = 4 + 8 * c as usize;
        for r in top..top + 5 {
            for col in 4..24 {
                img[r * 28 + col] = rng.random_range(200..=255);
            }
        }
        images.push(img);
        labels.push(c);
    }
    (images, labels)
}

/// Vertical stripes, unlike any training band.
pub fn stripes(n: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n)
        .map(|_| {
            let left = rng.random_range(2..20);
            (0..784)
                .map(|p| {
                    if (left..left + 6).contains(&(p % 28)) {
                        230
                    } else {
                        10
                    }
                })
                .collect()
        })
        .collect();
    (images, vec![0; n])
}

/// Writes a small corpus and returns a configuration for it.
pub fn fixture(dir: &Path) -> Value {
    let (tr_i, tr_l) = bands(90, 1);
    let (te_i, te_l) = bands(30, 2);
    let (ood_i, ood_l) = stripes(20, 3);
    let (a, b) = write_idx(dir, "train", &tr_i, &tr_l);
    let (c, d) = write_idx(dir, "t10k", &te_i, &te_l);
    let (e, f) = write_idx(dir, "stripes", &ood_i, &ood_l);
    json!({
        "name": "tiny",
        "architecture": "784E-48fc0.25-3LI",
        "seed": 11,
        "id_dataset": {
            "name": "bands",
            "train_images": a, "train_labels": b,
            "test_images": c, "test_labels": d
        },
        "ood_datasets": [
            {"name": "stripes", "images": e, "labels": f},
            {"name": "bands-square", "synthesize": "square"}
        ],
        "encoder": {"sim_time": 0.02},
        "train": {"epochs": 3, "learning_rate": 0.003, "batch_size": 10},
        "detector": {"per_class": 10, "max_clusters": 3},
        "detectors": ["scp", "msp", "odin", "energy"],
        "evaluation": {"id_test_samples": 30, "ood_samples": 20, "temperatures": [1, 10]},
        "attribution": {"samples": 2, "range_samples": 12},
        "output_dir": dir.join("out")
    })
}

pub fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}
