//! Cross-detector comparison over metric tables: average ranks, Nemenyi
//! critical distance and pairwise Bayesian sign tests.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::{bayesian_sign_test, nemenyi_cd, ComparisonTable, SignTest};

pub const ROPE: f64 = 0.01;
pub const ALPHA: f64 = 0.05;
pub const SIGN_TEST_SAMPLES: usize = 100_000;

/// How several metric tables are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CompareMode {
    /// Tables cover the same dataset pairings; their detector columns are
    /// placed side by side.
    #[default]
    Join,
    /// Tables list the same detectors; their rows are concatenated.
    Stack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub table: ComparisonTable,
    pub average_ranks: Vec<f64>,
    pub critical_distance: f64,
    /// `(a, b, test on auroc(a) - auroc(b))` for every pair `a` before `b`.
    pub sign_tests: Vec<(String, String, SignTest)>,
}

struct MetricTable {
    label: String,
    rows: Vec<(String, String)>,
    detectors: Vec<String>,
    cells: Vec<Vec<f64>>,
}

fn table_label(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    if stem == "metrics" {
        if let Some(parent) = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
        {
            return parent.to_string();
        }
    }
    stem.to_string()
}

/// Reads the `<detector>_auroc` columns of a metric CSV.
fn read_table(path: &Path) -> Result<MetricTable> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name}", path.display())))
    };
    let (id_col, ood_col) = (col("id_dataset")?, col("ood_dataset")?);
    let auroc: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_suffix("_auroc").map(|d| (i, d.to_string())))
        .collect();
    if auroc.is_empty() {
        return Err(Error::Format(format!(
            "{}: no *_auroc columns",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let key = (rec[id_col].to_string(), rec[ood_col].to_string());
        if rows.contains(&key) {
            return Err(Error::Consistency(format!(
                "{}: row {key:?} appears twice",
                path.display()
            )));
        }
        let row = auroc
            .iter()
            .map(|(i, d)| {
                rec.get(*i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Consistency(format!(
                            "{}: row {key:?} lacks {d}_auroc",
                            path.display()
                        ))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(key);
        cells.push(row);
    }
    Ok(MetricTable {
        label: table_label(path),
        rows,
        detectors: auroc.into_iter().map(|(_, d)| d).collect(),
        cells,
    })
}

fn join(tables: Vec<MetricTable>) -> Result<ComparisonTable> {
    let rows = tables[0].rows.clone();
    let keys: BTreeSet<_> = rows.iter().collect();
    let mut all: Vec<String> = Vec::new();
    for t in &tables {
        all.extend(t.detectors.iter().cloned());
    }
    let mut detectors = Vec::new();
    let mut cells = vec![Vec::new(); rows.len()];
    for t in &tables {
        if t.rows.len() != rows.len() || t.rows.iter().collect::<BTreeSet<_>>() != keys {
            return Err(Error::Consistency(format!(
                "table {} covers different dataset pairings than {}",
                t.label, tables[0].label
            )));
        }
        for (d, name) in t.detectors.iter().enumerate() {
            let clash = all.iter().filter(|n| *n == name).count() > 1;
            detectors.push(if clash {
                format!("{}/{name}", t.label)
            } else {
                name.clone()
            });
            for (r, key) in rows.iter().enumerate() {
                let src = t.rows.iter().position(|k| k == key).expect("same key set");
                cells[r].push(t.cells[src][d]);
            }
        }
    }
    if detectors.iter().collect::<BTreeSet<_>>().len() != detectors.len() {
        return Err(Error::Consistency(
            "detector names collide across tables".into(),
        ));
    }
    Ok(ComparisonTable {
        rows,
        detectors,
        cells,
    })
}

fn stack(tables: Vec<MetricTable>) -> Result<ComparisonTable> {
    let detectors = tables[0].detectors.clone();
    let wanted: BTreeSet<_> = detectors.iter().collect();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for t in &tables {
        if t.detectors.iter().collect::<BTreeSet<_>>() != wanted
            || t.detectors.len() != detectors.len()
        {
            return Err(Error::Consistency(format!(
                "table {} lists detectors {:?}, expected {:?}",
                t.label, t.detectors, detectors
            )));
        }
        for (key, row) in t.rows.iter().zip(&t.cells) {
            let key = (format!("{}/{}", t.label, key.0), key.1.clone());
            if rows.contains(&key) {
                return Err(Error::Consistency(format!("row {key:?} appears twice")));
            }
            rows.push(key);
            cells.push(
                detectors
                    .iter()
                    .map(|d| row[t.detectors.iter().position(|x| x == d).expect("same set")])
                    .collect(),
            );
        }
    }
    Ok(ComparisonTable {
        rows,
        detectors,
        cells,
    })
}

/// Summarizes an already assembled table.
pub fn summarize(table: ComparisonTable, seed: u64) -> Result<CompareSummary> {
    let (average_ranks, critical_distance) = nemenyi_cd(&table, ALPHA)?;
    let mut sign_tests = Vec::new();
    for a in 0..table.detectors.len() {
        for b in a + 1..table.detectors.len() {
            let diffs: Vec<f64> = table
                .column(a)
                .iter()
                .zip(table.column(b))
                .map(|(x, y)| x - y)
                .collect();
            let t = bayesian_sign_test(&diffs, ROPE, SIGN_TEST_SAMPLES, seed)?;
            sign_tests.push((table.detectors[a].clone(), table.detectors[b].clone(), t));
        }
    }
    Ok(CompareSummary {
        table,
        average_ranks,
        critical_distance,
        sign_tests,
    })
}

/// Combines metric CSVs and writes `ranks.csv`, `cd.csv` and
/// `sign_tests.csv` into `out_dir`.
pub fn compare_report(
    tables: &[PathBuf],
    mode: CompareMode,
    out_dir: &Path,
    seed: u64,
) -> Result<CompareSummary> {
    if tables.is_empty() {
        return Err(Error::arg("no metric tables given"));
    }
    let parsed = tables
        .iter()
        .map(|p| read_table(p))
        .collect::<Result<Vec<_>>>()?;
    let table = match mode {
        CompareMode::Join => join(parsed)?,
        CompareMode::Stack => stack(parsed)?,
    };
    let summary = summarize(table, seed)?;

    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("ranks.csv"))?;
    w.write_record(["detector", "average_rank"])?;
    for (d, r) in summary.table.detectors.iter().zip(&summary.average_ranks) {
        w.write_record([d.clone(), r.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("cd.csv"))?;
    w.write_record(["alpha", "detectors", "rows", "critical_distance"])?;
    w.write_record([
        ALPHA.to_string(),
        summary.table.detectors.len().to_string(),
        summary.table.rows.len().to_string(),
        summary.critical_distance.to_string(),
    ])?;
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("sign_tests.csv"))?;
    w.write_record([
        "detector_a",
        "detector_b",
        "rope",
        "p_left",
        "p_rope",
        "p_right",
    ])?;
    for (a, b, t) in &summary.sign_tests {
        w.write_record([
            a.clone(),
            b.clone(),
            ROPE.to_string(),
            t.p_left.to_string(),
            t.p_rope.to_string(),
            t.p_right.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(summary)
}
