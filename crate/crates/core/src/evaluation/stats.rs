use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Posterior probabilities that the left, rope or right region dominates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub p_left: f64,
    pub p_rope: f64,
    pub p_right: f64,
}

/// Small pseudo-count added to every region so the Dirichlet stays proper.
const EPS_PRIOR: f64 = 1e-4;

/// Bayesian sign test on paired differences `a - b`. Differences below
/// `-rope` favour `b` (left), above `rope` favour `a` (right). The prior is
/// one pseudo-observation at zero, i.e. in the rope.
pub fn bayesian_sign_test(
    diffs: &[f64],
    rope: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<SignTest> {
    if diffs.is_empty() {
        return Err(Error::arg("no differences"));
    }
    if !(rope >= 0.0) {
        return Err(Error::arg("rope must be non-negative"));
    }
    if mc_samples < 1000 {
        return Err(Error::arg("at least 1000 Monte Carlo samples are required"));
    }
    let mut counts = [0.0f64; 3];
    for &d in diffs {
        if d < -rope {
            counts[0] += 1.0;
        } else if d > rope {
            counts[2] += 1.0;
        } else {
            counts[1] += 1.0;
        }
    }
    counts[1] += 1.0;
    let gammas: Vec<Gamma<f64>> = counts
        .iter()
        .map(|&c| Gamma::new(c + EPS_PRIOR, 1.0).expect("positive shape"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins = [0usize; 3];
    for _ in 0..mc_samples {
        let draw: Vec<f64> = gammas.iter().map(|g| g.sample(&mut rng)).collect();
        // Normalising does not change which component is largest.
        let mut best = 0;
        for i in 1..3 {
            if draw[i] > draw[best] {
                best = i;
            }
        }
        wins[best] += 1;
    }
    let n = mc_samples as f64;
    Ok(SignTest {
        p_left: wins[0] as f64 / n,
        p_rope: wins[1] as f64 / n,
        p_right: wins[2] as f64 / n,
    })
}

/// AUROC cells with one row per dataset pairing and one column per detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<(String, String)>,
    pub detectors: Vec<String>,
    /// `cells[row][detector]`.
    pub cells: Vec<Vec<f64>>,
}

impl ComparisonTable {
    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.rows.len() {
            return Err(Error::Consistency(
                "one cell row per dataset pairing required".into(),
            ));
        }
        for (r, row) in self.cells.iter().enumerate() {
            if row.len() != self.detectors.len() {
                return Err(Error::Consistency(format!(
                    "row {r} has {} cells for {} detectors",
                    row.len(),
                    self.detectors.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Consistency(format!("row {r} has a missing cell")));
            }
        }
        Ok(())
    }

    pub fn column(&self, detector: usize) -> Vec<f64> {
        self.cells.iter().map(|r| r[detector]).collect()
    }

    /// Ranks within every row, 1 for the highest value, ties averaged.
    pub fn row_ranks(&self) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| {
                        let better = row.iter().filter(|&&o| o > v).count() as f64;
                        let equal = row.iter().filter(|&&o| o == v).count() as f64;
                        better + (equal + 1.0) / 2.0
                    })
                    .collect()
            })
            .collect()
    }

    pub fn average_ranks(&self) -> Vec<f64> {
        let ranks = self.row_ranks();
        let n = ranks.len() as f64;
        (0..self.detectors.len())
            .map(|d| ranks.iter().map(|r| r[d]).sum::<f64>() / n)
            .collect()
    }
}

/// Two-tailed Nemenyi critical values (studentized range over sqrt 2).
pub fn nemenyi_q(alpha: f64, k: usize) -> Result<f64> {
    const Q05: [f64; 9] = [
        1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164,
    ];
    const Q10: [f64; 9] = [
        1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920,
    ];
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q05
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q10
    } else {
        return Err(Error::arg(format!(
            "alpha {alpha} unsupported, use 0.05 or 0.10"
        )));
    };
    if !(2..=10).contains(&k) {
        return Err(Error::arg(format!(
            "{k} detectors unsupported, use 2 to 10"
        )));
    }
    Ok(table[k - 2])
}

/// Average ranks and the critical distance
/// `q_alpha(k) * sqrt(k (k + 1) / (6 N))`.
pub fn nemenyi_cd(table: &ComparisonTable, alpha: f64) -> Result<(Vec<f64>, f64)> {
    table.validate()?;
    let k = table.detectors.len();
    let n = table.rows.len();
    if n < 2 {
        return Err(Error::arg("at least two dataset pairings are required"));
    }
    let q = nemenyi_q(alpha, k)?;
    let cd = q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt();
    Ok((table.average_ranks(), cd))
}
