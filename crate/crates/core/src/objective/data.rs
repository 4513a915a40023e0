//! Dataset ingestion and seeded synthetic data generators.
//!
//! Text format: whitespace/comma-separated numbers, one sample row per line.
//! The first line may be `# d=<int>` to pin the expected row width; any other
//! `#` line is a comment.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ObjectiveError;

/// Parses a numeric matrix. All rows must have equal width (and match the
/// `# d=` header when present).
pub fn parse_matrix(text: &str) -> Result<Vec<Vec<f64>>, ObjectiveError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut expected: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if lineno == 0 {
                if let Some(dim) = rest.strip_prefix("d=") {
                    let d: usize = dim.trim().parse().map_err(|_| {
                        ObjectiveError::InvalidData(format!(
                            "line {}: bad dimension header '{line}'",
                            lineno + 1
                        ))
                    })?;
                    expected = Some(d);
                }
            }
            continue;
        }
        let row: Result<Vec<f64>, _> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect();
        let row =
            row.map_err(|e| ObjectiveError::InvalidData(format!("line {}: {e}", lineno + 1)))?;
        if let Some(d) = expected {
            if row.len() != d {
                return Err(ObjectiveError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
        } else {
            expected = Some(row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ObjectiveError::InvalidData("no data rows".into()));
    }
    Ok(rows)
}

pub fn load_matrix(path: &Path) -> Result<Vec<Vec<f64>>, ObjectiveError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ObjectiveError::InvalidData(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call is plenty at desk scale.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gaussian cloud of `n` points in `d` dimensions around `mean` with
/// isotropic standard deviation `scale`.
pub fn gaussian_cloud(mean: &[f64], scale: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            mean.iter()
                .map(|&m| m + scale * standard_normal(&mut rng))
                .collect()
        })
        .collect()
}

/// Synthetic binary classification data: rows are standard Gaussian, labels
/// follow a random ground-truth direction with a fixed 10% flip rate.
pub fn logistic_cloud(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
    let mut design = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
        let margin: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        let mut y = if margin >= 0.0 { 1.0 } else { -1.0 };
        if rng.gen::<f64>() < 0.1 {
            y = -y;
        }
        design.push(row);
        labels.push(y);
    }
    (design, labels)
}
