//! Synthetic datasets and CSV I/O for empirical-score oracles.

use std::f64::consts::TAU;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliError;

/// Sinusoidal action sequences `a_s[d] = A_d·sin(ω_d·s·Δs + φ_d)` for
/// `s = 0..=horizon`, flattened step-major. Per dimension the amplitude is
/// drawn from `U[0.8, 1.3]`, the angular frequency from `U[2.5, 4.0]` and the
/// phase from `U[0, 2π)`.
pub fn smooth_action_dataset(count: usize, horizon: usize, action_dim: usize, dt: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let waves: Vec<(f64, f64, f64)> = (0..action_dim)
                .map(|_| (rng.random_range(0.8..1.3), rng.random_range(2.5..4.0), rng.random_range(0.0..TAU)))
                .collect();
            (0..=horizon).flat_map(|s| waves.iter().map(move |&(a, w, p)| a * (w * s as f64 * dt + p).sin())).collect()
        })
        .collect()
}

/// Images with every channel uniform in `[−1, 1]`, laid out `(row, col, rgb)`.
pub fn random_images(count: usize, height: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..height * width * 3).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect()
}

/// Reads numeric rows from a CSV file with a header line.
pub fn read_dataset_csv(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let width = rdr.headers()?.len();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(CliError::Validation(format!(
                "dataset row {} has {} fields, expected {width}",
                i + 1,
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Validation(format!("dataset row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Validation(format!("dataset {} has no rows", path.display())));
    }
    Ok(rows)
}

/// Column names `z{l}_{x,y,z}` for a flattened 3-D trajectory.
pub fn trajectory_header(n_states: usize) -> Vec<String> {
    (0..n_states).flat_map(|l| ["x", "y", "z"].map(|c| format!("z{l}_{c}"))).collect()
}

pub fn write_trajectory_csv(rows: &[Vec<f64>], path: &Path) -> Result<(), CliError> {
    let n_states = rows.first().map_or(0, |r| r.len() / 3);
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(trajectory_header(n_states))?;
    for r in rows {
        wtr.write_record(r.iter().map(f64::to_string))?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_layout_and_range() {
        let data = smooth_action_dataset(5, 15, 2, 0.1, 3);
        assert_eq!(data.len(), 5);
        assert!(data.iter().all(|x| x.len() == 32 && x.iter().all(|v| v.abs() <= 1.3)));
        assert_eq!(data, smooth_action_dataset(5, 15, 2, 0.1, 3));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.csv");
        let rows = vec![vec![0.1, -2.5, 1e-17, 3.0, 4.0, 5.0]];
        write_trajectory_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("z0_x,z0_y,z0_z,z1_x,z1_y,z1_z\n"));
        assert_eq!(read_dataset_csv(&path).unwrap(), rows);
    }
}
