//! Metrics, the missing-fraction experiment harness, and the synthetic
//! low-rank dataset generator used as a desk-scale oracle.
//!
//! The experiment protocol: for every missing fraction and replication, pick
//! one target device column (seeded), mask that fraction of its observed
//! entries, normalize, train, predict the held-out entries, and score the
//! root-mean-square error of the predictions normalized by the value range of
//! the full prediction matrix. Everything is reproducible from one base seed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cf::{complete, train, CfError, DenseMatrix, Hyperparams};
use crate::matrix::{BenchmarkMatrix, MatrixError};
use crate::seeding;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot compute RMSE of an empty residual list")]
    EmptyResiduals,
    #[error("prediction matrix is constant; normalized RMSE undefined")]
    DegenerateRange,
    #[error("dataset too small: {eligible} device columns with observations, need at least 2")]
    DatasetTooSmall { eligible: usize },
    #[error("missing fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("replications must be >= 1")]
    InvalidReplications,
    #[error("true rank must satisfy 1 <= rank <= min(m, n), got rank {rank} for {m}x{n}")]
    InvalidRank { rank: usize, m: usize, n: usize },
    #[error("noise std must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("every replication at fraction {fraction} failed; first failure: {first_failure}")]
    NoSuccessfulRows { fraction: f64, first_failure: String },
    #[error("result is empty, nothing to emit")]
    EmptyResult,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Training(#[from] CfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Root mean squared error over a residual list.
pub fn rmse(residuals: &[f64]) -> Result<f64, EvalError> {
    if residuals.is_empty() {
        return Err(EvalError::EmptyResiduals);
    }
    let mean_sq = residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    Ok(mean_sq.sqrt())
}

/// RMSE divided by the value range (max - min) of the full prediction matrix,
/// making errors comparable across value scales.
pub fn normalized_rmse(rmse_value: f64, predictions: &DenseMatrix) -> Result<f64, EvalError> {
    let (lo, hi) = predictions.value_range();
    if !(hi > lo) {
        return Err(EvalError::DegenerateRange);
    }
    Ok(rmse_value / (hi - lo))
}

/// Generates a fully observed m-by-n matrix of numerical rank at most
/// `true_rank`: the product of two uniform [0, 1) factor blocks, plus
/// optional Gaussian noise, shifted to be non-negative. Deterministic per
/// seed, and the noise-free part does not depend on `noise_std`.
pub fn generate_synthetic(
    m: usize,
    n: usize,
    true_rank: usize,
    noise_std: f64,
    seed: u64,
) -> Result<BenchmarkMatrix, EvalError> {
    if true_rank < 1 || true_rank > m.min(n) {
        return Err(EvalError::InvalidRank { rank: true_rank, m, n });
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(EvalError::InvalidNoise(noise_std));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize| -> Vec<f64> { (0..count).map(|_| rng.random::<f64>()).collect() };
    let a = draw(m * true_rank);
    let b = draw(n * true_rank);
    let mut values = Vec::with_capacity(m * n);
    for i in 0..m {
        let ai = &a[i * true_rank..(i + 1) * true_rank];
        for j in 0..n {
            let bj = &b[j * true_rank..(j + 1) * true_rank];
            values.push(ai.iter().zip(bj).map(|(x, y)| x * y).sum::<f64>());
        }
    }
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).expect("validated noise std");
        for v in values.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let lowest = values.iter().copied().fold(f64::INFINITY, f64::min);
    if lowest < 0.0 {
        for v in values.iter_mut() {
            *v -= lowest;
        }
    }
    let mut matrix = BenchmarkMatrix::with_shape(m, n);
    for i in 0..m {
        for j in 0..n {
            matrix.insert(i, j, values[i * n + j])?;
        }
    }
    Ok(matrix)
}

/// The missing-fraction experiment: which fractions to test, how many
/// replications each, and on what dataset.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub missing_fractions: Vec<f64>,
    pub replications: usize,
    pub hyperparams: Hyperparams,
    pub dataset: BenchmarkMatrix,
    pub base_seed: u64,
}

impl ExperimentConfig {
    /// Default protocol: fractions 0.3 through 0.9 in steps of 0.1, five
    /// replications each.
    pub fn new(dataset: BenchmarkMatrix) -> Self {
        ExperimentConfig {
            missing_fractions: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            replications: 5,
            hyperparams: Hyperparams::default(),
            dataset,
            base_seed: 0,
        }
    }

    fn validate(&self) -> Result<Vec<usize>, EvalError> {
        for &f in &self.missing_fractions {
            if !f.is_finite() || f <= 0.0 || f >= 1.0 {
                return Err(EvalError::InvalidFraction(f));
            }
        }
        if self.replications < 1 {
            return Err(EvalError::InvalidReplications);
        }
        self.hyperparams.validate()?;
        let eligible: Vec<usize> = (0..self.dataset.cols())
            .filter(|&j| !self.dataset.observed_in_col(j).is_empty())
            .collect();
        if eligible.len() < 2 {
            return Err(EvalError::DatasetTooSmall {
                eligible: eligible.len(),
            });
        }
        Ok(eligible)
    }
}

/// One successful replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub missing_fraction: f64,
    pub replication: usize,
    pub target_device: String,
    pub rmse: f64,
    pub normalized_rmse: f64,
    pub train_seconds: f64,
}

/// A replication that could not be scored (diverged training, empty holdout,
/// degenerate predictions). Excluded from the per-fraction means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub missing_fraction: f64,
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSummary {
    pub missing_fraction: f64,
    pub mean_normalized_rmse: f64,
    pub mean_rmse: f64,
    /// Rows that went into the means.
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<RowFailure>,
    pub summary: Vec<FractionSummary>,
}

impl ExperimentResult {
    pub fn mean_normalized_rmse_at(&self, fraction: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.missing_fraction == fraction)
            .map(|s| s.mean_normalized_rmse)
    }
}

/// Runs the full protocol. For each (fraction, replication) a seed derived
/// from `(base_seed, fraction bits, replication)` drives target-column
/// choice, masking, and training, so results are fully deterministic per
/// `base_seed` and independent of scheduling. Replications run in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, EvalError> {
    let eligible = config.validate()?;
    let jobs: Vec<(f64, usize)> = config
        .missing_fractions
        .iter()
        .flat_map(|&f| (0..config.replications).map(move |t| (f, t)))
        .collect();
    let outcomes: Vec<Result<ReplicationRow, RowFailure>> = jobs
        .par_iter()
        .map(|&(fraction, replication)| run_replication(config, &eligible, fraction, replication))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(failure) => failures.push(failure),
        }
    }

    let mut summary = Vec::with_capacity(config.missing_fractions.len());
    for &fraction in &config.missing_fractions {
        let scored: Vec<&ReplicationRow> = rows
            .iter()
            .filter(|r| r.missing_fraction == fraction)
            .collect();
        if scored.is_empty() {
            let first_failure = failures
                .iter()
                .find(|f| f.missing_fraction == fraction)
                .map(|f| f.message.clone())
                .unwrap_or_else(|| "no rows".to_string());
            return Err(EvalError::NoSuccessfulRows {
                fraction,
                first_failure,
            });
        }
        let count = scored.len() as f64;
        summary.push(FractionSummary {
            missing_fraction: fraction,
            mean_normalized_rmse: scored.iter().map(|r| r.normalized_rmse).sum::<f64>() / count,
            mean_rmse: scored.iter().map(|r| r.rmse).sum::<f64>() / count,
            rows: scored.len(),
        });
    }

    Ok(ExperimentResult {
        rows,
        failures,
        summary,
    })
}

fn run_replication(
    config: &ExperimentConfig,
    eligible: &[usize],
    fraction: f64,
    replication: usize,
) -> Result<ReplicationRow, RowFailure> {
    let fail = |message: String| RowFailure {
        missing_fraction: fraction,
        replication,
        message,
    };
    let seed = seeding::mix3(config.base_seed, fraction.to_bits(), replication as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = eligible[rng.random_range(0..eligible.len())];
    let mask_seed = rng.random::<u64>();
    let train_seed = rng.random::<u64>();

    let (masked, held_out) = config
        .dataset
        .apply_mask(target, fraction, mask_seed)
        .map_err(|e| fail(e.to_string()))?;
    if held_out.is_empty() {
        return Err(fail(format!(
            "fraction {fraction} holds out zero entries of column {target}: empty evaluation"
        )));
    }
    let normalizer = masked
        .fit_normalizer()
        .map_err(|e| fail(e.to_string()))?;
    let normalized = masked.normalized(&normalizer);
    let hyperparams = Hyperparams {
        seed: train_seed,
        ..config.hyperparams.clone()
    };

    let started = Instant::now();
    let trained = train(&normalized, &hyperparams).map_err(|e| fail(e.to_string()))?;
    let train_seconds = started.elapsed().as_secs_f64();

    let predictions = complete(&normalized, &trained.model)
        .map_err(|e| fail(e.to_string()))?
        .map(|v| normalizer.denormalize(v));
    let residuals: Vec<f64> = held_out
        .iter()
        .map(|&(row, truth)| truth - predictions.get(row, target))
        .collect();
    let rmse_value = rmse(&residuals).map_err(|e| fail(e.to_string()))?;
    let normalized_rmse_value =
        normalized_rmse(rmse_value, &predictions).map_err(|e| fail(e.to_string()))?;

    Ok(ReplicationRow {
        missing_fraction: fraction,
        replication,
        target_device: config.dataset.col_labels()[target].clone(),
        rmse: rmse_value,
        normalized_rmse: normalized_rmse_value,
        train_seconds,
    })
}

pub const DETAIL_HEADER: &str =
    "missing_fraction,replication,target_device,rmse,normalized_rmse,train_seconds";
pub const SUMMARY_HEADER: &str = "missing_fraction,mean_normalized_rmse,mean_rmse,replications";

/// Path of the companion summary CSV: `results.csv` -> `results_summary.csv`.
pub fn summary_path(detail_path: &Path) -> PathBuf {
    let stem = detail_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".to_string());
    let mut name = format!("{stem}_summary");
    if let Some(ext) = detail_path.extension() {
        name.push('.');
        name.push_str(&ext.to_string_lossy());
    }
    detail_path.with_file_name(name)
}

/// Writes the detail CSV to `path` and the per-fraction means to the
/// companion summary path. Values use shortest round-trip float formatting,
/// so reloading reproduces them exactly.
pub fn emit_results(result: &ExperimentResult, path: &Path) -> Result<(), EvalError> {
    if result.rows.is_empty() {
        return Err(EvalError::EmptyResult);
    }
    std::fs::write(path, detail_csv(result))?;
    std::fs::write(summary_path(path), summary_csv(result))?;
    Ok(())
}

/// The detail CSV as a string, one row per scored replication.
pub fn detail_csv(result: &ExperimentResult) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(DETAIL_HEADER.split(','))
        .expect("write to Vec");
    for row in &result.rows {
        writer
            .write_record(&[
                format!("{}", row.missing_fraction),
                format!("{}", row.replication),
                row.target_device.clone(),
                format!("{}", row.rmse),
                format!("{}", row.normalized_rmse),
                format!("{}", row.train_seconds),
            ])
            .expect("write to Vec");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}

/// The summary CSV as a string, one row per fraction.
pub fn summary_csv(result: &ExperimentResult) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(SUMMARY_HEADER.split(','))
        .expect("write to Vec");
    for s in &result.summary {
        writer
            .write_record(&[
                format!("{}", s.missing_fraction),
                format!("{}", s.mean_normalized_rmse),
                format!("{}", s.mean_rmse),
                format!("{}", s.rows),
            ])
            .expect("write to Vec");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf-8")
}
