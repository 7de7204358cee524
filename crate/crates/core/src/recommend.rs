//! Recommender workflows: register a new technique or device, benchmark k
//! real samples, train the completion model, and fill the missing row or
//! column with predictions.
//!
//! Both workflows are atomic: the store is only replaced after every step has
//! succeeded, so a failed measurement or diverged training leaves it
//! untouched.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cf::{complete, train, CfError, Hyperparams};
use crate::matrix::{BenchmarkMatrix, MatrixError};
use crate::seeding;
use crate::store::{now_millis, DeviceRecord, Provenance, StoreError, StoreSnapshot, TechniqueRecord};

const SUBSET_SALT: u64 = 0x73_75_62_73_65_74; // "subset"

#[derive(Debug, Error)]
#[error("no measurement available for technique `{technique}` on device `{device}`")]
pub struct MeasurementUnavailable {
    pub technique: String,
    pub device: String,
}

/// Provides real benchmark values for (technique, device) pairs. Stands in
/// for actually executing workloads; implementations may read a file, query a
/// live runner, or serve a prepared table.
pub trait MeasurementSource {
    fn measure(&self, technique_id: &str, device_id: &str)
        -> Result<f64, MeasurementUnavailable>;
}

/// Serves measurements for one subject (a new technique or a new device) from
/// a counterpart-id -> value table.
#[derive(Debug, Clone)]
pub struct TableSource {
    subject: String,
    values: std::collections::BTreeMap<String, f64>,
}

impl TableSource {
    pub fn new(subject: &str, values: impl IntoIterator<Item = (String, f64)>) -> Self {
        TableSource {
            subject: subject.to_string(),
            values: values.into_iter().collect(),
        }
    }

    /// Parses a `counterpart,value` CSV (header required).
    pub fn from_csv(subject: &str, text: &str) -> Result<Self, RecommendError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut values = std::collections::BTreeMap::new();
        for (idx, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| RecommendError::BadMeasurementFile(e.to_string()))?;
            if idx == 0 {
                if rec.get(0).map(|f| f.eq_ignore_ascii_case("counterpart")) != Some(true) {
                    return Err(RecommendError::BadMeasurementFile(
                        "header must be `counterpart,value`".to_string(),
                    ));
                }
                continue;
            }
            if rec.len() != 2 {
                return Err(RecommendError::BadMeasurementFile(format!(
                    "row {}: expected 2 fields, got {}",
                    idx + 1,
                    rec.len()
                )));
            }
            let value: f64 = rec[1].trim().parse().map_err(|_| {
                RecommendError::BadMeasurementFile(format!(
                    "row {}: cannot parse `{}` as a number",
                    idx + 1,
                    &rec[1]
                ))
            })?;
            values.insert(rec[0].to_string(), value);
        }
        Ok(TableSource {
            subject: subject.to_string(),
            values,
        })
    }
}

impl MeasurementSource for TableSource {
    fn measure(
        &self,
        technique_id: &str,
        device_id: &str,
    ) -> Result<f64, MeasurementUnavailable> {
        let counterpart = if technique_id == self.subject {
            device_id
        } else if device_id == self.subject {
            technique_id
        } else {
            return Err(MeasurementUnavailable {
                technique: technique_id.to_string(),
                device: device_id.to_string(),
            });
        };
        self.values
            .get(counterpart)
            .copied()
            .ok_or_else(|| MeasurementUnavailable {
                technique: technique_id.to_string(),
                device: device_id.to_string(),
            })
    }
}

/// Serves measurements straight out of a ground-truth matrix, keyed by its
/// labels. Used by tests and synthetic experiments as the oracle.
#[derive(Debug, Clone)]
pub struct MatrixSource<'a> {
    truth: &'a BenchmarkMatrix,
}

impl<'a> MatrixSource<'a> {
    pub fn new(truth: &'a BenchmarkMatrix) -> Self {
        MatrixSource { truth }
    }
}

impl MeasurementSource for MatrixSource<'_> {
    fn measure(
        &self,
        technique_id: &str,
        device_id: &str,
    ) -> Result<f64, MeasurementUnavailable> {
        let missing = || MeasurementUnavailable {
            technique: technique_id.to_string(),
            device: device_id.to_string(),
        };
        let i = self.truth.row_index(technique_id).ok_or_else(missing)?;
        let j = self.truth.col_index(device_id).ok_or_else(missing)?;
        self.truth.get(i, j).ok_or_else(missing)
    }
}

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("benchmark sample size k={k} out of range 1..={available}")]
    KOutOfRange { k: usize, available: usize },
    #[error("store has no counterparts to benchmark against")]
    NoCounterparts,
    #[error("measurement failed, store unchanged: {0}")]
    Measurement(#[from] MeasurementUnavailable),
    #[error("measured value for `{counterpart}` must be finite and non-negative, got {value}")]
    InvalidMeasurement { counterpart: String, value: f64 },
    #[error("measurement file: {0}")]
    BadMeasurementFile(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Training(#[from] CfError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub counterpart: String,
    pub value: f64,
    pub source: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    /// Final training objective; absent when nothing had to be predicted.
    pub final_objective: Option<f64>,
    /// Training epochs actually run (0 when training was skipped).
    pub epochs: usize,
    /// Min and max over the full denormalized prediction matrix.
    pub prediction_range: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Outcome of an add-technique / add-device workflow: which counterparts were
/// really measured, which were filled by the model, and how training went.
/// Measured and predicted together cover every counterpart exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationReport {
    pub subject: String,
    pub measured: Vec<ReportEntry>,
    pub predicted: Vec<ReportEntry>,
    pub model_diagnostics: ModelDiagnostics,
}

/// Default benchmark sample size for a counterpart population: 30% of the
/// population, at least 3, capped at the population size.
pub fn default_k(counterparts: usize) -> usize {
    ((counterparts as f64 * 0.3).ceil() as usize)
        .max(3)
        .min(counterparts)
}

/// Picks `k` distinct indices out of `0..count_available`, uniform without
/// replacement, deterministic per seed. Returned ascending.
pub fn select_benchmark_subset(
    count_available: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, RecommendError> {
    if k < 1 || k > count_available {
        return Err(RecommendError::KOutOfRange {
            k,
            available: count_available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, count_available, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Registers a new technique, benchmarks it on `k` randomly chosen devices
/// via `source`, trains the completion model on the normalized augmented
/// matrix, and persists measured values plus predictions for the remaining
/// devices. On any error the store is left exactly as it was.
pub fn add_technique(
    store: &mut StoreSnapshot,
    technique_id: &str,
    technique_type: &str,
    k: usize,
    source: &dyn MeasurementSource,
    params: &Hyperparams,
) -> Result<RecommendationReport, RecommendError> {
    if store.technique_index(technique_id).is_some() {
        return Err(StoreError::DuplicateTechnique {
            id: technique_id.to_string(),
        }
        .into());
    }
    let counterparts: Vec<String> = store.matrix().col_labels().to_vec();
    let chosen = choose_counterparts(&counterparts, k, params.seed)?;
    let measured = measure_all(source, |dev| (technique_id.to_string(), dev.to_string()), &counterparts, &chosen)?;

    let mut next = store.clone();
    let row = next.register_technique(TechniqueRecord {
        id: technique_id.to_string(),
        technique_type: technique_type.to_string(),
        registered_at: now_millis(),
    })?;
    for &(j, v) in &measured {
        next.insert_measured(row, j, v)?;
    }

    let missing: Vec<usize> = (0..counterparts.len()).filter(|j| !chosen.contains(j)).collect();
    let (predictions, diagnostics) =
        predict_cells(&next, params, &missing.iter().map(|&j| (row, j)).collect::<Vec<_>>(), &counterparts, &missing)?;
    for (&j, &v) in missing.iter().zip(predictions.iter()) {
        next.insert_predicted(row, j, v)?;
    }

    let report = RecommendationReport {
        subject: technique_id.to_string(),
        measured: entries(&counterparts, &chosen, measured.iter().map(|&(_, v)| v), Provenance::Measured),
        predicted: entries(&counterparts, &missing, predictions.iter().copied(), Provenance::Predicted),
        model_diagnostics: diagnostics,
    };
    *store = next;
    Ok(report)
}

/// Column-axis mirror of [`add_technique`]: registers a new device,
/// benchmarks `k` randomly chosen techniques on it, renormalizes the
/// augmented matrix, trains, and fills the rest of the new column.
pub fn add_device(
    store: &mut StoreSnapshot,
    device_id: &str,
    domain: &str,
    k: usize,
    source: &dyn MeasurementSource,
    params: &Hyperparams,
) -> Result<RecommendationReport, RecommendError> {
    if store.device_index(device_id).is_some() {
        return Err(StoreError::DuplicateDevice {
            id: device_id.to_string(),
        }
        .into());
    }
    let counterparts: Vec<String> = store.matrix().row_labels().to_vec();
    let chosen = choose_counterparts(&counterparts, k, params.seed)?;
    let measured = measure_all(source, |tech| (tech.to_string(), device_id.to_string()), &counterparts, &chosen)?;

    let mut next = store.clone();
    let col = next.register_device(DeviceRecord {
        id: device_id.to_string(),
        domain: domain.to_string(),
        // it just answered k benchmark runs
        connectivity: true,
    })?;
    for &(i, v) in &measured {
        next.insert_measured(i, col, v)?;
    }

    let missing: Vec<usize> = (0..counterparts.len()).filter(|i| !chosen.contains(i)).collect();
    let (predictions, diagnostics) =
        predict_cells(&next, params, &missing.iter().map(|&i| (i, col)).collect::<Vec<_>>(), &counterparts, &missing)?;
    for (&i, &v) in missing.iter().zip(predictions.iter()) {
        next.insert_predicted(i, col, v)?;
    }

    let report = RecommendationReport {
        subject: device_id.to_string(),
        measured: entries(&counterparts, &chosen, measured.iter().map(|&(_, v)| v), Provenance::Measured),
        predicted: entries(&counterparts, &missing, predictions.iter().copied(), Provenance::Predicted),
        model_diagnostics: diagnostics,
    };
    *store = next;
    Ok(report)
}

fn choose_counterparts(
    counterparts: &[String],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, RecommendError> {
    if counterparts.is_empty() {
        return Err(RecommendError::NoCounterparts);
    }
    select_benchmark_subset(counterparts.len(), k, seeding::mix(seed, SUBSET_SALT))
}

fn measure_all(
    source: &dyn MeasurementSource,
    pair: impl Fn(&str) -> (String, String),
    counterparts: &[String],
    chosen: &[usize],
) -> Result<Vec<(usize, f64)>, RecommendError> {
    let mut measured = Vec::with_capacity(chosen.len());
    for &idx in chosen {
        let (technique, device) = pair(&counterparts[idx]);
        let value = source.measure(&technique, &device)?;
        if !value.is_finite() || value < 0.0 {
            return Err(RecommendError::InvalidMeasurement {
                counterpart: counterparts[idx].clone(),
                value,
            });
        }
        measured.push((idx, value));
    }
    Ok(measured)
}

/// Normalizes the augmented store matrix, trains, reconstructs the full
/// prediction matrix, and returns the denormalized predictions for `cells`
/// (sanitized: negative predictions are clamped to zero with a warning, and
/// values far outside the observed range are flagged). Skips training when
/// there is nothing to predict.
fn predict_cells(
    store: &StoreSnapshot,
    params: &Hyperparams,
    cells: &[(usize, usize)],
    counterparts: &[String],
    missing: &[usize],
) -> Result<(Vec<f64>, ModelDiagnostics), RecommendError> {
    if cells.is_empty() {
        return Ok((
            Vec::new(),
            ModelDiagnostics {
                final_objective: None,
                epochs: 0,
                prediction_range: None,
                warnings: Vec::new(),
            },
        ));
    }
    let normalizer = store.matrix().fit_normalizer()?;
    let normalized = store.matrix().normalized(&normalizer);
    let report = train(&normalized, params)?;
    let raw = complete(&normalized, &report.model)?.map(|v| normalizer.denormalize(v));
    let (lo, hi) = raw.value_range();

    let mut warnings = Vec::new();
    let mut predictions = Vec::with_capacity(cells.len());
    for (&(i, j), &idx) in cells.iter().zip(missing.iter()) {
        predictions.push(sanitize_prediction(
            raw.get(i, j),
            &normalizer,
            &counterparts[idx],
            &mut warnings,
        ));
    }
    Ok((
        predictions,
        ModelDiagnostics {
            final_objective: report.final_objective(),
            epochs: params.epochs,
            prediction_range: Some((lo, hi)),
            warnings,
        },
    ))
}

/// A denormalized prediction more than one observed-range width outside the
/// observed range points at a diverging model and is flagged; a negative one
/// is meaningless as a performance value and is clamped to zero.
fn sanitize_prediction(
    value: f64,
    normalizer: &crate::matrix::Normalizer,
    counterpart: &str,
    warnings: &mut Vec<String>,
) -> f64 {
    let span = normalizer.span();
    let (lo, hi) = (
        normalizer.min_observed() - span,
        normalizer.max_observed() + span,
    );
    if !(lo..=hi).contains(&value) {
        warnings.push(format!(
            "prediction {value} for {counterpart} outside plausible range [{lo}, {hi}]"
        ));
    }
    if value < 0.0 {
        warnings.push(format!(
            "clamped negative prediction {value} for {counterpart} to 0"
        ));
        return 0.0;
    }
    value
}

fn entries(
    counterparts: &[String],
    indices: &[usize],
    values: impl Iterator<Item = f64>,
    source: Provenance,
) -> Vec<ReportEntry> {
    indices
        .iter()
        .zip(values)
        .map(|(&idx, value)| ReportEntry {
            counterpart: counterparts[idx].clone(),
            value,
            source,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::generate_synthetic;

    fn small_store(rows: usize, cols: usize, seed: u64) -> (StoreSnapshot, BenchmarkMatrix) {
        // truth has one extra row and column beyond the store
        let truth = generate_synthetic(rows + 1, cols + 1, 3, 0.0, seed).unwrap();
        let mut matrix = BenchmarkMatrix::new(
            truth.row_labels()[..rows].to_vec(),
            truth.col_labels()[..cols].to_vec(),
        )
        .unwrap();
        for i in 0..rows {
            for j in 0..cols {
                matrix.insert(i, j, truth.get(i, j).unwrap()).unwrap();
            }
        }
        let store = StoreSnapshot::from_measured_matrix(matrix, "imported", "lab").unwrap();
        (store, truth)
    }

    fn quick_params() -> Hyperparams {
        Hyperparams {
            epochs: 400,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn default_k_tracks_population() {
        assert_eq!(default_k(1), 1);
        assert_eq!(default_k(2), 2);
        assert_eq!(default_k(5), 3);
        assert_eq!(default_k(10), 3);
        assert_eq!(default_k(20), 6);
        assert_eq!(default_k(191), 58);
    }

    #[test]
    fn subset_exhaustive_and_deterministic() {
        let all = select_benchmark_subset(5, 5, 1).unwrap();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        let a = select_benchmark_subset(100, 30, 9).unwrap();
        let b = select_benchmark_subset(100, 30, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subset_distinct_indices() {
        let picked = select_benchmark_subset(191, 57, 3).unwrap();
        assert_eq!(picked.len(), 57);
        let mut dedup = picked.clone();
        dedup.dedup();
        assert_eq!(dedup, picked);
        assert!(picked.iter().all(|&i| i < 191));
    }

    #[test]
    fn subset_k_out_of_range() {
        assert!(matches!(
            select_benchmark_subset(5, 6, 0),
            Err(RecommendError::KOutOfRange { .. })
        ));
        assert!(matches!(
            select_benchmark_subset(5, 0, 0),
            Err(RecommendError::KOutOfRange { .. })
        ));
    }

    #[test]
    fn add_technique_k_equals_n_measures_everything() {
        let (mut store, truth) = small_store(6, 5, 21);
        let source = MatrixSource::new(&truth);
        let new_id = truth.row_labels()[6].clone();
        let report =
            add_technique(&mut store, &new_id, "classification", 5, &source, &quick_params())
                .unwrap();
        assert_eq!(report.measured.len(), 5);
        assert!(report.predicted.is_empty());
        assert_eq!(report.model_diagnostics.epochs, 0);
        assert_eq!(store.matrix().rows(), 7);
        // all five persisted as measured
        for j in 0..5 {
            assert_eq!(store.provenance_of(6, j), Some(Provenance::Measured));
        }
    }

    #[test]
    fn add_technique_fills_missing_cells() {
        let (mut store, truth) = small_store(12, 8, 33);
        let source = MatrixSource::new(&truth);
        let new_id = truth.row_labels()[12].clone();
        let before = store.matrix().clone();
        let report =
            add_technique(&mut store, &new_id, "classification", 3, &source, &quick_params())
                .unwrap();
        assert_eq!(report.measured.len(), 3);
        assert_eq!(report.predicted.len(), 5);
        // every counterpart covered exactly once
        let mut all: Vec<&str> = report
            .measured
            .iter()
            .chain(report.predicted.iter())
            .map(|e| e.counterpart.as_str())
            .collect();
        all.sort_unstable();
        let mut expect: Vec<&str> = store.matrix().col_labels().iter().map(|s| s.as_str()).collect();
        expect.sort_unstable();
        assert_eq!(all, expect);
        // pre-existing entries untouched
        for ((i, j), v) in before.observed() {
            assert_eq!(store.matrix().get(i, j), Some(v));
        }
        // new row fully populated
        assert_eq!(store.matrix().observed_in_row(12).len(), 8);
    }

    #[test]
    fn add_technique_synthetic_oracle() {
        // store drawn from a rank-3 generator; the new technique comes from
        // the same generator, so held-out predictions can be scored exactly
        let truth = generate_synthetic(43, 20, 3, 0.0, 7).unwrap();
        let mut matrix = BenchmarkMatrix::new(
            truth.row_labels()[..42].to_vec(),
            truth.col_labels().to_vec(),
        )
        .unwrap();
        for i in 0..42 {
            for j in 0..20 {
                matrix.insert(i, j, truth.get(i, j).unwrap()).unwrap();
            }
        }
        let mut store = StoreSnapshot::from_measured_matrix(matrix, "imported", "lab").unwrap();
        let source = MatrixSource::new(&truth);
        let new_id = truth.row_labels()[42].clone();
        let report = add_technique(
            &mut store,
            &new_id,
            "classification",
            6,
            &source,
            &Hyperparams::default(),
        )
        .unwrap();
        assert_eq!(report.predicted.len(), 14);
        let (lo, hi) = report.model_diagnostics.prediction_range.unwrap();
        let residuals: Vec<f64> = report
            .predicted
            .iter()
            .map(|e| {
                let j = truth.col_index(&e.counterpart).unwrap();
                truth.get(42, j).unwrap() - e.value
            })
            .collect();
        let rmse = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
        let nrmse = rmse / (hi - lo);
        assert!(nrmse < 0.05, "normalized RMSE {nrmse} not below 0.05");
    }

    #[test]
    fn add_device_k_equals_m() {
        let (mut store, truth) = small_store(5, 6, 40);
        let source = MatrixSource::new(&truth);
        let new_id = truth.col_labels()[6].clone();
        let report =
            add_device(&mut store, &new_id, "warehouse_5", 5, &source, &quick_params()).unwrap();
        assert_eq!(report.measured.len(), 5);
        assert!(report.predicted.is_empty());
        assert_eq!(store.matrix().cols(), 7);
        assert_eq!(store.devices()[6].domain, "warehouse_5");
        assert!(store.devices()[6].connectivity);
    }

    #[test]
    fn add_device_on_single_technique_store() {
        // store with one technique and no devices: the first device gets one
        // measurement and there is nothing left to predict
        let mut store = StoreSnapshot::new();
        store
            .register_technique(TechniqueRecord {
                id: "lstm".to_string(),
                technique_type: "sentiment".to_string(),
                registered_at: 0,
            })
            .unwrap();
        let source = TableSource::new("edge_1", [("lstm".to_string(), 4.5)]);
        let report =
            add_device(&mut store, "edge_1", "lab", 1, &source, &quick_params()).unwrap();
        assert_eq!(report.measured.len(), 1);
        assert!(report.predicted.is_empty());
        assert_eq!(store.lookup("lstm", "edge_1").unwrap().0, 4.5);
    }

    #[test]
    fn duplicate_subject_rejected() {
        let (mut store, truth) = small_store(4, 4, 50);
        let source = MatrixSource::new(&truth);
        let existing = store.techniques()[0].id.clone();
        assert!(matches!(
            add_technique(&mut store, &existing, "x", 2, &source, &quick_params()),
            Err(RecommendError::Store(StoreError::DuplicateTechnique { .. }))
        ));
        let existing_dev = store.devices()[0].id.clone();
        assert!(matches!(
            add_device(&mut store, &existing_dev, "x", 2, &source, &quick_params()),
            Err(RecommendError::Store(StoreError::DuplicateDevice { .. }))
        ));
    }

    #[test]
    fn measurement_failure_leaves_store_unchanged() {
        struct Failing;
        impl MeasurementSource for Failing {
            fn measure(&self, t: &str, d: &str) -> Result<f64, MeasurementUnavailable> {
                Err(MeasurementUnavailable {
                    technique: t.to_string(),
                    device: d.to_string(),
                })
            }
        }
        let (mut store, _) = small_store(4, 4, 60);
        let before = store.clone();
        let err = add_technique(&mut store, "fresh", "x", 2, &Failing, &quick_params());
        assert!(matches!(err, Err(RecommendError::Measurement(_))));
        assert_eq!(store, before);
    }

    #[test]
    fn invalid_measurement_rejected() {
        let (mut store, _) = small_store(3, 3, 61);
        let labels: Vec<String> = store.matrix().col_labels().to_vec();
        let source = TableSource::new(
            "fresh",
            labels.into_iter().map(|l| (l, -1.0)),
        );
        let before = store.clone();
        assert!(matches!(
            add_technique(&mut store, "fresh", "x", 2, &source, &quick_params()),
            Err(RecommendError::InvalidMeasurement { .. })
        ));
        assert_eq!(store, before);
    }

    #[test]
    fn k_out_of_range_in_workflow() {
        let (mut store, truth) = small_store(3, 3, 62);
        let source = MatrixSource::new(&truth);
        assert!(matches!(
            add_technique(&mut store, "fresh", "x", 4, &source, &quick_params()),
            Err(RecommendError::KOutOfRange { k: 4, available: 3 })
        ));
    }

    #[test]
    fn table_source_csv_parsing() {
        let src = TableSource::from_csv("edge_1", "counterpart,value\nlstm,4.5\nvgg,2.25\n").unwrap();
        assert_eq!(src.measure("lstm", "edge_1").unwrap(), 4.5);
        assert_eq!(src.measure("vgg", "edge_1").unwrap(), 2.25);
        assert!(src.measure("unknown", "edge_1").is_err());
        assert!(TableSource::from_csv("s", "bad header\n1,2\n").is_err());
        assert!(TableSource::from_csv("s", "counterpart,value\nx,abc\n").is_err());
    }
}
