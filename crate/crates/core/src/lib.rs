//! Benchmark prediction for ML techniques on heterogeneous hardware.
//!
//! The library estimates how an ML technique performs on devices it has never
//! been benchmarked on, from the sparse matrix of benchmarks that do exist.
//! Techniques are matrix rows, devices are columns; missing cells are filled
//! by latent-factor matrix completion trained with stochastic gradient
//! descent. A small intent language ("add device ... to domain ...") drives
//! the workflows that register new techniques or devices, measure a few real
//! benchmarks, and predict the rest.
//!
//! Module map:
//!
//! - [`matrix`] — sparse benchmark storage, min-max normalization, column
//!   masking, CSV ingestion/export.
//! - [`cf`] — factor model, SGD training, full-matrix reconstruction.
//! - [`store`] — file-backed store of techniques, devices, benchmarks and
//!   their measured/predicted provenance.
//! - [`intent`] — the two intent templates, their structured JSON form, and
//!   the policy checks that gate the recommender.
//! - [`recommend`] — add-technique / add-device workflows: sample k real
//!   benchmarks, train, fill the missing row or column.
//! - [`eval`] — RMSE metrics, the missing-fraction experiment harness, and
//!   the synthetic low-rank dataset generator.

pub mod cf;
pub mod eval;
pub mod intent;
pub mod matrix;
pub mod recommend;
pub mod store;

mod seeding;

pub use cf::{
    complete, init_factors, objective, train, CfError, DenseMatrix, FactorModel, Hyperparams,
    TrainReport,
};
pub use eval::{
    emit_results, generate_synthetic, normalized_rmse, rmse, run_experiment, EvalError,
    ExperimentConfig, ExperimentResult,
};
pub use intent::{
    configure_policies, parse_intent, to_structured_json, IntentError, PolicyOutcome,
    StructuredIntent,
};
pub use matrix::{BenchmarkMatrix, MatrixError, Normalizer};
pub use recommend::{
    add_device, add_technique, select_benchmark_subset, MeasurementSource, RecommendError,
    RecommendationReport,
};
pub use store::{DeviceRecord, Provenance, StoreError, StoreSnapshot, TechniqueRecord};
