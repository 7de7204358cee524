//! Maps library errors onto the CLI's exit-code classes.

use std::fmt;

use bench_oracle_core::cf::CfError;
use bench_oracle_core::eval::EvalError;
use bench_oracle_core::intent::IntentError;
use bench_oracle_core::matrix::MatrixError;
use bench_oracle_core::recommend::RecommendError;
use bench_oracle_core::store::StoreError;

use crate::exit;

#[derive(Debug)]
pub enum AppError {
    Validation(String),
    IntentParse(String),
    PolicyFailed(Vec<String>),
    Io(String),
    Divergence(String),
    Measurement(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Validation(_) => exit::VALIDATION,
            AppError::IntentParse(_) => exit::INTENT_PARSE,
            AppError::PolicyFailed(_) => exit::POLICY,
            AppError::Io(_) => exit::IO,
            AppError::Divergence(_) => exit::DIVERGENCE,
            AppError::Measurement(_) => exit::MEASUREMENT,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Validation(msg)
            | AppError::IntentParse(msg)
            | AppError::Io(msg)
            | AppError::Divergence(msg)
            | AppError::Measurement(msg) => write!(f, "{msg}"),
            AppError::PolicyFailed(alerts) => {
                write!(f, "policy checks failed: {}", alerts.join("; "))
            }
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<IntentError> for AppError {
    fn from(e: IntentError) -> Self {
        AppError::IntentParse(e.to_string())
    }
}

impl From<MatrixError> for AppError {
    fn from(e: MatrixError) -> Self {
        AppError::Validation(e.to_string())
    }
}

impl From<CfError> for AppError {
    fn from(e: CfError) -> Self {
        match e {
            CfError::Diverged { .. } | CfError::NonFiniteUpdate => {
                AppError::Divergence(e.to_string())
            }
            CfError::Io(io) => AppError::Io(io.to_string()),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(io) => AppError::Io(io.to_string()),
            StoreError::Corrupted(_) | StoreError::VersionMismatch { .. } => {
                AppError::Io(e.to_string())
            }
            StoreError::Matrix(m) => m.into(),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<RecommendError> for AppError {
    fn from(e: RecommendError) -> Self {
        match e {
            RecommendError::Measurement(_)
            | RecommendError::InvalidMeasurement { .. }
            | RecommendError::BadMeasurementFile(_) => AppError::Measurement(e.to_string()),
            RecommendError::Training(c) => c.into(),
            RecommendError::Store(s) => s.into(),
            RecommendError::Matrix(m) => m.into(),
            other => AppError::Validation(other.to_string()),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(io) => AppError::Io(io.to_string()),
            EvalError::Training(c) => c.into(),
            EvalError::NoSuccessfulRows { ref first_failure, .. } => {
                if first_failure.contains("diverged") {
                    AppError::Divergence(e.to_string())
                } else {
                    AppError::Validation(e.to_string())
                }
            }
            EvalError::Matrix(m) => m.into(),
            other => AppError::Validation(other.to_string()),
        }
    }
}
