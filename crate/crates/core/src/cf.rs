//! Latent-factor matrix completion trained by stochastic gradient descent.
//!
//! Every technique `i` carries a factor vector `p_i` and every device `j` a
//! factor vector `q_j`, both of length `rank`. A cell is predicted as the dot
//! product `q_j . p_i`, so the completed matrix is the rank-`rank` product of
//! the two factor blocks. Training minimizes the squared error over the
//! observed set, with an L2 penalty on the two factor vectors touched by each
//! observed entry:
//!
//! ```text
//! sum over observed (i,j):  (e_ij - q_j.p_i)^2 + reg * (|q_j|^2 + |p_i|^2)
//! ```
//!
//! Per observed entry the update steps both vectors from their pre-update
//! values (simultaneous update):
//!
//! ```text
//! err = e_ij - q_j.p_i
//! q_j <- q_j + lr * (err * p_i - reg * q_j)
//! p_i <- p_i + lr * (err * q_j - reg * p_i)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::matrix::BenchmarkMatrix;

const MODEL_MAGIC: &str = "bench-oracle-model";
const MODEL_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum CfError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("factor index ({row}, {col}) out of range for {m}x{n} model")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        m: usize,
        n: usize,
    },
    #[error("model is {m}x{n} but matrix is {rows}x{cols}")]
    DimensionMismatch {
        m: usize,
        n: usize,
        rows: usize,
        cols: usize,
    },
    #[error("model dimensions must be at least 1x1, got {m}x{n}")]
    ZeroDimension { m: usize, n: usize },
    #[error("factor vectors must all have the same length, got {0} and {1}")]
    MixedRank(usize, usize),
    #[error("matrix has no observed entries to train on")]
    EmptyObservedSet,
    #[error("training diverged at epoch {epoch}: non-finite factors (learning rate too high?)")]
    Diverged { epoch: usize },
    #[error("sgd update produced non-finite factors (learning rate too high?)")]
    NonFiniteUpdate,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters. The defaults are the tuned operating point:
/// rank 10, learning rate 0.04, regularization 5e-6, 5000 epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub rank: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            rank: 10,
            learning_rate: 0.04,
            regularization: 5e-6,
            epochs: 5000,
            seed: 0,
            init_scale: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), CfError> {
        if self.rank < 1 {
            return Err(CfError::InvalidHyperparams("rank must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(CfError::InvalidHyperparams(format!(
                "learning rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if !self.regularization.is_finite() || self.regularization < 0.0 {
            return Err(CfError::InvalidHyperparams(format!(
                "regularization must be finite and >= 0, got {}",
                self.regularization
            )));
        }
        if self.epochs < 1 {
            return Err(CfError::InvalidHyperparams("epochs must be >= 1".into()));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(CfError::InvalidHyperparams(format!(
                "init scale must be finite and >= 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Learned factor vectors: `m` technique vectors and `n` device vectors of
/// dimension `rank`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    m: usize,
    n: usize,
    rank: usize,
    seed: u64,
    technique_factors: Vec<f64>,
    device_factors: Vec<f64>,
}

impl FactorModel {
    /// Builds a model from explicit factor vectors. All vectors must share
    /// one length, which becomes the rank.
    pub fn from_factors(
        technique_factors: Vec<Vec<f64>>,
        device_factors: Vec<Vec<f64>>,
    ) -> Result<FactorModel, CfError> {
        let m = technique_factors.len();
        let n = device_factors.len();
        if m == 0 || n == 0 {
            return Err(CfError::ZeroDimension { m, n });
        }
        let rank = technique_factors[0].len();
        for v in technique_factors.iter().chain(device_factors.iter()) {
            if v.len() != rank {
                return Err(CfError::MixedRank(rank, v.len()));
            }
        }
        Ok(FactorModel {
            m,
            n,
            rank,
            seed: 0,
            technique_factors: technique_factors.into_iter().flatten().collect(),
            device_factors: device_factors.into_iter().flatten().collect(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn technique_factor(&self, i: usize) -> &[f64] {
        &self.technique_factors[i * self.rank..(i + 1) * self.rank]
    }

    pub fn device_factor(&self, j: usize) -> &[f64] {
        &self.device_factors[j * self.rank..(j + 1) * self.rank]
    }

    fn check_index(&self, i: usize, j: usize) -> Result<(), CfError> {
        if i >= self.m || j >= self.n {
            return Err(CfError::IndexOutOfRange {
                row: i,
                col: j,
                m: self.m,
                n: self.n,
            });
        }
        Ok(())
    }

    /// Predicted value for cell `(i, j)`: the dot product `q_j . p_i`.
    pub fn predict(&self, i: usize, j: usize) -> Result<f64, CfError> {
        self.check_index(i, j)?;
        Ok(dot(self.technique_factor(i), self.device_factor(j)))
    }

    /// Observed value minus prediction for cell `(i, j)`.
    pub fn residual(&self, i: usize, j: usize, observed: f64) -> Result<f64, CfError> {
        Ok(observed - self.predict(i, j)?)
    }

    /// One SGD step on the factors of row `i` and column `j`, both updated
    /// from their pre-update values. No other factors change.
    pub fn sgd_update(
        &mut self,
        i: usize,
        j: usize,
        observed: f64,
        learning_rate: f64,
        regularization: f64,
    ) -> Result<(), CfError> {
        self.check_index(i, j)?;
        self.step(i, j, observed, learning_rate, regularization);
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(self.technique_factor(i)) || !finite(self.device_factor(j)) {
            return Err(CfError::NonFiniteUpdate);
        }
        Ok(())
    }

    #[inline]
    fn step(&mut self, i: usize, j: usize, observed: f64, lr: f64, reg: f64) {
        let r = self.rank;
        let p = &mut self.technique_factors[i * r..(i + 1) * r];
        let q = &mut self.device_factors[j * r..(j + 1) * r];
        let mut pred = 0.0;
        for (pv, qv) in p.iter().zip(q.iter()) {
            pred += pv * qv;
        }
        let err = observed - pred;
        for (pv, qv) in p.iter_mut().zip(q.iter_mut()) {
            let pc = *pv;
            let qc = *qv;
            *qv = qc + lr * (err * pc - reg * qc);
            *pv = pc + lr * (err * qc - reg * pc);
        }
    }

    /// Writes the model as a versioned flat text file: a header, the shape
    /// line `m n rank seed`, then all factor components row-major (technique
    /// block first). Floats use shortest round-trip formatting.
    pub fn save(&self, path: &Path) -> Result<(), CfError> {
        let mut out = String::new();
        out.push_str(MODEL_MAGIC);
        out.push(' ');
        out.push_str(MODEL_VERSION);
        out.push('\n');
        out.push_str(&format!("{} {} {} {}\n", self.m, self.n, self.rank, self.seed));
        for i in 0..self.m {
            push_row(&mut out, self.technique_factor(i));
        }
        for j in 0..self.n {
            push_row(&mut out, self.device_factor(j));
        }
        let mut file = fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FactorModel, CfError> {
        let text = fs::read_to_string(path)?;
        let mut tokens = text.split_whitespace();
        let magic = tokens.next().unwrap_or("");
        if magic != MODEL_MAGIC {
            return Err(CfError::Format(format!(
                "not a factor model file (expected `{MODEL_MAGIC}`, found `{magic}`)"
            )));
        }
        let version = tokens.next().unwrap_or("");
        if version != MODEL_VERSION {
            return Err(CfError::Format(format!(
                "unsupported format version `{version}` (expected `{MODEL_VERSION}`)"
            )));
        }
        let mut read_usize = |name: &str| -> Result<usize, CfError> {
            tokens
                .next()
                .ok_or_else(|| CfError::Format(format!("missing `{name}`")))?
                .parse()
                .map_err(|_| CfError::Format(format!("cannot parse `{name}`")))
        };
        let m = read_usize("m")?;
        let n = read_usize("n")?;
        let rank = read_usize("rank")?;
        let seed = read_usize("seed")? as u64;
        if m == 0 || n == 0 || rank == 0 {
            return Err(CfError::Format("zero dimension in header".into()));
        }
        let want = (m + n) * rank;
        let mut components = Vec::with_capacity(want);
        for tok in tokens.by_ref() {
            let v: f64 = tok
                .parse()
                .map_err(|_| CfError::Format(format!("cannot parse component `{tok}`")))?;
            components.push(v);
        }
        if components.len() != want {
            return Err(CfError::Format(format!(
                "expected {want} factor components, found {}",
                components.len()
            )));
        }
        let device_factors = components.split_off(m * rank);
        Ok(FactorModel {
            m,
            n,
            rank,
            seed,
            technique_factors: components,
            device_factors,
        })
    }
}

fn push_row(out: &mut String, row: &[f64]) {
    for (k, v) in row.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Draws every factor component independently uniform in `[0, init_scale)`
/// from a ChaCha8 stream seeded with `params.seed`. Deterministic per seed;
/// the technique block is drawn before the device block.
pub fn init_factors(m: usize, n: usize, params: &Hyperparams) -> Result<FactorModel, CfError> {
    params.validate()?;
    if m == 0 || n == 0 {
        return Err(CfError::ZeroDimension { m, n });
    }
    let r = params.rank;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut draw = |count: usize| -> Vec<f64> {
        (0..count)
            .map(|_| rng.random::<f64>() * params.init_scale)
            .collect()
    };
    let technique_factors = draw(m * r);
    let device_factors = draw(n * r);
    Ok(FactorModel {
        m,
        n,
        rank: r,
        seed: params.seed,
        technique_factors,
        device_factors,
    })
}

/// Regularized squared error over the observed set, the quantity training
/// descends: `sum (e_ij - q_j.p_i)^2 + reg * (|q_j|^2 + |p_i|^2)` with the
/// penalty term added once per observed entry.
pub fn objective(
    matrix: &BenchmarkMatrix,
    model: &FactorModel,
    regularization: f64,
) -> Result<f64, CfError> {
    check_shapes(matrix, model)?;
    let p_norm2: Vec<f64> = (0..model.m)
        .map(|i| dot(model.technique_factor(i), model.technique_factor(i)))
        .collect();
    let q_norm2: Vec<f64> = (0..model.n)
        .map(|j| dot(model.device_factor(j), model.device_factor(j)))
        .collect();
    let mut total = 0.0;
    for ((i, j), observed) in matrix.observed() {
        let err = observed - dot(model.technique_factor(i), model.device_factor(j));
        total += err * err + regularization * (q_norm2[j] + p_norm2[i]);
    }
    Ok(total)
}

/// A trained model together with the objective value recorded at the end of
/// every epoch.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: FactorModel,
    pub objective_history: Vec<f64>,
}

impl TrainReport {
    pub fn final_objective(&self) -> Option<f64> {
        self.objective_history.last().copied()
    }
}

/// Trains factors on the observed entries of `matrix` (values expected
/// pre-normalized to `[0, 1]`). Runs `params.epochs` epochs; each epoch
/// visits every observed entry once in a freshly shuffled order and applies
/// the SGD step. Fully deterministic per `params.seed`. Returns an error
/// naming the epoch if the factors go non-finite.
pub fn train(matrix: &BenchmarkMatrix, params: &Hyperparams) -> Result<TrainReport, CfError> {
    params.validate()?;
    let mut entries: Vec<(u32, u32, f64)> = matrix
        .observed()
        .map(|((i, j), v)| (i as u32, j as u32, v))
        .collect();
    if entries.is_empty() {
        return Err(CfError::EmptyObservedSet);
    }
    let mut model = init_factors(matrix.rows(), matrix.cols(), params)?;
    // Shuffling draws from a separate stream of the same seed so the factor
    // initialization stays identical to a bare init_factors call.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(params.seed);
    shuffle_rng.set_stream(1);
    let (lr, reg) = (params.learning_rate, params.regularization);
    let mut history = Vec::with_capacity(params.epochs);
    for epoch in 1..=params.epochs {
        entries.shuffle(&mut shuffle_rng);
        for &(i, j, v) in &entries {
            model.step(i as usize, j as usize, v, lr, reg);
        }
        let obj = objective(matrix, &model, reg)?;
        // A non-finite factor cannot hide: every updated factor feeds at
        // least one observed entry, and non-finite values propagate through
        // the squared-error and norm sums.
        if !obj.is_finite() {
            return Err(CfError::Diverged { epoch });
        }
        history.push(obj);
    }
    Ok(TrainReport {
        model,
        objective_history: history,
    })
}

fn check_shapes(matrix: &BenchmarkMatrix, model: &FactorModel) -> Result<(), CfError> {
    if matrix.rows() != model.m || matrix.cols() != model.n {
        return Err(CfError::DimensionMismatch {
            m: model.m,
            n: model.n,
            rows: matrix.rows(),
            cols: matrix.cols(),
        });
    }
    Ok(())
}

/// Dense row-major matrix of predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Minimum and maximum over all cells.
    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Cell-wise transform, e.g. denormalization back to raw units.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Reconstructs the full prediction matrix: every cell, observed ones
/// included, is the model's prediction (an approximation, not a passthrough
/// of stored values).
pub fn complete(matrix: &BenchmarkMatrix, model: &FactorModel) -> Result<DenseMatrix, CfError> {
    check_shapes(matrix, model)?;
    let mut data = Vec::with_capacity(model.m * model.n);
    for i in 0..model.m {
        let p = model.technique_factor(i);
        for j in 0..model.n {
            data.push(dot(p, model.device_factor(j)));
        }
    }
    Ok(DenseMatrix {
        rows: model.m,
        cols: model.n,
        data,
    })
}
