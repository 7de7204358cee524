//! File-backed ML techniques store and device registry.
//!
//! A snapshot bundles the registered techniques and devices, the benchmark
//! matrix, and a per-entry provenance flag saying whether a value was really
//! measured or filled in by the model. Persistence is a single JSON file with
//! a format version and a payload checksum, written atomically
//! (temp-then-rename) so a crash mid-save never leaves a loadable half-write.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::{BenchmarkMatrix, MatrixError};

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("technique `{id}` already registered")]
    DuplicateTechnique { id: String },
    #[error("device `{id}` already registered")]
    DuplicateDevice { id: String },
    #[error("unknown technique `{id}` ({known} techniques registered)")]
    UnknownTechnique { id: String, known: usize },
    #[error("unknown device `{id}` ({known} devices registered)")]
    UnknownDevice { id: String, known: usize },
    #[error("no stored benchmark for technique `{technique}` on device `{device}`")]
    NoBenchmark { technique: String, device: String },
    #[error("record invalid: {0}")]
    InvalidRecord(String),
    #[error("store file version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("store file corrupted: {0}")]
    Corrupted(String),
    #[error("refusing to downgrade measured entry ({row}, {col}) to a prediction")]
    ProvenanceDowngrade { row: usize, col: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether a stored benchmark value was measured on real hardware or
/// predicted by the completion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueRecord {
    pub id: String,
    pub technique_type: String,
    /// Unix milliseconds at registration.
    pub registered_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub id: String,
    pub domain: String,
    pub connectivity: bool,
}

/// In-memory store state. Matrix row `i` always belongs to `techniques[i]`
/// and column `j` to `devices[j]`; every observed entry carries a provenance
/// flag.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreSnapshot {
    techniques: Vec<TechniqueRecord>,
    devices: Vec<DeviceRecord>,
    matrix: BenchmarkMatrix,
    provenance: BTreeMap<(usize, usize), Provenance>,
}

impl Default for StoreSnapshot {
    fn default() -> Self {
        Self::new()
    }
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl StoreSnapshot {
    pub fn new() -> Self {
        StoreSnapshot {
            techniques: Vec::new(),
            devices: Vec::new(),
            matrix: BenchmarkMatrix::new(Vec::new(), Vec::new()).expect("empty labels"),
            provenance: BTreeMap::new(),
        }
    }

    /// Builds a store from a fully ingested benchmark matrix, registering one
    /// technique per row and one device per column. Every entry is flagged as
    /// measured; ingested devices are assumed connected.
    pub fn from_measured_matrix(
        matrix: BenchmarkMatrix,
        technique_type: &str,
        domain: &str,
    ) -> Result<Self, StoreError> {
        let ts = now_millis();
        let techniques = matrix
            .row_labels()
            .iter()
            .map(|id| TechniqueRecord {
                id: id.clone(),
                technique_type: technique_type.to_string(),
                registered_at: ts,
            })
            .collect::<Vec<_>>();
        let devices = matrix
            .col_labels()
            .iter()
            .map(|id| DeviceRecord {
                id: id.clone(),
                domain: domain.to_string(),
                connectivity: true,
            })
            .collect::<Vec<_>>();
        for t in &techniques {
            validate_technique(t)?;
        }
        let provenance = matrix
            .observed()
            .map(|(k, _)| (k, Provenance::Measured))
            .collect();
        Ok(StoreSnapshot {
            techniques,
            devices,
            matrix,
            provenance,
        })
    }

    pub fn techniques(&self) -> &[TechniqueRecord] {
        &self.techniques
    }

    pub fn devices(&self) -> &[DeviceRecord] {
        &self.devices
    }

    pub fn matrix(&self) -> &BenchmarkMatrix {
        &self.matrix
    }

    pub fn technique_index(&self, id: &str) -> Option<usize> {
        self.techniques.iter().position(|t| t.id == id)
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.iter().position(|d| d.id == id)
    }

    pub fn provenance_of(&self, row: usize, col: usize) -> Option<Provenance> {
        self.provenance.get(&(row, col)).copied()
    }

    /// Appends a technique record and an empty matrix row. The id must be new.
    pub fn register_technique(&mut self, record: TechniqueRecord) -> Result<usize, StoreError> {
        validate_technique(&record)?;
        if self.technique_index(&record.id).is_some() {
            return Err(StoreError::DuplicateTechnique { id: record.id });
        }
        let row = self.matrix.add_row(&record.id)?;
        self.techniques.push(record);
        Ok(row)
    }

    /// Appends a device record and an empty matrix column. The id must be new.
    pub fn register_device(&mut self, record: DeviceRecord) -> Result<usize, StoreError> {
        if record.id.is_empty() {
            return Err(StoreError::InvalidRecord("device id must be nonempty".into()));
        }
        if self.device_index(&record.id).is_some() {
            return Err(StoreError::DuplicateDevice { id: record.id });
        }
        let col = self.matrix.add_col(&record.id)?;
        self.devices.push(record);
        Ok(col)
    }

    /// Stores a measured benchmark. Re-measurement overwrites anything,
    /// predictions included.
    pub fn insert_measured(&mut self, row: usize, col: usize, value: f64) -> Result<(), StoreError> {
        self.matrix.insert(row, col, value)?;
        self.provenance.insert((row, col), Provenance::Measured);
        Ok(())
    }

    /// Stores a predicted benchmark. A prediction may fill an empty cell or
    /// replace an older prediction, but never overwrites a measured value.
    pub fn insert_predicted(&mut self, row: usize, col: usize, value: f64) -> Result<(), StoreError> {
        if self.provenance.get(&(row, col)) == Some(&Provenance::Measured) {
            return Err(StoreError::ProvenanceDowngrade { row, col });
        }
        self.matrix.insert(row, col, value)?;
        self.provenance.insert((row, col), Provenance::Predicted);
        Ok(())
    }

    /// Stored value and provenance for a technique/device pair.
    pub fn lookup(&self, technique_id: &str, device_id: &str) -> Result<(f64, Provenance), StoreError> {
        let row = self
            .technique_index(technique_id)
            .ok_or_else(|| StoreError::UnknownTechnique {
                id: technique_id.to_string(),
                known: self.techniques.len(),
            })?;
        let col = self
            .device_index(device_id)
            .ok_or_else(|| StoreError::UnknownDevice {
                id: device_id.to_string(),
                known: self.devices.len(),
            })?;
        let value = self
            .matrix
            .get(row, col)
            .ok_or_else(|| StoreError::NoBenchmark {
                technique: technique_id.to_string(),
                device: device_id.to_string(),
            })?;
        let provenance = self.provenance[&(row, col)];
        Ok((value, provenance))
    }

    /// Serializes to the store file JSON and writes it atomically: the bytes
    /// go to a sibling `.tmp` file which is then renamed over `path`.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let payload = Payload {
            techniques: self.techniques.clone(),
            devices: self.devices.clone(),
            matrix: self.matrix.clone(),
            provenance: self
                .provenance
                .iter()
                .map(|(&(i, j), &p)| (i, j, p))
                .collect(),
        };
        let checksum = payload.checksum();
        let file = StoreFile {
            version: STORE_FORMAT_VERSION,
            checksum,
            techniques: payload.techniques,
            devices: payload.devices,
            matrix: payload.matrix,
            provenance: payload.provenance,
        };
        let bytes = serde_json::to_vec_pretty(&file)
            .map_err(|e| StoreError::Corrupted(format!("serialize: {e}")))?;
        let mut tmp = path.as_os_str().to_os_string();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads and validates a store file: version must match, the payload
    /// checksum must verify, and the matrix labels must agree with the
    /// registered records. Never returns a partially valid snapshot.
    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path)?;
        let file: StoreFile = serde_json::from_slice(&bytes)
            .map_err(|e| StoreError::Corrupted(format!("parse: {e}")))?;
        if file.version != STORE_FORMAT_VERSION {
            return Err(StoreError::VersionMismatch {
                found: file.version,
                expected: STORE_FORMAT_VERSION,
            });
        }
        let payload = Payload {
            techniques: file.techniques,
            devices: file.devices,
            matrix: file.matrix,
            provenance: file.provenance,
        };
        if payload.checksum() != file.checksum {
            return Err(StoreError::Corrupted("checksum mismatch".into()));
        }
        let snapshot = StoreSnapshot {
            techniques: payload.techniques,
            devices: payload.devices,
            matrix: payload.matrix,
            provenance: payload
                .provenance
                .into_iter()
                .map(|(i, j, p)| ((i, j), p))
                .collect(),
        };
        snapshot.validate()?;
        Ok(snapshot)
    }

    fn validate(&self) -> Result<(), StoreError> {
        let tech_ids: Vec<&str> = self.techniques.iter().map(|t| t.id.as_str()).collect();
        let row_labels: Vec<&str> = self.matrix.row_labels().iter().map(String::as_str).collect();
        if tech_ids != row_labels {
            return Err(StoreError::Corrupted(
                "matrix row labels do not match registered techniques".into(),
            ));
        }
        let dev_ids: Vec<&str> = self.devices.iter().map(|d| d.id.as_str()).collect();
        let col_labels: Vec<&str> = self.matrix.col_labels().iter().map(String::as_str).collect();
        if dev_ids != col_labels {
            return Err(StoreError::Corrupted(
                "matrix column labels do not match registered devices".into(),
            ));
        }
        for ((i, j), _) in self.matrix.observed() {
            if !self.provenance.contains_key(&(i, j)) {
                return Err(StoreError::Corrupted(format!(
                    "entry ({i}, {j}) has no provenance flag"
                )));
            }
        }
        for &(i, j) in self.provenance.keys() {
            if self.matrix.get(i, j).is_none() {
                return Err(StoreError::Corrupted(format!(
                    "provenance flag for absent entry ({i}, {j})"
                )));
            }
        }
        Ok(())
    }
}

fn validate_technique(record: &TechniqueRecord) -> Result<(), StoreError> {
    if record.id.is_empty() {
        return Err(StoreError::InvalidRecord("technique id must be nonempty".into()));
    }
    if record.technique_type.is_empty() {
        return Err(StoreError::InvalidRecord(format!(
            "technique `{}` has an empty type",
            record.id
        )));
    }
    Ok(())
}

/// The checksummed portion of the store file.
#[derive(Serialize, Deserialize)]
struct Payload {
    techniques: Vec<TechniqueRecord>,
    devices: Vec<DeviceRecord>,
    matrix: BenchmarkMatrix,
    provenance: Vec<(usize, usize, Provenance)>,
}

impl Payload {
    fn checksum(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("payload serializes");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    checksum: String,
    techniques: Vec<TechniqueRecord>,
    devices: Vec<DeviceRecord>,
    matrix: BenchmarkMatrix,
    provenance: Vec<(usize, usize, Provenance)>,
}
