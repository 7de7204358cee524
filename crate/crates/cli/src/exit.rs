//! Stable exit codes. Code 2 is reserved by clap for command-line usage
//! errors.

pub const OK: i32 = 0;
/// Bad values, unknown ids, malformed data files.
pub const VALIDATION: i32 = 1;
/// Intent text matched no template.
pub const INTENT_PARSE: i32 = 3;
/// A policy check failed; the recommender was not triggered.
pub const POLICY: i32 = 4;
/// File system problems, corrupted or version-mismatched store files.
pub const IO: i32 = 5;
/// Training produced non-finite factors or no replication could be scored.
pub const DIVERGENCE: i32 = 6;
/// A benchmark measurement was unavailable or invalid.
pub const MEASUREMENT: i32 = 7;
