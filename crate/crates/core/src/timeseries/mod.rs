//! Smart-meter pipeline, synthetic system generator, the annual simulation
//! loop and its result files.

mod aggregate;
mod annual;
mod clean;
mod meters;
mod output;
mod synth;

pub use aggregate::{aggregate_to_transformer, draw_power_factor, LoadProfile, PfRange, Provenance};
pub use annual::{
    run_year, simulate_meters, summarize_all, summarize_voltages, AnnualResult, BusTrace, BusVoltageSummary, HourRecord, HourTapEvent,
    RunMeta, RunOptions, HIST_BINS, HIST_HI_PU, HIST_LO_PU,
};
pub use clean::{clean_all, clean_series, detect_outliers, CleanParams, MAD_SCALE};
pub use meters::{ingest_meters, read_meters, write_meters_csv, MeterSeries, SampleFlag, METER_CSV_HEADER};
pub use output::{
    read_report, write_results, ReportSummary, MISMATCH_P95_LIMIT_PCT, REGULATED_V_LIMITS, RESULT_FILES,
};
pub use synth::{
    synth_feeder, SynthParams, SyntheticSystem, DISTRIBUTION_TRANSFORMER_TABLE, SUBSTATION_KVA, TABLE_III_CONDUCTORS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::ModelError;
use crate::solver::SolveError;

/// Hours in a non-leap calendar year.
pub const HOURS_PER_YEAR: usize = 8760;

#[derive(Debug, Error)]
pub enum TimeseriesError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("meter CSV line {line}: {message}")]
    Schema { line: u64, message: String },
    #[error("meter CSV line {line}: duplicate sample for meter `{meter}` at hour {hour}")]
    Duplicate { line: u64, meter: String, hour: usize },
    #[error("meter CSV line {line}: timestamp for meter `{meter}` goes backwards")]
    NonMonotonic { line: u64, meter: String },
    #[error("year {0} is a leap year; only 8760-hour years are supported")]
    LeapYear(i32),
    #[error("meter `{meter}`: {missing} of {total} samples missing, more than half")]
    TooMuchMissing { meter: String, missing: usize, total: usize },
    #[error("meter `{0}` is not mapped to any load point")]
    UnmappedMeter(String),
    #[error("meter `{meter}` still has {count} unrepaired samples; clean it first")]
    Unclean { meter: String, count: usize },
    #[error("no profile for load point `{0}`")]
    MissingProfile(String),
    #[error("profile for load point `{id}` has {got} hours, need {want}")]
    ProfileLength { id: String, got: usize, want: usize },
    #[error("unknown feeder `{0}`")]
    UnknownFeeder(String),
    #[error("result directory {0}: {1}")]
    Results(String, String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("hour {hour}: {source}")]
    Solve { hour: usize, source: SolveError },
}

/// Seed of a named random sub-stream derived from the run seed.
pub fn substream_seed(seed: u64, stream: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn substream(seed: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, stream))
}

pub fn is_leap_year(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}
