//! Parameter files, histogram measurement, distance sweeps and the oracle suite.

pub mod config;
pub mod histogram;
pub mod oracle;
pub mod sweep;

pub use config::{ExperimentConfig, HistogramMode, Protocol};
pub use histogram::{measure_histogram, CacheKey, HistogramCache};
pub use oracle::{run_oracle_suite, OracleReport};
pub use sweep::{run_sweep, run_sweep_with_cache, Cutoffs, SweepRow};
