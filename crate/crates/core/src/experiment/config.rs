//! Flat `key = value` experiment files.
//!
//! Blank lines and lines starting with `#` are ignored. Parameter keys follow
//! the conventional parameter names (`mu`, `nu1`, `nu2`, `q`, `alpha`, `d`, `eta_d`,
//! `e_det` for decoy BB84; `pz_a`, `pz_b`, `eps_a`, `eps_b`, `mu_a`, `mu_b`,
//! `mu_a1`, `mu_a2`, `mu_b1`, `mu_b2`, `e_d`, `alpha`, `d`, `eta_d`, `e_det`
//! for SNS-TF). Unspecified parameters take the protocol's reference values.
//!
//! Run keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `protocol` | `decoy-bb84` or `sns-tf` (required) |
//! | `distances` | comma-separated km values, or |
//! | `distance_start`, `distance_stop`, `distance_step` | an inclusive grid |
//! | `n_bits` | reconciled string length, ≥ 10000 |
//! | `seed` | root seed (default 0) |
//! | `seed_count` | number of Cascade runs averaged per histogram (default 4) |
//! | `seeds` | explicit comma-separated seed list (overrides `seed_count`) |
//! | `mode` | `measured` or `normalized-f1` (default `normalized-f1`) |
//! | `output` | CSV path |
//! | `delta_multi_form` | SNS only: `per-window` (default) or `per-detection` |
//! | `oracle_runs`, `oracle_resamples` | oracle suite sizes (default 100, 200) |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decoy::DecoyParams;
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::sns::{MultiFractionForm, SnsParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HistogramMode {
    /// Raw averaged Cascade counts.
    Measured,
    /// Counts rescaled so total leakage is exactly `N·H2(e)`.
    NormalizedF1,
}

impl HistogramMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HistogramMode::Measured => "measured",
            HistogramMode::NormalizedF1 => "normalized-f1",
        }
    }
}

impl FromStr for HistogramMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "measured" => Ok(HistogramMode::Measured),
            "normalized-f1" => Ok(HistogramMode::NormalizedF1),
            other => Err(config_err("mode", format!("expected measured|normalized-f1, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    DecoyBb84(DecoyParams),
    SnsTf { params: SnsParams, form: MultiFractionForm },
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::DecoyBb84(_) => "decoy-bb84",
            Protocol::SnsTf { .. } => "sns-tf",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub distance_grid: Vec<f64>,
    pub n_bits: usize,
    pub seeds: Vec<u64>,
    pub histogram_mode: HistogramMode,
    pub output_path: Option<PathBuf>,
    pub oracle_runs: usize,
    pub oracle_resamples: usize,
}

pub const MIN_N_BITS: usize = 10_000;

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Derives `count` histogram seeds from a root seed.
pub fn seeds_from_root(root: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| derive_seed(root, "histogram-seed", i)).collect()
}

/// Inclusive grid `start, start+step, …` up to `stop` (with a half-step tolerance for rounding).
pub fn linear_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + step * i as f64).collect()
}

impl ExperimentConfig {
    pub fn new(protocol: Protocol, distance_grid: Vec<f64>) -> Self {
        ExperimentConfig {
            protocol,
            distance_grid,
            n_bits: 100_000,
            seeds: seeds_from_root(0, 4),
            histogram_mode: HistogramMode::NormalizedF1,
            output_path: None,
            oracle_runs: 100,
            oracle_resamples: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.distance_grid.is_empty() {
            return Err(config_err("distances", "distance grid is empty"));
        }
        if self.distance_grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(config_err("distances", "distances must be finite and >= 0"));
        }
        if self.distance_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("distances", "distance grid must be strictly increasing"));
        }
        if self.n_bits < MIN_N_BITS {
            return Err(config_err("n_bits", format!("must be >= {MIN_N_BITS}, got {}", self.n_bits)));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        if self.oracle_runs == 0 || self.oracle_resamples == 0 {
            return Err(config_err("oracle_runs", "oracle sizes must be positive"));
        }
        match &self.protocol {
            Protocol::DecoyBb84(p) => p.validate(),
            Protocol::SnsTf { params, .. } => params.validate(),
        }
        .map_err(|e| match e {
            Error::InvalidParameter { name, reason } => config_err(name, reason),
            other => other,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(&format!("line {}", i + 1), "expected `key = value`"))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(config_err(&key, "duplicate key"));
            }
        }
        let mut reader = Entries { entries };
        let config = reader.build()?;
        if let Some(key) = reader.entries.keys().next() {
            return Err(config_err(key, "unknown key"));
        }
        config.validate()?;
        Ok(config)
    }
}

struct Entries {
    entries: BTreeMap<String, String>,
}

impl Entries {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| config_err(key, format!("cannot parse `{v}`"))),
        }
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| config_err(key, format!("cannot parse `{s}`"))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn build(&mut self) -> Result<ExperimentConfig> {
        let protocol_name: String = self
            .take("protocol")?
            .ok_or_else(|| config_err("protocol", "missing (decoy-bb84 | sns-tf)"))?;
        let protocol = match protocol_name.as_str() {
            "decoy-bb84" => {
                let r = DecoyParams::reference();
                Protocol::DecoyBb84(DecoyParams {
                    mu: self.take_f64("mu", r.mu)?,
                    nu1: self.take_f64("nu1", r.nu1)?,
                    nu2: self.take_f64("nu2", r.nu2)?,
                    q: self.take_f64("q", r.q)?,
                    alpha_db_per_km: self.take_f64("alpha", r.alpha_db_per_km)?,
                    d: self.take_f64("d", r.d)?,
                    eta_d: self.take_f64("eta_d", r.eta_d)?,
                    e_det: self.take_f64("e_det", r.e_det)?,
                })
            }
            "sns-tf" => {
                let r = SnsParams::reference();
                let mu_a = self.take_f64("mu_a", r.mu_a)?;
                let mu_b = self.take_f64("mu_b", r.mu_b)?;
                let mu_a1 = self.take_f64("mu_a1", mu_a)?;
                let mu_b1 = self.take_f64("mu_b1", mu_b)?;
                let params = SnsParams {
                    pz_a: self.take_f64("pz_a", r.pz_a)?,
                    pz_b: self.take_f64("pz_b", r.pz_b)?,
                    eps_a: self.take_f64("eps_a", r.eps_a)?,
                    eps_b: self.take_f64("eps_b", r.eps_b)?,
                    mu_a,
                    mu_b,
                    mu_a1,
                    mu_a2: self.take_f64("mu_a2", 2.0 * mu_a1)?,
                    mu_b1,
                    mu_b2: self.take_f64("mu_b2", 2.0 * mu_b1)?,
                    e_d: self.take_f64("e_d", r.e_d)?,
                    alpha_db_per_km: self.take_f64("alpha", r.alpha_db_per_km)?,
                    d: self.take_f64("d", r.d)?,
                    eta_d: self.take_f64("eta_d", r.eta_d)?,
                    e_det: self.take_f64("e_det", r.e_det)?,
                };
                let form = self.take("delta_multi_form")?.unwrap_or_default();
                Protocol::SnsTf { params, form }
            }
            other => return Err(config_err("protocol", format!("unknown protocol `{other}`"))),
        };

        let explicit: Option<Vec<f64>> = self.take_list("distances")?;
        let start: Option<f64> = self.take("distance_start")?;
        let stop: Option<f64> = self.take("distance_stop")?;
        let step: Option<f64> = self.take("distance_step")?;
        let distance_grid = match (explicit, start, stop, step) {
            (Some(list), None, None, None) => list,
            (None, Some(start), Some(stop), Some(step)) => {
                if !(step > 0.0 && stop >= start) {
                    return Err(config_err("distance_step", "need step > 0 and stop >= start"));
                }
                linear_grid(start, stop, step)
            }
            (None, None, None, None) => Vec::new(),
            _ => {
                return Err(config_err(
                    "distances",
                    "give either `distances` or all of distance_start/stop/step",
                ))
            }
        };

        let mut config = ExperimentConfig::new(protocol, distance_grid);
        if let Some(n) = self.take("n_bits")? {
            config.n_bits = n;
        }
        let root: u64 = self.take("seed")?.unwrap_or(0);
        let count: usize = self.take("seed_count")?.unwrap_or(4);
        config.seeds = match self.take_list("seeds")? {
            Some(list) => list,
            None => seeds_from_root(root, count),
        };
        if let Some(mode) = self.take("mode")? {
            config.histogram_mode = mode;
        }
        config.output_path = self.take::<String>("output")?.map(PathBuf::from);
        if let Some(runs) = self.take("oracle_runs")? {
            config.oracle_runs = runs;
        }
        if let Some(resamples) = self.take("oracle_resamples")? {
            config.oracle_resamples = resamples;
        }
        Ok(config)
    }
}
