use std::fmt::Write as _;
use std::io::Write;

use log::{info, warn};

use super::config::{ExperimentConfig, Protocol};
use super::histogram::{default_threads, CacheKey, HistogramCache, QBER_RESOLUTION};
use crate::decoy::{estimate_bounds, simulate_observables, skr_decoy};
use crate::error::Result;
use crate::skr::{Improvement, SkrBreakdown};
use crate::sns::{delta_multi_z, simulate_sns_observables, skr_sns, SinglePhotonRate};

pub const CSV_HEADER: &str =
    "distance_km,qber,r_original,r_improved,improvement_ratio,leaked_all_per_bit,leaked_useful_per_bit,delta_multi_min";

/// Histograms are measured at the row QBER clamped into this range; Cascade
/// is undefined at 0 and 0.5.
const HIST_QBER_MIN: f64 = QBER_RESOLUTION;
const HIST_QBER_MAX: f64 = 0.5 - QBER_RESOLUTION;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub distance_km: f64,
    pub qber: f64,
    pub r_original: f64,
    pub r_improved: f64,
    pub improvement: Improvement,
    pub leaked_all_per_bit: f64,
    pub leaked_useful_per_bit: f64,
    pub delta_multi_min: f64,
}

impl SweepRow {
    fn from_breakdown(distance_km: f64, skr: &SkrBreakdown) -> Self {
        SweepRow {
            distance_km,
            qber: skr.qber,
            r_original: skr.r_original,
            r_improved: skr.r_improved,
            improvement: skr.improvement(),
            leaked_all_per_bit: skr.leaked_all_per_bit,
            leaked_useful_per_bit: skr.leaked_useful_per_bit,
            delta_multi_min: skr.delta_multi_min,
        }
    }

    pub fn improvement_ratio(&self) -> Option<f64> {
        match self.improvement {
            Improvement::Ratio(r) => Some(r),
            _ => None,
        }
    }

    pub fn csv_row(&self) -> String {
        let ratio = match self.improvement {
            Improvement::Ratio(r) => r.to_string(),
            Improvement::Unbounded => "unbounded".to_string(),
            Improvement::NoKey => "undefined".to_string(),
        };
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.distance_km,
            self.qber,
            self.r_original,
            self.r_improved,
            ratio,
            self.leaked_all_per_bit,
            self.leaked_useful_per_bit,
            self.delta_multi_min
        )
        .unwrap();
        s
    }
}

/// QBER of the reconciled string at `distance_km`: `E_μ` or `E_z`.
pub fn row_qber(protocol: &Protocol, distance_km: f64) -> f64 {
    match protocol {
        Protocol::DecoyBb84(p) => simulate_observables(p, distance_km).e_mu,
        Protocol::SnsTf { params, .. } => simulate_sns_observables(params, distance_km).ez,
    }
}

pub fn histogram_key(config: &ExperimentConfig, qber: f64) -> CacheKey {
    CacheKey::new(
        qber.clamp(HIST_QBER_MIN, HIST_QBER_MAX),
        config.n_bits,
        &config.seeds,
        config.histogram_mode,
    )
}

/// Computes one row; the histogram comes from `cache`.
pub fn sweep_point(config: &ExperimentConfig, distance_km: f64, cache: &HistogramCache) -> Result<SweepRow> {
    let n = config.n_bits;
    let skr = match &config.protocol {
        Protocol::DecoyBb84(params) => {
            let obs = simulate_observables(params, distance_km);
            let bounds = estimate_bounds(&obs, params)?;
            let hist = cache.get_or_measure(&histogram_key(config, obs.e_mu))?;
            skr_decoy(params, &obs, &bounds, &hist, n)
        }
        Protocol::SnsTf { params, form } => {
            let obs = simulate_sns_observables(params, distance_km);
            let delta = delta_multi_z(params, &obs, SinglePhotonRate::Estimated, *form)?;
            let hist = cache.get_or_measure(&histogram_key(config, obs.ez))?;
            skr_sns(params, &obs, delta, &hist, n)
        }
    };
    Ok(SweepRow::from_breakdown(distance_km, &skr))
}

/// Runs the sweep with a fresh in-memory cache.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    run_sweep_with_cache(config, &HistogramCache::new())
}

/// Measures every distinct histogram in parallel, then computes rows in grid
/// order. With `output_path` set, rows are streamed to the CSV as they are
/// computed, so a failure leaves the rows before it on disk.
pub fn run_sweep_with_cache(config: &ExperimentConfig, cache: &HistogramCache) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let keys: Vec<CacheKey> = config
        .distance_grid
        .iter()
        .map(|&d| histogram_key(config, row_qber(&config.protocol, d)))
        .collect();
    if let Err(e) = cache.prefetch(&keys, default_threads()) {
        warn!("histogram prefetch failed ({e}); continuing row by row");
    }

    let mut out = match &config.output_path {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(w, "{CSV_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut rows = Vec::with_capacity(config.distance_grid.len());
    for &d in &config.distance_grid {
        let row = match sweep_point(config, d, cache) {
            Ok(row) => row,
            Err(e) => {
                if let Some(w) = out.as_mut() {
                    w.flush()?;
                }
                return Err(e);
            }
        };
        if let Some(w) = out.as_mut() {
            writeln!(w, "{}", row.csv_row())?;
        }
        rows.push(row);
    }
    if let Some(mut w) = out {
        w.flush()?;
        info!("wrote {} rows", rows.len());
    }
    Ok(rows)
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for row in rows {
        s.push_str(&row.csv_row());
        s.push('\n');
    }
    s
}

/// Largest grid distance with a positive original and improved rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoffs {
    pub original_km: Option<f64>,
    pub improved_km: Option<f64>,
}

impl Cutoffs {
    pub fn of(rows: &[SweepRow]) -> Self {
        let last = |f: fn(&SweepRow) -> f64| rows.iter().rev().find(|r| f(r) > 0.0).map(|r| r.distance_km);
        Cutoffs {
            original_km: last(|r| r.r_original),
            improved_km: last(|r| r.r_improved),
        }
    }

    pub fn extension_km(&self) -> Option<f64> {
        Some(self.improved_km? - self.original_km?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoy::DecoyParams;
    use crate::experiment::config::{linear_grid, HistogramMode};
    use crate::sns::{MultiFractionForm, SnsParams};

    fn small(protocol: Protocol, grid: Vec<f64>) -> ExperimentConfig {
        ExperimentConfig {
            n_bits: 10_000,
            seeds: vec![1],
            ..ExperimentConfig::new(protocol, grid)
        }
    }

    #[test]
    fn decoy_rows_dominate() {
        let cfg = small(Protocol::DecoyBb84(DecoyParams::reference()), linear_grid(0.0, 140.0, 5.0));
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 29);
        for r in &rows {
            assert!(r.r_improved >= r.r_original, "{r:?}");
            assert!(0.0 <= r.leaked_useful_per_bit && r.leaked_useful_per_bit <= r.leaked_all_per_bit);
        }
    }

    #[test]
    fn empty_grid_is_rejected() {
        let cfg = small(Protocol::DecoyBb84(DecoyParams::reference()), vec![]);
        assert!(run_sweep(&cfg).is_err());
    }

    #[test]
    fn extreme_qber_rows_still_compute() {
        let cfg = small(Protocol::DecoyBb84(DecoyParams::reference()), vec![0.0, 400.0]);
        let rows = run_sweep(&cfg).unwrap();
        assert_eq!(rows[1].r_original, 0.0);
        assert_eq!(rows[1].improvement, Improvement::NoKey);
        assert!(rows[1].csv_row().contains("undefined"));
    }

    #[test]
    fn csv_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let grid = vec![100.0, 400.0, 700.0];
        let protocol = Protocol::SnsTf {
            params: SnsParams::reference(),
            form: MultiFractionForm::PerWindow,
        };
        let mut texts = Vec::new();
        for i in 0..2 {
            let mut cfg = small(protocol.clone(), grid.clone());
            cfg.histogram_mode = HistogramMode::Measured;
            cfg.output_path = Some(dir.path().join(format!("run{i}.csv")));
            let rows = run_sweep(&cfg).unwrap();
            let text = std::fs::read_to_string(cfg.output_path.unwrap()).unwrap();
            assert_eq!(text, to_csv(&rows));
            texts.push(text);
        }
        assert_eq!(texts[0], texts[1]);
        assert!(texts[0].starts_with(CSV_HEADER));
    }

    #[test]
    fn ratio_flags() {
        let mut row = SweepRow {
            distance_km: 1.0,
            qber: 0.1,
            r_original: 0.0,
            r_improved: 1e-3,
            improvement: Improvement::Unbounded,
            leaked_all_per_bit: 0.5,
            leaked_useful_per_bit: 0.25,
            delta_multi_min: 0.1,
        };
        assert_eq!(row.csv_row(), "1,0.1,0,0.001,unbounded,0.5,0.25,0.1");
        row.improvement = Improvement::Ratio(0.5);
        assert_eq!(row.improvement_ratio(), Some(0.5));
    }

    #[test]
    fn cutoffs() {
        let row = |d: f64, o: f64, i: f64| SweepRow {
            distance_km: d,
            qber: 0.0,
            r_original: o,
            r_improved: i,
            improvement: Improvement::NoKey,
            leaked_all_per_bit: 0.0,
            leaked_useful_per_bit: 0.0,
            delta_multi_min: 0.0,
        };
        let c = Cutoffs::of(&[row(0.0, 1.0, 1.0), row(1.0, 1.0, 2.0), row(2.0, 0.0, 1.0), row(3.0, 0.0, 0.0)]);
        assert_eq!(c.extension_km(), Some(1.0));
        assert_eq!(Cutoffs::of(&[row(0.0, 0.0, 0.0)]).extension_km(), None);
    }
}
