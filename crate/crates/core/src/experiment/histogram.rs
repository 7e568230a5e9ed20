//! Cascade block-length histograms per QBER, averaged over seeds and cached.
//!
//! # Cache file format
//!
//! ```text
//! histogram qber=<Q> n_bits=<N> mode=<measured|normalized-f1> seeds=<s1,s2,...>
//! <l> <count>
//! ...
//! ```
//!
//! One `(length, count)` line per block length in ascending order. Counts
//! are written in Rust's shortest round-trip float form, so a reloaded
//! histogram is bit-identical to the computed one.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::debug;

use super::config::HistogramMode;
use crate::cascade::{noisy_pair, reconcile, BlockHistogram, CascadeConfig};
use crate::error::{Error, Result};
use crate::math::{derive_seed, h2};

/// QBER resolution of the cache; measurements run at the rounded value.
pub const QBER_RESOLUTION: f64 = 1e-4;

pub fn quantize_qber(qber: f64) -> i64 {
    (qber / QBER_RESOLUTION).round() as i64
}

fn dequantize(key: i64) -> f64 {
    key as f64 * QBER_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub qber_key: i64,
    pub n_bits: usize,
    pub mode: HistogramMode,
    pub seeds: Vec<u64>,
}

impl CacheKey {
    pub fn new(qber: f64, n_bits: usize, seeds: &[u64], mode: HistogramMode) -> Self {
        CacheKey {
            qber_key: quantize_qber(qber),
            n_bits,
            mode,
            seeds: seeds.to_vec(),
        }
    }

    pub fn qber(&self) -> f64 {
        dequantize(self.qber_key)
    }

    fn file_name(&self) -> String {
        let digest = self
            .seeds
            .iter()
            .fold(0u64, |acc, &s| derive_seed(acc, "seed-list", s));
        format!(
            "hist_q{:05}_n{}_{}_{:016x}.txt",
            self.qber_key,
            self.n_bits,
            self.mode.as_str(),
            digest
        )
    }
}

/// Averages Cascade histograms over `seeds` at `qber` (rounded to [`QBER_RESOLUTION`]).
///
/// In [`HistogramMode::NormalizedF1`] the averaged counts are rescaled so that
/// their total is exactly `n_bits · H2(qber)`.
pub fn measure_histogram(
    qber: f64,
    n_bits: usize,
    seeds: &[u64],
    mode: HistogramMode,
) -> Result<BlockHistogram> {
    measure_key(&CacheKey::new(qber, n_bits, seeds, mode))
}

fn measure_key(key: &CacheKey) -> Result<BlockHistogram> {
    let qber = key.qber();
    if !(qber > 0.0 && qber < 0.5) {
        return Err(crate::error::invalid("qber", format!("must lie in (0, 0.5), got {qber}")));
    }
    if key.seeds.is_empty() {
        return Err(crate::error::invalid("seeds", "at least one seed is required"));
    }
    let mut sum = BlockHistogram::new(key.n_bits);
    for &seed in &key.seeds {
        let (a, b) = noisy_pair(key.n_bits, qber, derive_seed(seed, "errors", 0))?;
        let config = CascadeConfig::with_seed(derive_seed(seed, "cascade", 0));
        let run = reconcile(&a, &b, qber, &config)?;
        sum.add_assign(&run.transcript.histogram());
    }
    let mean = sum.scaled(1.0 / key.seeds.len() as f64);
    Ok(match key.mode {
        HistogramMode::Measured => mean,
        HistogramMode::NormalizedF1 => {
            let target = key.n_bits as f64 * h2(qber);
            mean.scaled(target / mean.total())
        }
    })
}

pub fn write_histogram_file<W: Write>(mut out: W, key: &CacheKey, hist: &BlockHistogram) -> Result<()> {
    let seeds: Vec<String> = key.seeds.iter().map(u64::to_string).collect();
    writeln!(
        out,
        "histogram qber={} n_bits={} mode={} seeds={}",
        key.qber(),
        key.n_bits,
        key.mode.as_str(),
        seeds.join(",")
    )?;
    for (l, c) in hist.iter() {
        writeln!(out, "{l} {c}")?;
    }
    Ok(())
}

pub fn read_histogram_file<R: BufRead>(input: R) -> Result<(CacheKey, BlockHistogram)> {
    let bad = |line: usize, reason: &str| Error::TranscriptFormat {
        line,
        reason: format!("histogram file: {reason}"),
    };
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
    let mut fields = header.split(' ');
    if fields.next() != Some("histogram") {
        return Err(bad(1, "header must start with `histogram`"));
    }
    let (mut qber, mut n_bits, mut mode, mut seeds) = (None, None, None, None);
    for field in fields {
        let (k, v) = field.split_once('=').ok_or_else(|| bad(1, "bad header field"))?;
        match k {
            "qber" => qber = v.parse::<f64>().ok(),
            "n_bits" => n_bits = v.parse::<usize>().ok(),
            "mode" => mode = v.parse::<HistogramMode>().ok(),
            "seeds" => {
                seeds = v
                    .split(',')
                    .map(|s| s.parse::<u64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .ok()
            }
            _ => return Err(bad(1, "unknown header key")),
        }
    }
    let (Some(qber), Some(n_bits), Some(mode), Some(seeds)) = (qber, n_bits, mode, seeds) else {
        return Err(bad(1, "header needs qber, n_bits, mode and seeds"));
    };
    let mut pairs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (l, c) = line.split_once(' ').ok_or_else(|| bad(i + 2, "expected `<l> <count>`"))?;
        let l: usize = l.parse().map_err(|_| bad(i + 2, "bad length"))?;
        let c: f64 = c.parse().map_err(|_| bad(i + 2, "bad count"))?;
        pairs.push((l, c));
    }
    let key = CacheKey::new(qber, n_bits, &seeds, mode);
    Ok((key, BlockHistogram::from_counts(n_bits, pairs)?))
}

/// Shared histogram store: many readers, one writer at a time.
///
/// With a directory attached, computed histograms are also written to disk
/// and later lookups reload them instead of rerunning Cascade.
#[derive(Debug, Default)]
pub struct HistogramCache {
    entries: Mutex<HashMap<CacheKey, Arc<BlockHistogram>>>,
    dir: Option<PathBuf>,
}

impl HistogramCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        HistogramCache {
            entries: Mutex::new(HashMap::new()),
            dir: Some(dir.into()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entries.lock().unwrap().contains_key(key)
    }

    pub fn get_or_measure(&self, key: &CacheKey) -> Result<Arc<BlockHistogram>> {
        if let Some(hit) = self.entries.lock().unwrap().get(key) {
            return Ok(Arc::clone(hit));
        }
        let hist = match self.load(key)? {
            Some(h) => h,
            None => {
                let h = measure_key(key)?;
                self.store(key, &h)?;
                h
            }
        };
        let mut entries = self.entries.lock().unwrap();
        Ok(Arc::clone(entries.entry(key.clone()).or_insert_with(|| Arc::new(hist))))
    }

    /// Measures every missing key, spreading work over `threads` workers.
    pub fn prefetch(&self, keys: &[CacheKey], threads: usize) -> Result<()> {
        let mut pending: Vec<&CacheKey> = keys.iter().filter(|k| !self.contains(k)).collect();
        pending.sort_by_key(|k| k.qber_key);
        pending.dedup();
        if pending.is_empty() {
            return Ok(());
        }
        debug!("measuring {} histograms on {threads} threads", pending.len());
        let next = std::sync::atomic::AtomicUsize::new(0);
        let first_error: Mutex<Option<Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..threads.max(1) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    let Some(key) = pending.get(i) else { break };
                    if let Err(e) = self.get_or_measure(key) {
                        first_error.lock().unwrap().get_or_insert(e);
                        break;
                    }
                });
            }
        });
        match first_error.into_inner().unwrap() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(key.file_name()))
    }

    fn load(&self, key: &CacheKey) -> Result<Option<BlockHistogram>> {
        let Some(path) = self.path_for(key) else { return Ok(None) };
        if !path.exists() {
            return Ok(None);
        }
        let file = std::io::BufReader::new(std::fs::File::open(&path)?);
        let (stored, hist) = read_histogram_file(file)?;
        Ok((stored == *key).then_some(hist))
    }

    fn store(&self, key: &CacheKey, hist: &BlockHistogram) -> Result<()> {
        let Some(path) = self.path_for(key) else { return Ok(()) };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        write_histogram_file(std::io::BufWriter::new(std::fs::File::create(&tmp)?), key, hist)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}

/// Worker count for prefetching; honours `SKRLEAK_THREADS` when set.
pub fn default_threads() -> usize {
    std::env::var("SKRLEAK_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub fn cache_file_path(dir: &Path, key: &CacheKey) -> PathBuf {
    dir.join(key.file_name())
}
