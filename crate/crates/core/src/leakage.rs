//! Splitting reconciliation leakage into the part Eve already knows and the
//! part that actually costs key.
//!
//! Every sifted bit comes from a vacuum, single-photon or multi-photon pulse.
//! A disclosed parity whose block lies entirely on multi-photon bits tells Eve
//! nothing new, since she holds those bits already. [`virtual_grouping`]
//! builds that partition exactly for a known tagging; [`expected_leaked_multi`]
//! and [`leaked_useful_bound`] give its expectation and the bound used in the
//! key-rate formulas when only the multi-photon fraction is known.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cascade::{Block, BlockHistogram, Transcript};
use crate::error::{Error, Result};
use crate::math::{rng_for, Probability};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhotonClass {
    Vacuum,
    Single,
    Multi,
}

/// Photon-number class of the pulse behind each reconciled bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhotonClassTags {
    tags: Vec<PhotonClass>,
}

impl PhotonClassTags {
    pub fn new(tags: Vec<PhotonClass>) -> Self {
        PhotonClassTags { tags }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn as_slice(&self) -> &[PhotonClass] {
        &self.tags
    }

    pub fn is_multi(&self, idx: u32) -> bool {
        self.tags[idx as usize] == PhotonClass::Multi
    }

    pub fn count(&self, class: PhotonClass) -> usize {
        self.tags.iter().filter(|&&t| t == class).count()
    }
}

/// Draws i.i.d. tags with `P(vacuum) = delta0`, `P(single) = delta1`, the rest multi.
pub fn sample_tags(n: usize, delta0: f64, delta1: f64, seed: u64) -> Result<PhotonClassTags> {
    if n == 0 {
        return Err(crate::error::invalid("n", "must be positive"));
    }
    for (name, value) in [("delta0", delta0), ("delta1", delta1)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(crate::error::invalid(name, format!("{value} outside [0, 1]")));
        }
    }
    if delta0 + delta1 > 1.0 + 1e-12 {
        return Err(crate::error::invalid(
            "delta0 + delta1",
            format!("{} exceeds 1", delta0 + delta1),
        ));
    }
    let mut rng = rng_for(seed, "tags", 0);
    let tags = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < delta0 {
                PhotonClass::Vacuum
            } else if u < delta0 + delta1 {
                PhotonClass::Single
            } else {
                PhotonClass::Multi
            }
        })
        .collect();
    Ok(PhotonClassTags { tags })
}

/// The two virtual groups: blocks wholly on multi-photon bits, and everything else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupingResult {
    pub c_multi: Vec<Block>,
    /// Sorted union of `c_multi`.
    pub a_multi: Vec<u32>,
    pub c_other: Vec<Block>,
    /// Sorted complement of `a_multi` in `0..n`.
    pub a_other: Vec<u32>,
}

impl GroupingResult {
    pub fn leaked_multi(&self) -> usize {
        self.c_multi.len()
    }

    pub fn leaked_other(&self) -> usize {
        self.c_other.len()
    }

    /// Checks the structural guarantees of the construction; returns the first violation.
    pub fn check_invariants(&self, tags: &PhotonClassTags) -> std::result::Result<(), String> {
        let n = tags.len();
        let mut in_multi = vec![false; n];
        for &i in &self.a_multi {
            in_multi[i as usize] = true;
        }
        for block in &self.c_multi {
            if !block.iter().all(|&i| in_multi[i as usize] && tags.is_multi(i)) {
                return Err(format!("c_multi block {block:?} leaves A_multi or A^M"));
            }
        }
        let mut covered = vec![0u8; n];
        for &i in self.a_multi.iter().chain(&self.a_other) {
            covered[i as usize] += 1;
        }
        if let Some(i) = covered.iter().position(|&c| c != 1) {
            return Err(format!("index {i} is not covered exactly once by A_multi and A_other"));
        }
        for block in &self.c_other {
            if block.is_empty() || block.iter().any(|&i| in_multi[i as usize]) {
                return Err(format!("c_other block {block:?} is empty or touches A_multi"));
            }
        }
        Ok(())
    }
}

fn all_multi(block: &[u32], tags: &PhotonClassTags) -> bool {
    block.iter().all(|&i| tags.is_multi(i))
}

/// Builds `C_multi`, `A_multi`, `C_other`, `A_other` from a transcript and a tagging.
///
/// `C_other` holds `c \ A_multi` for every block not in `C_multi`; blocks that
/// become empty are dropped. Multiset semantics throughout.
pub fn virtual_grouping(transcript: &Transcript, tags: &PhotonClassTags) -> Result<GroupingResult> {
    let n = transcript.n();
    if tags.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: tags.len(),
        });
    }
    let (c_multi, rest): (Vec<&Block>, Vec<&Block>) =
        transcript.blocks().iter().partition(|b| all_multi(b, tags));

    let mut in_multi = vec![false; n];
    for block in &c_multi {
        for &i in block.iter() {
            in_multi[i as usize] = true;
        }
    }
    let c_other = rest
        .into_iter()
        .map(|b| b.iter().copied().filter(|&i| !in_multi[i as usize]).collect::<Block>())
        .filter(|b| !b.is_empty())
        .collect();
    let (a_multi, a_other): (Vec<u32>, Vec<u32>) = (0..n as u32).partition(|&i| in_multi[i as usize]);

    Ok(GroupingResult {
        c_multi: c_multi.into_iter().cloned().collect(),
        a_multi,
        c_other,
        a_other,
    })
}

/// `|C_other| ≤ |C| − |C_multi|`.
pub fn leaked_other_bound_check(grouping: &GroupingResult, transcript: &Transcript) -> bool {
    grouping.c_other.len() <= transcript.len() - grouping.c_multi.len()
}

/// Expected number of blocks lying wholly on multi-photon bits: `Σ_l |C^l| Δ^l`.
pub fn expected_leaked_multi(hist: &BlockHistogram, delta_multi: Probability) -> f64 {
    let d = delta_multi.get();
    hist.iter().map(|(l, c)| c * d.powi(l as i32)).sum()
}

/// Upper bound on useful leakage: `Σ_l |C^l| · min(1 − Δ_min^l, 1)`.
pub fn leaked_useful_bound(hist: &BlockHistogram, delta_multi_min: Probability) -> f64 {
    let d = delta_multi_min.get();
    hist.iter()
        .map(|(l, c)| c * (1.0 - d.powi(l as i32)).min(1.0))
        .sum()
}

/// Leakage split for one histogram and multi-photon fraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageBreakdown {
    pub leaked_all: f64,
    pub leaked_multi: f64,
    pub leaked_useful: f64,
}

impl LeakageBreakdown {
    pub fn from_histogram(hist: &BlockHistogram, delta_multi_min: Probability) -> Self {
        let leaked_all = hist.total();
        let leaked_useful = leaked_useful_bound(hist, delta_multi_min).min(leaked_all);
        LeakageBreakdown {
            leaked_all,
            leaked_multi: leaked_all - leaked_useful,
            leaked_useful,
        }
    }

    pub fn per_bit(&self, n: usize) -> Self {
        let n = n as f64;
        LeakageBreakdown {
            leaked_all: self.leaked_all / n,
            leaked_multi: self.leaked_multi / n,
            leaked_useful: self.leaked_useful / n,
        }
    }
}

/// Number of wholly-multi blocks per block length, without building the groups.
pub fn multi_blocks_by_length(transcript: &Transcript, tags: &PhotonClassTags) -> BTreeMap<usize, usize> {
    let mut out = BTreeMap::new();
    for block in transcript.blocks() {
        if all_multi(block, tags) {
            *out.entry(block.len()).or_insert(0) += 1;
        }
    }
    out
}

/// One run of the exact construction next to the histogram-based estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageReport {
    pub leaked_all: usize,
    pub expected_leaked_multi: f64,
    pub leaked_useful_bound: f64,
    /// `|C| − |C_multi|` from the exact grouping.
    pub exact_leaked_useful: usize,
}

impl LeakageReport {
    pub const CSV_HEADER: &'static str =
        "leaked_all,expected_leaked_multi,leaked_useful_bound,exact_leaked_useful";

    pub fn evaluate(
        transcript: &Transcript,
        tags: &PhotonClassTags,
        delta_multi: Probability,
        delta_multi_min: Probability,
    ) -> Result<Self> {
        let grouping = virtual_grouping(transcript, tags)?;
        let hist = transcript.histogram();
        Ok(LeakageReport {
            leaked_all: transcript.len(),
            expected_leaked_multi: expected_leaked_multi(&hist, delta_multi),
            leaked_useful_bound: leaked_useful_bound(&hist, delta_multi_min),
            exact_leaked_useful: transcript.len() - grouping.leaked_multi(),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.leaked_all, self.expected_leaked_multi, self.leaked_useful_bound, self.exact_leaked_useful
        )
    }
}

/// Per-length Monte Carlo statistics for `|C_multi^l|`.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumStat {
    pub length: usize,
    pub blocks: usize,
    /// `|C^l| Δ^l`.
    pub expected: f64,
    pub mc_mean: f64,
    /// Binomial standard deviation of the Monte Carlo mean.
    pub sigma_of_mean: f64,
    pub resamples: usize,
}

/// Two-sided tail mass outside ±3σ of a normal distribution.
pub const THREE_SIGMA_TAIL: f64 = 2.699_796_063_260_2e-3;

/// Expected hits over all resamples below which a stratum is judged by an
/// exact Poisson tail instead of a normal z-score.
pub const SPARSE_HITS: f64 = 20.0;

fn poisson_two_sided_tail(mean: f64, k: u64) -> f64 {
    // P(X <= k) and P(X >= k), summed term by term.
    let mut term = (-mean).exp();
    let mut below = 0.0;
    for i in 0..=k {
        if i > 0 {
            term *= mean / i as f64;
        }
        below += term;
    }
    let at_k = term;
    let above = (1.0 - below + at_k).max(0.0);
    (2.0 * below.min(above)).min(1.0)
}

impl StratumStat {
    pub fn z_score(&self) -> f64 {
        let diff = (self.mc_mean - self.expected).abs();
        if diff == 0.0 {
            0.0
        } else if self.sigma_of_mean == 0.0 {
            f64::INFINITY
        } else {
            diff / self.sigma_of_mean
        }
    }

    /// Whether the Monte Carlo mean is within 3σ of the expectation.
    ///
    /// Dense strata use the z-score. When fewer than [`SPARSE_HITS`] hits are
    /// expected in total the normal approximation breaks down, so the total hit
    /// count is tested against a Poisson law at the same tail mass.
    pub fn within_three_sigma(&self) -> bool {
        let expected_hits = self.expected * self.resamples as f64;
        if expected_hits >= SPARSE_HITS {
            return self.z_score() <= 3.0;
        }
        let hits = (self.mc_mean * self.resamples as f64).round() as u64;
        poisson_two_sided_tail(expected_hits, hits) >= THREE_SIGMA_TAIL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLeakMonteCarlo {
    pub resamples: usize,
    pub delta_multi: f64,
    pub strata: Vec<StratumStat>,
    pub total_expected: f64,
    pub total_mc_mean: f64,
}

impl MultiLeakMonteCarlo {
    pub fn relative_error(&self) -> f64 {
        (self.total_mc_mean - self.total_expected).abs() / self.total_expected
    }

    pub fn max_z(&self) -> f64 {
        self.strata.iter().map(StratumStat::z_score).fold(0.0, f64::max)
    }

    /// Strata failing [`StratumStat::within_three_sigma`].
    pub fn outlying_strata(&self) -> Vec<&StratumStat> {
        self.strata.iter().filter(|s| !s.within_three_sigma()).collect()
    }
}

/// Resamples tags `resamples` times on a fixed transcript and compares the mean
/// `|C_multi|` per block length with `Σ_l |C^l| Δ_multi^l`.
pub fn monte_carlo_multi_leak(
    transcript: &Transcript,
    delta0: f64,
    delta1: f64,
    resamples: usize,
    seed: u64,
) -> Result<MultiLeakMonteCarlo> {
    if resamples == 0 {
        return Err(crate::error::invalid("resamples", "must be positive"));
    }
    let delta_multi = (1.0 - delta0 - delta1).max(0.0);
    let hist = transcript.histogram();
    let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
    for r in 0..resamples {
        let tags = sample_tags(transcript.n(), delta0, delta1, crate::math::derive_seed(seed, "mc-resample", r as u64))?;
        for (l, c) in multi_blocks_by_length(transcript, &tags) {
            *sums.entry(l).or_insert(0.0) += c as f64;
        }
    }
    let strata: Vec<StratumStat> = hist
        .iter()
        .map(|(l, c)| {
            let p = delta_multi.powi(l as i32);
            StratumStat {
                length: l,
                blocks: c as usize,
                expected: c * p,
                mc_mean: sums.get(&l).copied().unwrap_or(0.0) / resamples as f64,
                sigma_of_mean: (c * p * (1.0 - p) / resamples as f64).sqrt(),
                resamples,
            }
        })
        .collect();
    Ok(MultiLeakMonteCarlo {
        resamples,
        delta_multi,
        total_expected: strata.iter().map(|s| s.expected).sum(),
        total_mc_mean: strata.iter().map(|s| s.mc_mean).sum(),
        strata,
    })
}
