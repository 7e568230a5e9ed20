//! Cascade information reconciliation between two in-process parties.
//!
//! Alice holds the reference string and answers parity queries; Bob owns the
//! noisy copy and corrects it toward Alice. Every parity Alice reveals is
//! appended to a [`Transcript`], which is the public record Eve sees.
//!
//! The schedule is the classic four-pass one: pass-one blocks of size
//! `ceil(0.73 / e)`, doubling each pass, with a seeded uniform shuffle before
//! every pass after the first. When a bit is corrected in pass `i`, the blocks
//! containing it in all other processed passes change parity; any that become
//! odd are searched again (the cascading step), smallest blocks first.

mod transcript;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

pub use transcript::{
    histogram, leaked_all, Block, BlockHistogram, BlockOrigin, DisclosureKind, Transcript,
};

use crate::error::{invalid, Error, Result};
use crate::math::rng_for;

/// A non-empty sequence of bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            Err(Error::EmptyBitString)
        } else {
            Ok(BitString(bits))
        }
    }

    /// From a slice of 0/1 bytes; any nonzero byte is a one.
    pub fn from_bytes(bits: &[u8]) -> Result<Self> {
        BitString::new(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn hamming_distance(&self, other: &BitString) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    fn digest(&self) -> [u8; 32] {
        let mut packed = vec![0u8; self.0.len().div_ceil(8)];
        for (i, &bit) in self.0.iter().enumerate() {
            if bit {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        let mut hasher = Sha256::new();
        hasher.update((self.0.len() as u64).to_le_bytes());
        hasher.update(&packed);
        hasher.finalize().into()
    }
}

/// How the first-pass block size is chosen from the QBER estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockSizeRule {
    /// `ceil(factor / e)`; the classic choice is `factor = 0.73`.
    InverseQber { factor: f64 },
    Fixed(usize),
}

impl BlockSizeRule {
    pub const CLASSIC: BlockSizeRule = BlockSizeRule::InverseQber { factor: 0.73 };

    /// First-pass block size for a string of length `n`, clamped to `[2, n/2]`
    /// (never above `n`).
    pub fn first_block_size(&self, qber: f64, n: usize) -> usize {
        let raw = match *self {
            BlockSizeRule::InverseQber { factor } => {
                let e = qber.max(1.0 / n as f64);
                (factor / e).ceil() as usize
            }
            BlockSizeRule::Fixed(k) => k,
        };
        raw.min(n / 2).max(2).min(n).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub passes: usize,
    pub initial_block_rule: BlockSizeRule,
    pub seed: u64,
    /// Compare whole-string hashes after the last pass and fail loudly on mismatch.
    pub verify_final: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            passes: 4,
            initial_block_rule: BlockSizeRule::CLASSIC,
            seed: 0,
            verify_final: true,
        }
    }
}

impl CascadeConfig {
    pub fn with_seed(seed: u64) -> Self {
        CascadeConfig {
            seed,
            ..CascadeConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconciliation {
    pub corrected: BitString,
    pub transcript: Transcript,
    /// Number of bit flips Bob applied.
    pub corrections: usize,
}

impl Reconciliation {
    /// Measured efficiency `leaked_all / (N·H2(e))` against the true error rate `e`.
    pub fn efficiency(&self, true_qber: f64) -> f64 {
        let n = self.transcript.n() as f64;
        self.transcript.len() as f64 / (n * crate::math::h2(true_qber))
    }
}

/// Block layout of one pass: a permutation cut into consecutive blocks.
struct PassLayout {
    order: Vec<u32>,
    position: Vec<u32>,
    block_size: usize,
    alice_top: Vec<bool>,
}

impl PassLayout {
    fn block_of(&self, idx: usize) -> usize {
        self.position[idx] as usize / self.block_size
    }

    fn block_range(&self, block: usize) -> (usize, usize) {
        let start = block * self.block_size;
        (start, (start + self.block_size).min(self.order.len()))
    }

    fn block_count(&self) -> usize {
        self.order.len().div_ceil(self.block_size)
    }
}

struct Session<'a> {
    alice: &'a [bool],
    bob: Vec<bool>,
    passes: Vec<PassLayout>,
    /// Alice parities already public, keyed by (pass, start, end) in layout order.
    known: HashMap<(usize, usize, usize), bool>,
    transcript: Transcript,
    corrections: usize,
}

impl Session<'_> {
    fn parity_of(bits: &[bool], order: &[u32]) -> bool {
        order.iter().fold(false, |acc, &i| acc ^ bits[i as usize])
    }

    /// Alice's parity of a layout range, disclosing it if not already public.
    fn alice_parity(&mut self, pass: usize, start: usize, end: usize, kind: DisclosureKind) -> bool {
        if let Some(&p) = self.known.get(&(pass, start, end)) {
            return p;
        }
        let layout = &self.passes[pass];
        let slice = &layout.order[start..end];
        let parity = Self::parity_of(self.alice, slice);
        let top_block = (start / layout.block_size) as u32;
        self.transcript.push(
            slice.to_vec(),
            BlockOrigin {
                pass: pass as u16,
                top_block,
                kind,
            },
        );
        self.known.insert((pass, start, end), parity);
        parity
    }

    fn bob_parity(&self, pass: usize, start: usize, end: usize) -> bool {
        Self::parity_of(&self.bob, &self.passes[pass].order[start..end])
    }

    fn is_odd(&self, pass: usize, block: usize) -> bool {
        let (start, end) = self.passes[pass].block_range(block);
        self.passes[pass].alice_top[block] != self.bob_parity(pass, start, end)
    }

    /// Dichotomic search inside an odd top-level block; returns the string index to flip.
    fn binary_search(&mut self, pass: usize, block: usize) -> usize {
        let (mut start, mut end) = self.passes[pass].block_range(block);
        let mut alice = self.passes[pass].alice_top[block];
        while end - start > 1 {
            let mid = start + (end - start) / 2;
            let left_alice = self.alice_parity(pass, start, mid, DisclosureKind::Search);
            let left_bob = self.bob_parity(pass, start, mid);
            if left_alice != left_bob {
                end = mid;
                alice = left_alice;
            } else {
                // Right half parity follows from the parent without a new disclosure.
                let right = alice ^ left_alice;
                self.known.insert((pass, mid, end), right);
                start = mid;
                alice = right;
            }
        }
        self.passes[pass].order[start] as usize
    }

    /// Corrects every odd block reachable from `queue`, cascading through `0..=current`.
    fn drain(&mut self, queue: &mut BTreeSet<(usize, usize)>, current: usize) {
        while let Some((pass, block)) = queue.pop_first() {
            if !self.is_odd(pass, block) {
                continue;
            }
            let idx = self.binary_search(pass, block);
            self.bob[idx] = !self.bob[idx];
            self.corrections += 1;
            for other in 0..=current {
                if other == pass {
                    continue;
                }
                let b = self.passes[other].block_of(idx);
                if self.is_odd(other, b) {
                    queue.insert((other, b));
                } else {
                    queue.remove(&(other, b));
                }
            }
        }
    }
}

/// Runs Cascade so that Bob's `b` converges to Alice's `a`.
///
/// `qber_estimate` drives the block size; zero is clamped to `1/N`. Estimates
/// at or above one half are rejected.
pub fn reconcile(
    a: &BitString,
    b: &BitString,
    qber_estimate: f64,
    config: &CascadeConfig,
) -> Result<Reconciliation> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    if config.passes == 0 {
        return Err(invalid("passes", "at least one pass is required"));
    }
    if !(0.0..0.5).contains(&qber_estimate) {
        return Err(invalid(
            "qber_estimate",
            format!("must lie in [0, 0.5), got {qber_estimate}"),
        ));
    }
    if n > u32::MAX as usize {
        return Err(invalid("n", "string longer than u32::MAX"));
    }

    let mut rng = rng_for(config.seed, "cascade-shuffle", 0);
    let mut session = Session {
        alice: a.bits(),
        bob: b.bits().to_vec(),
        passes: Vec::with_capacity(config.passes),
        known: HashMap::new(),
        transcript: Transcript::new(n, config.seed),
        corrections: 0,
    };

    let mut block_size = config.initial_block_rule.first_block_size(qber_estimate, n);
    for pass in 0..config.passes {
        let mut order: Vec<u32> = (0..n as u32).collect();
        if pass > 0 {
            order.shuffle(&mut rng);
        }
        let mut position = vec![0u32; n];
        for (pos, &idx) in order.iter().enumerate() {
            position[idx as usize] = pos as u32;
        }
        session.passes.push(PassLayout {
            order,
            position,
            block_size,
            alice_top: Vec::new(),
        });

        let blocks = session.passes[pass].block_count();
        let mut alice_top = Vec::with_capacity(blocks);
        for block in 0..blocks {
            let (start, end) = session.passes[pass].block_range(block);
            alice_top.push(session.alice_parity(pass, start, end, DisclosureKind::TopLevel));
        }
        session.passes[pass].alice_top = alice_top;

        let mut queue: BTreeSet<(usize, usize)> =
            (0..blocks).filter(|&blk| session.is_odd(pass, blk)).map(|blk| (pass, blk)).collect();
        session.drain(&mut queue, pass);

        block_size = (block_size * 2).min(n);
    }

    let corrected = BitString(session.bob);
    if config.verify_final && corrected.digest() != a.digest() {
        return Err(Error::VerificationFailed {
            residual_errors: corrected.hamming_distance(a),
            passes: config.passes,
            seed: config.seed,
        });
    }
    Ok(Reconciliation {
        corrected,
        transcript: session.transcript,
        corrections: session.corrections,
    })
}

/// Draws Alice's uniform string and Bob's copy through a binary symmetric channel.
pub fn noisy_pair(n: usize, qber: f64, seed: u64) -> Result<(BitString, BitString)> {
    use rand::Rng;
    if !(0.0..=1.0).contains(&qber) {
        return Err(Error::ProbabilityDomain(qber));
    }
    let mut rng = rng_for(seed, "bsc", 0);
    let a: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
    let b: Vec<bool> = a.iter().map(|&bit| bit ^ rng.gen_bool(qber)).collect();
    Ok((BitString::new(a)?, BitString::new(b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_bit_single_error() {
        let a = BitString::from_bytes(&[0, 1]).unwrap();
        let b = BitString::from_bytes(&[1, 1]).unwrap();
        let r = reconcile(&a, &b, 0.4, &CascadeConfig::with_seed(3)).unwrap();
        assert_eq!(r.corrected, a);
        assert_eq!(r.corrections, 1);
        assert!(r.transcript.blocks().iter().any(|blk| blk.len() == 1));
    }

    #[test]
    fn equal_strings_only_top_level() {
        let (a, _) = noisy_pair(1000, 0.0, 5).unwrap();
        for seed in 0..5 {
            let r = reconcile(&a, &a, 0.01, &CascadeConfig::with_seed(seed)).unwrap();
            assert_eq!(r.corrections, 0);
            assert_eq!(r.corrected, a);
            assert!(r
                .transcript
                .origins()
                .iter()
                .all(|o| o.kind == DisclosureKind::TopLevel));
            // k1 = ceil(0.73/0.01) = 73: 14 + 7 + 4 + 2 blocks
            assert_eq!(r.transcript.len(), 14 + 7 + 4 + 2);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = BitString::from_bytes(&[0, 1, 1]).unwrap();
        let b = BitString::from_bytes(&[0, 1]).unwrap();
        assert_eq!(
            reconcile(&a, &b, 0.1, &CascadeConfig::default()).unwrap_err(),
            Error::LengthMismatch { expected: 3, actual: 2 }
        );
    }

    #[test]
    fn bad_estimates_and_passes_rejected() {
        let a = BitString::from_bytes(&[0, 1, 1, 0]).unwrap();
        assert!(reconcile(&a, &a, 0.5, &CascadeConfig::default()).is_err());
        assert!(reconcile(&a, &a, -0.1, &CascadeConfig::default()).is_err());
        let cfg = CascadeConfig { passes: 0, ..CascadeConfig::default() };
        assert!(reconcile(&a, &a, 0.1, &cfg).is_err());
        assert!(BitString::new(vec![]).is_err());
    }

    #[test]
    fn zero_estimate_clamps_to_inverse_length() {
        assert_eq!(BlockSizeRule::CLASSIC.first_block_size(0.0, 1000), 500);
        assert_eq!(BlockSizeRule::CLASSIC.first_block_size(0.0, 100_000), 50_000);
        assert_eq!(BlockSizeRule::CLASSIC.first_block_size(0.02, 10_000), 37);
        assert_eq!(BlockSizeRule::CLASSIC.first_block_size(0.4, 2), 2);
        assert_eq!(BlockSizeRule::CLASSIC.first_block_size(0.4, 1), 1);
        let a = BitString::from_bytes(&[1; 64]).unwrap();
        assert!(reconcile(&a, &a, 0.0, &CascadeConfig::default()).is_ok());
    }

    #[test]
    fn unverified_failure_is_reported() {
        // One pass with huge blocks cannot see an even number of errors.
        let a = BitString::from_bytes(&[0, 0, 0, 0]).unwrap();
        let b = BitString::from_bytes(&[1, 1, 0, 0]).unwrap();
        let cfg = CascadeConfig {
            passes: 1,
            initial_block_rule: BlockSizeRule::Fixed(4),
            seed: 11,
            verify_final: true,
        };
        assert_eq!(
            reconcile(&a, &b, 0.1, &cfg).unwrap_err(),
            Error::VerificationFailed { residual_errors: 2, passes: 1, seed: 11 }
        );
        let cfg = CascadeConfig { verify_final: false, ..cfg };
        let r = reconcile(&a, &b, 0.1, &cfg).unwrap();
        assert_eq!(r.corrected.hamming_distance(&a), 2);
    }

    #[test]
    fn structural_invariants_hold() {
        let (a, b) = noisy_pair(5000, 0.04, 17).unwrap();
        let r = reconcile(&a, &b, 0.04, &CascadeConfig::with_seed(17)).unwrap();
        let t = &r.transcript;
        assert_eq!(t.origins().len(), t.len());

        // Top-level blocks of each pass partition the index set.
        for pass in 0..4u16 {
            let mut seen = vec![0u8; 5000];
            for (block, origin) in t.blocks().iter().zip(t.origins()) {
                if origin.pass == pass && origin.kind == DisclosureKind::TopLevel {
                    for &i in block {
                        seen[i as usize] += 1;
                    }
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "pass {pass} is not a partition");
        }

        // Search disclosures lie inside their top-level block, disclosed earlier.
        let mut top: HashMap<(u16, u32), usize> = HashMap::new();
        for (i, (block, origin)) in t.blocks().iter().zip(t.origins()).enumerate() {
            match origin.kind {
                DisclosureKind::TopLevel => {
                    top.insert((origin.pass, origin.top_block), i);
                }
                DisclosureKind::Search => {
                    let parent = &t.blocks()[top[&(origin.pass, origin.top_block)]];
                    assert!(block.iter().all(|x| parent.binary_search(x).is_ok()));
                }
            }
        }
        assert!(t.blocks().iter().any(|blk| blk.len() == 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn deterministic_given_seed(seed: u64, n in 50usize..600, e in 0.005f64..0.15) {
            let (a, b) = noisy_pair(n, e, seed).unwrap();
            let cfg = CascadeConfig { verify_final: false, ..CascadeConfig::with_seed(seed) };
            let r1 = reconcile(&a, &b, e, &cfg).unwrap();
            let r2 = reconcile(&a, &b, e, &cfg).unwrap();
            prop_assert_eq!(r1.transcript, r2.transcript);
            prop_assert_eq!(r1.corrected, r2.corrected);
        }

        #[test]
        fn no_corrections_for_equal_inputs(seed: u64, n in 2usize..400, e in 0.0f64..0.3) {
            let (a, _) = noisy_pair(n, 0.0, seed).unwrap();
            let r = reconcile(&a, &a, e, &CascadeConfig::with_seed(seed)).unwrap();
            prop_assert_eq!(r.corrections, 0);
        }
    }
}
