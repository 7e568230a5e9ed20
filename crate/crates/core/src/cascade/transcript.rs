//! Disclosure transcripts and block-length histograms.
//!
//! # Dump format
//!
//! A transcript is serialized as UTF-8 text, one record per line, `\n`
//! terminated:
//!
//! ```text
//! transcript n=<N> seed=<SEED> blocks=<COUNT>
//! <len> <i_1> <i_2> ... <i_len>
//! ...
//! ```
//!
//! The header carries the reconciled string length `N`, the root seed of the
//! run and the number of records that follow. Each record holds the block
//! cardinality followed by its indices in strictly ascending order, all
//! separated by a single space. Records appear in disclosure order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// One disclosed parity: the sorted set of string positions it covers.
pub type Block = Vec<u32>;

/// Where a disclosed block came from inside a Cascade run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockOrigin {
    pub pass: u16,
    /// Index of the top-level block of `pass` this disclosure lies in.
    pub top_block: u32,
    pub kind: DisclosureKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisclosureKind {
    /// Parity of a whole top-level block of a pass.
    TopLevel,
    /// Parity of a sub-block during a dichotomic search.
    Search,
}

/// Ordered multiset of disclosed index subsets for a string of length `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    n: usize,
    seed: u64,
    blocks: Vec<Block>,
    /// Parallel to `blocks` when produced by a live run; empty when parsed.
    origins: Vec<BlockOrigin>,
}

impl Transcript {
    pub fn new(n: usize, seed: u64) -> Self {
        Transcript {
            n,
            seed,
            blocks: Vec::new(),
            origins: Vec::new(),
        }
    }

    /// Builds a transcript from raw blocks, validating indices and sorting each block.
    pub fn from_blocks(n: usize, seed: u64, blocks: Vec<Block>) -> Result<Self> {
        let mut t = Transcript::new(n, seed);
        for (i, mut block) in blocks.into_iter().enumerate() {
            block.sort_unstable();
            block.dedup();
            validate_block(n, &block).map_err(|reason| Error::TranscriptFormat {
                line: i + 1,
                reason,
            })?;
            t.blocks.push(block);
        }
        Ok(t)
    }

    pub(crate) fn push(&mut self, mut block: Block, origin: BlockOrigin) {
        block.sort_unstable();
        debug_assert!(validate_block(self.n, &block).is_ok());
        self.blocks.push(block);
        self.origins.push(origin);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn origins(&self) -> &[BlockOrigin] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn histogram(&self) -> BlockHistogram {
        histogram(self)
    }

    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "transcript n={} seed={} blocks={}",
            self.n,
            self.seed,
            self.blocks.len()
        )?;
        let mut line = String::new();
        for block in &self.blocks {
            line.clear();
            write!(line, "{}", block.len()).unwrap();
            for idx in block {
                write!(line, " {idx}").unwrap();
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn to_dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("dump is ASCII")
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| format_err(1, "missing header"))??;
        let (n, seed, count) = parse_header(&header)?;
        let mut t = Transcript::new(n, seed);
        t.blocks.reserve(count);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let len: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format_err(line_no, "bad block length"))?;
            let block: Block = fields
                .map(|s| s.parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format_err(line_no, &e.to_string()))?;
            if block.len() != len {
                return Err(format_err(
                    line_no,
                    &format!("declared length {len} but {} indices", block.len()),
                ));
            }
            if block.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format_err(line_no, "indices not strictly ascending"));
            }
            validate_block(n, &block).map_err(|r| format_err(line_no, &r))?;
            t.blocks.push(block);
        }
        if t.blocks.len() != count {
            return Err(format_err(
                1,
                &format!("header declares {count} blocks, found {}", t.blocks.len()),
            ));
        }
        Ok(t)
    }
}

fn format_err(line: usize, reason: &str) -> Error {
    Error::TranscriptFormat {
        line,
        reason: reason.to_string(),
    }
}

fn parse_header(header: &str) -> Result<(usize, u64, usize)> {
    let mut fields = header.split(' ');
    if fields.next() != Some("transcript") {
        return Err(format_err(1, "header must start with `transcript`"));
    }
    let mut n = None;
    let mut seed = None;
    let mut count = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format_err(1, &format!("bad header field `{field}`")))?;
        match key {
            "n" => n = value.parse().ok(),
            "seed" => seed = value.parse().ok(),
            "blocks" => count = value.parse().ok(),
            _ => return Err(format_err(1, &format!("unknown header key `{key}`"))),
        }
    }
    match (n, seed, count) {
        (Some(n), Some(seed), Some(count)) if n > 0 => Ok((n, seed, count)),
        _ => Err(format_err(1, "header needs n>0, seed and blocks")),
    }
}

fn validate_block(n: usize, block: &[u32]) -> std::result::Result<(), String> {
    if block.is_empty() {
        return Err("empty block".into());
    }
    match block.last() {
        Some(&max) if (max as usize) >= n => Err(format!("index {max} out of range for n={n}")),
        _ => Ok(()),
    }
}

/// Count of disclosed blocks per block length.
///
/// Counts are real-valued so that averaged or rescaled histograms share the
/// type; a histogram built from one transcript holds integers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockHistogram {
    n: usize,
    counts: BTreeMap<usize, f64>,
}

impl BlockHistogram {
    pub fn new(n: usize) -> Self {
        BlockHistogram {
            n,
            counts: BTreeMap::new(),
        }
    }

    /// Builds from `(length, count)` pairs. Lengths must be ≥ 1 and counts finite and ≥ 0.
    pub fn from_counts(n: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut h = BlockHistogram::new(n);
        for (len, count) in pairs {
            if len == 0 {
                return Err(crate::error::invalid("block length", "must be >= 1"));
            }
            if !(count.is_finite() && count >= 0.0) {
                return Err(crate::error::invalid("count", format!("{count} is not a finite nonnegative count")));
            }
            *h.counts.entry(len).or_insert(0.0) += count;
        }
        Ok(h)
    }

    /// String length the counts refer to.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn counts(&self) -> &BTreeMap<usize, f64> {
        &self.counts
    }

    pub fn count(&self, len: usize) -> f64 {
        self.counts.get(&len).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.counts.iter().map(|(&l, &c)| (l, c))
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Total number of disclosed parities (`leaked_all`).
    pub fn total(&self) -> f64 {
        self.counts.values().sum()
    }

    /// Leakage per reconciled bit.
    pub fn total_per_bit(&self) -> f64 {
        self.total() / self.n as f64
    }

    /// Multiplies every count by `factor`, keeping the length distribution.
    pub fn scaled(&self, factor: f64) -> Self {
        BlockHistogram {
            n: self.n,
            counts: self.counts.iter().map(|(&l, &c)| (l, c * factor)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &BlockHistogram) {
        for (l, c) in other.iter() {
            *self.counts.entry(l).or_insert(0.0) += c;
        }
    }
}

/// Histogram of block cardinalities in `transcript`.
pub fn histogram(transcript: &Transcript) -> BlockHistogram {
    let mut h = BlockHistogram::new(transcript.n());
    for block in transcript.blocks() {
        *h.counts.entry(block.len()).or_insert(0.0) += 1.0;
    }
    h
}

/// Number of disclosed parities; each counts one bit.
pub fn leaked_all(transcript: &Transcript) -> usize {
    transcript.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_counts_multiset() {
        let t = Transcript::from_blocks(4, 0, vec![vec![0, 1], vec![2], vec![1, 0]]).unwrap();
        let h = histogram(&t);
        assert_eq!(h.count(2), 2.0);
        assert_eq!(h.count(1), 1.0);
        assert_eq!(h.counts().len(), 2);
        assert_eq!(leaked_all(&t), 3);
        assert_eq!(h.total(), 3.0);
    }

    #[test]
    fn empty_transcript() {
        let t = Transcript::new(10, 1);
        assert!(histogram(&t).is_empty());
        assert_eq!(leaked_all(&t), 0);
    }

    #[test]
    fn rejects_bad_blocks() {
        assert!(Transcript::from_blocks(3, 0, vec![vec![3]]).is_err());
        assert!(Transcript::from_blocks(3, 0, vec![vec![]]).is_err());
        assert!(BlockHistogram::from_counts(3, [(0, 1.0)]).is_err());
        assert!(BlockHistogram::from_counts(3, [(1, -1.0)]).is_err());
    }

    #[test]
    fn dump_format_is_exact() {
        let t = Transcript::from_blocks(5, 9, vec![vec![3, 0], vec![4]]).unwrap();
        assert_eq!(t.to_dump_string(), "transcript n=5 seed=9 blocks=2\n2 0 3\n1 4\n");
    }

    #[test]
    fn dump_rejects_malformed() {
        let bad = [
            "",
            "transcript n=5 seed=1\n",
            "transcript n=5 seed=1 blocks=1\n2 0\n",
            "transcript n=5 seed=1 blocks=1\n2 3 1\n",
            "transcript n=5 seed=1 blocks=1\n1 5\n",
            "transcript n=5 seed=1 blocks=2\n1 4\n",
            "blocks n=5 seed=1 blocks=0\n",
        ];
        for text in bad {
            assert!(Transcript::read_dump(text.as_bytes()).is_err(), "accepted {text:?}");
        }
    }

    proptest! {
        #[test]
        fn dump_round_trips(n in 1usize..200, raw in prop::collection::vec(prop::collection::vec(0u32..200, 1..10), 0..30), seed: u64) {
            let blocks: Vec<Block> = raw.into_iter().map(|b| b.into_iter().map(|i| i % n as u32).collect()).collect();
            let t = Transcript::from_blocks(n, seed, blocks).unwrap();
            let back = Transcript::read_dump(t.to_dump_string().as_bytes()).unwrap();
            prop_assert_eq!(back.blocks(), t.blocks());
            prop_assert_eq!(back.n(), n);
            prop_assert_eq!(back.seed(), seed);
            prop_assert_eq!(histogram(&back).total() as usize, leaked_all(&t));
        }
    }
}
