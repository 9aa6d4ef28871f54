//! Seeded synthetic corpora whose token ranks follow a Zipf law.
//!
//! Records are generated on demand from `(seed, record index)`, so a corpus of
//! millions of records costs no memory until it is read.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};
use crate::TokenId;

/// Random access to per-record assistant tokens.
pub trait RecordSource: Sync {
    fn record_count(&self) -> usize;

    /// Appends the assistant tokens of record `index` to `out`.
    fn record_tokens(&self, index: usize, out: &mut Vec<TokenId>);
}

impl RecordSource for [Vec<TokenId>] {
    fn record_count(&self) -> usize {
        self.len()
    }

    fn record_tokens(&self, index: usize, out: &mut Vec<TokenId>) {
        out.extend_from_slice(&self[index]);
    }
}

impl RecordSource for Vec<Vec<TokenId>> {
    fn record_count(&self) -> usize {
        self.len()
    }

    fn record_tokens(&self, index: usize, out: &mut Vec<TokenId>) {
        out.extend_from_slice(&self[index]);
    }
}

/// A Zipf(`exponent`) corpus over `vocab_size` tokens. Rank `r` maps to a
/// token id through a seeded permutation, so frequent tokens are scattered
/// across the id space.
#[derive(Debug, Clone)]
pub struct ZipfCorpus {
    vocab_size: u64,
    exponent: f64,
    n_records: usize,
    record_len: RangeInclusive<usize>,
    seed: u64,
    rank_to_token: Vec<TokenId>,
    dist: Zipf<f64>,
}

impl ZipfCorpus {
    pub fn new(
        vocab_size: u64,
        exponent: f64,
        n_records: usize,
        record_len: RangeInclusive<usize>,
        seed: u64,
    ) -> Result<Self> {
        if vocab_size == 0 || vocab_size > u32::MAX as u64 {
            return Err(Error::InvalidConfig(format!("bad vocab size {vocab_size}")));
        }
        if exponent.is_nan() || exponent <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "Zipf exponent {exponent} must be > 0"
            )));
        }
        if record_len.is_empty() {
            return Err(Error::InvalidConfig("empty record length range".into()));
        }
        let dist = Zipf::new(vocab_size as f64, exponent)
            .map_err(|e| Error::InvalidConfig(format!("Zipf: {e}")))?;
        let mut rank_to_token: Vec<TokenId> = (0..vocab_size as TokenId).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        rank_to_token.shuffle(&mut rng);
        Ok(Self {
            vocab_size,
            exponent,
            n_records,
            record_len,
            seed,
            rank_to_token,
            dist,
        })
    }

    pub fn vocab_size(&self) -> u64 {
        self.vocab_size
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Token id holding frequency rank `rank` (1-based).
    pub fn token_at_rank(&self, rank: usize) -> TokenId {
        self.rank_to_token[rank - 1]
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> TokenId {
        let rank = self.dist.sample(rng) as usize;
        self.rank_to_token[rank - 1]
    }

    /// `n` i.i.d. tokens from a single stream.
    pub fn sample_tokens(&self, n: usize) -> Vec<TokenId> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::MAX - 1);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    pub fn record(&self, index: usize) -> Vec<TokenId> {
        let mut out = Vec::new();
        self.record_tokens(index, &mut out);
        out
    }
}

impl RecordSource for ZipfCorpus {
    fn record_count(&self) -> usize {
        self.n_records
    }

    fn record_tokens(&self, index: usize, out: &mut Vec<TokenId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let len = rng.random_range(self.record_len.clone());
        out.reserve(len);
        for _ in 0..len {
            out.push(self.draw(&mut rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_reproducible_and_in_range() {
        let c = ZipfCorpus::new(1000, 1.1, 50, 5..=20, 7).unwrap();
        assert_eq!(c.record(3), c.record(3));
        assert_ne!(c.record(3), c.record(4));
        for i in 0..50 {
            let r = c.record(i);
            assert!((5..=20).contains(&r.len()));
            assert!(r.iter().all(|&t| t < 1000));
        }
        let again = ZipfCorpus::new(1000, 1.1, 50, 5..=20, 7).unwrap();
        assert_eq!(c.sample_tokens(100), again.sample_tokens(100));
    }

    #[test]
    fn rank_one_dominates() {
        let c = ZipfCorpus::new(500, 1.2, 0, 1..=1, 1).unwrap();
        let toks = c.sample_tokens(20_000);
        let top = c.token_at_rank(1);
        let second = c.token_at_rank(2);
        let n1 = toks.iter().filter(|&&t| t == top).count() as f64;
        let n2 = toks.iter().filter(|&&t| t == second).count() as f64;
        // p(1)/p(2) = 2^1.2 ~ 2.3
        assert!((n1 / n2 - 2f64.powf(1.2)).abs() < 0.25, "{}", n1 / n2);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ZipfCorpus::new(0, 1.1, 1, 1..=1, 0).is_err());
        assert!(ZipfCorpus::new(10, 0.0, 1, 1..=1, 0).is_err());
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 5..=1;
        assert!(ZipfCorpus::new(10, 1.0, 1, empty, 0).is_err());
    }
}
