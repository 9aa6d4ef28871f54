//! Token frequency tables and the cumulative coverage curve built on them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

/// Dense accumulation is used up to this vocabulary size; beyond it a hash
/// map keeps memory proportional to the distinct tokens seen.
const DENSE_LIMIT: u64 = 1 << 24;

/// Occurrence counts of each token over assistant spans.
///
/// Only tokens with a non-zero count are stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    vocab_size: u64,
    counts: BTreeMap<TokenId, u64>,
    total: u64,
}

enum Accumulator {
    Dense(Vec<u64>),
    Sparse(HashMap<TokenId, u64>),
}

impl Accumulator {
    fn new(vocab_size: u64) -> Self {
        if vocab_size <= DENSE_LIMIT {
            Accumulator::Dense(vec![0; vocab_size as usize])
        } else {
            Accumulator::Sparse(HashMap::new())
        }
    }

    fn add(&mut self, token: TokenId) {
        match self {
            Accumulator::Dense(v) => v[token as usize] += 1,
            Accumulator::Sparse(m) => *m.entry(token).or_default() += 1,
        }
    }

    fn finish(self, vocab_size: u64) -> FrequencyTable {
        let counts: BTreeMap<TokenId, u64> = match self {
            Accumulator::Dense(v) => v
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .map(|(t, c)| (t as TokenId, c))
                .collect(),
            Accumulator::Sparse(m) => m.into_iter().collect(),
        };
        let total = counts.values().sum();
        FrequencyTable {
            vocab_size,
            counts,
            total,
        }
    }
}

/// Counts every token of every span. Tokens `>= vocab_size` are rejected.
pub fn build_frequency_table<I, S>(spans: I, vocab_size: u64) -> Result<FrequencyTable>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[TokenId]>,
{
    if vocab_size == 0 {
        return Err(Error::InvalidConfig(
            "vocabulary size must be positive".into(),
        ));
    }
    let mut acc = Accumulator::new(vocab_size);
    for span in spans {
        for &t in span.as_ref() {
            if u64::from(t) >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size,
                });
            }
            acc.add(t);
        }
    }
    Ok(acc.finish(vocab_size))
}

/// Like [`build_frequency_table`], but fallible span streams (as produced by
/// ingestion) propagate their first error.
pub fn build_frequency_table_from_stream<I>(spans: I, vocab_size: u64) -> Result<FrequencyTable>
where
    I: IntoIterator<Item = Result<Vec<TokenId>>>,
{
    let mut err = None;
    let table = build_frequency_table(
        spans.into_iter().map_while(|r| match r {
            Ok(s) => Some(s),
            Err(e) => {
                err = Some(e);
                None
            }
        }),
        vocab_size,
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(table),
    }
}

/// Shard-and-merge build over in-memory spans. The result is identical to
/// the sequential build for any shard count.
#[cfg(feature = "parallel")]
pub fn build_frequency_table_sharded<S>(
    spans: &[S],
    vocab_size: u64,
    shards: usize,
) -> Result<FrequencyTable>
where
    S: AsRef<[TokenId]> + Sync,
{
    use rayon::prelude::*;

    let chunk = spans.len().div_ceil(shards.max(1)).max(1);
    spans
        .par_chunks(chunk)
        .map(|c| build_frequency_table(c, vocab_size))
        .try_reduce(|| FrequencyTable::empty(vocab_size), |a, b| a.merge(&b))
}

impl FrequencyTable {
    pub fn empty(vocab_size: u64) -> Self {
        Self {
            vocab_size,
            counts: BTreeMap::new(),
            total: 0,
        }
    }

    /// Builds a table from explicit `(token, count)` pairs. Zero counts are
    /// dropped; repeated tokens accumulate.
    pub fn from_counts(
        vocab_size: u64,
        counts: impl IntoIterator<Item = (TokenId, u64)>,
    ) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidConfig(
                "vocabulary size must be positive".into(),
            ));
        }
        let mut map = BTreeMap::new();
        for (t, c) in counts {
            if u64::from(t) >= vocab_size {
                return Err(Error::TokenOutOfRange {
                    token: t,
                    vocab_size,
                });
            }
            if c > 0 {
                *map.entry(t).or_insert(0u64) += c;
            }
        }
        let total = map.values().sum();
        Ok(Self {
            vocab_size,
            counts: map,
            total,
        })
    }

    pub fn vocab_size(&self) -> u64 {
        self.vocab_size
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// True when no token was counted; coverage queries on such a table fail.
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, token: TokenId) -> u64 {
        self.counts.get(&token).copied().unwrap_or(0)
    }

    /// `(token, count)` pairs in ascending token order.
    pub fn iter(&self) -> impl Iterator<Item = (TokenId, u64)> + '_ {
        self.counts.iter().map(|(&t, &c)| (t, c))
    }

    /// Pointwise sum of two tables over the same vocabulary.
    pub fn merge(&self, other: &FrequencyTable) -> Result<FrequencyTable> {
        if self.vocab_size != other.vocab_size {
            return Err(Error::VocabSizeMismatch {
                left: self.vocab_size,
                right: other.vocab_size,
            });
        }
        let mut counts = self.counts.clone();
        for (&t, &c) in &other.counts {
            *counts.entry(t).or_insert(0) += c;
        }
        Ok(FrequencyTable {
            vocab_size: self.vocab_size,
            counts,
            total: self.total + other.total,
        })
    }

    /// Canonical JSON: counts sorted by token id.
    pub fn to_json(&self) -> String {
        let doc = FrequencyDoc {
            vocab_size: self.vocab_size,
            total: self.total,
            counts: self.iter().collect(),
        };
        serde_json::to_string(&doc).expect("frequency table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FrequencyDoc = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("frequency table: {e}")))?;
        let mut prev = None;
        for &(t, c) in &doc.counts {
            if prev.is_some_and(|p| p >= t) {
                return Err(Error::Format(
                    "frequency table: counts must be sorted by token id without duplicates".into(),
                ));
            }
            if c == 0 {
                return Err(Error::Format(format!(
                    "frequency table: zero count stored for token {t}"
                )));
            }
            prev = Some(t);
        }
        let table = FrequencyTable::from_counts(doc.vocab_size, doc.counts)?;
        if table.total != doc.total {
            return Err(Error::Format(format!(
                "frequency table: declared total {} but counts sum to {}",
                doc.total, table.total
            )));
        }
        Ok(table)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::artifact::write_file_atomic(path, (self.to_json() + "\n").as_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct FrequencyDoc {
    vocab_size: u64,
    total: u64,
    counts: Vec<(TokenId, u64)>,
}

/// Tokens ranked by descending count (ties by ascending id) together with
/// their cumulative counts, so coverage at any `k` is one lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageCurve {
    vocab_size: u64,
    order: Vec<TokenId>,
    /// `prefix[i]` is the count mass of `order[..=i]`.
    prefix: Vec<u64>,
    total: u64,
}

impl CoverageCurve {
    pub fn new(table: &FrequencyTable) -> Self {
        let mut ranked: Vec<(TokenId, u64)> = table.iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut running = 0u64;
        let (order, prefix) = ranked
            .into_iter()
            .map(|(t, c)| {
                running += c;
                (t, running)
            })
            .unzip();
        Self {
            vocab_size: table.vocab_size,
            order,
            prefix,
            total: table.total,
        }
    }

    pub fn vocab_size(&self) -> u64 {
        self.vocab_size
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Observed tokens in rank order.
    pub fn order(&self) -> &[TokenId] {
        &self.order
    }

    pub fn prefix(&self) -> &[u64] {
        &self.prefix
    }

    /// Number of distinct observed tokens.
    pub fn observed(&self) -> usize {
        self.order.len()
    }

    /// Count mass of the `k` most frequent tokens.
    pub fn mass_at(&self, k: u64) -> u64 {
        let k = k.min(self.order.len() as u64) as usize;
        if k == 0 {
            0
        } else {
            self.prefix[k - 1]
        }
    }

    /// Total count of an arbitrary token set.
    pub fn mass_of(&self, tokens: &[TokenId]) -> u64 {
        let wanted: BTreeSet<TokenId> = tokens.iter().copied().collect();
        self.order
            .iter()
            .enumerate()
            .filter(|(_, t)| wanted.contains(t))
            .map(|(i, _)| self.prefix[i] - if i == 0 { 0 } else { self.prefix[i - 1] })
            .sum()
    }

    /// Fraction of all counted occurrences covered by the `k` most frequent
    /// tokens.
    pub fn coverage_at(&self, k: u64) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(self.mass_at(k) as f64 / self.total as f64)
    }

    /// Smallest `k` whose coverage reaches `c_min`, if any `k <= vocab_size` does.
    pub fn min_k_for_coverage(&self, c_min: f64) -> Result<Option<u64>> {
        if self.total == 0 {
            return Err(Error::EmptyCorpus);
        }
        if c_min <= 0.0 {
            return Ok(Some(0));
        }
        let total = self.total as f64;
        let idx = self.prefix.partition_point(|&m| (m as f64 / total) < c_min);
        Ok((idx < self.prefix.len()).then_some(idx as u64 + 1))
    }

    /// The `k`-token draft vocabulary, sorted ascending by id.
    ///
    /// Forced tokens are always kept and use part of the budget; the rest is
    /// filled by rank, and finally by unobserved ids in ascending order.
    pub fn top_k_tokens(&self, k: u64, forced: &BTreeSet<TokenId>) -> Result<Vec<TokenId>> {
        if k > self.vocab_size {
            return Err(Error::KTooLarge {
                k,
                vocab_size: self.vocab_size,
            });
        }
        if forced.len() as u64 > k {
            return Err(Error::ForcedExceedsK {
                forced: forced.len(),
                k,
            });
        }
        if let Some(&t) = forced.iter().find(|&&t| u64::from(t) >= self.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab_size: self.vocab_size,
            });
        }
        let k = k as usize;
        let mut kept: BTreeSet<TokenId> = forced.clone();
        for &t in &self.order {
            if kept.len() == k {
                break;
            }
            kept.insert(t);
        }
        if kept.len() < k {
            let observed: BTreeSet<TokenId> = self.order.iter().copied().collect();
            let mut id: TokenId = 0;
            while kept.len() < k {
                if !observed.contains(&id) {
                    kept.insert(id);
                }
                id += 1;
            }
        }
        Ok(kept.into_iter().collect())
    }
}
