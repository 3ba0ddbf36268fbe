//! Greedy cache-friendly ordering of a query batch.
//!
//! Each query is reduced to a packed bit vector of the tables it touches.
//! Starting from an anchor, the next query is always the unvisited one with
//! the smallest XOR-popcount distance to the previous pick.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::schema::TableId;
use crate::trie::Token;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RerankError {
    #[error("table id {table} out of range for {n_bits} tables")]
    TableIdOutOfRange { table: TableId, n_bits: usize },
    #[error("incidence vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Table-membership bit vector packed into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IncidenceVector {
    n_bits: usize,
    words: Vec<u64>,
}

impl IncidenceVector {
    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn contains(&self, table: TableId) -> bool {
        table < self.n_bits && self.words[table / 64] >> (table % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
}

pub fn incidence<'a>(tables: impl IntoIterator<Item = &'a TableId>, n: usize) -> Result<IncidenceVector, RerankError> {
    let mut words = vec![0u64; n.div_ceil(64)];
    for &t in tables {
        if t >= n {
            return Err(RerankError::TableIdOutOfRange { table: t, n_bits: n });
        }
        words[t / 64] |= 1 << (t % 64);
    }
    Ok(IncidenceVector { n_bits: n, words })
}

pub fn hamming(a: &IncidenceVector, b: &IncidenceVector) -> Result<u32, RerankError> {
    if a.n_bits != b.n_bits {
        return Err(RerankError::LengthMismatch(a.n_bits, b.n_bits));
    }
    Ok(hamming_unchecked(a, b))
}

#[inline]
fn hamming_unchecked(a: &IncidenceVector, b: &IncidenceVector) -> u32 {
    a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryRecord {
    pub query_id: String,
    pub tokens: Vec<Token>,
    pub tables: BTreeSet<TableId>,
    pub incidence: IncidenceVector,
}

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, tokens: Vec<Token>, tables: BTreeSet<TableId>, n_tables: usize) -> Result<Self, RerankError> {
        let incidence = incidence(&tables, n_tables)?;
        Ok(Self { query_id: query_id.into(), tokens, tables, incidence })
    }
}

/// How the first query of the chain is picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    /// Uniform over the candidates, from the given seed.
    Seeded(u64),
    /// A fixed position among the candidates (queries with tables).
    Index(usize),
}

impl Default for Anchor {
    fn default() -> Self {
        Self::Index(0)
    }
}

/// Greedy nearest-neighbour chain over `vectors`; returns a permutation.
///
/// Queries that touch no table go last in their original order. Ties go to
/// the lowest original index.
pub fn rerank_vectors(vectors: &[&IncidenceVector], anchor: Anchor) -> Vec<usize> {
    let (candidates, empty): (Vec<usize>, Vec<usize>) = (0..vectors.len()).partition(|&i| !vectors[i].is_empty());
    if candidates.is_empty() {
        return empty;
    }
    let first = match anchor {
        Anchor::Seeded(seed) => ChaCha8Rng::seed_from_u64(seed).gen_range(0..candidates.len()),
        Anchor::Index(i) => i.min(candidates.len() - 1),
    };
    let mut remaining = candidates;
    let mut order = Vec::with_capacity(vectors.len());
    let mut last = remaining.remove(first);
    order.push(last);
    while !remaining.is_empty() {
        // `remaining` stays sorted, so the first minimum is the lowest index.
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .min_by_key(|&(_, &j)| hamming_unchecked(vectors[last], vectors[j]))
            .expect("non-empty");
        last = remaining.remove(pos);
        order.push(last);
    }
    order.extend(empty);
    order
}

pub fn rerank(queries: &[QueryRecord], anchor: Anchor) -> Vec<usize> {
    if let Some(first) = queries.first() {
        assert!(
            queries.iter().all(|q| q.incidence.n_bits == first.incidence.n_bits),
            "all queries must share the table universe"
        );
    }
    let vectors: Vec<&IncidenceVector> = queries.iter().map(|q| &q.incidence).collect();
    rerank_vectors(&vectors, anchor)
}

/// Σ d(π(i), π(i+1)) for an ordering.
pub fn chain_cost(vectors: &[&IncidenceVector], order: &[usize]) -> u64 {
    order.windows(2).map(|w| u64::from(hamming_unchecked(vectors[w[0]], vectors[w[1]]))).sum()
}
