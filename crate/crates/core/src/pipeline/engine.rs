use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{schedule, simulate, CostModel, PipelineError, QueryJob, SimMode, SimReport};
use super::{DEFAULT_COMPUTE_BATCH, DEFAULT_MEMORY_BATCH};
use crate::kvstore::{EvictionPolicy, SlowTier, TieredCache};
use crate::rerank::{rerank, Anchor, QueryRecord, RerankError};
use crate::schema::TableId;
use crate::trie::{TableTrie, Token};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error("trie matched table {0}, which has no token count")]
    UnknownTable(TableId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadQuery {
    pub query_id: String,
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub rerank: bool,
    pub pipeline: bool,
    /// Fast-tier capacity in tables; 0 disables cache management.
    pub capacity: usize,
    pub policy: EvictionPolicy,
    pub compute_batch: usize,
    pub memory_batch: usize,
    pub cost: CostModel,
    /// Seeds the rerank anchor; `None` anchors on the first query.
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            rerank: true,
            pipeline: true,
            capacity: 8,
            policy: EvictionPolicy::Lru,
            compute_batch: DEFAULT_COMPUTE_BATCH,
            memory_batch: DEFAULT_MEMORY_BATCH,
            cost: CostModel::default(),
            seed: None,
        }
    }
}

/// The configurations compared when components are switched off one by one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoPipeline,
    NoRerank,
    NoCacheManagement,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::Full, Self::NoPipeline, Self::NoRerank, Self::NoCacheManagement];

    pub fn apply(self, base: &RunOptions) -> RunOptions {
        let mut o = *base;
        match self {
            Self::Full => {
                o.rerank = true;
                o.pipeline = true;
            }
            Self::NoPipeline => {
                o.rerank = true;
                o.pipeline = false;
            }
            Self::NoRerank => {
                o.rerank = false;
                o.pipeline = true;
            }
            Self::NoCacheManagement => {
                o.rerank = false;
                o.pipeline = false;
                o.capacity = 0;
            }
        }
        o
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoPipeline => "w/o pipeline",
            Self::NoRerank => "w/o rerank",
            Self::NoCacheManagement => "w/o cache management",
        })
    }
}

/// Serving path over a built trie: match, optionally rerank, schedule and
/// simulate.
#[derive(Debug, Clone)]
pub struct Engine {
    trie: TableTrie,
    table_tokens: Vec<usize>,
}

impl Engine {
    /// `table_tokens[t]` is the cached token count of table `t`.
    pub fn new(trie: TableTrie, table_tokens: Vec<usize>) -> Self {
        Self { trie, table_tokens }
    }

    pub fn trie(&self) -> &TableTrie {
        &self.trie
    }

    pub fn table_count(&self) -> usize {
        self.table_tokens.len()
    }

    pub fn table_tokens(&self) -> &[usize] {
        &self.table_tokens
    }

    /// Matches tables in `query` and sizes the remaining prompt.
    pub fn job(&self, query: &WorkloadQuery) -> Result<QueryJob, EngineError> {
        let spans = self.trie.match_all(&query.tokens);
        let mut seen = BTreeSet::new();
        let mut tables = Vec::new();
        for s in &spans {
            if seen.insert(s.table_id) {
                tables.push(s.table_id);
            }
        }
        let mut context_tokens = 0;
        for &t in &tables {
            context_tokens += *self.table_tokens.get(t).ok_or(EngineError::UnknownTable(t))?;
        }
        let matched: usize = spans.iter().map(|s| s.len()).sum();
        Ok(QueryJob {
            query_id: query.query_id.clone(),
            tables,
            query_tokens: query.tokens.len() - matched,
            context_tokens,
        })
    }

    pub fn run_batch<S: SlowTier>(
        &self,
        queries: &[WorkloadQuery],
        options: &RunOptions,
        slow: S,
    ) -> Result<SimReport, EngineError> {
        let mode = if options.pipeline { SimMode::Overlapped } else { SimMode::Serial };
        if queries.is_empty() {
            return Ok(SimReport::empty(mode));
        }
        let mut jobs = queries.iter().map(|q| self.job(q)).collect::<Result<Vec<_>, _>>()?;
        if options.rerank {
            let records = queries
                .iter()
                .zip(&jobs)
                .map(|(q, j)| {
                    QueryRecord::new(&q.query_id, q.tokens.clone(), j.tables.iter().copied().collect(), self.table_count())
                })
                .collect::<Result<Vec<_>, _>>()?;
            let anchor = options.seed.map_or(Anchor::Index(0), Anchor::Seeded);
            let order = rerank(&records, anchor);
            let mut slots: Vec<Option<QueryJob>> = jobs.into_iter().map(Some).collect();
            jobs = order.into_iter().map(|i| slots[i].take().expect("permutation")).collect();
        }
        let plan = schedule(jobs, options.compute_batch, options.memory_batch)?;
        let mut cache = TieredCache::new(options.capacity, options.policy, slow);
        Ok(simulate(&plan, &options.cost, &mut cache, mode)?)
    }

    /// Runs every [`Ablation`] against a fresh cache built by `slow`.
    pub fn run_ablations<S: SlowTier>(
        &self,
        queries: &[WorkloadQuery],
        base: &RunOptions,
        mut slow: impl FnMut() -> S,
    ) -> Result<Vec<(Ablation, SimReport)>, EngineError> {
        Ablation::ALL
            .iter()
            .map(|&a| Ok((a, self.run_batch(queries, &a.apply(base), slow())?)))
            .collect()
    }
}
