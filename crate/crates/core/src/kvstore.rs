//! Two-tier table cache: a bounded fast tier in front of the full
//! precomputed corpus, with LRU, FIFO or LFU eviction.
//!
//! Capacity counts tables. A capacity of zero disables cache management:
//! nothing is retained and every demand access reloads from the slow tier.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::{kv_path, read_table_kv, Real, TableKV};
use crate::schema::TableId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("table {0} was never precomputed")]
    UnknownTable(TableId),
    #[error("fast tier holds {len} of {capacity} entries; nothing to evict")]
    CacheNotFull { len: usize, capacity: usize },
    #[error("loading table {table}: {message}")]
    Load { table: TableId, message: String },
}

/// Something the fast tier can hold.
pub trait CacheEntry: Clone {
    fn token_count(&self) -> usize;
}

impl<T: Real> CacheEntry for Arc<TableKV<T>> {
    fn token_count(&self) -> usize {
        TableKV::token_count(self)
    }
}

/// Size-only stand-in for a table cache, for simulations that never read
/// the tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableFootprint {
    pub tokens: usize,
}

impl CacheEntry for TableFootprint {
    fn token_count(&self) -> usize {
        self.tokens
    }
}

/// Backing store holding every precomputed table.
pub trait SlowTier {
    type Entry: CacheEntry;

    fn contains(&self, table: TableId) -> bool;
    fn fetch(&self, table: TableId) -> Result<Self::Entry, CacheError>;
}

#[derive(Debug, Clone)]
pub struct MemoryTier<E> {
    entries: HashMap<TableId, E>,
}

impl<E> MemoryTier<E> {
    pub fn new(entries: impl IntoIterator<Item = (TableId, E)>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }
}

impl MemoryTier<TableFootprint> {
    /// Footprints for tables `0..token_counts.len()`.
    pub fn footprints(token_counts: &[usize]) -> Self {
        Self::new(token_counts.iter().enumerate().map(|(id, &tokens)| (id, TableFootprint { tokens })))
    }
}

impl<E: CacheEntry> SlowTier for MemoryTier<E> {
    type Entry = E;

    fn contains(&self, table: TableId) -> bool {
        self.entries.contains_key(&table)
    }

    fn fetch(&self, table: TableId) -> Result<E, CacheError> {
        self.entries.get(&table).cloned().ok_or(CacheError::UnknownTable(table))
    }
}

/// Reads `<table_id>.kv` files from a cache directory on every load.
#[derive(Debug, Clone)]
pub struct FileTier {
    dir: PathBuf,
    tables: BTreeSet<TableId>,
}

impl FileTier {
    pub fn new(dir: impl Into<PathBuf>, tables: impl IntoIterator<Item = TableId>) -> Self {
        Self { dir: dir.into(), tables: tables.into_iter().collect() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SlowTier for FileTier {
    type Entry = Arc<TableKV<f32>>;

    fn contains(&self, table: TableId) -> bool {
        self.tables.contains(&table)
    }

    fn fetch(&self, table: TableId) -> Result<Self::Entry, CacheError> {
        if !self.contains(table) {
            return Err(CacheError::UnknownTable(table));
        }
        let kv = read_table_kv(&kv_path(&self.dir, table))
            .map_err(|e| CacheError::Load { table, message: e.to_string() })?;
        if kv.table_id != table {
            return Err(CacheError::Load { table, message: format!("file holds table {}", kv.table_id) });
        }
        Ok(Arc::new(kv))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvictionPolicy {
    #[default]
    Lru,
    Fifo,
    Lfu,
}

impl fmt::Display for EvictionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Lru => "lru",
            Self::Fifo => "fifo",
            Self::Lfu => "lfu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub swaps: u64,
    pub prefetch_loads: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Demand,
    Prefetch,
}

/// What one access did to the cache.
#[derive(Debug, Clone)]
pub struct Access<E> {
    pub entry: Option<E>,
    pub hit: bool,
    /// The table was brought in from the slow tier.
    pub loaded: bool,
    pub evicted: Option<TableId>,
}

/// Eviction bookkeeping; its key set always equals the resident set.
#[derive(Debug, Clone)]
enum PolicyState {
    Lru {
        clock: u64,
        last_use: HashMap<TableId, u64>,
        by_recency: BTreeMap<u64, TableId>,
    },
    Fifo {
        queue: VecDeque<TableId>,
    },
    Lfu {
        meta: HashMap<TableId, (u64, u64)>,
        // (frequency, timestamp, id): first element is the victim
        order: BTreeSet<(u64, u64, TableId)>,
    },
}

impl PolicyState {
    fn new(policy: EvictionPolicy) -> Self {
        match policy {
            EvictionPolicy::Lru => Self::Lru { clock: 0, last_use: HashMap::new(), by_recency: BTreeMap::new() },
            EvictionPolicy::Fifo => Self::Fifo { queue: VecDeque::new() },
            EvictionPolicy::Lfu => Self::Lfu { meta: HashMap::new(), order: BTreeSet::new() },
        }
    }

    fn lru_bump(clock: &mut u64, last_use: &mut HashMap<TableId, u64>, by_recency: &mut BTreeMap<u64, TableId>, id: TableId) {
        *clock += 1;
        if let Some(old) = last_use.insert(id, *clock) {
            by_recency.remove(&old);
        }
        by_recency.insert(*clock, id);
    }

    fn lfu_set(meta: &mut HashMap<TableId, (u64, u64)>, order: &mut BTreeSet<(u64, u64, TableId)>, id: TableId, freq: u64, ts: u64) {
        if let Some((f, t)) = meta.insert(id, (freq, ts)) {
            order.remove(&(f, t, id));
        }
        order.insert((freq, ts, id));
    }

    /// Resident entry used again.
    fn touch(&mut self, id: TableId, now: u64, kind: AccessKind) {
        match self {
            Self::Lru { clock, last_use, by_recency } => Self::lru_bump(clock, last_use, by_recency, id),
            Self::Fifo { .. } => {}
            Self::Lfu { meta, order } => {
                let (freq, _) = meta[&id];
                let freq = if kind == AccessKind::Demand { freq + 1 } else { freq };
                Self::lfu_set(meta, order, id, freq, now);
            }
        }
    }

    fn admit(&mut self, id: TableId, now: u64, kind: AccessKind) {
        match self {
            Self::Lru { clock, last_use, by_recency } => Self::lru_bump(clock, last_use, by_recency, id),
            Self::Fifo { queue } => queue.push_back(id),
            Self::Lfu { meta, order } => {
                // A prefetched table has not been used yet; its first demand
                // access brings it to frequency 1.
                let freq = u64::from(kind == AccessKind::Demand);
                Self::lfu_set(meta, order, id, freq, now);
            }
        }
    }

    fn victim(&self) -> Option<TableId> {
        match self {
            Self::Lru { by_recency, .. } => by_recency.values().next().copied(),
            Self::Fifo { queue } => queue.front().copied(),
            Self::Lfu { order, .. } => order.first().map(|&(_, _, id)| id),
        }
    }

    fn remove(&mut self, id: TableId) {
        match self {
            Self::Lru { last_use, by_recency, .. } => {
                if let Some(t) = last_use.remove(&id) {
                    by_recency.remove(&t);
                }
            }
            Self::Fifo { queue } => queue.retain(|&x| x != id),
            Self::Lfu { meta, order } => {
                if let Some((f, t)) = meta.remove(&id) {
                    order.remove(&(f, t, id));
                }
            }
        }
    }

    fn keys(&self) -> BTreeSet<TableId> {
        match self {
            Self::Lru { last_use, .. } => last_use.keys().copied().collect(),
            Self::Fifo { queue } => queue.iter().copied().collect(),
            Self::Lfu { meta, .. } => meta.keys().copied().collect(),
        }
    }
}

/// Fast tier of at most `capacity` tables over a [`SlowTier`].
///
/// Mutations must be serialized by the owner.
#[derive(Debug, Clone)]
pub struct TieredCache<S: SlowTier> {
    capacity: usize,
    policy: EvictionPolicy,
    state: PolicyState,
    resident: HashMap<TableId, S::Entry>,
    slow: S,
    stats: CacheStats,
}

impl<S: SlowTier> TieredCache<S> {
    pub fn new(capacity: usize, policy: EvictionPolicy, slow: S) -> Self {
        Self {
            capacity,
            policy,
            state: PolicyState::new(policy),
            resident: HashMap::new(),
            slow,
            stats: CacheStats::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn slow_tier(&self) -> &S {
        &self.slow
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn is_resident(&self, table: TableId) -> bool {
        self.resident.contains_key(&table)
    }

    pub fn resident_ids(&self) -> Vec<TableId> {
        let mut ids: Vec<_> = self.resident.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Capacity bound holds and policy metadata tracks exactly the resident set.
    pub fn invariants_hold(&self) -> bool {
        self.resident.len() <= self.capacity
            && self.state.keys() == self.resident.keys().copied().collect::<BTreeSet<_>>()
    }

    /// The table the policy would evict next.
    pub fn evict_candidate(&self) -> Result<TableId, CacheError> {
        if self.capacity == 0 || self.resident.len() < self.capacity {
            return Err(CacheError::CacheNotFull { len: self.resident.len(), capacity: self.capacity });
        }
        Ok(self.state.victim().expect("full cache has a victim"))
    }

    pub fn access(&mut self, table: TableId, now: u64, kind: AccessKind) -> Result<Access<S::Entry>, CacheError> {
        if let Some(entry) = self.resident.get(&table) {
            let entry = entry.clone();
            self.state.touch(table, now, kind);
            if kind == AccessKind::Demand {
                self.stats.hits += 1;
            }
            return Ok(Access { entry: Some(entry), hit: true, loaded: false, evicted: None });
        }
        if !self.slow.contains(table) {
            return Err(CacheError::UnknownTable(table));
        }
        if self.capacity == 0 {
            if kind == AccessKind::Prefetch {
                return Ok(Access { entry: None, hit: false, loaded: false, evicted: None });
            }
            let entry = self.slow.fetch(table)?;
            self.stats.misses += 1;
            self.stats.swaps += 1;
            return Ok(Access { entry: Some(entry), hit: false, loaded: true, evicted: None });
        }
        let entry = self.slow.fetch(table)?;
        let evicted = if self.resident.len() >= self.capacity {
            let victim = self.state.victim().expect("full cache has a victim");
            self.state.remove(victim);
            self.resident.remove(&victim);
            self.stats.swaps += 1;
            Some(victim)
        } else {
            None
        };
        self.state.admit(table, now, kind);
        self.resident.insert(table, entry.clone());
        match kind {
            AccessKind::Demand => self.stats.misses += 1,
            AccessKind::Prefetch => self.stats.prefetch_loads += 1,
        }
        Ok(Access { entry: Some(entry), hit: false, loaded: true, evicted })
    }

    /// Demand lookup; loads and possibly evicts on a miss.
    pub fn get(&mut self, table: TableId, now: u64) -> Result<(S::Entry, bool), CacheError> {
        let a = self.access(table, now, AccessKind::Demand)?;
        Ok((a.entry.expect("demand access yields an entry"), a.hit))
    }

    /// Loads tables ahead of use. Returns the ids actually brought in.
    pub fn prefetch(&mut self, tables: &[TableId], now: u64) -> Result<Vec<TableId>, CacheError> {
        if let Some(&missing) = tables.iter().find(|&&t| !self.slow.contains(t)) {
            return Err(CacheError::UnknownTable(missing));
        }
        let mut admitted = Vec::new();
        for &t in tables {
            if self.access(t, now, AccessKind::Prefetch)?.loaded {
                admitted.push(t);
            }
        }
        Ok(admitted)
    }
}
