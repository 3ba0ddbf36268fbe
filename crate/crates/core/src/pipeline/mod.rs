//! Micro-batch scheduling and a virtual-clock simulation of overlapping
//! cache transfers with prefill compute.
//!
//! The cache is driven in query order in both modes, so residency, hits and
//! swaps are the same with and without overlap; only the timing differs.
//! One transfer stream serves loads in that order. In overlapped mode the
//! loads of the `b_m` queries following a compute micro-batch are issued
//! when that micro-batch starts; every other load is requested when its
//! query reaches the compute stream. A load that evicts a table still
//! needed by an earlier, unfinished query waits until that query completes.

mod engine;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kvstore::{AccessKind, CacheEntry, CacheError, CacheStats, SlowTier, TieredCache};
use crate::schema::TableId;

pub use engine::{Ablation, Engine, EngineError, RunOptions, WorkloadQuery};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_COMPUTE_BATCH: usize = 100;
pub const DEFAULT_MEMORY_BATCH: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("micro-batch sizes must be at least 1 (b_c = {b_c}, b_m = {b_m})")]
    InvalidMicroBatch { b_c: usize, b_m: usize },
    #[error("cost model parameter `{0}` must be finite and non-negative")]
    InvalidCost(&'static str),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Simulated time units per unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Per (context token × query token) attention product.
    pub compute_per_token: f64,
    /// Per cached token moved from the slow to the fast tier.
    pub load_per_token: f64,
    /// Fixed cost of a load that evicts another table.
    pub switch_overhead: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { compute_per_token: 1e-6, load_per_token: 1e-4, switch_overhead: 5e-3 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("compute_per_token", self.compute_per_token),
            ("load_per_token", self.load_per_token),
            ("switch_overhead", self.switch_overhead),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PipelineError::InvalidCost(name));
            }
        }
        Ok(())
    }

    /// Prefill of `query_tokens` new tokens over `context_tokens` cached ones.
    pub fn compute_time(&self, context_tokens: usize, query_tokens: usize) -> f64 {
        let (c, q) = (context_tokens as f64, query_tokens as f64);
        self.compute_per_token * (c * q + q * q / 2.0)
    }

    pub fn load_time(&self, tokens: usize, swapped: bool) -> f64 {
        self.load_per_token * tokens as f64 + if swapped { self.switch_overhead } else { 0.0 }
    }
}

/// A query reduced to what the scheduler needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryJob {
    pub query_id: String,
    /// Distinct tables in first-appearance order.
    pub tables: Vec<TableId>,
    pub query_tokens: usize,
    pub context_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub queries: Vec<QueryJob>,
    pub compute_batch: usize,
    pub memory_batch: usize,
    /// Consecutive ranges of size `compute_batch`; the last may be shorter.
    pub compute: Vec<Range<usize>>,
    /// For each compute micro-batch, the next `memory_batch` queries whose
    /// tables are prefetched while it runs.
    pub prefetch: Vec<Range<usize>>,
    /// Union of table requirements of each prefetch window.
    pub prefetch_tables: Vec<BTreeSet<TableId>>,
}

impl BatchPlan {
    pub fn batch_size(&self) -> usize {
        self.queries.len()
    }

    /// The compute micro-batch whose start issues the loads of query `idx`
    /// ahead of time, if any.
    pub fn prefetched_during(&self, idx: usize) -> Option<usize> {
        let own = idx / self.compute_batch;
        self.prefetch[..own].iter().position(|w| w.contains(&idx))
    }
}

pub fn schedule(queries: Vec<QueryJob>, b_c: usize, b_m: usize) -> Result<BatchPlan, PipelineError> {
    if b_c == 0 || b_m == 0 {
        return Err(PipelineError::InvalidMicroBatch { b_c, b_m });
    }
    if queries.is_empty() {
        return Err(PipelineError::EmptyBatch);
    }
    let n = queries.len();
    let compute: Vec<Range<usize>> = (0..n).step_by(b_c).map(|s| s..(s + b_c).min(n)).collect();
    let prefetch: Vec<Range<usize>> = compute.iter().map(|r| r.end..(r.end + b_m).min(n)).collect();
    let prefetch_tables = prefetch
        .iter()
        .map(|w| queries[w.clone()].iter().flat_map(|q| q.tables.iter().copied()).collect())
        .collect();
    Ok(BatchPlan { queries, compute_batch: b_c, memory_batch: b_m, compute, prefetch, prefetch_tables })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Overlapped,
    Serial,
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Overlapped => "overlapped",
            Self::Serial => "serial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTiming {
    pub query_id: String,
    /// Position in the executed order.
    pub position: usize,
    pub tables: Vec<TableId>,
    pub loads: usize,
    pub compute_start: f64,
    pub ttft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub format_version: u32,
    pub mode: SimMode,
    pub queries: Vec<QueryTiming>,
    pub total_ttft: f64,
    /// Completion time of the last query.
    pub makespan: f64,
    pub compute_time: f64,
    pub transfer_time: f64,
    /// Transfer time of the first query's loads, which nothing can hide.
    pub cold_start_transfer: f64,
    pub serial_baseline_ttft: f64,
    pub hits: u64,
    pub misses: u64,
    pub swaps: u64,
    pub prefetch_loads: u64,
}

impl SimReport {
    pub fn empty(mode: SimMode) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            mode,
            queries: Vec::new(),
            total_ttft: 0.0,
            makespan: 0.0,
            compute_time: 0.0,
            transfer_time: 0.0,
            cold_start_transfer: 0.0,
            serial_baseline_ttft: 0.0,
            hits: 0,
            misses: 0,
            swaps: 0,
            prefetch_loads: 0,
        }
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["position", "query_id", "tables", "loads", "compute_start", "ttft"])?;
        for q in &self.queries {
            let tables = q.tables.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
            w.write_record([
                q.position.to_string(),
                q.query_id.clone(),
                tables,
                q.loads.to_string(),
                q.compute_start.to_string(),
                q.ttft.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, Copy)]
struct LoadEvent {
    duration: f64,
    /// Query index that last used the evicted table before this load.
    victim_user: Option<usize>,
}

/// Runs `plan` against `cache` and times it under `cost`.
pub fn simulate<S: SlowTier>(
    plan: &BatchPlan,
    cost: &CostModel,
    cache: &mut TieredCache<S>,
    mode: SimMode,
) -> Result<SimReport, PipelineError> {
    cost.validate()?;
    let before = cache.stats();
    let use_prefetch = mode == SimMode::Overlapped && cache.capacity() > 0;
    let mut now = 0u64;
    let mut last_user: HashMap<TableId, usize> = HashMap::new();
    let mut events: Vec<Vec<LoadEvent>> = Vec::with_capacity(plan.batch_size());

    for (idx, q) in plan.queries.iter().enumerate() {
        let prefetched = use_prefetch && plan.prefetched_during(idx).is_some();
        let mut loads = Vec::new();
        for &table in &q.tables {
            let swaps_before = cache.stats().swaps;
            let access = if prefetched {
                let a = cache.access(table, now, AccessKind::Prefetch)?;
                cache.access(table, now, AccessKind::Demand)?;
                a
            } else {
                cache.access(table, now, AccessKind::Demand)?
            };
            now += 1;
            if access.loaded {
                let tokens = access.entry.as_ref().map_or(0, CacheEntry::token_count);
                let swapped = cache.stats().swaps > swaps_before;
                let victim_user = access.evicted.and_then(|v| last_user.get(&v).copied()).filter(|&u| u < idx);
                loads.push(LoadEvent { duration: cost.load_time(tokens, swapped), victim_user });
            }
            last_user.insert(table, idx);
        }
        events.push(loads);
    }

    let compute: Vec<f64> = plan.queries.iter().map(|q| cost.compute_time(q.context_tokens, q.query_tokens)).collect();
    let serial = serial_timeline(&events, &compute);
    let (starts, ttft) = match mode {
        SimMode::Serial => serial.clone(),
        SimMode::Overlapped => overlapped_timeline(plan, &events, &compute),
    };

    let after = cache.stats();
    let delta = |f: fn(&CacheStats) -> u64| f(&after) - f(&before);
    let queries = plan
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| QueryTiming {
            query_id: q.query_id.clone(),
            position: i,
            tables: q.tables.clone(),
            loads: events[i].len(),
            compute_start: starts[i],
            ttft: ttft[i],
        })
        .collect();
    Ok(SimReport {
        format_version: REPORT_FORMAT_VERSION,
        mode,
        queries,
        total_ttft: ttft.iter().sum(),
        makespan: ttft.last().copied().unwrap_or(0.0),
        compute_time: compute.iter().sum(),
        transfer_time: events.iter().flatten().map(|e| e.duration).sum(),
        cold_start_transfer: events.first().map_or(0.0, |e| e.iter().map(|x| x.duration).sum()),
        serial_baseline_ttft: serial.1.iter().sum(),
        hits: delta(|s| s.hits),
        misses: delta(|s| s.misses),
        swaps: delta(|s| s.swaps),
        prefetch_loads: delta(|s| s.prefetch_loads),
    })
}

/// Load a query's tables, then compute it; nothing overlaps.
fn serial_timeline(events: &[Vec<LoadEvent>], compute: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut clock = 0.0;
    let mut starts = Vec::with_capacity(compute.len());
    let mut ttft = Vec::with_capacity(compute.len());
    for (ev, c) in events.iter().zip(compute) {
        clock += ev.iter().map(|e| e.duration).sum::<f64>();
        starts.push(clock);
        clock += c;
        ttft.push(clock);
    }
    (starts, ttft)
}

fn overlapped_timeline(plan: &BatchPlan, events: &[Vec<LoadEvent>], compute: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = compute.len();
    let mut batch_start = vec![0.0; plan.compute.len()];
    let mut transfer_free: f64 = 0.0;
    let mut compute_free: f64 = 0.0;
    let mut starts = Vec::with_capacity(n);
    let mut ttft: Vec<f64> = Vec::with_capacity(n);
    for idx in 0..n {
        let own = idx / plan.compute_batch;
        if idx == plan.compute[own].start {
            batch_start[own] = compute_free;
        }
        // Tables not covered by a prefetch window are requested on arrival.
        let issue = plan.prefetched_during(idx).map_or(compute_free, |j| batch_start[j]);
        let mut ready: f64 = 0.0;
        for ev in &events[idx] {
            let release = ev.victim_user.map_or(0.0, |u| ttft[u]);
            let start = transfer_free.max(issue).max(release);
            transfer_free = start + ev.duration;
            ready = transfer_free;
        }
        let begin = compute_free.max(ready);
        compute_free = begin + compute[idx];
        starts.push(begin);
        ttft.push(compute_free);
    }
    (starts, ttft)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kvstore::{EvictionPolicy, MemoryTier};

    fn job(id: usize, tables: &[TableId]) -> QueryJob {
        QueryJob { query_id: format!("q{id}"), tables: tables.to_vec(), query_tokens: 10, context_tokens: 100 }
    }

    #[test]
    fn partition_arithmetic() {
        let plan = schedule((0..5).map(|i| job(i, &[0])).collect(), 2, 1).unwrap();
        let sizes: Vec<usize> = plan.compute.iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(plan.prefetch, vec![2..3, 4..5, 5..5]);
        assert_eq!(plan.prefetched_during(2), Some(0));
        assert_eq!(plan.prefetched_during(3), None);
    }

    #[test]
    fn default_batch_sizes_give_single_micro_batch() {
        let plan = schedule((0..100).map(|i| job(i, &[i % 7])).collect(), 100, 10).unwrap();
        assert_eq!(plan.compute, vec![0..100]);
        assert!(plan.prefetch_tables[0].is_empty());
        assert!((0..100).all(|i| plan.prefetched_during(i).is_none()));
    }

    #[test]
    fn wide_memory_window_reaches_past_next_batch() {
        let plan = schedule((0..6).map(|i| job(i, &[i])).collect(), 1, 3).unwrap();
        assert_eq!(plan.prefetched_during(3), Some(0));
        assert_eq!(plan.prefetch_tables[0], BTreeSet::from([1, 2, 3]));
    }

    #[test]
    fn schedule_errors() {
        assert_eq!(schedule(vec![], 1, 1), Err(PipelineError::EmptyBatch));
        assert!(matches!(schedule(vec![job(0, &[])], 0, 1), Err(PipelineError::InvalidMicroBatch { .. })));
    }

    #[test]
    fn single_cold_query() {
        let cost = CostModel { compute_per_token: 0.01, load_per_token: 0.1, switch_overhead: 1.0 };
        let plan = schedule(vec![job(0, &[0, 1])], 4, 4).unwrap();
        for mode in [SimMode::Serial, SimMode::Overlapped] {
            let mut cache = TieredCache::new(4, EvictionPolicy::Lru, MemoryTier::footprints(&[30, 20]));
            let r = simulate(&plan, &cost, &mut cache, mode).unwrap();
            let expected = 0.1 * 50.0 + 0.01 * (100.0 * 10.0 + 50.0);
            assert!((r.total_ttft - expected).abs() < 1e-9);
            assert_eq!(r.misses, 2);
        }
    }

    #[test]
    fn invalid_cost_rejected() {
        let plan = schedule(vec![job(0, &[0])], 1, 1).unwrap();
        let mut cache = TieredCache::new(1, EvictionPolicy::Lru, MemoryTier::footprints(&[1]));
        let cost = CostModel { compute_per_token: -1.0, ..CostModel::default() };
        assert_eq!(
            simulate(&plan, &cost, &mut cache, SimMode::Serial),
            Err(PipelineError::InvalidCost("compute_per_token"))
        );
    }

    #[test]
    fn csv_has_one_row_per_query() {
        let plan = schedule((0..3).map(|i| job(i, &[i])).collect(), 2, 1).unwrap();
        let mut cache = TieredCache::new(2, EvictionPolicy::Fifo, MemoryTier::footprints(&[5, 5, 5]));
        let r = simulate(&plan, &CostModel::default(), &mut cache, SimMode::Overlapped).unwrap();
        let csv = r.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,q0,0,1,"));
    }
}
