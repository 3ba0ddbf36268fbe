//! Scaling measurements and the simulated ablation table.

use std::hint::black_box;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::PreparedCorpus;
use super::formats::{RunConfig, WorkloadLine, FORMAT_VERSION};
use super::HarnessError;
use crate::kvstore::MemoryTier;
use crate::pipeline::{Ablation, Engine, WorkloadQuery};
use crate::rerank::{incidence, rerank_vectors, Anchor, IncidenceVector};
use crate::schema::{build_graph, topological_order, ColumnDef, CycleMode, ForeignKey, TableSchema};
use crate::trie::{CacheHandle, TableTrie, Token};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub size: usize,
    pub seconds: f64,
}

/// Ratio of each measurement to the previous one.
pub fn growth_ratios(points: &[ScalingPoint]) -> Vec<f64> {
    points.windows(2).map(|w| w[1].seconds / w[0].seconds).collect()
}

/// Fastest of `trials` runs, each repeating `f` until at least a
/// millisecond has passed.
pub fn time_min(trials: usize, mut f: impl FnMut()) -> f64 {
    let mut reps = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        if t.elapsed().as_secs_f64() >= 1e-3 || reps >= 1 << 20 {
            break;
        }
        reps *= 2;
    }
    (0..trials)
        .map(|_| {
            let t = Instant::now();
            for _ in 0..reps {
                f();
            }
            t.elapsed().as_secs_f64() / reps as f64
        })
        .fold(f64::INFINITY, f64::min)
}

const FILLER_VOCAB: Token = 1000;

/// Trie of `tables` random serializations drawn from a vocabulary disjoint
/// from the filler tokens used by [`scan_input`].
pub fn random_trie(rng: &mut ChaCha8Rng, tables: usize) -> (TableTrie, Vec<Vec<Token>>) {
    let mut trie = TableTrie::new();
    let mut sers = Vec::new();
    while sers.len() < tables {
        let len = rng.gen_range(10..=40);
        let toks: Vec<Token> = (0..len).map(|_| rng.gen_range(FILLER_VOCAB..2 * FILLER_VOCAB)).collect();
        let id = sers.len();
        if trie.insert(&toks, id, CacheHandle(id as u64)).is_ok() {
            sers.push(toks);
        }
    }
    (trie, sers)
}

/// Roughly `n` tokens alternating filler runs and whole serializations.
pub fn scan_input(rng: &mut ChaCha8Rng, sers: &[Vec<Token>], n: usize) -> Vec<Token> {
    let mut out = Vec::with_capacity(n + 64);
    while out.len() < n {
        for _ in 0..rng.gen_range(1..20) {
            out.push(rng.gen_range(0..FILLER_VOCAB));
        }
        out.extend_from_slice(sers.choose(rng).expect("non-empty"));
    }
    out.truncate(n);
    out
}

pub fn match_all_scaling(sizes: &[usize], seed: u64) -> Vec<ScalingPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (trie, sers) = random_trie(&mut rng, 50);
    sizes
        .iter()
        .map(|&n| {
            let input = scan_input(&mut rng, &sers, n);
            let seconds = time_min(7, || {
                black_box(trie.match_all(black_box(&input)));
            });
            ScalingPoint { size: n, seconds }
        })
        .collect()
}

/// Random incidence vectors over `tables` tables, 1 to 8 tables each.
pub fn random_incidences(rng: &mut ChaCha8Rng, n: usize, tables: usize) -> Vec<IncidenceVector> {
    (0..n)
        .map(|_| {
            let k = rng.gen_range(1..=8);
            let ids: Vec<usize> = (0..k).map(|_| rng.gen_range(0..tables)).collect();
            incidence(&ids, tables).expect("ids in range")
        })
        .collect()
}

pub fn rerank_scaling(sizes: &[usize], tables: usize, seed: u64) -> Vec<ScalingPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&n| {
            let vecs = random_incidences(&mut rng, n, tables);
            let refs: Vec<&IncidenceVector> = vecs.iter().collect();
            let seconds = time_min(5, || {
                black_box(rerank_vectors(black_box(&refs), Anchor::Index(0)));
            });
            ScalingPoint { size: n, seconds }
        })
        .collect()
}

/// Random forest-shaped schema: every table after the first references an
/// earlier one with probability one half.
pub fn random_dag_schema(rng: &mut ChaCha8Rng, n: usize) -> Vec<TableSchema> {
    (0..n)
        .map(|i| {
            let mut columns = vec![ColumnDef {
                name: "id".into(),
                description: String::new(),
                is_primary_key: true,
            }];
            let mut foreign_keys = Vec::new();
            if i > 0 && rng.gen_bool(0.5) {
                columns.push(ColumnDef {
                    name: "parent_id".into(),
                    description: String::new(),
                    is_primary_key: false,
                });
                foreign_keys.push(ForeignKey {
                    column: "parent_id".into(),
                    ref_table: rng.gen_range(0..i),
                    ref_column: "id".into(),
                });
            }
            TableSchema { table_id: i, name: format!("t{i}"), columns, foreign_keys }
        })
        .collect()
}

pub fn topo_scaling(sizes: &[usize], seed: u64) -> Vec<ScalingPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .map(|&n| {
            let graph = build_graph(&random_dag_schema(&mut rng, n)).expect("generated schema is valid");
            let seconds = time_min(5, || {
                black_box(topological_order(black_box(&graph), CycleMode::Strict).expect("acyclic"));
            });
            ScalingPoint { size: n, seconds }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub label: String,
    pub total_ttft: f64,
    pub hits: u64,
    pub misses: u64,
    pub swaps: u64,
}

/// Simulated ablation table; no model or cache files needed.
pub fn ablation_table(
    engine: &Engine,
    queries: &[WorkloadQuery],
    config: &RunConfig,
) -> Result<Vec<AblationRow>, HarnessError> {
    let counts = engine.table_tokens().to_vec();
    let rows = engine.run_ablations(queries, &config.options(), || MemoryTier::footprints(&counts))?;
    Ok(rows
        .into_iter()
        .map(|(ablation, r)| AblationRow {
            ablation,
            label: ablation.to_string(),
            total_ttft: r.total_ttft,
            hits: r.hits,
            misses: r.misses,
            swaps: r.swaps,
        })
        .collect())
}

/// True when total TTFT does not decrease along the ablation order.
pub fn is_monotone(rows: &[AblationRow]) -> bool {
    rows.windows(2).all(|w| w[0].total_ttft <= w[1].total_ttft)
}

/// Total TTFT without cache management over the full system's.
pub fn speedup(rows: &[AblationRow]) -> f64 {
    let get = |a| rows.iter().find(|r| r.ablation == a).map_or(f64::NAN, |r| r.total_ttft);
    get(Ablation::NoCacheManagement) / get(Ablation::Full)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format_version: u32,
    pub match_all: Vec<ScalingPoint>,
    pub rerank: Vec<ScalingPoint>,
    pub topological_order: Vec<ScalingPoint>,
    pub ablation: Vec<AblationRow>,
    pub monotone: bool,
    pub speedup: f64,
}

pub const MATCH_ALL_SIZES: [usize; 3] = [10_000, 20_000, 40_000];
pub const RERANK_SIZES: [usize; 3] = [256, 512, 1024];
pub const TOPO_SIZES: [usize; 3] = [1_000, 2_000, 4_000];
pub const RERANK_TABLES: usize = 512;

pub fn run_bench(
    corpus: &PreparedCorpus,
    workload: &[WorkloadLine],
    config: &RunConfig,
    seed: u64,
) -> Result<BenchReport, HarnessError> {
    let queries: Vec<WorkloadQuery> = workload
        .iter()
        .map(|l| WorkloadQuery { query_id: l.query_id.clone(), tokens: corpus.tokenizer.encode(&l.text) })
        .collect();
    let ablation = ablation_table(&corpus.engine()?, &queries, config)?;
    Ok(BenchReport {
        format_version: FORMAT_VERSION,
        match_all: match_all_scaling(&MATCH_ALL_SIZES, seed),
        rerank: rerank_scaling(&RERANK_SIZES, RERANK_TABLES, seed),
        topological_order: topo_scaling(&TOPO_SIZES, seed),
        monotone: is_monotone(&ablation),
        speedup: speedup(&ablation),
        ablation,
    })
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let curve = |out: &mut String, name: &str, pts: &[ScalingPoint]| {
            out.push_str(&format!("{name}\n"));
            let ratios = growth_ratios(pts);
            for (i, p) in pts.iter().enumerate() {
                let ratio = if i == 0 { String::new() } else { format!("  x{:.2}", ratios[i - 1]) };
                out.push_str(&format!("  n={:<8} {:>12.3} us{ratio}\n", p.size, p.seconds * 1e6));
            }
        };
        curve(&mut out, "match_all", &self.match_all);
        curve(&mut out, "rerank", &self.rerank);
        curve(&mut out, "topological_order", &self.topological_order);
        out.push_str("ablation (simulated total TTFT)\n");
        for r in &self.ablation {
            out.push_str(&format!(
                "  {:<22} {:>10.4}  hits={} misses={} swaps={}\n",
                r.label, r.total_ttft, r.hits, r.misses, r.swaps
            ));
        }
        out.push_str(&format!("monotone: {}\n", self.monotone));
        out.push_str(&format!("speedup vs no cache management: {:.2}x\n", self.speedup));
        out
    }
}
