//! Random inputs shared by the integration and acceptance suites.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tablecache::pipeline::{CostModel, QueryJob};
use tablecache::schema::{ColumnDef, ForeignKey, TableSchema};

fn column(name: String, pk: bool) -> ColumnDef {
    ColumnDef { name, description: String::new(), is_primary_key: pk }
}

/// `n` tables with up to `max_fks` foreign keys each. When `acyclic`, keys
/// only point to tables earlier in a hidden random ranking, so ids carry no
/// order information.
pub fn random_schema(rng: &mut ChaCha8Rng, n: usize, max_fks: usize, acyclic: bool) -> Vec<TableSchema> {
    let mut rank: Vec<usize> = (0..n).collect();
    rank.shuffle(rng);
    (0..n)
        .map(|i| {
            let mut columns = vec![column("id".into(), true)];
            let mut foreign_keys = Vec::new();
            for k in 0..rng.gen_range(0..=max_fks) {
                let target = rng.gen_range(0..n);
                if acyclic && rank[target] >= rank[i] {
                    continue;
                }
                let name = format!("fk{k}");
                columns.push(column(name.clone(), false));
                foreign_keys.push(ForeignKey { column: name, ref_table: target, ref_column: "id".into() });
            }
            TableSchema { table_id: i, name: format!("table_{i}"), columns, foreign_keys }
        })
        .collect()
}

/// Distinct serializations over a small alphabet, many of them extensions
/// of earlier ones so prefixes are shared.
pub fn random_serializations(rng: &mut ChaCha8Rng, count: usize, alphabet: u32, max_len: usize) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    while out.len() < count {
        let mut s = if !out.is_empty() && rng.gen_bool(0.4) {
            let base = out.choose(rng).unwrap();
            base[..rng.gen_range(1..=base.len())].to_vec()
        } else {
            Vec::new()
        };
        let target = rng.gen_range(1..=max_len).max(s.len() + 1);
        while s.len() < target {
            s.push(rng.gen_range(0..alphabet));
        }
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Filler runs, whole serializations and truncated serializations, up to
/// `max_len` tokens. Filler shares the alphabet, so accidental matches occur.
pub fn random_stream(rng: &mut ChaCha8Rng, sers: &[Vec<u32>], alphabet: u32, max_len: usize) -> Vec<u32> {
    let target = rng.gen_range(0..=max_len);
    let mut out = Vec::with_capacity(target + 64);
    while out.len() < target {
        match rng.gen_range(0..3) {
            0 => (0..rng.gen_range(1..8)).for_each(|_| out.push(rng.gen_range(0..alphabet))),
            1 => out.extend_from_slice(sers.choose(rng).unwrap()),
            _ => {
                let s = sers.choose(rng).unwrap();
                out.extend_from_slice(&s[..rng.gen_range(0..=s.len())]);
            }
        }
    }
    out.truncate(target);
    out
}

pub struct PipelineInstance {
    pub jobs: Vec<QueryJob>,
    pub table_tokens: Vec<usize>,
    pub capacity: usize,
    pub b_c: usize,
    pub b_m: usize,
    pub cost: CostModel,
}

pub fn random_pipeline(rng: &mut ChaCha8Rng) -> PipelineInstance {
    let n_tables = rng.gen_range(1..=16);
    let table_tokens: Vec<usize> = (0..n_tables).map(|_| rng.gen_range(1..=300)).collect();
    let jobs = (0..rng.gen_range(1..=60))
        .map(|i| {
            let mut tables: Vec<usize> = (0..n_tables).collect();
            tables.shuffle(rng);
            tables.truncate(rng.gen_range(0..=n_tables.min(4)));
            let context_tokens = tables.iter().map(|&t| table_tokens[t]).sum();
            QueryJob { query_id: format!("q{i}"), tables, query_tokens: rng.gen_range(1..=64), context_tokens }
        })
        .collect();
    let pick = |rng: &mut ChaCha8Rng, scale: f64| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..scale) };
    let cost = CostModel {
        compute_per_token: pick(rng, 1e-5),
        load_per_token: pick(rng, 1e-3),
        switch_overhead: pick(rng, 1e-2),
    };
    PipelineInstance {
        jobs,
        table_tokens,
        capacity: rng.gen_range(0..=10),
        b_c: rng.gen_range(1..=12),
        b_m: rng.gen_range(1..=12),
        cost,
    }
}
