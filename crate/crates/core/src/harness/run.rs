//! Online side: tokenize a workload against a precomputed cache, simulate
//! the batch, and optionally check assembled caches against direct prefill.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::Manifest;
use super::formats::{RunConfig, SlowTierKind, WorkloadLine, FORMAT_VERSION};
use super::HarnessError;
use crate::attention::{max_abs_diff, read_table_kv, BlockMask, Model, TableKV};
use crate::kvstore::{FileTier, MemoryTier};
use crate::pipeline::{Engine, SimReport, WorkloadQuery};
use crate::schema::{EncodingPlan, TableId};
use crate::trie::Token;

/// Float32 agreement required between assembled caches and direct prefill.
pub const VERIFY_TOLERANCE: f64 = 1e-5;

pub fn tokenize_workload(manifest: &Manifest, lines: &[WorkloadLine]) -> Vec<WorkloadQuery> {
    let tok = manifest.tokenizer();
    lines
        .iter()
        .map(|l| WorkloadQuery { query_id: l.query_id.clone(), tokens: tok.encode(&l.text) })
        .collect()
}

pub fn run_workload(
    cache_dir: &Path,
    manifest: &Manifest,
    queries: &[WorkloadQuery],
    config: &RunConfig,
) -> Result<SimReport, HarnessError> {
    let engine = manifest.engine()?;
    let options = config.options();
    let report = match config.slow_tier {
        SlowTierKind::Memory => {
            engine.run_batch(queries, &options, MemoryTier::footprints(&manifest.token_counts()))?
        }
        SlowTierKind::File => {
            let tier = FileTier::new(cache_dir, manifest.tables.iter().map(|t| t.table_id));
            engine.run_batch(queries, &options, tier)?
        }
    };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub label: String,
    pub tables: Vec<TableId>,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format_version: u32,
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
    pub max_abs_diff: f64,
    pub passed: bool,
}

impl VerifyReport {
    fn from_checks(checks: Vec<CheckResult>) -> Self {
        let max_abs_diff = checks.iter().map(|c| c.max_abs_diff).fold(0.0, f64::max);
        Self {
            format_version: FORMAT_VERSION,
            tolerance: VERIFY_TOLERANCE,
            passed: max_abs_diff <= VERIFY_TOLERANCE,
            checks,
            max_abs_diff,
        }
    }

    pub fn into_result(self) -> Result<Self, HarnessError> {
        if self.passed {
            Ok(self)
        } else {
            Err(HarnessError::VerificationFailed { max_abs_diff: self.max_abs_diff, tolerance: self.tolerance })
        }
    }
}

/// Groups touched by `tables`, in order of first appearance, each expanded
/// to all of its members in encoding order.
pub fn expand_to_groups(plan: &EncodingPlan, tables: &[TableId]) -> Vec<usize> {
    let mut groups = Vec::new();
    for &t in tables {
        if let Some(&g) = plan.group_of.get(t) {
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
    }
    groups
}

/// Loads table caches from disk and compares assembly with direct prefill.
pub struct Verifier<'a> {
    manifest: &'a Manifest,
    model: Model<f32>,
    kvs: HashMap<TableId, TableKV<f32>>,
}

impl<'a> Verifier<'a> {
    pub fn new(cache_dir: &Path, manifest: &'a Manifest) -> Result<Self, HarnessError> {
        let model = Model::<f32>::new(manifest.model.clone())?;
        let mut kvs = HashMap::new();
        for t in &manifest.tables {
            let path = cache_dir.join(&t.file);
            let kv = read_table_kv(&path).map_err(|e| HarnessError::io(&path, e))?;
            if kv.table_id != t.table_id || kv.token_count() != t.token_count {
                return Err(HarnessError::Format(format!("{}: header does not match manifest", path.display())));
            }
            kvs.insert(t.table_id, kv);
        }
        Ok(Self { manifest, model, kvs })
    }

    /// Max abs difference over keys, values and query hidden states.
    pub fn check(&self, groups: &[usize], query: &[Token]) -> Result<f64, HarnessError> {
        let plan = &self.manifest.plan;
        let order: Vec<TableId> = groups.iter().flat_map(|&g| plan.groups[g].table_ids()).collect();
        let ctx = self.model.assemble(plan, order.iter().map(|t| &self.kvs[t]), &order)?;
        let mut tokens: Vec<Token> = order.iter().flat_map(|&t| self.manifest.tables[t].tokens.iter().copied()).collect();
        tokens.extend_from_slice(query);
        let blocks: Vec<usize> = groups.iter().map(|&g| plan.groups[g].token_count()).collect();
        let oracle = self.model.prefill_oracle(&tokens, &BlockMask::from_blocks(&blocks, query.len()))?;
        let n = ctx.total_tokens();
        let mut worst: f64 = 0.0;
        for l in 0..self.model.config().num_layers {
            worst = worst.max(ctx.keys[l].max_abs_diff(&oracle.keys[l].slice_tokens(0, n)));
            worst = worst.max(ctx.values[l].max_abs_diff(&oracle.values[l].slice_tokens(0, n)));
        }
        if !query.is_empty() {
            let hidden = self.model.query_attend(&ctx, query)?;
            let h = self.model.config().hidden_dim();
            worst = worst.max(max_abs_diff(&hidden, &oracle.hidden[n * h..]));
        }
        Ok(worst)
    }

    /// Checks the first `sample` queries that reference at least one table.
    pub fn check_queries(&self, engine: &Engine, queries: &[WorkloadQuery], sample: usize) -> Result<VerifyReport, HarnessError> {
        let mut checks = Vec::new();
        for q in queries {
            if checks.len() >= sample {
                break;
            }
            let job = engine.job(q)?;
            if job.tables.is_empty() {
                continue;
            }
            let groups = expand_to_groups(&self.manifest.plan, &job.tables);
            let suffix = residual_tokens(engine, &q.tokens);
            let diff = self.check(&groups, &suffix)?;
            checks.push(CheckResult { label: q.query_id.clone(), tables: job.tables, max_abs_diff: diff });
        }
        Ok(VerifyReport::from_checks(checks))
    }

    /// One check per encoding group at position zero, then every group
    /// together in reverse encoding order.
    pub fn check_corpus(&self) -> Result<VerifyReport, HarnessError> {
        let plan = &self.manifest.plan;
        let mut checks = Vec::new();
        for (g, group) in plan.groups.iter().enumerate() {
            let diff = self.check(&[g], &[])?;
            checks.push(CheckResult { label: format!("group {g}"), tables: group.table_ids().collect(), max_abs_diff: diff });
        }
        if plan.groups.len() > 1 {
            let all: Vec<usize> = (0..plan.groups.len()).rev().collect();
            let diff = self.check(&all, &[])?;
            let tables = all.iter().flat_map(|&g| plan.groups[g].table_ids()).collect();
            checks.push(CheckResult { label: "all groups, reversed".into(), tables, max_abs_diff: diff });
        }
        Ok(VerifyReport::from_checks(checks))
    }
}

/// Query tokens left after removing matched table spans.
pub fn residual_tokens(engine: &Engine, tokens: &[Token]) -> Vec<Token> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut pos = 0;
    for span in engine.trie().match_all(tokens) {
        out.extend_from_slice(&tokens[pos..span.start]);
        pos = span.end;
    }
    out.extend_from_slice(&tokens[pos..]);
    out
}
