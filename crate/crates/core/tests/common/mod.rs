#![allow(dead_code)]

pub mod gen;
pub mod oracles;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tablecache::attention::{BlockMask, Model, ModelConfig, Real, TableKV};
use tablecache::schema::{EncodingGroup, EncodingPlan, GroupMember, TableId};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random corpus of encoding groups with random token content.
pub struct RandomCorpus {
    pub plan: EncodingPlan,
    pub tokens: Vec<Vec<u32>>,
}

impl RandomCorpus {
    pub fn generate(
        rng: &mut ChaCha8Rng,
        groups: std::ops::RangeInclusive<usize>,
        tables_per_group: std::ops::RangeInclusive<usize>,
        tokens_per_table: std::ops::RangeInclusive<usize>,
        vocab: u32,
    ) -> Self {
        let n_groups = rng.gen_range(groups);
        let mut plan_groups = Vec::new();
        let mut tokens = Vec::new();
        let mut group_of = Vec::new();
        for g in 0..n_groups {
            let mut members = Vec::new();
            let mut offset = 0;
            for _ in 0..rng.gen_range(tables_per_group.clone()) {
                let len = rng.gen_range(tokens_per_table.clone());
                let id = tokens.len();
                tokens.push((0..len).map(|_| rng.gen_range(0..vocab)).collect::<Vec<u32>>());
                members.push(GroupMember { table_id: id, offset, token_count: len });
                group_of.push(g);
                offset += len;
            }
            plan_groups.push(EncodingGroup { members });
        }
        Self { plan: EncodingPlan { groups: plan_groups, group_of }, tokens }
    }

    pub fn encode<T: Real>(&self, model: &Model<T>) -> Vec<TableKV<T>> {
        self.plan
            .groups
            .iter()
            .flat_map(|g| {
                let segs: Vec<(TableId, &[u32])> =
                    g.members.iter().map(|m| (m.table_id, self.tokens[m.table_id].as_slice())).collect();
                model.encode_group(&segs).unwrap()
            })
            .collect()
    }

    /// Table order with whole groups laid out in `group_order`.
    pub fn table_order(&self, group_order: &[usize]) -> Vec<TableId> {
        group_order.iter().flat_map(|&g| self.plan.groups[g].table_ids()).collect()
    }

    pub fn shuffled_group_order(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut o: Vec<usize> = (0..self.plan.groups.len()).collect();
        o.shuffle(rng);
        o
    }

    /// Concatenated tokens and block mask for `group_order`, plus `query`
    /// appended as globally visible rows.
    pub fn oracle_input(&self, group_order: &[usize], query: &[u32]) -> (Vec<u32>, BlockMask) {
        let mut toks = Vec::new();
        let mut blocks = Vec::new();
        for &g in group_order {
            let grp = &self.plan.groups[g];
            for id in grp.table_ids() {
                toks.extend_from_slice(&self.tokens[id]);
            }
            blocks.push(grp.token_count());
        }
        toks.extend_from_slice(query);
        (toks, BlockMask::from_blocks(&blocks, query.len()))
    }
}

pub fn model_config(seed: u64, vocab: usize) -> ModelConfig {
    ModelConfig { vocab_size: vocab, weight_seed: seed, ..ModelConfig::default() }
}

/// Max abs diff of assembled keys/values and query hidden states against
/// the block-masked oracle.
pub fn assembly_error<T: Real>(
    model: &Model<T>,
    corpus: &RandomCorpus,
    kvs: &[TableKV<T>],
    group_order: &[usize],
    query: &[u32],
) -> f64 {
    let order = corpus.table_order(group_order);
    let ctx = model.assemble(&corpus.plan, kvs, &order).unwrap();
    let (toks, mask) = corpus.oracle_input(group_order, query);
    let oracle = model.prefill_oracle(&toks, &mask).unwrap();
    let n_ctx = ctx.total_tokens();
    let mut worst: f64 = 0.0;
    for l in 0..model.config().num_layers {
        worst = worst.max(ctx.keys[l].max_abs_diff(&oracle.keys[l].slice_tokens(0, n_ctx)));
        worst = worst.max(ctx.values[l].max_abs_diff(&oracle.values[l].slice_tokens(0, n_ctx)));
    }
    if !query.is_empty() {
        let hidden = model.query_attend(&ctx, query).unwrap();
        let h = model.config().hidden_dim();
        worst = worst.max(tablecache::attention::max_abs_diff(&hidden, &oracle.hidden[n_ctx * h..]));
    }
    worst
}
