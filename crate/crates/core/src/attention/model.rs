use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rotary::rotate_in_place;
use super::tensor::{HeadTensor, Real};
use super::AttentionError;
use crate::schema::{EncodingPlan, TableId};
use crate::trie::Token;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub rotary_base: f64,
    pub weight_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            head_dim: 16,
            ffn_dim: 128,
            vocab_size: 512,
            rotary_base: 10_000.0,
            weight_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn hidden_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), AttentionError> {
        let dims = [self.num_layers, self.num_heads, self.head_dim, self.ffn_dim, self.vocab_size];
        if dims.contains(&0) {
            return Err(AttentionError::InvalidConfig("all dimensions must be positive"));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(AttentionError::OddHeadDim(self.head_dim));
        }
        if !(self.rotary_base.is_finite() && self.rotary_base > 1.0) {
            return Err(AttentionError::InvalidConfig("rotary_base must be finite and > 1"));
        }
        Ok(())
    }
}

/// Position-free cache for one table: keys are stored without rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct TableKV<T> {
    pub table_id: TableId,
    /// Token offset of the table inside its encoding group.
    pub local_offset: usize,
    /// One `[tokens, heads, head_dim]` tensor per layer.
    pub keys: Vec<HeadTensor<T>>,
    pub values: Vec<HeadTensor<T>>,
}

impl<T: Real> TableKV<T> {
    pub fn token_count(&self) -> usize {
        self.keys.first().map_or(0, HeadTensor::tokens)
    }

    pub fn cast<U: Real>(&self) -> TableKV<U> {
        TableKV {
            table_id: self.table_id,
            local_offset: self.local_offset,
            keys: self.keys.iter().map(HeadTensor::cast).collect(),
            values: self.values.iter().map(HeadTensor::cast).collect(),
        }
    }

    /// L2 norm of the difference over all layers, keys and values.
    pub fn l2_diff(&self, other: &Self) -> f64 {
        self.keys
            .iter()
            .zip(&other.keys)
            .chain(self.values.iter().zip(&other.values))
            .map(|(a, b)| a.l2_diff(b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Which rows a token may attend to, besides the causal constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    /// Only earlier tokens of the same block.
    Block(usize),
    /// Every earlier token.
    Global,
}

/// Token `i` may attend `j` iff `j <= i` and either `i` is global or both
/// share a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    rows: Vec<Visibility>,
    positions: Vec<i64>,
}

impl BlockMask {
    pub fn new(rows: Vec<Visibility>, positions: Vec<i64>) -> Result<Self, AttentionError> {
        if rows.len() != positions.len() {
            return Err(AttentionError::DimensionMismatch {
                what: "mask positions",
                expected: rows.len(),
                actual: positions.len(),
            });
        }
        if positions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AttentionError::PositionsNotIncreasing);
        }
        Ok(Self { rows, positions })
    }

    /// Ordinary causal mask at positions `0..len`.
    pub fn causal(len: usize) -> Self {
        Self { rows: vec![Visibility::Block(0); len], positions: (0..len as i64).collect() }
    }

    /// Consecutive blocks of the given lengths at positions `0..`, followed
    /// by `global_tail` tokens that see everything before them.
    pub fn from_blocks(block_lens: &[usize], global_tail: usize) -> Self {
        let mut rows = Vec::new();
        for (b, &len) in block_lens.iter().enumerate() {
            rows.extend(std::iter::repeat_n(Visibility::Block(b), len));
        }
        rows.extend(std::iter::repeat_n(Visibility::Global, global_tail));
        let positions = (0..rows.len() as i64).collect();
        Self { rows, positions }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positions(&self) -> &[i64] {
        &self.positions
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        j <= i
            && match self.rows[i] {
                Visibility::Global => true,
                block => self.rows[j] == block,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextSpan {
    pub table_id: TableId,
    pub start: usize,
    pub end: usize,
}

/// Concatenated caches with keys rotated at their global positions.
#[derive(Debug, Clone)]
pub struct AssembledContext<T> {
    pub keys: Vec<HeadTensor<T>>,
    pub values: Vec<HeadTensor<T>>,
    pub spans: Vec<ContextSpan>,
}

impl<T: Real> AssembledContext<T> {
    pub fn total_tokens(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }
}

/// Output of a full forward pass.
#[derive(Debug, Clone)]
pub struct PrefillOutput<T> {
    /// Rotated keys per layer.
    pub keys: Vec<HeadTensor<T>>,
    pub values: Vec<HeadTensor<T>>,
    /// Final hidden states, `[tokens, hidden_dim]` row-major.
    pub hidden: Vec<T>,
}

/// Already-rotated keys and values, one tensor per layer.
type PastKv<'a, T> = (&'a [HeadTensor<T>], &'a [HeadTensor<T>]);

struct LayerWeights<T> {
    wq: Vec<T>,
    wk: Vec<T>,
    wv: Vec<T>,
    wo: Vec<T>,
    w_up: Vec<T>,
    w_down: Vec<T>,
}

/// Small residual transformer: attention and a SiLU MLP per layer, no
/// normalisation and no output head.
pub struct Model<T> {
    config: ModelConfig,
    embedding: Vec<T>,
    layers: Vec<LayerWeights<T>>,
}

// row-major [rows, cols] times x[rows] for each token: out[n, cols] = x[n, rows] * w
fn matmul<T: Real>(x: &[T], w: &[T], rows: usize, cols: usize) -> Vec<T> {
    let n = x.len() / rows;
    let mut out = vec![T::zero(); n * cols];
    for t in 0..n {
        let xr = &x[t * rows..(t + 1) * rows];
        let or = &mut out[t * cols..(t + 1) * cols];
        for (r, &xv) in xr.iter().enumerate() {
            let wr = &w[r * cols..(r + 1) * cols];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o = *o + xv * wv;
            }
        }
    }
    out
}

fn silu<T: Real>(v: T) -> T {
    v / (T::one() + (-v).exp())
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

impl<T: Real> Model<T> {
    /// Weights are drawn in `f64` from `weight_seed` and then converted, so
    /// the `f32` and `f64` models share the same parameters up to rounding.
    pub fn new(config: ModelConfig) -> Result<Self, AttentionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.weight_seed);
        let hidden = config.hidden_dim();
        let mut draw = |len: usize, fan_in: usize, gain: f64| -> Vec<T> {
            let limit = gain * (3.0 / fan_in as f64).sqrt();
            (0..len).map(|_| T::from_f64_lossy(rng.gen_range(-limit..limit))).collect()
        };
        let embedding = draw(config.vocab_size * hidden, 3, 1.0);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                wq: draw(hidden * hidden, hidden, 1.0),
                wk: draw(hidden * hidden, hidden, 1.0),
                wv: draw(hidden * hidden, hidden, 1.0),
                wo: draw(hidden * hidden, hidden, 0.5),
                w_up: draw(hidden * config.ffn_dim, hidden, 1.0),
                w_down: draw(config.ffn_dim * hidden, config.ffn_dim, 0.5),
            })
            .collect();
        Ok(Self { config, embedding, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn embed(&self, tokens: &[Token]) -> Result<Vec<T>, AttentionError> {
        let hidden = self.config.hidden_dim();
        let mut x = Vec::with_capacity(tokens.len() * hidden);
        for &tok in tokens {
            let t = tok as usize;
            if t >= self.config.vocab_size {
                return Err(AttentionError::TokenOutOfVocab { token: tok, vocab_size: self.config.vocab_size });
            }
            x.extend_from_slice(&self.embedding[t * hidden..(t + 1) * hidden]);
        }
        Ok(x)
    }

    /// Runs all layers over `tokens`. Every row attends the whole `past`
    /// (already-rotated keys) plus the rows of `tokens` that `allows` admits.
    fn forward(
        &self,
        tokens: &[Token],
        positions: &[i64],
        past: Option<PastKv<'_, T>>,
        allows: impl Fn(usize, usize) -> bool,
    ) -> Result<PrefillOutput<T>, AttentionError> {
        let cfg = &self.config;
        let (n, heads, d, hidden) = (tokens.len(), cfg.num_heads, cfg.head_dim, cfg.hidden_dim());
        let scale = T::from_f64_lossy(1.0 / (d as f64).sqrt());
        let mut x = self.embed(tokens)?;
        let mut keys_out = Vec::with_capacity(cfg.num_layers);
        let mut values_out = Vec::with_capacity(cfg.num_layers);

        for (l, w) in self.layers.iter().enumerate() {
            let tensor = |data: Vec<T>| HeadTensor::from_vec(n, heads, d, data).expect("projection shape");
            let mut q = tensor(matmul(&x, &w.wq, hidden, hidden));
            let mut k = tensor(matmul(&x, &w.wk, hidden, hidden));
            let v = tensor(matmul(&x, &w.wv, hidden, hidden));
            rotate_in_place(&mut q, positions, cfg.rotary_base)?;
            rotate_in_place(&mut k, positions, cfg.rotary_base)?;

            let (past_k, past_v) = match past {
                Some((pk, pv)) => (Some(&pk[l]), Some(&pv[l])),
                None => (None, None),
            };
            let past_len = past_k.map_or(0, HeadTensor::tokens);

            let mut attn = vec![T::zero(); n * hidden];
            let mut scores: Vec<T> = Vec::with_capacity(past_len + n);
            let mut cols: Vec<usize> = Vec::with_capacity(n);
            for i in 0..n {
                cols.clear();
                cols.extend((0..=i).filter(|&j| allows(i, j)));
                for h in 0..heads {
                    let qv = q.vector(i, h);
                    scores.clear();
                    if let Some(pk) = past_k {
                        scores.extend((0..past_len).map(|j| dot(qv, pk.vector(j, h)) * scale));
                    }
                    scores.extend(cols.iter().map(|&j| dot(qv, k.vector(j, h)) * scale));
                    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut denom = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        denom = denom + *s;
                    }
                    let out = &mut attn[i * hidden + h * d..i * hidden + (h + 1) * d];
                    let mut accumulate = |weight: T, vv: &[T]| {
                        let p = weight / denom;
                        for (o, &val) in out.iter_mut().zip(vv) {
                            *o = *o + p * val;
                        }
                    };
                    if let Some(pv) = past_v {
                        for (j, &s) in scores[..past_len].iter().enumerate() {
                            accumulate(s, pv.vector(j, h));
                        }
                    }
                    for (s, &j) in scores[past_len..].iter().zip(&cols) {
                        accumulate(*s, v.vector(j, h));
                    }
                }
            }
            let projected = matmul(&attn, &w.wo, hidden, hidden);
            for (xv, a) in x.iter_mut().zip(projected) {
                *xv = *xv + a;
            }
            let mut up = matmul(&x, &w.w_up, hidden, cfg.ffn_dim);
            up.iter_mut().for_each(|u| *u = silu(*u));
            let down = matmul(&up, &w.w_down, cfg.ffn_dim, hidden);
            for (xv, m) in x.iter_mut().zip(down) {
                *xv = *xv + m;
            }
            keys_out.push(k);
            values_out.push(v);
        }
        Ok(PrefillOutput { keys: keys_out, values: values_out, hidden: x })
    }

    /// Causal prefill of one encoding group at local positions `0..L`.
    ///
    /// `segments` lists the group's tables in plan order. Keys are
    /// un-rotated before being split per table.
    pub fn encode_group(&self, segments: &[(TableId, &[Token])]) -> Result<Vec<TableKV<T>>, AttentionError> {
        let tokens: Vec<Token> = segments.iter().flat_map(|(_, t)| t.iter().copied()).collect();
        if tokens.is_empty() {
            return Err(AttentionError::EmptyGroup);
        }
        let positions: Vec<i64> = (0..tokens.len() as i64).collect();
        let out = self.forward(&tokens, &positions, None, |i, j| j <= i)?;
        let inverse: Vec<i64> = positions.iter().map(|p| -p).collect();
        let mut keys = out.keys;
        for k in &mut keys {
            rotate_in_place(k, &inverse, self.config.rotary_base)?;
        }
        let mut offset = 0;
        let mut result = Vec::with_capacity(segments.len());
        for (table_id, seg) in segments {
            let end = offset + seg.len();
            result.push(TableKV {
                table_id: *table_id,
                local_offset: offset,
                keys: keys.iter().map(|k| k.slice_tokens(offset, end)).collect(),
                values: out.values.iter().map(|v| v.slice_tokens(offset, end)).collect(),
            });
            offset = end;
        }
        Ok(result)
    }

    /// Concatenates table caches in `order` and rotates their keys at the
    /// resulting global positions.
    pub fn assemble<'a>(
        &self,
        plan: &EncodingPlan,
        table_kvs: impl IntoIterator<Item = &'a TableKV<T>>,
        order: &[TableId],
    ) -> Result<AssembledContext<T>, AttentionError> {
        let by_id: HashMap<TableId, &TableKV<T>> = table_kvs.into_iter().map(|kv| (kv.table_id, kv)).collect();
        let mut last_member: HashMap<usize, usize> = HashMap::new();
        let mut seen = std::collections::HashSet::new();
        let mut parts = Vec::with_capacity(order.len());
        for &table in order {
            if !seen.insert(table) {
                return Err(AttentionError::DuplicateTable(table));
            }
            let kv = *by_id.get(&table).ok_or(AttentionError::MissingTableKV(table))?;
            self.check_shape(kv)?;
            let (group, idx, _) = plan.member(table).ok_or(AttentionError::MissingTableKV(table))?;
            if let Some(prev) = last_member.insert(group, idx) {
                if prev > idx {
                    return Err(AttentionError::GroupOrderViolation { table, group });
                }
            }
            parts.push(kv);
        }

        let (heads, d) = (self.config.num_heads, self.config.head_dim);
        let mut spans = Vec::with_capacity(parts.len());
        let mut start = 0;
        for kv in &parts {
            let end = start + kv.token_count();
            spans.push(ContextSpan { table_id: kv.table_id, start, end });
            start = end;
        }
        let positions: Vec<i64> = (0..start as i64).collect();
        let mut keys = Vec::with_capacity(self.config.num_layers);
        let mut values = Vec::with_capacity(self.config.num_layers);
        for l in 0..self.config.num_layers {
            let mut k = HeadTensor::concat(parts.iter().map(|kv| &kv.keys[l]), heads, d);
            rotate_in_place(&mut k, &positions, self.config.rotary_base)?;
            keys.push(k);
            values.push(HeadTensor::concat(parts.iter().map(|kv| &kv.values[l]), heads, d));
        }
        Ok(AssembledContext { keys, values, spans })
    }

    fn check_shape(&self, kv: &TableKV<T>) -> Result<(), AttentionError> {
        let cfg = &self.config;
        let ok = kv.keys.len() == cfg.num_layers
            && kv.values.len() == cfg.num_layers
            && kv
                .keys
                .iter()
                .chain(&kv.values)
                .all(|t| t.heads() == cfg.num_heads && t.head_dim() == cfg.head_dim && t.tokens() == kv.token_count());
        if ok {
            Ok(())
        } else {
            Err(AttentionError::ShapeMismatch(kv.table_id))
        }
    }

    /// Direct prefill of `tokens` under `mask`; the reference that assembled
    /// caches are checked against.
    pub fn prefill_oracle(&self, tokens: &[Token], mask: &BlockMask) -> Result<PrefillOutput<T>, AttentionError> {
        if mask.len() != tokens.len() {
            return Err(AttentionError::DimensionMismatch {
                what: "mask rows",
                expected: tokens.len(),
                actual: mask.len(),
            });
        }
        self.forward(tokens, mask.positions(), None, |i, j| mask.allows(i, j))
    }

    /// Final hidden states of `query` placed right after `ctx`. Query rows
    /// see every context token and earlier query tokens.
    pub fn query_attend(&self, ctx: &AssembledContext<T>, query: &[Token]) -> Result<Vec<T>, AttentionError> {
        let start = ctx.total_tokens() as i64;
        let positions: Vec<i64> = (start..start + query.len() as i64).collect();
        let past = if ctx.keys.is_empty() || ctx.total_tokens() == 0 {
            None
        } else {
            Some((ctx.keys.as_slice(), ctx.values.as_slice()))
        };
        Ok(self.forward(query, &positions, past, |i, j| j <= i)?.hidden)
    }
}
