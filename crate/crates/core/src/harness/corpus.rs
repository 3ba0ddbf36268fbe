//! Offline preparation: serialize and tokenize tables, plan encoding
//! groups, and write per-table caches plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::formats::FORMAT_VERSION;
use super::serialize::serialize_table;
use super::tokenizer::Tokenizer;
use super::HarnessError;
use crate::attention::{kv_file_name, write_table_kv, Model, ModelConfig, TableKV};
use crate::pipeline::Engine;
use crate::schema::{
    build_graph, encoding_groups, topological_order, CycleMode, EncodingPlan, SchemaGraph, TableId, TableSchema,
};
use crate::trie::{CacheHandle, TableTrie, Token};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A schema corpus with everything derived from it that needs no model.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub schemas: Vec<TableSchema>,
    pub serializations: Vec<String>,
    pub tokenizer: Tokenizer,
    pub tokens: Vec<Vec<Token>>,
    pub graph: SchemaGraph,
    pub order: Vec<TableId>,
    pub removed_edges: Vec<(TableId, TableId)>,
    pub plan: EncodingPlan,
}

impl PreparedCorpus {
    pub fn new(mut schemas: Vec<TableSchema>, cycle_mode: CycleMode) -> Result<Self, HarnessError> {
        let graph = build_graph(&schemas)?;
        schemas.sort_by_key(|t| t.table_id);
        let topo = topological_order(&graph, cycle_mode)?;
        let serializations: Vec<String> = schemas.iter().map(|t| serialize_table(t, &schemas)).collect();
        let tokenizer = Tokenizer::build(serializations.iter().map(String::as_str));
        let tokens: Vec<Vec<Token>> = serializations.iter().map(|s| tokenizer.encode(s)).collect();
        let counts: Vec<usize> = tokens.iter().map(Vec::len).collect();
        let plan = encoding_groups(&graph, &topo.order, &counts);
        Ok(Self { schemas, serializations, tokenizer, tokens, graph, order: topo.order, removed_edges: topo.removed_edges, plan })
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.tokens.iter().map(Vec::len).collect()
    }

    pub fn trie(&self) -> Result<TableTrie, HarnessError> {
        build_trie(self.tokens.iter().enumerate().map(|(id, t)| (id, t.as_slice())))
    }

    pub fn engine(&self) -> Result<Engine, HarnessError> {
        Ok(Engine::new(self.trie()?, self.token_counts()))
    }

    /// Encodes every group with `model`, in plan order.
    pub fn encode<T: crate::attention::Real>(&self, model: &Model<T>) -> Result<Vec<TableKV<T>>, HarnessError> {
        let mut out = Vec::with_capacity(self.schemas.len());
        for group in &self.plan.groups {
            let segments: Vec<(TableId, &[Token])> =
                group.table_ids().map(|id| (id, self.tokens[id].as_slice())).collect();
            out.extend(model.encode_group(&segments)?);
        }
        Ok(out)
    }
}

fn build_trie<'a>(tables: impl Iterator<Item = (TableId, &'a [Token])>) -> Result<TableTrie, HarnessError> {
    let mut trie = TableTrie::new();
    for (id, toks) in tables {
        trie.insert(toks, id, CacheHandle(id as u64))?;
    }
    Ok(trie)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerManifest {
    pub fingerprint: String,
    pub pieces: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestTable {
    pub table_id: TableId,
    pub name: String,
    pub file: String,
    pub token_count: usize,
    /// Serialization tokens; the trie is rebuilt from these.
    pub tokens: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub cycle_mode: CycleMode,
    pub removed_edges: Vec<(TableId, TableId)>,
    pub tokenizer: TokenizerManifest,
    pub plan: EncodingPlan,
    pub tables: Vec<ManifestTable>,
}

impl Manifest {
    pub fn load(cache_dir: &Path) -> Result<Self, HarnessError> {
        let path = cache_dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(HarnessError::MissingCacheDir(cache_dir.to_path_buf()));
        }
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| HarnessError::json(&path, e))?;
        if m.format_version != FORMAT_VERSION {
            return Err(HarnessError::Format(format!("manifest: unsupported format_version {}", m.format_version)));
        }
        let tok = m.tokenizer();
        if tok.fingerprint() != m.tokenizer.fingerprint {
            return Err(HarnessError::Format("manifest: tokenizer fingerprint mismatch".into()));
        }
        Ok(m)
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::from_pieces(self.tokenizer.pieces.clone())
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.token_count).collect()
    }

    pub fn trie(&self) -> Result<TableTrie, HarnessError> {
        build_trie(self.tables.iter().map(|t| (t.table_id, t.tokens.as_slice())))
    }

    pub fn engine(&self) -> Result<Engine, HarnessError> {
        Ok(Engine::new(self.trie()?, self.token_counts()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputeOptions {
    pub cycle_mode: CycleMode,
    /// Model shape and seed; `vocab_size` is replaced by the tokenizer's.
    pub model: ModelConfig,
}

impl Default for PrecomputeOptions {
    fn default() -> Self {
        Self { cycle_mode: CycleMode::Strict, model: ModelConfig::default() }
    }
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map_or_else(|| "cache".into(), |n| n.to_string_lossy().into_owned());
    out.with_file_name(format!(".{name}.partial"))
}

/// Writes `<table_id>.kv` for every table plus `manifest.json` into
/// `out_dir`. Output is assembled in a staging directory and only moved
/// into place on success; an existing cache directory is replaced.
pub fn precompute_corpus(
    schemas: Vec<TableSchema>,
    out_dir: &Path,
    options: &PrecomputeOptions,
) -> Result<Manifest, HarnessError> {
    if out_dir.exists() {
        let empty = fs::read_dir(out_dir).map_err(|e| HarnessError::io(out_dir, e))?.next().is_none();
        if !(empty || out_dir.join(MANIFEST_FILE).is_file()) {
            return Err(HarnessError::Config(format!(
                "{} exists and is not a cache directory",
                out_dir.display()
            )));
        }
    }
    let staging = staging_dir(out_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| HarnessError::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| HarnessError::io(&staging, e))?;
    let result = write_cache(schemas, &staging, options).and_then(|manifest| {
        if out_dir.exists() {
            fs::remove_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
        }
        fs::rename(&staging, out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
        Ok(manifest)
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn write_cache(schemas: Vec<TableSchema>, dir: &Path, options: &PrecomputeOptions) -> Result<Manifest, HarnessError> {
    let corpus = PreparedCorpus::new(schemas, options.cycle_mode)?;
    corpus.trie()?;
    let model_config = ModelConfig { vocab_size: corpus.tokenizer.vocab_size(), ..options.model.clone() };
    let model = Model::<f32>::new(model_config.clone())?;
    for kv in corpus.encode(&model)? {
        write_table_kv(dir, &kv).map_err(|e| HarnessError::io(dir, e))?;
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: model_config,
        cycle_mode: options.cycle_mode,
        removed_edges: corpus.removed_edges.clone(),
        tokenizer: TokenizerManifest {
            fingerprint: corpus.tokenizer.fingerprint(),
            pieces: corpus.tokenizer.pieces().to_vec(),
        },
        plan: corpus.plan.clone(),
        tables: corpus
            .schemas
            .iter()
            .map(|t| ManifestTable {
                table_id: t.table_id,
                name: t.name.clone(),
                file: kv_file_name(t.table_id),
                token_count: corpus.tokens[t.table_id].len(),
                tokens: corpus.tokens[t.table_id].clone(),
            })
            .collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()).map_err(|e| HarnessError::io(&path, e))?;
    Ok(manifest)
}
