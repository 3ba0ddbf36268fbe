//! End-to-end harness behind the `tablecache` binary.

pub mod bench;
pub mod corpus;
pub mod demo;
pub mod formats;
pub mod run;
pub mod serialize;
pub mod tokenizer;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::attention::AttentionError;
use crate::kvstore::CacheError;
use crate::pipeline::EngineError;
use crate::schema::SchemaError;
use crate::trie::TrieError;

pub use corpus::{precompute_corpus, Manifest, PrecomputeOptions, PreparedCorpus};
pub use formats::{RunConfig, WorkloadLine};
pub use serialize::serialize_table;
pub use tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} is not a precomputed cache directory (no manifest.json)")]
    MissingCacheDir(PathBuf),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("verification failed: max abs diff {max_abs_diff:e} exceeds {tolerance:e}")]
    VerificationFailed { max_abs_diff: f64, tolerance: f64 },
    #[error("benchmark check failed: {0}")]
    BenchFailed(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json { path: path.to_path_buf(), source }
    }

    /// Process exit code: 3 for failed checks, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::VerificationFailed { .. } | Self::BenchFailed(_) => 3,
            _ => 2,
        }
    }
}
