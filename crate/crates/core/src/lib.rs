//! Table-granular KV-cache serving engine for text-to-SQL prefill.

pub mod attention;
pub mod harness;
pub mod kvstore;
pub mod pipeline;
pub mod rerank;
pub mod schema;
pub mod trie;
