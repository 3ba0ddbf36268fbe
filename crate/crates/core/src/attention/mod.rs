//! Toy rotary transformer used to build, assemble and check table caches.
//!
//! Tables of one encoding group are prefilled together at local positions
//! and their keys are stored un-rotated. At serving time the caches are
//! concatenated and the keys are rotated at their global positions, which
//! reproduces a block-masked full prefill because rotary scores depend only
//! on relative offsets.

mod kvfile;
mod model;
mod rotary;
mod tensor;

use thiserror::Error;

use crate::schema::TableId;
use crate::trie::Token;

pub use kvfile::{decode_table_kv, encode_table_kv, kv_file_name, kv_path, read_table_kv, write_table_kv};
pub use model::{
    AssembledContext, BlockMask, ContextSpan, Model, ModelConfig, PrefillOutput, TableKV, Visibility,
};
pub use rotary::{apply_rotation, rotate_in_place};
pub use tensor::{max_abs_diff, HeadTensor, Real};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttentionError {
    #[error("{what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("head_dim {0} must be even for rotary encoding")]
    OddHeadDim(usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(&'static str),
    #[error("encoding group has no tokens")]
    EmptyGroup,
    #[error("no cached KV for table {0}")]
    MissingTableKV(TableId),
    #[error("table {table} appears before an earlier member of group {group}")]
    GroupOrderViolation { table: TableId, group: usize },
    #[error("table {0} requested twice")]
    DuplicateTable(TableId),
    #[error("cached KV for table {0} does not match the model shape")]
    ShapeMismatch(TableId),
    #[error("token {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfVocab { token: Token, vocab_size: usize },
    #[error("mask positions must be strictly increasing")]
    PositionsNotIncreasing,
}
