//! Token-keyed trie over table serializations.
//!
//! Each table's full token sequence is inserted once; its terminal node
//! carries the table id and an opaque handle into the KV store. Matching an
//! input stream is a left-to-right scan: at each position the longest
//! serialization starting exactly there is taken and the scan jumps past
//! it, otherwise the scan advances by one token.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::TableId;

pub type Token = u32;

/// Opaque reference to a table's cached KV, resolved by the KV store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheHandle(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrieError {
    #[error("table {0} is already in the trie")]
    DuplicateTable(TableId),
    #[error("table {0} has an empty serialization")]
    EmptySerialization(TableId),
    #[error("table {table} has the same serialization as table {existing}")]
    DuplicateSerialization { table: TableId, existing: TableId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terminal {
    pub table_id: TableId,
    pub handle: CacheHandle,
}

#[derive(Debug, Default, Clone)]
struct Node {
    children: HashMap<Token, u32>,
    terminal: Option<Terminal>,
}

/// Result of a successful [`TableTrie::query`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrieMatch {
    pub table_id: TableId,
    pub handle: CacheHandle,
    /// Position just past the matched serialization.
    pub next: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub table_id: TableId,
    pub start: usize,
    pub end: usize,
}

impl MatchSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Work counters for one [`TableTrie::match_all_with_stats`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchStats {
    /// Child edges followed across all queries.
    pub node_visits: usize,
    pub queries: usize,
}

#[derive(Debug, Clone)]
pub struct TableTrie {
    nodes: Vec<Node>,
    // table_id -> serialization length
    lengths: HashMap<TableId, usize>,
}

impl Default for TableTrie {
    fn default() -> Self {
        Self::new()
    }
}

impl TableTrie {
    pub fn new() -> Self {
        Self { nodes: vec![Node::default()], lengths: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn serialization_len(&self, table: TableId) -> Option<usize> {
        self.lengths.get(&table).copied()
    }

    pub fn insert(&mut self, tokens: &[Token], table_id: TableId, handle: CacheHandle) -> Result<(), TrieError> {
        if tokens.is_empty() {
            return Err(TrieError::EmptySerialization(table_id));
        }
        if self.lengths.contains_key(&table_id) {
            return Err(TrieError::DuplicateTable(table_id));
        }
        // Walk existing nodes first so a rejected insert leaves the trie untouched.
        let mut node = 0usize;
        let mut depth = 0;
        while depth < tokens.len() {
            match self.nodes[node].children.get(&tokens[depth]) {
                Some(&child) => {
                    node = child as usize;
                    depth += 1;
                }
                None => break,
            }
        }
        if depth == tokens.len() {
            if let Some(existing) = self.nodes[node].terminal {
                return Err(TrieError::DuplicateSerialization { table: table_id, existing: existing.table_id });
            }
        }
        for &tok in &tokens[depth..] {
            let child = u32::try_from(self.nodes.len()).expect("trie node count fits in u32");
            self.nodes.push(Node::default());
            self.nodes[node].children.insert(tok, child);
            node = child as usize;
        }
        self.nodes[node].terminal = Some(Terminal { table_id, handle });
        self.lengths.insert(table_id, tokens.len());
        Ok(())
    }

    /// Longest inserted serialization starting exactly at `start`.
    pub fn query(&self, tokens: &[Token], start: usize) -> Option<TrieMatch> {
        self.query_counting(tokens, start, &mut 0)
    }

    fn query_counting(&self, tokens: &[Token], start: usize, visits: &mut usize) -> Option<TrieMatch> {
        let mut node = 0usize;
        let mut best = None;
        for (pos, tok) in tokens.iter().enumerate().skip(start) {
            let Some(&child) = self.nodes[node].children.get(tok) else {
                break;
            };
            *visits += 1;
            node = child as usize;
            if let Some(t) = self.nodes[node].terminal {
                best = Some(TrieMatch { table_id: t.table_id, handle: t.handle, next: pos + 1 });
            }
        }
        best
    }

    /// Extracts every table occurrence from `tokens`, left to right.
    pub fn match_all(&self, tokens: &[Token]) -> Vec<MatchSpan> {
        self.match_all_with_stats(tokens).0
    }

    pub fn match_all_with_stats(&self, tokens: &[Token]) -> (Vec<MatchSpan>, MatchStats) {
        let mut spans = Vec::new();
        let mut stats = MatchStats::default();
        let mut p = 0;
        while p < tokens.len() {
            stats.queries += 1;
            match self.query_counting(tokens, p, &mut stats.node_visits) {
                Some(m) => {
                    spans.push(MatchSpan { table_id: m.table_id, start: p, end: m.next });
                    p = m.next;
                }
                None => p += 1,
            }
        }
        (spans, stats)
    }

    /// All `(serialization, terminal)` pairs, in depth-first token order.
    pub fn entries(&self) -> Vec<(Vec<Token>, Terminal)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if let Some(t) = self.nodes[node].terminal {
                out.push((path.clone(), t));
            }
            let mut kids: Vec<_> = self.nodes[node].children.iter().collect();
            kids.sort_unstable_by(|a, b| b.0.cmp(a.0));
            for (&tok, &child) in kids {
                let mut p = path.clone();
                p.push(tok);
                stack.push((child as usize, p));
            }
        }
        out
    }
}
