//! Primary/foreign-key dependency graph over a table corpus.
//!
//! Tables are nodes; every foreign key contributes one edge from the table
//! it references to the table that declares it. A topological order of that
//! graph, split into weakly-connected components, decides which tables are
//! encoded together offline (see [`EncodingPlan`]).

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense table identifier, `0..m` within a corpus.
pub type TableId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub is_primary_key: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForeignKey {
    /// Column of the declaring table.
    pub column: String,
    pub ref_table: TableId,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    pub table_id: TableId,
    pub name: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("table ids must be dense in 0..{count}; found {table_id}")]
    NonDenseIds { table_id: TableId, count: usize },
    #[error("table id {0} appears more than once")]
    DuplicateTableId(TableId),
    #[error("table {table} has an empty name or column name")]
    EmptyName { table: TableId },
    #[error("table {table}: foreign key column `{column}` is not a column of the table")]
    UnknownColumn { table: TableId, column: String },
    #[error("table {table}: foreign key references unknown table {ref_table}")]
    DanglingForeignKey { table: TableId, ref_table: TableId },
    #[error("dependency cycle among tables {0:?}")]
    CycleDetected(Vec<TableId>),
}

/// Directed dependency graph; `edges[u]` lists the tables referencing `u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaGraph {
    node_count: usize,
    edges: Vec<Vec<TableId>>,
}

impl SchemaGraph {
    /// Builds a graph directly from an edge list. Self-edges and duplicates
    /// are dropped, matching what [`build_graph`] produces.
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (TableId, TableId)>) -> Self {
        let mut sets = vec![BTreeSet::new(); node_count];
        for (from, to) in edges {
            assert!(from < node_count && to < node_count, "edge ({from}, {to}) out of range");
            if from != to {
                sets[from].insert(to);
            }
        }
        Self {
            node_count,
            edges: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Tables that reference `node`, ascending.
    pub fn successors(&self, node: TableId) -> &[TableId] {
        &self.edges[node]
    }

    pub fn edges(&self) -> impl Iterator<Item = (TableId, TableId)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(u, vs)| vs.iter().map(move |&v| (u, v)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn degree(&self, node: TableId) -> usize {
        self.edges[node].len() + self.edges.iter().filter(|vs| vs.binary_search(&node).is_ok()).count()
    }

    fn remove_edge(&mut self, from: TableId, to: TableId) {
        if let Ok(idx) = self.edges[from].binary_search(&to) {
            self.edges[from].remove(idx);
        }
    }
}

/// Checks corpus-level invariants: dense unique ids, non-empty names, and
/// resolvable foreign keys.
pub fn validate_corpus(schemas: &[TableSchema]) -> Result<(), SchemaError> {
    let count = schemas.len();
    let mut seen = vec![false; count];
    for table in schemas {
        if table.table_id >= count {
            return Err(SchemaError::NonDenseIds { table_id: table.table_id, count });
        }
        if std::mem::replace(&mut seen[table.table_id], true) {
            return Err(SchemaError::DuplicateTableId(table.table_id));
        }
        if table.name.is_empty() || table.columns.iter().any(|c| c.name.is_empty()) {
            return Err(SchemaError::EmptyName { table: table.table_id });
        }
    }
    for table in schemas {
        for fk in &table.foreign_keys {
            if table.column(&fk.column).is_none() {
                return Err(SchemaError::UnknownColumn {
                    table: table.table_id,
                    column: fk.column.clone(),
                });
            }
            if fk.ref_table >= count {
                return Err(SchemaError::DanglingForeignKey {
                    table: table.table_id,
                    ref_table: fk.ref_table,
                });
            }
        }
    }
    Ok(())
}

/// One edge `referenced -> referencing` per distinct foreign-key table pair.
pub fn build_graph(schemas: &[TableSchema]) -> Result<SchemaGraph, SchemaError> {
    validate_corpus(schemas)?;
    let edges = schemas
        .iter()
        .flat_map(|t| t.foreign_keys.iter().map(move |fk| (fk.ref_table, t.table_id)));
    Ok(SchemaGraph::from_edges(schemas.len(), edges))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleMode {
    #[default]
    Strict,
    BreakCycles,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopoOrder {
    pub order: Vec<TableId>,
    /// Edges dropped to make the graph acyclic, in removal order. Always
    /// empty in strict mode.
    pub removed_edges: Vec<(TableId, TableId)>,
}

/// Kahn's algorithm, lowest ready table id first.
///
/// In [`CycleMode::BreakCycles`] the last back edge found by a DFS is
/// removed until no back edge remains; the order is then over the reduced
/// graph.
pub fn topological_order(graph: &SchemaGraph, mode: CycleMode) -> Result<TopoOrder, SchemaError> {
    match mode {
        CycleMode::Strict => kahn(graph)
            .map(|order| TopoOrder { order, removed_edges: Vec::new() })
            .map_err(|remaining| SchemaError::CycleDetected(find_cycle(graph, &remaining))),
        CycleMode::BreakCycles => {
            let mut reduced = graph.clone();
            let mut removed_edges = Vec::new();
            while let Some((from, to)) = back_edges(&reduced).pop() {
                reduced.remove_edge(from, to);
                removed_edges.push((from, to));
            }
            let order = kahn(&reduced).expect("graph without back edges is acyclic");
            Ok(TopoOrder { order, removed_edges })
        }
    }
}

/// Returns the order, or the nodes left unprocessed when a cycle blocks it.
fn kahn(graph: &SchemaGraph) -> Result<Vec<TableId>, Vec<bool>> {
    let n = graph.node_count;
    let mut indegree = vec![0usize; n];
    for (_, to) in graph.edges() {
        indegree[to] += 1;
    }
    let mut ready: BinaryHeap<Reverse<TableId>> =
        (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(node)) = ready.pop() {
        order.push(node);
        for &next in graph.successors(node) {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                ready.push(Reverse(next));
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        let mut remaining = vec![true; n];
        for &v in &order {
            remaining[v] = false;
        }
        Err(remaining)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Color {
    White,
    Grey,
    Black,
}

/// Iterative DFS over the nodes in `allowed`, ascending. Calls `on_back`
/// with the current DFS stack whenever a back edge is found; stops early
/// when it returns `true`.
fn dfs_back_edges(
    graph: &SchemaGraph,
    allowed: &[bool],
    mut on_back: impl FnMut(&[TableId], TableId) -> bool,
) {
    let n = graph.node_count;
    let mut color = vec![Color::White; n];
    for root in 0..n {
        if !allowed[root] || color[root] != Color::White {
            continue;
        }
        let mut stack: Vec<(TableId, usize)> = vec![(root, 0)];
        let mut path: Vec<TableId> = vec![root];
        color[root] = Color::Grey;
        while let Some(&mut (node, ref mut next_idx)) = stack.last_mut() {
            let succ = graph.successors(node);
            if *next_idx < succ.len() {
                let child = succ[*next_idx];
                *next_idx += 1;
                if !allowed[child] {
                    continue;
                }
                match color[child] {
                    Color::White => {
                        color[child] = Color::Grey;
                        stack.push((child, 0));
                        path.push(child);
                    }
                    Color::Grey => {
                        if on_back(&path, child) {
                            return;
                        }
                    }
                    Color::Black => {}
                }
            } else {
                color[node] = Color::Black;
                stack.pop();
                path.pop();
            }
        }
    }
}

fn back_edges(graph: &SchemaGraph) -> Vec<(TableId, TableId)> {
    let all = vec![true; graph.node_count];
    let mut found = Vec::new();
    dfs_back_edges(graph, &all, |path, target| {
        found.push((*path.last().expect("non-empty path"), target));
        false
    });
    found
}

fn find_cycle(graph: &SchemaGraph, remaining: &[bool]) -> Vec<TableId> {
    let mut cycle = Vec::new();
    dfs_back_edges(graph, remaining, |path, target| {
        let start = path.iter().position(|&v| v == target).expect("grey node on path");
        cycle = path[start..].to_vec();
        true
    });
    cycle
}

/// A table's place inside its encoding group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMember {
    pub table_id: TableId,
    /// Token offset of the table within the group's concatenated sequence.
    pub offset: usize,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingGroup {
    pub members: Vec<GroupMember>,
}

impl EncodingGroup {
    pub fn table_ids(&self) -> impl Iterator<Item = TableId> + '_ {
        self.members.iter().map(|m| m.table_id)
    }

    pub fn token_count(&self) -> usize {
        self.members.iter().map(|m| m.token_count).sum()
    }
}

/// Partition of the corpus into jointly-encoded groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingPlan {
    pub groups: Vec<EncodingGroup>,
    /// `group_of[table_id]` is the index into `groups`.
    pub group_of: Vec<usize>,
}

impl EncodingPlan {
    pub fn member(&self, table: TableId) -> Option<(usize, usize, &GroupMember)> {
        let g = *self.group_of.get(table)?;
        let (idx, m) = self.groups[g].members.iter().enumerate().find(|(_, m)| m.table_id == table)?;
        Some((g, idx, m))
    }

    /// Every table encoded on its own, ignoring foreign keys.
    pub fn singletons(token_counts: &[usize]) -> Self {
        let graph = SchemaGraph::from_edges(token_counts.len(), std::iter::empty());
        let order: Vec<TableId> = (0..token_counts.len()).collect();
        encoding_groups(&graph, &order, token_counts)
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Splits `order` into weakly-connected components of `graph`.
///
/// Groups appear in order of their first table in `order`, and tables keep
/// `order`'s relative order inside each group. `token_counts[t]` sizes table
/// `t` so that per-group offsets can be assigned.
pub fn encoding_groups(graph: &SchemaGraph, order: &[TableId], token_counts: &[usize]) -> EncodingPlan {
    let n = graph.node_count();
    assert_eq!(order.len(), n, "order must list every table once");
    assert_eq!(token_counts.len(), n, "one token count per table");
    let mut sets = DisjointSets::new(n);
    for (u, v) in graph.edges() {
        sets.union(u, v);
    }
    let mut group_of_root = vec![usize::MAX; n];
    let mut group_of = vec![usize::MAX; n];
    let mut groups: Vec<EncodingGroup> = Vec::new();
    for &table in order {
        let root = sets.find(table);
        if group_of_root[root] == usize::MAX {
            group_of_root[root] = groups.len();
            groups.push(EncodingGroup { members: Vec::new() });
        }
        let g = group_of_root[root];
        let members = &mut groups[g].members;
        let offset = members.last().map_or(0, |m| m.offset + m.token_count);
        members.push(GroupMember { table_id: table, offset, token_count: token_counts[table] });
        group_of[table] = g;
    }
    EncodingPlan { groups, group_of }
}
