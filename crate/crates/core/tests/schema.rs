mod common;

use std::collections::BTreeSet;

use common::gen::random_schema;
use common::oracles::{components, fk_pairs, has_cycle};
use common::rng;
use proptest::prelude::*;
use tablecache::schema::{build_graph, encoding_groups, topological_order, CycleMode, SchemaError, SchemaGraph};

fn edge_set(g: &SchemaGraph) -> BTreeSet<(usize, usize)> {
    g.edges().collect()
}

fn precedes_all(order: &[usize], edges: &BTreeSet<(usize, usize)>) -> bool {
    let mut pos = vec![usize::MAX; order.len()];
    for (i, &t) in order.iter().enumerate() {
        pos[t] = i;
    }
    edges.iter().all(|&(a, b)| pos[a] < pos[b])
}

#[test]
fn random_acyclic_graphs_match_fk_scan() {
    let mut r = rng(11);
    for _ in 0..200 {
        let schemas = random_schema(&mut r, 10, 3, true);
        let g = build_graph(&schemas).unwrap();
        assert_eq!(g.node_count(), 10);
        assert_eq!(edge_set(&g), fk_pairs(&schemas));
        assert_eq!(g.edge_count(), fk_pairs(&schemas).len());
    }
}

#[test]
fn strict_sort_succeeds_iff_dfs_finds_no_cycle() {
    let mut r = rng(12);
    let mut seen = [0usize; 2];
    for _ in 0..500 {
        let schemas = random_schema(&mut r, 8, 2, false);
        let g = build_graph(&schemas).unwrap();
        let edges = edge_set(&g);
        let cyclic = has_cycle(8, &edges);
        seen[cyclic as usize] += 1;
        match topological_order(&g, CycleMode::Strict) {
            Ok(t) => {
                assert!(!cyclic);
                assert!(precedes_all(&t.order, &edges));
            }
            Err(SchemaError::CycleDetected(cycle)) => {
                assert!(cyclic);
                // consecutive members, wrapping around, are edges
                for i in 0..cycle.len() {
                    assert!(edges.contains(&(cycle[i], cycle[(i + 1) % cycle.len()])), "{cycle:?}");
                }
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
    assert!(seen[0] > 0 && seen[1] > 0, "both branches exercised: {seen:?}");
}

#[test]
fn break_cycles_removes_real_edges_and_orders_the_rest() {
    let mut r = rng(13);
    for _ in 0..300 {
        let schemas = random_schema(&mut r, 12, 3, false);
        let g = build_graph(&schemas).unwrap();
        let edges = edge_set(&g);
        let t = topological_order(&g, CycleMode::BreakCycles).unwrap();
        let removed: BTreeSet<_> = t.removed_edges.iter().copied().collect();
        assert_eq!(removed.len(), t.removed_edges.len());
        assert!(removed.is_subset(&edges));
        let kept: BTreeSet<_> = edges.difference(&removed).copied().collect();
        assert!(!has_cycle(12, &kept));
        assert!(precedes_all(&t.order, &kept));
        assert_eq!(t.removed_edges.is_empty(), !has_cycle(12, &edges));
    }
}

#[test]
fn twenty_table_dag_groups_are_components() {
    let mut r = rng(14);
    for _ in 0..200 {
        let schemas = random_schema(&mut r, 20, 2, true);
        let g = build_graph(&schemas).unwrap();
        let edges = edge_set(&g);
        let order = topological_order(&g, CycleMode::Strict).unwrap().order;
        let counts: Vec<usize> = (0..20).map(|i| 5 + i).collect();
        let plan = encoding_groups(&g, &order, &counts);
        let got: BTreeSet<BTreeSet<usize>> = plan.groups.iter().map(|gr| gr.table_ids().collect()).collect();
        assert_eq!(got, components(20, &edges));
        let flat: Vec<usize> = plan.groups.iter().flat_map(|gr| gr.table_ids()).collect();
        assert!(precedes_all(&flat, &edges));
        for (gi, gr) in plan.groups.iter().enumerate() {
            let mut offset = 0;
            for m in &gr.members {
                assert_eq!((m.offset, m.token_count, plan.group_of[m.table_id]), (offset, counts[m.table_id], gi));
                offset += m.token_count;
            }
        }
    }
}

#[test]
fn schema_file_round_trip() {
    let schemas = random_schema(&mut rng(15), 6, 2, true);
    let text = serde_json::to_string(&schemas).unwrap();
    let back: Vec<tablecache::schema::TableSchema> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, schemas);
}

proptest! {
    #[test]
    fn order_is_a_permutation_respecting_edges(seed in any::<u64>(), n in 1usize..30) {
        let schemas = random_schema(&mut rng(seed), n, 3, true);
        let g = build_graph(&schemas).unwrap();
        let t = topological_order(&g, CycleMode::Strict).unwrap();
        let mut sorted = t.order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert!(precedes_all(&t.order, &edge_set(&g)));
    }

    #[test]
    fn groups_partition_tables(seed in any::<u64>(), n in 1usize..30) {
        let schemas = random_schema(&mut rng(seed), n, 2, false);
        let g = build_graph(&schemas).unwrap();
        let t = topological_order(&g, CycleMode::BreakCycles).unwrap();
        let plan = encoding_groups(&g, &t.order, &vec![1; n]);
        let mut all: Vec<usize> = plan.groups.iter().flat_map(|gr| gr.table_ids()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
