mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::oracles::{ListCache, Policy};
use common::rng;
use proptest::prelude::*;
use rand::Rng;
use tablecache::attention::{write_table_kv, HeadTensor, TableKV};
use tablecache::kvstore::{
    AccessKind, CacheError, EvictionPolicy, FileTier, MemoryTier, TableFootprint, TieredCache,
};

const POLICIES: [(EvictionPolicy, Policy); 3] =
    [(EvictionPolicy::Lru, Policy::Lru), (EvictionPolicy::Fifo, Policy::Fifo), (EvictionPolicy::Lfu, Policy::Lfu)];

fn cache(capacity: usize, policy: EvictionPolicy, tables: usize) -> TieredCache<MemoryTier<TableFootprint>> {
    TieredCache::new(capacity, policy, MemoryTier::footprints(&vec![10; tables]))
}

fn same_state(c: &TieredCache<MemoryTier<TableFootprint>>, o: &ListCache) -> bool {
    let s = c.stats();
    (s.hits, s.misses, s.swaps, s.prefetch_loads) == (o.hits, o.misses, o.swaps, o.prefetch_loads)
        && c.resident_ids().into_iter().collect::<BTreeSet<_>>() == o.resident()
}

#[test]
fn mixed_demand_and_prefetch_traces_match_list_oracle() {
    let mut r = rng(31);
    for (policy, oracle_policy) in POLICIES {
        for capacity in [1, 2, 3, 5, 8] {
            let mut c = cache(capacity, policy, 12);
            let mut o = ListCache::new(oracle_policy, capacity);
            for now in 0..20_000u64 {
                let t = r.gen_range(0..12);
                if r.gen_bool(0.3) {
                    c.access(t, now, AccessKind::Prefetch).unwrap();
                    o.prefetch(t, now);
                } else {
                    let (_, hit) = c.get(t, now).unwrap();
                    assert_eq!(hit, o.get(t, now).0);
                }
                assert!(same_state(&c, &o), "{policy} C={capacity} at op {now}");
                if c.len() == capacity {
                    // the next victim must be what the oracle would evict
                    let victim = c.evict_candidate().unwrap();
                    let mut probe = o.clone();
                    let (_, evicted) = probe.get(usize::MAX, u64::MAX);
                    assert_eq!(Some(victim), evicted);
                }
            }
        }
    }
}

#[test]
fn batch_prefetch_over_capacity_follows_policy() {
    for (policy, oracle_policy) in POLICIES {
        let mut c = cache(3, policy, 10);
        let mut o = ListCache::new(oracle_policy, 3);
        for (now, t) in [0usize, 1, 2, 0].into_iter().enumerate() {
            c.get(t, now as u64).unwrap();
            o.get(t, now as u64);
        }
        let admitted = c.prefetch(&[4, 5, 1, 6], 10).unwrap();
        let expected: Vec<usize> = [4, 5, 1, 6].into_iter().filter(|&t| !o.prefetch(t, 10).0).collect();
        assert!(same_state(&c, &o), "{policy}");
        assert_eq!(admitted, expected);
    }
}

#[test]
fn hot_set_within_capacity_never_swaps() {
    let mut r = rng(32);
    for (policy, _) in POLICIES {
        let mut c = cache(6, policy, 20);
        for now in 0..5000 {
            c.get(r.gen_range(0..6), now).unwrap();
        }
        assert_eq!(c.stats().swaps, 0);
        assert_eq!(c.stats().misses, 6);
    }
}

#[test]
fn hundred_thousand_random_ops_keep_invariants() {
    let mut r = rng(33);
    for (policy, _) in POLICIES {
        let mut c = cache(7, policy, 40);
        let mut demand = 0;
        let mut last = c.stats();
        for now in 0..100_000u64 {
            let t = r.gen_range(0..40);
            match r.gen_range(0..10) {
                0 => {
                    let ids: Vec<usize> = (0..r.gen_range(1..5)).map(|_| r.gen_range(0..40)).collect();
                    c.prefetch(&ids, now).unwrap();
                }
                1 => assert_eq!(c.get(99, now).unwrap_err(), CacheError::UnknownTable(99)),
                _ => {
                    c.get(t, now).unwrap();
                    demand += 1;
                }
            }
            let s = c.stats();
            assert!(c.invariants_hold());
            assert!(s.hits >= last.hits && s.misses >= last.misses && s.swaps >= last.swaps);
            assert_eq!(s.hits + s.misses, demand);
            last = s;
        }
    }
}

#[test]
fn file_tier_serves_written_tables() {
    let dir = tempfile::tempdir().unwrap();
    for id in 0..3 {
        let tensor = HeadTensor::from_vec(2, 2, 4, (0..16).map(|x| x as f32 + id as f32).collect()).unwrap();
        let kv = TableKV { table_id: id, local_offset: 0, keys: vec![tensor.clone()], values: vec![tensor] };
        write_table_kv(dir.path(), &kv).unwrap();
    }
    let tier = FileTier::new(dir.path(), 0..4);
    let mut c = TieredCache::new(2, EvictionPolicy::Lru, tier);
    let (kv, hit) = c.get(1, 0).unwrap();
    assert!(!hit);
    assert_eq!(kv.keys[0].as_slice()[0], 1.0);
    let (again, hit) = c.get(1, 1).unwrap();
    assert!(hit && Arc::ptr_eq(&kv, &again));
    assert!(matches!(c.get(3, 2), Err(CacheError::Load { table: 3, .. })));
    assert_eq!(c.get(7, 3).unwrap_err(), CacheError::UnknownTable(7));
}

proptest! {
    #[test]
    fn demand_traces_match_oracle(
        capacity in 1usize..6,
        trace in prop::collection::vec(0usize..8, 0..200),
        which in 0usize..3,
    ) {
        let (policy, oracle_policy) = POLICIES[which];
        let mut c = cache(capacity, policy, 8);
        let mut o = ListCache::new(oracle_policy, capacity);
        for (now, &t) in trace.iter().enumerate() {
            c.get(t, now as u64).unwrap();
            o.get(t, now as u64);
            prop_assert!(c.len() <= capacity);
        }
        prop_assert!(same_state(&c, &o));
    }
}
