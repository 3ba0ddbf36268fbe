//! Reference implementations written without reusing library internals.

use std::collections::{BTreeSet, VecDeque};

use tablecache::schema::TableSchema;

/// Every (referenced, referencing) pair named by a foreign key, minus
/// self-references.
pub fn fk_pairs(schemas: &[TableSchema]) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for t in schemas {
        for fk in &t.foreign_keys {
            if fk.ref_table != t.table_id {
                out.insert((fk.ref_table, t.table_id));
            }
        }
    }
    out
}

/// Recursive three-colour DFS.
pub fn has_cycle(n: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    fn visit(v: usize, adj: &[Vec<usize>], state: &mut [u8]) -> bool {
        state[v] = 1;
        for &w in &adj[v] {
            if state[w] == 1 || (state[w] == 0 && visit(w, adj, state)) {
                return true;
            }
        }
        state[v] = 2;
        false
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
    }
    let mut state = vec![0u8; n];
    (0..n).any(|v| state[v] == 0 && visit(v, &adj, &mut state))
}

/// Weakly-connected components by repeated flooding.
pub fn components(n: usize, edges: &BTreeSet<(usize, usize)>) -> BTreeSet<BTreeSet<usize>> {
    let mut comp = vec![usize::MAX; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut members = BTreeSet::from([s]);
        comp[s] = s;
        let mut changed = true;
        while changed {
            changed = false;
            for &(a, b) in edges {
                for (x, y) in [(a, b), (b, a)] {
                    if members.contains(&x) && members.insert(y) {
                        comp[y] = s;
                        changed = true;
                    }
                }
            }
        }
        out.insert(members);
    }
    out
}

/// Longest serialization that occurs at `start`, trying every table.
pub fn longest_at(sers: &[Vec<u32>], tokens: &[u32], start: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for (id, s) in sers.iter().enumerate() {
        let fits = start + s.len() <= tokens.len() && tokens[start..start + s.len()] == s[..];
        if fits && best.is_none_or(|(_, len)| s.len() > len) {
            best = Some((id, s.len()));
        }
    }
    best
}

/// Left-to-right scan that restarts one token later on a miss.
pub fn match_all(sers: &[Vec<u32>], tokens: &[u32]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut p = 0;
    while p < tokens.len() {
        match longest_at(sers, tokens, p) {
            Some((id, len)) => {
                out.push((id, p, p + len));
                p += len;
            }
            None => p += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Lru,
    Fifo,
    Lfu,
}

/// The three replacement procedures as plain lists. `prefetch` follows the
/// same procedures except that it never counts as a use: a prefetched LFU
/// entry starts at frequency 0 and a resident one only gets its timestamp
/// refreshed.
#[derive(Debug, Clone)]
pub struct ListCache {
    pub policy: Policy,
    pub capacity: usize,
    /// LRU: front = most recent. FIFO: front = head of queue.
    list: VecDeque<usize>,
    /// LFU entries: (item, frequency, timestamp).
    lfu: Vec<(usize, u64, u64)>,
    pub hits: u64,
    pub misses: u64,
    pub swaps: u64,
    pub prefetch_loads: u64,
}

impl ListCache {
    pub fn new(policy: Policy, capacity: usize) -> Self {
        Self {
            policy,
            capacity,
            list: VecDeque::new(),
            lfu: Vec::new(),
            hits: 0,
            misses: 0,
            swaps: 0,
            prefetch_loads: 0,
        }
    }

    fn len(&self) -> usize {
        match self.policy {
            Policy::Lfu => self.lfu.len(),
            _ => self.list.len(),
        }
    }

    pub fn contains(&self, item: usize) -> bool {
        match self.policy {
            Policy::Lfu => self.lfu.iter().any(|e| e.0 == item),
            _ => self.list.contains(&item),
        }
    }

    pub fn resident(&self) -> BTreeSet<usize> {
        match self.policy {
            Policy::Lfu => self.lfu.iter().map(|e| e.0).collect(),
            _ => self.list.iter().copied().collect(),
        }
    }

    fn evict(&mut self) -> usize {
        self.swaps += 1;
        match self.policy {
            Policy::Lru => self.list.pop_back().unwrap(),
            Policy::Fifo => self.list.pop_front().unwrap(),
            Policy::Lfu => {
                let mut x = 0;
                for i in 1..self.lfu.len() {
                    let (a, b) = (self.lfu[i], self.lfu[x]);
                    if a.1 < b.1 || (a.1 == b.1 && a.2 < b.2) {
                        x = i;
                    }
                }
                self.lfu.remove(x).0
            }
        }
    }

    fn update(&mut self, request: usize, timestamp: u64, demand: bool) -> (bool, Option<usize>) {
        if self.contains(request) {
            match self.policy {
                Policy::Lru => {
                    let pos = self.list.iter().position(|&x| x == request).unwrap();
                    self.list.remove(pos);
                    self.list.push_front(request);
                }
                Policy::Fifo => {}
                Policy::Lfu => {
                    let e = self.lfu.iter_mut().find(|e| e.0 == request).unwrap();
                    if demand {
                        e.1 += 1;
                    }
                    e.2 = timestamp;
                }
            }
            return (true, None);
        }
        let evicted = if self.len() >= self.capacity { Some(self.evict()) } else { None };
        match self.policy {
            Policy::Lru => self.list.push_front(request),
            Policy::Fifo => self.list.push_back(request),
            Policy::Lfu => self.lfu.push((request, u64::from(demand), timestamp)),
        }
        (false, evicted)
    }

    /// Demand access; returns (hit, evicted).
    pub fn get(&mut self, request: usize, timestamp: u64) -> (bool, Option<usize>) {
        let r = self.update(request, timestamp, true);
        if r.0 {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        r
    }

    pub fn prefetch(&mut self, request: usize, timestamp: u64) -> (bool, Option<usize>) {
        let r = self.update(request, timestamp, false);
        if !r.0 {
            self.prefetch_loads += 1;
        }
        r
    }
}

pub fn bits(words: &[u64], n: usize) -> Vec<bool> {
    (0..n).map(|k| (words[k / 64] >> (k % 64)) & 1 == 1).collect()
}

pub fn bit_loop_hamming(a: &[bool], b: &[bool]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// All permutations of `0..n`, lexicographic.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Load durations per query from a demand-only replay of `tables` on a
/// list cache; a load costs `lpt * tokens` plus `so` when it evicts.
pub fn load_durations(
    policy: Policy,
    capacity: usize,
    queries: &[Vec<usize>],
    tokens: &[usize],
    lpt: f64,
    so: f64,
) -> Vec<Vec<f64>> {
    let mut cache = ListCache::new(policy, capacity);
    let mut ts = 0;
    queries
        .iter()
        .map(|q| {
            let mut out = Vec::new();
            for &t in q {
                if capacity == 0 {
                    out.push(lpt * tokens[t] as f64 + so);
                    continue;
                }
                let (hit, evicted) = cache.get(t, ts);
                ts += 1;
                if !hit {
                    out.push(lpt * tokens[t] as f64 + if evicted.is_some() { so } else { 0.0 });
                }
            }
            out
        })
        .collect()
}
