use std::collections::{BTreeSet, HashSet};
use std::hash::{BuildHasherDefault, Hasher};

use super::SymmetricPattern;

/// A symmetric permutation: `new_to_old[k]` is the original index placed at
/// pivot position `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    new_to_old: Vec<usize>,
    old_to_new: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self { new_to_old: (0..n).collect(), old_to_new: (0..n).collect() }
    }

    pub fn from_new_to_old(new_to_old: Vec<usize>) -> Self {
        let mut old_to_new = vec![usize::MAX; new_to_old.len()];
        for (k, &old) in new_to_old.iter().enumerate() {
            assert!(old_to_new[old] == usize::MAX, "index {old} appears twice in permutation");
            old_to_new[old] = k;
        }
        Self { new_to_old, old_to_new }
    }

    pub fn len(&self) -> usize {
        self.new_to_old.len()
    }

    pub fn is_empty(&self) -> bool {
        self.new_to_old.is_empty()
    }

    #[inline]
    pub fn old(&self, new: usize) -> usize {
        self.new_to_old[new]
    }

    #[inline]
    pub fn new_index(&self, old: usize) -> usize {
        self.old_to_new[old]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.new_to_old
    }
}

// Multiplicative hashing is plenty for dense small integer keys and several
// times faster than SipHash in the clique-forming inner loop.
#[derive(Default)]
struct IndexHasher(u64);

impl Hasher for IndexHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0.rotate_left(5) ^ u64::from(b)).wrapping_mul(0x51_7c_c1_b7_27_22_0a_95);
        }
    }

    fn write_usize(&mut self, i: usize) {
        self.0 = (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
}

type IndexSet = HashSet<usize, BuildHasherDefault<IndexHasher>>;

/// Minimum-degree ordering on the explicit elimination graph.
///
/// At every step the node with the fewest uneliminated neighbours is
/// eliminated (ties broken by smallest index) and its neighbours are joined
/// into a clique. For the person/item graphs produced by crossed designs this
/// eliminates every person before any item, so the only fill is the dense
/// item block.
pub fn minimum_degree(pattern: &SymmetricPattern) -> Permutation {
    let n = pattern.dim();
    let mut adj: Vec<IndexSet> = (0..n)
        .map(|i| pattern.neighbors(i).iter().copied().collect())
        .collect();
    let mut degree: Vec<usize> = adj.iter().map(HashSet::len).collect();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (degree[i], i)).collect();
    let mut order = Vec::with_capacity(n);
    let mut nbrs = Vec::new();

    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        nbrs.clear();
        nbrs.extend(adj[v].drain());
        nbrs.sort_unstable();
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (idx, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[idx + 1..] {
                if adj[a].insert(b) {
                    adj[b].insert(a);
                }
            }
        }
        for &a in &nbrs {
            let d = adj[a].len();
            if d != degree[a] {
                queue.remove(&(degree[a], a));
                degree[a] = d;
                queue.insert((d, a));
            }
        }
    }
    Permutation::from_new_to_old(order)
}
