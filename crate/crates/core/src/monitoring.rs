//! Convergecast monitoring: every node periodically pushes an aggregate
//! report to a parent chosen from the key space itself, forming a tree
//! over the live nodes without any membership coordination. The root's
//! aggregate is the global view (node count plus named metric statistics).
//!
//! Parent rule: split the ring into dyadic intervals. A node `n`'s level
//! `λ(n)` is the smallest `ℓ` such that `n` is responsible for the
//! midpoint of its level-`ℓ` interval; its parent is the node responsible
//! for the midpoint one level up. The level-0 midpoint owner is the root.
//! Relay-only nodes never win responsibility, so they attach as leaves
//! under whoever is responsible for their own id.
//!
//! Aggregation is integer-exact (count, sum, min, max, sum of squares), so
//! merge order cannot change results — reports are reproducible bit for
//! bit regardless of child arrival order.

use std::collections::BTreeMap;

use bytes::Bytes;

use crate::id::{Id, ID_BITS};
use crate::wire::{read_count, Reader, WireError, Writer};

// ---------------------------------------------------------------------------
// Exact statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricStat {
    pub count: u64,
    pub sum: i128,
    pub min: i64,
    pub max: i64,
    pub sum_sq: i128,
}

impl MetricStat {
    pub fn observe(&mut self, v: i64) {
        if self.count == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.count += 1;
        self.sum += v as i128;
        self.sum_sq += (v as i128) * (v as i128);
    }

    pub fn merge(&mut self, other: &MetricStat) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        self.count += other.count;
        self.sum += other.sum;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
        self.sum_sq += other.sum_sq;
    }

    pub fn of(values: &[i64]) -> MetricStat {
        let mut s = MetricStat::default();
        for v in values {
            s.observe(*v);
        }
        s
    }

    /// Presentation-only derived values.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.mean();
        (self.sum_sq as f64 / n - mean * mean).max(0.0)
    }

    fn encode(&self, w: &mut Writer) {
        w.u64(self.count);
        w.raw(&self.sum.to_be_bytes());
        w.u64(self.min as u64);
        w.u64(self.max as u64);
        w.raw(&self.sum_sq.to_be_bytes());
    }

    fn decode(r: &mut Reader<'_>) -> Result<MetricStat, WireError> {
        let count = r.u64()?;
        let sum = i128::from_be_bytes(r.raw(16)?.try_into().expect("16 bytes"));
        let min = r.u64()? as i64;
        let max = r.u64()? as i64;
        let sum_sq = i128::from_be_bytes(r.raw(16)?.try_into().expect("16 bytes"));
        Ok(MetricStat { count, sum, min, max, sum_sq })
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeReport {
    pub node: Id,
    pub epoch: u64,
    /// Nodes covered by this subtree, the reporter included.
    pub subtree_nodes: u64,
    pub metrics: BTreeMap<String, MetricStat>,
}

impl NodeReport {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.id(&self.node);
        w.u64(self.epoch);
        w.u64(self.subtree_nodes);
        w.u32(self.metrics.len() as u32);
        for (name, stat) in &self.metrics {
            w.str(name);
            stat.encode(&mut w);
        }
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<NodeReport, WireError> {
        let mut r = Reader::new(buf);
        let node = r.id()?;
        let epoch = r.u64()?;
        let subtree_nodes = r.u64()?;
        let n = read_count(&mut r, 56)?;
        let mut metrics = BTreeMap::new();
        let mut prev: Option<String> = None;
        for _ in 0..n {
            let name = r.str()?.to_string();
            if prev.as_ref().is_some_and(|p| &name <= p) {
                return Err(WireError::NonCanonical);
            }
            let stat = MetricStat::decode(&mut r)?;
            prev = Some(name.clone());
            metrics.insert(name, stat);
        }
        r.finish()?;
        Ok(NodeReport { node, epoch, subtree_nodes, metrics })
    }
}

/// Folds own metrics plus child subtree reports into one report.
pub fn aggregate(
    me: Id,
    epoch: u64,
    own: &BTreeMap<String, MetricStat>,
    children: &BTreeMap<Id, NodeReport>,
) -> NodeReport {
    let mut subtree_nodes = 1u64;
    let mut metrics = own.clone();
    for report in children.values() {
        subtree_nodes += report.subtree_nodes;
        for (name, stat) in &report.metrics {
            metrics.entry(name.clone()).or_default().merge(stat);
        }
    }
    NodeReport { node: me, epoch, subtree_nodes, metrics }
}

// ---------------------------------------------------------------------------
// Tree position
// ---------------------------------------------------------------------------

/// Smallest level at which `n` is responsible for its interval midpoint.
/// `resp` resolves a key to the responsible (routing-eligible) node.
pub fn node_level(n: &Id, resp: &mut impl FnMut(&Id) -> Id) -> Option<u32> {
    (0..ID_BITS).find(|l| resp(&n.interval_mid(*l)) == *n)
}

/// The key whose responsible node is `n`'s report target. `None` for the
/// root (the level-0 midpoint owner). Relay-only nodes pass `eligible =
/// false` and report to whoever is responsible for their own id.
pub fn parent_target(n: &Id, eligible: bool, resp: &mut impl FnMut(&Id) -> Id) -> Option<Id> {
    if !eligible {
        return Some(*n);
    }
    match node_level(n, resp) {
        Some(0) => None,
        Some(l) => Some(n.interval_mid(l - 1)),
        // No level found (pathological sparse view): fall back to the ring
        // mid so reports still coalesce somewhere.
        None => Some(Id::ZERO.interval_mid(0)),
    }
}

/// Resolved parent node, if any.
pub fn parent_of(n: &Id, eligible: bool, resp: &mut impl FnMut(&Id) -> Id) -> Option<Id> {
    parent_target(n, eligible, resp).map(|key| resp(&key))
}

/// Per-node monitoring state: freshest report per child.
#[derive(Debug, Default, Clone)]
pub struct MonitorState {
    pub children: BTreeMap<Id, NodeReport>,
}

impl MonitorState {
    /// Keeps only the freshest report per child.
    pub fn accept(&mut self, report: NodeReport) {
        match self.children.get(&report.node) {
            Some(cur) if cur.epoch > report.epoch => {}
            _ => {
                self.children.insert(report.node, report);
            }
        }
    }

    /// Drops reports from epochs before `min_epoch` (dead children, moved
    /// subtrees).
    pub fn prune(&mut self, min_epoch: u64) {
        self.children.retain(|_, r| r.epoch >= min_epoch);
    }

    pub fn remove(&mut self, child: &Id) {
        self.children.remove(child);
    }
}

/// What the root's report means globally.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalView {
    pub epoch: u64,
    pub nodes: u64,
    pub metrics: BTreeMap<String, MetricStat>,
}

impl GlobalView {
    pub fn from_report(r: &NodeReport) -> GlobalView {
        GlobalView { epoch: r.epoch, nodes: r.subtree_nodes, metrics: r.metrics.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::id::most_responsible;
    use proptest::prelude::*;
    use rand::{Rng, RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_ids(seed: u64, n: usize) -> Vec<Id> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut b = [0u8; 20];
                rng.fill_bytes(&mut b);
                Id(b)
            })
            .collect()
    }

    /// Brute-force responsibility over a fixed population.
    fn resp_fn(ids: Vec<Id>) -> impl FnMut(&Id) -> Id {
        move |key| most_responsible(key, ids.iter()).unwrap()
    }

    #[test]
    fn parent_relation_forms_a_tree() {
        for seed in 0..4u64 {
            let ids = random_ids(seed, 64);
            let mut resp = resp_fn(ids.clone());
            let mut roots = 0;
            for n in &ids {
                match parent_of(n, true, &mut resp) {
                    None => roots += 1,
                    Some(p) => {
                        assert_ne!(p, *n, "no self-parenting");
                        // Walking up terminates at the root without cycles.
                        let mut cur = p;
                        let mut hops = 0;
                        while let Some(next) = parent_of(&cur, true, &mut resp) {
                            cur = next;
                            hops += 1;
                            assert!(hops <= ids.len(), "cycle detected from {n}");
                        }
                    }
                }
            }
            assert_eq!(roots, 1, "exactly one root (seed {seed})");
        }
    }

    #[test]
    fn convergecast_counts_every_node_exactly_once() {
        let ids = random_ids(7, 48);
        let mut resp = resp_fn(ids.clone());
        // Parent map, then synchronous bottom-up rounds until stable.
        let mut parent: BTreeMap<Id, Option<Id>> = BTreeMap::new();
        for n in &ids {
            parent.insert(*n, parent_of(n, true, &mut resp));
        }
        let root = *parent.iter().find(|(_, p)| p.is_none()).unwrap().0;

        let mut states: BTreeMap<Id, MonitorState> = ids.iter().map(|n| (*n, MonitorState::default())).collect();
        let mut own: BTreeMap<Id, BTreeMap<String, MetricStat>> = BTreeMap::new();
        for (i, n) in ids.iter().enumerate() {
            let mut m = BTreeMap::new();
            m.insert("load".to_string(), MetricStat::of(&[i as i64]));
            own.insert(*n, m);
        }

        let mut root_count = 0;
        for epoch in 1..=200u64 {
            // Every node reports its current aggregate to its parent.
            let reports: Vec<(Id, NodeReport)> = ids
                .iter()
                .filter_map(|n| {
                    parent[n].map(|p| (p, aggregate(*n, epoch, &own[n], &states[n].children)))
                })
                .collect();
            for (p, r) in reports {
                states.get_mut(&p).unwrap().accept(r);
            }
            let view = GlobalView::from_report(&aggregate(root, epoch, &own[&root], &states[&root].children));
            if view.nodes == ids.len() as u64 {
                root_count = view.nodes;
                // Exact aggregation: the load stat equals the brute-force
                // stat over all per-node values.
                let want = MetricStat::of(&(0..ids.len() as i64).collect::<Vec<_>>());
                assert_eq!(view.metrics["load"], want);
                assert!(epoch as usize <= ids.len(), "converged in ≤ depth rounds");
                break;
            }
        }
        assert_eq!(root_count, ids.len() as u64, "all nodes counted");
    }

    #[test]
    fn relay_only_nodes_attach_as_leaves() {
        let strong = random_ids(11, 32);
        let weak = random_ids(12, 8);
        let mut resp = resp_fn(strong.clone());
        for w in &weak {
            let p = parent_of(w, false, &mut resp).expect("weak node always has a parent");
            assert!(strong.contains(&p), "parent is a routing-eligible node");
            assert_ne!(p, *w);
        }
        // And no weak node is ever anyone's parent: parents come from
        // `resp`, which only ranges over the strong population.
        for n in &strong {
            if let Some(p) = parent_of(n, true, &mut resp) {
                assert!(strong.contains(&p));
            }
        }
    }

    #[test]
    fn report_codec_roundtrip_and_canonical_order() {
        let mut metrics = BTreeMap::new();
        metrics.insert("hops".to_string(), MetricStat::of(&[1, 2, 3]));
        metrics.insert("lat".to_string(), MetricStat::of(&[-5, 40]));
        let r = NodeReport { node: Id::from_low_u64(9), epoch: 3, subtree_nodes: 17, metrics };
        let back = NodeReport::decode(&r.encode()).unwrap();
        assert_eq!(back, r);

        // Hand-build an out-of-order encoding: rejected.
        let mut w = Writer::new();
        w.id(&r.node);
        w.u64(3);
        w.u64(17);
        w.u32(2);
        w.str("lat");
        MetricStat::of(&[1]).encode(&mut w);
        w.str("hops");
        MetricStat::of(&[2]).encode(&mut w);
        assert_eq!(NodeReport::decode(&w.into_bytes()).unwrap_err(), WireError::NonCanonical);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn stat_merge_is_partition_invariant(
            values in proptest::collection::vec(-1_000_000i64..1_000_000, 1..60),
            cut in any::<usize>(),
            seed in any::<u64>(),
        ) {
            let want = MetricStat::of(&values);
            // Any split point gives the same merged stat.
            let k = cut % values.len();
            let mut a = MetricStat::of(&values[..k]);
            a.merge(&MetricStat::of(&values[k..]));
            prop_assert_eq!(a, want);
            // Any permutation and chunking too.
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut shuffled = values.clone();
            for i in (1..shuffled.len()).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            let mut acc = MetricStat::default();
            for chunk in shuffled.chunks(3) {
                acc.merge(&MetricStat::of(chunk));
            }
            prop_assert_eq!(acc, want);
        }
    }
}
