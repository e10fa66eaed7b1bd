//! Prefix hash tree: a trie over fixed-width binary keys whose nodes are
//! stored objects addressed by `hash(name # label)`, supporting exact
//! lookups in `O(log D)` node fetches (binary search over prefix lengths)
//! and range queries by subtree traversal.
//!
//! Keys are 32-bit unsigned integers; values are opaque bytes. A leaf
//! holds at most `M` entries; inserting into a full leaf splits it, and if
//! all entries share the next bit the split cascades until a bit
//! separates them. Both children are created at every split (the light
//! side possibly as an empty leaf) so every key prefix path always ends in
//! a leaf. Empty leaves persist after deletions; the trie never merges.
//!
//! Anyone may create or replace nodes (it is an open index); readers and
//! the replica rules only guarantee well-formedness, not exclusivity.

use bytes::Bytes;

use crate::dds::{is_not_found, object_id, ActorCtx, ClientError, StorageClient};
use crate::id::Id;
use crate::storage::{StorageError, StoredObject, WritePolicy, WriterRule};
use crate::wire::{read_count, Reader, WireError, Writer};

/// Key width in bits.
pub const PHT_KEY_BITS: u32 = 32;
/// Default leaf capacity.
pub const PHT_LEAF_CAPACITY: usize = 4;
/// A lookup probes prefix lengths 0..=32 by binary search.
pub const PHT_MAX_LOOKUP_PROBES: u32 = 6;

/// A tree is named like any other object: owner + name; node `label` (a
/// string of '0'/'1' of length 0..=32) lives at `name#label`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhtRef {
    pub owner: Id,
    pub name: String,
    pub leaf_capacity: usize,
}

impl PhtRef {
    pub fn node_id(&self, label: &str) -> Id {
        object_id(&self.owner, &format!("{}#{label}", self.name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhtNode {
    /// Prefix this node covers, MSB-first.
    pub label: String,
    pub leaf: bool,
    /// Sorted by key, unique; empty unless a leaf.
    pub entries: Vec<(u32, Bytes)>,
}

impl PhtNode {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.u8(self.label.len() as u8);
        w.u32(label_bits(&self.label));
        w.bool(self.leaf);
        w.u32(self.entries.len() as u32);
        for (k, v) in &self.entries {
            w.u32(*k);
            w.bytes(v);
        }
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<PhtNode, WireError> {
        let mut r = Reader::new(buf);
        let len = r.u8()? as u32;
        if len > PHT_KEY_BITS {
            return Err(WireError::NonCanonical);
        }
        let bits = r.u32()?;
        // Bits below the label length must be zero.
        if bits & (((1u64 << (PHT_KEY_BITS - len)) - 1) as u32) != 0 {
            return Err(WireError::NonCanonical);
        }
        let label: String =
            (0..len).map(|i| if bits & (1 << (PHT_KEY_BITS - 1 - i)) != 0 { '1' } else { '0' }).collect();
        let leaf = r.bool()?;
        let n = read_count(&mut r, 8)?;
        if !leaf && n != 0 {
            return Err(WireError::NonCanonical);
        }
        let mut entries = Vec::with_capacity(n);
        let mut prev: Option<u32> = None;
        for _ in 0..n {
            let k = r.u32()?;
            if prev.is_some_and(|p| k <= p) {
                return Err(WireError::NonCanonical);
            }
            prev = Some(k);
            entries.push((k, r.bytes_owned()?));
        }
        r.finish()?;
        Ok(PhtNode { label, leaf, entries })
    }
}

fn label_bits(label: &str) -> u32 {
    let mut bits = 0u32;
    for (i, c) in label.chars().enumerate() {
        if c == '1' {
            bits |= 1 << (PHT_KEY_BITS as usize - 1 - i);
        }
    }
    bits
}

/// The length-`len` prefix of `key` as a label string.
pub fn key_label(key: u32, len: u32) -> String {
    (0..len).map(|i| if key & (1 << (PHT_KEY_BITS - 1 - i)) != 0 { '1' } else { '0' }).collect()
}

/// Smallest and largest key covered by a label.
fn label_range(label: &str) -> (u32, u32) {
    let lo = label_bits(label);
    let free = PHT_KEY_BITS - label.len() as u32;
    let hi = if free == 0 { lo } else { lo | ((1u64 << free) - 1) as u32 };
    (lo, hi)
}

fn bit_at(key: u32, depth: usize) -> bool {
    key & (1 << (PHT_KEY_BITS as usize - 1 - depth)) != 0
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Creates the tree: a root leaf with no entries. Nodes are world-writable
/// (open index); the creator is the nominal owner.
pub fn pht_create<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    name: &str,
    leaf_capacity: usize,
) -> Result<PhtRef, ClientError> {
    let tref = PhtRef { owner: actor.user, name: name.to_string(), leaf_capacity };
    let root = PhtNode { label: String::new(), leaf: true, entries: Vec::new() };
    store_node(client, actor, &tref, &root)?;
    Ok(tref)
}

fn node_policy(tref: &PhtRef, actor: &ActorCtx) -> WritePolicy {
    // The tree owner binding rides along for provenance, but replacement is
    // open: any writer signs under a claimed key.
    let owner = if actor.user == tref.owner {
        actor.binding()
    } else {
        // Non-owner creators (splits) still stamp the original owner id so
        // readers can sanity-check; the pk is the creator's claimed key
        // which `Anyone` rules accept.
        crate::storage::PrincipalBinding { user: actor.user, pk: actor.keys.public.clone() }
    };
    WritePolicy { owner, append: WriterRule::Nobody, replace: WriterRule::Anyone, append_cap: 0, mapping: false }
}

fn store_node<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    tref: &PhtRef,
    node: &PhtNode,
) -> Result<(), ClientError> {
    let provider = client.provider();
    let obj = StoredObject::create(
        &*provider,
        &actor.keys,
        actor.user,
        tref.node_id(&node.label),
        node_policy(tref, actor),
        node.encode(),
    );
    match client.insert(obj) {
        Ok(_) => Ok(()),
        // Lost a creation race: the node exists, which is all we needed.
        Err(ClientError::Storage(StorageError::VersionConflict)) => Ok(()),
        Err(e) => Err(e),
    }
}

fn replace_node<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    current: &StoredObject,
    node: &PhtNode,
) -> Result<(), ClientError> {
    let provider = client.provider();
    let base = node.encode();
    let v = current.version + 1;
    let sig = StoredObject::sign_replace(
        &*provider, &actor.keys.secret, &current.file_id, v, &current.policy, &base, current.cleared_seq,
    );
    client.replace(
        &current.file_id,
        actor.user,
        &actor.keys.public,
        v,
        None,
        base,
        current.cleared_seq,
        sig,
    )
}

fn fetch_node<C: StorageClient>(
    client: &mut C,
    tref: &PhtRef,
    label: &str,
) -> Result<Option<(PhtNode, StoredObject)>, ClientError> {
    match client.fetch(&tref.node_id(label)) {
        Ok(obj) => {
            let node = PhtNode::decode(&obj.base).map_err(|_| ClientError::Failed(format!("malformed node {label:?}")))?;
            if node.label != label {
                return Err(ClientError::Failed(format!("node labeled {:?} stored under {label:?}", node.label)));
            }
            Ok(Some((node, obj)))
        }
        Err(e) if is_not_found(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Binary search over prefix lengths for the unique leaf on `key`'s path.
/// Returns the leaf and the number of node fetches used.
pub fn pht_find_leaf<C: StorageClient>(
    client: &mut C,
    tref: &PhtRef,
    key: u32,
) -> Result<(PhtNode, StoredObject, u32), ClientError> {
    let mut lo = 0i64;
    let mut hi = PHT_KEY_BITS as i64;
    let mut probes = 0u32;
    while lo <= hi {
        let mid = (lo + hi) / 2;
        probes += 1;
        match fetch_node(client, tref, &key_label(key, mid as u32))? {
            Some((node, obj)) if node.leaf => return Ok((node, obj, probes)),
            Some(_) => lo = mid + 1,
            None => hi = mid - 1,
        }
    }
    Err(ClientError::Failed("no leaf on key path".into()))
}

/// Exact lookup; also reports the probe count for complexity assertions.
pub fn pht_lookup<C: StorageClient>(
    client: &mut C,
    tref: &PhtRef,
    key: u32,
) -> Result<(Option<Bytes>, u32), ClientError> {
    let (leaf, _, probes) = pht_find_leaf(client, tref, key)?;
    Ok((leaf.entries.iter().find(|(k, _)| *k == key).map(|(_, v)| v.clone()), probes))
}

/// Inserts or replaces; splits full leaves, cascading while all entries
/// share the next bit. Retries on optimistic-concurrency conflicts.
pub fn pht_insert<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    tref: &PhtRef,
    key: u32,
    value: Bytes,
) -> Result<(), ClientError> {
    for _ in 0..16 {
        let (mut leaf, obj, _) = pht_find_leaf(client, tref, key)?;
        if let Some(slot) = leaf.entries.iter_mut().find(|(k, _)| *k == key) {
            slot.1 = value.clone();
            match replace_node(client, actor, &obj, &leaf) {
                Ok(()) => return Ok(()),
                Err(ClientError::Storage(StorageError::VersionConflict)) => continue,
                Err(e) => return Err(e),
            }
        }
        if leaf.entries.len() < tref.leaf_capacity {
            let pos = leaf.entries.partition_point(|(k, _)| *k < key);
            leaf.entries.insert(pos, (key, value.clone()));
            match replace_node(client, actor, &obj, &leaf) {
                Ok(()) => return Ok(()),
                Err(ClientError::Storage(StorageError::VersionConflict)) => continue,
                Err(e) => return Err(e),
            }
        }
        // Split: distribute the capacity+1 entries below this leaf, then
        // flip the leaf to internal. Children go in first so no reader ever
        // sees an internal node without its subtree.
        let mut items = leaf.entries.clone();
        let pos = items.partition_point(|(k, _)| *k < key);
        items.insert(pos, (key, value.clone()));
        let mut cur = leaf.label.clone();
        loop {
            let depth = cur.len();
            if depth >= PHT_KEY_BITS as usize {
                return Err(ClientError::Failed("split exhausted key bits (duplicate keys?)".into()));
            }
            let (zeros, ones): (Vec<_>, Vec<_>) = items.iter().cloned().partition(|(k, _)| !bit_at(*k, depth));
            if zeros.len() <= tref.leaf_capacity && ones.len() <= tref.leaf_capacity {
                store_node(client, actor, tref, &PhtNode { label: format!("{cur}0"), leaf: true, entries: zeros })?;
                store_node(client, actor, tref, &PhtNode { label: format!("{cur}1"), leaf: true, entries: ones })?;
                break;
            }
            // All (or all but ≤ capacity) fall on one side: the light side
            // becomes a (possibly empty) leaf, the heavy side an internal
            // node we keep splitting under.
            let heavy_one = ones.len() > zeros.len();
            let (light, heavy_label, light_label) = if heavy_one {
                (zeros, format!("{cur}1"), format!("{cur}0"))
            } else {
                (ones, format!("{cur}0"), format!("{cur}1"))
            };
            store_node(client, actor, tref, &PhtNode { label: light_label, leaf: true, entries: light })?;
            store_node(client, actor, tref, &PhtNode { label: heavy_label.clone(), leaf: false, entries: Vec::new() })?;
            items.retain(|(k, _)| key_label(*k, heavy_label.len() as u32) == heavy_label);
            cur = heavy_label;
        }
        let internal = PhtNode { label: leaf.label.clone(), leaf: false, entries: Vec::new() };
        match replace_node(client, actor, &obj, &internal) {
            Ok(()) => continue, // re-run the find/insert against the new shape
            Err(ClientError::Storage(StorageError::VersionConflict)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ClientError::Failed("insert retries exhausted".into()))
}

/// Removes a key if present. Empty leaves persist (no merging).
pub fn pht_remove<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    tref: &PhtRef,
    key: u32,
) -> Result<bool, ClientError> {
    for _ in 0..16 {
        let (mut leaf, obj, _) = pht_find_leaf(client, tref, key)?;
        let before = leaf.entries.len();
        leaf.entries.retain(|(k, _)| *k != key);
        if leaf.entries.len() == before {
            return Ok(false);
        }
        match replace_node(client, actor, &obj, &leaf) {
            Ok(()) => return Ok(true),
            Err(ClientError::Storage(StorageError::VersionConflict)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(ClientError::Failed("remove retries exhausted".into()))
}

/// All entries with keys in `[lo, hi]`, ascending, plus the probe count.
/// Visits exactly the subtrees whose covered intervals intersect the range.
pub fn pht_range<C: StorageClient>(
    client: &mut C,
    tref: &PhtRef,
    lo: u32,
    hi: u32,
) -> Result<(Vec<(u32, Bytes)>, u32), ClientError> {
    let mut out = Vec::new();
    let mut probes = 0u32;
    // Depth-first, zero child first, so output is key-ascending.
    let mut stack: Vec<String> = vec![String::new()];
    while let Some(label) = stack.pop() {
        let (clo, chi) = label_range(&label);
        if chi < lo || clo > hi {
            continue;
        }
        probes += 1;
        let Some((node, _)) = fetch_node(client, tref, &label)? else {
            continue;
        };
        if node.leaf {
            out.extend(node.entries.into_iter().filter(|(k, _)| *k >= lo && *k <= hi));
        } else {
            // Pop order: push one-side first so zero-side is visited first.
            stack.push(format!("{label}1"));
            stack.push(format!("{label}0"));
        }
    }
    Ok((out, probes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::toy_provider;
    use crate::dds::FakeDht;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn setup(seed: u64, cap: usize) -> (FakeDht, ActorCtx, PhtRef) {
        let mut dht = FakeDht::new(toy_provider(), seed);
        let actor = dht.actor("indexer");
        let tref = pht_create(&mut dht, &actor, "search:age", cap).unwrap();
        (dht, actor, tref)
    }

    #[test]
    fn node_codec_roundtrip_and_canonicality() {
        let node = PhtNode {
            label: "10110".into(),
            leaf: true,
            entries: vec![(1, Bytes::from_static(b"a")), (1 << 30, Bytes::from_static(b"b"))],
        };
        let buf = node.encode();
        assert_eq!(PhtNode::decode(&buf).unwrap(), node);

        // Unsorted entries rejected.
        let bad = PhtNode {
            label: String::new(),
            leaf: true,
            entries: vec![(5, Bytes::new()), (3, Bytes::new())],
        };
        assert_eq!(PhtNode::decode(&bad.encode()).unwrap_err(), WireError::NonCanonical);

        // Internal nodes carry no entries.
        let bad = PhtNode { label: String::new(), leaf: false, entries: vec![(5, Bytes::new())] };
        assert_eq!(PhtNode::decode(&bad.encode()).unwrap_err(), WireError::NonCanonical);

        // Stray bits below the label length rejected.
        let mut buf = PhtNode { label: "1".into(), leaf: true, entries: vec![] }.encode().to_vec();
        buf[4] |= 1; // low bit of the label word
        assert_eq!(PhtNode::decode(&buf).unwrap_err(), WireError::NonCanonical);
    }

    #[test]
    fn split_cascades_through_shared_prefix() {
        // Five keys sharing the 8-bit prefix 10101010, then separating:
        // two on the zero side of bit 8, three on the one side.
        let (mut dht, actor, tref) = setup(1, 4);
        let keys = [0xAA00_0001u32, 0xAA00_0002, 0xAA80_0001, 0xAA80_0002, 0xAA80_0003];
        for k in keys {
            pht_insert(&mut dht, &actor, &tref, k, Bytes::from(k.to_be_bytes().to_vec())).unwrap();
        }
        // The chain of internal nodes runs from the root to depth 8.
        for len in 0..=8u32 {
            let label = key_label(0xAA00_0000, len);
            let (node, _) = fetch_node(&mut dht, &tref, &label).unwrap().unwrap();
            assert!(!node.leaf, "{label:?} should be internal");
        }
        // The two final leaves partition the keys 2 / 3.
        let (z, _) = fetch_node(&mut dht, &tref, "101010100").unwrap().unwrap();
        let (o, _) = fetch_node(&mut dht, &tref, "101010101").unwrap().unwrap();
        assert!(z.leaf && o.leaf);
        assert_eq!(z.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0xAA00_0001, 0xAA00_0002]);
        assert_eq!(o.entries.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0xAA80_0001, 0xAA80_0002, 0xAA80_0003]);
        // Light siblings along the chain are empty leaves.
        for (sib, _) in [("0", 0), ("11", 1), ("100", 2), ("1011", 3)] {
            let (node, _) = fetch_node(&mut dht, &tref, sib).unwrap().unwrap();
            assert!(node.leaf && node.entries.is_empty(), "{sib:?}");
        }
        // Lookups stay within the probe bound and find everything.
        for k in keys {
            let (v, probes) = pht_lookup(&mut dht, &tref, k).unwrap();
            assert_eq!(v.unwrap().as_ref(), &k.to_be_bytes());
            assert!(probes <= PHT_MAX_LOOKUP_PROBES, "{probes} probes");
        }
        // Absent keys anywhere in the trie also resolve within the bound.
        for k in [0u32, 0xAA00_0003, 0xAA80_0004, u32::MAX] {
            let (v, probes) = pht_lookup(&mut dht, &tref, k).unwrap();
            assert!(v.is_none());
            assert!(probes <= PHT_MAX_LOOKUP_PROBES, "{probes} probes");
        }
    }

    #[test]
    fn range_query_visits_only_intersecting_subtrees() {
        let (mut dht, actor, tref) = setup(2, 4);
        // Two clusters far apart.
        let low: Vec<u32> = (0..8).map(|i| 0x1000 + i).collect();
        let high: Vec<u32> = (0..8).map(|i| 0xF000_0000 + i).collect();
        for &k in low.iter().chain(high.iter()) {
            pht_insert(&mut dht, &actor, &tref, k, Bytes::new()).unwrap();
        }
        let before = dht.fetches;
        let (hits, probes) = pht_range(&mut dht, &tref, 0x1002, 0x1005).unwrap();
        assert_eq!(hits.iter().map(|e| e.0).collect::<Vec<_>>(), vec![0x1002, 0x1003, 0x1004, 0x1005]);
        assert_eq!(dht.fetches - before, probes as u64);
        // The query never descended into the 0xF… cluster: probes stay far
        // below the total node count.
        let total_nodes = dht.objects.len() as u32;
        assert!(probes < total_nodes / 2, "{probes} probes vs {total_nodes} nodes");
    }

    #[test]
    fn multiple_writers_build_one_tree() {
        let (mut dht, alice, tref) = setup(3, 4);
        let bob = dht.actor("bob");
        for i in 0..24u32 {
            let actor = if i % 2 == 0 { &alice } else { &bob };
            pht_insert(&mut dht, actor, &tref, i * 7919, Bytes::from(vec![i as u8])).unwrap();
        }
        let (all, _) = pht_range(&mut dht, &tref, 0, u32::MAX).unwrap();
        assert_eq!(all.len(), 24);
        assert!(all.windows(2).all(|w| w[0].0 < w[1].0), "ascending");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_btreemap_model(
            seed in any::<u64>(),
            ops in proptest::collection::vec((any::<u32>(), any::<u8>()), 1..80),
            range in (any::<u32>(), any::<u32>()),
        ) {
            let (mut dht, actor, tref) = setup(seed, 4);
            let mut model: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
            for (k, tag) in &ops {
                // Bias keys into a narrow space so collisions/splits happen.
                let key = k % 4096;
                if tag % 4 == 3 {
                    let removed = pht_remove(&mut dht, &actor, &tref, key).unwrap();
                    prop_assert_eq!(removed, model.remove(&key).is_some());
                } else {
                    pht_insert(&mut dht, &actor, &tref, key, Bytes::from(vec![*tag])).unwrap();
                    model.insert(key, vec![*tag]);
                }
                let (got, probes) = pht_lookup(&mut dht, &tref, key).unwrap();
                prop_assert_eq!(got.map(|b| b.to_vec()), model.get(&key).cloned());
                prop_assert!(probes <= PHT_MAX_LOOKUP_PROBES);
            }
            let (lo, hi) = (range.0.min(range.1) % 4096, range.0.max(range.1) % 4096);
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let (hits, _) = pht_range(&mut dht, &tref, lo, hi).unwrap();
            let expect: Vec<(u32, Vec<u8>)> =
                model.range(lo..=hi).map(|(k, v)| (*k, v.clone())).collect();
            prop_assert_eq!(hits.len(), expect.len());
            for (got, want) in hits.iter().zip(expect.iter()) {
                prop_assert_eq!(got.0, want.0);
                prop_assert_eq!(got.1.as_ref(), &want.1[..]);
            }
            // Full scan agrees with the model.
            let (all, _) = pht_range(&mut dht, &tref, 0, u32::MAX).unwrap();
            prop_assert_eq!(all.len(), model.len());
        }
    }
}
