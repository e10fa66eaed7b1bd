//! Self-check oracles: deterministic scenarios whose expected outcome is
//! computable from global knowledge. Each check builds its own small world,
//! exercises one subsystem through the public interfaces, and compares the
//! observed behavior against an independent brute-force model.

use std::collections::BTreeMap;

use bytes::Bytes;
use rand::RngExt;

use crate::crypto::toy_provider;
use crate::dds::{object_id, ActorCtx, FakeDht, StorageClient};
use crate::id::{hash160_parts, Id};
use crate::pht::{pht_create, pht_insert, pht_range, PHT_KEY_BITS};
use crate::storage::{StoredObject, WritePolicy, WriterRule};

use super::{global_responsible, Sim, SimConfig};

fn test_actor(provider: &dyn crate::crypto::CryptoProvider, name: &str) -> ActorCtx {
    ActorCtx {
        user: crate::dds::user_principal(name),
        username: name.to_string(),
        keys: provider.keypair_from_credentials(name, "pw"),
    }
}

/// Key-based routing: from random origins, every lookup must land on the
/// node that global knowledge says is responsible, within the hop bound.
pub fn check_routing(seed: u64) -> Result<String, String> {
    let n = 32usize;
    let mut sim = Sim::new(SimConfig::default(), toy_provider(), seed);
    let ids = sim.build_full(n, 0);
    let hop_bound = (n as f64).log2().ceil() as u32 + 2;
    let mut max_hops = 0u32;
    let mut total_hops = 0u64;
    for i in 0..64u64 {
        let key = hash160_parts(&[b"route-check", &seed.to_be_bytes(), &i.to_be_bytes()]);
        let origin = ids[sim.client_rng.random_range(0..ids.len())];
        let expect = global_responsible(&sim, &key).expect("non-empty network");
        let (got, hops) = sim.lookup_from(origin, key).map_err(|e| format!("lookup failed: {e}"))?;
        if got != expect {
            return Err(format!("key {i}: lookup landed on {got} but {expect} is responsible"));
        }
        if hops > hop_bound {
            return Err(format!("key {i}: {hops} hops exceeds bound {hop_bound}"));
        }
        max_hops = max_hops.max(hops);
        total_hops += hops as u64;
    }
    Ok(format!(
        "64/64 lookups correct over {n} nodes; hops mean {:.2}, max {max_hops} (bound {hop_bound})",
        total_hops as f64 / 64.0
    ))
}

/// Replicated storage: after inserts settle, every object lives on exactly
/// the k most responsible live nodes, bytes intact, receipts verifiable.
pub fn check_replication(seed: u64) -> Result<String, String> {
    let mut sim = Sim::new(SimConfig::default(), toy_provider(), seed);
    let ids = sim.build_full(12, 0);
    let provider = sim.provider.clone();
    let actor = test_actor(&*provider, "oracle-writer");
    let k = sim.cfg.k;
    let mut inserted: Vec<(Id, Id)> = Vec::new(); // (file id, content hash)
    for i in 0..16u64 {
        let name = format!("check-{i}");
        let fid = object_id(&actor.user, &name);
        let body = Bytes::from(format!("payload {i} under seed {seed}").into_bytes());
        let policy = WritePolicy {
            owner: actor.binding(),
            append: WriterRule::Nobody,
            replace: WriterRule::Nobody,
            append_cap: 0,
            mapping: false,
        };
        let obj = StoredObject::create(&*provider, &actor.keys, actor.user, fid, policy, body);
        let hash = obj.content_hash();
        let origin = ids[sim.client_rng.random_range(0..ids.len())];
        let report = sim.client(origin).insert(obj).map_err(|e| format!("insert {i} failed: {e}"))?;
        for r in &report.receipts {
            let pk = sim.directory.get(&r.replica).ok_or_else(|| format!("receipt from unknown node {}", r.replica))?;
            if !r.verify(&*provider, pk) {
                return Err(format!("object {i}: receipt from {} does not verify", r.replica));
            }
        }
        inserted.push((fid, hash));
    }
    sim.run_ms(2 * sim.cfg.maintenance_ms);
    for (fid, hash) in &inserted {
        let mut holders: Vec<Id> = Vec::new();
        for id in sim.live_ids() {
            if let Some(o) = sim.node(&id).store.objects.get(fid) {
                if o.content_hash() != *hash {
                    return Err(format!("object {fid}: node {id} holds divergent bytes"));
                }
                holders.push(id);
            }
        }
        let strong = sim.live_strong_ids();
        let mut expect = strong.clone();
        expect.sort_by(|a, b| crate::id::cmp_responsibility(fid, b, a));
        expect.truncate(k);
        expect.sort();
        holders.sort();
        if holders != expect {
            return Err(format!(
                "object {fid}: replica set {holders:?} differs from the {k} most responsible {expect:?}"
            ));
        }
    }
    Ok(format!("16/16 objects on exactly their {k} most responsible nodes, bytes intact, receipts verified"))
}

/// Prefix hash tree: inserts then range queries must agree with a sorted
/// map, and probe counts must stay logarithmic in the key space.
pub fn check_pht(seed: u64) -> Result<String, String> {
    let mut dht = FakeDht::new(toy_provider(), seed);
    let actor = dht.actor("oracle-indexer");
    let tref = pht_create(&mut dht, &actor, "oracle:index", 4).map_err(|e| format!("create failed: {e}"))?;
    let mut model: BTreeMap<u32, Bytes> = BTreeMap::new();
    for i in 0..200u32 {
        let h = hash160_parts(&[b"pht-check", &seed.to_be_bytes(), &i.to_be_bytes()]);
        let key = u32::from_be_bytes([h.0[0], h.0[1], h.0[2], h.0[3]]);
        let value = Bytes::from(format!("v{i}").into_bytes());
        pht_insert(&mut dht, &actor, &tref, key, value.clone()).map_err(|e| format!("insert {i}: {e}"))?;
        model.insert(key, value);
    }
    let probe_bound = PHT_KEY_BITS.ilog2() + 1; // binary search over prefix lengths
    for q in 0..50u32 {
        let h = hash160_parts(&[b"pht-range", &seed.to_be_bytes(), &q.to_be_bytes()]);
        let a = u32::from_be_bytes([h.0[4], h.0[5], h.0[6], h.0[7]]);
        let b = u32::from_be_bytes([h.0[8], h.0[9], h.0[10], h.0[11]]);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (got, _probes) = pht_range(&mut dht, &tref, lo, hi).map_err(|e| format!("range {q}: {e}"))?;
        let want: Vec<(u32, Bytes)> = model.range(lo..=hi).map(|(k, v)| (*k, v.clone())).collect();
        if got != want {
            return Err(format!("range {q} [{lo},{hi}]: tree returned {} entries, model {}", got.len(), want.len()));
        }
        let (_, probes) = crate::pht::pht_lookup(&mut dht, &tref, lo).map_err(|e| format!("lookup {q}: {e}"))?;
        if probes > probe_bound {
            return Err(format!("lookup probes {probes} exceed bound {probe_bound}"));
        }
    }
    Ok(format!("200 keys, 50/50 range queries match the sorted-map model; lookup probes ≤ {probe_bound}"))
}

/// Convergecast monitoring: within the settle window, the root's global
/// view must count every node exactly once.
pub fn check_monitoring(seed: u64) -> Result<String, String> {
    let n = 16usize;
    let mut sim = Sim::new(SimConfig::default(), toy_provider(), seed);
    let _ids = sim.build_full(n, 0);
    // Staleness pruning keys off epochs; give the tree depth·2 rounds.
    let rounds = 2 * (n as f64).log2().ceil() as u64 + 2;
    sim.run_ms(rounds * sim.cfg.monitor_ms + 1);
    let views: Vec<(Id, u64)> = sim
        .live_ids()
        .into_iter()
        .filter_map(|id| sim.node(&id).global_view.as_ref().map(|v| (id, v.nodes)))
        .collect();
    if views.is_empty() {
        return Err("no node assembled a global view".into());
    }
    for (id, nodes) in &views {
        if *nodes != n as u64 {
            return Err(format!("root {id} counts {nodes} nodes, want {n}"));
        }
    }
    Ok(format!("{} root(s) converged on node count {n} within {rounds} rounds", views.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pht_oracle_passes() {
        check_pht(7).unwrap();
    }

    #[test]
    fn routing_oracle_passes() {
        check_routing(7).unwrap();
    }

    #[test]
    fn replication_oracle_passes() {
        check_replication(7).unwrap();
    }

    #[test]
    fn monitoring_oracle_passes() {
        check_monitoring(7).unwrap();
    }
}
