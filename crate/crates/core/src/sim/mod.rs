//! Deterministic discrete-event network simulator.
//!
//! A single event heap ordered by `(time, sequence)` drives message
//! delivery, timers and periodic duties. Client operations (lookup, store,
//! fetch, …) are executed by the *driver*: it issues rpcs from an origin
//! node and pumps the event loop until the matching replies arrive, so a
//! whole distributed operation runs to completion inside one call while
//! every message still pays simulated latency. Identical `(seed, plan,
//! config)` inputs replay the identical event trace.

pub mod churn;
pub mod config;
pub mod metrics;
pub mod node;
pub mod oracle;
pub mod plan;
pub mod proto;
pub mod runner;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;

use bytes::Bytes;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::channels::{Envelope, Messenger};
use crate::crypto::{CryptoProvider, PublicKey};
use crate::dds::{ClientError, InsertReport, StorageClient};
use crate::id::{cmp_responsibility, most_responsible, Id};
use crate::overlay::NodeDescriptor;
use crate::storage::{AppendRec, StorageError, StoredObject, WritePolicy};

pub use config::SimConfig;
use metrics::MetricLog;
use node::{SimNode, TimerTag, CODE_REDIRECT, FIND_CANDIDATES, RPC_TIMEOUT_MS};
use proto::{Body, Wire, CODE_TIMEOUT};

const HOPS_SERIES: &str = "GLOBAL_STORAGEDISPATCHER_MESSAGE_HOPCOUNT_MEAN_COUNT_elements";
const RETRIEVE_SERIES: &str = "GLOBAL_STORAGEDISPATCHER_RETRIEVETIME_MEAN_COUNT_sec";
const STORE_SERIES: &str = "GLOBAL_STORAGEDISPATCHER_STORETIME_MEAN_COUNT_sec";

#[derive(Debug)]
enum Event {
    Deliver { from: Id, to: Id, wire: Wire },
    RpcExpire { rpc: u64 },
    NodeTimer { node: Id, tag: TimerTag },
    MaintenanceTick,
    MonitorTick,
    SampleTick,
}

struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

struct WaitSlot {
    origin: Id,
    target: Id,
}

pub struct RpcOutcome {
    pub target: Id,
    pub result: Result<Body, ClientError>,
}

pub struct Sim {
    pub cfg: SimConfig,
    pub provider: Arc<dyn CryptoProvider>,
    pub seed: u64,
    rng: ChaCha12Rng,
    /// Client-side randomness (nonces, per-entry uniques, group seeds).
    pub client_rng: ChaCha12Rng,
    pub now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<Scheduled>>,
    pub nodes: Vec<SimNode>,
    /// Live nodes only: id → slot in `nodes`.
    pub index: BTreeMap<Id, usize>,
    pub alive: Vec<bool>,
    next_rpc: u64,
    waiting: BTreeMap<u64, WaitSlot>,
    completions: BTreeMap<u64, RpcOutcome>,
    pub sent: u64,
    pub received: u64,
    pub dropped: u64,
    pub metrics: MetricLog,
    monitor_epoch: u64,
    /// Node id → public key (ids are hashes of the key, so this directory
    /// is verifiable, not trusted).
    pub directory: BTreeMap<Id, PublicKey>,
}

impl Sim {
    pub fn new(cfg: SimConfig, provider: Arc<dyn CryptoProvider>, seed: u64) -> Sim {
        let mut metrics = MetricLog::with_global_series();
        let window_s = cfg.monitor_ms as f64 / 1000.0;
        metrics.register_scaled(RETRIEVE_SERIES, 1000.0);
        metrics.register_scaled(STORE_SERIES, 1000.0);
        metrics.register_scaled("GLOBAL_NETWORK_PASTRY_DATA_READ_RATE_COUNT_kbytes_per_s", 1024.0 * window_s);
        metrics.register_scaled("NETWORK_PASTRY_DATA_READ_RATE_MAX_COUNT_kbytes_per_s", 1024.0 * window_s);
        metrics.register_scaled(
            "GLOBAL_STORAGEDISPATCHER_STORAGE_RETRIEVED_DDS_DATA_RATE_MAX_COUNT_bytes_per_sec",
            window_s,
        );
        metrics.register_scaled("GLOBAL_NETWORK_MESSAGES_RECEIVED_RATE_COUNT_messages_per_sec", window_s);
        metrics.register_scaled("GLOBAL_MESSAGEDISPATCHER_MESSAGES_RECEIVED_RATE_MAX_COUNT_messages_per_sec", window_s);
        let mut sim = Sim {
            provider,
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed ^ 0x6c61_7465_6e63_79), // "latency"
            client_rng: ChaCha12Rng::seed_from_u64(seed ^ 0x636c_6965_6e74), // "client"
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            nodes: Vec::new(),
            index: BTreeMap::new(),
            alive: Vec::new(),
            next_rpc: 0,
            waiting: BTreeMap::new(),
            completions: BTreeMap::new(),
            sent: 0,
            received: 0,
            dropped: 0,
            metrics,
            monitor_epoch: 0,
            directory: BTreeMap::new(),
            cfg,
        };
        sim.schedule(sim.cfg.maintenance_ms, Event::MaintenanceTick);
        sim.schedule(sim.cfg.monitor_ms, Event::MonitorTick);
        sim.schedule(sim.cfg.monitor_ms, Event::SampleTick);
        sim
    }

    // -----------------------------------------------------------------------
    // Topology
    // -----------------------------------------------------------------------

    /// Creates a node (deterministic identity from the sim seed and slot).
    /// The node is reachable but knows nobody until it joins.
    pub fn add_node(&mut self, weak: bool) -> Id {
        let slot = self.nodes.len();
        let mut seed = Vec::from(b"node".as_slice());
        seed.extend_from_slice(&self.seed.to_be_bytes());
        seed.extend_from_slice(&(slot as u64).to_be_bytes());
        let keys = self.provider.keypair_from_seed(&seed);
        let id = self.provider.key_id(&keys.public.material);
        let desc = if weak { NodeDescriptor::weak(id) } else { NodeDescriptor::strong(id) };
        self.directory.insert(id, keys.public.clone());
        let node = SimNode::new(desc, keys, self.provider.clone(), &self.cfg);
        self.index.insert(id, slot);
        self.nodes.push(node);
        self.alive.push(true);
        id
    }

    pub fn node(&self, id: &Id) -> &SimNode {
        &self.nodes[self.index[id]]
    }

    pub fn node_mut(&mut self, id: &Id) -> &mut SimNode {
        let idx = self.index[id];
        &mut self.nodes[idx]
    }

    pub fn live_ids(&self) -> Vec<Id> {
        self.index.keys().copied().collect()
    }

    pub fn live_strong_ids(&self) -> Vec<Id> {
        self.index.iter().filter(|(_, &i)| !self.nodes[i].desc.weak).map(|(id, _)| *id).collect()
    }

    /// Instant converged network: every node knows every other. Used by
    /// tests that specify a fully populated routing state.
    pub fn build_full(&mut self, strong: usize, weak: usize) -> Vec<Id> {
        let mut ids = Vec::new();
        for _ in 0..strong {
            ids.push(self.add_node(false));
        }
        for _ in 0..weak {
            ids.push(self.add_node(true));
        }
        let descs: Vec<NodeDescriptor> = ids.iter().map(|id| self.nodes[self.index[id]].desc).collect();
        for id in &ids {
            let node = &mut self.nodes[self.index[id]];
            for d in &descs {
                node.routing.observe(*d, 0);
            }
        }
        ids
    }

    /// Organic network: nodes join sequentially through the first node,
    /// `gap_ms` of simulated time apart.
    pub fn build_joined(&mut self, strong: usize, gap_ms: u64) -> Result<Vec<Id>, ClientError> {
        let mut ids = Vec::new();
        for i in 0..strong {
            let id = self.add_node(false);
            if i > 0 {
                self.join(id, ids[0])?;
            }
            ids.push(id);
            self.run_ms(gap_ms);
        }
        Ok(ids)
    }

    /// Join protocol: seed the routing table from a bootstrap contact, look
    /// up the own id, pull state from the nearest neighbors, announce.
    pub fn join(&mut self, newcomer: Id, bootstrap: Id) -> Result<(), ClientError> {
        let boot_desc = self.nodes[self.index[&bootstrap]].desc;
        {
            let idx = self.index[&newcomer];
            self.nodes[idx].routing.observe(boot_desc, self.now);
        }
        let _ = self.lookup_from(newcomer, newcomer)?;
        // Pull full state from the contacts now known (nearest first).
        let idx = self.index[&newcomer];
        let contacts: Vec<Id> = {
            let node = &self.nodes[idx];
            node.routing.closest_known(&newcomer, 4, false).iter().filter(|d| d.id != newcomer).map(|d| d.id).collect()
        };
        let rpcs: Vec<u64> = contacts.iter().map(|c| self.rpc(newcomer, *c, Body::StateReq)).collect();
        for outcome in self.await_all(&rpcs) {
            if let Ok(Body::StateReply { known }) = outcome.result {
                let node = &mut self.nodes[idx];
                for d in known {
                    node.routing.observe(d, self.now);
                }
            }
        }
        // Announce ourselves to everybody we learned about.
        let (desc, known) = {
            let node = &self.nodes[idx];
            (node.desc, node.routing.known())
        };
        let payload: Vec<NodeDescriptor> = {
            let node = &self.nodes[idx];
            let mut v = node.routing.leaf_members();
            v.push(desc);
            v
        };
        for contact in known {
            self.cast(newcomer, contact.id, Body::Exchange { from: desc, known: payload.clone() });
        }
        self.run_ms(2 * self.cfg.latency_max_ms);
        Ok(())
    }

    /// Abrupt failure: the node stops receiving; nobody is told.
    pub fn crash(&mut self, id: Id) {
        if let Some(idx) = self.index.remove(&id) {
            self.alive[idx] = false;
        }
    }

    /// Graceful departure: hand replicas off and announce the exit first.
    pub fn leave(&mut self, id: Id) {
        let Some(&idx) = self.index.get(&id) else { return };
        let msgs = self.nodes[idx].departure_messages();
        for (to, wire) in msgs {
            self.send(id, to, wire);
        }
        self.crash(id);
    }

    // -----------------------------------------------------------------------
    // Event plumbing
    // -----------------------------------------------------------------------

    fn schedule(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.heap.push(Reverse(Scheduled { time, seq: self.seq, event }));
    }

    fn send(&mut self, from: Id, to: Id, wire: Wire) {
        self.sent += 1;
        let latency = self.rng.random_range(self.cfg.latency_min_ms..=self.cfg.latency_max_ms);
        self.schedule(self.now + latency, Event::Deliver { from, to, wire });
    }

    /// Fire-and-forget message from a node.
    pub fn cast(&mut self, from: Id, to: Id, body: Body) {
        self.send(from, to, Wire { rpc: 0, body });
    }

    /// Driver rpc: send `body` from `origin`, return the correlation id.
    pub fn rpc(&mut self, origin: Id, to: Id, body: Body) -> u64 {
        self.next_rpc += 1;
        let rpc = self.next_rpc;
        self.waiting.insert(rpc, WaitSlot { origin, target: to });
        self.schedule(self.now + RPC_TIMEOUT_MS, Event::RpcExpire { rpc });
        self.send(origin, to, Wire { rpc, body });
        rpc
    }

    /// Pumps the event loop until the rpc completes (reply or timeout).
    pub fn await_rpc(&mut self, rpc: u64) -> RpcOutcome {
        loop {
            if let Some(outcome) = self.completions.remove(&rpc) {
                return outcome;
            }
            let Some(Reverse(next)) = self.heap.pop() else {
                return RpcOutcome { target: Id::ZERO, result: Err(ClientError::NoRoute) };
            };
            self.now = self.now.max(next.time);
            self.process(next.event);
        }
    }

    pub fn await_all(&mut self, rpcs: &[u64]) -> Vec<RpcOutcome> {
        rpcs.iter().map(|r| self.await_rpc(*r)).collect()
    }

    /// Advances simulated time, processing everything due.
    pub fn run_ms(&mut self, ms: u64) {
        let until = self.now + ms;
        while let Some(Reverse(head)) = self.heap.peek() {
            if head.time > until {
                break;
            }
            let Reverse(next) = self.heap.pop().expect("peeked");
            self.now = self.now.max(next.time);
            self.process(next.event);
        }
        self.now = until;
    }

    fn process(&mut self, event: Event) {
        match event {
            Event::Deliver { from, to, wire } => {
                let Some(&idx) = self.index.get(&to) else {
                    self.dropped += 1;
                    return;
                };
                self.received += 1;
                {
                    let node = &mut self.nodes[idx];
                    node.stats.msgs_received += 1;
                    node.stats.bytes_received += wire.wire_size();
                    node.stats.served_read_bytes += 0;
                }
                if wire.rpc != 0 && is_reply(&wire.body) {
                    if let Some(slot) = self.waiting.get(&wire.rpc) {
                        if slot.origin == to {
                            let slot = self.waiting.remove(&wire.rpc).expect("checked");
                            self.completions.insert(wire.rpc, RpcOutcome { target: slot.target, result: Ok(wire.body) });
                            return;
                        }
                    }
                }
                let now = self.now;
                let node = &mut self.nodes[idx];
                let outs = node.handle(now, &mut self.next_rpc, from, wire);
                let timers: Vec<(u64, TimerTag)> = node.timer_requests.drain(..).collect();
                for (at, tag) in timers {
                    self.schedule(at, Event::NodeTimer { node: to, tag });
                }
                for (dst, w) in outs {
                    self.send(to, dst, w);
                }
            }
            Event::RpcExpire { rpc } => {
                if let Some(slot) = self.waiting.remove(&rpc) {
                    self.completions.insert(rpc, RpcOutcome { target: slot.target, result: Err(ClientError::Timeout) });
                }
            }
            Event::NodeTimer { node, tag } => {
                let Some(&idx) = self.index.get(&node) else { return };
                let now = self.now;
                let outs = self.nodes[idx].on_timer(now, tag);
                for (dst, w) in outs {
                    self.send(node, dst, w);
                }
            }
            Event::MaintenanceTick => {
                let ids = self.live_ids();
                for id in ids {
                    let Some(&idx) = self.index.get(&id) else { continue };
                    let now = self.now;
                    let node = &mut self.nodes[idx];
                    let outs = node.maintenance(now, &mut self.next_rpc);
                    let timers: Vec<(u64, TimerTag)> = node.timer_requests.drain(..).collect();
                    for (at, tag) in timers {
                        self.schedule(at, Event::NodeTimer { node: id, tag });
                    }
                    for (dst, w) in outs {
                        self.send(id, dst, w);
                    }
                }
                let next = self.now + self.cfg.maintenance_ms;
                self.schedule(next, Event::MaintenanceTick);
            }
            Event::MonitorTick => {
                self.monitor_epoch += 1;
                let epoch = self.monitor_epoch;
                let ids = self.live_ids();
                for id in ids {
                    let Some(&idx) = self.index.get(&id) else { continue };
                    let now = self.now;
                    let outs = self.nodes[idx].monitor_tick(now, epoch);
                    for (dst, w) in outs {
                        self.send(id, dst, w);
                    }
                }
                let next = self.now + self.cfg.monitor_ms;
                self.schedule(next, Event::MonitorTick);
            }
            Event::SampleTick => {
                self.sample_metrics();
                let next = self.now + self.cfg.monitor_ms;
                self.schedule(next, Event::SampleTick);
            }
        }
    }

    // -----------------------------------------------------------------------
    // Metric sampling
    // -----------------------------------------------------------------------

    fn sample_metrics(&mut self) {
        let mut recv_rate: Vec<i64> = Vec::new();
        let mut recv_bytes: Vec<i64> = Vec::new();
        let mut served: Vec<i64> = Vec::new();
        let mut primaries: Vec<i64> = Vec::new();
        let mut replicas: Vec<i64> = Vec::new();
        let mut held: Vec<i64> = Vec::new();
        let ids = self.live_ids();
        for id in &ids {
            let idx = self.index[id];
            let node = &mut self.nodes[idx];
            recv_rate.push(node.stats.msgs_received as i64);
            recv_bytes.push(node.stats.bytes_received as i64);
            served.push(node.stats.served_read_bytes as i64);
            node.stats = Default::default();
            let mut prim = 0i64;
            let mut repl = 0i64;
            for fid in node.store.objects.keys() {
                if node.routing.claims(fid, true) {
                    prim += 1;
                } else {
                    repl += 1;
                }
            }
            primaries.push(prim);
            replicas.push(repl);
            held.push(prim + repl);
        }
        for v in &recv_bytes {
            self.metrics.observe("GLOBAL_NETWORK_PASTRY_DATA_READ_RATE_COUNT_kbytes_per_s", *v);
        }
        if let Some(m) = recv_bytes.iter().max() {
            self.metrics.observe("NETWORK_PASTRY_DATA_READ_RATE_MAX_COUNT_kbytes_per_s", *m);
        }
        for v in &recv_rate {
            self.metrics.observe("GLOBAL_NETWORK_MESSAGES_RECEIVED_RATE_COUNT_messages_per_sec", *v);
        }
        if let Some(m) = recv_rate.iter().max() {
            self.metrics.observe("GLOBAL_MESSAGEDISPATCHER_MESSAGES_RECEIVED_RATE_MAX_COUNT_messages_per_sec", *m);
        }
        if let Some(m) = served.iter().max() {
            self.metrics
                .observe("GLOBAL_STORAGEDISPATCHER_STORAGE_RETRIEVED_DDS_DATA_RATE_MAX_COUNT_bytes_per_sec", *m);
        }
        for v in &primaries {
            self.metrics.observe("GLOBAL_STORAGEDISPATCHER_NUM_STORED_LOCAL_OBJECTS_COUNT_elements", *v);
        }
        for v in &replicas {
            self.metrics.observe("GLOBAL_STORAGEDISPATCHER_NUM_STORED_REPLICATIONS_COUNT_elements", *v);
        }
        if let Some(m) = replicas.iter().max() {
            self.metrics.observe("GLOBAL_STORAGEDISPATCHER_NUM_STORED_REPLICATIONS_MAX_COUNT_elements", *m);
        }
        if let Some(m) = held.iter().max() {
            self.metrics.observe("GLOBAL_STORAGEDISPATCHER_NUMINSTORAGE_ELEMENTS_MAX_COUNT_units", *m);
        }
        self.metrics.flush(self.now);
    }

    /// Message conservation: everything sent was received, dropped at a dead
    /// node, or is still in flight.
    pub fn conservation_ok(&self) -> bool {
        let inflight =
            self.heap.iter().filter(|Reverse(s)| matches!(s.event, Event::Deliver { .. })).count() as u64;
        self.sent == self.received + self.dropped + inflight
    }

    // -----------------------------------------------------------------------
    // Iterative lookup
    // -----------------------------------------------------------------------

    /// Key-based routing from `origin`: returns the most responsible strong
    /// node plus the hop count (query waves until its claim was confirmed;
    /// 0 when the origin itself is responsible).
    pub fn lookup_from(&mut self, origin: Id, key: Id) -> Result<(Id, u32), ClientError> {
        let oidx = *self.index.get(&origin).ok_or(ClientError::NoRoute)?;
        let me = self.nodes[oidx].desc;
        let mut shortlist: Vec<NodeDescriptor> = self.nodes[oidx].routing.closest_known(&key, FIND_CANDIDATES, false);
        if !shortlist.iter().any(|d| d.id == me.id) {
            shortlist.push(me);
        }
        let mut queried: BTreeSet<Id> = BTreeSet::new();
        let mut dead: BTreeSet<Id> = BTreeSet::new();
        let mut claims: BTreeMap<Id, bool> = BTreeMap::new();
        let mut hop_of: BTreeMap<Id, u32> = BTreeMap::new();
        queried.insert(me.id);
        hop_of.insert(me.id, 0);
        if !me.weak {
            claims.insert(me.id, self.nodes[oidx].routing.claims(&key, true));
        }
        let mut hops = 0u32;
        for _round in 0..64 {
            shortlist.sort_by(|a, b| cmp_responsibility(&key, &b.id, &a.id));
            shortlist.dedup_by_key(|d| d.id);
            let best = shortlist.iter().find(|d| !d.weak && !dead.contains(&d.id));
            if let Some(best) = best {
                if claims.get(&best.id).copied().unwrap_or(false) {
                    return Ok((best.id, hop_of.get(&best.id).copied().unwrap_or(hops)));
                }
            }
            let wave: Vec<NodeDescriptor> = shortlist
                .iter()
                .filter(|d| !d.weak && !dead.contains(&d.id) && !queried.contains(&d.id))
                .take(self.cfg.alpha)
                .copied()
                .collect();
            if wave.is_empty() {
                // Every reachable candidate answered without claiming: the
                // best answer available is the most responsible live one.
                return match shortlist.iter().find(|d| !d.weak && !dead.contains(&d.id)) {
                    Some(d) => Ok((d.id, hop_of.get(&d.id).copied().unwrap_or(hops))),
                    None => Err(ClientError::NoRoute),
                };
            }
            hops += 1;
            let rpcs: Vec<u64> = wave
                .iter()
                .map(|d| {
                    queried.insert(d.id);
                    hop_of.insert(d.id, hops);
                    self.rpc(origin, d.id, Body::FindNode { target: key, from_desc: me })
                })
                .collect();
            for (d, outcome) in wave.iter().zip(self.await_all(&rpcs)) {
                match outcome.result {
                    Ok(Body::FindNodeReply { claim, candidates }) => {
                        claims.insert(d.id, claim);
                        let node = &mut self.nodes[oidx];
                        for c in candidates {
                            node.routing.observe(c, self.now);
                            if !shortlist.iter().any(|s| s.id == c.id) {
                                shortlist.push(c);
                            }
                        }
                    }
                    _ => {
                        dead.insert(d.id);
                        self.nodes[oidx].routing.mark_failed(&d.id);
                    }
                }
            }
        }
        Err(ClientError::NoRoute)
    }

    // -----------------------------------------------------------------------
    // Distributed storage operations
    // -----------------------------------------------------------------------

    fn op_insert(&mut self, origin: Id, obj: StoredObject) -> Result<InsertReport, ClientError> {
        let t0 = self.now;
        let file_id = obj.file_id;
        let mut last = ClientError::Timeout;
        for _attempt in 0..2 {
            let (coord, hops) = self.lookup_from(origin, file_id)?;
            let rpc = self.rpc(origin, coord, Body::Store { obj: clone_object(&obj) });
            match self.await_rpc(rpc).result {
                Ok(Body::StoreReply { result: Ok(receipts) }) => {
                    self.metrics.observe(HOPS_SERIES, hops as i64);
                    self.metrics.observe(STORE_SERIES, (self.now - t0) as i64);
                    return Ok(InsertReport { file_id, salt: 0, receipts });
                }
                Ok(Body::StoreReply { result: Err(code) }) => return Err(code_err(code)),
                Ok(_) => return Err(ClientError::Failed("unexpected reply".into())),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn op_fetch(&mut self, origin: Id, id: &Id) -> Result<StoredObject, ClientError> {
        let t0 = self.now;
        // Serve from a local replica or a fresh cached copy when possible.
        {
            let oidx = self.index[&origin];
            let now = self.now;
            let node = &mut self.nodes[oidx];
            if let Some(obj) = node.store.objects.get(id) {
                if obj.deleted {
                    return Err(StorageError::Deleted.into());
                }
                return Ok(obj.clone());
            }
            if let Some(obj) = node.store.cache_get(id, now) {
                return Ok(obj.clone());
            }
        }
        let (coord, hops) = self.lookup_from(origin, *id)?;
        let outcome = self.rpc_and_await(origin, coord, Body::Get { id: *id, direct: false })?;
        let obj = match outcome {
            Body::GetReply { result: Ok(bytes), .. } => decode_fetched(&bytes, id, &*self.provider)?,
            Body::GetReply { result: Err(code), redirect } if code == CODE_REDIRECT => {
                let receiver = redirect.ok_or(ClientError::Failed("redirect without target".into()))?;
                match self.rpc_and_await(origin, receiver, Body::Get { id: *id, direct: true }) {
                    Ok(Body::GetReply { result: Ok(bytes), .. }) => decode_fetched(&bytes, id, &*self.provider)?,
                    _ => {
                        // Receiver cache expired or died: back to the source.
                        match self.rpc_and_await(origin, coord, Body::Get { id: *id, direct: true })? {
                            Body::GetReply { result: Ok(bytes), .. } => decode_fetched(&bytes, id, &*self.provider)?,
                            Body::GetReply { result: Err(code), .. } => return Err(code_err(code)),
                            _ => return Err(ClientError::Failed("unexpected reply".into())),
                        }
                    }
                }
            }
            Body::GetReply { result: Err(code), .. } => return Err(code_err(code)),
            _ => return Err(ClientError::Failed("unexpected reply".into())),
        };
        {
            let oidx = self.index[&origin];
            let now = self.now;
            self.nodes[oidx].store.cache_put(obj.clone(), now);
        }
        self.metrics.observe(HOPS_SERIES, hops as i64);
        self.metrics.observe(RETRIEVE_SERIES, (self.now - t0) as i64);
        Ok(obj)
    }

    fn rpc_and_await(&mut self, origin: Id, to: Id, body: Body) -> Result<Body, ClientError> {
        let rpc = self.rpc(origin, to, body);
        let outcome = self.await_rpc(rpc);
        if outcome.result.is_err() {
            if let Some(&oidx) = self.index.get(&origin) {
                self.nodes[oidx].routing.mark_failed(&outcome.target);
            }
        }
        outcome.result
    }

    fn op_append(&mut self, origin: Id, id: &Id, rec: AppendRec) -> Result<u64, ClientError> {
        let mut last = ClientError::Timeout;
        for _attempt in 0..2 {
            let (coord, _hops) = self.lookup_from(origin, *id)?;
            match self.rpc_and_await(origin, coord, Body::Append { id: *id, rec: rec.clone() }) {
                Ok(Body::AppendReply { result: Ok(seq) }) => return Ok(seq),
                Ok(Body::AppendReply { result: Err(code) }) => return Err(code_err(code)),
                Ok(_) => return Err(ClientError::Failed("unexpected reply".into())),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    #[allow(clippy::too_many_arguments)]
    fn op_replace(
        &mut self,
        origin: Id,
        id: &Id,
        author: Id,
        author_pk: &PublicKey,
        new_version: u64,
        new_policy: Option<WritePolicy>,
        new_base: Bytes,
        new_cleared: u64,
        sig: Bytes,
    ) -> Result<(), ClientError> {
        let mut last = ClientError::Timeout;
        for _attempt in 0..2 {
            let (coord, _hops) = self.lookup_from(origin, *id)?;
            let body = Body::Replace {
                id: *id,
                author,
                author_pk: author_pk.clone(),
                new_version,
                new_policy: new_policy.clone(),
                new_base: new_base.clone(),
                new_cleared,
                sig: sig.clone(),
            };
            match self.rpc_and_await(origin, coord, body) {
                Ok(Body::ReplaceReply { result: Ok(()) }) => {
                    self.invalidate_client_cache(origin, id);
                    return Ok(());
                }
                Ok(Body::ReplaceReply { result: Err(code) }) => return Err(code_err(code)),
                Ok(_) => return Err(ClientError::Failed("unexpected reply".into())),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn op_delete(&mut self, origin: Id, id: &Id, author: Id, new_version: u64, sig: Bytes) -> Result<(), ClientError> {
        let mut last = ClientError::Timeout;
        for _attempt in 0..2 {
            let (coord, _hops) = self.lookup_from(origin, *id)?;
            let body = Body::Delete { id: *id, author, new_version, sig: sig.clone() };
            match self.rpc_and_await(origin, coord, body) {
                Ok(Body::DeleteReply { result: Ok(()) }) => {
                    self.invalidate_client_cache(origin, id);
                    return Ok(());
                }
                Ok(Body::DeleteReply { result: Err(code) }) => return Err(code_err(code)),
                Ok(_) => return Err(ClientError::Failed("unexpected reply".into())),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn invalidate_client_cache(&mut self, origin: Id, id: &Id) {
        if let Some(&oidx) = self.index.get(&origin) {
            self.nodes[oidx].store.cache_invalidate(id);
        }
    }

    // -----------------------------------------------------------------------
    // Messaging operations
    // -----------------------------------------------------------------------

    pub fn op_subscribe(&mut self, origin: Id, topic: &Id) -> Result<(), ClientError> {
        let (rendezvous, _) = self.lookup_from(origin, *topic)?;
        match self.rpc_and_await(origin, rendezvous, Body::TopicSub { topic: *topic, node: origin })? {
            Body::TopicSubAck => {
                let oidx = self.index[&origin];
                self.nodes[oidx].my_topics.insert(*topic, rendezvous);
                Ok(())
            }
            _ => Err(ClientError::Failed("unexpected reply".into())),
        }
    }

    pub fn op_unsubscribe(&mut self, origin: Id, topic: &Id) -> Result<(), ClientError> {
        let oidx = self.index[&origin];
        let rendezvous = self.nodes[oidx].my_topics.remove(topic);
        let target = match rendezvous {
            Some(r) => r,
            None => self.lookup_from(origin, *topic)?.0,
        };
        self.cast(origin, target, Body::TopicUnsub { topic: *topic, node: origin });
        Ok(())
    }

    pub fn op_publish(&mut self, origin: Id, topic: &Id, env: Envelope) -> Result<u32, ClientError> {
        let (rendezvous, _) = self.lookup_from(origin, *topic)?;
        match self.rpc_and_await(origin, rendezvous, Body::TopicPub { topic: *topic, env })? {
            Body::TopicPubReply { fanout } => Ok(fanout),
            _ => Err(ClientError::Failed("unexpected reply".into())),
        }
    }

    pub fn op_send_direct(&mut self, origin: Id, to: &Id, env: Envelope) -> Result<(), ClientError> {
        if !self.index.contains_key(to) {
            return Err(ClientError::NoRoute);
        }
        self.cast(origin, *to, Body::Deliver { env });
        self.run_ms(2 * self.cfg.latency_max_ms);
        Ok(())
    }

    /// Client handle bound to one origin node.
    pub fn client(&mut self, origin: Id) -> SimClient<'_> {
        SimClient { sim: self, origin }
    }
}

fn is_reply(body: &Body) -> bool {
    matches!(
        body,
        Body::FindNodeReply { .. }
            | Body::Pong { .. }
            | Body::StateReply { .. }
            | Body::StoreReply { .. }
            | Body::GetReply { .. }
            | Body::AppendReply { .. }
            | Body::ReplaceReply { .. }
            | Body::DeleteReply { .. }
            | Body::ReplicaAck { .. }
            | Body::TopicSubAck
            | Body::TopicPubReply { .. }
    )
}

fn code_err(code: u8) -> ClientError {
    if code == CODE_TIMEOUT {
        ClientError::Timeout
    } else {
        ClientError::Storage(StorageError::from_code(code))
    }
}

fn clone_object(obj: &StoredObject) -> StoredObject {
    obj.clone()
}

fn decode_fetched(bytes: &[u8], id: &Id, provider: &dyn CryptoProvider) -> Result<StoredObject, ClientError> {
    let obj = StoredObject::decode(bytes).map_err(ClientError::Storage)?;
    if obj.file_id != *id {
        return Err(ClientError::Failed("replica served wrong object".into()));
    }
    obj.validate(provider).map_err(ClientError::Storage)?;
    if obj.deleted {
        return Err(StorageError::Deleted.into());
    }
    Ok(obj)
}

/// Storage/messaging client running full distributed operations on the
/// simulated network from one origin node.
pub struct SimClient<'a> {
    pub sim: &'a mut Sim,
    pub origin: Id,
}

impl StorageClient for SimClient<'_> {
    fn provider(&self) -> Arc<dyn CryptoProvider> {
        self.sim.provider.clone()
    }

    fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.sim.client_rng
    }

    fn insert(&mut self, obj: StoredObject) -> Result<InsertReport, ClientError> {
        self.sim.op_insert(self.origin, obj)
    }

    fn fetch(&mut self, file_id: &Id) -> Result<StoredObject, ClientError> {
        self.sim.op_fetch(self.origin, file_id)
    }

    fn replace(
        &mut self,
        file_id: &Id,
        author: Id,
        author_pk: &PublicKey,
        new_version: u64,
        new_policy: Option<WritePolicy>,
        new_base: Bytes,
        new_cleared: u64,
        sig: Bytes,
    ) -> Result<(), ClientError> {
        self.sim.op_replace(self.origin, file_id, author, author_pk, new_version, new_policy, new_base, new_cleared, sig)
    }

    fn append(&mut self, file_id: &Id, rec: AppendRec) -> Result<u64, ClientError> {
        self.sim.op_append(self.origin, file_id, rec)
    }

    fn delete(&mut self, file_id: &Id, author: Id, new_version: u64, sig: Bytes) -> Result<(), ClientError> {
        self.sim.op_delete(self.origin, file_id, author, new_version, sig)
    }
}

impl Messenger for SimClient<'_> {
    fn subscribe(&mut self, topic: &Id) -> Result<(), ClientError> {
        self.sim.op_subscribe(self.origin, topic)
    }

    fn unsubscribe(&mut self, topic: &Id) -> Result<(), ClientError> {
        self.sim.op_unsubscribe(self.origin, topic)
    }

    fn publish(&mut self, topic: &Id, env: Envelope) -> Result<u32, ClientError> {
        self.sim.op_publish(self.origin, topic, env)
    }

    fn send_direct(&mut self, to: &Id, env: Envelope) -> Result<(), ClientError> {
        self.sim.op_send_direct(self.origin, to, env)
    }

    fn drain_mailbox(&mut self) -> Vec<Envelope> {
        let oidx = self.sim.index[&self.origin];
        self.sim.nodes[oidx].mailbox.drain(..).collect()
    }
}

/// Global-knowledge responsibility oracle (tests and invariant sweeps).
pub fn global_responsible(sim: &Sim, key: &Id) -> Option<Id> {
    let strong = sim.live_strong_ids();
    most_responsible(key, strong.iter())
}
