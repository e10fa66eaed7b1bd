//! Per-node behavior: a pure message handler plus periodic maintenance and
//! monitoring duties. Nodes never touch the event loop directly — they
//! return outgoing messages and request timers, and the simulator schedules
//! both.

use std::collections::BTreeMap;
use std::sync::Arc;


use crate::channels::{DedupWindow, Envelope, TopicState, SUBSCRIPTION_TTL_MS};
use crate::crypto::{CryptoProvider, KeyPair};
use crate::id::Id;
use crate::monitoring::{aggregate, parent_of, GlobalView, MetricStat, MonitorState, NodeReport};
use crate::overlay::{NodeDescriptor, OverlayConfig, RoutingState};
use crate::storage::{
    NodeStore, StorageError, StoreReceipt, StoredObject, BALANCE_THRESHOLD_PER_S, DEFAULT_QUOTA_BYTES,
};

use super::config::SimConfig;
use super::proto::{Body, RemoteResult, Wire, CODE_TIMEOUT};

/// Driver-side rpc timeout; node-side timeouts are shorter so coordinators
/// settle before their client gives up.
pub const RPC_TIMEOUT_MS: u64 = 2_000;
pub const PING_TIMEOUT_MS: u64 = 1_500;
pub const ACK_TIMEOUT_MS: u64 = 1_000;
/// Candidates returned per lookup probe.
pub const FIND_CANDIDATES: usize = 8;
/// Marker result code: "follow the redirect field".
pub const CODE_REDIRECT: u8 = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerTag {
    PingExpire { rpc: u64 },
    OpExpire { op: u64 },
}

#[derive(Debug, Clone, Copy)]
enum ReplyKind {
    Insert,
    Append(u64),
    Replace,
    Delete,
    /// Internal handoff: drop the local copy once somebody else confirmed.
    Handoff(Id),
}

#[derive(Debug)]
struct PendingOp {
    reply_to: Id,
    client_rpc: u64,
    kind: ReplyKind,
    acks: Vec<StoreReceipt>,
    /// Sub-rpcs still outstanding.
    outstanding: usize,
    /// Reply success as soon as this many acks arrived.
    want: usize,
    /// On expiry, succeed with partial acks iff at least this many arrived.
    majority: usize,
}

/// Window counters the simulator samples and resets on each metric tick.
#[derive(Debug, Default, Clone, Copy)]
pub struct NodeStats {
    pub msgs_received: u64,
    pub bytes_received: u64,
    pub served_read_bytes: u64,
}

pub struct SimNode {
    pub desc: NodeDescriptor,
    pub keys: KeyPair,
    pub provider: Arc<dyn CryptoProvider>,
    pub k: usize,
    pub routing: RoutingState,
    pub store: NodeStore,
    pub topics: BTreeMap<Id, TopicState>,
    /// Topics this node subscribes to → rendezvous node the subscription
    /// lives on (refreshed every maintenance round, TTL-expired otherwise).
    pub my_topics: BTreeMap<Id, Id>,
    pub dedup: DedupWindow,
    pub mailbox: Vec<Envelope>,
    pub monitor: MonitorState,
    /// Injected gauges reported up the monitoring tree each tick.
    pub sensors: BTreeMap<String, i64>,
    pub last_report: Option<NodeReport>,
    /// Set when this node resolves itself as the monitoring root.
    pub global_view: Option<GlobalView>,
    pub stats: NodeStats,
    pending_pings: BTreeMap<u64, Id>,
    ops: BTreeMap<u64, PendingOp>,
    sub_to_op: BTreeMap<u64, u64>,
    next_op: u64,
    /// Timers requested during the last handler call; drained by the sim.
    pub timer_requests: Vec<(u64, TimerTag)>,
    /// Deterministic gossip cursor.
    gossip_rr: usize,
}

fn alloc(rpcs: &mut u64) -> u64 {
    *rpcs += 1;
    *rpcs
}

impl SimNode {
    pub fn new(desc: NodeDescriptor, keys: KeyPair, provider: Arc<dyn CryptoProvider>, cfg: &SimConfig) -> SimNode {
        let overlay = OverlayConfig { leaf_side: cfg.leaf_size, bucket_cap: cfg.bucket_cap };
        SimNode {
            desc,
            keys,
            provider,
            k: cfg.k,
            routing: RoutingState::new(desc, overlay),
            store: NodeStore::new(DEFAULT_QUOTA_BYTES, cfg.ttl_ms, BALANCE_THRESHOLD_PER_S),
            topics: BTreeMap::new(),
            my_topics: BTreeMap::new(),
            dedup: DedupWindow::new(4096),
            mailbox: Vec::new(),
            monitor: MonitorState::default(),
            sensors: BTreeMap::new(),
            last_report: None,
            global_view: None,
            stats: NodeStats::default(),
            pending_pings: BTreeMap::new(),
            ops: BTreeMap::new(),
            sub_to_op: BTreeMap::new(),
            next_op: 0,
            timer_requests: Vec::new(),
            gossip_rr: 0,
        }
    }

    pub fn id(&self) -> Id {
        self.desc.id
    }

    /// Most responsible *strong* node for `key` in this node's view
    /// (placement and monitoring both route through here).
    pub fn resp_strong(&self, key: &Id) -> Id {
        self.routing.closest_known(key, 1, true).first().map(|d| d.id).unwrap_or(self.desc.id)
    }

    fn replica_set(&self, file_id: &Id) -> Vec<NodeDescriptor> {
        self.routing.closest_known(file_id, self.k, true)
    }

    fn receipt_for(&self, obj: &StoredObject) -> StoreReceipt {
        StoreReceipt::sign(
            &*self.provider,
            &self.keys.secret,
            obj.file_id,
            obj.version,
            self.desc.id,
            obj.content_hash(),
        )
    }

    // -----------------------------------------------------------------------
    // Message handling
    // -----------------------------------------------------------------------

    pub fn handle(&mut self, now: u64, rpcs: &mut u64, from: Id, wire: Wire) -> Vec<(Id, Wire)> {
        let rpc = wire.rpc;
        match wire.body {
            Body::FindNode { target, from_desc } => {
                self.routing.observe(from_desc, now);
                let candidates = self.routing.closest_known(&target, FIND_CANDIDATES, false);
                let claim = self.routing.claims(&target, true);
                vec![(from, Wire { rpc, body: Body::FindNodeReply { claim, candidates } })]
            }
            Body::Ping => {
                vec![(from, Wire { rpc, body: Body::Pong { desc: self.desc } })]
            }
            Body::Pong { desc } => {
                self.pending_pings.remove(&rpc);
                self.routing.observe(desc, now);
                Vec::new()
            }
            Body::StateReq => {
                let mut known = self.routing.known();
                known.push(self.desc);
                vec![(from, Wire { rpc, body: Body::StateReply { known } })]
            }
            Body::Exchange { from: d, known } => {
                self.routing.observe(d, now);
                for n in known {
                    self.routing.observe(n, now);
                }
                Vec::new()
            }
            Body::Leaving { from: gone } => {
                self.routing.remove(&gone);
                for ts in self.topics.values_mut() {
                    ts.unsubscribe(&gone);
                }
                self.monitor.remove(&gone);
                Vec::new()
            }
            Body::Store { obj } => self.on_store(now, rpcs, from, rpc, obj),
            Body::ReplicaPut { obj } => self.on_replica_put(from, rpc, obj),
            Body::ReplicaAck { result } => self.on_replica_ack(rpc, result),
            Body::Get { id, direct } => self.on_get(now, from, rpc, id, direct),
            Body::Append { id, rec } => {
                let outcome: Result<u64, StorageError> = (|| {
                    let obj = self.store.objects.get_mut(&id).ok_or(StorageError::NotFound)?;
                    let before = obj.approx_size();
                    let seq = obj.apply_append(&*self.provider, rec)?;
                    self.store.reaccount(&id, before);
                    Ok(seq)
                })();
                match outcome {
                    Ok(seq) => self.replicate_update(now, rpcs, from, rpc, id, ReplyKind::Append(seq)),
                    Err(e) => {
                        vec![(from, Wire { rpc, body: Body::AppendReply { result: Err(e.code()) } })]
                    }
                }
            }
            Body::Replace { id, author, author_pk, new_version, new_policy, new_base, new_cleared, sig } => {
                let outcome: Result<(), StorageError> = (|| {
                    let obj = self.store.objects.get_mut(&id).ok_or(StorageError::NotFound)?;
                    let before = obj.approx_size();
                    obj.apply_replace(
                        &*self.provider,
                        author,
                        &author_pk,
                        new_version,
                        new_policy,
                        new_base,
                        new_cleared,
                        &sig,
                    )?;
                    self.store.reaccount(&id, before);
                    Ok(())
                })();
                match outcome {
                    Ok(()) => self.replicate_update(now, rpcs, from, rpc, id, ReplyKind::Replace),
                    Err(e) => {
                        vec![(from, Wire { rpc, body: Body::ReplaceReply { result: Err(e.code()) } })]
                    }
                }
            }
            Body::Delete { id, author, new_version, sig } => {
                let outcome: Result<(), StorageError> = (|| {
                    let obj = self.store.objects.get_mut(&id).ok_or(StorageError::NotFound)?;
                    if new_version != obj.version + 1 {
                        return Err(StorageError::VersionConflict);
                    }
                    let before = obj.approx_size();
                    obj.apply_delete(&*self.provider, author, &sig)?;
                    self.store.reaccount(&id, before);
                    Ok(())
                })();
                match outcome {
                    Ok(()) => self.replicate_update(now, rpcs, from, rpc, id, ReplyKind::Delete),
                    Err(e) => {
                        vec![(from, Wire { rpc, body: Body::DeleteReply { result: Err(e.code()) } })]
                    }
                }
            }
            Body::Deliver { env } => {
                if env.verify(&*self.provider) && self.dedup.observe(env.id()) {
                    self.mailbox.push(env);
                }
                Vec::new()
            }
            Body::TopicSub { topic, node } => {
                self.topics.entry(topic).or_default().subscribe(node, now, SUBSCRIPTION_TTL_MS);
                if rpc != 0 {
                    vec![(from, Wire { rpc, body: Body::TopicSubAck })]
                } else {
                    Vec::new()
                }
            }
            Body::TopicUnsub { topic, node } => {
                if let Some(ts) = self.topics.get_mut(&topic) {
                    ts.unsubscribe(&node);
                }
                Vec::new()
            }
            Body::TopicPub { topic, env } => {
                let mut out = Vec::new();
                let mut fanout = 0u32;
                if env.verify(&*self.provider) && self.dedup.observe(env.id()) {
                    if let Some(ts) = self.topics.get_mut(&topic) {
                        ts.expire(now);
                        for sub in ts.live(now) {
                            out.push((sub, Wire { rpc: 0, body: Body::Deliver { env: env.clone() } }));
                            fanout += 1;
                        }
                    }
                }
                if rpc != 0 {
                    out.push((from, Wire { rpc, body: Body::TopicPubReply { fanout } }));
                }
                out
            }
            Body::Report { report } => {
                self.monitor.accept(report);
                Vec::new()
            }
            // Replies are matched by the driver or by the pending tables
            // above; anything else arriving here is stale.
            Body::FindNodeReply { .. }
            | Body::StateReply { .. }
            | Body::StoreReply { .. }
            | Body::GetReply { .. }
            | Body::AppendReply { .. }
            | Body::ReplaceReply { .. }
            | Body::DeleteReply { .. }
            | Body::TopicSubAck
            | Body::TopicPubReply { .. } => Vec::new(),
        }
    }

    fn on_store(&mut self, now: u64, rpcs: &mut u64, from: Id, rpc: u64, obj: StoredObject) -> Vec<(Id, Wire)> {
        let outcome: Result<(), StorageError> = (|| {
            obj.validate(&*self.provider)?;
            if obj.version != 1 || !obj.appends.is_empty() {
                return Err(StorageError::VersionConflict);
            }
            if self.store.objects.contains_key(&obj.file_id) {
                return Err(StorageError::VersionConflict);
            }
            self.store.put(obj.clone())?;
            Ok(())
        })();
        if let Err(e) = outcome {
            return vec![(from, Wire { rpc, body: Body::StoreReply { result: Err(e.code()) } })];
        }
        let self_receipt = self.receipt_for(&obj);
        let others: Vec<Id> = self
            .replica_set(&obj.file_id)
            .into_iter()
            .filter(|d| d.id != self.desc.id)
            .take(self.k.saturating_sub(1))
            .map(|d| d.id)
            .collect();
        if others.is_empty() {
            return vec![(from, Wire { rpc, body: Body::StoreReply { result: Ok(vec![self_receipt]) } })];
        }
        let mut out = Vec::new();
        let op = self.begin_op(
            now,
            PendingOp {
                reply_to: from,
                client_rpc: rpc,
                kind: ReplyKind::Insert,
                acks: vec![self_receipt],
                outstanding: others.len(),
                want: 1 + others.len(),
                majority: self.k.div_ceil(2),
            },
        );
        for target in others {
            let sub = alloc(rpcs);
            self.sub_to_op.insert(sub, op);
            out.push((target, Wire { rpc: sub, body: Body::ReplicaPut { obj: obj.clone() } }));
        }
        out
    }

    /// Applies an already-validated local update, then pushes the new state
    /// to the other replicas and replies once a majority holds it.
    fn replicate_update(
        &mut self,
        now: u64,
        rpcs: &mut u64,
        from: Id,
        rpc: u64,
        id: Id,
        kind: ReplyKind,
    ) -> Vec<(Id, Wire)> {
        self.store.clear_receivers(&id);
        self.store.cache_invalidate(&id);
        let obj = self.store.objects.get(&id).expect("updated in place").clone();
        let self_receipt = self.receipt_for(&obj);
        let others: Vec<Id> = self
            .replica_set(&id)
            .into_iter()
            .filter(|d| d.id != self.desc.id)
            .take(self.k.saturating_sub(1))
            .map(|d| d.id)
            .collect();
        let majority = self.k.div_ceil(2);
        if others.is_empty() || majority <= 1 {
            let mut out: Vec<(Id, Wire)> = others
                .iter()
                .map(|t| (*t, Wire { rpc: 0, body: Body::ReplicaPut { obj: obj.clone() } }))
                .collect();
            out.push((from, Wire { rpc, body: reply_body(kind, Ok(())) }));
            return out;
        }
        let mut out = Vec::new();
        let op = self.begin_op(
            now,
            PendingOp {
                reply_to: from,
                client_rpc: rpc,
                kind,
                acks: vec![self_receipt],
                outstanding: others.len(),
                want: majority,
                majority,
            },
        );
        for target in others {
            let sub = alloc(rpcs);
            self.sub_to_op.insert(sub, op);
            out.push((target, Wire { rpc: sub, body: Body::ReplicaPut { obj: obj.clone() } }));
        }
        out
    }

    fn on_replica_put(&mut self, from: Id, rpc: u64, obj: StoredObject) -> Vec<(Id, Wire)> {
        let _ = from;
        let outcome: Result<StoreReceipt, StorageError> = (|| {
            obj.validate(&*self.provider)?;
            let merged = match self.store.objects.get(&obj.file_id) {
                Some(existing) => StoredObject::merge(existing, &obj),
                None => obj,
            };
            self.store.cache_invalidate(&merged.file_id);
            self.store.clear_receivers(&merged.file_id);
            self.store.put(merged.clone())?;
            Ok(self.receipt_for(&merged))
        })();
        if rpc == 0 {
            return Vec::new();
        }
        let result = outcome.map_err(|e: StorageError| e.code());
        vec![(from, Wire { rpc, body: Body::ReplicaAck { result } })]
    }

    fn on_replica_ack(&mut self, rpc: u64, result: RemoteResult<StoreReceipt>) -> Vec<(Id, Wire)> {
        let Some(op_id) = self.sub_to_op.remove(&rpc) else { return Vec::new() };
        let Some(op) = self.ops.get_mut(&op_id) else { return Vec::new() };
        op.outstanding = op.outstanding.saturating_sub(1);
        if let Ok(receipt) = result {
            op.acks.push(receipt);
        }
        let done = op.acks.len() >= op.want || op.outstanding == 0;
        if !done {
            return Vec::new();
        }
        let op = self.ops.remove(&op_id).expect("present");
        self.finish_op(op)
    }

    fn begin_op(&mut self, now: u64, op: PendingOp) -> u64 {
        self.next_op += 1;
        let id = self.next_op;
        self.ops.insert(id, op);
        self.timer_requests.push((now + ACK_TIMEOUT_MS, TimerTag::OpExpire { op: id }));
        id
    }

    fn finish_op(&mut self, op: PendingOp) -> Vec<(Id, Wire)> {
        let ok = op.acks.len() >= op.majority.min(op.want);
        match op.kind {
            ReplyKind::Handoff(file_id) => {
                // Somebody else confirmed a copy; drop ours if we are still
                // outside the replica set.
                if ok && !self.replica_set(&file_id).iter().any(|d| d.id == self.desc.id) {
                    self.store.remove(&file_id);
                }
                Vec::new()
            }
            ReplyKind::Insert => {
                let result = if ok { Ok(op.acks) } else { Err(CODE_TIMEOUT) };
                vec![(op.reply_to, Wire { rpc: op.client_rpc, body: Body::StoreReply { result } })]
            }
            kind => {
                let result = if ok { Ok(()) } else { Err(CODE_TIMEOUT) };
                vec![(op.reply_to, Wire { rpc: op.client_rpc, body: reply_body(kind, result) })]
            }
        }
    }

    fn on_get(&mut self, now: u64, from: Id, rpc: u64, id: Id, direct: bool) -> Vec<(Id, Wire)> {
        if let Some(obj) = self.store.objects.get(&id) {
            if obj.deleted {
                let body = Body::GetReply { result: Err(StorageError::Deleted.code()), redirect: None };
                return vec![(from, Wire { rpc, body })];
            }
            if !direct {
                if let Some(receiver) = self.store.record_request(&id, now) {
                    if receiver != from {
                        let body = Body::GetReply { result: Err(CODE_REDIRECT), redirect: Some(receiver) };
                        return vec![(from, Wire { rpc, body })];
                    }
                }
            }
            let bytes = self.store.objects.get(&id).expect("checked").encode();
            self.stats.served_read_bytes += bytes.len() as u64;
            self.store.add_receiver(&id, from);
            let body = Body::GetReply { result: Ok(bytes), redirect: None };
            return vec![(from, Wire { rpc, body })];
        }
        if let Some(obj) = self.store.cache_get(&id, now) {
            let bytes = obj.encode();
            self.stats.served_read_bytes += bytes.len() as u64;
            let body = Body::GetReply { result: Ok(bytes), redirect: None };
            return vec![(from, Wire { rpc, body })];
        }
        vec![(from, Wire { rpc, body: Body::GetReply { result: Err(StorageError::NotFound.code()), redirect: None } })]
    }

    // -----------------------------------------------------------------------
    // Timers
    // -----------------------------------------------------------------------

    pub fn on_timer(&mut self, _now: u64, tag: TimerTag) -> Vec<(Id, Wire)> {
        match tag {
            TimerTag::PingExpire { rpc } => {
                if let Some(target) = self.pending_pings.remove(&rpc) {
                    self.routing.mark_failed(&target);
                }
                Vec::new()
            }
            TimerTag::OpExpire { op } => match self.ops.remove(&op) {
                Some(pending) => self.finish_op(pending),
                None => Vec::new(),
            },
        }
    }

    // -----------------------------------------------------------------------
    // Periodic duties
    // -----------------------------------------------------------------------

    /// One maintenance round: liveness pings, ring gossip, replica-set
    /// repair and handoff, topic refresh and expiry.
    pub fn maintenance(&mut self, now: u64, rpcs: &mut u64) -> Vec<(Id, Wire)> {
        let mut out = Vec::new();

        // Liveness: ping every known contact; unanswered pings mark the
        // contact failed, which bumps the view epoch and triggers repair.
        for contact in self.routing.known() {
            let rpc = alloc(rpcs);
            self.pending_pings.insert(rpc, contact.id);
            self.timer_requests.push((now + PING_TIMEOUT_MS, TimerTag::PingExpire { rpc }));
            out.push((contact.id, Wire { rpc, body: Body::Ping }));
        }

        // Ring gossip: push our descriptor and leaf view to leaf members and
        // one rotating far contact (keeps rows populated across the ring).
        let mut known = self.routing.leaf_members();
        known.push(self.desc);
        let gossip_targets: Vec<Id> = {
            let mut t: Vec<Id> = self.routing.leaf_members().iter().map(|d| d.id).collect();
            let far: Vec<NodeDescriptor> = self.routing.known();
            if !far.is_empty() {
                t.push(far[self.gossip_rr % far.len()].id);
                self.gossip_rr += 1;
            }
            t
        };
        for target in gossip_targets {
            out.push((target, Wire { rpc: 0, body: Body::Exchange { from: self.desc, known: known.clone() } }));
        }

        // Replica repair: every object whose placement may have shifted
        // since the last check gets pushed to its current replica set; if we
        // are no longer part of it, hand off and drop once acknowledged.
        let epoch = self.routing.view_epoch();
        let ids: Vec<Id> = self
            .store
            .objects
            .keys()
            .filter(|id| self.store.synced_at.get(id) != Some(&epoch))
            .copied()
            .collect();
        for fid in ids {
            let set = self.replica_set(&fid);
            let i_belong = set.iter().any(|d| d.id == self.desc.id);
            let obj = self.store.objects.get(&fid).expect("listed").clone();
            if i_belong {
                for d in set.iter().filter(|d| d.id != self.desc.id) {
                    out.push((d.id, Wire { rpc: 0, body: Body::ReplicaPut { obj: obj.clone() } }));
                }
            } else {
                let op = self.begin_op(
                    now,
                    PendingOp {
                        reply_to: self.desc.id,
                        client_rpc: 0,
                        kind: ReplyKind::Handoff(fid),
                        acks: Vec::new(),
                        outstanding: set.len(),
                        want: 1,
                        majority: 1,
                    },
                );
                for d in &set {
                    let sub = alloc(rpcs);
                    self.sub_to_op.insert(sub, op);
                    out.push((d.id, Wire { rpc: sub, body: Body::ReplicaPut { obj: obj.clone() } }));
                }
            }
            self.store.synced_at.insert(fid, epoch);
        }

        // Topic soft state: refresh our subscriptions, expire foreign ones.
        for (topic, rendezvous) in &self.my_topics {
            out.push((*rendezvous, Wire { rpc: 0, body: Body::TopicSub { topic: *topic, node: self.desc.id } }));
        }
        self.topics.retain(|_, ts| {
            ts.expire(now);
            !ts.is_empty()
        });

        out
    }

    /// One monitoring tick: aggregate own sensors plus child reports and
    /// push the result to the tree parent (or adopt it as the global view
    /// when this node is the root).
    pub fn monitor_tick(&mut self, _now: u64, epoch: u64) -> Vec<(Id, Wire)> {
        self.monitor.prune(epoch.saturating_sub(2));
        let own: BTreeMap<String, MetricStat> =
            self.sensors.iter().map(|(k, v)| (k.clone(), MetricStat::of(&[*v]))).collect();
        let children = self.monitor.children.clone();
        let report = aggregate(self.desc.id, epoch, &own, &children);
        self.last_report = Some(report.clone());

        let me = self.desc.id;
        let mut resp = |key: &Id| self.routing.closest_known(key, 1, true).first().map(|d| d.id).unwrap_or(me);
        let parent = parent_of(&me, !self.desc.weak, &mut resp);
        match parent {
            None => {
                self.global_view = Some(GlobalView::from_report(&report));
                Vec::new()
            }
            Some(p) if p == me => {
                self.global_view = Some(GlobalView::from_report(&report));
                Vec::new()
            }
            Some(p) => {
                self.global_view = None;
                vec![(p, Wire { rpc: 0, body: Body::Report { report } })]
            }
        }
    }

    /// Graceful departure: push every held object to its remaining replica
    /// set and announce the exit so peers drop us immediately.
    pub fn departure_messages(&self) -> Vec<(Id, Wire)> {
        let mut out = Vec::new();
        for (fid, obj) in &self.store.objects {
            for d in self.routing.closest_known(fid, self.k + 1, true) {
                if d.id != self.desc.id {
                    out.push((d.id, Wire { rpc: 0, body: Body::ReplicaPut { obj: obj.clone() } }));
                }
            }
        }
        for contact in self.routing.known() {
            out.push((contact.id, Wire { rpc: 0, body: Body::Leaving { from: self.desc.id } }));
        }
        out
    }
}

fn reply_body(kind: ReplyKind, result: Result<(), u8>) -> Body {
    match kind {
        ReplyKind::Append(seq) => Body::AppendReply { result: result.map(|()| seq) },
        ReplyKind::Replace => Body::ReplaceReply { result },
        ReplyKind::Delete => Body::DeleteReply { result },
        ReplyKind::Insert | ReplyKind::Handoff(_) => unreachable!("handled by finish_op"),
    }
}
