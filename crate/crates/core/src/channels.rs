//! Messaging: signed channel envelopes (unicast, multicast, pub-sub all
//! share one frame), receiver-side duplicate suppression, soft-state topic
//! subscriber registries, and store-backed inboxes for offline delivery.
//!
//! An envelope's id is `hash(channel ‖ sender ‖ counter)` — stable across
//! retransmits and alternative delivery paths, which is what makes dedup
//! and at-least-once forwarding safe to combine.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bytes::Bytes;
use rand::Rng;
use thiserror::Error;

use crate::crypto::{CryptoProvider, PublicKey, SecretKey};
use crate::dds::{ActorCtx, ClientError, StorageClient};
use crate::id::{hash160_parts, Id};
use crate::item::SecureItem;
use crate::storage::{AppendKind, AppendRec, StoredObject, WritePolicy, WriterRule};
use crate::wire::{Reader, WireError, Writer};

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ChannelError {
    #[error("bad envelope signature")]
    BadSignature,
    #[error("malformed: {0}")]
    Malformed(#[from] WireError),
}

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    /// Destination: a topic id, a group channel id, or a user inbox id.
    pub channel: Id,
    pub sender: Id,
    pub sender_pk: PublicKey,
    /// Per-sender monotone counter; (sender, counter) identifies the send.
    pub counter: u64,
    pub sent_at: u64,
    pub body: Bytes,
    pub sig: Bytes,
}

impl Envelope {
    pub fn msg_id(channel: &Id, sender: &Id, counter: u64) -> Id {
        hash160_parts(&[b"msg", &channel.0, &sender.0, &counter.to_be_bytes()])
    }

    pub fn id(&self) -> Id {
        Self::msg_id(&self.channel, &self.sender, self.counter)
    }

    fn digest(&self) -> Id {
        hash160_parts(&[
            b"envelope",
            &self.channel.0,
            &self.sender.0,
            &self.counter.to_be_bytes(),
            &self.sent_at.to_be_bytes(),
            &self.body,
        ])
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sign(
        provider: &dyn CryptoProvider,
        sk: &SecretKey,
        channel: Id,
        sender: Id,
        sender_pk: PublicKey,
        counter: u64,
        sent_at: u64,
        body: Bytes,
    ) -> Envelope {
        let mut e = Envelope { channel, sender, sender_pk, counter, sent_at, body, sig: Bytes::new() };
        e.sig = provider.sign(sk, &e.digest().0);
        e
    }

    /// Verifies under the *claimed* key. Binding the key to the sender
    /// principal is the receiver's job (friend list, policy binding, …).
    pub fn verify(&self, provider: &dyn CryptoProvider) -> bool {
        provider.verify(&self.sender_pk, &self.digest().0, &self.sig)
    }

    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.id(&self.channel);
        w.id(&self.sender);
        w.bytes(&self.sender_pk.material);
        w.u64(self.counter);
        w.u64(self.sent_at);
        w.bytes(&self.body);
        w.bytes(&self.sig);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Envelope, WireError> {
        let mut r = Reader::new(buf);
        let e = Envelope {
            channel: r.id()?,
            sender: r.id()?,
            sender_pk: PublicKey { material: r.bytes_owned()? },
            counter: r.u64()?,
            sent_at: r.u64()?,
            body: r.bytes_owned()?,
            sig: r.bytes_owned()?,
        };
        r.finish()?;
        Ok(e)
    }
}

/// Bounded first-seen filter: `observe` returns true exactly once per id.
#[derive(Debug, Default, Clone)]
pub struct DedupWindow {
    seen: BTreeSet<Id>,
    order: VecDeque<Id>,
    cap: usize,
}

impl DedupWindow {
    pub fn new(cap: usize) -> DedupWindow {
        DedupWindow { seen: BTreeSet::new(), order: VecDeque::new(), cap: cap.max(1) }
    }

    pub fn observe(&mut self, id: Id) -> bool {
        if !self.seen.insert(id) {
            return false;
        }
        self.order.push_back(id);
        if self.order.len() > self.cap {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        true
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Topics (pub-sub rendezvous state)
// ---------------------------------------------------------------------------

pub fn topic_id(name: &str) -> Id {
    hash160_parts(&[b"topic", name.as_bytes()])
}

/// Default subscription lifetime; subscribers refresh at a fraction of it.
pub const SUBSCRIPTION_TTL_MS: u64 = 60_000;

/// Soft-state subscriber registry kept by the node responsible for a topic
/// id. Entries expire unless refreshed; the whole registry is rebuilt by
/// re-subscription after the responsible node changes.
#[derive(Debug, Default, Clone)]
pub struct TopicState {
    subscribers: BTreeMap<Id, u64>,
}

impl TopicState {
    pub fn subscribe(&mut self, node: Id, now: u64, ttl: u64) {
        self.subscribers.insert(node, now + ttl);
    }

    pub fn unsubscribe(&mut self, node: &Id) {
        self.subscribers.remove(node);
    }

    pub fn expire(&mut self, now: u64) {
        self.subscribers.retain(|_, until| *until > now);
    }

    /// Live subscribers in id order (deterministic fan-out).
    pub fn live(&self, now: u64) -> Vec<Id> {
        self.subscribers.iter().filter(|(_, until)| **until > now).map(|(n, _)| *n).collect()
    }

    pub fn len(&self) -> usize {
        self.subscribers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subscribers.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Messenger abstraction
// ---------------------------------------------------------------------------

/// Network-independent messaging client bound to one node: topic pub-sub
/// plus direct node-to-node delivery into an in-memory mailbox. The
/// simulator implements this with rendezvous nodes and real routing; tests
/// use a process-local bus.
pub trait Messenger {
    fn subscribe(&mut self, topic: &Id) -> Result<(), ClientError>;
    fn unsubscribe(&mut self, topic: &Id) -> Result<(), ClientError>;
    /// Publishes to everyone currently subscribed; returns the fan-out.
    fn publish(&mut self, topic: &Id, env: Envelope) -> Result<u32, ClientError>;
    fn send_direct(&mut self, to: &Id, env: Envelope) -> Result<(), ClientError>;
    /// Takes everything delivered to this node since the last drain.
    fn drain_mailbox(&mut self) -> Vec<Envelope>;
}

// ---------------------------------------------------------------------------
// Inboxes (offline delivery via storage)
// ---------------------------------------------------------------------------

pub fn inbox_id(user: &Id) -> Id {
    hash160_parts(&[b"inbox", &user.0])
}

/// Message kinds multiplexed over one inbox.
pub const INBOX_KIND_CHAT: u8 = 0;
pub const INBOX_KIND_FRIEND_REQUEST: u8 = 1;
pub const INBOX_KIND_FRIEND_ACCEPT: u8 = 2;
pub const INBOX_KIND_GROUP_INVITE: u8 = 3;
pub const INBOX_KIND_NOTIFY: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboxMessage {
    pub kind: u8,
    pub from: Id,
    pub sent_at: u64,
    pub body: Bytes,
}

impl InboxMessage {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.u8(self.kind);
        w.id(&self.from);
        w.u64(self.sent_at);
        w.bytes(&self.body);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<InboxMessage, WireError> {
        let mut r = Reader::new(buf);
        let m = InboxMessage { kind: r.u8()?, from: r.id()?, sent_at: r.u64()?, body: r.bytes_owned()? };
        r.finish()?;
        Ok(m)
    }
}

/// Creates the actor's own inbox: anyone may deposit, only the owner
/// drains (replace) or deletes. Capacity is unbounded; the owner bounds it
/// by draining.
pub fn inbox_create<C: StorageClient>(client: &mut C, actor: &ActorCtx) -> Result<(), ClientError> {
    let provider = client.provider();
    let policy = WritePolicy {
        owner: actor.binding(),
        append: WriterRule::Anyone,
        replace: WriterRule::Nobody,
        append_cap: u32::MAX,
        mapping: false,
    };
    let obj = StoredObject::create(&*provider, &actor.keys, actor.user, inbox_id(&actor.user), policy, Bytes::new());
    crate::dds::insert_salted(client, obj, actor)?;
    Ok(())
}

/// Seals `msg` to the recipient and appends it to their inbox. Works for
/// strangers: the inbox id derives from the recipient principal alone.
pub fn inbox_deposit<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    recipient: &Id,
    recipient_pk: &PublicKey,
    msg: &InboxMessage,
) -> Result<u64, ClientError> {
    let provider = client.provider();
    let sealed =
        SecureItem::seal(&*provider, client.rng(), &actor.keys, &msg.encode(), &[(*recipient, recipient_pk)], false);
    let fid = inbox_id(recipient);
    let mut nonce = [0u8; 8];
    client.rng().fill_bytes(&mut nonce);
    let rec = AppendRec::sign(
        &*provider,
        &actor.keys.secret,
        actor.user,
        actor.keys.public.clone(),
        &fid,
        hash160_parts(&[b"deposit", &actor.user.0, &nonce]),
        AppendKind::Add,
        sealed.encode(),
    );
    client.append(&fid, rec)
}

/// Fetches, decrypts and removes all pending messages: the owner folds the
/// observed sequence range into the base (`cleared_seq`), so a re-drain
/// returns nothing new. Undecryptable deposits are dropped silently.
pub fn inbox_drain<C: StorageClient>(client: &mut C, actor: &ActorCtx) -> Result<Vec<InboxMessage>, ClientError> {
    let provider = client.provider();
    let fid = inbox_id(&actor.user);
    let obj = client.fetch(&fid)?;
    let mut out = Vec::new();
    let mut highest = obj.cleared_seq;
    for (seq, rec) in &obj.appends {
        highest = (*seq).max(highest);
        let Ok(item) = SecureItem::decode(&rec.payload) else { continue };
        let mut me = crate::item::SingleKey { principal: actor.user, secret: &actor.keys.secret };
        let Ok(plain) = item.open(&*provider, &mut me) else { continue };
        let Ok(msg) = InboxMessage::decode(&plain) else { continue };
        out.push(msg);
    }
    if highest > obj.cleared_seq {
        let v = obj.version + 1;
        let sig = StoredObject::sign_replace(
            &*provider, &actor.keys.secret, &fid, v, &obj.policy, &[], highest,
        );
        client.replace(&fid, actor.user, &actor.keys.public, v, None, Bytes::new(), highest, sig)?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Process-local backend (storage + messaging in one address space)
// ---------------------------------------------------------------------------

/// Single-process [`StorageClient`] + [`Messenger`]: a [`FakeDht`] for
/// storage plus bus-style topic fan-out and per-node mailboxes. `me` picks
/// whose node is acting; tests switch it between calls to play several
/// participants against shared state.
pub struct LocalNet {
    pub dht: crate::dds::FakeDht,
    pub me: Id,
    topics: BTreeMap<Id, BTreeSet<Id>>,
    mailboxes: BTreeMap<Id, Vec<Envelope>>,
}

impl LocalNet {
    pub fn new(provider: std::sync::Arc<dyn CryptoProvider>, seed: u64) -> LocalNet {
        LocalNet {
            dht: crate::dds::FakeDht::new(provider, seed),
            me: Id::ZERO,
            topics: BTreeMap::new(),
            mailboxes: BTreeMap::new(),
        }
    }

    pub fn acting_as(&mut self, node: Id) -> &mut LocalNet {
        self.me = node;
        self
    }
}

impl StorageClient for LocalNet {
    fn provider(&self) -> std::sync::Arc<dyn CryptoProvider> {
        self.dht.provider()
    }
    fn rng(&mut self) -> &mut rand_chacha::ChaCha12Rng {
        self.dht.rng()
    }
    fn insert(&mut self, obj: StoredObject) -> Result<crate::dds::InsertReport, ClientError> {
        self.dht.insert(obj)
    }
    fn fetch(&mut self, file_id: &Id) -> Result<StoredObject, ClientError> {
        self.dht.fetch(file_id)
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
        self.dht.replace(file_id, author, author_pk, new_version, new_policy, new_base, new_cleared, sig)
    }
    fn append(&mut self, file_id: &Id, rec: AppendRec) -> Result<u64, ClientError> {
        self.dht.append(file_id, rec)
    }
    fn delete(&mut self, file_id: &Id, author: Id, new_version: u64, sig: Bytes) -> Result<(), ClientError> {
        self.dht.delete(file_id, author, new_version, sig)
    }
}

impl Messenger for LocalNet {
    fn subscribe(&mut self, topic: &Id) -> Result<(), ClientError> {
        let me = self.me;
        self.topics.entry(*topic).or_default().insert(me);
        Ok(())
    }

    fn unsubscribe(&mut self, topic: &Id) -> Result<(), ClientError> {
        let me = self.me;
        if let Some(subs) = self.topics.get_mut(topic) {
            subs.remove(&me);
        }
        Ok(())
    }

    fn publish(&mut self, topic: &Id, env: Envelope) -> Result<u32, ClientError> {
        let subs: Vec<Id> = self.topics.get(topic).map(|s| s.iter().copied().collect()).unwrap_or_default();
        for node in &subs {
            self.mailboxes.entry(*node).or_default().push(env.clone());
        }
        Ok(subs.len() as u32)
    }

    fn send_direct(&mut self, to: &Id, env: Envelope) -> Result<(), ClientError> {
        self.mailboxes.entry(*to).or_default().push(env);
        Ok(())
    }

    fn drain_mailbox(&mut self) -> Vec<Envelope> {
        self.mailboxes.get_mut(&self.me).map(std::mem::take).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::toy_provider;
    use crate::dds::FakeDht;
    use crate::storage::StorageError;

    #[test]
    fn envelope_roundtrip_sign_verify_and_tamper() {
        let p = toy_provider();
        let kp = p.keypair_from_credentials("alice", "pw");
        let e = Envelope::sign(
            &*p,
            &kp.secret,
            topic_id("news"),
            Id::from_low_u64(7),
            kp.public.clone(),
            42,
            1_000,
            Bytes::from_static(b"hello"),
        );
        assert!(e.verify(&*p));
        let back = Envelope::decode(&e.encode()).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.id(), Envelope::msg_id(&e.channel, &e.sender, 42));

        let mut tampered = e.clone();
        tampered.body = Bytes::from_static(b"hell0");
        assert!(!tampered.verify(&*p));
        let mut wrong_counter = e.clone();
        wrong_counter.counter = 43;
        assert!(!wrong_counter.verify(&*p));
    }

    #[test]
    fn dedup_window_first_seen_only_and_bounded() {
        let mut w = DedupWindow::new(3);
        let ids: Vec<Id> = (0..5).map(Id::from_low_u64).collect();
        assert!(w.observe(ids[0]));
        assert!(!w.observe(ids[0]));
        assert!(w.observe(ids[1]));
        assert!(w.observe(ids[2]));
        assert!(w.observe(ids[3])); // evicts ids[0]
        assert_eq!(w.len(), 3);
        assert!(w.observe(ids[0]), "evicted id counts as fresh again");
    }

    #[test]
    fn topic_state_ttl_and_deterministic_fanout() {
        let mut t = TopicState::default();
        let (a, b, c) = (Id::from_low_u64(3), Id::from_low_u64(1), Id::from_low_u64(2));
        t.subscribe(a, 0, 100);
        t.subscribe(b, 50, 100);
        t.subscribe(c, 90, 100);
        assert_eq!(t.live(95), vec![b, c, a], "id order");
        t.expire(120);
        assert_eq!(t.live(120), vec![b, c], "a expired");
        t.subscribe(a, 130, 100);
        t.unsubscribe(&b);
        assert_eq!(t.live(140), vec![c, a]);
    }

    #[test]
    fn inbox_deposit_drain_and_authorization() {
        let mut dht = FakeDht::new(toy_provider(), 9);
        let alice = dht.actor("alice");
        let stranger = dht.actor("stranger");
        inbox_create(&mut dht, &alice).unwrap();

        // Anyone can deposit, even without prior contact.
        let m1 = InboxMessage { kind: INBOX_KIND_CHAT, from: stranger.user, sent_at: 5, body: Bytes::from_static(b"hi") };
        inbox_deposit(&mut dht, &stranger, &alice.user, &alice.keys.public, &m1).unwrap();
        let m2 = InboxMessage {
            kind: INBOX_KIND_FRIEND_REQUEST,
            from: stranger.user,
            sent_at: 6,
            body: Bytes::from_static(b"be my friend"),
        };
        inbox_deposit(&mut dht, &stranger, &alice.user, &alice.keys.public, &m2).unwrap();

        // Deposits are sealed: the depositor cannot read them back.
        let raw = dht.fetch(&inbox_id(&alice.user)).unwrap();
        assert_eq!(raw.appends.len(), 2);
        for rec in raw.appends.values() {
            let item = SecureItem::decode(&rec.payload).unwrap();
            let mut k = crate::item::SingleKey { principal: stranger.user, secret: &stranger.keys.secret };
            assert!(item.open(&*dht.provider(), &mut k).is_err());
        }

        // Only the owner can drain (replace is owner-only).
        let err = inbox_drain(&mut dht, &stranger).unwrap_err();
        assert_eq!(err, ClientError::Storage(StorageError::NotFound), "stranger drains their own (absent) inbox");

        let got = inbox_drain(&mut dht, &alice).unwrap();
        assert_eq!(got, vec![m1, m2]);
        // Drain is destructive: nothing on the second pass.
        assert!(inbox_drain(&mut dht, &alice).unwrap().is_empty());

        // New deposits after a drain surface next time.
        let m3 = InboxMessage { kind: INBOX_KIND_NOTIFY, from: stranger.user, sent_at: 9, body: Bytes::new() };
        inbox_deposit(&mut dht, &stranger, &alice.user, &alice.keys.public, &m3).unwrap();
        assert_eq!(inbox_drain(&mut dht, &alice).unwrap(), vec![m3]);
    }

    #[test]
    fn inbox_drain_rejected_for_non_owner_replace() {
        let mut dht = FakeDht::new(toy_provider(), 10);
        let alice = dht.actor("alice");
        let mallory = dht.actor("mallory");
        inbox_create(&mut dht, &alice).unwrap();
        let m = InboxMessage { kind: INBOX_KIND_CHAT, from: mallory.user, sent_at: 1, body: Bytes::from_static(b"x") };
        inbox_deposit(&mut dht, &mallory, &alice.user, &alice.keys.public, &m).unwrap();

        // Mallory forges a drain of alice's inbox: storage refuses the
        // replace because she is neither owner nor admitted replacer.
        let fid = inbox_id(&alice.user);
        let obj = dht.fetch(&fid).unwrap();
        let v = obj.version + 1;
        let sig = StoredObject::sign_replace(&*dht.provider(), &mallory.keys.secret, &fid, v, &obj.policy, &[], 1);
        let err = dht
            .replace(&fid, mallory.user, &mallory.keys.public, v, None, Bytes::new(), 1, sig)
            .unwrap_err();
        assert_eq!(err, ClientError::Storage(StorageError::Unauthorized));
        // Alice still sees her message.
        assert_eq!(inbox_drain(&mut dht, &alice).unwrap(), vec![m]);
    }
}
