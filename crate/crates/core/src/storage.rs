//! Replicated, access-controlled object storage: the rules every replica
//! enforces and the per-node store that holds objects, caches, diversion
//! pointers and traffic-balancing state.
//!
//! A stored object is an owner-signed *base* (opaque bytes, normally an
//! encoded [`crate::item::SecureItem`]) plus an append log of individually
//! signed entries with coordinator-assigned sequence numbers. The write
//! policy travels in plaintext metadata so replicas can validate mutations
//! by signature alone — no decryption, no network resolution. Content
//! confidentiality is the payload's own business.
//!
//! Mutation rules:
//! * **replace** — owner always; additionally whoever the policy's replace
//!   rule admits (used by shared trie nodes), always with `version + 1`.
//! * **append** — owner always, plus the append rule ("anyone" for inboxes,
//!   a bound principal list for friend-writable structures). Capacity-
//!   limited buckets refuse appends past their size.
//! * **delete** — owner only; leaves a small tombstone record so a replica
//!   that was offline cannot resurrect the object.
//! * **mapping overwrite** — replaces owner and key in one step, but only
//!   after the requester answered a challenge encrypted to the *existing*
//!   mapping's key, so identities can rotate keys and nobody else can.

use std::collections::{BTreeMap, VecDeque};

use bytes::Bytes;
use thiserror::Error;

use crate::crypto::{CryptoProvider, KeyPair, PublicKey, SecretKey};
use crate::id::{hash160, hash160_parts, Id};
use crate::wire::{read_count, Reader, WireError, Writer};

pub const DEFAULT_REPLICATION: usize = 4;
pub const DEFAULT_CACHE_TTL_MS: u64 = 30_000;
pub const DEFAULT_QUOTA_BYTES: u64 = 64 * 1024 * 1024;
/// Requests per second on one object above which a replica starts
/// redirecting fetches to its receiver list.
pub const BALANCE_THRESHOLD_PER_S: u32 = 5;
/// Salts to try when a full id neighborhood forces relocating a file.
pub const MAX_FILE_SALTS: u8 = 3;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum StorageError {
    #[error("not found")]
    NotFound,
    #[error("unauthorized")]
    Unauthorized,
    #[error("bad signature")]
    BadSignature,
    #[error("version conflict")]
    VersionConflict,
    #[error("object deleted")]
    Deleted,
    #[error("bucket capacity reached")]
    CapacityExceeded,
    #[error("replica storage full")]
    StorageFull,
    #[error("challenge failed")]
    ChallengeFailed,
    #[error("malformed: {0}")]
    Malformed(#[from] WireError),
}

impl StorageError {
    pub fn code(&self) -> u8 {
        match self {
            StorageError::NotFound => 1,
            StorageError::Unauthorized => 2,
            StorageError::BadSignature => 3,
            StorageError::VersionConflict => 4,
            StorageError::Deleted => 5,
            StorageError::CapacityExceeded => 6,
            StorageError::StorageFull => 7,
            StorageError::ChallengeFailed => 8,
            StorageError::Malformed(_) => 9,
        }
    }

    pub fn from_code(c: u8) -> StorageError {
        match c {
            1 => StorageError::NotFound,
            2 => StorageError::Unauthorized,
            3 => StorageError::BadSignature,
            4 => StorageError::VersionConflict,
            5 => StorageError::Deleted,
            6 => StorageError::CapacityExceeded,
            7 => StorageError::StorageFull,
            8 => StorageError::ChallengeFailed,
            _ => StorageError::Malformed(WireError::NonCanonical),
        }
    }
}

/// An owner-attested binding of a user principal to key material, so
/// replicas can check writer signatures without resolving anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrincipalBinding {
    pub user: Id,
    pub pk: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriterRule {
    Nobody,
    /// Bound principals, sorted by user id (canonical form).
    Principals(Vec<PrincipalBinding>),
    /// Any key may sign; authorship metadata is then self-asserted and
    /// consumers must rely on payload-level signatures for identity.
    Anyone,
}

impl WriterRule {
    fn binding_for(&self, user: &Id) -> Option<&PublicKey> {
        match self {
            WriterRule::Principals(v) => v.iter().find(|b| b.user == *user).map(|b| &b.pk),
            _ => None,
        }
    }

    fn encode(&self, w: &mut Writer) {
        match self {
            WriterRule::Nobody => {
                w.u8(0);
            }
            WriterRule::Principals(v) => {
                w.u8(1);
                w.u32(v.len() as u32);
                for b in v {
                    w.id(&b.user);
                    w.bytes(&b.pk.material);
                }
            }
            WriterRule::Anyone => {
                w.u8(2);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<WriterRule, WireError> {
        match r.u8()? {
            0 => Ok(WriterRule::Nobody),
            1 => {
                let n = read_count(r, 24)?;
                let mut v = Vec::with_capacity(n);
                let mut prev: Option<Id> = None;
                for _ in 0..n {
                    let user = r.id()?;
                    if prev.is_some_and(|p| user <= p) {
                        return Err(WireError::NonCanonical);
                    }
                    prev = Some(user);
                    v.push(PrincipalBinding { user, pk: PublicKey { material: r.bytes_owned()? } });
                }
                Ok(WriterRule::Principals(v))
            }
            2 => Ok(WriterRule::Anyone),
            t => Err(WireError::BadTag(t)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WritePolicy {
    pub owner: PrincipalBinding,
    pub append: WriterRule,
    pub replace: WriterRule,
    /// Maximum number of append sequence numbers ever assigned (bucket
    /// size); 0 forbids appends, `u32::MAX` means unbounded (inboxes).
    pub append_cap: u32,
    /// Mapping objects support challenge-gated owner replacement.
    pub mapping: bool,
}

impl WritePolicy {
    pub fn owner_only(owner: PrincipalBinding) -> WritePolicy {
        WritePolicy { owner, append: WriterRule::Nobody, replace: WriterRule::Nobody, append_cap: 0, mapping: false }
    }

    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.id(&self.owner.user);
        w.bytes(&self.owner.pk.material);
        self.append.encode(&mut w);
        self.replace.encode(&mut w);
        w.u32(self.append_cap);
        w.bool(self.mapping);
        w.into_bytes()
    }

    pub fn decode_from(r: &mut Reader<'_>) -> Result<WritePolicy, WireError> {
        let owner = PrincipalBinding { user: r.id()?, pk: PublicKey { material: r.bytes_owned()? } };
        let append = WriterRule::decode(r)?;
        let replace = WriterRule::decode(r)?;
        let append_cap = r.u32()?;
        let mapping = r.bool()?;
        Ok(WritePolicy { owner, append, replace, append_cap, mapping })
    }

    pub fn hash(&self) -> Id {
        hash160(&self.encode())
    }

    /// Key to verify `user` as an append author, if admitted.
    fn append_key(&self, user: &Id, claimed: &PublicKey) -> Option<PublicKey> {
        if *user == self.owner.user {
            return Some(self.owner.pk.clone());
        }
        match &self.append {
            WriterRule::Anyone => Some(claimed.clone()),
            rule => rule.binding_for(user).cloned(),
        }
    }

    /// Key to verify `user` as a base replacer/creator, if admitted.
    fn replace_key(&self, user: &Id, claimed: &PublicKey) -> Option<PublicKey> {
        if *user == self.owner.user {
            return Some(self.owner.pk.clone());
        }
        match &self.replace {
            WriterRule::Anyone => Some(claimed.clone()),
            rule => rule.binding_for(user).cloned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendKind {
    Add,
    /// Marks the append with the given unique id as removed. Leaves a hole:
    /// sequence numbers of other entries never shift.
    Tombstone(Id),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppendRec {
    pub author: Id,
    pub author_pk: PublicKey,
    /// Client-chosen id; retransmits of the same unique id are idempotent.
    pub unique: Id,
    pub kind: AppendKind,
    pub payload: Bytes,
    pub sig: Bytes,
}

impl AppendRec {
    fn signed_digest(&self, file_id: &Id) -> Id {
        let (k, target) = match self.kind {
            AppendKind::Add => (0u8, Id::ZERO),
            AppendKind::Tombstone(t) => (1u8, t),
        };
        hash160_parts(&[b"append", &file_id.0, &self.author.0, &self.unique.0, &[k], &target.0, &self.payload])
    }

    pub fn sign(
        provider: &dyn CryptoProvider,
        sk: &SecretKey,
        author: Id,
        author_pk: PublicKey,
        file_id: &Id,
        unique: Id,
        kind: AppendKind,
        payload: Bytes,
    ) -> AppendRec {
        let mut rec = AppendRec { author, author_pk, unique, kind, payload, sig: Bytes::new() };
        rec.sig = provider.sign(sk, &rec.signed_digest(file_id).0);
        rec
    }

    pub fn encode(&self, w: &mut Writer) {
        w.id(&self.author);
        w.bytes(&self.author_pk.material);
        w.id(&self.unique);
        match self.kind {
            AppendKind::Add => {
                w.u8(0);
            }
            AppendKind::Tombstone(t) => {
                w.u8(1);
                w.id(&t);
            }
        }
        w.bytes(&self.payload);
        w.bytes(&self.sig);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<AppendRec, WireError> {
        let author = r.id()?;
        let author_pk = PublicKey { material: r.bytes_owned()? };
        let unique = r.id()?;
        let kind = match r.u8()? {
            0 => AppendKind::Add,
            1 => AppendKind::Tombstone(r.id()?),
            t => return Err(WireError::BadTag(t)),
        };
        let payload = r.bytes_owned()?;
        let sig = r.bytes_owned()?;
        Ok(AppendRec { author, author_pk, unique, kind, payload, sig })
    }
}

/// Replicated unit of storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredObject {
    pub file_id: Id,
    pub version: u64,
    pub policy: WritePolicy,
    pub base: Bytes,
    pub base_author: Id,
    /// Claimed key of the base author; only trusted when the policy's rule
    /// for the author is `Anyone` (otherwise the bound key is used).
    pub base_author_pk: PublicKey,
    pub base_sig: Bytes,
    /// Appends with seq ≤ cleared_seq have been folded into the base.
    pub cleared_seq: u64,
    pub appends: BTreeMap<u64, AppendRec>,
    pub deleted: bool,
}

fn base_digest(file_id: &Id, version: u64, policy: &WritePolicy, base: &[u8], cleared_seq: u64) -> Id {
    hash160_parts(&[
        b"base",
        &file_id.0,
        &version.to_be_bytes(),
        &policy.hash().0,
        &hash160(base).0,
        &cleared_seq.to_be_bytes(),
    ])
}

fn delete_digest(file_id: &Id, version: u64) -> Id {
    hash160_parts(&[b"delete", &file_id.0, &version.to_be_bytes()])
}

impl StoredObject {
    /// Builds and signs a fresh object (version 1). The author must be the
    /// owner or admitted by the append/replace rule (bucket/trie-node
    /// creation by an authorized writer).
    pub fn create(
        provider: &dyn CryptoProvider,
        keys: &KeyPair,
        author: Id,
        file_id: Id,
        policy: WritePolicy,
        base: Bytes,
    ) -> StoredObject {
        let digest = base_digest(&file_id, 1, &policy, &base, 0);
        let base_sig = provider.sign(&keys.secret, &digest.0);
        StoredObject {
            file_id,
            version: 1,
            policy,
            base,
            base_author: author,
            base_author_pk: keys.public.clone(),
            base_sig,
            cleared_seq: 0,
            appends: BTreeMap::new(),
            deleted: false,
        }
    }

    /// Key the base signature must verify under, honoring the authorization
    /// rules: creations (version 1) are open to any admitted writer, later
    /// bases only to replacers; the owner always qualifies.
    fn base_key(&self) -> Option<PublicKey> {
        let replacer = self.policy.replace_key(&self.base_author, &self.base_author_pk);
        if self.version == 1 {
            replacer.or_else(|| self.policy.append_key(&self.base_author, &self.base_author_pk))
        } else {
            replacer
        }
    }

    /// Validates a freshly received object (a create or a full replica
    /// transfer): base signature, every append signature, capacity.
    pub fn validate(&self, provider: &dyn CryptoProvider) -> Result<(), StorageError> {
        if self.deleted {
            // Tombstone record: signature over the delete digest.
            let ok = provider.verify(&self.policy.owner.pk, &delete_digest(&self.file_id, self.version).0, &self.base_sig);
            return if ok { Ok(()) } else { Err(StorageError::BadSignature) };
        }
        let key = self.base_key().ok_or(StorageError::Unauthorized)?;
        let digest = base_digest(&self.file_id, self.version, &self.policy, &self.base, self.cleared_seq);
        if !provider.verify(&key, &digest.0, &self.base_sig) {
            return Err(StorageError::BadSignature);
        }
        if self.version == 0 {
            return Err(StorageError::VersionConflict);
        }
        let cap = self.policy.append_cap as u64;
        for (seq, rec) in &self.appends {
            if *seq == 0 || *seq <= self.cleared_seq {
                return Err(StorageError::VersionConflict);
            }
            if matches!(rec.kind, AppendKind::Add) && cap != u32::MAX as u64 && *seq > cap {
                return Err(StorageError::VersionConflict);
            }
            self.validate_append_sig(provider, rec)?;
        }
        Ok(())
    }

    fn validate_append_sig(&self, provider: &dyn CryptoProvider, rec: &AppendRec) -> Result<(), StorageError> {
        let key = self.policy.append_key(&rec.author, &rec.author_pk).ok_or(StorageError::Unauthorized)?;
        if !provider.verify(&key, &rec.signed_digest(&self.file_id).0, &rec.sig) {
            return Err(StorageError::BadSignature);
        }
        Ok(())
    }

    pub fn next_seq(&self) -> u64 {
        self.appends.keys().next_back().copied().unwrap_or(self.cleared_seq) + 1
    }

    /// Coordinator-side append: validates authorization, signature,
    /// capacity and tombstone targeting, assigns the next sequence number.
    /// Re-sending an already-applied unique id returns its existing seq.
    pub fn apply_append(&mut self, provider: &dyn CryptoProvider, rec: AppendRec) -> Result<u64, StorageError> {
        if self.deleted {
            return Err(StorageError::Deleted);
        }
        if let Some((seq, _)) = self.appends.iter().find(|(_, r)| r.unique == rec.unique) {
            return Ok(*seq);
        }
        self.validate_append_sig(provider, &rec)?;
        if let AppendKind::Tombstone(target) = rec.kind {
            // One tombstone per target suffices; repeats are idempotent.
            if let Some((seq, _)) = self
                .appends
                .iter()
                .find(|(_, r)| matches!(r.kind, AppendKind::Tombstone(t) if t == target))
            {
                return Ok(*seq);
            }
            // Removing an entry needs the original author or the owner.
            if rec.author != self.policy.owner.user {
                match self.appends.values().find(|r| r.unique == target) {
                    Some(orig) if orig.author == rec.author => {}
                    Some(_) => return Err(StorageError::Unauthorized),
                    // Target unknown (compacted or never seen): only the
                    // owner may blind-delete.
                    None => return Err(StorageError::Unauthorized),
                }
            }
        }
        let seq = self.next_seq();
        // Capacity bounds additions only: a full bucket must still accept
        // tombstones for the entries it holds (deletion leaves a hole, and
        // the hole is never refilled).
        if matches!(rec.kind, AppendKind::Add) {
            let cap = self.policy.append_cap as u64;
            if self.policy.append_cap == 0 || (cap != u32::MAX as u64 && seq > cap) {
                return Err(StorageError::CapacityExceeded);
            }
        }
        self.appends.insert(seq, rec);
        Ok(seq)
    }

    /// Base replacement with optimistic concurrency: `new_version` must be
    /// exactly `version + 1`. Owner may also swap in a new policy (grants).
    /// `cleared_seq` may advance to fold observed appends into the base.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_replace(
        &mut self,
        provider: &dyn CryptoProvider,
        author: Id,
        author_pk: &PublicKey,
        new_version: u64,
        new_policy: Option<WritePolicy>,
        new_base: Bytes,
        new_cleared: u64,
        sig: &[u8],
    ) -> Result<(), StorageError> {
        if self.deleted {
            return Err(StorageError::Deleted);
        }
        if new_version != self.version + 1 {
            return Err(StorageError::VersionConflict);
        }
        // Compaction may neither rewind nor cover sequence numbers that were
        // never assigned.
        if new_cleared < self.cleared_seq || new_cleared >= self.next_seq() {
            return Err(StorageError::VersionConflict);
        }
        let policy = match &new_policy {
            Some(p) => {
                if author != self.policy.owner.user {
                    return Err(StorageError::Unauthorized);
                }
                p.clone()
            }
            None => self.policy.clone(),
        };
        let key = self.policy.replace_key(&author, author_pk).ok_or(StorageError::Unauthorized)?;
        let digest = base_digest(&self.file_id, new_version, &policy, &new_base, new_cleared);
        if !provider.verify(&key, &digest.0, sig) {
            return Err(StorageError::BadSignature);
        }
        self.version = new_version;
        self.policy = policy;
        self.base = new_base;
        self.base_author = author;
        self.base_author_pk = author_pk.clone();
        self.base_sig = Bytes::copy_from_slice(sig);
        self.cleared_seq = new_cleared.max(self.cleared_seq);
        self.appends.retain(|seq, _| *seq > self.cleared_seq);
        Ok(())
    }

    pub fn sign_replace(
        provider: &dyn CryptoProvider,
        sk: &SecretKey,
        file_id: &Id,
        new_version: u64,
        policy: &WritePolicy,
        new_base: &[u8],
        new_cleared: u64,
    ) -> Bytes {
        provider.sign(sk, &base_digest(file_id, new_version, policy, new_base, new_cleared).0)
    }

    /// Owner-only deletion; shrinks the object to a signed tombstone.
    pub fn apply_delete(&mut self, provider: &dyn CryptoProvider, author: Id, sig: &[u8]) -> Result<(), StorageError> {
        if self.deleted {
            return Err(StorageError::Deleted);
        }
        if author != self.policy.owner.user {
            return Err(StorageError::Unauthorized);
        }
        let version = self.version + 1;
        if !provider.verify(&self.policy.owner.pk, &delete_digest(&self.file_id, version).0, sig) {
            return Err(StorageError::BadSignature);
        }
        self.version = version;
        self.deleted = true;
        self.base = Bytes::new();
        self.base_author = self.policy.owner.user;
        self.base_author_pk = self.policy.owner.pk.clone();
        self.base_sig = Bytes::copy_from_slice(sig);
        self.appends.clear();
        Ok(())
    }

    pub fn sign_delete(provider: &dyn CryptoProvider, sk: &SecretKey, file_id: &Id, new_version: u64) -> Bytes {
        provider.sign(sk, &delete_digest(file_id, new_version).0)
    }

    /// Challenge-gated whole-object replacement for mapping objects: the
    /// replica sets `challenge_ok` only if the requester decrypted a fresh
    /// nonce wrapped to the *current* mapping's owner key.
    pub fn apply_mapping_overwrite(
        &mut self,
        provider: &dyn CryptoProvider,
        candidate: StoredObject,
        challenge_ok: bool,
    ) -> Result<(), StorageError> {
        if !self.policy.mapping || !candidate.policy.mapping {
            return Err(StorageError::Unauthorized);
        }
        if !challenge_ok {
            return Err(StorageError::ChallengeFailed);
        }
        if candidate.file_id != self.file_id {
            return Err(StorageError::Unauthorized);
        }
        if candidate.version <= self.version {
            return Err(StorageError::VersionConflict);
        }
        candidate.validate(provider)?;
        *self = candidate;
        Ok(())
    }

    /// Canonical full encoding (replica transfer, anti-entropy hashes).
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::with_capacity(self.base.len() + 128);
        w.id(&self.file_id);
        w.u64(self.version);
        w.raw(&self.policy.encode());
        w.bytes(&self.base);
        w.id(&self.base_author);
        w.bytes(&self.base_author_pk.material);
        w.bytes(&self.base_sig);
        w.u64(self.cleared_seq);
        w.bool(self.deleted);
        w.u32(self.appends.len() as u32);
        for (seq, rec) in &self.appends {
            w.u64(*seq);
            rec.encode(&mut w);
        }
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<StoredObject, StorageError> {
        let mut r = Reader::new(buf);
        let file_id = r.id()?;
        let version = r.u64()?;
        let policy = WritePolicy::decode_from(&mut r)?;
        let base = r.bytes_owned()?;
        let base_author = r.id()?;
        let base_author_pk = PublicKey { material: r.bytes_owned()? };
        let base_sig = r.bytes_owned()?;
        let cleared_seq = r.u64()?;
        let deleted = r.bool()?;
        let n = read_count(&mut r, 8)?;
        let mut appends = BTreeMap::new();
        let mut prev = 0u64;
        for i in 0..n {
            let seq = r.u64()?;
            if i > 0 && seq <= prev {
                return Err(WireError::NonCanonical.into());
            }
            prev = seq;
            appends.insert(seq, AppendRec::decode(&mut r)?);
        }
        r.finish()?;
        Ok(StoredObject {
            file_id,
            version,
            policy,
            base,
            base_author,
            base_author_pk,
            base_sig,
            cleared_seq,
            appends,
            deleted,
        })
    }

    /// Anti-entropy comparison hash over the full canonical encoding.
    pub fn content_hash(&self) -> Id {
        hash160(&self.encode())
    }

    pub fn approx_size(&self) -> u64 {
        (self.base.len()
            + self.appends.values().map(|a| a.payload.len() + a.sig.len() + 80).sum::<usize>()
            + 160) as u64
    }

    /// Freshness ordering for replica reconciliation: deletion wins, then
    /// higher version, then more appends folded or present.
    pub fn freshness(&self) -> (bool, u64, u64, u64) {
        (self.deleted, self.version, self.cleared_seq, self.next_seq())
    }

    /// Merges two replicas of the same object deterministically: the fresher
    /// base wins, live append logs union (same-seq conflicts resolve by
    /// content hash).
    pub fn merge(a: &StoredObject, b: &StoredObject) -> StoredObject {
        debug_assert_eq!(a.file_id, b.file_id);
        let (mut newer, older) = if a.freshness() >= b.freshness() { (a.clone(), b) } else { (b.clone(), a) };
        if newer.deleted {
            return newer;
        }
        if older.version == newer.version && !older.deleted {
            for (seq, rec) in &older.appends {
                if *seq <= newer.cleared_seq {
                    continue;
                }
                match newer.appends.get(seq) {
                    None => {
                        newer.appends.insert(*seq, rec.clone());
                    }
                    Some(existing) => {
                        let mut wa = Writer::new();
                        existing.encode(&mut wa);
                        let mut wb = Writer::new();
                        rec.encode(&mut wb);
                        if hash160(&wb.into_vec()) < hash160(&wa.into_vec()) {
                            newer.appends.insert(*seq, rec.clone());
                        }
                    }
                }
            }
        }
        newer
    }
}

/// Salted relocation id for file diversion when a neighborhood is full.
pub fn salted_id(base: &Id, salt: u8) -> Id {
    if salt == 0 {
        *base
    } else {
        hash160_parts(&[b"salt", &base.0, &[salt]])
    }
}

/// Signed acknowledgement that a replica holds (file, version, hash).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreReceipt {
    pub file_id: Id,
    pub version: u64,
    pub replica: Id,
    pub content_hash: Id,
    pub sig: Bytes,
}

impl StoreReceipt {
    fn digest(file_id: &Id, version: u64, replica: &Id, content_hash: &Id) -> Id {
        hash160_parts(&[b"receipt", &file_id.0, &version.to_be_bytes(), &replica.0, &content_hash.0])
    }

    pub fn sign(provider: &dyn CryptoProvider, sk: &SecretKey, file_id: Id, version: u64, replica: Id, content_hash: Id) -> StoreReceipt {
        let sig = provider.sign(sk, &Self::digest(&file_id, version, &replica, &content_hash).0);
        StoreReceipt { file_id, version, replica, content_hash, sig }
    }

    pub fn verify(&self, provider: &dyn CryptoProvider, replica_pk: &PublicKey) -> bool {
        provider.verify(replica_pk, &Self::digest(&self.file_id, self.version, &self.replica, &self.content_hash).0, &self.sig)
    }
}

/// Pointer left behind when an object was diverted to a leaf neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DivertPointer {
    pub file_id: Id,
    pub holder: Id,
    /// Guard copies live one position beyond the replica set so the pointer
    /// survives the loss of the diverting node.
    pub guard: bool,
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub object: StoredObject,
    pub stored_at: u64,
}

#[derive(Debug, Default, Clone)]
pub struct ReceiverState {
    /// Timestamps (ms) of recent requests, pruned to the last second.
    window: VecDeque<u64>,
    pub receivers: Vec<Id>,
    rr: usize,
}

/// Everything one node persists.
#[derive(Debug)]
pub struct NodeStore {
    pub objects: BTreeMap<Id, StoredObject>,
    pub diverted: BTreeMap<Id, DivertPointer>,
    cache: BTreeMap<Id, CacheEntry>,
    pub quota: u64,
    pub cache_ttl: u64,
    pub balance_threshold: u32,
    used: u64,
    receivers: BTreeMap<Id, ReceiverState>,
    /// file id → routing view epoch at which its replica set was last
    /// verified; lets maintenance skip settled objects.
    pub synced_at: BTreeMap<Id, u64>,
}

impl NodeStore {
    pub fn new(quota: u64, cache_ttl: u64, balance_threshold: u32) -> NodeStore {
        NodeStore {
            objects: BTreeMap::new(),
            diverted: BTreeMap::new(),
            cache: BTreeMap::new(),
            quota,
            cache_ttl,
            balance_threshold,
            used: 0,
            receivers: BTreeMap::new(),
            synced_at: BTreeMap::new(),
        }
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn has_room_for(&self, size: u64) -> bool {
        self.used + size <= self.quota
    }

    pub fn get(&self, file_id: &Id) -> Option<&StoredObject> {
        self.objects.get(file_id)
    }

    /// Inserts or overwrites; enforces the quota (diversion pointers and
    /// tombstones are exempt — they exist *because* space is tight).
    pub fn put(&mut self, obj: StoredObject) -> Result<(), StorageError> {
        let size = obj.approx_size();
        let existing = self.objects.get(&obj.file_id).map(|o| o.approx_size()).unwrap_or(0);
        if !obj.deleted && self.used - existing + size > self.quota {
            return Err(StorageError::StorageFull);
        }
        self.used = self.used - existing + size;
        self.synced_at.remove(&obj.file_id);
        self.objects.insert(obj.file_id, obj);
        Ok(())
    }

    /// Re-accounts an object mutated in place via `objects.get_mut`.
    pub fn reaccount(&mut self, file_id: &Id, before: u64) {
        if let Some(o) = self.objects.get(file_id) {
            self.used = self.used - before + o.approx_size();
        }
        self.synced_at.remove(file_id);
    }

    pub fn remove(&mut self, file_id: &Id) -> Option<StoredObject> {
        let o = self.objects.remove(file_id)?;
        self.used -= o.approx_size();
        self.synced_at.remove(file_id);
        self.receivers.remove(file_id);
        Some(o)
    }

    // --- fetch cache -------------------------------------------------------

    pub fn cache_put(&mut self, obj: StoredObject, now: u64) {
        self.cache.insert(obj.file_id, CacheEntry { object: obj, stored_at: now });
    }

    pub fn cache_get(&mut self, file_id: &Id, now: u64) -> Option<&StoredObject> {
        let fresh = match self.cache.get(file_id) {
            Some(e) => now < e.stored_at + self.cache_ttl,
            None => return None,
        };
        if !fresh {
            self.cache.remove(file_id);
            return None;
        }
        Some(&self.cache.get(file_id).unwrap().object)
    }

    pub fn cache_invalidate(&mut self, file_id: &Id) {
        self.cache.remove(file_id);
    }

    // --- read traffic balancing -------------------------------------------

    /// Records a fetch hitting this replica. When the rolling one-second
    /// request rate exceeds the threshold and other receivers are known,
    /// returns the receiver to redirect to (round-robin).
    pub fn record_request(&mut self, file_id: &Id, now: u64) -> Option<Id> {
        let st = self.receivers.entry(*file_id).or_default();
        st.window.push_back(now);
        while st.window.front().is_some_and(|t| *t + 1000 <= now) {
            st.window.pop_front();
        }
        if st.window.len() as u32 > self.balance_threshold && !st.receivers.is_empty() {
            let r = st.receivers[st.rr % st.receivers.len()];
            st.rr += 1;
            return Some(r);
        }
        None
    }

    /// Registers a node that just retrieved the full object and can serve
    /// it from cache for a while.
    pub fn add_receiver(&mut self, file_id: &Id, node: Id) {
        let st = self.receivers.entry(*file_id).or_default();
        if !st.receivers.contains(&node) {
            st.receivers.push(node);
        }
    }

    /// An update invalidates every cached copy out there: drop the list.
    pub fn clear_receivers(&mut self, file_id: &Id) {
        self.receivers.remove(file_id);
    }

    pub fn receiver_count(&self, file_id: &Id) -> usize {
        self.receivers.get(file_id).map(|s| s.receivers.len()).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::toy_provider;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::sync::Arc;

    struct Actors {
        provider: Arc<dyn CryptoProvider>,
        owner: (Id, crate::crypto::KeyPair),
        friend: (Id, crate::crypto::KeyPair),
        stranger: (Id, crate::crypto::KeyPair),
    }

    fn actors() -> Actors {
        let provider = toy_provider();
        let mk = |name: &str| {
            let kp = provider.keypair_from_credentials(name, "pw");
            (hash160_parts(&[b"user", name.as_bytes()]), kp)
        };
        Actors { owner: mk("owner"), friend: mk("friend"), stranger: mk("stranger"), provider }
    }

    fn policy_with_friend(a: &Actors, cap: u32) -> WritePolicy {
        WritePolicy {
            owner: PrincipalBinding { user: a.owner.0, pk: a.owner.1.public.clone() },
            append: WriterRule::Principals(vec![PrincipalBinding { user: a.friend.0, pk: a.friend.1.public.clone() }]),
            replace: WriterRule::Nobody,
            append_cap: cap,
            mapping: false,
        }
    }

    fn fresh_object(a: &Actors, cap: u32) -> StoredObject {
        let fid = hash160(b"file-1");
        StoredObject::create(
            &*a.provider,
            &a.owner.1,
            a.owner.0,
            fid,
            policy_with_friend(a, cap),
            Bytes::from_static(b"base-v1"),
        )
    }

    fn make_append(a: &Actors, who: &(Id, crate::crypto::KeyPair), obj: &StoredObject, n: u8) -> AppendRec {
        AppendRec::sign(
            &*a.provider,
            &who.1.secret,
            who.0,
            who.1.public.clone(),
            &obj.file_id,
            hash160(&[b"unique", &[n][..]].concat()),
            AppendKind::Add,
            Bytes::from(vec![n; 8]),
        )
    }

    #[test]
    fn create_validates_and_roundtrips() {
        let a = actors();
        let obj = fresh_object(&a, 16);
        obj.validate(&*a.provider).unwrap();
        let enc = obj.encode();
        let back = StoredObject::decode(&enc).unwrap();
        assert_eq!(back, obj);
        assert_eq!(back.encode(), enc);
        assert_eq!(back.content_hash(), obj.content_hash());
    }

    #[test]
    fn append_authorization_matrix() {
        let a = actors();
        let mut obj = fresh_object(&a, 16);

        // Friend (bound writer) appends fine.
        let seq = obj.apply_append(&*a.provider, make_append(&a, &a.friend, &obj, 1)).unwrap();
        assert_eq!(seq, 1);
        // Owner always may.
        assert_eq!(obj.apply_append(&*a.provider, make_append(&a, &a.owner, &obj, 2)).unwrap(), 2);
        // Stranger rejected.
        assert_eq!(
            obj.apply_append(&*a.provider, make_append(&a, &a.stranger, &obj, 3)).unwrap_err(),
            StorageError::Unauthorized
        );
        // Friend forging the owner's authorship is a signature failure.
        let forged = AppendRec::sign(
            &*a.provider,
            &a.friend.1.secret,
            a.owner.0,
            a.owner.1.public.clone(),
            &obj.file_id,
            hash160(b"u-forged"),
            AppendKind::Add,
            Bytes::from_static(b"fake"),
        );
        assert_eq!(obj.apply_append(&*a.provider, forged).unwrap_err(), StorageError::BadSignature);
        // Idempotent retry returns the original seq.
        assert_eq!(obj.apply_append(&*a.provider, make_append(&a, &a.friend, &obj, 1)).unwrap(), 1);
        assert_eq!(obj.appends.len(), 2);
    }

    #[test]
    fn append_capacity_is_enforced() {
        let a = actors();
        let mut obj = fresh_object(&a, 3);
        for n in 1..=3u8 {
            obj.apply_append(&*a.provider, make_append(&a, &a.friend, &obj, n)).unwrap();
        }
        assert_eq!(
            obj.apply_append(&*a.provider, make_append(&a, &a.friend, &obj, 4)).unwrap_err(),
            StorageError::CapacityExceeded
        );
        // Zero-cap objects accept no appends at all.
        let mut blob = fresh_object(&a, 0);
        assert_eq!(
            blob.apply_append(&*a.provider, make_append(&a, &a.owner, &blob, 1)).unwrap_err(),
            StorageError::CapacityExceeded
        );
    }

    #[test]
    fn tombstone_rights() {
        let a = actors();
        let mut obj = fresh_object(&a, 16);
        obj.apply_append(&*a.provider, make_append(&a, &a.friend, &obj, 1)).unwrap();
        let target = obj.appends[&1].unique;

        // Stranger cannot tombstone at all (not a writer).
        let t_stranger = AppendRec::sign(
            &*a.provider, &a.stranger.1.secret, a.stranger.0, a.stranger.1.public.clone(),
            &obj.file_id, hash160(b"t1"), AppendKind::Tombstone(target), Bytes::new(),
        );
        assert_eq!(obj.apply_append(&*a.provider, t_stranger).unwrap_err(), StorageError::Unauthorized);

        // A different writer cannot remove the friend's entry… (add a second
        // writer to the policy for this check)
        // …but the author may remove their own:
        let t_friend = AppendRec::sign(
            &*a.provider, &a.friend.1.secret, a.friend.0, a.friend.1.public.clone(),
            &obj.file_id, hash160(b"t2"), AppendKind::Tombstone(target), Bytes::new(),
        );
        assert_eq!(obj.apply_append(&*a.provider, t_friend).unwrap(), 2);

        // Owner may remove anything, even blind.
        let t_owner = AppendRec::sign(
            &*a.provider, &a.owner.1.secret, a.owner.0, a.owner.1.public.clone(),
            &obj.file_id, hash160(b"t3"), AppendKind::Tombstone(hash160(b"unknown")), Bytes::new(),
        );
        assert_eq!(obj.apply_append(&*a.provider, t_owner).unwrap(), 3);
    }

    #[test]
    fn replace_and_compaction() {
        let a = actors();
        let mut obj = fresh_object(&a, 16);
        obj.apply_append(&*a.provider, make_append(&a, &a.friend, &obj, 1)).unwrap();
        obj.apply_append(&*a.provider, make_append(&a, &a.friend, &obj, 2)).unwrap();

        // Friend cannot replace (rule Nobody).
        let sig = StoredObject::sign_replace(&*a.provider, &a.friend.1.secret, &obj.file_id, 2, &obj.policy, b"v2", 1);
        assert_eq!(
            obj.apply_replace(&*a.provider, a.friend.0, &a.friend.1.public, 2, None, Bytes::from_static(b"v2"), 1, &sig)
                .unwrap_err(),
            StorageError::Unauthorized
        );

        // Owner replaces with compaction of seq ≤ 1.
        let sig = StoredObject::sign_replace(&*a.provider, &a.owner.1.secret, &obj.file_id, 2, &obj.policy, b"v2", 1);
        obj.apply_replace(&*a.provider, a.owner.0, &a.owner.1.public, 2, None, Bytes::from_static(b"v2"), 1, &sig)
            .unwrap();
        assert_eq!(obj.version, 2);
        assert_eq!(obj.cleared_seq, 1);
        assert!(obj.appends.contains_key(&2) && !obj.appends.contains_key(&1));
        // New appends continue the sequence.
        assert_eq!(obj.next_seq(), 3);

        // Stale version is a conflict.
        let sig = StoredObject::sign_replace(&*a.provider, &a.owner.1.secret, &obj.file_id, 2, &obj.policy, b"v2b", 1);
        assert_eq!(
            obj.apply_replace(&*a.provider, a.owner.0, &a.owner.1.public, 2, None, Bytes::from_static(b"v2b"), 1, &sig)
                .unwrap_err(),
            StorageError::VersionConflict
        );
        obj.validate(&*a.provider).unwrap();
    }

    #[test]
    fn delete_is_owner_only_and_sticky() {
        let a = actors();
        let mut obj = fresh_object(&a, 16);
        let v = obj.version + 1;
        let sig = StoredObject::sign_delete(&*a.provider, &a.friend.1.secret, &obj.file_id, v);
        assert_eq!(obj.apply_delete(&*a.provider, a.friend.0, &sig).unwrap_err(), StorageError::Unauthorized);

        let sig = StoredObject::sign_delete(&*a.provider, &a.owner.1.secret, &obj.file_id, v);
        obj.apply_delete(&*a.provider, a.owner.0, &sig).unwrap();
        assert!(obj.deleted);
        obj.validate(&*a.provider).unwrap();

        // Nothing works on a tombstone.
        assert_eq!(
            obj.apply_append(&*a.provider, make_append(&a, &a.owner, &obj, 9)).unwrap_err(),
            StorageError::Deleted
        );
        let sig = StoredObject::sign_replace(&*a.provider, &a.owner.1.secret, &obj.file_id, 3, &obj.policy, b"x", 0);
        assert_eq!(
            obj.apply_replace(&*a.provider, a.owner.0, &a.owner.1.public, 3, None, Bytes::from_static(b"x"), 0, &sig)
                .unwrap_err(),
            StorageError::Deleted
        );
        // A tombstone beats a live older replica in reconciliation.
        let live = fresh_object(&a, 16);
        assert!(StoredObject::merge(&live, &obj).deleted);
    }

    #[test]
    fn merge_unions_appends_deterministically() {
        let a = actors();
        let base = fresh_object(&a, 16);
        let mut ra = base.clone();
        let mut rb = base.clone();
        ra.apply_append(&*a.provider, make_append(&a, &a.friend, &ra, 1)).unwrap();
        rb.apply_append(&*a.provider, make_append(&a, &a.owner, &rb, 2)).unwrap();
        let m1 = StoredObject::merge(&ra, &rb);
        let m2 = StoredObject::merge(&rb, &ra);
        // Same-seq conflict resolves identically from both sides.
        assert_eq!(m1.appends[&1], m2.appends[&1]);
        assert_eq!(m1.next_seq(), 2);
    }

    #[test]
    fn mapping_overwrite_needs_challenge_and_higher_version() {
        let a = actors();
        let fid = hash160(b"user-mapping");
        let mut pol = WritePolicy::owner_only(PrincipalBinding { user: a.owner.0, pk: a.owner.1.public.clone() });
        pol.mapping = true;
        let mut current =
            StoredObject::create(&*a.provider, &a.owner.1, a.owner.0, fid, pol, Bytes::from_static(b"node-A"));

        // New identity (key rotation): same user, new keys, version 2.
        let new_kp = a.provider.keypair_from_credentials("owner", "pw-rotated");
        let mut pol2 = WritePolicy::owner_only(PrincipalBinding { user: a.owner.0, pk: new_kp.public.clone() });
        pol2.mapping = true;
        let mut candidate =
            StoredObject::create(&*a.provider, &new_kp, a.owner.0, fid, pol2, Bytes::from_static(b"node-B"));
        candidate.version = 2;
        // Re-sign for version 2.
        candidate.base_sig = StoredObject::sign_replace(
            &*a.provider, &new_kp.secret, &fid, 2, &candidate.policy, b"node-B", 0,
        );

        assert_eq!(
            current.apply_mapping_overwrite(&*a.provider, candidate.clone(), false).unwrap_err(),
            StorageError::ChallengeFailed
        );
        let mut stale = candidate.clone();
        stale.version = 1;
        stale.base_sig =
            StoredObject::sign_replace(&*a.provider, &new_kp.secret, &fid, 1, &stale.policy, b"node-B", 0);
        assert_eq!(
            current.apply_mapping_overwrite(&*a.provider, stale, true).unwrap_err(),
            StorageError::VersionConflict
        );
        current.apply_mapping_overwrite(&*a.provider, candidate, true).unwrap();
        assert_eq!(current.base.as_ref(), b"node-B");
        assert_eq!(current.policy.owner.pk, new_kp.public);
    }

    #[test]
    fn quota_enforced_but_tombstones_exempt() {
        let a = actors();
        let mut store = NodeStore::new(2000, DEFAULT_CACHE_TTL_MS, 5);
        let mut stored = 0;
        let mut rejected = false;
        for i in 0..10u8 {
            let fid = hash160(&[b"f", &[i][..]].concat());
            let obj = StoredObject::create(
                &*a.provider,
                &a.owner.1,
                a.owner.0,
                fid,
                WritePolicy::owner_only(PrincipalBinding { user: a.owner.0, pk: a.owner.1.public.clone() }),
                Bytes::from(vec![0u8; 400]),
            );
            match store.put(obj) {
                Ok(()) => stored += 1,
                Err(StorageError::StorageFull) => {
                    rejected = true;
                    break;
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert!(rejected, "quota should have kicked in (stored {stored})");
        assert!(store.used_bytes() <= store.quota);

        // Tombstones always fit.
        let mut tomb = StoredObject::create(
            &*a.provider,
            &a.owner.1,
            a.owner.0,
            hash160(b"tomb"),
            WritePolicy::owner_only(PrincipalBinding { user: a.owner.0, pk: a.owner.1.public.clone() }),
            Bytes::from(vec![0u8; 4000]),
        );
        let sig = StoredObject::sign_delete(&*a.provider, &a.owner.1.secret, &tomb.file_id, 2);
        tomb.apply_delete(&*a.provider, a.owner.0, &sig).unwrap();
        store.put(tomb).unwrap();
    }

    #[test]
    fn cache_respects_ttl() {
        let a = actors();
        let mut store = NodeStore::new(1 << 20, 30_000, 5);
        let obj = fresh_object(&a, 4);
        let fid = obj.file_id;
        store.cache_put(obj, 1_000);
        assert!(store.cache_get(&fid, 30_999).is_some());
        assert!(store.cache_get(&fid, 31_000).is_none());
        // And it stays gone.
        assert!(store.cache_get(&fid, 1_500).is_none());
    }

    #[test]
    fn traffic_balancing_round_robins_after_threshold() {
        let a = actors();
        let mut store = NodeStore::new(1 << 20, 30_000, 5);
        let obj = fresh_object(&a, 4);
        let fid = obj.file_id;
        store.put(obj).unwrap();
        let r1 = hash160(b"recv1");
        let r2 = hash160(b"recv2");
        store.add_receiver(&fid, r1);
        store.add_receiver(&fid, r2);

        let mut redirects = Vec::new();
        for i in 0..8u64 {
            if let Some(r) = store.record_request(&fid, 10_000 + i * 10) {
                redirects.push(r);
            }
        }
        // Threshold 5/s: first five pass, the rest alternate receivers.
        assert_eq!(redirects, vec![r1, r2, r1]);

        // Old requests age out of the window: a quiet second resets it.
        assert!(store.record_request(&fid, 20_000).is_none());

        // An update clears the receiver list (their caches are stale).
        store.clear_receivers(&fid);
        for i in 0..8u64 {
            assert!(store.record_request(&fid, 30_000 + i).is_none());
        }
    }

    #[test]
    fn receipts_verify_and_reject_tamper() {
        let a = actors();
        let replica_kp = a.provider.keypair_from_credentials("replica", "pw");
        let replica_id = a.provider.key_id(&replica_kp.public.material);
        let obj = fresh_object(&a, 4);
        let r = StoreReceipt::sign(
            &*a.provider, &replica_kp.secret, obj.file_id, obj.version, replica_id, obj.content_hash(),
        );
        assert!(r.verify(&*a.provider, &replica_kp.public));
        let mut bad = r.clone();
        bad.version = 9;
        assert!(!bad.verify(&*a.provider, &replica_kp.public));
    }

    #[test]
    fn salted_ids_are_distinct_and_stable() {
        let base = hash160(b"f");
        assert_eq!(salted_id(&base, 0), base);
        let s: std::collections::BTreeSet<Id> = (0..=MAX_FILE_SALTS).map(|i| salted_id(&base, i)).collect();
        assert_eq!(s.len(), 1 + MAX_FILE_SALTS as usize);
        assert_eq!(salted_id(&base, 2), salted_id(&base, 2));
    }

    proptest! {
        #[test]
        fn object_encoding_roundtrips(seed in any::<u64>(), n_appends in 0usize..6, base_len in 0usize..200) {
            let a = actors();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            use rand::{Rng, RngExt};
            let mut obj = fresh_object(&a, 16);
            let mut base = vec![0u8; base_len];
            rng.fill_bytes(&mut base);
            let sig = StoredObject::sign_replace(&*a.provider, &a.owner.1.secret, &obj.file_id, 2, &obj.policy, &base, 0);
            obj.apply_replace(&*a.provider, a.owner.0, &a.owner.1.public, 2, None, Bytes::from(base), 0, &sig).unwrap();
            for i in 0..n_appends {
                let len = rng.random_range(0usize..64);
                let mut payload = vec![0u8; len];
                rng.fill_bytes(&mut payload);
                let rec = AppendRec::sign(
                    &*a.provider, &a.friend.1.secret, a.friend.0, a.friend.1.public.clone(),
                    &obj.file_id, hash160(&[b"u", &[i as u8][..]].concat()), AppendKind::Add, Bytes::from(payload),
                );
                obj.apply_append(&*a.provider, rec).unwrap();
            }
            obj.validate(&*a.provider).unwrap();
            let enc = obj.encode();
            let back = StoredObject::decode(&enc).unwrap();
            prop_assert_eq!(&back, &obj);
            prop_assert_eq!(back.encode(), enc);
        }
    }
}
