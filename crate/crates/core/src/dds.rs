//! Distributed data structures: append-ordered lists and sets, stored as a
//! root object plus fixed-capacity bucket objects, generic over any backend
//! that can insert/fetch/mutate stored objects.
//!
//! Naming is deterministic so independent writers agree without
//! coordination: a structure `name` owned by user `u` roots at
//! `hash(obj, u, name)`, and bucket `m` (1-based) lives at the id of
//! `name_m`. Bucket `m` holds the entries with global slots
//! `(m−1)·s … m·s−1`, where `s` is the structure's bucket size.
//!
//! Entry confidentiality: private structures seal every entry to a reader
//! group principal whose key item the owner maintains; public structures
//! store entry plaintext. Either way the *storage* layer only sees opaque
//! append payloads plus plaintext write policies.

use std::collections::BTreeMap;
use std::sync::Arc;

use bytes::Bytes;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::crypto::{CryptoProvider, KeyPair, PublicKey};
use crate::id::{hash160_parts, Id};
use crate::item::{ChainResolver, ItemError, SecureItem};
use crate::storage::{
    salted_id, AppendKind, AppendRec, PrincipalBinding, StorageError, StoreReceipt, StoredObject, WritePolicy,
    WriterRule, MAX_FILE_SALTS,
};
use crate::wire::{Reader, WireError, Writer};

// ---------------------------------------------------------------------------
// Client abstraction
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ClientError {
    #[error("storage: {0}")]
    Storage(#[from] StorageError),
    #[error("item: {0}")]
    Item(#[from] ItemError),
    #[error("operation timed out")]
    Timeout,
    #[error("no route to responsible node")]
    NoRoute,
    #[error("{0}")]
    Failed(String),
}

impl From<WireError> for ClientError {
    fn from(e: WireError) -> Self {
        ClientError::Item(ItemError::Malformed(e))
    }
}

pub fn is_not_found(e: &ClientError) -> bool {
    matches!(e, ClientError::Storage(StorageError::NotFound))
}

#[derive(Debug, Clone)]
pub struct InsertReport {
    /// Final id the object landed under (after any salting).
    pub file_id: Id,
    pub salt: u8,
    pub receipts: Vec<StoreReceipt>,
}

/// The acting principal: user id, their key pair, login name.
#[derive(Debug, Clone)]
pub struct ActorCtx {
    pub user: Id,
    pub username: String,
    pub keys: KeyPair,
}

impl ActorCtx {
    pub fn binding(&self) -> PrincipalBinding {
        PrincipalBinding { user: self.user, pk: self.keys.public.clone() }
    }
}

pub fn user_principal(username: &str) -> Id {
    hash160_parts(&[b"user", username.as_bytes()])
}

/// Network-independent storage client: the simulator implements this by
/// running distributed operations to completion; [`FakeDht`] implements it
/// in memory with the same validation rules.
pub trait StorageClient {
    fn provider(&self) -> Arc<dyn CryptoProvider>;
    fn rng(&mut self) -> &mut ChaCha12Rng;

    /// Stores a fresh object under `obj.file_id` (no salting here).
    fn insert(&mut self, obj: StoredObject) -> Result<InsertReport, ClientError>;

    /// Retrieves the current object (base + live appends).
    fn fetch(&mut self, file_id: &Id) -> Result<StoredObject, ClientError>;

    /// Replaces the base (optimistic concurrency, pre-signed).
    #[allow(clippy::too_many_arguments)]
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
    ) -> Result<(), ClientError>;

    /// Appends one signed record; returns the assigned sequence number.
    fn append(&mut self, file_id: &Id, rec: AppendRec) -> Result<u64, ClientError>;

    /// Owner-signed deletion.
    fn delete(&mut self, file_id: &Id, author: Id, new_version: u64, sig: Bytes) -> Result<(), ClientError>;
}

/// Insert retrying under salted ids when the target neighborhood is full.
pub fn insert_salted<C: StorageClient>(client: &mut C, mut obj: StoredObject, actor: &ActorCtx) -> Result<InsertReport, ClientError> {
    let base_id = obj.file_id;
    let mut last = None;
    for salt in 0..=MAX_FILE_SALTS {
        let fid = salted_id(&base_id, salt);
        if fid != obj.file_id {
            // Re-sign under the relocated id.
            obj = StoredObject::create(
                &*client.provider(),
                &actor.keys,
                obj.base_author,
                fid,
                obj.policy.clone(),
                obj.base.clone(),
            );
        }
        match client.insert(obj.clone()) {
            Ok(mut rep) => {
                rep.salt = salt;
                return Ok(rep);
            }
            Err(ClientError::Storage(StorageError::StorageFull)) => {
                last = Some(ClientError::Storage(StorageError::StorageFull));
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(ClientError::Storage(StorageError::StorageFull)))
}

/// Fetch following the same salt ladder an insert would have used.
pub fn fetch_salted<C: StorageClient>(client: &mut C, base_id: &Id) -> Result<StoredObject, ClientError> {
    let mut last = ClientError::Storage(StorageError::NotFound);
    for salt in 0..=MAX_FILE_SALTS {
        match client.fetch(&salted_id(base_id, salt)) {
            Ok(o) => return Ok(o),
            Err(e) if is_not_found(&e) => {
                last = e;
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

// ---------------------------------------------------------------------------
// Naming
// ---------------------------------------------------------------------------

/// Id of a named object owned by `owner`.
pub fn object_id(owner: &Id, name: &str) -> Id {
    hash160_parts(&[b"obj", &owner.0, name.as_bytes()])
}

/// Bucket `m` of structure `name` is itself an object named `name_m`.
pub fn bucket_name(name: &str, m: u32) -> String {
    format!("{name}_{m}")
}

/// Where a group principal's key item is stored.
pub fn group_item_id(group: &Id) -> Id {
    hash160_parts(&[b"group-item", &group.0])
}

/// Where a user's mapping object lives: the hash of the user principal.
pub fn mapping_id(user: &Id) -> Id {
    hash160_parts(&[b"mapping", &user.0])
}

// ---------------------------------------------------------------------------
// Structure roots and entries
// ---------------------------------------------------------------------------

pub const DEFAULT_BUCKET_SIZE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DdsKind {
    List,
    Set,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Privacy {
    /// Entries sealed to this reader-group principal.
    Private(Id),
    Public,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdsRoot {
    pub kind: DdsKind,
    pub name: String,
    pub bucket_size: u32,
    pub privacy: Privacy,
    /// Lazily maintained tail hint: appends start probing at this bucket.
    pub tail_hint: u32,
}

impl DdsRoot {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.u8(match self.kind {
            DdsKind::List => 0,
            DdsKind::Set => 1,
        });
        w.str(&self.name);
        w.u32(self.bucket_size);
        match &self.privacy {
            Privacy::Private(g) => {
                w.u8(0);
                w.id(g);
            }
            Privacy::Public => {
                w.u8(1);
            }
        }
        w.u32(self.tail_hint);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<DdsRoot, WireError> {
        let mut r = Reader::new(buf);
        let kind = match r.u8()? {
            0 => DdsKind::List,
            1 => DdsKind::Set,
            t => return Err(WireError::BadTag(t)),
        };
        let name = r.str()?.to_string();
        let bucket_size = r.u32()?;
        let privacy = match r.u8()? {
            0 => Privacy::Private(r.id()?),
            1 => Privacy::Public,
            t => return Err(WireError::BadTag(t)),
        };
        let tail_hint = r.u32()?;
        r.finish()?;
        Ok(DdsRoot { kind, name, bucket_size, privacy, tail_hint })
    }
}

/// Plaintext of one entry before sealing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryPlain {
    /// Set-membership key (empty for plain lists).
    pub member_key: Bytes,
    pub data: Bytes,
}

impl EntryPlain {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.bytes(&self.member_key);
        w.bytes(&self.data);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<EntryPlain, WireError> {
        let mut r = Reader::new(buf);
        let member_key = r.bytes_owned()?;
        let data = r.bytes_owned()?;
        r.finish()?;
        Ok(EntryPlain { member_key, data })
    }
}

/// A decrypted live entry as returned by reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdsEntry {
    pub bucket: u32,
    pub seq: u64,
    pub unique: Id,
    pub author: Id,
    pub member_key: Bytes,
    pub data: Bytes,
}

/// Reference to a structure: owner + name (ids derive from these).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdsRef {
    pub owner: Id,
    pub name: String,
}

impl DdsRef {
    pub fn root_id(&self) -> Id {
        object_id(&self.owner, &self.name)
    }

    pub fn bucket_id(&self, m: u32) -> Id {
        object_id(&self.owner, &bucket_name(&self.name, m))
    }
}

// ---------------------------------------------------------------------------
// Structure operations
// ---------------------------------------------------------------------------

/// Creates the root object of a list/set.
///
/// `writers` become authorized appenders (bound by key so replicas verify
/// locally) and may create missing buckets. The reader group for private
/// structures must already exist (see [`create_reader_group`]).
#[allow(clippy::too_many_arguments)]
pub fn dds_create<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    kind: DdsKind,
    name: &str,
    privacy: Privacy,
    writers: WriterRule,
    bucket_size: u32,
) -> Result<DdsRef, ClientError> {
    let provider = client.provider();
    let dref = DdsRef { owner: actor.user, name: name.to_string() };
    let root = DdsRoot { kind, name: name.to_string(), bucket_size, privacy: privacy.clone(), tail_hint: 1 };
    let base = seal_structure_blob(client, actor, &privacy, &root.encode())?;
    let policy = WritePolicy {
        owner: actor.binding(),
        append: writers,
        replace: WriterRule::Nobody,
        append_cap: 0,
        mapping: false,
    };
    let obj = StoredObject::create(&*provider, &actor.keys, actor.user, dref.root_id(), policy, base);
    insert_salted(client, obj, actor)?;
    Ok(dref)
}

/// Seals structure metadata / entries according to privacy.
fn seal_structure_blob<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    privacy: &Privacy,
    plain: &[u8],
) -> Result<Bytes, ClientError> {
    match privacy {
        Privacy::Public => Ok(Bytes::copy_from_slice(plain)),
        Privacy::Private(group) => {
            let provider = client.provider();
            let gpk = fetch_group_public_key(client, group)?;
            let item = SecureItem::seal(&*provider, client.rng(), &actor.keys, plain, &[(*group, &gpk)], false);
            Ok(item.encode())
        }
    }
}

/// Opens structure metadata / an entry according to privacy.
fn open_structure_blob<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    privacy: &Privacy,
    blob: &[u8],
) -> Result<Bytes, ClientError> {
    match privacy {
        Privacy::Public => Ok(Bytes::copy_from_slice(blob)),
        Privacy::Private(_) => {
            let item = SecureItem::decode(blob)?;
            Ok(open_with_groups(client, actor, &item)?)
        }
    }
}

/// Opens a sealed item using the actor's key plus transitively fetched
/// group-key items.
pub fn open_with_groups<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    item: &SecureItem,
) -> Result<Bytes, ItemError> {
    let provider = client.provider();
    // Pre-fetch the group items reachable from the wraps (the resolver
    // itself cannot borrow the client mutably from inside the closure).
    let mut fetched: BTreeMap<Id, SecureItem> = BTreeMap::new();
    let mut frontier: Vec<Id> = item.wrapped.keys().copied().collect();
    let mut guard = 0;
    while let Some(gid) = frontier.pop() {
        if gid == actor.user || fetched.contains_key(&gid) {
            continue;
        }
        guard += 1;
        if guard > 64 {
            break;
        }
        if let Ok(obj) = client.fetch(&group_item_id(&gid)) {
            if let Ok(gitem) = SecureItem::decode(&obj.base) {
                frontier.extend(gitem.wrapped.keys().copied());
                fetched.insert(gid, gitem);
            }
        }
    }
    let mut resolver =
        ChainResolver::new(actor.user, &actor.keys.secret, move |gid: &Id| fetched.get(gid).cloned());
    item.open(&*provider, &mut resolver)
}

/// The root's decrypted metadata plus its raw stored object.
pub fn dds_root<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
) -> Result<(DdsRoot, StoredObject), ClientError> {
    let obj = fetch_salted(client, &dref.root_id())?;
    if obj.deleted {
        return Err(StorageError::Deleted.into());
    }
    // Privacy isn't knowable before opening: try plaintext decode first,
    // fall back to sealed.
    if let Ok(root) = DdsRoot::decode(&obj.base) {
        return Ok((root, obj));
    }
    let item = SecureItem::decode(&obj.base)?;
    let plain = open_with_groups(client, actor, &item)?;
    Ok((DdsRoot::decode(&plain)?, obj))
}

/// Appends an entry; creates the tail bucket on demand. Returns (bucket,
/// seq). Set semantics are enforced by readers (`member_key` dedup), but
/// callers may pre-check membership for idempotence.
/// Where an append landed: bucket number, sequence slot, and the entry's
/// unique id (needed later to tombstone it).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendOutcome {
    pub bucket: u32,
    pub seq: u64,
    pub unique: Id,
}

pub fn dds_append<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
    entry: EntryPlain,
) -> Result<AppendOutcome, ClientError> {
    let provider = client.provider();
    let (root, root_obj) = dds_root(client, actor, dref)?;
    let payload = seal_structure_blob(client, actor, &root.privacy, &entry.encode())?;
    let mut nonce = [0u8; 8];
    client.rng().fill_bytes(&mut nonce);
    let unique = hash160_parts(&[b"entry", &actor.user.0, &payload, &nonce]);

    let mut m = root.tail_hint.max(1);
    for _ in 0..4096 {
        let bucket_id = dref.bucket_id(m);
        let rec = AppendRec::sign(
            &*provider,
            &actor.keys.secret,
            actor.user,
            actor.keys.public.clone(),
            &bucket_id,
            unique,
            AppendKind::Add,
            payload.clone(),
        );
        match client.append(&bucket_id, rec) {
            Ok(seq) => {
                maybe_bump_hint(client, actor, &root, &root_obj, m);
                return Ok(AppendOutcome { bucket: m, seq, unique });
            }
            Err(e) if is_not_found(&e) => {
                create_bucket(client, actor, dref, &root, &root_obj, m)?;
                continue; // retry same bucket
            }
            Err(ClientError::Storage(StorageError::CapacityExceeded)) => {
                m += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
    }
    Err(ClientError::Failed("bucket probing exceeded bound".into()))
}

/// Any authorized writer may create a missing bucket; its policy mirrors
/// the root's and readers verify that mirror on read.
fn create_bucket<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
    root: &DdsRoot,
    root_obj: &StoredObject,
    m: u32,
) -> Result<(), ClientError> {
    let provider = client.provider();
    let policy = WritePolicy {
        owner: root_obj.policy.owner.clone(),
        append: root_obj.policy.append.clone(),
        replace: WriterRule::Nobody,
        append_cap: root.bucket_size,
        mapping: false,
    };
    let obj = StoredObject::create(
        &*provider,
        &actor.keys,
        actor.user,
        dref.bucket_id(m),
        policy,
        Bytes::new(),
    );
    match client.insert(obj) {
        Ok(_) => Ok(()),
        // Someone else created it concurrently: fine.
        Err(ClientError::Storage(StorageError::VersionConflict)) => Ok(()),
        Err(e) => Err(e),
    }
}

/// Owner lazily advances the root's tail hint; non-owners skip (appends
/// still work from an older hint, just with extra probes).
fn maybe_bump_hint<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    root: &DdsRoot,
    root_obj: &StoredObject,
    m: u32,
) {
    if m <= root.tail_hint || actor.user != root_obj.policy.owner.user {
        return;
    }
    let provider = client.provider();
    let mut new_root = root.clone();
    new_root.tail_hint = m;
    let Ok(base) = seal_structure_blob(client, actor, &root.privacy, &new_root.encode()) else {
        return;
    };
    let v = root_obj.version + 1;
    let sig = StoredObject::sign_replace(
        &*provider, &actor.keys.secret, &root_obj.file_id, v, &root_obj.policy, &base, root_obj.cleared_seq,
    );
    let _ = client.replace(
        &root_obj.file_id,
        actor.user,
        &actor.keys.public,
        v,
        None,
        base,
        root_obj.cleared_seq,
        sig,
    );
}

/// Reads all live entries of a structure in (bucket, seq) order, decrypting
/// per privacy and applying tombstones. Set structures additionally
/// deduplicate by member key (first write wins).
pub fn dds_read<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
) -> Result<Vec<DdsEntry>, ClientError> {
    let (root, root_obj) = dds_root(client, actor, dref)?;
    let mut out = Vec::new();
    let mut m = 1u32;
    loop {
        let bucket_id = dref.bucket_id(m);
        let obj = match client.fetch(&bucket_id) {
            Ok(o) => o,
            Err(e) if is_not_found(&e) => break,
            Err(e) => return Err(e),
        };
        if obj.deleted {
            break;
        }
        // Reject buckets whose policy does not mirror the root (someone
        // squatting a future bucket name cannot inject entries).
        if obj.policy.owner != root_obj.policy.owner || obj.policy.append != root_obj.policy.append {
            return Err(ClientError::Failed(format!("bucket {m} policy mismatch")));
        }
        let mut dead: Vec<Id> = Vec::new();
        for rec in obj.appends.values() {
            if let AppendKind::Tombstone(t) = rec.kind {
                dead.push(t);
            }
        }
        for (seq, rec) in &obj.appends {
            if !matches!(rec.kind, AppendKind::Add) || dead.contains(&rec.unique) {
                continue;
            }
            let plain = open_structure_blob(client, actor, &root.privacy, &rec.payload)?;
            let e = EntryPlain::decode(&plain)?;
            out.push(DdsEntry {
                bucket: m,
                seq: *seq,
                unique: rec.unique,
                author: rec.author,
                member_key: e.member_key,
                data: e.data,
            });
        }
        m += 1;
    }
    if root.kind == DdsKind::Set {
        let mut seen: BTreeMap<Bytes, ()> = BTreeMap::new();
        out.retain(|e| seen.insert(e.member_key.clone(), ()).is_none());
    }
    Ok(out)
}

/// Tombstones the entry with the given unique id (author or owner only —
/// enforced replica-side).
pub fn dds_remove_entry<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
    bucket: u32,
    target: Id,
) -> Result<(), ClientError> {
    let provider = client.provider();
    let bucket_id = dref.bucket_id(bucket);
    let mut nonce = [0u8; 8];
    client.rng().fill_bytes(&mut nonce);
    let rec = AppendRec::sign(
        &*provider,
        &actor.keys.secret,
        actor.user,
        actor.keys.public.clone(),
        &bucket_id,
        hash160_parts(&[b"tomb", &target.0, &nonce]),
        AppendKind::Tombstone(target),
        Bytes::new(),
    );
    client.append(&bucket_id, rec)?;
    Ok(())
}

/// Set-flavored helpers.
pub fn set_add<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
    member_key: Bytes,
    data: Bytes,
) -> Result<bool, ClientError> {
    let existing = dds_read(client, actor, dref)?;
    if existing.iter().any(|e| e.member_key == member_key) {
        return Ok(false);
    }
    dds_append(client, actor, dref, EntryPlain { member_key, data })?;
    Ok(true)
}

pub fn set_remove<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
    member_key: &[u8],
) -> Result<bool, ClientError> {
    let existing = dds_read(client, actor, dref)?;
    let mut any = false;
    for e in existing.iter().filter(|e| e.member_key.as_ref() == member_key) {
        dds_remove_entry(client, actor, dref, e.bucket, e.unique)?;
        any = true;
    }
    Ok(any)
}

pub fn set_contains<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    dref: &DdsRef,
    member_key: &[u8],
) -> Result<bool, ClientError> {
    Ok(dds_read(client, actor, dref)?.iter().any(|e| e.member_key.as_ref() == member_key))
}

// ---------------------------------------------------------------------------
// Reader groups
// ---------------------------------------------------------------------------

/// Creates (or rewrites) a reader-group principal: generates the group key
/// pair and stores its key item sealed to `members`. Returns the group id.
pub fn create_reader_group<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    name: &str,
    members: &[(Id, PublicKey)],
) -> Result<(Id, KeyPair), ClientError> {
    let provider = client.provider();
    let mut seed = [0u8; 16];
    client.rng().fill_bytes(&mut seed);
    let (gid, gkeys) = crate::item::derive_group_principal(&*provider, &actor.user, name, &seed);
    store_group_item(client, actor, &gid, &gkeys, members, 1)?;
    Ok((gid, gkeys))
}

/// (Re)stores the sealed key item for an existing group — used on member
/// grant/revoke. `version` 1 creates, otherwise replaces.
pub fn store_group_item<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    group: &Id,
    gkeys: &KeyPair,
    members: &[(Id, PublicKey)],
    version: u64,
) -> Result<(), ClientError> {
    let provider = client.provider();
    let refs: Vec<(Id, &PublicKey)> = members.iter().map(|(id, pk)| (*id, pk)).collect();
    let payload = crate::item::encode_group_keys(gkeys);
    let item = SecureItem::seal(&*provider, client.rng(), &actor.keys, &payload, &refs, false);
    let fid = group_item_id(group);
    if version == 1 {
        let obj = StoredObject::create(
            &*provider,
            &actor.keys,
            actor.user,
            fid,
            WritePolicy::owner_only(actor.binding()),
            item.encode(),
        );
        insert_salted(client, obj, actor)?;
    } else {
        let current = client.fetch(&fid)?;
        let base = item.encode();
        let sig = StoredObject::sign_replace(
            &*provider, &actor.keys.secret, &fid, version, &current.policy, &base, current.cleared_seq,
        );
        client.replace(&fid, actor.user, &actor.keys.public, version, None, base, current.cleared_seq, sig)?;
    }
    Ok(())
}

/// The group's public key, fetched from its key item (the *public* half is
/// readable: it sits in the sealed payload, but the sealer needs it, so we
/// also publish it as the item's owner-visible envelope). To keep a single
/// source, the public key rides in the key item's wrapped form only; the
/// owner (who cannot open the group item unless a member) keeps sealing
/// rights by being the item's owner. Practically: fetch + decode the stored
/// item and read the group public key from its payload if we can open it,
/// else from the separate public-key record.
pub fn fetch_group_public_key<C: StorageClient>(client: &mut C, group: &Id) -> Result<PublicKey, ClientError> {
    let obj = client.fetch(&group_pubkey_id(group))?;
    Ok(PublicKey { material: obj.base.clone() })
}

pub fn group_pubkey_id(group: &Id) -> Id {
    hash160_parts(&[b"group-pub", &group.0])
}

/// Publishes the plaintext public half of a group key so any writer can
/// seal entries to the group.
pub fn publish_group_public_key<C: StorageClient>(
    client: &mut C,
    actor: &ActorCtx,
    group: &Id,
    pk: &PublicKey,
) -> Result<(), ClientError> {
    let provider = client.provider();
    let obj = StoredObject::create(
        &*provider,
        &actor.keys,
        actor.user,
        group_pubkey_id(group),
        WritePolicy::owner_only(actor.binding()),
        pk.material.clone(),
    );
    insert_salted(client, obj, actor)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// In-memory backend
// ---------------------------------------------------------------------------

/// Single-map DHT double applying exactly the replica validation rules;
/// used for fast model tests of everything above the network.
pub struct FakeDht {
    provider: Arc<dyn CryptoProvider>,
    rng: ChaCha12Rng,
    pub objects: BTreeMap<Id, StoredObject>,
    /// Fetch counter (probe-complexity assertions).
    pub fetches: u64,
}

impl FakeDht {
    pub fn new(provider: Arc<dyn CryptoProvider>, seed: u64) -> FakeDht {
        use rand::SeedableRng;
        FakeDht { provider, rng: ChaCha12Rng::seed_from_u64(seed), objects: BTreeMap::new(), fetches: 0 }
    }

    pub fn actor(&self, username: &str) -> ActorCtx {
        ActorCtx {
            user: user_principal(username),
            username: username.to_string(),
            keys: self.provider.keypair_from_credentials(username, "pw"),
        }
    }
}

impl StorageClient for FakeDht {
    fn provider(&self) -> Arc<dyn CryptoProvider> {
        self.provider.clone()
    }

    fn rng(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }

    fn insert(&mut self, obj: StoredObject) -> Result<InsertReport, ClientError> {
        obj.validate(&*self.provider).map_err(ClientError::Storage)?;
        if obj.version != 1 || !obj.appends.is_empty() {
            return Err(StorageError::VersionConflict.into());
        }
        if self.objects.contains_key(&obj.file_id) {
            return Err(StorageError::VersionConflict.into());
        }
        let report = InsertReport { file_id: obj.file_id, salt: 0, receipts: Vec::new() };
        self.objects.insert(obj.file_id, obj);
        Ok(report)
    }

    fn fetch(&mut self, file_id: &Id) -> Result<StoredObject, ClientError> {
        self.fetches += 1;
        match self.objects.get(file_id) {
            Some(o) if !o.deleted => Ok(o.clone()),
            Some(_) => Err(StorageError::Deleted.into()),
            None => Err(StorageError::NotFound.into()),
        }
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
        let obj = self.objects.get_mut(file_id).ok_or(StorageError::NotFound)?;
        obj.apply_replace(&*self.provider, author, author_pk, new_version, new_policy, new_base, new_cleared, &sig)
            .map_err(ClientError::Storage)
    }

    fn append(&mut self, file_id: &Id, rec: AppendRec) -> Result<u64, ClientError> {
        let obj = self.objects.get_mut(file_id).ok_or(StorageError::NotFound)?;
        obj.apply_append(&*self.provider, rec).map_err(ClientError::Storage)
    }

    fn delete(&mut self, file_id: &Id, author: Id, new_version: u64, sig: Bytes) -> Result<(), ClientError> {
        let obj = self.objects.get_mut(file_id).ok_or(StorageError::NotFound)?;
        if new_version != obj.version + 1 {
            return Err(StorageError::VersionConflict.into());
        }
        obj.apply_delete(&*self.provider, author, &sig).map_err(ClientError::Storage)
    }
}
