//! Application plugins on top of storage + messaging: accounts and
//! profiles, friendships with a per-user reader group, messaging with
//! store-backed inboxes and outboxes, live chat sessions over pub-sub,
//! interest groups, a public forum, photo albums and personal file folders
//! with chunked uploads, walls, and votings.
//!
//! Everything here is generic over the storage/messaging clients, so the
//! same code runs against the in-memory backend in tests and against the
//! full network simulation.
//!
//! Privacy model per user:
//! * a **friends group** (reader-group principal) — readers of the wall,
//!   albums and photos; grows on every accepted friendship;
//! * a **self group** with the owner as its only member — seals outbox
//!   entries and file-folder contents;
//! * public objects (profile, mapping, forum, votings) stay plaintext and
//!   rely on signatures only.

use bytes::Bytes;

use crate::channels::{
    inbox_create, inbox_deposit, inbox_drain, InboxMessage, Messenger, INBOX_KIND_CHAT,
    INBOX_KIND_FRIEND_ACCEPT, INBOX_KIND_FRIEND_REQUEST, INBOX_KIND_GROUP_INVITE, INBOX_KIND_NOTIFY,
};
use crate::crypto::{KeyPair, PublicKey};
use crate::dds::{
    create_reader_group, dds_append, dds_create, dds_read, dds_remove_entry, fetch_salted, insert_salted,
    mapping_id, object_id, open_with_groups, publish_group_public_key, set_add, store_group_item, user_principal,
    ActorCtx, ClientError, DdsKind, DdsRef, EntryPlain, Privacy, StorageClient,
};
use crate::id::{hash160_parts, Id};
use crate::item::SecureItem;
use crate::pht::{pht_create, pht_insert, pht_lookup, PhtRef};
use crate::storage::{StorageError, StoredObject, WritePolicy, WriterRule};
use crate::wire::{read_count, Reader, WireError, Writer};

/// Payloads larger than this are split into separately stored chunks.
pub const CHUNK_BYTES: usize = 16 * 1024;

// ---------------------------------------------------------------------------
// Encoded records
// ---------------------------------------------------------------------------

/// Username → key + home-node binding, stored under the mapping id so the
/// name is resolvable network-wide. The mapping write policy allows
/// overwrite only through the key-rotation challenge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingRecord {
    pub username: String,
    pub pk: PublicKey,
    pub node: Id,
}

impl MappingRecord {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.str(&self.username);
        w.bytes(&self.pk.material);
        w.id(&self.node);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<MappingRecord, WireError> {
        let mut r = Reader::new(buf);
        let m = MappingRecord {
            username: r.str()?.to_string(),
            pk: PublicKey { material: r.bytes_owned()? },
            node: r.id()?,
        };
        r.finish()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileData {
    pub username: String,
    pub city: String,
    pub country: String,
    pub gender: String,
}

impl ProfileData {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.str(&self.username);
        w.str(&self.city);
        w.str(&self.country);
        w.str(&self.gender);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<ProfileData, WireError> {
        let mut r = Reader::new(buf);
        let p = ProfileData {
            username: r.str()?.to_string(),
            city: r.str()?.to_string(),
            country: r.str()?.to_string(),
            gender: r.str()?.to_string(),
        };
        r.finish()?;
        Ok(p)
    }
}

/// Manifest for a chunked upload (files and photos share it).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileManifest {
    pub name: String,
    pub size: u64,
    pub chunks: Vec<Id>,
}

impl FileManifest {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.str(&self.name);
        w.u64(self.size);
        w.u32(self.chunks.len() as u32);
        for c in &self.chunks {
            w.id(c);
        }
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<FileManifest, WireError> {
        let mut r = Reader::new(buf);
        let name = r.str()?.to_string();
        let size = r.u64()?;
        let n = read_count(&mut r, 20)?;
        let mut chunks = Vec::with_capacity(n);
        for _ in 0..n {
            chunks.push(r.id()?);
        }
        r.finish()?;
        Ok(FileManifest { name, size, chunks })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VotingMeta {
    pub question: String,
    pub options: Vec<String>,
    pub public: bool,
}

impl VotingMeta {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.str(&self.question);
        w.u32(self.options.len() as u32);
        for o in &self.options {
            w.str(o);
        }
        w.bool(self.public);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<VotingMeta, WireError> {
        let mut r = Reader::new(buf);
        let question = r.str()?.to_string();
        let n = read_count(&mut r, 4)?;
        let mut options = Vec::with_capacity(n);
        for _ in 0..n {
            options.push(r.str()?.to_string());
        }
        let public = r.bool()?;
        r.finish()?;
        Ok(VotingMeta { question, options, public })
    }
}

/// One ballot in a voting's append log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ballot {
    pub voter: Id,
    pub choice: u32,
}

impl Ballot {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.id(&self.voter);
        w.u32(self.choice);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<Ballot, WireError> {
        let mut r = Reader::new(buf);
        let b = Ballot { voter: r.id()?, choice: r.u32()? };
        r.finish()?;
        Ok(b)
    }
}

/// Forum registry entry pointing at a thread's own list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadMeta {
    pub title: String,
    pub owner: Id,
    pub list_name: String,
}

impl ThreadMeta {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.str(&self.title);
        w.id(&self.owner);
        w.str(&self.list_name);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<ThreadMeta, WireError> {
        let mut r = Reader::new(buf);
        let t = ThreadMeta { title: r.str()?.to_string(), owner: r.id()?, list_name: r.str()?.to_string() };
        r.finish()?;
        Ok(t)
    }

    pub fn dref(&self) -> DdsRef {
        DdsRef { owner: self.owner, name: self.list_name.clone() }
    }
}

/// Reference to a voting object (owner + short name).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VotingRef {
    pub owner: Id,
    pub name: String,
}

impl VotingRef {
    pub fn object_id(&self) -> Id {
        object_id(&self.owner, &format!("voting:{}", self.name))
    }

    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.id(&self.owner);
        w.str(&self.name);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<VotingRef, WireError> {
        let mut r = Reader::new(buf);
        let v = VotingRef { owner: r.id()?, name: r.str()?.to_string() };
        r.finish()?;
        Ok(v)
    }
}

/// Reference to a group carried inside invitations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupRef {
    pub gid: Id,
    pub owner: Id,
    pub list_name: String,
}

impl GroupRef {
    pub fn encode(&self) -> Bytes {
        let mut w = Writer::new();
        w.id(&self.gid);
        w.id(&self.owner);
        w.str(&self.list_name);
        w.into_bytes()
    }

    pub fn decode(buf: &[u8]) -> Result<GroupRef, WireError> {
        let mut r = Reader::new(buf);
        let g = GroupRef { gid: r.id()?, owner: r.id()?, list_name: r.str()?.to_string() };
        r.finish()?;
        Ok(g)
    }

    pub fn dref(&self) -> DdsRef {
        DdsRef { owner: self.owner, name: self.list_name.clone() }
    }
}

// ---------------------------------------------------------------------------
// Accounts
// ---------------------------------------------------------------------------

/// A reader group whose membership the owner curates; the key pair stays
/// with the owner so new members can be sealed in without re-keying.
#[derive(Debug, Clone)]
pub struct OwnedGroup {
    pub gid: Id,
    pub keys: KeyPair,
    pub members: Vec<(Id, PublicKey)>,
    pub version: u64,
}

impl OwnedGroup {
    /// Seals the key item to the current members + the new one.
    fn grant<C: StorageClient>(
        &mut self,
        client: &mut C,
        actor: &ActorCtx,
        member: Id,
        pk: PublicKey,
    ) -> Result<(), ClientError> {
        if self.members.iter().any(|(m, _)| *m == member) {
            return Ok(());
        }
        self.members.push((member, pk));
        self.version += 1;
        store_group_item(client, actor, &self.gid, &self.keys, &self.members, self.version)
    }
}

/// Everything a logged-in user keeps locally: identity, home node and the
/// two reader groups. All object references derive from the principal.
#[derive(Debug, Clone)]
pub struct Account {
    pub actor: ActorCtx,
    pub node: Id,
    pub friends_group: OwnedGroup,
    pub self_group: OwnedGroup,
    /// Monotone counter for outgoing messages/posts.
    pub counter: u64,
}

impl Account {
    pub fn user(&self) -> Id {
        self.actor.user
    }

    fn next_counter(&mut self) -> u64 {
        self.counter += 1;
        self.counter
    }
}

pub fn wall_ref(owner: Id) -> DdsRef {
    DdsRef { owner, name: "wall".into() }
}

pub fn outbox_ref(owner: Id) -> DdsRef {
    DdsRef { owner, name: "outbox".into() }
}

pub fn albums_ref(owner: Id) -> DdsRef {
    DdsRef { owner, name: "albums".into() }
}

pub fn folders_ref(owner: Id) -> DdsRef {
    DdsRef { owner, name: "folders".into() }
}

pub fn votings_ref(owner: Id) -> DdsRef {
    DdsRef { owner, name: "votings".into() }
}

pub fn album_ref(owner: Id, album: &str) -> DdsRef {
    DdsRef { owner, name: format!("album:{album}") }
}

pub fn folder_list_ref(owner: Id, folder: &str) -> DdsRef {
    DdsRef { owner, name: format!("folder:{folder}") }
}

pub fn profile_id(user: &Id) -> Id {
    object_id(user, "profile")
}

/// Registers a user: mapping, profile, inbox, reader groups, wall, outbox
/// and the album/folder/voting registries. Idempotence is not attempted —
/// double registration fails on the mapping insert.
pub fn setup_account<C: StorageClient>(
    client: &mut C,
    username: &str,
    password: &str,
    node: Id,
    profile: ProfileData,
) -> Result<Account, ClientError> {
    let provider = client.provider();
    let keys = provider.keypair_from_credentials(username, password);
    let actor = ActorCtx { user: user_principal(username), username: username.to_string(), keys };

    // Mapping: find-user-by-name record, key-rotation protected.
    let mapping = MappingRecord { username: username.into(), pk: actor.keys.public.clone(), node };
    let policy = WritePolicy {
        owner: actor.binding(),
        append: WriterRule::Nobody,
        replace: WriterRule::Nobody,
        append_cap: 0,
        mapping: true,
    };
    let obj = StoredObject::create(&*provider, &actor.keys, actor.user, mapping_id(&actor.user), policy, mapping.encode());
    client.insert(obj)?;

    // Public profile, owner-replaceable.
    let obj = StoredObject::create(
        &*provider,
        &actor.keys,
        actor.user,
        profile_id(&actor.user),
        WritePolicy {
            owner: actor.binding(),
            append: WriterRule::Nobody,
            replace: WriterRule::Principals(vec![actor.binding()]),
            append_cap: 0,
            mapping: false,
        },
        profile.encode(),
    );
    insert_salted(client, obj, &actor)?;

    inbox_create(client, &actor)?;

    // Reader groups: friends (grows) and self (never grows).
    let me = vec![(actor.user, actor.keys.public.clone())];
    let (fgid, fkeys) = create_reader_group(client, &actor, "friends", &me)?;
    publish_group_public_key(client, &actor, &fgid, &fkeys.public)?;
    let (sgid, skeys) = create_reader_group(client, &actor, "self", &me)?;
    publish_group_public_key(client, &actor, &sgid, &skeys.public)?;

    let friends_group = OwnedGroup { gid: fgid, keys: fkeys, members: me.clone(), version: 1 };
    let self_group = OwnedGroup { gid: sgid, keys: skeys, members: me, version: 1 };

    // Friends set: owner-written, sealed to the friends group.
    dds_create(
        client,
        &actor,
        DdsKind::Set,
        "friends",
        Privacy::Private(friends_group.gid),
        WriterRule::Principals(vec![actor.binding()]),
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    // Wall: friends read, any friend writes (entries are sealed to the
    // friends group, so the append rule can stay open).
    dds_create(
        client,
        &actor,
        DdsKind::List,
        "wall",
        Privacy::Private(friends_group.gid),
        WriterRule::Anyone,
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    // Outbox: only the owner ever reads or writes.
    dds_create(
        client,
        &actor,
        DdsKind::List,
        "outbox",
        Privacy::Private(self_group.gid),
        WriterRule::Principals(vec![actor.binding()]),
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    // Registries.
    dds_create(
        client,
        &actor,
        DdsKind::List,
        "albums",
        Privacy::Private(friends_group.gid),
        WriterRule::Principals(vec![actor.binding()]),
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    dds_create(
        client,
        &actor,
        DdsKind::List,
        "folders",
        Privacy::Private(self_group.gid),
        WriterRule::Principals(vec![actor.binding()]),
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    dds_create(
        client,
        &actor,
        DdsKind::List,
        "votings",
        Privacy::Public,
        WriterRule::Principals(vec![actor.binding()]),
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;

    Ok(Account { actor, node, friends_group, self_group, counter: 0 })
}

/// Resolves a username to its principal, key and home node.
pub fn lookup_user<C: StorageClient>(client: &mut C, username: &str) -> Result<MappingRecord, ClientError> {
    let user = user_principal(username);
    let obj = client.fetch(&mapping_id(&user))?;
    Ok(MappingRecord::decode(&obj.base)?)
}

pub fn fetch_profile<C: StorageClient>(client: &mut C, user: &Id) -> Result<ProfileData, ClientError> {
    let obj = fetch_salted(client, &profile_id(user))?;
    Ok(ProfileData::decode(&obj.base)?)
}

// ---------------------------------------------------------------------------
// Friends
// ---------------------------------------------------------------------------

pub fn friend_request<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    to: Id,
    to_pk: &PublicKey,
) -> Result<(), ClientError> {
    let msg = InboxMessage {
        kind: INBOX_KIND_FRIEND_REQUEST,
        from: me.user(),
        sent_at: me.next_counter(),
        body: Bytes::from(me.actor.username.clone().into_bytes()),
    };
    inbox_deposit(client, &me.actor, &to, to_pk, &msg)?;
    Ok(())
}

/// Accepts a request: the requester becomes a member of my friends group
/// (can now read my wall/albums), lands in my friends set, and receives an
/// acceptance note.
pub fn friend_accept<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    requester: Id,
    requester_pk: &PublicKey,
) -> Result<(), ClientError> {
    let actor = me.actor.clone();
    me.friends_group.grant(client, &actor, requester, requester_pk.clone())?;
    set_add(
        client,
        &me.actor,
        &DdsRef { owner: me.user(), name: "friends".into() },
        Bytes::copy_from_slice(&requester.0),
        Bytes::new(),
    )?;
    let msg = InboxMessage {
        kind: INBOX_KIND_FRIEND_ACCEPT,
        from: me.user(),
        sent_at: me.next_counter(),
        body: Bytes::from(me.actor.username.clone().into_bytes()),
    };
    inbox_deposit(client, &me.actor, &requester, requester_pk, &msg)?;
    Ok(())
}

/// The requester's side of an accepted friendship: on seeing the
/// acceptance, it grants the new friend membership in its own friends
/// group (friendship is mutual) and records them in its friends set.
pub fn friend_record<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    friend: Id,
    friend_pk: &PublicKey,
) -> Result<(), ClientError> {
    let actor = me.actor.clone();
    me.friends_group.grant(client, &actor, friend, friend_pk.clone())?;
    set_add(
        client,
        &me.actor,
        &DdsRef { owner: me.user(), name: "friends".into() },
        Bytes::copy_from_slice(&friend.0),
        Bytes::new(),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Messaging
// ---------------------------------------------------------------------------

/// Sends a private message: sealed deposit into the recipient's inbox plus
/// a sealed copy in the sender's outbox.
pub fn message_send<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    to: Id,
    to_pk: &PublicKey,
    text: &str,
) -> Result<(), ClientError> {
    let msg = InboxMessage {
        kind: INBOX_KIND_CHAT,
        from: me.user(),
        sent_at: me.next_counter(),
        body: Bytes::copy_from_slice(text.as_bytes()),
    };
    inbox_deposit(client, &me.actor, &to, to_pk, &msg)?;
    dds_append(
        client,
        &me.actor,
        &outbox_ref(me.user()),
        EntryPlain { member_key: Bytes::new(), data: msg.encode() },
    )?;
    Ok(())
}

/// Drains the inbox (messages of every kind, in deposit order).
pub fn inbox_view<C: StorageClient>(client: &mut C, me: &Account) -> Result<Vec<InboxMessage>, ClientError> {
    inbox_drain(client, &me.actor)
}

pub fn outbox_view<C: StorageClient>(client: &mut C, me: &Account) -> Result<Vec<InboxMessage>, ClientError> {
    let entries = dds_read(client, &me.actor, &outbox_ref(me.user()))?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(InboxMessage::decode(&e.data)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Live chat
// ---------------------------------------------------------------------------

pub fn chat_topic(host: &Id, session: &str) -> Id {
    hash160_parts(&[b"chat", &host.0, session.as_bytes()])
}

/// Opens a session: the host subscribes and invites the listed friends
/// through their inboxes (the topic id rides in the invitation).
pub fn chat_open<C: StorageClient + Messenger>(
    client: &mut C,
    me: &mut Account,
    session: &str,
    invitees: &[(Id, PublicKey)],
) -> Result<Id, ClientError> {
    let topic = chat_topic(&me.user(), session);
    client.subscribe(&topic)?;
    for (user, pk) in invitees {
        let mut w = Writer::new();
        w.id(&topic);
        let msg = InboxMessage {
            kind: INBOX_KIND_NOTIFY,
            from: me.user(),
            sent_at: me.next_counter(),
            body: w.into_bytes(),
        };
        inbox_deposit(client, &me.actor, user, pk, &msg)?;
    }
    Ok(topic)
}

pub fn chat_join<C: Messenger>(client: &mut C, topic: &Id) -> Result<(), ClientError> {
    client.subscribe(topic)
}

pub fn chat_send<C: StorageClient + Messenger>(
    client: &mut C,
    me: &mut Account,
    topic: &Id,
    text: &str,
) -> Result<u32, ClientError> {
    let provider = client.provider();
    let counter = me.next_counter();
    let env = crate::channels::Envelope::sign(
        &*provider,
        &me.actor.keys.secret,
        *topic,
        me.user(),
        me.actor.keys.public.clone(),
        counter,
        0,
        Bytes::copy_from_slice(text.as_bytes()),
    );
    client.publish(topic, env)
}

pub fn chat_leave<C: Messenger>(client: &mut C, topic: &Id) -> Result<(), ClientError> {
    client.unsubscribe(topic)
}

// ---------------------------------------------------------------------------
// Groups
// ---------------------------------------------------------------------------

/// A group someone runs: reader group + message list, plus the owner-side
/// curation state.
#[derive(Debug, Clone)]
pub struct GroupOwned {
    pub name: String,
    pub group: OwnedGroup,
    pub list: DdsRef,
}

impl GroupOwned {
    pub fn gref(&self) -> GroupRef {
        GroupRef { gid: self.group.gid, owner: self.list.owner, list_name: self.list.name.clone() }
    }
}

pub fn group_create<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    name: &str,
) -> Result<GroupOwned, ClientError> {
    let members = vec![(me.user(), me.actor.keys.public.clone())];
    let (gid, gkeys) = create_reader_group(client, &me.actor, &format!("group:{name}"), &members)?;
    publish_group_public_key(client, &me.actor, &gid, &gkeys.public)?;
    let list = dds_create(
        client,
        &me.actor,
        DdsKind::List,
        &format!("group-list:{name}"),
        Privacy::Private(gid),
        WriterRule::Anyone,
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    let owned = GroupOwned { name: name.to_string(), group: OwnedGroup { gid, keys: gkeys, members, version: 1 }, list };
    // Seed entry so a fresh group is viewable.
    dds_append(
        client,
        &me.actor,
        &owned.list,
        EntryPlain { member_key: Bytes::new(), data: Bytes::from(format!("group {name} created").into_bytes()) },
    )?;
    Ok(owned)
}

/// Grants a friend membership and sends the invitation.
pub fn group_invite<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    group: &mut GroupOwned,
    friend: Id,
    friend_pk: &PublicKey,
) -> Result<(), ClientError> {
    let actor = me.actor.clone();
    group.group.grant(client, &actor, friend, friend_pk.clone())?;
    let msg = InboxMessage {
        kind: INBOX_KIND_GROUP_INVITE,
        from: me.user(),
        sent_at: me.next_counter(),
        body: group.gref().encode(),
    };
    inbox_deposit(client, &me.actor, &friend, friend_pk, &msg)?;
    Ok(())
}

/// Reads the group's message list (any member).
pub fn group_view<C: StorageClient>(client: &mut C, me: &Account, group: &DdsRef) -> Result<usize, ClientError> {
    Ok(dds_read(client, &me.actor, group)?.len())
}

pub fn group_post<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    group: &DdsRef,
    text: &str,
) -> Result<(), ClientError> {
    dds_append(
        client,
        &me.actor,
        group,
        EntryPlain { member_key: Bytes::new(), data: Bytes::copy_from_slice(text.as_bytes()) },
    )?;
    Ok(())
}

/// A member leaves: the owner is notified so the roster can be curated;
/// the leaver simply stops using the key material.
pub fn group_leave<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    group: &GroupRef,
    owner_pk: &PublicKey,
) -> Result<(), ClientError> {
    let mut w = Writer::new();
    w.id(&group.gid);
    let msg =
        InboxMessage { kind: INBOX_KIND_NOTIFY, from: me.user(), sent_at: me.next_counter(), body: w.into_bytes() };
    inbox_deposit(client, &me.actor, &group.owner, owner_pk, &msg)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Chunked uploads (files and photos)
// ---------------------------------------------------------------------------

fn chunk_id(owner: &Id, namespace: &str, index: usize) -> Id {
    object_id(owner, &format!("{namespace}:chunk:{index}"))
}

/// Splits `bytes` into sealed chunk objects readable by `readers` and
/// returns the manifest. Chunks are plain owner-only objects; the payload
/// inside is an encrypted item.
fn store_chunks<C: StorageClient>(
    client: &mut C,
    me: &Account,
    readers: &[(Id, &PublicKey)],
    namespace: &str,
    name: &str,
    bytes: &[u8],
) -> Result<FileManifest, ClientError> {
    let provider = client.provider();
    let mut chunks = Vec::new();
    for (i, part) in bytes.chunks(CHUNK_BYTES.max(1)).enumerate() {
        let sealed = SecureItem::seal(&*provider, client.rng(), &me.actor.keys, part, readers, false);
        let cid = chunk_id(&me.user(), namespace, i);
        let obj = StoredObject::create(
            &*provider,
            &me.actor.keys,
            me.user(),
            cid,
            WritePolicy::owner_only(me.actor.binding()),
            sealed.encode(),
        );
        client.insert(obj)?;
        chunks.push(cid);
    }
    Ok(FileManifest { name: name.to_string(), size: bytes.len() as u64, chunks })
}

/// Fetches and reassembles a chunked upload, decrypting each chunk.
pub fn fetch_chunked<C: StorageClient>(
    client: &mut C,
    me: &Account,
    manifest: &FileManifest,
) -> Result<Vec<u8>, ClientError> {
    let mut out = Vec::with_capacity(manifest.size as usize);
    for cid in &manifest.chunks {
        let obj = client.fetch(cid)?;
        let item = SecureItem::decode(&obj.base)?;
        let plain = open_with_groups(client, &me.actor, &item)?;
        out.extend_from_slice(&plain);
    }
    if out.len() as u64 != manifest.size {
        return Err(ClientError::Failed("reassembled size mismatch".into()));
    }
    Ok(out)
}

fn delete_chunks<C: StorageClient>(client: &mut C, me: &Account, manifest: &FileManifest) -> Result<(), ClientError> {
    let provider = client.provider();
    for cid in &manifest.chunks {
        let obj = match client.fetch(cid) {
            Ok(o) => o,
            Err(ClientError::Storage(StorageError::NotFound | StorageError::Deleted)) => continue,
            Err(e) => return Err(e),
        };
        let v = obj.version + 1;
        let sig = StoredObject::sign_delete(&*provider, &me.actor.keys.secret, cid, v);
        client.delete(cid, me.user(), v, sig)?;
    }
    Ok(())
}

/// Handle to a registry entry (folder in the folders list, album in the
/// albums list, file in a folder list, …) for later tombstoning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryHandle {
    pub bucket: u32,
    pub unique: Id,
}

// ---------------------------------------------------------------------------
// File folders
// ---------------------------------------------------------------------------

pub fn folder_create<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    name: &str,
) -> Result<(DdsRef, EntryHandle), ClientError> {
    let dref = dds_create(
        client,
        &me.actor,
        DdsKind::List,
        &format!("folder:{name}"),
        Privacy::Private(me.self_group.gid),
        WriterRule::Principals(vec![me.actor.binding()]),
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    let entries = append_returning_handle(
        client,
        me,
        &folders_ref(me.user()),
        EntryPlain { member_key: Bytes::new(), data: Bytes::copy_from_slice(name.as_bytes()) },
    )?;
    Ok((dref, entries))
}

fn append_returning_handle<C: StorageClient>(
    client: &mut C,
    me: &Account,
    dref: &DdsRef,
    entry: EntryPlain,
) -> Result<EntryHandle, ClientError> {
    let out = dds_append(client, &me.actor, dref, entry)?;
    Ok(EntryHandle { bucket: out.bucket, unique: out.unique })
}

/// Uploads a file into a folder: sealed chunks + a manifest entry.
pub fn file_upload<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    folder: &DdsRef,
    file_name: &str,
    bytes: &[u8],
) -> Result<(FileManifest, EntryHandle), ClientError> {
    let gpk = crate::dds::fetch_group_public_key(client, &me.self_group.gid)?;
    let namespace = format!("{}:{}", folder.name, file_name);
    let manifest = store_chunks(client, me, &[(me.self_group.gid, &gpk)], &namespace, file_name, bytes)?;
    let handle = append_returning_handle(
        client,
        me,
        folder,
        EntryPlain { member_key: Bytes::copy_from_slice(file_name.as_bytes()), data: manifest.encode() },
    )?;
    Ok((manifest, handle))
}

pub fn folder_view<C: StorageClient>(
    client: &mut C,
    me: &Account,
    folder: &DdsRef,
) -> Result<Vec<FileManifest>, ClientError> {
    let entries = dds_read(client, &me.actor, folder)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(FileManifest::decode(&e.data)?);
    }
    Ok(out)
}

pub fn file_delete<C: StorageClient>(
    client: &mut C,
    me: &Account,
    folder: &DdsRef,
    manifest: &FileManifest,
    handle: &EntryHandle,
) -> Result<(), ClientError> {
    dds_remove_entry(client, &me.actor, folder, handle.bucket, handle.unique)?;
    delete_chunks(client, me, manifest)
}

/// Deletes remaining files, the folder's buckets and root, and tombstones
/// the registry entry.
pub fn folder_delete<C: StorageClient>(
    client: &mut C,
    me: &Account,
    folder: &DdsRef,
    registry_handle: &EntryHandle,
) -> Result<(), ClientError> {
    for manifest in folder_view(client, me, folder)? {
        delete_chunks(client, me, &manifest)?;
    }
    delete_structure(client, me, folder)?;
    dds_remove_entry(client, &me.actor, &folders_ref(me.user()), registry_handle.bucket, registry_handle.unique)
}

/// Owner-signs deletion of a structure's root and every existing bucket.
fn delete_structure<C: StorageClient>(client: &mut C, me: &Account, dref: &DdsRef) -> Result<(), ClientError> {
    let provider = client.provider();
    let mut targets = vec![dref.root_id()];
    for m in 1..=4096u32 {
        let bid = dref.bucket_id(m);
        match client.fetch(&bid) {
            Ok(_) => targets.push(bid),
            Err(ClientError::Storage(StorageError::NotFound)) => break,
            Err(ClientError::Storage(StorageError::Deleted)) => continue,
            Err(e) => return Err(e),
        }
    }
    for fid in targets {
        let obj = match client.fetch(&fid) {
            Ok(o) => o,
            Err(ClientError::Storage(StorageError::NotFound | StorageError::Deleted)) => continue,
            Err(e) => return Err(e),
        };
        let v = obj.version + 1;
        let sig = StoredObject::sign_delete(&*provider, &me.actor.keys.secret, &fid, v);
        client.delete(&fid, me.user(), v, sig)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Photo albums
// ---------------------------------------------------------------------------

pub fn album_create<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    name: &str,
) -> Result<(DdsRef, EntryHandle), ClientError> {
    let dref = dds_create(
        client,
        &me.actor,
        DdsKind::List,
        &format!("album:{name}"),
        Privacy::Private(me.friends_group.gid),
        WriterRule::Principals(vec![me.actor.binding()]),
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    let handle = append_returning_handle(
        client,
        me,
        &albums_ref(me.user()),
        EntryPlain { member_key: Bytes::new(), data: Bytes::copy_from_slice(name.as_bytes()) },
    )?;
    Ok((dref, handle))
}

/// Uploads a photo readable by the whole friends group.
pub fn photo_upload<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    album: &DdsRef,
    photo_name: &str,
    bytes: &[u8],
) -> Result<(FileManifest, EntryHandle), ClientError> {
    let gpk = crate::dds::fetch_group_public_key(client, &me.friends_group.gid)?;
    let namespace = format!("{}:{}", album.name, photo_name);
    let manifest = store_chunks(client, me, &[(me.friends_group.gid, &gpk)], &namespace, photo_name, bytes)?;
    let handle = append_returning_handle(
        client,
        me,
        album,
        EntryPlain { member_key: Bytes::copy_from_slice(photo_name.as_bytes()), data: manifest.encode() },
    )?;
    Ok((manifest, handle))
}

/// Lists an album (works for the owner and for any friend).
pub fn album_view<C: StorageClient>(
    client: &mut C,
    viewer: &Account,
    album: &DdsRef,
) -> Result<Vec<FileManifest>, ClientError> {
    let entries = dds_read(client, &viewer.actor, album)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(FileManifest::decode(&e.data)?);
    }
    Ok(out)
}

/// Downloads one photo (owner or friend).
pub fn photo_view<C: StorageClient>(
    client: &mut C,
    viewer: &Account,
    manifest: &FileManifest,
) -> Result<Vec<u8>, ClientError> {
    fetch_chunked(client, viewer, manifest)
}

pub fn photo_delete<C: StorageClient>(
    client: &mut C,
    me: &Account,
    album: &DdsRef,
    manifest: &FileManifest,
    handle: &EntryHandle,
) -> Result<(), ClientError> {
    dds_remove_entry(client, &me.actor, album, handle.bucket, handle.unique)?;
    delete_chunks(client, me, manifest)
}

pub fn album_delete<C: StorageClient>(
    client: &mut C,
    me: &Account,
    album: &DdsRef,
    registry_handle: &EntryHandle,
) -> Result<(), ClientError> {
    for manifest in album_view(client, me, album)? {
        delete_chunks(client, me, &manifest)?;
    }
    delete_structure(client, me, album)?;
    dds_remove_entry(client, &me.actor, &albums_ref(me.user()), registry_handle.bucket, registry_handle.unique)
}

// ---------------------------------------------------------------------------
// Voting
// ---------------------------------------------------------------------------

pub fn voting_create<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    name: &str,
    meta: VotingMeta,
) -> Result<VotingRef, ClientError> {
    let provider = client.provider();
    let vref = VotingRef { owner: me.user(), name: name.to_string() };
    let policy = WritePolicy {
        owner: me.actor.binding(),
        append: WriterRule::Anyone,
        replace: WriterRule::Nobody,
        append_cap: 4096,
        mapping: false,
    };
    let obj = StoredObject::create(&*provider, &me.actor.keys, me.user(), vref.object_id(), policy, meta.encode());
    client.insert(obj)?;
    dds_append(
        client,
        &me.actor,
        &votings_ref(me.user()),
        EntryPlain { member_key: Bytes::new(), data: vref.encode() },
    )?;
    Ok(vref)
}

pub fn voting_invite<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    vref: &VotingRef,
    to: Id,
    to_pk: &PublicKey,
) -> Result<(), ClientError> {
    let msg =
        InboxMessage { kind: INBOX_KIND_NOTIFY, from: me.user(), sent_at: me.next_counter(), body: vref.encode() };
    inbox_deposit(client, &me.actor, &to, to_pk, &msg)?;
    Ok(())
}

/// Casts (or changes) a vote. Every cast is a fresh append (the unique id
/// folds in the sender counter); the tally keeps only the latest ballot
/// per voter.
pub fn voting_cast<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    vref: &VotingRef,
    choice: u32,
) -> Result<(), ClientError> {
    let provider = client.provider();
    let vid = vref.object_id();
    let ballot = Ballot { voter: me.user(), choice };
    let counter = me.next_counter();
    let rec = crate::storage::AppendRec::sign(
        &*provider,
        &me.actor.keys.secret,
        me.user(),
        me.actor.keys.public.clone(),
        &vid,
        hash160_parts(&[b"ballot", &vid.0, &me.user().0, &counter.to_be_bytes()]),
        crate::storage::AppendKind::Add,
        ballot.encode(),
    );
    client.append(&vid, rec)?;
    Ok(())
}

pub fn my_votings<C: StorageClient>(client: &mut C, me: &Account) -> Result<Vec<VotingRef>, ClientError> {
    let entries = dds_read(client, &me.actor, &votings_ref(me.user()))?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(VotingRef::decode(&e.data)?);
    }
    Ok(out)
}

/// Tallies: per-voter latest ballot, one slot per option.
pub fn voting_results<C: StorageClient>(
    client: &mut C,
    _me: &Account,
    vref: &VotingRef,
) -> Result<(VotingMeta, Vec<u64>), ClientError> {
    let obj = client.fetch(&vref.object_id())?;
    let meta = VotingMeta::decode(&obj.base)?;
    let mut latest: std::collections::BTreeMap<Id, (u64, u32)> = std::collections::BTreeMap::new();
    for (seq, rec) in &obj.appends {
        if !matches!(rec.kind, crate::storage::AppendKind::Add) {
            continue;
        }
        let Ok(ballot) = Ballot::decode(&rec.payload) else { continue };
        // The signed append author is authoritative; the payload voter
        // field must match it or the ballot is discarded.
        if ballot.voter != rec.author {
            continue;
        }
        let slot = latest.entry(ballot.voter).or_insert((*seq, ballot.choice));
        if *seq >= slot.0 {
            *slot = (*seq, ballot.choice);
        }
    }
    let mut tally = vec![0u64; meta.options.len()];
    for (_, (_, choice)) in latest {
        if let Some(t) = tally.get_mut(choice as usize) {
            *t += 1;
        }
    }
    Ok((meta, tally))
}

// ---------------------------------------------------------------------------
// Wall
// ---------------------------------------------------------------------------

pub fn wall_post<C: StorageClient>(client: &mut C, me: &mut Account, text: &str) -> Result<(), ClientError> {
    let counter = me.next_counter();
    dds_append(
        client,
        &me.actor,
        &wall_ref(me.user()),
        EntryPlain {
            member_key: Bytes::new(),
            data: Bytes::from(format!("{counter}:{text}").into_bytes()),
        },
    )?;
    Ok(())
}

/// A friend writes on someone's wall (the entry is sealed to that user's
/// friends group, which the commenter belongs to).
pub fn wall_comment<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    wall_owner: Id,
    text: &str,
) -> Result<(), ClientError> {
    let counter = me.next_counter();
    dds_append(
        client,
        &me.actor,
        &wall_ref(wall_owner),
        EntryPlain { member_key: Bytes::new(), data: Bytes::from(format!("{counter}:{text}").into_bytes()) },
    )?;
    Ok(())
}

pub fn wall_view<C: StorageClient>(client: &mut C, viewer: &Account, owner: Id) -> Result<usize, ClientError> {
    Ok(dds_read(client, &viewer.actor, &wall_ref(owner))?.len())
}

// ---------------------------------------------------------------------------
// Forum
// ---------------------------------------------------------------------------

/// Creates the shared public forum (one per deployment, hosted by whoever
/// bootstraps it).
pub fn forum_create<C: StorageClient>(client: &mut C, me: &Account) -> Result<DdsRef, ClientError> {
    dds_create(
        client,
        &me.actor,
        DdsKind::List,
        "forum",
        Privacy::Public,
        WriterRule::Anyone,
        crate::dds::DEFAULT_BUCKET_SIZE,
    )
}

pub fn thread_create<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    forum: &DdsRef,
    title: &str,
) -> Result<DdsRef, ClientError> {
    let tag = hash160_parts(&[b"thread", &me.user().0, title.as_bytes()]);
    let list_name = format!("thread:{}", &tag.to_hex()[..16]);
    let thread = dds_create(
        client,
        &me.actor,
        DdsKind::List,
        &list_name,
        Privacy::Public,
        WriterRule::Anyone,
        crate::dds::DEFAULT_BUCKET_SIZE,
    )?;
    dds_append(
        client,
        &me.actor,
        &thread,
        EntryPlain { member_key: Bytes::new(), data: Bytes::from(format!("op:{title}").into_bytes()) },
    )?;
    let meta = ThreadMeta { title: title.to_string(), owner: me.user(), list_name };
    dds_append(client, &me.actor, forum, EntryPlain { member_key: Bytes::new(), data: meta.encode() })?;
    Ok(thread)
}

pub fn thread_comment<C: StorageClient>(
    client: &mut C,
    me: &mut Account,
    thread: &DdsRef,
    text: &str,
) -> Result<(), ClientError> {
    let counter = me.next_counter();
    dds_append(
        client,
        &me.actor,
        thread,
        EntryPlain { member_key: Bytes::new(), data: Bytes::from(format!("{counter}:{text}").into_bytes()) },
    )?;
    Ok(())
}

pub fn thread_view<C: StorageClient>(client: &mut C, me: &Account, thread: &DdsRef) -> Result<usize, ClientError> {
    Ok(dds_read(client, &me.actor, thread)?.len())
}

pub fn forum_view<C: StorageClient>(
    client: &mut C,
    me: &Account,
    forum: &DdsRef,
) -> Result<Vec<ThreadMeta>, ClientError> {
    let entries = dds_read(client, &me.actor, forum)?;
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        out.push(ThreadMeta::decode(&e.data)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// User search index
// ---------------------------------------------------------------------------

/// One shared index keyed by a 32-bit hash of the username; the value is
/// the principal id, from which the mapping record is resolvable.
pub fn search_key(username: &str) -> u32 {
    let h = hash160_parts(&[b"search-key", username.as_bytes()]);
    u32::from_be_bytes([h.0[0], h.0[1], h.0[2], h.0[3]])
}

pub fn search_index_create<C: StorageClient>(client: &mut C, me: &Account) -> Result<PhtRef, ClientError> {
    pht_create(client, &me.actor, "user-index", crate::pht::PHT_LEAF_CAPACITY)
}

pub fn search_opt_in<C: StorageClient>(client: &mut C, me: &Account, index: &PhtRef) -> Result<(), ClientError> {
    pht_insert(client, &me.actor, index, search_key(&me.actor.username), Bytes::copy_from_slice(&me.user().0))
}

pub fn search_user<C: StorageClient>(
    client: &mut C,
    index: &PhtRef,
    username: &str,
) -> Result<Option<Id>, ClientError> {
    let (found, _probes) = pht_lookup(client, index, search_key(username))?;
    Ok(found.and_then(|v| Id::from_bytes(&v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::LocalNet;
    use crate::crypto::toy_provider;
    use crate::item::ItemError;

    fn net() -> LocalNet {
        LocalNet::new(toy_provider(), 99)
    }

    fn profile_for(name: &str) -> ProfileData {
        ProfileData {
            username: name.into(),
            city: format!("{name}-city"),
            country: "atlantis".into(),
            gender: "they".into(),
        }
    }

    fn signup(net: &mut LocalNet, name: &str) -> Account {
        let node = hash160_parts(&[b"home-node", name.as_bytes()]);
        setup_account(net, name, "pw", node, profile_for(name)).unwrap()
    }

    /// alice ↔ bob become friends; carol stays a stranger.
    fn trio(net: &mut LocalNet) -> (Account, Account, Account) {
        let mut alice = signup(net, "alice");
        let mut bob = signup(net, "bob");
        let carol = signup(net, "carol");
        friend_request(net, &mut bob, alice.user(), &alice.actor.keys.public).unwrap();
        // Alice drains her inbox, finds the request, accepts.
        let msgs = inbox_view(net, &alice).unwrap();
        assert_eq!(msgs.len(), 1);
        assert_eq!(msgs[0].kind, INBOX_KIND_FRIEND_REQUEST);
        assert_eq!(msgs[0].from, bob.user());
        friend_accept(net, &mut alice, bob.user(), &bob.actor.keys.public).unwrap();
        friend_record(net, &mut bob, alice.user(), &alice.actor.keys.public).unwrap();
        let bob_msgs = inbox_view(net, &bob).unwrap();
        assert!(bob_msgs.iter().any(|m| m.kind == INBOX_KIND_FRIEND_ACCEPT && m.from == alice.user()));
        (alice, bob, carol)
    }

    #[test]
    fn account_setup_and_lookup() {
        let mut net = net();
        let alice = signup(&mut net, "alice");
        let rec = lookup_user(&mut net, "alice").unwrap();
        assert_eq!(rec.username, "alice");
        assert_eq!(rec.pk, alice.actor.keys.public);
        assert_eq!(rec.node, alice.node);
        let prof = fetch_profile(&mut net, &alice.user()).unwrap();
        assert_eq!(prof.city, "alice-city");
    }

    #[test]
    fn messaging_round_trip_inbox_and_outbox() {
        let mut net = net();
        let (mut alice, bob, _carol) = trio(&mut net);
        message_send(&mut net, &mut alice, bob.user(), &bob.actor.keys.public, "hi bob").unwrap();
        message_send(&mut net, &mut alice, bob.user(), &bob.actor.keys.public, "second").unwrap();
        let msgs = inbox_view(&mut net, &bob).unwrap();
        let texts: Vec<&[u8]> =
            msgs.iter().filter(|m| m.kind == INBOX_KIND_CHAT).map(|m| m.body.as_ref()).collect();
        assert_eq!(texts, vec![b"hi bob".as_slice(), b"second".as_slice()]);
        // Drain is destructive: second view is empty.
        assert!(inbox_view(&mut net, &bob).unwrap().is_empty());
        let outbox = outbox_view(&mut net, &alice).unwrap();
        assert_eq!(outbox.len(), 2);
        assert_eq!(&outbox[0].body[..], b"hi bob");
    }

    #[test]
    fn wall_access_is_limited_to_friends() {
        let mut net = net();
        let (mut alice, mut bob, carol) = trio(&mut net);
        wall_post(&mut net, &mut alice, "first post").unwrap();
        wall_comment(&mut net, &mut bob, alice.user(), "nice wall").unwrap();
        assert_eq!(wall_view(&mut net, &alice, alice.user()).unwrap(), 2);
        assert_eq!(wall_view(&mut net, &bob, alice.user()).unwrap(), 2);
        // Carol is not in alice's friends group: she cannot open the wall.
        let err = wall_view(&mut net, &carol, alice.user()).unwrap_err();
        assert!(
            matches!(err, ClientError::Item(ItemError::AccessDenied)),
            "stranger read must fail cryptographically, got {err:?}"
        );
    }

    #[test]
    fn photos_chunk_seal_and_share_with_friends() {
        let mut net = net();
        let (mut alice, bob, carol) = trio(&mut net);
        let (album, album_handle) = album_create(&mut net, &mut alice, "holiday").unwrap();
        // 96 KiB → two chunks.
        let photo: Vec<u8> = (0..96 * 1024).map(|i| (i % 251) as u8).collect();
        let (manifest, photo_handle) = photo_upload(&mut net, &mut alice, &album, "beach.png", &photo).unwrap();
        assert_eq!(manifest.chunks.len(), 2);
        // Owner and friend can view; the friend's bytes match.
        assert_eq!(album_view(&mut net, &alice, &album).unwrap().len(), 1);
        let listing = album_view(&mut net, &bob, &album).unwrap();
        assert_eq!(listing.len(), 1);
        let bytes = photo_view(&mut net, &bob, &listing[0]).unwrap();
        assert_eq!(bytes, photo);
        // Stranger cannot list the album or decrypt the photo.
        assert!(album_view(&mut net, &carol, &album).is_err());
        assert!(photo_view(&mut net, &carol, &manifest).is_err());
        // Delete the photo, then the album.
        photo_delete(&mut net, &alice, &album, &manifest, &photo_handle).unwrap();
        assert_eq!(album_view(&mut net, &alice, &album).unwrap().len(), 0);
        assert!(matches!(
            photo_view(&mut net, &alice, &manifest).unwrap_err(),
            ClientError::Storage(StorageError::Deleted)
        ));
        album_delete(&mut net, &alice, &album, &album_handle).unwrap();
        assert!(album_view(&mut net, &alice, &album).is_err());
        // The registry no longer lists it.
        let regs = dds_read(&mut net, &alice.actor, &albums_ref(alice.user())).unwrap();
        assert!(regs.is_empty());
    }

    #[test]
    fn folders_are_private_to_the_owner() {
        let mut net = net();
        let (mut alice, bob, _carol) = trio(&mut net);
        let (folder, folder_handle) = folder_create(&mut net, &mut alice, "docs").unwrap();
        let data: Vec<u8> = (0..10_000).map(|i| (i % 7) as u8).collect();
        let (manifest, file_handle) = file_upload(&mut net, &mut alice, &folder, "notes.txt", &data).unwrap();
        assert_eq!(manifest.chunks.len(), 1);
        let listing = folder_view(&mut net, &alice, &folder).unwrap();
        assert_eq!(listing.len(), 1);
        assert_eq!(fetch_chunked(&mut net, &alice, &listing[0]).unwrap(), data);
        // Even a friend cannot read a folder (self-group sealed).
        assert!(folder_view(&mut net, &bob, &folder).is_err());
        assert!(fetch_chunked(&mut net, &bob, &manifest).is_err());
        file_delete(&mut net, &alice, &folder, &manifest, &file_handle).unwrap();
        assert!(folder_view(&mut net, &alice, &folder).unwrap().is_empty());
        folder_delete(&mut net, &alice, &folder, &folder_handle).unwrap();
        let regs = dds_read(&mut net, &alice.actor, &folders_ref(alice.user())).unwrap();
        assert!(regs.is_empty());
    }

    #[test]
    fn groups_grant_and_view() {
        let mut net = net();
        let (mut alice, mut bob, carol) = trio(&mut net);
        let mut g = group_create(&mut net, &mut alice, "chess").unwrap();
        group_invite(&mut net, &mut alice, &mut g, bob.user(), &bob.actor.keys.public).unwrap();
        // Bob's invitation names the group.
        let msgs = inbox_view(&mut net, &bob).unwrap();
        let invite = msgs.iter().find(|m| m.kind == INBOX_KIND_GROUP_INVITE).unwrap();
        let gref = GroupRef::decode(&invite.body).unwrap();
        assert_eq!(gref.gid, g.group.gid);
        // Bob reads and posts; carol cannot.
        assert_eq!(group_view(&mut net, &bob, &gref.dref()).unwrap(), 1);
        group_post(&mut net, &mut bob, &gref.dref(), "knight to f3").unwrap();
        assert_eq!(group_view(&mut net, &alice, &g.list).unwrap(), 2);
        assert!(group_view(&mut net, &carol, &g.list).is_err());
        // Bob leaves: alice is notified.
        group_leave(&mut net, &mut bob, &gref, &alice.actor.keys.public).unwrap();
        let notes = inbox_view(&mut net, &alice).unwrap();
        assert!(notes.iter().any(|m| m.kind == INBOX_KIND_NOTIFY && m.from == bob.user()));
    }

    #[test]
    fn voting_flow_tallies_latest_ballots() {
        let mut net = net();
        let (mut alice, mut bob, carol) = trio(&mut net);
        let meta = VotingMeta {
            question: "lunch?".into(),
            options: vec!["pizza".into(), "sushi".into()],
            public: false,
        };
        let vref = voting_create(&mut net, &mut alice, "lunch", meta).unwrap();
        voting_invite(&mut net, &mut alice, &vref, bob.user(), &bob.actor.keys.public).unwrap();
        let invite = inbox_view(&mut net, &bob)
            .unwrap()
            .into_iter()
            .find(|m| m.kind == INBOX_KIND_NOTIFY)
            .unwrap();
        let shared = VotingRef::decode(&invite.body).unwrap();
        assert_eq!(shared, vref);
        voting_cast(&mut net, &mut alice, &vref, 0).unwrap();
        voting_cast(&mut net, &mut bob, &shared, 1).unwrap();
        let mut carol = carol;
        voting_cast(&mut net, &mut carol, &vref, 1).unwrap();
        // Bob changes his mind; only the latest ballot counts.
        voting_cast(&mut net, &mut bob, &shared, 0).unwrap();
        let (meta, tally) = voting_results(&mut net, &alice, &vref).unwrap();
        assert_eq!(meta.question, "lunch?");
        assert_eq!(tally, vec![2, 1]);
        let mine = my_votings(&mut net, &alice).unwrap();
        assert_eq!(mine, vec![vref]);
        assert!(my_votings(&mut net, &bob).unwrap().is_empty());
    }

    #[test]
    fn forum_threads_are_world_readable_and_writable() {
        let mut net = net();
        let (mut alice, mut bob, mut carol) = trio(&mut net);
        let forum = forum_create(&mut net, &alice).unwrap();
        let thread = thread_create(&mut net, &mut bob, &forum, "best editor").unwrap();
        thread_comment(&mut net, &mut carol, &thread, "obviously ed").unwrap();
        thread_comment(&mut net, &mut alice, &thread, "disagree").unwrap();
        assert_eq!(thread_view(&mut net, &carol, &thread).unwrap(), 3);
        let threads = forum_view(&mut net, &carol, &forum).unwrap();
        assert_eq!(threads.len(), 1);
        assert_eq!(threads[0].title, "best editor");
        assert_eq!(threads[0].dref(), thread);
    }

    #[test]
    fn livechat_runs_over_the_message_bus() {
        let mut net = net();
        let (mut alice, bob, _carol) = trio(&mut net);
        let anode = alice.node;
        let bnode = bob.node;
        net.acting_as(anode);
        let topic =
            chat_open(&mut net, &mut alice, "evening", &[(bob.user(), bob.actor.keys.public.clone())]).unwrap();
        // Bob finds the invite and joins.
        let invite = inbox_view(&mut net, &bob)
            .unwrap()
            .into_iter()
            .find(|m| m.kind == INBOX_KIND_NOTIFY)
            .unwrap();
        let mut r = Reader::new(&invite.body);
        let invited_topic = r.id().unwrap();
        assert_eq!(invited_topic, topic);
        net.acting_as(bnode);
        chat_join(&mut net, &topic).unwrap();
        net.acting_as(anode);
        let fanout = chat_send(&mut net, &mut alice, &topic, "hello room").unwrap();
        assert_eq!(fanout, 2);
        net.acting_as(bnode);
        let got = net.drain_mailbox();
        assert_eq!(got.len(), 1);
        assert_eq!(&got[0].body[..], b"hello room");
        // Leaving stops delivery.
        chat_leave(&mut net, &topic).unwrap();
        net.acting_as(anode);
        chat_send(&mut net, &mut alice, &topic, "anyone?").unwrap();
        net.acting_as(bnode);
        assert!(net.drain_mailbox().is_empty());
    }

    #[test]
    fn search_index_resolves_users() {
        let mut net = net();
        let alice = signup(&mut net, "alice");
        let bob = signup(&mut net, "bob");
        let index = search_index_create(&mut net, &alice).unwrap();
        search_opt_in(&mut net, &alice, &index).unwrap();
        search_opt_in(&mut net, &bob, &index).unwrap();
        assert_eq!(search_user(&mut net, &index, "alice").unwrap(), Some(alice.user()));
        assert_eq!(search_user(&mut net, &index, "bob").unwrap(), Some(bob.user()));
        assert_eq!(search_user(&mut net, &index, "nobody").unwrap(), None);
    }

    #[test]
    fn records_round_trip() {
        let m = MappingRecord {
            username: "zoe".into(),
            pk: PublicKey { material: Bytes::from_static(b"pk") },
            node: hash160_parts(&[b"n"]),
        };
        assert_eq!(MappingRecord::decode(&m.encode()).unwrap(), m);
        let f = FileManifest { name: "a.bin".into(), size: 3, chunks: vec![hash160_parts(&[b"c"])] };
        assert_eq!(FileManifest::decode(&f.encode()).unwrap(), f);
        let v = VotingMeta { question: "q".into(), options: vec!["a".into(), "b".into()], public: true };
        assert_eq!(VotingMeta::decode(&v.encode()).unwrap(), v);
        let t = ThreadMeta { title: "t".into(), owner: hash160_parts(&[b"o"]), list_name: "l".into() };
        assert_eq!(ThreadMeta::decode(&t.encode()).unwrap(), t);
        let b = Ballot { voter: hash160_parts(&[b"v"]), choice: 2 };
        assert_eq!(Ballot::decode(&b.encode()).unwrap(), b);
        let g = GroupRef { gid: hash160_parts(&[b"g"]), owner: hash160_parts(&[b"o"]), list_name: "gl".into() };
        assert_eq!(GroupRef::decode(&g.encode()).unwrap(), g);
    }
}
