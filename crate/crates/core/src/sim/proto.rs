//! Messages exchanged between simulated nodes.
//!
//! Every message travels inside a [`Wire`] carrying an rpc correlation id
//! (0 = fire-and-forget). Requests are answered with the same id; the
//! simulator completes driver-issued rpcs when the matching reply reaches
//! the origin node, and node-issued sub-rpcs (replication acks, pings) are
//! matched by the node's own pending tables.

use bytes::Bytes;

use crate::channels::Envelope;
use crate::crypto::PublicKey;
use crate::id::Id;
use crate::monitoring::NodeReport;
use crate::overlay::NodeDescriptor;
use crate::storage::{AppendRec, StoreReceipt, StoredObject, WritePolicy};

#[derive(Debug, Clone)]
pub struct Wire {
    pub rpc: u64,
    pub body: Body,
}

/// Outcome of a remote storage operation: `Err` carries a
/// [`crate::storage::StorageError`] code, or [`CODE_TIMEOUT`] when the
/// coordinator gave up waiting for replica acknowledgements.
pub type RemoteResult<T> = Result<T, u8>;

pub const CODE_TIMEOUT: u8 = 200;

#[derive(Debug, Clone)]
pub enum Body {
    // --- overlay -----------------------------------------------------------
    /// Iterative lookup probe: who are your best candidates for `target`?
    /// Carries the asker's descriptor so responders learn about it.
    FindNode { target: Id, from_desc: NodeDescriptor },
    /// `claim` = responder believes it is responsible for `target` among
    /// strong nodes.
    FindNodeReply { claim: bool, candidates: Vec<NodeDescriptor> },
    Ping,
    Pong { desc: NodeDescriptor },
    /// Full known-contact transfer (join bootstrap).
    StateReq,
    StateReply { known: Vec<NodeDescriptor> },
    /// One-way gossip: sender's descriptor plus a sample of its contacts.
    Exchange { from: NodeDescriptor, known: Vec<NodeDescriptor> },
    /// Graceful departure notice.
    Leaving { from: Id },

    // --- storage (client → coordinator) ------------------------------------
    Store { obj: StoredObject },
    StoreReply { result: RemoteResult<Vec<StoreReceipt>> },
    /// `direct` skips read-balancing redirects (used after following one).
    Get { id: Id, direct: bool },
    GetReply { result: RemoteResult<Bytes>, redirect: Option<Id> },
    Append { id: Id, rec: AppendRec },
    AppendReply { result: RemoteResult<u64> },
    Replace {
        id: Id,
        author: Id,
        author_pk: PublicKey,
        new_version: u64,
        new_policy: Option<WritePolicy>,
        new_base: Bytes,
        new_cleared: u64,
        sig: Bytes,
    },
    ReplaceReply { result: RemoteResult<()> },
    Delete { id: Id, author: Id, new_version: u64, sig: Bytes },
    DeleteReply { result: RemoteResult<()> },

    // --- storage (coordinator → replica) ------------------------------------
    /// Full-state replica transfer; receiver merges and acknowledges.
    ReplicaPut { obj: StoredObject },
    ReplicaAck { result: RemoteResult<StoreReceipt> },

    // --- messaging -----------------------------------------------------------
    /// Point delivery of a channel envelope (unicast or fanned-out).
    Deliver { env: Envelope },
    TopicSub { topic: Id, node: Id },
    TopicSubAck,
    TopicUnsub { topic: Id, node: Id },
    TopicPub { topic: Id, env: Envelope },
    TopicPubReply { fanout: u32 },

    // --- monitoring ----------------------------------------------------------
    Report { report: NodeReport },
}

impl Wire {
    /// Size model for traffic accounting (bytes on the wire). Ids are 20
    /// bytes; descriptors carry a flag byte; objects/records use their
    /// canonical encodings.
    pub fn wire_size(&self) -> u64 {
        const HDR: u64 = 48; // addressing + rpc id + framing
        let body = match &self.body {
            Body::FindNode { .. } => 41,
            Body::FindNodeReply { candidates, .. } => 1 + 21 * candidates.len() as u64,
            Body::Ping => 0,
            Body::Pong { .. } => 21,
            Body::StateReq => 0,
            Body::StateReply { known } => 21 * known.len() as u64,
            Body::Exchange { known, .. } => 21 + 21 * known.len() as u64,
            Body::Leaving { .. } => 20,
            Body::Store { obj } | Body::ReplicaPut { obj } => obj.encode().len() as u64,
            Body::StoreReply { result } => match result {
                Ok(receipts) => 1 + receipts.iter().map(|r| 68 + r.sig.len() as u64).sum::<u64>(),
                Err(_) => 2,
            },
            Body::Get { .. } => 21,
            Body::GetReply { result, .. } => match result {
                Ok(bytes) => 21 + bytes.len() as u64,
                Err(_) => 23,
            },
            Body::Append { rec, .. } => {
                let mut w = crate::wire::Writer::new();
                rec.encode(&mut w);
                20 + w.len() as u64
            }
            Body::AppendReply { .. } => 9,
            Body::Replace { new_base, new_policy, sig, .. } => {
                let policy = new_policy.as_ref().map(|p| p.encode().len() as u64).unwrap_or(1);
                20 + 20 + 8 + 8 + policy + new_base.len() as u64 + sig.len() as u64
            }
            Body::ReplaceReply { .. } => 2,
            Body::Delete { sig, .. } => 48 + sig.len() as u64,
            Body::DeleteReply { .. } => 2,
            Body::ReplicaAck { result } => match result {
                Ok(r) => 68 + r.sig.len() as u64,
                Err(_) => 2,
            },
            Body::Deliver { env } => env.encode().len() as u64,
            Body::TopicSub { .. } | Body::TopicUnsub { .. } => 40,
            Body::TopicSubAck => 0,
            Body::TopicPub { env, .. } => 20 + env.encode().len() as u64,
            Body::TopicPubReply { .. } => 4,
            Body::Report { report } => report.encode().len() as u64,
        };
        HDR + body
    }

    /// Payload bytes of a served object read (retrieval-rate accounting).
    pub fn served_object_bytes(&self) -> u64 {
        match &self.body {
            Body::GetReply { result: Ok(bytes), .. } => bytes.len() as u64,
            _ => 0,
        }
    }
}
