//! Self-contained encrypted and signed storage items.
//!
//! An item carries its own confidentiality and integrity: the payload is
//! encrypted under a fresh symmetric key, that key is wrapped once per
//! authorized reader (a user or a group), the author's public key rides
//! along, and a signature covers everything — including the tombstone flag,
//! so deletion markers cannot be forged by third parties.
//!
//! Readers are opaque 160-bit principal ids. A group principal's key pair is
//! itself distributed as the payload of another item sealed to the group's
//! members, which may include further groups; opening therefore performs a
//! depth-first walk down the chain of key items with cycle and depth guards.

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use rand::Rng;
use thiserror::Error;

use crate::crypto::{sym_decrypt, sym_encrypt, CryptoProvider, KeyPair, PublicKey, SecretKey, SymKey, SYM_KEY_BYTES};
use crate::id::{hash160_parts, Id};
use crate::wire::{read_count, Reader, WireError, Writer};

const ITEM_VERSION: u8 = 1;

/// Maximum depth of nested group-key items an open will chase.
pub const MAX_GROUP_DEPTH: usize = 8;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ItemError {
    /// The item is intact but none of the wrapped keys is openable by the
    /// caller's principals.
    #[error("access denied: no wrapped key for any held principal")]
    AccessDenied,
    /// Signature or decryption failure: the item (or our wrap entry) has
    /// been tampered with or was produced incorrectly.
    #[error("integrity failure")]
    Integrity,
    #[error("malformed item: {0}")]
    Malformed(#[from] WireError),
}

/// Encrypted payload + per-reader wrapped keys + owner key + signature.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecureItem {
    pub payload_ct: Bytes,
    /// reader principal id → asymmetrically wrapped symmetric key.
    pub wrapped: BTreeMap<Id, Bytes>,
    pub owner_pk: PublicKey,
    pub tombstone: bool,
    pub signature: Bytes,
}

impl SecureItem {
    /// Encrypts `payload` to `readers` and signs with `owner`.
    ///
    /// The owner is *not* implicitly a reader; include the owner's own
    /// principal in `readers` if the owner should be able to read it back.
    pub fn seal(
        provider: &dyn CryptoProvider,
        rng: &mut dyn Rng,
        owner: &KeyPair,
        payload: &[u8],
        readers: &[(Id, &PublicKey)],
        tombstone: bool,
    ) -> SecureItem {
        let key = crate::crypto::sym_key_gen(rng);
        let payload_ct = sym_encrypt(&key, payload, rng);
        let mut wrapped = BTreeMap::new();
        for (rid, pk) in readers {
            wrapped.insert(*rid, provider.asym_encrypt(pk, &key.0, rng));
        }
        let mut item = SecureItem {
            payload_ct,
            wrapped,
            owner_pk: owner.public.clone(),
            tombstone,
            signature: Bytes::new(),
        };
        item.signature = provider.sign(&owner.secret, &item.signed_bytes());
        item
    }

    /// A tombstone marking deletion: empty payload, no readers, signed.
    pub fn tombstone(provider: &dyn CryptoProvider, rng: &mut dyn Rng, owner: &KeyPair) -> SecureItem {
        SecureItem::seal(provider, rng, owner, &[], &[], true)
    }

    /// The canonical bytes the signature covers: everything but the
    /// signature itself.
    fn signed_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_capacity(self.payload_ct.len() + 64);
        w.u8(ITEM_VERSION);
        w.bytes(&self.payload_ct);
        w.u32(self.wrapped.len() as u32);
        for (rid, ct) in &self.wrapped {
            w.id(rid);
            w.bytes(ct);
        }
        w.bytes(&self.owner_pk.material);
        w.bool(self.tombstone);
        w.into_vec()
    }

    pub fn verify(&self, provider: &dyn CryptoProvider) -> bool {
        provider.verify(&self.owner_pk, &self.signed_bytes(), &self.signature)
    }

    pub fn encode(&self) -> Bytes {
        let mut v = self.signed_bytes();
        let mut w = Writer::with_capacity(self.signature.len() + 4);
        w.bytes(&self.signature);
        v.extend_from_slice(&w.into_vec());
        Bytes::from(v)
    }

    pub fn decode(buf: &[u8]) -> Result<SecureItem, ItemError> {
        let mut r = Reader::new(buf);
        if r.u8()? != ITEM_VERSION {
            return Err(WireError::BadTag(buf[0]).into());
        }
        let payload_ct = r.bytes_owned()?;
        let n = read_count(&mut r, 24)?;
        let mut wrapped = BTreeMap::new();
        let mut prev: Option<Id> = None;
        for _ in 0..n {
            let rid = r.id()?;
            if let Some(p) = prev {
                if rid <= p {
                    return Err(WireError::NonCanonical.into());
                }
            }
            prev = Some(rid);
            wrapped.insert(rid, r.bytes_owned()?);
        }
        let owner_pk = PublicKey { material: r.bytes_owned()? };
        let tombstone = r.bool()?;
        let signature = r.bytes_owned()?;
        r.finish()?;
        Ok(SecureItem { payload_ct, wrapped, owner_pk, tombstone, signature })
    }

    /// Plaintext size → ciphertext item size is affine; this is the constant
    /// part plus the per-reader part, useful for capacity planning.
    pub fn overhead(&self) -> usize {
        self.encode().len() - self.payload_ct.len() + crate::crypto::SYM_OVERHEAD
    }

    /// Verifies, then tries every wrapped entry against the principals the
    /// resolver can produce secrets for. Error distinction matters:
    /// tampering is [`ItemError::Integrity`], lacking a key is
    /// [`ItemError::AccessDenied`].
    pub fn open<R: KeyResolver>(
        &self,
        provider: &dyn CryptoProvider,
        resolver: &mut R,
    ) -> Result<Bytes, ItemError> {
        if !self.verify(provider) {
            return Err(ItemError::Integrity);
        }
        let mut had_resolvable = false;
        for (rid, wrap_ct) in &self.wrapped {
            let Some(sk) = resolver.secret_for(provider, rid) else {
                continue;
            };
            had_resolvable = true;
            let Some(raw) = provider.asym_decrypt(&sk, wrap_ct) else {
                continue;
            };
            if raw.len() != SYM_KEY_BYTES {
                continue;
            }
            let key = SymKey(raw.as_ref().try_into().unwrap());
            match sym_decrypt(&key, &self.payload_ct) {
                Some(pt) => return Ok(pt),
                None => continue,
            }
        }
        if had_resolvable {
            // We held a listed principal's key yet nothing decrypted: the
            // item's wraps or payload are inconsistent with its signature's
            // claims — corruption, not a missing grant.
            Err(ItemError::Integrity)
        } else {
            Err(ItemError::AccessDenied)
        }
    }
}

/// Produces the secret key for a principal id, if the caller holds it
/// directly or can derive it (e.g. by opening a group-key item).
pub trait KeyResolver {
    fn secret_for(&mut self, provider: &dyn CryptoProvider, principal: &Id) -> Option<SecretKey>;
}

/// Resolver holding exactly one user secret; no group chasing.
pub struct SingleKey<'a> {
    pub principal: Id,
    pub secret: &'a SecretKey,
}

impl KeyResolver for SingleKey<'_> {
    fn secret_for(&mut self, _provider: &dyn CryptoProvider, principal: &Id) -> Option<SecretKey> {
        (*principal == self.principal).then(|| self.secret.clone())
    }
}

/// Canonical payload format for group-key items: the group's key pair.
pub fn encode_group_keys(kp: &KeyPair) -> Bytes {
    let mut w = Writer::new();
    w.bytes(&kp.public.material);
    w.bytes(&kp.secret.material);
    w.into_bytes()
}

pub fn decode_group_keys(buf: &[u8]) -> Result<KeyPair, WireError> {
    let mut r = Reader::new(buf);
    let public = PublicKey { material: r.bytes_owned()? };
    let secret = SecretKey { material: r.bytes_owned()? };
    r.finish()?;
    Ok(KeyPair { public, secret })
}

/// Derives a fresh group principal: id from the creator and name, keys from
/// the given seed (callers pass deterministic simulator entropy).
pub fn derive_group_principal(
    provider: &dyn CryptoProvider,
    creator: &Id,
    name: &str,
    seed: &[u8],
) -> (Id, KeyPair) {
    let gid = hash160_parts(&[b"group-principal", &creator.0, name.as_bytes()]);
    let kp = provider.keypair_from_seed(&[b"group-keys", seed, &gid.0].concat());
    (gid, kp)
}

/// Resolver that walks group-key items depth-first: the user's own secret
/// plus any group whose key item can be fetched and opened transitively.
pub struct ChainResolver<'a, F>
where
    F: FnMut(&Id) -> Option<SecureItem>,
{
    pub me: Id,
    pub secret: &'a SecretKey,
    /// Fetches the group-key item for a group principal id.
    pub fetch_group_item: F,
    visiting: BTreeSet<Id>,
    cache: BTreeMap<Id, Option<SecretKey>>,
}

impl<'a, F> ChainResolver<'a, F>
where
    F: FnMut(&Id) -> Option<SecureItem>,
{
    pub fn new(me: Id, secret: &'a SecretKey, fetch_group_item: F) -> Self {
        ChainResolver { me, secret, fetch_group_item, visiting: BTreeSet::new(), cache: BTreeMap::new() }
    }
}

impl<F> KeyResolver for ChainResolver<'_, F>
where
    F: FnMut(&Id) -> Option<SecureItem>,
{
    fn secret_for(&mut self, provider: &dyn CryptoProvider, principal: &Id) -> Option<SecretKey> {
        if *principal == self.me {
            return Some(self.secret.clone());
        }
        if let Some(cached) = self.cache.get(principal) {
            return cached.clone();
        }
        if self.visiting.len() >= MAX_GROUP_DEPTH || !self.visiting.insert(*principal) {
            return None;
        }
        let resolved = (|| {
            let item = (self.fetch_group_item)(principal)?;
            let payload = item.open(provider, self).ok()?;
            let kp = decode_group_keys(&payload).ok()?;
            // The fetched keys must actually belong to the principal asked
            // for — guards against a swapped key item.
            Some(kp.secret)
        })();
        self.visiting.remove(principal);
        self.cache.insert(*principal, resolved.clone());
        resolved
    }
}
