//! 160-bit ring identifiers and the responsibility metric.
//!
//! Every node, user, object and topic lives on the same circular 160-bit
//! identifier space. A node is *responsible* for a key when it wins the
//! responsibility metric against every other live node: longest common bit
//! prefix first, then smaller ring distance, then (as a final determinism
//! guard) the numerically larger identifier.

use std::cmp::Ordering;
use std::fmt;

use sha2::{Digest, Sha256};

pub const ID_BITS: u32 = 160;
pub const ID_BYTES: usize = 20;

/// A 160-bit identifier, treated as a big-endian unsigned integer on a ring.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Id(pub [u8; ID_BYTES]);

impl Id {
    pub const ZERO: Id = Id([0u8; ID_BYTES]);
    pub const MAX: Id = Id([0xffu8; ID_BYTES]);

    pub fn from_bytes(b: &[u8]) -> Option<Id> {
        if b.len() != ID_BYTES {
            return None;
        }
        let mut a = [0u8; ID_BYTES];
        a.copy_from_slice(b);
        Some(Id(a))
    }

    pub fn from_hex(s: &str) -> Option<Id> {
        let v = hex::decode(s).ok()?;
        Id::from_bytes(&v)
    }

    /// Builds an id from a hex prefix, right-padded with zero bits.
    /// Convenient for prefix-oriented tests: `Id::from_prefix_hex("8f")`.
    pub fn from_prefix_hex(s: &str) -> Option<Id> {
        if s.len() > 2 * ID_BYTES || s.len() % 2 != 0 {
            return None;
        }
        let v = hex::decode(s).ok()?;
        let mut a = [0u8; ID_BYTES];
        a[..v.len()].copy_from_slice(&v);
        Some(Id(a))
    }

    /// Builds an id whose low 64 bits are `v` and all other bits zero.
    pub fn from_low_u64(v: u64) -> Id {
        let mut a = [0u8; ID_BYTES];
        a[ID_BYTES - 8..].copy_from_slice(&v.to_be_bytes());
        Id(a)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    /// Bit `i` counted from the most significant bit (bit 0) down.
    pub fn bit(&self, i: u32) -> bool {
        debug_assert!(i < ID_BITS);
        let byte = (i / 8) as usize;
        let mask = 0x80u8 >> (i % 8);
        self.0[byte] & mask != 0
    }

    pub fn with_bit(mut self, i: u32, value: bool) -> Id {
        debug_assert!(i < ID_BITS);
        let byte = (i / 8) as usize;
        let mask = 0x80u8 >> (i % 8);
        if value {
            self.0[byte] |= mask;
        } else {
            self.0[byte] &= !mask;
        }
        self
    }

    /// Length in bits of the common prefix with `other` (0..=160).
    pub fn lcp(&self, other: &Id) -> u32 {
        for i in 0..ID_BYTES {
            let x = self.0[i] ^ other.0[i];
            if x != 0 {
                return i as u32 * 8 + x.leading_zeros();
            }
        }
        ID_BITS
    }

    /// Midpoint of this id's prefix interval at `level`: the first `level`
    /// bits are kept, bit `level` is set, and everything below is zero.
    /// At level 0 this is 2^159 (0x8000…) for every id.
    pub fn interval_mid(&self, level: u32) -> Id {
        debug_assert!(level < ID_BITS);
        let mut out = Id::ZERO;
        for i in 0..level {
            out = out.with_bit(i, self.bit(i));
        }
        out.with_bit(level, true)
    }
}

impl fmt::Debug for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", &self.to_hex()[..12])
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// 160-bit truncation of SHA-256; the hash behind every identifier.
pub fn hash160(data: &[u8]) -> Id {
    let d = Sha256::digest(data);
    let mut a = [0u8; ID_BYTES];
    a.copy_from_slice(&d[..ID_BYTES]);
    Id(a)
}

/// Hash of several segments with unambiguous framing.
pub fn hash160_parts(parts: &[&[u8]]) -> Id {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    let d = h.finalize();
    let mut a = [0u8; ID_BYTES];
    a.copy_from_slice(&d[..ID_BYTES]);
    Id(a)
}

/// `a - b` modulo 2^160.
pub fn wrapping_sub(a: &Id, b: &Id) -> Id {
    let mut out = [0u8; ID_BYTES];
    let mut borrow = 0i16;
    for i in (0..ID_BYTES).rev() {
        let v = a.0[i] as i16 - b.0[i] as i16 - borrow;
        if v < 0 {
            out[i] = (v + 256) as u8;
            borrow = 1;
        } else {
            out[i] = v as u8;
            borrow = 0;
        }
    }
    Id(out)
}

/// Distance travelled clockwise (increasing ids, wrapping) from `a` to `b`.
pub fn cw_dist(a: &Id, b: &Id) -> Id {
    wrapping_sub(b, a)
}

/// Minimal ring distance between `a` and `b` (either direction).
pub fn ring_dist(a: &Id, b: &Id) -> Id {
    let d1 = wrapping_sub(a, b);
    let d2 = wrapping_sub(b, a);
    if d1 <= d2 {
        d1
    } else {
        d2
    }
}

/// Compares how responsible `a` and `b` are for `key`.
/// `Ordering::Greater` means `a` is the better (more responsible) node.
pub fn cmp_responsibility(key: &Id, a: &Id, b: &Id) -> Ordering {
    let la = key.lcp(a);
    let lb = key.lcp(b);
    la.cmp(&lb)
        // Smaller ring distance wins, so compare b's distance against a's.
        .then_with(|| ring_dist(key, b).cmp(&ring_dist(key, a)))
        .then_with(|| a.cmp(b))
}

/// The most responsible id for `key` among `ids` (the routing oracle).
pub fn most_responsible<'a, I>(key: &Id, ids: I) -> Option<Id>
where
    I: IntoIterator<Item = &'a Id>,
{
    ids.into_iter()
        .max_by(|a, b| cmp_responsibility(key, a, b))
        .copied()
}

/// The `k` most responsible ids for `key`, best first.
pub fn closest_ids<'a, I>(key: &Id, ids: I, k: usize) -> Vec<Id>
where
    I: IntoIterator<Item = &'a Id>,
{
    let mut v: Vec<Id> = ids.into_iter().copied().collect();
    v.sort_by(|a, b| cmp_responsibility(key, b, a));
    v.dedup();
    v.truncate(k);
    v
}
