//! Pluggable cryptography.
//!
//! Everything above this module talks to a [`CryptoProvider`]: key pairs
//! derived from credentials, signatures, asymmetric wrapping of symmetric
//! keys, plus a shared 128-bit-key authenticated symmetric cipher. Two
//! providers ship:
//!
//! * [`ToyProvider`] — a deterministic keyed-hash double used by the
//!   simulator and most tests. It honours all the API contracts (wrong key
//!   fails, tampering fails, sizes are constant) but is **not** secure: the
//!   public key is a trivial transform of the secret key.
//! * [`DlProvider`] — Schnorr signatures and a hashed-ElGamal KEM over a
//!   1024-bit modular group with a 160-bit prime-order subgroup (RFC 5114
//!   §2.1 parameters). Signatures are a constant 40 bytes and key wraps a
//!   constant 164 bytes regardless of payload size.
//!
//! Production-grade cryptography is explicitly out of scope; the provider
//! boundary is the point where a hardened implementation would slot in.

use std::fmt;
use std::sync::{Arc, OnceLock};

use bytes::Bytes;
use num_bigint::BigUint;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::id::{hash160, Id};

pub const SYM_KEY_BYTES: usize = 16;
pub const SYM_NONCE_BYTES: usize = 16;
pub const SYM_TAG_BYTES: usize = 20;
/// Constant ciphertext expansion of the symmetric cipher.
pub const SYM_OVERHEAD: usize = SYM_NONCE_BYTES + SYM_TAG_BYTES;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PublicKey {
    pub material: Bytes,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.material[..self.material.len().min(6)]))
    }
}

#[derive(Clone)]
pub struct SecretKey {
    pub material: Bytes,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(…)")
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SymKey(pub [u8; SYM_KEY_BYTES]);

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

pub trait CryptoProvider: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Deterministic key pair from login credentials (no stored state:
    /// whoever knows the credentials owns the identity).
    fn keypair_from_credentials(&self, username: &str, password: &str) -> KeyPair {
        let mut seed = Vec::with_capacity(username.len() + password.len() + 8);
        seed.extend_from_slice(&(username.len() as u64).to_be_bytes());
        seed.extend_from_slice(username.as_bytes());
        seed.extend_from_slice(password.as_bytes());
        self.keypair_from_seed(&seed)
    }

    fn keypair_from_seed(&self, seed: &[u8]) -> KeyPair;

    /// Identifier bound to key material; node ids are derived this way,
    /// which makes `user → node` mappings self-certifying.
    fn key_id(&self, material: &[u8]) -> Id {
        hash160(material)
    }

    fn sign(&self, sk: &SecretKey, msg: &[u8]) -> Bytes;

    fn verify(&self, pk: &PublicKey, msg: &[u8], sig: &[u8]) -> bool;

    /// Wraps a small message (usually a symmetric key) to a public key.
    fn asym_encrypt(&self, pk: &PublicKey, msg: &[u8], rng: &mut dyn Rng) -> Bytes;

    fn asym_decrypt(&self, sk: &SecretKey, ct: &[u8]) -> Option<Bytes>;
}

pub fn toy_provider() -> Arc<dyn CryptoProvider> {
    Arc::new(ToyProvider)
}

pub fn dl_provider() -> Arc<dyn CryptoProvider> {
    Arc::new(DlProvider)
}

fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

// ---------------------------------------------------------------------------
// Symmetric authenticated encryption (shared by both providers).
//
// Keystream blocks are SHA-256("ks", key, nonce, counter); the tag is a
// truncated SHA-256 MAC over (nonce, length, ciphertext) under a derived MAC
// key — encrypt-then-MAC. 128-bit keys, constant 36-byte expansion.
// ---------------------------------------------------------------------------

pub fn sym_key_gen(rng: &mut dyn Rng) -> SymKey {
    let mut k = [0u8; SYM_KEY_BYTES];
    rng.fill_bytes(&mut k);
    SymKey(k)
}

fn sym_xor_keystream(key: &SymKey, nonce: &[u8], data: &mut [u8]) {
    for (i, chunk) in data.chunks_mut(32).enumerate() {
        let block = sha(&[b"ks", &key.0, nonce, &(i as u64).to_be_bytes()]);
        for (b, k) in chunk.iter_mut().zip(block.iter()) {
            *b ^= k;
        }
    }
}

fn sym_tag(key: &SymKey, nonce: &[u8], ct: &[u8]) -> [u8; SYM_TAG_BYTES] {
    let mac_key = sha(&[b"mk", &key.0]);
    let t = sha(&[b"mac", &mac_key, nonce, &(ct.len() as u64).to_be_bytes(), ct]);
    t[..SYM_TAG_BYTES].try_into().unwrap()
}

pub fn sym_encrypt(key: &SymKey, msg: &[u8], rng: &mut dyn Rng) -> Bytes {
    let mut nonce = [0u8; SYM_NONCE_BYTES];
    rng.fill_bytes(&mut nonce);
    let mut body = msg.to_vec();
    sym_xor_keystream(key, &nonce, &mut body);
    let tag = sym_tag(key, &nonce, &body);
    let mut out = Vec::with_capacity(msg.len() + SYM_OVERHEAD);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&body);
    out.extend_from_slice(&tag);
    Bytes::from(out)
}

pub fn sym_decrypt(key: &SymKey, ct: &[u8]) -> Option<Bytes> {
    if ct.len() < SYM_OVERHEAD {
        return None;
    }
    let (nonce, rest) = ct.split_at(SYM_NONCE_BYTES);
    let (body, tag) = rest.split_at(rest.len() - SYM_TAG_BYTES);
    if sym_tag(key, nonce, body) != *tag {
        return None;
    }
    let mut out = body.to_vec();
    sym_xor_keystream(key, nonce, &mut out);
    Some(Bytes::from(out))
}

// ---------------------------------------------------------------------------
// Toy provider
// ---------------------------------------------------------------------------

const TOY_MASK: u8 = 0x5c;
const TOY_SIG_BYTES: usize = 20;

/// Behavioral test double. Public key = secret key XOR a constant, signature
/// = keyed hash. Anyone holding the public key could invert it; fine for a
/// simulator whose adversaries only act through this API.
#[derive(Debug)]
pub struct ToyProvider;

impl ToyProvider {
    fn sk_from_pk(pk: &PublicKey) -> Option<SecretKey> {
        if pk.material.len() != 20 {
            return None;
        }
        let m: Vec<u8> = pk.material.iter().map(|b| b ^ TOY_MASK).collect();
        Some(SecretKey { material: Bytes::from(m) })
    }
}

impl CryptoProvider for ToyProvider {
    fn name(&self) -> &'static str {
        "toy"
    }

    fn keypair_from_seed(&self, seed: &[u8]) -> KeyPair {
        let sk = hash160(&[b"toy-sk:", seed].concat());
        let pk: Vec<u8> = sk.0.iter().map(|b| b ^ TOY_MASK).collect();
        KeyPair {
            public: PublicKey { material: Bytes::from(pk) },
            secret: SecretKey { material: Bytes::copy_from_slice(&sk.0) },
        }
    }

    fn sign(&self, sk: &SecretKey, msg: &[u8]) -> Bytes {
        let d = sha(&[b"toy-sig", &sk.material, msg]);
        Bytes::copy_from_slice(&d[..TOY_SIG_BYTES])
    }

    fn verify(&self, pk: &PublicKey, msg: &[u8], sig: &[u8]) -> bool {
        match Self::sk_from_pk(pk) {
            Some(sk) => self.sign(&sk, msg).as_ref() == sig,
            None => false,
        }
    }

    fn asym_encrypt(&self, pk: &PublicKey, msg: &[u8], rng: &mut dyn Rng) -> Bytes {
        let sk = match Self::sk_from_pk(pk) {
            Some(sk) => sk,
            None => return Bytes::new(),
        };
        let k = sha(&[b"toy-asym", &sk.material]);
        sym_encrypt(&SymKey(k[..SYM_KEY_BYTES].try_into().unwrap()), msg, rng)
    }

    fn asym_decrypt(&self, sk: &SecretKey, ct: &[u8]) -> Option<Bytes> {
        let k = sha(&[b"toy-asym", &sk.material]);
        sym_decrypt(&SymKey(k[..SYM_KEY_BYTES].try_into().unwrap()), ct)
    }
}

// ---------------------------------------------------------------------------
// Discrete-log provider (Schnorr + hashed ElGamal)
// ---------------------------------------------------------------------------

// RFC 5114 §2.1: 1024-bit prime p with 160-bit prime-order subgroup ⟨g⟩.
const P_HEX: &str = "B10B8F96A080E01DDE92DE5EAE5D54EC52C99FBCFB06A3C69A6A9DCA52D23B61\
                     6073E28675A23D189838EF1E2EE652C013ECB4AEA9061123 24975C3CD49B83BF\
                     ACCBDD7D90C4BD7098488E9C219A73724EFFD6FAE5644738FAA31A4FF55BCCC0\
                     A151AF5F0DC8B4BD45BF37DF365C1A65E68CFDA76D4DA708DF1FB2BC2E4A4371";
const Q_HEX: &str = "F518AA8781A8DF278ABA4E7D64B7CB9D49462353";
const G_HEX: &str = "A4D1CBD5C3FD34126765A442EFB99905F8104DD258AC507FD6406CFF14266D31\
                     266FEA1E5C41564B777E690F5504F213160217B4B01B886A5E91547F9E2749F4\
                     D7FBD7D3B9A92EE1909D0D2263F80A76A6A24C087A091F531DBF0A0169B6A28A\
                     D662A4D18E73AFA32D779D5918D08BC8858F4DCEF97C2A24855E6EEB22B3B2E5";

const GROUP_BYTES: usize = 128;
const SCALAR_BYTES: usize = 20;
pub const DL_SIG_BYTES: usize = 2 * SCALAR_BYTES;
pub const DL_WRAP_OVERHEAD: usize = GROUP_BYTES + SYM_OVERHEAD;

struct Group {
    p: BigUint,
    q: BigUint,
    g: BigUint,
}

fn group() -> &'static Group {
    static G: OnceLock<Group> = OnceLock::new();
    G.get_or_init(|| {
        let clean = |s: &str| s.replace([' ', '\n'], "");
        Group {
            p: BigUint::parse_bytes(clean(P_HEX).as_bytes(), 16).unwrap(),
            q: BigUint::parse_bytes(clean(Q_HEX).as_bytes(), 16).unwrap(),
            g: BigUint::parse_bytes(clean(G_HEX).as_bytes(), 16).unwrap(),
        }
    })
}

fn to_fixed_be(n: &BigUint, width: usize) -> Vec<u8> {
    let b = n.to_bytes_be();
    assert!(b.len() <= width);
    let mut out = vec![0u8; width - b.len()];
    out.extend_from_slice(&b);
    out
}

/// Hash onto a nonzero scalar mod q.
fn scalar_from(parts: &[&[u8]]) -> BigUint {
    let g = group();
    let one = BigUint::from(1u8);
    let d = sha(parts);
    // Reduce mod (q-1), then shift into [1, q-1]: never zero.
    (BigUint::from_bytes_be(&d) % (&g.q - &one)) + one
}

#[derive(Debug)]
pub struct DlProvider;

impl CryptoProvider for DlProvider {
    fn name(&self) -> &'static str {
        "dl160"
    }

    fn keypair_from_seed(&self, seed: &[u8]) -> KeyPair {
        let g = group();
        let x = scalar_from(&[b"dl-sk", seed]);
        let y = g.g.modpow(&x, &g.p);
        KeyPair {
            public: PublicKey { material: Bytes::from(to_fixed_be(&y, GROUP_BYTES)) },
            secret: SecretKey { material: Bytes::from(to_fixed_be(&x, SCALAR_BYTES)) },
        }
    }

    fn sign(&self, sk: &SecretKey, msg: &[u8]) -> Bytes {
        let g = group();
        let x = BigUint::from_bytes_be(&sk.material);
        // Deterministic per-message nonce in the spirit of RFC 6979.
        let k = scalar_from(&[b"dl-nonce", &sk.material, msg]);
        let r = g.g.modpow(&k, &g.p);
        let e = BigUint::from_bytes_be(&sha(&[b"dl-e", &to_fixed_be(&r, GROUP_BYTES), msg])[..SCALAR_BYTES]) % &g.q;
        // s = k - x·e (mod q)
        let s = (&k + (&g.q - (&x * &e) % &g.q)) % &g.q;
        let mut out = to_fixed_be(&e, SCALAR_BYTES);
        out.extend_from_slice(&to_fixed_be(&s, SCALAR_BYTES));
        Bytes::from(out)
    }

    fn verify(&self, pk: &PublicKey, msg: &[u8], sig: &[u8]) -> bool {
        if sig.len() != DL_SIG_BYTES || pk.material.len() != GROUP_BYTES {
            return false;
        }
        let g = group();
        let y = BigUint::from_bytes_be(&pk.material);
        if y.bits() == 0 || y >= g.p {
            return false;
        }
        let e = BigUint::from_bytes_be(&sig[..SCALAR_BYTES]);
        let s = BigUint::from_bytes_be(&sig[SCALAR_BYTES..]);
        if e >= g.q || s >= g.q {
            return false;
        }
        // r' = g^s · y^e  and the signature holds iff H(r', m) == e.
        let r = (g.g.modpow(&s, &g.p) * y.modpow(&e, &g.p)) % &g.p;
        let e2 = BigUint::from_bytes_be(&sha(&[b"dl-e", &to_fixed_be(&r, GROUP_BYTES), msg])[..SCALAR_BYTES]) % &g.q;
        e2 == e
    }

    fn asym_encrypt(&self, pk: &PublicKey, msg: &[u8], rng: &mut dyn Rng) -> Bytes {
        let g = group();
        if pk.material.len() != GROUP_BYTES {
            return Bytes::new();
        }
        let y = BigUint::from_bytes_be(&pk.material);
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let u = scalar_from(&[b"dl-eph", &seed]);
        let c1 = g.g.modpow(&u, &g.p);
        let z = y.modpow(&u, &g.p);
        let kdf = sha(&[b"dl-kem", &to_fixed_be(&c1, GROUP_BYTES), &to_fixed_be(&z, GROUP_BYTES)]);
        let key = SymKey(kdf[..SYM_KEY_BYTES].try_into().unwrap());
        let mut out = to_fixed_be(&c1, GROUP_BYTES);
        out.extend_from_slice(&sym_encrypt(&key, msg, rng));
        Bytes::from(out)
    }

    fn asym_decrypt(&self, sk: &SecretKey, ct: &[u8]) -> Option<Bytes> {
        if ct.len() < DL_WRAP_OVERHEAD {
            return None;
        }
        let g = group();
        let c1 = BigUint::from_bytes_be(&ct[..GROUP_BYTES]);
        if c1.bits() == 0 || c1 >= g.p {
            return None;
        }
        let x = BigUint::from_bytes_be(&sk.material);
        let z = c1.modpow(&x, &g.p);
        let kdf = sha(&[b"dl-kem", &to_fixed_be(&c1, GROUP_BYTES), &to_fixed_be(&z, GROUP_BYTES)]);
        let key = SymKey(kdf[..SYM_KEY_BYTES].try_into().unwrap());
        sym_decrypt(&key, &ct[GROUP_BYTES..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng() -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(42)
    }

    fn providers() -> Vec<Arc<dyn CryptoProvider>> {
        vec![toy_provider(), dl_provider()]
    }

    #[test]
    fn sym_roundtrip_and_tamper_rejection() {
        let mut r = rng();
        let k = sym_key_gen(&mut r);
        for len in [0usize, 1, 31, 32, 33, 1000] {
            let msg: Vec<u8> = (0..len).map(|i| i as u8).collect();
            let ct = sym_encrypt(&k, &msg, &mut r);
            assert_eq!(ct.len(), len + SYM_OVERHEAD);
            assert_eq!(sym_decrypt(&k, &ct).unwrap(), msg);
            if !ct.is_empty() {
                let mut bad = ct.to_vec();
                bad[len / 2] ^= 1;
                assert!(sym_decrypt(&k, &bad).is_none(), "len {len}");
            }
        }
        let k2 = sym_key_gen(&mut r);
        let ct = sym_encrypt(&k, b"secret", &mut r);
        assert!(sym_decrypt(&k2, &ct).is_none());
    }

    #[test]
    fn credentials_are_deterministic_and_distinct() {
        for p in providers() {
            let a = p.keypair_from_credentials("alice", "pw1");
            let a2 = p.keypair_from_credentials("alice", "pw1");
            let b = p.keypair_from_credentials("alice", "pw2");
            assert_eq!(a.public.material, a2.public.material, "{}", p.name());
            assert_ne!(a.public.material, b.public.material, "{}", p.name());
            // Separator ambiguity check: ("ab","c") ≠ ("a","bc").
            let x = p.keypair_from_credentials("ab", "c");
            let y = p.keypair_from_credentials("a", "bc");
            assert_ne!(x.public.material, y.public.material, "{}", p.name());
        }
    }

    #[test]
    fn sign_verify_and_forgery_rejection() {
        let mut r = rng();
        let _ = &mut r;
        for p in providers() {
            let kp = p.keypair_from_credentials("alice", "pw");
            let other = p.keypair_from_credentials("bob", "pw");
            let msg = b"the quick brown fox";
            let sig = p.sign(&kp.secret, msg);
            assert!(p.verify(&kp.public, msg, &sig), "{}", p.name());
            assert!(!p.verify(&kp.public, b"the quick brown fix", &sig));
            assert!(!p.verify(&other.public, msg, &sig));
            let mut bad = sig.to_vec();
            bad[0] ^= 0x80;
            assert!(!p.verify(&kp.public, msg, &bad));
            assert!(!p.verify(&kp.public, msg, &sig[..sig.len() - 1]));
        }
    }

    #[test]
    fn asym_roundtrip_and_wrong_key() {
        let mut r = rng();
        for p in providers() {
            let kp = p.keypair_from_credentials("alice", "pw");
            let other = p.keypair_from_credentials("bob", "pw");
            let msg = [7u8; SYM_KEY_BYTES];
            let ct = p.asym_encrypt(&kp.public, &msg, &mut r);
            assert_eq!(p.asym_decrypt(&kp.secret, &ct).unwrap().as_ref(), msg);
            assert!(p.asym_decrypt(&other.secret, &ct).is_none(), "{}", p.name());
            let mut bad = ct.to_vec();
            let n = bad.len();
            bad[n - 1] ^= 1;
            assert!(p.asym_decrypt(&kp.secret, &bad).is_none());
        }
    }

    #[test]
    fn dl_signature_and_wrap_sizes_are_constant() {
        let mut r = rng();
        let p = DlProvider;
        let kp = p.keypair_from_seed(b"size-test");
        let mut sig_sizes = std::collections::BTreeSet::new();
        let mut overheads = std::collections::BTreeSet::new();
        for len in [0usize, 16, 100, 1455, 2133] {
            let msg = vec![0xabu8; len];
            sig_sizes.insert(p.sign(&kp.secret, &msg).len());
            let ct = p.asym_encrypt(&kp.public, &msg, &mut r);
            overheads.insert(ct.len() - len);
        }
        assert_eq!(sig_sizes.into_iter().collect::<Vec<_>>(), vec![DL_SIG_BYTES]);
        assert_eq!(overheads.into_iter().collect::<Vec<_>>(), vec![DL_WRAP_OVERHEAD]);
    }

    #[test]
    fn key_id_is_hash_of_material() {
        for p in providers() {
            let kp = p.keypair_from_credentials("alice", "pw");
            assert_eq!(p.key_id(&kp.public.material), hash160(&kp.public.material));
        }
    }
}
