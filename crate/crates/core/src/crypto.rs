//! Ciphersuite registry and the primitives behind it.
//!
//! Only one suite is registered: X25519 key encapsulation, ChaCha20-Poly1305,
//! SHA-256 and Ed25519. All labelled derivations use HKDF-SHA256 with a
//! fixed label prefix so that outputs for different purposes never collide.

use chacha20poly1305::aead::{Aead, AeadInPlace, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::codec::{DecodeError, Reader, Writer};

/// Output length of the registered hash and of every secret in the key schedule.
pub const SECRET_LEN: usize = 32;
pub const AEAD_KEY_LEN: usize = 32;
pub const AEAD_NONCE_LEN: usize = 12;
pub const AEAD_TAG_LEN: usize = 16;
pub const MAC_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;

const LABEL_PREFIX: &[u8] = b"dtn-cka ";

pub type Secret = [u8; SECRET_LEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("AEAD authentication failed")]
    AeadFailure,
    #[error("signature verification failed")]
    BadSignature,
    #[error("malformed public key")]
    BadPublicKey,
    #[error("key agreement produced a low-order shared secret")]
    WeakSharedSecret,
}

pub const KEM_X25519_HKDF_SHA256: u16 = 0x0020;
pub const AEAD_CHACHA20_POLY1305: u16 = 0x0003;
pub const HASH_SHA256: u16 = 0x0004;
pub const SIG_ED25519: u16 = 0x0807;

/// Registered algorithm identifiers, one table per category.
pub const KEM_REGISTRY: &[(u16, &str)] = &[(KEM_X25519_HKDF_SHA256, "DHKEM(X25519, HKDF-SHA256)")];
pub const AEAD_REGISTRY: &[(u16, &str)] = &[(AEAD_CHACHA20_POLY1305, "ChaCha20Poly1305")];
pub const HASH_REGISTRY: &[(u16, &str)] = &[(HASH_SHA256, "SHA-256")];
pub const SIG_REGISTRY: &[(u16, &str)] = &[(SIG_ED25519, "Ed25519")];

/// The pseudo-random function every derivation is pinned to.
pub const KDF_NAME: &str = "HKDF-SHA256";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CipherSuiteProfile {
    pub kem_id: u16,
    pub aead_id: u16,
    pub hash_id: u16,
    pub sig_id: u16,
}

impl CipherSuiteProfile {
    pub const X25519_CHACHA20POLY1305_SHA256_ED25519: CipherSuiteProfile = CipherSuiteProfile {
        kem_id: KEM_X25519_HKDF_SHA256,
        aead_id: AEAD_CHACHA20_POLY1305,
        hash_id: HASH_SHA256,
        sig_id: SIG_ED25519,
    };

    pub fn is_registered(&self) -> bool {
        let known = |table: &[(u16, &str)], id| table.iter().any(|(k, _)| *k == id);
        known(KEM_REGISTRY, self.kem_id)
            && known(AEAD_REGISTRY, self.aead_id)
            && known(HASH_REGISTRY, self.hash_id)
            && known(SIG_REGISTRY, self.sig_id)
    }

    pub fn secret_len(&self) -> usize {
        SECRET_LEN
    }

    pub fn encode(&self, w: &mut Writer) {
        w.u16(self.kem_id).u16(self.aead_id).u16(self.hash_id).u16(self.sig_id);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(CipherSuiteProfile {
            kem_id: r.u16()?,
            aead_id: r.u16()?,
            hash_id: r.u16()?,
            sig_id: r.u16()?,
        })
    }
}

impl Default for CipherSuiteProfile {
    fn default() -> Self {
        Self::X25519_CHACHA20POLY1305_SHA256_ED25519
    }
}

pub fn hash(data: &[u8]) -> Secret {
    Sha256::digest(data).into()
}

pub fn hash_all<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Secret {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

/// HKDF-Extract.
pub fn extract(salt: &[u8], ikm: &[u8]) -> Secret {
    let (prk, _) = Hkdf::<Sha256>::extract(Some(salt), ikm);
    prk.into()
}

/// Largest output a single labelled expansion can produce (255 hash blocks).
pub const MAX_EXPAND_LEN: usize = 255 * SECRET_LEN;

/// HKDF-Expand with a structured info string:
/// `u16 length || u8 label_len || "dtn-cka " || label || u32 ctx_len || context`.
///
/// Panics if `secret` is shorter than the hash output or `length` exceeds
/// [`MAX_EXPAND_LEN`]; callers validate both.
pub fn expand_with_label(secret: &[u8], label: &str, context: &[u8], length: usize) -> Vec<u8> {
    assert!(length <= MAX_EXPAND_LEN, "expand length {length} out of range");
    let full_label_len = LABEL_PREFIX.len() + label.len();
    let mut info = Writer::new();
    info.u16(length as u16)
        .u8(u8::try_from(full_label_len).expect("label too long"))
        .raw(LABEL_PREFIX)
        .raw(label.as_bytes())
        .bytes(context);
    let hk = Hkdf::<Sha256>::from_prk(secret).expect("PRK shorter than hash output");
    let mut out = vec![0u8; length];
    hk.expand(&info.finish(), &mut out).expect("length checked above");
    out
}

pub fn derive_secret(secret: &[u8], label: &str) -> Secret {
    expand_to_array(secret, label, &[])
}

pub fn expand_to_array<const N: usize>(secret: &[u8], label: &str, context: &[u8]) -> [u8; N] {
    let v = expand_with_label(secret, label, context, N);
    let mut out = [0u8; N];
    out.copy_from_slice(&v);
    out
}

type HmacSha256 = Hmac<Sha256>;

pub fn mac(key: &[u8], data: &[u8]) -> [u8; MAC_LEN] {
    let mut m = <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    m.update(data);
    m.finalize().into_bytes().into()
}

/// Constant-time tag comparison.
pub fn verify_mac(key: &[u8], data: &[u8], tag: &[u8]) -> bool {
    let mut m = <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    m.update(data);
    m.verify_slice(tag).is_ok()
}

pub fn random_secret(rng: &mut (impl RngCore + CryptoRng)) -> Secret {
    let mut s = [0u8; SECRET_LEN];
    rng.fill_bytes(&mut s);
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KemPublicKey(pub [u8; 32]);

/// X25519 private scalar. Deliberately has no `Debug` output of its bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct KemPrivateKey(pub [u8; 32]);

impl std::fmt::Debug for KemPrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("KemPrivateKey(..)")
    }
}

impl KemPrivateKey {
    pub fn public_key(&self) -> KemPublicKey {
        KemPublicKey(PublicKey::from(&StaticSecret::from(self.0)).to_bytes())
    }
}

pub fn kem_generate(rng: &mut (impl RngCore + CryptoRng)) -> (KemPrivateKey, KemPublicKey) {
    let sk = KemPrivateKey(StaticSecret::random_from_rng(rng).to_bytes());
    let pk = sk.public_key();
    (sk, pk)
}

/// Deterministic key pair from a node secret (ratchet tree path secrets).
pub fn kem_derive(node_secret: &[u8]) -> (KemPrivateKey, KemPublicKey) {
    let sk = KemPrivateKey(derive_secret(node_secret, "node key"));
    let pk = sk.public_key();
    (sk, pk)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KemCiphertext {
    pub enc: [u8; 32],
    pub ciphertext: Vec<u8>,
}

impl KemCiphertext {
    pub fn encode(&self, w: &mut Writer) {
        w.raw(&self.enc).bytes(&self.ciphertext);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(KemCiphertext {
            enc: r.array()?,
            ciphertext: r.bytes_vec()?,
        })
    }
}

fn kem_schedule(shared: &[u8; 32], enc: &[u8; 32], recipient: &KemPublicKey, info: &[u8]) -> (Key, Nonce) {
    let prk = extract(&[enc.as_slice(), recipient.0.as_slice()].concat(), shared);
    let key: [u8; AEAD_KEY_LEN] = expand_to_array(&prk, "kem key", info);
    let nonce: [u8; AEAD_NONCE_LEN] = expand_to_array(&prk, "kem nonce", info);
    (Key::from(key), Nonce::from(nonce))
}

/// Encrypts `plaintext` to the holder of `recipient`'s private key using an
/// ephemeral X25519 exchange.
pub fn kem_seal(
    recipient: &KemPublicKey,
    info: &[u8],
    aad: &[u8],
    plaintext: &[u8],
    rng: &mut (impl RngCore + CryptoRng),
) -> Result<KemCiphertext, CryptoError> {
    let eph = StaticSecret::random_from_rng(rng);
    let enc = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(recipient.0));
    if !shared.was_contributory() {
        return Err(CryptoError::WeakSharedSecret);
    }
    let (key, nonce) = kem_schedule(shared.as_bytes(), &enc, recipient, info);
    let ciphertext = ChaCha20Poly1305::new(&key)
        .encrypt(&nonce, Payload { msg: plaintext, aad })
        .map_err(|_| CryptoError::AeadFailure)?;
    Ok(KemCiphertext { enc, ciphertext })
}

pub fn kem_open(private: &KemPrivateKey, ct: &KemCiphertext, info: &[u8], aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let sk = StaticSecret::from(private.0);
    let shared = sk.diffie_hellman(&PublicKey::from(ct.enc));
    if !shared.was_contributory() {
        return Err(CryptoError::WeakSharedSecret);
    }
    let (key, nonce) = kem_schedule(shared.as_bytes(), &ct.enc, &private.public_key(), info);
    ChaCha20Poly1305::new(&key)
        .decrypt(
            &nonce,
            Payload {
                msg: &ct.ciphertext,
                aad,
            },
        )
        .map_err(|_| CryptoError::AeadFailure)
}

/// Encrypts `buf` in place, returning the detached tag.
pub fn aead_seal_detached(
    key: &[u8; AEAD_KEY_LEN],
    nonce: &[u8; AEAD_NONCE_LEN],
    aad: &[u8],
    buf: &mut [u8],
) -> [u8; AEAD_TAG_LEN] {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .encrypt_in_place_detached(Nonce::from_slice(nonce), aad, buf)
        .expect("buffer within AEAD limits")
        .into()
}

pub fn aead_open_detached(
    key: &[u8; AEAD_KEY_LEN],
    nonce: &[u8; AEAD_NONCE_LEN],
    aad: &[u8],
    buf: &mut [u8],
    tag: &[u8],
) -> Result<(), CryptoError> {
    if tag.len() != AEAD_TAG_LEN {
        return Err(CryptoError::AeadFailure);
    }
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt_in_place_detached(Nonce::from_slice(nonce), aad, buf, Tag::from_slice(tag))
        .map_err(|_| CryptoError::AeadFailure)
}

fn signing_content(label: &str, content: &[u8]) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(LABEL_PREFIX).str(label).bytes(content);
    w.finish()
}

pub fn sign(key: &SigningKey, label: &str, content: &[u8]) -> [u8; SIGNATURE_LEN] {
    key.sign(&signing_content(label, content)).to_bytes()
}

pub fn verify(public: &[u8; 32], label: &str, content: &[u8], sig: &[u8]) -> Result<(), CryptoError> {
    let vk = VerifyingKey::from_bytes(public).map_err(|_| CryptoError::BadPublicKey)?;
    let sig: [u8; SIGNATURE_LEN] = sig.try_into().map_err(|_| CryptoError::BadSignature)?;
    vk.verify_strict(
        &signing_content(label, content),
        &ed25519_dalek::Signature::from_bytes(&sig),
    )
    .map_err(|_| CryptoError::BadSignature)
}
