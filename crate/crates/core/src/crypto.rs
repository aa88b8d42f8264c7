//! Hashing, signatures and key material.
//!
//! Digests are SHA-256. Signatures are Ed25519 over the SHA-256 digest of the
//! message, widened to a fixed 256-byte encoding: the 64-byte Ed25519
//! signature followed by 192 bytes of SHA-256 counter expansion of that
//! signature. Verification checks both halves, so every byte is load-bearing.

use std::fmt;

use ed25519_dalek::pkcs8::spki::der::pem::LineEnding;
use ed25519_dalek::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 256;

const ED25519_SIG_LEN: usize = 64;
const PAD_DOMAIN: &[u8] = b"pot/sig-pad/v1";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("secret key must be 32 bytes, got {0}")]
    BadSecretLength(usize),
    #[error("public key is not a valid curve point")]
    BadPublicKey,
    #[error("pem decoding failed: {0}")]
    Pem(String),
}

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest32(pub [u8; DIGEST_LEN]);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0; DIGEST_LEN]);

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        Some(Digest32(raw.try_into().ok()?))
    }

    /// First 8 hex characters, for reports.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest32({})", self.short())
    }
}

impl fmt::Display for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(data: &[u8]) -> Digest32 {
    Digest32(Sha256::digest(data).into())
}

/// Hash of the concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest32(h.finalize().into())
}

/// Verification key of a participant.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let raw = hex::decode(s).ok()?;
        Some(PublicKey(raw.try_into().ok()?))
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }

    pub fn to_pem(&self) -> Result<String, KeyError> {
        let vk = VerifyingKey::from_bytes(&self.0).map_err(|_| KeyError::BadPublicKey)?;
        vk.to_public_key_pem(LineEnding::LF)
            .map_err(|e| KeyError::Pem(e.to_string()))
    }

    pub fn from_pem(pem: &str) -> Result<Self, KeyError> {
        let vk = VerifyingKey::from_public_key_pem(pem).map_err(|e| KeyError::Pem(e.to_string()))?;
        Ok(PublicKey(vk.to_bytes()))
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.short())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Fixed-width 256-byte signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature256(pub [u8; SIGNATURE_LEN]);

impl Signature256 {
    pub const ZERO: Signature256 = Signature256([0; SIGNATURE_LEN]);

    pub fn as_bytes(&self) -> &[u8; SIGNATURE_LEN] {
        &self.0
    }

    pub fn from_slice(raw: &[u8]) -> Option<Self> {
        Some(Signature256(raw.try_into().ok()?))
    }
}

impl Default for Signature256 {
    fn default() -> Self {
        Self::ZERO
    }
}

impl fmt::Debug for Signature256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature256({}..)", hex::encode(&self.0[..4]))
    }
}

fn pad_signature(core: &[u8; ED25519_SIG_LEN]) -> [u8; SIGNATURE_LEN] {
    let mut out = [0u8; SIGNATURE_LEN];
    out[..ED25519_SIG_LEN].copy_from_slice(core);
    for (i, chunk) in out[ED25519_SIG_LEN..].chunks_mut(DIGEST_LEN).enumerate() {
        let block = hash_parts(&[PAD_DOMAIN, core, &[i as u8]]);
        chunk.copy_from_slice(&block.0[..chunk.len()]);
    }
    out
}

/// Signing identity. The secret never leaves this type except through PEM.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_secret_bytes(secret: &[u8]) -> Result<Self, KeyError> {
        let raw: [u8; 32] = secret
            .try_into()
            .map_err(|_| KeyError::BadSecretLength(secret.len()))?;
        let signing = SigningKey::from_bytes(&raw);
        let public = PublicKey(signing.verifying_key().to_bytes());
        Ok(KeyPair { signing, public })
    }

    /// Deterministic key derived from a 64-bit seed. Used by simulations so
    /// every run with the same seed has the same identities.
    pub fn from_seed(seed: u64) -> Self {
        let secret = hash_parts(&[b"pot/key-seed", &seed.to_be_bytes()]);
        Self::from_secret_bytes(&secret.0).expect("32-byte digest")
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn to_pem(&self) -> Result<String, KeyError> {
        self.signing
            .to_pkcs8_pem(LineEnding::LF)
            .map(|z| z.to_string())
            .map_err(|e| KeyError::Pem(e.to_string()))
    }

    pub fn from_pem(pem: &str) -> Result<Self, KeyError> {
        let signing = SigningKey::from_pkcs8_pem(pem).map_err(|e| KeyError::Pem(e.to_string()))?;
        let public = PublicKey(signing.verifying_key().to_bytes());
        Ok(KeyPair { signing, public })
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

pub fn sign(key: &KeyPair, data: &[u8]) -> Signature256 {
    let digest = hash(data);
    let core = key.signing.sign(&digest.0).to_bytes();
    Signature256(pad_signature(&core))
}

/// Malformed keys or signatures verify as `false`.
pub fn verify_sig(pk: &PublicKey, sig: &Signature256, data: &[u8]) -> bool {
    let core: [u8; ED25519_SIG_LEN] = sig.0[..ED25519_SIG_LEN].try_into().expect("fixed slice");
    if pad_signature(&core) != sig.0 {
        return false;
    }
    let Ok(vk) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let digest = hash(data);
    vk.verify_strict(&digest.0, &ed25519_dalek::Signature::from_bytes(&core))
        .is_ok()
}

macro_rules! hex_serde {
    ($ty:ty, $ctor:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                let raw = hex::decode(&s).map_err(serde::de::Error::custom)?;
                let arr = raw
                    .try_into()
                    .map_err(|_| serde::de::Error::custom("wrong length"))?;
                Ok($ctor(arr))
            }
        }
    };
}

hex_serde!(Digest32, Digest32);
hex_serde!(PublicKey, PublicKey);
hex_serde!(Signature256, Signature256);
