// SPDX-License-Identifier: Apache-2.0

//! Algorithm-pinned primitives: SHA-256, HMAC-SHA-256 counter-mode KDF,
//! ECDSA/ECDH over P-256 and AES-256-GCM.

mod cert;
mod channel;
mod kdf;
mod keys;
mod rng;

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;
use zeroize::Zeroize;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};

pub use cert::Certificate;
pub use channel::{channel_open, channel_seal};
pub use kdf::kdf_counter;
pub(crate) use kdf::hmac;
pub use keys::{ecdh_two_phase, sign, verify, KeyRole, PublicKey, SharedSecret, Signature, SigningKeyPair};
pub use rng::RandomSource;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid length {0}")]
    InvalidLength(usize),
    #[error("malformed signature encoding")]
    MalformedSignature,
    #[error("point is not a valid curve point")]
    InvalidPoint,
    #[error("authenticated decryption failed")]
    AuthFailure,
    #[error("random source self-test failed")]
    RngFailure,
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let v = hex::decode(s).ok()?;
        Some(Digest32(v.try_into().ok()?))
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest32({}..)", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl AsRef<[u8]> for Digest32 {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl Canonical for Digest32 {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Digest32(dec.fixed()?))
    }
}

pub fn hash(data: &[u8]) -> Digest32 {
    Digest32(Sha256::digest(data).into())
}

/// Hash over several fields, each length-prefixed so boundaries are unambiguous.
pub fn hash_parts(parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u32).to_le_bytes());
        h.update(p);
    }
    Digest32(h.finalize().into())
}

/// Secret octet string of 16 to 64 bytes, wiped on drop.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(Vec<u8>);

impl Secret {
    pub const MIN_LEN: usize = 16;
    pub const MAX_LEN: usize = 64;

    pub fn new(bytes: Vec<u8>) -> Result<Self, CryptoError> {
        if !(Self::MIN_LEN..=Self::MAX_LEN).contains(&bytes.len()) {
            return Err(CryptoError::InvalidLength(bytes.len()));
        }
        Ok(Secret(bytes))
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        Self::new(bytes.to_vec())
    }

    pub fn expose(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Only for encodings that are subsequently sealed.
    pub(crate) fn encode_sealed(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }

    pub(crate) fn decode_sealed(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Secret::new(dec.bytes()?).map_err(|_| CodecError::Invalid("secret length"))
    }
}

impl Drop for Secret {
    fn drop(&mut self) {
        self.0.zeroize();
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Secret({} bytes)", self.0.len())
    }
}
