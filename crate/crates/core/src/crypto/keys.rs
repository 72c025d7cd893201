// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use p256::elliptic_curve::sec1::ToEncodedPoint;

use super::kdf::expand;
use super::{hash, kdf_counter, CryptoError, Digest32, Secret};
use crate::codec::{Canonical, CodecError, Decoder, Encoder};

/// What a key is for. Immutable once the key exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum KeyRole {
    Ark = 1,
    Ask = 2,
    Vcek = 3,
    Pek = 4,
    Ek = 5,
    Aik = 6,
    Srk = 7,
    Storage = 8,
    Oca = 9,
    TpmVendor = 10,
    Verifier = 11,
    Identity = 12,
    Ephemeral = 13,
    Publisher = 14,
    Node = 15,
}

impl KeyRole {
    pub fn from_u8(v: u8) -> Option<Self> {
        use KeyRole::*;
        Some(match v {
            1 => Ark,
            2 => Ask,
            3 => Vcek,
            4 => Pek,
            5 => Ek,
            6 => Aik,
            7 => Srk,
            8 => Storage,
            9 => Oca,
            10 => TpmVendor,
            11 => Verifier,
            12 => Identity,
            13 => Ephemeral,
            14 => Publisher,
            15 => Node,
            _ => return None,
        })
    }
}

impl Canonical for KeyRole {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(*self as u8);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        KeyRole::from_u8(dec.u8()?).ok_or(CodecError::Invalid("key role"))
    }
}

/// P-256 public point. Always a valid non-identity point.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(p256::PublicKey);

impl PublicKey {
    pub const ENCODED_LEN: usize = 65;

    pub fn from_sec1(bytes: &[u8]) -> Result<Self, CryptoError> {
        p256::PublicKey::from_sec1_bytes(bytes)
            .map(PublicKey)
            .map_err(|_| CryptoError::InvalidPoint)
    }

    /// Uncompressed SEC1 encoding.
    pub fn to_sec1(&self) -> [u8; 65] {
        let point = self.0.to_encoded_point(false);
        let mut out = [0u8; 65];
        out.copy_from_slice(point.as_bytes());
        out
    }

    /// TPM-style object name: digest of the public encoding.
    pub fn name(&self) -> Digest32 {
        hash(&self.to_sec1())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}..)", &self.name().to_hex()[..12])
    }
}

impl Canonical for PublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.to_sec1());
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let raw: [u8; 65] = dec.fixed()?;
        PublicKey::from_sec1(&raw).map_err(|_| CodecError::Invalid("curve point"))
    }
}

/// Fixed-width `r || s` ECDSA signature.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; 64]);

impl Signature {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let sig = EcdsaSignature::from_slice(bytes).map_err(|_| CryptoError::MalformedSignature)?;
        let mut out = [0u8; 64];
        out.copy_from_slice(&sig.to_bytes());
        Ok(Signature(out))
    }

    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", hex::encode(&self.0[..6]))
    }
}

impl Canonical for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let raw: [u8; 64] = dec.fixed()?;
        Signature::from_bytes(&raw).map_err(|_| CodecError::Invalid("signature"))
    }
}

#[derive(Clone)]
pub struct SigningKeyPair {
    signing: SigningKey,
    public: PublicKey,
    role: KeyRole,
}

impl SigningKeyPair {
    /// Deterministically derives a key pair from seed material. Candidate
    /// scalars outside `[1, n)` are skipped by bumping the derivation counter.
    pub fn from_seed(role: KeyRole, seed: &Secret) -> Self {
        let mut attempt: u32 = 0;
        loop {
            let candidate = expand(seed.expose(), b"ECC-P256-SCALAR", &attempt.to_be_bytes(), 32);
            if let Ok(signing) = SigningKey::from_slice(&candidate) {
                let public = PublicKey(p256::PublicKey::from(signing.verifying_key()));
                return Self { signing, public, role };
            }
            attempt += 1;
        }
    }

    /// Derive from a parent secret under a label, the common case for
    /// hierarchy keys.
    pub fn derive(role: KeyRole, parent: &Secret, label: &str, context: &[u8]) -> Self {
        let seed = kdf_counter(parent, label, context, 32).expect("32 is a valid length");
        Self::from_seed(role, &seed)
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn role(&self) -> KeyRole {
        self.role
    }

    pub(crate) fn ecdh(&self, peer: &PublicKey) -> [u8; 32] {
        let shared = p256::ecdh::diffie_hellman(self.signing.as_nonzero_scalar(), peer.0.as_affine());
        (*shared.raw_secret_bytes()).into()
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("role", &self.role)
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

/// ECDSA P-256 with SHA-256 over `msg`. Nonces follow RFC 6979, so equal
/// inputs give equal signatures.
pub fn sign(key: &SigningKeyPair, msg: &[u8]) -> Signature {
    let sig: EcdsaSignature = key.signing.sign(msg);
    let mut out = [0u8; 64];
    out.copy_from_slice(&sig.to_bytes());
    Signature(out)
}

pub fn verify(public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(sig) = EcdsaSignature::from_slice(&sig.0) else {
        return false;
    };
    VerifyingKey::from(&public.0).verify(msg, &sig).is_ok()
}

/// Output of the two-phase exchange.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret {
    pub secret: Secret,
    /// Digest over both parties' static and ephemeral points, independent of
    /// which side computed it.
    pub transcript: Digest32,
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SharedSecret").field("transcript", &self.transcript).finish_non_exhaustive()
    }
}

/// Two-phase ECDH: one static-static and one ephemeral-ephemeral share,
/// combined through the counter KDF.
pub fn ecdh_two_phase(
    static_own: &SigningKeyPair,
    ephem_own: &SigningKeyPair,
    static_peer: &[u8],
    ephem_peer: &[u8],
) -> Result<SharedSecret, CryptoError> {
    let static_peer = PublicKey::from_sec1(static_peer)?;
    let ephem_peer = PublicKey::from_sec1(ephem_peer)?;

    let z_static = static_own.ecdh(&static_peer);
    let z_ephem = ephem_own.ecdh(&ephem_peer);

    let mut own = static_own.public.to_sec1().to_vec();
    own.extend_from_slice(&ephem_own.public.to_sec1());
    let mut peer = static_peer.to_sec1().to_vec();
    peer.extend_from_slice(&ephem_peer.to_sec1());
    let (lo, hi) = if own <= peer { (own, peer) } else { (peer, own) };
    let mut transcript_input = lo;
    transcript_input.extend_from_slice(&hi);
    let transcript = hash(&transcript_input);

    let mut z = z_static.to_vec();
    z.extend_from_slice(&z_ephem);
    let z = Secret::new(z)?;
    let secret = kdf_counter(&z, "ZGEN-2PHASE", transcript.as_bytes(), 32)?;
    Ok(SharedSecret { secret, transcript })
}
