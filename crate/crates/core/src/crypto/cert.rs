// SPDX-License-Identifier: Apache-2.0

use super::{hash, sign, verify, Digest32, KeyRole, PublicKey, Signature, SigningKeyPair};
use crate::codec::{Canonical, CodecError, Decoder, Encoder};

/// Minimal certificate: role byte, subject point, issuer name digest, serial,
/// and the issuer's signature over everything before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub role: KeyRole,
    pub subject: PublicKey,
    pub issuer: Digest32,
    pub serial: u64,
    pub signature: Signature,
}

impl Certificate {
    pub fn issue(issuer: &SigningKeyPair, role: KeyRole, subject: &PublicKey, serial: u64) -> Self {
        let issuer_name = issuer.public().name();
        let tbs = tbs_bytes(role, subject, &issuer_name, serial);
        Certificate {
            role,
            subject: *subject,
            issuer: issuer_name,
            serial,
            signature: sign(issuer, &tbs),
        }
    }

    pub fn self_signed(key: &SigningKeyPair, serial: u64) -> Self {
        Self::issue(key, key.role(), key.public(), serial)
    }

    pub fn verify(&self, issuer: &PublicKey) -> bool {
        self.issuer == issuer.name()
            && verify(issuer, &tbs_bytes(self.role, &self.subject, &self.issuer, self.serial), &self.signature)
    }

    pub fn digest(&self) -> Digest32 {
        hash(&self.to_bytes())
    }
}

fn tbs_bytes(role: KeyRole, subject: &PublicKey, issuer: &Digest32, serial: u64) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.fixed(b"CERT").value(&role).value(subject).value(issuer).u64(serial);
    enc.finish()
}

impl Canonical for Certificate {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.role)
            .value(&self.subject)
            .value(&self.issuer)
            .u64(self.serial)
            .value(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Certificate {
            role: dec.value()?,
            subject: dec.value()?,
            issuer: dec.value()?,
            serial: dec.u64()?,
            signature: dec.value()?,
        })
    }
}
