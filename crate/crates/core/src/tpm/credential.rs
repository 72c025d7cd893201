// SPDX-License-Identifier: Apache-2.0

//! `MakeCredential` / `ActivateCredential`: wraps a secret so that only the
//! holder of a given EK, with a loaded key of a given name, can recover it.

use super::{Handle, TpmError, TpmState};
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{channel_open, channel_seal, kdf_counter, Digest32, PublicKey, RandomSource, Secret, SigningKeyPair, KeyRole};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CredentialChallenge {
    pub ephemeral: PublicKey,
    pub enc_identity: Vec<u8>,
    pub integrity: [u8; 32],
}

impl Canonical for CredentialChallenge {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.ephemeral).bytes(&self.enc_identity).fixed(&self.integrity);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(CredentialChallenge { ephemeral: dec.value()?, enc_identity: dec.bytes()?, integrity: dec.fixed()? })
    }
}

struct CredentialKeys {
    sym: Secret,
    hmac: Secret,
}

fn credential_keys(z: &[u8; 32], ek: &PublicKey, ephemeral: &PublicKey) -> CredentialKeys {
    let mut ctx = ek.to_sec1().to_vec();
    ctx.extend_from_slice(&ephemeral.to_sec1());
    let z = Secret::from_slice(z).expect("32 bytes");
    let seed = kdf_counter(&z, "IDENTITY", &ctx, 32).expect("valid length");
    CredentialKeys {
        sym: kdf_counter(&seed, "STORAGE-SYM", b"", 32).expect("valid length"),
        hmac: kdf_counter(&seed, "INTEGRITY", b"", 32).expect("valid length"),
    }
}

fn integrity(keys: &CredentialKeys, enc_identity: &[u8], aik_name: &Digest32) -> [u8; 32] {
    crate::crypto::hmac(keys.hmac.expose(), &[enc_identity, aik_name.as_bytes()])
}

/// Wraps `n` for the TPM holding `ek_pub` and a key named `aik_name`.
pub fn make_credential(n: &Secret, aik_name: &Digest32, ek_pub: &PublicKey, rng: &RandomSource) -> CredentialChallenge {
    let eph = SigningKeyPair::from_seed(KeyRole::Ephemeral, &rng.secret(32));
    let z = eph.ecdh(ek_pub);
    let keys = credential_keys(&z, ek_pub, eph.public());
    let enc_identity = channel_seal(&keys.sym, n.expose(), b"IDENTITY").expect("32-byte key");
    let integrity = integrity(&keys, &enc_identity, aik_name);
    CredentialChallenge { ephemeral: *eph.public(), enc_identity, integrity }
}

/// Recovers the wrapped secret with the EK private key. A wrong EK fails
/// decryption; a right EK with a wrong name fails the integrity binding.
pub fn activate_credential(
    ch: &CredentialChallenge,
    aik_name: &Digest32,
    ek: &SigningKeyPair,
) -> Result<Secret, TpmError> {
    let z = ek.ecdh(&ch.ephemeral);
    let keys = credential_keys(&z, ek.public(), &ch.ephemeral);
    let n = channel_open(&keys.sym, &ch.enc_identity, b"IDENTITY").map_err(|_| TpmError::AuthFailure)?;
    if integrity(&keys, &ch.enc_identity, aik_name) != ch.integrity {
        return Err(TpmError::NameMismatch);
    }
    Secret::new(n).map_err(|_| TpmError::AuthFailure)
}

impl TpmState {
    /// `TPM2_ActivateCredential` with the EK and a loaded key.
    pub fn activate_credential(&mut self, key: Handle, ch: &CredentialChallenge) -> Result<Secret, TpmError> {
        self.tick();
        let name = self.object(key)?.blob.name();
        let ek = &self.object(self.ek)?.key;
        activate_credential(ch, &name, ek)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use crate::tpm::KeyAttributes;

    #[test]
    fn round_trip_and_failures() {
        let mut tpm = TpmState::manufacture(&Secret::new(vec![3; 32]).unwrap()).unwrap();
        let ek = tpm.ek_handle();
        let aik = tpm.create_key(ek, KeyRole::Aik, KeyAttributes::ATTESTATION).unwrap();
        let h = tpm.load_key(&aik).unwrap();
        let rng = RandomSource::seeded(1);
        let n = rng.secret(32);

        let ch = make_credential(&n, &aik.name(), &tpm.ek_public(), &rng);
        assert_eq!(tpm.activate_credential(h, &ch).unwrap(), n);

        let wrong_name = make_credential(&n, &hash(b"other"), &tpm.ek_public(), &rng);
        assert_eq!(tpm.activate_credential(h, &wrong_name), Err(TpmError::NameMismatch));

        let other = TpmState::manufacture(&Secret::new(vec![4; 32]).unwrap()).unwrap();
        let wrong_ek = make_credential(&n, &aik.name(), &other.ek_public(), &rng);
        assert_eq!(tpm.activate_credential(h, &wrong_ek), Err(TpmError::AuthFailure));

        let round = CredentialChallenge::from_bytes(&ch.to_bytes()).unwrap();
        assert_eq!(round, ch);
    }
}
