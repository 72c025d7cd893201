// SPDX-License-Identifier: Apache-2.0

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, KeyInit, Nonce};

use super::kdf::hmac;
use super::{CryptoError, Secret};

const NONCE_LEN: usize = 12;

/// AES-256-GCM with a synthetic nonce `HMAC(key, aad || plaintext)[..12]`.
/// Output is `nonce || ciphertext || tag`. The nonce only repeats when the
/// whole input repeats, so sealing is deterministic without nonce reuse.
pub fn channel_seal(key: &Secret, plaintext: &[u8], aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let cipher = cipher(key)?;
    let mac = hmac(key.expose(), &[b"SIV-NONCE", &(aad.len() as u64).to_le_bytes(), aad, plaintext]);
    let nonce: [u8; NONCE_LEN] = mac[..NONCE_LEN].try_into().expect("mac is 32 bytes");
    let ct = cipher
        .encrypt(&Nonce::from(nonce), Payload { msg: plaintext, aad })
        .map_err(|_| CryptoError::AuthFailure)?;
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    Ok(out)
}

pub fn channel_open(key: &Secret, sealed: &[u8], aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let cipher = cipher(key)?;
    if sealed.len() < NONCE_LEN + 16 {
        return Err(CryptoError::AuthFailure);
    }
    let (nonce, ct) = sealed.split_at(NONCE_LEN);
    let nonce: [u8; NONCE_LEN] = nonce.try_into().expect("split at nonce length");
    cipher
        .decrypt(&Nonce::from(nonce), Payload { msg: ct, aad })
        .map_err(|_| CryptoError::AuthFailure)
}

fn cipher(key: &Secret) -> Result<Aes256Gcm, CryptoError> {
    if key.len() != 32 {
        return Err(CryptoError::InvalidLength(key.len()));
    }
    Ok(Aes256Gcm::new_from_slice(key.expose()).expect("32-byte key"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::RandomSource;

    #[test]
    fn round_trip_4k() {
        let rng = RandomSource::seeded(9);
        let key = rng.secret(32);
        let mut msg = vec![0u8; 4096];
        rng.fill(&mut msg);
        let ct = channel_seal(&key, &msg, b"aad").unwrap();
        assert_eq!(channel_open(&key, &ct, b"aad").unwrap(), msg);
    }

    #[test]
    fn bit_flip_wrong_key_and_wrong_aad_fail() {
        let rng = RandomSource::seeded(10);
        let key = rng.secret(32);
        let ct = channel_seal(&key, b"payload", b"aad").unwrap();
        for i in 0..ct.len() {
            let mut bad = ct.clone();
            bad[i] ^= 0x01;
            assert_eq!(channel_open(&key, &bad, b"aad"), Err(CryptoError::AuthFailure));
        }
        assert_eq!(channel_open(&rng.secret(32), &ct, b"aad"), Err(CryptoError::AuthFailure));
        assert_eq!(channel_open(&key, &ct, b"other"), Err(CryptoError::AuthFailure));
    }

    #[test]
    fn key_must_be_32_bytes() {
        let key = Secret::new(vec![1; 16]).unwrap();
        assert_eq!(channel_seal(&key, b"x", b""), Err(CryptoError::InvalidLength(16)));
    }

    #[test]
    fn wrong_key_fails_over_many_trials() {
        let rng = RandomSource::seeded(11);
        for _ in 0..1000 {
            let (k1, k2) = (rng.secret(32), rng.secret(32));
            let mut m = vec![0u8; 64];
            rng.fill(&mut m);
            let ct = channel_seal(&k1, &m, b"a").unwrap();
            assert_eq!(channel_open(&k1, &ct, b"a").unwrap(), m);
            assert_eq!(channel_open(&k2, &ct, b"a"), Err(CryptoError::AuthFailure));
        }
    }
}
