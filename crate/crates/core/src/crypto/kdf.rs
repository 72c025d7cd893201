// SPDX-License-Identifier: Apache-2.0

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::{CryptoError, Secret};

type HmacSha256 = Hmac<Sha256>;

/// HMAC-SHA-256 counter-mode KDF in the TPM KDFa layout:
/// `HMAC(parent, [i]_be32 || label || 0x00 || context || [L_bits]_be32)`.
pub fn kdf_counter(parent: &Secret, label: &str, context: &[u8], out_len: usize) -> Result<Secret, CryptoError> {
    if !(Secret::MIN_LEN..=Secret::MAX_LEN).contains(&out_len) {
        return Err(CryptoError::InvalidLength(out_len));
    }
    Secret::new(expand(parent.expose(), label.as_bytes(), context, out_len))
}

pub(crate) fn expand(key: &[u8], label: &[u8], context: &[u8], out_len: usize) -> Vec<u8> {
    let bits = ((out_len * 8) as u32).to_be_bytes();
    let mut out = Vec::with_capacity(out_len + 32);
    let mut counter: u32 = 1;
    while out.len() < out_len {
        let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
        mac.update(&counter.to_be_bytes());
        mac.update(label);
        mac.update(&[0u8]);
        mac.update(context);
        mac.update(&bits);
        out.extend_from_slice(&mac.finalize().into_bytes());
        counter += 1;
    }
    out.truncate(out_len);
    out
}

pub(crate) fn hmac(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts any key length");
    for p in parts {
        mac.update(p);
    }
    mac.finalize().into_bytes().into()
}
