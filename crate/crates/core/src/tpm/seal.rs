// SPDX-License-Identifier: Apache-2.0

use super::{Hierarchy, PcrSelection, TpmError, TpmState};
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{channel_open, channel_seal, kdf_counter, Digest32, Secret};

/// PCR selection plus the composite digest it must evaluate to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcrPolicy {
    pub selection: PcrSelection,
    pub digest: Digest32,
}

impl PcrPolicy {
    /// Policy that binds to nothing.
    pub const NONE: PcrPolicy = PcrPolicy { selection: PcrSelection::EMPTY, digest: Digest32::ZERO };
}

impl Canonical for PcrPolicy {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.selection).value(&self.digest);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(PcrPolicy { selection: dec.value()?, digest: dec.value()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub policy: PcrPolicy,
    pub seed_version: u64,
    pub ciphertext: Vec<u8>,
}

impl SealedBlob {
    fn aad(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(&self.policy).u64(self.seed_version);
        enc.finish()
    }
}

impl Canonical for SealedBlob {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.policy).u64(self.seed_version).bytes(&self.ciphertext);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(SealedBlob { policy: dec.value()?, seed_version: dec.u64()?, ciphertext: dec.bytes()? })
    }
}

impl TpmState {
    fn seal_key(&self) -> Secret {
        kdf_counter(&self.seeds[&Hierarchy::Storage].seed, "SEAL", b"", 32).expect("valid length")
    }

    /// Policy matching the current values of `selection`.
    pub fn current_policy(&self, selection: PcrSelection) -> PcrPolicy {
        PcrPolicy { selection, digest: self.pcr_composite(selection) }
    }

    pub fn seal(&mut self, data: &[u8], policy: PcrPolicy) -> SealedBlob {
        self.tick();
        let mut blob =
            SealedBlob { policy, seed_version: self.seeds[&Hierarchy::Storage].version, ciphertext: Vec::new() };
        blob.ciphertext = channel_seal(&self.seal_key(), data, &blob.aad()).expect("32-byte key");
        blob
    }

    /// Succeeds iff the composite over the policy's selection equals the
    /// recorded digest. An empty selection always passes.
    pub fn unseal(&mut self, blob: &SealedBlob) -> Result<Vec<u8>, TpmError> {
        self.tick();
        let current = self.seeds[&Hierarchy::Storage].version;
        if blob.seed_version != current {
            return Err(TpmError::SeedVersionMismatch { blob: blob.seed_version, current });
        }
        if !blob.policy.selection.is_empty() && self.pcr_composite(blob.policy.selection) != blob.policy.digest {
            return Err(TpmError::PolicyFailure);
        }
        channel_open(&self.seal_key(), &blob.ciphertext, &blob.aad()).map_err(|_| TpmError::AuthFailure)
    }
}
