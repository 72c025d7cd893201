// SPDX-License-Identifier: Apache-2.0

//! Encrypted persistence of the whole TPM state.
//!
//! File layout: `"CTPMNV01" || version:u16 || AEAD(state)`, where the AEAD
//! additional data is the 10-byte header.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use super::{CvmSecretRecord, Handle, Hierarchy, KeyBlob, KeyTreeMode, LoadedObject, PcrBank, SeedRecord, TpmError, TpmState};
use crate::codec::{CodecError, Decoder, Encoder};
use crate::crypto::{channel_open, channel_seal, Certificate, Digest32, Secret, SigningKeyPair};

pub const NV_MAGIC: &[u8; 8] = b"CTPMNV01";
pub const NV_FORMAT_VERSION: u16 = 1;

fn header(version: u16) -> [u8; 10] {
    let mut h = [0u8; 10];
    h[..8].copy_from_slice(NV_MAGIC);
    h[8..].copy_from_slice(&version.to_le_bytes());
    h
}

impl TpmState {
    fn encode_state(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u32(self.seeds.len() as u32);
        for (h, rec) in &self.seeds {
            enc.value(h).u64(rec.version).u64(rec.timestamp);
            rec.seed.encode_sealed(&mut enc);
        }
        enc.u32(self.disabled.len() as u32);
        for h in &self.disabled {
            enc.value(h);
        }
        enc.value(&self.pcrs);
        enc.u32(self.objects.len() as u32);
        for (handle, obj) in &self.objects {
            enc.value(handle).value(&obj.blob);
            obj.sensitive.encode_sealed(&mut enc);
        }
        enc.u32(self.next_handle);
        enc.u32(self.nv.len() as u32);
        for (idx, data) in &self.nv {
            enc.u32(*idx).bytes(data);
        }
        enc.u32(self.cvm_secrets.len() as u32);
        for rec in self.cvm_secrets.values() {
            enc.bytes(&rec.cvm_id).u64(rec.seed_version);
            rec.master_secret.encode_sealed(&mut enc);
        }
        enc.u32(self.deactivated.len() as u32);
        for d in &self.deactivated {
            enc.value(d);
        }
        enc.u64(self.command_counter);
        self.drbg.encode_sealed(&mut enc);
        self.ephemeral_seed.encode_sealed(&mut enc);
        enc.u32(self.ephemeral.len() as u32);
        for c in &self.ephemeral {
            enc.u64(*c);
        }
        enc.u64(self.next_ephemeral)
            .value(&self.mode)
            .value(&self.ek)
            .value(&self.ek_cert)
            .u64(self.time)
            .u32(self.reset_count)
            .u32(self.restart_count);
        enc.finish()
    }

    fn decode_state(data: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(data);
        let mut seeds = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let h: Hierarchy = dec.value()?;
            let version = dec.u64()?;
            let timestamp = dec.u64()?;
            let seed = Secret::decode_sealed(&mut dec)?;
            seeds.insert(h, SeedRecord { seed, version, timestamp });
        }
        if seeds.len() != Hierarchy::ALL.len() {
            return Err(CodecError::Invalid("hierarchy count"));
        }
        let mut disabled = BTreeSet::new();
        for _ in 0..dec.u32()? {
            disabled.insert(dec.value()?);
        }
        let pcrs: PcrBank = dec.value()?;
        let mut objects = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let handle: Handle = dec.value()?;
            let blob: KeyBlob = dec.value()?;
            let sensitive = Secret::decode_sealed(&mut dec)?;
            let key = SigningKeyPair::from_seed(blob.role, &sensitive);
            objects.insert(handle, LoadedObject { blob, sensitive, key });
        }
        let next_handle = dec.u32()?;
        let mut nv = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let idx = dec.u32()?;
            nv.insert(idx, dec.bytes()?);
        }
        let mut cvm_secrets = BTreeMap::new();
        for _ in 0..dec.u32()? {
            let cvm_id = dec.bytes()?;
            let seed_version = dec.u64()?;
            let master_secret = Secret::decode_sealed(&mut dec)?;
            cvm_secrets.insert(crate::crypto::hash(&cvm_id), CvmSecretRecord { cvm_id, master_secret, seed_version });
        }
        let mut deactivated = BTreeSet::new();
        for _ in 0..dec.u32()? {
            deactivated.insert(dec.value::<Digest32>()?);
        }
        let command_counter = dec.u64()?;
        let drbg = Secret::decode_sealed(&mut dec)?;
        let ephemeral_seed = Secret::decode_sealed(&mut dec)?;
        let mut ephemeral = VecDeque::new();
        for _ in 0..dec.u32()? {
            ephemeral.push_back(dec.u64()?);
        }
        let state = TpmState {
            seeds,
            disabled,
            pcrs,
            objects,
            next_handle,
            nv,
            cvm_secrets,
            deactivated,
            command_counter,
            drbg,
            ephemeral_seed,
            ephemeral,
            next_ephemeral: dec.u64()?,
            mode: dec.value::<KeyTreeMode>()?,
            ek: dec.value()?,
            ek_cert: dec.value::<Certificate>()?,
            time: dec.u64()?,
            reset_count: dec.u32()?,
            restart_count: dec.u32()?,
        };
        dec.finish()?;
        if !state.objects.contains_key(&state.ek) {
            return Err(CodecError::Invalid("endorsement key handle"));
        }
        Ok(state)
    }

    pub fn nv_export(&self, protection_key: &Secret) -> Result<Vec<u8>, TpmError> {
        let hdr = header(NV_FORMAT_VERSION);
        let ct = channel_seal(protection_key, &self.encode_state(), &hdr)?;
        let mut out = hdr.to_vec();
        out.extend_from_slice(&ct);
        Ok(out)
    }

    pub fn nv_import(data: &[u8], protection_key: &Secret) -> Result<Self, TpmError> {
        if data.len() < 10 || &data[..8] != NV_MAGIC {
            return Err(TpmError::AuthFailure);
        }
        let version = u16::from_le_bytes([data[8], data[9]]);
        if version != NV_FORMAT_VERSION {
            return Err(TpmError::VersionUnsupported(version));
        }
        let plain = channel_open(protection_key, &data[10..], &data[..10])?;
        Ok(Self::decode_state(&plain)?)
    }

    pub fn nv_persist(&self, path: &Path, protection_key: &Secret) -> Result<(), TpmError> {
        std::fs::write(path, self.nv_export(protection_key)?).map_err(|e| TpmError::Io(e.to_string()))
    }

    pub fn nv_load(path: &Path, protection_key: &Secret) -> Result<Self, TpmError> {
        let data = std::fs::read(path).map_err(|e| TpmError::Io(e.to_string()))?;
        Self::nv_import(&data, protection_key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, KeyRole};
    use crate::tpm::{KeyAttributes, PcrPolicy, PcrSelection};

    fn key(b: u8) -> Secret {
        Secret::new(vec![b; 32]).unwrap()
    }

    fn populated() -> TpmState {
        let mut t = TpmState::manufacture(&key(0x21)).unwrap();
        t.pcr_extend(3, &hash(b"fw")).unwrap();
        t.create_cvm_key(b"vm").unwrap();
        t.rotate_seed(Hierarchy::Platform);
        let ek = t.ek_handle();
        let aik = t.create_key(ek, KeyRole::Aik, KeyAttributes::ATTESTATION).unwrap();
        let h = t.load_key(&aik).unwrap();
        t.sign_with(h, b"m").unwrap();
        t.nv_write(0x0150_0001, b"index data");
        t.ec_ephemeral();
        t
    }

    #[test]
    fn round_trip_preserves_behaviour() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tpm.nv");
        let mut t = populated();
        t.nv_persist(&path, &key(9)).unwrap();
        let mut r = TpmState::nv_load(&path, &key(9)).unwrap();

        assert_eq!(r.encode_state(), t.encode_state());
        assert_eq!(
            r.create_primary(Hierarchy::Storage).unwrap(),
            t.create_primary(Hierarchy::Storage).unwrap()
        );
        assert_eq!(r.cvm_master_secret(b"vm"), t.cvm_master_secret(b"vm"));
        assert_eq!(r.create_cvm_key(b"vm").unwrap(), t.create_cvm_key(b"vm").unwrap());
        assert_eq!(r.seed_version(Hierarchy::Platform), 2);
        assert_eq!(r.nv_read(0x0150_0001), Some(&b"index data"[..]));
        let sel = PcrSelection::range(0..4);
        assert_eq!(r.current_policy(sel), t.current_policy(sel));
        let blob = t.seal(b"x", PcrPolicy::NONE);
        assert_eq!(r.unseal(&blob).unwrap(), b"x");
    }

    #[test]
    fn tamper_and_wrong_key() {
        let t = populated();
        let data = t.nv_export(&key(9)).unwrap();
        assert!(TpmState::nv_import(&data, &key(9)).is_ok());
        for i in [0, 12, data.len() / 2, data.len() - 1] {
            let mut bad = data.clone();
            bad[i] ^= 0x40;
            assert_eq!(TpmState::nv_import(&bad, &key(9)).unwrap_err(), TpmError::AuthFailure, "byte {i}");
        }
        assert_eq!(TpmState::nv_import(&data, &key(10)).unwrap_err(), TpmError::AuthFailure);
    }

    #[test]
    fn unknown_version() {
        let t = populated();
        let mut data = t.nv_export(&key(9)).unwrap();
        data[8] = 2;
        assert_eq!(TpmState::nv_import(&data, &key(9)).unwrap_err(), TpmError::VersionUnsupported(2));
    }
}
