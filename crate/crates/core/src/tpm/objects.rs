// SPDX-License-Identifier: Apache-2.0

//! Key objects and the digital envelope that protects them.
//!
//! Every object's sensitive part is a 32-byte seed, encrypted under its
//! parent's symmetric storage key with an HMAC integrity tag from the
//! parent's HMAC key. The parent is either a hierarchy seed or a loaded
//! storage key, so each envelope chain terminates at a hierarchy seed.

use super::{CvmSecretRecord, Handle, Hierarchy, LoadedObject, TpmError, TpmState};
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{
    channel_open, channel_seal, hash, kdf_counter, sign, Digest32, KeyRole, PublicKey, Secret, Signature,
    SigningKeyPair,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KeyAttributes {
    pub sign: bool,
    pub storage: bool,
    pub restricted: bool,
}

impl KeyAttributes {
    pub const STORAGE: KeyAttributes = KeyAttributes { sign: false, storage: true, restricted: true };
    pub const ATTESTATION: KeyAttributes = KeyAttributes { sign: true, storage: false, restricted: true };
    pub const SIGNING: KeyAttributes = KeyAttributes { sign: true, storage: false, restricted: false };

    fn bits(&self) -> u8 {
        (self.sign as u8) | (self.storage as u8) << 1 | (self.restricted as u8) << 2
    }

    fn from_bits(b: u8) -> Result<Self, CodecError> {
        if b & !0b111 != 0 {
            return Err(CodecError::Invalid("key attributes"));
        }
        Ok(KeyAttributes { sign: b & 1 != 0, storage: b & 2 != 0, restricted: b & 4 != 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeyMetadata {
    /// Seconds since epoch; 0 means no expiry.
    pub expiration: u64,
    pub usage_counter: u64,
    pub auth_digest: Digest32,
    /// Digest of the CVM id whose MasterSecret roots this key, if any.
    pub cvm_binding: Option<Digest32>,
}

impl Canonical for KeyMetadata {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.expiration).u64(self.usage_counter).value(&self.auth_digest);
        match &self.cvm_binding {
            Some(d) => enc.u8(1).value(d),
            None => enc.u8(0),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(KeyMetadata {
            expiration: dec.u64()?,
            usage_counter: dec.u64()?,
            auth_digest: dec.value()?,
            cvm_binding: match dec.u8()? {
                0 => None,
                1 => Some(dec.value()?),
                _ => return Err(CodecError::Invalid("cvm binding flag")),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parent {
    Hierarchy(Hierarchy),
    /// Name of the parent storage key.
    Key(Digest32),
}

impl Canonical for Parent {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Parent::Hierarchy(h) => enc.u8(0).value(h),
            Parent::Key(name) => enc.u8(1).value(name),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match dec.u8()? {
            0 => Ok(Parent::Hierarchy(dec.value()?)),
            1 => Ok(Parent::Key(dec.value()?)),
            _ => Err(CodecError::Invalid("parent tag")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyBlob {
    pub public: PublicKey,
    pub role: KeyRole,
    pub attributes: KeyAttributes,
    pub parent: Parent,
    pub hierarchy: Hierarchy,
    pub seed_version: u64,
    pub metadata: KeyMetadata,
    pub encrypted_sensitive: Vec<u8>,
    pub integrity: [u8; 32],
}

impl KeyBlob {
    pub fn name(&self) -> Digest32 {
        self.public.name()
    }

    fn public_area(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.value(&self.public)
            .value(&self.role)
            .u8(self.attributes.bits())
            .value(&self.parent)
            .value(&self.hierarchy)
            .u64(self.seed_version)
            .value(&self.metadata);
        enc.finish()
    }

    fn integrity_input(&self) -> Vec<u8> {
        let mut v = self.public_area();
        v.extend_from_slice(&self.encrypted_sensitive);
        v
    }

    pub fn is_primary(&self) -> bool {
        matches!(self.parent, Parent::Hierarchy(_))
    }
}

impl Canonical for KeyBlob {
    fn encode(&self, enc: &mut Encoder) {
        enc.fixed(&self.public_area()).bytes(&self.encrypted_sensitive).fixed(&self.integrity);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(KeyBlob {
            public: dec.value()?,
            role: dec.value()?,
            attributes: KeyAttributes::from_bits(dec.u8()?)?,
            parent: dec.value()?,
            hierarchy: dec.value()?,
            seed_version: dec.u64()?,
            metadata: dec.value()?,
            encrypted_sensitive: dec.bytes()?,
            integrity: dec.fixed()?,
        })
    }
}

/// Symmetric and HMAC keys a storage parent uses to wrap its children.
struct StorageKeys {
    sym: Secret,
    hmac: Secret,
}

impl StorageKeys {
    fn derive(parent_secret: &Secret, context: &[u8]) -> Self {
        StorageKeys {
            sym: kdf_counter(parent_secret, "STORAGE-SYM", context, 32).expect("valid length"),
            hmac: kdf_counter(parent_secret, "STORAGE-HMAC", context, 32).expect("valid length"),
        }
    }

    fn wrap(&self, blob: &mut KeyBlob, sensitive: &Secret) {
        blob.encrypted_sensitive =
            channel_seal(&self.sym, sensitive.expose(), &blob.public_area()).expect("32-byte storage key");
        blob.integrity = crate::crypto::hmac(self.hmac.expose(), &[&blob.integrity_input()]);
    }

    fn unwrap(&self, blob: &KeyBlob) -> Result<Secret, TpmError> {
        let expected = crate::crypto::hmac(self.hmac.expose(), &[&blob.integrity_input()]);
        if expected != blob.integrity {
            return Err(TpmError::BlobCorrupt);
        }
        let raw = channel_open(&self.sym, &blob.encrypted_sensitive, &blob.public_area())
            .map_err(|_| TpmError::BlobCorrupt)?;
        Secret::new(raw).map_err(|_| TpmError::BlobCorrupt)
    }
}

impl TpmState {
    fn storage_keys_for(&self, parent: &Parent) -> Result<StorageKeys, TpmError> {
        match parent {
            Parent::Hierarchy(h) => Ok(StorageKeys::derive(&self.seeds[h].seed, &[*h as u8])),
            Parent::Key(name) => {
                let obj = self
                    .objects
                    .values()
                    .find(|o| o.blob.name() == *name)
                    .ok_or(TpmError::ParentNotLoaded)?;
                if !obj.blob.attributes.storage {
                    return Err(TpmError::AttributeMismatch("storage"));
                }
                Ok(StorageKeys::derive(&obj.sensitive, name.as_bytes()))
            }
        }
    }

    fn build_blob(
        &self,
        sensitive: &Secret,
        role: KeyRole,
        attributes: KeyAttributes,
        parent: Parent,
        hierarchy: Hierarchy,
        metadata: KeyMetadata,
    ) -> Result<KeyBlob, TpmError> {
        let key = SigningKeyPair::from_seed(role, sensitive);
        let mut blob = KeyBlob {
            public: *key.public(),
            role,
            attributes,
            parent,
            hierarchy,
            seed_version: self.seeds[&hierarchy].version,
            metadata,
            encrypted_sensitive: Vec::new(),
            integrity: [0; 32],
        };
        self.storage_keys_for(&parent)?.wrap(&mut blob, sensitive);
        Ok(blob)
    }

    /// Primary storage key of `hierarchy` (EK for Endorsement), derived from
    /// the current hierarchy seed.
    pub fn create_primary(&mut self, hierarchy: Hierarchy) -> Result<KeyBlob, TpmError> {
        self.tick();
        self.require_enabled(hierarchy)?;
        let template = hierarchy.primary_role();
        let sensitive =
            kdf_counter(&self.seeds[&hierarchy].seed, "PRIMARY", &[template as u8], 32).expect("valid length");
        self.build_blob(
            &sensitive,
            template,
            KeyAttributes::STORAGE,
            Parent::Hierarchy(hierarchy),
            hierarchy,
            KeyMetadata::default(),
        )
    }

    /// Ordinary child key with fresh sensitive material.
    pub fn create_key(&mut self, parent: Handle, role: KeyRole, attributes: KeyAttributes) -> Result<KeyBlob, TpmError> {
        self.tick();
        let p = self.object(parent)?;
        if !p.blob.attributes.storage {
            return Err(TpmError::AttributeMismatch("storage"));
        }
        let (parent_name, hierarchy, binding) = (p.blob.name(), p.blob.hierarchy, p.blob.metadata.cvm_binding);
        self.require_enabled(hierarchy)?;
        let sensitive = kdf_counter(&self.drbg, "OBJECT", &self.command_counter.to_le_bytes(), 32).expect("valid length");
        let metadata = KeyMetadata { cvm_binding: binding, ..KeyMetadata::default() };
        self.build_blob(&sensitive, role, attributes, Parent::Key(parent_name), hierarchy, metadata)
    }

    /// Loads `blob`, enforcing seed version, deactivation and envelope
    /// integrity. Loading an already-loaded object returns its handle.
    pub fn load_key(&mut self, blob: &KeyBlob) -> Result<Handle, TpmError> {
        self.tick();
        self.require_enabled(blob.hierarchy)?;
        let current = self.seeds[&blob.hierarchy].version;
        if blob.seed_version != current {
            return Err(TpmError::SeedVersionMismatch { blob: blob.seed_version, current });
        }
        if self.deactivated.contains(&blob.name()) {
            return Err(TpmError::KeyDeactivated);
        }
        if let Some(binding) = &blob.metadata.cvm_binding {
            if self.mode == super::KeyTreeMode::CcHierarchy && !self.cvm_secrets.contains_key(binding) {
                return Err(TpmError::KeyDeactivated);
            }
        }
        let sensitive = self.storage_keys_for(&blob.parent)?.unwrap(blob)?;
        let key = SigningKeyPair::from_seed(blob.role, &sensitive);
        if key.public() != &blob.public {
            return Err(TpmError::BlobCorrupt);
        }
        if let Some((h, _)) = self.objects.iter().find(|(_, o)| o.blob.name() == blob.name()) {
            return Ok(*h);
        }
        let handle = Handle(self.next_handle);
        self.next_handle += 1;
        self.objects.insert(handle, LoadedObject { blob: blob.clone(), sensitive, key });
        Ok(handle)
    }

    pub fn flush(&mut self, handle: Handle) -> Result<(), TpmError> {
        self.tick();
        if handle == self.ek {
            return Ok(());
        }
        self.objects.remove(&handle).map(|_| ()).ok_or(TpmError::UnknownHandle(handle.0))
    }

    pub fn handle_of(&self, name: &Digest32) -> Option<Handle> {
        self.objects.iter().find(|(_, o)| o.blob.name() == *name).map(|(h, _)| *h)
    }

    /// Re-emits the blob of a loaded object with its current usage counter.
    pub fn save_context(&mut self, handle: Handle) -> Result<KeyBlob, TpmError> {
        self.tick();
        let obj = self.object(handle)?.clone();
        let mut blob = obj.blob.clone();
        blob.metadata.usage_counter = obj.blob.metadata.usage_counter;
        self.storage_keys_for(&blob.parent)?.wrap(&mut blob, &obj.sensitive);
        Ok(blob)
    }

    /// Signs with a loaded signing key and bumps its usage counter.
    pub fn sign_with(&mut self, handle: Handle, msg: &[u8]) -> Result<Signature, TpmError> {
        self.tick();
        let obj = self.objects.get_mut(&handle).ok_or(TpmError::UnknownHandle(handle.0))?;
        if !obj.blob.attributes.sign {
            return Err(TpmError::AttributeMismatch("sign"));
        }
        obj.blob.metadata.usage_counter += 1;
        Ok(sign(&obj.key, msg))
    }

    pub fn usage_counter(&self, handle: Handle) -> Result<u64, TpmError> {
        Ok(self.object(handle)?.blob.metadata.usage_counter)
    }

    /// Walks a loaded object's parents up to its hierarchy seed.
    pub fn envelope_chain(&self, handle: Handle) -> Result<Vec<Parent>, TpmError> {
        let mut chain = Vec::new();
        let mut parent = self.object(handle)?.blob.parent;
        loop {
            chain.push(parent);
            match parent {
                Parent::Hierarchy(_) => return Ok(chain),
                Parent::Key(name) => {
                    let h = self.handle_of(&name).ok_or(TpmError::ParentNotLoaded)?;
                    parent = self.object(h)?.blob.parent;
                }
            }
            if chain.len() > self.objects.len() + 1 {
                return Err(TpmError::BlobCorrupt);
            }
        }
    }

    // ---- CVM key trees ----

    /// `TPM2_CreateCVMKey`: derives the CVM's MasterSecret from the
    /// PrimaryMasterSecret and records it in NV under the CC hierarchy.
    pub fn create_cvm_key(&mut self, cvm_id: &[u8]) -> Result<Secret, TpmError> {
        self.tick();
        self.require_enabled(Hierarchy::Cc)?;
        let rec = &self.seeds[&Hierarchy::Cc];
        let master_secret = kdf_counter(&rec.seed, "CVM-MS", cvm_id, 32).expect("valid length");
        self.cvm_secrets.insert(
            hash(cvm_id),
            CvmSecretRecord { cvm_id: cvm_id.to_vec(), master_secret: master_secret.clone(), seed_version: rec.version },
        );
        Ok(master_secret)
    }

    pub fn cvm_master_secret(&self, cvm_id: &[u8]) -> Option<&Secret> {
        self.cvm_secrets
            .get(&hash(cvm_id))
            .filter(|r| r.seed_version == self.seeds[&Hierarchy::Cc].version)
            .map(|r| &r.master_secret)
    }

    /// `TPM2_CreateCVMRootKey`: derives the CVM SRK from its MasterSecret,
    /// wrapped by the given primary. The parent must be the Storage primary
    /// in `OwnerSrk` mode and the CC primary in `CcHierarchy` mode.
    pub fn create_cvm_root_key(&mut self, master_secret: &Secret, parent_srk: &KeyBlob) -> Result<KeyBlob, TpmError> {
        self.tick();
        let expected = match self.mode {
            super::KeyTreeMode::OwnerSrk => Hierarchy::Storage,
            super::KeyTreeMode::CcHierarchy => Hierarchy::Cc,
        };
        if parent_srk.parent != Parent::Hierarchy(expected) || parent_srk.role != KeyRole::Srk {
            return Err(TpmError::HierarchyMismatch { expected, found: parent_srk.hierarchy });
        }
        self.load_key(parent_srk)?;
        let binding = match self.mode {
            super::KeyTreeMode::OwnerSrk => None,
            super::KeyTreeMode::CcHierarchy => Some(
                self.cvm_secrets
                    .iter()
                    .find(|(_, r)| &r.master_secret == master_secret)
                    .map(|(d, _)| *d)
                    .ok_or(TpmError::CvmUnknown)?,
            ),
        };
        let sensitive =
            kdf_counter(master_secret, "CVM-SRK", parent_srk.name().as_bytes(), 32).expect("valid length");
        let metadata = KeyMetadata { cvm_binding: binding, ..KeyMetadata::default() };
        self.build_blob(
            &sensitive,
            KeyRole::Srk,
            KeyAttributes::STORAGE,
            Parent::Key(parent_srk.name()),
            expected,
            metadata,
        )
    }

    /// Deactivates a CVM key system given its CVM SRK.
    ///
    /// CC mode deletes the MasterSecret NV entry, which invalidates the whole
    /// subtree. Owner-SRK mode can only flush the SRK and flag its blob;
    /// descendants that are already loaded stay loaded.
    pub fn deactivate_cvm(&mut self, cvm_srk: &KeyBlob) -> Result<(), TpmError> {
        self.tick();
        match (self.mode, cvm_srk.metadata.cvm_binding) {
            (super::KeyTreeMode::CcHierarchy, Some(binding)) => {
                self.cvm_secrets.remove(&binding).ok_or(TpmError::CvmUnknown)?;
                self.objects.retain(|_, o| o.blob.metadata.cvm_binding != Some(binding));
            }
            (super::KeyTreeMode::CcHierarchy, None) => return Err(TpmError::CvmUnknown),
            (super::KeyTreeMode::OwnerSrk, _) => {
                self.deactivated.insert(cvm_srk.name());
                let name = cvm_srk.name();
                self.objects.retain(|_, o| o.blob.name() != name);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::KeyTreeMode;
    use super::*;

    fn tpm(mode: KeyTreeMode) -> TpmState {
        TpmState::manufacture_with_mode(&Secret::new(vec![7; 32]).unwrap(), mode).unwrap()
    }

    #[test]
    fn primary_is_deterministic_and_versioned() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let a = t.create_primary(Hierarchy::Storage).unwrap();
        let b = t.create_primary(Hierarchy::Storage).unwrap();
        assert_eq!(a.public, b.public);
        assert_eq!(a.seed_version, 1);
        let cc = t.create_primary(Hierarchy::Cc).unwrap();
        assert_ne!(cc.public, a.public);

        t.rotate_seed(Hierarchy::Storage);
        let c = t.create_primary(Hierarchy::Storage).unwrap();
        assert_ne!(c.public, a.public);
        assert_eq!(c.seed_version, 2);
    }

    #[test]
    fn load_enforces_version_and_integrity() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let srk = t.create_primary(Hierarchy::Storage).unwrap();
        let h = t.load_key(&srk).unwrap();
        let child = t.create_key(h, KeyRole::Storage, KeyAttributes::SIGNING).unwrap();
        t.load_key(&child).unwrap();

        let mut corrupt = child.clone();
        corrupt.encrypted_sensitive[5] ^= 0x80;
        assert_eq!(t.load_key(&corrupt), Err(TpmError::BlobCorrupt));
        let mut corrupt = child.clone();
        corrupt.integrity[0] ^= 1;
        assert_eq!(t.load_key(&corrupt), Err(TpmError::BlobCorrupt));

        t.rotate_seed(Hierarchy::Storage);
        assert_eq!(t.load_key(&child), Err(TpmError::SeedVersionMismatch { blob: 1, current: 2 }));
        assert_eq!(t.load_key(&srk), Err(TpmError::SeedVersionMismatch { blob: 1, current: 2 }));
    }

    #[test]
    fn rotation_leaves_other_hierarchies_alone() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let cc = t.create_primary(Hierarchy::Cc).unwrap();
        t.rotate_seed(Hierarchy::Storage);
        assert!(t.load_key(&cc).is_ok());
    }

    #[test]
    fn envelope_chain_ends_at_hierarchy() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let srk = t.create_primary(Hierarchy::Storage).unwrap();
        let h = t.load_key(&srk).unwrap();
        let mid = t.create_key(h, KeyRole::Storage, KeyAttributes::STORAGE).unwrap();
        let hm = t.load_key(&mid).unwrap();
        let leaf = t.create_key(hm, KeyRole::Identity, KeyAttributes::SIGNING).unwrap();
        let hl = t.load_key(&leaf).unwrap();
        let chain = t.envelope_chain(hl).unwrap();
        assert_eq!(
            chain,
            vec![Parent::Key(mid.name()), Parent::Key(srk.name()), Parent::Hierarchy(Hierarchy::Storage)]
        );
    }

    #[test]
    fn child_of_non_storage_key_is_refused() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let srk = t.create_primary(Hierarchy::Storage).unwrap();
        let h = t.load_key(&srk).unwrap();
        let leaf = t.create_key(h, KeyRole::Identity, KeyAttributes::SIGNING).unwrap();
        let hl = t.load_key(&leaf).unwrap();
        assert_eq!(
            t.create_key(hl, KeyRole::Identity, KeyAttributes::SIGNING),
            Err(TpmError::AttributeMismatch("storage"))
        );
    }

    #[test]
    fn usage_counter_is_monotonic_and_saved() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let ek = t.ek_handle();
        let aik = t.create_key(ek, KeyRole::Aik, KeyAttributes::ATTESTATION).unwrap();
        let h = t.load_key(&aik).unwrap();
        t.sign_with(h, b"a").unwrap();
        t.sign_with(h, b"b").unwrap();
        assert_eq!(t.usage_counter(h).unwrap(), 2);
        let saved = t.save_context(h).unwrap();
        assert_eq!(saved.metadata.usage_counter, 2);
        t.flush(h).unwrap();
        let h2 = t.load_key(&saved).unwrap();
        assert_eq!(t.usage_counter(h2).unwrap(), 2);
        assert_eq!(t.sign_with(ek, b"x"), Err(TpmError::AttributeMismatch("sign")));
    }

    #[test]
    fn cvm_keys_in_cc_mode() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let a = t.create_cvm_key(b"cvm-a").unwrap();
        let b = t.create_cvm_key(b"cvm-b").unwrap();
        assert_ne!(a, b);
        assert_eq!(t.create_cvm_key(b"cvm-a").unwrap(), a);

        let cc = t.create_primary(Hierarchy::Cc).unwrap();
        let srk_a = t.create_cvm_root_key(&a, &cc).unwrap();
        let srk_b = t.create_cvm_root_key(&b, &cc).unwrap();
        assert_ne!(srk_a.public, srk_b.public);
        assert_eq!(t.create_cvm_root_key(&a, &cc).unwrap().public, srk_a.public);

        // A Storage-hierarchy parent is the wrong tree in CC mode.
        let storage = t.create_primary(Hierarchy::Storage).unwrap();
        assert!(matches!(t.create_cvm_root_key(&a, &storage), Err(TpmError::HierarchyMismatch { .. })));

        // Old MasterSecret-rooted blobs die with a CC seed rotation.
        t.rotate_seed(Hierarchy::Cc);
        assert!(matches!(t.load_key(&srk_a), Err(TpmError::SeedVersionMismatch { .. })));
    }

    #[test]
    fn cc_hierarchy_disabled() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        t.set_hierarchy_enabled(Hierarchy::Cc, false);
        assert_eq!(t.create_cvm_key(b"x"), Err(TpmError::HierarchyDisabled(Hierarchy::Cc)));
    }

    #[test]
    fn owner_srk_mode_tree() {
        let mut t = tpm(KeyTreeMode::OwnerSrk);
        let ms = Secret::new(vec![9; 32]).unwrap();
        let owner = t.create_primary(Hierarchy::Storage).unwrap();
        let srk1 = t.create_cvm_root_key(&ms, &owner).unwrap();
        let srk2 = t.create_cvm_root_key(&ms, &owner).unwrap();
        assert_eq!(srk1.public, srk2.public);

        let ek = t.create_primary(Hierarchy::Endorsement).unwrap();
        assert_eq!(
            t.create_cvm_root_key(&ms, &ek),
            Err(TpmError::HierarchyMismatch { expected: Hierarchy::Storage, found: Hierarchy::Endorsement })
        );
    }

    #[test]
    fn deactivation_cc_mode_kills_subtree() {
        let mut t = tpm(KeyTreeMode::CcHierarchy);
        let ms = t.create_cvm_key(b"vm1").unwrap();
        let cc = t.create_primary(Hierarchy::Cc).unwrap();
        let srk = t.create_cvm_root_key(&ms, &cc).unwrap();
        let hs = t.load_key(&srk).unwrap();
        let leaf = t.create_key(hs, KeyRole::Identity, KeyAttributes::SIGNING).unwrap();
        let hl = t.load_key(&leaf).unwrap();

        t.deactivate_cvm(&srk).unwrap();
        assert!(t.object(hs).is_err());
        assert!(t.object(hl).is_err());
        assert_eq!(t.load_key(&srk), Err(TpmError::KeyDeactivated));
        assert_eq!(t.load_key(&leaf), Err(TpmError::KeyDeactivated));
        assert!(t.cvm_master_secret(b"vm1").is_none());
    }

    #[test]
    fn deactivation_owner_mode_leaves_residual_children() {
        let mut t = tpm(KeyTreeMode::OwnerSrk);
        let ms = Secret::new(vec![3; 32]).unwrap();
        let owner = t.create_primary(Hierarchy::Storage).unwrap();
        let srk = t.create_cvm_root_key(&ms, &owner).unwrap();
        let hs = t.load_key(&srk).unwrap();
        let leaf = t.create_key(hs, KeyRole::Identity, KeyAttributes::SIGNING).unwrap();
        let hl = t.load_key(&leaf).unwrap();

        t.deactivate_cvm(&srk).unwrap();
        assert_eq!(t.load_key(&srk), Err(TpmError::KeyDeactivated));
        // The dependency problem of this layout: the loaded child survives.
        assert!(t.object(hl).is_ok());
    }
}
