// SPDX-License-Identifier: Apache-2.0

//! Software TPM covering the command subset the collaborative trust design
//! needs: four hierarchies (including the CC hierarchy), versioned seeds,
//! PCRs, Quote/CCQuote, credential activation, two-phase ECDH, CVM key
//! trees, seal/unseal and encrypted NV persistence.
//!
//! A [`TpmState`] is one logical command processor. Commands take `&mut self`
//! and therefore execute serially per instance.

mod credential;
mod nv;
mod objects;
mod pcr;
mod quote;
mod seal;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::OnceLock;

use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{
    ecdh_two_phase, kdf_counter, CryptoError, Certificate, Digest32, KeyRole, PublicKey, Secret, SharedSecret,
    SigningKeyPair,
};

pub use credential::{activate_credential, make_credential, CredentialChallenge};
pub use nv::{NV_FORMAT_VERSION, NV_MAGIC};
pub use objects::{KeyAttributes, KeyBlob, KeyMetadata, Parent};
pub use pcr::{composite_digest, PcrBank, PcrSelection, PCR_COUNT};
pub use quote::{ClockInfo, CompositeQuote, MAX_TEE_REPORT_SIZE, QUOTE_MAGIC, ST_ATTEST_QUOTE};
pub use seal::{PcrPolicy, SealedBlob};

pub const EPHEMERAL_CAPACITY: usize = 256;
pub const FIRMWARE_VERSION: u64 = 0x0002_0000_0000_0138;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpmError {
    #[error("endorsement primary seed must be at least 32 bytes")]
    InvalidSeed,
    #[error("parent belongs to the {found:?} hierarchy, expected {expected:?}")]
    HierarchyMismatch { expected: Hierarchy, found: Hierarchy },
    #[error("hierarchy {0:?} is disabled")]
    HierarchyDisabled(Hierarchy),
    #[error("PCR index {0} out of range")]
    InvalidPcrIndex(usize),
    #[error("empty PCR selection")]
    EmptySelection,
    #[error("TEE report of {0} bytes exceeds the maximum")]
    ReportTooLarge(usize),
    #[error("authentication failure")]
    AuthFailure,
    #[error("object name does not match the credential")]
    NameMismatch,
    #[error("ephemeral counter {0} is unknown or consumed")]
    CounterInvalid(u64),
    #[error("PCR policy not satisfied")]
    PolicyFailure,
    #[error("blob seed version {blob} does not match current version {current}")]
    SeedVersionMismatch { blob: u64, current: u64 },
    #[error("key blob failed integrity check")]
    BlobCorrupt,
    #[error("unsupported NV format version {0}")]
    VersionUnsupported(u16),
    #[error("no object loaded at handle {0:#010x}")]
    UnknownHandle(u32),
    #[error("parent key is not loaded")]
    ParentNotLoaded,
    #[error("key lacks the required attribute: {0}")]
    AttributeMismatch(&'static str),
    #[error("key has been deactivated")]
    KeyDeactivated,
    #[error("no CVM master secret matches")]
    CvmUnknown,
    #[error("malformed input: {0}")]
    Malformed(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<CryptoError> for TpmError {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::AuthFailure => TpmError::AuthFailure,
            _ => TpmError::BlobCorrupt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Hierarchy {
    Endorsement = 1,
    Storage = 2,
    Platform = 3,
    /// Confidential-computing hierarchy rooted at the PrimaryMasterSecret.
    Cc = 4,
}

impl Hierarchy {
    pub const ALL: [Hierarchy; 4] = [Hierarchy::Endorsement, Hierarchy::Storage, Hierarchy::Platform, Hierarchy::Cc];

    fn label(self) -> &'static str {
        match self {
            Hierarchy::Endorsement => "ENDORSEMENT",
            Hierarchy::Storage => "STORAGE",
            Hierarchy::Platform => "PLATFORM",
            Hierarchy::Cc => "CONFIDENTIAL",
        }
    }

    fn primary_role(self) -> KeyRole {
        match self {
            Hierarchy::Endorsement => KeyRole::Ek,
            _ => KeyRole::Srk,
        }
    }
}

impl Canonical for Hierarchy {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(*self as u8);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.u8()? {
            1 => Hierarchy::Endorsement,
            2 => Hierarchy::Storage,
            3 => Hierarchy::Platform,
            4 => Hierarchy::Cc,
            _ => return Err(CodecError::Invalid("hierarchy")),
        })
    }
}

/// Which CVM key-tree layout the TPM uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyTreeMode {
    /// CVM SRK is a child of the Owner SRK; the MasterSecret is not kept in NV.
    OwnerSrk,
    /// Dedicated CC hierarchy; each CVM's MasterSecret is kept in NV.
    CcHierarchy,
}

impl Canonical for KeyTreeMode {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(match self {
            KeyTreeMode::OwnerSrk => 1,
            KeyTreeMode::CcHierarchy => 2,
        });
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match dec.u8()? {
            1 => Ok(KeyTreeMode::OwnerSrk),
            2 => Ok(KeyTreeMode::CcHierarchy),
            _ => Err(CodecError::Invalid("key tree mode")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRecord {
    pub seed: Secret,
    pub version: u64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Handle(pub u32);

impl Canonical for Handle {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(Handle(dec.u32()?))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LoadedObject {
    pub blob: KeyBlob,
    pub sensitive: Secret,
    pub key: SigningKeyPair,
}

#[derive(Debug, Clone)]
pub(crate) struct CvmSecretRecord {
    pub cvm_id: Vec<u8>,
    pub master_secret: Secret,
    pub seed_version: u64,
}

/// Built-in TPM vendor CA that certifies EKs at manufacture.
pub fn tpm_vendor_ca() -> &'static SigningKeyPair {
    static CA: OnceLock<SigningKeyPair> = OnceLock::new();
    CA.get_or_init(|| {
        let root = Secret::new(b"simulated-tpm-vendor-endorsement-root-v1".to_vec()).expect("valid length");
        SigningKeyPair::derive(KeyRole::TpmVendor, &root, "TPM-VENDOR-CA", b"")
    })
}

#[derive(Debug, Clone)]
pub struct TpmState {
    seeds: BTreeMap<Hierarchy, SeedRecord>,
    disabled: BTreeSet<Hierarchy>,
    pcrs: PcrBank,
    objects: BTreeMap<Handle, LoadedObject>,
    next_handle: u32,
    nv: BTreeMap<u32, Vec<u8>>,
    cvm_secrets: BTreeMap<Digest32, CvmSecretRecord>,
    deactivated: BTreeSet<Digest32>,
    command_counter: u64,
    drbg: Secret,
    ephemeral_seed: Secret,
    ephemeral: VecDeque<u64>,
    next_ephemeral: u64,
    mode: KeyTreeMode,
    ek: Handle,
    ek_cert: Certificate,
    time: u64,
    reset_count: u32,
    restart_count: u32,
}

impl TpmState {
    /// `TPM_Manufacture(EPSeed)` with the CC-hierarchy key tree.
    pub fn manufacture(ep_seed: &Secret) -> Result<Self, TpmError> {
        Self::manufacture_with_mode(ep_seed, KeyTreeMode::CcHierarchy)
    }

    pub fn manufacture_with_mode(ep_seed: &Secret, mode: KeyTreeMode) -> Result<Self, TpmError> {
        if ep_seed.len() < 32 {
            return Err(TpmError::InvalidSeed);
        }
        let seeds = Hierarchy::ALL
            .iter()
            .map(|&h| {
                let seed = kdf_counter(ep_seed, h.label(), b"", 32).expect("valid length");
                (h, SeedRecord { seed, version: 1, timestamp: 0 })
            })
            .collect();
        let mut state = TpmState {
            seeds,
            disabled: BTreeSet::new(),
            pcrs: PcrBank::new(),
            objects: BTreeMap::new(),
            next_handle: 0x8000_0000,
            nv: BTreeMap::new(),
            cvm_secrets: BTreeMap::new(),
            deactivated: BTreeSet::new(),
            command_counter: 0,
            drbg: kdf_counter(ep_seed, "DRBG", b"", 32).expect("valid length"),
            ephemeral_seed: kdf_counter(ep_seed, "EPHEMERAL-SEED", b"", 32).expect("valid length"),
            ephemeral: VecDeque::new(),
            next_ephemeral: 1,
            mode,
            ek: Handle(0),
            // Placeholder until the EK exists.
            ek_cert: Certificate::self_signed(tpm_vendor_ca(), 0),
            time: 0,
            reset_count: 0,
            restart_count: 0,
        };
        let ek_blob = state.create_primary(Hierarchy::Endorsement)?;
        state.ek = state.load_key(&ek_blob)?;
        let serial = u64::from_le_bytes(ek_blob.public.name().0[..8].try_into().expect("8 bytes"));
        state.ek_cert = Certificate::issue(tpm_vendor_ca(), KeyRole::Ek, &ek_blob.public, serial);
        Ok(state)
    }

    fn tick(&mut self) {
        self.command_counter += 1;
    }

    pub fn command_counter(&self) -> u64 {
        self.command_counter
    }

    pub fn mode(&self) -> KeyTreeMode {
        self.mode
    }

    pub fn set_time(&mut self, secs: u64) {
        self.time = secs;
    }

    pub fn seed_record(&self, h: Hierarchy) -> &SeedRecord {
        &self.seeds[&h]
    }

    pub fn seed_version(&self, h: Hierarchy) -> u64 {
        self.seeds[&h].version
    }

    pub fn ek_handle(&self) -> Handle {
        self.ek
    }

    pub fn ek_public(&self) -> PublicKey {
        *self.objects[&self.ek].key.public()
    }

    pub fn ek_certificate(&self) -> &Certificate {
        &self.ek_cert
    }

    pub fn set_hierarchy_enabled(&mut self, h: Hierarchy, enabled: bool) {
        self.tick();
        if enabled {
            self.disabled.remove(&h);
        } else {
            self.disabled.insert(h);
        }
    }

    fn require_enabled(&self, h: Hierarchy) -> Result<(), TpmError> {
        if self.disabled.contains(&h) {
            return Err(TpmError::HierarchyDisabled(h));
        }
        Ok(())
    }

    /// Bumps the hierarchy's seed version and re-derives its seed. Objects of
    /// that hierarchy are flushed; blobs stamped with the old version no
    /// longer load.
    pub fn rotate_seed(&mut self, h: Hierarchy) -> u64 {
        self.tick();
        let time = self.time;
        let rec = self.seeds.get_mut(&h).expect("all hierarchies exist");
        let new_version = rec.version + 1;
        let mut ctx = vec![h as u8];
        ctx.extend_from_slice(&new_version.to_le_bytes());
        rec.seed = kdf_counter(&rec.seed, "SEED-ROTATE", &ctx, 32).expect("valid length");
        rec.version = new_version;
        rec.timestamp = time;
        self.objects.retain(|_, o| o.blob.hierarchy != h);
        new_version
    }

    // ---- PCRs ----

    pub fn pcr_extend(&mut self, index: usize, digest: &Digest32) -> Result<Digest32, TpmError> {
        self.tick();
        self.pcrs.extend(index, digest)
    }

    pub fn pcr_read(&self, index: usize) -> Result<Digest32, TpmError> {
        self.pcrs.read(index)
    }

    pub fn pcrs(&self) -> &PcrBank {
        &self.pcrs
    }

    pub fn pcr_composite(&self, selection: PcrSelection) -> Digest32 {
        self.pcrs.composite(selection)
    }

    /// Platform reset: PCRs to zero, loaded objects and ephemeral keys dropped.
    pub fn reboot(&mut self) {
        self.tick();
        self.pcrs.reset();
        let ek = self.objects.remove(&self.ek);
        self.objects.clear();
        if let Some(ek) = ek {
            self.objects.insert(self.ek, ek);
        }
        self.ephemeral.clear();
        self.reset_count += 1;
    }

    // ---- two-phase ECDH ----

    /// `TPM2_EC_Ephemeral`: returns the ephemeral public point and the
    /// counter from which the TPM can regenerate its scalar.
    pub fn ec_ephemeral(&mut self) -> (PublicKey, u64) {
        self.tick();
        let c = self.next_ephemeral;
        self.next_ephemeral += 1;
        self.ephemeral.push_back(c);
        if self.ephemeral.len() > EPHEMERAL_CAPACITY {
            self.ephemeral.pop_front();
        }
        (*self.ephemeral_key(c).public(), c)
    }

    fn ephemeral_key(&self, c: u64) -> SigningKeyPair {
        SigningKeyPair::derive(KeyRole::Ephemeral, &self.ephemeral_seed, "EPHEMERAL", &c.to_le_bytes())
    }

    /// `TPM2_ZGen_2Phase`: consumes counter `c`.
    pub fn zgen_2phase(
        &mut self,
        c: u64,
        static_own: Handle,
        peer_static: &[u8],
        peer_ephemeral: &[u8],
    ) -> Result<SharedSecret, TpmError> {
        self.tick();
        let pos = self.ephemeral.iter().position(|&x| x == c).ok_or(TpmError::CounterInvalid(c))?;
        let static_key = self.object(static_own)?.key.clone();
        let ephem = self.ephemeral_key(c);
        let shared = ecdh_two_phase(&static_key, &ephem, peer_static, peer_ephemeral).map_err(|e| match e {
            CryptoError::InvalidPoint => TpmError::Malformed(CodecError::Invalid("peer point")),
            other => other.into(),
        })?;
        self.ephemeral.remove(pos);
        Ok(shared)
    }

    pub(crate) fn object(&self, handle: Handle) -> Result<&LoadedObject, TpmError> {
        self.objects.get(&handle).ok_or(TpmError::UnknownHandle(handle.0))
    }

    pub fn public_of(&self, handle: Handle) -> Result<PublicKey, TpmError> {
        Ok(*self.object(handle)?.key.public())
    }

    /// Generic NV index storage.
    pub fn nv_write(&mut self, index: u32, data: &[u8]) {
        self.tick();
        self.nv.insert(index, data.to_vec());
    }

    pub fn nv_read(&self, index: u32) -> Option<&[u8]> {
        self.nv.get(&index).map(Vec::as_slice)
    }
}
