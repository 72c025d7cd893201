// SPDX-License-Identifier: Apache-2.0

//! Owner CA: certifies VCEKs and AIKs, registers nodes, provisions
//! MasterSecrets and keeps revocation and audit state.
//!
//! Registry mutations are expressed as [`RegistryRecord`]s appended to a log
//! and applied through one function, so replaying the log rebuilds the
//! registry exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use dashmap::DashMap;
use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::clock::Clock;
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{hash, hash_parts, Certificate, Digest32, KeyRole, PublicKey, RandomSource, Secret, SigningKeyPair};
use crate::tee::{CertChain, TeeReport};
use crate::tpm::{make_credential, tpm_vendor_ca, CompositeQuote, CredentialChallenge, PcrSelection};

pub const CHALLENGE_LIFETIME_SECS: u64 = 120;
const SNAPSHOT_INTERVAL: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OcaError {
    #[error("vendor certificate chain does not verify")]
    ChainInvalid,
    #[error("endorsement certificate does not verify")]
    EkCertInvalid,
    #[error("credential challenge answered incorrectly")]
    ChallengeFailed,
    #[error("challenge session unknown, expired or already answered")]
    SessionInvalid,
    #[error("evidence rejected against trust baseline: {0}")]
    BaselineRejected(&'static str),
    #[error("node lacks VCEK or AIK certification")]
    NotInitialized,
    #[error("unknown node")]
    NodeUnknown,
    #[error("node is revoked")]
    NodeRevoked,
}

/// Node identifier: name of the node's VCEK public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub Digest32);

impl NodeId {
    pub fn from_vcek(vcek: &PublicKey) -> Self {
        NodeId(vcek.name())
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({}..)", &self.0.to_hex()[..12])
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_hex()[..16])
    }
}

impl Canonical for NodeId {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.0);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(NodeId(dec.value()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrustBaseline {
    pub launch_measurement: Digest32,
    pub pcr_selection: PcrSelection,
    pub pcr_composite: Digest32,
}

impl Canonical for TrustBaseline {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.launch_measurement).value(&self.pcr_selection).value(&self.pcr_composite);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(TrustBaseline { launch_measurement: dec.value()?, pcr_selection: dec.value()?, pcr_composite: dec.value()? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Active,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub chip_id: [u8; 32],
    pub tcb_version: u64,
    pub vcek: PublicKey,
    pub vcek_cert: Certificate,
    pub ek_cert_digest: Option<Digest32>,
    pub aik: Option<PublicKey>,
    pub aik_cert: Option<Certificate>,
    pub identity_cert: Option<Certificate>,
    pub master_secret_provisioned: bool,
    pub baseline: Option<TrustBaseline>,
    pub status: NodeStatus,
    pub last_audit: Option<u64>,
}

impl NodeRecord {
    fn serials(&self) -> Vec<u64> {
        [Some(&self.vcek_cert), self.aik_cert.as_ref(), self.identity_cert.as_ref()]
            .into_iter()
            .flatten()
            .map(|c| c.serial)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RevocationList {
    pub serials: BTreeSet<u64>,
    pub nodes: BTreeSet<NodeId>,
}

impl RevocationList {
    pub fn is_node_revoked(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    pub fn is_serial_revoked(&self, serial: u64) -> bool {
        self.serials.contains(&serial)
    }
}

impl Canonical for RevocationList {
    fn encode(&self, enc: &mut Encoder) {
        enc.u32(self.serials.len() as u32);
        for s in &self.serials {
            enc.u64(*s);
        }
        enc.u32(self.nodes.len() as u32);
        for n in &self.nodes {
            enc.value(n);
        }
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let mut list = RevocationList::default();
        for _ in 0..dec.u32()? {
            list.serials.insert(dec.u64()?);
        }
        for _ in 0..dec.u32()? {
            list.nodes.insert(dec.value()?);
        }
        Ok(list)
    }
}

/// Revocation state shared between the OCA (writer) and verifiers (readers).
#[derive(Debug, Default)]
pub struct RevocationStore(RwLock<RevocationList>);

impl RevocationStore {
    pub fn snapshot(&self) -> RevocationList {
        self.0.read().clone()
    }

    pub fn is_node_revoked(&self, node: &NodeId) -> bool {
        self.0.read().is_node_revoked(node)
    }

    pub fn is_serial_revoked(&self, serial: u64) -> bool {
        self.0.read().is_serial_revoked(serial)
    }

    fn replace(&self, list: RevocationList) {
        *self.0.write() = list;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistryRecord {
    TeeRegistered { node_id: NodeId, chip_id: [u8; 32], tcb_version: u64, vcek: PublicKey, cert: Certificate },
    AikCertified { node_id: NodeId, aik: PublicKey, ek_cert_digest: Digest32, cert: Certificate },
    BaselineSet { node_id: NodeId, baseline: TrustBaseline },
    NodeRegistered { node_id: NodeId, identity_cert: Certificate },
    Revoked { node_id: NodeId, reason: String },
    Audited { node_id: NodeId, time: u64, passed: bool },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Registry {
    pub nodes: BTreeMap<NodeId, NodeRecord>,
    pub revocations: RevocationList,
}

impl Registry {
    pub fn apply(&mut self, record: &RegistryRecord) {
        match record {
            RegistryRecord::TeeRegistered { node_id, chip_id, tcb_version, vcek, cert } => {
                let entry = self.nodes.entry(*node_id).or_insert_with(|| NodeRecord {
                    node_id: *node_id,
                    chip_id: *chip_id,
                    tcb_version: *tcb_version,
                    vcek: *vcek,
                    vcek_cert: cert.clone(),
                    ek_cert_digest: None,
                    aik: None,
                    aik_cert: None,
                    identity_cert: None,
                    master_secret_provisioned: false,
                    baseline: None,
                    status: NodeStatus::Active,
                    last_audit: None,
                });
                entry.vcek_cert = cert.clone();
            }
            RegistryRecord::AikCertified { node_id, aik, ek_cert_digest, cert } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.aik = Some(*aik);
                    n.ek_cert_digest = Some(*ek_cert_digest);
                    n.aik_cert = Some(cert.clone());
                }
            }
            RegistryRecord::BaselineSet { node_id, baseline } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.baseline = Some(*baseline);
                }
            }
            RegistryRecord::NodeRegistered { node_id, identity_cert } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.identity_cert = Some(identity_cert.clone());
                    n.master_secret_provisioned = true;
                }
            }
            RegistryRecord::Revoked { node_id, .. } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.status = NodeStatus::Revoked;
                    self.revocations.serials.extend(n.serials());
                    self.revocations.nodes.insert(*node_id);
                }
            }
            RegistryRecord::Audited { node_id, time, .. } => {
                if let Some(n) = self.nodes.get_mut(node_id) {
                    n.last_audit = Some(*time);
                }
            }
        }
    }

    pub fn replay<'a>(records: impl IntoIterator<Item = &'a RegistryRecord>) -> Self {
        let mut reg = Registry::default();
        for r in records {
            reg.apply(r);
        }
        reg
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditOutcome {
    Pass,
    Fail(&'static str),
}

#[derive(Debug)]
struct AikChallengeSession {
    node_id: NodeId,
    n: Secret,
    aik: PublicKey,
    ek_cert_digest: Digest32,
    expiry: u64,
}

#[derive(Debug, Default)]
struct RegistryState {
    registry: Registry,
    log: Vec<RegistryRecord>,
    snapshots: Vec<(usize, Registry)>,
    issued: BTreeMap<Digest32, u64>,
}

pub struct OwnerCa {
    key: SigningKeyPair,
    trusted_ark: PublicKey,
    tpm_vendor: PublicKey,
    rng: RandomSource,
    clock: Clock,
    state: RwLock<RegistryState>,
    sessions: DashMap<Digest32, AikChallengeSession>,
    default_baseline: Mutex<Option<TrustBaseline>>,
    revocations: Arc<RevocationStore>,
}

impl fmt::Debug for OwnerCa {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OwnerCa").field("public", self.key.public()).finish_non_exhaustive()
    }
}

impl OwnerCa {
    pub fn new(root: &Secret, trusted_ark: PublicKey, rng: RandomSource, clock: Clock) -> Self {
        OwnerCa {
            key: SigningKeyPair::derive(KeyRole::Oca, root, "OWNER-CA", b""),
            trusted_ark,
            tpm_vendor: *tpm_vendor_ca().public(),
            rng,
            clock,
            state: RwLock::new(RegistryState::default()),
            sessions: DashMap::new(),
            default_baseline: Mutex::new(None),
            revocations: Arc::new(RevocationStore::default()),
        }
    }

    pub fn public(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn trusted_ark(&self) -> &PublicKey {
        &self.trusted_ark
    }

    pub fn revocations(&self) -> Arc<RevocationStore> {
        Arc::clone(&self.revocations)
    }

    /// Baseline given to nodes registered from now on.
    pub fn set_default_baseline(&self, baseline: TrustBaseline) {
        *self.default_baseline.lock() = Some(baseline);
    }

    pub fn set_baseline(&self, node_id: &NodeId, baseline: TrustBaseline) -> Result<(), OcaError> {
        let mut st = self.state.write();
        if !st.registry.nodes.contains_key(node_id) {
            return Err(OcaError::NodeUnknown);
        }
        Self::commit(&mut st, RegistryRecord::BaselineSet { node_id: *node_id, baseline });
        Ok(())
    }

    fn commit(st: &mut RegistryState, record: RegistryRecord) {
        st.registry.apply(&record);
        st.log.push(record);
        if st.log.len().is_multiple_of(SNAPSHOT_INTERVAL) {
            let snap = (st.log.len(), st.registry.clone());
            st.snapshots.push(snap);
        }
    }

    /// Serial derived from the subject and how many certificates it already
    /// has, so concurrent issuance stays deterministic.
    fn next_serial(st: &mut RegistryState, role: KeyRole, subject: &PublicKey) -> u64 {
        let count = st.issued.entry(subject.name()).or_insert(0);
        *count += 1;
        let d = hash_parts(&[&[role as u8], subject.name().as_bytes(), &count.to_le_bytes()]);
        u64::from_le_bytes(d.0[..8].try_into().expect("8 bytes"))
    }

    fn issue(&self, st: &mut RegistryState, role: KeyRole, subject: &PublicKey) -> Certificate {
        let serial = Self::next_serial(st, role, subject);
        Certificate::issue(&self.key, role, subject, serial)
    }

    /// Verifies the vendor chain for `vcek` and certifies it.
    pub fn register_tee(
        &self,
        vcek: &PublicKey,
        chain: &CertChain,
        chip_id: [u8; 32],
        tcb_version: u64,
    ) -> Result<Certificate, OcaError> {
        if !chain.verify(&self.trusted_ark) || chain.vcek_public() != vcek {
            return Err(OcaError::ChainInvalid);
        }
        let node_id = NodeId::from_vcek(vcek);
        let mut st = self.state.write();
        if st.registry.revocations.is_node_revoked(&node_id) {
            return Err(OcaError::NodeRevoked);
        }
        let cert = self.issue(&mut st, KeyRole::Vcek, vcek);
        let fresh = !st.registry.nodes.contains_key(&node_id);
        Self::commit(
            &mut st,
            RegistryRecord::TeeRegistered { node_id, chip_id, tcb_version, vcek: *vcek, cert: cert.clone() },
        );
        if fresh {
            if let Some(baseline) = *self.default_baseline.lock() {
                Self::commit(&mut st, RegistryRecord::BaselineSet { node_id, baseline });
            }
        }
        Ok(cert)
    }

    /// Starts AIK certification: returns a session id and a credential
    /// challenge that only the TPM holding `ek` and `aik` can open.
    pub fn aik_challenge(
        &self,
        node_id: &NodeId,
        aik: &PublicKey,
        ek: &PublicKey,
        ek_cert: &Certificate,
    ) -> Result<(Digest32, CredentialChallenge), OcaError> {
        if !ek_cert.verify(&self.tpm_vendor) || ek_cert.subject != *ek || ek_cert.role != KeyRole::Ek {
            return Err(OcaError::EkCertInvalid);
        }
        {
            let st = self.state.read();
            let rec = st.registry.nodes.get(node_id).ok_or(OcaError::NodeUnknown)?;
            if rec.status == NodeStatus::Revoked {
                return Err(OcaError::NodeRevoked);
            }
        }
        let rng = self.rng.fork(&format!("aik-challenge/{}", node_id.0.to_hex()));
        let n = rng.secret(32);
        let session = hash_parts(&[b"AIK-SESSION", node_id.0.as_bytes(), aik.name().as_bytes(), rng.digest().as_bytes()]);
        let challenge = make_credential(&n, &aik.name(), ek, &rng);
        self.sessions.insert(
            session,
            AikChallengeSession {
                node_id: *node_id,
                n,
                aik: *aik,
                ek_cert_digest: ek_cert.digest(),
                expiry: self.clock.now() + CHALLENGE_LIFETIME_SECS,
            },
        );
        Ok((session, challenge))
    }

    /// Digest of the value a pending challenge session expects back.
    pub fn expected_answer_digest(&self, session: &Digest32) -> Option<Digest32> {
        self.sessions.get(session).map(|s| hash(s.n.expose()))
    }

    /// Completes AIK certification. The session is consumed whatever the outcome.
    pub fn aik_answer(&self, session: &Digest32, n_prime: &Secret) -> Result<Certificate, OcaError> {
        let (_, s) = self.sessions.remove(session).ok_or(OcaError::SessionInvalid)?;
        if self.clock.now() >= s.expiry {
            return Err(OcaError::SessionInvalid);
        }
        if s.n != *n_prime {
            return Err(OcaError::ChallengeFailed);
        }
        let mut st = self.state.write();
        if st.registry.revocations.is_node_revoked(&s.node_id) {
            return Err(OcaError::NodeRevoked);
        }
        let cert = self.issue(&mut st, KeyRole::Aik, &s.aik);
        Self::commit(
            &mut st,
            RegistryRecord::AikCertified {
                node_id: s.node_id,
                aik: s.aik,
                ek_cert_digest: s.ek_cert_digest,
                cert: cert.clone(),
            },
        );
        Ok(cert)
    }

    /// Report data a node must place in its registration report: binds the
    /// identity key being certified.
    pub fn registration_binding(identity: &PublicKey) -> [u8; 64] {
        let mut rd = [0u8; 64];
        rd[..32].copy_from_slice(hash_parts(&[b"REGISTER", &identity.to_sec1()]).as_bytes());
        rd
    }

    /// Checks the node's report against its baseline, then issues its
    /// identity certificate and a fresh 32-byte MasterSecret.
    pub fn register_node(
        &self,
        node_id: &NodeId,
        report: &TeeReport,
        identity: &PublicKey,
    ) -> Result<(Certificate, Secret), OcaError> {
        let mut st = self.state.write();
        let rec = st.registry.nodes.get(node_id).ok_or(OcaError::NodeUnknown)?;
        if rec.status == NodeStatus::Revoked {
            return Err(OcaError::NodeRevoked);
        }
        if rec.aik_cert.is_none() {
            return Err(OcaError::NotInitialized);
        }
        let baseline = rec.baseline.ok_or(OcaError::BaselineRejected("no baseline configured"))?;
        if !report.verify_signature(&rec.vcek) {
            return Err(OcaError::BaselineRejected("report signature"));
        }
        if report.report_data != Self::registration_binding(identity) {
            return Err(OcaError::BaselineRejected("identity binding"));
        }
        if report.launch_measurement != baseline.launch_measurement {
            return Err(OcaError::BaselineRejected("launch measurement"));
        }
        let cert = self.issue(&mut st, KeyRole::Node, identity);
        let master_secret = self.rng.fork(&format!("master-secret/{}/{}", node_id.0.to_hex(), cert.serial)).secret(32);
        Self::commit(&mut st, RegistryRecord::NodeRegistered { node_id: *node_id, identity_cert: cert.clone() });
        Ok((cert, master_secret))
    }

    /// Idempotent: a second call adds no record.
    pub fn revoke(&self, node_id: &NodeId, reason: &str) -> Result<(), OcaError> {
        let mut st = self.state.write();
        let rec = st.registry.nodes.get(node_id).ok_or(OcaError::NodeUnknown)?;
        if rec.status == NodeStatus::Revoked {
            return Ok(());
        }
        Self::commit(&mut st, RegistryRecord::Revoked { node_id: *node_id, reason: reason.to_string() });
        self.revocations.replace(st.registry.revocations.clone());
        Ok(())
    }

    /// Compares fresh evidence with the node's baseline; revokes on mismatch.
    pub fn audit(&self, node_id: &NodeId, report: &TeeReport, quote: &CompositeQuote) -> Result<AuditOutcome, OcaError> {
        let rec = self.node(node_id).ok_or(OcaError::NodeUnknown)?;
        let baseline = rec.baseline.ok_or(OcaError::BaselineRejected("no baseline configured"))?;
        let aik = rec.aik.ok_or(OcaError::NotInitialized)?;
        let failure = if !report.verify_signature(&rec.vcek) {
            Some("report signature")
        } else if !quote.verify(&aik) {
            Some("quote signature")
        } else if report.launch_measurement != baseline.launch_measurement {
            Some("launch measurement drift")
        } else if quote.pcr_selection != baseline.pcr_selection || quote.pcr_digest != baseline.pcr_composite {
            Some("pcr drift")
        } else {
            None
        };
        {
            let mut st = self.state.write();
            Self::commit(
                &mut st,
                RegistryRecord::Audited { node_id: *node_id, time: self.clock.now(), passed: failure.is_none() },
            );
        }
        match failure {
            None => Ok(AuditOutcome::Pass),
            Some(reason) => {
                self.revoke(node_id, reason)?;
                Ok(AuditOutcome::Fail(reason))
            }
        }
    }

    pub fn node(&self, node_id: &NodeId) -> Option<NodeRecord> {
        self.state.read().registry.nodes.get(node_id).cloned()
    }

    pub fn revocation_list(&self) -> RevocationList {
        self.state.read().registry.revocations.clone()
    }

    pub fn registry(&self) -> Registry {
        self.state.read().registry.clone()
    }

    pub fn log(&self) -> Vec<RegistryRecord> {
        self.state.read().log.clone()
    }

    /// Latest snapshot plus the records after it; replays to the live registry.
    pub fn restore_point(&self) -> (Registry, Vec<RegistryRecord>) {
        let st = self.state.read();
        match st.snapshots.last() {
            Some((at, reg)) => (reg.clone(), st.log[*at..].to_vec()),
            None => (Registry::default(), st.log.clone()),
        }
    }

    /// Endpoint dispatcher for the wire-level interface.
    pub fn handle(&self, request: &OcaRequest) -> OcaResponse {
        let result = match request {
            OcaRequest::RegisterTee { vcek, chain, chip_id, tcb_version } => {
                self.register_tee(vcek, chain, *chip_id, *tcb_version).map(OcaResponse::CertVcek)
            }
            OcaRequest::AikChallenge { node_id, aik, ek, ek_cert } => self
                .aik_challenge(node_id, aik, ek, ek_cert)
                .map(|(session, challenge)| OcaResponse::Challenge { session, challenge }),
            OcaRequest::AikAnswer { session, n_prime } => self.aik_answer(session, n_prime).map(OcaResponse::CertAik),
            OcaRequest::RegisterNode { node_id, report, identity } => self
                .register_node(node_id, report, identity)
                .map(|(identity_cert, master_secret)| OcaResponse::Registered { identity_cert, master_secret }),
            OcaRequest::Revoke { node_id, reason } => self.revoke(node_id, reason).map(|_| OcaResponse::Revoked),
            OcaRequest::Audit { node_id, report, quote } => self.audit(node_id, report, quote).map(OcaResponse::Audit),
            OcaRequest::FetchRevocationList => Ok(OcaResponse::RevocationList(self.revocation_list())),
        };
        result.unwrap_or_else(|e| OcaResponse::Error(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OcaRequest {
    RegisterTee { vcek: PublicKey, chain: CertChain, chip_id: [u8; 32], tcb_version: u64 },
    AikChallenge { node_id: NodeId, aik: PublicKey, ek: PublicKey, ek_cert: Certificate },
    AikAnswer { session: Digest32, n_prime: Secret },
    RegisterNode { node_id: NodeId, report: TeeReport, identity: PublicKey },
    Revoke { node_id: NodeId, reason: String },
    Audit { node_id: NodeId, report: TeeReport, quote: CompositeQuote },
    FetchRevocationList,
}

impl Canonical for OcaRequest {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            OcaRequest::RegisterTee { vcek, chain, chip_id, tcb_version } => {
                enc.u8(1).value(vcek).value(chain).fixed(chip_id).u64(*tcb_version)
            }
            OcaRequest::AikChallenge { node_id, aik, ek, ek_cert } => {
                enc.u8(2).value(node_id).value(aik).value(ek).value(ek_cert)
            }
            OcaRequest::AikAnswer { session, n_prime } => {
                enc.u8(3).value(session);
                n_prime.encode_sealed(enc);
                enc
            }
            OcaRequest::RegisterNode { node_id, report, identity } => {
                enc.u8(4).value(node_id).value(report).value(identity)
            }
            OcaRequest::Revoke { node_id, reason } => enc.u8(5).value(node_id).str(reason),
            OcaRequest::Audit { node_id, report, quote } => enc.u8(6).value(node_id).value(report).value(quote),
            OcaRequest::FetchRevocationList => enc.u8(7),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.u8()? {
            1 => OcaRequest::RegisterTee {
                vcek: dec.value()?,
                chain: dec.value()?,
                chip_id: dec.fixed()?,
                tcb_version: dec.u64()?,
            },
            2 => OcaRequest::AikChallenge { node_id: dec.value()?, aik: dec.value()?, ek: dec.value()?, ek_cert: dec.value()? },
            3 => OcaRequest::AikAnswer { session: dec.value()?, n_prime: Secret::decode_sealed(dec)? },
            4 => OcaRequest::RegisterNode { node_id: dec.value()?, report: dec.value()?, identity: dec.value()? },
            5 => OcaRequest::Revoke { node_id: dec.value()?, reason: dec.str()? },
            6 => OcaRequest::Audit { node_id: dec.value()?, report: dec.value()?, quote: dec.value()? },
            7 => OcaRequest::FetchRevocationList,
            _ => return Err(CodecError::Invalid("oca request kind")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OcaResponse {
    CertVcek(Certificate),
    Challenge { session: Digest32, challenge: CredentialChallenge },
    CertAik(Certificate),
    Registered { identity_cert: Certificate, master_secret: Secret },
    Revoked,
    Audit(AuditOutcome),
    RevocationList(RevocationList),
    Error(String),
}

impl Canonical for OcaResponse {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            OcaResponse::CertVcek(c) => enc.u8(1).value(c),
            OcaResponse::Challenge { session, challenge } => enc.u8(2).value(session).value(challenge),
            OcaResponse::CertAik(c) => enc.u8(3).value(c),
            OcaResponse::Registered { identity_cert, master_secret } => {
                enc.u8(4).value(identity_cert);
                master_secret.encode_sealed(enc);
                enc
            }
            OcaResponse::Revoked => enc.u8(5),
            OcaResponse::Audit(AuditOutcome::Pass) => enc.u8(6).u8(0),
            OcaResponse::Audit(AuditOutcome::Fail(r)) => enc.u8(6).u8(1).str(r),
            OcaResponse::RevocationList(l) => enc.u8(7).value(l),
            OcaResponse::Error(e) => enc.u8(8).str(e),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.u8()? {
            1 => OcaResponse::CertVcek(dec.value()?),
            2 => OcaResponse::Challenge { session: dec.value()?, challenge: dec.value()? },
            3 => OcaResponse::CertAik(dec.value()?),
            4 => OcaResponse::Registered { identity_cert: dec.value()?, master_secret: Secret::decode_sealed(dec)? },
            5 => OcaResponse::Revoked,
            6 => match dec.u8()? {
                0 => OcaResponse::Audit(AuditOutcome::Pass),
                1 => OcaResponse::Audit(AuditOutcome::Fail(audit_reason(&dec.str()?))),
                _ => return Err(CodecError::Invalid("audit outcome")),
            },
            7 => OcaResponse::RevocationList(dec.value()?),
            8 => OcaResponse::Error(dec.str()?),
            _ => return Err(CodecError::Invalid("oca response kind")),
        })
    }
}

fn audit_reason(s: &str) -> &'static str {
    ["report signature", "quote signature", "launch measurement drift", "pcr drift"]
        .into_iter()
        .find(|r| *r == s)
        .unwrap_or("unspecified")
}
