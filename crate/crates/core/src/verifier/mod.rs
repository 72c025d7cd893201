// SPDX-License-Identifier: Apache-2.0

//! Attestation service: challenges, composite report verification against
//! policy and revocation state, and token issuance and validation.

mod endpoints;
mod policy;
mod token;

use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use parking_lot::Mutex;
use thiserror::Error;

use crate::clock::Clock;
use crate::codec::{Canonical, CodecError};
use crate::crypto::{hash, hash_parts, Certificate, Digest32, KeyRole, PublicKey, RandomSource, Secret, SigningKeyPair};
use crate::oca::{NodeId, RevocationStore};
use crate::protocol::{
    tee_only_report_data, tee_outer_report_data, tpm_outer_report_data, ParsedEnvelope, ReportEnvelope, ReportKind,
};
use crate::tee::TeeReport;
use crate::tpm::{CompositeQuote, PcrSelection};

pub use endpoints::{VerifierRequest, VerifierResponse};
pub use policy::Policy;
pub use token::{
    decode_token, encode_token, validate_token, Claims, PlatformInfo, TokenHeader, TokenPayload, TokenRejection,
    TOKEN_FORMAT_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifierError {
    #[error("node is revoked")]
    NodeRevoked,
    #[error("node is not registered with the verifier")]
    NodeUnknown,
    #[error("unknown policy {0:?}")]
    PolicyUnknown(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("session unknown or already closed")]
    SessionUnknown,
    #[error("certificate does not verify under the owner CA")]
    CertificateInvalid,
}

/// First failed check of a submitted report.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    #[error("session unknown or closed")]
    UnknownSession,
    #[error("report envelope malformed")]
    Malformed,
    #[error("attestation type not allowed")]
    TypeNotAllowed,
    #[error("outer report signature invalid")]
    OuterSignature,
    #[error("inner report signature invalid")]
    InnerSignature,
    #[error("nonce does not match session")]
    NonceMismatch,
    #[error("inner and outer reports belong to different nodes")]
    IdentityMismatch,
    #[error("launch measurement differs from baseline")]
    MeasurementMismatch,
    #[error("PCR composite differs from baseline")]
    PcrMismatch,
    #[error("TCB version below policy floor")]
    TcbTooLow,
    #[error("node or certificate revoked")]
    Revoked,
}

impl Rejection {
    pub const ALL: [Rejection; 11] = [
        Rejection::UnknownSession,
        Rejection::Malformed,
        Rejection::TypeNotAllowed,
        Rejection::OuterSignature,
        Rejection::InnerSignature,
        Rejection::NonceMismatch,
        Rejection::IdentityMismatch,
        Rejection::MeasurementMismatch,
        Rejection::PcrMismatch,
        Rejection::TcbTooLow,
        Rejection::Revoked,
    ];
}

/// What the verifier knows about a node after initialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRegistration {
    pub node_id: NodeId,
    pub chip_id: [u8; 32],
    pub tcb_version: u64,
    pub vcek: PublicKey,
    pub vcek_cert: Certificate,
    pub aik: PublicKey,
    pub aik_cert: Certificate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationRequest {
    pub session: Digest32,
    pub node_id: NodeId,
    pub nonce: [u8; 32],
    pub selection: PcrSelection,
    pub kind: ReportKind,
}

#[derive(Debug, Clone)]
struct Session {
    request: AttestationRequest,
    policy_id: String,
}

/// A report that passed every check. Only [`VerifierService::verify_composite`]
/// creates one, so a token cannot be issued without verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifiedReport {
    session: Digest32,
    node_id: NodeId,
    kind: ReportKind,
    envelope: Vec<u8>,
    tcb_version: u64,
    selection: PcrSelection,
    nonce: [u8; 32],
}

impl VerifiedReport {
    pub fn node_id(&self) -> NodeId {
        self.node_id
    }

    pub fn session(&self) -> Digest32 {
        self.session
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifyOutcome {
    Accepted(VerifiedReport),
    Rejected(Rejection),
}

impl VerifyOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, VerifyOutcome::Accepted(_))
    }

    pub fn rejection(&self) -> Option<Rejection> {
        match self {
            VerifyOutcome::Rejected(r) => Some(*r),
            VerifyOutcome::Accepted(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuanceRecord {
    pub serial: u64,
    pub node_id: NodeId,
    pub session: Digest32,
    pub token_digest: Digest32,
    pub issued_at: u64,
    pub expires_at: u64,
}

pub struct VerifierService {
    key: SigningKeyPair,
    oca: PublicKey,
    clock: Clock,
    rng: RandomSource,
    nodes: DashMap<NodeId, NodeRegistration>,
    by_aik: DashMap<Digest32, NodeId>,
    by_chip: DashMap<([u8; 32], u64), NodeId>,
    policies: DashMap<String, Policy>,
    sessions: DashMap<Digest32, Session>,
    counters: DashMap<NodeId, u64>,
    issued: DashMap<u64, IssuanceRecord>,
    log: Mutex<Vec<u64>>,
    revocations: Arc<RevocationStore>,
}

impl fmt::Debug for VerifierService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VerifierService")
            .field("public", self.key.public())
            .field("nodes", &self.nodes.len())
            .field("sessions", &self.sessions.len())
            .finish_non_exhaustive()
    }
}

impl VerifierService {
    pub fn new(root: &Secret, oca: PublicKey, revocations: Arc<RevocationStore>, rng: RandomSource, clock: Clock) -> Self {
        VerifierService {
            key: SigningKeyPair::derive(KeyRole::Verifier, root, "VERIFIER", b""),
            oca,
            clock,
            rng,
            nodes: DashMap::new(),
            by_aik: DashMap::new(),
            by_chip: DashMap::new(),
            policies: DashMap::new(),
            sessions: DashMap::new(),
            counters: DashMap::new(),
            issued: DashMap::new(),
            log: Mutex::new(Vec::new()),
            revocations,
        }
    }

    pub fn public(&self) -> &PublicKey {
        self.key.public()
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn set_policy(&self, policy: Policy) -> Result<(), VerifierError> {
        policy.validate()?;
        self.policies.insert(policy.id.clone(), policy);
        Ok(())
    }

    pub fn policy(&self, id: &str) -> Option<Policy> {
        self.policies.get(id).map(|p| p.clone())
    }

    /// Records a node whose VCEK and AIK certificates verify under the OCA.
    pub fn register_node(&self, reg: NodeRegistration) -> Result<(), VerifierError> {
        let certified = |c: &Certificate, subject: &PublicKey, role| c.verify(&self.oca) && c.subject == *subject && c.role == role;
        if !certified(&reg.vcek_cert, &reg.vcek, KeyRole::Vcek)
            || !certified(&reg.aik_cert, &reg.aik, KeyRole::Aik)
            || NodeId::from_vcek(&reg.vcek) != reg.node_id
        {
            return Err(VerifierError::CertificateInvalid);
        }
        self.by_aik.insert(reg.aik.name(), reg.node_id);
        self.by_chip.insert((reg.chip_id, reg.tcb_version), reg.node_id);
        self.nodes.insert(reg.node_id, reg);
        Ok(())
    }

    pub fn node(&self, id: &NodeId) -> Option<NodeRegistration> {
        self.nodes.get(id).map(|n| n.clone())
    }

    /// Opens a session with a fresh nonce. Seeded services derive the
    /// nonce from the node and its request count, so sessions for different
    /// nodes can be opened in any order with the same result.
    pub fn new_request(
        &self,
        node_id: &NodeId,
        policy_id: &str,
        kind: ReportKind,
        selection: PcrSelection,
    ) -> Result<AttestationRequest, VerifierError> {
        if self.revocations.is_node_revoked(node_id) {
            return Err(VerifierError::NodeRevoked);
        }
        if !self.nodes.contains_key(node_id) {
            return Err(VerifierError::NodeUnknown);
        }
        if !self.policies.contains_key(policy_id) {
            return Err(VerifierError::PolicyUnknown(policy_id.to_string()));
        }
        loop {
            let count = {
                let mut c = self.counters.entry(*node_id).or_insert(0);
                *c += 1;
                *c
            };
            let nonce = self.rng.fork(&format!("nonce/{}/{count}", node_id.0.to_hex())).bytes32();
            let session = hash_parts(&[b"SESSION", &nonce, self.key.public().name().as_bytes(), node_id.0.as_bytes()]);
            let request = AttestationRequest { session, node_id: *node_id, nonce, selection, kind };
            if let Entry::Vacant(v) = self.sessions.entry(session) {
                v.insert(Session { request: request.clone(), policy_id: policy_id.to_string() });
                return Ok(request);
            }
        }
    }

    pub fn open_sessions(&self) -> usize {
        self.sessions.len()
    }

    fn node_by_aik(&self, quote: &CompositeQuote) -> Option<NodeRegistration> {
        let id = *self.by_aik.get(&quote.signer_name)?;
        self.node(&id)
    }

    fn node_by_chip(&self, report: &TeeReport) -> Option<NodeRegistration> {
        let id = *self.by_chip.get(&(report.chip_id, report.tcb_version))?;
        self.node(&id)
    }

    fn quote_signer(&self, quote: &CompositeQuote) -> Option<NodeId> {
        self.node_by_aik(quote).filter(|n| quote.verify(&n.aik)).map(|n| n.node_id)
    }

    fn report_signer(&self, report: &TeeReport) -> Option<NodeId> {
        self.node_by_chip(report).filter(|n| report.verify_signature(&n.vcek)).map(|n| n.node_id)
    }

    /// Runs the checks in order and reports the first failure. The session
    /// stays open; only [`issue_token`](Self::issue_token) closes it.
    pub fn verify_composite(&self, session: &Digest32, envelope: &ReportEnvelope) -> VerifyOutcome {
        match self.check(session, envelope) {
            Ok(v) => VerifyOutcome::Accepted(v),
            Err(r) => VerifyOutcome::Rejected(r),
        }
    }

    fn check(&self, session_id: &Digest32, envelope: &ReportEnvelope) -> Result<VerifiedReport, Rejection> {
        use Rejection::*;
        let session = self.sessions.get(session_id).map(|s| s.clone()).ok_or(UnknownSession)?;
        let policy = self.policy(&session.policy_id).ok_or(UnknownSession)?;
        let req = &session.request;
        let parsed = envelope.parse().map_err(|_| Malformed)?;

        if envelope.kind != req.kind || !policy.allowed.contains(&envelope.kind) {
            return Err(TypeNotAllowed);
        }

        let (quote, report) = match &parsed {
            ParsedEnvelope::TpmOuter { quote, inner } => (Some(quote), Some(inner)),
            ParsedEnvelope::TeeOuter { report, inner } => (Some(inner), Some(report)),
            ParsedEnvelope::TeeOnly(r) => (None, Some(r)),
            ParsedEnvelope::TpmOnly(q) => (Some(q), None),
        };

        // Outer, then inner signature.
        let quote_node = quote.map(|q| self.quote_signer(q));
        let report_node = report.map(|r| self.report_signer(r));
        let (outer, inner) = match envelope.kind {
            ReportKind::TpmOuter | ReportKind::TpmOnly => (quote_node, report_node),
            ReportKind::TeeOuter | ReportKind::TeeOnly => (report_node, quote_node),
        };
        if outer.flatten().is_none() {
            return Err(OuterSignature);
        }
        if matches!(inner, Some(None)) {
            return Err(InnerSignature);
        }

        let nonce_ok = match &parsed {
            ParsedEnvelope::TpmOuter { quote, inner } => {
                quote.qualifying_data == req.nonce && inner.report_data == tpm_outer_report_data(&req.nonce)
            }
            ParsedEnvelope::TeeOuter { report, inner } => {
                inner.qualifying_data == req.nonce
                    && report.report_data == tee_outer_report_data(&req.nonce, &report.embedded_evidence)
            }
            ParsedEnvelope::TeeOnly(r) => r.report_data == tee_only_report_data(&req.nonce),
            ParsedEnvelope::TpmOnly(q) => q.qualifying_data == req.nonce,
        };
        if !nonce_ok {
            return Err(NonceMismatch);
        }

        if [outer, inner].into_iter().flatten().any(|n| n != Some(req.node_id)) {
            return Err(IdentityMismatch);
        }

        if let Some(r) = report {
            if r.launch_measurement != policy.launch_measurement {
                return Err(MeasurementMismatch);
            }
        }
        if let Some(q) = quote {
            if q.pcr_selection != req.selection || policy.pcr_baselines.get(&q.pcr_selection) != Some(&q.pcr_digest) {
                return Err(PcrMismatch);
            }
        }
        let node = self.node(&req.node_id).ok_or(IdentityMismatch)?;
        if let Some(r) = report {
            if r.tcb_version < policy.min_tcb {
                return Err(TcbTooLow);
            }
        }
        if self.revocations.is_node_revoked(&node.node_id)
            || self.revocations.is_serial_revoked(node.vcek_cert.serial)
            || self.revocations.is_serial_revoked(node.aik_cert.serial)
        {
            return Err(Revoked);
        }

        Ok(VerifiedReport {
            session: *session_id,
            node_id: node.node_id,
            kind: envelope.kind,
            envelope: envelope.to_bytes(),
            tcb_version: node.tcb_version,
            selection: req.selection,
            nonce: req.nonce,
        })
    }

    /// Closes the session and signs a token over the verified report.
    pub fn issue_token(&self, report: VerifiedReport) -> Result<String, VerifierError> {
        let (_, session) = self.sessions.remove(&report.session).ok_or(VerifierError::SessionUnknown)?;
        let policy = self.policy(&session.policy_id).ok_or(VerifierError::PolicyUnknown(session.policy_id.clone()))?;
        let serial = u64::from_le_bytes(hash_parts(&[b"TOKEN-SERIAL", report.session.as_bytes()]).0[..8].try_into().expect("8 bytes"));
        let iat = self.clock.now();
        let exp = iat + policy.lifetime_secs;
        let claims = Claims {
            header: TokenHeader {
                alg: "ES256".into(),
                typ: "JWT".into(),
                ver: TOKEN_FORMAT_VERSION,
                kid: self.key.public().name().to_hex(),
                iat,
                exp,
            },
            payload: TokenPayload {
                token_type: report.kind.token_type().into(),
                total_report: URL_SAFE_NO_PAD.encode(&report.envelope),
                platform: PlatformInfo {
                    node_id: report.node_id.0.to_hex(),
                    tcb_version: report.tcb_version,
                    pcr_selection: hex::encode(report.selection.to_bytes()),
                },
                policy_id: policy.id.clone(),
                serial,
                nonce: hex::encode(report.nonce),
            },
        };
        let token = encode_token(&self.key, &claims);
        self.issued.insert(
            serial,
            IssuanceRecord {
                serial,
                node_id: report.node_id,
                session: report.session,
                token_digest: hash(token.as_bytes()),
                issued_at: iat,
                expires_at: exp,
            },
        );
        self.log.lock().push(serial);
        Ok(token)
    }

    pub fn validate_token(&self, token: &str) -> Result<Claims, TokenRejection> {
        self.validate_token_at(token, self.clock.now())
    }

    /// Structure, signature, issuance log, revocation, then expiry.
    pub fn validate_token_at(&self, token: &str, now: u64) -> Result<Claims, TokenRejection> {
        let claims = decode_token(token, self.key.public())?;
        let record = self.issued.get(&claims.payload.serial).map(|r| r.clone()).ok_or(TokenRejection::NotIssued)?;
        if record.token_digest != hash(token.as_bytes()) {
            return Err(TokenRejection::NotIssued);
        }
        if self.revocations.is_node_revoked(&record.node_id) {
            return Err(TokenRejection::RevokedNode);
        }
        if now >= claims.header.exp {
            return Err(TokenRejection::Expired);
        }
        Ok(claims)
    }

    pub fn issuance_log(&self) -> Vec<IssuanceRecord> {
        self.log.lock().iter().filter_map(|s| self.issued.get(s).map(|r| r.clone())).collect()
    }

    pub fn is_issued(&self, serial: u64) -> bool {
        self.issued.contains_key(&serial)
    }
}

/// Decodes the envelope carried in a token's `total_report` claim.
pub fn token_envelope(claims: &Claims) -> Result<ReportEnvelope, CodecError> {
    let bytes = URL_SAFE_NO_PAD.decode(&claims.payload.total_report).map_err(|_| CodecError::Invalid("base64"))?;
    ReportEnvelope::from_bytes(&bytes)
}
