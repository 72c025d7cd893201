// SPDX-License-Identifier: Apache-2.0

use super::{AttestationRequest, Policy, Rejection, TokenRejection, VerifierService, VerifyOutcome};
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::Digest32;
use crate::oca::NodeId;
use crate::protocol::{ReportEnvelope, ReportKind};
use crate::tpm::PcrSelection;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifierRequest {
    NewRequest { node_id: NodeId, policy_id: String, kind: ReportKind, selection: PcrSelection },
    SubmitEvidence { session: Digest32, envelope: ReportEnvelope },
    ValidateToken { token: String },
    FetchPolicy { id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifierResponse {
    Request(AttestationRequest),
    Token(String),
    Rejected(Rejection),
    /// Validated token claims as JSON.
    Valid { claims_json: String },
    Invalid(TokenRejection),
    Policy(Policy),
    Error(String),
}

impl VerifierService {
    pub fn handle(&self, request: &VerifierRequest) -> VerifierResponse {
        match request {
            VerifierRequest::NewRequest { node_id, policy_id, kind, selection } => {
                match self.new_request(node_id, policy_id, *kind, *selection) {
                    Ok(r) => VerifierResponse::Request(r),
                    Err(e) => VerifierResponse::Error(e.to_string()),
                }
            }
            VerifierRequest::SubmitEvidence { session, envelope } => match self.verify_composite(session, envelope) {
                VerifyOutcome::Accepted(v) => match self.issue_token(v) {
                    Ok(t) => VerifierResponse::Token(t),
                    Err(e) => VerifierResponse::Error(e.to_string()),
                },
                VerifyOutcome::Rejected(r) => VerifierResponse::Rejected(r),
            },
            VerifierRequest::ValidateToken { token } => match self.validate_token(token) {
                Ok(c) => VerifierResponse::Valid {
                    claims_json: serde_json::json!({ "header": c.header, "payload": c.payload }).to_string(),
                },
                Err(r) => VerifierResponse::Invalid(r),
            },
            VerifierRequest::FetchPolicy { id } => match self.policy(id) {
                Some(p) => VerifierResponse::Policy(p),
                None => VerifierResponse::Error(format!("unknown policy {id:?}")),
            },
        }
    }
}

impl Canonical for AttestationRequest {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.session).value(&self.node_id).fixed(&self.nonce).value(&self.selection).value(&self.kind);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(AttestationRequest {
            session: dec.value()?,
            node_id: dec.value()?,
            nonce: dec.fixed()?,
            selection: dec.value()?,
            kind: dec.value()?,
        })
    }
}

const TOKEN_REJECTIONS: [TokenRejection; 5] = [
    TokenRejection::Malformed,
    TokenRejection::BadSignature,
    TokenRejection::NotIssued,
    TokenRejection::RevokedNode,
    TokenRejection::Expired,
];

impl Canonical for VerifierRequest {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            VerifierRequest::NewRequest { node_id, policy_id, kind, selection } => {
                enc.u8(1).value(node_id).str(policy_id).value(kind).value(selection)
            }
            VerifierRequest::SubmitEvidence { session, envelope } => enc.u8(2).value(session).value(envelope),
            VerifierRequest::ValidateToken { token } => enc.u8(3).str(token),
            VerifierRequest::FetchPolicy { id } => enc.u8(4).str(id),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.u8()? {
            1 => VerifierRequest::NewRequest {
                node_id: dec.value()?,
                policy_id: dec.str()?,
                kind: dec.value()?,
                selection: dec.value()?,
            },
            2 => VerifierRequest::SubmitEvidence { session: dec.value()?, envelope: dec.value()? },
            3 => VerifierRequest::ValidateToken { token: dec.str()? },
            4 => VerifierRequest::FetchPolicy { id: dec.str()? },
            _ => return Err(CodecError::Invalid("verifier request kind")),
        })
    }
}

impl Canonical for VerifierResponse {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            VerifierResponse::Request(r) => enc.u8(1).value(r),
            VerifierResponse::Token(t) => enc.u8(2).str(t),
            VerifierResponse::Rejected(r) => {
                enc.u8(3).u8(Rejection::ALL.iter().position(|x| x == r).expect("listed") as u8)
            }
            VerifierResponse::Valid { claims_json } => enc.u8(4).str(claims_json),
            VerifierResponse::Invalid(r) => enc.u8(5).u8(TOKEN_REJECTIONS.iter().position(|x| x == r).expect("listed") as u8),
            VerifierResponse::Policy(p) => enc.u8(6).value(p),
            VerifierResponse::Error(e) => enc.u8(7).str(e),
        };
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match dec.u8()? {
            1 => VerifierResponse::Request(dec.value()?),
            2 => VerifierResponse::Token(dec.str()?),
            3 => VerifierResponse::Rejected(
                *Rejection::ALL.get(dec.u8()? as usize).ok_or(CodecError::Invalid("rejection"))?,
            ),
            4 => VerifierResponse::Valid { claims_json: dec.str()? },
            5 => VerifierResponse::Invalid(
                *TOKEN_REJECTIONS.get(dec.u8()? as usize).ok_or(CodecError::Invalid("token rejection"))?,
            ),
            6 => VerifierResponse::Policy(dec.value()?),
            7 => VerifierResponse::Error(dec.str()?),
            _ => return Err(CodecError::Invalid("verifier response kind")),
        })
    }
}
