// SPDX-License-Identifier: Apache-2.0

//! Compact three-segment tokens: base64url(header).base64url(payload).base64url(sig),
//! signed with ES256 over the first two segments.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{sign, verify, PublicKey, Signature, SigningKeyPair};

pub const TOKEN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum TokenRejection {
    #[error("token is malformed")]
    Malformed,
    #[error("token signature does not verify")]
    BadSignature,
    #[error("token serial not in issuance log")]
    NotIssued,
    #[error("token subject has been revoked")]
    RevokedNode,
    #[error("token has expired")]
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenHeader {
    pub alg: String,
    pub typ: String,
    pub ver: u32,
    /// Hex name of the verifier's signing key.
    pub kid: String,
    pub iat: u64,
    pub exp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformInfo {
    pub node_id: String,
    pub tcb_version: u64,
    /// 3-byte register bitmap, hex.
    pub pcr_selection: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPayload {
    #[serde(rename = "type")]
    pub token_type: String,
    /// Canonical report envelope, base64url.
    pub total_report: String,
    pub platform: PlatformInfo,
    pub policy_id: String,
    pub serial: u64,
    pub nonce: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claims {
    pub header: TokenHeader,
    pub payload: TokenPayload,
}

pub fn encode_token(key: &SigningKeyPair, claims: &Claims) -> String {
    let header = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&claims.header).expect("header serializes"));
    let payload = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&claims.payload).expect("payload serializes"));
    let input = format!("{header}.{payload}");
    let sig = sign(key, input.as_bytes());
    format!("{input}.{}", URL_SAFE_NO_PAD.encode(sig.as_bytes()))
}

/// Structural and signature checks only.
pub fn decode_token(token: &str, verifier: &PublicKey) -> Result<Claims, TokenRejection> {
    let mut parts = token.split('.');
    let (Some(h), Some(p), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(TokenRejection::Malformed);
    };
    let decode = |seg: &str| URL_SAFE_NO_PAD.decode(seg).map_err(|_| TokenRejection::Malformed);
    let header: TokenHeader = serde_json::from_slice(&decode(h)?).map_err(|_| TokenRejection::Malformed)?;
    if header.alg != "ES256" || header.ver != TOKEN_FORMAT_VERSION {
        return Err(TokenRejection::Malformed);
    }
    let sig = Signature::from_bytes(&decode(s)?).map_err(|_| TokenRejection::Malformed)?;
    let signing_input = &token[..h.len() + 1 + p.len()];
    if !verify(verifier, signing_input.as_bytes(), &sig) {
        return Err(TokenRejection::BadSignature);
    }
    let payload: TokenPayload = serde_json::from_slice(&decode(p)?).map_err(|_| TokenRejection::Malformed)?;
    Ok(Claims { header, payload })
}

/// Decode plus expiry: a token is expired from `exp` onwards.
pub fn validate_token(token: &str, verifier: &PublicKey, now: u64) -> Result<Claims, TokenRejection> {
    let claims = decode_token(token, verifier)?;
    if now >= claims.header.exp {
        return Err(TokenRejection::Expired);
    }
    Ok(claims)
}
