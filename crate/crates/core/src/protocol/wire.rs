// SPDX-License-Identifier: Apache-2.0

use super::envelope::ReportEnvelope;
use super::Principal;
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{channel_open, channel_seal, hash, CryptoError, Certificate, Digest32, PublicKey, Secret};
use crate::oca::{OcaRequest, OcaResponse};
use crate::tee::{CertChain, TeeReport};
use crate::tpm::{CompositeQuote, CredentialChallenge, PcrSelection};

/// Plaintext carried inside one channel message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    VcekInfo { vcek: PublicKey, chain: CertChain, chip_id: [u8; 32], tcb_version: u64 },
    CertVcekInfo { cert: Certificate },
    CertTeeInfo { cert: Certificate, vcek: PublicKey, chip_id: [u8; 32], tcb_version: u64 },
    KeyInfo { aik: PublicKey, ek: PublicKey, ek_cert: Certificate },
    Challenge { session: Digest32, challenge: CredentialChallenge },
    NonceInfo { session: Digest32, n_prime: Secret },
    CertAikInfo { cert: Certificate },
    KeyCertInfo { aik: PublicKey, cert: Certificate },
    Request { nonce: [u8; 32], selection: PcrSelection },
    ReportRequest { nonce: [u8; 32] },
    TeeEncReport { report: TeeReport },
    QuoteRequest { nonce: [u8; 32], selection: PcrSelection },
    TpmEncReport { quote: CompositeQuote },
    TotalEncReport { envelope: ReportEnvelope },
    TokenInfo { token: String },
    OcaCall(OcaRequest),
    OcaReply(OcaResponse),
}

const TAGS: [u16; 17] =
    [0x0101, 0x0102, 0x0103, 0x0104, 0x0105, 0x0106, 0x0107, 0x0108, 0x0201, 0x0202, 0x0203, 0x0204, 0x0205, 0x0206, 0x0207, 0x0301, 0x0302];

impl Payload {
    pub fn tag(&self) -> u16 {
        match self {
            Payload::VcekInfo { .. } => 0x0101,
            Payload::CertVcekInfo { .. } => 0x0102,
            Payload::CertTeeInfo { .. } => 0x0103,
            Payload::KeyInfo { .. } => 0x0104,
            Payload::Challenge { .. } => 0x0105,
            Payload::NonceInfo { .. } => 0x0106,
            Payload::CertAikInfo { .. } => 0x0107,
            Payload::KeyCertInfo { .. } => 0x0108,
            Payload::Request { .. } => 0x0201,
            Payload::ReportRequest { .. } => 0x0202,
            Payload::TeeEncReport { .. } => 0x0203,
            Payload::QuoteRequest { .. } => 0x0204,
            Payload::TpmEncReport { .. } => 0x0205,
            Payload::TotalEncReport { .. } => 0x0206,
            Payload::TokenInfo { .. } => 0x0207,
            Payload::OcaCall(_) => 0x0301,
            Payload::OcaReply(_) => 0x0302,
        }
    }

    pub fn label(&self) -> &'static str {
        label_of(self.tag())
    }

    /// Digest of the item the message carries. Certificate and token
    /// messages use the digest of the certificate or token itself so a
    /// trace can relate signing, sending and possession of the same item.
    pub fn content_digest(&self) -> Digest32 {
        match self {
            Payload::CertVcekInfo { cert } | Payload::CertAikInfo { cert } => cert.digest(),
            Payload::CertTeeInfo { cert, .. } | Payload::KeyCertInfo { cert, .. } => cert.digest(),
            Payload::TokenInfo { token } => hash(token.as_bytes()),
            other => hash(&other.to_bytes()),
        }
    }

    fn encode_body(&self, enc: &mut Encoder) {
        match self {
            Payload::VcekInfo { vcek, chain, chip_id, tcb_version } => {
                enc.value(vcek).value(chain).fixed(chip_id).u64(*tcb_version);
            }
            Payload::CertVcekInfo { cert } | Payload::CertAikInfo { cert } => {
                enc.value(cert);
            }
            Payload::CertTeeInfo { cert, vcek, chip_id, tcb_version } => {
                enc.value(cert).value(vcek).fixed(chip_id).u64(*tcb_version);
            }
            Payload::KeyInfo { aik, ek, ek_cert } => {
                enc.value(aik).value(ek).value(ek_cert);
            }
            Payload::Challenge { session, challenge } => {
                enc.value(session).value(challenge);
            }
            Payload::NonceInfo { session, n_prime } => {
                enc.value(session);
                n_prime.encode_sealed(enc);
            }
            Payload::KeyCertInfo { aik, cert } => {
                enc.value(aik).value(cert);
            }
            Payload::Request { nonce, selection } | Payload::QuoteRequest { nonce, selection } => {
                enc.fixed(nonce).value(selection);
            }
            Payload::ReportRequest { nonce } => {
                enc.fixed(nonce);
            }
            Payload::TeeEncReport { report } => {
                enc.value(report);
            }
            Payload::TpmEncReport { quote } => {
                enc.value(quote);
            }
            Payload::TotalEncReport { envelope } => {
                enc.value(envelope);
            }
            Payload::TokenInfo { token } => {
                enc.str(token);
            }
            Payload::OcaCall(r) => {
                enc.value(r);
            }
            Payload::OcaReply(r) => {
                enc.value(r);
            }
        }
    }

    fn decode_body(tag: u16, dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(match tag {
            0x0101 => Payload::VcekInfo { vcek: dec.value()?, chain: dec.value()?, chip_id: dec.fixed()?, tcb_version: dec.u64()? },
            0x0102 => Payload::CertVcekInfo { cert: dec.value()? },
            0x0103 => Payload::CertTeeInfo { cert: dec.value()?, vcek: dec.value()?, chip_id: dec.fixed()?, tcb_version: dec.u64()? },
            0x0104 => Payload::KeyInfo { aik: dec.value()?, ek: dec.value()?, ek_cert: dec.value()? },
            0x0105 => Payload::Challenge { session: dec.value()?, challenge: dec.value()? },
            0x0106 => Payload::NonceInfo { session: dec.value()?, n_prime: Secret::decode_sealed(dec)? },
            0x0107 => Payload::CertAikInfo { cert: dec.value()? },
            0x0108 => Payload::KeyCertInfo { aik: dec.value()?, cert: dec.value()? },
            0x0201 => Payload::Request { nonce: dec.fixed()?, selection: dec.value()? },
            0x0202 => Payload::ReportRequest { nonce: dec.fixed()? },
            0x0203 => Payload::TeeEncReport { report: dec.value()? },
            0x0204 => Payload::QuoteRequest { nonce: dec.fixed()?, selection: dec.value()? },
            0x0205 => Payload::TpmEncReport { quote: dec.value()? },
            0x0206 => Payload::TotalEncReport { envelope: dec.value()? },
            0x0207 => Payload::TokenInfo { token: dec.str()? },
            0x0301 => Payload::OcaCall(dec.value()?),
            0x0302 => Payload::OcaReply(dec.value()?),
            other => return Err(CodecError::UnknownTag(other)),
        })
    }
}

pub(crate) fn label_of(tag: u16) -> &'static str {
    match tag {
        0x0101 => "VCEKInfo",
        0x0102 => "certVCEKInfo",
        0x0103 => "certTEEInfo",
        0x0104 => "keyInfo",
        0x0105 => "challenge",
        0x0106 => "nonceInfo",
        0x0107 => "certAIKInfo",
        0x0108 => "keyCertInfo",
        0x0201 => "request",
        0x0202 => "reportRequest",
        0x0203 => "TEEEncReport",
        0x0204 => "quoteRequest",
        0x0205 => "TPMEncReport",
        0x0206 => "totalEncReport",
        0x0207 => "tokenInfo",
        0x0301 => "ocaCall",
        0x0302 => "ocaReply",
        _ => "unknown",
    }
}

/// TLV: u16 tag, u32 body length, body.
fn write_tlv(tag: u16, body: &[u8], enc: &mut Encoder) {
    enc.u16(tag).u32(body.len() as u32).fixed(body);
}

fn read_tlv(dec: &mut Decoder<'_>) -> Result<(u16, Vec<u8>), CodecError> {
    let tag = dec.u16()?;
    if !TAGS.contains(&tag) {
        return Err(CodecError::UnknownTag(tag));
    }
    let len = dec.u32()? as usize;
    Ok((tag, dec.raw(len)?))
}

impl Canonical for Payload {
    fn encode(&self, enc: &mut Encoder) {
        let mut body = Encoder::new();
        self.encode_body(&mut body);
        write_tlv(self.tag(), &body.finish(), enc);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let (tag, body) = read_tlv(dec)?;
        let mut inner = Decoder::new(&body);
        let p = Payload::decode_body(tag, &mut inner)?;
        inner.finish()?;
        Ok(p)
    }
}

/// One routed channel message. The routing fields travel in clear and are
/// authenticated as AAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: u16,
    pub sender: Principal,
    pub receiver: Principal,
    pub session: Digest32,
    pub ciphertext: Vec<u8>,
}

impl WireMessage {
    fn aad(msg_type: u16, sender: &Principal, receiver: &Principal, session: &Digest32) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u16(msg_type).value(sender).value(receiver).value(session);
        enc.finish()
    }

    pub fn seal(
        key: &Secret,
        sender: Principal,
        receiver: Principal,
        session: Digest32,
        payload: &Payload,
    ) -> Result<Self, CryptoError> {
        let msg_type = payload.tag();
        let aad = Self::aad(msg_type, &sender, &receiver, &session);
        let ciphertext = channel_seal(key, &payload.to_bytes(), &aad)?;
        Ok(WireMessage { msg_type, sender, receiver, session, ciphertext })
    }

    /// Decrypts under `key`. A payload whose tag differs from the routed
    /// type is treated as an authentication failure.
    pub fn open(&self, key: &Secret) -> Result<Payload, CryptoError> {
        let aad = Self::aad(self.msg_type, &self.sender, &self.receiver, &self.session);
        let plain = channel_open(key, &self.ciphertext, &aad)?;
        let payload = Payload::from_bytes(&plain).map_err(|_| CryptoError::AuthFailure)?;
        if payload.tag() != self.msg_type {
            return Err(CryptoError::AuthFailure);
        }
        Ok(payload)
    }

    pub fn label(&self) -> &'static str {
        label_of(self.msg_type)
    }

    pub fn digest(&self) -> Digest32 {
        hash(&encode_wire(self))
    }
}

pub fn encode_wire(msg: &WireMessage) -> Vec<u8> {
    let mut body = Encoder::new();
    body.value(&msg.sender).value(&msg.receiver).value(&msg.session).bytes(&msg.ciphertext);
    let mut enc = Encoder::new();
    write_tlv(msg.msg_type, &body.finish(), &mut enc);
    enc.finish()
}

pub fn decode_wire(bytes: &[u8]) -> Result<WireMessage, CodecError> {
    let mut dec = Decoder::new(bytes);
    let (msg_type, body) = read_tlv(&mut dec)?;
    dec.finish()?;
    let mut inner = Decoder::new(&body);
    let msg = WireMessage {
        msg_type,
        sender: inner.value()?,
        receiver: inner.value()?,
        session: inner.value()?,
        ciphertext: inner.bytes()?,
    };
    inner.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyRole, RandomSource, SigningKeyPair};
    use crate::protocol::ReportKind;
    use crate::tee::{tee_vendor, TeeNode, TeeTcb};
    use crate::tpm::{make_credential, KeyAttributes, TpmState};

    pub(crate) fn sample_payloads() -> Vec<Payload> {
        let tee = TeeNode::new(tee_vendor(), [1; 32], 2, TeeTcb::from_images(b"a", b"b", b"c", b"d"));
        let mut tpm = TpmState::manufacture(&Secret::new(vec![4; 32]).unwrap()).unwrap();
        let blob = tpm.create_key(tpm.ek_handle(), KeyRole::Aik, KeyAttributes::ATTESTATION).unwrap();
        let aik = tpm.load_key(&blob).unwrap();
        let report = tee.report(&[3; 64], b"evidence").unwrap();
        let quote = tpm.cc_quote(aik, PcrSelection::ALL, &[5; 32], &report.to_bytes()).unwrap();
        let key = SigningKeyPair::derive(KeyRole::Oca, &Secret::new(vec![6; 32]).unwrap(), "X", b"");
        let cert = Certificate::issue(&key, KeyRole::Vcek, tee.vcek_public(), 77);
        let rng = RandomSource::seeded(1);
        let n = rng.secret(32);
        vec![
            Payload::VcekInfo { vcek: *tee.vcek_public(), chain: tee.chain().clone(), chip_id: [1; 32], tcb_version: 2 },
            Payload::CertVcekInfo { cert: cert.clone() },
            Payload::CertTeeInfo { cert: cert.clone(), vcek: *tee.vcek_public(), chip_id: [1; 32], tcb_version: 2 },
            Payload::KeyInfo { aik: blob.public, ek: tpm.ek_public(), ek_cert: tpm.ek_certificate().clone() },
            Payload::Challenge {
                session: hash(b"s"),
                challenge: make_credential(&n, &blob.name(), &tpm.ek_public(), &rng),
            },
            Payload::NonceInfo { session: hash(b"s"), n_prime: n },
            Payload::CertAikInfo { cert: cert.clone() },
            Payload::KeyCertInfo { aik: blob.public, cert },
            Payload::Request { nonce: [7; 32], selection: PcrSelection::range(0..8) },
            Payload::ReportRequest { nonce: [7; 32] },
            Payload::TeeEncReport { report: report.clone() },
            Payload::QuoteRequest { nonce: [7; 32], selection: PcrSelection::ALL },
            Payload::TpmEncReport { quote: quote.clone() },
            Payload::TotalEncReport { envelope: ReportEnvelope { kind: ReportKind::TpmOuter, outer: quote.to_bytes() } },
            Payload::TokenInfo { token: "a.b.c".into() },
            Payload::OcaCall(OcaRequest::FetchRevocationList),
            Payload::OcaReply(OcaResponse::Revoked),
        ]
    }

    #[test]
    fn every_message_type_round_trips() {
        let key = Secret::new(vec![8; 32]).unwrap();
        let payloads = sample_payloads();
        let tags: Vec<u16> = payloads.iter().map(|p| p.tag()).collect();
        assert_eq!(tags, TAGS);
        for p in payloads {
            assert_eq!(Payload::from_bytes(&p.to_bytes()).unwrap(), p);
            let msg = WireMessage::seal(&key, Principal::OCA, Principal::tpm(3), hash(b"sess"), &p).unwrap();
            let bytes = encode_wire(&msg);
            let back = decode_wire(&bytes).unwrap();
            assert_eq!(back, msg);
            assert_eq!(encode_wire(&back), bytes);
            assert_eq!(back.open(&key).unwrap(), p);
            assert!(matches!(
                decode_wire(&bytes[..bytes.len() - 1]),
                Err(CodecError::Truncated { .. })
            ));
        }
    }

    #[test]
    fn unknown_tag_rejected() {
        let mut enc = Encoder::new();
        enc.u16(0xFFFF).u32(0);
        assert_eq!(decode_wire(&enc.finish()), Err(CodecError::UnknownTag(0xFFFF)));
    }

    #[test]
    fn routing_metadata_is_authenticated() {
        let key = Secret::new(vec![8; 32]).unwrap();
        let p = Payload::ReportRequest { nonce: [1; 32] };
        let msg = WireMessage::seal(&key, Principal::tpm(1), Principal::tee(1), hash(b"s"), &p).unwrap();
        let mut moved = msg.clone();
        moved.receiver = Principal::tee(2);
        assert_eq!(moved.open(&key), Err(CryptoError::AuthFailure));
        let mut other_session = msg.clone();
        other_session.session = hash(b"t");
        assert_eq!(other_session.open(&key), Err(CryptoError::AuthFailure));
        let mut retyped = msg.clone();
        retyped.msg_type = 0x0201;
        assert_eq!(retyped.open(&key), Err(CryptoError::AuthFailure));
        assert_eq!(msg.open(&Secret::new(vec![9; 32]).unwrap()), Err(CryptoError::AuthFailure));
    }
}
