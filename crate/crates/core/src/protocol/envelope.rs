// SPDX-License-Identifier: Apache-2.0

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{hash, hash_parts};
use crate::tee::TeeReport;
use crate::tpm::CompositeQuote;

/// How the evidence returned to the verifier is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReportKind {
    /// CCQuote carrying a TEE report in its signed area.
    TpmOuter,
    /// TEE report carrying a TPM quote as embedded evidence.
    TeeOuter,
    TeeOnly,
    TpmOnly,
}

impl ReportKind {
    pub const ALL: [ReportKind; 4] = [ReportKind::TpmOuter, ReportKind::TeeOuter, ReportKind::TeeOnly, ReportKind::TpmOnly];

    /// Token `type` claim.
    pub fn token_type(self) -> &'static str {
        match self {
            ReportKind::TpmOuter => "tpm-tee",
            ReportKind::TeeOuter => "tee-tpm",
            ReportKind::TeeOnly => "tee",
            ReportKind::TpmOnly => "tpm",
        }
    }

    pub fn from_token_type(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.token_type() == s)
    }

    pub fn is_composite(self) -> bool {
        matches!(self, ReportKind::TpmOuter | ReportKind::TeeOuter)
    }
}

impl Canonical for ReportKind {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(*self as u8 + 1);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        match dec.u8()? {
            1 => Ok(ReportKind::TpmOuter),
            2 => Ok(ReportKind::TeeOuter),
            3 => Ok(ReportKind::TeeOnly),
            4 => Ok(ReportKind::TpmOnly),
            _ => Err(CodecError::Invalid("report kind")),
        }
    }
}

/// Evidence as submitted: the kind plus the outer report's canonical bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportEnvelope {
    pub kind: ReportKind,
    pub outer: Vec<u8>,
}

impl Canonical for ReportEnvelope {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.kind).bytes(&self.outer);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ReportEnvelope { kind: dec.value()?, outer: dec.bytes()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedEnvelope {
    TpmOuter { quote: CompositeQuote, inner: TeeReport },
    TeeOuter { report: TeeReport, inner: CompositeQuote },
    TeeOnly(TeeReport),
    TpmOnly(CompositeQuote),
}

impl ReportEnvelope {
    pub fn tpm_outer(quote: &CompositeQuote) -> Self {
        ReportEnvelope { kind: ReportKind::TpmOuter, outer: quote.to_bytes() }
    }

    pub fn tee_outer(report: &TeeReport) -> Self {
        ReportEnvelope { kind: ReportKind::TeeOuter, outer: report.to_bytes() }
    }

    /// Parses outer and inner reports. A composite envelope whose inner
    /// slot is empty is malformed.
    pub fn parse(&self) -> Result<ParsedEnvelope, CodecError> {
        Ok(match self.kind {
            ReportKind::TpmOuter => {
                let quote = CompositeQuote::from_bytes(&self.outer)?;
                if quote.tee_report.is_empty() {
                    return Err(CodecError::Invalid("composite quote without TEE report"));
                }
                let inner = TeeReport::from_bytes(&quote.tee_report)?;
                ParsedEnvelope::TpmOuter { quote, inner }
            }
            ReportKind::TeeOuter => {
                let report = TeeReport::from_bytes(&self.outer)?;
                if report.embedded_evidence.is_empty() {
                    return Err(CodecError::Invalid("composite report without quote"));
                }
                let inner = CompositeQuote::from_bytes(&report.embedded_evidence)?;
                ParsedEnvelope::TeeOuter { report, inner }
            }
            ReportKind::TeeOnly => ParsedEnvelope::TeeOnly(TeeReport::from_bytes(&self.outer)?),
            ReportKind::TpmOnly => ParsedEnvelope::TpmOnly(CompositeQuote::from_bytes(&self.outer)?),
        })
    }
}

/// report_data of the TEE report embedded in a CCQuote.
pub fn tpm_outer_report_data(nonce: &[u8; 32]) -> [u8; 64] {
    let mut rd = [0u8; 64];
    rd[..32].copy_from_slice(hash_parts(&[b"CCQUOTE-INNER", nonce]).as_bytes());
    rd
}

/// report_data of a TEE report that embeds a quote: the nonce, then the
/// digest of the embedded quote.
pub fn tee_outer_report_data(nonce: &[u8; 32], quote_bytes: &[u8]) -> [u8; 64] {
    let mut rd = [0u8; 64];
    rd[..32].copy_from_slice(nonce);
    rd[32..].copy_from_slice(hash(quote_bytes).as_bytes());
    rd
}

pub fn tee_only_report_data(nonce: &[u8; 32]) -> [u8; 64] {
    let mut rd = [0u8; 64];
    rd[..32].copy_from_slice(nonce);
    rd
}
