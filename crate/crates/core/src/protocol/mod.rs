// SPDX-License-Identifier: Apache-2.0

//! Initialization and attestation protocols as message-driven role state
//! machines over pairwise AEAD channels, with full event traces.

mod attest;
mod channels;
mod checker;
mod envelope;
mod init;
mod platform;
mod runner;
mod trace;
mod wire;

use std::fmt;

use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::oca::OcaError;
use crate::tpm::TpmError;
use crate::verifier::{Rejection, VerifierError};

pub use attest::{
    naive_combined_check, run_attest, run_attest_tee_tpm, run_attest_tpm_tee, run_independent_attest, AttestFault,
    AttestOutcome, IndependentOutcome, PhaseTimes,
};
pub use channels::{agree as agree_channel, establish_channels, ChannelKeys, StaticParty};
pub use checker::{check_trace, faults, TraceReport, Verdict};
pub use envelope::{
    tee_only_report_data, tee_outer_report_data, tpm_outer_report_data, ParsedEnvelope, ReportEnvelope, ReportKind,
};
pub use init::{run_initialization, InitFault, InitOutcome};
pub use platform::Platform;
pub use runner::{Io, Role, Runner};
pub use trace::{Event, EventKind, Trace};
pub use wire::{decode_wire, encode_wire, Payload, WireMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrincipalRole {
    Oca = 1,
    Tee = 2,
    Tpm = 3,
    Verifier = 4,
}

/// A protocol participant. TEE and TPM principals carry their node index;
/// the OCA and the verifier use index 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Principal {
    pub role: PrincipalRole,
    pub node: u32,
}

impl Principal {
    pub const OCA: Principal = Principal { role: PrincipalRole::Oca, node: 0 };
    pub const VERIFIER: Principal = Principal { role: PrincipalRole::Verifier, node: 0 };

    pub fn tee(node: u32) -> Self {
        Principal { role: PrincipalRole::Tee, node }
    }

    pub fn tpm(node: u32) -> Self {
        Principal { role: PrincipalRole::Tpm, node }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "OCA" => Some(Self::OCA),
            "V" => Some(Self::VERIFIER),
            _ => {
                let (role, node) = s.split_once('#')?;
                let node = node.parse().ok()?;
                match role {
                    "TEE" => Some(Self::tee(node)),
                    "TPM" => Some(Self::tpm(node)),
                    _ => None,
                }
            }
        }
    }
}

impl fmt::Display for Principal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            PrincipalRole::Oca => f.write_str("OCA"),
            PrincipalRole::Verifier => f.write_str("V"),
            PrincipalRole::Tee => write!(f, "TEE#{}", self.node),
            PrincipalRole::Tpm => write!(f, "TPM#{}", self.node),
        }
    }
}

impl Canonical for Principal {
    fn encode(&self, enc: &mut Encoder) {
        enc.u8(self.role as u8).u32(self.node);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let role = match dec.u8()? {
            1 => PrincipalRole::Oca,
            2 => PrincipalRole::Tee,
            3 => PrincipalRole::Tpm,
            4 => PrincipalRole::Verifier,
            _ => return Err(CodecError::Invalid("principal role")),
        };
        Ok(Principal { role, node: dec.u32()? })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("{principal} failed to authenticate a message at step {step}")]
    AuthFailure { principal: Principal, step: usize },
    #[error("credential challenge failed")]
    ChallengeFailed,
    #[error("attestation rejected: {0}")]
    AttestationRejected(Rejection),
    #[error("{principal} received unexpected {label} at step {step}")]
    UnexpectedMessage { principal: Principal, label: &'static str, step: usize },
    #[error("message for unknown principal {0}")]
    UnknownPrincipal(Principal),
    #[error("no pairwise key between {0} and {1}")]
    NoChannel(Principal, Principal),
    #[error("pairwise key agreement failed")]
    KeyAgreement,
    #[error("wire decode: {0}")]
    Decode(#[from] CodecError),
    #[error("tpm: {0}")]
    Tpm(#[from] TpmError),
    #[error("tee: {0}")]
    Tee(#[from] crate::tee::TeeError),
    #[error("owner ca: {0}")]
    Oca(#[from] OcaError),
    #[error("verifier: {0}")]
    Verifier(#[from] VerifierError),
    #[error("run ended before {0} finished")]
    Incomplete(Principal),
}
