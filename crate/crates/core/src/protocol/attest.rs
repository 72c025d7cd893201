// SPDX-License-Identifier: Apache-2.0

//! Composite and independent attestation runs.

use std::cell::RefCell;
use std::time::{Duration, Instant};

use super::checker::{LABEL_TOKEN, LABEL_TOTAL_REPORT};
use super::envelope::{tee_only_report_data, tee_outer_report_data, tpm_outer_report_data, ReportEnvelope, ReportKind};
use super::runner::{Io, Role, Runner};
use super::wire::{Payload, WireMessage};
use super::{Platform, Principal, ProtocolError, Trace};
use crate::codec::Canonical;
use crate::crypto::{hash, Digest32};
use crate::oca::NodeId;
use crate::tpm::{Handle, PcrSelection};
use crate::verifier::{Claims, TokenRejection, VerifierService, VerifyOutcome};

/// Misbehaviour injected into the prover side of a run.
#[derive(Debug, Clone, Copy)]
pub enum AttestFault<'a> {
    /// The outer prover submits this envelope instead of a fresh one.
    ReplayEnvelope(&'a ReportEnvelope),
    /// The inner report is produced by another platform for the same nonce.
    ForeignInner(&'a Platform),
}

#[derive(Debug, Clone)]
pub struct AttestOutcome {
    pub trace: Trace,
    pub session: Option<Digest32>,
    /// Envelope the verifier received, if any.
    pub envelope: Option<ReportEnvelope>,
    pub result: Result<String, ProtocolError>,
    pub timings: PhaseTimes,
}

/// Wall time the verifier spent in each phase of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimes {
    pub verify: Duration,
    pub issue: Duration,
}

#[derive(Default)]
struct Shared {
    session: Option<Digest32>,
    envelope: Option<ReportEnvelope>,
    token: Option<String>,
    timings: PhaseTimes,
}

fn prover_of(kind: ReportKind, index: u32) -> Principal {
    match kind {
        ReportKind::TpmOuter | ReportKind::TpmOnly => Principal::tpm(index),
        ReportKind::TeeOuter | ReportKind::TeeOnly => Principal::tee(index),
    }
}

fn aik_handle(platform: &Platform) -> Result<Handle, ProtocolError> {
    platform.aik().map(|(h, _)| h).ok_or(ProtocolError::Incomplete(Principal::tpm(platform.index)))
}

struct VerifierAttest<'a> {
    verifier: &'a VerifierService,
    node_id: NodeId,
    prover: Principal,
    policy_id: &'a str,
    kind: ReportKind,
    selection: PcrSelection,
    shared: &'a RefCell<Shared>,
    session: Digest32,
    done: bool,
}

impl Role for VerifierAttest<'_> {
    fn principal(&self) -> Principal {
        Principal::VERIFIER
    }

    fn start(&mut self, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        let req = self.verifier.new_request(&self.node_id, self.policy_id, self.kind, self.selection)?;
        self.session = req.session;
        self.shared.borrow_mut().session = Some(req.session);
        io.new_value("nonce", Digest32(req.nonce));
        io.send(self.prover, req.session, &Payload::Request { nonce: req.nonce, selection: req.selection })
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        let Payload::TotalEncReport { envelope } = io.open(msg)? else {
            return Err(io.unexpected(msg));
        };
        self.shared.borrow_mut().envelope = Some(envelope.clone());
        let started = Instant::now();
        let outcome = self.verifier.verify_composite(&self.session, &envelope);
        self.shared.borrow_mut().timings.verify = started.elapsed();
        let verified = match outcome {
            VerifyOutcome::Accepted(v) => v,
            VerifyOutcome::Rejected(r) => return Err(ProtocolError::AttestationRejected(r)),
        };
        let started = Instant::now();
        let token = self.verifier.issue_token(verified)?;
        self.shared.borrow_mut().timings.issue = started.elapsed();
        io.sign(LABEL_TOKEN, hash(token.as_bytes()), Some(self.node_id.0));
        self.done = true;
        io.send(msg.sender, self.session, &Payload::TokenInfo { token })
    }

    fn finished(&self) -> bool {
        self.done
    }
}

struct TpmAttest<'a> {
    platform: &'a Platform,
    kind: ReportKind,
    fault: Option<AttestFault<'a>>,
    shared: &'a RefCell<Shared>,
    pending: Option<([u8; 32], PcrSelection, Digest32)>,
    done: bool,
}

impl TpmAttest<'_> {
    fn submit(&mut self, io: &mut Io<'_>, session: Digest32, envelope: ReportEnvelope) -> Result<(), ProtocolError> {
        let envelope = match self.fault {
            Some(AttestFault::ReplayEnvelope(e)) => e.clone(),
            _ => envelope,
        };
        io.sign(LABEL_TOTAL_REPORT, hash(&envelope.to_bytes()), Some(self.platform.node_id().0));
        io.send(Principal::VERIFIER, session, &Payload::TotalEncReport { envelope })
    }
}

impl Role for TpmAttest<'_> {
    fn principal(&self) -> Principal {
        Principal::tpm(self.platform.index)
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        match io.open(msg)? {
            Payload::Request { nonce, selection } if self.kind == ReportKind::TpmOnly => {
                let quote = self.platform.tpm.lock().quote(aik_handle(self.platform)?, selection, &nonce)?;
                self.submit(io, msg.session, ReportEnvelope { kind: ReportKind::TpmOnly, outer: quote.to_bytes() })
            }
            Payload::Request { nonce, selection } => {
                self.pending = Some((nonce, selection, msg.session));
                io.send(Principal::tee(self.platform.index), msg.session, &Payload::ReportRequest { nonce })
            }
            Payload::TeeEncReport { report } => {
                let (nonce, selection, session) = self.pending.take().ok_or_else(|| io.unexpected(msg))?;
                let quote =
                    self.platform.tpm.lock().cc_quote(aik_handle(self.platform)?, selection, &nonce, &report.to_bytes())?;
                self.submit(io, session, ReportEnvelope::tpm_outer(&quote))
            }
            Payload::QuoteRequest { nonce, selection } => {
                let quote = self.platform.tpm.lock().quote(aik_handle(self.platform)?, selection, &nonce)?;
                io.sign("TPMReport", hash(&quote.to_bytes()), Some(self.platform.node_id().0));
                self.done = true;
                io.send(msg.sender, msg.session, &Payload::TpmEncReport { quote })
            }
            Payload::TokenInfo { token } => {
                self.shared.borrow_mut().token = Some(token);
                self.done = true;
                Ok(())
            }
            _ => Err(io.unexpected(msg)),
        }
    }

    fn finished(&self) -> bool {
        self.done
    }
}

struct TeeAttest<'a> {
    platform: &'a Platform,
    kind: ReportKind,
    fault: Option<AttestFault<'a>>,
    shared: &'a RefCell<Shared>,
    pending: Option<([u8; 32], Digest32)>,
    done: bool,
}

impl TeeAttest<'_> {
    fn submit(&mut self, io: &mut Io<'_>, session: Digest32, envelope: ReportEnvelope) -> Result<(), ProtocolError> {
        let envelope = match self.fault {
            Some(AttestFault::ReplayEnvelope(e)) => e.clone(),
            _ => envelope,
        };
        io.sign(LABEL_TOTAL_REPORT, hash(&envelope.to_bytes()), Some(self.platform.node_id().0));
        io.send(Principal::VERIFIER, session, &Payload::TotalEncReport { envelope })
    }
}

impl Role for TeeAttest<'_> {
    fn principal(&self) -> Principal {
        Principal::tee(self.platform.index)
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        match io.open(msg)? {
            Payload::Request { nonce, .. } if self.kind == ReportKind::TeeOnly => {
                let report = self.platform.tee.report(&tee_only_report_data(&nonce), &[])?;
                self.submit(io, msg.session, ReportEnvelope { kind: ReportKind::TeeOnly, outer: report.to_bytes() })
            }
            Payload::Request { nonce, selection } => match self.fault {
                Some(AttestFault::ForeignInner(other)) => {
                    let quote = other.tpm.lock().quote(aik_handle(other)?, selection, &nonce)?;
                    let bytes = quote.to_bytes();
                    let report = self.platform.tee.report(&tee_outer_report_data(&nonce, &bytes), &bytes)?;
                    self.submit(io, msg.session, ReportEnvelope::tee_outer(&report))
                }
                _ => {
                    self.pending = Some((nonce, msg.session));
                    let to = Principal::tpm(self.platform.index);
                    io.send(to, msg.session, &Payload::QuoteRequest { nonce, selection })
                }
            },
            Payload::TpmEncReport { quote } => {
                let (nonce, session) = self.pending.take().ok_or_else(|| io.unexpected(msg))?;
                let bytes = quote.to_bytes();
                let report = self.platform.tee.report(&tee_outer_report_data(&nonce, &bytes), &bytes)?;
                self.submit(io, session, ReportEnvelope::tee_outer(&report))
            }
            Payload::ReportRequest { nonce } => {
                let source = match self.fault {
                    Some(AttestFault::ForeignInner(other)) => other,
                    _ => self.platform,
                };
                let report = source.tee.report(&tpm_outer_report_data(&nonce), &[])?;
                io.sign("TEEReport", hash(&report.to_bytes()), Some(self.platform.node_id().0));
                self.done = true;
                io.send(msg.sender, msg.session, &Payload::TeeEncReport { report })
            }
            Payload::TokenInfo { token } => {
                self.shared.borrow_mut().token = Some(token);
                self.done = true;
                Ok(())
            }
            _ => Err(io.unexpected(msg)),
        }
    }

    fn finished(&self) -> bool {
        self.done
    }
}

/// One attestation run of `kind` against `platform` under `policy_id`.
pub fn run_attest(
    platform: &Platform,
    verifier: &VerifierService,
    policy_id: &str,
    kind: ReportKind,
    selection: PcrSelection,
    fault: Option<AttestFault<'_>>,
) -> AttestOutcome {
    let shared = RefCell::new(Shared::default());
    let (e, p) = (Principal::tee(platform.index), Principal::tpm(platform.index));
    let mut runner = Runner::new();
    runner.add_role(Box::new(VerifierAttest {
        verifier,
        node_id: platform.node_id(),
        prover: prover_of(kind, platform.index),
        policy_id,
        kind,
        selection,
        shared: &shared,
        session: Digest32::ZERO,
        done: false,
    }));
    if kind != ReportKind::TeeOnly {
        runner.add_role(Box::new(TpmAttest { platform, kind, fault, shared: &shared, pending: None, done: false }));
    }
    if kind != ReportKind::TpmOnly {
        runner.add_role(Box::new(TeeAttest { platform, kind, fault, shared: &shared, pending: None, done: false }));
    }
    runner.add_channel(p, Principal::VERIFIER, &platform.keys.k_pv);
    runner.add_channel(e, Principal::VERIFIER, &platform.keys.k_ev);
    runner.add_channel(p, e, &platform.keys.k_pe);

    let run = runner.run();
    let trace = runner.into_trace();
    let shared = shared.into_inner();
    let result = run.and_then(|()| shared.token.clone().ok_or(ProtocolError::Incomplete(prover_of(kind, platform.index))));
    AttestOutcome { trace, session: shared.session, envelope: shared.envelope, result, timings: shared.timings }
}

/// TPM-outer composite attestation: a CCQuote carrying the TEE report.
pub fn run_attest_tpm_tee(
    platform: &Platform,
    verifier: &VerifierService,
    policy_id: &str,
    selection: PcrSelection,
) -> AttestOutcome {
    run_attest(platform, verifier, policy_id, ReportKind::TpmOuter, selection, None)
}

/// TEE-outer composite attestation: a TEE report embedding a TPM quote.
pub fn run_attest_tee_tpm(
    platform: &Platform,
    verifier: &VerifierService,
    policy_id: &str,
    selection: PcrSelection,
) -> AttestOutcome {
    run_attest(platform, verifier, policy_id, ReportKind::TeeOuter, selection, None)
}

#[derive(Debug, Clone)]
pub struct IndependentOutcome {
    pub trace: Trace,
    pub tee: Result<String, ProtocolError>,
    pub tpm: Result<String, ProtocolError>,
}

/// Separate TEE-only and TPM-only attestations, one after the other.
pub fn run_independent_attest(
    platform: &Platform,
    verifier: &VerifierService,
    policy_id: &str,
    selection: PcrSelection,
) -> IndependentOutcome {
    let tee = run_attest(platform, verifier, policy_id, ReportKind::TeeOnly, selection, None);
    let tpm = run_attest(platform, verifier, policy_id, ReportKind::TpmOnly, selection, None);
    let mut trace = tee.trace;
    trace.extend(&tpm.trace);
    IndependentOutcome { trace, tee: tee.result, tpm: tpm.result }
}

/// Accepts a pair of separately issued tokens when each one validates on
/// its own. Nothing ties the two tokens to the same platform.
pub fn naive_combined_check(
    verifier: &VerifierService,
    tee_token: &str,
    tpm_token: &str,
) -> Result<(Claims, Claims), TokenRejection> {
    Ok((verifier.validate_token(tee_token)?, verifier.validate_token(tpm_token)?))
}
