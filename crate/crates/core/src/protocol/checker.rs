// SPDX-License-Identifier: Apache-2.0

//! Trace checks for the three protocol guarantees: certificate issuance,
//! token issuance and token-content integrity.

use super::trace::{Event, EventKind, Trace};
use super::{Principal, PrincipalRole};
use crate::crypto::hash;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Indices of the offending event and of any related events found.
    Counterexample(Vec<usize>),
}

impl Verdict {
    pub fn is_pass(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceReport {
    /// Certificate possession implies OCA signed and sent it after
    /// checking key possession.
    pub cert_issuance: Verdict,
    /// Token possession implies the verifier signed it and sent it to the holder.
    pub token_issuance: Verdict,
    /// A prover's total report follows the verifier's request, and tokens
    /// are only signed by the verifier.
    pub report_order: Verdict,
}

impl TraceReport {
    pub fn all_pass(&self) -> bool {
        self.cert_issuance.is_pass() && self.token_issuance.is_pass() && self.report_order.is_pass()
    }
}

pub const LABEL_CERT_VCEK: &str = "cert_VCEK";
pub const LABEL_CERT_AIK: &str = "cert_AIK";
pub const LABEL_TOKEN: &str = "token";
pub const LABEL_TOTAL_REPORT: &str = "totalReport";
pub const LABEL_REQUEST: &str = "request";
pub const LABEL_CHAIN_MATCH: &str = "vcek-chain";
pub const LABEL_NONCE_MATCH: &str = "nonce";

fn find_before(events: &[Event], before: usize, pred: impl Fn(&Event) -> bool) -> Option<usize> {
    events[..before].iter().rposition(pred)
}

fn check_cert_issuance(events: &[Event]) -> Verdict {
    for e in events {
        if e.kind != EventKind::Decrypt || e.principal.role == PrincipalRole::Oca {
            continue;
        }
        let evidence = match e.label.as_str() {
            LABEL_CERT_VCEK => LABEL_CHAIN_MATCH,
            LABEL_CERT_AIK => LABEL_NONCE_MATCH,
            _ => continue,
        };
        let Some(sign) = find_before(events, e.index, |s| {
            s.principal == Principal::OCA && s.kind == EventKind::Sign && s.label == e.label && s.digest == e.digest
        }) else {
            return Verdict::Counterexample(vec![e.index]);
        };
        let sent = events[sign..e.index].iter().any(|s| {
            s.principal == Principal::OCA
                && s.kind == EventKind::Send
                && s.peer == Some(e.principal)
                && s.aux == Some(e.digest)
        });
        let possession = find_before(events, sign, |m| {
            m.principal == Principal::OCA && m.matched() && m.label == evidence
        })
        .is_some();
        if !sent || !possession {
            return Verdict::Counterexample(vec![e.index, sign]);
        }
    }
    Verdict::Pass
}

fn check_token_issuance(events: &[Event]) -> Verdict {
    for e in events {
        if e.kind != EventKind::Decrypt || e.label != LABEL_TOKEN {
            continue;
        }
        let Some(sign) = find_before(events, e.index, |s| {
            s.principal == Principal::VERIFIER && s.kind == EventKind::Sign && s.label == LABEL_TOKEN && s.digest == e.digest
        }) else {
            return Verdict::Counterexample(vec![e.index]);
        };
        let sent = events[sign..e.index].iter().any(|s| {
            s.principal == Principal::VERIFIER
                && s.kind == EventKind::Send
                && s.peer == Some(e.principal)
                && s.aux == Some(e.digest)
        });
        if !sent {
            return Verdict::Counterexample(vec![e.index, sign]);
        }
    }
    Verdict::Pass
}

fn check_report_order(events: &[Event]) -> Verdict {
    for e in events.iter().filter(|e| e.kind == EventKind::Sign) {
        if e.label == LABEL_TOKEN && e.principal != Principal::VERIFIER {
            return Verdict::Counterexample(vec![e.index]);
        }
        if e.label != LABEL_TOTAL_REPORT {
            continue;
        }
        let received = find_before(events, e.index, |r| {
            r.principal == e.principal
                && r.kind == EventKind::Receive
                && r.peer == Some(Principal::VERIFIER)
                && r.label == LABEL_REQUEST
        });
        let Some(received) = received else {
            return Verdict::Counterexample(vec![e.index]);
        };
        let requested = find_before(events, received, |s| {
            s.principal == Principal::VERIFIER
                && s.kind == EventKind::Send
                && s.peer == Some(e.principal)
                && s.label == LABEL_REQUEST
                && s.digest == events[received].digest
        });
        if requested.is_none() {
            return Verdict::Counterexample(vec![e.index, received]);
        }
    }
    Verdict::Pass
}

pub fn check_trace(trace: &Trace) -> TraceReport {
    let events = trace.events();
    TraceReport {
        cert_issuance: check_cert_issuance(events),
        token_issuance: check_token_issuance(events),
        report_order: check_report_order(events),
    }
}

/// Canonical trace mutations used to show each check can fail.
pub mod faults {
    use super::*;

    /// Appends a certificate possession by the first TPM in the trace for a
    /// certificate the OCA never signed.
    pub fn forge_certificate(trace: &Trace) -> Trace {
        let holder = first_of(trace, PrincipalRole::Tpm);
        let mut t = trace.clone();
        t.record(holder, EventKind::Decrypt, None, hash(b"forged certificate"), None, LABEL_CERT_AIK);
        t
    }

    /// Appends a token possession with no verifier signature behind it.
    pub fn forge_token(trace: &Trace) -> Trace {
        let holder = first_of(trace, PrincipalRole::Tpm);
        let mut t = trace.clone();
        t.record(holder, EventKind::Decrypt, None, hash(b"forged token"), None, LABEL_TOKEN);
        t
    }

    /// Moves the first total-report signature to the front of the trace,
    /// ahead of the request it answers.
    pub fn sign_before_receive(trace: &Trace) -> Trace {
        let mut events = trace.events().to_vec();
        if let Some(pos) = events.iter().position(|e| e.kind == EventKind::Sign && e.label == LABEL_TOTAL_REPORT) {
            let sign = events.remove(pos);
            events.insert(0, sign);
        }
        Trace::from_events(events)
    }

    fn first_of(trace: &Trace, role: PrincipalRole) -> Principal {
        trace
            .events()
            .iter()
            .find(|e| e.principal.role == role)
            .map(|e| e.principal)
            .unwrap_or(Principal { role, node: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Digest32;

    fn ev(t: &mut Trace, p: Principal, k: EventKind, peer: Option<Principal>, d: Digest32, aux: Option<Digest32>, l: &str) {
        t.record(p, k, peer, d, aux, l);
    }

    fn attest_trace() -> Trace {
        let p = Principal::tpm(1);
        let v = Principal::VERIFIER;
        let (req, tok) = (hash(b"req"), hash(b"tok"));
        let mut t = Trace::new();
        ev(&mut t, v, EventKind::Send, Some(p), req, Some(hash(b"r")), LABEL_REQUEST);
        ev(&mut t, p, EventKind::Receive, Some(v), req, None, LABEL_REQUEST);
        ev(&mut t, p, EventKind::Sign, None, hash(b"total"), None, LABEL_TOTAL_REPORT);
        ev(&mut t, v, EventKind::Sign, None, tok, None, LABEL_TOKEN);
        ev(&mut t, v, EventKind::Send, Some(p), hash(b"w"), Some(tok), "tokenInfo");
        ev(&mut t, p, EventKind::Decrypt, None, tok, None, LABEL_TOKEN);
        t
    }

    #[test]
    fn hand_built_attestation_passes() {
        assert!(check_trace(&attest_trace()).all_pass());
    }

    #[test]
    fn each_fault_hits_its_check() {
        let t = attest_trace();
        let forged = check_trace(&faults::forge_token(&t));
        assert!(matches!(forged.token_issuance, Verdict::Counterexample(ref i) if i == &vec![6]));
        let reordered = check_trace(&faults::sign_before_receive(&t));
        assert_eq!(reordered.report_order, Verdict::Counterexample(vec![0]));
        let cert = check_trace(&faults::forge_certificate(&t));
        assert_eq!(cert.cert_issuance, Verdict::Counterexample(vec![6]));
    }

    #[test]
    fn token_signed_by_prover_is_flagged() {
        let mut t = attest_trace();
        ev(&mut t, Principal::tpm(1), EventKind::Sign, None, hash(b"x"), None, LABEL_TOKEN);
        assert_eq!(check_trace(&t).report_order, Verdict::Counterexample(vec![6]));
    }

    #[test]
    fn certificate_needs_possession_check() {
        let tee = Principal::tee(0);
        let cert = hash(b"cert");
        let mut t = Trace::new();
        ev(&mut t, Principal::OCA, EventKind::Sign, None, cert, Some(hash(b"vcek")), LABEL_CERT_VCEK);
        ev(&mut t, Principal::OCA, EventKind::Send, Some(tee), hash(b"m"), Some(cert), "certVCEKInfo");
        ev(&mut t, tee, EventKind::Decrypt, None, cert, None, LABEL_CERT_VCEK);
        assert_eq!(check_trace(&t).cert_issuance, Verdict::Counterexample(vec![2, 0]));

        let mut events = vec![];
        let mut pre = Trace::new();
        ev(&mut pre, Principal::OCA, EventKind::Match, None, hash(b"vcek"), Some(hash(b"vcek")), LABEL_CHAIN_MATCH);
        events.extend(pre.events().iter().cloned());
        events.extend(t.events().iter().cloned());
        assert!(check_trace(&Trace::from_events(events)).cert_issuance.is_pass());
    }
}
