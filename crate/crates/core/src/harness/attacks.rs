// SPDX-License-Identifier: Apache-2.0

//! Fault injections against a built cluster. Each attack reports how many
//! forged attempts were accepted (must be zero) and how many honest
//! control runs were accepted (must be all of them).

use std::collections::BTreeMap;

use serde::Serialize;

use super::cluster::{attested_selection, Cluster, POLICY_ID};
use super::config::{AttackKind, Direction};
use super::exec::map_indexed;
use crate::codec::Canonical;
use crate::crypto::{KeyRole, SigningKeyPair};
use crate::measurement::{ImageManifest, MeasurementError};
use crate::protocol::{
    tee_outer_report_data, tpm_outer_report_data, AttestFault, ProtocolError, ReportEnvelope,
};
use crate::tpm::{Hierarchy, KeyAttributes, TpmError, TpmState};
use crate::verifier::{TokenRejection, VerifyOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttackReport {
    pub attack: &'static str,
    pub attempts: usize,
    pub accepted: usize,
    pub honest_attempts: usize,
    pub honest_accepted: usize,
    /// Rejection reason name -> count, for the forged attempts.
    pub outcomes: BTreeMap<String, usize>,
}

impl AttackReport {
    fn new(kind: AttackKind) -> Self {
        AttackReport {
            attack: kind.name(),
            attempts: 0,
            accepted: 0,
            honest_attempts: 0,
            honest_accepted: 0,
            outcomes: BTreeMap::new(),
        }
    }

    fn forged(&mut self, outcome: Result<(), String>) {
        self.attempts += 1;
        match outcome {
            Ok(()) => self.accepted += 1,
            Err(reason) => *self.outcomes.entry(reason).or_default() += 1,
        }
    }

    fn honest(&mut self, accepted: bool) {
        self.honest_attempts += 1;
        self.honest_accepted += usize::from(accepted);
    }

    fn merge(&mut self, other: AttackReport) {
        self.attempts += other.attempts;
        self.accepted += other.accepted;
        self.honest_attempts += other.honest_attempts;
        self.honest_accepted += other.honest_accepted;
        for (k, v) in other.outcomes {
            *self.outcomes.entry(k).or_default() += v;
        }
    }

    /// No forged attempt accepted and every honest control accepted.
    pub fn passed(&self) -> bool {
        self.accepted == 0 && self.honest_accepted == self.honest_attempts
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

fn verdict(outcome: VerifyOutcome) -> Result<(), String> {
    match outcome {
        VerifyOutcome::Accepted(_) => Ok(()),
        VerifyOutcome::Rejected(r) => Err(format!("{r:?}")),
    }
}

fn protocol_verdict<T>(result: &Result<T, ProtocolError>) -> Result<(), String> {
    match result {
        Ok(_) => Ok(()),
        Err(ProtocolError::AttestationRejected(r)) => Err(format!("{r:?}")),
        Err(e) => Err(format!("{e:?}")),
    }
}

pub fn run_attack(cluster: &Cluster, kind: AttackKind, concurrency: usize) -> AttackReport {
    match kind {
        AttackKind::Splice => {
            let n = cluster.nodes.len().min(20);
            let mut r = AttackReport::new(kind);
            for d in Direction::BOTH {
                r.merge(splice(cluster, n, 5, d, concurrency));
            }
            r
        }
        AttackKind::SpoofId => spoof_id(cluster),
        AttackKind::Replay => replay(cluster),
        AttackKind::StaleToken => stale_token(cluster),
        AttackKind::SeedRollback => seed_rollback(cluster),
        AttackKind::ImageForge => image_forge(cluster),
    }
}

/// Every pairing of outer and inner evidence across `nodes` x `sessions`
/// sessions of one direction. The outer signer signs whatever inner bytes
/// it is handed, as a compromised host would arrange. Only pairs whose
/// inner and outer come from the same session are honest.
pub fn splice(cluster: &Cluster, nodes: usize, sessions: usize, direction: Direction, concurrency: usize) -> AttackReport {
    let kind = direction.kind();
    let selection = attested_selection();
    let verifier = &cluster.verifier;
    let requests: Vec<Vec<_>> = (0..nodes)
        .map(|a| {
            (0..sessions)
                .map(|_| {
                    verifier
                        .new_request(&cluster.nodes[a].platform.node_id(), POLICY_ID, kind, selection)
                        .expect("registered node")
                })
                .collect()
        })
        .collect();

    // Inner evidence for every session.
    let inner: Vec<Vec<Vec<u8>>> = map_indexed(nodes, concurrency, |b| {
        let p = &cluster.nodes[b].platform;
        requests[b]
            .iter()
            .map(|req| match direction {
                Direction::TpmTee => p.tee.report(&tpm_outer_report_data(&req.nonce), &[]).expect("report").to_bytes(),
                Direction::TeeTpm => {
                    let aik = p.aik().expect("initialized").0;
                    p.tpm.lock().quote(aik, selection, &req.nonce).expect("quote").to_bytes()
                }
            })
            .collect()
    });

    let per_outer = map_indexed(nodes, concurrency, |a| {
        let p = &cluster.nodes[a].platform;
        let mut r = AttackReport::new(AttackKind::Splice);
        for (i, req) in requests[a].iter().enumerate() {
            for (b, row) in inner.iter().enumerate() {
                for (j, evidence) in row.iter().enumerate() {
                    let envelope = match direction {
                        Direction::TpmTee => {
                            let aik = p.aik().expect("initialized").0;
                            let q = p.tpm.lock().cc_quote(aik, selection, &req.nonce, evidence).expect("cc quote");
                            ReportEnvelope::tpm_outer(&q)
                        }
                        Direction::TeeTpm => {
                            let rd = tee_outer_report_data(&req.nonce, evidence);
                            ReportEnvelope::tee_outer(&p.tee.report(&rd, evidence).expect("report"))
                        }
                    };
                    let outcome = verdict(verifier.verify_composite(&req.session, &envelope));
                    if (a, i) == (b, j) {
                        r.honest(outcome.is_ok());
                    } else {
                        r.forged(outcome);
                    }
                }
            }
        }
        r
    });
    let mut report = AttackReport::new(AttackKind::Splice);
    for r in per_outer {
        report.merge(r);
    }
    report
}

/// The inner report comes from the next node for the same nonce.
fn spoof_id(cluster: &Cluster) -> AttackReport {
    let mut r = AttackReport::new(AttackKind::SpoofId);
    let n = cluster.nodes.len();
    if n < 2 {
        return r;
    }
    for d in Direction::BOTH {
        for a in 0..n {
            let other = &cluster.nodes[(a + 1) % n].platform;
            r.honest(cluster.attest(a, d.kind(), None).result.is_ok());
            r.forged(protocol_verdict(&cluster.attest(a, d.kind(), Some(AttestFault::ForeignInner(other))).result));
        }
    }
    r
}

/// An envelope accepted in one session is submitted again, to the same
/// node's next session and to the next node's session.
fn replay(cluster: &Cluster) -> AttackReport {
    let mut r = AttackReport::new(AttackKind::Replay);
    let n = cluster.nodes.len();
    for d in Direction::BOTH {
        for a in 0..n {
            let honest = cluster.attest(a, d.kind(), None);
            r.honest(honest.result.is_ok());
            let Some(old) = honest.envelope else { continue };
            for target in [a, (a + 1) % n] {
                let out = cluster.attest(target, d.kind(), Some(AttestFault::ReplayEnvelope(&old)));
                r.forged(protocol_verdict(&out.result));
            }
        }
    }
    r
}

/// Tokens presented at and after their expiry time.
fn stale_token(cluster: &Cluster) -> AttackReport {
    let mut r = AttackReport::new(AttackKind::StaleToken);
    for d in Direction::BOTH {
        for a in 0..cluster.nodes.len() {
            let Ok(token) = cluster.attest(a, d.kind(), None).result else {
                r.honest(false);
                continue;
            };
            let claims = cluster.verifier.validate_token(&token);
            r.honest(claims.is_ok());
            let Ok(claims) = claims else { continue };
            for late in [claims.header.exp, claims.header.exp + 3600] {
                let outcome = match cluster.verifier.validate_token_at(&token, late) {
                    Ok(_) => Ok(()),
                    Err(TokenRejection::Expired) => Err("Expired".to_string()),
                    Err(e) => Err(format!("{e:?}")),
                };
                r.forged(outcome);
            }
        }
    }
    r
}

/// Sealed blobs and key blobs created before a storage seed rotation are
/// presented afterwards. Runs on scratch TPMs seeded per node.
fn seed_rollback(cluster: &Cluster) -> AttackReport {
    let mut r = AttackReport::new(AttackKind::SeedRollback);
    let selection = attested_selection();
    for a in 0..cluster.nodes.len() {
        let seed = cluster.nodes[a].master_secret();
        let Ok(mut tpm) = TpmState::manufacture(seed) else {
            r.honest(false);
            continue;
        };
        let policy = tpm.current_policy(selection);
        let sealed = tpm.seal(b"cvm disk key", policy);
        let srk = tpm.create_primary(Hierarchy::Storage).expect("storage primary");
        let srk_handle = tpm.load_key(&srk).expect("load srk");
        let child = tpm.create_key(srk_handle, KeyRole::Storage, KeyAttributes::STORAGE).expect("child");
        r.honest(tpm.unseal(&sealed).is_ok());

        tpm.rotate_seed(Hierarchy::Storage);
        let classify = |e: TpmError| match e {
            TpmError::SeedVersionMismatch { .. } => "SeedVersionMismatch".to_string(),
            other => format!("{other:?}"),
        };
        r.forged(tpm.unseal(&sealed).map(drop).map_err(classify));
        r.forged(tpm.load_key(&child).map(drop).map_err(classify));
        r.forged(tpm.load_key(&srk).map(drop).map_err(classify));

        let fresh = tpm.seal(b"cvm disk key", tpm.current_policy(selection));
        r.honest(tpm.unseal(&fresh).is_ok());
    }
    r
}

/// Stage-2 boots with manifests that were altered or signed by an
/// untrusted publisher.
fn image_forge(cluster: &Cluster) -> AttackReport {
    let mut r = AttackReport::new(AttackKind::ImageForge);
    let images = &cluster.images;
    let trusted = [*images.publisher.public()];
    let rogue = SigningKeyPair::from_seed(KeyRole::Publisher, cluster.nodes[0].master_secret());
    let original = &images.manifests[0];

    let mut altered_digest = original.clone();
    altered_digest.digest.0[0] ^= 1;
    let mut renamed = original.clone();
    renamed.image_id.push('x');
    let rogue_signed = ImageManifest::sign(&rogue, &original.image_id, b"guest rootfs v1 with implant");
    let mut rogue_claims_trusted = rogue_signed.clone();
    rogue_claims_trusted.publisher = trusted[0];

    let attempt = |manifests: Vec<ImageManifest>| -> Result<(), String> {
        let mut tpm = TpmState::manufacture(cluster.nodes[0].master_secret()).map_err(|e| format!("{e:?}"))?;
        let mut mb = crate::measurement::MeasuredBoot::new();
        mb.measure_stage1(&mut tpm, &images.host).map_err(|e| format!("{e:?}"))?;
        match mb.measure_stage2(&mut tpm, &manifests, &trusted, &images.tcb) {
            Ok(_) => Ok(()),
            Err(MeasurementError::UntrustedImage(_)) => Err("UntrustedImage".into()),
            Err(e) => Err(format!("{e:?}")),
        }
    };

    r.honest(attempt(images.manifests.clone()).is_ok());
    for forged in [altered_digest, renamed, rogue_signed, rogue_claims_trusted] {
        let mut set = images.manifests.clone();
        set[0] = forged.clone();
        r.forged(attempt(set));
        let mut appended = images.manifests.clone();
        appended.push(forged);
        r.forged(attempt(appended));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Clock;
    use crate::harness::cluster::EPOCH;

    #[test]
    fn small_cluster_resists_every_attack() {
        let c = Cluster::build_sequential(3, 21, Clock::virtual_at(EPOCH)).unwrap();
        for kind in AttackKind::ALL {
            let r = if kind == AttackKind::Splice {
                splice(&c, 3, 2, Direction::TpmTee, 1)
            } else {
                run_attack(&c, kind, 1)
            };
            assert!(r.attempts > 0, "{kind:?}");
            assert!(r.passed(), "{kind:?}: {r:?}");
        }
    }
}
