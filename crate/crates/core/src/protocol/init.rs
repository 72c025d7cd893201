// SPDX-License-Identifier: Apache-2.0

//! Initialization: the OCA certifies the node's VCEK and, after a
//! credential challenge, its AIK; the verifier learns both certificates.

use std::cell::RefCell;

use super::checker::{LABEL_CERT_AIK, LABEL_CERT_VCEK, LABEL_CHAIN_MATCH, LABEL_NONCE_MATCH};
use super::runner::{Io, Role, Runner};
use super::wire::{Payload, WireMessage};
use super::{Platform, Principal, ProtocolError, Trace};
use crate::crypto::{hash, hash_parts, Certificate, Digest32, KeyRole, PublicKey, RandomSource, Secret};
use crate::oca::{NodeId, OcaError, OwnerCa};
use crate::tpm::KeyAttributes;
use crate::verifier::{NodeRegistration, VerifierService};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitFault {
    /// The TPM answers the credential challenge with a random value.
    WrongNonce,
    /// The TPM encrypts to the OCA under a random key instead of K_PC.
    SwapKpc,
}

#[derive(Debug, Clone)]
pub struct InitCerts {
    pub vcek_cert: Certificate,
    pub aik_cert: Certificate,
    /// What the verifier received from the OCA: (cert_VCEK, VCEK_pub).
    pub cert_tee: (Certificate, PublicKey),
}

#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub trace: Trace,
    pub result: Result<InitCerts, ProtocolError>,
}

fn init_session(node: &NodeId) -> Digest32 {
    hash_parts(&[b"INIT", node.0.as_bytes()])
}

struct TeeInit<'a> {
    platform: &'a Platform,
    session: Digest32,
    done: bool,
}

impl Role for TeeInit<'_> {
    fn principal(&self) -> Principal {
        Principal::tee(self.platform.index)
    }

    fn start(&mut self, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        let tee = &self.platform.tee;
        io.new_value("VCEK", tee.vcek_public().name());
        let payload = Payload::VcekInfo {
            vcek: *tee.vcek_public(),
            chain: tee.chain().clone(),
            chip_id: tee.chip_id,
            tcb_version: tee.tcb_version,
        };
        io.send(Principal::OCA, self.session, &payload)
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        match io.open(msg)? {
            Payload::CertVcekInfo { cert } => {
                self.platform.store_vcek_cert(cert);
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

struct TpmInit<'a> {
    platform: &'a Platform,
    session: Digest32,
    fault: Option<InitFault>,
    rng: RandomSource,
    aik: Option<(crate::tpm::Handle, PublicKey)>,
    done: bool,
}

impl Role for TpmInit<'_> {
    fn principal(&self) -> Principal {
        Principal::tpm(self.platform.index)
    }

    fn start(&mut self, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        let (ek, ek_cert, aik) = {
            let mut tpm = self.platform.tpm.lock();
            let ek_handle = tpm.ek_handle();
            let blob = tpm.create_key(ek_handle, KeyRole::Aik, KeyAttributes::ATTESTATION)?;
            let handle = tpm.load_key(&blob)?;
            (tpm.ek_public(), tpm.ek_certificate().clone(), (handle, blob.public))
        };
        io.new_value("EK", ek.name());
        io.new_value("AIK", aik.1.name());
        self.aik = Some(aik);
        self.platform.set_aik(aik.0, aik.1);
        io.send(Principal::OCA, self.session, &Payload::KeyInfo { aik: aik.1, ek, ek_cert })
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        let (handle, aik) = self.aik.expect("created at start");
        match io.open(msg)? {
            Payload::Challenge { session, challenge } => {
                let n_prime = if self.fault == Some(InitFault::WrongNonce) {
                    self.rng.secret(32)
                } else {
                    self.platform.tpm.lock().activate_credential(handle, &challenge)?
                };
                io.send(Principal::OCA, self.session, &Payload::NonceInfo { session, n_prime })
            }
            Payload::CertAikInfo { cert } => {
                self.platform.store_aik_cert(cert.clone());
                self.done = true;
                io.send(Principal::VERIFIER, self.session, &Payload::KeyCertInfo { aik, cert })
            }
            _ => Err(io.unexpected(msg)),
        }
    }

    fn finished(&self) -> bool {
        self.done
    }
}

struct OcaInit<'a> {
    oca: &'a OwnerCa,
    node: u32,
    session: Digest32,
    node_id: Option<NodeId>,
    challenge: Option<(Digest32, PublicKey)>,
    out: &'a RefCell<Partial>,
    done: bool,
}

impl Role for OcaInit<'_> {
    fn principal(&self) -> Principal {
        Principal::OCA
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        match io.open(msg)? {
            Payload::VcekInfo { vcek, chain, chip_id, tcb_version } => {
                let chained = if chain.verify(self.oca.trusted_ark()) { chain.vcek_public().name() } else { Digest32::ZERO };
                io.compare(LABEL_CHAIN_MATCH, vcek.name(), chained);
                let cert = self.oca.register_tee(&vcek, &chain, chip_id, tcb_version)?;
                io.sign(LABEL_CERT_VCEK, cert.digest(), Some(vcek.name()));
                self.node_id = Some(NodeId::from_vcek(&vcek));
                io.send(Principal::tee(self.node), self.session, &Payload::CertVcekInfo { cert: cert.clone() })?;
                io.send(Principal::VERIFIER, self.session, &Payload::CertTeeInfo { cert, vcek, chip_id, tcb_version })
            }
            Payload::KeyInfo { aik, ek, ek_cert } => {
                let node_id = self.node_id.ok_or(ProtocolError::Oca(OcaError::NodeUnknown))?;
                let (session, challenge) = self.oca.aik_challenge(&node_id, &aik, &ek, &ek_cert)?;
                io.new_value("nonce", session);
                self.challenge = Some((session, aik));
                io.send(Principal::tpm(self.node), self.session, &Payload::Challenge { session, challenge })
            }
            Payload::NonceInfo { session, n_prime } => {
                let (expected_session, aik) = self.challenge.ok_or_else(|| io.unexpected(msg))?;
                let expected = self.oca.expected_answer_digest(&expected_session).unwrap_or(Digest32::ZERO);
                let matched = io.compare(LABEL_NONCE_MATCH, expected, hash(n_prime.expose()));
                if session != expected_session {
                    return Err(ProtocolError::ChallengeFailed);
                }
                let cert = self.oca.aik_answer(&session, &n_prime).map_err(|e| match e {
                    OcaError::ChallengeFailed => ProtocolError::ChallengeFailed,
                    other => other.into(),
                })?;
                debug_assert!(matched);
                io.sign(LABEL_CERT_AIK, cert.digest(), Some(aik.name()));
                self.out.borrow_mut().aik_cert = Some(cert.clone());
                self.done = true;
                io.send(Principal::tpm(self.node), self.session, &Payload::CertAikInfo { cert })
            }
            _ => Err(io.unexpected(msg)),
        }
    }

    fn finished(&self) -> bool {
        self.done
    }
}

#[derive(Default)]
struct Partial {
    cert_tee: Option<(Certificate, PublicKey, [u8; 32], u64)>,
    aik_cert: Option<Certificate>,
}

struct VerifierInit<'a> {
    verifier: &'a VerifierService,
    oca_public: PublicKey,
    out: &'a RefCell<Partial>,
    key_cert: Option<(PublicKey, Certificate)>,
    done: bool,
}

impl VerifierInit<'_> {
    fn try_register(&mut self) -> Result<(), ProtocolError> {
        let out = self.out.borrow();
        let (Some((vcek_cert, vcek, chip_id, tcb_version)), Some((aik, aik_cert))) = (&out.cert_tee, &self.key_cert) else {
            return Ok(());
        };
        self.verifier.register_node(NodeRegistration {
            node_id: NodeId::from_vcek(vcek),
            chip_id: *chip_id,
            tcb_version: *tcb_version,
            vcek: *vcek,
            vcek_cert: vcek_cert.clone(),
            aik: *aik,
            aik_cert: aik_cert.clone(),
        })?;
        self.done = true;
        Ok(())
    }
}

impl Role for VerifierInit<'_> {
    fn principal(&self) -> Principal {
        Principal::VERIFIER
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError> {
        match io.open(msg)? {
            Payload::CertTeeInfo { cert, vcek, chip_id, tcb_version } => {
                if !cert.verify(&self.oca_public) || cert.subject != vcek {
                    return Err(crate::verifier::VerifierError::CertificateInvalid.into());
                }
                self.out.borrow_mut().cert_tee = Some((cert, vcek, chip_id, tcb_version));
                self.try_register()
            }
            Payload::KeyCertInfo { aik, cert } => {
                if !cert.verify(&self.oca_public) || cert.subject != aik {
                    return Err(crate::verifier::VerifierError::CertificateInvalid.into());
                }
                self.key_cert = Some((aik, cert));
                self.try_register()
            }
            _ => Err(io.unexpected(msg)),
        }
    }

    fn finished(&self) -> bool {
        self.done
    }
}

/// Runs the four initialization roles for `platform`. `k_cv` is the
/// OCA-verifier channel key.
pub fn run_initialization(
    platform: &Platform,
    oca: &OwnerCa,
    verifier: &VerifierService,
    k_cv: &Secret,
    fault: Option<InitFault>,
    rng: &RandomSource,
) -> InitOutcome {
    let node_id = platform.node_id();
    let session = init_session(&node_id);
    let (e, p) = (Principal::tee(platform.index), Principal::tpm(platform.index));
    let out = RefCell::new(Partial::default());

    let mut runner = Runner::new();
    runner.add_role(Box::new(TeeInit { platform, session, done: false }));
    runner.add_role(Box::new(TpmInit {
        platform,
        session,
        fault,
        rng: rng.fork(&format!("init-fault/{}", platform.index)),
        aik: None,
        done: false,
    }));
    runner.add_role(Box::new(OcaInit {
        oca,
        node: platform.index,
        session,
        node_id: None,
        challenge: None,
        out: &out,
        done: false,
    }));
    runner.add_role(Box::new(VerifierInit {
        verifier,
        oca_public: *oca.public(),
        out: &out,
        key_cert: None,
        done: false,
    }));
    runner.add_channel(e, Principal::OCA, &platform.keys.k_ec);
    runner.add_channel(p, Principal::OCA, &platform.keys.k_pc);
    runner.add_channel(p, Principal::VERIFIER, &platform.keys.k_pv);
    runner.add_channel(Principal::OCA, Principal::VERIFIER, k_cv);
    if fault == Some(InitFault::SwapKpc) {
        runner.set_key(p, Principal::OCA, rng.fork("swapped-kpc").secret(32));
    }

    let run = runner.run();
    let trace = runner.into_trace();
    let result = run.and_then(|()| {
        let certs = platform.certs();
        let out = out.borrow();
        let (cert, vcek, _, _) = out.cert_tee.clone().ok_or(ProtocolError::Incomplete(Principal::VERIFIER))?;
        Ok(InitCerts {
            vcek_cert: certs.vcek.ok_or(ProtocolError::Incomplete(e))?,
            aik_cert: certs.aik.ok_or(ProtocolError::Incomplete(p))?,
            cert_tee: (cert, vcek),
        })
    });
    InitOutcome { trace, result }
}
