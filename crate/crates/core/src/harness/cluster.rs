// SPDX-License-Identifier: Apache-2.0

//! Deterministic construction of an OCA, a verifier and a set of booted,
//! initialized and registered composite nodes.

use std::collections::{BTreeMap, BTreeSet};

use super::exec::{map_indexed, map_sequential};
use super::HarnessError;
use crate::clock::Clock;
use crate::crypto::{hash_parts, Certificate, KeyRole, RandomSource, Secret, SigningKeyPair};
use crate::measurement::{ImageManifest, MeasuredBoot, MeasurementEvent};
use crate::oca::{OcaRequest, OcaResponse, OwnerCa, TrustBaseline};
use crate::protocol::{
    run_initialization, AttestFault, AttestOutcome, Payload, Platform, Principal, ProtocolError, ReportKind, StaticParty,
    Trace, WireMessage,
};
use crate::tee::{launch_measure, tee_vendor, TeeNode, TeeTcb};
use crate::tpm::{PcrSelection, TpmState};
use crate::verifier::{Policy, VerifierService};

pub const POLICY_ID: &str = "default";
pub const TCB_VERSION: u64 = 3;
pub const TOKEN_LIFETIME_SECS: u64 = 300;
/// Virtual time every seeded cluster starts at.
pub const EPOCH: u64 = 1_700_000_000;

/// Images every node boots. Shared so one policy covers the cluster.
pub struct BootImages {
    pub host: Vec<(&'static str, &'static [u8])>,
    pub tcb: TeeTcb,
    pub publisher: SigningKeyPair,
    pub manifests: Vec<ImageManifest>,
    pub workloads: Vec<(&'static str, &'static [u8])>,
    pub runtime_baseline: BTreeMap<String, crate::crypto::Digest32>,
}

impl BootImages {
    pub fn standard(root: &Secret) -> Self {
        let publisher = SigningKeyPair::derive(KeyRole::Publisher, root, "IMAGE-PUBLISHER", b"");
        let manifests = vec![
            ImageManifest::sign(&publisher, "guest-rootfs", b"guest rootfs v1"),
            ImageManifest::sign(&publisher, "attestation-agent", b"attestation agent v1"),
        ];
        let workloads: Vec<(&'static str, &'static [u8])> = vec![("agent", b"agent v1"), ("service", b"service v1")];
        let runtime_baseline = workloads.iter().map(|(n, b)| (n.to_string(), crate::crypto::hash(b))).collect();
        BootImages {
            host: vec![("hypervisor", b"kvm 6.8"), ("host-kernel", b"linux 6.8"), ("host-services", b"qemu 8.2")],
            tcb: TeeTcb::from_images(b"ovmf edk2", b"guest kernel 6.8", b"guest initrd", b"console=ttyS0"),
            publisher,
            manifests,
            workloads,
            runtime_baseline,
        }
    }

    /// Runs all three measurement stages on `tpm`.
    pub fn boot(&self, tpm: &mut TpmState) -> Result<MeasuredBoot, HarnessError> {
        let mut mb = MeasuredBoot::new();
        mb.measure_stage1(tpm, &self.host)?;
        mb.measure_stage2(tpm, &self.manifests, &[*self.publisher.public()], &self.tcb)?;
        mb.measure_stage3(tpm, &self.workloads, &self.runtime_baseline)?;
        Ok(mb)
    }
}

/// PCRs covered by attestation: the host, launch and runtime bands.
pub fn attested_selection() -> PcrSelection {
    PcrSelection::range(0..12)
}

pub struct Node {
    pub platform: Platform,
    pub boot_log: Vec<MeasurementEvent>,
    pub identity_cert: Certificate,
    pub init_trace: Trace,
    master_secret: Secret,
}

impl Node {
    pub fn master_secret(&self) -> &Secret {
        &self.master_secret
    }
}

pub struct Cluster {
    pub seed: u64,
    pub clock: Clock,
    pub oca: OwnerCa,
    pub verifier: VerifierService,
    pub images: BootImages,
    pub nodes: Vec<Node>,
    pub policy: Policy,
    k_cv: Secret,
    oca_static: SigningKeyPair,
    verifier_static: SigningKeyPair,
    rng: RandomSource,
}

impl std::fmt::Debug for Cluster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cluster").field("seed", &self.seed).field("nodes", &self.nodes.len()).finish_non_exhaustive()
    }
}

impl Cluster {
    /// Builds `n` nodes with up to `concurrency` workers. The result does
    /// not depend on `concurrency`.
    pub fn build(n: usize, seed: u64, clock: Clock, concurrency: usize) -> Result<Self, HarnessError> {
        let mut cluster = Self::empty(seed, clock)?;
        cluster.add_nodes(n, concurrency)?;
        Ok(cluster)
    }

    /// Same as [`build`](Self::build) with a plain loop.
    pub fn build_sequential(n: usize, seed: u64, clock: Clock) -> Result<Self, HarnessError> {
        let mut cluster = Self::empty(seed, clock)?;
        let nodes = map_sequential(n, |i| cluster.make_node(i as u32));
        cluster.nodes = nodes.into_iter().collect::<Result<_, _>>()?;
        Ok(cluster)
    }

    fn empty(seed: u64, clock: Clock) -> Result<Self, HarnessError> {
        let rng = RandomSource::seeded(seed);
        let root = rng.fork("root").secret(32);
        let oca = OwnerCa::new(&root, *tee_vendor().ark_public(), rng.fork("oca"), clock.clone());
        let verifier = VerifierService::new(&root, *oca.public(), oca.revocations(), rng.fork("verifier"), clock.clone());
        let oca_static = SigningKeyPair::derive(KeyRole::Oca, &root, "OCA-CHANNEL", b"");
        let verifier_static = SigningKeyPair::derive(KeyRole::Verifier, &root, "VERIFIER-CHANNEL", b"");
        let k_cv = crate::protocol::agree_channel(
            &StaticParty::Key(&oca_static),
            &StaticParty::Key(&verifier_static),
            &rng.fork("K_CV"),
        )?;
        let images = BootImages::standard(&root);

        // Reference boot on a scratch TPM gives the expected registers.
        let mut reference = TpmState::manufacture(&rng.fork("reference-tpm").secret(32))?;
        images.boot(&mut reference)?;
        let selection = attested_selection();
        let launch = launch_measure(&images.tcb);
        let composite = reference.pcr_composite(selection);
        oca.set_default_baseline(TrustBaseline { launch_measurement: launch, pcr_selection: selection, pcr_composite: composite });
        let policy = Policy {
            id: POLICY_ID.into(),
            launch_measurement: launch,
            pcr_baselines: BTreeMap::from([(selection, composite)]),
            min_tcb: TCB_VERSION,
            allowed: BTreeSet::from(ReportKind::ALL),
            lifetime_secs: TOKEN_LIFETIME_SECS,
        };
        verifier.set_policy(policy.clone())?;

        Ok(Cluster {
            seed,
            clock,
            oca,
            verifier,
            images,
            nodes: Vec::new(),
            policy,
            k_cv,
            oca_static,
            verifier_static,
            rng,
        })
    }

    /// Appends `n` nodes, indexed after the existing ones.
    pub fn add_nodes(&mut self, n: usize, concurrency: usize) -> Result<(), HarnessError> {
        let start = self.nodes.len() as u32;
        let built = map_indexed(n, concurrency, |i| self.make_node(start + i as u32));
        for node in built {
            self.nodes.push(node?);
        }
        Ok(())
    }

    /// A booted platform with its channels established but not yet
    /// initialized with the OCA or the verifier.
    pub fn new_platform(&self, index: u32) -> Result<(Platform, MeasuredBoot), HarnessError> {
        let rng = self.rng.fork(&format!("node/{index}"));
        let chip_id = rng.fork("chip-id").bytes32();
        let tee = TeeNode::new(tee_vendor(), chip_id, TCB_VERSION, self.images.tcb);
        let mut tpm = TpmState::manufacture(&rng.fork("ep-seed").secret(32))?;
        let boot = self.images.boot(&mut tpm)?;
        let platform = Platform::new(index, tee, tpm, &self.oca_static, &self.verifier_static, &rng.fork("channels"))?;
        Ok((platform, boot))
    }

    /// OCA-verifier channel key.
    pub fn k_cv(&self) -> &Secret {
        &self.k_cv
    }

    /// Randomness for initialization runs of node `index`.
    pub fn init_rng(&self, index: u32) -> RandomSource {
        self.rng.fork(&format!("node/{index}")).fork("init")
    }

    fn make_node(&self, index: u32) -> Result<Node, HarnessError> {
        let rng = self.rng.fork(&format!("node/{index}"));
        let (platform, boot) = self.new_platform(index)?;
        let init = run_initialization(&platform, &self.oca, &self.verifier, &self.k_cv, None, &self.init_rng(index));
        init.result?;

        let identity = SigningKeyPair::from_seed(KeyRole::Identity, &rng.fork("identity").secret(32));
        let (identity_cert, master_secret) = self.register_over_channel(&platform, &identity)?;
        Ok(Node { platform, boot_log: boot.log().to_vec(), identity_cert, init_trace: init.trace, master_secret })
    }

    /// RegisterNode through the OCA endpoint, carried over K_EC.
    fn register_over_channel(
        &self,
        platform: &Platform,
        identity: &SigningKeyPair,
    ) -> Result<(Certificate, Secret), HarnessError> {
        let node_id = platform.node_id();
        let report = platform.tee.report(&OwnerCa::registration_binding(identity.public()), &[])?;
        let tee = Principal::tee(platform.index);
        let session = hash_parts(&[b"REGISTER", node_id.0.as_bytes()]);
        let key = &platform.keys.k_ec;
        let call = Payload::OcaCall(OcaRequest::RegisterNode { node_id, report, identity: *identity.public() });
        let sealed = WireMessage::seal(key, tee, Principal::OCA, session, &call).map_err(|_| ProtocolError::KeyAgreement)?;
        let Ok(Payload::OcaCall(request)) = sealed.open(key) else {
            return Err(ProtocolError::AuthFailure { principal: Principal::OCA, step: 0 }.into());
        };
        let reply = Payload::OcaReply(self.oca.handle(&request));
        let sealed = WireMessage::seal(key, Principal::OCA, tee, session, &reply).map_err(|_| ProtocolError::KeyAgreement)?;
        match sealed.open(key) {
            Ok(Payload::OcaReply(OcaResponse::Registered { identity_cert, master_secret })) => Ok((identity_cert, master_secret)),
            Ok(Payload::OcaReply(OcaResponse::Error(e))) => Err(HarnessError::Registration(e)),
            _ => Err(ProtocolError::AuthFailure { principal: tee, step: 0 }.into()),
        }
    }

    pub fn node(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    /// One attestation run of node `index`.
    pub fn attest(&self, index: usize, kind: ReportKind, fault: Option<AttestFault<'_>>) -> AttestOutcome {
        crate::protocol::run_attest(&self.nodes[index].platform, &self.verifier, POLICY_ID, kind, attested_selection(), fault)
    }

    /// Concatenated initialization traces in node order.
    pub fn init_trace(&self) -> Trace {
        let mut t = Trace::new();
        for n in &self.nodes {
            t.extend(&n.init_trace);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::check_trace;

    #[test]
    fn nodes_boot_to_policy_and_register() {
        let c = Cluster::build_sequential(2, 11, Clock::virtual_at(EPOCH)).unwrap();
        for node in &c.nodes {
            let tpm = node.platform.tpm.lock();
            assert_eq!(tpm.pcr_composite(attested_selection()), c.policy.pcr_baselines[&attested_selection()]);
            assert!(crate::measurement::log_matches(&node.boot_log, tpm.pcrs()));
            assert!(node.identity_cert.verify(c.oca.public()));
            assert_eq!(node.master_secret().len(), 32);
            assert!(c.verifier.node(&node.platform.node_id()).is_some());
        }
        assert!(check_trace(&c.init_trace()).all_pass());
    }

    #[test]
    fn build_is_independent_of_worker_count() {
        let a = Cluster::build(3, 5, Clock::virtual_at(EPOCH), 3).unwrap();
        let b = Cluster::build_sequential(3, 5, Clock::virtual_at(EPOCH)).unwrap();
        assert_eq!(a.init_trace().digest(), b.init_trace().digest());
    }
}
