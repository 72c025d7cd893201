// SPDX-License-Identifier: Apache-2.0

//! Simulated SEV-SNP-style TEE: vendor key hierarchy (ARK, ASK, VCEK),
//! launch measurement and signed guest reports.

use std::sync::OnceLock;

use thiserror::Error;

use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{
    ecdh_two_phase, hash, sign, verify, Certificate, CryptoError, Digest32, KeyRole, PublicKey, Secret, SharedSecret,
    Signature, SigningKeyPair,
};

pub const MAX_EVIDENCE_SIZE: usize = 4096;
pub const REPORT_VERSION: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TeeError {
    #[error("embedded evidence of {0} bytes exceeds the maximum")]
    EvidenceTooLarge(usize),
    #[error("malformed report: {0}")]
    Malformed(#[from] CodecError),
}

/// The four launch components, measured in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TeeTcb {
    pub ovmf: Digest32,
    pub guest_kernel: Digest32,
    pub guest_initrd: Digest32,
    pub kernel_cmdline: Digest32,
}

impl TeeTcb {
    /// Digests of the given component images.
    pub fn from_images(ovmf: &[u8], kernel: &[u8], initrd: &[u8], cmdline: &[u8]) -> Self {
        TeeTcb { ovmf: hash(ovmf), guest_kernel: hash(kernel), guest_initrd: hash(initrd), kernel_cmdline: hash(cmdline) }
    }

    pub fn components(&self) -> [Digest32; 4] {
        [self.ovmf, self.guest_kernel, self.guest_initrd, self.kernel_cmdline]
    }
}

impl Canonical for TeeTcb {
    fn encode(&self, enc: &mut Encoder) {
        for d in self.components() {
            enc.value(&d);
        }
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(TeeTcb { ovmf: dec.value()?, guest_kernel: dec.value()?, guest_initrd: dec.value()?, kernel_cmdline: dec.value()? })
    }
}

/// `hash(ovmf || kernel || initrd || cmdline)`.
pub fn launch_measure(tcb: &TeeTcb) -> Digest32 {
    let mut buf = [0u8; 128];
    for (i, d) in tcb.components().iter().enumerate() {
        buf[i * 32..(i + 1) * 32].copy_from_slice(d.as_bytes());
    }
    hash(&buf)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertChain {
    pub ark: Certificate,
    pub ask: Certificate,
    pub vcek: Certificate,
}

impl CertChain {
    /// Every link verifies, roles match position, and the root is `trusted_ark`.
    pub fn verify(&self, trusted_ark: &PublicKey) -> bool {
        self.ark.role == KeyRole::Ark
            && self.ask.role == KeyRole::Ask
            && self.vcek.role == KeyRole::Vcek
            && self.ark.subject == *trusted_ark
            && self.ark.verify(&self.ark.subject)
            && self.ask.verify(&self.ark.subject)
            && self.vcek.verify(&self.ask.subject)
    }

    pub fn vcek_public(&self) -> &PublicKey {
        &self.vcek.subject
    }
}

impl Canonical for CertChain {
    fn encode(&self, enc: &mut Encoder) {
        enc.value(&self.ark).value(&self.ask).value(&self.vcek);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(CertChain { ark: dec.value()?, ask: dec.value()?, vcek: dec.value()? })
    }
}

/// Silicon vendor: owns the ARK and ASK and derives per-chip VCEKs.
#[derive(Debug)]
pub struct TeeVendor {
    secret: Secret,
    ark: SigningKeyPair,
    ask: SigningKeyPair,
    ark_cert: Certificate,
    ask_cert: Certificate,
}

impl TeeVendor {
    pub fn new(secret: Secret) -> Self {
        let ark = SigningKeyPair::derive(KeyRole::Ark, &secret, "ARK", b"");
        let ask = SigningKeyPair::derive(KeyRole::Ask, &secret, "ASK", b"");
        let ark_cert = Certificate::self_signed(&ark, 1);
        let ask_cert = Certificate::issue(&ark, KeyRole::Ask, ask.public(), 2);
        TeeVendor { secret, ark, ask, ark_cert, ask_cert }
    }

    pub fn ark_public(&self) -> &PublicKey {
        self.ark.public()
    }

    /// VCEK for `(chip_id, tcb_version)` and its chain.
    pub fn derive_vcek(&self, chip_id: &[u8; 32], tcb_version: u64) -> (SigningKeyPair, CertChain) {
        let mut ctx = chip_id.to_vec();
        ctx.extend_from_slice(&tcb_version.to_le_bytes());
        let vcek = SigningKeyPair::derive(KeyRole::Vcek, &self.secret, "VCEK", &ctx);
        let serial = u64::from_le_bytes(hash(&ctx).0[..8].try_into().expect("8 bytes"));
        let chain = CertChain {
            ark: self.ark_cert.clone(),
            ask: self.ask_cert.clone(),
            vcek: Certificate::issue(&self.ask, KeyRole::Vcek, vcek.public(), serial),
        };
        (vcek, chain)
    }
}

/// Built-in vendor the simulated cluster trusts.
pub fn tee_vendor() -> &'static TeeVendor {
    static VENDOR: OnceLock<TeeVendor> = OnceLock::new();
    VENDOR.get_or_init(|| TeeVendor::new(Secret::new(b"simulated-tee-vendor-root-key-v1".to_vec()).expect("valid length")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TeeReport {
    pub version: u32,
    pub chip_id: [u8; 32],
    pub tcb_version: u64,
    pub launch_measurement: Digest32,
    pub report_data: [u8; 64],
    pub embedded_evidence: Vec<u8>,
    pub signature: Signature,
}

impl TeeReport {
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u32(self.version)
            .fixed(&self.chip_id)
            .u64(self.tcb_version)
            .value(&self.launch_measurement)
            .fixed(&self.report_data)
            .u16(self.embedded_evidence.len() as u16)
            .fixed(&self.embedded_evidence);
    }

    pub fn verify_signature(&self, vcek: &PublicKey) -> bool {
        self.embedded_evidence.len() <= MAX_EVIDENCE_SIZE && verify(vcek, &self.signed_bytes(), &self.signature)
    }
}

impl Canonical for TeeReport {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.value(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let version = dec.u32()?;
        let chip_id = dec.fixed()?;
        let tcb_version = dec.u64()?;
        let launch_measurement = dec.value()?;
        let report_data = dec.fixed()?;
        let len = dec.u16()? as usize;
        if len > MAX_EVIDENCE_SIZE {
            return Err(CodecError::Invalid("evidence size"));
        }
        Ok(TeeReport {
            version,
            chip_id,
            tcb_version,
            launch_measurement,
            report_data,
            embedded_evidence: dec.raw(len)?,
            signature: dec.value()?,
        })
    }
}

/// Signs a guest report with `vcek`.
pub fn guest_report(
    vcek: &SigningKeyPair,
    chip_id: &[u8; 32],
    tcb_version: u64,
    tcb: &TeeTcb,
    report_data: &[u8; 64],
    embedded_evidence: &[u8],
) -> Result<TeeReport, TeeError> {
    if embedded_evidence.len() > MAX_EVIDENCE_SIZE {
        return Err(TeeError::EvidenceTooLarge(embedded_evidence.len()));
    }
    let mut report = TeeReport {
        version: REPORT_VERSION,
        chip_id: *chip_id,
        tcb_version,
        launch_measurement: launch_measure(tcb),
        report_data: *report_data,
        embedded_evidence: embedded_evidence.to_vec(),
        // Overwritten below once the body is fixed.
        signature: Signature::from_bytes(&[1; 64]).expect("in-range scalars"),
    };
    report.signature = sign(vcek, &report.signed_bytes());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeeVerifyOutcome {
    Ok,
    ChainInvalid,
    SignatureInvalid,
    MeasurementMismatch,
    NonceMismatch,
}

/// First failing check, in the order: report data, chain, signature,
/// measurement.
pub fn verify_report(
    report: &TeeReport,
    chain: &CertChain,
    trusted_ark: &PublicKey,
    expected_measurement: &Digest32,
    expected_report_data: &[u8; 64],
) -> TeeVerifyOutcome {
    if report.report_data != *expected_report_data {
        TeeVerifyOutcome::NonceMismatch
    } else if !chain.verify(trusted_ark) {
        TeeVerifyOutcome::ChainInvalid
    } else if !report.verify_signature(chain.vcek_public()) {
        TeeVerifyOutcome::SignatureInvalid
    } else if report.launch_measurement != *expected_measurement {
        TeeVerifyOutcome::MeasurementMismatch
    } else {
        TeeVerifyOutcome::Ok
    }
}

/// One TEE-capable host: chip identity, VCEK, PEK and the guest's launch TCB.
#[derive(Debug)]
pub struct TeeNode {
    pub chip_id: [u8; 32],
    pub tcb_version: u64,
    pub tcb: TeeTcb,
    vcek: SigningKeyPair,
    chain: CertChain,
    /// Platform endorsement key: the TEE's static key for channel agreement.
    pek: SigningKeyPair,
}

impl TeeNode {
    pub fn new(vendor: &TeeVendor, chip_id: [u8; 32], tcb_version: u64, tcb: TeeTcb) -> Self {
        let (vcek, chain) = vendor.derive_vcek(&chip_id, tcb_version);
        let pek = SigningKeyPair::derive(KeyRole::Pek, &vendor.secret, "PEK", &chip_id);
        TeeNode { chip_id, tcb_version, tcb, vcek, chain, pek }
    }

    pub fn vcek_public(&self) -> &PublicKey {
        self.vcek.public()
    }

    pub fn pek_public(&self) -> &PublicKey {
        self.pek.public()
    }

    pub fn chain(&self) -> &CertChain {
        &self.chain
    }

    pub fn launch_measurement(&self) -> Digest32 {
        launch_measure(&self.tcb)
    }

    pub fn report(&self, report_data: &[u8; 64], embedded_evidence: &[u8]) -> Result<TeeReport, TeeError> {
        guest_report(&self.vcek, &self.chip_id, self.tcb_version, &self.tcb, report_data, embedded_evidence)
    }

    /// Two-phase key agreement with the PEK as the static key.
    pub fn key_agreement(
        &self,
        ephemeral: &SigningKeyPair,
        peer_static: &[u8],
        peer_ephemeral: &[u8],
    ) -> Result<SharedSecret, CryptoError> {
        ecdh_two_phase(&self.pek, ephemeral, peer_static, peer_ephemeral)
    }

    /// Signs a message with the VCEK (used by the TEE when it originates a
    /// protocol message of its own).
    pub fn sign(&self, msg: &[u8]) -> Signature {
        sign(&self.vcek, msg)
    }
}
