// SPDX-License-Identifier: Apache-2.0

//! Three-stage measured boot: host components, CVM launch, runtime
//! workloads. Every extend is logged so the bank can be rebuilt from the log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::crypto::{hash, sign, verify, Digest32, PublicKey, Signature, SigningKeyPair};
use crate::tee::{launch_measure, TeeTcb};
use crate::tpm::{PcrBank, PcrSelection, TpmError, TpmState};

pub const STAGE1_BAND: std::ops::Range<usize> = 0..4;
pub const STAGE2_BAND: std::ops::Range<usize> = 4..8;
pub const STAGE3_BAND: std::ops::Range<usize> = 8..12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeasurementError {
    #[error("stage {requested} cannot run after stage {current}")]
    StageOrderViolation { current: u8, requested: u8 },
    #[error("image {0:?} is not signed by a trusted publisher")]
    UntrustedImage(String),
    #[error("log gap: expected sequence {expected}, found {found}")]
    LogGap { expected: u64, found: u64 },
    #[error("component name {0:?} contains a tab or newline")]
    InvalidName(String),
    #[error("malformed log line {0}")]
    MalformedLog(usize),
    #[error(transparent)]
    Tpm(#[from] TpmError),
    #[error("malformed manifest: {0}")]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Host = 1,
    Launch = 2,
    Runtime = 3,
}

impl Stage {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Stage::Host),
            2 => Some(Stage::Launch),
            3 => Some(Stage::Runtime),
            _ => None,
        }
    }

    /// Stages 1-2 are extended by the TPM; stage 3 checks run in the TEE.
    pub fn signer(self) -> Signer {
        match self {
            Stage::Host | Stage::Launch => Signer::Tpm,
            Stage::Runtime => Signer::Tee,
        }
    }

    pub fn band(self) -> PcrSelection {
        PcrSelection::range(match self {
            Stage::Host => STAGE1_BAND,
            Stage::Launch => STAGE2_BAND,
            Stage::Runtime => STAGE3_BAND,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signer {
    Tpm,
    Tee,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementEvent {
    pub seq: u64,
    pub stage: Stage,
    pub name: String,
    pub digest: Digest32,
    pub pcr: usize,
}

impl MeasurementEvent {
    pub fn signer(&self) -> Signer {
        self.stage.signer()
    }
}

/// Publisher-signed statement that `image_id` has content `digest`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageManifest {
    pub image_id: String,
    pub digest: Digest32,
    pub publisher: PublicKey,
    pub signature: Signature,
}

const TLV_IMAGE_ID: u16 = 1;
const TLV_DIGEST: u16 = 2;
const TLV_PUBLISHER: u16 = 3;
const TLV_SIGNATURE: u16 = 4;

impl ImageManifest {
    fn signed_bytes(image_id: &str, digest: &Digest32) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(b"MANIFEST").str(image_id).value(digest);
        enc.finish()
    }

    pub fn sign(publisher: &SigningKeyPair, image_id: &str, content: &[u8]) -> Self {
        let digest = hash(content);
        ImageManifest {
            image_id: image_id.to_string(),
            digest,
            publisher: *publisher.public(),
            signature: sign(publisher, &Self::signed_bytes(image_id, &digest)),
        }
    }

    pub fn verify(&self) -> bool {
        verify(&self.publisher, &Self::signed_bytes(&self.image_id, &self.digest), &self.signature)
    }

    /// TLV file form: `u16 tag || u32 length || value` per field.
    pub fn to_tlv(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        let fields: [(u16, Vec<u8>); 4] = [
            (TLV_IMAGE_ID, self.image_id.as_bytes().to_vec()),
            (TLV_DIGEST, self.digest.0.to_vec()),
            (TLV_PUBLISHER, self.publisher.to_sec1().to_vec()),
            (TLV_SIGNATURE, self.signature.as_bytes().to_vec()),
        ];
        for (tag, value) in &fields {
            enc.u16(*tag).bytes(value);
        }
        enc.finish()
    }

    pub fn from_tlv(data: &[u8]) -> Result<Self, CodecError> {
        let mut dec = Decoder::new(data);
        let mut fields = BTreeMap::new();
        while dec.remaining() > 0 {
            let tag = dec.u16()?;
            if !(TLV_IMAGE_ID..=TLV_SIGNATURE).contains(&tag) {
                return Err(CodecError::UnknownTag(tag));
            }
            if fields.insert(tag, dec.bytes()?).is_some() {
                return Err(CodecError::Invalid("duplicate manifest field"));
            }
        }
        let mut take = |tag| fields.remove(&tag).ok_or(CodecError::Invalid("missing manifest field"));
        let image_id = String::from_utf8(take(TLV_IMAGE_ID)?).map_err(|_| CodecError::Invalid("image id"))?;
        let digest = Digest32(take(TLV_DIGEST)?.try_into().map_err(|_| CodecError::Invalid("digest length"))?);
        let publisher = PublicKey::from_sec1(&take(TLV_PUBLISHER)?).map_err(|_| CodecError::Invalid("publisher"))?;
        let signature = Signature::from_bytes(&take(TLV_SIGNATURE)?).map_err(|_| CodecError::Invalid("signature"))?;
        Ok(ImageManifest { image_id, digest, publisher, signature })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RuntimeOutcome {
    Clean,
    /// Names of workloads whose digest differs from (or is absent in) the baseline.
    Deviation(Vec<String>),
}

/// One boot epoch of a CVM. Drives extends on a [`TpmState`] and keeps the log.
#[derive(Debug, Clone, Default)]
pub struct MeasuredBoot {
    stage: u8,
    log: Vec<MeasurementEvent>,
}

impl MeasuredBoot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn log(&self) -> &[MeasurementEvent] {
        &self.log
    }

    pub fn stage(&self) -> u8 {
        self.stage
    }

    fn record(&mut self, tpm: &mut TpmState, stage: Stage, name: &str, digest: Digest32, pcr: usize) -> Result<(), MeasurementError> {
        if name.contains(['\t', '\n', '\r']) {
            return Err(MeasurementError::InvalidName(name.to_string()));
        }
        tpm.pcr_extend(pcr, &digest)?;
        self.log.push(MeasurementEvent { seq: self.log.len() as u64, stage, name: name.to_string(), digest, pcr });
        Ok(())
    }

    fn enter(&mut self, requested: Stage, allowed_from: &[u8]) -> Result<(), MeasurementError> {
        if !allowed_from.contains(&self.stage) {
            return Err(MeasurementError::StageOrderViolation { current: self.stage, requested: requested as u8 });
        }
        self.stage = requested as u8;
        Ok(())
    }

    /// Host hypervisor, kernel and services into PCR 0-3.
    pub fn measure_stage1(&mut self, tpm: &mut TpmState, components: &[(&str, &[u8])]) -> Result<(), MeasurementError> {
        self.enter(Stage::Host, &[0, 1])?;
        for (i, (name, bytes)) in components.iter().enumerate() {
            self.record(tpm, Stage::Host, name, hash(bytes), STAGE1_BAND.start + i % 4)?;
        }
        Ok(())
    }

    /// CVM launch: TCB digests into PCR 4-7, then each verified manifest.
    /// Any manifest that fails verification or comes from an untrusted
    /// publisher refuses the boot before anything is extended.
    pub fn measure_stage2(
        &mut self,
        tpm: &mut TpmState,
        manifests: &[ImageManifest],
        trusted_publishers: &[PublicKey],
        tcb: &TeeTcb,
    ) -> Result<Digest32, MeasurementError> {
        if self.stage != 1 {
            return Err(MeasurementError::StageOrderViolation { current: self.stage, requested: 2 });
        }
        if let Some(bad) = manifests.iter().find(|m| !m.verify() || !trusted_publishers.contains(&m.publisher)) {
            return Err(MeasurementError::UntrustedImage(bad.image_id.clone()));
        }
        self.stage = 2;
        let names = ["ovmf", "guest-kernel", "guest-initrd", "kernel-cmdline"];
        for (i, (name, d)) in names.iter().zip(tcb.components()).enumerate() {
            self.record(tpm, Stage::Launch, name, d, STAGE2_BAND.start + i)?;
        }
        for (i, m) in manifests.iter().enumerate() {
            self.record(tpm, Stage::Launch, &m.image_id, m.digest, STAGE2_BAND.start + i % 4)?;
        }
        Ok(launch_measure(tcb))
    }

    /// Runtime workloads against `baseline`. Matching digests extend PCR
    /// 8-11; deviating ones are reported and not extended.
    pub fn measure_stage3(
        &mut self,
        tpm: &mut TpmState,
        workloads: &[(&str, &[u8])],
        baseline: &BTreeMap<String, Digest32>,
    ) -> Result<RuntimeOutcome, MeasurementError> {
        self.enter(Stage::Runtime, &[2, 3])?;
        let mut deviations = Vec::new();
        for (i, (name, bytes)) in workloads.iter().enumerate() {
            let d = hash(bytes);
            if baseline.get(*name) == Some(&d) {
                self.record(tpm, Stage::Runtime, name, d, STAGE3_BAND.start + i % 4)?;
            } else {
                deviations.push(name.to_string());
            }
        }
        Ok(if deviations.is_empty() { RuntimeOutcome::Clean } else { RuntimeOutcome::Deviation(deviations) })
    }
}

/// Rebuilds a bank from a log. Sequence numbers must run 0, 1, 2, ...
pub fn replay_log(events: &[MeasurementEvent]) -> Result<PcrBank, MeasurementError> {
    let mut bank = PcrBank::new();
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            return Err(MeasurementError::LogGap { expected: i as u64, found: e.seq });
        }
        bank.extend(e.pcr, &e.digest)?;
    }
    Ok(bank)
}

/// True when the log replays to exactly the live registers 0-11.
pub fn log_matches(events: &[MeasurementEvent], live: &PcrBank) -> bool {
    let Ok(replayed) = replay_log(events) else {
        return false;
    };
    (0..STAGE3_BAND.end).all(|i| replayed.read(i) == live.read(i))
}

/// One line per event: `seq \t stage \t name \t digest-hex \t pcr`.
pub fn write_log(events: &[MeasurementEvent]) -> String {
    let mut out = String::new();
    for e in events {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", e.seq, e.stage as u8, e.name, e.digest.to_hex(), e.pcr).expect("string write");
    }
    out
}

pub fn parse_log(text: &str) -> Result<Vec<MeasurementEvent>, MeasurementError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let bad = || MeasurementError::MalformedLog(n + 1);
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(MeasurementEvent {
                seq: f[0].parse().map_err(|_| bad())?,
                stage: f[1].parse().ok().and_then(Stage::from_u8).ok_or_else(bad)?,
                name: f[2].to_string(),
                digest: Digest32::from_hex(f[3]).ok_or_else(bad)?,
                pcr: f[4].parse().ok().filter(|p| *p < crate::tpm::PCR_COUNT).ok_or_else(bad)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{KeyRole, Secret};

    fn tpm() -> TpmState {
        TpmState::manufacture(&Secret::new(vec![0x31; 32]).unwrap()).unwrap()
    }

    fn publisher() -> SigningKeyPair {
        SigningKeyPair::derive(KeyRole::Publisher, &Secret::new(vec![0x44; 32]).unwrap(), "PUB", b"")
    }

    const HOST: [(&str, &[u8]); 2] = [("hypervisor", b"kvm-6.12"), ("host-kernel", b"vmlinuz-host")];

    fn tcb() -> TeeTcb {
        TeeTcb::from_images(b"ovmf", b"kernel", b"initrd", b"cmdline")
    }

    fn full_boot(t: &mut TpmState) -> MeasuredBoot {
        let p = publisher();
        let mut b = MeasuredBoot::new();
        b.measure_stage1(t, &HOST).unwrap();
        let m = [ImageManifest::sign(&p, "rootfs", b"rootfs-img"), ImageManifest::sign(&p, "app", b"app-img")];
        b.measure_stage2(t, &m, &[*p.public()], &tcb()).unwrap();
        let baseline = BTreeMap::from([("svc".to_string(), hash(b"svc-bin"))]);
        assert_eq!(b.measure_stage3(t, &[("svc", b"svc-bin")], &baseline).unwrap(), RuntimeOutcome::Clean);
        b
    }

    #[test]
    fn stage1_is_reproducible() {
        let (mut a, mut b) = (tpm(), tpm());
        MeasuredBoot::new().measure_stage1(&mut a, &HOST).unwrap();
        MeasuredBoot::new().measure_stage1(&mut b, &HOST).unwrap();
        assert_ne!(a.pcr_read(0).unwrap(), Digest32::ZERO);
        assert_eq!(a.pcr_composite(Stage::Host.band()), b.pcr_composite(Stage::Host.band()));
    }

    #[test]
    fn stage_order_enforced() {
        let mut t = tpm();
        let mut b = full_boot(&mut t);
        assert!(matches!(b.measure_stage1(&mut t, &HOST), Err(MeasurementError::StageOrderViolation { .. })));
        let mut fresh = MeasuredBoot::new();
        assert!(matches!(
            fresh.measure_stage2(&mut t, &[], &[], &tcb()),
            Err(MeasurementError::StageOrderViolation { current: 0, requested: 2 })
        ));
        assert!(matches!(
            fresh.measure_stage3(&mut t, &[], &BTreeMap::new()),
            Err(MeasurementError::StageOrderViolation { .. })
        ));
    }

    #[test]
    fn stage2_cross_checks_launch_measurement() {
        let mut t = tpm();
        let mut b = MeasuredBoot::new();
        b.measure_stage1(&mut t, &HOST).unwrap();
        let m = b.measure_stage2(&mut t, &[], &[], &tcb()).unwrap();
        assert_eq!(m, launch_measure(&tcb()));
        let launch: Vec<_> = b.log().iter().filter(|e| e.stage == Stage::Launch).collect();
        assert_eq!(launch.len(), 4);
    }

    #[test]
    fn forged_manifest_refuses_boot() {
        let mut t = tpm();
        let p = publisher();
        let mut forged = ImageManifest::sign(&p, "rootfs", b"rootfs-img");
        forged.digest = hash(b"evil");
        let mut b = MeasuredBoot::new();
        b.measure_stage1(&mut t, &HOST).unwrap();
        let before = t.pcr_composite(Stage::Launch.band());
        assert_eq!(
            b.measure_stage2(&mut t, &[forged], &[*p.public()], &tcb()),
            Err(MeasurementError::UntrustedImage("rootfs".into()))
        );
        assert_eq!(t.pcr_composite(Stage::Launch.band()), before);

        let rogue = SigningKeyPair::derive(KeyRole::Publisher, &Secret::new(vec![1; 32]).unwrap(), "R", b"");
        let selfsigned = ImageManifest::sign(&rogue, "rootfs", b"x");
        assert!(selfsigned.verify());
        assert!(matches!(
            b.measure_stage2(&mut t, &[selfsigned], &[*p.public()], &tcb()),
            Err(MeasurementError::UntrustedImage(_))
        ));
    }

    #[test]
    fn runtime_deviation_not_extended() {
        let mut t = tpm();
        let mut b = MeasuredBoot::new();
        b.measure_stage1(&mut t, &HOST).unwrap();
        b.measure_stage2(&mut t, &[], &[], &tcb()).unwrap();
        let baseline = BTreeMap::from([("a".to_string(), hash(b"a")), ("b".to_string(), hash(b"b"))]);
        let out = b.measure_stage3(&mut t, &[("a", b"a"), ("b", b"B")], &baseline).unwrap();
        assert_eq!(out, RuntimeOutcome::Deviation(vec!["b".into()]));
        assert_eq!(t.pcrs().extend_count(9), 0);
        assert_eq!(b.measure_stage3(&mut t, &[], &baseline).unwrap(), RuntimeOutcome::Clean);
    }

    #[test]
    fn replay_reproduces_bank_and_detects_edits() {
        let mut t = tpm();
        let b = full_boot(&mut t);
        assert!(log_matches(b.log(), t.pcrs()));

        let mut dropped = b.log().to_vec();
        dropped.remove(3);
        assert!(matches!(replay_log(&dropped), Err(MeasurementError::LogGap { expected: 3, found: 4 })));

        let mut swapped = b.log().to_vec();
        swapped.swap(2, 3);
        assert!(!log_matches(&swapped, t.pcrs()));
        // Renumbered so the sequence is intact: two extends of PCR 4 swap order.
        let mut renum = b.log().to_vec();
        let (i, j) = (2usize, 6usize);
        assert_eq!(renum[i].pcr, renum[j].pcr);
        renum.swap(i, j);
        renum[i].seq = i as u64;
        renum[j].seq = j as u64;
        assert!(!log_matches(&renum, t.pcrs()));
    }

    #[test]
    fn log_file_round_trip() {
        let mut t = tpm();
        let b = full_boot(&mut t);
        let text = write_log(b.log());
        assert_eq!(parse_log(&text).unwrap(), b.log());
        assert!(text.lines().all(|l| l.split('\t').count() == 5));
        assert_eq!(parse_log("0\t9\tx\t00\t1"), Err(MeasurementError::MalformedLog(1)));
        assert_eq!(b.log()[0].signer(), Signer::Tpm);
        assert_eq!(b.log().last().unwrap().signer(), Signer::Tee);
    }

    #[test]
    fn manifest_tlv_round_trip() {
        let m = ImageManifest::sign(&publisher(), "rootfs", b"img");
        let tlv = m.to_tlv();
        assert_eq!(ImageManifest::from_tlv(&tlv).unwrap(), m);
        assert!(ImageManifest::from_tlv(&tlv[..tlv.len() - 1]).is_err());
        let mut bad = tlv.clone();
        bad[0] = 9;
        assert_eq!(ImageManifest::from_tlv(&bad), Err(CodecError::UnknownTag(9)));
    }

    #[test]
    fn stage2_seal_gating() {
        let p = publisher();
        let manifests = [ImageManifest::sign(&p, "rootfs", b"rootfs-img")];
        let boot = |m: &[ImageManifest], tcb: &TeeTcb| {
            let mut t = tpm();
            let mut b = MeasuredBoot::new();
            b.measure_stage1(&mut t, &HOST).unwrap();
            b.measure_stage2(&mut t, m, &[*p.public()], tcb).unwrap();
            t
        };
        let mut honest = boot(&manifests, &tcb());
        let blob = honest.seal(b"volume key", honest.current_policy(Stage::Launch.band()));
        assert_eq!(boot(&manifests, &tcb()).unseal(&blob).unwrap(), b"volume key");
        let other = [ImageManifest::sign(&p, "rootfs", b"rootfs-img2")];
        assert_eq!(boot(&other, &tcb()).unseal(&blob), Err(TpmError::PolicyFailure));
        let mut tcb2 = tcb();
        tcb2.kernel_cmdline = hash(b"init=/bin/sh");
        assert_eq!(boot(&manifests, &tcb2).unseal(&blob), Err(TpmError::PolicyFailure));
    }
}
