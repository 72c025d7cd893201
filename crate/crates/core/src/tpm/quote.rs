// SPDX-License-Identifier: Apache-2.0

use super::{Handle, PcrSelection, TpmError, TpmState, FIRMWARE_VERSION};
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::{verify, Digest32, PublicKey, Signature};

pub const QUOTE_MAGIC: u32 = 0xFF54_4347;
pub const ST_ATTEST_QUOTE: u16 = 0x8018;
pub const MAX_TEE_REPORT_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClockInfo {
    pub clock: u64,
    pub reset_count: u32,
    pub restart_count: u32,
    pub safe: bool,
}

impl Canonical for ClockInfo {
    fn encode(&self, enc: &mut Encoder) {
        enc.u64(self.clock).u32(self.reset_count).u32(self.restart_count).bool(self.safe);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        Ok(ClockInfo { clock: dec.u64()?, reset_count: dec.u32()?, restart_count: dec.u32()?, safe: dec.bool()? })
    }
}

/// Quote structure shared by `quote` and `cc_quote`. A plain quote is the
/// same structure with an empty TEE report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeQuote {
    pub signer_name: Digest32,
    pub qualifying_data: [u8; 32],
    pub clock: ClockInfo,
    pub firmware_version: u64,
    pub pcr_selection: PcrSelection,
    pub pcr_digest: Digest32,
    pub tee_report: Vec<u8>,
    pub signature: Signature,
}

impl CompositeQuote {
    /// Encoding of every field above the signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_body(&mut enc);
        enc.finish()
    }

    fn encode_body(&self, enc: &mut Encoder) {
        enc.u32(QUOTE_MAGIC)
            .u16(ST_ATTEST_QUOTE)
            .value(&self.signer_name)
            .fixed(&self.qualifying_data)
            .value(&self.clock)
            .u64(self.firmware_version)
            .value(&self.pcr_selection)
            .value(&self.pcr_digest)
            .u16(self.tee_report.len() as u16)
            .fixed(&self.tee_report);
    }

    pub fn verify(&self, aik: &PublicKey) -> bool {
        self.tee_report.len() <= MAX_TEE_REPORT_SIZE
            && aik.name() == self.signer_name
            && verify(aik, &self.signed_bytes(), &self.signature)
    }
}

impl Canonical for CompositeQuote {
    fn encode(&self, enc: &mut Encoder) {
        self.encode_body(enc);
        enc.value(&self.signature);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        if dec.u32()? != QUOTE_MAGIC {
            return Err(CodecError::Invalid("quote magic"));
        }
        let tag = dec.u16()?;
        if tag != ST_ATTEST_QUOTE {
            return Err(CodecError::UnknownTag(tag));
        }
        let signer_name = dec.value()?;
        let qualifying_data = dec.fixed()?;
        let clock = dec.value()?;
        let firmware_version = dec.u64()?;
        let pcr_selection = dec.value()?;
        let pcr_digest = dec.value()?;
        let size = dec.u16()? as usize;
        if size > MAX_TEE_REPORT_SIZE {
            return Err(CodecError::Invalid("tee report size"));
        }
        let tee_report = dec.raw(size)?;
        Ok(CompositeQuote {
            signer_name,
            qualifying_data,
            clock,
            firmware_version,
            pcr_selection,
            pcr_digest,
            tee_report,
            signature: dec.value()?,
        })
    }
}

impl TpmState {
    fn clock_info(&self) -> ClockInfo {
        ClockInfo { clock: self.time, reset_count: self.reset_count, restart_count: self.restart_count, safe: true }
    }

    /// `TPM2_Quote`.
    pub fn quote(&mut self, aik: Handle, selection: PcrSelection, qualifying_data: &[u8; 32]) -> Result<CompositeQuote, TpmError> {
        self.cc_quote(aik, selection, qualifying_data, &[])
    }

    /// `TPM2_CCQuote`: a quote whose signed area also carries a TEE report.
    pub fn cc_quote(
        &mut self,
        aik: Handle,
        selection: PcrSelection,
        nonce: &[u8; 32],
        tee_report: &[u8],
    ) -> Result<CompositeQuote, TpmError> {
        if selection.is_empty() {
            return Err(TpmError::EmptySelection);
        }
        if tee_report.len() > MAX_TEE_REPORT_SIZE {
            return Err(TpmError::ReportTooLarge(tee_report.len()));
        }
        let obj = self.object(aik)?;
        if !(obj.blob.attributes.sign && obj.blob.attributes.restricted) {
            return Err(TpmError::AttributeMismatch("restricted signing"));
        }
        let mut q = CompositeQuote {
            signer_name: obj.blob.name(),
            qualifying_data: *nonce,
            clock: self.clock_info(),
            firmware_version: FIRMWARE_VERSION,
            pcr_selection: selection,
            pcr_digest: self.pcr_composite(selection),
            tee_report: tee_report.to_vec(),
            // Overwritten below once the body is fixed.
            signature: Signature::from_bytes(&[1; 64]).expect("in-range scalars"),
        };
        q.signature = self.sign_with(aik, &q.signed_bytes())?;
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{hash, KeyRole, Secret};
    use crate::tpm::{composite_digest, KeyAttributes};

    fn setup() -> (TpmState, Handle, PublicKey) {
        let mut t = TpmState::manufacture(&Secret::new(vec![5; 32]).unwrap()).unwrap();
        let ek = t.ek_handle();
        let blob = t.create_key(ek, KeyRole::Aik, KeyAttributes::ATTESTATION).unwrap();
        let h = t.load_key(&blob).unwrap();
        (t, h, blob.public)
    }

    #[test]
    fn quote_digest_matches_hash_of_register() {
        let (mut t, aik, aik_pub) = setup();
        t.pcr_extend(0, &hash(b"boot")).unwrap();
        let sel = PcrSelection::from_indices([0]).unwrap();
        let q = t.quote(aik, sel, &[7; 32]).unwrap();
        assert_eq!(q.pcr_digest, hash(t.pcr_read(0).unwrap().as_bytes()));
        assert_eq!(q.pcr_digest, composite_digest([t.pcr_read(0).unwrap()].iter()));
        assert!(q.verify(&aik_pub));
        assert!(q.tee_report.is_empty());
    }

    #[test]
    fn empty_selection_rejected() {
        let (mut t, aik, _) = setup();
        assert_eq!(t.quote(aik, PcrSelection::EMPTY, &[0; 32]), Err(TpmError::EmptySelection));
    }

    #[test]
    fn cc_quote_with_empty_report_equals_quote() {
        let (mut t, aik, aik_pub) = setup();
        let sel = PcrSelection::range(0..4);
        let a = t.quote(aik, sel, &[1; 32]).unwrap();
        let b = t.cc_quote(aik, sel, &[1; 32], &[]).unwrap();
        assert_eq!(a.signed_bytes(), b.signed_bytes());
        assert!(a.verify(&aik_pub) && b.verify(&aik_pub));
    }

    #[test]
    fn embedded_report_is_signed() {
        let (mut t, aik, aik_pub) = setup();
        let report = vec![0xA5; 1200];
        let q = t.cc_quote(aik, PcrSelection::range(0..12), &[2; 32], &report).unwrap();
        assert!(q.verify(&aik_pub));
        let round = CompositeQuote::from_bytes(&q.to_bytes()).unwrap();
        assert_eq!(round, q);
        let mut bad = q.clone();
        bad.tee_report[600] ^= 1;
        assert!(!bad.verify(&aik_pub));
        let mut bad = q.clone();
        bad.qualifying_data[0] ^= 1;
        assert!(!bad.verify(&aik_pub));
    }

    #[test]
    fn report_size_boundary() {
        let (mut t, aik, aik_pub) = setup();
        let sel = PcrSelection::range(0..1);
        let q = t.cc_quote(aik, sel, &[0; 32], &vec![1; MAX_TEE_REPORT_SIZE]).unwrap();
        assert!(q.verify(&aik_pub));
        assert_eq!(
            t.cc_quote(aik, sel, &[0; 32], &vec![1; MAX_TEE_REPORT_SIZE + 1]),
            Err(TpmError::ReportTooLarge(MAX_TEE_REPORT_SIZE + 1))
        );
    }

    #[test]
    fn unrestricted_key_cannot_quote() {
        let (mut t, _, _) = setup();
        let srk = t.create_primary(crate::tpm::Hierarchy::Storage).unwrap();
        let hs = t.load_key(&srk).unwrap();
        let k = t.create_key(hs, KeyRole::Identity, KeyAttributes::SIGNING).unwrap();
        let hk = t.load_key(&k).unwrap();
        assert!(matches!(t.quote(hk, PcrSelection::ALL, &[0; 32]), Err(TpmError::AttributeMismatch(_))));
    }
}
