// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use super::VerifierError;
use crate::codec::{Canonical, CodecError, Decoder, Encoder};
use crate::crypto::Digest32;
use crate::protocol::ReportKind;
use crate::tpm::PcrSelection;

/// Reference values a report must meet before a token is issued.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub launch_measurement: Digest32,
    /// Expected composite digest for each selection the policy accepts.
    pub pcr_baselines: BTreeMap<PcrSelection, Digest32>,
    pub min_tcb: u64,
    pub allowed: BTreeSet<ReportKind>,
    pub lifetime_secs: u64,
}

impl Policy {
    pub fn validate(&self) -> Result<(), VerifierError> {
        if self.lifetime_secs == 0 {
            return Err(VerifierError::InvalidPolicy("lifetime must be positive"));
        }
        if self.allowed.is_empty() {
            return Err(VerifierError::InvalidPolicy("no attestation type allowed"));
        }
        Ok(())
    }
}

impl Canonical for Policy {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(&self.id).value(&self.launch_measurement).u32(self.pcr_baselines.len() as u32);
        for (sel, d) in &self.pcr_baselines {
            enc.value(sel).value(d);
        }
        enc.u64(self.min_tcb).u32(self.allowed.len() as u32);
        for k in &self.allowed {
            enc.value(k);
        }
        enc.u64(self.lifetime_secs);
    }
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let id = dec.str()?;
        let launch_measurement = dec.value()?;
        let mut pcr_baselines = BTreeMap::new();
        for _ in 0..dec.u32()? {
            pcr_baselines.insert(dec.value()?, dec.value()?);
        }
        let min_tcb = dec.u64()?;
        let mut allowed = BTreeSet::new();
        for _ in 0..dec.u32()? {
            allowed.insert(dec.value()?);
        }
        Ok(Policy { id, launch_measurement, pcr_baselines, min_tcb, allowed, lifetime_secs: dec.u64()? })
    }
}
