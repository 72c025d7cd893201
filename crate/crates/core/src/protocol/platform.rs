// SPDX-License-Identifier: Apache-2.0

use parking_lot::Mutex;

use super::channels::{establish_channels, ChannelKeys};
use super::ProtocolError;
use crate::crypto::{Certificate, PublicKey, RandomSource, SigningKeyPair};
use crate::oca::NodeId;
use crate::tee::TeeNode;
use crate::tpm::{Handle, TpmState};

#[derive(Debug, Clone, Default)]
pub struct PlatformCerts {
    pub vcek: Option<Certificate>,
    pub aik: Option<Certificate>,
}

/// One composite node: a TEE and a TPM on the same host plus the channel
/// keys their principals hold. TPM commands serialize on the mutex.
#[derive(Debug)]
pub struct Platform {
    pub index: u32,
    pub tee: TeeNode,
    pub tpm: Mutex<TpmState>,
    pub keys: ChannelKeys,
    aik: Mutex<Option<(Handle, PublicKey)>>,
    certs: Mutex<PlatformCerts>,
}

impl Platform {
    pub fn new(
        index: u32,
        tee: TeeNode,
        tpm: TpmState,
        oca_static: &SigningKeyPair,
        verifier_static: &SigningKeyPair,
        rng: &RandomSource,
    ) -> Result<Self, ProtocolError> {
        let ek = tpm.ek_handle();
        let tpm = Mutex::new(tpm);
        let keys = establish_channels(&tee, &tpm, ek, oca_static, verifier_static, rng)?;
        Ok(Platform { index, tee, tpm, keys, aik: Mutex::new(None), certs: Mutex::new(PlatformCerts::default()) })
    }

    pub fn node_id(&self) -> NodeId {
        NodeId::from_vcek(self.tee.vcek_public())
    }

    pub fn aik(&self) -> Option<(Handle, PublicKey)> {
        *self.aik.lock()
    }

    pub(crate) fn set_aik(&self, handle: Handle, public: PublicKey) {
        *self.aik.lock() = Some((handle, public));
    }

    pub fn certs(&self) -> PlatformCerts {
        self.certs.lock().clone()
    }

    pub(crate) fn store_vcek_cert(&self, cert: Certificate) {
        self.certs.lock().vcek = Some(cert);
    }

    pub(crate) fn store_aik_cert(&self, cert: Certificate) {
        self.certs.lock().aik = Some(cert);
    }
}
