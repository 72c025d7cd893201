// SPDX-License-Identifier: Apache-2.0

use parking_lot::Mutex;

use super::ProtocolError;
use crate::crypto::{KeyRole, PublicKey, RandomSource, Secret, SharedSecret, SigningKeyPair};
use crate::tee::TeeNode;
use crate::tpm::{Handle, TpmState};

/// One side of a pairwise key agreement, identified by its static key.
pub enum StaticParty<'a> {
    /// Software principal holding its static key directly.
    Key(&'a SigningKeyPair),
    /// TPM agreeing with a loaded key through EC_Ephemeral and ZGen_2Phase.
    Tpm(&'a Mutex<TpmState>, Handle),
    /// TEE agreeing with its PEK.
    Tee(&'a TeeNode),
}

impl StaticParty<'_> {
    fn static_public(&self) -> Result<PublicKey, ProtocolError> {
        Ok(match self {
            StaticParty::Key(k) => *k.public(),
            StaticParty::Tpm(tpm, h) => tpm.lock().public_of(*h)?,
            StaticParty::Tee(t) => *t.pek_public(),
        })
    }
}

enum Ephemeral {
    Soft(SigningKeyPair),
    Tpm(u64),
}

fn ephemeral(party: &StaticParty<'_>, rng: &RandomSource) -> (PublicKey, Ephemeral) {
    match party {
        StaticParty::Tpm(tpm, _) => {
            let (public, counter) = tpm.lock().ec_ephemeral();
            (public, Ephemeral::Tpm(counter))
        }
        _ => {
            let k = SigningKeyPair::from_seed(KeyRole::Ephemeral, &rng.secret(32));
            (*k.public(), Ephemeral::Soft(k))
        }
    }
}

fn finish(
    party: &StaticParty<'_>,
    eph: Ephemeral,
    peer_static: &PublicKey,
    peer_eph: &PublicKey,
) -> Result<SharedSecret, ProtocolError> {
    let (ps, pe) = (peer_static.to_sec1(), peer_eph.to_sec1());
    Ok(match (party, eph) {
        (StaticParty::Tpm(tpm, h), Ephemeral::Tpm(c)) => tpm.lock().zgen_2phase(c, *h, &ps, &pe)?,
        (StaticParty::Key(k), Ephemeral::Soft(e)) => crate::crypto::ecdh_two_phase(k, &e, &ps, &pe)
            .map_err(|_| ProtocolError::KeyAgreement)?,
        (StaticParty::Tee(t), Ephemeral::Soft(e)) => t
            .key_agreement(&e, &ps, &pe)
            .map_err(|_| ProtocolError::KeyAgreement)?,
        _ => unreachable!("ephemeral kind follows the party kind"),
    })
}

/// Runs two-phase ECDH between `a` and `b` and returns the channel key.
pub fn agree(a: &StaticParty<'_>, b: &StaticParty<'_>, rng: &RandomSource) -> Result<Secret, ProtocolError> {
    let (sa, sb) = (a.static_public()?, b.static_public()?);
    let (ea_pub, ea) = ephemeral(a, rng);
    let (eb_pub, eb) = ephemeral(b, rng);
    let ka = finish(a, ea, &sb, &eb_pub)?;
    let kb = finish(b, eb, &sa, &ea_pub)?;
    assert_eq!(ka.transcript, kb.transcript, "both sides see the same transcript");
    assert!(ka.secret == kb.secret, "two-phase ECDH is symmetric");
    Ok(ka.secret)
}

/// Pairwise keys of one node: TEE-OCA, TPM-OCA, TPM-Verifier, TPM-TEE and
/// TEE-Verifier.
#[derive(Debug, Clone)]
pub struct ChannelKeys {
    pub k_ec: Secret,
    pub k_pc: Secret,
    pub k_pv: Secret,
    pub k_pe: Secret,
    pub k_ev: Secret,
}

/// Establishes all five node channels. `ek` is the TPM's loaded EK handle.
pub fn establish_channels(
    tee: &TeeNode,
    tpm: &Mutex<TpmState>,
    ek: Handle,
    oca_static: &SigningKeyPair,
    verifier_static: &SigningKeyPair,
    rng: &RandomSource,
) -> Result<ChannelKeys, ProtocolError> {
    let e = StaticParty::Tee(tee);
    let p = StaticParty::Tpm(tpm, ek);
    let c = StaticParty::Key(oca_static);
    let v = StaticParty::Key(verifier_static);
    Ok(ChannelKeys {
        k_ec: agree(&e, &c, &rng.fork("K_EC"))?,
        k_pc: agree(&p, &c, &rng.fork("K_PC"))?,
        k_pv: agree(&p, &v, &rng.fork("K_PV"))?,
        k_pe: agree(&p, &e, &rng.fork("K_PE"))?,
        k_ev: agree(&e, &v, &rng.fork("K_EV"))?,
    })
}
