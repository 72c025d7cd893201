// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, VecDeque};

use super::trace::{EventKind, Trace};
use super::wire::{decode_wire, encode_wire, Payload, WireMessage};
use super::{Principal, ProtocolError};
use crate::crypto::{Digest32, Secret};

/// A principal's script as a state machine.
pub trait Role {
    fn principal(&self) -> Principal;

    /// Actions taken before any message arrives.
    fn start(&mut self, _io: &mut Io<'_>) -> Result<(), ProtocolError> {
        Ok(())
    }

    fn on_message(&mut self, msg: &WireMessage, io: &mut Io<'_>) -> Result<(), ProtocolError>;

    fn finished(&self) -> bool;
}

/// A role's view of the network and the trace while it handles one step.
pub struct Io<'a> {
    me: Principal,
    keys: &'a BTreeMap<Principal, Secret>,
    trace: &'a mut Trace,
    outbox: &'a mut VecDeque<WireMessage>,
}

/// Trace label of the item a payload carries once decrypted.
fn item_label(p: &Payload) -> &'static str {
    match p {
        Payload::CertVcekInfo { .. } => "cert_VCEK",
        Payload::CertAikInfo { .. } => "cert_AIK",
        Payload::TokenInfo { .. } => "token",
        Payload::TeeEncReport { .. } => "TEEReport",
        Payload::TpmEncReport { .. } => "TPMReport",
        Payload::TotalEncReport { .. } => "totalReport",
        other => other.label(),
    }
}

impl Io<'_> {
    pub fn me(&self) -> Principal {
        self.me
    }

    /// Number of events this principal has recorded so far.
    pub fn step(&self) -> usize {
        self.trace.by(self.me).count()
    }

    fn key(&self, peer: Principal) -> Result<&Secret, ProtocolError> {
        self.keys.get(&peer).ok_or(ProtocolError::NoChannel(self.me, peer))
    }

    pub fn send(&mut self, to: Principal, session: Digest32, payload: &Payload) -> Result<(), ProtocolError> {
        let msg = WireMessage::seal(self.key(to)?, self.me, to, session, payload).map_err(|_| ProtocolError::KeyAgreement)?;
        self.trace.record(self.me, EventKind::Send, Some(to), msg.digest(), Some(payload.content_digest()), payload.label());
        self.outbox.push_back(msg);
        Ok(())
    }

    /// Records the receive, decrypts under the sender's channel key and
    /// records the decrypt.
    pub fn open(&mut self, msg: &WireMessage) -> Result<Payload, ProtocolError> {
        self.trace.record(self.me, EventKind::Receive, Some(msg.sender), msg.digest(), None, msg.label());
        let step = self.step();
        let payload = msg
            .open(self.key(msg.sender)?)
            .map_err(|_| ProtocolError::AuthFailure { principal: self.me, step })?;
        self.trace.record(self.me, EventKind::Decrypt, None, payload.content_digest(), None, item_label(&payload));
        Ok(payload)
    }

    pub fn new_value(&mut self, label: &str, digest: Digest32) {
        self.trace.record(self.me, EventKind::New, None, digest, None, label);
    }

    pub fn sign(&mut self, label: &str, digest: Digest32, subject: Option<Digest32>) {
        self.trace.record(self.me, EventKind::Sign, None, digest, subject, label);
    }

    /// Records a comparison and returns whether it held.
    pub fn compare(&mut self, label: &str, expected: Digest32, actual: Digest32) -> bool {
        self.trace.record(self.me, EventKind::Match, None, expected, Some(actual), label);
        expected == actual
    }

    pub fn unexpected(&self, msg: &WireMessage) -> ProtocolError {
        ProtocolError::UnexpectedMessage { principal: self.me, label: msg.label(), step: self.step() }
    }
}

/// Delivers messages between roles in FIFO order. Every message is
/// encoded to bytes and decoded again on delivery.
pub struct Runner<'r> {
    roles: Vec<Box<dyn Role + 'r>>,
    keys: BTreeMap<Principal, BTreeMap<Principal, Secret>>,
    queue: VecDeque<WireMessage>,
    trace: Trace,
    delivered: usize,
}

const MAX_DELIVERIES: usize = 1_000;

impl<'r> Runner<'r> {
    pub fn new() -> Self {
        Runner { roles: Vec::new(), keys: BTreeMap::new(), queue: VecDeque::new(), trace: Trace::new(), delivered: 0 }
    }

    /// Roles start in the order they are added.
    pub fn add_role(&mut self, role: Box<dyn Role + 'r>) {
        self.roles.push(role);
    }

    /// Gives both principals the same pairwise key.
    pub fn add_channel(&mut self, a: Principal, b: Principal, key: &Secret) {
        self.keys.entry(a).or_default().insert(b, key.clone());
        self.keys.entry(b).or_default().insert(a, key.clone());
    }

    /// Replaces the key `owner` uses towards `peer` only.
    pub fn set_key(&mut self, owner: Principal, peer: Principal, key: Secret) {
        self.keys.entry(owner).or_default().insert(peer, key);
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn messages_delivered(&self) -> usize {
        self.delivered
    }

    fn io_for(&mut self, idx: usize) -> (&mut Box<dyn Role + 'r>, Io<'_>) {
        static EMPTY: BTreeMap<Principal, Secret> = BTreeMap::new();
        let me = self.roles[idx].principal();
        let keys = self.keys.get(&me).unwrap_or(&EMPTY);
        (&mut self.roles[idx], Io { me, keys, trace: &mut self.trace, outbox: &mut self.queue })
    }

    pub fn run(&mut self) -> Result<(), ProtocolError> {
        for i in 0..self.roles.len() {
            let (role, mut io) = self.io_for(i);
            role.start(&mut io)?;
        }
        while let Some(msg) = self.queue.pop_front() {
            self.delivered += 1;
            if self.delivered > MAX_DELIVERIES {
                break;
            }
            let msg = decode_wire(&encode_wire(&msg))?;
            let idx = self
                .roles
                .iter()
                .position(|r| r.principal() == msg.receiver)
                .ok_or(ProtocolError::UnknownPrincipal(msg.receiver))?;
            let (role, mut io) = self.io_for(idx);
            role.on_message(&msg, &mut io)?;
        }
        match self.roles.iter().find(|r| !r.finished()) {
            Some(r) => Err(ProtocolError::Incomplete(r.principal())),
            None => Ok(()),
        }
    }
}

impl Default for Runner<'_> {
    fn default() -> Self {
        Self::new()
    }
}
