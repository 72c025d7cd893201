// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use super::Principal;
use crate::crypto::{hash, Digest32};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    New,
    Send,
    Receive,
    Decrypt,
    Sign,
    Match,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::New => "New",
            EventKind::Send => "Send",
            EventKind::Receive => "Receive",
            EventKind::Decrypt => "Decrypt",
            EventKind::Sign => "Sign",
            EventKind::Match => "Match",
        }
    }
}

impl FromStr for EventKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "New" => EventKind::New,
            "Send" => EventKind::Send,
            "Receive" => EventKind::Receive,
            "Decrypt" => EventKind::Decrypt,
            "Sign" => EventKind::Sign,
            "Match" => EventKind::Match,
            other => return Err(format!("unknown event kind {other:?}")),
        })
    }
}

/// One action by one principal.
///
/// `digest` and `aux` by kind:
/// - Send/Receive: digest of the wire message; Send's aux is the digest of
///   the carried item.
/// - Decrypt: digest of the recovered item.
/// - Sign: digest of the signed item; aux is the certified subject's name.
/// - Match: digest of the expected value; aux is the digest of the value
///   compared against it.
/// - New: digest of the fresh value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub index: usize,
    pub principal: Principal,
    pub kind: EventKind,
    pub peer: Option<Principal>,
    pub digest: Digest32,
    pub aux: Option<Digest32>,
    pub label: String,
}

impl Event {
    pub fn matched(&self) -> bool {
        self.kind == EventKind::Match && self.aux == Some(self.digest)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.index,
            self.principal,
            self.kind.as_str(),
            self.peer.map_or_else(|| "-".to_string(), |p| p.to_string()),
            self.digest.to_hex(),
            self.aux.map_or_else(|| "-".to_string(), |d| d.to_hex()),
            self.label
        )
    }
}

/// Append-only event log of one protocol run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<Event>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        principal: Principal,
        kind: EventKind,
        peer: Option<Principal>,
        digest: Digest32,
        aux: Option<Digest32>,
        label: &str,
    ) -> usize {
        let index = self.events.len();
        self.events.push(Event { index, principal, kind, peer, digest, aux, label: label.to_string() });
        index
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Appends `other`, renumbering its events.
    pub fn extend(&mut self, other: &Trace) {
        for e in &other.events {
            let mut e = e.clone();
            e.index = self.events.len();
            self.events.push(e);
        }
    }

    /// Events of one principal, in order.
    pub fn by(&self, p: Principal) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.principal == p)
    }

    /// Messages sent to or by the verifier.
    pub fn verifier_visible_messages(&self) -> usize {
        self.events
            .iter()
            .filter(|e| {
                e.kind == EventKind::Send
                    && (e.principal == Principal::VERIFIER || e.peer == Some(Principal::VERIFIER))
            })
            .count()
    }

    /// Rebuilds a trace from arbitrary events, renumbering them. Used by
    /// fault injection and by tests.
    pub fn from_events(events: impl IntoIterator<Item = Event>) -> Self {
        let mut t = Trace::new();
        for mut e in events {
            e.index = t.events.len();
            t.events.push(e);
        }
        t
    }

    /// Line-delimited export: index, principal, kind, peer, digest, aux, label.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn digest(&self) -> Digest32 {
        hash(self.export().as_bytes())
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut t = Trace::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |what: &str| format!("line {}: {what}", n + 1);
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(bad("expected 7 tab-separated columns"));
            }
            let index: usize = cols[0].parse().map_err(|_| bad("index"))?;
            if index != t.events.len() {
                return Err(bad("index out of sequence"));
            }
            let principal = Principal::parse(cols[1]).ok_or_else(|| bad("principal"))?;
            let kind: EventKind = cols[2].parse().map_err(|e: String| bad(&e))?;
            let peer = match cols[3] {
                "-" => None,
                p => Some(Principal::parse(p).ok_or_else(|| bad("peer"))?),
            };
            let digest = Digest32::from_hex(cols[4]).ok_or_else(|| bad("digest"))?;
            let aux = match cols[5] {
                "-" => None,
                d => Some(Digest32::from_hex(d).ok_or_else(|| bad("aux"))?),
            };
            t.record(principal, kind, peer, digest, aux, cols[6]);
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_parse_round_trip() {
        let mut t = Trace::new();
        t.record(Principal::VERIFIER, EventKind::New, None, hash(b"n"), None, "nonce");
        t.record(Principal::VERIFIER, EventKind::Send, Some(Principal::tpm(2)), hash(b"m"), Some(hash(b"c")), "request");
        t.record(Principal::OCA, EventKind::Match, None, hash(b"a"), Some(hash(b"a")), "nonce");
        let text = t.export();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| l.split('\t').count() == 7));
        assert_eq!(Trace::parse(&text).unwrap(), t);
        assert!(t.events()[2].matched());
        assert_eq!(t.verifier_visible_messages(), 1);
        assert!(Trace::parse("0\tV\tNew\n").is_err());
        assert!(Trace::parse(&text.replace("Match", "Guess")).is_err());
    }
}
