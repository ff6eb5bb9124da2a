//! TopBFT message-driven state machines.
//!
//! Every node is a [`NodeState`]; [`handle_message`] is a pure transition
//! returning the next state, the messages to send and observable
//! [`ProtocolEvent`]s. Timing (phase pacing, timers, link delays) belongs to
//! the scheduler that drives these functions.
//!
//! A round: the leader binds the request to its trusted counter and sends a
//! `PrePrepare` to its active followers; followers check the attestation and
//! answer with a signed `Prepare`; at quorum the leader forwards an
//! `AggregatePrepared` to the verification leader. The verification
//! committee orders all committees' entries into a block in four
//! propose/acknowledge exchanges and returns a `CommitNotice` per entry; the
//! leader verifies it and replies to the client.

mod counter;
mod node;
mod order;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::NodeId;

pub use counter::{counter_assign, counter_verify, CounterAttestation, CounterError, TrustedCounter};
pub use node::{
    committee_states, handle_message, on_timeout, seal_block, trigger_fallback, verifier_states, CommitteeView,
    LeaderRound, Mode, NodeState, Ordering, ProtocolError, ProtocolEvent, Role, Transition, VerifierView,
};
pub use order::{total_order, BatchEntry, Block, Exclusion};

/// Collision-free message digest token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Digest(pub u64);

impl Digest {
    /// Deterministic token for a tuple of words.
    pub fn of(words: &[u64]) -> Digest {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &w in words {
            for b in w.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        Digest(h)
    }

    /// Digest of a client request.
    pub fn request(id: u64) -> Digest {
        Digest::of(&[0x7265_7175, id])
    }
}

/// Message endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Client,
    Node(NodeId),
    /// Verification committee member by index.
    Verifier(usize),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Client => write!(f, "client"),
            Endpoint::Node(n) => write!(f, "n{}", n.0),
            Endpoint::Verifier(k) => write!(f, "v{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Request,
    PrePrepare,
    Prepare,
    AggregatePrepared,
    CommitNotice,
    Reply,
    FallbackActivate,
    /// Verification leader's ordering proposal, four rounds per block.
    VerifyPropose,
    /// Verification member's acknowledgement of a proposal round.
    VerifyAck,
}

/// Abstract multi-signature: the set of signers over one digest.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiSig {
    pub digest: Digest,
    pub signers: BTreeSet<Endpoint>,
}

impl MultiSig {
    pub fn single(digest: Digest, signer: Endpoint) -> Self {
        MultiSig { digest, signers: BTreeSet::from([signer]) }
    }

    pub fn verify(&self, digest: Digest, threshold: usize) -> bool {
        self.digest == digest && self.signers.len() >= threshold
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProtocolMessage {
    pub kind: MessageKind,
    pub from: Endpoint,
    /// Leader of the consensus committee the message belongs to.
    pub committee: NodeId,
    /// Committee sequence number; block height for ordering messages.
    pub sequence: u64,
    pub digest: Digest,
    pub payload_size: u64,
    pub attestation: Option<CounterAttestation>,
    pub signatures: MultiSig,
    /// Client request id carried by `Request` and `Reply`.
    pub request: u64,
    /// Ordering round (1..=4) of `VerifyPropose` / `VerifyAck`.
    pub round: u8,
    /// Batch proposed in the first ordering round.
    pub entries: Vec<BatchEntry>,
}

impl ProtocolMessage {
    pub fn new(kind: MessageKind, from: Endpoint, committee: NodeId, sequence: u64, digest: Digest) -> Self {
        ProtocolMessage {
            kind,
            from,
            committee,
            sequence,
            digest,
            payload_size: 0,
            attestation: None,
            signatures: MultiSig::default(),
            request: 0,
            round: 0,
            entries: Vec::new(),
        }
    }

    /// A client request for `committee`.
    pub fn request(committee: NodeId, id: u64, payload_size: u64) -> Self {
        let mut m = ProtocolMessage::new(MessageKind::Request, Endpoint::Client, committee, 0, Digest::request(id));
        m.request = id;
        m.payload_size = payload_size;
        m
    }
}

/// One delivered message in a trace (JSON lines).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Delivery time in microseconds.
    pub t: u64,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    pub committee: usize,
    pub seq: u64,
}

impl TraceRecord {
    pub fn new(t: u64, to: Endpoint, msg: &ProtocolMessage) -> Self {
        TraceRecord {
            t,
            from: msg.from.to_string(),
            to: to.to_string(),
            kind: msg.kind,
            committee: msg.committee.0,
            seq: msg.sequence,
        }
    }
}
