//! Emulated trusted monotonic counter.
//!
//! Attestations carry a keyed tag over `(node, value, digest)`. The key
//! stands in for the enclave's sealed signing key: only a healthy counter
//! produces valid tags, and any field change breaks the tag.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Digest;
use crate::model::NodeId;

const ENCLAVE_KEY: u64 = 0x5eed_7ee0_c0ff_1ce5;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tag(node: NodeId, value: u64, digest: Digest) -> u64 {
    mix(mix(mix(ENCLAVE_KEY ^ node.0 as u64) ^ value) ^ digest.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CounterAttestation {
    pub node: NodeId,
    pub value: u64,
    pub digest: Digest,
    pub tag: u64,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TrustedCounter {
    pub node: NodeId,
    value: u64,
    compromised: bool,
    bindings: BTreeMap<u64, Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CounterError {
    #[error("trusted counter of {0} is compromised")]
    Compromised(NodeId),
}

impl TrustedCounter {
    pub fn new(node: NodeId) -> Self {
        TrustedCounter { node, value: 0, compromised: false, bindings: BTreeMap::new() }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn is_compromised(&self) -> bool {
        self.compromised
    }

    /// Marks the TEE as failed; later assigns are refused.
    pub fn compromise(&mut self) {
        self.compromised = true;
    }

    /// Restores a repaired TEE. The counter resumes above `floor`, the
    /// highest sequence assigned classically while it was down.
    pub fn recover(&mut self, floor: u64) {
        self.compromised = false;
        self.value = self.value.max(floor);
    }

    /// Digest bound to `value`, if any.
    pub fn binding(&self, value: u64) -> Option<Digest> {
        self.bindings.get(&value).copied()
    }

    /// What a failed enclave emits when asked to attest: well-formed but
    /// without a valid signature.
    pub fn broken_attestation(&self, digest: Digest) -> CounterAttestation {
        CounterAttestation { node: self.node, value: self.value + 1, digest, tag: 0, valid: false }
    }
}

pub fn counter_assign(counter: &mut TrustedCounter, digest: Digest) -> Result<CounterAttestation, CounterError> {
    if counter.compromised {
        return Err(CounterError::Compromised(counter.node));
    }
    counter.value += 1;
    counter.bindings.insert(counter.value, digest);
    Ok(CounterAttestation {
        node: counter.node,
        value: counter.value,
        digest,
        tag: tag(counter.node, counter.value, digest),
        valid: true,
    })
}

pub fn counter_verify(att: &CounterAttestation) -> bool {
    att.valid && att.tag == tag(att.node, att.value, att.digest)
}
