//! Verification-committee total ordering.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Digest, Endpoint, MultiSig};
use crate::model::NodeId;

/// A locally ordered transaction as submitted to the verification committee.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchEntry {
    pub committee: NodeId,
    pub sequence: u64,
    pub digest: Digest,
    /// Committee multi-signature over `digest`.
    pub signatures: MultiSig,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub transactions: Vec<(NodeId, u64, Digest)>,
    pub signatures: MultiSig,
}

impl Block {
    /// Token summarizing the block content.
    pub fn digest(&self) -> Digest {
        let mut d = Digest::of(&[self.height]);
        for &(c, s, x) in &self.transactions {
            d = Digest::of(&[d.0, c.0 as u64, s, x.0]);
        }
        d
    }
}

/// Why a batch entry was left out of a block.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Exclusion {
    Unverified { committee: NodeId, sequence: u64 },
    Duplicate { committee: NodeId, sequence: u64 },
}

/// Orders a batch by `(committee, sequence)`. Entries whose multi-signature
/// has fewer than `quorum` signers are excluded, as are repeated
/// `(committee, sequence)` pairs after the first in input order.
pub fn total_order(batch: &[BatchEntry], height: u64, quorum: usize) -> (Block, Vec<Exclusion>) {
    let mut seen = BTreeSet::new();
    let mut excluded = Vec::new();
    let mut transactions = Vec::new();
    for e in batch {
        if !e.signatures.verify(e.digest, quorum) {
            excluded.push(Exclusion::Unverified { committee: e.committee, sequence: e.sequence });
        } else if !seen.insert((e.committee, e.sequence)) {
            excluded.push(Exclusion::Duplicate { committee: e.committee, sequence: e.sequence });
        } else {
            transactions.push((e.committee, e.sequence, e.digest));
        }
    }
    transactions.sort_by_key(|&(c, s, _)| (c, s));
    let mut block = Block { height, transactions, signatures: MultiSig::default() };
    block.signatures = MultiSig { digest: block.digest(), signers: BTreeSet::<Endpoint>::new() };
    (block, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(c: usize, s: u64) -> BatchEntry {
        let digest = Digest::of(&[c as u64, s]);
        let signers = (0..3).map(|k| Endpoint::Node(NodeId(100 + k))).collect();
        BatchEntry { committee: NodeId(c), sequence: s, digest, signatures: MultiSig { digest, signers } }
    }

    #[test]
    fn sorts_by_committee_then_sequence() {
        let (block, ex) = total_order(&[entry(2, 1), entry(0, 1)], 1, 3);
        assert!(ex.is_empty());
        let order: Vec<(usize, u64)> = block.transactions.iter().map(|t| (t.0 .0, t.1)).collect();
        assert_eq!(order, vec![(0, 1), (2, 1)]);
    }

    #[test]
    fn duplicates_and_unverified_are_excluded() {
        let mut weak = entry(1, 1);
        weak.signatures.signers.pop_first();
        let (block, ex) = total_order(&[entry(0, 1), entry(0, 1), weak], 4, 3);
        assert_eq!(block.transactions.len(), 1);
        assert_eq!(
            ex,
            vec![
                Exclusion::Duplicate { committee: NodeId(0), sequence: 1 },
                Exclusion::Unverified { committee: NodeId(1), sequence: 1 }
            ]
        );
        assert_eq!(block.height, 4);
    }

    #[test]
    fn empty_batch_gives_empty_block() {
        let (block, ex) = total_order(&[], 2, 3);
        assert!(block.transactions.is_empty() && ex.is_empty());
    }
}
