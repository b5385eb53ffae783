//! Per-index agreement on the next configuration of a sequence.
//!
//! Reconfigurers reach the service over the simulated network with
//! `PROPOSE(index, cfg)` and receive `DECIDED(index, cfg)`; the handler below
//! runs atomically inside the event loop.

use std::collections::BTreeMap;

use crate::types::{Configuration, ScopeId};

/// Agreement, validity and termination for each `(scope, index)` slot.
pub trait ConsensusService {
    /// Returns the decided configuration for the slot, deciding `cfg` if the
    /// slot is still open. The result's `id` equals `index`.
    fn propose(&mut self, scope: &ScopeId, index: u64, cfg: Configuration) -> Configuration;

    fn decided(&self, scope: &ScopeId, index: u64) -> Option<&Configuration>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub scope: ScopeId,
    pub index: u64,
    pub proposed: Configuration,
    pub decided: Configuration,
}

/// First proposal to arrive for a slot wins.
#[derive(Debug, Default)]
pub struct Sequencer {
    decided: BTreeMap<(ScopeId, u64), Configuration>,
    proposals: Vec<Proposal>,
}

impl Sequencer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every proposal received, in arrival order.
    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }
}

impl ConsensusService for Sequencer {
    fn propose(&mut self, scope: &ScopeId, index: u64, cfg: Configuration) -> Configuration {
        let decided = self
            .decided
            .entry((scope.clone(), index))
            .or_insert_with(|| cfg.clone().with_id(index))
            .clone();
        self.proposals.push(Proposal { scope: scope.clone(), index, proposed: cfg, decided: decided.clone() });
        decided
    }

    fn decided(&self, scope: &ScopeId, index: u64) -> Option<&Configuration> {
        self.decided.get(&(scope.clone(), index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ServerId;

    fn cfg(servers: &[u32]) -> Configuration {
        Configuration::abd(99, servers.iter().map(|s| ServerId(*s)).collect()).unwrap()
    }

    #[test]
    fn first_proposal_wins() {
        let mut seq = Sequencer::new();
        let scope = ScopeId::new("x");
        let a = seq.propose(&scope, 3, cfg(&[0, 1, 2]));
        let b = seq.propose(&scope, 3, cfg(&[3, 4, 5]));
        assert_eq!(a, b);
        assert_eq!(a.servers, cfg(&[0, 1, 2]).servers);
        assert_eq!(a.id, 3);
        assert_eq!(seq.proposals().len(), 2);
    }

    #[test]
    fn sole_proposer_is_decided() {
        let mut seq = Sequencer::new();
        let scope = ScopeId::new("x");
        let d = seq.propose(&scope, 1, cfg(&[7]));
        assert_eq!(d, cfg(&[7]).with_id(1));
        assert_eq!(seq.decided(&scope, 1), Some(&d));
    }

    #[test]
    fn slots_are_independent_per_scope() {
        let mut seq = Sequencer::new();
        let a = seq.propose(&ScopeId::new("a"), 1, cfg(&[1]));
        let b = seq.propose(&ScopeId::new("b"), 1, cfg(&[2]));
        assert_ne!(a, b);
    }

    #[test]
    fn agreement_and_validity_over_random_proposals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut seq = Sequencer::new();
        let scope = ScopeId::new("x");
        for _ in 0..500 {
            let index = rng.gen_range(1..10);
            let s = rng.gen_range(0..4);
            seq.propose(&scope, index, cfg(&[s]));
        }
        let mut first: BTreeMap<u64, &Proposal> = BTreeMap::new();
        for p in seq.proposals() {
            let f = *first.entry(p.index).or_insert(p);
            assert_eq!(p.decided, f.decided, "agreement");
            assert_eq!(f.decided, f.proposed.clone().with_id(p.index), "validity");
        }
    }
}
