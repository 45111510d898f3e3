//! Adversaries acting on a simulated fabric.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use super::SimNet;
use crate::dns_wire::{DnsQuestion, QueryMode, ResolverEndpoint, Transport};
use crate::epo::{BitCell, EpoObject};

/// Resolvers under adversary control. A crawling adversary learns the value
/// of every cell stored on one of them.
#[derive(Debug, Clone, Default)]
pub struct CompromisedSet {
    members: HashSet<ResolverEndpoint>,
}

impl CompromisedSet {
    /// Marks `round(fraction * population)` resolvers chosen uniformly.
    pub fn sample<R: Rng>(fabric: &SimNet, fraction: f64, rng: &mut R) -> CompromisedSet {
        let all = fabric.endpoints();
        let k = ((fraction.clamp(0.0, 1.0) * all.len() as f64).round() as usize).min(all.len());
        let members = sample(rng, all.len(), k).into_iter().map(|i| all[i]).collect();
        CompromisedSet { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, ep: &ResolverEndpoint) -> bool {
        self.members.contains(ep)
    }

    /// Fraction of the EPO's cells held by compromised resolvers.
    pub fn recovered_fraction(&self, epo: &EpoObject) -> f64 {
        let hit = epo.cells.iter().filter(|c| self.contains(&c.resolver)).count();
        hit as f64 / epo.cells.len() as f64
    }
}

/// Marks a fresh uniform `fraction` of the fabric as compromised and returns
/// the fraction of `epo`'s cells it exposes.
pub fn crawl_adversary<R: Rng>(fabric: &SimNet, fraction: f64, epo: &EpoObject, rng: &mut R) -> f64 {
    CompromisedSet::sample(fabric, fraction, rng).recovered_fraction(epo)
}

/// Waits until `attack_time`, then issues a recursive query for every cell,
/// turning all stored zeros into ones.
pub fn flip_attack<T: Transport>(fabric: &mut T, epo: &EpoObject, attack_time: u64, timeout_ms: u32) {
    fabric.wait_until(attack_time);
    let requests: Vec<_> = epo
        .cells
        .iter()
        .map(|c| (c.resolver, DnsQuestion::new(c.domain.clone(), epo.record_type, QueryMode::Recursive)))
        .collect();
    fabric.query_batch(&requests, timeout_ms);
}

/// Cells a passive channel eavesdropper can read out of captured bytes.
/// Wrapped EPOs yield nothing; plain ones yield every cell.
pub fn eavesdrop(captured: &[u8]) -> Vec<BitCell> {
    EpoObject::parse(captured).map(|e| e.cells).unwrap_or_default()
}
