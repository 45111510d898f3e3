//! Simulated cache resolvers and their behaviour profiles.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::universe::AuthoritativeUniverse;
use crate::dns_wire::{DnsQuestion, DomainName, QueryMode, QueryOutcome, RecordData, RecordType, ResolverEndpoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub fixed_ms: u32,
    /// Mean of the exponential jitter added to `fixed_ms`.
    pub jitter_mean_ms: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { fixed_ms: 20, jitter_mean_ms: 30.0 }
    }
}

impl LatencyModel {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u32 {
        let jitter = if self.jitter_mean_ms > 0.0 {
            let u: f64 = rng.gen();
            -self.jitter_mean_ms * (1.0 - u).ln()
        } else {
            0.0
        };
        self.fixed_ms.saturating_add(jitter.min(f64::from(u32::MAX / 2)) as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorProfile {
    pub answers_recursive: bool,
    pub caches: bool,
    pub answers_nonrecursive: bool,
    pub recursive_on_rd0: bool,
    /// Replaces the authoritative TTL of every cached record.
    pub ttl_override: Option<u32>,
    /// Entries are evicted this many seconds after insertion even when
    /// their TTL is longer. The reported TTL is unaffected.
    pub max_residency: Option<u32>,
    /// Cadence, in seconds, at which expired entries are purged.
    pub flush_interval: u64,
    /// Probability that an answer is lost after the query was processed.
    pub answer_loss_prob: f64,
    pub latency: LatencyModel,
    /// Bounded LRU cache; unbounded when `None`.
    pub cache_capacity: Option<usize>,
}

impl Default for BehaviorProfile {
    fn default() -> Self {
        BehaviorProfile {
            answers_recursive: true,
            caches: true,
            answers_nonrecursive: true,
            recursive_on_rd0: false,
            ttl_override: None,
            max_residency: None,
            flush_interval: 3600,
            answer_loss_prob: 0.0,
            latency: LatencyModel::default(),
            cache_capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("recursive_on_rd0 requires answers_nonrecursive")]
    Rd0WithoutNonrecursive,
    #[error("answer_loss_prob must lie in [0, 1]")]
    LossOutOfRange,
    #[error("flush_interval must be positive")]
    ZeroFlushInterval,
    #[error("cache_capacity must be positive")]
    ZeroCapacity,
}

/// Named profiles used by scenarios and synthetic populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Compliant,
    Unreachable,
    NoRecursion,
    NoCache,
    NoNonrecursive,
    TtlOverride,
    EarlyEviction,
    RecursiveOnRd0,
    Lossy,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Compliant,
        Preset::Unreachable,
        Preset::NoRecursion,
        Preset::NoCache,
        Preset::NoNonrecursive,
        Preset::TtlOverride,
        Preset::EarlyEviction,
        Preset::RecursiveOnRd0,
        Preset::Lossy,
    ];

    pub fn profile(self) -> BehaviorProfile {
        let base = BehaviorProfile::default();
        match self {
            Preset::Compliant => base,
            Preset::Unreachable => BehaviorProfile { answer_loss_prob: 1.0, ..base },
            Preset::NoRecursion => BehaviorProfile { answers_recursive: false, ..base },
            Preset::NoCache => BehaviorProfile { caches: false, ..base },
            Preset::NoNonrecursive => BehaviorProfile { answers_nonrecursive: false, ..base },
            Preset::TtlOverride => BehaviorProfile { ttl_override: Some(300), ..base },
            Preset::EarlyEviction => BehaviorProfile { max_residency: Some(1800), ..base },
            Preset::RecursiveOnRd0 => BehaviorProfile { recursive_on_rd0: true, ..base },
            Preset::Lossy => BehaviorProfile { answer_loss_prob: 0.05, ..base },
        }
    }
}

impl BehaviorProfile {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.recursive_on_rd0 && !self.answers_nonrecursive {
            return Err(ProfileError::Rd0WithoutNonrecursive);
        }
        if !(0.0..=1.0).contains(&self.answer_loss_prob) {
            return Err(ProfileError::LossOutOfRange);
        }
        if self.flush_interval == 0 {
            return Err(ProfileError::ZeroFlushInterval);
        }
        if self.cache_capacity == Some(0) {
            return Err(ProfileError::ZeroCapacity);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub name: DomainName,
    pub qtype: RecordType,
    pub data: RecordData,
    /// Absolute virtual second at which the record stops being served.
    pub expiry: u64,
    /// Earlier physical eviction, from `max_residency`.
    pub evict_at: u64,
    pub last_used: u64,
}

impl CacheEntry {
    fn live(&self, now: u64) -> bool {
        now < self.expiry && now < self.evict_at
    }
}

type CacheKey = (DomainName, RecordType);

mod cache_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<CacheKey, CacheEntry>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<CacheKey, CacheEntry>, D::Error> {
        let entries: Vec<CacheEntry> = Vec::deserialize(d)?;
        Ok(entries.into_iter().map(|e| ((e.name.clone(), e.qtype), e)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResolver {
    pub endpoint: ResolverEndpoint,
    pub profile: BehaviorProfile,
    #[serde(with = "cache_serde")]
    cache: BTreeMap<CacheKey, CacheEntry>,
    /// Virtual times at which the resolver restarts with an empty cache.
    pub restart_schedule: Vec<u64>,
}

impl SimResolver {
    pub fn new(endpoint: ResolverEndpoint, profile: BehaviorProfile) -> SimResolver {
        SimResolver { endpoint, profile, cache: BTreeMap::new(), restart_schedule: Vec::new() }
    }

    /// Number of entries physically held, including expired ones not yet
    /// flushed.
    pub fn cache_size(&self) -> usize {
        self.cache.len()
    }

    pub fn cached(&self, name: &DomainName, qtype: RecordType, now: u64) -> Option<&CacheEntry> {
        self.cache.get(&(name.clone(), qtype)).filter(|e| e.live(now))
    }

    pub fn restart(&mut self) {
        self.cache.clear();
    }

    /// Drops entries that stopped being servable at or before `at`.
    pub fn flush(&mut self, at: u64) -> usize {
        let before = self.cache.len();
        self.cache.retain(|_, e| e.live(at));
        before - self.cache.len()
    }

    fn insert(&mut self, entry: CacheEntry) {
        if let Some(cap) = self.profile.cache_capacity {
            let key = (entry.name.clone(), entry.qtype);
            if self.cache.len() >= cap && !self.cache.contains_key(&key) {
                let victim = self.cache.iter().min_by_key(|(_, e)| e.last_used).map(|(k, _)| k.clone());
                if let Some(v) = victim {
                    self.cache.remove(&v);
                }
            }
        }
        self.cache.insert((entry.name.clone(), entry.qtype), entry);
    }

    fn resolve(&mut self, question: &DnsQuestion, universe: &AuthoritativeUniverse, now: u64) -> QueryOutcome {
        if let Some(e) = self.cache.get_mut(&(question.qname.clone(), question.qtype)) {
            if e.live(now) {
                e.last_used = now;
                return QueryOutcome::hit((e.expiry - now) as u32, Some(e.data.clone()));
            }
        }
        let Some((data, auth_ttl)) = universe.lookup(&question.qname, question.qtype) else {
            return QueryOutcome::miss();
        };
        let ttl = self.profile.ttl_override.unwrap_or(auth_ttl);
        if self.profile.caches && ttl > 0 {
            let expiry = now + u64::from(ttl);
            let evict_at = self.profile.max_residency.map_or(expiry, |r| expiry.min(now + u64::from(r)));
            self.insert(CacheEntry {
                name: question.qname.clone(),
                qtype: question.qtype,
                data: data.clone(),
                expiry,
                evict_at,
                last_used: now,
            });
        }
        QueryOutcome::hit(ttl, Some(data))
    }

    /// Processes one query at virtual time `now`, ignoring loss and latency.
    pub fn handle(&mut self, question: &DnsQuestion, universe: &AuthoritativeUniverse, now: u64) -> QueryOutcome {
        match question.mode {
            QueryMode::Recursive if !self.profile.answers_recursive => QueryOutcome::refused(),
            QueryMode::Recursive => self.resolve(question, universe, now),
            QueryMode::NonRecursive if !self.profile.answers_nonrecursive => QueryOutcome::refused(),
            QueryMode::NonRecursive if self.profile.recursive_on_rd0 => self.resolve(question, universe, now),
            QueryMode::NonRecursive => match self.cache.get_mut(&(question.qname.clone(), question.qtype)) {
                Some(e) if e.live(now) => {
                    e.last_used = now;
                    QueryOutcome::hit((e.expiry - now) as u32, Some(e.data.clone()))
                }
                _ => QueryOutcome::miss(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dns_wire::OutcomeKind;
    use std::net::Ipv4Addr;

    fn setup(profile: BehaviorProfile) -> (SimResolver, AuthoritativeUniverse, DomainName) {
        let mut u = AuthoritativeUniverse::new(1);
        let d = DomainName::new("d.example").unwrap();
        u.insert(d.clone(), RecordType::A, RecordData::A(Ipv4Addr::new(192, 0, 2, 1)), 86400);
        (SimResolver::new(ResolverEndpoint::dns(Ipv4Addr::new(10, 0, 0, 1)), profile), u, d)
    }

    fn ask(r: &mut SimResolver, u: &AuthoritativeUniverse, d: &DomainName, mode: QueryMode, now: u64) -> QueryOutcome {
        r.handle(&DnsQuestion::new(d.clone(), RecordType::A, mode), u, now)
    }

    #[test]
    fn expiry_boundary() {
        let (mut r, u, d) = setup(BehaviorProfile::default());
        assert_eq!(ask(&mut r, &u, &d, QueryMode::Recursive, 0).remaining_ttl, Some(86400));
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 86399).remaining_ttl, Some(1));
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 86400).kind, OutcomeKind::Miss);
    }

    #[test]
    fn recursive_hit_does_not_refresh() {
        let (mut r, u, d) = setup(BehaviorProfile::default());
        ask(&mut r, &u, &d, QueryMode::Recursive, 0);
        assert_eq!(ask(&mut r, &u, &d, QueryMode::Recursive, 100).remaining_ttl, Some(86300));
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 86400).kind, OutcomeKind::Miss);
    }

    #[test]
    fn nonrecursive_never_populates() {
        let (mut r, u, d) = setup(BehaviorProfile::default());
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 0).kind, OutcomeKind::Miss);
        assert_eq!(r.cache_size(), 0);
        let (mut r, u, d) = setup(Preset::RecursiveOnRd0.profile());
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 0).kind, OutcomeKind::Hit);
        assert_eq!(r.cache_size(), 1);
    }

    #[test]
    fn unknown_names_miss() {
        let (mut r, u, _) = setup(BehaviorProfile::default());
        let other = DomainName::new("nx.example").unwrap();
        assert_eq!(ask(&mut r, &u, &other, QueryMode::Recursive, 0).kind, OutcomeKind::Miss);
    }

    #[test]
    fn profiles_shape_answers() {
        let (mut r, u, d) = setup(Preset::NoRecursion.profile());
        assert_eq!(ask(&mut r, &u, &d, QueryMode::Recursive, 0).kind, OutcomeKind::Refused);
        let (mut r, u, d) = setup(Preset::NoCache.profile());
        assert_eq!(ask(&mut r, &u, &d, QueryMode::Recursive, 0).kind, OutcomeKind::Hit);
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 1).kind, OutcomeKind::Miss);
        let (mut r, u, d) = setup(Preset::NoNonrecursive.profile());
        ask(&mut r, &u, &d, QueryMode::Recursive, 0);
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 1).kind, OutcomeKind::Refused);
        let (mut r, u, d) = setup(Preset::TtlOverride.profile());
        assert_eq!(ask(&mut r, &u, &d, QueryMode::Recursive, 0).remaining_ttl, Some(300));
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 300).kind, OutcomeKind::Miss);
    }

    #[test]
    fn early_eviction_keeps_reported_ttl() {
        let (mut r, u, d) = setup(Preset::EarlyEviction.profile());
        ask(&mut r, &u, &d, QueryMode::Recursive, 0);
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 1799).remaining_ttl, Some(84601));
        assert_eq!(ask(&mut r, &u, &d, QueryMode::NonRecursive, 1800).kind, OutcomeKind::Miss);
    }

    #[test]
    fn flush_removes_only_dead_entries() {
        let (mut r, mut u, d) = setup(BehaviorProfile::default());
        let short = DomainName::new("short.example").unwrap();
        u.insert(short.clone(), RecordType::A, RecordData::A(Ipv4Addr::new(192, 0, 2, 2)), 60);
        ask(&mut r, &u, &d, QueryMode::Recursive, 0);
        ask(&mut r, &u, &short, QueryMode::Recursive, 0);
        assert_eq!(r.flush(59), 0);
        assert_eq!(r.flush(60), 1);
        assert_eq!(r.cache_size(), 1);
    }

    #[test]
    fn lru_capacity() {
        let mut profile = BehaviorProfile::default();
        profile.cache_capacity = Some(2);
        let (mut r, mut u, d) = setup(profile);
        let names: Vec<DomainName> = (0..3).map(|i| DomainName::new(&format!("n{i}.example")).unwrap()).collect();
        for n in &names {
            u.insert(n.clone(), RecordType::A, RecordData::A(Ipv4Addr::LOCALHOST), 1000);
        }
        ask(&mut r, &u, &names[0], QueryMode::Recursive, 0);
        ask(&mut r, &u, &names[1], QueryMode::Recursive, 1);
        ask(&mut r, &u, &names[0], QueryMode::NonRecursive, 2);
        ask(&mut r, &u, &names[2], QueryMode::Recursive, 3);
        assert!(r.cached(&names[0], RecordType::A, 4).is_some());
        assert!(r.cached(&names[1], RecordType::A, 4).is_none());
        assert_eq!(r.cache_size(), 2);
        let _ = d;
    }

    #[test]
    fn validation() {
        for p in Preset::ALL {
            p.profile().validate().unwrap();
        }
        let bad = BehaviorProfile { recursive_on_rd0: true, answers_nonrecursive: false, ..Default::default() };
        assert_eq!(bad.validate(), Err(ProfileError::Rd0WithoutNonrecursive));
    }

    #[test]
    fn latency_is_at_least_fixed() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let m = LatencyModel::default();
        let samples: Vec<u32> = (0..5000).map(|_| m.sample(&mut rng)).collect();
        assert!(samples.iter().all(|&s| s >= 20));
        let mean = samples.iter().map(|&s| f64::from(s)).sum::<f64>() / 5000.0;
        // truncation shaves about half a millisecond off the exponential mean
        assert!((mean - 49.5).abs() < 2.5, "{mean}");
    }
}
