//! Deterministic simulation of a resolver population under a virtual clock.
//!
//! [`SimNet`] implements [`Transport`], so the keystore and dataset code run
//! against it unchanged. Batched queries are processed one after another in
//! request order at the current virtual time.

pub mod adversary;
pub mod experiment;
pub mod resolver;
pub mod scenario;
pub mod universe;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dns_wire::{
    DnsQuestion, DomainName, OutcomeKind, QueryMode, QueryOutcome, RecordType, ResolverEndpoint, Transport,
};
pub use resolver::{BehaviorProfile, LatencyModel, Preset, ProfileError, SimResolver};
pub use universe::{AuthoritativeUniverse, SyntheticHosts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualClock {
    now: u64,
}

impl VirtualClock {
    pub fn new(start: u64) -> VirtualClock {
        VirtualClock { now: start }
    }

    pub fn now(&self) -> u64 {
        self.now
    }
}

/// One logical query as seen on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub seq: u64,
    pub time: u64,
    pub resolver: ResolverEndpoint,
    pub qname: DomainName,
    pub qtype: RecordType,
    pub mode: QueryMode,
    pub attempts: u32,
    pub outcome: OutcomeKind,
    pub remaining_ttl: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimEventKind {
    Restart,
    Flush { removed: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub resolver: ResolverEndpoint,
    pub kind: SimEventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown resolver {0}")]
    UnknownResolver(ResolverEndpoint),
    #[error("duplicate resolver {0}")]
    DuplicateResolver(ResolverEndpoint),
    #[error("invalid profile for {0}: {1}")]
    Profile(ResolverEndpoint, ProfileError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Address of the non-caching lookup service every fabric provides. It
/// answers recursive queries straight from the authoritative universe and is
/// meant for harvesting, not for storing bits.
pub const LOOKUP_ENDPOINT: ResolverEndpoint =
    ResolverEndpoint { addr: Ipv4Addr::new(127, 0, 0, 53), port: 53 };

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimState {
    clock: VirtualClock,
    resolvers: Vec<SimResolver>,
    universe: AuthoritativeUniverse,
    rng: ChaCha20Rng,
    retries: u32,
    restarts: BTreeMap<u64, Vec<usize>>,
    seq: u64,
    #[serde(skip)]
    transcript: Vec<TranscriptEntry>,
    #[serde(skip)]
    events: Vec<SimEvent>,
    #[serde(skip)]
    recording: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "SimState", into = "SimState")]
pub struct SimNet {
    state: SimState,
    index: HashMap<ResolverEndpoint, usize>,
}

impl From<SimState> for SimNet {
    fn from(mut state: SimState) -> SimNet {
        state.universe.rebuild();
        state.recording = true;
        let index = state.resolvers.iter().enumerate().map(|(i, r)| (r.endpoint, i)).collect();
        SimNet { state, index }
    }
}

impl From<SimNet> for SimState {
    fn from(net: SimNet) -> SimState {
        net.state
    }
}

impl SimNet {
    pub fn new(universe: AuthoritativeUniverse, start_time: u64, seed: u64) -> SimNet {
        let lookup = SimResolver::new(
            LOOKUP_ENDPOINT,
            BehaviorProfile { caches: false, latency: LatencyModel { fixed_ms: 1, jitter_mean_ms: 0.0 }, ..Default::default() },
        );
        SimState {
            clock: VirtualClock::new(start_time),
            resolvers: vec![lookup],
            universe,
            rng: ChaCha20Rng::seed_from_u64(seed),
            retries: 2,
            restarts: BTreeMap::new(),
            seq: 0,
            transcript: Vec::new(),
            events: Vec::new(),
            recording: true,
        }
        .into()
    }

    pub fn add_resolver(&mut self, endpoint: ResolverEndpoint, profile: BehaviorProfile) -> Result<(), SimError> {
        profile.validate().map_err(|e| SimError::Profile(endpoint, e))?;
        if self.index.contains_key(&endpoint) {
            return Err(SimError::DuplicateResolver(endpoint));
        }
        self.index.insert(endpoint, self.state.resolvers.len());
        self.state.resolvers.push(SimResolver::new(endpoint, profile));
        Ok(())
    }

    /// Adds `count` resolvers with consecutive addresses starting at `first`.
    pub fn add_population(&mut self, first: Ipv4Addr, count: usize, profile: &BehaviorProfile) -> Result<Vec<ResolverEndpoint>, SimError> {
        let base = u32::from(first);
        (0..count)
            .map(|i| {
                let ep = ResolverEndpoint::dns(Ipv4Addr::from(base.wrapping_add(i as u32)));
                self.add_resolver(ep, profile.clone()).map(|_| ep)
            })
            .collect()
    }

    pub fn set_retries(&mut self, retries: u32) {
        self.state.retries = retries;
    }

    pub fn clock(&self) -> VirtualClock {
        self.state.clock
    }

    pub fn universe(&self) -> &AuthoritativeUniverse {
        &self.state.universe
    }

    pub fn universe_mut(&mut self) -> &mut AuthoritativeUniverse {
        &mut self.state.universe
    }

    /// All storage resolvers, excluding the lookup service.
    pub fn endpoints(&self) -> Vec<ResolverEndpoint> {
        self.state.resolvers.iter().map(|r| r.endpoint).filter(|e| *e != LOOKUP_ENDPOINT).collect()
    }

    pub fn resolver(&self, endpoint: &ResolverEndpoint) -> Option<&SimResolver> {
        self.index.get(endpoint).map(|&i| &self.state.resolvers[i])
    }

    pub fn resolver_mut(&mut self, endpoint: &ResolverEndpoint) -> Option<&mut SimResolver> {
        self.index.get(endpoint).map(|&i| &mut self.state.resolvers[i])
    }

    pub fn schedule_restart(&mut self, endpoint: &ResolverEndpoint, at: u64) -> Result<(), SimError> {
        let &i = self.index.get(endpoint).ok_or(SimError::UnknownResolver(*endpoint))?;
        let sched = &mut self.state.resolvers[i].restart_schedule;
        sched.push(at);
        sched.sort_unstable();
        self.state.restarts.entry(at).or_default().push(i);
        Ok(())
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.state.transcript
    }

    pub fn take_transcript(&mut self) -> Vec<TranscriptEntry> {
        std::mem::take(&mut self.state.transcript)
    }

    pub fn clear_transcript(&mut self) {
        self.state.transcript.clear();
    }

    /// Large runs can switch transcript recording off to save memory.
    pub fn set_recording(&mut self, on: bool) {
        self.state.recording = on;
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.state.events
    }

    /// Moves the clock forward by `dt`, firing restarts scheduled in
    /// `(old, new]` and purging caches at every crossed flush boundary.
    pub fn advance_time(&mut self, dt: u64) {
        if dt == 0 {
            return;
        }
        let old = self.state.clock.now;
        let new = old + dt;
        let fired: Vec<(u64, usize)> = self
            .state
            .restarts
            .range(old + 1..=new)
            .flat_map(|(&t, list)| list.iter().map(move |&i| (t, i)))
            .collect();
        for (t, i) in fired {
            let r = &mut self.state.resolvers[i];
            r.restart();
            self.state.events.push(SimEvent { time: t, resolver: r.endpoint, kind: SimEventKind::Restart });
        }
        for r in &mut self.state.resolvers {
            let fi = r.profile.flush_interval;
            if r.cache_size() == 0 || new / fi == old / fi {
                continue;
            }
            let boundary = new / fi * fi;
            let removed = r.flush(boundary);
            if removed > 0 {
                self.state.events.push(SimEvent { time: boundary, resolver: r.endpoint, kind: SimEventKind::Flush { removed } });
            }
        }
        self.state.clock.now = new;
    }

    /// One attempt: `None` when the answer is lost or arrives too late.
    fn attempt(&mut self, idx: usize, question: &DnsQuestion, timeout_ms: u32) -> Option<QueryOutcome> {
        let now = self.state.clock.now;
        let st = &mut self.state;
        let r = &mut st.resolvers[idx];
        let loss = r.profile.answer_loss_prob;
        let rtt = r.profile.latency.sample(&mut st.rng);
        if loss >= 1.0 {
            return None;
        }
        let out = r.handle(question, &st.universe, now);
        if loss > 0.0 && st.rng.gen::<f64>() < loss {
            return None;
        }
        (rtt <= timeout_ms).then(|| out.with_rtt(rtt))
    }

    /// Answers a query against one resolver without loss, latency or
    /// transcript bookkeeping.
    pub fn sim_query(&mut self, endpoint: &ResolverEndpoint, question: &DnsQuestion) -> Result<QueryOutcome, SimError> {
        let &i = self.index.get(endpoint).ok_or(SimError::UnknownResolver(*endpoint))?;
        let now = self.state.clock.now;
        let st = &mut self.state;
        Ok(st.resolvers[i].handle(question, &st.universe, now))
    }
}

impl Transport for SimNet {
    fn query(&mut self, resolver: &ResolverEndpoint, question: &DnsQuestion, timeout_ms: u32) -> QueryOutcome {
        let idx = self.index.get(resolver).copied();
        let mut attempts = 0;
        let mut outcome = QueryOutcome::timeout().with_rtt(timeout_ms);
        if timeout_ms > 0 {
            for _ in 0..=self.state.retries {
                attempts += 1;
                let Some(i) = idx else { continue };
                if let Some(out) = self.attempt(i, question, timeout_ms) {
                    outcome = out;
                    break;
                }
            }
        }
        if self.state.recording {
            self.state.transcript.push(TranscriptEntry {
                seq: self.state.seq,
                time: self.state.clock.now,
                resolver: *resolver,
                qname: question.qname.clone(),
                qtype: question.qtype,
                mode: question.mode,
                attempts,
                outcome: outcome.kind,
                remaining_ttl: outcome.remaining_ttl,
            });
        }
        self.state.seq += 1;
        outcome
    }

    fn now(&self) -> u64 {
        self.state.clock.now
    }

    fn wait_until(&mut self, t: u64) {
        let now = self.state.clock.now;
        if t > now {
            self.advance_time(t - now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dns_wire::RecordData;

    const TIMEOUT: u32 = 2000;

    fn fabric(profile: BehaviorProfile) -> (SimNet, ResolverEndpoint, DnsQuestion) {
        let mut u = AuthoritativeUniverse::new(5);
        let d = DomainName::new("d.example").unwrap();
        u.insert(d.clone(), RecordType::A, RecordData::A(Ipv4Addr::new(192, 0, 2, 1)), 86400);
        let mut net = SimNet::new(u, 0, 9);
        let ep = ResolverEndpoint::dns(Ipv4Addr::new(10, 0, 0, 1));
        net.add_resolver(ep, profile).unwrap();
        (net, ep, DnsQuestion::new(d, RecordType::A, QueryMode::Recursive))
    }

    fn nonrec(q: &DnsQuestion) -> DnsQuestion {
        DnsQuestion { mode: QueryMode::NonRecursive, ..q.clone() }
    }

    #[test]
    fn state_survives_json() {
        let mut s = scenario::Scenario::default();
        s.population.size = 20;
        let mut net = s.build().unwrap();
        let ep = net.endpoints()[3];
        let host = net.universe().hostname_of(Ipv4Addr::new(1, 2, 3, 4));
        let q = DnsQuestion::new(DomainName::new("www.isp001.net").unwrap(), RecordType::A, QueryMode::Recursive);
        assert!(net.query(&ep, &q, TIMEOUT).is_hit());
        let restart_at = net.now() + 3000;
        net.schedule_restart(&endpoint_after(&ep), restart_at).unwrap();
        net.advance_time(1200);
        let text = serde_json::to_string(&net).unwrap();
        let mut back: SimNet = serde_json::from_str(&text).unwrap();
        assert_eq!(back.now(), net.now());
        assert_eq!(back.endpoints(), net.endpoints());
        assert_eq!(back.universe().hostname_of(Ipv4Addr::new(1, 2, 3, 4)), host);
        let a = net.query(&ep, &nonrec(&q), TIMEOUT);
        let b = back.query(&ep, &nonrec(&q), TIMEOUT);
        assert_eq!((a.kind, a.remaining_ttl), (b.kind, b.remaining_ttl));
        assert_eq!(b.remaining_ttl, Some(2400));
        // identical continuations, including random latency draws
        for _ in 0..20 {
            assert_eq!(net.query(&ep, &q, TIMEOUT), back.query(&ep, &q, TIMEOUT));
        }
        back.advance_time(4000);
        assert_eq!(back.events().last().map(|e| e.kind), Some(SimEventKind::Restart));
    }

    fn endpoint_after(ep: &ResolverEndpoint) -> ResolverEndpoint {
        ResolverEndpoint::dns(Ipv4Addr::from(u32::from(ep.addr) + 1))
    }

    #[test]
    fn restart_erases_written_bit() {
        let (mut net, ep, q) = fabric(BehaviorProfile::default());
        net.schedule_restart(&ep, 100).unwrap();
        assert!(net.query(&ep, &q, TIMEOUT).is_hit());
        net.advance_time(101);
        assert_eq!(net.query(&ep, &nonrec(&q), TIMEOUT).kind, OutcomeKind::Miss);
        assert_eq!(net.events()[0].kind, SimEventKind::Restart);
        assert_eq!(net.events()[0].time, 100);
    }

    #[test]
    fn restart_window_is_half_open() {
        let (mut net, ep, q) = fabric(BehaviorProfile::default());
        net.schedule_restart(&ep, 0).unwrap();
        net.query(&ep, &q, TIMEOUT);
        net.advance_time(5);
        assert!(net.query(&ep, &nonrec(&q), TIMEOUT).is_hit());
    }

    #[test]
    fn zero_advance_is_noop() {
        let (mut net, ep, q) = fabric(BehaviorProfile::default());
        net.query(&ep, &q, TIMEOUT);
        net.advance_time(0);
        assert_eq!(net.now(), 0);
        assert_eq!(net.resolver(&ep).unwrap().cache_size(), 1);
    }

    #[test]
    fn flush_boundary_purges_expired() {
        let (mut net, ep, _) = fabric(BehaviorProfile::default());
        let short = DomainName::new("short.example").unwrap();
        net.universe_mut().insert(short.clone(), RecordType::A, RecordData::A(Ipv4Addr::LOCALHOST), 10);
        net.query(&ep, &DnsQuestion::new(short, RecordType::A, QueryMode::Recursive), TIMEOUT);
        net.advance_time(3599);
        assert_eq!(net.resolver(&ep).unwrap().cache_size(), 1);
        net.advance_time(1);
        assert_eq!(net.resolver(&ep).unwrap().cache_size(), 0);
    }

    #[test]
    fn unknown_endpoint_times_out_after_retries() {
        let (mut net, _, q) = fabric(BehaviorProfile::default());
        let ghost = ResolverEndpoint::dns(Ipv4Addr::new(10, 9, 9, 9));
        assert_eq!(net.query(&ghost, &q, TIMEOUT).kind, OutcomeKind::Timeout);
        assert_eq!(net.transcript()[0].attempts, 3);
    }

    #[test]
    fn lost_answers_still_cache() {
        let (mut net, ep, q) = fabric(Preset::Lossy.profile());
        net.resolver_mut(&ep).unwrap().profile.answer_loss_prob = 0.999;
        net.set_retries(0);
        assert_eq!(net.query(&ep, &q, TIMEOUT).kind, OutcomeKind::Timeout);
        assert_eq!(net.resolver(&ep).unwrap().cache_size(), 1);
    }

    #[test]
    fn wait_until_advances() {
        let (mut net, _, _) = fabric(BehaviorProfile::default());
        net.wait_until(500);
        assert_eq!(net.now(), 500);
        net.wait_until(100);
        assert_eq!(net.now(), 500);
    }

    #[test]
    fn lookup_endpoint_does_not_cache() {
        let (mut net, _, q) = fabric(BehaviorProfile::default());
        assert!(net.query(&LOOKUP_ENDPOINT, &q, TIMEOUT).is_hit());
        assert_eq!(net.query(&LOOKUP_ENDPOINT, &nonrec(&q), TIMEOUT).kind, OutcomeKind::Miss);
        assert!(!net.endpoints().contains(&LOOKUP_ENDPOINT));
    }

    #[test]
    fn duplicate_and_invalid_resolvers_rejected() {
        let (mut net, ep, _) = fabric(BehaviorProfile::default());
        assert_eq!(net.add_resolver(ep, BehaviorProfile::default()), Err(SimError::DuplicateResolver(ep)));
        let bad = BehaviorProfile { recursive_on_rd0: true, answers_nonrecursive: false, ..Default::default() };
        assert!(net.add_resolver(ResolverEndpoint::dns(Ipv4Addr::new(10, 0, 0, 2)), bad).is_err());
    }

    #[test]
    fn identical_seeds_identical_transcripts() {
        let run = || {
            let (mut net, ep, q) = fabric(Preset::Lossy.profile());
            for t in 0..200 {
                net.query(&ep, &q, 60);
                net.query(&ep, &nonrec(&q), 60);
                net.advance_time(t * 17);
            }
            net.take_transcript()
        };
        assert_eq!(run(), run());
    }
}
