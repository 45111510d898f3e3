//! Reliable-resolver dataset construction and the TTL-bucketed domain pool.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns_wire::{
    DnsQuestion, DomainName, OutcomeKind, QueryMode, QueryOutcome, RecordData, RecordType, ResolverEndpoint, Transport,
};
use crate::simnet::BehaviorProfile;

const DATASET_HEADER: &str = "# ephpub-resolvers v1";
const POOL_HEADER: &str = "# ephpub-domains v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("need {needed} probe domains with TTL {ttl}, pool has {have}")]
    ProbeDomains { needed: usize, ttl: u32, have: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Recursion,
    Caching,
    TtlCompliance,
    Persistence,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Recursion, Stage::Caching, Stage::TtlCompliance, Stage::Persistence];

    fn tag(self) -> &'static str {
        match self {
            Stage::Recursion => "recursion",
            Stage::Caching => "caching",
            Stage::TtlCompliance => "ttl",
            Stage::Persistence => "persistence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Reliable,
    Unreachable,
    Rejected(Stage),
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::Reliable => f.write_str("reliable"),
            Classification::Unreachable => f.write_str("unreachable"),
            Classification::Rejected(s) => write!(f, "rejected:{}", s.tag()),
        }
    }
}

impl FromStr for Classification {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reliable" => Ok(Classification::Reliable),
            "unreachable" => Ok(Classification::Unreachable),
            other => other
                .strip_prefix("rejected:")
                .and_then(|t| Stage::ALL.into_iter().find(|s| s.tag() == t))
                .map(Classification::Rejected)
                .ok_or_else(|| format!("unknown classification {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub time: u64,
    pub qname: DomainName,
    pub mode: QueryMode,
    pub outcome: OutcomeKind,
    pub ttl: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: Stage,
    pub passed: bool,
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolverAssessment {
    pub endpoint: ResolverEndpoint,
    pub stage_results: Vec<StageResult>,
    pub classification: Classification,
    /// Largest deviation between observed and expected TTLs, when measured.
    pub observed_ttl_skew: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSchedule {
    /// Authoritative TTL of the probe domains.
    pub probe_ttl: u32,
    /// Allowed TTL mismatch in the compliance stage.
    pub ttl_slack: u32,
    pub timeout_ms: u32,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        ProbeSchedule { probe_ttl: 86400, ttl_slack: 2, timeout_ms: 2000 }
    }
}

impl ProbeSchedule {
    /// Margin around the expiry instant for the persistence checks.
    pub fn delta(&self) -> u32 {
        (self.probe_ttl / 20).max(2)
    }
}

/// Two domains written then read back, and two never written that must
/// stay absent under non-recursive queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeDomains {
    pub written: [DomainName; 2],
    pub fresh: [DomainName; 2],
    pub qtype: RecordType,
}

impl ProbeDomains {
    /// Draws four distinct pool domains whose TTL equals `ttl`.
    pub fn from_pool<R: Rng>(pool: &DomainPool, ttl: u32, rng: &mut R) -> Result<ProbeDomains, DatasetError> {
        let bucket = pool.bucket(ttl);
        let picks: Vec<&DomainCandidate> = bucket.choose_multiple(rng, 4).copied().collect();
        if picks.len() < 4 {
            return Err(DatasetError::ProbeDomains { needed: 4, ttl, have: bucket.len() });
        }
        Ok(ProbeDomains {
            written: [picks[0].name.clone(), picks[1].name.clone()],
            fresh: [picks[2].name.clone(), picks[3].name.clone()],
            qtype: picks[0].qtype,
        })
    }
}

struct Probe {
    assessment: ResolverAssessment,
    answered_ttls: Vec<(u64, u32)>,
    done: bool,
}

impl Probe {
    fn record(&mut self, stage: Stage, passed: bool, evidence: Vec<Evidence>) {
        self.assessment.stage_results.push(StageResult { stage, passed, evidence });
        if !passed {
            self.assessment.classification = Classification::Rejected(stage);
            self.done = true;
        }
    }
}

fn evidence(time: u64, q: &DnsQuestion, out: &QueryOutcome) -> Evidence {
    Evidence { time, qname: q.qname.clone(), mode: q.mode, outcome: out.kind, ttl: out.remaining_ttl }
}

/// Runs one round of queries for every live probe. Returns per-probe
/// evidence in question order.
fn round<T: Transport>(
    t: &mut T,
    probes: &[Probe],
    names: &[&DomainName],
    qtype: RecordType,
    mode: QueryMode,
    timeout_ms: u32,
) -> Vec<Option<Vec<Evidence>>> {
    let live: Vec<usize> = (0..probes.len()).filter(|&i| !probes[i].done).collect();
    let mut reqs = Vec::with_capacity(live.len() * names.len());
    for &i in &live {
        for n in names {
            reqs.push((probes[i].assessment.endpoint, DnsQuestion::new((*n).clone(), qtype, mode)));
        }
    }
    let time = t.now();
    let outs = t.query_batch(&reqs, timeout_ms);
    let mut result = vec![None; probes.len()];
    for (k, &i) in live.iter().enumerate() {
        let ev = (0..names.len())
            .map(|j| {
                let idx = k * names.len() + j;
                evidence(time, &reqs[idx].1, &outs[idx])
            })
            .collect();
        result[i] = Some(ev);
    }
    result
}

/// Classifies every candidate with the four-stage filter. Stages run in
/// lock-step across all candidates, so the whole batch takes one probe TTL
/// plus a margin of (virtual or real) time.
pub fn assess_resolvers<T: Transport>(
    t: &mut T,
    candidates: &[ResolverEndpoint],
    domains: &ProbeDomains,
    schedule: &ProbeSchedule,
) -> Vec<ResolverAssessment> {
    let mut probes: Vec<Probe> = candidates
        .iter()
        .map(|&endpoint| Probe {
            assessment: ResolverAssessment {
                endpoint,
                stage_results: Vec::new(),
                classification: Classification::Reliable,
                observed_ttl_skew: None,
            },
            answered_ttls: Vec::new(),
            done: false,
        })
        .collect();
    let written: Vec<&DomainName> = domains.written.iter().collect();
    let fresh: Vec<&DomainName> = domains.fresh.iter().collect();
    let to = schedule.timeout_ms;
    let t0 = t.now();

    let rec = round(t, &probes, &written, domains.qtype, QueryMode::Recursive, to);
    for (p, ev) in probes.iter_mut().zip(rec) {
        let Some(ev) = ev else { continue };
        if ev.iter().all(|e| e.outcome == OutcomeKind::Timeout) {
            p.record(Stage::Recursion, false, ev);
            p.assessment.classification = Classification::Unreachable;
            continue;
        }
        let ok = ev.iter().all(|e| e.outcome == OutcomeKind::Hit);
        p.answered_ttls = ev.iter().filter_map(|e| e.ttl.map(|ttl| (e.time, ttl))).collect();
        p.record(Stage::Recursion, ok, ev);
    }

    let cached = round(t, &probes, &written, domains.qtype, QueryMode::NonRecursive, to);
    for (p, ev) in probes.iter_mut().zip(cached) {
        let Some(ev) = ev else { continue };
        let ok = ev.iter().all(|e| e.outcome == OutcomeKind::Hit);
        if ok {
            p.answered_ttls.extend(ev.iter().filter_map(|e| e.ttl.map(|ttl| (e.time, ttl))));
        }
        p.record(Stage::Caching, ok, ev);
    }

    for p in probes.iter_mut().filter(|p| !p.done) {
        let skew = p
            .answered_ttls
            .iter()
            .map(|&(time, ttl)| {
                let expected = i64::from(schedule.probe_ttl) - (time - t0) as i64;
                (i64::from(ttl) - expected).unsigned_abs()
            })
            .max()
            .unwrap_or(0);
        let skew = u32::try_from(skew).unwrap_or(u32::MAX);
        p.assessment.observed_ttl_skew = Some(skew);
        p.record(Stage::TtlCompliance, skew <= schedule.ttl_slack, Vec::new());
    }

    let ttl = u64::from(schedule.probe_ttl);
    let delta = u64::from(schedule.delta());
    t.wait_until(t0 + ttl - delta);
    let before = round(t, &probes, &written, domains.qtype, QueryMode::NonRecursive, to);
    let mut persistence: Vec<Vec<Evidence>> = vec![Vec::new(); probes.len()];
    for (i, ev) in before.into_iter().enumerate() {
        let Some(ev) = ev else { continue };
        let ok = ev.iter().all(|e| e.outcome == OutcomeKind::Hit);
        if !ok {
            probes[i].record(Stage::Persistence, false, ev);
        } else {
            persistence[i] = ev;
        }
    }
    t.wait_until(t0 + ttl + delta);
    let mut names = written.clone();
    names.extend(fresh.iter().copied());
    let after = round(t, &probes, &names, domains.qtype, QueryMode::NonRecursive, to);
    for (i, ev) in after.into_iter().enumerate() {
        let Some(ev) = ev else { continue };
        let ok = ev.iter().all(|e| e.outcome == OutcomeKind::Miss);
        persistence[i].extend(ev);
        let ev = std::mem::take(&mut persistence[i]);
        probes[i].record(Stage::Persistence, ok, ev);
    }
    probes.into_iter().map(|p| p.assessment).collect()
}

pub fn probe_resolver<T: Transport>(
    t: &mut T,
    endpoint: ResolverEndpoint,
    domains: &ProbeDomains,
    schedule: &ProbeSchedule,
) -> ResolverAssessment {
    assess_resolvers(t, &[endpoint], domains, schedule).pop().expect("one candidate, one assessment")
}

/// Population left after each filter row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub candidates: usize,
    pub reachable: usize,
    pub caching: usize,
    pub ttl_compliant: usize,
    pub reliable: usize,
}

impl PipelineStats {
    pub fn from_assessments(assessments: &[ResolverAssessment]) -> PipelineStats {
        let count = |pred: &dyn Fn(&Classification) -> bool| assessments.iter().filter(|a| pred(&a.classification)).count();
        let reachable = count(&|c| *c != Classification::Unreachable);
        let after_caching =
            count(&|c| !matches!(c, Classification::Unreachable | Classification::Rejected(Stage::Recursion | Stage::Caching)));
        let reliable = count(&|c| *c == Classification::Reliable);
        PipelineStats {
            candidates: assessments.len(),
            reachable,
            caching: after_caching,
            ttl_compliant: reliable + count(&|c| *c == Classification::Rejected(Stage::Persistence)),
            reliable,
        }
    }

    /// Fraction surviving each row relative to the row's input.
    pub fn survival_rates(&self) -> [f64; 4] {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        [
            ratio(self.reachable, self.candidates),
            ratio(self.caching, self.reachable),
            ratio(self.ttl_compliant, self.caching),
            ratio(self.reliable, self.ttl_compliant),
        ]
    }
}

impl fmt::Display for PipelineStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rates = self.survival_rates();
        writeln!(f, "{:<22} {:>9} {:>9} {:>9} {:>7}", "stage", "input", "fail", "pass", "rate")?;
        let rows = [
            ("reachable", self.candidates, self.reachable),
            ("recursion+caching", self.reachable, self.caching),
            ("ttl compliance", self.caching, self.ttl_compliant),
            ("persistence", self.ttl_compliant, self.reliable),
        ];
        for ((name, input, pass), rate) in rows.into_iter().zip(rates) {
            writeln!(f, "{name:<22} {input:>9} {:>9} {pass:>9} {rate:>7.3}", input - pass)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub endpoint: ResolverEndpoint,
    pub classification: Classification,
    pub observed_ttl_skew: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolverDataset {
    entries: Vec<DatasetEntry>,
}

impl ResolverDataset {
    pub fn from_assessments(assessments: &[ResolverAssessment]) -> ResolverDataset {
        let mut d = ResolverDataset::default();
        d.merge(assessments.iter().map(|a| DatasetEntry {
            endpoint: a.endpoint,
            classification: a.classification,
            observed_ttl_skew: a.observed_ttl_skew,
        }));
        d
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reliable(&self) -> Vec<ResolverEndpoint> {
        self.entries.iter().filter(|e| e.classification == Classification::Reliable).map(|e| e.endpoint).collect()
    }

    /// Newer entries replace older ones for the same endpoint.
    pub fn merge(&mut self, newer: impl IntoIterator<Item = DatasetEntry>) {
        let mut map: BTreeMap<ResolverEndpoint, DatasetEntry> = self.entries.drain(..).map(|e| (e.endpoint, e)).collect();
        for e in newer {
            map.insert(e.endpoint, e);
        }
        self.entries = map.into_values().collect();
    }

    pub fn remove_blocked(&mut self, blocked: &[ResolverEndpoint]) -> usize {
        let before = self.entries.len();
        let blocked: HashSet<_> = blocked.iter().collect();
        self.entries.retain(|e| !blocked.contains(&e.endpoint));
        before - self.entries.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DATASET_HEADER}\n# addr port classification observed_ttl_skew\n");
        for e in &self.entries {
            let skew = e.observed_ttl_skew.map_or("-".to_string(), |s| s.to_string());
            out.push_str(&format!("{} {} {} {}\n", e.endpoint.addr, e.endpoint.port, e.classification, skew));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ResolverDataset, DatasetError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == DATASET_HEADER => {}
            _ => return Err(DatasetError::Format { line: 1, reason: format!("expected header {DATASET_HEADER:?}") }),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| DatasetError::Format { line: i + 1, reason };
            let f: Vec<&str> = line.split_whitespace().collect();
            let [addr, port, class, skew] = f[..] else {
                return Err(bad("expected 4 fields".into()));
            };
            let addr: Ipv4Addr = addr.parse().map_err(|_| bad(format!("bad address {addr:?}")))?;
            let port: u16 = port.parse().map_err(|_| bad(format!("bad port {port:?}")))?;
            let classification = class.parse().map_err(bad)?;
            let observed_ttl_skew = match skew {
                "-" => None,
                s => Some(s.parse().map_err(|_| bad(format!("bad skew {s:?}")))?),
            };
            entries.push(DatasetEntry { endpoint: ResolverEndpoint::new(addr, port), classification, observed_ttl_skew });
        }
        let mut d = ResolverDataset::default();
        d.merge(entries);
        Ok(d)
    }
}

/// What the filter should conclude about a simulated profile.
pub fn expected_classification(profile: &BehaviorProfile, schedule: &ProbeSchedule) -> Classification {
    let ttl = schedule.probe_ttl;
    if profile.answer_loss_prob >= 1.0 {
        Classification::Unreachable
    } else if !profile.answers_recursive {
        Classification::Rejected(Stage::Recursion)
    } else if !profile.caches || !profile.answers_nonrecursive {
        Classification::Rejected(Stage::Caching)
    } else if profile.ttl_override.is_some_and(|o| o.abs_diff(ttl) > schedule.ttl_slack) {
        Classification::Rejected(Stage::TtlCompliance)
    } else if profile.recursive_on_rd0
        || profile.max_residency.is_some_and(|r| r <= ttl - schedule.delta())
    {
        Classification::Rejected(Stage::Persistence)
    } else {
        Classification::Reliable
    }
}

pub struct DatasetBuild {
    pub dataset: ResolverDataset,
    pub assessments: Vec<ResolverAssessment>,
    pub stats: PipelineStats,
}

pub fn build_resolver_dataset<T: Transport>(
    t: &mut T,
    candidates: &[ResolverEndpoint],
    domains: &ProbeDomains,
    schedule: &ProbeSchedule,
) -> DatasetBuild {
    let assessments = assess_resolvers(t, candidates, domains, schedule);
    DatasetBuild {
        dataset: ResolverDataset::from_assessments(&assessments),
        stats: PipelineStats::from_assessments(&assessments),
        assessments,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainCandidate {
    pub name: DomainName,
    pub authoritative_ttl: u32,
    pub qtype: RecordType,
    /// Random address whose reverse lookup produced `name`.
    pub source_ip: Ipv4Addr,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainPool {
    entries: Vec<DomainCandidate>,
    seen: HashSet<(DomainName, RecordType)>,
}

impl DomainPool {
    pub fn new(entries: Vec<DomainCandidate>) -> DomainPool {
        let mut p = DomainPool::default();
        for e in entries {
            p.push(e);
        }
        p
    }

    fn push(&mut self, c: DomainCandidate) -> bool {
        if !self.seen.insert((c.name.clone(), c.qtype)) {
            return false;
        }
        self.entries.push(c);
        true
    }

    pub fn entries(&self) -> &[DomainCandidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bucket(&self, ttl: u32) -> Vec<&DomainCandidate> {
        self.entries.iter().filter(|e| e.authoritative_ttl == ttl).collect()
    }

    /// Candidates whose TTL lies within `tolerance` (a fraction) of `target`.
    pub fn near(&self, target: u32, tolerance: f64) -> Vec<&DomainCandidate> {
        let slack = f64::from(target) * tolerance;
        self.entries.iter().filter(|e| (f64::from(e.authoritative_ttl) - f64::from(target)).abs() <= slack).collect()
    }

    pub fn bucket_sizes(&self) -> BTreeMap<u32, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.authoritative_ttl).or_insert(0) += 1;
        }
        m
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{POOL_HEADER}\n# ttl qtype name source_ip\n");
        for e in &self.entries {
            out.push_str(&format!("{} {} {} {}\n", e.authoritative_ttl, e.qtype, e.name, e.source_ip));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<DomainPool, DatasetError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == POOL_HEADER => {}
            _ => return Err(DatasetError::Format { line: 1, reason: format!("expected header {POOL_HEADER:?}") }),
        }
        let mut pool = DomainPool::default();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| DatasetError::Format { line: i + 1, reason };
            let f: Vec<&str> = line.split_whitespace().collect();
            let [ttl, qtype, name, src] = f[..] else {
                return Err(bad("expected 4 fields".into()));
            };
            pool.push(DomainCandidate {
                authoritative_ttl: ttl.parse().map_err(|_| bad(format!("bad ttl {ttl:?}")))?,
                qtype: qtype.parse().map_err(bad)?,
                name: DomainName::new(name).map_err(|e| bad(e.to_string()))?,
                source_ip: src.parse().map_err(|_| bad(format!("bad address {src:?}")))?,
            });
        }
        Ok(pool)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestReport {
    pub pool: DomainPool,
    /// Random addresses tried.
    pub attempts: usize,
    /// Addresses whose name resolved, whether or not its TTL was kept.
    pub resolved: usize,
    pub warnings: Vec<String>,
}

/// Samples random IPv4 addresses, reverse-resolves them through `lookup`
/// (which should not cache) and records each resulting hostname with its
/// authoritative A-record TTL. Stops after `count` names resolved; only
/// TTLs listed in `buckets` are pooled (all of them when `buckets` is
/// empty). Gives up after `20 * count + 100` addresses.
pub fn harvest_domains<T: Transport, R: Rng>(
    t: &mut T,
    lookup: ResolverEndpoint,
    count: usize,
    buckets: &[u32],
    timeout_ms: u32,
    rng: &mut R,
) -> HarvestReport {
    let mut pool = DomainPool::default();
    let mut attempts = 0;
    let mut resolved = 0;
    let budget = count.saturating_mul(20).saturating_add(100);
    let mut warnings = Vec::new();
    while resolved < count {
        if attempts >= budget {
            warnings.push(format!("gave up after {attempts} addresses with {resolved} of {count} names resolved"));
            break;
        }
        attempts += 1;
        let ip = Ipv4Addr::from(rng.gen::<u32>());
        let ptr = DnsQuestion::new(DomainName::reverse_of(ip), RecordType::Ptr, QueryMode::Recursive);
        let out = t.query(&lookup, &ptr, timeout_ms);
        let Some(RecordData::Name(host)) = out.answer.filter(|_| out.kind == OutcomeKind::Hit) else { continue };
        let fwd = DnsQuestion::new(host.clone(), RecordType::A, QueryMode::Recursive);
        let out = t.query(&lookup, &fwd, timeout_ms);
        let Some(ttl) = out.remaining_ttl.filter(|_| out.kind == OutcomeKind::Hit) else { continue };
        resolved += 1;
        if buckets.is_empty() || buckets.contains(&ttl) {
            pool.push(DomainCandidate { name: host, authoritative_ttl: ttl, qtype: RecordType::A, source_ip: ip });
        }
    }
    let sizes = pool.bucket_sizes();
    for b in buckets {
        if !sizes.contains_key(b) {
            warnings.push(format!("no domains harvested with TTL {b}"));
        }
    }
    HarvestReport { pool, attempts, resolved, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::scenario::{table1_counts, Scenario};
    use crate::simnet::{Preset, SimNet, LOOKUP_ENDPOINT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn net_with(presets: &[Preset]) -> (SimNet, Vec<ResolverEndpoint>) {
        let mut s = Scenario::default();
        s.population.size = 0;
        let mut net = s.build().unwrap();
        let eps = presets
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let ep = ResolverEndpoint::dns(Ipv4Addr::new(10, 1, 0, i as u8 + 1));
                net.add_resolver(ep, p.profile()).unwrap();
                ep
            })
            .collect();
        (net, eps)
    }

    fn probe_domains(net: &mut SimNet, ttl: u32) -> ProbeDomains {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let report = harvest_domains(net, LOOKUP_ENDPOINT, 200, &[ttl], 2000, &mut rng);
        ProbeDomains::from_pool(&report.pool, ttl, &mut rng).unwrap()
    }

    #[test]
    fn each_preset_lands_in_its_stage() {
        let (mut net, eps) = net_with(&Preset::ALL[..8]);
        let schedule = ProbeSchedule::default();
        let domains = probe_domains(&mut net, schedule.probe_ttl);
        let got = assess_resolvers(&mut net, &eps, &domains, &schedule);
        let classes: Vec<Classification> = got.iter().map(|a| a.classification).collect();
        use Classification::*;
        assert_eq!(
            classes,
            vec![
                Reliable,
                Unreachable,
                Rejected(Stage::Recursion),
                Rejected(Stage::Caching),
                Rejected(Stage::Caching),
                Rejected(Stage::TtlCompliance),
                Rejected(Stage::Persistence),
                Rejected(Stage::Persistence),
            ]
        );
        for (p, a) in Preset::ALL.iter().zip(&got) {
            assert_eq!(expected_classification(&p.profile(), &schedule), a.classification, "{p:?}");
        }
        assert_eq!(got[0].observed_ttl_skew, Some(0));
        assert_eq!(got[0].stage_results.len(), 4);
        assert!(got[5].observed_ttl_skew.unwrap() > 80_000);
    }

    #[test]
    fn reliable_evidence_replays_cleanly() {
        let (mut net, eps) = net_with(&[Preset::Compliant]);
        let schedule = ProbeSchedule::default();
        let domains = probe_domains(&mut net, schedule.probe_ttl);
        let a = probe_resolver(&mut net, eps[0], &domains, &schedule);
        assert_eq!(a.classification, Classification::Reliable);
        let persistence = &a.stage_results[3].evidence;
        let t0 = a.stage_results[0].evidence[0].time;
        let ttl = u64::from(schedule.probe_ttl);
        for e in persistence {
            if e.time < t0 + ttl {
                assert_eq!(e.outcome, OutcomeKind::Hit);
            } else {
                assert_eq!(e.outcome, OutcomeKind::Miss);
            }
        }
        assert_eq!(persistence.len(), 6);
    }

    #[test]
    fn table1_population_recovers_rates() {
        let mut s = Scenario::default();
        s.population.table1 = true;
        s.population.size = 2000;
        let mut net = s.build().unwrap();
        let schedule = ProbeSchedule::default();
        let domains = probe_domains(&mut net, schedule.probe_ttl);
        let eps = net.endpoints();
        let build = build_resolver_dataset(&mut net, &eps, &domains, &schedule);
        let counts = table1_counts(2000);
        assert_eq!(build.stats.reliable, counts.iter().find(|c| c.0 == Preset::Compliant).unwrap().1);
        for a in &build.assessments {
            let truth = expected_classification(&net.resolver(&a.endpoint).unwrap().profile, &schedule);
            assert_eq!(truth, a.classification);
        }
        let s = build.stats;
        assert!(s.candidates >= s.reachable && s.reachable >= s.caching && s.caching >= s.ttl_compliant && s.ttl_compliant >= s.reliable);
        assert!(build.stats.to_string().contains("persistence"));
    }

    #[test]
    fn dataset_text_roundtrip_and_merge() {
        let entries = vec![
            DatasetEntry { endpoint: "10.0.0.2".parse().unwrap(), classification: Classification::Reliable, observed_ttl_skew: Some(0) },
            DatasetEntry {
                endpoint: "10.0.0.1:5353".parse().unwrap(),
                classification: Classification::Rejected(Stage::TtlCompliance),
                observed_ttl_skew: Some(86100),
            },
            DatasetEntry { endpoint: "10.0.0.3".parse().unwrap(), classification: Classification::Unreachable, observed_ttl_skew: None },
        ];
        let mut d = ResolverDataset::default();
        d.merge(entries);
        let text = d.to_text();
        assert!(text.starts_with(DATASET_HEADER));
        assert!(text.contains("10.0.0.1 5353 rejected:ttl 86100"));
        assert_eq!(ResolverDataset::from_text(&text).unwrap(), d);
        d.merge([DatasetEntry { endpoint: "10.0.0.3".parse().unwrap(), classification: Classification::Reliable, observed_ttl_skew: Some(1) }]);
        assert_eq!(d.len(), 3);
        assert_eq!(d.reliable().len(), 2);
        assert_eq!(d.remove_blocked(&["10.0.0.2".parse().unwrap()]), 1);
        assert!(ResolverDataset::from_text("10.0.0.1 53 reliable 0").is_err());
        assert!(ResolverDataset::from_text(&format!("{DATASET_HEADER}\n10.0.0.1 53 fine 0")).is_err());
    }

    #[test]
    fn harvest_buckets_and_hygiene() {
        let (mut net, _) = net_with(&[]);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let all: Vec<u32> = crate::simnet::universe::TTL_TABLE.iter().map(|t| t.0).collect();
        let report = harvest_domains(&mut net, LOOKUP_ENDPOINT, 3000, &all, 2000, &mut rng);
        assert_eq!(report.resolved, 3000);
        let sizes = report.pool.bucket_sizes();
        let (&top, _) = sizes.iter().max_by_key(|(_, &n)| n).unwrap();
        assert_eq!(top, 86400);
        for c in report.pool.entries() {
            let (_, ttl) = net.universe().lookup(&c.name, RecordType::A).unwrap();
            assert_eq!(ttl, c.authoritative_ttl);
            assert_eq!(c.name.as_str().len(), 20);
            assert_eq!(net.universe().hostname_of(c.source_ip).as_ref(), Some(&c.name));
        }
        let text = report.pool.to_text();
        assert_eq!(DomainPool::from_text(&text).unwrap(), report.pool);
    }

    #[test]
    fn harvest_edge_cases() {
        let (mut net, _) = net_with(&[]);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let empty = harvest_domains(&mut net, LOOKUP_ENDPOINT, 0, &[86400], 2000, &mut rng);
        assert!(empty.pool.is_empty());
        assert_eq!(empty.attempts, 0);
        let huge = harvest_domains(&mut net, LOOKUP_ENDPOINT, 300, &[1_000_000_000], 2000, &mut rng);
        assert!(huge.pool.is_empty());
        assert_eq!(huge.warnings, vec!["no domains harvested with TTL 1000000000".to_string()]);
    }

    #[test]
    fn near_filters_by_tolerance() {
        let mk = |n: &str, ttl| DomainCandidate {
            name: DomainName::new(n).unwrap(),
            authoritative_ttl: ttl,
            qtype: RecordType::A,
            source_ip: Ipv4Addr::LOCALHOST,
        };
        let pool = DomainPool::new(vec![mk("a.x", 86400), mk("b.x", 95040), mk("c.x", 95041), mk("a.x", 86400)]);
        assert_eq!(pool.len(), 3);
        assert_eq!(pool.near(86400, 0.1).len(), 2);
        assert_eq!(pool.near(86400, 0.0).len(), 1);
        assert!(ProbeDomains::from_pool(&pool, 86400, &mut ChaCha20Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn classification_strings() {
        for c in [
            Classification::Reliable,
            Classification::Unreachable,
            Classification::Rejected(Stage::Recursion),
            Classification::Rejected(Stage::Caching),
            Classification::Rejected(Stage::TtlCompliance),
            Classification::Rejected(Stage::Persistence),
        ] {
            assert_eq!(c.to_string().parse::<Classification>().unwrap(), c);
        }
    }
}
