//! TOML scenario files describing a simulated resolver population.
//!
//! ```toml
//! seed = 7
//! start_time = 1300000000
//!
//! [population]
//! size = 25000
//! first_address = "10.0.0.1"
//! mix = [
//!     { weight = 0.9, profile = "compliant" },
//!     { weight = 0.1, profile = { ttl_override = 300 } },
//! ]
//!
//! [universe]
//! resolvable_fraction = 0.5
//!
//! [[restarts]]
//! resolver = "10.0.0.5"
//! at = 1300003600
//! ```

use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::resolver::{BehaviorProfile, Preset};
use super::universe::{AuthoritativeUniverse, SyntheticHosts};
use super::{SimError, SimNet};
use crate::dns_wire::{DomainName, RecordData, RecordType, ResolverEndpoint};

/// Per-row pass rates of the reference resolver survey: reachable, answers
/// and caches correctly, honours TTLs, keeps entries for the full TTL.
pub const TABLE1_PASS_RATES: [f64; 4] = [0.25, 0.57, 0.62, 0.27];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileChoice {
    Preset(Preset),
    Custom(BehaviorProfile),
}

impl ProfileChoice {
    pub fn profile(&self) -> BehaviorProfile {
        match self {
            ProfileChoice::Preset(p) => p.profile(),
            ProfileChoice::Custom(b) => b.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub weight: f64,
    pub profile: ProfileChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub size: usize,
    pub first_address: Ipv4Addr,
    /// Uses the survey's stage pass rates instead of `mix`.
    pub table1: bool,
    pub mix: Vec<MixEntry>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec { size: 100, first_address: Ipv4Addr::new(10, 0, 0, 1), table1: false, mix: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSpec {
    pub name: DomainName,
    pub ttl: u32,
    #[serde(default = "localhost")]
    pub address: Ipv4Addr,
}

fn localhost() -> Ipv4Addr {
    Ipv4Addr::new(192, 0, 2, 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UniverseSpec {
    /// Disables the procedural reverse-lookup host space when false.
    pub synthetic: bool,
    pub resolvable_fraction: f64,
    pub providers: u32,
    pub records: Vec<RecordSpec>,
}

impl Default for UniverseSpec {
    fn default() -> Self {
        let s = SyntheticHosts::default();
        UniverseSpec { synthetic: true, resolvable_fraction: s.resolvable_fraction, providers: s.providers, records: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestartSpec {
    pub resolver: ResolverEndpoint,
    pub at: u64,
}

/// Parameters of the expiry time-series experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub ttl: u32,
    pub keys: usize,
    pub message_bytes: usize,
    /// Offsets from the write time, in seconds.
    pub samples: Vec<u64>,
    /// Number of resolvable domains to harvest for the pool.
    pub harvest: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            ttl: 86400,
            keys: 100,
            message_bytes: 64,
            samples: vec![3600, 21600, 43200, 86040, 86401, 108000, 172800],
            harvest: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub start_time: u64,
    pub retries: u32,
    pub population: PopulationSpec,
    pub universe: UniverseSpec,
    pub restarts: Vec<RestartSpec>,
    pub experiment: ExperimentSpec,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            start_time: 1_300_000_000,
            retries: 2,
            population: PopulationSpec::default(),
            universe: UniverseSpec::default(),
            restarts: Vec::new(),
            experiment: ExperimentSpec::default(),
        }
    }
}

/// Splits `n` by `weights` with largest-remainder rounding so the parts sum
/// to `n` exactly.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || total <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut parts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - parts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        parts[i] += 1;
    }
    parts
}

/// Exact per-preset counts for a survey-shaped population of `n` candidates.
pub fn table1_counts(n: usize) -> Vec<(Preset, usize)> {
    let round = |x: f64| x.round() as usize;
    let [r0, r1, r2, r3] = TABLE1_PASS_RATES;
    let reachable = round(n as f64 * r0);
    let caching = round(reachable as f64 * r1);
    let ttl_ok = round(caching as f64 * r2);
    let reliable = round(ttl_ok as f64 * r3);
    let cache_fail = apportion(reachable - caching, &[1.0, 1.0, 1.0]);
    let persist_fail = apportion(ttl_ok - reliable, &[1.0, 1.0]);
    vec![
        (Preset::Unreachable, n - reachable),
        (Preset::NoRecursion, cache_fail[0]),
        (Preset::NoCache, cache_fail[1]),
        (Preset::NoNonrecursive, cache_fail[2]),
        (Preset::TtlOverride, caching - ttl_ok),
        (Preset::EarlyEviction, persist_fail[0]),
        (Preset::RecursiveOnRd0, persist_fail[1]),
        (Preset::Compliant, reliable),
    ]
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, SimError> {
        toml::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always representable as TOML")
    }

    /// Profiles in address order.
    pub fn profiles(&self) -> Vec<BehaviorProfile> {
        let n = self.population.size;
        let mut profiles: Vec<BehaviorProfile> = if self.population.table1 {
            table1_counts(n).into_iter().flat_map(|(p, c)| std::iter::repeat_n(p.profile(), c)).collect()
        } else if self.population.mix.is_empty() {
            vec![BehaviorProfile::default(); n]
        } else {
            let weights: Vec<f64> = self.population.mix.iter().map(|m| m.weight).collect();
            apportion(n, &weights)
                .into_iter()
                .zip(&self.population.mix)
                .flat_map(|(c, m)| std::iter::repeat_n(m.profile.profile(), c))
                .collect()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ 0x706f_7075_6c61_7465);
        profiles.shuffle(&mut rng);
        profiles
    }

    pub fn build(&self) -> Result<SimNet, SimError> {
        if self.population.mix.iter().any(|m| !(m.weight >= 0.0)) {
            return Err(SimError::Scenario("mix weights must be non-negative".into()));
        }
        let mut universe = if self.universe.synthetic {
            if !(0.0..=1.0).contains(&self.universe.resolvable_fraction) || self.universe.providers == 0 {
                return Err(SimError::Scenario("bad universe parameters".into()));
            }
            AuthoritativeUniverse::with_synthetic(
                self.seed,
                SyntheticHosts { resolvable_fraction: self.universe.resolvable_fraction, providers: self.universe.providers },
            )
        } else {
            AuthoritativeUniverse::new(self.seed)
        };
        for r in &self.universe.records {
            universe.insert(r.name.clone(), RecordType::A, RecordData::A(r.address), r.ttl);
        }
        let mut net = SimNet::new(universe, self.start_time, self.seed);
        net.set_retries(self.retries);
        let base = u32::from(self.population.first_address);
        for (i, profile) in self.profiles().into_iter().enumerate() {
            net.add_resolver(ResolverEndpoint::dns(Ipv4Addr::from(base.wrapping_add(i as u32))), profile)?;
        }
        for r in &self.restarts {
            net.schedule_restart(&r.resolver, r.at)?;
        }
        Ok(net)
    }
}
