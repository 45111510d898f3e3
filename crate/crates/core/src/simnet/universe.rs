//! Flat authoritative namespace for the simulator.
//!
//! Records come from two places: an explicit map, and a procedural space of
//! reverse-lookup hosts. The procedural space maps every IPv4 address to an
//! ISP-style hostname `h<8 hex>.isp<3 digits>.net` (always 20 octets), with
//! a deterministic resolvability flag and a TTL drawn from the measured
//! distribution of popular TTL values.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::dns_wire::{DomainName, RecordData, RecordType};

/// Most frequent authoritative TTLs and their counts out of 2,000,000
/// harvested names.
pub const TTL_TABLE: [(u32, u64); 10] = [
    (1200, 13_595),
    (1800, 7_269),
    (3600, 201_789),
    (7200, 171_685),
    (43200, 180_144),
    (86400, 998_450),
    (172800, 77_326),
    (259200, 12_317),
    (432000, 13_450),
    (604800, 42_142),
];
pub const TTL_SAMPLE_SIZE: u64 = 2_000_000;
pub const MAX_SYNTHETIC_TTL: u32 = 604_800;
/// TTL of the per-provider `www` records used by prefetching.
pub const APEX_TTL: u32 = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticHosts {
    /// Fraction of addresses whose reverse lookup yields a hostname.
    pub resolvable_fraction: f64,
    /// Number of ISP suffixes; sizes follow a 1/k law.
    pub providers: u32,
}

impl Default for SyntheticHosts {
    fn default() -> Self {
        SyntheticHosts { resolvable_fraction: 0.5, providers: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseRecord {
    pub qtype: RecordType,
    pub data: RecordData,
    pub ttl: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthoritativeUniverse {
    seed: u64,
    explicit: BTreeMap<DomainName, Vec<UniverseRecord>>,
    synthetic: Option<SyntheticHosts>,
    #[serde(skip)]
    provider_cdf: Vec<f64>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, ip: Ipv4Addr, salt: u64) -> u64 {
    splitmix(seed ^ splitmix(u64::from(u32::from(ip)) ^ salt.wrapping_mul(0xa076_1d64_78bd_642f)))
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Maps a uniform draw in `[0, TTL_SAMPLE_SIZE)` to a TTL. Draws beyond the
/// listed values fall on the long tail, spread uniformly over `[0, 7 days]`.
pub fn ttl_for_draw(draw: u64, tail: u64) -> u32 {
    let mut acc = 0;
    for &(ttl, count) in &TTL_TABLE {
        acc += count;
        if draw < acc {
            return ttl;
        }
    }
    (tail % (u64::from(MAX_SYNTHETIC_TTL) + 1)) as u32
}

impl AuthoritativeUniverse {
    pub fn new(seed: u64) -> AuthoritativeUniverse {
        AuthoritativeUniverse { seed, explicit: BTreeMap::new(), synthetic: None, provider_cdf: Vec::new() }
    }

    pub fn with_synthetic(seed: u64, hosts: SyntheticHosts) -> AuthoritativeUniverse {
        let mut u = AuthoritativeUniverse::new(seed);
        u.synthetic = Some(hosts);
        u.rebuild();
        u
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn synthetic(&self) -> Option<&SyntheticHosts> {
        self.synthetic.as_ref()
    }

    /// Recomputes derived tables; needed after deserialization.
    pub(crate) fn rebuild(&mut self) {
        self.provider_cdf.clear();
        if let Some(s) = &self.synthetic {
            let total: f64 = (1..=s.providers).map(|k| 1.0 / f64::from(k)).sum();
            let mut acc = 0.0;
            for k in 1..=s.providers {
                acc += 1.0 / f64::from(k) / total;
                self.provider_cdf.push(acc);
            }
        }
    }

    pub fn insert(&mut self, name: DomainName, qtype: RecordType, data: RecordData, ttl: u32) {
        let recs = self.explicit.entry(name).or_default();
        recs.retain(|r| r.qtype != qtype);
        recs.push(UniverseRecord { qtype, data, ttl });
    }

    pub fn explicit_len(&self) -> usize {
        self.explicit.len()
    }

    fn provider_of(&self, ip: Ipv4Addr) -> u32 {
        let u = unit(mix(self.seed, ip, 1));
        self.provider_cdf.iter().position(|&c| u < c).unwrap_or(self.provider_cdf.len().saturating_sub(1)) as u32
    }

    fn is_resolvable(&self, ip: Ipv4Addr) -> bool {
        match &self.synthetic {
            Some(s) => unit(mix(self.seed, ip, 0)) < s.resolvable_fraction,
            None => false,
        }
    }

    fn synthetic_ttl(&self, ip: Ipv4Addr) -> u32 {
        ttl_for_draw(mix(self.seed, ip, 2) % TTL_SAMPLE_SIZE, mix(self.seed, ip, 3))
    }

    /// Hostname a resolvable address reverse-maps to.
    pub fn hostname_of(&self, ip: Ipv4Addr) -> Option<DomainName> {
        if !self.is_resolvable(ip) {
            return None;
        }
        let name = format!("h{:08x}.isp{:03}.net", u32::from(ip), self.provider_of(ip));
        DomainName::new(&name).ok()
    }

    fn parse_synthetic(&self, name: &DomainName) -> Option<Ipv4Addr> {
        let mut labels = name.labels();
        let host = labels.next()?;
        let isp = labels.next()?;
        if labels.next()? != "net" || labels.next().is_some() {
            return None;
        }
        let hex = host.strip_prefix('h').filter(|h| h.len() == 8)?;
        let ip = Ipv4Addr::from(u32::from_str_radix(hex, 16).ok()?);
        let p: u32 = isp.strip_prefix("isp").filter(|p| p.len() == 3)?.parse().ok()?;
        (self.is_resolvable(ip) && self.provider_of(ip) == p).then_some(ip)
    }

    fn parse_reverse(name: &DomainName) -> Option<Ipv4Addr> {
        let rest = name.as_str().strip_suffix(".in-addr.arpa")?;
        let parts: Vec<u8> = rest.split('.').map(|p| p.parse().ok()).collect::<Option<_>>()?;
        match parts[..] {
            [d, c, b, a] => Some(Ipv4Addr::new(a, b, c, d)),
            _ => None,
        }
    }

    fn provider_apex(&self, name: &DomainName) -> Option<u32> {
        let s = self.synthetic.as_ref()?;
        let rest = name.as_str().strip_prefix("www.isp")?.strip_suffix(".net")?;
        let p: u32 = rest.parse().ok().filter(|_| rest.len() == 3)?;
        (p < s.providers).then_some(p)
    }

    /// Authoritative answer for `(name, qtype)`.
    pub fn lookup(&self, name: &DomainName, qtype: RecordType) -> Option<(RecordData, u32)> {
        if let Some(recs) = self.explicit.get(name) {
            return recs.iter().find(|r| r.qtype == qtype).map(|r| (r.data.clone(), r.ttl));
        }
        self.synthetic.as_ref()?;
        match qtype {
            RecordType::A => {
                if let Some(ip) = self.parse_synthetic(name) {
                    return Some((RecordData::A(ip), self.synthetic_ttl(ip)));
                }
                self.provider_apex(name)
                    .map(|p| (RecordData::A(Ipv4Addr::new(198, 51, 100, (p % 256) as u8)), APEX_TTL))
            }
            RecordType::Ptr => {
                let ip = Self::parse_reverse(name)?;
                let host = self.hostname_of(ip)?;
                Some((RecordData::Name(host), self.synthetic_ttl(ip)))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn universe() -> AuthoritativeUniverse {
        AuthoritativeUniverse::with_synthetic(11, SyntheticHosts::default())
    }

    #[test]
    fn table_counts_fit_the_sample() {
        let listed: u64 = TTL_TABLE.iter().map(|&(_, c)| c).sum();
        assert_eq!(listed, 1_718_167);
        assert!(listed < TTL_SAMPLE_SIZE);
    }

    #[test]
    fn hostnames_are_twenty_octets_and_resolve() {
        let u = universe();
        let mut found = 0;
        for i in 0..2000u32 {
            let ip = Ipv4Addr::from(0x0a00_0000 + i * 7919);
            if let Some(host) = u.hostname_of(ip) {
                found += 1;
                assert_eq!(host.as_str().len(), 20);
                let (data, ttl) = u.lookup(&host, RecordType::A).unwrap();
                assert_eq!(data, RecordData::A(ip));
                assert!(ttl <= MAX_SYNTHETIC_TTL);
                let (ptr, ptr_ttl) = u.lookup(&DomainName::reverse_of(ip), RecordType::Ptr).unwrap();
                assert_eq!(ptr, RecordData::Name(host));
                assert_eq!(ptr_ttl, ttl);
            } else {
                assert!(u.lookup(&DomainName::reverse_of(ip), RecordType::Ptr).is_none());
            }
        }
        // resolvable fraction 0.5
        assert!((800..1200).contains(&found), "{found}");
    }

    #[test]
    fn wrong_provider_does_not_resolve() {
        let u = universe();
        let ip = (0..).map(|i| Ipv4Addr::from(0x0b00_0000 + i)).find(|ip| u.hostname_of(*ip).is_some()).unwrap();
        let host = u.hostname_of(ip).unwrap();
        let p: u32 = host.as_str()[13..16].parse().unwrap();
        let other = format!("h{:08x}.isp{:03}.net", u32::from(ip), (p + 1) % 64);
        assert!(u.lookup(&DomainName::new(&other).unwrap(), RecordType::A).is_none());
        assert!(u.lookup(&host, RecordType::Txt).is_none());
    }

    #[test]
    fn ttl_distribution_tracks_table() {
        let u = universe();
        let mut day = 0;
        let n = 20_000u32;
        for i in 0..n {
            if u.synthetic_ttl(Ipv4Addr::from(i.wrapping_mul(2_654_435_761))) == 86400 {
                day += 1;
            }
        }
        let frac = f64::from(day) / f64::from(n);
        assert!((frac - 0.499).abs() < 0.02, "{frac}");
    }

    #[test]
    fn explicit_records_shadow_synthetic() {
        let mut u = universe();
        let name = DomainName::new("example.org").unwrap();
        u.insert(name.clone(), RecordType::A, RecordData::A(Ipv4Addr::new(192, 0, 2, 7)), 300);
        assert_eq!(u.lookup(&name, RecordType::A), Some((RecordData::A(Ipv4Addr::new(192, 0, 2, 7)), 300)));
        assert_eq!(u.lookup(&DomainName::new("www.isp003.net").unwrap(), RecordType::A).unwrap().1, APEX_TTL);
    }

    #[test]
    fn lookup_is_deterministic() {
        let a = universe();
        let b = universe();
        for i in 0..500u32 {
            let ip = Ipv4Addr::from(i * 104_729);
            assert_eq!(a.hostname_of(ip), b.hostname_of(ip));
        }
    }
}
