//! Storing a key in resolver caches and reading it back.
//!
//! A bit cell is a (resolver, domain) pair. Bit 1 is written with a
//! recursive query that makes the resolver cache the domain; bit 0 is
//! written by doing nothing. Reads are non-recursive queries: Hit means 1,
//! Miss means 0, anything else is an erasure.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::Zeroize;

use crate::crypto::{decrypt_message, encrypt_message, CryptoError, EphemeralKey};
use crate::dataset::{DomainCandidate, DomainPool};
use crate::dns_wire::{
    DnsQuestion, DomainName, OutcomeKind, QueryMode, QueryOutcome, RecordType, ResolverEndpoint, Transport,
};
use crate::epo::{BitCell, EpoError, EpoObject};
use crate::rs6355::{self, KeySize, RsCodeword};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeystoreConfig {
    pub key_size: KeySize,
    pub record_type: RecordType,
    pub timeout_ms: u32,
    /// Issue one value-independent sibling query per cell before writing.
    pub prefetch: bool,
    /// Accepted relative distance between a domain's TTL and the target.
    pub ttl_tolerance: f64,
    /// Fresh (resolver, domain) pairs tried per failed write.
    pub replan_budget: u32,
    /// Reads are refused this many seconds before expiry, to absorb clock skew.
    pub skew_allowance: u64,
    /// Read even when the expiry guard says no.
    pub force: bool,
    /// Minimum separation between TTL clusters for a TTL-skew read.
    pub min_skew_gap: u32,
    /// Try a TTL-skew read when every cell answers Hit and decoding fails.
    pub skew_fallback: bool,
}

impl Default for KeystoreConfig {
    fn default() -> Self {
        KeystoreConfig {
            key_size: KeySize::Bits128,
            record_type: RecordType::A,
            timeout_ms: 2000,
            prefetch: true,
            ttl_tolerance: 0.10,
            replan_budget: 8,
            skew_allowance: 60,
            force: false,
            min_skew_gap: 60,
            skew_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeystoreError {
    #[error("need {needed} distinct resolvers, dataset has {available}")]
    InsufficientResolvers { needed: usize, available: usize },
    #[error("no domains with requested TTL {target_ttl}")]
    InsufficientDomains { target_ttl: u32 },
    #[error("write to {resolver} failed ({outcome:?})")]
    WriteFailure { resolver: ResolverEndpoint, outcome: OutcomeKind },
    #[error("encoding failed at cell {position} after {attempts} attempts: {reason}")]
    EncodeFailure { position: usize, attempts: u32, reason: String },
    #[error("EPO expired at {expiry} (now {now})")]
    Expired { expiry: u64, now: u64 },
    #[error("decoding failed: {0}")]
    DecodeFailure(String),
    #[error("TTL clusters separated by only {gap} s")]
    AmbiguousSkew { gap: u32 },
    #[error("{misses} cells read Miss; TTL-skew read needs every cell cached")]
    NotFlipped { misses: usize },
    #[error(transparent)]
    Epo(#[from] EpoError),
    #[error("invalid input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitState {
    One,
    Zero,
    Erasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitReading {
    pub position: usize,
    pub state: BitState,
    pub remaining_ttl: Option<u32>,
}

impl BitReading {
    pub fn from_outcome(position: usize, out: &QueryOutcome) -> BitReading {
        let state = match out.kind {
            OutcomeKind::Hit => BitState::One,
            OutcomeKind::Miss => BitState::Zero,
            OutcomeKind::Timeout | OutcomeKind::Refused => BitState::Erasure,
        };
        BitReading { position, state, remaining_ttl: out.remaining_ttl }
    }

    pub fn bit(&self) -> Option<bool> {
        match self.state {
            BitState::One => Some(true),
            BitState::Zero => Some(false),
            BitState::Erasure => None,
        }
    }
}

/// Cells, the codeword they carry, and the order writes are issued in.
#[derive(Debug, Clone)]
pub struct CellPlan {
    pub cells: Vec<BitCell>,
    pub codeword: RsCodeword,
    pub write_order: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeStats {
    pub prechecks: usize,
    pub prefetches: usize,
    pub writes: usize,
    pub replans: usize,
    pub codeword_weight: usize,
}

#[derive(Debug, Clone)]
pub struct Distribution {
    pub plan: CellPlan,
    pub start_time: u64,
    pub stats: EncodeStats,
}

#[derive(Debug, Clone)]
pub struct EncodeReport {
    pub epo: EpoObject,
    pub stats: EncodeStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeReport {
    pub plaintext: Vec<u8>,
    pub read_queries: usize,
    pub parity_fetched: bool,
    pub erasures: usize,
    pub corrected_symbols: usize,
    pub used_ttl_skew: bool,
}

/// `n` distinct endpoints drawn uniformly without replacement.
pub fn select_resolvers<R: Rng>(dataset: &[ResolverEndpoint], n: usize, rng: &mut R) -> Result<Vec<ResolverEndpoint>, KeystoreError> {
    let mut seen = HashSet::new();
    let distinct: Vec<ResolverEndpoint> = dataset.iter().copied().filter(|e| seen.insert(*e)).collect();
    if distinct.len() < n {
        return Err(KeystoreError::InsufficientResolvers { needed: n, available: distinct.len() });
    }
    Ok(sample(rng, distinct.len(), n).into_iter().map(|i| distinct[i]).collect())
}

/// Sibling name queried by the prefetch step: `www.` under the cell
/// domain's parent.
pub fn prefetch_name(domain: &DomainName) -> Option<DomainName> {
    let parent = domain.parent()?;
    DomainName::new(&format!("www.{parent}")).ok()
}

pub fn write_bit<T: Transport>(t: &mut T, cell: &BitCell, qtype: RecordType, bit: bool, timeout_ms: u32) -> Result<(), KeystoreError> {
    if !bit {
        return Ok(());
    }
    let out = t.query(&cell.resolver, &DnsQuestion::new(cell.domain.clone(), qtype, QueryMode::Recursive), timeout_ms);
    match out.kind {
        OutcomeKind::Hit => Ok(()),
        kind => Err(KeystoreError::WriteFailure { resolver: cell.resolver, outcome: kind }),
    }
}

pub fn read_bit<T: Transport>(t: &mut T, cell: &BitCell, qtype: RecordType, position: usize, timeout_ms: u32) -> BitReading {
    let out = t.query(&cell.resolver, &DnsQuestion::new(cell.domain.clone(), qtype, QueryMode::NonRecursive), timeout_ms);
    BitReading::from_outcome(position, &out)
}

/// Splits remaining TTLs into two clusters (optimal 1-D 2-means) and maps
/// the larger-TTL cluster to 0. Cells refreshed by an attacker carry the
/// later, larger expiry; genuine ones were cached earlier.
pub fn classify_by_ttl(readings: &[BitReading], min_gap: u32) -> Result<Vec<BitReading>, KeystoreError> {
    let misses = readings.iter().filter(|r| r.state == BitState::Zero).count();
    if misses > 0 {
        return Err(KeystoreError::NotFlipped { misses });
    }
    let mut ttls: Vec<u32> = readings.iter().filter(|r| r.state == BitState::One).filter_map(|r| r.remaining_ttl).collect();
    ttls.sort_unstable();
    if ttls.len() < 2 || ttls[0] == ttls[ttls.len() - 1] {
        return Err(KeystoreError::AmbiguousSkew { gap: 0 });
    }
    let prefix: Vec<(f64, f64)> = std::iter::once((0.0, 0.0))
        .chain(ttls.iter().scan((0.0, 0.0), |acc, &v| {
            let v = f64::from(v);
            acc.0 += v;
            acc.1 += v * v;
            Some(*acc)
        }))
        .collect();
    let sse = |a: usize, b: usize| {
        let n = (b - a) as f64;
        let s = prefix[b].0 - prefix[a].0;
        let q = prefix[b].1 - prefix[a].1;
        q - s * s / n
    };
    let n = ttls.len();
    let split = (1..n)
        .filter(|&s| ttls[s] != ttls[s - 1])
        .min_by(|&a, &b| (sse(0, a) + sse(a, n)).total_cmp(&(sse(0, b) + sse(b, n))))
        .expect("at least two distinct values");
    let gap = ttls[split] - ttls[split - 1];
    if gap < min_gap {
        return Err(KeystoreError::AmbiguousSkew { gap });
    }
    let threshold = ttls[split];
    Ok(readings
        .iter()
        .map(|r| match (r.state, r.remaining_ttl) {
            (BitState::One, Some(ttl)) if ttl >= threshold => BitReading { state: BitState::Zero, ..*r },
            _ => *r,
        })
        .collect())
}

pub struct KeyStore<T: Transport> {
    transport: T,
    config: KeystoreConfig,
}

impl<T: Transport> KeyStore<T> {
    pub fn new(transport: T, config: KeystoreConfig) -> KeyStore<T> {
        KeyStore { transport, config }
    }

    pub fn config(&self) -> &KeystoreConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut KeystoreConfig {
        &mut self.config
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    fn candidates<'p>(&self, pool: &'p DomainPool, target_ttl: u32) -> Result<Vec<&'p DomainCandidate>, KeystoreError> {
        let c: Vec<_> = pool
            .near(target_ttl, self.config.ttl_tolerance)
            .into_iter()
            .filter(|c| c.qtype == self.config.record_type)
            .collect();
        if c.is_empty() {
            return Err(KeystoreError::InsufficientDomains { target_ttl });
        }
        Ok(c)
    }

    /// Picks a domain for every resolver, in `order`. Each candidate is
    /// prechecked with a non-recursive query and discarded if already
    /// cached there.
    pub fn select_domains<R: Rng>(
        &mut self,
        resolvers: &[ResolverEndpoint],
        order: &[usize],
        pool: &DomainPool,
        target_ttl: u32,
        rng: &mut R,
        stats: &mut EncodeStats,
    ) -> Result<Vec<BitCell>, KeystoreError> {
        let candidates = self.candidates(pool, target_ttl)?;
        let qtype = self.config.record_type;
        let mut chosen: Vec<Option<BitCell>> = vec![None; resolvers.len()];
        let mut tried: Vec<HashSet<usize>> = vec![HashSet::new(); resolvers.len()];
        let mut pending: Vec<usize> = order.to_vec();
        while !pending.is_empty() {
            let mut picks = Vec::with_capacity(pending.len());
            for &i in &pending {
                if tried[i].len() == candidates.len() {
                    return Err(KeystoreError::InsufficientDomains { target_ttl });
                }
                let j = loop {
                    let j = rng.gen_range(0..candidates.len());
                    if tried[i].insert(j) {
                        break j;
                    }
                };
                picks.push((i, j));
            }
            let reqs: Vec<_> = picks
                .iter()
                .map(|&(i, j)| (resolvers[i], DnsQuestion::new(candidates[j].name.clone(), qtype, QueryMode::NonRecursive)))
                .collect();
            let outs = self.transport.query_batch(&reqs, self.config.timeout_ms);
            stats.prechecks += reqs.len();
            pending.clear();
            for (&(i, j), out) in picks.iter().zip(&outs) {
                if out.kind == OutcomeKind::Hit {
                    pending.push(i);
                } else {
                    let c = candidates[j];
                    chosen[i] = Some(BitCell { resolver: resolvers[i], domain: c.name.clone(), expected_ttl: c.authoritative_ttl });
                }
            }
        }
        Ok(chosen.into_iter().map(|c| c.expect("every cell chosen")).collect())
    }

    /// One recursive sibling query per cell, in `order`; outcomes ignored.
    pub fn prefetch(&mut self, cells: &[BitCell], order: &[usize], stats: &mut EncodeStats) {
        if !self.config.prefetch {
            return;
        }
        let reqs: Vec<_> = order
            .iter()
            .filter_map(|&i| {
                let name = prefetch_name(&cells[i].domain)?;
                Some((cells[i].resolver, DnsQuestion::new(name, self.config.record_type, QueryMode::Recursive)))
            })
            .collect();
        self.transport.query_batch(&reqs, self.config.timeout_ms);
        stats.prefetches += reqs.len();
    }

    fn write_ones(&mut self, cells: &[BitCell], bits: &[bool], order: &[usize], stats: &mut EncodeStats) -> Vec<usize> {
        let positions: Vec<usize> = order.iter().copied().filter(|&i| bits[i]).collect();
        let reqs: Vec<_> = positions
            .iter()
            .map(|&i| (cells[i].resolver, DnsQuestion::new(cells[i].domain.clone(), self.config.record_type, QueryMode::Recursive)))
            .collect();
        let outs = self.transport.query_batch(&reqs, self.config.timeout_ms);
        stats.writes += reqs.len();
        positions.into_iter().zip(outs).filter(|(_, o)| o.kind != OutcomeKind::Hit).map(|(i, _)| i).collect()
    }

    /// Stores `codeword` in freshly selected cells.
    pub fn distribute<R: Rng>(
        &mut self,
        codeword: RsCodeword,
        dataset: &[ResolverEndpoint],
        pool: &DomainPool,
        target_ttl: u32,
        rng: &mut R,
    ) -> Result<Distribution, KeystoreError> {
        let n = codeword.key_size().stored_bits();
        let start_time = self.transport.now();
        let mut stats = EncodeStats { codeword_weight: codeword.weight(), ..Default::default() };
        let resolvers = select_resolvers(dataset, n, rng)?;
        let mut write_order: Vec<usize> = (0..n).collect();
        write_order.shuffle(rng);
        let mut cells = self.select_domains(&resolvers, &write_order, pool, target_ttl, rng, &mut stats)?;
        self.prefetch(&cells, &write_order, &mut stats);
        let mut bits = codeword.stored_bits();
        let failed = self.write_ones(&cells, &bits, &write_order, &mut stats);

        let mut used: HashSet<ResolverEndpoint> = resolvers.iter().copied().collect();
        let spare: Vec<ResolverEndpoint> = dataset.iter().copied().filter(|e| !used.contains(e)).collect();
        let mut spare_order: Vec<usize> = (0..spare.len()).collect();
        spare_order.shuffle(rng);
        let mut spare_iter = spare_order.into_iter().map(|i| spare[i]);
        for position in failed {
            let mut attempts = 0;
            loop {
                if attempts >= self.config.replan_budget {
                    bits.zeroize();
                    return Err(KeystoreError::EncodeFailure {
                        position,
                        attempts,
                        reason: "write did not succeed on any replacement cell".into(),
                    });
                }
                attempts += 1;
                stats.replans += 1;
                let Some(res) = spare_iter.by_ref().find(|e| !used.contains(e)) else {
                    bits.zeroize();
                    return Err(KeystoreError::EncodeFailure { position, attempts, reason: "no spare resolvers left".into() });
                };
                used.insert(res);
                let cell = self.select_domains(&[res], &[0], pool, target_ttl, rng, &mut stats)?.remove(0);
                self.prefetch(std::slice::from_ref(&cell), &[0], &mut stats);
                let ok = self.write_ones(std::slice::from_ref(&cell), &[true], &[0], &mut stats).is_empty();
                if ok {
                    cells[position] = cell;
                    break;
                }
            }
        }
        bits.zeroize();
        Ok(Distribution { plan: CellPlan { cells, codeword, write_order }, start_time, stats })
    }

    /// Encrypts `message` under a fresh key, stores the key's codeword and
    /// returns the EPO. Expiry is the start of encoding plus `ttl`.
    pub fn encode_message<R: RngCore + CryptoRng>(
        &mut self,
        dataset: &[ResolverEndpoint],
        pool: &DomainPool,
        message: &[u8],
        ttl: u32,
        rng: &mut R,
    ) -> Result<EncodeReport, KeystoreError> {
        if ttl == 0 {
            return Err(KeystoreError::Input("TTL must be positive".into()));
        }
        self.candidates(pool, ttl)?;
        let key = EphemeralKey::generate(self.config.key_size, rng);
        let ciphertext = encrypt_message(message, &key, rng);
        let codeword = rs6355::encode(key.size(), key.bits()).map_err(|e| KeystoreError::Input(e.to_string()))?;
        drop(key);
        let dist = self.distribute(codeword, dataset, pool, ttl, rng)?;
        let expiry = dist.start_time + u64::from(ttl);
        let epo = EpoObject::build(ciphertext, dist.plan.cells, expiry, dist.start_time, self.config.key_size, self.config.record_type)?;
        Ok(EncodeReport { epo, stats: dist.stats })
    }

    /// Non-recursive reads of `epo.cells[range]`, without any expiry check.
    pub fn read_cells(&mut self, epo: &EpoObject, range: std::ops::Range<usize>) -> Vec<BitReading> {
        let reqs: Vec<_> = epo.cells[range.clone()]
            .iter()
            .map(|c| (c.resolver, DnsQuestion::new(c.domain.clone(), epo.record_type, QueryMode::NonRecursive)))
            .collect();
        let outs = self.transport.query_batch(&reqs, self.config.timeout_ms);
        range.zip(outs.iter()).map(|(i, o)| BitReading::from_outcome(i, o)).collect()
    }

    /// Every cell, read regardless of expiry.
    pub fn retrieve_raw(&mut self, epo: &EpoObject) -> Vec<BitReading> {
        self.read_cells(epo, 0..epo.cells.len())
    }

    pub fn check_expiry(&self, epo: &EpoObject) -> Result<(), KeystoreError> {
        let now = self.transport.now();
        if !self.config.force && now + self.config.skew_allowance >= epo.expiry {
            return Err(KeystoreError::Expired { expiry: epo.expiry, now });
        }
        Ok(())
    }

    fn try_key(size: KeySize, bits: Vec<bool>, ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let key = EphemeralKey::from_bits(size, bits)?;
        decrypt_message(ct, &key)
    }

    fn rs_then_decrypt(epo: &EpoObject, readings: &[BitReading]) -> Result<(Vec<u8>, usize, usize), String> {
        let bits: Vec<Option<bool>> = readings.iter().map(BitReading::bit).collect();
        let symbols = rs6355::readings_from_bits(epo.key_size, &bits).map_err(|e| e.to_string())?;
        let decoded = rs6355::decode(epo.key_size, &symbols).map_err(|e| e.to_string())?;
        let pt = Self::try_key(epo.key_size, decoded.key_bits(), &epo.ciphertext).map_err(|e| e.to_string())?;
        Ok((pt, decoded.erasures, decoded.corrected_positions.len()))
    }

    /// Reads the data cells; fetches parity only when something is missing
    /// or the key does not authenticate.
    pub fn decode_message(&mut self, epo: &EpoObject) -> Result<DecodeReport, KeystoreError> {
        self.check_expiry(epo)?;
        let k = epo.key_size.key_bits();
        let n = epo.cells.len();
        let mut readings = self.read_cells(epo, 0..k);
        let erasures = readings.iter().filter(|r| r.state == BitState::Erasure).count();
        if erasures == 0 {
            let bits = readings.iter().map(|r| r.state == BitState::One).collect();
            if let Ok(plaintext) = Self::try_key(epo.key_size, bits, &epo.ciphertext) {
                return Ok(DecodeReport {
                    plaintext,
                    read_queries: k,
                    parity_fetched: false,
                    erasures: 0,
                    corrected_symbols: 0,
                    used_ttl_skew: false,
                });
            }
        }
        readings.extend(self.read_cells(epo, k..n));
        let erasures = readings.iter().filter(|r| r.state == BitState::Erasure).count();
        let primary = Self::rs_then_decrypt(epo, &readings);
        let (result, used_ttl_skew) = match primary {
            Ok(r) => (Ok(r), false),
            Err(e) if self.config.skew_fallback && readings.iter().all(|r| r.state == BitState::One) => {
                match classify_by_ttl(&readings, self.config.min_skew_gap) {
                    Ok(fixed) => (Self::rs_then_decrypt(epo, &fixed), true),
                    Err(_) => (Err(e), false),
                }
            }
            Err(e) => (Err(e), false),
        };
        match result {
            Ok((plaintext, _, corrected_symbols)) => Ok(DecodeReport {
                plaintext,
                read_queries: n,
                parity_fetched: true,
                erasures,
                corrected_symbols,
                used_ttl_skew,
            }),
            Err(e) => Err(KeystoreError::DecodeFailure(e)),
        }
    }

    /// Reads every cell and classifies by remaining TTL. Meant for the
    /// aftermath of an attack that cached every cell.
    pub fn ttl_skew_read(&mut self, epo: &EpoObject) -> Result<Vec<BitReading>, KeystoreError> {
        let readings = self.retrieve_raw(epo);
        classify_by_ttl(&readings, self.config.min_skew_gap)
    }
}
