//! Expiry time series: store many keys at once, then sample how many are
//! still recoverable as virtual time passes.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::{SimError, SimNet, LOOKUP_ENDPOINT};
use crate::crypto::{encrypt_message, EphemeralKey};
use crate::dataset::{harvest_domains, DomainPool};
use crate::dns_wire::Transport;
use crate::epo::EpoObject;
use crate::keystore::{KeyStore, KeystoreConfig, KeystoreError};
use crate::rs6355;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Keystore(#[from] KeystoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeySample {
    /// A forced decode returned the original plaintext.
    pub recovered: bool,
    /// The expiry guard would have refused a normal read.
    pub guard_refused: bool,
    /// Fraction of stored cells whose raw reading equals the codeword bit.
    pub agreement: f64,
    /// Fraction of zero bits in the stored codeword.
    pub zero_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub offset: u64,
    pub keys: Vec<KeySample>,
}

impl SamplePoint {
    pub fn success_fraction(&self) -> f64 {
        self.keys.iter().filter(|k| k.recovered).count() as f64 / self.keys.len().max(1) as f64
    }

    pub fn mean_agreement(&self) -> f64 {
        self.keys.iter().map(|k| k.agreement).sum::<f64>() / self.keys.len().max(1) as f64
    }

    pub fn mean_zero_fraction(&self) -> f64 {
        self.keys.iter().map(|k| k.zero_fraction).sum::<f64>() / self.keys.len().max(1) as f64
    }

    /// Keys whose raw agreement equals their zero fraction exactly.
    pub fn zeroed_keys(&self) -> usize {
        self.keys.iter().filter(|k| k.agreement == k.zero_fraction).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSeries {
    pub ttl: u32,
    pub start_time: u64,
    pub pool_size: usize,
    pub points: Vec<SamplePoint>,
}

impl fmt::Display for ExperimentSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# ttl={} start={} pool={}", self.ttl, self.start_time, self.pool_size)?;
        writeln!(f, "offset_s\thours\trecovered\tagreement\tzero_fraction\tguard_refused")?;
        for p in &self.points {
            let refused = p.keys.iter().filter(|k| k.guard_refused).count();
            writeln!(
                f,
                "{}\t{:.3}\t{:.4}\t{:.4}\t{:.4}\t{}",
                p.offset,
                p.offset as f64 / 3600.0,
                p.success_fraction(),
                p.mean_agreement(),
                p.mean_zero_fraction(),
                refused
            )?;
        }
        Ok(())
    }
}

struct Stored {
    epo: EpoObject,
    bits: Vec<bool>,
    message: Vec<u8>,
}

/// Harvests a pool for the experiment TTL through the lookup resolver.
pub fn experiment_pool(net: &mut SimNet, scenario: &Scenario, rng: &mut ChaCha20Rng) -> DomainPool {
    harvest_domains(net, LOOKUP_ENDPOINT, scenario.experiment.harvest, &[scenario.experiment.ttl], 2000, rng).pool
}

pub fn run_experiment(scenario: &Scenario) -> Result<ExperimentSeries, ExperimentError> {
    let spec = &scenario.experiment;
    let mut net = scenario.build()?;
    net.set_recording(false);
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed ^ 0x5eed_e4e1);
    let pool = experiment_pool(&mut net, scenario, &mut rng);
    let dataset = net.endpoints();
    let cfg = KeystoreConfig::default();
    let start_time = net.now();

    let mut stored = Vec::with_capacity(spec.keys);
    for _ in 0..spec.keys {
        let message: Vec<u8> = (0..spec.message_bytes).map(|_| rand::Rng::gen(&mut rng)).collect();
        let key = EphemeralKey::generate(cfg.key_size, &mut rng);
        let ciphertext = encrypt_message(&message, &key, &mut rng);
        let codeword = rs6355::encode(key.size(), key.bits()).map_err(|e| KeystoreError::Input(e.to_string()))?;
        let bits = codeword.stored_bits();
        let mut ks = KeyStore::new(&mut net, cfg.clone());
        let dist = ks.distribute(codeword, &dataset, &pool, spec.ttl, &mut rng)?;
        let expiry = dist.start_time + u64::from(spec.ttl);
        let epo = EpoObject::build(ciphertext, dist.plan.cells, expiry, dist.start_time, cfg.key_size, cfg.record_type)
            .map_err(KeystoreError::from)?;
        stored.push(Stored { epo, bits, message });
    }

    let mut offsets = spec.samples.clone();
    offsets.sort_unstable();
    let mut points = Vec::with_capacity(offsets.len());
    for offset in offsets {
        net.wait_until(start_time + offset);
        let mut keys = Vec::with_capacity(stored.len());
        for s in &stored {
            let guard_refused = KeyStore::new(&mut net, cfg.clone()).check_expiry(&s.epo).is_err();
            let mut ks = KeyStore::new(&mut net, KeystoreConfig { force: true, ..cfg.clone() });
            let recovered = ks.decode_message(&s.epo).is_ok_and(|r| r.plaintext == s.message);
            let raw = ks.retrieve_raw(&s.epo);
            let agree = raw.iter().zip(&s.bits).filter(|(r, &b)| r.bit() == Some(b)).count();
            let zeros = s.bits.iter().filter(|b| !**b).count();
            keys.push(KeySample {
                recovered,
                guard_refused,
                agreement: agree as f64 / s.bits.len() as f64,
                zero_fraction: zeros as f64 / s.bits.len() as f64,
            });
        }
        points.push(SamplePoint { offset, keys });
    }
    Ok(ExperimentSeries { ttl: spec.ttl, start_time, pool_size: pool.entries().len(), points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_series_shape() {
        let mut s = Scenario::default();
        s.seed = 3;
        s.population.size = 600;
        s.experiment.keys = 5;
        s.experiment.harvest = 400;
        s.experiment.ttl = 3600;
        s.experiment.samples = vec![600, 3550, 3601, 7200];
        let series = run_experiment(&s).unwrap();
        let rec: Vec<f64> = series.points.iter().map(SamplePoint::success_fraction).collect();
        assert_eq!(rec, vec![1.0, 1.0, 0.0, 0.0]);
        for p in &series.points[2..] {
            assert_eq!(p.zeroed_keys(), 5);
        }
        // a small pool lets other keys' writes land on zero cells; the code absorbs it
        assert!(series.points[0].keys.iter().all(|k| k.agreement > 0.95 && !k.guard_refused));
        assert!(series.points[1].keys.iter().all(|k| k.guard_refused));
        let text = series.to_string();
        assert_eq!(text.lines().count(), 2 + 4);
        // identical seeds give identical output
        assert_eq!(run_experiment(&s).unwrap().to_string(), text);
    }
}
