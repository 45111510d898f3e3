//! Closed-form security and cost calculators.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// A computed quantity together with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub quantity: String,
    pub inputs: Vec<(String, f64)>,
    pub value: f64,
    pub formula: String,
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "quantity\t{}", self.quantity)?;
        for (k, v) in &self.inputs {
            writeln!(f, "input.{k}\t{v}")?;
        }
        writeln!(f, "formula\t{}", self.formula)?;
        write!(f, "value\t{}", self.value)
    }
}

/// log2 of a big integer, accurate to f64 precision.
fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return x.to_u64().map_or(f64::NAN, |v| (v as f64).log2());
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().expect("64 bits") as f64;
    top.log2() + shift as f64
}

/// Entropy lost when an attacker learns the Hamming weight of an n-bit key:
/// `n - log2(sum_m C(n,m)^2 / 2^n)`, with the sum evaluated exactly.
pub fn hamming_entropy_loss(n_bits: u32) -> f64 {
    assert!((1..=4096).contains(&n_bits), "n_bits must be in 1..=4096");
    let n = n_bits as u64;
    let mut sum = BigUint::zero();
    let mut c = BigUint::one();
    for m in 0..=n {
        sum += &c * &c;
        c = c * (n - m) / (m + 1);
    }
    // log2(sum / 2^n) = log2(sum) - n
    let search_bits = log2_big(&sum) - n as f64;
    n as f64 - search_bits
}

pub fn hamming_report(n_bits: u32) -> AnalysisReport {
    AnalysisReport {
        quantity: "hamming_entropy_loss".into(),
        inputs: vec![("n_bits".into(), f64::from(n_bits))],
        value: hamming_entropy_loss(n_bits),
        formula: "n - log2(sum_m C(n,m)^2 / 2^n)".into(),
    }
}

/// Probability that at least two of `n_docs` documents pick the same
/// (resolver, domain) pair: `1 - exp(-n(n-1) / 2d)` with
/// `d = resolvers * domains_in_bucket`.
pub fn collision_probability(n_docs: u64, resolvers: u64, domains_in_bucket: u64) -> f64 {
    assert!(n_docs > 0 && resolvers > 0 && domains_in_bucket > 0, "inputs must be positive");
    let d = resolvers as f64 * domains_in_bucket as f64;
    let pairs = n_docs as f64 * (n_docs - 1) as f64;
    -(-pairs / (2.0 * d)).exp_m1()
}

pub fn collision_report(n_docs: u64, resolvers: u64, domains_in_bucket: u64) -> AnalysisReport {
    AnalysisReport {
        quantity: "collision_probability".into(),
        inputs: vec![
            ("n_docs".into(), n_docs as f64),
            ("resolvers".into(), resolvers as f64),
            ("domains_in_bucket".into(), domains_in_bucket as f64),
        ],
        value: collision_probability(n_docs, resolvers, domains_in_bucket),
        formula: "1 - exp(-n(n-1) / (2 * resolvers * domains))".into(),
    }
}

/// DNS traffic for storing and retrieving one key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficEstimate {
    pub prechecks: u64,
    pub prefetches: u64,
    pub writes: u64,
    pub reads: u64,
    pub msg_bytes: u64,
}

impl TrafficEstimate {
    pub fn store_transactions(&self) -> u64 {
        self.prechecks + self.prefetches + self.writes
    }

    pub fn transactions(&self) -> u64 {
        self.store_transactions() + self.reads
    }

    /// One message per transaction, store and retrieve combined.
    pub fn total_bytes(&self) -> u64 {
        self.transactions() * self.msg_bytes
    }

    /// Request and response both counted.
    pub fn round_trip_bytes(&self) -> u64 {
        2 * self.total_bytes()
    }

    /// The larger of the store and retrieve phases, one message per
    /// transaction. This is the "per key operation" figure.
    pub fn per_operation_bytes(&self) -> u64 {
        self.store_transactions().max(self.reads) * self.msg_bytes
    }
}

impl fmt::Display for TrafficEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "prechecks\t{}", self.prechecks)?;
        writeln!(f, "prefetches\t{}", self.prefetches)?;
        writeln!(f, "writes\t{}", self.writes)?;
        writeln!(f, "reads\t{}", self.reads)?;
        writeln!(f, "transactions\t{}", self.transactions())?;
        writeln!(f, "total_bytes\t{}", self.total_bytes())?;
        writeln!(f, "round_trip_bytes\t{}", self.round_trip_bytes())?;
        write!(f, "per_operation_bytes\t{}", self.per_operation_bytes())
    }
}

/// Worst-case traffic for a 176-cell codeword of the given weight: one
/// write per set bit, every cell read back. Prefetch and precheck queries
/// are excluded; see [`traffic_estimate_with`].
pub fn traffic_estimate(codeword_weight: u64, avg_msg_bytes: u64) -> TrafficEstimate {
    traffic_estimate_with(codeword_weight, avg_msg_bytes, 176, false, false)
}

pub fn traffic_estimate_with(codeword_weight: u64, avg_msg_bytes: u64, stored_bits: u64, prefetch: bool, precheck: bool) -> TrafficEstimate {
    assert!(codeword_weight <= stored_bits, "weight exceeds codeword length");
    TrafficEstimate {
        prechecks: if precheck { stored_bits } else { 0 },
        prefetches: if prefetch { stored_bits } else { 0 },
        writes: codeword_weight,
        reads: stored_bits,
        msg_bytes: avg_msg_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// log2 C(2n, n) via a float product; sum_m C(n,m)^2 = C(2n,n).
    fn oracle_loss(n: u32) -> f64 {
        let log2_central: f64 = (1..=n).map(|i| (f64::from(n + i) / f64::from(i)).log2()).sum();
        2.0 * f64::from(n) - log2_central
    }

    #[test]
    fn hamming_frozen_values() {
        // high-precision reference values, computed independently
        assert_eq!(hamming_entropy_loss(1), 1.0);
        assert!((hamming_entropy_loss(2) - 1.415_037_499_278_843_8).abs() < 1e-12);
        assert!((hamming_entropy_loss(128) - 4.327_156_943_029_121).abs() < 1e-9);
        assert!((hamming_entropy_loss(134) - 4.360_138_454_454_961).abs() < 1e-9);
        assert!((hamming_entropy_loss(256) - 4.826_452_505_226_224).abs() < 1e-9);
    }

    #[test]
    fn hamming_matches_central_binomial_oracle() {
        for n in [1, 3, 7, 64, 100, 128, 134, 500, 1000, 4096] {
            let got = hamming_entropy_loss(n);
            assert!((got - oracle_loss(n)).abs() < 1e-8, "n={n}: {got} vs {}", oracle_loss(n));
        }
    }

    #[test]
    fn hamming_claims() {
        let l128 = hamming_entropy_loss(128);
        assert!((3.3..=5.3).contains(&l128));
        assert!(134.0 - hamming_entropy_loss(134) > 128.0);
    }

    #[test]
    fn hamming_monotone() {
        let mut prev = 0.0;
        for n in 1..=600 {
            let l = hamming_entropy_loss(n);
            assert!(l > 0.0 && l > prev, "n={n}");
            prev = l;
        }
    }

    #[test]
    fn collision_frozen_values() {
        assert_eq!(collision_probability(1, 25_000, 1_000_000), 0.0);
        let p = collision_probability(10_000, 25_000, 1_000_000);
        assert!((p - 1.997_801_732_247_24e-3).abs() < 1e-15, "{p}");
        assert!((collision_probability(100, 1, 1_000_000) - 4.937_768_939_571_724e-3).abs() < 1e-15);
        // order of magnitude of the headline figure
        assert_eq!(p.log10().floor(), -3.0);
        // the exponent itself is the 1.9998e-3 figure
        let x = 10_000.0 * 9_999.0 / (2.0 * 25_000.0 * 1e6);
        assert!((x - 1.9998e-3_f64).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn collision_monotone(n in 2u64..100_000, r in 1u64..100_000, d in 1u64..1_000_000) {
            let p = collision_probability(n, r, d);
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(collision_probability(n + 1, r, d) >= p);
            prop_assert!(collision_probability(n, r, d + 1) <= p);
        }
    }

    #[test]
    fn collision_vanishes_with_d() {
        let mut prev = 1.0;
        for k in 0..12 {
            let p = collision_probability(1000, 10, 10u64.pow(k));
            assert!(p <= prev);
            prev = p;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn traffic_conventions() {
        let t = traffic_estimate(176, 180);
        assert_eq!(t.transactions(), 352);
        assert_eq!(t.total_bytes(), 63_360);
        assert_eq!(t.round_trip_bytes(), 126_720);
        assert_eq!(t.per_operation_bytes(), 31_680);
        assert!((t.per_operation_bytes() as f64 / 1000.0 - 32.0).abs() < 0.5);
        let empty = traffic_estimate(0, 180);
        assert_eq!(empty.total_bytes(), 176 * 180);
        let pf = traffic_estimate_with(100, 180, 176, true, false);
        assert_eq!(pf.transactions() - traffic_estimate(100, 180).transactions(), 176);
    }

    #[test]
    fn report_text() {
        let r = hamming_report(128);
        let s = r.to_string();
        assert!(s.contains("input.n_bits\t128"));
        assert!(s.contains("value\t4.32715694"));
    }
}
