//! Arithmetic in GF(2^6), built from the primitive polynomial x^6 + x + 1.
//!
//! Elements are stored as the low six bits of a `u8`. Multiplication goes
//! through log/antilog tables computed at compile time.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub};

use thiserror::Error;

/// x^6 + x + 1.
pub const PRIMITIVE_POLY: u8 = 0b100_0011;
/// Number of field elements.
pub const FIELD_SIZE: usize = 64;
/// Order of the multiplicative group, and of the generator α.
pub const GROUP_ORDER: usize = 63;

const fn build_exp() -> [u8; 2 * GROUP_ORDER] {
    let mut exp = [0u8; 2 * GROUP_ORDER];
    let mut x: u8 = 1;
    let mut i = 0;
    while i < GROUP_ORDER {
        exp[i] = x;
        exp[i + GROUP_ORDER] = x;
        x <<= 1;
        if x & 0b100_0000 != 0 {
            x ^= PRIMITIVE_POLY;
        }
        i += 1;
    }
    exp
}

const fn build_log(exp: &[u8; 2 * GROUP_ORDER]) -> [u8; FIELD_SIZE] {
    let mut log = [0u8; FIELD_SIZE];
    let mut i = 0;
    while i < GROUP_ORDER {
        log[exp[i] as usize] = i as u8;
        i += 1;
    }
    log
}

static EXP: [u8; 2 * GROUP_ORDER] = build_exp();
static LOG: [u8; FIELD_SIZE] = build_log(&EXP);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("zero has no multiplicative inverse in GF(64)")]
pub struct DomainError;

/// An element of GF(2^6).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Gf64(u8);

impl Gf64 {
    pub const ZERO: Gf64 = Gf64(0);
    pub const ONE: Gf64 = Gf64(1);
    /// The generator α (the class of x).
    pub const ALPHA: Gf64 = Gf64(2);

    /// Returns `None` when `value` does not fit in six bits.
    pub fn new(value: u8) -> Option<Gf64> {
        (usize::from(value) < FIELD_SIZE).then_some(Gf64(value))
    }

    /// Keeps the low six bits of `value`.
    pub fn from_low_bits(value: u8) -> Gf64 {
        Gf64(value & 0x3f)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// α^k for any k (reduced mod 63).
    pub fn alpha_pow(k: usize) -> Gf64 {
        Gf64(EXP[k % GROUP_ORDER])
    }

    /// Discrete log base α. `None` for zero.
    pub fn log(self) -> Option<usize> {
        (self.0 != 0).then(|| usize::from(LOG[usize::from(self.0)]))
    }

    pub fn inv(self) -> Result<Gf64, DomainError> {
        match self.log() {
            None => Err(DomainError),
            Some(l) => Ok(Gf64(EXP[(GROUP_ORDER - l) % GROUP_ORDER])),
        }
    }

    pub fn pow(self, e: u32) -> Gf64 {
        if e == 0 {
            return Gf64::ONE;
        }
        match self.log() {
            None => Gf64::ZERO,
            Some(l) => Gf64(EXP[(l * (e as usize % GROUP_ORDER)) % GROUP_ORDER]),
        }
    }
}

impl fmt::Debug for Gf64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf64({:#04x})", self.0)
    }
}

impl fmt::Display for Gf64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Gf64 {
    type Output = Gf64;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn add(self, rhs: Gf64) -> Gf64 {
        Gf64(self.0 ^ rhs.0)
    }
}

impl AddAssign for Gf64 {
    #[allow(clippy::suspicious_op_assign_impl)]
    fn add_assign(&mut self, rhs: Gf64) {
        self.0 ^= rhs.0;
    }
}

impl Sub for Gf64 {
    type Output = Gf64;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn sub(self, rhs: Gf64) -> Gf64 {
        Gf64(self.0 ^ rhs.0)
    }
}

impl Mul for Gf64 {
    type Output = Gf64;
    fn mul(self, rhs: Gf64) -> Gf64 {
        match (self.log(), rhs.log()) {
            (Some(a), Some(b)) => Gf64(EXP[a + b]),
            _ => Gf64::ZERO,
        }
    }
}

impl MulAssign for Gf64 {
    fn mul_assign(&mut self, rhs: Gf64) {
        *self = *self * rhs;
    }
}

impl Div for Gf64 {
    type Output = Gf64;
    /// Panics on division by zero; use [`Gf64::inv`] for the fallible form.
    fn div(self, rhs: Gf64) -> Gf64 {
        self * rhs.inv().expect("division by zero in GF(64)")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all() -> impl Iterator<Item = Gf64> {
        (0..64u8).map(|v| Gf64::new(v).unwrap())
    }

    /// Shift-and-add multiplication with explicit reduction; shares nothing
    /// with the table path.
    fn slow_mul(a: u8, b: u8) -> u8 {
        let mut acc: u16 = 0;
        for i in 0..6 {
            if b & (1 << i) != 0 {
                acc ^= u16::from(a) << i;
            }
        }
        for deg in (6..12).rev() {
            if acc & (1 << deg) != 0 {
                acc ^= u16::from(PRIMITIVE_POLY) << (deg - 6);
            }
        }
        acc as u8
    }

    #[test]
    fn alpha_has_order_63() {
        // exhaustive over all exponents, computed by repeated slow multiplication
        let mut x = 1u8;
        for k in 1..=63 {
            x = slow_mul(x, 2);
            if k < 63 {
                assert_ne!(x, 1, "alpha^{k} == 1");
            }
            assert_eq!(Gf64::ALPHA.pow(k), Gf64::new(x).unwrap());
        }
        assert_eq!(x, 1);
        assert_eq!(Gf64::ALPHA.pow(63), Gf64::ONE);
    }

    #[test]
    fn field_axioms_exhaustive() {
        for a in all() {
            assert_eq!(a + a, Gf64::ZERO);
            assert_eq!(a * Gf64::ONE, a);
            assert_eq!(a + Gf64::ZERO, a);
            if !a.is_zero() {
                assert_eq!(a * a.inv().unwrap(), Gf64::ONE);
            }
            for b in all() {
                assert_eq!((a * b).value(), slow_mul(a.value(), b.value()));
                assert_eq!(a * b, b * a);
                assert_eq!(a + b, b + a);
                assert!((a * b).value() < 64);
            }
        }
    }

    #[test]
    fn zero_has_no_inverse() {
        assert_eq!(Gf64::ZERO.inv(), Err(DomainError));
    }

    #[test]
    fn new_rejects_wide_values() {
        assert!(Gf64::new(64).is_none());
        assert_eq!(Gf64::from_low_bits(0xff).value(), 0x3f);
    }

    proptest! {
        #[test]
        fn associativity_and_distributivity(a in 0u8..64, b in 0u8..64, c in 0u8..64) {
            let (a, b, c) = (Gf64(a), Gf64(b), Gf64(c));
            prop_assert_eq!((a * b) * c, a * (b * c));
            prop_assert_eq!((a + b) + c, a + (b + c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
        }
    }
}
