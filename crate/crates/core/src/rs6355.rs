//! Shortened Reed-Solomon (63,55) code over GF(2^6) with errors-and-erasures
//! decoding.
//!
//! A 128-bit key is padded with four zero bits to 22 six-bit data symbols and
//! protected by 8 parity symbols. Only the 128 key bits and 48 parity bits are
//! stored; the pad bits are implicit. The 134-bit key variant uses 23 data
//! symbols and the same four-bit pad.
//!
//! # Stored bit layout
//!
//! Stored bits are ordered data symbols first, then parity symbols, each
//! symbol most-significant bit first. The last data symbol contributes only
//! its low-order bits (two for a 128-bit key); its high four bits are the pad.
//!
//! # Polynomial view
//!
//! Symbol `i` of the `n = k + 8` symbol codeword is the coefficient of
//! x^(n-1-i), so data symbols occupy the high-degree coefficients. The
//! generator is g(x) = (x - α)(x - α^2)...(x - α^8), giving minimum distance 9:
//! any pattern of `e` errors and `f` erasures with `2e + f <= 8` is corrected.

use thiserror::Error;

use crate::gf64::Gf64;

/// Length of the unshortened code.
pub const N: usize = 63;
/// Dimension of the unshortened code.
pub const K: usize = 55;
pub const PARITY_SYMBOLS: usize = N - K;
pub const SYMBOL_BITS: usize = 6;
pub const PARITY_BITS: usize = PARITY_SYMBOLS * SYMBOL_BITS;
/// Number of correctable symbol errors when there are no erasures.
pub const MAX_ERRORS: usize = PARITY_SYMBOLS / 2;

/// Supported key sizes. Each picks how many of the 55 data symbols are used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub enum KeySize {
    #[default]
    Bits128,
    /// Compensates for the Hamming-weight leak to a traffic observer.
    Bits134,
}

impl KeySize {
    pub fn key_bits(self) -> usize {
        match self {
            KeySize::Bits128 => 128,
            KeySize::Bits134 => 134,
        }
    }

    pub fn from_key_bits(bits: usize) -> Option<KeySize> {
        match bits {
            128 => Some(KeySize::Bits128),
            134 => Some(KeySize::Bits134),
            _ => None,
        }
    }

    pub fn data_symbols(self) -> usize {
        self.key_bits().div_ceil(SYMBOL_BITS)
    }

    pub fn codeword_symbols(self) -> usize {
        self.data_symbols() + PARITY_SYMBOLS
    }

    pub fn pad_bits(self) -> usize {
        self.data_symbols() * SYMBOL_BITS - self.key_bits()
    }

    /// Bits actually written to the network: key bits plus parity bits.
    pub fn stored_bits(self) -> usize {
        self.key_bits() + PARITY_BITS
    }

    /// Number of stored bits carried by data symbol `s`.
    fn data_symbol_width(self, s: usize) -> usize {
        (self.key_bits() - s * SYMBOL_BITS).min(SYMBOL_BITS)
    }

    /// Maps a stored bit index onto (symbol position, bit mask within symbol).
    pub fn bit_location(self, bit: usize) -> (usize, u8) {
        let key_bits = self.key_bits();
        if bit < key_bits {
            let s = bit / SYMBOL_BITS;
            let j = bit % SYMBOL_BITS;
            let width = self.data_symbol_width(s);
            (s, 1 << (width - 1 - j))
        } else {
            let p = bit - key_bits;
            (self.data_symbols() + p / SYMBOL_BITS, 1 << (SYMBOL_BITS - 1 - p % SYMBOL_BITS))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RsError {
    #[error("expected {expected} input bits, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("invalid symbol readings: {0}")]
    Readings(String),
    #[error("decode failure: {0}")]
    DecodeFailure(&'static str),
}

/// A systematic codeword: data symbols followed by parity symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsCodeword {
    size: KeySize,
    data: Vec<Gf64>,
    parity: [Gf64; PARITY_SYMBOLS],
}

impl RsCodeword {
    pub fn key_size(&self) -> KeySize {
        self.size
    }

    pub fn data_symbols(&self) -> &[Gf64] {
        &self.data
    }

    pub fn parity_symbols(&self) -> &[Gf64; PARITY_SYMBOLS] {
        &self.parity
    }

    /// All symbols in codeword order.
    pub fn symbols(&self) -> Vec<Gf64> {
        self.data.iter().chain(self.parity.iter()).copied().collect()
    }

    fn from_symbols(size: KeySize, symbols: &[Gf64]) -> RsCodeword {
        let k = size.data_symbols();
        let mut parity = [Gf64::ZERO; PARITY_SYMBOLS];
        parity.copy_from_slice(&symbols[k..]);
        RsCodeword { size, data: symbols[..k].to_vec(), parity }
    }

    /// True when the implicit pad bits of the last data symbol are zero.
    pub fn pad_is_clear(&self) -> bool {
        let last = self.data[self.data.len() - 1].value();
        let width = self.size.data_symbol_width(self.data.len() - 1);
        last >> width == 0
    }

    /// The stored bits (key bits then parity bits), pad bits omitted.
    pub fn stored_bits(&self) -> Vec<bool> {
        let symbols = self.symbols();
        (0..self.size.stored_bits())
            .map(|b| {
                let (pos, mask) = self.size.bit_location(b);
                symbols[pos].value() & mask != 0
            })
            .collect()
    }

    /// The key bits recovered from the data symbols.
    pub fn key_bits(&self) -> Vec<bool> {
        let mut bits = self.stored_bits();
        bits.truncate(self.size.key_bits());
        bits
    }

    /// Number of one bits among the stored bits.
    pub fn weight(&self) -> usize {
        self.stored_bits().iter().filter(|&&b| b).count()
    }
}

/// What was read for one symbol position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolState {
    Value(Gf64),
    Erasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolReading {
    pub position: usize,
    pub state: SymbolState,
}

/// Outcome details of a successful decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub codeword: RsCodeword,
    pub erasures: usize,
    /// Symbol positions whose value was changed, including filled erasures.
    pub corrected_positions: Vec<usize>,
}

impl Decoded {
    pub fn key_bits(&self) -> Vec<bool> {
        self.codeword.key_bits()
    }
}

/// Coefficients of g(x), ascending degree, monic of degree 8.
fn generator() -> [Gf64; PARITY_SYMBOLS + 1] {
    let mut g = [Gf64::ZERO; PARITY_SYMBOLS + 1];
    g[0] = Gf64::ONE;
    for i in 1..=PARITY_SYMBOLS {
        let root = Gf64::alpha_pow(i);
        // multiply by (x + root)
        for d in (1..=i).rev() {
            g[d] = g[d - 1] + g[d] * root;
        }
        g[0] *= root;
    }
    g
}

/// Remainder of m(x) x^8 by g(x) through an LFSR, highest degree first.
fn parity_of(data: &[Gf64]) -> [Gf64; PARITY_SYMBOLS] {
    let g = generator();
    let mut rem = [Gf64::ZERO; PARITY_SYMBOLS]; // rem[j] is the coefficient of x^j
    for &d in data {
        let feedback = d + rem[PARITY_SYMBOLS - 1];
        for j in (1..PARITY_SYMBOLS).rev() {
            rem[j] = rem[j - 1] + feedback * g[j];
        }
        rem[0] = feedback * g[0];
    }
    let mut parity = [Gf64::ZERO; PARITY_SYMBOLS];
    for (j, p) in parity.iter_mut().enumerate() {
        *p = rem[PARITY_SYMBOLS - 1 - j];
    }
    parity
}

/// Systematic encoding of a key of the given size.
pub fn encode(size: KeySize, key_bits: &[bool]) -> Result<RsCodeword, RsError> {
    if key_bits.len() != size.key_bits() {
        return Err(RsError::InputLength { expected: size.key_bits(), got: key_bits.len() });
    }
    let k = size.data_symbols();
    let mut data = vec![Gf64::ZERO; k];
    for (b, &bit) in key_bits.iter().enumerate() {
        if bit {
            let (pos, mask) = size.bit_location(b);
            data[pos] = Gf64::from_low_bits(data[pos].value() | mask);
        }
    }

    let parity = parity_of(&data);
    Ok(RsCodeword { size, data, parity })
}

/// Encodes a 128-bit key.
pub fn rs_encode(key_bits: &[bool]) -> Result<RsCodeword, RsError> {
    encode(KeySize::Bits128, key_bits)
}

/// Decodes a full set of 30 readings for a 128-bit key.
pub fn rs_decode(readings: &[SymbolReading]) -> Result<Vec<bool>, RsError> {
    decode(KeySize::Bits128, readings).map(|d| d.key_bits())
}

fn syndromes(symbols: &[Gf64]) -> [Gf64; PARITY_SYMBOLS] {
    let n = symbols.len();
    let mut s = [Gf64::ZERO; PARITY_SYMBOLS];
    for (i, si) in s.iter_mut().enumerate() {
        let x = Gf64::alpha_pow(i + 1);
        // Horner, highest degree first
        *si = symbols.iter().fold(Gf64::ZERO, |acc, &c| acc * x + c);
        debug_assert!(n <= N);
    }
    s
}

fn poly_eval(p: &[Gf64], x: Gf64) -> Gf64 {
    p.iter().rev().fold(Gf64::ZERO, |acc, &c| acc * x + c)
}

fn poly_degree(p: &[Gf64]) -> usize {
    p.iter().rposition(|c| !c.is_zero()).unwrap_or(0)
}

/// Errors-and-erasures decoding. Requires exactly one reading per position.
pub fn decode(size: KeySize, readings: &[SymbolReading]) -> Result<Decoded, RsError> {
    let n = size.codeword_symbols();
    if readings.len() != n {
        return Err(RsError::Readings(format!("expected {n} readings, got {}", readings.len())));
    }
    let mut received = vec![Gf64::ZERO; n];
    let mut seen = vec![false; n];
    let mut erased = Vec::new();
    for r in readings {
        if r.position >= n {
            return Err(RsError::Readings(format!("position {} out of range", r.position)));
        }
        if std::mem::replace(&mut seen[r.position], true) {
            return Err(RsError::Readings(format!("duplicate position {}", r.position)));
        }
        match r.state {
            SymbolState::Value(v) => received[r.position] = v,
            SymbolState::Erasure => erased.push(r.position),
        }
    }
    erased.sort_unstable();
    let rho = erased.len();
    if rho > PARITY_SYMBOLS {
        return Err(RsError::DecodeFailure("more erasures than parity symbols"));
    }

    let degree_of = |pos: usize| n - 1 - pos;
    let s = syndromes(&received);
    if rho == 0 && s.iter().all(|x| x.is_zero()) {
        let codeword = RsCodeword::from_symbols(size, &received);
        if !codeword.pad_is_clear() {
            return Err(RsError::DecodeFailure("pad bits set"));
        }
        return Ok(Decoded { codeword, erasures: 0, corrected_positions: Vec::new() });
    }

    // Erasure locator Γ(x) = Π (1 + X_k x).
    let mut gamma = vec![Gf64::ONE];
    for &pos in &erased {
        let x = Gf64::alpha_pow(degree_of(pos));
        gamma.push(Gf64::ZERO);
        for d in (1..gamma.len()).rev() {
            gamma[d] = gamma[d] + gamma[d - 1] * x;
        }
    }

    // Berlekamp-Massey seeded with the erasure locator.
    let two_t = PARITY_SYMBOLS;
    let mut lambda = gamma.clone();
    lambda.resize(two_t + 1, Gf64::ZERO);
    let mut prev = lambda.clone();
    let mut len = rho;
    let mut shift = 1usize;
    let mut prev_disc = Gf64::ONE;
    for step in rho..two_t {
        let mut disc = Gf64::ZERO;
        for i in 0..=len.min(step) {
            disc += lambda[i] * s[step - i];
        }
        if disc.is_zero() {
            shift += 1;
            continue;
        }
        let scale = disc * prev_disc.inv().expect("nonzero discrepancy");
        let mut next = lambda.clone();
        for i in 0..=two_t - shift {
            next[i + shift] += scale * prev[i];
        }
        if 2 * len <= step + rho {
            prev = std::mem::replace(&mut lambda, next);
            len = step + 1 + rho - len;
            prev_disc = disc;
            shift = 1;
        } else {
            lambda = next;
            shift += 1;
        }
    }
    lambda.truncate(len + 1);
    if poly_degree(&lambda) != len || 2 * (len - rho) + rho > two_t {
        return Err(RsError::DecodeFailure("error locator degree exceeds capacity"));
    }

    // Chien search restricted to the positions of the shortened code.
    let roots: Vec<usize> = (0..n)
        .filter(|&pos| {
            let x_inv = Gf64::alpha_pow(crate::gf64::GROUP_ORDER - degree_of(pos) % crate::gf64::GROUP_ORDER);
            poly_eval(&lambda, x_inv).is_zero()
        })
        .collect();
    if roots.len() != len {
        return Err(RsError::DecodeFailure("error locator roots do not match its degree"));
    }

    // Forney: e = Ω(X^-1) / Λ'(X^-1) with Ω = S Λ mod x^2t.
    let mut omega = vec![Gf64::ZERO; two_t];
    for (i, &li) in lambda.iter().enumerate() {
        for (j, &sj) in s.iter().enumerate() {
            if i + j < two_t {
                omega[i + j] += li * sj;
            }
        }
    }
    let derivative: Vec<Gf64> = lambda
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| if i % 2 == 1 { c } else { Gf64::ZERO })
        .collect();

    let mut corrected = received.clone();
    let mut corrected_positions = Vec::new();
    for &pos in &roots {
        let x_inv = Gf64::alpha_pow(crate::gf64::GROUP_ORDER - degree_of(pos) % crate::gf64::GROUP_ORDER);
        let denom = poly_eval(&derivative, x_inv);
        let Ok(denom_inv) = denom.inv() else {
            return Err(RsError::DecodeFailure("repeated error locator root"));
        };
        let magnitude = poly_eval(&omega, x_inv) * denom_inv;
        if !magnitude.is_zero() {
            corrected[pos] += magnitude;
            corrected_positions.push(pos);
        } else if erased.binary_search(&pos).is_ok() {
            // erased symbol whose true value is zero
            corrected_positions.push(pos);
        }
    }

    if syndromes(&corrected).iter().any(|x| !x.is_zero()) {
        return Err(RsError::DecodeFailure("nonzero syndromes after correction"));
    }
    let codeword = RsCodeword::from_symbols(size, &corrected);
    if !codeword.pad_is_clear() {
        return Err(RsError::DecodeFailure("pad bits set after correction"));
    }
    Ok(Decoded { codeword, erasures: rho, corrected_positions })
}

/// Groups per-bit readings (`None` = erasure) into symbol readings. A symbol
/// is erased when any of its stored bits is erased; pad bits read as zero.
pub fn readings_from_bits(size: KeySize, bits: &[Option<bool>]) -> Result<Vec<SymbolReading>, RsError> {
    if bits.len() != size.stored_bits() {
        return Err(RsError::InputLength { expected: size.stored_bits(), got: bits.len() });
    }
    let n = size.codeword_symbols();
    let mut values = vec![0u8; n];
    let mut erased = vec![false; n];
    for (b, bit) in bits.iter().enumerate() {
        let (pos, mask) = size.bit_location(b);
        match bit {
            None => erased[pos] = true,
            Some(true) => values[pos] |= mask,
            Some(false) => {}
        }
    }
    Ok((0..n)
        .map(|position| SymbolReading {
            position,
            state: if erased[position] {
                SymbolState::Erasure
            } else {
                SymbolState::Value(Gf64::from_low_bits(values[position]))
            },
        })
        .collect())
}

/// Clean readings of a codeword, one per symbol.
pub fn clean_readings(codeword: &RsCodeword) -> Vec<SymbolReading> {
    codeword
        .symbols()
        .into_iter()
        .enumerate()
        .map(|(position, v)| SymbolReading { position, state: SymbolState::Value(v) })
        .collect()
}
