//! The EphPub Object and its `.epo` binary encoding.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! magic "EPO1" | version u8 | flags u8 | key_bits u8 | record_type u16
//! expiry u64 | common_ttl u32 | cell_count u16
//! [flags & SUFFIXES] suffix_count u16, suffix_count x (len u8, bytes)
//! cell_count x cell
//! ciphertext_len u32 | crc32 u32 | ciphertext
//! ```
//!
//! A cell is `addr[4] port u16 [ttl u32 if flags & PER_CELL_TTL]` followed by
//! either `len u8, name` or, with suffix compression, `len u8, first label,
//! suffix_index u16` (0xffff for single-label names). The CRC covers every
//! byte before it. The writer compresses suffixes only when that is smaller,
//! so the encoding of a given object is unique.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns_wire::{DomainName, RecordType, ResolverEndpoint};
use crate::rs6355::KeySize;

pub const MAGIC: &[u8; 4] = b"EPO1";
pub const FORMAT_VERSION: u8 = 1;
const FLAG_SUFFIXES: u8 = 0x01;
const FLAG_PER_CELL_TTL: u8 = 0x02;
const NO_SUFFIX: u16 = 0xffff;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EpoError {
    #[error("invalid EPO: {0}")]
    Input(String),
    #[error("EPO parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: &'static str },
    #[error("EPO checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitCell {
    pub resolver: ResolverEndpoint,
    pub domain: DomainName,
    pub expected_ttl: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpoObject {
    pub version: u8,
    pub key_size: KeySize,
    pub record_type: RecordType,
    /// Absolute expiry, seconds since the Unix epoch.
    pub expiry: u64,
    pub cells: Vec<BitCell>,
    /// `nonce || ciphertext || tag`.
    pub ciphertext: Vec<u8>,
}

fn validate_cells(cells: &[BitCell], key_size: KeySize) -> Result<(), String> {
    if cells.len() != key_size.stored_bits() {
        return Err(format!("expected {} cells, got {}", key_size.stored_bits(), cells.len()));
    }
    let mut seen: Vec<ResolverEndpoint> = cells.iter().map(|c| c.resolver).collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(format!("resolver {} used by more than one cell", w[0]));
    }
    if let Some(c) = cells.iter().find(|c| c.expected_ttl == 0) {
        return Err(format!("cell {} has a zero TTL", c.domain));
    }
    Ok(())
}

impl EpoObject {
    /// Validates and assembles an EPO created at `now`.
    pub fn build(
        ciphertext: Vec<u8>,
        cells: Vec<BitCell>,
        expiry: u64,
        now: u64,
        key_size: KeySize,
        record_type: RecordType,
    ) -> Result<EpoObject, EpoError> {
        validate_cells(&cells, key_size).map_err(EpoError::Input)?;
        if expiry <= now {
            return Err(EpoError::Input(format!("expiry {expiry} is not after creation time {now}")));
        }
        Ok(EpoObject { version: FORMAT_VERSION, key_size, record_type, expiry, cells, ciphertext })
    }

    pub fn data_cells(&self) -> &[BitCell] {
        &self.cells[..self.key_size.key_bits()]
    }

    pub fn parity_cells(&self) -> &[BitCell] {
        &self.cells[self.key_size.key_bits()..]
    }

    fn common_ttl(&self) -> Option<u32> {
        let first = self.cells.first()?.expected_ttl;
        self.cells.iter().all(|c| c.expected_ttl == first).then_some(first)
    }

    fn encode(&self, compress: bool) -> Vec<u8> {
        let common = self.common_ttl();
        let mut flags = 0;
        if compress {
            flags |= FLAG_SUFFIXES;
        }
        if common.is_none() {
            flags |= FLAG_PER_CELL_TTL;
        }
        let mut out = Vec::with_capacity(64 + self.cells.len() * 28 + self.ciphertext.len());
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.push(flags);
        out.push(self.key_size.key_bits() as u8);
        out.extend_from_slice(&self.record_type.code().to_be_bytes());
        out.extend_from_slice(&self.expiry.to_be_bytes());
        out.extend_from_slice(&common.unwrap_or(0).to_be_bytes());
        out.extend_from_slice(&(self.cells.len() as u16).to_be_bytes());

        let mut suffixes: Vec<&str> = Vec::new();
        let mut refs = Vec::with_capacity(self.cells.len());
        if compress {
            for c in &self.cells {
                let r = match c.domain.as_str().split_once('.') {
                    None => NO_SUFFIX,
                    Some((_, suffix)) => match suffixes.iter().position(|s| *s == suffix) {
                        Some(i) => i as u16,
                        None => {
                            suffixes.push(suffix);
                            (suffixes.len() - 1) as u16
                        }
                    },
                };
                refs.push(r);
            }
            out.extend_from_slice(&(suffixes.len() as u16).to_be_bytes());
            for s in &suffixes {
                out.push(s.len() as u8);
                out.extend_from_slice(s.as_bytes());
            }
        }
        for (i, c) in self.cells.iter().enumerate() {
            out.extend_from_slice(&c.resolver.addr.octets());
            out.extend_from_slice(&c.resolver.port.to_be_bytes());
            if common.is_none() {
                out.extend_from_slice(&c.expected_ttl.to_be_bytes());
            }
            if compress {
                let first = c.domain.labels().next().expect("names have a label");
                out.push(first.len() as u8);
                out.extend_from_slice(first.as_bytes());
                out.extend_from_slice(&refs[i].to_be_bytes());
            } else {
                out.push(c.domain.as_str().len() as u8);
                out.extend_from_slice(c.domain.as_str().as_bytes());
            }
        }
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    /// Canonical encoding.
    pub fn serialize(&self) -> Vec<u8> {
        let plain = self.encode(false);
        let packed = self.encode(true);
        if packed.len() < plain.len() {
            packed
        } else {
            plain
        }
    }

    /// Encoding without suffix compression, for size accounting.
    pub fn serialize_uncompressed(&self) -> Vec<u8> {
        self.encode(false)
    }

    /// Serialized size minus the ciphertext length.
    pub fn overhead_bytes(&self) -> usize {
        self.serialize().len() - self.ciphertext.len()
    }

    pub fn parse(bytes: &[u8]) -> Result<EpoObject, EpoError> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(EpoError::Parse { offset: 0, reason: "bad magic" });
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(EpoError::Parse { offset: 4, reason: "unsupported version" });
        }
        let flags = r.u8()?;
        if flags & !(FLAG_SUFFIXES | FLAG_PER_CELL_TTL) != 0 {
            return Err(EpoError::Parse { offset: 5, reason: "unknown flags" });
        }
        let key_size = KeySize::from_key_bits(usize::from(r.u8()?))
            .ok_or(EpoError::Parse { offset: 6, reason: "unsupported key size" })?;
        let record_type = RecordType::from_code(r.u16()?);
        let expiry = r.u64()?;
        let ttl_at = r.pos;
        let common_ttl = r.u32()?;
        let per_cell = flags & FLAG_PER_CELL_TTL != 0;
        if per_cell != (common_ttl == 0) {
            return Err(EpoError::Parse { offset: ttl_at, reason: "inconsistent TTL fields" });
        }
        let count_at = r.pos;
        let count = usize::from(r.u16()?);
        if count != key_size.stored_bits() {
            return Err(EpoError::Parse { offset: count_at, reason: "wrong cell count" });
        }
        let mut suffixes = Vec::new();
        if flags & FLAG_SUFFIXES != 0 {
            let n = r.u16()?;
            for _ in 0..n {
                let len = usize::from(r.u8()?);
                let at = r.pos;
                let s = std::str::from_utf8(r.take(len)?).map_err(|_| EpoError::Parse { offset: at, reason: "suffix not text" })?;
                suffixes.push(s.to_string());
            }
        }
        let mut cells = Vec::with_capacity(count);
        for _ in 0..count {
            let a = r.take(4)?;
            let addr = std::net::Ipv4Addr::new(a[0], a[1], a[2], a[3]);
            let port = r.u16()?;
            let expected_ttl = if per_cell { r.u32()? } else { common_ttl };
            let len = usize::from(r.u8()?);
            let at = r.pos;
            let bad_name = EpoError::Parse { offset: at, reason: "invalid domain name" };
            let head = std::str::from_utf8(r.take(len)?).map_err(|_| bad_name.clone())?.to_string();
            let text = if flags & FLAG_SUFFIXES != 0 {
                let idx_at = r.pos;
                match r.u16()? {
                    NO_SUFFIX => head,
                    i => {
                        let s = suffixes
                            .get(usize::from(i))
                            .ok_or(EpoError::Parse { offset: idx_at, reason: "suffix index out of range" })?;
                        format!("{head}.{s}")
                    }
                }
            } else {
                head
            };
            let domain = DomainName::new(&text).map_err(|_| bad_name.clone())?;
            if domain.as_str() != text {
                return Err(bad_name);
            }
            cells.push(BitCell { resolver: ResolverEndpoint::new(addr, port), domain, expected_ttl });
        }
        let ct_len = r.u32()? as usize;
        let crc_at = r.pos;
        let computed = crc32fast::hash(&bytes[..crc_at]);
        let stored = r.u32()?;
        if stored != computed {
            return Err(EpoError::Checksum { stored, computed });
        }
        if bytes.len() - r.pos != ct_len {
            return Err(EpoError::Parse { offset: r.pos, reason: "ciphertext length mismatch" });
        }
        let ciphertext = bytes[r.pos..].to_vec();
        validate_cells(&cells, key_size).map_err(|_| EpoError::Parse { offset: count_at, reason: "invalid cell set" })?;
        Ok(EpoObject { version, key_size, record_type, expiry, cells, ciphertext })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EpoError> {
        if self.buf.len() - self.pos < n {
            return Err(EpoError::Parse { offset: self.pos, reason: "truncated" });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, EpoError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, EpoError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, EpoError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, EpoError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl fmt::Display for EpoObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "EPO v{} key_bits={} rtype={} expiry={}", self.version, self.key_size.key_bits(), self.record_type, self.expiry)?;
        writeln!(f, "ciphertext {} bytes, overhead {} bytes", self.ciphertext.len(), self.overhead_bytes())?;
        for (i, c) in self.cells.iter().enumerate() {
            let kind = if i < self.key_size.key_bits() { "data" } else { "parity" };
            writeln!(f, "{i:3} {kind:6} {:21} {} ttl={}", c.resolver.to_string(), c.domain, c.expected_ttl)?;
        }
        Ok(())
    }
}
