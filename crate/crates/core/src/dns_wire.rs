//! DNS message handling for ephemeral bit queries, and the transport contract
//! shared by the UDP backend and the simulator.
//!
//! Only what the protocol needs is supported: single-question queries with
//! the RD bit under caller control, and responses whose first answer record
//! carries the remaining TTL.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DNS_PORT: u16 = 53;
const HEADER_LEN: usize = 12;
const FLAG_QR: u16 = 0x8000;
const FLAG_RD: u16 = 0x0100;
const FLAG_RA: u16 = 0x0080;
const CLASS_IN: u16 = 1;
const MAX_NAME_WIRE_LEN: usize = 255;
const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("invalid domain name {name:?}: {reason}")]
    InvalidName { name: String, reason: &'static str },
    #[error("malformed message at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("transaction id mismatch: expected {expected:#06x}, got {got:#06x}")]
    TxidMismatch { expected: u16, got: u16 },
    #[error("response question does not match the query")]
    QuestionMismatch,
    #[error("invalid resolver endpoint {0:?}")]
    InvalidEndpoint(String),
}

/// A validated, lowercase domain name without the trailing dot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DomainName(String);

impl DomainName {
    pub fn new(name: &str) -> Result<DomainName, WireError> {
        let trimmed = name.strip_suffix('.').unwrap_or(name);
        let invalid = |reason| WireError::InvalidName { name: name.to_string(), reason };
        if trimmed.is_empty() {
            return Err(invalid("empty name"));
        }
        let mut wire_len = 1;
        for label in trimmed.split('.') {
            if label.is_empty() {
                return Err(invalid("empty label"));
            }
            if label.len() > MAX_LABEL_LEN {
                return Err(invalid("label longer than 63 octets"));
            }
            if !label.bytes().all(|b| b.is_ascii_graphic()) {
                return Err(invalid("label contains non-printable octets"));
            }
            wire_len += label.len() + 1;
        }
        if wire_len > MAX_NAME_WIRE_LEN {
            return Err(invalid("name longer than 255 octets"));
        }
        Ok(DomainName(trimmed.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.split('.')
    }

    /// Length of the uncompressed wire form.
    pub fn wire_len(&self) -> usize {
        self.0.len() + 2
    }

    /// The name with its first label removed, if it has more than one label.
    pub fn parent(&self) -> Option<DomainName> {
        self.0.split_once('.').map(|(_, rest)| DomainName(rest.to_string()))
    }

    /// `d.c.b.a.in-addr.arpa` for address `a.b.c.d`.
    pub fn reverse_of(addr: Ipv4Addr) -> DomainName {
        let [a, b, c, d] = addr.octets();
        DomainName(format!("{d}.{c}.{b}.{a}.in-addr.arpa"))
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DomainName {
    type Err = WireError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DomainName::new(s)
    }
}

impl TryFrom<String> for DomainName {
    type Error = WireError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        DomainName::new(&s)
    }
}

impl From<DomainName> for String {
    fn from(d: DomainName) -> String {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordType {
    A,
    Ns,
    Cname,
    Ptr,
    Txt,
    Aaaa,
    Other(u16),
}

impl RecordType {
    pub fn code(self) -> u16 {
        match self {
            RecordType::A => 1,
            RecordType::Ns => 2,
            RecordType::Cname => 5,
            RecordType::Ptr => 12,
            RecordType::Txt => 16,
            RecordType::Aaaa => 28,
            RecordType::Other(c) => c,
        }
    }

    pub fn from_code(code: u16) -> RecordType {
        match code {
            1 => RecordType::A,
            2 => RecordType::Ns,
            5 => RecordType::Cname,
            12 => RecordType::Ptr,
            16 => RecordType::Txt,
            28 => RecordType::Aaaa,
            c => RecordType::Other(c),
        }
    }
}

impl fmt::Display for RecordType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordType::A => f.write_str("A"),
            RecordType::Ns => f.write_str("NS"),
            RecordType::Cname => f.write_str("CNAME"),
            RecordType::Ptr => f.write_str("PTR"),
            RecordType::Txt => f.write_str("TXT"),
            RecordType::Aaaa => f.write_str("AAAA"),
            RecordType::Other(c) => write!(f, "TYPE{c}"),
        }
    }
}

impl FromStr for RecordType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "A" => RecordType::A,
            "NS" => RecordType::Ns,
            "CNAME" => RecordType::Cname,
            "PTR" => RecordType::Ptr,
            "TXT" => RecordType::Txt,
            "AAAA" => RecordType::Aaaa,
            other => match other.strip_prefix("TYPE").and_then(|c| c.parse().ok()) {
                Some(code) => RecordType::Other(code),
                None => return Err(format!("unknown record type {s:?}")),
            },
        })
    }
}

/// Recursive queries set RD; non-recursive queries clear it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryMode {
    Recursive,
    NonRecursive,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DnsQuestion {
    pub qname: DomainName,
    pub qtype: RecordType,
    pub mode: QueryMode,
}

impl DnsQuestion {
    pub fn new(qname: DomainName, qtype: RecordType, mode: QueryMode) -> DnsQuestion {
        DnsQuestion { qname, qtype, mode }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ResolverEndpoint {
    pub addr: Ipv4Addr,
    pub port: u16,
}

impl ResolverEndpoint {
    pub fn new(addr: Ipv4Addr, port: u16) -> ResolverEndpoint {
        ResolverEndpoint { addr, port }
    }

    pub fn dns(addr: Ipv4Addr) -> ResolverEndpoint {
        ResolverEndpoint { addr, port: DNS_PORT }
    }
}

impl fmt::Display for ResolverEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.addr, self.port)
    }
}

impl FromStr for ResolverEndpoint {
    type Err = WireError;
    /// Accepts `a.b.c.d` or `a.b.c.d:port`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WireError::InvalidEndpoint(s.to_string());
        let (addr, port) = match s.rsplit_once(':') {
            Some((a, p)) => (a, p.parse().map_err(|_| bad())?),
            None => (s, DNS_PORT),
        };
        Ok(ResolverEndpoint { addr: addr.parse().map_err(|_| bad())?, port })
    }
}

impl TryFrom<String> for ResolverEndpoint {
    type Error = WireError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ResolverEndpoint> for String {
    fn from(e: ResolverEndpoint) -> String {
        e.to_string()
    }
}

/// Decoded data of the first answer record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordData {
    A(Ipv4Addr),
    Name(DomainName),
    Raw(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Hit,
    Miss,
    Timeout,
    Refused,
}

/// Result of one DNS transaction. `remaining_ttl` is present iff `Hit`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub kind: OutcomeKind,
    pub remaining_ttl: Option<u32>,
    pub rtt_ms: u32,
    pub answer: Option<RecordData>,
}

impl QueryOutcome {
    pub fn hit(remaining_ttl: u32, answer: Option<RecordData>) -> QueryOutcome {
        QueryOutcome { kind: OutcomeKind::Hit, remaining_ttl: Some(remaining_ttl), rtt_ms: 0, answer }
    }

    pub fn miss() -> QueryOutcome {
        QueryOutcome { kind: OutcomeKind::Miss, remaining_ttl: None, rtt_ms: 0, answer: None }
    }

    pub fn timeout() -> QueryOutcome {
        QueryOutcome { kind: OutcomeKind::Timeout, remaining_ttl: None, rtt_ms: 0, answer: None }
    }

    pub fn refused() -> QueryOutcome {
        QueryOutcome { kind: OutcomeKind::Refused, remaining_ttl: None, rtt_ms: 0, answer: None }
    }

    pub fn with_rtt(mut self, rtt_ms: u32) -> QueryOutcome {
        self.rtt_ms = rtt_ms;
        self
    }

    pub fn is_hit(&self) -> bool {
        self.kind == OutcomeKind::Hit
    }
}

/// The query primitive both backends implement.
///
/// Retries happen inside `query`; `Timeout` is only reported once every
/// attempt failed. Implementations must treat unreachable resolvers as
/// `Timeout`.
pub trait Transport {
    fn query(&mut self, resolver: &ResolverEndpoint, question: &DnsQuestion, timeout_ms: u32) -> QueryOutcome;

    /// Issues independent queries, possibly concurrently. Outcomes are
    /// returned in request order.
    fn query_batch(&mut self, requests: &[(ResolverEndpoint, DnsQuestion)], timeout_ms: u32) -> Vec<QueryOutcome> {
        requests.iter().map(|(r, q)| self.query(r, q, timeout_ms)).collect()
    }

    /// Current time in seconds since the Unix epoch (virtual for the simulator).
    fn now(&self) -> u64;

    /// Blocks (or advances virtual time) until `now() >= t`.
    fn wait_until(&mut self, t: u64);
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn query(&mut self, resolver: &ResolverEndpoint, question: &DnsQuestion, timeout_ms: u32) -> QueryOutcome {
        (**self).query(resolver, question, timeout_ms)
    }

    fn query_batch(&mut self, requests: &[(ResolverEndpoint, DnsQuestion)], timeout_ms: u32) -> Vec<QueryOutcome> {
        (**self).query_batch(requests, timeout_ms)
    }

    fn now(&self) -> u64 {
        (**self).now()
    }

    fn wait_until(&mut self, t: u64) {
        (**self).wait_until(t)
    }
}

fn push_name(out: &mut Vec<u8>, name: &DomainName) {
    for label in name.labels() {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
}

/// Builds a standard query message. The RD bit is set iff the mode is
/// recursive.
pub fn encode_query(question: &DnsQuestion, txid: u16) -> Vec<u8> {
    let flags = match question.mode {
        QueryMode::Recursive => FLAG_RD,
        QueryMode::NonRecursive => 0,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + question.qname.wire_len() + 4);
    out.extend_from_slice(&txid.to_be_bytes());
    out.extend_from_slice(&flags.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes()); // QDCOUNT
    out.extend_from_slice(&[0; 6]); // AN/NS/AR
    push_name(&mut out, &question.qname);
    out.extend_from_slice(&question.qtype.code().to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
    out
}

/// Response codes we distinguish.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rcode {
    NoError,
    ServFail,
    NxDomain,
    Refused,
    Other(u8),
}

impl Rcode {
    fn code(self) -> u8 {
        match self {
            Rcode::NoError => 0,
            Rcode::ServFail => 2,
            Rcode::NxDomain => 3,
            Rcode::Refused => 5,
            Rcode::Other(c) => c & 0x0f,
        }
    }

    fn from_code(c: u8) -> Rcode {
        match c {
            0 => Rcode::NoError,
            2 => Rcode::ServFail,
            3 => Rcode::NxDomain,
            5 => Rcode::Refused,
            c => Rcode::Other(c),
        }
    }
}

/// Builds a response message echoing `question`. Answer owners are written
/// as compression pointers to the question name.
pub fn encode_response(txid: u16, question: &DnsQuestion, rcode: Rcode, answers: &[(u32, RecordData)]) -> Vec<u8> {
    let mut flags = FLAG_QR | FLAG_RA | u16::from(rcode.code());
    if question.mode == QueryMode::Recursive {
        flags |= FLAG_RD;
    }
    let mut out = Vec::new();
    out.extend_from_slice(&txid.to_be_bytes());
    out.extend_from_slice(&flags.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(answers.len() as u16).to_be_bytes());
    out.extend_from_slice(&[0; 4]);
    push_name(&mut out, &question.qname);
    out.extend_from_slice(&question.qtype.code().to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
    for (ttl, data) in answers {
        out.extend_from_slice(&0xc00cu16.to_be_bytes());
        let rtype = match data {
            RecordData::A(_) => RecordType::A,
            RecordData::Name(_) if question.qtype == RecordType::A => RecordType::Cname,
            RecordData::Name(_) | RecordData::Raw(_) => question.qtype,
        };
        out.extend_from_slice(&rtype.code().to_be_bytes());
        out.extend_from_slice(&CLASS_IN.to_be_bytes());
        out.extend_from_slice(&ttl.to_be_bytes());
        let rdata = match data {
            RecordData::A(ip) => ip.octets().to_vec(),
            RecordData::Name(n) => {
                let mut v = Vec::new();
                push_name(&mut v, n);
                v
            }
            RecordData::Raw(v) => v.clone(),
        };
        out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
        out.extend_from_slice(&rdata);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn malformed(&self, reason: &'static str) -> WireError {
        WireError::Malformed { offset: self.pos, reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(self.malformed("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads a possibly compressed name starting at the cursor.
    fn name(&mut self) -> Result<String, WireError> {
        let mut labels: Vec<String> = Vec::new();
        let mut cursor = self.pos;
        let mut resume = None;
        let mut jumps = 0;
        let mut total = 1;
        loop {
            let Some(&len) = self.buf.get(cursor) else {
                return Err(WireError::Malformed { offset: cursor, reason: "truncated name" });
            };
            match len & 0xc0 {
                0x00 => {
                    if len == 0 {
                        cursor += 1;
                        break;
                    }
                    let len = usize::from(len);
                    let Some(label) = self.buf.get(cursor + 1..cursor + 1 + len) else {
                        return Err(WireError::Malformed { offset: cursor, reason: "truncated label" });
                    };
                    total += len + 1;
                    if total > MAX_NAME_WIRE_LEN {
                        return Err(WireError::Malformed { offset: cursor, reason: "name too long" });
                    }
                    labels.push(String::from_utf8_lossy(label).into_owned());
                    cursor += 1 + len;
                }
                0xc0 => {
                    let Some(&low) = self.buf.get(cursor + 1) else {
                        return Err(WireError::Malformed { offset: cursor, reason: "truncated pointer" });
                    };
                    jumps += 1;
                    if jumps > 32 {
                        return Err(WireError::Malformed { offset: cursor, reason: "compression loop" });
                    }
                    resume.get_or_insert(cursor + 2);
                    cursor = (usize::from(len & 0x3f) << 8) | usize::from(low);
                }
                _ => return Err(WireError::Malformed { offset: cursor, reason: "reserved label type" }),
            }
        }
        self.pos = resume.unwrap_or(cursor);
        Ok(labels.join("."))
    }
}

fn parse_inner(bytes: &[u8], expected_txid: u16, question: Option<&DnsQuestion>) -> Result<QueryOutcome, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let txid = r.u16()?;
    let flags = r.u16()?;
    let qdcount = r.u16()?;
    let ancount = r.u16()?;
    let _nscount = r.u16()?;
    let _arcount = r.u16()?;
    if txid != expected_txid {
        return Err(WireError::TxidMismatch { expected: expected_txid, got: txid });
    }
    if flags & FLAG_QR == 0 {
        return Err(WireError::Malformed { offset: 2, reason: "not a response" });
    }
    for i in 0..qdcount {
        let name = r.name()?;
        let qtype = r.u16()?;
        let _class = r.u16()?;
        if let (0, Some(q)) = (i, question) {
            if !name.eq_ignore_ascii_case(q.qname.as_str()) || qtype != q.qtype.code() {
                return Err(WireError::QuestionMismatch);
            }
        }
    }
    if question.is_some() && qdcount == 0 {
        return Err(WireError::QuestionMismatch);
    }
    match Rcode::from_code((flags & 0x0f) as u8) {
        Rcode::NoError => {}
        Rcode::NxDomain => return Ok(QueryOutcome::miss()),
        // SERVFAIL and anything else: the resolver declined to answer
        _ => return Ok(QueryOutcome::refused()),
    }
    if ancount == 0 {
        return Ok(QueryOutcome::miss());
    }
    r.name()?;
    let rtype = r.u16()?;
    let _class = r.u16()?;
    let ttl = r.u32()?;
    let rdlen = usize::from(r.u16()?);
    let rdata_start = r.pos;
    let rdata = r.take(rdlen)?;
    let answer = match RecordType::from_code(rtype) {
        RecordType::A if rdlen == 4 => RecordData::A(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3])),
        RecordType::Ptr | RecordType::Cname | RecordType::Ns => {
            let mut nr = Reader { buf: bytes, pos: rdata_start };
            let name = nr.name()?;
            match DomainName::new(&name) {
                Ok(n) => RecordData::Name(n),
                Err(_) => RecordData::Raw(rdata.to_vec()),
            }
        }
        _ => RecordData::Raw(rdata.to_vec()),
    };
    // TTLs with the top bit set are treated as zero (RFC 2181 §8)
    let ttl = if ttl > i32::MAX as u32 { 0 } else { ttl };
    Ok(QueryOutcome::hit(ttl, Some(answer)))
}

/// Interprets a response. Hit iff NOERROR with at least one answer, with the
/// first answer's TTL; Miss for NOERROR/no-answer and NXDOMAIN; Refused for
/// REFUSED and other error rcodes.
pub fn parse_response(bytes: &[u8], expected_txid: u16) -> Result<QueryOutcome, WireError> {
    parse_inner(bytes, expected_txid, None)
}

/// Like [`parse_response`] but also checks that the echoed question matches.
pub fn parse_response_for(bytes: &[u8], expected_txid: u16, question: &DnsQuestion) -> Result<QueryOutcome, WireError> {
    parse_inner(bytes, expected_txid, Some(question))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(name: &str, mode: QueryMode) -> DnsQuestion {
        DnsQuestion::new(DomainName::new(name).unwrap(), RecordType::A, mode)
    }

    #[test]
    fn rd_bit_follows_mode() {
        let rec = encode_query(&q("example.com", QueryMode::Recursive), 0x1234);
        let non = encode_query(&q("example.com", QueryMode::NonRecursive), 0x1234);
        // hand-assembled RFC 1035 header: id, flags, qdcount=1, rest zero
        assert_eq!(&rec[..12], &[0x12, 0x34, 0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&non[..12], &[0x12, 0x34, 0x00, 0x00, 0, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&rec[12..], &non[12..]);
    }

    #[test]
    fn question_section_layout() {
        let bytes = encode_query(&q("a.b", QueryMode::Recursive), 7);
        assert_eq!(&bytes[12..], &[1, b'a', 1, b'b', 0, 0, 1, 0, 1]);
    }

    #[test]
    fn names_are_validated() {
        assert!(DomainName::new(&"x".repeat(64)).is_err());
        assert!(DomainName::new(&"x".repeat(63)).is_ok());
        let long = vec!["abcdefghi"; 26].join(".");
        assert_eq!(long.len() + 2, 261);
        assert!(DomainName::new(&long).is_err());
        assert!(DomainName::new("a..b").is_err());
        assert!(DomainName::new("").is_err());
        assert_eq!(DomainName::new("WWW.Example.com.").unwrap().as_str(), "www.example.com");
        assert_eq!(
            DomainName::new("h1.isp.net").unwrap().parent().unwrap().as_str(),
            "isp.net"
        );
        assert_eq!(
            DomainName::reverse_of(Ipv4Addr::new(126, 60, 235, 192)).as_str(),
            "192.235.60.126.in-addr.arpa"
        );
    }

    #[test]
    fn hit_with_ttl() {
        // hand-assembled response: 1 answer, TTL 86400 (0x00015180), A 192.0.2.1
        let bytes: Vec<u8> = vec![
            0xbe, 0xef, 0x81, 0x80, 0, 1, 0, 1, 0, 0, 0, 0, //
            1, b'a', 1, b'b', 0, 0, 1, 0, 1, //
            0xc0, 0x0c, 0, 1, 0, 1, 0x00, 0x01, 0x51, 0x80, 0, 4, 192, 0, 2, 1,
        ];
        let out = parse_response(&bytes, 0xbeef).unwrap();
        assert_eq!(out.kind, OutcomeKind::Hit);
        assert_eq!(out.remaining_ttl, Some(86400));
        assert_eq!(out.answer, Some(RecordData::A(Ipv4Addr::new(192, 0, 2, 1))));
        assert_eq!(bytes, encode_response(0xbeef, &q("a.b", QueryMode::Recursive), Rcode::NoError, &[(86400, RecordData::A(Ipv4Addr::new(192, 0, 2, 1)))]));
    }

    #[test]
    fn nxdomain_is_miss() {
        let bytes: Vec<u8> = vec![0, 9, 0x81, 0x83, 0, 1, 0, 0, 0, 0, 0, 0, 1, b'a', 1, b'b', 0, 0, 1, 0, 1];
        assert_eq!(parse_response(&bytes, 9).unwrap().kind, OutcomeKind::Miss);
    }

    #[test]
    fn noerror_without_answers_is_miss() {
        let question = q("a.b", QueryMode::NonRecursive);
        let bytes = encode_response(3, &question, Rcode::NoError, &[]);
        assert_eq!(parse_response_for(&bytes, 3, &question).unwrap().kind, OutcomeKind::Miss);
    }

    #[test]
    fn refused_and_servfail() {
        let question = q("a.b", QueryMode::NonRecursive);
        let bytes = encode_response(3, &question, Rcode::Refused, &[]);
        assert_eq!(parse_response(&bytes, 3).unwrap().kind, OutcomeKind::Refused);
        let bytes = encode_response(3, &question, Rcode::ServFail, &[]);
        assert_eq!(parse_response(&bytes, 3).unwrap().kind, OutcomeKind::Refused);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(matches!(parse_response(&[1, 2, 3, 4, 5], 0x0102), Err(WireError::Malformed { .. })));
        let question = q("a.b", QueryMode::Recursive);
        let good = encode_response(1, &question, Rcode::NoError, &[(5, RecordData::A(Ipv4Addr::LOCALHOST))]);
        assert!(matches!(parse_response(&good, 2), Err(WireError::TxidMismatch { .. })));
        assert!(parse_response(&good[..good.len() - 1], 1).is_err());
        // a query is not a response
        assert!(parse_response(&encode_query(&question, 1), 1).is_err());
        let other = q("c.d", QueryMode::Recursive);
        assert_eq!(parse_response_for(&good, 1, &other), Err(WireError::QuestionMismatch));
    }

    #[test]
    fn pointer_loops_rejected() {
        let mut bytes = vec![0, 1, 0x81, 0x80, 0, 1, 0, 0, 0, 0, 0, 0];
        bytes.extend_from_slice(&[0xc0, 0x0c, 0, 1, 0, 1]);
        assert!(matches!(parse_response(&bytes, 1), Err(WireError::Malformed { .. })));
    }

    #[test]
    fn ptr_answers_decode_names() {
        let question = DnsQuestion::new(
            DomainName::reverse_of(Ipv4Addr::new(10, 0, 0, 1)),
            RecordType::Ptr,
            QueryMode::Recursive,
        );
        let target = DomainName::new("softbank126060235192.bbtec.net").unwrap();
        let bytes = encode_response(77, &question, Rcode::NoError, &[(3600, RecordData::Name(target.clone()))]);
        let out = parse_response_for(&bytes, 77, &question).unwrap();
        assert_eq!(out.answer, Some(RecordData::Name(target)));
        assert_eq!(out.remaining_ttl, Some(3600));
    }

    #[test]
    fn endpoints_parse() {
        assert_eq!("192.0.2.1".parse::<ResolverEndpoint>().unwrap(), ResolverEndpoint::dns(Ipv4Addr::new(192, 0, 2, 1)));
        assert_eq!("192.0.2.1:5353".parse::<ResolverEndpoint>().unwrap().port, 5353);
        assert!("nope".parse::<ResolverEndpoint>().is_err());
    }

    proptest! {
        #[test]
        fn parse_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200), txid in any::<u16>()) {
            let _ = parse_response(&bytes, txid);
        }

        #[test]
        fn query_roundtrip(labels in proptest::collection::vec("[a-z0-9-]{1,20}", 1..5), txid in any::<u16>(), rec in any::<bool>(), ttl in 0u32..1_000_000) {
            let name = DomainName::new(&labels.join(".")).unwrap();
            let mode = if rec { QueryMode::Recursive } else { QueryMode::NonRecursive };
            let question = DnsQuestion::new(name.clone(), RecordType::A, mode);
            let query = encode_query(&question, txid);
            prop_assert_eq!(u16::from_be_bytes([query[0], query[1]]), txid);
            prop_assert_eq!(query[2] & 0x01 == 1, rec);
            prop_assert_eq!(encode_query(&question, txid), query);
            let resp = encode_response(txid, &question, Rcode::NoError, &[(ttl, RecordData::A(Ipv4Addr::new(10, 1, 2, 3)))]);
            let out = parse_response_for(&resp, txid, &question).unwrap();
            prop_assert_eq!(out.remaining_ttl, Some(ttl));
        }
    }
}
