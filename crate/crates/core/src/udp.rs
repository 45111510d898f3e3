//! Real-network backend: plain DNS over UDP.

use std::net::{SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::rngs::OsRng;
use rand::RngCore;
use thiserror::Error;

use crate::dns_wire::{encode_query, parse_response_for, DnsQuestion, QueryOutcome, ResolverEndpoint, Transport};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpConfig {
    /// Extra attempts after the first one times out.
    pub retries: u32,
    /// Maximum queries in flight during a batch.
    pub parallelism: usize,
    /// Opaque forwarding hook. This backend does not implement tunnelling,
    /// so a configured proxy makes construction fail rather than leak
    /// queries from the local address.
    pub proxy: Option<SocketAddr>,
}

impl Default for UdpConfig {
    fn default() -> Self {
        UdpConfig { retries: 2, parallelism: 64, proxy: None }
    }
}

#[derive(Debug, Error)]
pub enum UdpError {
    #[error("proxy {0} configured but this backend cannot tunnel queries")]
    ProxyUnsupported(SocketAddr),
    #[error("parallelism must be positive")]
    ZeroParallelism,
}

#[derive(Debug)]
pub struct UdpTransport {
    config: UdpConfig,
}

impl UdpTransport {
    pub fn new(config: UdpConfig) -> Result<UdpTransport, UdpError> {
        if let Some(p) = config.proxy {
            return Err(UdpError::ProxyUnsupported(p));
        }
        if config.parallelism == 0 {
            return Err(UdpError::ZeroParallelism);
        }
        Ok(UdpTransport { config })
    }

    pub fn config(&self) -> &UdpConfig {
        &self.config
    }

    fn attempt(resolver: &ResolverEndpoint, question: &DnsQuestion, timeout: Duration) -> Option<QueryOutcome> {
        let socket = UdpSocket::bind("0.0.0.0:0").ok()?;
        let txid = (OsRng.next_u32() & 0xffff) as u16;
        let target = SocketAddr::V4(SocketAddrV4::new(resolver.addr, resolver.port));
        let msg = encode_query(question, txid);
        let start = Instant::now();
        socket.send_to(&msg, target).ok()?;
        let mut buf = [0u8; 4096];
        loop {
            let left = timeout.checked_sub(start.elapsed())?;
            if left.is_zero() {
                return None;
            }
            socket.set_read_timeout(Some(left)).ok()?;
            let (len, from) = socket.recv_from(&mut buf).ok()?;
            if from != target {
                continue;
            }
            // mismatched or malformed datagrams are ignored as possible spoofs
            if let Ok(out) = parse_response_for(&buf[..len], txid, question) {
                let rtt = start.elapsed().as_millis().min(u128::from(u32::MAX)) as u32;
                return Some(out.with_rtt(rtt));
            }
        }
    }

    fn query_with(retries: u32, resolver: &ResolverEndpoint, question: &DnsQuestion, timeout_ms: u32) -> QueryOutcome {
        if timeout_ms == 0 {
            return QueryOutcome::timeout();
        }
        let timeout = Duration::from_millis(u64::from(timeout_ms));
        for _ in 0..=retries {
            if let Some(out) = Self::attempt(resolver, question, timeout) {
                return out;
            }
        }
        QueryOutcome::timeout().with_rtt(timeout_ms)
    }
}

impl Transport for UdpTransport {
    fn query(&mut self, resolver: &ResolverEndpoint, question: &DnsQuestion, timeout_ms: u32) -> QueryOutcome {
        Self::query_with(self.config.retries, resolver, question, timeout_ms)
    }

    fn query_batch(&mut self, requests: &[(ResolverEndpoint, DnsQuestion)], timeout_ms: u32) -> Vec<QueryOutcome> {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<QueryOutcome>>> = Mutex::new(vec![None; requests.len()]);
        let workers = self.config.parallelism.min(requests.len());
        let retries = self.config.retries;
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((r, q)) = requests.get(i) else { break };
                    let out = Self::query_with(retries, r, q, timeout_ms);
                    results.lock().expect("result lock poisoned")[i] = Some(out);
                });
            }
        });
        results
            .into_inner()
            .expect("result lock poisoned")
            .into_iter()
            .map(|o| o.expect("every request answered"))
            .collect()
    }

    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }

    fn wait_until(&mut self, t: u64) {
        let now = self.now();
        if t > now {
            std::thread::sleep(Duration::from_secs(t - now));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dns_wire::{encode_response, DomainName, OutcomeKind, QueryMode, Rcode, RecordData, RecordType};
    use std::net::Ipv4Addr;

    /// Answers each query once; `drop_first` datagrams are swallowed.
    fn fake_server(drop_first: usize, answer_ttl: Option<u32>) -> (ResolverEndpoint, std::thread::JoinHandle<usize>) {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.set_read_timeout(Some(Duration::from_secs(3))).unwrap();
        let port = sock.local_addr().unwrap().port();
        let handle = std::thread::spawn(move || {
            let mut seen = 0;
            let mut buf = [0u8; 512];
            while let Ok((len, from)) = sock.recv_from(&mut buf) {
                seen += 1;
                if seen <= drop_first {
                    continue;
                }
                let txid = u16::from_be_bytes([buf[0], buf[1]]);
                let rd = buf[2] & 1 == 1;
                // decode the question name from the raw query
                let mut pos = 12;
                let mut labels = Vec::new();
                while buf[pos] != 0 {
                    let l = buf[pos] as usize;
                    labels.push(String::from_utf8_lossy(&buf[pos + 1..pos + 1 + l]).into_owned());
                    pos += l + 1;
                }
                assert!(pos < len);
                let q = DnsQuestion::new(
                    DomainName::new(&labels.join(".")).unwrap(),
                    RecordType::A,
                    if rd { QueryMode::Recursive } else { QueryMode::NonRecursive },
                );
                let resp = match answer_ttl {
                    Some(ttl) if rd => encode_response(txid, &q, Rcode::NoError, &[(ttl, RecordData::A(Ipv4Addr::LOCALHOST))]),
                    _ => encode_response(txid, &q, Rcode::NoError, &[]),
                };
                sock.send_to(&resp, from).unwrap();
                if seen > drop_first {
                    break;
                }
            }
            seen
        });
        (ResolverEndpoint::new(Ipv4Addr::LOCALHOST, port), handle)
    }

    fn question(mode: QueryMode) -> DnsQuestion {
        DnsQuestion::new(DomainName::new("probe.example").unwrap(), RecordType::A, mode)
    }

    #[test]
    fn hit_over_loopback() {
        let (ep, h) = fake_server(0, Some(600));
        let mut t = UdpTransport::new(UdpConfig::default()).unwrap();
        let out = t.query(&ep, &question(QueryMode::Recursive), 2000);
        assert_eq!(out.kind, OutcomeKind::Hit);
        assert_eq!(out.remaining_ttl, Some(600));
        assert_eq!(h.join().unwrap(), 1);
    }

    #[test]
    fn nonrecursive_miss() {
        let (ep, h) = fake_server(0, Some(600));
        let mut t = UdpTransport::new(UdpConfig::default()).unwrap();
        let out = t.query(&ep, &question(QueryMode::NonRecursive), 2000);
        assert_eq!(out.kind, OutcomeKind::Miss);
        h.join().unwrap();
    }

    #[test]
    fn retries_after_loss() {
        let (ep, h) = fake_server(1, Some(60));
        let mut t = UdpTransport::new(UdpConfig { retries: 1, ..UdpConfig::default() }).unwrap();
        let out = t.query(&ep, &question(QueryMode::Recursive), 300);
        assert_eq!(out.kind, OutcomeKind::Hit);
        assert_eq!(h.join().unwrap(), 2);
    }

    #[test]
    fn silence_is_timeout() {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        let ep = ResolverEndpoint::new(Ipv4Addr::LOCALHOST, sock.local_addr().unwrap().port());
        let mut t = UdpTransport::new(UdpConfig { retries: 0, ..UdpConfig::default() }).unwrap();
        let batch = vec![(ep, question(QueryMode::Recursive)); 3];
        let outs = t.query_batch(&batch, 100);
        assert!(outs.iter().all(|o| o.kind == OutcomeKind::Timeout));
    }

    #[test]
    fn proxy_is_refused() {
        let cfg = UdpConfig { proxy: Some("127.0.0.1:1080".parse().unwrap()), ..UdpConfig::default() };
        assert!(matches!(UdpTransport::new(cfg), Err(UdpError::ProxyUnsupported(_))));
    }
}
