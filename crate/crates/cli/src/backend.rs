use std::fs;
use std::path::{Path, PathBuf};

use ephpub::dns_wire::{DnsQuestion, QueryOutcome, ResolverEndpoint, Transport};
use ephpub::simnet::scenario::Scenario;
use ephpub::simnet::SimNet;
use ephpub::udp::{UdpConfig, UdpTransport};

use crate::Failure;

pub enum Fabric {
    Sim { net: Box<SimNet>, state: Option<PathBuf> },
    Real(UdpTransport),
}

impl Fabric {
    pub fn sim(scenario: &Scenario, state: Option<&Path>, retries: Option<u32>) -> Result<Fabric, Failure> {
        let mut net = match state {
            Some(p) if p.exists() => {
                let text = fs::read_to_string(p).map_err(|e| Failure::io(p, e))?;
                serde_json::from_str::<SimNet>(&text).map_err(|e| Failure::usage(format!("{}: bad simulator state: {e}", p.display())))?
            }
            _ => scenario.build().map_err(|e| Failure::usage(e.to_string()))?,
        };
        if let Some(r) = retries {
            net.set_retries(r);
        }
        net.set_recording(false);
        Ok(Fabric::Sim { net: Box::new(net), state: state.map(Path::to_path_buf) })
    }

    pub fn real(config: UdpConfig) -> Result<Fabric, Failure> {
        UdpTransport::new(config).map(Fabric::Real).map_err(|e| Failure::usage(e.to_string()))
    }

    pub fn sim_net(&mut self) -> Option<&mut SimNet> {
        match self {
            Fabric::Sim { net, .. } => Some(net),
            Fabric::Real(_) => None,
        }
    }

    /// Writes the simulator state back, if one is being kept.
    pub fn persist(&self) -> Result<(), Failure> {
        if let Fabric::Sim { net, state: Some(path) } = self {
            let text = serde_json::to_string(net.as_ref()).map_err(|e| Failure::usage(e.to_string()))?;
            fs::write(path, text).map_err(|e| Failure::io(path, e))?;
        }
        Ok(())
    }
}

impl Transport for Fabric {
    fn query(&mut self, resolver: &ResolverEndpoint, question: &DnsQuestion, timeout_ms: u32) -> QueryOutcome {
        match self {
            Fabric::Sim { net, .. } => net.query(resolver, question, timeout_ms),
            Fabric::Real(t) => t.query(resolver, question, timeout_ms),
        }
    }

    fn query_batch(&mut self, requests: &[(ResolverEndpoint, DnsQuestion)], timeout_ms: u32) -> Vec<QueryOutcome> {
        match self {
            Fabric::Sim { net, .. } => net.query_batch(requests, timeout_ms),
            Fabric::Real(t) => t.query_batch(requests, timeout_ms),
        }
    }

    fn now(&self) -> u64 {
        match self {
            Fabric::Sim { net, .. } => net.now(),
            Fabric::Real(t) => t.now(),
        }
    }

    fn wait_until(&mut self, t: u64) {
        match self {
            Fabric::Sim { net, .. } => net.wait_until(t),
            Fabric::Real(r) => r.wait_until(t),
        }
    }
}
