//! `ephpub`: ephemeral files whose key lives in DNS resolver caches.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 encoding failed,
//! 3 the EPO has expired, 4 decoding or parsing failed.

mod backend;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ephpub::analysis::{collision_report, hamming_report, traffic_estimate_with};
use ephpub::crypto::{is_wrapped, super_decrypt, super_encrypt, ReceiverKeyPair};
use ephpub::dataset::{
    build_resolver_dataset, harvest_domains, DomainPool, ProbeDomains, ProbeSchedule, ResolverDataset,
};
use ephpub::dns_wire::{ResolverEndpoint, Transport};
use ephpub::epo::EpoObject;
use ephpub::keystore::{KeyStore, KeystoreConfig, KeystoreError};
use ephpub::rs6355::KeySize;
use ephpub::simnet::experiment::run_experiment;
use ephpub::simnet::scenario::Scenario;
use ephpub::simnet::universe::TTL_TABLE;
use ephpub::simnet::LOOKUP_ENDPOINT;
use ephpub::udp::UdpConfig;
use rand::rngs::OsRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use backend::Fabric;

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Failure {
        Failure { code: 1, message: message.into() }
    }

    pub fn io(path: &Path, e: io::Error) -> Failure {
        Failure::usage(format!("{}: {e}", path.display()))
    }

    fn parse(message: impl Into<String>) -> Failure {
        Failure { code: 4, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<KeystoreError> for Failure {
    fn from(e: KeystoreError) -> Failure {
        let code = match e {
            KeystoreError::Expired { .. } => 3,
            KeystoreError::DecodeFailure(_) | KeystoreError::Epo(_) | KeystoreError::AmbiguousSkew { .. } | KeystoreError::NotFlipped { .. } => 4,
            KeystoreError::InsufficientResolvers { .. }
            | KeystoreError::InsufficientDomains { .. }
            | KeystoreError::WriteFailure { .. }
            | KeystoreError::EncodeFailure { .. } => 2,
            KeystoreError::Input(_) => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Real,
    Sim,
}

#[derive(Debug, Parser)]
#[command(name = "ephpub", version, about = "Ephemeral files keyed by DNS cache state")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    #[arg(long, value_enum, default_value = "sim", global = true)]
    backend: BackendKind,
    /// Scenario TOML describing the simulated fabric.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file carrying simulator state between invocations.
    #[arg(long, global = true)]
    sim_state: Option<PathBuf>,
    /// Advance the virtual clock by this much before running.
    #[arg(long, global = true, value_parser = parse_duration)]
    advance: Option<u64>,
    /// Resolver dataset file.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Domain pool file.
    #[arg(long, global = true)]
    pool: Option<PathBuf>,
    /// Endpoints to exclude from the dataset, one per line.
    #[arg(long, global = true)]
    blocklist: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 64)]
    threads: usize,
    /// Per-attempt timeout in milliseconds.
    #[arg(long, global = true, default_value_t = 2000)]
    timeout: u32,
    #[arg(long, global = true)]
    retries: Option<u32>,
    #[arg(long, global = true)]
    no_prefetch: bool,
    /// Read even if the EPO is at or past its expiry.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true)]
    proxy: Option<SocketAddr>,
    /// Required for any command that sends queries to real resolvers.
    #[arg(long, global = true)]
    i_understand_network_effects: bool,
    #[arg(long, global = true, value_parser = ["128", "134"], default_value = "128")]
    key_bits: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encrypt a file and store its key in resolver caches.
    Encode {
        input: PathBuf,
        /// Lifetime, e.g. 3600, 90m, 24h, 7d.
        #[arg(long, value_parser = parse_duration)]
        ttl: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Wrap the EPO for this X25519 public key (64 hex digits).
        #[arg(long)]
        recipient: Option<String>,
    },
    /// Recover the plaintext of an EPO before it expires.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Secret key file for wrapped EPOs.
        #[arg(long)]
        receiver_key: Option<PathBuf>,
    },
    /// Classify candidate resolvers and write a dataset.
    Probe {
        /// Candidate endpoints, one per line (real backend).
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long, value_parser = parse_duration, default_value = "86400")]
        probe_ttl: u64,
        /// Merge into the existing dataset instead of replacing it.
        #[arg(long)]
        refresh: bool,
    },
    /// Collect hostnames with known TTLs by reverse lookups.
    Harvest {
        #[arg(long, default_value_t = 3000)]
        count: usize,
        /// TTL buckets to keep; defaults to the common TTL values.
        #[arg(long, value_delimiter = ',')]
        buckets: Vec<u32>,
        /// Non-caching resolver used for the lookups (real backend).
        #[arg(long)]
        lookup: Option<ResolverEndpoint>,
    },
    /// Run the scenario's expiry experiment and print the time series.
    Simulate {
        #[arg(long)]
        keys: Option<usize>,
    },
    /// Closed-form calculators.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// Generate an X25519 key pair for wrapped EPOs.
    Keygen {
        /// Where to write the secret key.
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum Analysis {
    /// Entropy lost by revealing the key's Hamming weight.
    Hamming { n_bits: u32 },
    /// Probability of a cell collision between documents.
    Collision { n_docs: u64, resolvers: u64, domains: u64 },
    /// DNS traffic to store and retrieve one key.
    Traffic {
        #[arg(default_value_t = 176)]
        weight: u64,
        #[arg(long, default_value_t = 180)]
        msg_bytes: u64,
        #[arg(long, default_value_t = 176)]
        stored_bits: u64,
        #[arg(long)]
        prefetch: bool,
        #[arg(long)]
        precheck: bool,
    },
    /// Size breakdown of an EPO file.
    Overhead { epo: PathBuf },
}

fn parse_duration(s: &str) -> Result<u64, String> {
    if let Ok(secs) = s.parse::<u64>() {
        return Ok(secs);
    }
    humantime::parse_duration(s).map(|d: Duration| d.as_secs()).map_err(|e| e.to_string())
}

fn home() -> PathBuf {
    if let Some(h) = std::env::var_os("EPHPUB_HOME") {
        return PathBuf::from(h);
    }
    std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")).join(".ephpub")
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if path == Path::new("-") {
        return io::stdout().write_all(bytes).map_err(|e| Failure::io(path, e));
    }
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn hex32(s: &str) -> Result<[u8; 32], Failure> {
    let s = s.trim();
    let bytes = hex::decode(s).map_err(|e| Failure::usage(format!("bad hex key: {e}")))?;
    bytes.try_into().map_err(|_| Failure::usage("key must be 32 bytes (64 hex digits)"))
}

fn endpoints_file(path: &Path) -> Result<Vec<ResolverEndpoint>, Failure> {
    read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse().map_err(|e| Failure::usage(format!("{}: {l}: {e}", path.display()))))
        .collect()
}

struct Session {
    global: Global,
    scenario: Option<Scenario>,
    fabric: Fabric,
    rng: Box<dyn RngCoreCrypto>,
}

trait RngCoreCrypto: RngCore + rand::CryptoRng {}
impl<T: RngCore + rand::CryptoRng> RngCoreCrypto for T {}

impl Session {
    fn open(global: Global, touches_network: bool) -> Result<Session, Failure> {
        let scenario = match &global.scenario {
            Some(p) => {
                let mut s = Scenario::from_toml(&read_text(p)?).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?;
                if let Some(seed) = global.seed {
                    s.seed = seed;
                }
                Some(s)
            }
            None => None,
        };
        let (fabric, rng): (Fabric, Box<dyn RngCoreCrypto>) = match global.backend {
            BackendKind::Sim => {
                let s = scenario.as_ref().ok_or_else(|| Failure::usage("the sim backend needs --scenario"))?;
                let mut fabric = Fabric::sim(s, global.sim_state.as_deref(), global.retries)?;
                let net = fabric.sim_net().expect("sim");
                if let Some(dt) = global.advance {
                    net.advance_time(dt);
                }
                let rng = ChaCha20Rng::seed_from_u64(s.seed ^ net.now());
                (fabric, Box::new(rng))
            }
            BackendKind::Real => {
                if touches_network && !global.i_understand_network_effects {
                    return Err(Failure::usage(
                        "the real backend sends queries to third-party resolvers; pass --i-understand-network-effects to proceed",
                    ));
                }
                let config = UdpConfig { retries: global.retries.unwrap_or(2), parallelism: global.threads, proxy: global.proxy };
                (Fabric::real(config)?, Box::new(OsRng))
            }
        };
        Ok(Session { global, scenario, fabric, rng })
    }

    fn keystore_config(&self) -> KeystoreConfig {
        KeystoreConfig {
            key_size: if self.global.key_bits == "134" { KeySize::Bits134 } else { KeySize::Bits128 },
            timeout_ms: self.global.timeout,
            prefetch: !self.global.no_prefetch,
            force: self.global.force,
            ..KeystoreConfig::default()
        }
    }

    fn dataset_path(&self) -> PathBuf {
        self.global.dataset.clone().unwrap_or_else(|| home().join("resolvers.txt"))
    }

    fn pool_path(&self) -> PathBuf {
        self.global.pool.clone().unwrap_or_else(|| home().join("domains.txt"))
    }

    fn resolvers(&mut self) -> Result<Vec<ResolverEndpoint>, Failure> {
        let mut dataset = if self.global.backend == BackendKind::Sim && self.global.dataset.is_none() {
            let eps = self.fabric.sim_net().expect("sim").endpoints();
            return self.apply_blocklist(eps);
        } else {
            let path = self.dataset_path();
            ResolverDataset::from_text(&read_text(&path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        };
        if let Some(b) = &self.global.blocklist {
            dataset.remove_blocked(&endpoints_file(b)?);
        }
        Ok(dataset.reliable())
    }

    fn apply_blocklist(&self, mut eps: Vec<ResolverEndpoint>) -> Result<Vec<ResolverEndpoint>, Failure> {
        if let Some(b) = &self.global.blocklist {
            let blocked = endpoints_file(b)?;
            eps.retain(|e| !blocked.contains(e));
        }
        Ok(eps)
    }

    fn pool(&mut self, buckets: &[u32]) -> Result<DomainPool, Failure> {
        if self.global.backend == BackendKind::Sim && self.global.pool.is_none() {
            let count = self.scenario.as_ref().map_or(3000, |s| s.experiment.harvest);
            let seed = self.scenario.as_ref().map_or(0, |s| s.seed);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            return Ok(harvest_domains(&mut self.fabric, LOOKUP_ENDPOINT, count, buckets, self.global.timeout, &mut rng).pool);
        }
        let path = self.pool_path();
        DomainPool::from_text(&read_text(&path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    fn close(self) -> Result<(), Failure> {
        self.fabric.persist()
    }
}

fn all_buckets() -> Vec<u32> {
    TTL_TABLE.iter().map(|&(t, _)| t).collect()
}

fn cmd_encode(mut s: Session, input: &Path, ttl: u64, output: Option<PathBuf>, recipient: Option<String>) -> Result<(), Failure> {
    let message = read(input)?;
    let ttl = u32::try_from(ttl).map_err(|_| Failure::usage("TTL too large"))?;
    let recipient = recipient.as_deref().map(hex32).transpose()?;
    let dataset = s.resolvers()?;
    let pool = s.pool(&all_buckets())?;
    let cfg = s.keystore_config();
    let mut rng = std::mem::replace(&mut s.rng, Box::new(OsRng));
    let report = KeyStore::new(&mut s.fabric, cfg).encode_message(&dataset, &pool, &message, ttl, &mut rng)?;
    let mut bytes = report.epo.serialize();
    if let Some(pk) = recipient {
        bytes = super_encrypt(&bytes, &pk, &mut rng);
    }
    let out = output.unwrap_or_else(|| {
        let mut p = input.as_os_str().to_owned();
        p.push(".epo");
        PathBuf::from(p)
    });
    write(&out, &bytes)?;
    let st = report.stats;
    println!("output\t{}", out.display());
    println!("cells\t{}", report.epo.cells.len());
    println!("expiry\t{}", report.epo.expiry);
    println!("prechecks\t{}", st.prechecks);
    println!("prefetches\t{}", st.prefetches);
    println!("writes\t{}", st.writes);
    println!("replans\t{}", st.replans);
    println!("size_bytes\t{}", bytes.len());
    println!("overhead_bytes\t{}", report.epo.overhead_bytes());
    s.close()
}

fn load_epo(input: &Path, receiver_key: Option<&Path>) -> Result<EpoObject, Failure> {
    let mut bytes = read(input)?;
    if is_wrapped(&bytes) {
        let key_path = receiver_key.ok_or_else(|| Failure::parse("EPO is wrapped; pass --receiver-key"))?;
        let receiver = ReceiverKeyPair::from_secret_bytes(hex32(&read_text(key_path)?)?);
        bytes = super_decrypt(&bytes, &receiver).map_err(|e| Failure::parse(format!("unwrap failed: {e}")))?;
    }
    EpoObject::parse(&bytes).map_err(|e| Failure::parse(format!("{}: {e}", input.display())))
}

fn cmd_decode(mut s: Session, input: &Path, output: Option<PathBuf>, receiver_key: Option<PathBuf>) -> Result<(), Failure> {
    let epo = load_epo(input, receiver_key.as_deref())?;
    let cfg = s.keystore_config();
    let result = KeyStore::new(&mut s.fabric, cfg).decode_message(&epo);
    // reads move no state, but the clock may have been advanced
    s.fabric.persist()?;
    let report = result?;
    let out = output.unwrap_or_else(|| match input.extension() {
        Some(e) if e == "epo" => input.with_extension(""),
        _ => {
            let mut p = input.as_os_str().to_owned();
            p.push(".out");
            PathBuf::from(p)
        }
    });
    write(&out, &report.plaintext)?;
    eprintln!(
        "read_queries\t{}\nparity_fetched\t{}\nerasures\t{}\ncorrected_symbols\t{}\nttl_skew\t{}",
        report.read_queries, report.parity_fetched, report.erasures, report.corrected_symbols, report.used_ttl_skew
    );
    Ok(())
}

fn cmd_probe(mut s: Session, candidates: Option<PathBuf>, probe_ttl: u64, refresh: bool) -> Result<(), Failure> {
    let probe_ttl = u32::try_from(probe_ttl).map_err(|_| Failure::usage("probe TTL too large"))?;
    let candidates = match (&candidates, s.global.backend) {
        (Some(p), _) => endpoints_file(p)?,
        (None, BackendKind::Sim) => s.fabric.sim_net().expect("sim").endpoints(),
        (None, BackendKind::Real) => return Err(Failure::usage("probe on the real backend needs --candidates")),
    };
    let candidates = s.apply_blocklist(candidates)?;
    let pool = s.pool(&[probe_ttl])?;
    let domains = ProbeDomains::from_pool(&pool, probe_ttl, &mut s.rng).map_err(|e| Failure::usage(e.to_string()))?;
    let schedule = ProbeSchedule { probe_ttl, timeout_ms: s.global.timeout, ..ProbeSchedule::default() };
    let build = build_resolver_dataset(&mut s.fabric, &candidates, &domains, &schedule);
    print!("{}", build.stats);
    if let Some(path) = &s.global.dataset {
        let mut dataset = build.dataset;
        if refresh && path.exists() {
            let mut old = ResolverDataset::from_text(&read_text(path)?).map_err(|e| Failure::usage(e.to_string()))?;
            old.merge(dataset.entries().to_vec());
            dataset = old;
        }
        write(path, dataset.to_text().as_bytes())?;
    } else {
        print!("{}", build.dataset.to_text());
    }
    s.close()
}

fn cmd_harvest(mut s: Session, count: usize, buckets: Vec<u32>, lookup: Option<ResolverEndpoint>) -> Result<(), Failure> {
    let lookup = match (lookup, s.global.backend) {
        (Some(l), _) => l,
        (None, BackendKind::Sim) => LOOKUP_ENDPOINT,
        (None, BackendKind::Real) => return Err(Failure::usage("harvest on the real backend needs --lookup")),
    };
    let buckets = if buckets.is_empty() { all_buckets() } else { buckets };
    let report = harvest_domains(&mut s.fabric, lookup, count, &buckets, s.global.timeout, &mut s.rng);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("attempts\t{}\nresolved\t{}\npooled\t{}", report.attempts, report.resolved, report.pool.len());
    for (ttl, n) in report.pool.bucket_sizes() {
        eprintln!("bucket\t{ttl}\t{n}");
    }
    match &s.global.pool {
        Some(p) => write(p, report.pool.to_text().as_bytes())?,
        None => print!("{}", report.pool.to_text()),
    }
    s.close()
}

fn cmd_simulate(global: &Global, keys: Option<usize>) -> Result<(), Failure> {
    let path = global.scenario.as_ref().ok_or_else(|| Failure::usage("simulate needs --scenario"))?;
    let mut scenario = Scenario::from_toml(&read_text(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if let Some(seed) = global.seed {
        scenario.seed = seed;
    }
    if let Some(k) = keys {
        scenario.experiment.keys = k;
    }
    let series = run_experiment(&scenario).map_err(|e| Failure::usage(e.to_string()))?;
    print!("{series}");
    Ok(())
}

fn cmd_analyze(what: Analysis) -> Result<(), Failure> {
    match what {
        Analysis::Hamming { n_bits } => {
            if !(1..=4096).contains(&n_bits) {
                return Err(Failure::usage("n_bits must be in 1..=4096"));
            }
            println!("{}", hamming_report(n_bits));
        }
        Analysis::Collision { n_docs, resolvers, domains } => {
            if n_docs == 0 || resolvers == 0 || domains == 0 {
                return Err(Failure::usage("inputs must be positive"));
            }
            println!("{}", collision_report(n_docs, resolvers, domains));
        }
        Analysis::Traffic { weight, msg_bytes, stored_bits, prefetch, precheck } => {
            if weight > stored_bits {
                return Err(Failure::usage("weight exceeds codeword length"));
            }
            println!("{}", traffic_estimate_with(weight, msg_bytes, stored_bits, prefetch, precheck));
        }
        Analysis::Overhead { epo } => {
            let e = load_epo(&epo, None)?;
            println!("cells\t{}", e.cells.len());
            println!("ciphertext_bytes\t{}", e.ciphertext.len());
            println!("serialized_bytes\t{}", e.serialize().len());
            println!("uncompressed_bytes\t{}", e.serialize_uncompressed().len());
            println!("overhead_bytes\t{}", e.overhead_bytes());
        }
    }
    Ok(())
}

fn cmd_keygen(output: &Path) -> Result<(), Failure> {
    let pair = ReceiverKeyPair::generate(&mut OsRng);
    let secret = hex::encode(pair.secret_bytes().as_ref());
    write_secret(output, secret.as_bytes())?;
    println!("{}", hex::encode(pair.public_bytes()));
    Ok(())
}

#[cfg(unix)]
fn write_secret(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = fs::OpenOptions::new().write(true).create(true).truncate(true).mode(0o600).open(path).map_err(|e| Failure::io(path, e))?;
    f.write_all(bytes).map_err(|e| Failure::io(path, e))
}

#[cfg(not(unix))]
fn write_secret(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write(path, bytes)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze { what } => cmd_analyze(what),
        Command::Keygen { output } => cmd_keygen(&output),
        Command::Simulate { keys } => cmd_simulate(&cli.global, keys),
        Command::Encode { input, ttl, output, recipient } => cmd_encode(Session::open(cli.global, true)?, &input, ttl, output, recipient),
        Command::Decode { input, output, receiver_key } => cmd_decode(Session::open(cli.global, true)?, &input, output, receiver_key),
        Command::Probe { candidates, probe_ttl, refresh } => cmd_probe(Session::open(cli.global, true)?, candidates, probe_ttl, refresh),
        Command::Harvest { count, buckets, lookup } => cmd_harvest(Session::open(cli.global, true)?, count, buckets, lookup),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
