pub mod analysis;
pub mod crypto;
pub mod dataset;
pub mod dns_wire;
pub mod epo;
pub mod gf64;
pub mod keystore;
pub mod rs6355;
pub mod simnet;
pub mod udp;
