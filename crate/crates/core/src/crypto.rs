//! Message encryption under the ephemeral key, and receiver-key wrapping of
//! whole EPOs.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Aes256Gcm, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use crate::rs6355::KeySize;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
const WRAP_MAGIC: &[u8; 4] = b"EPX1";
const WRAP_INFO: &[u8] = b"ephpub+ wrap v1";
const WRAP_HEADER: usize = 4 + 32 + NONCE_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failed: wrong or expired key")]
    AuthFailure,
    #[error("ciphertext too short")]
    Truncated,
    #[error("not a wrapped EPO")]
    BadWrapper,
    #[error("key has {got} bits, expected {expected}")]
    KeyLength { expected: usize, got: usize },
}

/// Random symmetric key whose bits are stored in resolver caches.
/// Zeroized on drop; never serialized.
#[derive(Zeroize, ZeroizeOnDrop)]
pub struct EphemeralKey {
    bits: Vec<bool>,
    #[zeroize(skip)]
    size: KeySize,
}

impl fmt::Debug for EphemeralKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EphemeralKey({} bits, redacted)", self.bits.len())
    }
}

impl EphemeralKey {
    pub fn generate<R: RngCore + CryptoRng>(size: KeySize, rng: &mut R) -> EphemeralKey {
        let bits = (0..size.key_bits()).map(|_| rng.next_u32() & 1 == 1).collect();
        EphemeralKey { bits, size }
    }

    pub fn from_bits(size: KeySize, bits: Vec<bool>) -> Result<EphemeralKey, CryptoError> {
        if bits.len() != size.key_bits() {
            let got = bits.len();
            let mut bits = bits;
            bits.zeroize();
            return Err(CryptoError::KeyLength { expected: size.key_bits(), got });
        }
        Ok(EphemeralKey { bits, size })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn size(&self) -> KeySize {
        self.size
    }

    fn packed(&self) -> Zeroizing<Vec<u8>> {
        let mut out = Zeroizing::new(vec![0u8; self.bits.len().div_ceil(8)]);
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    fn aes256_key(&self) -> Zeroizing<[u8; 32]> {
        let mut h = Sha256::new();
        h.update(b"ephpub key expansion");
        h.update([self.bits.len() as u8]);
        h.update(&*self.packed());
        Zeroizing::new(h.finalize().into())
    }
}

fn seal<R: RngCore + CryptoRng>(cipher: &impl Aead, m: &[u8], rng: &mut R) -> Vec<u8> {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ct = cipher.encrypt(Nonce::from_slice(&nonce), m).expect("AES-GCM accepts any message length in use");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

fn open(cipher: &impl Aead, ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if ct.len() < NONCE_LEN + TAG_LEN {
        return Err(CryptoError::Truncated);
    }
    let (nonce, body) = ct.split_at(NONCE_LEN);
    cipher.decrypt(Nonce::from_slice(nonce), body).map_err(|_| CryptoError::AuthFailure)
}

/// AES-GCM under the ephemeral key; output is `nonce || ciphertext || tag`.
/// 128-bit keys are used directly, 134-bit keys are hashed to AES-256.
pub fn encrypt_message<R: RngCore + CryptoRng>(m: &[u8], key: &EphemeralKey, rng: &mut R) -> Vec<u8> {
    match key.size {
        KeySize::Bits128 => seal(&Aes128Gcm::new_from_slice(&key.packed()).expect("16-byte key"), m, rng),
        KeySize::Bits134 => seal(&Aes256Gcm::new_from_slice(&*key.aes256_key()).expect("32-byte key"), m, rng),
    }
}

pub fn decrypt_message(ct: &[u8], key: &EphemeralKey) -> Result<Vec<u8>, CryptoError> {
    match key.size {
        KeySize::Bits128 => open(&Aes128Gcm::new_from_slice(&key.packed()).expect("16-byte key"), ct),
        KeySize::Bits134 => open(&Aes256Gcm::new_from_slice(&*key.aes256_key()).expect("32-byte key"), ct),
    }
}

/// Long-term X25519 key pair of a receiver.
pub struct ReceiverKeyPair {
    secret: StaticSecret,
    public: PublicKey,
}

impl fmt::Debug for ReceiverKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReceiverKeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl ReceiverKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> ReceiverKeyPair {
        let secret = StaticSecret::random_from_rng(rng);
        let public = PublicKey::from(&secret);
        ReceiverKeyPair { secret, public }
    }

    pub fn from_secret_bytes(bytes: [u8; 32]) -> ReceiverKeyPair {
        let secret = StaticSecret::from(bytes);
        let public = PublicKey::from(&secret);
        ReceiverKeyPair { secret, public }
    }

    pub fn secret_bytes(&self) -> Zeroizing<[u8; 32]> {
        Zeroizing::new(self.secret.to_bytes())
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        self.public.to_bytes()
    }
}

fn wrap_key(shared: &[u8; 32], eph: &[u8; 32], receiver: &[u8; 32]) -> Zeroizing<[u8; 32]> {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(receiver);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = Zeroizing::new([0u8; 32]);
    hk.expand(WRAP_INFO, &mut *okm).expect("32 bytes is a valid HKDF length");
    okm
}

/// Wraps serialized EPO bytes for one receiver: ephemeral-static X25519,
/// HKDF-SHA256, AES-256-GCM. Output is `"EPX1" || eph_pub || nonce || ct`.
pub fn super_encrypt<R: RngCore + CryptoRng>(epo_bytes: &[u8], receiver_public: &[u8; 32], rng: &mut R) -> Vec<u8> {
    let eph = StaticSecret::random_from_rng(&mut *rng);
    let eph_pub = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(*receiver_public));
    let key = wrap_key(shared.as_bytes(), &eph_pub, receiver_public);
    let body = seal(&Aes256Gcm::new_from_slice(&*key).expect("32-byte key"), epo_bytes, rng);
    let mut out = Vec::with_capacity(4 + 32 + body.len());
    out.extend_from_slice(WRAP_MAGIC);
    out.extend_from_slice(&eph_pub);
    out.extend_from_slice(&body);
    out
}

pub fn is_wrapped(bytes: &[u8]) -> bool {
    bytes.starts_with(WRAP_MAGIC)
}

pub fn super_decrypt(wrapped: &[u8], receiver: &ReceiverKeyPair) -> Result<Vec<u8>, CryptoError> {
    if !is_wrapped(wrapped) {
        return Err(CryptoError::BadWrapper);
    }
    if wrapped.len() < WRAP_HEADER + TAG_LEN {
        return Err(CryptoError::Truncated);
    }
    let eph_pub: [u8; 32] = wrapped[4..36].try_into().expect("slice of 32");
    let shared = receiver.secret.diffie_hellman(&PublicKey::from(eph_pub));
    if !shared.was_contributory() {
        return Err(CryptoError::AuthFailure);
    }
    let key = wrap_key(shared.as_bytes(), &eph_pub, &receiver.public_bytes());
    open(&Aes256Gcm::new_from_slice(&*key).expect("32-byte key"), &wrapped[36..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(42)
    }

    #[test]
    fn roundtrip_both_sizes() {
        let mut r = rng();
        for size in [KeySize::Bits128, KeySize::Bits134] {
            let k = EphemeralKey::generate(size, &mut r);
            assert_eq!(k.bits().len(), size.key_bits());
            let ct = encrypt_message(b"attack at dawn", &k, &mut r);
            assert_eq!(decrypt_message(&ct, &k).unwrap(), b"attack at dawn");
        }
    }

    #[test]
    fn empty_message_is_nonce_and_tag() {
        let mut r = rng();
        let k = EphemeralKey::generate(KeySize::Bits128, &mut r);
        let ct = encrypt_message(b"", &k, &mut r);
        assert_eq!(ct.len(), NONCE_LEN + TAG_LEN);
        assert_eq!(decrypt_message(&ct, &k).unwrap(), b"");
    }

    #[test]
    fn wrong_key_always_fails() {
        let mut r = rng();
        for _ in 0..1000 {
            let k = EphemeralKey::generate(KeySize::Bits128, &mut r);
            let mut other_bits = k.bits().to_vec();
            let flip = (r.next_u32() % 128) as usize;
            other_bits[flip] = !other_bits[flip];
            let other = EphemeralKey::from_bits(KeySize::Bits128, other_bits).unwrap();
            let ct = encrypt_message(b"m", &k, &mut r);
            assert_eq!(decrypt_message(&ct, &other), Err(CryptoError::AuthFailure));
        }
    }

    #[test]
    fn packing_is_msb_first() {
        let mut bits = vec![false; 128];
        bits[0] = true;
        bits[127] = true;
        let k = EphemeralKey::from_bits(KeySize::Bits128, bits).unwrap();
        let p = k.packed();
        assert_eq!(p[0], 0x80);
        assert_eq!(p[15], 0x01);
        assert!(EphemeralKey::from_bits(KeySize::Bits134, vec![false; 128]).is_err());
        assert_eq!(format!("{k:?}"), "EphemeralKey(128 bits, redacted)");
    }

    #[test]
    fn truncated_ciphertext() {
        let mut r = rng();
        let k = EphemeralKey::generate(KeySize::Bits128, &mut r);
        assert_eq!(decrypt_message(&[0; 27], &k), Err(CryptoError::Truncated));
    }

    #[test]
    fn wrap_roundtrip_and_mismatch() {
        let mut r = rng();
        let alice = ReceiverKeyPair::generate(&mut r);
        let mallory = ReceiverKeyPair::generate(&mut r);
        let w = super_encrypt(b"EPO1 payload", &alice.public_bytes(), &mut r);
        assert!(is_wrapped(&w));
        assert_eq!(super_decrypt(&w, &alice).unwrap(), b"EPO1 payload");
        assert_eq!(super_decrypt(&w, &mallory), Err(CryptoError::AuthFailure));
        assert_eq!(super_decrypt(b"EPO1", &alice), Err(CryptoError::BadWrapper));
        let restored = ReceiverKeyPair::from_secret_bytes(*alice.secret_bytes());
        assert_eq!(restored.public_bytes(), alice.public_bytes());
        assert_eq!(super_decrypt(&w, &restored).unwrap(), b"EPO1 payload");
    }
}
