//! Additively homomorphic public-key encryption over `Z_M`.
//!
//! Keys and ciphertexts are tagged with a [`Scheme`]; operations across schemes fail with
//! [`CryptoError::SchemeMismatch`]. The Paillier backend is the only one compiled in.

pub mod paillier;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::Zero;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
pub use paillier::{PaillierPublicKey, PaillierSecretKey};

const PUBLIC_MAGIC: &[u8; 4] = b"PPHK";
const SECRET_MAGIC: &[u8; 4] = b"PPHS";
const KEY_VERSION: u16 = 1;

pub const SUPPORTED_SECURITY_BITS: [u64; 3] = [1024, 2048, 3072];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("unsupported security level {0} (expected 1024, 2048 or 3072)")]
    UnsupportedSecurityLevel(u64),
    #[error("plaintext outside [0, M)")]
    PlaintextOutOfRange,
    #[error("ciphertext or key belongs to a different scheme")]
    SchemeMismatch,
    #[error("ciphertext is not invertible")]
    NotInvertible,
    #[error("ciphertext outside the ciphertext group")]
    InvalidCiphertext,
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
    #[error("malformed key: {0}")]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Paillier,
}

impl Scheme {
    pub fn id(&self) -> &'static str {
        match self {
            Scheme::Paillier => "paillier-djn",
        }
    }

    pub fn from_id(id: &str) -> Result<Self, CryptoError> {
        match id {
            "paillier-djn" => Ok(Scheme::Paillier),
            other => Err(CryptoError::UnknownScheme(other.to_owned())),
        }
    }
}

/// Opaque encrypted integer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    scheme: Scheme,
    value: BigUint,
}

impl Ciphertext {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn payload(&self) -> &BigUint {
        &self.value
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PublicKey {
    Paillier(PaillierPublicKey),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SecretKey {
    Paillier(PaillierSecretKey),
}

pub fn keygen<R: RngCore + CryptoRng>(
    security_bits: u64,
    rng: &mut R,
) -> Result<(PublicKey, SecretKey), CryptoError> {
    if !SUPPORTED_SECURITY_BITS.contains(&security_bits) {
        return Err(CryptoError::UnsupportedSecurityLevel(security_bits));
    }
    let sk = PaillierSecretKey::generate(security_bits, rng)?;
    Ok((PublicKey::Paillier(sk.public().clone()), SecretKey::Paillier(sk)))
}

impl PublicKey {
    pub fn scheme(&self) -> Scheme {
        match self {
            PublicKey::Paillier(_) => Scheme::Paillier,
        }
    }

    /// Size `M` of the plaintext space.
    pub fn plaintext_modulus(&self) -> &BigUint {
        match self {
            PublicKey::Paillier(pk) => pk.n(),
        }
    }

    pub fn modulus_bits(&self) -> u64 {
        match self {
            PublicKey::Paillier(pk) => pk.modulus_bits(),
        }
    }

    /// Fixed serialized width of every ciphertext under this key, in bytes.
    pub fn ciphertext_width(&self) -> usize {
        match self {
            PublicKey::Paillier(pk) => pk.n_squared().bits().div_ceil(8) as usize,
        }
    }

    /// Warms per-key tables; worthwhile before encrypting more than a few dozen values.
    pub fn precompute(&self) {
        match self {
            PublicKey::Paillier(pk) => pk.precompute(),
        }
    }

    fn check(&self, c: &Ciphertext) -> Result<(), CryptoError> {
        if c.scheme != self.scheme() {
            return Err(CryptoError::SchemeMismatch);
        }
        Ok(())
    }

    fn wrap(&self, value: BigUint) -> Ciphertext {
        Ciphertext {
            scheme: self.scheme(),
            value,
        }
    }

    pub fn encrypt<R: RngCore + CryptoRng>(
        &self,
        x: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext, CryptoError> {
        match self {
            PublicKey::Paillier(pk) => Ok(self.wrap(pk.encrypt(x, rng)?)),
        }
    }

    pub fn encrypt_u64<R: RngCore + CryptoRng>(
        &self,
        x: u64,
        rng: &mut R,
    ) -> Result<Ciphertext, CryptoError> {
        self.encrypt(&BigUint::from(x), rng)
    }

    /// Decrypts to `(x + y) mod M`.
    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CryptoError> {
        self.check(a)?;
        self.check(b)?;
        match self {
            PublicKey::Paillier(pk) => Ok(self.wrap(pk.add(&a.value, &b.value))),
        }
    }

    /// Decrypts to `(M - x) mod M`.
    pub fn neg(&self, c: &Ciphertext) -> Result<Ciphertext, CryptoError> {
        self.check(c)?;
        match self {
            PublicKey::Paillier(pk) => Ok(self.wrap(pk.invert(&c.value)?)),
        }
    }

    /// Decrypts to `(x z) mod M`. Negative factors go through [`PublicKey::neg`].
    pub fn scalar_mul(&self, c: &Ciphertext, z: &BigInt) -> Result<Ciphertext, CryptoError> {
        self.check(c)?;
        let m = self.plaintext_modulus();
        let magnitude = z.magnitude() % m;
        let base = match z.sign() {
            Sign::Minus => self.neg(c)?,
            _ => c.clone(),
        };
        match self {
            PublicKey::Paillier(pk) => Ok(self.wrap(pk.pow(&base.value, &magnitude))),
        }
    }

    pub fn scalar_mul_u(&self, c: &Ciphertext, z: &BigUint) -> Result<Ciphertext, CryptoError> {
        self.scalar_mul(c, &BigInt::from(z.clone()))
    }

    /// Same plaintext, fresh randomness.
    pub fn rerandomize<R: RngCore + CryptoRng>(
        &self,
        c: &Ciphertext,
        rng: &mut R,
    ) -> Result<Ciphertext, CryptoError> {
        self.check(c)?;
        match self {
            PublicKey::Paillier(pk) => Ok(self.wrap(pk.rerandomize(&c.value, rng))),
        }
    }

    /// Imports a raw ciphertext value received from a peer, checking group membership.
    pub fn ciphertext_from_value(&self, value: BigUint) -> Result<Ciphertext, CryptoError> {
        match self {
            PublicKey::Paillier(pk) => pk.validate(&value)?,
        }
        Ok(self.wrap(value))
    }

    pub fn encode_ciphertext(&self, w: &mut Writer, c: &Ciphertext) {
        w.biguint_fixed(&c.value, self.ciphertext_width());
    }

    pub fn decode_ciphertext(&self, r: &mut Reader<'_>) -> Result<Ciphertext, DecodeError> {
        let v = r.biguint_fixed(self.ciphertext_width())?;
        self.ciphertext_from_value(v)
            .map_err(|e| DecodeError::invalid("ciphertext", e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(PUBLIC_MAGIC).u16(KEY_VERSION).short_str(self.scheme().id());
        match self {
            PublicKey::Paillier(pk) => {
                w.biguint(pk.n()).biguint(pk.hs());
            }
        }
        w.into_bytes()
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, CryptoError> {
        r.magic(PUBLIC_MAGIC)?;
        r.version(KEY_VERSION)?;
        let scheme = Scheme::from_id(&r.short_str("scheme_id")?)?;
        match scheme {
            Scheme::Paillier => {
                let n = r.biguint("n")?;
                let hs = r.biguint("hs")?;
                Ok(PublicKey::Paillier(PaillierPublicKey::from_parts(n, hs)?))
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        let pk = Self::decode(&mut r)?;
        r.finish()?;
        Ok(pk)
    }
}

impl SecretKey {
    pub fn scheme(&self) -> Scheme {
        match self {
            SecretKey::Paillier(_) => Scheme::Paillier,
        }
    }

    pub fn public(&self) -> PublicKey {
        match self {
            SecretKey::Paillier(sk) => PublicKey::Paillier(sk.public().clone()),
        }
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, CryptoError> {
        if c.scheme != self.scheme() {
            return Err(CryptoError::SchemeMismatch);
        }
        match self {
            SecretKey::Paillier(sk) => sk.decrypt(&c.value),
        }
    }

    pub fn decrypt_is_zero(&self, c: &Ciphertext) -> Result<bool, CryptoError> {
        Ok(self.decrypt(c)?.is_zero())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(SECRET_MAGIC).u16(KEY_VERSION).short_str(self.scheme().id());
        match self {
            SecretKey::Paillier(sk) => {
                w.biguint(sk.p()).biguint(sk.q()).biguint(sk.public().hs());
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let mut r = Reader::new(bytes);
        r.magic(SECRET_MAGIC)?;
        r.version(KEY_VERSION)?;
        let scheme = Scheme::from_id(&r.short_str("scheme_id")?)?;
        let sk = match scheme {
            Scheme::Paillier => {
                let p = r.biguint("p")?;
                let q = r.biguint("q")?;
                let hs = r.biguint("hs")?;
                SecretKey::Paillier(PaillierSecretKey::from_parts(p, q, hs)?)
            }
        };
        r.finish()?;
        Ok(sk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn keys(seed: u64) -> (PublicKey, SecretKey, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (pk, sk) = keygen(1024, &mut rng).unwrap();
        (pk, sk, rng)
    }

    fn big(x: u64) -> BigUint {
        BigUint::from(x)
    }

    #[test]
    fn rejects_unsupported_levels() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!(
            keygen(512, &mut rng).unwrap_err(),
            CryptoError::UnsupportedSecurityLevel(512)
        );
    }

    #[test]
    fn roundtrip_boundaries() {
        let (pk, sk, mut rng) = keys(10);
        let m = pk.plaintext_modulus().clone();
        assert!(m.bits() > 64);
        for x in [big(0), big(42), &m - 1u32] {
            let c = pk.encrypt(&x, &mut rng).unwrap();
            assert_eq!(sk.decrypt(&c).unwrap(), x);
        }
        assert_eq!(pk.encrypt(&m, &mut rng), Err(CryptoError::PlaintextOutOfRange));
    }

    #[test]
    fn encryption_is_probabilistic() {
        let (pk, _sk, mut rng) = keys(11);
        let payloads: HashSet<BigUint> = (0..100)
            .map(|_| pk.encrypt_u64(5, &mut rng).unwrap().payload().clone())
            .collect();
        assert_eq!(payloads.len(), 100);
    }

    #[test]
    fn add_neg_and_scalar_laws() {
        let (pk, sk, mut rng) = keys(12);
        let m = pk.plaintext_modulus().clone();
        let e = |x: u64, rng: &mut ChaCha20Rng| pk.encrypt_u64(x, rng).unwrap();
        let dec = |c: &Ciphertext| sk.decrypt(c).unwrap();

        assert_eq!(dec(&pk.add(&e(3, &mut rng), &e(4, &mut rng)).unwrap()), big(7));
        let c = e(99, &mut rng);
        assert_eq!(dec(&pk.add(&c, &e(0, &mut rng)).unwrap()), big(99));

        assert_eq!(dec(&pk.scalar_mul(&e(5, &mut rng), &BigInt::from(0)).unwrap()), big(0));
        assert_eq!(dec(&pk.scalar_mul(&e(5, &mut rng), &BigInt::from(-1)).unwrap()), &m - 5u32);

        assert_eq!(dec(&pk.neg(&e(0, &mut rng)).unwrap()), big(0));
        let seven = e(7, &mut rng);
        assert_eq!(dec(&pk.add(&seven, &pk.neg(&seven).unwrap()).unwrap()), big(0));
        let d = pk.add(&e(3, &mut rng), &pk.neg(&e(10, &mut rng)).unwrap()).unwrap();
        assert_eq!(dec(&d), &m - 7u32);
        assert_eq!(dec(&pk.neg(&pk.neg(&seven).unwrap()).unwrap()), big(7));

        for _ in 0..20 {
            let x = rng.gen_range(1..u64::MAX);
            let r: BigUint = num_bigint::RandBigInt::gen_biguint_below(&mut rng, &m);
            let c = pk.encrypt_u64(x, &mut rng).unwrap();
            let got = dec(&pk.scalar_mul_u(&c, &r).unwrap());
            assert_eq!(got, (big(x) * &r) % &m);
        }
    }

    #[test]
    fn popcount_by_folding() {
        let (pk, sk, mut rng) = keys(13);
        let bits: Vec<u64> = (0..40).map(|_| rng.gen_range(0..2)).collect();
        let cells: Vec<Ciphertext> =
            bits.iter().map(|&b| pk.encrypt_u64(b, &mut rng).unwrap()).collect();
        let sum = cells
            .iter()
            .skip(1)
            .fold(cells[0].clone(), |acc, c| pk.add(&acc, c).unwrap());
        assert_eq!(sk.decrypt(&sum).unwrap(), big(bits.iter().sum()));
    }

    #[test]
    fn rerandomize_keeps_plaintext() {
        let (pk, sk, mut rng) = keys(14);
        let c = pk.encrypt_u64(9, &mut rng).unwrap();
        let r = pk.rerandomize(&c, &mut rng).unwrap();
        assert_ne!(r.payload(), c.payload());
        assert_eq!(sk.decrypt(&r).unwrap(), big(9));
        let r0 = pk.add(&c, &pk.encrypt_u64(0, &mut rng).unwrap()).unwrap();
        assert_ne!(r0.payload(), c.payload());
        assert_eq!(sk.decrypt(&r0).unwrap(), big(9));
    }

    #[test]
    fn key_files_roundtrip() {
        let (pk, sk, mut rng) = keys(15);
        let pk2 = PublicKey::from_bytes(&pk.to_bytes()).unwrap();
        let sk2 = SecretKey::from_bytes(&sk.to_bytes()).unwrap();
        assert_eq!(pk2, pk);
        assert_eq!(sk2, sk);
        assert_eq!(&pk.to_bytes()[..4], b"PPHK");
        assert_eq!(&sk.to_bytes()[..4], b"PPHS");
        let c = pk2.encrypt_u64(77, &mut rng).unwrap();
        assert_eq!(sk.decrypt(&c).unwrap(), big(77));
        let bytes = pk.to_bytes();
        assert!(PublicKey::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn ciphertext_import_validates() {
        let (pk, _sk, _) = keys(16);
        assert!(pk.ciphertext_from_value(BigUint::zero()).is_err());
        let PublicKey::Paillier(inner) = &pk;
        assert!(pk.ciphertext_from_value(inner.n_squared().clone()).is_err());
        assert!(pk.ciphertext_from_value(inner.n().clone()).is_err());
    }
}
