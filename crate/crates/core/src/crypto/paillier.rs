//! Paillier backend, `g = 1 + n`, with the Damgård-Jurik-Nielsen randomizer: the public key
//! carries `hs = h^n mod n^2` for a random square-derived `h`, and each encryption multiplies by
//! `hs^a` for a fresh `a` of `ceil(|n| / 2)` bits. Decryption uses CRT over `p^2` and `q^2`.

use std::sync::{Arc, OnceLock};

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use super::CryptoError;

const WINDOW_BITS: usize = 8;

/// `table[i][j - 1] = base^(j * 2^(8 i))` for `j` in `1..256`.
#[derive(Debug)]
struct FixedBaseTable {
    windows: Vec<Vec<BigUint>>,
}

impl FixedBaseTable {
    fn build(base: &BigUint, modulus: &BigUint, exp_bits: usize) -> Self {
        let n_windows = exp_bits.div_ceil(WINDOW_BITS);
        let mut windows = Vec::with_capacity(n_windows);
        let mut window_base = base.clone();
        for _ in 0..n_windows {
            let mut row = Vec::with_capacity((1 << WINDOW_BITS) - 1);
            let mut acc = window_base.clone();
            for _ in 1..(1 << WINDOW_BITS) {
                row.push(acc.clone());
                acc = (&acc * &window_base) % modulus;
            }
            // acc = window_base^256 now.
            window_base = acc;
            windows.push(row);
        }
        FixedBaseTable { windows }
    }

    fn pow(&self, exp: &BigUint, modulus: &BigUint) -> BigUint {
        let mut acc = BigUint::one();
        for (i, byte) in exp.to_bytes_le().into_iter().enumerate() {
            if byte != 0 {
                acc = (&acc * &self.windows[i][byte as usize - 1]) % modulus;
            }
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    hs: BigUint,
    randomizer_bits: usize,
    table: Arc<OnceLock<FixedBaseTable>>,
}

impl PartialEq for PaillierPublicKey {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.hs == other.hs
    }
}

impl Eq for PaillierPublicKey {}

impl PaillierPublicKey {
    pub fn from_parts(n: BigUint, hs: BigUint) -> Result<Self, CryptoError> {
        if n.bits() < 64 || n.is_even() {
            return Err(CryptoError::InvalidKey("modulus must be odd and at least 64 bits".into()));
        }
        let n_squared = &n * &n;
        if hs.is_zero() || hs >= n_squared || !hs.gcd(&n).is_one() {
            return Err(CryptoError::InvalidKey("randomizer base outside Z*_{n^2}".into()));
        }
        let randomizer_bits = (n.bits() as usize).div_ceil(2);
        Ok(PaillierPublicKey {
            n,
            n_squared,
            hs,
            randomizer_bits,
            table: Arc::new(OnceLock::new()),
        })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn hs(&self) -> &BigUint {
        &self.hs
    }

    pub fn modulus_bits(&self) -> u64 {
        self.n.bits()
    }

    /// Builds the fixed-base table for `hs`; later encryptions become ~10x cheaper.
    pub fn precompute(&self) {
        self.table
            .get_or_init(|| FixedBaseTable::build(&self.hs, &self.n_squared, self.randomizer_bits));
    }

    fn randomizer<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        let a = rng.gen_biguint(self.randomizer_bits as u64);
        match self.table.get() {
            Some(t) => t.pow(&a, &self.n_squared),
            None => self.hs.modpow(&a, &self.n_squared),
        }
    }

    pub fn encrypt<R: RngCore + CryptoRng>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<BigUint, CryptoError> {
        if m >= &self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        // (1 + n)^m = 1 + m n mod n^2
        let gm = BigUint::one() + m * &self.n;
        Ok((gm * self.randomizer(rng)) % &self.n_squared)
    }

    pub fn add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.n_squared
    }

    pub fn pow(&self, c: &BigUint, e: &BigUint) -> BigUint {
        c.modpow(e, &self.n_squared)
    }

    pub fn invert(&self, c: &BigUint) -> Result<BigUint, CryptoError> {
        c.modinv(&self.n_squared).ok_or(CryptoError::NotInvertible)
    }

    pub fn rerandomize<R: RngCore + CryptoRng>(&self, c: &BigUint, rng: &mut R) -> BigUint {
        (c * self.randomizer(rng)) % &self.n_squared
    }

    /// Ciphertexts must be units of `Z_{n^2}`.
    pub fn validate(&self, c: &BigUint) -> Result<(), CryptoError> {
        if c.is_zero() || c >= &self.n_squared || !c.gcd(&self.n).is_one() {
            return Err(CryptoError::InvalidCiphertext);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PaillierSecretKey {
    public: PaillierPublicKey,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    hp: BigUint,
    hq: BigUint,
    q_inv_p: BigUint,
}

impl PartialEq for PaillierSecretKey {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public && self.p == other.p && self.q == other.q
    }
}

impl Eq for PaillierSecretKey {}

fn l_function(x: &BigUint, p: &BigUint) -> BigUint {
    (x - 1u32) / p
}

impl PaillierSecretKey {
    pub fn from_parts(p: BigUint, q: BigUint, hs: BigUint) -> Result<Self, CryptoError> {
        if p == q || p < BigUint::from(3u32) || q < BigUint::from(3u32) {
            return Err(CryptoError::InvalidKey("primes must be distinct and odd".into()));
        }
        let n = &p * &q;
        let phi = (&p - 1u32) * (&q - 1u32);
        if !n.gcd(&phi).is_one() {
            return Err(CryptoError::InvalidKey("gcd(n, phi(n)) != 1".into()));
        }
        let public = PaillierPublicKey::from_parts(n, hs)?;
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let g = BigUint::one() + public.n();
        let hp = l_function(&g.modpow(&(&p - 1u32), &p_squared), &p)
            .modinv(&p)
            .ok_or_else(|| CryptoError::InvalidKey("p is not a valid factor".into()))?;
        let hq = l_function(&g.modpow(&(&q - 1u32), &q_squared), &q)
            .modinv(&q)
            .ok_or_else(|| CryptoError::InvalidKey("q is not a valid factor".into()))?;
        let q_inv_p = q
            .modinv(&p)
            .ok_or_else(|| CryptoError::InvalidKey("q not invertible mod p".into()))?;
        Ok(PaillierSecretKey {
            public,
            p,
            q,
            p_squared,
            q_squared,
            hp,
            hq,
            q_inv_p,
        })
    }

    pub fn generate<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> Result<Self, CryptoError> {
        let half = (bits / 2) as usize;
        loop {
            let p = glass_pumpkin::prime::from_rng(half, rng)
                .map_err(|e| CryptoError::InvalidKey(e.to_string()))?;
            let q = glass_pumpkin::prime::from_rng(half, rng)
                .map_err(|e| CryptoError::InvalidKey(e.to_string()))?;
            let n = &p * &q;
            if p == q || n.bits() != bits {
                continue;
            }
            let n_squared = &n * &n;
            let x = loop {
                let x = rng.gen_biguint_range(&BigUint::from(2u32), &n);
                if x.gcd(&n).is_one() {
                    break x;
                }
            };
            let h = &n - (&x * &x) % &n;
            let hs = h.modpow(&n, &n_squared);
            match Self::from_parts(p, q, hs) {
                Ok(sk) => return Ok(sk),
                Err(_) => continue,
            }
        }
    }

    pub fn public(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn decrypt(&self, c: &BigUint) -> Result<BigUint, CryptoError> {
        self.public.validate(c)?;
        let mp = (l_function(&c.modpow(&(&self.p - 1u32), &self.p_squared), &self.p) * &self.hp)
            % &self.p;
        let mq = (l_function(&c.modpow(&(&self.q - 1u32), &self.q_squared), &self.q) * &self.hq)
            % &self.q;
        // m = mq + q * ((mp - mq) q^-1 mod p)
        let diff = (&mp + &self.p - (&mq % &self.p)) % &self.p;
        let h = (diff * &self.q_inv_p) % &self.p;
        Ok(mq + h * &self.q)
    }
}
