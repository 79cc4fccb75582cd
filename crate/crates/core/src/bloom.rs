//! Single-hash Bloom filters (`k = 1`) with SHA-1-mod-`l` indexing.

use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::gram::GramSet;
use crate::num::Real;

pub const HASH_SHA1_MOD_L: &str = "SHA1-mod-l";

const FILTER_MAGIC: &[u8; 4] = b"PPBF";
const FILTER_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BloomError {
    #[error("target false-positive rate must lie in (0, 1), got {0}")]
    DomainError(f64),
    #[error("invalid bloom parameters: {0}")]
    InvalidParams(String),
    #[error("filters have different parameters")]
    ParamMismatch,
    #[error("malformed filter: {0}")]
    Decode(#[from] DecodeError),
}

/// General-`k` sizing: `-1 / ((1 - p^(1/k))^(1/(k n_v)) - 1)`, rounded up.
pub fn required_length_k<F: Real>(p: F, k: u32, n_v: u64) -> Result<u64, BloomError> {
    if !(p > F::zero() && p < F::one()) {
        return Err(BloomError::DomainError(p.to_f64().unwrap_or(f64::NAN)));
    }
    if k == 0 || n_v == 0 {
        return Err(BloomError::InvalidParams("k and n_v must be >= 1".into()));
    }
    let k_f = F::from_count(k as u64);
    let per_bit = F::one() - p.powf(F::one() / k_f);
    let zero_prob = per_bit.powf(F::one() / (k_f * F::from_count(n_v)));
    let exact = -F::one() / (zero_prob - F::one());
    // Absorb rounding noise so that exact integers (e.g. p = 0.5, n_v = 1 gives 2) stay put.
    let slack = exact * F::epsilon().sqrt();
    let len = (exact - slack).ceil();
    len.to_u64()
        .filter(|&l| l >= 1)
        .ok_or_else(|| BloomError::InvalidParams(format!("length {exact:?} not representable")))
}

/// Filter length for target false-positive rate `p` after inserting `n_v` elements with one hash.
pub fn required_length<F: Real>(p: F, n_v: u64) -> Result<u64, BloomError> {
    required_length_k(p, 1, n_v)
}

/// `(1 - (1 - 1/l)^(k n_v))^k`.
pub fn fp_probability<F: Real>(l: u64, k: u32, n_v: u64) -> F {
    if n_v == 0 {
        return F::zero();
    }
    let k_f = F::from_count(k as u64);
    let still_zero = (F::one() - F::one() / F::from_count(l)).powf(k_f * F::from_count(n_v));
    (F::one() - still_zero).powf(k_f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BloomParams {
    length_bits: u64,
    hash_name: String,
    target_fp: f64,
    expected_elements: u64,
}

impl BloomParams {
    /// Sizes the filter from the target false-positive rate and expected element count.
    pub fn for_target(target_fp: f64, expected_elements: u64) -> Result<Self, BloomError> {
        let l = required_length(target_fp, expected_elements)?;
        Self::new(l, 1, HASH_SHA1_MOD_L, target_fp, expected_elements)
    }

    pub fn new(
        length_bits: u64,
        hash_count: u32,
        hash_name: &str,
        target_fp: f64,
        expected_elements: u64,
    ) -> Result<Self, BloomError> {
        if hash_count != 1 {
            return Err(BloomError::InvalidParams(format!(
                "only k = 1 is supported, got {hash_count}"
            )));
        }
        if length_bits == 0 {
            return Err(BloomError::InvalidParams("length must be >= 1".into()));
        }
        if hash_name != HASH_SHA1_MOD_L {
            return Err(BloomError::InvalidParams(format!("unknown hash {hash_name:?}")));
        }
        if !(target_fp > 0.0 && target_fp < 1.0) {
            return Err(BloomError::DomainError(target_fp));
        }
        if expected_elements == 0 {
            return Err(BloomError::InvalidParams("expected elements must be >= 1".into()));
        }
        Ok(BloomParams {
            length_bits,
            hash_name: hash_name.to_owned(),
            target_fp,
            expected_elements,
        })
    }

    pub fn length_bits(&self) -> u64 {
        self.length_bits
    }

    pub fn hash_count(&self) -> u32 {
        1
    }

    pub fn hash_name(&self) -> &str {
        &self.hash_name
    }

    pub fn target_fp(&self) -> f64 {
        self.target_fp
    }

    pub fn expected_elements(&self) -> u64 {
        self.expected_elements
    }

    /// Index of `element`: SHA-1 digest as a big-endian integer, reduced mod `l`.
    pub fn index_of(&self, element: &[u8]) -> u64 {
        let digest = Sha1::digest(element);
        let l = self.length_bits as u128;
        digest
            .iter()
            .fold(0u128, |acc, &b| ((acc << 8) | b as u128) % l) as u64
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u64(self.length_bits)
            .u8(1)
            .short_str(&self.hash_name)
            .f64(self.target_fp)
            .u64(self.expected_elements);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let l = r.u64()?;
        let k = r.u8()?;
        let hash = r.short_str("hash_name")?;
        let p = r.f64()?;
        let n_v = r.u64()?;
        Self::new(l, k as u32, &hash, p, n_v).map_err(|e| DecodeError::invalid("bloom", e.to_string()))
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.length_bits == other.length_bits && self.hash_name == other.hash_name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BloomFilter {
    params: BloomParams,
    words: Vec<u64>,
}

impl BloomFilter {
    pub fn new(params: BloomParams) -> Self {
        let words = vec![0u64; params.length_bits.div_ceil(64) as usize];
        BloomFilter { params, words }
    }

    pub fn from_grams(params: BloomParams, grams: &GramSet) -> Self {
        let mut b = Self::new(params);
        for g in grams.iter() {
            b.insert(g);
        }
        b
    }

    /// Filter with exactly the given bit indices set. Indices must be `< l`.
    pub fn from_indices(params: BloomParams, indices: impl IntoIterator<Item = u64>) -> Self {
        let mut b = Self::new(params);
        for i in indices {
            b.set(i);
        }
        b
    }

    pub fn params(&self) -> &BloomParams {
        &self.params
    }

    pub fn len(&self) -> u64 {
        self.params.length_bits
    }

    pub fn is_empty(&self) -> bool {
        self.cardinality() == 0
    }

    fn set(&mut self, i: u64) {
        assert!(i < self.len(), "bit index {i} out of range");
        self.words[(i / 64) as usize] |= 1 << (i % 64);
    }

    pub fn bit(&self, i: u64) -> bool {
        i < self.len() && self.words[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    pub fn insert(&mut self, element: &[u8]) {
        let i = self.params.index_of(element);
        self.set(i);
    }

    pub fn contains(&self, element: &[u8]) -> bool {
        self.bit(self.params.index_of(element))
    }

    /// Number of set bits.
    pub fn cardinality(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len()).filter(|&i| self.bit(i))
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Result<Self, BloomError> {
        if !self.params.same_shape(&other.params) {
            return Err(BloomError::ParamMismatch);
        }
        Ok(BloomFilter {
            params: self.params.clone(),
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn union(&self, other: &Self) -> Result<Self, BloomError> {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersect(&self, other: &Self) -> Result<Self, BloomError> {
        self.zip_with(other, |a, b| a & b)
    }

    /// `|B1 ∪ B2| - |B1 ∩ B2|`, i.e. the Hamming distance of the bit vectors.
    pub fn distance(&self, other: &Self) -> Result<u64, BloomError> {
        Ok(self.union(other)?.cardinality() - self.intersect(other)?.cardinality())
    }

    /// Packed bits, LSB-first within each byte, `ceil(l / 8)` bytes.
    pub fn packed_bits(&self) -> Vec<u8> {
        let n = self.len().div_ceil(8) as usize;
        self.words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(n)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(FILTER_MAGIC)
            .u16(FILTER_VERSION)
            .u64(self.len())
            .u8(1)
            .short_str(self.params.hash_name())
            .bytes(&self.packed_bits());
        w.into_bytes()
    }

    /// Decodes a serialized filter. The file does not carry target rate or element count, so
    /// those are taken from `params`, whose length and hash must match the file.
    pub fn from_bytes(bytes: &[u8], params: &BloomParams) -> Result<Self, BloomError> {
        let mut r = Reader::new(bytes);
        r.magic(FILTER_MAGIC)?;
        r.version(FILTER_VERSION)?;
        let l = r.u64()?;
        let k = r.u8()?;
        let hash = r.short_str("hash_name")?;
        if l != params.length_bits || k != 1 || hash != params.hash_name {
            return Err(BloomError::ParamMismatch);
        }
        let payload = r.take(l.div_ceil(8) as usize)?;
        r.finish()?;
        let tail_bits = l % 8;
        if tail_bits != 0 && payload[payload.len() - 1] >> tail_bits != 0 {
            return Err(DecodeError::invalid("bits", "padding bits set").into());
        }
        let mut b = BloomFilter::new(params.clone());
        for (i, chunk) in payload.chunks(8).enumerate() {
            let mut le = [0u8; 8];
            le[..chunk.len()].copy_from_slice(chunk);
            b.words[i] = u64::from_le_bytes(le);
        }
        Ok(b)
    }
}
