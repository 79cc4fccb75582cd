//! Two-party threshold matching over encrypted Bloom filters.
//!
//! The client sends every bit of its filter encrypted, plus its encrypted cardinality. The
//! server folds the cells selected by its own filter into `E(|A ∩ B|)`, derives
//! `E(d) = E(|A|) E(|B|) E(|A ∩ B|)^-2`, subtracts each threshold `t` in `[0, t_max]`, masks
//! every difference with a fresh nonzero factor and returns the shuffled `t_max + 1` values.
//! The client learns only whether one of them decrypts to zero.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bloom::{BloomError, BloomFilter, BloomParams};
use crate::codec::{DecodeError, Reader, Writer};
use crate::crypto::{Ciphertext, CryptoError, PublicKey, Scheme, SecretKey};
use crate::gram::{segment, ConservativeNag, GramConfig, GramDictionary, GramError, NagBound};
use crate::num::Real;

const PARAMS_MAGIC: &[u8; 4] = b"PPPR";
const PARAMS_VERSION: u16 = 1;

pub type SessionId = [u8; 16];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("gram dictionary does not match the protocol parameters")]
    DictionaryMismatch,
    #[error("protocol parameters differ between client and server")]
    ParamsMismatch,
    #[error("key scheme does not match the protocol parameters")]
    SchemeMismatch,
    #[error("encrypted filter has {got} cells, expected {expected}")]
    FilterLengthMismatch { expected: u64, got: u64 },
    #[error("response belongs to a different session")]
    SessionMismatch,
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("threshold range t_max + 1 = {0} does not fit the plaintext space")]
    ThresholdTooLarge(u64),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error(transparent)]
    Bloom(#[from] BloomError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("malformed parameters: {0}")]
    Decode(#[from] DecodeError),
}

/// `floor(2 * nag(reference, e_max) * (1 - p))` with an explicit NAG provider.
pub fn compute_threshold_with<F: Real>(
    nag: &impl NagBound,
    e_max: u64,
    p: F,
    reference: &[u8],
) -> u64 {
    let bound = F::from_count(nag.nag(reference.len(), e_max));
    let t = F::lit(2.0) * bound * (F::one() - p);
    // Tolerate representation error just below an integer.
    (t + t.max(F::one()) * F::epsilon().sqrt()).floor().to_u64().unwrap_or(0)
}

/// Threshold from the conservative NAG bound of `dict`. `reference` only matters for
/// per-string NAG providers.
pub fn compute_threshold<F: Real>(
    e_max: u64,
    p: F,
    dict: &GramDictionary,
    reference: &[u8],
) -> u64 {
    let nag = ConservativeNag {
        q_max: dict.config().q_max(),
    };
    compute_threshold_with(&nag, e_max, p, reference)
}

/// Public parameters both parties must agree on bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    bloom: BloomParams,
    gram_cfg: GramConfig,
    dict_digest: [u8; 32],
    e_max: u64,
    t_max: u64,
    scheme: Scheme,
    reference_digest: [u8; 32],
}

impl ProtocolParams {
    /// Sizes the filter for `expected_elements` grams and derives `t_max` from `e_max`.
    pub fn derive(
        dict: &GramDictionary,
        target_fp: f64,
        expected_elements: u64,
        e_max: u64,
        reference: &[u8],
        scheme: Scheme,
    ) -> Result<Self, ProtocolError> {
        let bloom = BloomParams::for_target(target_fp, expected_elements)?;
        let t_max = compute_threshold(e_max, target_fp, dict, reference);
        Ok(ProtocolParams {
            bloom,
            gram_cfg: *dict.config(),
            dict_digest: dict.digest(),
            e_max,
            t_max,
            scheme,
            reference_digest: Sha256::digest(reference).into(),
        })
    }

    /// Parameters with an explicit filter and threshold, bypassing the sizing rules.
    pub fn explicit(
        bloom: BloomParams,
        dict: &GramDictionary,
        e_max: u64,
        t_max: u64,
        scheme: Scheme,
    ) -> Self {
        ProtocolParams {
            bloom,
            gram_cfg: *dict.config(),
            dict_digest: dict.digest(),
            e_max,
            t_max,
            scheme,
            reference_digest: [0; 32],
        }
    }

    pub fn bloom(&self) -> &BloomParams {
        &self.bloom
    }

    pub fn gram_config(&self) -> &GramConfig {
        &self.gram_cfg
    }

    pub fn dict_digest(&self) -> &[u8; 32] {
        &self.dict_digest
    }

    pub fn e_max(&self) -> u64 {
        self.e_max
    }

    pub fn t_max(&self) -> u64 {
        self.t_max
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn reference_digest(&self) -> &[u8; 32] {
        &self.reference_digest
    }

    /// Number of ciphertexts in every response.
    pub fn response_len(&self) -> u64 {
        self.t_max + 1
    }

    pub fn check_dictionary(&self, dict: &GramDictionary) -> Result<(), ProtocolError> {
        if dict.digest() != self.dict_digest || *dict.config() != self.gram_cfg {
            return Err(ProtocolError::DictionaryMismatch);
        }
        Ok(())
    }

    pub fn check_key(&self, pk: &PublicKey) -> Result<(), ProtocolError> {
        if pk.scheme() != self.scheme {
            return Err(ProtocolError::SchemeMismatch);
        }
        if BigUint::from(self.response_len()) > *pk.plaintext_modulus() {
            return Err(ProtocolError::ThresholdTooLarge(self.response_len()));
        }
        Ok(())
    }

    pub fn encode(&self, w: &mut Writer) {
        w.bytes(PARAMS_MAGIC).u16(PARAMS_VERSION);
        self.bloom.encode(w);
        self.gram_cfg.encode(w);
        w.bytes(&self.dict_digest)
            .u64(self.e_max)
            .u64(self.t_max)
            .short_str(self.scheme.id())
            .bytes(&self.reference_digest);
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.magic(PARAMS_MAGIC)?;
        r.version(PARAMS_VERSION)?;
        let bloom = BloomParams::decode(r)?;
        let gram_cfg = GramConfig::decode(r)?;
        let dict_digest = r.array::<32>()?;
        let e_max = r.u64()?;
        let t_max = r.u64()?;
        let scheme = Scheme::from_id(&r.short_str("scheme_id")?)
            .map_err(|e| DecodeError::invalid("scheme_id", e.to_string()))?;
        let reference_digest = r.array::<32>()?;
        Ok(ProtocolParams {
            bloom,
            gram_cfg,
            dict_digest,
            e_max,
            t_max,
            scheme,
            reference_digest,
        })
    }

    /// Canonical serialization; also the params file content.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let p = Self::decode(&mut r)?;
        r.finish()?;
        Ok(p)
    }

    /// SHA-256 of the canonical serialization, compared in the handshake.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Per-bit encryption of the client's filter plus its encrypted cardinality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedFilter {
    pub cells: Vec<Ciphertext>,
    pub enc_cardinality: Ciphertext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchQuery {
    pub params: ProtocolParams,
    pub pk: PublicKey,
    pub session_id: SessionId,
    pub filter: EncryptedFilter,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResponse {
    pub session_id: SessionId,
    pub masked: Vec<Ciphertext>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub matched: bool,
    /// How many response elements were decrypted before stopping.
    pub decryptions: usize,
}

/// Whether the client stops decrypting at the first zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictMode {
    /// Decrypt everything and reject responses with more than one zero.
    FullScan,
    EarlyExit,
}

impl Default for VerdictMode {
    fn default() -> Self {
        if cfg!(debug_assertions) {
            VerdictMode::FullScan
        } else {
            VerdictMode::EarlyExit
        }
    }
}

/// What the client keeps between sending the query and reading the response.
#[derive(Debug, Clone)]
pub struct ClientState {
    sk: SecretKey,
    session_id: SessionId,
    t_max: u64,
}

impl ClientState {
    pub fn new(sk: SecretKey, session_id: SessionId, t_max: u64) -> Self {
        ClientState {
            sk,
            session_id,
            t_max,
        }
    }

    pub fn secret_key(&self) -> &SecretKey {
        &self.sk
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }
}

/// Segments and filters `s` with the shared dictionary.
pub fn build_filter(
    s: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
) -> Result<BloomFilter, ProtocolError> {
    params.check_dictionary(dict)?;
    let grams = segment(s, dict)?;
    Ok(BloomFilter::from_grams(params.bloom.clone(), &grams))
}

pub fn encrypt_filter<R: RngCore + CryptoRng>(
    filter: &BloomFilter,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<EncryptedFilter, ProtocolError> {
    pk.precompute();
    let one = BigUint::from(1u32);
    let zero = BigUint::zero();
    let cells = (0..filter.len())
        .map(|i| pk.encrypt(if filter.bit(i) { &one } else { &zero }, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let enc_cardinality = pk.encrypt_u64(filter.cardinality(), rng)?;
    Ok(EncryptedFilter {
        cells,
        enc_cardinality,
    })
}

pub fn client_prepare<R: RngCore + CryptoRng>(
    s: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<(MatchQuery, ClientState), ProtocolError> {
    let pk = sk.public();
    params.check_key(&pk)?;
    let filter = build_filter(s, dict, params)?;
    client_prepare_filter(&filter, params, sk, rng)
}

/// Client side starting from an already built filter.
pub fn client_prepare_filter<R: RngCore + CryptoRng>(
    filter: &BloomFilter,
    params: &ProtocolParams,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<(MatchQuery, ClientState), ProtocolError> {
    let pk = sk.public();
    params.check_key(&pk)?;
    if filter.params() != params.bloom() {
        return Err(ProtocolError::ParamsMismatch);
    }
    let encrypted = encrypt_filter(filter, &pk, rng)?;
    let mut session_id = [0u8; 16];
    rng.fill_bytes(&mut session_id);
    let query = MatchQuery {
        params: params.clone(),
        pk,
        session_id,
        filter: encrypted,
    };
    let state = ClientState::new(sk.clone(), session_id, params.t_max);
    Ok((query, state))
}

/// `E(|A ∩ B|)`: sum of the client cells at the server's set bits.
pub fn encrypted_intersection<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    cells: &[Ciphertext],
    server_filter: &BloomFilter,
    rng: &mut R,
) -> Result<Ciphertext, ProtocolError> {
    if cells.len() as u64 != server_filter.len() {
        return Err(ProtocolError::FilterLengthMismatch {
            expected: server_filter.len(),
            got: cells.len() as u64,
        });
    }
    let mut acc = pk.encrypt_u64(0, rng)?;
    for i in server_filter.ones() {
        acc = pk.add(&acc, &cells[i as usize])?;
    }
    Ok(acc)
}

/// `E(d) = E(|A|) · E(|B|) · E(|A ∩ B|)^-2`.
pub fn encrypted_distance<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    enc_client_cardinality: &Ciphertext,
    server_cardinality: u64,
    enc_intersection: &Ciphertext,
    rng: &mut R,
) -> Result<Ciphertext, ProtocolError> {
    let enc_server = pk.encrypt_u64(server_cardinality, rng)?;
    let union_plus = pk.add(enc_client_cardinality, &enc_server)?;
    let minus_two = pk.scalar_mul(enc_intersection, &BigInt::from(-2))?;
    Ok(pk.add(&union_plus, &minus_two)?)
}

/// `E(d - t)` for every `t` in `[0, t_max]`, in threshold order.
pub fn threshold_differences<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    enc_d: &Ciphertext,
    t_max: u64,
    rng: &mut R,
) -> Result<Vec<Ciphertext>, ProtocolError> {
    let m = pk.plaintext_modulus();
    if BigUint::from(t_max) >= *m {
        return Err(ProtocolError::ThresholdTooLarge(t_max + 1));
    }
    (0..=t_max)
        .map(|t| {
            let inverse = (m - BigUint::from(t)) % m;
            let enc_inverse = pk.encrypt(&inverse, rng)?;
            Ok(pk.add(enc_d, &enc_inverse)?)
        })
        .collect()
}

/// Multiplies each difference by a fresh factor drawn from `[1, M - 1]`.
pub fn mask<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    diffs: &[Ciphertext],
    rng: &mut R,
) -> Result<Vec<Ciphertext>, ProtocolError> {
    let one = BigUint::from(1u32);
    let m = pk.plaintext_modulus();
    diffs
        .iter()
        .map(|c| {
            let r = rng.gen_biguint_range(&one, m);
            Ok(pk.scalar_mul_u(c, &r)?)
        })
        .collect()
}

/// Uniform Fisher-Yates permutation of the response, hiding which threshold produced a zero.
pub fn shuffle_response<T, R: RngCore>(items: &mut [T], rng: &mut R) {
    items.shuffle(rng);
}

/// Server evaluation against an already built server filter.
pub fn server_eval_filter<R: RngCore + CryptoRng>(
    q: &MatchQuery,
    server_filter: &BloomFilter,
    rng: &mut R,
) -> Result<MatchResponse, ProtocolError> {
    q.params.check_key(&q.pk)?;
    if server_filter.params() != q.params.bloom() {
        return Err(ProtocolError::ParamsMismatch);
    }
    let pk = &q.pk;
    if q.params.t_max >= 32 {
        pk.precompute();
    }
    let enc_i = encrypted_intersection(pk, &q.filter.cells, server_filter, rng)?;
    let enc_d = encrypted_distance(
        pk,
        &q.filter.enc_cardinality,
        server_filter.cardinality(),
        &enc_i,
        rng,
    )?;
    let diffs = threshold_differences(pk, &enc_d, q.params.t_max, rng)?;
    let mut masked = mask(pk, &diffs, rng)?;
    shuffle_response(&mut masked, rng);
    Ok(MatchResponse {
        session_id: q.session_id,
        masked,
    })
}

/// Full server side: checks the query against the server's own parameters and dictionary,
/// filters `s_server` and evaluates.
pub fn server_eval<R: RngCore + CryptoRng>(
    q: &MatchQuery,
    s_server: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
    rng: &mut R,
) -> Result<MatchResponse, ProtocolError> {
    if &q.params != params {
        return Err(ProtocolError::ParamsMismatch);
    }
    params.check_dictionary(dict)?;
    let server_filter = build_filter(s_server, dict, params)?;
    server_eval_filter(q, &server_filter, rng)
}

pub fn client_verdict(
    resp: &MatchResponse,
    state: &ClientState,
    mode: VerdictMode,
) -> Result<Verdict, ProtocolError> {
    if resp.session_id != state.session_id {
        return Err(ProtocolError::SessionMismatch);
    }
    let expected = state.t_max + 1;
    if resp.masked.len() as u64 != expected {
        return Err(ProtocolError::ProtocolViolation(format!(
            "response has {} elements, expected {expected}",
            resp.masked.len()
        )));
    }
    let mut zeros = 0usize;
    let mut decryptions = 0usize;
    for c in &resp.masked {
        decryptions += 1;
        if state.sk.decrypt_is_zero(c)? {
            zeros += 1;
            if mode == VerdictMode::EarlyExit {
                break;
            }
        }
    }
    if zeros > 1 {
        return Err(ProtocolError::ProtocolViolation(format!(
            "{zeros} elements decrypt to zero"
        )));
    }
    Ok(Verdict {
        matched: zeros == 1,
        decryptions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::HASH_SHA1_MOD_L;
    use crate::crypto::keygen;
    use crate::gram::{build_dictionary, GramConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn dict(q_max: usize) -> GramDictionary {
        build_dictionary(["ACGTACGGTACCA"], GramConfig::new(1, q_max, true).unwrap(), 1).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let d40 = build_dictionary(["ACGT"], GramConfig::new(2, 40, true).unwrap(), 1).unwrap();
        assert_eq!(compute_threshold(0, 0.1, &d40, b"ACGT"), 0);
        assert_eq!(compute_threshold(10, 0.1, &d40, b"ACGT"), 1422);
        assert_eq!(compute_threshold(1, 0.5, &dict(2), b"A"), 3);
        assert_eq!(compute_threshold(1, 0.1f32, &dict(2), b"A"), 5);
    }

    #[test]
    fn params_roundtrip_and_digest() {
        let d = dict(3);
        let p = ProtocolParams::derive(&d, 0.1, 50, 2, b"ACGT", Scheme::Paillier).unwrap();
        assert_eq!(p.t_max(), compute_threshold(2, 0.1, &d, b""));
        let back = ProtocolParams::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.digest(), p.digest());
        let q = ProtocolParams::derive(&d, 0.1, 50, 3, b"ACGT", Scheme::Paillier).unwrap();
        assert_ne!(q.digest(), p.digest());
    }

    #[test]
    fn mismatched_dictionary_is_rejected() {
        let p = ProtocolParams::derive(&dict(3), 0.1, 50, 1, b"A", Scheme::Paillier).unwrap();
        assert_eq!(
            build_filter(b"ACGT", &dict(4), &p),
            Err(ProtocolError::DictionaryMismatch)
        );
    }

    #[test]
    fn verdict_rules() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (pk, sk) = keygen(1024, &mut rng).unwrap();
        let state = ClientState::new(sk, [7; 16], 2);
        let e = |x: u64, rng: &mut ChaCha20Rng| pk.encrypt_u64(x, rng).unwrap();

        let resp = MatchResponse {
            session_id: [7; 16],
            masked: vec![e(5, &mut rng), e(0, &mut rng), e(9, &mut rng)],
        };
        let v = client_verdict(&resp, &state, VerdictMode::FullScan).unwrap();
        assert!(v.matched);
        assert_eq!(v.decryptions, 3);
        let v = client_verdict(&resp, &state, VerdictMode::EarlyExit).unwrap();
        assert!(v.matched);
        assert_eq!(v.decryptions, 2);

        let none = MatchResponse {
            session_id: [7; 16],
            masked: vec![e(5, &mut rng), e(1, &mut rng), e(9, &mut rng)],
        };
        assert!(!client_verdict(&none, &state, VerdictMode::FullScan).unwrap().matched);

        let dup = MatchResponse {
            session_id: [7; 16],
            masked: vec![e(0, &mut rng), e(0, &mut rng), e(9, &mut rng)],
        };
        assert!(matches!(
            client_verdict(&dup, &state, VerdictMode::FullScan),
            Err(ProtocolError::ProtocolViolation(_))
        ));

        let other = MatchResponse {
            session_id: [8; 16],
            ..resp.clone()
        };
        assert_eq!(
            client_verdict(&other, &state, VerdictMode::FullScan),
            Err(ProtocolError::SessionMismatch)
        );
        let short = MatchResponse {
            session_id: [7; 16],
            masked: resp.masked[..2].to_vec(),
        };
        assert!(matches!(
            client_verdict(&short, &state, VerdictMode::FullScan),
            Err(ProtocolError::ProtocolViolation(_))
        ));
    }

    #[test]
    fn empty_server_filter_gives_client_cardinality() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (pk, sk) = keygen(1024, &mut rng).unwrap();
        let bp = BloomParams::new(32, 1, HASH_SHA1_MOD_L, 0.1, 4).unwrap();
        let a = BloomFilter::from_indices(bp.clone(), [1, 5, 9, 30]);
        let b = BloomFilter::new(bp);
        let enc = encrypt_filter(&a, &pk, &mut rng).unwrap();
        let i = encrypted_intersection(&pk, &enc.cells, &b, &mut rng).unwrap();
        assert_eq!(sk.decrypt(&i).unwrap(), BigUint::zero());
        let d = encrypted_distance(&pk, &enc.enc_cardinality, 0, &i, &mut rng).unwrap();
        assert_eq!(sk.decrypt(&d).unwrap(), BigUint::from(4u32));
        assert!(matches!(
            encrypted_intersection(&pk, &enc.cells[1..], &b, &mut rng),
            Err(ProtocolError::FilterLengthMismatch { .. })
        ));
    }
}
