//! Privacy-preserving approximate sequence matching.
//!
//! A client and a server each hold a string. Both segment their string into variable-length
//! grams with a shared dictionary and hash the grams into Bloom filters of the same length.
//! The client encrypts its filter bit by bit under an additively homomorphic key; the server
//! computes the encrypted Hamming distance to its own filter and returns masked, shuffled
//! comparisons against every threshold up to `t_max`. The client learns whether the distance is
//! within the threshold and nothing else; the server learns nothing.
//!
//! Real-valued formulas are generic over [`num::Real`]; the aliases below fix them to `f64`.

pub mod bench;
pub mod bloom;
pub mod codec;
pub mod crypto;
pub mod fasta;
pub mod gram;
pub mod net;
pub mod num;
pub mod oracle;
pub mod protocol;
pub mod rng;
pub mod wire;

pub use bloom::{BloomFilter, BloomParams};
pub use crypto::{keygen, Ciphertext, PublicKey, Scheme, SecretKey};
pub use gram::{build_dictionary, segment, GramConfig, GramDictionary, GramSet};
pub use oracle::{levenshtein, mutate, plaintext_match, EditMix, TrialRecord};
pub use protocol::{
    client_prepare, client_verdict, server_eval, ClientState, MatchQuery, MatchResponse,
    ProtocolParams, Verdict, VerdictMode,
};

/// Default real scalar.
pub type Scalar = f64;
pub type CorrelationSummary = bench::CorrelationSummary<Scalar>;
pub type EditSummary = bench::EditSummary<Scalar>;

/// `required_length` at the default scalar.
pub fn required_length(p: Scalar, n_v: u64) -> Result<u64, bloom::BloomError> {
    bloom::required_length::<Scalar>(p, n_v)
}

/// `fp_probability` at the default scalar.
pub fn fp_probability(l: u64, k: u32, n_v: u64) -> Scalar {
    bloom::fp_probability::<Scalar>(l, k, n_v)
}

/// `compute_threshold` at the default scalar.
pub fn compute_threshold(e_max: u64, p: Scalar, dict: &GramDictionary, reference: &[u8]) -> u64 {
    protocol::compute_threshold::<Scalar>(e_max, p, dict, reference)
}

/// `similarity` at the default scalar.
pub fn similarity(a: &[u8], b: &[u8]) -> Scalar {
    oracle::similarity::<Scalar>(a, b)
}
