//! Randomness source for operator-facing entry points.
//!
//! `PPSM_SEED` fixes the stream for reproducible runs, but only in builds compiled with the
//! `test-rng` feature. Other builds refuse to start when the variable is set.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

pub const SEED_ENV: &str = "PPSM_SEED";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RngPolicyError {
    #[error("{SEED_ENV} is set but this build does not honor deterministic seeds")]
    SeedRefused,
    #[error("{SEED_ENV} must be an unsigned 64-bit integer, got {0:?}")]
    BadSeed(String),
}

/// Seed requested through the environment, if any.
pub fn env_seed() -> Result<Option<u64>, RngPolicyError> {
    match std::env::var(SEED_ENV) {
        Err(_) => Ok(None),
        Ok(v) => seed_policy(&v, cfg!(feature = "test-rng")).map(Some),
    }
}

fn seed_policy(value: &str, honored: bool) -> Result<u64, RngPolicyError> {
    if !honored {
        return Err(RngPolicyError::SeedRefused);
    }
    value
        .trim()
        .parse()
        .map_err(|_| RngPolicyError::BadSeed(value.to_owned()))
}

/// Operating-system entropy, or the `PPSM_SEED` stream where permitted.
pub fn session_rng() -> Result<ChaCha20Rng, RngPolicyError> {
    Ok(match env_seed()? {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    })
}

/// Per-session generators: the `k`-th call returns `base` switched to stream `k`, so session
/// `k` draws the same values whichever transport carries it.
pub fn session_streams(base: ChaCha20Rng) -> impl FnMut() -> ChaCha20Rng {
    let mut next = 0u64;
    move || {
        let mut r = base.clone();
        r.set_stream(next);
        next += 1;
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy() {
        assert_eq!(seed_policy("7", false), Err(RngPolicyError::SeedRefused));
        assert_eq!(seed_policy(" 7 ", true), Ok(7));
        assert!(matches!(seed_policy("x", true), Err(RngPolicyError::BadSeed(_))));
    }

    #[test]
    fn first_stream_is_the_base_stream() {
        use rand::RngCore;
        let base = ChaCha20Rng::seed_from_u64(5);
        let mut streams = session_streams(base.clone());
        assert_eq!(streams().next_u64(), base.clone().next_u64());
        assert_ne!(streams().next_u64(), base.clone().next_u64());
    }
}
