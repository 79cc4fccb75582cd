//! Plaintext reference pipeline: edit distance, similarity, the unencrypted
//! gram → filter → distance → threshold path, and seeded string mutation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gram::GramDictionary;
use crate::num::Real;
use crate::protocol::{build_filter, ProtocolError, ProtocolParams};

/// Classic two-row dynamic programme.
pub fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + (ca != cb) as usize;
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Exact distance if it is at most `k`, computed on a diagonal band of width `2k + 1`.
pub fn levenshtein_bounded(a: &[u8], b: &[u8], k: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > k {
        return None;
    }
    let inf = usize::MAX / 2;
    let n = b.len();
    let mut prev = vec![inf; n + 1];
    let mut cur = vec![inf; n + 1];
    for (j, v) in prev.iter_mut().enumerate().take(k.min(n) + 1) {
        *v = j;
    }
    for i in 1..=a.len() {
        let lo = i.saturating_sub(k);
        let hi = (i + k).min(n);
        cur.iter_mut().for_each(|v| *v = inf);
        if lo == 0 {
            cur[0] = i;
        }
        for j in lo.max(1)..=hi {
            let sub = prev[j - 1] + (a[i - 1] != b[j - 1]) as usize;
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let d = prev[n];
    (d <= k).then_some(d)
}

/// `1 - lev / max(|a|, |b|)`; two empty strings are identical.
pub fn similarity<F: Real>(a: &[u8], b: &[u8]) -> F {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return F::one();
    }
    F::one() - F::from_count(levenshtein(a, b) as u64) / F::from_count(longest as u64)
}

/// Filter distance and threshold verdict without any encryption.
pub fn plaintext_match(
    a: &[u8],
    b: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
) -> Result<(u64, bool), ProtocolError> {
    let fa = build_filter(a, dict, params)?;
    let fb = build_filter(b, dict, params)?;
    let d = fa.distance(&fb)?;
    Ok((d, d <= params.t_max()))
}

/// Percentages of substitutions, insertions and deletions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditMix {
    pub substitution: u8,
    pub insertion: u8,
    pub deletion: u8,
}

impl EditMix {
    pub const SUBSTITUTION_ONLY: EditMix = EditMix {
        substitution: 100,
        insertion: 0,
        deletion: 0,
    };

    pub const MIXED: EditMix = EditMix {
        substitution: 70,
        insertion: 15,
        deletion: 15,
    };

    pub fn new(substitution: u8, insertion: u8, deletion: u8) -> Option<Self> {
        (substitution as u16 + insertion as u16 + deletion as u16 == 100).then_some(EditMix {
            substitution,
            insertion,
            deletion,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edit {
    Substitute { pos: usize, from: u8, to: u8 },
    Insert { pos: usize, symbol: u8 },
    Delete { pos: usize, symbol: u8 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MutateError {
    #[error("cannot delete from or substitute in an empty string")]
    DeletionFromEmpty,
    #[error("alphabet needs at least two symbols")]
    AlphabetTooSmall,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrialError {
    #[error(transparent)]
    Mutate(#[from] MutateError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub const DNA: &[u8] = b"ACGT";

/// Applies exactly `ops` random edits, deterministic under `seed`, and returns the edit log.
pub fn mutate_logged(
    s: &[u8],
    ops: usize,
    mix: EditMix,
    alphabet: &[u8],
    seed: u64,
) -> Result<(Vec<u8>, Vec<Edit>), MutateError> {
    if alphabet.len() < 2 {
        return Err(MutateError::AlphabetTooSmall);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = s.to_vec();
    let mut log = Vec::with_capacity(ops);
    for _ in 0..ops {
        let roll = rng.gen_range(0..100u8);
        let edit = if roll < mix.substitution {
            if out.is_empty() {
                return Err(MutateError::DeletionFromEmpty);
            }
            let pos = rng.gen_range(0..out.len());
            let from = out[pos];
            let choices: Vec<u8> = alphabet.iter().copied().filter(|&c| c != from).collect();
            let to = choices[rng.gen_range(0..choices.len())];
            out[pos] = to;
            Edit::Substitute { pos, from, to }
        } else if roll < mix.substitution + mix.insertion {
            let pos = rng.gen_range(0..=out.len());
            let symbol = alphabet[rng.gen_range(0..alphabet.len())];
            out.insert(pos, symbol);
            Edit::Insert { pos, symbol }
        } else {
            if out.is_empty() {
                return Err(MutateError::DeletionFromEmpty);
            }
            let pos = rng.gen_range(0..out.len());
            let symbol = out.remove(pos);
            Edit::Delete { pos, symbol }
        };
        log.push(edit);
    }
    Ok((out, log))
}

pub fn mutate(
    s: &[u8],
    ops: usize,
    mix: EditMix,
    alphabet: &[u8],
    seed: u64,
) -> Result<Vec<u8>, MutateError> {
    mutate_logged(s, ops, mix, alphabet, seed).map(|(out, _)| out)
}

/// One row of the correlation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRecord {
    pub edits_applied: usize,
    pub edit_mix: EditMix,
    pub levenshtein: usize,
    pub bloom_hamming: u64,
    pub matched: bool,
    pub seed: u64,
}

/// Mutates `base`, then measures edit distance and plaintext filter distance.
pub fn run_trial(
    base: &[u8],
    edits: usize,
    mix: EditMix,
    seed: u64,
    dict: &GramDictionary,
    params: &ProtocolParams,
) -> Result<TrialRecord, TrialError> {
    let mutated = mutate(base, edits, mix, DNA, seed)?;
    let lev = levenshtein_bounded(base, &mutated, edits)
        .unwrap_or_else(|| levenshtein(base, &mutated));
    let (d, matched) = plaintext_match(base, &mutated, dict, params)?;
    Ok(TrialRecord {
        edits_applied: edits,
        edit_mix: mix,
        levenshtein: lev,
        bloom_hamming: d,
        matched,
        seed,
    })
}
