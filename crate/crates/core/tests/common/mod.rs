#![allow(dead_code)]

use std::sync::OnceLock;

use ppsm::bloom::{BloomFilter, BloomParams, HASH_SHA1_MOD_L};
use ppsm::crypto::{PaillierSecretKey, Scheme, SecretKey};
use ppsm::{build_dictionary, keygen, GramConfig, GramDictionary, ProtocolParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// 256-bit key: fast, for tests that only exercise protocol logic.
pub fn toy_key() -> &'static SecretKey {
    static KEY: OnceLock<SecretKey> = OnceLock::new();
    KEY.get_or_init(|| SecretKey::Paillier(PaillierSecretKey::generate(256, &mut rng(11)).unwrap()))
}

pub fn key_1024() -> &'static SecretKey {
    static KEY: OnceLock<SecretKey> = OnceLock::new();
    KEY.get_or_init(|| keygen(1024, &mut rng(12)).unwrap().1)
}

pub fn key_2048() -> &'static SecretKey {
    static KEY: OnceLock<SecretKey> = OnceLock::new();
    KEY.get_or_init(|| keygen(2048, &mut rng(13)).unwrap().1)
}

/// Dictionary over `{A,C,G,T}` with `q_min = 1`, `q_max = 2`.
pub fn toy_dict() -> GramDictionary {
    build_dictionary(["ACGTTGCAAC"], GramConfig::new(1, 2, true).unwrap(), 1).unwrap()
}

pub fn toy_params(l: u64, t_max: u64) -> ProtocolParams {
    let bloom = BloomParams::new(l, 1, HASH_SHA1_MOD_L, 0.1, 16).unwrap();
    ProtocolParams::explicit(bloom, &toy_dict(), 1, t_max, Scheme::Paillier)
}

pub fn filter(params: &ProtocolParams, bits: impl IntoIterator<Item = u64>) -> BloomFilter {
    BloomFilter::from_indices(params.bloom().clone(), bits)
}

/// Every string over `alphabet` of exactly `len` symbols.
pub fn all_strings(alphabet: &[u8], len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                alphabet.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

pub mod fuzz {
    use ppsm::net::{handle_session, parse_request, request_bytes, MemoryStream, ServerContext, SessionOutcome};
    use ppsm::wire::{Frame, HEADER_LEN, MSG_ERROR};
    use ppsm::{client_prepare, ProtocolParams};
    use rand::{Rng, RngCore};

    pub struct Harness {
        pub ctx: ServerContext,
        pub params: ProtocolParams,
        pub request: Vec<u8>,
    }

    pub fn harness() -> Harness {
        let dict = super::toy_dict();
        let params = super::toy_params(32, 2);
        let ctx = ServerContext::new(b"ACGTAC", &dict, params.clone()).unwrap();
        let (q, _) = client_prepare(b"ACGTTC", &dict, &params, super::toy_key(), &mut super::rng(1)).unwrap();
        Harness {
            ctx,
            params,
            request: request_bytes(&q),
        }
    }

    fn mutate_once<R: Rng>(buf: &mut Vec<u8>, rng: &mut R) {
        let len = buf.len();
        match rng.gen_range(0..9) {
            0 if len > 0 => {
                let i = rng.gen_range(0..len);
                buf[i] ^= 1 << rng.gen_range(0..8);
            }
            1 if len > 0 => {
                let i = rng.gen_range(0..len);
                buf[i] = rng.gen();
            }
            2 => buf.truncate(rng.gen_range(0..=len)),
            3 => {
                let i = rng.gen_range(0..=len);
                let extra: Vec<u8> = (0..rng.gen_range(1..16)).map(|_| rng.gen()).collect();
                buf.splice(i..i, extra);
            }
            4 if len > 0 => {
                let a = rng.gen_range(0..len);
                let b = rng.gen_range(a..=len.min(a + 64));
                buf.drain(a..b);
            }
            // Header fields of the first or second frame.
            5 => {
                let second = first_frame_len(buf);
                let base = if rng.gen() { 0 } else { second.unwrap_or(0) };
                let field = [4usize, 6, 7][rng.gen_range(0..3)];
                if base + field < buf.len() {
                    buf[base + field] = rng.gen();
                }
            }
            6 => {
                let base = if rng.gen() { 0 } else { first_frame_len(buf).unwrap_or(0) };
                if base + HEADER_LEN <= buf.len() {
                    let v: u64 = match rng.gen_range(0..3) {
                        0 => rng.gen(),
                        1 => rng.gen_range(0..100_000),
                        _ => u64::from_be_bytes(buf[base + 7..base + 15].try_into().unwrap())
                            .wrapping_add(rng.gen_range(0..5))
                            .wrapping_sub(2),
                    };
                    buf[base + 7..base + 15].copy_from_slice(&v.to_be_bytes());
                }
            }
            7 => {
                // Swap the two frames.
                if let Some(first) = first_frame_len(buf) {
                    let head: Vec<u8> = buf.drain(..first).collect();
                    buf.extend(head);
                }
            }
            _ => {
                let n = rng.gen_range(1..64);
                let mut junk = vec![0u8; n];
                rng.fill_bytes(&mut junk);
                *buf = junk;
            }
        }
    }

    fn first_frame_len(buf: &[u8]) -> Option<usize> {
        Frame::parse(buf).ok().map(|(_, n)| n)
    }

    /// The first two frames of `input`, if they parse as frames at all.
    fn session_prefix(input: &[u8]) -> Option<&[u8]> {
        let (_, a) = Frame::parse(input).ok()?;
        let (_, b) = Frame::parse(&input[a..]).ok()?;
        Some(&input[..a + b])
    }

    /// Well-formed means the first two frames form a canonical request under the server's
    /// parameters.
    pub fn well_formed(h: &Harness, input: &[u8]) -> bool {
        let Some(prefix) = session_prefix(input) else {
            return false;
        };
        match parse_request(prefix) {
            Ok(q) => q.params == h.params && request_bytes(&q) == prefix,
            Err(_) => false,
        }
    }

    #[derive(Debug, Default)]
    pub struct Stats {
        pub sessions: usize,
        pub responded: usize,
        pub rejected: usize,
        pub disconnected: usize,
        pub accepted_malformed: usize,
        pub rejected_well_formed: usize,
        pub unparseable_replies: usize,
    }

    pub fn run<R: RngCore + rand::CryptoRng>(h: &Harness, n: usize, rng: &mut R) -> Stats {
        let mut stats = Stats::default();
        for _ in 0..n {
            let mut input = h.request.clone();
            for _ in 0..rng.gen_range(1..=3) {
                mutate_once(&mut input, rng);
            }
            let ok = well_formed(h, &input);
            let mut stream = MemoryStream::new(input);
            let outcome = handle_session(&mut stream, &h.ctx, rng);
            stats.sessions += 1;
            match &outcome {
                SessionOutcome::Responded { .. } => {
                    stats.responded += 1;
                    if !ok {
                        stats.accepted_malformed += 1;
                    }
                }
                SessionOutcome::Rejected { .. } => {
                    stats.rejected += 1;
                    if ok {
                        stats.rejected_well_formed += 1;
                    }
                    match Frame::parse(&stream.output) {
                        Ok((f, used)) if f.msg_type == MSG_ERROR && used == stream.output.len() => {}
                        _ => stats.unparseable_replies += 1,
                    }
                }
                SessionOutcome::Disconnected(_) => stats.disconnected += 1,
            }
        }
        stats
    }
}
