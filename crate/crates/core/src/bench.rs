//! Desk-scale experiments: edit/filter-distance correlation and timed end-to-end runs.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::{Duration, Instant};

use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::{Scheme, SecretKey};
use crate::gram::{build_dictionary, GramConfig, GramDictionary, GramError};
use crate::net::{handle_session, run_query, QueryError, ServerContext, SessionOutcome};
use crate::num::Real;
use crate::oracle::{mutate, plaintext_match, run_trial, EditMix, MutateError, TrialError, TrialRecord, DNA};
use crate::protocol::{ProtocolError, ProtocolParams, VerdictMode};

pub const CSV_HEADER: [&str; 5] = ["edits", "levenshtein", "bloom_hamming", "matched", "seed"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error(transparent)]
    Mutate(#[from] MutateError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad csv row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("server session failed: {0:?}")]
    Session(SessionOutcome),
}

/// Uniform random string over `alphabet`.
pub fn random_sequence<R: Rng + ?Sized>(len: usize, alphabet: &[u8], rng: &mut R) -> Vec<u8> {
    (0..len)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
        .collect()
}

/// `{1, 5, 10, ..., 50}`.
pub fn default_edit_grid() -> Vec<usize> {
    std::iter::once(1).chain((5..=50).step_by(5)).collect()
}

/// Shape of a synthetic experiment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceConfig {
    pub length: usize,
    pub q_min: usize,
    pub q_max: usize,
    pub positional: bool,
    pub target_fp: f64,
    pub e_max: u64,
    pub prune_threshold: u64,
    pub seed: u64,
}

impl InstanceConfig {
    pub fn desk(length: usize, e_max: u64, seed: u64) -> Self {
        InstanceConfig {
            length,
            q_min: 2,
            q_max: 40,
            positional: true,
            target_fp: 0.1,
            e_max,
            prune_threshold: 1,
            seed,
        }
    }
}

/// A reference string with the dictionary trained on it and parameters derived from it.
#[derive(Debug, Clone)]
pub struct Instance {
    pub reference: Vec<u8>,
    pub dict: GramDictionary,
    pub params: ProtocolParams,
}

/// Number of grams a string of `len` symbols produces under greedy segmentation.
pub fn expected_elements(len: usize, q_min: usize) -> u64 {
    (len + q_min - 1) as u64
}

pub fn build_instance(cfg: &InstanceConfig) -> Result<Instance, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let reference = random_sequence(cfg.length, DNA, &mut rng);
    let gram_cfg = GramConfig::new(cfg.q_min, cfg.q_max, cfg.positional)?;
    let dict = build_dictionary([&reference], gram_cfg, cfg.prune_threshold)?;
    let params = ProtocolParams::derive(
        &dict,
        cfg.target_fp,
        expected_elements(cfg.length, cfg.q_min),
        cfg.e_max,
        &reference,
        Scheme::Paillier,
    )?;
    Ok(Instance {
        reference,
        dict,
        params,
    })
}

/// Trial seed for index `i`: independent of how trials are scheduled.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    ChaCha8Rng::seed_from_u64(base ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)).next_u64()
}

/// Runs `trials` mutations of `base`, cycling through `grid` for the edit counts.
pub fn bench_correlation(
    base: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
    trials: usize,
    grid: &[usize],
    mix: EditMix,
    seed: u64,
) -> Result<Vec<TrialRecord>, BenchError> {
    (0..trials)
        .map(|i| {
            let e = grid[i % grid.len()];
            Ok(run_trial(base, e, mix, trial_seed(seed, i), dict, params)?)
        })
        .collect()
}

/// One CSV line of trial output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRow {
    pub edits: usize,
    pub levenshtein: usize,
    pub bloom_hamming: u64,
    pub matched: bool,
    pub seed: u64,
}

impl From<&TrialRecord> for TrialRow {
    fn from(r: &TrialRecord) -> Self {
        TrialRow {
            edits: r.edits_applied,
            levenshtein: r.levenshtein,
            bloom_hamming: r.bloom_hamming,
            matched: r.matched,
            seed: r.seed,
        }
    }
}

pub fn write_csv<W: Write>(rows: &[TrialRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.edits.to_string(),
            r.levenshtein.to_string(),
            r.bloom_hamming.to_string(),
            r.matched.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TrialRow>, BenchError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(BenchError::BadRow {
            row: 0,
            reason: format!("unexpected header {:?}", header),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |reason: &str| BenchError::BadRow {
            row: i + 1,
            reason: reason.to_owned(),
        };
        let field = |k: usize| rec.get(k).ok_or_else(|| bad("missing field"));
        rows.push(TrialRow {
            edits: field(0)?.parse().map_err(|_| bad("edits"))?,
            levenshtein: field(1)?.parse().map_err(|_| bad("levenshtein"))?,
            bloom_hamming: field(2)?.parse().map_err(|_| bad("bloom_hamming"))?,
            matched: field(3)?.parse().map_err(|_| bad("matched"))?,
            seed: field(4)?.parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

/// Sample Pearson correlation; `None` if either side is constant or fewer than two points.
pub fn pearson<F: Real>(xs: &[F], ys: &[F]) -> Option<F> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = F::from_count(xs.len() as u64);
    let mx = xs.iter().fold(F::zero(), |a, &x| a + x) / n;
    let my = ys.iter().fold(F::zero(), |a, &y| a + y) / n;
    let (mut sxy, mut sxx, mut syy) = (F::zero(), F::zero(), F::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= F::zero() || syy <= F::zero() {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Mean and unbiased variance.
pub fn mean_variance<F: Real>(xs: &[F]) -> (F, F) {
    if xs.is_empty() {
        return (F::nan(), F::nan());
    }
    let n = F::from_count(xs.len() as u64);
    let mean = xs.iter().fold(F::zero(), |a, &x| a + x) / n;
    if xs.len() < 2 {
        return (mean, F::zero());
    }
    let ss = xs.iter().fold(F::zero(), |a, &x| a + (x - mean) * (x - mean));
    (mean, ss / (n - F::one()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditSummary<F> {
    pub edits: usize,
    pub trials: usize,
    pub mean_hamming: F,
    pub var_hamming: F,
    pub mean_levenshtein: F,
    pub match_rate: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSummary<F> {
    pub trials: usize,
    /// r(edits applied, filter Hamming distance).
    pub pearson_edits: Option<F>,
    /// r(measured Levenshtein distance, filter Hamming distance).
    pub pearson_levenshtein: Option<F>,
    pub per_edit: Vec<EditSummary<F>>,
}

pub fn summarize<F: Real>(rows: &[TrialRow]) -> CorrelationSummary<F> {
    let count = |v: u64| F::from_count(v);
    let edits: Vec<F> = rows.iter().map(|r| count(r.edits as u64)).collect();
    let lev: Vec<F> = rows.iter().map(|r| count(r.levenshtein as u64)).collect();
    let ham: Vec<F> = rows.iter().map(|r| count(r.bloom_hamming)).collect();
    let mut grid: Vec<usize> = rows.iter().map(|r| r.edits).collect();
    grid.sort_unstable();
    grid.dedup();
    let per_edit = grid
        .into_iter()
        .map(|e| {
            let group: Vec<&TrialRow> = rows.iter().filter(|r| r.edits == e).collect();
            let h: Vec<F> = group.iter().map(|r| count(r.bloom_hamming)).collect();
            let l: Vec<F> = group.iter().map(|r| count(r.levenshtein as u64)).collect();
            let (mean_hamming, var_hamming) = mean_variance(&h);
            let matched = group.iter().filter(|r| r.matched).count() as u64;
            EditSummary {
                edits: e,
                trials: group.len(),
                mean_hamming,
                var_hamming,
                mean_levenshtein: mean_variance(&l).0,
                match_rate: count(matched) / count(group.len() as u64),
            }
        })
        .collect();
    CorrelationSummary {
        trials: rows.len(),
        pearson_edits: pearson(&edits, &ham),
        pearson_levenshtein: pearson(&lev, &ham),
        per_edit,
    }
}

/// Grid of sequence lengths and per-run settings for timed protocol runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolBenchConfig {
    pub lengths: Vec<usize>,
    pub e_max: u64,
    /// Substitutions applied to the client copy of the reference.
    pub client_edits: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolBenchRow {
    pub length: usize,
    pub trial: usize,
    pub filter_bits: u64,
    pub t_max: u64,
    pub ciphertext_width: usize,
    pub query_ciphertexts: usize,
    pub response_ciphertexts: usize,
    pub client_to_server_bytes: usize,
    pub server_to_client_bytes: usize,
    pub encrypt: Duration,
    pub transfer: Duration,
    pub decrypt: Duration,
    pub server: Duration,
    pub matched: bool,
    pub plaintext_distance: u64,
}

pub const PROTOCOL_CSV_HEADER: [&str; 15] = [
    "length",
    "trial",
    "filter_bits",
    "t_max",
    "ciphertext_width",
    "query_ciphertexts",
    "response_ciphertexts",
    "client_to_server_bytes",
    "server_to_client_bytes",
    "encrypt_s",
    "transfer_s",
    "decrypt_s",
    "server_s",
    "matched",
    "plaintext_distance",
];

pub fn write_protocol_csv<W: Write>(rows: &[ProtocolBenchRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROTOCOL_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.length.to_string(),
            r.trial.to_string(),
            r.filter_bits.to_string(),
            r.t_max.to_string(),
            r.ciphertext_width.to_string(),
            r.query_ciphertexts.to_string(),
            r.response_ciphertexts.to_string(),
            r.client_to_server_bytes.to_string(),
            r.server_to_client_bytes.to_string(),
            format!("{:.6}", r.encrypt.as_secs_f64()),
            format!("{:.6}", r.transfer.as_secs_f64()),
            format!("{:.6}", r.decrypt.as_secs_f64()),
            format!("{:.6}", r.server.as_secs_f64()),
            r.matched.to_string(),
            r.plaintext_distance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One loopback TCP session between a fresh server thread and the calling client.
pub fn loopback_run<R: RngCore + CryptoRng>(
    client_seq: &[u8],
    server_seq: &[u8],
    dict: &GramDictionary,
    params: &ProtocolParams,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<(crate::net::QueryReport, Duration), BenchError> {
    let ctx = ServerContext::new(server_seq, dict, params.clone())?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let mut server_rng = rand_chacha::ChaCha20Rng::from_rng(&mut *rng).expect("rng");
    let server = thread::spawn(move || {
        let (mut stream, _) = listener.accept()?;
        let start = Instant::now();
        let outcome = handle_session(&mut stream, &ctx, &mut server_rng);
        Ok::<_, std::io::Error>((outcome, start.elapsed()))
    });
    let timeout = Some(Duration::from_secs(600));
    let report = run_query(addr, client_seq, dict, params, sk, rng, timeout, VerdictMode::default());
    let (outcome, server_time) = server.join().expect("server thread")?;
    if !outcome.is_responded() {
        return Err(BenchError::Session(outcome));
    }
    Ok((report?, server_time))
}

/// Timed end-to-end runs over loopback for each sequence length.
pub fn bench_protocol<R: RngCore + CryptoRng>(
    cfg: &ProtocolBenchConfig,
    sk: &SecretKey,
    rng: &mut R,
) -> Result<Vec<ProtocolBenchRow>, BenchError> {
    let width = sk.public().ciphertext_width();
    let mut rows = Vec::new();
    for (li, &length) in cfg.lengths.iter().enumerate() {
        let inst = build_instance(&InstanceConfig::desk(
            length,
            cfg.e_max,
            trial_seed(cfg.seed, li),
        ))?;
        for trial in 0..cfg.trials {
            let client = mutate(
                &inst.reference,
                cfg.client_edits,
                EditMix::SUBSTITUTION_ONLY,
                DNA,
                trial_seed(cfg.seed ^ 0x5EED, li * cfg.trials + trial),
            )?;
            let (d, _) = plaintext_match(&client, &inst.reference, &inst.dict, &inst.params)?;
            let (report, server) =
                loopback_run(&client, &inst.reference, &inst.dict, &inst.params, sk, rng)?;
            rows.push(ProtocolBenchRow {
                length,
                trial,
                filter_bits: inst.params.bloom().length_bits(),
                t_max: inst.params.t_max(),
                ciphertext_width: width,
                query_ciphertexts: report.query_ciphertexts,
                response_ciphertexts: report.response_ciphertexts,
                client_to_server_bytes: report.bytes_sent,
                server_to_client_bytes: report.bytes_received,
                encrypt: report.encrypt,
                transfer: report.transfer,
                decrypt: report.decrypt,
                server,
                matched: report.verdict.matched,
                plaintext_distance: d,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&xs, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0f64).abs() < 1e-12);
        assert!((pearson(&xs, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0f64).abs() < 1e-12);
        assert_eq!(pearson(&xs, &[1.0, 1.0, 1.0, 1.0]), None);
        assert_eq!(pearson::<f64>(&[1.0], &[1.0]), None);
    }

    #[test]
    fn mean_variance_examples() {
        assert_eq!(mean_variance(&[2.0f64, 4.0, 6.0]), (4.0, 4.0));
        assert_eq!(mean_variance(&[5.0f32]), (5.0, 0.0));
    }

    #[test]
    fn grid() {
        assert_eq!(default_edit_grid(), vec![1, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50]);
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![
            TrialRow {
                edits: 0,
                levenshtein: 0,
                bloom_hamming: 0,
                matched: true,
                seed: 9,
            },
            TrialRow {
                edits: 5,
                levenshtein: 4,
                bloom_hamming: 311,
                matched: false,
                seed: u64::MAX,
            },
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("edits,levenshtein,bloom_hamming,matched,seed\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn zero_edit_rows_have_zero_distance() {
        let inst = build_instance(&InstanceConfig::desk(300, 1, 3)).unwrap();
        let recs =
            bench_correlation(&inst.reference, &inst.dict, &inst.params, 10, &[0], EditMix::SUBSTITUTION_ONLY, 1)
                .unwrap();
        assert!(recs.iter().all(|r| r.bloom_hamming == 0 && r.matched));
        let s: CorrelationSummary<f64> = summarize(&recs.iter().map(TrialRow::from).collect::<Vec<_>>());
        assert_eq!(s.per_edit.len(), 1);
        assert_eq!(s.per_edit[0].mean_hamming, 0.0);
    }
}
