mod common;

use std::collections::HashMap;

use num_bigint::BigUint;
use num_traits::Zero;
use ppsm::bloom::BloomFilter;
use ppsm::protocol::{
    client_prepare_filter, encrypted_distance, encrypted_intersection, server_eval_filter,
    shuffle_response, MatchQuery,
};
use ppsm::{client_prepare, client_verdict, plaintext_match, server_eval, SecretKey, VerdictMode};
use proptest::prelude::*;

/// Server-side `E(d)` recomputed from a query, decrypted with the test key.
fn debug_distance(q: &MatchQuery, server: &BloomFilter, sk: &SecretKey) -> u64 {
    let mut rng = common::rng(0);
    let i = encrypted_intersection(&q.pk, &q.filter.cells, server, &mut rng).unwrap();
    let d = encrypted_distance(&q.pk, &q.filter.enc_cardinality, server.cardinality(), &i, &mut rng)
        .unwrap();
    u64::try_from(sk.decrypt(&d).unwrap()).unwrap()
}

fn zero_positions(sk: &SecretKey, masked: &[ppsm::Ciphertext]) -> Vec<usize> {
    masked
        .iter()
        .enumerate()
        .filter(|(_, c)| sk.decrypt(c).unwrap().is_zero())
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn toy_sweep_exactly_one_zero_iff_within_threshold() {
    let sk = common::toy_key();
    let params = common::toy_params(32, 5);
    let mut rng = common::rng(3);
    for base in [vec![], vec![0, 1, 2, 3], vec![5, 9, 17, 30, 31], (0..32).step_by(2).collect()] {
        let client = common::filter(&params, base.iter().copied());
        let (q, state) = client_prepare_filter(&client, &params, sk, &mut rng).unwrap();
        for d in 0..=8u64 {
            let flipped: Vec<u64> = (0..32)
                .filter(|i| base.contains(i) != (*i < d))
                .collect();
            let server = common::filter(&params, flipped);
            assert_eq!(client.distance(&server).unwrap(), d);
            assert_eq!(debug_distance(&q, &server, sk), d);
            let resp = server_eval_filter(&q, &server, &mut rng).unwrap();
            assert_eq!(resp.masked.len(), 6);
            let zeros = zero_positions(sk, &resp.masked);
            assert_eq!(zeros.len(), usize::from(d <= 5), "d = {d}");
            let v = client_verdict(&resp, &state, VerdictMode::FullScan).unwrap();
            assert_eq!(v.matched, d <= 5);
            assert_eq!(v.decryptions, 6);
            let early = client_verdict(&resp, &state, VerdictMode::EarlyExit).unwrap();
            assert_eq!(early.matched, d <= 5);
        }
    }
}

#[test]
fn every_pair_of_short_strings_agrees_with_plaintext() {
    let sk = common::toy_key();
    let dict = common::toy_dict();
    let params = common::toy_params(64, 3);
    let strings = common::all_strings(b"ACGT", 2);
    let mut rng = common::rng(4);
    let mut seen_match = [false; 2];
    for a in &strings {
        let (q, state) = client_prepare(a, &dict, &params, sk, &mut rng).unwrap();
        for b in &strings {
            let (d, matched) = plaintext_match(a, b, &dict, &params).unwrap();
            let server = ppsm::protocol::build_filter(b, &dict, &params).unwrap();
            assert_eq!(debug_distance(&q, &server, sk), d);
            let resp = server_eval(&q, b, &dict, &params, &mut rng).unwrap();
            assert_eq!(resp.masked.len() as u64, params.t_max() + 1);
            let v = client_verdict(&resp, &state, VerdictMode::FullScan).unwrap();
            assert_eq!(v.matched, matched, "{:?} vs {:?}, d = {d}", a, b);
            seen_match[matched as usize] = true;
        }
    }
    assert!(seen_match[0] && seen_match[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_toy_pairs_agree_with_plaintext(
        a in prop::collection::vec(prop::sample::select(b"ACGT".to_vec()), 1..=12),
        b in prop::collection::vec(prop::sample::select(b"ACGT".to_vec()), 1..=12),
        t_max in 0u64..8,
        seed in any::<u64>(),
    ) {
        let sk = common::toy_key();
        let dict = common::toy_dict();
        let params = common::toy_params(64, t_max);
        let mut rng = common::rng(seed);
        let (d, matched) = plaintext_match(&a, &b, &dict, &params).unwrap();
        let (q, state) = client_prepare(&a, &dict, &params, sk, &mut rng).unwrap();
        let server = ppsm::protocol::build_filter(&b, &dict, &params).unwrap();
        prop_assert_eq!(debug_distance(&q, &server, sk), d);
        let resp = server_eval(&q, &b, &dict, &params, &mut rng).unwrap();
        prop_assert_eq!(resp.masked.len() as u64, t_max + 1);
        let zeros = zero_positions(sk, &resp.masked).len();
        prop_assert_eq!(zeros, usize::from(matched));
        prop_assert_eq!(client_verdict(&resp, &state, VerdictMode::FullScan).unwrap().matched, matched);
    }
}

#[test]
fn response_size_is_fixed_for_identical_and_disjoint_inputs() {
    let sk = common::toy_key();
    let params = common::toy_params(32, 4);
    let mut rng = common::rng(5);
    let empty = common::filter(&params, []);
    let full = common::filter(&params, 0..32);
    for (c, s) in [(&empty, &empty), (&full, &full), (&empty, &full), (&full, &empty)] {
        let (q, _) = client_prepare_filter(c, &params, sk, &mut rng).unwrap();
        assert_eq!(server_eval_filter(&q, s, &mut rng).unwrap().masked.len(), 5);
    }
}

/// Chi-square statistic against the uniform distribution over `cells` outcomes.
fn chi_square(counts: &HashMap<Vec<usize>, usize>, cells: usize, n: usize) -> f64 {
    let expected = n as f64 / cells as f64;
    let observed: f64 = counts
        .values()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    // Unobserved cells contribute `expected` each.
    observed + (cells - counts.len()) as f64 * expected
}

#[test]
fn shuffle_covers_every_permutation() {
    let mut rng = common::rng(6);
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..1000 {
        let mut v = vec![0usize, 1, 2];
        shuffle_response(&mut v, &mut rng);
        *counts.entry(v).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    // Critical value for 5 degrees of freedom at alpha = 0.001.
    assert!(chi_square(&counts, 6, 1000) < 20.515);
}

#[test]
fn server_zero_position_is_uniform() {
    let sk = common::toy_key();
    let params = common::toy_params(32, 2);
    let mut rng = common::rng(7);
    let client = common::filter(&params, [1, 2, 3]);
    let server = common::filter(&params, [1, 2]);
    let (q, _) = client_prepare_filter(&client, &params, sk, &mut rng).unwrap();
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..1000 {
        let resp = server_eval_filter(&q, &server, &mut rng).unwrap();
        let zeros = zero_positions(sk, &resp.masked);
        assert_eq!(zeros.len(), 1);
        *counts.entry(zeros).or_default() += 1;
    }
    assert_eq!(counts.len(), 3);
    // 2 degrees of freedom, alpha = 0.001.
    assert!(chi_square(&counts, 3, 1000) < 13.816);
}

#[test]
fn masked_nonzero_differences_stay_nonzero() {
    let sk = common::toy_key();
    let params = common::toy_params(32, 3);
    let mut rng = common::rng(8);
    let client = common::filter(&params, 0..10);
    let server = common::filter(&params, 20..30);
    let (q, _) = client_prepare_filter(&client, &params, sk, &mut rng).unwrap();
    for _ in 0..50 {
        let resp = server_eval_filter(&q, &server, &mut rng).unwrap();
        for c in &resp.masked {
            assert_ne!(sk.decrypt(c).unwrap(), BigUint::zero());
        }
    }
}
