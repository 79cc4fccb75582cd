use std::collections::BTreeSet;

use ppsm::gram::{build_dictionary, encode_gram, extend, nag, segment, GramConfig};
use proptest::prelude::*;

fn dna(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::sample::select(b"ACGT".to_vec()), len)
}

fn config() -> impl Strategy<Value = GramConfig> {
    (1usize..4, 0usize..5, any::<bool>())
        .prop_map(|(q_min, extra, positional)| GramConfig::new(q_min, q_min + extra, positional).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segmentation_is_deterministic(
        corpus in prop::collection::vec(dna(1..40), 1..4),
        s in dna(1..60),
        cfg in config(),
    ) {
        let d1 = build_dictionary(&corpus, cfg, 1).unwrap();
        let d2 = build_dictionary(&corpus, cfg, 1).unwrap();
        prop_assert_eq!(d1.to_bytes().unwrap(), d2.to_bytes().unwrap());
        prop_assert_eq!(segment(&s, &d1).unwrap(), segment(&s, &d2).unwrap());
    }

    #[test]
    fn gram_count_is_bounded_by_window_count(
        corpus in prop::collection::vec(dna(1..40), 1..4),
        s in dna(1..80),
        cfg in config(),
        threshold in 1u64..3,
    ) {
        let dict = build_dictionary(&corpus, cfg, threshold).unwrap();
        let ext = extend(&s, &cfg).unwrap();
        let n_v = segment(&s, &dict).unwrap().n_v();
        prop_assert!(n_v <= ext.len() + 1 - cfg.q_min());
    }

    #[test]
    fn one_substitution_changes_at_most_two_nag_elements(
        corpus in prop::collection::vec(dna(5..60), 1..4),
        s in dna(1..80),
        at in any::<prop::sample::Index>(),
        shift in 1u8..4,
        cfg in config(),
    ) {
        let cfg = GramConfig::new(cfg.q_min(), cfg.q_max(), true).unwrap();
        let dict = build_dictionary(&corpus, cfg, 1).unwrap();
        let mut t = s.clone();
        let i = at.index(t.len());
        let alphabet = b"ACGT";
        let cur = alphabet.iter().position(|&c| c == t[i]).unwrap();
        t[i] = alphabet[(cur + shift as usize) % 4];
        let a = segment(&s, &dict).unwrap();
        let b = segment(&t, &dict).unwrap();
        let diff = a.elements().symmetric_difference(b.elements()).count() as u64;
        prop_assert!(diff <= 2 * nag(s.len(), 1, &dict), "diff {diff}");
    }

    #[test]
    fn positional_encoding_is_injective(
        pairs in prop::collection::vec((1usize..300, dna(1..6)), 1..40),
    ) {
        let distinct: BTreeSet<(usize, Vec<u8>)> = pairs.iter().cloned().collect();
        let encoded: BTreeSet<Vec<u8>> = distinct
            .iter()
            .map(|(p, g)| encode_gram(*p, g, true).unwrap())
            .collect();
        prop_assert_eq!(encoded.len(), distinct.len());
    }

    #[test]
    fn corpus_order_does_not_matter(
        corpus in prop::collection::vec(dna(1..30), 1..6),
        cfg in config(),
        threshold in 1u64..3,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = build_dictionary(&corpus, cfg, threshold).unwrap();
        let b = build_dictionary(&shuffled, cfg, threshold).unwrap();
        prop_assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        prop_assert_eq!(a.digest(), b.digest());
    }
}

#[test]
fn dictionary_digest_is_stable_across_runs() {
    let cfg = GramConfig::new(2, 5, true).unwrap();
    let corpus = ["ACGTACGGTCA", "TTGACCA"];
    let digests: BTreeSet<[u8; 32]> = (0..5)
        .map(|_| build_dictionary(corpus, cfg, 1).unwrap().digest())
        .collect();
    assert_eq!(digests.len(), 1);
}
