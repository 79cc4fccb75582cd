//! Variable-length gram segmentation driven by a corpus-trained gram dictionary.
//!
//! Strings are padded with `q_min - 1` head/tail symbols, then segmented by taking, at every
//! start position, the longest dictionary gram that begins there (falling back to the raw
//! `q_min`-gram). Selected grams are optionally tagged with their 1-based start position.

use std::collections::BTreeSet;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};

pub const DEFAULT_PAD_HEAD: u8 = b'#';
pub const DEFAULT_PAD_TAIL: u8 = b'$';
/// Separates the decimal position from the gram bytes in positional encodings.
pub const SEPARATOR: u8 = b'|';

const DICT_MAGIC: &[u8; 4] = b"PPGD";
const DICT_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GramError {
    #[error("invalid gram configuration: {0}")]
    InvalidConfig(String),
    #[error("input string is empty")]
    EmptyInput,
    #[error("input contains pad symbol {symbol:?} at offset {offset}")]
    PadSymbolInInput { symbol: char, offset: usize },
    #[error("input contains the separator symbol '|' at offset {0}")]
    SeparatorInInput(usize),
    #[error("gram contains the separator byte 0x7C")]
    SeparatorInGram,
    #[error("corpus yielded no strings")]
    EmptyCorpus,
    #[error("dictionary file format v{DICT_VERSION} only stores the default pad symbols")]
    UnsupportedPadding,
    #[error("malformed dictionary: {0}")]
    Decode(#[from] DecodeError),
}

/// Gram length range, positional flag and padding symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GramConfig {
    q_min: u8,
    q_max: u8,
    positional: bool,
    pad_head: u8,
    pad_tail: u8,
}

impl GramConfig {
    pub fn new(q_min: usize, q_max: usize, positional: bool) -> Result<Self, GramError> {
        Self::with_padding(q_min, q_max, positional, DEFAULT_PAD_HEAD, DEFAULT_PAD_TAIL)
    }

    pub fn with_padding(
        q_min: usize,
        q_max: usize,
        positional: bool,
        pad_head: u8,
        pad_tail: u8,
    ) -> Result<Self, GramError> {
        if q_min < 1 || q_min > q_max {
            return Err(GramError::InvalidConfig(format!(
                "need 1 <= q_min <= q_max, got q_min={q_min} q_max={q_max}"
            )));
        }
        if q_max > u8::MAX as usize {
            return Err(GramError::InvalidConfig(format!("q_max={q_max} exceeds 255")));
        }
        if pad_head == pad_tail {
            return Err(GramError::InvalidConfig("pad symbols must differ".into()));
        }
        if pad_head == SEPARATOR || pad_tail == SEPARATOR {
            return Err(GramError::InvalidConfig("pad symbol collides with separator".into()));
        }
        Ok(GramConfig {
            q_min: q_min as u8,
            q_max: q_max as u8,
            positional,
            pad_head,
            pad_tail,
        })
    }

    pub fn q_min(&self) -> usize {
        self.q_min as usize
    }

    pub fn q_max(&self) -> usize {
        self.q_max as usize
    }

    pub fn positional(&self) -> bool {
        self.positional
    }

    pub fn pad_head(&self) -> u8 {
        self.pad_head
    }

    pub fn pad_tail(&self) -> u8 {
        self.pad_tail
    }

    fn has_default_padding(&self) -> bool {
        self.pad_head == DEFAULT_PAD_HEAD && self.pad_tail == DEFAULT_PAD_TAIL
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u8(self.q_min)
            .u8(self.q_max)
            .u8(self.positional as u8)
            .u8(self.pad_head)
            .u8(self.pad_tail);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let q_min = r.u8()? as usize;
        let q_max = r.u8()? as usize;
        let positional = r.bool("positional")?;
        let head = r.u8()?;
        let tail = r.u8()?;
        Self::with_padding(q_min, q_max, positional, head, tail)
            .map_err(|e| DecodeError::invalid("gram_config", e.to_string()))
    }
}

/// Pads `s` with `q_min - 1` head and tail symbols.
pub fn extend(s: &[u8], cfg: &GramConfig) -> Result<Vec<u8>, GramError> {
    if s.is_empty() {
        return Err(GramError::EmptyInput);
    }
    if let Some((offset, &b)) = s
        .iter()
        .enumerate()
        .find(|(_, &b)| b == cfg.pad_head || b == cfg.pad_tail || b == SEPARATOR)
    {
        return Err(if b == SEPARATOR {
            GramError::SeparatorInInput(offset)
        } else {
            GramError::PadSymbolInInput {
                symbol: b as char,
                offset,
            }
        });
    }
    let pad = cfg.q_min() - 1;
    let mut out = Vec::with_capacity(s.len() + 2 * pad);
    out.extend(std::iter::repeat_n(cfg.pad_head, pad));
    out.extend_from_slice(s);
    out.extend(std::iter::repeat_n(cfg.pad_tail, pad));
    Ok(out)
}

/// `position|gram` when positional, the bare gram otherwise.
pub fn encode_gram(position: usize, gram: &[u8], positional: bool) -> Result<Vec<u8>, GramError> {
    if gram.contains(&SEPARATOR) {
        return Err(GramError::SeparatorInGram);
    }
    if !positional {
        return Ok(gram.to_vec());
    }
    let mut out = position.to_string().into_bytes();
    out.push(SEPARATOR);
    out.extend_from_slice(gram);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    // Sorted by byte.
    children: Vec<(u8, u32)>,
    count: u64,
}

impl Node {
    fn empty() -> Self {
        Node {
            children: Vec::new(),
            count: 0,
        }
    }

    fn child(&self, b: u8) -> Option<u32> {
        self.children
            .binary_search_by_key(&b, |&(k, _)| k)
            .ok()
            .map(|i| self.children[i].1)
    }
}

/// Arena trie. Node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Trie {
    nodes: Vec<Node>,
}

impl Trie {
    fn new() -> Self {
        Trie {
            nodes: vec![Node::empty()],
        }
    }

    fn child_or_insert(&mut self, at: u32, b: u8) -> u32 {
        let node = &self.nodes[at as usize];
        match node.children.binary_search_by_key(&b, |&(k, _)| k) {
            Ok(i) => node.children[i].1,
            Err(i) => {
                let id = self.nodes.len() as u32;
                self.nodes.push(Node::empty());
                self.nodes[at as usize].children.insert(i, (b, id));
                id
            }
        }
    }

    fn insert(&mut self, gram: &[u8], count: u64) {
        let mut at = 0;
        for &b in gram {
            at = self.child_or_insert(at, b);
        }
        self.nodes[at as usize].count = count;
    }

    fn find(&self, gram: &[u8]) -> Option<u32> {
        let mut at = 0u32;
        for &b in gram {
            at = self.nodes[at as usize].child(b)?;
        }
        Some(at)
    }

    /// Pre-order walk in byte order, which is lexicographic order of the paths.
    fn walk(&self, mut visit: impl FnMut(&[u8], &Node)) {
        let mut path = Vec::new();
        let mut stack: Vec<(u32, usize)> = vec![(0, 0)];
        while let Some((id, child_idx)) = stack.pop() {
            let node = &self.nodes[id as usize];
            if child_idx == 0 && id != 0 {
                visit(&path, node);
            }
            if child_idx < node.children.len() {
                let (b, child) = node.children[child_idx];
                stack.push((id, child_idx + 1));
                path.push(b);
                stack.push((child, 0));
            } else if id != 0 {
                path.pop();
            }
        }
    }
}

/// Corpus-trained dictionary of variable-length grams with occurrence counts.
///
/// Every stored gram has length in `[q_min, q_max]`, and every stored gram longer than
/// `q_min` has its one-shorter prefix stored too.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GramDictionary {
    config: GramConfig,
    trie: Trie,
    corpus_digest: [u8; 32],
    version: u16,
}

impl GramDictionary {
    pub fn config(&self) -> &GramConfig {
        &self.config
    }

    pub fn corpus_digest(&self) -> &[u8; 32] {
        &self.corpus_digest
    }

    pub fn version(&self) -> u16 {
        self.version
    }

    /// Occurrence count of a stored gram.
    pub fn count(&self, gram: &[u8]) -> Option<u64> {
        if gram.len() < self.config.q_min() || gram.len() > self.config.q_max() {
            return None;
        }
        self.trie.find(gram).map(|id| self.trie.nodes[id as usize].count)
    }

    pub fn contains(&self, gram: &[u8]) -> bool {
        self.count(gram).is_some()
    }

    /// All stored grams in lexicographic byte order.
    pub fn entries(&self) -> Vec<(Vec<u8>, u64)> {
        let q_min = self.config.q_min();
        let mut out = Vec::new();
        self.trie.walk(|path, node| {
            if path.len() >= q_min {
                out.push((path.to_vec(), node.count));
            }
        });
        out
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.trie.nodes.len() == 1
    }

    /// Length of the longest stored gram that is a prefix of `window`.
    fn longest_match(&self, window: &[u8]) -> Option<usize> {
        let q_min = self.config.q_min();
        let mut at = 0u32;
        let mut best = None;
        for (depth, &b) in window.iter().take(self.config.q_max()).enumerate() {
            match self.trie.nodes[at as usize].child(b) {
                Some(next) => at = next,
                None => break,
            }
            if depth + 1 >= q_min {
                best = Some(depth + 1);
            }
        }
        best
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, GramError> {
        if !self.config.has_default_padding() {
            return Err(GramError::UnsupportedPadding);
        }
        let entries = self.entries();
        let mut w = Writer::new();
        w.bytes(DICT_MAGIC)
            .u16(self.version)
            .u8(self.config.q_min)
            .u8(self.config.q_max)
            .u8(self.config.positional as u8)
            .bytes(&self.corpus_digest)
            .u64(entries.len() as u64);
        for (gram, count) in &entries {
            w.u16(gram.len() as u16).bytes(gram).u64(*count);
        }
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GramError> {
        let mut r = Reader::new(bytes);
        r.magic(DICT_MAGIC)?;
        let version = r.version(DICT_VERSION)?;
        let q_min = r.u8()? as usize;
        let q_max = r.u8()? as usize;
        let positional = r.bool("positional")?;
        let config = GramConfig::new(q_min, q_max, positional)
            .map_err(|e| DecodeError::invalid("config", e.to_string()))?;
        let corpus_digest = r.array::<32>()?;
        let n = r.u64()?;
        let mut trie = Trie::new();
        let mut prev: Option<&[u8]> = None;
        for _ in 0..n {
            let len = r.u16()? as usize;
            let gram = r.take(len)?;
            let count = r.u64()?;
            if len < q_min || len > q_max {
                return Err(DecodeError::invalid("entry", "gram length outside [q_min, q_max]").into());
            }
            if prev.is_some_and(|p| p >= gram) {
                return Err(DecodeError::invalid("entry", "entries not strictly sorted").into());
            }
            if count == 0 {
                return Err(DecodeError::invalid("entry", "zero count").into());
            }
            let parent = trie.find(&gram[..len - 1]).map(|id| trie.nodes[id as usize].count);
            if len > q_min && !parent.is_some_and(|c| c > 0) {
                return Err(DecodeError::invalid("entry", "prefix closure violated").into());
            }
            trie.insert(gram, count);
            prev = Some(gram);
        }
        r.finish()?;
        Ok(GramDictionary {
            config,
            trie,
            corpus_digest,
            version,
        })
    }

    /// SHA-256 of the serialized dictionary; both protocol parties must agree on it.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        match self.to_bytes() {
            Ok(bytes) => h.update(&bytes),
            Err(_) => {
                // Custom padding: hash the canonical content plus the pad symbols.
                h.update(b"PPGD-custom-padding");
                let mut w = Writer::new();
                self.config.encode(&mut w);
                h.update(w.into_bytes());
                h.update(self.corpus_digest);
                for (gram, count) in self.entries() {
                    h.update((gram.len() as u16).to_be_bytes());
                    h.update(&gram);
                    h.update(count.to_be_bytes());
                }
            }
        }
        h.finalize().into()
    }
}

/// Counts every substring of length `[q_min, q_max]` of every padded corpus string, drops
/// grams seen fewer than `prune_threshold` times, then restores prefix closure.
pub fn build_dictionary<I, S>(
    corpus: I,
    cfg: GramConfig,
    prune_threshold: u64,
) -> Result<GramDictionary, GramError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let prune_threshold = prune_threshold.max(1);
    let q_max = cfg.q_max();
    let mut raw = Trie::new();
    let mut string_digests: Vec<[u8; 32]> = Vec::new();
    for s in corpus {
        let s = s.as_ref();
        let ext = extend(s, &cfg)?;
        string_digests.push(Sha256::digest(s).into());
        for start in 0..ext.len() {
            let mut at = 0;
            for &b in ext[start..].iter().take(q_max) {
                at = raw.child_or_insert(at, b);
                raw.nodes[at as usize].count += 1;
            }
        }
    }
    if string_digests.is_empty() {
        return Err(GramError::EmptyCorpus);
    }
    string_digests.sort_unstable();
    let mut h = Sha256::new();
    for d in &string_digests {
        h.update(d);
    }
    let corpus_digest: [u8; 32] = h.finalize().into();

    let trie = prune(&raw, cfg.q_min(), prune_threshold);
    Ok(GramDictionary {
        config: cfg,
        trie,
        corpus_digest,
        version: DICT_VERSION,
    })
}

/// Canonical rebuild keeping grams with `count >= threshold` whose prefix chain down to
/// `q_min` survives.
fn prune(raw: &Trie, q_min: usize, threshold: u64) -> Trie {
    let mut trie = Trie::new();
    // kept[d] tells whether the most recently visited gram of length d survived.
    let mut kept = vec![false; 256];
    raw.walk(|path, node| {
        let d = path.len();
        if d < q_min {
            return;
        }
        let ok = node.count >= threshold && (d == q_min || kept[d - 1]);
        kept[d] = ok;
        if ok {
            trie.insert(path, node.count);
        }
    });
    trie
}

/// Set of encoded grams produced for one string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GramSet {
    elements: BTreeSet<Vec<u8>>,
}

impl GramSet {
    pub fn elements(&self) -> &BTreeSet<Vec<u8>> {
        &self.elements
    }

    /// Number of distinct grams.
    pub fn n_v(&self) -> usize {
        self.elements.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.elements.iter().map(Vec::as_slice)
    }
}

/// Greedy longest-match selections as `(1-based position, gram)` over the padded string.
pub fn selections<'a>(
    ext: &'a [u8],
    dict: &GramDictionary,
) -> impl Iterator<Item = (usize, &'a [u8])> + 'a {
    let q_min = dict.config.q_min();
    let last = ext.len().saturating_sub(q_min - 1);
    let lengths: Vec<usize> = (0..last)
        .map(|i| dict.longest_match(&ext[i..]).unwrap_or(q_min))
        .collect();
    lengths
        .into_iter()
        .enumerate()
        .map(move |(i, len)| (i + 1, &ext[i..i + len]))
}

pub fn segment(s: &[u8], dict: &GramDictionary) -> Result<GramSet, GramError> {
    let cfg = dict.config();
    let ext = extend(s, cfg)?;
    let mut elements = BTreeSet::new();
    for (pos, gram) in selections(&ext, dict) {
        elements.insert(encode_gram(pos, gram, cfg.positional())?);
    }
    Ok(GramSet { elements })
}

/// Upper bound on the number of grams of a segmentation changed by `e` edit operations.
pub trait NagBound {
    fn nag(&self, len: usize, e: u64) -> u64;
}

/// `e * (2 * q_max - 1)`: one edit touches every window covering the edited character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConservativeNag {
    pub q_max: usize,
}

impl NagBound for ConservativeNag {
    fn nag(&self, _len: usize, e: u64) -> u64 {
        e.saturating_mul(2 * self.q_max as u64 - 1)
    }
}

pub fn nag(len: usize, e: u64, dict: &GramDictionary) -> u64 {
    ConservativeNag {
        q_max: dict.config().q_max(),
    }
    .nag(len, e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(q_min: usize, q_max: usize, positional: bool) -> GramConfig {
        GramConfig::new(q_min, q_max, positional).unwrap()
    }

    #[test]
    fn extend_pads_q_min_minus_one() {
        assert_eq!(extend(b"ACGT", &cfg(2, 4, true)).unwrap(), b"#ACGT$");
        assert_eq!(extend(b"A", &cfg(3, 4, true)).unwrap(), b"##A$$");
        assert_eq!(extend(b"ACGT", &cfg(1, 4, true)).unwrap(), b"ACGT");
    }

    #[test]
    fn extend_rejects_reserved_symbols() {
        let c = cfg(2, 4, true);
        assert_eq!(extend(b"", &c), Err(GramError::EmptyInput));
        assert_eq!(
            extend(b"AC#", &c),
            Err(GramError::PadSymbolInInput {
                symbol: '#',
                offset: 2
            })
        );
        assert!(matches!(extend(b"$", &c), Err(GramError::PadSymbolInInput { .. })));
        assert_eq!(extend(b"A|C", &c), Err(GramError::SeparatorInInput(1)));
    }

    #[test]
    fn config_invariants() {
        assert!(GramConfig::new(0, 3, true).is_err());
        assert!(GramConfig::new(3, 2, true).is_err());
        assert!(GramConfig::new(1, 256, true).is_err());
        assert!(GramConfig::with_padding(1, 2, true, b'#', b'#').is_err());
    }

    #[test]
    fn encode_gram_forms() {
        assert_eq!(encode_gram(3, b"AC", true).unwrap(), b"3|AC");
        assert_eq!(encode_gram(3, b"AC", false).unwrap(), b"AC");
        assert_eq!(encode_gram(12, b"#A", true).unwrap(), b"12|#A");
        assert_eq!(encode_gram(1, b"A|", true), Err(GramError::SeparatorInGram));
    }

    #[test]
    fn dictionary_counts_substrings() {
        let d = build_dictionary(["AAAA"], cfg(1, 2, true), 1).unwrap();
        assert_eq!(d.entries(), vec![(b"A".to_vec(), 4), (b"AA".to_vec(), 3)]);
    }

    #[test]
    fn dictionary_prunes_everything_below_threshold() {
        let d = build_dictionary(["AB"], cfg(1, 2, true), 2).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.len(), 0);
    }

    #[test]
    fn identical_corpus_strings_survive_their_threshold() {
        let corpus = vec!["ACGT"; 100];
        let d = build_dictionary(&corpus, cfg(1, 4, true), 100).unwrap();
        for i in 0..4 {
            for j in i + 1..=4 {
                assert!(d.contains(&b"ACGT"[i..j]), "{:?}", &b"ACGT"[i..j]);
            }
        }
        assert_eq!(d.count(b"ACGT"), Some(100));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let none: Vec<&str> = vec![];
        assert_eq!(build_dictionary(none, cfg(1, 2, true), 1), Err(GramError::EmptyCorpus));
    }

    #[test]
    fn prefix_closure_restored_after_pruning() {
        let d = build_dictionary(["ACACAC", "ACAC", "GT"], cfg(2, 3, false), 2).unwrap();
        for (gram, count) in d.entries() {
            assert!(count >= 2);
            if gram.len() > 2 {
                assert!(d.contains(&gram[..gram.len() - 1]));
            }
        }
        assert!(!d.contains(b"GT"));
    }

    #[test]
    fn segment_greedy_longest_match() {
        let non_pos = build_dictionary(["AAAA"], cfg(1, 2, false), 1).unwrap();
        let g = segment(b"AAAA", &non_pos).unwrap();
        let want: BTreeSet<Vec<u8>> = [b"AA".to_vec(), b"A".to_vec()].into();
        assert_eq!(g.elements(), &want);
        assert_eq!(g.n_v(), 2);

        let pos = build_dictionary(["AAAA"], cfg(1, 2, true), 1).unwrap();
        let g = segment(b"AAAA", &pos).unwrap();
        let want: BTreeSet<Vec<u8>> = ["1|AA", "2|AA", "3|AA", "4|A"]
            .iter()
            .map(|s| s.as_bytes().to_vec())
            .collect();
        assert_eq!(g.elements(), &want);
        assert_eq!(g.n_v(), 4);
    }

    #[test]
    fn segment_falls_back_to_raw_gram() {
        let empty = build_dictionary(["AB"], cfg(1, 2, false), 2).unwrap();
        let g = segment(b"G", &empty).unwrap();
        assert_eq!(g.elements(), &BTreeSet::from([b"G".to_vec()]));
        assert_eq!(segment(b"", &empty), Err(GramError::EmptyInput));
    }

    #[test]
    fn nag_closed_form() {
        let d40 = build_dictionary(["ACGT"], cfg(2, 40, true), 1).unwrap();
        assert_eq!(nag(100, 0, &d40), 0);
        assert_eq!(nag(100, 10, &d40), 790);
        let d1 = build_dictionary(["ACGT"], cfg(1, 1, true), 1).unwrap();
        assert_eq!(nag(100, 1, &d1), 1);
    }

    #[test]
    fn dictionary_file_roundtrip_and_validation() {
        let d = build_dictionary(["ACGTACGTTGCA", "ACGTTT"], cfg(2, 5, true), 1).unwrap();
        let bytes = d.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"PPGD");
        let back = GramDictionary::from_bytes(&bytes).unwrap();
        assert_eq!(back.entries(), d.entries());
        assert_eq!(back.digest(), d.digest());
        assert!(GramDictionary::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(GramDictionary::from_bytes(&bad).is_err());
    }
}
