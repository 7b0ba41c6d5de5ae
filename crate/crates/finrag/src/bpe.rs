//! Byte-level byte-pair-encoding tokenizer.
//!
//! The base alphabet is all 256 byte values, so any input encodes
//! without an unknown-token escape hatch and `decode(encode(s))` is
//! byte-exact. Merges never cross word boundaries; a word is a maximal
//! run of bytes that are not ASCII whitespace, and whitespace bytes
//! always stay single-byte tokens.
//!
//! Pair frequencies are counted non-overlapping, left to right, within
//! each word: `aaaa` contributes 2 to the pair (a, a), and `ababab`
//! contributes 3 to (a, b). Equal-frequency candidates are broken by
//! lexicographic order of the pair's byte strings, so training is
//! deterministic. Training stops once the best pair occurs fewer than
//! twice, or the target vocabulary size is reached.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of single-byte tokens every vocabulary starts from.
pub const BASE_VOCAB_SIZE: usize = 256;

/// Default training target for the toy pipeline.
pub const DEFAULT_VOCAB_SIZE: usize = 512;

/// Errors from training, applying, or persisting a vocabulary.
#[derive(Debug, Error)]
pub enum BpeError {
    /// Training input contained no bytes.
    #[error("training corpus is empty")]
    EmptyCorpus,
    /// The requested vocabulary cannot hold the base alphabet plus at
    /// least one merge.
    #[error("target vocabulary size {target} is below the minimum of {minimum}")]
    VocabTooSmall { target: usize, minimum: usize },
    /// A token id outside the vocabulary was passed to decode.
    #[error("token id {id} is outside the vocabulary of size {vocab_size}")]
    UnknownTokenId { id: u32, vocab_size: usize },
    /// A vocabulary file failed validation while loading.
    #[error("malformed vocabulary file: {message}")]
    MalformedVocabFile { message: String },
    /// Reading or writing the underlying stream failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One learned merge: the pair of existing tokens it joins and the
/// order it was learned in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRule {
    pub left: Vec<u8>,
    pub right: Vec<u8>,
    pub rank: usize,
}

impl MergeRule {
    /// The byte string of the token this merge creates.
    pub fn merged(&self) -> Vec<u8> {
        let mut out = self.left.clone();
        out.extend_from_slice(&self.right);
        out
    }
}

/// A trained vocabulary: the 256 byte tokens plus learned merges.
#[derive(Debug, Clone)]
pub struct Vocab {
    id_to_token: Vec<Vec<u8>>,
    token_to_id: HashMap<Vec<u8>, u32>,
    merges: Vec<MergeRule>,
    merge_ids: Vec<(u32, u32, u32)>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fingerprint: Option<String>,
    merges: Vec<(String, String)>,
}

impl Vocab {
    fn base() -> Vocab {
        let id_to_token: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(id, token)| (token.clone(), id as u32))
            .collect();
        Vocab {
            id_to_token,
            token_to_id,
            merges: Vec::new(),
            merge_ids: Vec::new(),
        }
    }

    /// Rebuilds a vocabulary by replaying merges over the base
    /// alphabet, validating each step.
    pub fn from_merges(pairs: Vec<(Vec<u8>, Vec<u8>)>) -> Result<Vocab, BpeError> {
        let mut vocab = Vocab::base();
        for (rank, (left, right)) in pairs.into_iter().enumerate() {
            let malformed = |message: String| BpeError::MalformedVocabFile { message };
            let left_id = *vocab
                .token_to_id
                .get(&left)
                .ok_or_else(|| malformed(format!("merge {rank}: left token not in vocabulary")))?;
            let right_id = *vocab
                .token_to_id
                .get(&right)
                .ok_or_else(|| malformed(format!("merge {rank}: right token not in vocabulary")))?;
            let mut merged = left.clone();
            merged.extend_from_slice(&right);
            if vocab.token_to_id.contains_key(&merged) {
                return Err(malformed(format!("merge {rank}: merged token already exists")));
            }
            vocab.push_merge(left_id, right_id, merged);
        }
        Ok(vocab)
    }

    fn push_merge(&mut self, left_id: u32, right_id: u32, merged: Vec<u8>) -> u32 {
        let merged_id = self.id_to_token.len() as u32;
        self.merges.push(MergeRule {
            left: self.id_to_token[left_id as usize].clone(),
            right: self.id_to_token[right_id as usize].clone(),
            rank: self.merges.len(),
        });
        self.merge_ids.push((left_id, right_id, merged_id));
        self.token_to_id.insert(merged.clone(), merged_id);
        self.id_to_token.push(merged);
        merged_id
    }

    /// Total number of tokens, base alphabet included.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    /// The byte string for `id`, if it is in range.
    pub fn token(&self, id: u32) -> Option<&[u8]> {
        self.id_to_token.get(id as usize).map(Vec::as_slice)
    }

    /// The id for an exact token byte string.
    pub fn id(&self, token: &[u8]) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Learned merges in rank order.
    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    /// Tokenizes `text`. Whitespace bytes become single-byte tokens;
    /// each word has the merges applied in rank order.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        let mut word: Vec<u32> = Vec::new();
        for &byte in text.as_bytes() {
            if byte.is_ascii_whitespace() {
                self.encode_word(std::mem::take(&mut word), &mut ids);
                ids.push(byte as u32);
            } else {
                word.push(byte as u32);
            }
        }
        self.encode_word(word, &mut ids);
        ids
    }

    fn encode_word(&self, mut tokens: Vec<u32>, out: &mut Vec<u32>) {
        for &(left, right, merged) in &self.merge_ids {
            if tokens.len() < 2 {
                break;
            }
            let applies = tokens
                .windows(2)
                .any(|pair| pair[0] == left && pair[1] == right);
            if applies {
                tokens = apply_merge(&tokens, left, right, merged);
            }
        }
        out.extend(tokens);
    }

    /// Concatenates the byte strings of `ids`.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>, BpeError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let token = self.token(id).ok_or(BpeError::UnknownTokenId {
                id,
                vocab_size: self.size(),
            })?;
            bytes.extend_from_slice(token);
        }
        Ok(bytes)
    }

    /// Decodes `ids` to text. Sequences produced by [`Vocab::encode`]
    /// decode byte-exactly; hand-built sequences that split UTF-8
    /// characters fall back to replacement characters.
    pub fn decode(&self, ids: &[u32]) -> Result<String, BpeError> {
        let bytes = self.decode_bytes(ids)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Writes the vocabulary as JSON. The optional fingerprint records
    /// which resolved configuration produced it.
    pub fn save<W: Write>(&self, mut out: W, fingerprint: Option<&str>) -> Result<(), BpeError> {
        let file = VocabFile {
            fingerprint: fingerprint.map(String::from),
            merges: self
                .merges
                .iter()
                .map(|m| (escape_bytes(&m.left), escape_bytes(&m.right)))
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file).expect("vocab file serializes");
        out.write_all(json.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a vocabulary written by [`Vocab::save`].
    pub fn load<R: BufRead>(mut input: R) -> Result<Vocab, BpeError> {
        let mut contents = String::new();
        input.read_to_string(&mut contents)?;
        let file: VocabFile =
            serde_json::from_str(&contents).map_err(|err| BpeError::MalformedVocabFile {
                message: err.to_string(),
            })?;
        let mut pairs = Vec::with_capacity(file.merges.len());
        for (rank, (left, right)) in file.merges.iter().enumerate() {
            let left = unescape_bytes(left).map_err(|message| BpeError::MalformedVocabFile {
                message: format!("merge {rank} left: {message}"),
            })?;
            let right = unescape_bytes(right).map_err(|message| BpeError::MalformedVocabFile {
                message: format!("merge {rank} right: {message}"),
            })?;
            pairs.push((left, right));
        }
        Vocab::from_merges(pairs)
    }

    /// Hash of the merge list, used to tie checkpoints to the exact
    /// vocabulary they were trained with.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for merge in &self.merges {
            for part in [&merge.left, &merge.right] {
                hasher.update((part.len() as u32).to_le_bytes());
                hasher.update(part);
            }
        }
        let digest = hasher.finalize();
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Replaces every non-overlapping (left, right) pair, scanning left to
/// right, with the merged token.
fn apply_merge(tokens: &[u32], left: u32, right: u32, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        if i + 1 < tokens.len() && tokens[i] == left && tokens[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(tokens[i]);
            i += 1;
        }
    }
    out
}

/// Trains a vocabulary on `corpus` up to `target_vocab_size` tokens.
pub fn train_bpe<R: BufRead>(mut corpus: R, target_vocab_size: usize) -> Result<Vocab, BpeError> {
    if target_vocab_size <= BASE_VOCAB_SIZE {
        return Err(BpeError::VocabTooSmall {
            target: target_vocab_size,
            minimum: BASE_VOCAB_SIZE + 1,
        });
    }
    let mut bytes = Vec::new();
    corpus.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Err(BpeError::EmptyCorpus);
    }

    let mut word_counts: Vec<(Vec<u32>, u64)> = Vec::new();
    let mut word_index: HashMap<Vec<u8>, usize> = HashMap::new();
    for word in bytes.split(|b| b.is_ascii_whitespace()) {
        if word.is_empty() {
            continue;
        }
        match word_index.get(word) {
            Some(&i) => word_counts[i].1 += 1,
            None => {
                word_index.insert(word.to_vec(), word_counts.len());
                word_counts.push((word.iter().map(|&b| b as u32).collect(), 1));
            }
        }
    }

    let mut vocab = Vocab::base();
    while vocab.size() < target_vocab_size {
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (tokens, count) in &word_counts {
            let mut prev_counted: Option<(u32, u32)> = None;
            for window in tokens.windows(2) {
                let pair = (window[0], window[1]);
                if prev_counted == Some(pair) && pair.0 == pair.1 {
                    prev_counted = None;
                    continue;
                }
                *pair_counts.entry(pair).or_insert(0) += count;
                prev_counted = Some(pair);
            }
        }

        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &count) in &pair_counts {
            let left = &vocab.id_to_token[pair.0 as usize];
            let right = &vocab.id_to_token[pair.1 as usize];
            let mut merged = left.clone();
            merged.extend_from_slice(right);
            if vocab.token_to_id.contains_key(&merged) {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, best_count)) if count != best_count => count > best_count,
                Some((best_pair, _)) => {
                    let best_left = &vocab.id_to_token[best_pair.0 as usize];
                    let best_right = &vocab.id_to_token[best_pair.1 as usize];
                    (left, right) < (best_left, best_right)
                }
            };
            if better {
                best = Some((pair, count));
            }
        }

        let Some(((left_id, right_id), count)) = best else {
            break;
        };
        if count < 2 {
            break;
        }
        let mut merged = vocab.id_to_token[left_id as usize].clone();
        merged.extend_from_slice(&vocab.id_to_token[right_id as usize]);
        let merged_id = vocab.push_merge(left_id, right_id, merged);
        for (tokens, _) in &mut word_counts {
            let applies = tokens
                .windows(2)
                .any(|pair| pair[0] == left_id && pair[1] == right_id);
            if applies {
                *tokens = apply_merge(tokens, left_id, right_id, merged_id);
            }
        }
    }
    Ok(vocab)
}

/// Renders token bytes as a printable string: printable ASCII stays
/// as-is, backslash doubles, everything else becomes `\xNN`.
fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        match b {
            b'\\' => out.push_str("\\\\"),
            0x20..=0x7e => out.push(b as char),
            _ => out.push_str(&format!("\\x{b:02x}")),
        }
    }
    out
}

/// Inverse of [`escape_bytes`].
fn unescape_bytes(text: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            if !(' '..='~').contains(&c) {
                return Err(format!("unescaped character {c:?}"));
            }
            out.push(c as u8);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push(b'\\'),
            Some('x') => {
                let hi = chars.next().ok_or("truncated \\x escape")?;
                let lo = chars.next().ok_or("truncated \\x escape")?;
                let hex: String = [hi, lo].into_iter().collect();
                let byte = u8::from_str_radix(&hex, 16)
                    .map_err(|_| format!("invalid hex in escape: {hex:?}"))?;
                out.push(byte);
            }
            other => return Err(format!("bad escape {other:?}")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn train_str(corpus: &str, target: usize) -> Vocab {
        train_bpe(corpus.as_bytes(), target).unwrap()
    }

    fn merge_pairs(vocab: &Vocab) -> Vec<(Vec<u8>, Vec<u8>)> {
        vocab
            .merges()
            .iter()
            .map(|m| (m.left.clone(), m.right.clone()))
            .collect()
    }

    #[test]
    fn repeated_pair_is_merged_first() {
        let vocab = train_str("ababab", 258);
        assert_eq!(merge_pairs(&vocab), vec![(b"a".to_vec(), b"b".to_vec())]);
        assert_eq!(vocab.size(), 257);
    }

    #[test]
    fn run_of_identical_bytes_counts_nonoverlapping() {
        let vocab = train_str("aaaa", 258);
        assert_eq!(merge_pairs(&vocab), vec![(b"a".to_vec(), b"a".to_vec())]);
        assert_eq!(vocab.encode("aaaa"), vec![256, 256]);
    }

    #[test]
    fn triple_run_yields_one_countable_pair_and_no_merge() {
        let vocab = train_str("aaa", 300);
        assert!(vocab.merges().is_empty());
    }

    #[test]
    fn single_byte_corpus_trains_no_merges() {
        let vocab = train_str("z", 257);
        assert!(vocab.merges().is_empty());
        assert_eq!(vocab.size(), BASE_VOCAB_SIZE);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            train_bpe(&b""[..], 512),
            Err(BpeError::EmptyCorpus)
        ));
    }

    #[test]
    fn target_at_or_below_base_alphabet_is_rejected() {
        for target in [0, 255, 256] {
            assert!(matches!(
                train_bpe(&b"abc"[..], target),
                Err(BpeError::VocabTooSmall { .. })
            ));
        }
    }

    #[test]
    fn equal_counts_break_ties_lexicographically() {
        let vocab = train_str("cd cd ab ab", 257);
        assert_eq!(merge_pairs(&vocab), vec![(b"a".to_vec(), b"b".to_vec())]);
    }

    #[test]
    fn merges_never_cross_whitespace() {
        let vocab = train_str("a b a b a b a b", 300);
        assert!(vocab.merges().is_empty());
        let ids = vocab.encode("a b");
        assert_eq!(ids, vec![b'a' as u32, b' ' as u32, b'b' as u32]);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = "Energizer shares rose. JPMorgan cut its view. \
                      Shares of Energizer fell after the JPMorgan note. \
                      Analysts see shares rising. The note surprised analysts.";
        let a = train_str(corpus, 300);
        let b = train_str(corpus, 300);
        assert_eq!(merge_pairs(&a), merge_pairs(&b));
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        a.save(&mut bytes_a, Some("fp")).unwrap();
        b.save(&mut bytes_b, Some("fp")).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn empty_text_encodes_to_empty_sequence() {
        let vocab = train_str("ababab", 258);
        assert!(vocab.encode("").is_empty());
        assert_eq!(vocab.decode(&[]).unwrap(), "");
    }

    #[test]
    fn one_merge_encodes_its_pair_as_one_token() {
        let vocab = train_str("ababab", 258);
        let ids = vocab.encode("ab");
        assert_eq!(ids.len(), 1);
        assert_eq!(vocab.token(ids[0]).unwrap(), b"ab");
    }

    #[test]
    fn decode_rejects_out_of_range_ids() {
        let vocab = train_str("ababab", 258);
        let bad = vocab.size() as u32;
        assert!(matches!(
            vocab.decode(&[bad]),
            Err(BpeError::UnknownTokenId { id, .. }) if id == bad
        ));
    }

    #[test]
    fn token_maps_stay_inverse_after_training() {
        let vocab = train_str(
            "the market the market the market rallied rallied rallied today today",
            350,
        );
        assert_eq!(vocab.token_to_id.len(), vocab.id_to_token.len());
        for (id, token) in vocab.id_to_token.iter().enumerate() {
            assert_eq!(vocab.token_to_id[token], id as u32);
        }
    }

    #[test]
    fn trained_vocab_compresses_its_corpus() {
        let corpus = "earnings beat earnings beat earnings beat guidance raised guidance raised";
        let vocab = train_str(corpus, 400);
        assert!(!vocab.merges().is_empty());
        assert!(vocab.encode(corpus).len() <= corpus.len());
    }

    #[test]
    fn roundtrip_holds_on_random_strings() {
        let corpus = "shares rose shares fell shares flat outlook cut outlook raised";
        let vocab = train_str(corpus, 300);
        let mut rng = StdRng::seed_from_u64(99);
        let pieces = ["shares", "rose", "зависит", "配当", "a\tb", "x  y", "💹", "\\x41", "café"];
        for _ in 0..200 {
            let len = rng.random_range(0..12);
            let mut s = String::new();
            for _ in 0..len {
                if rng.random_bool(0.3) {
                    s.push(rng.random::<char>());
                } else {
                    s.push_str(pieces[rng.random_range(0..pieces.len())]);
                    s.push(' ');
                }
            }
            assert_eq!(vocab.decode(&vocab.encode(&s)).unwrap(), s);
        }
    }

    #[test]
    fn vocab_survives_save_and_load() {
        let vocab = train_str("café café café au lait au lait 漲停 漲停", 300);
        let mut buffer = Vec::new();
        vocab.save(&mut buffer, Some("abc123")).unwrap();
        let loaded = Vocab::load(&buffer[..]).unwrap();
        assert_eq!(merge_pairs(&loaded), merge_pairs(&vocab));
        assert_eq!(loaded.size(), vocab.size());
        assert_eq!(loaded.content_hash(), vocab.content_hash());
        let text = "café au lait 漲停";
        assert_eq!(loaded.encode(text), vocab.encode(text));
    }

    #[test]
    fn saved_file_lists_merges_as_pairs() {
        let vocab = train_str("ababab", 258);
        let mut buffer = Vec::new();
        vocab.save(&mut buffer, None).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&buffer).unwrap();
        assert_eq!(value["merges"][0][0], "a");
        assert_eq!(value["merges"][0][1], "b");
        assert!(value.get("fingerprint").is_none());
    }

    #[test]
    fn escape_round_trips_awkward_bytes() {
        for token in [
            b"plain".to_vec(),
            b"back\\slash".to_vec(),
            vec![0x00, 0xff, 0x0a],
            "é漲".as_bytes().to_vec(),
        ] {
            let escaped = escape_bytes(&token);
            assert_eq!(unescape_bytes(&escaped).unwrap(), token);
        }
    }

    #[test]
    fn load_rejects_merges_that_do_not_replay() {
        let missing = r#"{"merges": [["ab", "c"]]}"#;
        assert!(matches!(
            Vocab::load(missing.as_bytes()),
            Err(BpeError::MalformedVocabFile { .. })
        ));
        let duplicate = r#"{"merges": [["a", "b"], ["a", "b"]]}"#;
        assert!(matches!(
            Vocab::load(duplicate.as_bytes()),
            Err(BpeError::MalformedVocabFile { .. })
        ));
        let bad_escape = r#"{"merges": [["\\q", "b"]]}"#;
        assert!(matches!(
            Vocab::load(bad_escape.as_bytes()),
            Err(BpeError::MalformedVocabFile { .. })
        ));
    }

    #[test]
    fn content_hash_tracks_merge_list() {
        let a = train_str("ababab", 258);
        let b = train_str("ababab", 258);
        let c = train_str("cdcdcd", 258);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash().len(), 32);
    }
}
