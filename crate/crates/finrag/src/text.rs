//! Shared tokenization for corpus indexing and retrieval scoring.
//!
//! Both sides of the retrieval pipeline must agree on what a token is,
//! so the corpus index and the query preprocessor funnel through the
//! same splitter and the same stopword list. The list is frozen: the
//! inverted index and any saved retrieval traces depend on it, and a
//! silent edit would desynchronize them.

use std::collections::BTreeSet;

/// Words removed from every token stream before indexing or scoring.
///
/// Kept sorted so membership checks can binary search. The single
/// letters `s` and `t` absorb the tails of contractions such as
/// `JPMorgan's` or `don't` once punctuation is stripped.
pub const STOPWORDS: [&str; 50] = [
    "a", "about", "after", "all", "an", "and", "any", "are", "as", "at",
    "be", "been", "but", "by", "can", "did", "do", "for", "from", "had",
    "has", "have", "he", "her", "his", "i", "if", "in", "is", "it",
    "its", "not", "of", "on", "or", "s", "she", "t", "that", "the",
    "their", "they", "this", "to", "was", "we", "were", "will", "with",
    "you",
];

/// Returns true when `word` is on the frozen stopword list.
///
/// Callers are expected to pass already-lowercased words; the list
/// itself is all lowercase.
pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Splits `text` into lowercase content words.
///
/// Any run of non-alphanumeric characters is a separator, empty pieces
/// are dropped, and stopwords are removed. Order and duplicates are
/// preserved so callers can still see term frequency if they want it.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(|piece| piece.to_lowercase())
        .filter(|word| !is_stopword(word))
        .collect()
}

/// Tokenizes `text` and collapses the result to a sorted set.
///
/// This is the representation the overlap scorer and the inverted
/// index work with.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}
