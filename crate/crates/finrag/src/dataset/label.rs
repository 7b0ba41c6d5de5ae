//! Sentiment labels and canonicalization across source schemes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The three-class sentiment target.
///
/// The variant order fixes the serialization order everywhere a label
/// keys a map or a confusion-matrix axis.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Negative,
    Neutral,
    Positive,
}

impl SentimentLabel {
    /// All labels in their canonical order.
    pub const ALL: [SentimentLabel; 3] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    /// The lowercase word used in rendered records and reports.
    pub fn word(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
        }
    }

    /// Position of this label along a metrics axis.
    pub fn index(self) -> usize {
        match self {
            SentimentLabel::Negative => 0,
            SentimentLabel::Neutral => 1,
            SentimentLabel::Positive => 2,
        }
    }

    /// Parses a case-insensitive label word.
    pub fn from_word(word: &str) -> Option<SentimentLabel> {
        match word.to_lowercase().as_str() {
            "negative" => Some(SentimentLabel::Negative),
            "neutral" => Some(SentimentLabel::Neutral),
            "positive" => Some(SentimentLabel::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

/// Label vocabularies the formatter understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// Market-chatter style: Bearish, Bullish, Neutral.
    Twitter,
    /// Already uses the canonical words, or integer codes.
    Fiqa,
    /// Already uses the canonical words, or integer codes.
    Fpb,
    /// The crate's own output vocabulary.
    Canonical,
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LabelScheme::Twitter => "twitter",
            LabelScheme::Fiqa => "fiqa",
            LabelScheme::Fpb => "fpb",
            LabelScheme::Canonical => "canonical",
        };
        f.write_str(name)
    }
}

impl FromStr for LabelScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "twitter" => Ok(LabelScheme::Twitter),
            "fiqa" => Ok(LabelScheme::Fiqa),
            "fpb" => Ok(LabelScheme::Fpb),
            "canonical" => Ok(LabelScheme::Canonical),
            other => Err(format!(
                "unknown label scheme {other:?}, expected twitter, fiqa, fpb, or canonical"
            )),
        }
    }
}

/// A label as it appears in source data, before canonicalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawLabel {
    Int(i64),
    Text(String),
}

impl fmt::Display for RawLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawLabel::Int(value) => write!(f, "{value}"),
            RawLabel::Text(value) => write!(f, "{value:?}"),
        }
    }
}

/// A raw label that is not a member of the declared scheme.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("label {raw} is not valid for the {scheme} scheme")]
pub struct UnknownLabel {
    pub raw: RawLabel,
    pub scheme: LabelScheme,
}

/// Maps a source-scheme label onto the three-class target.
///
/// The twitter scheme accepts only its three words (case-insensitive);
/// integers are rejected because that corpus ships strings. The other
/// schemes accept the canonical words case-insensitively plus the
/// integer codes 0, 1, 2 for negative, neutral, positive.
pub fn canonicalize_label(
    raw: &RawLabel,
    scheme: LabelScheme,
) -> Result<SentimentLabel, UnknownLabel> {
    let unknown = || UnknownLabel {
        raw: raw.clone(),
        scheme,
    };
    match scheme {
        LabelScheme::Twitter => match raw {
            RawLabel::Text(word) => match word.to_lowercase().as_str() {
                "bearish" => Ok(SentimentLabel::Negative),
                "neutral" => Ok(SentimentLabel::Neutral),
                "bullish" => Ok(SentimentLabel::Positive),
                _ => Err(unknown()),
            },
            RawLabel::Int(_) => Err(unknown()),
        },
        LabelScheme::Fiqa | LabelScheme::Fpb | LabelScheme::Canonical => match raw {
            RawLabel::Text(word) => SentimentLabel::from_word(word).ok_or_else(unknown),
            RawLabel::Int(0) => Ok(SentimentLabel::Negative),
            RawLabel::Int(1) => Ok(SentimentLabel::Neutral),
            RawLabel::Int(2) => Ok(SentimentLabel::Positive),
            RawLabel::Int(_) => Err(unknown()),
        },
    }
}
