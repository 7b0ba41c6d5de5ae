//! Instruction-following dataset construction.
//!
//! Supervised sentiment corpora arrive as JSONL with heterogeneous
//! label schemes. This module canonicalizes the labels, pairs each
//! record with one of ten instruction templates, and renders the
//! prompt/response string the tuning and evaluation stages consume.

pub mod format;
pub mod label;
pub mod template;

pub use format::{
    format_dataset, format_record, parse_rendered, read_instruction_records, render,
    render_prompt, write_instruction_records, FormatSummary, InstructionRecord, RawRecord,
};
pub use label::{canonicalize_label, LabelScheme, RawLabel, SentimentLabel, UnknownLabel};
pub use template::{default_templates, load_templates, template_index, InstructionTemplate};

use thiserror::Error;

/// Errors surfaced while loading templates or formatting a dataset.
#[derive(Debug, Error)]
pub enum DatasetError {
    /// A record's label was not a member of the declared scheme.
    #[error("line {line}: {source}")]
    UnknownLabel {
        line: usize,
        source: UnknownLabel,
    },
    /// A template file did not contain exactly the required count.
    #[error("expected exactly {expected} templates, found {found}")]
    TemplateCountMismatch { expected: usize, found: usize },
    /// A template entry was empty after trimming.
    #[error("template {index} is empty")]
    EmptyTemplate { index: usize },
    /// An input line failed to parse as a raw record.
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    /// Reading or writing the underlying stream failed.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
