//! Instruction templates and deterministic per-record selection.

use std::fs;
use std::path::Path;

use crate::dataset::DatasetError;

/// Number of templates every template set must contain.
pub const TEMPLATE_COUNT: usize = 10;

/// One task-description template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionTemplate {
    pub id: usize,
    pub text: String,
}

const DEFAULT_TEMPLATES: [&str; TEMPLATE_COUNT] = [
    "What is the sentiment of this financial news? Answer negative, neutral, or positive.",
    "Classify the sentiment of this financial headline as negative, neutral, or positive.",
    "Decide the sentiment of this news item. Reply negative, neutral, or positive.",
    "Label the sentiment of this financial text as negative, neutral, or positive.",
    "Judge the sentiment of this headline. Answer negative, neutral, or positive.",
    "Rate the sentiment of this market news as negative, neutral, or positive.",
    "Determine the sentiment of this financial story. Reply negative, neutral, or positive.",
    "Assess the sentiment of this news text. Answer negative, neutral, or positive.",
    "Identify the sentiment of this market headline as negative, neutral, or positive.",
    "State the sentiment of this financial news item. Reply negative, neutral, or positive.",
];

/// Returns the built-in template set, ids 0 through 9.
pub fn default_templates() -> Vec<InstructionTemplate> {
    DEFAULT_TEMPLATES
        .iter()
        .enumerate()
        .map(|(id, text)| InstructionTemplate {
            id,
            text: text.to_string(),
        })
        .collect()
}

/// Loads templates from `path`, or the built-in set when `path` is `None`.
///
/// A template file holds one template per line. Exactly
/// [`TEMPLATE_COUNT`] non-empty lines are required; ids are assigned in
/// file order.
pub fn load_templates(path: Option<&Path>) -> Result<Vec<InstructionTemplate>, DatasetError> {
    let Some(path) = path else {
        return Ok(default_templates());
    };
    let contents = fs::read_to_string(path)?;
    let templates: Vec<InstructionTemplate> = contents
        .lines()
        .enumerate()
        .map(|(id, line)| InstructionTemplate {
            id,
            text: line.trim().to_string(),
        })
        .collect();
    if templates.len() != TEMPLATE_COUNT {
        return Err(DatasetError::TemplateCountMismatch {
            expected: TEMPLATE_COUNT,
            found: templates.len(),
        });
    }
    if let Some(empty) = templates.iter().find(|t| t.text.is_empty()) {
        return Err(DatasetError::EmptyTemplate { index: empty.id });
    }
    Ok(templates)
}

/// Picks the template id for record `index` under `seed`.
///
/// The choice is a counter hash, not a shared generator state, so any
/// record's template can be computed independently and records may be
/// formatted in parallel or out of order without changing the result.
pub fn template_index(seed: u64, index: u64) -> usize {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z % TEMPLATE_COUNT as u64) as usize
}
