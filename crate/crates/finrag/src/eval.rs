//! Label mapping, metrics, and the with/without-retrieval comparison.
//!
//! Generated text is mapped to a label by sequential substring
//! search, predictions accumulate into a 3x3 confusion matrix (rows
//! gold, columns predicted), and reports carry accuracy plus
//! per-class and averaged F1. A backend failure never sinks a run: the
//! record degrades to a neutral prediction with the error attached,
//! and the report counts how many did.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{complete_batch, CompletionBackend, CompletionParams, PromptEnvelope};
use crate::bpe::Vocab;
use crate::corpus::CorpusStore;
use crate::dataset::{InstructionRecord, SentimentLabel};
use crate::retrieval::{
    augment_query, preprocess_query, retrieve_context, RetrievalError, RetrievalOptions,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation dataset is empty")]
    EmptyDataset,
    #[error("confusion matrix has no predictions")]
    EmptyMatrix,
    #[error("retrieval is enabled but no corpus store was given")]
    MissingStore,
    #[error("predictions line {line}: {message}")]
    MalformedPrediction { line: usize, message: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Maps generated text to a label: case-insensitive substring search
/// for "negative", then "neutral", then "positive"; the first hit
/// wins and no hit defaults to neutral. Total on any input.
pub fn map_output_to_label(text: &str) -> SentimentLabel {
    let lower = text.to_lowercase();
    for label in SentimentLabel::ALL {
        if lower.contains(label.word()) {
            return label;
        }
    }
    SentimentLabel::Neutral
}

/// One evaluated record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: usize,
    pub raw_output: String,
    pub mapped: SentimentLabel,
    pub gold: SentimentLabel,
    pub used_rag: bool,
    pub bundle_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Gold-by-predicted counts; rows follow gold labels, columns follow
/// predicted labels, both in negative, neutral, positive order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    /// Builds a matrix from explicit counts, rows gold.
    pub fn from_counts(counts: [[u64; 3]; 3]) -> ConfusionMatrix {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, gold: SentimentLabel, predicted: SentimentLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn accumulate<'a>(predictions: impl IntoIterator<Item = &'a Prediction>) -> ConfusionMatrix {
        let mut matrix = ConfusionMatrix::new();
        for prediction in predictions {
            matrix.record(prediction.gold, prediction.mapped);
        }
        matrix
    }

    pub fn count(&self, gold: SentimentLabel, predicted: SentimentLabel) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn counts(&self) -> &[[u64; 3]; 3] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// Metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_precision: [f64; 3],
    pub per_class_recall: [f64; 3],
    pub per_class_f1: [f64; 3],
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub n: usize,
    /// Records whose backend call failed and degraded to neutral.
    pub errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

/// Derives all metrics from a confusion matrix.
///
/// A class nobody predicted gets precision 0, a class with no gold
/// examples gets recall 0, and F1 is 0 whenever precision and recall
/// are both 0. `weighted_f1` weights each class by its gold support.
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<EvalReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let counts = cm.counts();
    let trace: u64 = (0..3).map(|i| counts[i][i]).sum();
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    let mut weighted_f1 = 0.0;
    for class in 0..3 {
        let column: u64 = (0..3).map(|gold| counts[gold][class]).sum();
        let row: u64 = counts[class].iter().sum();
        let hits = counts[class][class] as f64;
        precision[class] = if column == 0 { 0.0 } else { hits / column as f64 };
        recall[class] = if row == 0 { 0.0 } else { hits / row as f64 };
        let denom = precision[class] + recall[class];
        f1[class] = if denom == 0.0 {
            0.0
        } else {
            2.0 * precision[class] * recall[class] / denom
        };
        weighted_f1 += row as f64 * f1[class];
    }
    Ok(EvalReport {
        accuracy: trace as f64 / total as f64,
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        macro_f1: (f1[0] + f1[1] + f1[2]) / 3.0,
        weighted_f1: weighted_f1 / total as f64,
        n: total as usize,
        errors: 0,
        config_fingerprint: None,
    })
}

/// Token budget for prompt augmentation, enforced with the vocabulary
/// that will tokenize the prompt.
pub struct AugmentBudget<'a> {
    pub token_budget: usize,
    pub vocab: &'a Vocab,
}

/// Everything one evaluation run needs besides the dataset.
pub struct EvalPipeline<'a> {
    pub backend: &'a dyn CompletionBackend,
    /// Retrieve and prepend context before completing.
    pub rag: bool,
    pub store: Option<&'a CorpusStore>,
    pub retrieval: RetrievalOptions,
    pub completion: CompletionParams,
    pub max_in_flight: usize,
    /// Without a budget the full bundle is always included.
    pub budget: Option<AugmentBudget<'a>>,
    pub config_fingerprint: Option<String>,
}

impl<'a> EvalPipeline<'a> {
    /// A minimal pipeline around a backend, retrieval off.
    pub fn direct(backend: &'a dyn CompletionBackend) -> EvalPipeline<'a> {
        EvalPipeline {
            backend,
            rag: false,
            store: None,
            retrieval: RetrievalOptions::default(),
            completion: CompletionParams::default(),
            max_in_flight: 4,
            budget: None,
            config_fingerprint: None,
        }
    }
}

/// Evaluates every record through the pipeline.
///
/// With retrieval on, each record's input is preprocessed and the
/// store queried; inputs that clean down to nothing skip retrieval
/// and go through verbatim. Completions run through `complete_batch`,
/// so per-record failures surface as neutral predictions with the
/// error recorded, not as a failed run.
pub fn run_eval(
    records: &[InstructionRecord],
    pipeline: &EvalPipeline,
) -> Result<(EvalReport, Vec<Prediction>), EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if pipeline.rag && pipeline.store.is_none() {
        return Err(EvalError::MissingStore);
    }
    let mut envelopes = Vec::with_capacity(records.len());
    let mut retrieval_info = Vec::with_capacity(records.len());
    for record in records {
        let (content, used_rag, bundle_size) = if pipeline.rag {
            let query = preprocess_query(&record.input);
            if query.tokens.is_empty() {
                (record.input.clone(), false, 0)
            } else {
                let store = pipeline.store.expect("checked above");
                let bundle = retrieve_context(&query, store, &pipeline.retrieval)?;
                let size = bundle.units.len();
                let content = match &pipeline.budget {
                    Some(budget) => {
                        augment_query(&query, &bundle, budget.token_budget, budget.vocab)?
                    }
                    None => {
                        if bundle.is_empty() {
                            query.cleaned.clone()
                        } else {
                            format!("Context: {}\nNews: {}", bundle.concatenated, query.cleaned)
                        }
                    }
                };
                (content, true, size)
            }
        } else {
            (record.input.clone(), false, 0)
        };
        envelopes.push(PromptEnvelope::new(record.instruction.clone(), content));
        retrieval_info.push((used_rag, bundle_size));
    }
    let results = complete_batch(
        pipeline.backend,
        &envelopes,
        &pipeline.completion,
        pipeline.max_in_flight,
    );
    let mut predictions = Vec::with_capacity(records.len());
    let mut errors = 0;
    for (index, (record, result)) in records.iter().zip(results).enumerate() {
        let (used_rag, bundle_size) = retrieval_info[index];
        let prediction = match result {
            Ok(raw_output) => Prediction {
                record_id: index,
                mapped: map_output_to_label(&raw_output),
                raw_output,
                gold: record.output,
                used_rag,
                bundle_size,
                error: None,
            },
            Err(err) => {
                errors += 1;
                Prediction {
                    record_id: index,
                    raw_output: String::new(),
                    mapped: SentimentLabel::Neutral,
                    gold: record.output,
                    used_rag,
                    bundle_size,
                    error: Some(err.to_string()),
                }
            }
        };
        predictions.push(prediction);
    }
    let matrix = ConfusionMatrix::accumulate(&predictions);
    let mut report = compute_metrics(&matrix)?;
    report.errors = errors;
    report.config_fingerprint = pipeline.config_fingerprint.clone();
    Ok((report, predictions))
}

/// A report labeled with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?}, expected markdown or json")),
        }
    }
}

/// Renders reports side by side, one row per configuration.
///
/// # Panics
///
/// Panics when `reports` is empty.
pub fn render_report(reports: &[NamedReport], format: ReportFormat) -> String {
    assert!(!reports.is_empty(), "render_report needs at least one report");
    match format {
        ReportFormat::Json => {
            let mut text = serde_json::to_string_pretty(&serde_json::json!({ "reports": reports }))
                .expect("reports serialize");
            text.push('\n');
            text
        }
        ReportFormat::Markdown => {
            let mut out = String::new();
            out.push_str("| Configuration | Accuracy | Macro F1 | Weighted F1 | N | Errors | Fingerprint |\n");
            out.push_str("|---|---|---|---|---|---|---|\n");
            for named in reports {
                let report = &named.report;
                out.push_str(&format!(
                    "| {} | {:.3} | {:.3} | {:.3} | {} | {} | {} |\n",
                    named.name,
                    report.accuracy,
                    report.macro_f1,
                    report.weighted_f1,
                    report.n,
                    report.errors,
                    report.config_fingerprint.as_deref().unwrap_or("-"),
                ));
            }
            out
        }
    }
}

/// Writes predictions as JSONL, one object per record.
pub fn write_predictions<W: Write>(predictions: &[Prediction], mut out: W) -> io::Result<()> {
    for prediction in predictions {
        let line = serde_json::to_string(prediction).expect("prediction serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads predictions written by [`write_predictions`].
pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<Prediction>, EvalError> {
    let mut predictions = Vec::new();
    for (ordinal, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let prediction =
            serde_json::from_str(&line).map_err(|err| EvalError::MalformedPrediction {
                line: ordinal + 1,
                message: err.to_string(),
            })?;
        predictions.push(prediction);
    }
    Ok(predictions)
}
