//! Rendering raw records into prompt/response training strings.

use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::label::{canonicalize_label, LabelScheme, RawLabel, SentimentLabel};
use crate::dataset::template::{template_index, InstructionTemplate, TEMPLATE_COUNT};
use crate::dataset::DatasetError;

/// A supervised record as read from source JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub text: String,
    pub label: RawLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

/// One formatted training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: SentimentLabel,
    pub rendered: String,
}

/// Per-class record counts reported alongside a formatted dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatSummary {
    pub total: usize,
    pub negative: usize,
    pub neutral: usize,
    pub positive: usize,
}

impl FormatSummary {
    fn record(&mut self, label: SentimentLabel) {
        self.total += 1;
        match label {
            SentimentLabel::Negative => self.negative += 1,
            SentimentLabel::Neutral => self.neutral += 1,
            SentimentLabel::Positive => self.positive += 1,
        }
    }
}

const HUMAN_PREFIX: &str = "Human: ";
const ASSISTANT_SEPARATOR: &str = ", Assistant: ";

/// Joins an instruction, an input, and a label word into the prompt
/// string the model is trained on.
pub fn render(instruction: &str, input: &str, label: SentimentLabel) -> String {
    format!("{HUMAN_PREFIX}{instruction} {input}{ASSISTANT_SEPARATOR}{}", label.word())
}

/// The prompt half of a rendered record, up to but excluding the label
/// word. Completion prompts reuse this so inference matches training.
pub fn render_prompt(instruction: &str, input: &str) -> String {
    format!("{HUMAN_PREFIX}{instruction} {input}{ASSISTANT_SEPARATOR}")
}

/// Formats one record, choosing the template from (seed, index).
pub fn format_record(
    text: &str,
    label: SentimentLabel,
    templates: &[InstructionTemplate],
    seed: u64,
    index: u64,
) -> InstructionRecord {
    assert_eq!(templates.len(), TEMPLATE_COUNT, "template set must be complete");
    let template = &templates[template_index(seed, index)];
    let input = text.trim().to_string();
    let rendered = render(&template.text, &input, label);
    InstructionRecord {
        instruction: template.text.clone(),
        input,
        output: label,
        rendered,
    }
}

/// Formats a JSONL stream of raw records.
///
/// Each line is parsed, its label canonicalized under `scheme`, and
/// the record rendered with the template chosen for its ordinal. Line
/// numbers are 1-based in errors. Output order matches input order.
pub fn format_dataset<R: BufRead>(
    input: R,
    scheme: LabelScheme,
    templates: &[InstructionTemplate],
    seed: u64,
) -> Result<(Vec<InstructionRecord>, FormatSummary), DatasetError> {
    let mut records = Vec::new();
    let mut summary = FormatSummary::default();
    for (ordinal, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = ordinal + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|err| DatasetError::MalformedLine {
                line: line_no,
                message: err.to_string(),
            })?;
        if raw.text.trim().is_empty() {
            return Err(DatasetError::MalformedLine {
                line: line_no,
                message: "record text is empty".to_string(),
            });
        }
        let label = canonicalize_label(&raw.label, scheme)
            .map_err(|source| DatasetError::UnknownLabel { line: line_no, source })?;
        summary.record(label);
        records.push(format_record(
            &raw.text,
            label,
            templates,
            seed,
            records.len() as u64,
        ));
    }
    Ok((records, summary))
}

/// Recovers (instruction, input, label) from a rendered string.
///
/// Returns `None` when the string does not follow the rendering
/// conventions or the instruction is not one of `templates`. The label
/// word is taken from the last `", Assistant: "` occurrence, so inputs
/// containing that separator still parse back to themselves.
pub fn parse_rendered(
    rendered: &str,
    templates: &[InstructionTemplate],
) -> Option<(String, String, SentimentLabel)> {
    let body = rendered.strip_prefix(HUMAN_PREFIX)?;
    let (head, label_word) = body.rsplit_once(ASSISTANT_SEPARATOR)?;
    let label = match label_word {
        "negative" => SentimentLabel::Negative,
        "neutral" => SentimentLabel::Neutral,
        "positive" => SentimentLabel::Positive,
        _ => return None,
    };
    let template = templates
        .iter()
        .find(|t| head.strip_prefix(&t.text).is_some_and(|rest| rest.starts_with(' ')))?;
    let input = head[template.text.len() + 1..].to_string();
    Some((template.text.clone(), input, label))
}

/// Writes instruction records as JSONL, one object per line.
pub fn write_instruction_records<W: Write>(
    records: &[InstructionRecord],
    mut out: W,
) -> std::io::Result<()> {
    for record in records {
        let line = serde_json::to_string(record).expect("instruction record serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads instruction records from JSONL produced by
/// [`write_instruction_records`].
pub fn read_instruction_records<R: BufRead>(
    input: R,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    let mut records = Vec::new();
    for (ordinal, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InstructionRecord =
            serde_json::from_str(&line).map_err(|err| DatasetError::MalformedLine {
                line: ordinal + 1,
                message: err.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::template::default_templates;

    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn rendered_string_follows_the_fixed_shape() {
        let templates = default_templates();
        let record = format_record(
            "Stocks rallied and the British pound gained.",
            SentimentLabel::Positive,
            &templates,
            7,
            0,
        );
        let expected_template = &templates[template_index(7, 0)].text;
        assert_eq!(
            record.rendered,
            format!(
                "Human: {expected_template} Stocks rallied and the British pound gained., Assistant: positive"
            )
        );
        assert_eq!(record.instruction, *expected_template);
        assert_eq!(record.output, SentimentLabel::Positive);
    }

    #[test]
    fn formatting_is_deterministic_across_runs() {
        let templates = default_templates();
        for index in 0..50 {
            let a = format_record("Margins widened.", SentimentLabel::Neutral, &templates, 7, index);
            let b = format_record("Margins widened.", SentimentLabel::Neutral, &templates, 7, index);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn prompt_is_a_prefix_of_the_rendered_record() {
        let templates = default_templates();
        let record = format_record("Shares slid.", SentimentLabel::Negative, &templates, 3, 9);
        let prompt = render_prompt(&record.instruction, &record.input);
        assert!(record.rendered.starts_with(&prompt));
        assert_eq!(&record.rendered[prompt.len()..], "negative");
    }

    #[test]
    fn format_dataset_counts_per_class_and_preserves_order() {
        let templates = default_templates();
        let input = concat!(
            "{\"text\": \"Shares plunged after the miss.\", \"label\": \"Bearish\"}\n",
            "{\"text\": \"Board meets Tuesday.\", \"label\": \"Neutral\"}\n",
            "{\"text\": \"Guidance raised again.\", \"label\": \"Bullish\"}\n",
        );
        let (records, summary) =
            format_dataset(input.as_bytes(), LabelScheme::Twitter, &templates, 7).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(summary.total, 3);
        assert_eq!((summary.negative, summary.neutral, summary.positive), (1, 1, 1));
        assert_eq!(records[0].input, "Shares plunged after the miss.");
        assert_eq!(records[2].output, SentimentLabel::Positive);
    }

    #[test]
    fn format_dataset_of_empty_input_is_empty() {
        let templates = default_templates();
        let (records, summary) =
            format_dataset(&b""[..], LabelScheme::Canonical, &templates, 7).unwrap();
        assert!(records.is_empty());
        assert_eq!(summary, FormatSummary::default());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let templates = default_templates();
        let input = concat!(
            "{\"text\": \"fine\", \"label\": 1}\n",
            "{\"text\": \"broken\"\n",
        );
        match format_dataset(input.as_bytes(), LabelScheme::Fpb, &templates, 7) {
            Err(DatasetError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed line, got {other:?}"),
        }
    }

    #[test]
    fn empty_text_is_rejected_with_its_line() {
        let templates = default_templates();
        let input = "{\"text\": \"   \", \"label\": 1}\n";
        match format_dataset(input.as_bytes(), LabelScheme::Fpb, &templates, 7) {
            Err(DatasetError::MalformedLine { line, message }) => {
                assert_eq!(line, 1);
                assert!(message.contains("empty"));
            }
            other => panic!("expected malformed line, got {other:?}"),
        }
    }

    #[test]
    fn unknown_label_reports_its_line() {
        let templates = default_templates();
        let input = concat!(
            "{\"text\": \"fine\", \"label\": \"Bullish\"}\n",
            "{\"text\": \"also fine\", \"label\": \"sideways\"}\n",
        );
        match format_dataset(input.as_bytes(), LabelScheme::Twitter, &templates, 7) {
            Err(DatasetError::UnknownLabel { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected unknown label, got {other:?}"),
        }
    }

    #[test]
    fn timestamps_and_source_ids_parse_when_present() {
        let line = "{\"text\": \"t\", \"label\": 2, \"timestamp\": \"2020-06-01T13:00:00Z\", \"source_id\": \"feed-3\"}";
        let record: RawRecord = serde_json::from_str(line).unwrap();
        assert_eq!(record.source_id.as_deref(), Some("feed-3"));
        assert_eq!(
            record.timestamp.unwrap(),
            "2020-06-01T13:00:00Z".parse::<DateTime<Utc>>().unwrap()
        );
    }

    #[test]
    fn instruction_records_round_trip_through_jsonl() {
        let templates = default_templates();
        let (records, _) = format_dataset(
            "{\"text\": \"Dividend unchanged.\", \"label\": \"neutral\"}\n".as_bytes(),
            LabelScheme::Fpb,
            &templates,
            9,
        )
        .unwrap();
        let mut buffer = Vec::new();
        write_instruction_records(&records, &mut buffer).unwrap();
        let back = read_instruction_records(&buffer[..]).unwrap();
        assert_eq!(back, records);
        let value: serde_json::Value =
            serde_json::from_str(String::from_utf8_lossy(&buffer).lines().next().unwrap())
                .unwrap();
        for key in ["instruction", "input", "output", "rendered"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn parse_recovers_every_rendered_record() {
        let templates = default_templates();
        let mut rng = StdRng::seed_from_u64(11);
        let words = ["shares", "fell", "rose", "flat,", "Assistant:", "Human:", "q3?"];
        for index in 0..300u64 {
            let len = rng.random_range(1..8);
            let mut input_words = Vec::new();
            for _ in 0..len {
                input_words.push(words[rng.random_range(0..words.len())]);
            }
            let input = input_words.join(" ");
            let label = SentimentLabel::ALL[rng.random_range(0..3)];
            let record = format_record(&input, label, &templates, 5, index);
            let (instruction, parsed_input, parsed_label) =
                parse_rendered(&record.rendered, &templates).expect("round trip");
            assert_eq!(instruction, record.instruction);
            assert_eq!(parsed_input, record.input);
            assert_eq!(parsed_label, label);
        }
    }

    #[test]
    fn parse_survives_separator_embedded_in_input() {
        let templates = default_templates();
        let tricky = "Rates fell, Assistant: positive said the desk";
        let record = format_record(tricky, SentimentLabel::Negative, &templates, 2, 4);
        let (_, input, label) = parse_rendered(&record.rendered, &templates).unwrap();
        assert_eq!(input, tricky);
        assert_eq!(label, SentimentLabel::Negative);
    }

    #[test]
    fn parse_rejects_foreign_strings() {
        let templates = default_templates();
        assert!(parse_rendered("no prefix here", &templates).is_none());
        assert!(parse_rendered("Human: made-up instruction text, Assistant: positive", &templates).is_none());
        let record = format_record("x", SentimentLabel::Neutral, &templates, 1, 1);
        let truncated = record.rendered.replace(", Assistant: neutral", "");
        assert!(parse_rendered(&truncated, &templates).is_none());
    }
}
