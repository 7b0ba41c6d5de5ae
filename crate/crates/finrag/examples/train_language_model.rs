//! Trains the windowed softmax language model on a tiny dataset.
//!
//! Builds a separable toy corpus, trains for a few epochs, prints the
//! loss curve, then saves and restores a checkpoint and generates a
//! completion from the restored parameters.
//!
//! ```text
//! cargo run --release --example train_language_model
//! ```

use std::io::BufReader;

use finrag::backend::{CompletionBackend, CompletionParams, PromptEnvelope, ToyBackend};
use finrag::bpe::train_bpe;
use finrag::dataset::{default_templates, format_dataset, LabelScheme};
use finrag::lm::{train, write_loss_csv, Checkpoint, ModelDims, TrainConfig};

fn toy_jsonl() -> String {
    let cues = [
        ("soar", "positive"),
        ("rally", "positive"),
        ("plunge", "negative"),
        ("slump", "negative"),
        ("steady", "neutral"),
        ("flat", "neutral"),
    ];
    let subjects = ["acme", "boreal", "cinder", "dunmore", "elmwood"];
    let mut lines = String::new();
    for i in 0..120 {
        let (cue, label) = cues[i % cues.len()];
        let subject = subjects[i % subjects.len()];
        let record = serde_json::json!({
            "text": format!("{subject} shares {cue}"),
            "label": label,
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    lines
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = toy_jsonl();
    let (records, summary) =
        format_dataset(raw.as_bytes(), LabelScheme::Canonical, &default_templates(), 42)?;
    println!("training on {} records", summary.total);

    let corpus: String = records
        .iter()
        .map(|record| record.rendered.as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let vocab = train_bpe(corpus.as_bytes(), 400)?;

    let config = TrainConfig {
        batch_size: 4,
        ..TrainConfig::toy(42)
    };
    let (params, curve) = train(&records, &vocab, ModelDims::default(), &config)?;

    println!("\nloss curve:");
    let mut csv = Vec::new();
    write_loss_csv(&curve, None, &mut csv)?;
    print!("{}", String::from_utf8(csv)?);

    let mut saved = Vec::new();
    Checkpoint::from_parts(&params, &vocab, &config, None).save(&mut saved)?;
    println!("\ncheckpoint size: {} bytes", saved.len());

    let restored = Checkpoint::load(BufReader::new(saved.as_slice()))?.into_params(&vocab)?;
    let backend = ToyBackend::new(restored, vocab);
    let completion_params = CompletionParams::default();
    for text in ["elmwood shares rally", "acme shares plunge", "cinder shares flat"] {
        let envelope = PromptEnvelope::new(
            "What is the sentiment of this financial news? Answer negative, neutral, or positive.",
            text,
        );
        let output = backend.complete(&envelope, &completion_params)?;
        println!("{text:<22} -> {output:?}");
    }

    Ok(())
}
