//! Formats raw labeled sentences into instruction-following records.
//!
//! Demonstrates label canonicalization across input schemes, the
//! deterministic per-record template choice, and the rendered string
//! the language model trains on.
//!
//! ```text
//! cargo run --example format_dataset
//! ```

use finrag::dataset::{default_templates, format_dataset, LabelScheme};

const CANONICAL_JSONL: &str = r#"{"text": "Retail sales rose sharply across the region.", "label": "positive"}
{"text": "The plant closure puts 1,200 jobs at risk.", "label": "negative"}
{"text": "Shares of the company traded in a narrow band.", "label": "neutral"}
{"text": "Guidance came in at the midpoint of the prior range.", "label": 1}
"#;

const MARKET_CHATTER_JSONL: &str = r#"{"text": "$XYZ breaking out of the wedge, loading calls", "label": "Bullish"}
{"text": "$XYZ rejected at resistance again, not great", "label": "Bearish"}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let templates = default_templates();

    let (records, summary) =
        format_dataset(CANONICAL_JSONL.as_bytes(), LabelScheme::Fpb, &templates, 42)?;
    println!(
        "formatted {} records ({} negative, {} neutral, {} positive)\n",
        summary.total, summary.negative, summary.neutral, summary.positive
    );
    for record in &records {
        println!("instruction: {}", record.instruction);
        println!("input:       {}", record.input);
        println!("output:      {}", record.output.word());
        println!("rendered:    {}\n", record.rendered);
    }

    let (records, _) = format_dataset(
        MARKET_CHATTER_JSONL.as_bytes(),
        LabelScheme::Twitter,
        &templates,
        42,
    )?;
    println!("market-chatter labels map onto the canonical vocabulary:");
    for record in &records {
        println!("  {:?} -> {}", record.input, record.output.word());
    }

    Ok(())
}
