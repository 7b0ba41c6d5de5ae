//! Scores the same headlines with and without retrieved context.
//!
//! The headlines carry no sentiment cues of their own, so the scripted
//! mock backend can only call them neutral. Retrieval pulls in
//! knowledge units that do carry cues, and the report shows the lift.
//!
//! ```text
//! cargo run --example compare_retrieval_eval
//! ```

use finrag::backend::MockBackend;
use finrag::corpus::{CorpusStore, KnowledgeDoc, SourceKind};
use finrag::dataset::{default_templates, format_dataset, LabelScheme};
use finrag::eval::{render_report, run_eval, EvalPipeline, NamedReport, ReportFormat};

const HEADLINES: &str = r#"{"text": "arley holds quarterly outlook briefing on metals and shipping", "label": "positive"}
{"text": "bexford holds seasonal inventory briefing on guidance and margins", "label": "negative"}
{"text": "calder holds logistics factory briefing on quarterly and outlook", "label": "neutral"}
{"text": "dorset holds metals shipping briefing on seasonal and inventory", "label": "positive"}
{"text": "eastvale holds guidance margins briefing on logistics and factory", "label": "negative"}
{"text": "farrow holds outlook briefing on desk inventory and shipping", "label": "neutral"}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (records, _) = format_dataset(
        HEADLINES.as_bytes(),
        LabelScheme::Canonical,
        &default_templates(),
        7,
    )?;

    let mut store = CorpusStore::in_memory();
    let knowledge = [
        ("arley quarterly outlook metals shipping upgrade",
         "The arley quarterly outlook was metals shipping and upgrade."),
        ("bexford seasonal inventory guidance margins downgrade",
         "The bexford seasonal inventory was guidance margins and downgrade."),
        ("dorset metals shipping seasonal inventory beat",
         "The dorset metals shipping was seasonal inventory and beat."),
        ("eastvale guidance margins logistics factory miss",
         "The eastvale guidance margins was logistics factory and miss."),
    ];
    for (title, body) in knowledge {
        store.ingest(KnowledgeDoc::new(title, body, SourceKind::News, None, None))?;
    }

    let backend = MockBackend;
    let plain = EvalPipeline::direct(&backend);
    let (report_off, _) = run_eval(&records, &plain)?;

    let mut with_context = EvalPipeline::direct(&backend);
    with_context.rag = true;
    with_context.store = Some(&store);
    let (report_on, predictions) = run_eval(&records, &with_context)?;

    for prediction in &predictions {
        println!(
            "record {}: retrieved {} units, output {:?}, gold {}",
            prediction.record_id,
            prediction.bundle_size,
            prediction.raw_output,
            prediction.gold.word(),
        );
    }

    let reports = [
        NamedReport { name: "without retrieval".to_string(), report: report_off },
        NamedReport { name: "with retrieval".to_string(), report: report_on },
    ];
    println!("\n{}", render_report(&reports, ReportFormat::Markdown));
    Ok(())
}
