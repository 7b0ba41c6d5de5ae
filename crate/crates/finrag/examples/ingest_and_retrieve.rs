//! Ingests knowledge documents and retrieves context for a query.
//!
//! Walks the full retrieval path: noisy query preprocessing, the
//! two-step overlap filter with strict thresholds, and the audit
//! trace that records every candidate score.
//!
//! ```text
//! cargo run --example ingest_and_retrieve
//! ```

use finrag::corpus::{CorpusStore, KnowledgeDoc, SourceKind};
use finrag::retrieval::{
    preprocess_query, retrieve_context, RetrievalOptions, RetrievalTrace,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut store = CorpusStore::in_memory();
    let docs = [
        KnowledgeDoc::new(
            "Energizer analyst call coverage update",
            "Coverage moves tracked across the battery sector.\n\n\
             JPMorgan hikes Energizer Holdings NYSE:ENR to Neutral from Underweight \
             as Energizer shakes off the bear thesis.",
            SourceKind::News,
            None,
            None,
        ),
        KnowledgeDoc::new(
            "JPMorgan models Energizer battery sales",
            "A fresh channel check weighs holiday battery volumes.",
            SourceKind::CentralizedResearch,
            None,
            None,
        ),
        KnowledgeDoc::new(
            "Grain futures drift into the weekend",
            "Wheat and corn settle mixed after a quiet session.",
            SourceKind::News,
            None,
            None,
        ),
    ];
    for doc in docs {
        let id = store.ingest(doc)?;
        println!("ingested {id}");
    }

    let query = preprocess_query(
        "$ENR - Energizer shakes off JPMorgan\u{2019}s bear call. https://t.co/xyz @sometrader",
    );
    println!("\nraw:     {}", query.raw);
    println!("cleaned: {}", query.cleaned);
    println!("tokens:  {:?}", query.tokens);

    let bundle = retrieve_context(&query, &store, &RetrievalOptions::default())?;
    println!("\ncandidate document scores:");
    for (doc_id, score) in &bundle.doc_scores {
        let title = store.get(doc_id).map(|doc| doc.title.as_str()).unwrap_or("?");
        println!("  {score:.4}  {title}");
    }
    println!("\nkept units:");
    for unit in &bundle.units {
        println!("  [{}#{} @ {:.4}] {}", unit.parent_doc_id, unit.unit_index, unit.unit_score, unit.text);
    }

    let trace = RetrievalTrace::new(&query, &bundle, None);
    println!("\naudit trace line:\n{}", serde_json::to_string(&trace)?);

    Ok(())
}
