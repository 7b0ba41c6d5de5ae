//! Configures the HTTP completion backend without hardcoding secrets.
//!
//! The credential is named by environment variable, never written to
//! configuration. Without `DEMO_COMPLETIONS_URL` set, the example
//! stops after validation so it stays runnable offline; point it at a
//! live chat-completions endpoint to see a real call.
//!
//! ```text
//! cargo run --example http_backend_setup
//! DEMO_COMPLETIONS_URL=https://api.example.com/v1/chat/completions \
//!     DEMO_API_KEY=sk-... cargo run --example http_backend_setup
//! ```

use std::time::Duration;

use finrag::backend::{
    build_backend, BackendConfig, BackendKind, CompletionParams, PromptEnvelope,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let endpoint = std::env::var("DEMO_COMPLETIONS_URL").ok();
    let config = BackendConfig {
        kind: BackendKind::Http,
        endpoint: endpoint.clone().or(Some("https://api.example.com/v1/chat/completions".into())),
        model_name: Some("sentiment-classifier".into()),
        credential_env: Some("DEMO_API_KEY".into()),
        checkpoint_path: None,
        vocab_path: None,
    };
    config.validate()?;
    println!("backend kind:   {:?}", config.kind);
    println!("endpoint:       {}", config.endpoint.as_deref().unwrap_or("-"));
    println!("credential env: {}", config.credential_env.as_deref().unwrap_or("-"));

    let params = CompletionParams {
        temperature: 0.0,
        max_tokens: 8,
        timeout: Duration::from_secs(10),
        max_retries: 2,
    };
    params.validate()?;
    println!(
        "completion:     temperature {}, max_tokens {}, timeout {:?}, retries {}",
        params.temperature, params.max_tokens, params.timeout, params.max_retries
    );

    let Some(_) = endpoint else {
        println!("\nDEMO_COMPLETIONS_URL is not set; skipping the live request.");
        return Ok(());
    };

    let backend = build_backend(&config)?;
    let envelope = PromptEnvelope::new(
        "What is the sentiment of this financial news? Answer negative, neutral, or positive.",
        "Chipmaker raises full-year guidance on data-center demand.",
    );
    println!("\nprompt: {}", envelope.rendered);
    match backend.complete(&envelope, &params) {
        Ok(output) => println!("completion: {output:?}"),
        Err(err) => println!("request failed: {err}"),
    }
    Ok(())
}
