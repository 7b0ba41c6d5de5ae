//! Trains a byte-pair vocabulary and walks through its guarantees.
//!
//! Shows merge learning on a small corpus, lossless roundtrips on
//! text the trainer never saw, and the content hash that ties a
//! checkpoint to the exact vocabulary it was trained with.
//!
//! ```text
//! cargo run --example train_tokenizer
//! ```

use finrag::bpe::train_bpe;

const CORPUS: &str = "\
JPMorgan upgrades Energizer Holdings to Neutral from Underweight.
Energizer Holdings shakes off the bear thesis on battery demand.
Battery demand steadies as Energizer guidance holds the midpoint.
Analysts see battery margins holding through the seasonal slowdown.
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = train_bpe(CORPUS.as_bytes(), 320)?;
    println!("vocabulary size: {} (256 bytes + {} merges)", vocab.size(), vocab.merges().len());
    println!("content hash:    {}\n", vocab.content_hash());

    println!("first learned merges:");
    for rule in vocab.merges().iter().take(8) {
        println!(
            "  rank {:>2}: {:?} + {:?} -> {:?}",
            rule.rank,
            String::from_utf8_lossy(&rule.left),
            String::from_utf8_lossy(&rule.right),
            String::from_utf8_lossy(&rule.merged()),
        );
    }

    let sentence = "Energizer battery guidance";
    let ids = vocab.encode(sentence);
    println!("\nencoding {sentence:?} -> {} tokens", ids.len());
    for &id in &ids {
        let bytes = vocab.token(id).unwrap_or_default();
        println!("  {id:>4} {:?}", String::from_utf8_lossy(bytes));
    }

    let unseen = "totally nëw ¥ symbols, even 日本語 and 🚀, roundtrip";
    let back = vocab.decode(&vocab.encode(unseen))?;
    assert_eq!(back, unseen);
    println!("\nunseen text roundtrips byte for byte: {unseen:?}");

    Ok(())
}
