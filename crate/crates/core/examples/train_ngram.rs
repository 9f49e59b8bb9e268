//! Trains a character n-gram model on the bundled parentheses corpus,
//! saves it and reloads it.
//!
//! `cargo run --example train_ngram`

use constrained_smc::instances::PARENS_CORPUS;
use constrained_smc::lm::{NgramModel, NgramTrainer};
use constrained_smc::LanguageModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = NgramTrainer::new(3, 0.5).train(PARENS_CORPUS.as_bytes())?;
    println!("vocabulary: {} ids", model.vocabulary().len());
    println!("training perplexity: {:.4}", model.perplexity(PARENS_CORPUS.as_bytes())?);

    let dir = std::env::temp_dir().join("csmc-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("parens-3gram.json");
    model.save(&path)?;
    let loaded = NgramModel::load(&path)?;

    let context = loaded.encode(b"((").expect("in alphabet");
    let dist = loaded.next_distribution(&context)?;
    for (id, bytes) in loaded.vocabulary().iter() {
        println!("p({:?} | \"((\") = {:.4}", String::from_utf8_lossy(bytes), dist.prob(id));
    }
    println!("p(EOS | \"((\") = {:.4}", dist.prob(loaded.vocabulary().eos()));
    println!("saved to {}", path.display());
    Ok(())
}
