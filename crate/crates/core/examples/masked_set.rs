//! Build one epoch of the masked classification set from synthetic posts.

use treehole::corpus::{generate_synthetic, SynthConfig};
use treehole::embed_refine::corpus_sentences;
use treehole::lexicon::{build_masked_set, select_sentences, Lexicon};

fn main() -> treehole::Result<()> {
    let lexicon = Lexicon::sample();
    let config = SynthConfig {
        users_per_class: 10,
        ..SynthConfig::default()
    };
    let split = generate_synthetic(&config, &lexicon, 1)?;
    let sentences = select_sentences(&corpus_sentences(&split.train), &lexicon, 8, 1);
    for ex in build_masked_set(&sentences, &lexicon, 42)? {
        println!("[{}] {}", ex.label, ex.tokens.join(" "));
    }
    Ok(())
}
