//! Refine a random 16-d table on masked sentences and show which rows moved.

use treehole::corpus::{generate_synthetic, SynthConfig};
use treehole::embed_refine::{corpus_sentences, refine, EmbeddingTable, RefineConfig};
use treehole::lexicon::{select_sentences, Lexicon};

fn main() -> treehole::Result<()> {
    let lexicon = Lexicon::sample();
    let split = generate_synthetic(&SynthConfig::default(), &lexicon, 5)?;
    let sentences = select_sentences(&corpus_sentences(&split.train), &lexicon, 500, 1);
    let table = EmbeddingTable::random_for_corpus(&split, &lexicon, 16, 5)?;
    let config = RefineConfig {
        seed: 5,
        early_stop: false,
        ..RefineConfig::default()
    };
    let (refined, log) = refine(&table, &sentences, &lexicon, &config)?;
    print!("{}", log.to_csv());
    let moved = table
        .tokens()
        .iter()
        .filter(|t| table.vector(t) != refined.vector(t))
        .count();
    println!("{moved} of {} rows changed", table.len());
    Ok(())
}
