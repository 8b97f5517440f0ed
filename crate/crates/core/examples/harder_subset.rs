//! Evaluate a trained detector on at-risk users whose visible posts carry
//! no lexicon phrase at all.

use treehole::corpus::{generate_synthetic, SynthConfig};
use treehole::embed_refine::EmbeddingTable;
use treehole::lexicon::Lexicon;
use treehole::sdm::{FeatureScaling, InputMask};
use treehole::trainer::{evaluate, harder_subset, train, TrainConfig};

fn main() -> treehole::Result<()> {
    let lexicon = Lexicon::sample();
    let synth = SynthConfig {
        users_per_class: 80,
        posts_per_user: 6,
        signal: 0.5,
        ..SynthConfig::default()
    };
    let split = generate_synthetic(&synth, &lexicon, 2)?;
    let table = EmbeddingTable::random_for_corpus(&split, &lexicon, 12, 2)?;
    let config = TrainConfig {
        epochs: 10,
        feature_scaling: FeatureScaling::Log1p,
        seed: 2,
        ..TrainConfig::default()
    };
    let (model, _) = train(&split, &table, &config)?;
    println!("full test set: {}", evaluate(&model, &table, &split.test, InputMask::ALL)?.summary_line());
    let subset = harder_subset(&split.test, &lexicon, 0);
    if subset.is_empty() {
        println!("no test user lacks lexicon evidence");
    } else {
        println!(
            "harder subset ({} users): {}",
            subset.len(),
            evaluate(&model, &table, &subset, InputMask::ALL)?.summary_line()
        );
    }
    Ok(())
}
