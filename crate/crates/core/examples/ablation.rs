//! Train the detector once per input configuration and print the table.

use treehole::corpus::{generate_synthetic, SynthConfig};
use treehole::embed_refine::EmbeddingTable;
use treehole::lexicon::Lexicon;
use treehole::sdm::FeatureScaling;
use treehole::trainer::{run_ablation, TrainConfig};

fn main() -> treehole::Result<()> {
    let lexicon = Lexicon::sample();
    let synth = SynthConfig {
        users_per_class: 100,
        posts_per_user: 12,
        signal: 0.6,
        ..SynthConfig::default()
    };
    let split = generate_synthetic(&synth, &lexicon, 11)?;
    let table = EmbeddingTable::random_for_corpus(&split, &lexicon, 12, 11)?;
    let config = TrainConfig {
        epochs: 15,
        // Raw follower counts swamp a short run; compress them.
        feature_scaling: FeatureScaling::Log1p,
        seed: 11,
        ..TrainConfig::default()
    };
    print!("{}", run_ablation(&split, &table, &config)?.to_table());
    Ok(())
}
