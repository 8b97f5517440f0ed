//! Monthly hit and attention series for users with planted correlations,
//! written as CSV and SVG into a temporary directory.

use treehole::analysis::{correlation_report, series_svg, HitWeighting};
use treehole::corpus::{generate_synthetic, SynthConfig};
use treehole::embed_refine::EmbeddingTable;
use treehole::lexicon::Lexicon;
use treehole::trainer::{train, Model, TrainConfig};

fn main() -> treehole::Result<()> {
    let lexicon = Lexicon::sample();
    let synth = SynthConfig {
        users_per_class: 40,
        posts_per_user: 24,
        planted_rho: vec![0.9, 0.4, -0.5],
        ..SynthConfig::default()
    };
    let split = generate_synthetic(&synth, &lexicon, 9)?;
    let table = EmbeddingTable::random_for_corpus(&split, &lexicon, 12, 9)?;
    let config = TrainConfig {
        epochs: 5,
        seed: 9,
        ..TrainConfig::default()
    };
    let (Model::Sdm(model), _) = train(&split, &table, &config)? else {
        unreachable!("default config trains the attention model");
    };
    let window = synth.window()?;
    let planted = &split.test[..synth.planted_rho.len()];
    let report = correlation_report(planted, &model, &table, &lexicon, &window, HitWeighting::Count)?;
    print!("{}", report.to_table());
    for (u, target) in report.users.iter().zip(&synth.planted_rho) {
        println!("{}: planted {target:+.2}", u.user_id);
    }
    let dir = std::env::temp_dir().join("treehole-analysis");
    std::fs::create_dir_all(&dir).map_err(|e| treehole::Error::Invalid(e.to_string()))?;
    for u in &report.users {
        std::fs::write(dir.join(format!("{}.csv", u.user_id)), u.series_csv(&window))
            .and_then(|_| std::fs::write(dir.join(format!("{}.svg", u.user_id)), series_svg(u, &window)))
            .map_err(|e| treehole::Error::Invalid(e.to_string()))?;
    }
    println!("series written to {}", dir.display());
    Ok(())
}
