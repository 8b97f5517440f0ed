//! Generate a synthetic corpus, train the detector and report test metrics.
//!
//! cargo run --release --example train_sdm -- [signal] [epochs] [raw|log1p] [text|text+image|text+features|full] [refine]

use std::time::Instant;

use treehole::corpus::{generate_synthetic, SynthConfig};
use treehole::embed_refine::{corpus_sentences, refine, EmbeddingTable, RefineConfig};
use treehole::lexicon::{select_sentences, Lexicon};
use treehole::sdm::{FeatureScaling, InputMask};
use treehole::trainer::{evaluate, train, TrainConfig};

fn main() -> treehole::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let signal: f64 = args.first().map_or(1.0, |s| s.parse().expect("signal"));
    let epochs: usize = args.get(1).map_or(20, |s| s.parse().expect("epochs"));
    let scaling = match args.get(2).map(String::as_str) {
        Some("log1p") => FeatureScaling::Log1p,
        _ => FeatureScaling::Raw,
    };
    let variant: InputMask = args.get(3).map_or(Ok(InputMask::ALL), |s| s.parse())?;

    let lexicon = Lexicon::sample();
    let synth = SynthConfig {
        users_per_class: 200,
        posts_per_user: 20,
        signal,
        ..SynthConfig::default()
    };
    let split = generate_synthetic(&synth, &lexicon, 7)?;
    let mut table = EmbeddingTable::random_for_corpus(&split, &lexicon, 16, 7)?;
    if args.get(4).map(String::as_str) == Some("refine") {
        let sentences = select_sentences(&corpus_sentences(&split.train), &lexicon, 10_000, 1);
        let rc = RefineConfig {
            epochs: 30,
            seed: 7,
            ..RefineConfig::default()
        };
        let (refined, rlog) = refine(&table, &sentences, &lexicon, &rc)?;
        println!(
            "refined on {} sentences, final accuracy {:.3}",
            sentences.len(),
            rlog.final_accuracy().unwrap_or(0.0)
        );
        table = refined;
    }
    let config = TrainConfig {
        epochs,
        seed: 7,
        feature_scaling: scaling,
        variant,
        ..TrainConfig::default()
    };

    let start = Instant::now();
    let (model, log) = train(&split, &table, &config)?;
    for e in &log.epochs {
        println!(
            "epoch {:>2}  loss {:.4}  train {:.3}  val {:.3}",
            e.epoch,
            e.loss,
            e.train_accuracy,
            e.validation_accuracy.unwrap_or(f64::NAN)
        );
    }
    let report = evaluate(&model, &table, &split.test, variant)?;
    println!("kept epoch {:?}", log.best_epoch);
    println!("test: {}", report.summary_line());
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
