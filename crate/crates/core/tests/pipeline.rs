//! Training-level checks on small synthetic corpora.

use treehole::corpus::{generate_synthetic, CorpusSplit, Label, SynthConfig, UserRecord};
use treehole::embed_refine::{corpus_sentences, refine, EmbeddingTable, RefineConfig};
use treehole::lexicon::{select_sentences, Lexicon, MASK};
use treehole::sdm::{FeatureScaling, InputMask};
use treehole::trainer::{evaluate, harder_subset, run_ablation, train, TrainConfig};

fn corpus(users: usize, posts: usize, signal: f64, seed: u64) -> CorpusSplit {
    let config = SynthConfig {
        users_per_class: users,
        posts_per_user: posts,
        signal,
        ..SynthConfig::default()
    };
    generate_synthetic(&config, &Lexicon::sample(), seed).unwrap()
}

fn small_train(variant: InputMask) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 4,
        global_dim: 5,
        feature_scaling: FeatureScaling::Log1p,
        variant,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn image_off_equals_image_stripped_corpus() {
    let lex = Lexicon::sample();
    let split = corpus(10, 6, 0.8, 1);
    let stripped = split.without_images();
    assert!(split.iter().any(|(_, u)| u.posts().iter().any(|p| p.has_image())));
    let table = EmbeddingTable::random_for_corpus(&split, &lex, 6, 2).unwrap();

    for user_features in [false, true] {
        let off = InputMask { text: true, image: false, user_features };
        let on = InputMask { image: true, ..off };
        let (a, log_a) = train(&split, &table, &small_train(off)).unwrap();
        let (b, log_b) = train(&stripped, &table, &small_train(on)).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        let ra = evaluate(&a, &table, &split.test, off).unwrap();
        let rb = evaluate(&b, &table, &stripped.test, on).unwrap();
        assert_eq!(ra, rb);
    }
}

/// Leftmost-longest phrase scan, written out directly.
fn brute_force_hits(tokens: &[String], lex: &Lexicon) -> usize {
    let mut count = 0;
    let mut i = 0;
    while i < tokens.len() {
        let longest = lex
            .entries()
            .iter()
            .map(|e| &e.phrase)
            .filter(|p| tokens.len() - i >= p.len() && tokens[i..i + p.len()] == p[..])
            .map(Vec::len)
            .max();
        match longest {
            Some(len) => {
                count += 1;
                i += len;
            }
            None => i += 1,
        }
    }
    count
}

fn brute_force_harder(users: &[UserRecord], lex: &Lexicon, threshold: usize) -> usize {
    let mut n = 0;
    for u in users {
        if u.label() != Label::AtRisk {
            continue;
        }
        let mut total = 0;
        for p in u.posts() {
            total += brute_force_hits(p.tokens(), lex);
        }
        if total <= threshold {
            n += 1;
        }
    }
    n
}

#[test]
fn harder_subset_matches_brute_force_and_evaluates() {
    let lex = Lexicon::sample();
    let split = corpus(60, 10, 0.4, 3);
    let mut seen_nonempty = false;
    for threshold in 0..6 {
        let subset = harder_subset(&split.test, &lex, threshold);
        assert_eq!(subset.len(), brute_force_harder(&split.test, &lex, threshold), "threshold {threshold}");
        assert!(subset.iter().all(|u| u.label() == Label::AtRisk));
        seen_nonempty |= !subset.is_empty();
    }
    assert!(seen_nonempty);
    let table = EmbeddingTable::random_for_corpus(&split, &lex, 6, 3).unwrap();
    let (model, _) = train(&split, &table, &small_train(InputMask::ALL)).unwrap();
    let subset = harder_subset(&split.test, &lex, 5);
    let report = evaluate(&model, &table, &subset, InputMask::ALL).unwrap();
    assert_eq!(report.confusion.total(), subset.len());
    assert_eq!(report.confusion.fp + report.confusion.tn, 0);
}

#[test]
fn ablation_rows_come_from_one_seed() {
    let lex = Lexicon::sample();
    let split = corpus(8, 5, 1.0, 4);
    let table = EmbeddingTable::random_for_corpus(&split, &lex, 4, 4).unwrap();
    let config = small_train(InputMask::ALL);
    let report = run_ablation(&split, &table, &config).unwrap();
    let labels: Vec<_> = report.rows.iter().map(|r| r.variant.label()).collect();
    assert_eq!(
        labels,
        ["Text", "Text+Image", "Text+User's feature", "Text+Image+User's feature"]
    );
    assert_eq!(report, run_ablation(&split, &table, &config).unwrap());
    let text_only = report.rows[0].report.clone();
    let (m, _) = train(&split, &table, &TrainConfig { variant: InputMask::ABLATIONS[0], ..config }).unwrap();
    assert_eq!(evaluate(&m, &table, &split.test, InputMask::ABLATIONS[0]).unwrap(), text_only);
}

fn refine_sentences(signal: f64, seed: u64, k: usize) -> (Vec<Vec<String>>, EmbeddingTable) {
    let lex = Lexicon::sample();
    let split = corpus(60, 20, signal, seed);
    let sentences = select_sentences(&corpus_sentences(&split.train), &lex, k, 1);
    assert_eq!(sentences.len(), k);
    let table = EmbeddingTable::random_for_corpus(&split, &lex, 8, seed).unwrap();
    (sentences, table)
}

#[test]
fn fixed_masked_set_loss_does_not_increase() {
    let lex = Lexicon::sample();
    let mut monotone = 0;
    let runs = 10;
    for seed in 0..runs as u64 {
        let (sentences, table) = refine_sentences(1.0, 100 + seed, 200);
        let config = RefineConfig {
            epochs: 10,
            learning_rate: 1e-3,
            seed,
            early_stop: false,
            resample_masks: false,
            ..RefineConfig::default()
        };
        let (_, log) = refine(&table, &sentences, &lex, &config).unwrap();
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.loss).collect();
        let ok = losses.windows(2).all(|w| w[1] <= w[0]);
        println!("seed {seed}: {} {losses:.4?}", if ok { "monotone" } else { "not monotone" });
        monotone += ok as usize;
    }
    assert!(monotone * 10 >= runs * 9, "{monotone} of {runs} runs non-increasing");
}

fn with_zero_mask_row(table: &EmbeddingTable) -> EmbeddingTable {
    let rows = table
        .tokens()
        .iter()
        .map(|t| {
            let v = if t == MASK { vec![0.0; table.dim()] } else { table.vector(t).to_vec() };
            (t.clone(), v)
        })
        .collect();
    EmbeddingTable::from_rows(rows, table.dim(), 0).unwrap()
}

fn zero_signal_mask_frozen_accuracy() -> f64 {
    let lex = Lexicon::sample();
    let (sentences, table) = refine_sentences(0.0, 7, 300);
    let table = with_zero_mask_row(&table);
    let config = RefineConfig {
        epochs: 15,
        seed: 7,
        freeze_mask: true,
        early_stop: false,
        ..RefineConfig::default()
    };
    let (refined, log) = refine(&table, &sentences, &lex, &config).unwrap();
    assert!(refined.vector(MASK).iter().all(|v| *v == 0.0));
    log.final_accuracy().unwrap()
}

/// Even at s = 0 every selected sentence carries a phrase, and the phrase
/// tokens survive only in label-1 examples, so the task stays learnable
/// with the `[mask]` row pinned at zero.
#[test]
fn zero_mask_row_at_zero_signal_still_separates() {
    let acc = zero_signal_mask_frozen_accuracy();
    println!("final accuracy with [mask] pinned at zero, s = 0: {acc:.3}");
    assert!(acc > 0.7, "{acc}");
}

#[test]
#[ignore = "unsatisfiable as stated: lexicon tokens themselves separate the masked classes at any signal level"]
fn zero_mask_row_at_zero_signal_is_at_chance() {
    let acc = zero_signal_mask_frozen_accuracy();
    assert!((0.45..=0.55).contains(&acc), "{acc}");
}
