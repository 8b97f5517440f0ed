//! Domain-oriented refinement of a word-embedding table.
//!
//! A small sentence classifier (LSTM followed by a position-weighted
//! affine read-out) is trained on the lexicon-masked sentence set while
//! gradients also flow into the embedding rows. The classifier is thrown
//! away afterwards; the updated table is the product.

mod table;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pad_to, UserRecord};
use crate::error::{Error, Result};
use crate::lexicon::{build_masked_set, Lexicon, MaskedExample, MASK};
use crate::neural::{
    init_bias, init_weight, minibatch_step, AdamState, Graph, LstmCell, ParamId, ParamStore,
    Var, CLIP_NORM,
};

pub use table::{corpus_vocabulary, EmbeddingTable, SPECIAL_TOKENS, UNK};

/// Output index of "contains suicidal expression" (`k₁`); `k₂` is index 1.
pub fn masked_output_index(label: u8) -> usize {
    if label == 1 {
        0
    } else {
        1
    }
}

/// `[k₁, k₂] = softmax((H·W₁ + b₁)ᵀ·W₂ + b₂)` over LSTM states `H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskedClassifier {
    pub lstm: LstmCell,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub dim: usize,
    pub seq_len: usize,
}

impl MaskedClassifier {
    pub fn new<R: rand::Rng + ?Sized>(store: &mut ParamStore, dim: usize, seq_len: usize, rng: &mut R) -> Self {
        let lstm = LstmCell::new(store, "masked.lstm", dim, dim, rng);
        let w1 = init_weight(store, "masked.w1", dim, 1, rng);
        let b1 = init_bias(store, "masked.b1", 1);
        let w2 = init_weight(store, "masked.w2", seq_len, 2, rng);
        let b2 = init_bias(store, "masked.b2", 2);
        Self {
            lstm,
            w1,
            b1,
            w2,
            b2,
            dim,
            seq_len,
        }
    }

    pub fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        self.lstm.check_shapes(store)?;
        let expect = [
            (self.w1, [self.dim, 1]),
            (self.b1, [1, 1]),
            (self.w2, [self.seq_len, 2]),
            (self.b2, [1, 2]),
        ];
        for (id, shape) in expect {
            if store.get(id).shape() != shape {
                return Err(Error::shape(
                    "masked classifier",
                    format!("{} is {:?}, expected {shape:?}", store.name(id), store.get(id).shape()),
                ));
            }
        }
        Ok(())
    }

    /// Probability vector `[k₁, k₂]` (1 × 2) for embedded tokens `x` (n × d).
    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let [n, _] = g.shape(x);
        if n != self.seq_len {
            return Err(Error::shape(
                "classify_masked",
                format!("sequence length {n}, classifier expects {}", self.seq_len),
            ));
        }
        let h = self.lstm.forward(g, x)?;
        let w1 = g.param(self.w1);
        let b1 = g.param(self.b1);
        let w2 = g.param(self.w2);
        let b2 = g.param(self.b2);
        let scores = g.matmul(h, w1)?;
        let scores = g.add_bias(scores, b1)?;
        let row = g.transpose(scores);
        let logits = g.matmul(row, w2)?;
        let logits = g.add_bias(logits, b2)?;
        g.softmax(logits)
    }
}

/// `(k₁, k₂)` for a padded example.
pub fn classify_masked(
    clf: &MaskedClassifier,
    store: &ParamStore,
    table: &EmbeddingTable,
    example: &MaskedExample,
) -> Result<(f64, f64)> {
    if example.tokens.len() != clf.seq_len {
        return Err(Error::shape(
            "classify_masked",
            format!("example has {} tokens, expected {}", example.tokens.len(), clf.seq_len),
        ));
    }
    let mut g = Graph::new(store);
    let x = g.constant(table.embed(&example.tokens));
    let p = clf.forward(&mut g, x)?;
    let v = g.value(p).data();
    Ok((v[0], v[1]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep the `[mask]` row fixed.
    pub freeze_mask: bool,
    /// Stop once epoch accuracy moves by less than 0.001 for 3 epochs.
    pub early_stop: bool,
    pub clip_norm: Option<f64>,
    /// Number of selected sentences (first qualifying ones in corpus order).
    pub sentences: usize,
    /// Width of the random starting table when no vectors are supplied.
    pub embedding_dim: usize,
    /// Draw a new masked split every epoch. When off, the epoch-1 split is
    /// reused throughout.
    pub resample_masks: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            batch_size: 16,
            seed: 0,
            freeze_mask: false,
            early_stop: true,
            clip_norm: Some(CLIP_NORM),
            sentences: 10_000,
            embedding_dim: 300,
            resample_masks: true,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineLog {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
}

impl RefineLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }

    /// `epoch,loss,accuracy`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy\n");
        for e in &self.epochs {
            writeln!(out, "{},{:.6},{:.6}", e.epoch, e.loss, e.accuracy).expect("String write");
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Token sequences of every visible and hidden post, user by user.
pub fn corpus_sentences(users: &[UserRecord]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    for u in users {
        let hidden = u.hidden_posts().unwrap_or(&[]);
        out.extend(u.posts().iter().chain(hidden).map(|p| p.tokens().to_vec()));
    }
    out
}

/// Seed of the masked split for a given epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

struct Prepared {
    indices: Vec<usize>,
    class: usize,
}

fn prepare(examples: &[MaskedExample], table: &EmbeddingTable, seq_len: usize) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|ex| {
            let padded = pad_to(&ex.tokens, seq_len)?;
            Ok(Prepared {
                indices: table.indices(&padded),
                class: masked_output_index(ex.label),
            })
        })
        .collect()
}

/// Trains the masked classifier jointly with the embedding rows.
///
/// Each epoch draws a fresh masked split of the (fixed) sentence set
/// unless `resample_masks` is off.
/// The returned table differs from `table` only in rows of tokens that
/// occur in the padded training examples.
pub fn refine(
    table: &EmbeddingTable,
    sentences: &[Vec<String>],
    lexicon: &Lexicon,
    config: &RefineConfig,
) -> Result<(EmbeddingTable, RefineLog)> {
    config.validate()?;
    if sentences.is_empty() {
        return Err(Error::Invalid("no sentences to refine on".into()));
    }
    let mut log = RefineLog::default();
    if config.epochs == 0 {
        return Ok((table.clone(), log));
    }
    // Masking can only shorten a sentence; insertion adds two tokens.
    let seq_len = sentences.iter().map(Vec::len).max().unwrap_or(0) + 2;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let emb = store.register("embedding", table.vectors().clone());
    let clf = MaskedClassifier::new(&mut store, table.dim(), seq_len, &mut rng);
    let mut adam = AdamState::new(config.learning_rate);
    let mask_row = table.row_of(MASK);
    let train_embeddings = table.trainable;

    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut flat_epochs = 0;
    for epoch in 0..config.epochs {
        let split_epoch = if config.resample_masks { epoch } else { 0 };
        let masked = build_masked_set(sentences, lexicon, epoch_seed(config.seed, split_epoch))?;
        let prepared = prepare(&masked, table, seq_len)?;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (loss, hits) = minibatch_step(
                &mut store,
                &mut adam,
                &batch,
                config.clip_norm,
                |store, ex| {
                    let mut g = Graph::new(store);
                    let x = g.gather_rows(emb, &ex.indices)?;
                    let p = clf.forward(&mut g, x)?;
                    let loss = g.cross_entropy(p, ex.class)?;
                    let probs = g.value(p).data();
                    let predicted = if probs[0] > probs[1] { 0 } else { 1 };
                    Ok((g.value(loss).data()[0], g.backward(loss)?, predicted == ex.class))
                },
                |grads| {
                    if !train_embeddings {
                        grads.clear(emb);
                    } else if let (true, Some(row), Some(ge)) =
                        (config.freeze_mask, mask_row, grads.get_mut(emb))
                    {
                        ge.row_mut(row).iter_mut().for_each(|v| *v = 0.0);
                    }
                },
            )?;
            loss_sum += loss * batch.len() as f64;
            correct += hits.into_iter().filter(|&c| c).count();
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / sentences.len() as f64,
            accuracy: correct as f64 / sentences.len() as f64,
        };
        log::info!(
            "refine epoch {}: loss {:.4} accuracy {:.4}",
            stats.epoch,
            stats.loss,
            stats.accuracy
        );
        if let Some(prev) = log.epochs.last() {
            if (stats.accuracy - prev.accuracy).abs() < 1e-3 {
                flat_epochs += 1;
            } else {
                flat_epochs = 0;
            }
        }
        log.epochs.push(stats);
        if config.early_stop && flat_epochs >= 3 {
            log.stopped_early = true;
            break;
        }
    }

    let mut refined = table.clone();
    refined.set_vectors(store.get(emb).clone())?;
    Ok((refined, log))
}

/// Mean cross-entropy of the classifier over a fixed masked set.
pub fn masked_loss(
    clf: &MaskedClassifier,
    store: &ParamStore,
    table: &EmbeddingTable,
    examples: &[MaskedExample],
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        let padded = MaskedExample {
            tokens: pad_to(&ex.tokens, clf.seq_len)?,
            label: ex.label,
        };
        let (k1, k2) = classify_masked(clf, store, table, &padded)?;
        total += crate::neural::cross_entropy(&[k1, k2], masked_output_index(ex.label));
    }
    Ok(total / examples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn zero_parameters_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = EmbeddingTable::random(["a", "b"], 3, 1).unwrap();
        let mut store = ParamStore::new();
        let clf = MaskedClassifier::new(&mut store, 3, 4, &mut rng);
        store.zero_all();
        let ex = MaskedExample {
            tokens: toks("a b [mask] <PAD>"),
            label: 1,
        };
        assert_eq!(classify_masked(&clf, &store, &table, &ex).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn wrong_length_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = EmbeddingTable::random(["a"], 2, 1).unwrap();
        let mut store = ParamStore::new();
        let clf = MaskedClassifier::new(&mut store, 2, 3, &mut rng);
        let ex = MaskedExample {
            tokens: toks("a a"),
            label: 0,
        };
        assert!(classify_masked(&clf, &store, &table, &ex).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let lex = Lexicon::sample();
        let table = EmbeddingTable::random(["a", "despair"], 4, 1).unwrap();
        let sentences = vec![toks("a despair a")];
        let config = RefineConfig {
            epochs: 0,
            ..RefineConfig::default()
        };
        let (out, log) = refine(&table, &sentences, &lex, &config).unwrap();
        assert_eq!(out, table);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn empty_sentences_rejected() {
        let table = EmbeddingTable::random(["a"], 2, 1).unwrap();
        assert!(refine(&table, &[], &Lexicon::sample(), &RefineConfig::default()).is_err());
    }

    #[test]
    fn frozen_mask_row_is_untouched() {
        let lex = Lexicon::sample();
        let table = EmbeddingTable::random(["a", "b", "despair", "rope"], 4, 3).unwrap();
        let sentences = vec![toks("a despair b"), toks("rope a"), toks("b b despair"), toks("a rope")];
        let config = RefineConfig {
            epochs: 3,
            freeze_mask: true,
            batch_size: 2,
            ..RefineConfig::default()
        };
        let (out, _) = refine(&table, &sentences, &lex, &config).unwrap();
        assert_eq!(out.vector(MASK), table.vector(MASK));
        assert_ne!(out.vector("despair"), table.vector("despair"));
    }
}
