//! Training, evaluation and the experiment protocols built on them.

mod flat;
mod metrics;

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Label, UserRecord};
use crate::embed_refine::EmbeddingTable;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::neural::{checkpoint, minibatch_step, AdamState, Gradients, ParamStore, CLIP_NORM};
use crate::sdm::{FeatureScaling, InputMask, SdmConfig, SdmModel, SdmOutput, UserInput};

pub use flat::{FlatInput, FlatModel};
pub use metrics::{AttentionTrace, Confusion, EvalReport, Prediction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Sdm,
    FlatLstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Sdm => "sdm",
            ModelKind::FlatLstm => "flat_lstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdm" => Ok(ModelKind::Sdm),
            "flat_lstm" | "flat-lstm" => Ok(ModelKind::FlatLstm),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    pub max_posts_per_user: usize,
    pub global_dim: usize,
    pub mask_pad_attention: bool,
    pub feature_scaling: FeatureScaling,
    pub variant: InputMask,
    /// Token cap of the flat baseline's joined sequence.
    pub flat_max_tokens: usize,
    /// Word vectors in text format; `None` means a seeded random table.
    pub embeddings: Option<PathBuf>,
    /// Width of the random table when `embeddings` is unset.
    pub embedding_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Sdm,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            clip_norm: Some(CLIP_NORM),
            max_posts_per_user: 100,
            global_dim: 30,
            mask_pad_attention: false,
            feature_scaling: FeatureScaling::Raw,
            variant: InputMask::ALL,
            flat_max_tokens: 400,
            embeddings: None,
            embedding_dim: 300,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.max_posts_per_user == 0 || self.global_dim == 0 || self.flat_max_tokens == 0 {
            return Err(Error::Config(
                "max_posts_per_user, global_dim and flat_max_tokens must be positive".into(),
            ));
        }
        if !self.variant.text {
            return Err(Error::Config("the text channel cannot be switched off".into()));
        }
        Ok(())
    }

    pub fn sdm_config(&self, dim: usize) -> SdmConfig {
        SdmConfig {
            dim,
            global_dim: self.global_dim,
            mask_pad_attention: self.mask_pad_attention,
            feature_scaling: self.feature_scaling,
            max_posts: self.max_posts_per_user,
        }
    }

    /// The configured embedding table, or a random one over the corpus
    /// vocabulary seeded from `seed`.
    pub fn embedding_table(&self, split: &CorpusSplit, lexicon: &Lexicon) -> Result<EmbeddingTable> {
        match &self.embeddings {
            Some(path) => EmbeddingTable::load_pretrained(path, self.seed),
            None => EmbeddingTable::random_for_corpus(split, lexicon, self.embedding_dim, self.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Sdm(SdmModel),
    Flat(FlatModel),
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: ModelKind,
    pad_len: usize,
    sdm: Option<SdmConfig>,
    flat_max_tokens: Option<usize>,
}

impl Model {
    /// Freshly initialised model for `split`; the padded post length is the
    /// longest visible post in the corpus.
    pub fn init(config: &TrainConfig, split: &CorpusSplit, table: &EmbeddingTable) -> Result<Self> {
        config.validate()?;
        match config.model {
            ModelKind::Sdm => {
                let pad_len = split.max_post_len().max(1);
                Ok(Model::Sdm(SdmModel::new(config.sdm_config(table.dim()), pad_len, config.seed)?))
            }
            ModelKind::FlatLstm => Ok(Model::Flat(FlatModel::new(table.dim(), config.flat_max_tokens, config.seed)?)),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Sdm(_) => ModelKind::Sdm,
            Model::Flat(_) => ModelKind::FlatLstm,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Model::Sdm(m) => &m.store,
            Model::Flat(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Sdm(m) => &mut m.store,
            Model::Flat(m) => &mut m.store,
        }
    }

    /// The flat baseline ignores everything but the text mask check.
    pub fn classify(&self, table: &EmbeddingTable, user: &UserRecord, mask: InputMask) -> Result<SdmOutput> {
        match self {
            Model::Sdm(m) => m.ablation_variant(table, user, mask),
            Model::Flat(m) => {
                if !mask.text {
                    return Err(Error::Config("the text channel cannot be switched off".into()));
                }
                m.run(table, &m.prepare(table, user)?)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let meta = match self {
            Model::Sdm(m) => ModelMeta {
                kind: ModelKind::Sdm,
                pad_len: m.pad_len,
                sdm: Some(m.config.clone()),
                flat_max_tokens: None,
            },
            Model::Flat(m) => ModelMeta {
                kind: ModelKind::FlatLstm,
                pad_len: 0,
                sdm: None,
                flat_max_tokens: Some(m.max_tokens),
            },
        };
        checkpoint::to_json_with_meta(self.store(), Some(serde_json::to_value(meta)?))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (store, meta) = checkpoint::from_json_with_meta(text)?;
        let meta: ModelMeta = serde_json::from_value(
            meta.ok_or_else(|| Error::Invalid("checkpoint has no model description".into()))?,
        )?;
        match (meta.kind, meta.sdm, meta.flat_max_tokens) {
            (ModelKind::Sdm, Some(config), _) => Ok(Model::Sdm(SdmModel::from_parts(config, meta.pad_len, store)?)),
            (ModelKind::FlatLstm, _, Some(max_tokens)) => Ok(Model::Flat(FlatModel::from_parts(max_tokens, store)?)),
            _ => Err(Error::Invalid("incomplete model description".into())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

enum Prepared {
    Sdm(UserInput),
    Flat(FlatInput),
}

impl Prepared {
    fn label(&self) -> Label {
        match self {
            Prepared::Sdm(i) => i.label,
            Prepared::Flat(i) => i.label,
        }
    }
}

fn prepare(model: &Model, table: &EmbeddingTable, user: &UserRecord, mask: InputMask) -> Result<Prepared> {
    match model {
        Model::Sdm(m) => m.prepare(table, user, mask).map(Prepared::Sdm),
        Model::Flat(m) => m.prepare(table, user).map(Prepared::Flat),
    }
}

fn gradients(
    model: &Model,
    store: &ParamStore,
    table: &EmbeddingTable,
    input: &Prepared,
) -> Result<(f64, Gradients, [f64; 2])> {
    match (model, input) {
        (Model::Sdm(m), Prepared::Sdm(i)) => m.example_gradients(store, table, i),
        (Model::Flat(m), Prepared::Flat(i)) => m.example_gradients(store, table, i),
        _ => unreachable!("inputs are prepared for the model they are used with"),
    }
}

fn decide(probs: [f64; 2]) -> Label {
    if probs[0] > probs[1] {
        Label::AtRisk
    } else {
        Label::NotAtRisk
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<TrainEpoch>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    /// `epoch,loss,train_accuracy,validation_accuracy`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_accuracy,validation_accuracy\n");
        for e in &self.epochs {
            let val = e.validation_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default();
            writeln!(out, "{},{:.6},{:.6},{val}", e.epoch, e.loss, e.train_accuracy).expect("String write");
        }
        out
    }
}

/// Trains on `split.train`, keeping the parameters of the epoch with the
/// best validation accuracy (earliest on ties). Without a validation part
/// the final epoch is kept.
pub fn train(split: &CorpusSplit, table: &EmbeddingTable, config: &TrainConfig) -> Result<(Model, TrainLog)> {
    let model = Model::init(config, split, table)?;
    train_model(model, split, table, config)
}

/// Continues training an existing model.
pub fn train_model(
    mut model: Model,
    split: &CorpusSplit,
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok((model, log));
    }
    let mask = config.variant;
    let inputs: Vec<Prepared> = split
        .train
        .iter()
        .map(|u| prepare(&model, table, u, mask))
        .collect::<Result<_>>()?;

    let mut store = std::mem::take(model.store_mut());
    let mut adam = AdamState::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_7EA1);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut best: Option<(f64, ParamStore)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &inputs[i]).collect();
            let step = minibatch_step(
                &mut store,
                &mut adam,
                &batch,
                config.clip_norm,
                |s, input| {
                    let (loss, grads, probs) = gradients(&model, s, table, input)?;
                    Ok((loss, grads, decide(probs) == input.label()))
                },
                |_| {},
            );
            let (loss, hits) = step.map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("epoch {epoch}: {what}")),
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
            correct += hits.into_iter().filter(|&h| h).count();
        }

        let validation_accuracy = if split.validation.is_empty() {
            None
        } else {
            std::mem::swap(model.store_mut(), &mut store);
            let acc = evaluate(&model, table, &split.validation, mask).map(|r| r.accuracy);
            std::mem::swap(model.store_mut(), &mut store);
            Some(acc?)
        };
        let stats = TrainEpoch {
            epoch,
            loss: loss_sum / inputs.len() as f64,
            train_accuracy: correct as f64 / inputs.len() as f64,
            validation_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {}",
            stats.loss,
            stats.train_accuracy,
            validation_accuracy.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        log.epochs.push(stats);
        match (validation_accuracy, &best) {
            (Some(v), Some((b, _))) if v <= *b => {}
            (Some(v), _) => {
                best = Some((v, store.clone()));
                log.best_epoch = Some(epoch);
            }
            (None, _) => log.best_epoch = Some(epoch),
        }
    }

    *model.store_mut() = match best {
        Some((_, s)) => s,
        None => store,
    };
    Ok((model, log))
}

/// Metrics and traces over `users`, computed in parallel but reported in
/// input order.
pub fn evaluate(model: &Model, table: &EmbeddingTable, users: &[UserRecord], mask: InputMask) -> Result<EvalReport> {
    if users.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty user set".into()));
    }
    let outputs: Vec<SdmOutput> = users
        .par_iter()
        .map(|u| model.classify(table, u, mask))
        .collect::<Result<_>>()?;
    let mut predictions = Vec::with_capacity(users.len());
    let mut traces = Vec::with_capacity(users.len());
    for (u, out) in users.iter().zip(outputs) {
        predictions.push(Prediction {
            user_id: u.user_id.clone(),
            label: u.label().as_u8(),
            y1: out.y1,
            y0: out.y0,
            predicted: out.decision().as_u8(),
        });
        traces.push(AttentionTrace {
            user_id: u.user_id.clone(),
            post_attention: out.post_attention,
            word_attention: out.word_attention,
        });
    }
    Ok(EvalReport::from_outputs(predictions, traces))
}

/// At-risk users whose visible posts contain at most `threshold` lexicon
/// hits in total. A lexicon proxy for "no obvious ideation in normal posts".
pub fn harder_subset(users: &[UserRecord], lexicon: &Lexicon, threshold: usize) -> Vec<UserRecord> {
    users
        .iter()
        .filter(|u| u.label() == Label::AtRisk)
        .filter(|u| u.posts().iter().map(|p| lexicon.count_hits(p.tokens())).sum::<usize>() <= threshold)
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: InputMask,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// `variant,accuracy,f1`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,accuracy,f1\n");
        for r in &self.rows {
            writeln!(out, "\"{}\",{:.6},{:.6}", r.variant.label(), r.report.accuracy, r.report.f1)
                .expect("String write");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<28} {:>8} {:>8}\n", "Input", "Acc(%)", "F1(%)");
        for r in &self.rows {
            writeln!(
                out,
                "{:<28} {:>8.2} {:>8.2}",
                r.variant.label(),
                100.0 * r.report.accuracy,
                100.0 * r.report.f1
            )
            .expect("String write");
        }
        out
    }
}

/// Trains and tests the SDM once per ablation row, each from the same seed.
pub fn run_ablation(split: &CorpusSplit, table: &EmbeddingTable, config: &TrainConfig) -> Result<AblationReport> {
    if split.test.is_empty() {
        return Err(Error::Invalid("ablation needs a test split".into()));
    }
    let mut rows = Vec::with_capacity(InputMask::ABLATIONS.len());
    for variant in InputMask::ABLATIONS {
        let cfg = TrainConfig {
            model: ModelKind::Sdm,
            variant,
            ..config.clone()
        };
        let (model, _) = train(split, table, &cfg)?;
        let report = evaluate(&model, table, &split.test, variant)?;
        log::info!("ablation {}: {}", variant.label(), report.summary_line());
        rows.push(AblationRow { variant, report });
    }
    Ok(AblationReport { rows })
}
