//! Hierarchical user classifier: word-level attention inside each post,
//! a learned projection of the post's image features, post-level attention
//! across the user's recent posts, and fusion with profile features.

mod features;
mod image;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{pad_to, Label, UserRecord, IMAGE_FEATURE_DIM};
use crate::embed_refine::EmbeddingTable;
use crate::error::{Error, Result};
use crate::neural::{init_bias, init_weight, Gradients, Graph, LstmCell, ParamId, ParamStore, Tensor, Var};

pub use features::{extract_features, FeatureScaling, UserFeatures, FEATURE_DIM};
pub use image::{ImageEncoder, ProjectionEncoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdmConfig {
    /// Embedding width `d_e`; also the hidden width of both LSTMs.
    pub dim: usize,
    /// Width `g` of the global user representation.
    pub global_dim: usize,
    /// Restrict word attention to real tokens instead of all padded slots.
    pub mask_pad_attention: bool,
    pub feature_scaling: FeatureScaling,
    pub max_posts: usize,
}

impl Default for SdmConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            global_dim: 30,
            mask_pad_attention: false,
            feature_scaling: FeatureScaling::Raw,
            max_posts: 100,
        }
    }
}

impl SdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.global_dim == 0 || self.max_posts == 0 {
            return Err(Error::Config("dim, global_dim and max_posts must be positive".into()));
        }
        Ok(())
    }
}

/// Which inputs reach the model. Text is mandatory. Serialised as its
/// short key (`text`, `text+image`, `text+features`, `full`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct InputMask {
    pub text: bool,
    pub image: bool,
    pub user_features: bool,
}

impl InputMask {
    pub const ALL: InputMask = InputMask {
        text: true,
        image: true,
        user_features: true,
    };

    /// The four ablation rows, smallest first.
    pub const ABLATIONS: [InputMask; 4] = [
        InputMask {
            text: true,
            image: false,
            user_features: false,
        },
        InputMask {
            text: true,
            image: true,
            user_features: false,
        },
        InputMask {
            text: true,
            image: false,
            user_features: true,
        },
        InputMask::ALL,
    ];

    pub fn label(self) -> &'static str {
        match (self.image, self.user_features) {
            (false, false) => "Text",
            (true, false) => "Text+Image",
            (false, true) => "Text+User's feature",
            (true, true) => "Text+Image+User's feature",
        }
    }

    /// Short name used on the command line.
    pub fn key(self) -> &'static str {
        match (self.image, self.user_features) {
            (false, false) => "text",
            (true, false) => "text+image",
            (false, true) => "text+features",
            (true, true) => "full",
        }
    }
}

impl Default for InputMask {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for InputMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for InputMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ABLATIONS
            .into_iter()
            .find(|m| m.key() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected one of text, text+image, text+features, full"
                ))
            })
    }
}

impl TryFrom<String> for InputMask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InputMask> for String {
    fn from(m: InputMask) -> String {
        m.key().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SdmParams {
    pub word_lstm: LstmCell,
    pub w3: ParamId,
    pub b3: ParamId,
    pub w4: ParamId,
    pub b4: ParamId,
    pub post_lstm: LstmCell,
    pub w5: ParamId,
    pub b5: ParamId,
    pub w6: ParamId,
    pub b6: ParamId,
    pub w7: ParamId,
    pub b7: ParamId,
}

impl SdmParams {
    pub fn new<R: rand::Rng + ?Sized>(store: &mut ParamStore, config: &SdmConfig, rng: &mut R) -> Self {
        let (d, g) = (config.dim, config.global_dim);
        let word_lstm = LstmCell::new(store, "sdm.word_lstm", d, d, rng);
        let w3 = init_weight(store, "sdm.w3", d, 1, rng);
        let b3 = init_bias(store, "sdm.b3", 1);
        let w4 = init_weight(store, "sdm.w4", IMAGE_FEATURE_DIM, d, rng);
        let b4 = init_bias(store, "sdm.b4", d);
        let post_lstm = LstmCell::new(store, "sdm.post_lstm", 2 * d, d, rng);
        let w5 = init_weight(store, "sdm.w5", d, 1, rng);
        let b5 = init_bias(store, "sdm.b5", 1);
        let w6 = init_weight(store, "sdm.w6", d, g, rng);
        let b6 = init_bias(store, "sdm.b6", g);
        let w7 = init_weight(store, "sdm.w7", g + FEATURE_DIM, 2, rng);
        let b7 = init_bias(store, "sdm.b7", 2);
        Self {
            word_lstm,
            w3,
            b3,
            w4,
            b4,
            post_lstm,
            w5,
            b5,
            w6,
            b6,
            w7,
            b7,
        }
    }

    /// Looks the parameters up by name, as registered by [`SdmParams::new`].
    pub fn find(store: &ParamStore) -> Result<Self> {
        let id = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks tensor {name:?}")))
        };
        let lstm = |prefix: &str| -> Result<LstmCell> {
            let w_input = id(&format!("{prefix}.w_input"))?;
            let w_hidden = id(&format!("{prefix}.w_hidden"))?;
            let bias = id(&format!("{prefix}.bias"))?;
            let [input_size, four_h] = store.get(w_input).shape();
            Ok(LstmCell {
                input_size,
                hidden_size: four_h / 4,
                w_input,
                w_hidden,
                bias,
            })
        };
        Ok(Self {
            word_lstm: lstm("sdm.word_lstm")?,
            w3: id("sdm.w3")?,
            b3: id("sdm.b3")?,
            w4: id("sdm.w4")?,
            b4: id("sdm.b4")?,
            post_lstm: lstm("sdm.post_lstm")?,
            w5: id("sdm.w5")?,
            b5: id("sdm.b5")?,
            w6: id("sdm.w6")?,
            b6: id("sdm.b6")?,
            w7: id("sdm.w7")?,
            b7: id("sdm.b7")?,
        })
    }

    pub fn check_shapes(&self, store: &ParamStore, config: &SdmConfig) -> Result<()> {
        let (d, g) = (config.dim, config.global_dim);
        self.word_lstm.check_shapes(store)?;
        self.post_lstm.check_shapes(store)?;
        if self.word_lstm.input_size != d || self.post_lstm.input_size != 2 * d {
            return Err(Error::shape("sdm", "LSTM widths do not match the configured dim"));
        }
        let expect = [
            (self.w3, [d, 1]),
            (self.b3, [1, 1]),
            (self.w4, [IMAGE_FEATURE_DIM, d]),
            (self.b4, [1, d]),
            (self.w5, [d, 1]),
            (self.b5, [1, 1]),
            (self.w6, [d, g]),
            (self.b6, [1, g]),
            (self.w7, [g + FEATURE_DIM, 2]),
            (self.b7, [1, 2]),
        ];
        for (id, shape) in expect {
            if store.get(id).shape() != shape {
                return Err(Error::shape(
                    "sdm",
                    format!("{} is {:?}, expected {shape:?}", store.name(id), store.get(id).shape()),
                ));
            }
        }
        Ok(())
    }

    /// Word attention over one post. `x` is the `n × d` embedded, padded
    /// post; `real_len` restricts attention to the first tokens when set.
    /// Returns `(Ĥ (1×d), Att_I (1×n or 1×real_len))`.
    pub fn encode_post_text(&self, g: &mut Graph<'_>, x: Var, real_len: Option<usize>) -> Result<(Var, Var)> {
        // The LSTM is causal, so states over a prefix equal the prefix of
        // the states over the whole padded sequence.
        let x = match real_len {
            Some(k) => {
                let xt = g.transpose(x);
                let xt = g.slice_cols(xt, 0, k)?;
                g.transpose(xt)
            }
            None => x,
        };
        let h = self.word_lstm.forward(g, x)?;
        let w3 = g.param(self.w3);
        let b3 = g.param(self.b3);
        let scores = g.matmul(h, w3)?;
        let scores = g.add_bias(scores, b3)?;
        let scores = g.transpose(scores);
        let att = g.softmax(scores)?;
        let hhat = g.matmul(att, h)?;
        Ok((hhat, att))
    }

    /// `tanh(O·W₄ + b₄)` for an `m × 512` block of image features, with rows
    /// of posts lacking an image zeroed through `present` (`m × d` of 0/1).
    pub fn encode_images(&self, g: &mut Graph<'_>, features: Var, present: Var) -> Result<Var> {
        let w4 = g.param(self.w4);
        let b4 = g.param(self.b4);
        let z = g.matmul(features, w4)?;
        let z = g.add_bias(z, b4)?;
        let i = g.tanh(z);
        g.mul(i, present)
    }

    /// Post-level attention, global projection and output layer.
    /// `e` is `m × 2d`, `f` is `1 × 12`. Returns `([y₁, y₀], Att_II)`.
    pub fn classify_posts(&self, g: &mut Graph<'_>, e: Var, f: Var) -> Result<(Var, Var)> {
        let hg = self.post_lstm.forward(g, e)?;
        let w5 = g.param(self.w5);
        let b5 = g.param(self.b5);
        let scores = g.matmul(hg, w5)?;
        let scores = g.add_bias(scores, b5)?;
        let scores = g.transpose(scores);
        let att = g.softmax(scores)?;
        let pooled = g.matmul(att, hg)?;
        let w6 = g.param(self.w6);
        let b6 = g.param(self.b6);
        let z = g.matmul(pooled, w6)?;
        let z = g.add_bias(z, b6)?;
        let global = g.tanh(z);
        let fused = g.concat_cols(global, f)?;
        let w7 = g.param(self.w7);
        let b7 = g.param(self.b7);
        let logits = g.matmul(fused, w7)?;
        let logits = g.add_bias(logits, b7)?;
        Ok((g.softmax(logits)?, att))
    }
}

/// A user turned into model inputs under a given [`InputMask`].
#[derive(Clone, Debug, PartialEq)]
pub struct UserInput {
    pub label: Label,
    pub post_indices: Vec<Vec<usize>>,
    pub post_lengths: Vec<usize>,
    /// `m × 512` features and `m × d` presence mask; `None` when no post
    /// contributes an image.
    pub images: Option<(Tensor, Tensor)>,
    pub features: UserFeatures,
}

impl UserInput {
    pub fn post_count(&self) -> usize {
        self.post_indices.len()
    }
}

pub struct Forward {
    pub probs: Var,
    pub word_attention: Vec<Var>,
    pub post_attention: Var,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdmOutput {
    pub y1: f64,
    pub y0: f64,
    /// One `n`-vector per classified post (zeros on padding when padding is
    /// excluded from attention).
    pub word_attention: Vec<Vec<f64>>,
    pub post_attention: Vec<f64>,
}

impl SdmOutput {
    /// Arg-max decision; an exact tie goes to not-at-risk.
    pub fn decision(&self) -> Label {
        if self.y1 > self.y0 {
            Label::AtRisk
        } else {
            Label::NotAtRisk
        }
    }
}

/// Parameters plus everything needed to run them.
#[derive(Clone, Debug, PartialEq)]
pub struct SdmModel {
    pub config: SdmConfig,
    /// Run-level padded post length `n`.
    pub pad_len: usize,
    pub params: SdmParams,
    pub store: ParamStore,
}

impl SdmModel {
    pub fn new(config: SdmConfig, pad_len: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if pad_len == 0 {
            return Err(Error::Config("pad_len must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = SdmParams::new(&mut store, &config, &mut rng);
        Ok(Self {
            config,
            pad_len,
            params,
            store,
        })
    }

    pub fn from_parts(config: SdmConfig, pad_len: usize, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let params = SdmParams::find(&store)?;
        params.check_shapes(&store, &config)?;
        Ok(Self {
            config,
            pad_len,
            params,
            store,
        })
    }

    pub fn prepare(&self, table: &EmbeddingTable, user: &UserRecord, mask: InputMask) -> Result<UserInput> {
        if !mask.text {
            return Err(Error::Config("the text channel cannot be switched off".into()));
        }
        if table.dim() != self.config.dim {
            return Err(Error::shape(
                "sdm input",
                format!("embedding dim {} vs model dim {}", table.dim(), self.config.dim),
            ));
        }
        let posts = user.recent_posts(self.config.max_posts);
        if posts.is_empty() {
            return Err(Error::Invalid(format!("user {:?} has no posts", user.user_id)));
        }
        let mut post_indices = Vec::with_capacity(posts.len());
        let mut post_lengths = Vec::with_capacity(posts.len());
        for p in posts {
            post_indices.push(table.indices(&pad_to(p.tokens(), self.pad_len)?));
            post_lengths.push(p.tokens().len());
        }
        let images = if mask.image && posts.iter().any(|p| p.has_image()) {
            let m = posts.len();
            let d = self.config.dim;
            let mut feats = Tensor::zeros(m, IMAGE_FEATURE_DIM);
            let mut present = Tensor::zeros(m, d);
            for (i, p) in posts.iter().enumerate() {
                if let Some(o) = p.image_feature() {
                    feats.row_mut(i).copy_from_slice(o);
                    present.row_mut(i).fill(1.0);
                }
            }
            Some((feats, present))
        } else {
            None
        };
        let mut features = extract_features(user);
        if !mask.image {
            features = features.without_pictures();
        }
        features = features.scaled(self.config.feature_scaling);
        if !mask.user_features {
            features = UserFeatures([0.0; FEATURE_DIM]);
        }
        Ok(UserInput {
            label: user.label(),
            post_indices,
            post_lengths,
            images,
            features,
        })
    }

    /// Builds the forward graph; parameters are read from `g`'s store.
    pub fn forward(&self, g: &mut Graph<'_>, table: &EmbeddingTable, input: &UserInput) -> Result<Forward> {
        let d = self.config.dim;
        let m = input.post_count();
        let mut hhats = Vec::with_capacity(m);
        let mut word_attention = Vec::with_capacity(m);
        for (indices, &len) in input.post_indices.iter().zip(&input.post_lengths) {
            let x = g.constant(table.embed_indices(indices));
            let real_len = self.config.mask_pad_attention.then_some(len);
            let (hhat, att) = self.params.encode_post_text(g, x, real_len)?;
            hhats.push(hhat);
            word_attention.push(att);
        }
        let text = g.stack_rows(&hhats, d)?;
        let image = match &input.images {
            Some((feats, present)) => {
                let o = g.constant(feats.clone());
                let p = g.constant(present.clone());
                self.params.encode_images(g, o, p)?
            }
            None => g.constant(Tensor::zeros(m, d)),
        };
        let e = g.concat_cols(text, image)?;
        let f = g.constant(Tensor::row_vector(input.features.0.to_vec()));
        let (probs, post_attention) = self.params.classify_posts(g, e, f)?;
        Ok(Forward {
            probs,
            word_attention,
            post_attention,
        })
    }

    /// Loss, gradients and `[y₁, y₀]` for one prepared user.
    pub fn example_gradients(
        &self,
        store: &ParamStore,
        table: &EmbeddingTable,
        input: &UserInput,
    ) -> Result<(f64, Gradients, [f64; 2])> {
        let mut g = Graph::new(store);
        let out = self.forward(&mut g, table, input)?;
        let loss = g.cross_entropy(out.probs, input.label.output_index())?;
        let p = g.value(out.probs).data();
        let probs = [p[0], p[1]];
        Ok((g.value(loss).data()[0], g.backward(loss)?, probs))
    }

    pub fn run(&self, table: &EmbeddingTable, input: &UserInput) -> Result<SdmOutput> {
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, table, input)?;
        let p = g.value(out.probs).data();
        let n = self.pad_len;
        let word_attention = out
            .word_attention
            .iter()
            .map(|&a| {
                let mut v = g.value(a).data().to_vec();
                v.resize(n, 0.0);
                v
            })
            .collect();
        Ok(SdmOutput {
            y1: p[0],
            y0: p[1],
            word_attention,
            post_attention: g.value(out.post_attention).data().to_vec(),
        })
    }

    pub fn classify_user(&self, table: &EmbeddingTable, user: &UserRecord) -> Result<SdmOutput> {
        self.ablation_variant(table, user, InputMask::ALL)
    }

    pub fn ablation_variant(&self, table: &EmbeddingTable, user: &UserRecord, mask: InputMask) -> Result<SdmOutput> {
        let input = self.prepare(table, user, mask)?;
        self.run(table, &input)
    }

    /// `(Ĥ, Att_I)` for a single post, padded to the model's length.
    pub fn encode_post_text(&self, table: &EmbeddingTable, tokens: &[String]) -> Result<(Vec<f64>, Vec<f64>)> {
        let padded = pad_to(tokens, self.pad_len)?;
        let mut g = Graph::new(&self.store);
        let x = g.constant(table.embed(&padded));
        let real_len = self.config.mask_pad_attention.then_some(tokens.len());
        let (hhat, att) = self.params.encode_post_text(&mut g, x, real_len)?;
        Ok((g.value(hhat).data().to_vec(), g.value(att).data().to_vec()))
    }

    /// `I = tanh(O·W₄ + b₄)`; an absent image gives the zero vector.
    pub fn encode_image(&self, image: Option<&[f64]>) -> Result<Vec<f64>> {
        let Some(o) = image else {
            return Ok(vec![0.0; self.config.dim]);
        };
        if o.len() != IMAGE_FEATURE_DIM {
            return Err(Error::shape(
                "encode_image",
                format!("{} features, expected {IMAGE_FEATURE_DIM}", o.len()),
            ));
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image features".into()));
        }
        let mut g = Graph::new(&self.store);
        let feats = g.constant(Tensor::row_vector(o.to_vec()));
        let present = g.constant(Tensor::filled(1, self.config.dim, 1.0));
        let i = self.params.encode_images(&mut g, feats, present)?;
        Ok(g.value(i).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::corpus::{EmojiMap, Gender, Post};

    fn toy_table() -> EmbeddingTable {
        EmbeddingTable::random(["a", "b", "c", "d"], 4, 11).unwrap()
    }

    fn toy_config() -> SdmConfig {
        SdmConfig {
            dim: 4,
            global_dim: 3,
            ..SdmConfig::default()
        }
    }

    fn toy_user(images: bool) -> UserRecord {
        let em = EmojiMap::default();
        let posts = ["a b c", "d a", "b"]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let ts = NaiveDate::from_ymd_opt(2018, 6, 1 + i as u32)
                    .unwrap()
                    .and_hms_opt(3 * i as u32, 0, 0)
                    .unwrap();
                let img = (images && i != 1).then(|| (0..IMAGE_FEATURE_DIM).map(|k| (k as f64 * 0.01).sin()).collect());
                Post::new(*t, ts, img, &em).unwrap().unwrap()
            })
            .collect();
        UserRecord::new("u", Gender::Female, "name", 12, 3, posts, Label::AtRisk, None)
    }

    #[test]
    fn zero_parameters_give_half() {
        let mut model = SdmModel::new(toy_config(), 4, 0).unwrap();
        model.store.zero_all();
        let out = model.classify_user(&toy_table(), &toy_user(true)).unwrap();
        assert_eq!((out.y1, out.y0), (0.5, 0.5));
        assert_eq!(out.decision(), Label::NotAtRisk);
    }

    #[test]
    fn attention_vectors_are_distributions() {
        for mask_pad in [false, true] {
            let config = SdmConfig {
                mask_pad_attention: mask_pad,
                ..toy_config()
            };
            let model = SdmModel::new(config, 5, 3).unwrap();
            let out = model.classify_user(&toy_table(), &toy_user(true)).unwrap();
            assert!((out.y1 + out.y0 - 1.0).abs() < 1e-12);
            assert!((out.post_attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for a in &out.word_attention {
                assert_eq!(a.len(), 5);
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            if mask_pad {
                assert_eq!(out.word_attention[2][1..], [0.0; 4]);
            }
        }
    }

    #[test]
    fn single_post_gets_all_attention() {
        let model = SdmModel::new(toy_config(), 4, 1).unwrap();
        let user = toy_user(false);
        let one = UserRecord::new("v", Gender::Male, "x", 0, 0, user.posts()[..1].to_vec(), Label::AtRisk, None);
        let out = model.classify_user(&toy_table(), &one).unwrap();
        assert_eq!(out.post_attention, vec![1.0]);
    }

    #[test]
    fn single_token_post() {
        let model = SdmModel::new(toy_config(), 1, 1).unwrap();
        let (hhat, att) = model.encode_post_text(&toy_table(), &["a".to_string()]).unwrap();
        assert_eq!(att, vec![1.0]);
        assert_eq!(hhat.len(), 4);
    }

    #[test]
    fn image_encoding_rules() {
        let model = SdmModel::new(toy_config(), 4, 2).unwrap();
        assert_eq!(model.encode_image(None).unwrap(), vec![0.0; 4]);
        assert!(model.encode_image(Some(&[0.0; 3])).is_err());
        let mut zeroed = model.clone();
        let b4 = zeroed.params.b4;
        zeroed.store.get_mut(b4).data_mut().fill(0.0);
        assert_eq!(zeroed.encode_image(Some(&[0.0; IMAGE_FEATURE_DIM])).unwrap(), vec![0.0; 4]);
        let v = model.encode_image(Some(&vec![3.0; IMAGE_FEATURE_DIM])).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn image_off_matches_stripped_user() {
        let model = SdmModel::new(toy_config(), 4, 5).unwrap();
        let table = toy_table();
        let user = toy_user(true);
        let mask = InputMask {
            image: false,
            ..InputMask::ALL
        };
        let off = model.ablation_variant(&table, &user, mask).unwrap();
        let stripped = model.classify_user(&table, &user.without_images()).unwrap();
        assert_eq!(off, stripped);
        let on = model.classify_user(&table, &user).unwrap();
        assert_ne!(on, stripped);
    }

    #[test]
    fn text_is_mandatory_and_posts_required() {
        let model = SdmModel::new(toy_config(), 4, 5).unwrap();
        let mask = InputMask {
            text: false,
            ..InputMask::ALL
        };
        assert!(model.ablation_variant(&toy_table(), &toy_user(true), mask).is_err());
        let empty = UserRecord::new("e", Gender::Male, "x", 0, 0, vec![], Label::AtRisk, None);
        assert!(model.classify_user(&toy_table(), &empty).is_err());
    }

    #[test]
    fn variant_keys_round_trip() {
        for m in InputMask::ABLATIONS {
            assert_eq!(m.key().parse::<InputMask>().unwrap(), m);
        }
        assert!("image".parse::<InputMask>().is_err());
    }

    #[test]
    fn parameters_found_by_name() {
        let model = SdmModel::new(toy_config(), 4, 5).unwrap();
        let again = SdmModel::from_parts(model.config.clone(), 4, model.store.clone()).unwrap();
        assert_eq!(again, model);
    }
}
