//! Shared fixtures and an independent dense-algebra recomputation of both
//! classifiers. The oracle reads parameters by name and uses nothing from
//! the library's graph code.
#![allow(dead_code)]

pub mod cli;
pub mod grad;

use chrono::{NaiveDate, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use treehole::corpus::{EmojiMap, Gender, Label, Post, UserRecord, IMAGE_FEATURE_DIM, PAD};
use treehole::embed_refine::EmbeddingTable;
use treehole::neural::ParamStore;
use treehole::sdm::{FeatureScaling, InputMask, SdmModel};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Overwrites every parameter entry with a uniform draw in `[-scale, scale]`.
pub fn randomize(store: &mut ParamStore, scale: f64, rng: &mut impl Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn param(store: &ParamStore, name: &str) -> Mat {
    let t = store.get(store.find(name).unwrap_or_else(|| panic!("missing {name}")));
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// `x · W` for a row vector.
pub fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    assert_eq!(x.len(), w.len());
    let mut out = vec![0.0; w[0].len()];
    for (xi, row) in x.iter().zip(w) {
        for (o, wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scalar LSTM recurrence with gate blocks `[i f g o]` from zero state.
pub fn lstm(store: &ParamStore, prefix: &str, xs: &[Vec<f64>]) -> Mat {
    let w_in = param(store, &format!("{prefix}.w_input"));
    let w_hid = param(store, &format!("{prefix}.w_hidden"));
    let b = &param(store, &format!("{prefix}.bias"))[0];
    let hs = b.len() / 4;
    let (mut h, mut c) = (vec![0.0; hs], vec![0.0; hs]);
    let mut out = Vec::with_capacity(xs.len());
    for x in xs {
        let a = vecmat(x, &w_in);
        let r = vecmat(&h, &w_hid);
        let z: Vec<f64> = (0..4 * hs).map(|k| a[k] + r[k] + b[k]).collect();
        for j in 0..hs {
            let i = sig(z[j]);
            let f = sig(z[hs + j]);
            let g = z[2 * hs + j].tanh();
            let o = sig(z[3 * hs + j]);
            c[j] = f * c[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        out.push(h.clone());
    }
    out
}

/// `(k₁, k₂)` of the masked classifier for an already padded token list.
pub fn masked_oracle(store: &ParamStore, table: &EmbeddingTable, tokens: &[String]) -> (f64, f64) {
    let xs: Vec<Vec<f64>> = tokens.iter().map(|t| table.vector(t).to_vec()).collect();
    let h = lstm(store, "masked.lstm", &xs);
    let w1 = param(store, "masked.w1");
    let b1 = param(store, "masked.b1")[0][0];
    let w2 = param(store, "masked.w2");
    let b2 = &param(store, "masked.b2")[0];
    let mut logits = b2.clone();
    for (t, ht) in h.iter().enumerate() {
        let s = dot(ht, &w1.iter().map(|r| r[0]).collect::<Vec<_>>()) + b1;
        logits[0] += s * w2[t][0];
        logits[1] += s * w2[t][1];
    }
    let p = softmax(&logits);
    (p[0], p[1])
}

/// Profile vector recomputed from the raw user record.
pub fn features_oracle(user: &UserRecord, mask: InputMask, scaling: FeatureScaling) -> Vec<f64> {
    if !mask.user_features {
        return vec![0.0; 12];
    }
    let mut f = vec![0.0; 12];
    f[match user.gender {
        Gender::Male => 0,
        Gender::Female => 1,
        Gender::Unknown => 2,
    }] = 1.0;
    let posts = user.posts();
    f[3] = user.screen_name.chars().count() as f64;
    f[4] = posts.len() as f64;
    f[5] = user.follower_count as f64;
    f[6] = user.following_count as f64;
    f[7] = if mask.image {
        posts.iter().filter(|p| p.image_feature().is_some()).count() as f64
    } else {
        0.0
    };
    for p in posts {
        let h = p.timestamp().hour();
        f[8 + (h / 6) as usize] += 1.0 / posts.len() as f64;
    }
    if scaling == FeatureScaling::Log1p {
        for v in &mut f[3..8] {
            *v = v.ln_1p();
        }
    }
    f
}

pub struct SdmTrace {
    pub y1: f64,
    pub y0: f64,
    pub post_attention: Vec<f64>,
    /// Per post: word attention and the word LSTM states it weighs.
    pub word_attention: Vec<Vec<f64>>,
    pub word_states: Vec<Mat>,
    pub hhat: Mat,
}

/// End-to-end recomputation of the detector for one user.
pub fn sdm_oracle(model: &SdmModel, table: &EmbeddingTable, user: &UserRecord, mask: InputMask) -> SdmTrace {
    let s = &model.store;
    let cfg = &model.config;
    let d = cfg.dim;
    let all = user.posts();
    let posts = &all[all.len().saturating_sub(cfg.max_posts)..];
    let w3: Vec<f64> = param(s, "sdm.w3").iter().map(|r| r[0]).collect();
    let b3 = param(s, "sdm.b3")[0][0];
    let mut e_rows = Vec::new();
    let mut word_attention = Vec::new();
    let mut word_states = Vec::new();
    let mut hhat_rows = Vec::new();
    let any_image = mask.image && posts.iter().any(|p| p.image_feature().is_some());
    let w4 = param(s, "sdm.w4");
    let b4 = &param(s, "sdm.b4")[0];
    for p in posts {
        let mut toks: Vec<String> = p.tokens().to_vec();
        while toks.len() < model.pad_len {
            toks.push(PAD.to_string());
        }
        let used = if cfg.mask_pad_attention { p.tokens().len() } else { toks.len() };
        let xs: Vec<Vec<f64>> = toks[..used].iter().map(|t| table.vector(t).to_vec()).collect();
        let h = lstm(s, "sdm.word_lstm", &xs);
        let scores: Vec<f64> = h.iter().map(|ht| dot(ht, &w3) + b3).collect();
        let att = softmax(&scores);
        let mut hhat = vec![0.0; d];
        for (a, ht) in att.iter().zip(&h) {
            for (o, v) in hhat.iter_mut().zip(ht) {
                *o += a * v;
            }
        }
        let image = match (any_image, p.image_feature()) {
            (true, Some(o)) => vecmat(o, &w4).iter().zip(b4).map(|(z, b)| (z + b).tanh()).collect(),
            _ => vec![0.0; d],
        };
        let mut e = hhat.clone();
        e.extend(image);
        e_rows.push(e);
        let mut padded_att = att;
        padded_att.resize(model.pad_len, 0.0);
        word_attention.push(padded_att);
        word_states.push(h);
        hhat_rows.push(hhat);
    }
    let hg = lstm(s, "sdm.post_lstm", &e_rows);
    let w5: Vec<f64> = param(s, "sdm.w5").iter().map(|r| r[0]).collect();
    let b5 = param(s, "sdm.b5")[0][0];
    let att2 = softmax(&hg.iter().map(|h| dot(h, &w5) + b5).collect::<Vec<_>>());
    let mut pooled = vec![0.0; d];
    for (a, h) in att2.iter().zip(&hg) {
        for (o, v) in pooled.iter_mut().zip(h) {
            *o += a * v;
        }
    }
    let b6 = &param(s, "sdm.b6")[0];
    let mut fused: Vec<f64> = vecmat(&pooled, &param(s, "sdm.w6"))
        .iter()
        .zip(b6)
        .map(|(z, b)| (z + b).tanh())
        .collect();
    fused.extend(features_oracle(user, mask, cfg.feature_scaling));
    let b7 = &param(s, "sdm.b7")[0];
    let logits: Vec<f64> = vecmat(&fused, &param(s, "sdm.w7")).iter().zip(b7).map(|(z, b)| z + b).collect();
    let p = softmax(&logits);
    SdmTrace {
        y1: p[0],
        y0: p[1],
        post_attention: att2,
        word_attention,
        word_states,
        hhat: hhat_rows,
    }
}

pub fn vocab(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

pub fn random_tokens(rng: &mut impl Rng, vocab: &[String], min: usize, max: usize) -> Vec<String> {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect()
}

/// A user with `m` posts of 1..=`max_len` tokens, some carrying images.
pub fn toy_user(rng: &mut impl Rng, id: &str, vocab: &[String], m: usize, max_len: usize) -> UserRecord {
    let em = EmojiMap::default();
    let posts = (0..m)
        .map(|i| {
            let text = random_tokens(rng, vocab, 1, max_len).join(" ");
            let day = NaiveDate::from_ymd_opt(2018, 5 + (i as u32 % 8), 1 + rng.gen_range(0..28)).unwrap();
            let ts = day.and_hms_opt(rng.gen_range(0..24), rng.gen_range(0..60), 0).unwrap();
            let image = rng
                .gen_bool(0.6)
                .then(|| (0..IMAGE_FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect());
            Post::new(text, ts, image, &em).unwrap().expect("tokens are non-empty")
        })
        .collect();
    let gender = [Gender::Male, Gender::Female, Gender::Unknown][rng.gen_range(0..3)];
    let label = if rng.gen_bool(0.5) { Label::AtRisk } else { Label::NotAtRisk };
    UserRecord::new(
        id,
        gender,
        "n".repeat(rng.gen_range(1..6)),
        rng.gen_range(0..6),
        rng.gen_range(0..6),
        posts,
        label,
        None,
    )
}

/// Largest gap between `classify_masked` and the oracle on one random
/// instance.
pub fn masked_gap(seed: u64) -> f64 {
    use treehole::embed_refine::{classify_masked, MaskedClassifier};
    use treehole::lexicon::MaskedExample;
    let mut r = rng(seed);
    let d = r.gen_range(1..=4);
    let n = r.gen_range(1..=6);
    let words = vocab(5);
    let table = EmbeddingTable::random(words.iter().cloned(), d, seed).unwrap();
    let mut store = ParamStore::new();
    let clf = MaskedClassifier::new(&mut store, d, n, &mut r);
    randomize(&mut store, 1.0, &mut r);
    let mut tokens = random_tokens(&mut r, &words, 0, n);
    tokens.resize(n, PAD.to_string());
    let (k1, k2) = classify_masked(&clf, &store, &table, &MaskedExample { tokens: tokens.clone(), label: 1 }).unwrap();
    let (o1, o2) = masked_oracle(&store, &table, &tokens);
    (k1 - o1).abs().max((k2 - o2).abs())
}

/// Random detector configuration, model and user for one seed.
pub fn sdm_instance(seed: u64) -> (SdmModel, EmbeddingTable, UserRecord, InputMask) {
    use treehole::sdm::SdmConfig;
    let mut r = rng(seed);
    let d = r.gen_range(1..=4);
    let n = r.gen_range(1..=5);
    let m = r.gen_range(1..=4);
    let config = SdmConfig {
        dim: d,
        global_dim: r.gen_range(1..=4),
        mask_pad_attention: r.gen_bool(0.5),
        feature_scaling: if r.gen_bool(0.5) { FeatureScaling::Raw } else { FeatureScaling::Log1p },
        max_posts: r.gen_range(1..=4),
    };
    let words = vocab(6);
    // Leave one word out of the table so unknown-token lookup is exercised.
    let table = EmbeddingTable::random(words[1..].iter().cloned(), d, seed).unwrap();
    let user = toy_user(&mut r, "o", &words, m, n);
    let mut model = SdmModel::new(config, n, seed).unwrap();
    randomize(&mut model.store, 0.7, &mut r);
    let mask = InputMask::ABLATIONS[r.gen_range(0..4)];
    (model, table, user, mask)
}

/// Largest gap over probabilities and both attention levels.
pub fn sdm_gap(seed: u64) -> f64 {
    let (model, table, user, mask) = sdm_instance(seed);
    let out = model.ablation_variant(&table, &user, mask).unwrap();
    let o = sdm_oracle(&model, &table, &user, mask);
    let mut gap = (out.y1 - o.y1).abs().max((out.y0 - o.y0).abs());
    assert_eq!(out.post_attention.len(), o.post_attention.len());
    for (a, b) in out.post_attention.iter().zip(&o.post_attention) {
        gap = gap.max((a - b).abs());
    }
    assert_eq!(out.word_attention.len(), o.word_attention.len());
    for (wa, wb) in out.word_attention.iter().zip(&o.word_attention) {
        assert_eq!(wa.len(), wb.len());
        for (a, b) in wa.iter().zip(wb) {
            gap = gap.max((a - b).abs());
        }
    }
    gap
}
