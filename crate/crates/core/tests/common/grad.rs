//! Finite-difference checks for every layer and both full classifiers.

use rand::Rng;

use treehole::corpus::IMAGE_FEATURE_DIM;
use treehole::embed_refine::{EmbeddingTable, MaskedClassifier};
use treehole::neural::gradcheck::check_gradients;
use treehole::neural::{init_bias, init_weight, Gradients, Graph, LstmCell, ParamId, ParamStore, Tensor, Var};
use treehole::sdm::{FeatureScaling, InputMask, SdmConfig, SdmModel, SdmParams};

use super::{randomize, rng, toy_user, vocab};

pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error. Central differences at this
/// step carry about 1e-10 of round-off on the deeper losses, so entries
/// below the floor are compared at an absolute 1e-9.
pub const FLOOR: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub const LAYERS: [&str; 8] = [
    "lstm cell",
    "affine",
    "softmax + cross-entropy",
    "tanh image projection",
    "word attention block",
    "post attention block",
    "masked classifier (full)",
    "detector (full)",
];

/// `(d_e, n, m)` for a seed; consecutive seeds walk the whole grid.
pub fn shape(seed: u64) -> (usize, usize, usize) {
    let i = seed as usize;
    ([2, 4][i % 2], [3, 5][(i / 2) % 2], [1, 2, 3][(i / 4) % 3])
}

fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(rows, cols, 1.0, rng)
}

fn weighted_sum(g: &mut Graph<'_>, v: Var, weights: &Tensor) -> Var {
    let w = g.constant(weights.clone());
    let p = g.mul(v, w).expect("same shape");
    g.sum(p)
}

fn check(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: impl Fn(&ParamStore) -> treehole::Result<(f64, Gradients)>,
) -> f64 {
    let (_, analytic) = f(store).expect("forward");
    check_gradients(store, ids, STEP, FLOOR, |s| f(s).map(|r| r.0), &analytic)
        .expect("finite differences")
        .max_relative_error
}

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}

/// Worst relative error per entry of [`LAYERS`] for one seed.
pub fn run_seed(seed: u64) -> [f64; 8] {
    let (d, n, m) = shape(seed);
    let mut r = rng(1000 + seed);
    let mut out = [0.0; 8];

    // LSTM cell.
    {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "cell", d, d + 1, &mut r);
        randomize(&mut store, 0.8, &mut r);
        let x = random(n, d, &mut r);
        let w = random(n, d + 1, &mut r);
        let ids = all_ids(&store);
        out[0] = check(&mut store, &ids, |s| {
            let mut g = Graph::new(s);
            let xv = g.constant(x.clone());
            let h = cell.forward(&mut g, xv)?;
            let l = weighted_sum(&mut g, h, &w);
            Ok((g.value(l).data()[0], g.backward(l)?))
        });
    }

    // Affine.
    {
        let mut store = ParamStore::new();
        let wid = init_weight(&mut store, "w", d, 3, &mut r);
        let bid = init_bias(&mut store, "b", 3);
        randomize(&mut store, 1.0, &mut r);
        let x = random(n, d, &mut r);
        let w = random(n, 3, &mut r);
        out[1] = check(&mut store, &[wid, bid], |s| {
            let mut g = Graph::new(s);
            let xv = g.constant(x.clone());
            let (wv, bv) = (g.param(wid), g.param(bid));
            let y = g.matmul(xv, wv)?;
            let y = g.add_bias(y, bv)?;
            let l = weighted_sum(&mut g, y, &w);
            Ok((g.value(l).data()[0], g.backward(l)?))
        });
    }

    // Softmax over n logits followed by cross-entropy.
    {
        let mut store = ParamStore::new();
        let z = store.register("logits", random(1, n, &mut r).map(|v| 3.0 * v));
        let class = r.gen_range(0..n);
        out[2] = check(&mut store, &[z], |s| {
            let mut g = Graph::new(s);
            let zv = g.param(z);
            let p = g.softmax(zv)?;
            let l = g.cross_entropy(p, class)?;
            Ok((g.value(l).data()[0], g.backward(l)?))
        });
    }

    let config = SdmConfig {
        dim: d,
        global_dim: 3,
        mask_pad_attention: seed % 3 == 1,
        feature_scaling: FeatureScaling::Raw,
        max_posts: 100,
    };

    // Image projection with a presence mask.
    {
        let mut store = ParamStore::new();
        let p = SdmParams::new(&mut store, &config, &mut r);
        randomize(&mut store, 0.3, &mut r);
        let feats = random(m, IMAGE_FEATURE_DIM, &mut r).map(|v| 0.2 * v);
        let mut present = Tensor::zeros(m, d);
        for i in 0..m {
            if i != 1 {
                present.row_mut(i).fill(1.0);
            }
        }
        let w = random(m, d, &mut r);
        out[3] = check(&mut store, &[p.w4, p.b4], |s| {
            let mut g = Graph::new(s);
            let o = g.constant(feats.clone());
            let pr = g.constant(present.clone());
            let i = p.encode_images(&mut g, o, pr)?;
            let l = weighted_sum(&mut g, i, &w);
            Ok((g.value(l).data()[0], g.backward(l)?))
        });
    }

    // Word-level attention over one padded post.
    {
        let mut store = ParamStore::new();
        let p = SdmParams::new(&mut store, &config, &mut r);
        randomize(&mut store, 0.8, &mut r);
        let x = random(n, d, &mut r);
        let w = random(1, d, &mut r);
        let real_len = config.mask_pad_attention.then_some(n - 1);
        let ids = [p.word_lstm.w_input, p.word_lstm.w_hidden, p.word_lstm.bias, p.w3, p.b3];
        out[4] = check(&mut store, &ids, |s| {
            let mut g = Graph::new(s);
            let xv = g.constant(x.clone());
            let (hhat, _) = p.encode_post_text(&mut g, xv, real_len)?;
            let l = weighted_sum(&mut g, hhat, &w);
            Ok((g.value(l).data()[0], g.backward(l)?))
        });
    }

    // Post-level attention, global projection and output layer.
    {
        let mut store = ParamStore::new();
        let p = SdmParams::new(&mut store, &config, &mut r);
        randomize(&mut store, 0.8, &mut r);
        let e = random(m, 2 * d, &mut r);
        let f = random(1, 12, &mut r);
        let class = r.gen_range(0..2);
        let ids = [
            p.post_lstm.w_input,
            p.post_lstm.w_hidden,
            p.post_lstm.bias,
            p.w5,
            p.b5,
            p.w6,
            p.b6,
            p.w7,
            p.b7,
        ];
        out[5] = check(&mut store, &ids, |s| {
            let mut g = Graph::new(s);
            let ev = g.constant(e.clone());
            let fv = g.constant(f.clone());
            let (probs, _) = p.classify_posts(&mut g, ev, fv)?;
            let l = g.cross_entropy(probs, class)?;
            Ok((g.value(l).data()[0], g.backward(l)?))
        });
    }

    // Masked classifier with a trainable embedding table.
    {
        let mut store = ParamStore::new();
        let emb = store.register("embedding", random(6, d, &mut r));
        let clf = MaskedClassifier::new(&mut store, d, n, &mut r);
        randomize(&mut store, 0.8, &mut r);
        let indices: Vec<usize> = (0..n).map(|_| r.gen_range(0..6)).collect();
        let class = r.gen_range(0..2);
        let ids = all_ids(&store);
        out[6] = check(&mut store, &ids, |s| {
            let mut g = Graph::new(s);
            let x = g.gather_rows(emb, &indices)?;
            let probs = clf.forward(&mut g, x)?;
            let l = g.cross_entropy(probs, class)?;
            Ok((g.value(l).data()[0], g.backward(l)?))
        });
    }

    // Full detector on a toy user with images and profile features.
    {
        let words = vocab(8);
        let table = EmbeddingTable::random(words.iter().cloned(), d, seed).expect("table");
        let user = toy_user(&mut r, "g", &words, m, n);
        let mut model = SdmModel::new(config, n, seed).expect("model");
        randomize(&mut model.store, 0.5, &mut r);
        let input = model.prepare(&table, &user, InputMask::ALL).expect("prepare");
        let mut store = std::mem::take(&mut model.store);
        let ids = all_ids(&store);
        out[7] = check(&mut store, &ids, |s| {
            let (loss, grads, _) = model.example_gradients(s, &table, &input)?;
            Ok((loss, grads))
        });
    }
    out
}
