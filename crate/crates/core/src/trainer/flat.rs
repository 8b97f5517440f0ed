use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, UserRecord};
use crate::embed_refine::EmbeddingTable;
use crate::error::{Error, Result};
use crate::neural::{init_bias, init_weight, Gradients, Graph, LstmCell, ParamId, ParamStore, Var};
use crate::sdm::SdmOutput;

/// Attention LSTM over one long token sequence: the user's posts joined
/// newest first and cut at `max_tokens`. Images and profile features are
/// not used.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatModel {
    pub dim: usize,
    pub max_tokens: usize,
    pub lstm: LstmCell,
    pub wa: ParamId,
    pub ba: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub store: ParamStore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatInput {
    pub label: Label,
    pub indices: Vec<usize>,
}

impl FlatModel {
    pub fn new(dim: usize, max_tokens: usize, seed: u64) -> Result<Self> {
        if dim == 0 || max_tokens == 0 {
            return Err(Error::Config("flat model needs positive dim and max_tokens".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lstm = LstmCell::new(&mut store, "flat.lstm", dim, dim, &mut rng);
        let wa = init_weight(&mut store, "flat.wa", dim, 1, &mut rng);
        let ba = init_bias(&mut store, "flat.ba", 1);
        let wo = init_weight(&mut store, "flat.wo", dim, 2, &mut rng);
        let bo = init_bias(&mut store, "flat.bo", 2);
        Ok(Self {
            dim,
            max_tokens,
            lstm,
            wa,
            ba,
            wo,
            bo,
            store,
        })
    }

    pub fn from_parts(max_tokens: usize, store: ParamStore) -> Result<Self> {
        let id = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Invalid(format!("checkpoint lacks tensor {name:?}")))
        };
        let w_input = id("flat.lstm.w_input")?;
        let dim = store.get(w_input).rows();
        let lstm = LstmCell {
            input_size: dim,
            hidden_size: dim,
            w_input,
            w_hidden: id("flat.lstm.w_hidden")?,
            bias: id("flat.lstm.bias")?,
        };
        lstm.check_shapes(&store)?;
        let (wa, ba, wo, bo) = (id("flat.wa")?, id("flat.ba")?, id("flat.wo")?, id("flat.bo")?);
        Ok(Self {
            dim,
            max_tokens,
            lstm,
            wa,
            ba,
            wo,
            bo,
            store,
        })
    }

    /// Newest post first, tokens in reading order within each post.
    pub fn flatten(user: &UserRecord, max_tokens: usize) -> Vec<String> {
        let mut out = Vec::new();
        for post in user.posts().iter().rev() {
            if out.len() >= max_tokens {
                break;
            }
            out.extend(post.tokens().iter().cloned());
        }
        out.truncate(max_tokens);
        out
    }

    pub fn prepare(&self, table: &EmbeddingTable, user: &UserRecord) -> Result<FlatInput> {
        if table.dim() != self.dim {
            return Err(Error::shape(
                "flat input",
                format!("embedding dim {} vs model dim {}", table.dim(), self.dim),
            ));
        }
        let tokens = Self::flatten(user, self.max_tokens);
        if tokens.is_empty() {
            return Err(Error::Invalid(format!("user {:?} has no posts", user.user_id)));
        }
        Ok(FlatInput {
            label: user.label(),
            indices: table.indices(&tokens),
        })
    }

    fn forward(&self, g: &mut Graph<'_>, table: &EmbeddingTable, input: &FlatInput) -> Result<(Var, Var)> {
        let x = g.constant(table.embed_indices(&input.indices));
        let h = self.lstm.forward(g, x)?;
        let wa = g.param(self.wa);
        let ba = g.param(self.ba);
        let scores = g.matmul(h, wa)?;
        let scores = g.add_bias(scores, ba)?;
        let scores = g.transpose(scores);
        let att = g.softmax(scores)?;
        let ctx = g.matmul(att, h)?;
        let wo = g.param(self.wo);
        let bo = g.param(self.bo);
        let logits = g.matmul(ctx, wo)?;
        let logits = g.add_bias(logits, bo)?;
        Ok((g.softmax(logits)?, att))
    }

    pub fn example_gradients(
        &self,
        store: &ParamStore,
        table: &EmbeddingTable,
        input: &FlatInput,
    ) -> Result<(f64, Gradients, [f64; 2])> {
        let mut g = Graph::new(store);
        let (probs, _) = self.forward(&mut g, table, input)?;
        let loss = g.cross_entropy(probs, input.label.output_index())?;
        let p = g.value(probs).data();
        let probs = [p[0], p[1]];
        Ok((g.value(loss).data()[0], g.backward(loss)?, probs))
    }

    pub fn run(&self, table: &EmbeddingTable, input: &FlatInput) -> Result<SdmOutput> {
        let mut g = Graph::new(&self.store);
        let (probs, att) = self.forward(&mut g, table, input)?;
        let p = g.value(probs).data();
        Ok(SdmOutput {
            y1: p[0],
            y0: p[1],
            word_attention: vec![g.value(att).data().to_vec()],
            post_attention: Vec::new(),
        })
    }
}
