use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CorpusSplit, PAD};
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, MASK};
use crate::neural::{init_bound, Tensor};

pub const UNK: &str = "<UNK>";

/// Special rows every table carries, in the order they are appended.
pub const SPECIAL_TOKENS: [&str; 3] = [MASK, PAD, UNK];

/// Token → row lookup over a `|V| × d` matrix. Unknown tokens resolve to
/// the `<UNK>` row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Builds a table from `(token, vector)` rows and appends seeded random
    /// rows for any missing special token.
    pub fn from_rows(rows: Vec<(String, Vec<f64>)>, dim: usize, seed: u64) -> Result<Self> {
        let mut tokens = Vec::with_capacity(rows.len() + SPECIAL_TOKENS.len());
        let mut index = HashMap::with_capacity(rows.len() + SPECIAL_TOKENS.len());
        let mut data = Vec::with_capacity((rows.len() + SPECIAL_TOKENS.len()) * dim);
        for (tok, vec) in rows {
            if vec.len() != dim {
                return Err(Error::shape(
                    "embedding row",
                    format!("{tok:?} has {} values, expected {dim}", vec.len()),
                ));
            }
            if index.insert(tok.clone(), tokens.len()).is_some() {
                return Err(Error::Invalid(format!("duplicate token {tok:?}")));
            }
            tokens.push(tok);
            data.extend(vec);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for special in SPECIAL_TOKENS {
            if !index.contains_key(special) {
                index.insert(special.to_string(), tokens.len());
                tokens.push(special.to_string());
                data.extend(Tensor::uniform(1, dim, init_bound(dim), &mut rng).into_data());
            }
        }
        let vectors = Tensor::from_vec(tokens.len(), dim, data)?;
        Ok(Self {
            tokens,
            index,
            vectors,
            trainable: true,
        })
    }

    /// Seeded uniform rows for every token, sorted for determinism.
    pub fn random<I, S>(vocab: I, dim: usize, seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = vocab.into_iter().map(Into::into).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = init_bound(dim);
        let rows = sorted
            .into_iter()
            .filter(|t| !SPECIAL_TOKENS.contains(&t.as_str()))
            .map(|t| (t, Tensor::uniform(1, dim, bound, &mut rng).into_data()))
            .collect();
        Self::from_rows(rows, dim, seed.wrapping_add(1))
    }

    /// Random table covering every token of the corpus (visible and
    /// hidden posts) and of the lexicon.
    pub fn random_for_corpus(split: &CorpusSplit, lexicon: &Lexicon, dim: usize, seed: u64) -> Result<Self> {
        Self::random(corpus_vocabulary(split, lexicon), dim, seed)
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub(crate) fn set_vectors(&mut self, vectors: Tensor) -> Result<()> {
        if vectors.shape() != self.vectors.shape() {
            return Err(Error::shape(
                "set_vectors",
                format!("{:?} vs {:?}", vectors.shape(), self.vectors.shape()),
            ));
        }
        self.vectors = vectors;
        Ok(())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Row index, falling back to `<UNK>`.
    pub fn lookup(&self, token: &str) -> usize {
        self.index
            .get(token)
            .or_else(|| self.index.get(UNK))
            .copied()
            .expect("<UNK> row always present")
    }

    pub fn row_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, token: &str) -> &[f64] {
        self.vectors.row(self.lookup(token))
    }

    pub fn indices<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }

    /// `n × d` matrix of the tokens' vectors.
    pub fn embed<S: AsRef<str>>(&self, tokens: &[S]) -> Tensor {
        let mut data = Vec::with_capacity(tokens.len() * self.dim());
        for t in tokens {
            data.extend_from_slice(self.vector(t.as_ref()));
        }
        Tensor::from_vec(tokens.len(), self.dim(), data).expect("rows have table width")
    }

    /// `n × d` matrix of the given rows.
    pub fn embed_indices(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.dim());
        for &r in rows {
            data.extend_from_slice(self.vectors.row(r));
        }
        Tensor::from_vec(rows.len(), self.dim(), data).expect("rows have table width")
    }

    /// Parses the word2vec-style text format: a `count dim` header, then
    /// one `token v1 … vd` line per row.
    pub fn parse_text(text: &str, origin: &str, seed: u64) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing `vocab_size dim` header"))?;
        let mut parts = header.split_whitespace();
        let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>()
                    .map_err(|_| Error::parse(origin, 1, format!("bad vocab size {c:?}")))?,
                d.parse::<usize>()
                    .map_err(|_| Error::parse(origin, 1, format!("bad dimension {d:?}")))?,
            ),
            _ => return Err(Error::parse(origin, 1, "header must be `vocab_size dim`")),
        };
        let mut rows = Vec::with_capacity(count);
        let mut seen = HashMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-blank line").to_string();
            let values = fields
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(origin, lineno, format!("bad value {v:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("{} values for {token:?}, header says {dim}", values.len()),
                ));
            }
            if let Some(prev) = seen.insert(token.clone(), lineno) {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("duplicate token {token:?} (first on line {prev})"),
                ));
            }
            rows.push((token, values));
        }
        if rows.len() != count {
            return Err(Error::parse(
                origin,
                1,
                format!("header announces {count} rows, file has {}", rows.len()),
            ));
        }
        Self::from_rows(rows, dim, seed)
    }

    pub fn load_pretrained(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, &path.display().to_string(), seed)
    }

    /// Values use shortest round-trip formatting, so `parse_text` restores
    /// them exactly.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim());
        for (r, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in self.vectors.row(r) {
                write!(out, " {v}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Every token in visible and hidden posts plus every lexicon token.
pub fn corpus_vocabulary(split: &CorpusSplit, lexicon: &Lexicon) -> BTreeSet<String> {
    let mut vocab: BTreeSet<String> = lexicon.tokens().into_iter().map(str::to_string).collect();
    for (_, user) in split.iter() {
        let hidden = user.hidden_posts().unwrap_or(&[]);
        for post in user.posts().iter().chain(hidden) {
            vocab.extend(post.tokens().iter().cloned());
        }
    }
    vocab
}
