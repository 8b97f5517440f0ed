//! Weighted risk lexicon, longest-match phrase lookup, and the masked
//! sentence-classification set used for embedding refinement.
//!
//! In the masked set, half of the sentences (chosen by a seeded shuffle)
//! have every lexicon phrase replaced by a single `[mask]` token and are
//! labelled 0. The other half keep their phrases, receive two `[mask]`
//! tokens at random positions and are labelled 1, so the presence of
//! `[mask]` alone does not reveal the label.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MASK: &str = "[mask]";

const SAMPLE_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    SuicideIdeation,
    SuicideBehavior,
    Psychache,
    MentalIllness,
    Hopeless,
    SelfHarm,
    SuicideMethod,
    Farewell,
    Worthlessness,
    Guilt,
    Insomnia,
    FamilyConflict,
    SubstanceAbuse,
}

impl Category {
    pub const ALL: [Category; 13] = [
        Category::SuicideIdeation,
        Category::SuicideBehavior,
        Category::Psychache,
        Category::MentalIllness,
        Category::Hopeless,
        Category::SelfHarm,
        Category::SuicideMethod,
        Category::Farewell,
        Category::Worthlessness,
        Category::Guilt,
        Category::Insomnia,
        Category::FamilyConflict,
        Category::SubstanceAbuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::SuicideIdeation => "suicide_ideation",
            Category::SuicideBehavior => "suicide_behavior",
            Category::Psychache => "psychache",
            Category::MentalIllness => "mental_illness",
            Category::Hopeless => "hopeless",
            Category::SelfHarm => "self_harm",
            Category::SuicideMethod => "suicide_method",
            Category::Farewell => "farewell",
            Category::Worthlessness => "worthlessness",
            Category::Guilt => "guilt",
            Category::Insomnia => "insomnia",
            Category::FamilyConflict => "family_conflict",
            Category::SubstanceAbuse => "substance_abuse",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown lexicon category {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LexiconEntry {
    pub phrase: Vec<String>,
    pub category: Category,
    pub weight: u8,
}

/// A lexicon match: `length` tokens starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Hit {
    pub start: usize,
    pub length: usize,
    pub weight: u8,
}

#[derive(Clone, Debug)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    // first token -> entry indices, longest phrase first
    by_first: HashMap<String, Vec<usize>>,
}

impl PartialEq for Lexicon {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Lexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.phrase.is_empty() || e.phrase.iter().any(String::is_empty) {
                return Err(Error::Invalid("empty lexicon phrase".into()));
            }
            if !(1..=3).contains(&e.weight) {
                return Err(Error::Invalid(format!(
                    "weight {} for {:?} outside [1,3]",
                    e.weight,
                    e.phrase.join(" ")
                )));
            }
            if !seen.insert(e.phrase.clone()) {
                return Err(Error::Invalid(format!(
                    "duplicate lexicon phrase {:?}",
                    e.phrase.join(" ")
                )));
            }
        }
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            by_first.entry(e.phrase[0].clone()).or_default().push(i);
        }
        for v in by_first.values_mut() {
            v.sort_by(|&a, &b| entries[b].phrase.len().cmp(&entries[a].phrase.len()).then(a.cmp(&b)));
        }
        Ok(Self { entries, by_first })
    }

    /// The 40-entry sample lexicon shipped with the crate.
    pub fn sample() -> Self {
        Self::parse_tsv(SAMPLE_LEXICON, "<sample lexicon>").expect("sample lexicon is valid")
    }

    /// `phrase<TAB>category<TAB>weight` lines; `#` starts a comment.
    pub fn parse_tsv(text: &str, origin: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut phrases = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |m: String| Error::parse(origin, i + 1, m);
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let phrase: Vec<String> = fields[0].split_whitespace().map(str::to_string).collect();
            if phrase.is_empty() {
                return Err(err("empty phrase".into()));
            }
            let category = fields[1].trim().parse::<Category>().map_err(|e| err(e.to_string()))?;
            let weight: u8 = fields[2]
                .trim()
                .parse()
                .map_err(|_| err(format!("weight {:?} is not an integer", fields[2])))?;
            if !(1..=3).contains(&weight) {
                return Err(err(format!("weight {weight} outside [1,3]")));
            }
            if !phrases.insert(phrase.clone()) {
                return Err(err(format!("duplicate phrase {:?}", fields[0])));
            }
            entries.push(LexiconEntry {
                phrase,
                category,
                weight,
            });
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# phrase\tcategory\tweight\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.phrase.join(" "), e.category, e.weight));
        }
        out
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every token that occurs in some phrase.
    pub fn tokens(&self) -> HashSet<&str> {
        self.entries
            .iter()
            .flat_map(|e| e.phrase.iter().map(String::as_str))
            .collect()
    }

    fn longest_at<S: AsRef<str>>(&self, tokens: &[S], start: usize) -> Option<&LexiconEntry> {
        let candidates = self.by_first.get(tokens[start].as_ref())?;
        candidates.iter().map(|&i| &self.entries[i]).find(|e| {
            let end = start + e.phrase.len();
            end <= tokens.len()
                && e.phrase.iter().zip(&tokens[start..end]).all(|(p, t)| p == t.as_ref())
        })
    }

    /// Non-overlapping matches, scanning left to right and taking the
    /// longest phrase at each position.
    pub fn find_hits<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Hit> {
        let mut hits = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.longest_at(tokens, i) {
                Some(e) => {
                    hits.push(Hit {
                        start: i,
                        length: e.phrase.len(),
                        weight: e.weight,
                    });
                    i += e.phrase.len();
                }
                None => i += 1,
            }
        }
        hits
    }

    pub fn count_hits<S: AsRef<str>>(&self, tokens: &[S]) -> usize {
        self.find_hits(tokens).len()
    }

    pub fn weighted_hits<S: AsRef<str>>(&self, tokens: &[S]) -> u64 {
        self.find_hits(tokens).iter().map(|h| u64::from(h.weight)).sum()
    }
}

pub fn find_hits<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<Hit> {
    lexicon.find_hits(tokens)
}

/// The first `k` sentences (in corpus order) carrying at least `min_hits`
/// lexicon matches. Logs a warning when fewer than `k` qualify.
pub fn select_sentences(
    sentences: &[Vec<String>],
    lexicon: &Lexicon,
    k: usize,
    min_hits: usize,
) -> Vec<Vec<String>> {
    let selected: Vec<Vec<String>> = sentences
        .iter()
        .filter(|s| lexicon.count_hits(s) >= min_hits.max(1))
        .take(k)
        .cloned()
        .collect();
    if selected.len() < k {
        log::warn!(
            "only {} of the requested {k} sentences contain a lexicon phrase",
            selected.len()
        );
    }
    selected
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedExample {
    pub tokens: Vec<String>,
    /// 1 = phrases kept (suicidal expression), 0 = phrases masked out.
    pub label: u8,
}

/// Replaces each hit span by one `[mask]` token.
pub fn mask_all_hits(sentence: &[String], lexicon: &Lexicon) -> Vec<String> {
    let hits = lexicon.find_hits(sentence);
    let mut out = Vec::with_capacity(sentence.len());
    let mut i = 0;
    for h in hits {
        out.extend_from_slice(&sentence[i..h.start]);
        out.push(MASK.to_string());
        i = h.start + h.length;
    }
    out.extend_from_slice(&sentence[i..]);
    out
}

/// Inserts two `[mask]` tokens at independent positions drawn uniformly
/// from the gaps that do not split a lexicon match, so every phrase of the
/// sentence survives.
pub fn insert_two_masks<R: Rng + ?Sized>(sentence: &[String], lexicon: &Lexicon, rng: &mut R) -> Vec<String> {
    let hits = lexicon.find_hits(sentence);
    let gaps: Vec<usize> = (0..=sentence.len())
        .filter(|&p| !hits.iter().any(|h| h.start < p && p < h.start + h.length))
        .collect();
    let mut at = [gaps[rng.gen_range(0..gaps.len())], gaps[rng.gen_range(0..gaps.len())]];
    at.sort_unstable();
    let mut out = sentence.to_vec();
    for &p in at.iter().rev() {
        out.insert(p, MASK.to_string());
    }
    out
}

/// One epoch's masked set. Output order follows input order; exactly
/// `len / 2` examples are labelled 0.
pub fn build_masked_set(
    sentences: &[Vec<String>],
    lexicon: &Lexicon,
    seed: u64,
) -> Result<Vec<MaskedExample>> {
    if let Some(i) = sentences.iter().position(|s| lexicon.count_hits(s) == 0) {
        return Err(Error::Invalid(format!(
            "sentence {i} contains no lexicon phrase"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.shuffle(&mut rng);
    let mut mask_all = vec![false; sentences.len()];
    for &i in &order[..sentences.len() / 2] {
        mask_all[i] = true;
    }
    Ok(sentences
        .iter()
        .zip(mask_all)
        .map(|(s, masked)| {
            if masked {
                MaskedExample {
                    tokens: mask_all_hits(s, lexicon),
                    label: 0,
                }
            } else {
                MaskedExample {
                    tokens: insert_two_masks(s, lexicon, &mut rng),
                    label: 1,
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn lex(entries: &[(&str, u8)]) -> Lexicon {
        Lexicon::new(
            entries
                .iter()
                .map(|(p, w)| LexiconEntry {
                    phrase: toks(p),
                    category: Category::SuicideIdeation,
                    weight: *w,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sample_lexicon_shape() {
        let l = Lexicon::sample();
        assert_eq!(l.len(), 40);
        let cats: HashSet<_> = l.entries().iter().map(|e| e.category).collect();
        assert_eq!(cats.len(), 13);
        let w = l
            .entries()
            .iter()
            .find(|e| e.phrase == toks("want to die"))
            .unwrap()
            .weight;
        assert_eq!(l.find_hits(&toks("want to die today")), vec![Hit { start: 0, length: 3, weight: w }]);
    }

    #[test]
    fn no_hits() {
        assert!(Lexicon::sample().find_hits(&toks("a quiet afternoon")).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let l = lex(&[("die", 1), ("want to die", 3)]);
        assert_eq!(
            l.find_hits(&toks("i want to die")),
            vec![Hit { start: 1, length: 3, weight: 3 }]
        );
        assert_eq!(l.find_hits(&toks("to die")), vec![Hit { start: 1, length: 1, weight: 1 }]);
    }

    #[test]
    fn tsv_round_trip_and_validation() {
        let l = Lexicon::sample();
        assert_eq!(Lexicon::parse_tsv(&l.to_tsv(), "mem").unwrap(), l);
        assert!(Lexicon::parse_tsv("x\thopeless\t4\n", "mem").is_err());
        assert!(Lexicon::parse_tsv("x\tnot_a_category\t1\n", "mem").is_err());
        assert!(Lexicon::parse_tsv("x\thopeless\t1\nx\tguilt\t2\n", "mem").is_err());
        let err = Lexicon::parse_tsv("# c\nx\thopeless\n", "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn selection_rules() {
        let l = lex(&[("die", 1)]);
        let corpus = vec![toks("a b"), toks("c die"), toks("die e"), toks("f"), toks("g die")];
        assert!(select_sentences(&corpus[..1], &l, 3, 1).is_empty());
        assert_eq!(select_sentences(&corpus, &l, 2, 1), vec![toks("c die"), toks("die e")]);
        assert_eq!(select_sentences(&corpus, &l, 10, 1).len(), 3);
    }

    #[test]
    fn mask_all_example() {
        let l = lex(&[("want to die", 3)]);
        assert_eq!(mask_all_hits(&toks("I want to die"), &l), toks("I [mask]"));
    }

    #[test]
    fn insertion_example() {
        let l = lex(&[("want to die", 3)]);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = insert_two_masks(&toks("I want to die"), &l, &mut rng);
            assert_eq!(out.len(), 6);
            assert_eq!(out.iter().filter(|t| *t == MASK).count(), 2);
            let rest: Vec<_> = out.iter().filter(|t| *t != MASK).cloned().collect();
            assert_eq!(rest, toks("I want to die"));
            assert_eq!(l.count_hits(&out), 1, "{out:?}");
        }
    }

    #[test]
    fn masked_set_balance_and_errors() {
        let l = lex(&[("die", 1)]);
        let sentences: Vec<_> = (0..100).map(|i| toks(&format!("w{i} die now"))).collect();
        let set = build_masked_set(&sentences, &l, 1).unwrap();
        assert_eq!(set.iter().filter(|e| e.label == 0).count(), 50);
        assert!(build_masked_set(&[], &l, 1).unwrap().is_empty());
        assert!(build_masked_set(&[toks("nothing here")], &l, 1).is_err());
        assert_eq!(build_masked_set(&sentences, &l, 1).unwrap(), set);
        assert_ne!(build_masked_set(&sentences, &l, 2).unwrap(), set);
    }
}
