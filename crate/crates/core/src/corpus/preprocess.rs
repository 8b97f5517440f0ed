//! Raw post text to tokens: emoji become words, URLs are removed, the
//! rest is split on whitespace and punctuation and lower-cased.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "<PAD>";

const DEFAULT_EMOJI_MAP: &str = include_str!("../../data/emoji_map.tsv");

/// Emoji sequence → replacement word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmojiMap {
    // Longest key first so multi-codepoint sequences win.
    entries: Vec<(String, String)>,
}

impl Default for EmojiMap {
    fn default() -> Self {
        Self::parse(DEFAULT_EMOJI_MAP, "<builtin emoji map>").expect("builtin emoji map is valid")
    }
}

impl EmojiMap {
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            let (k, v) = (k.into(), v.into());
            if k.is_empty() {
                return Err(Error::Invalid("empty emoji key".into()));
            }
            if v.is_empty() || !v.chars().all(is_word_char) || v.chars().any(char::is_uppercase) {
                return Err(Error::Invalid(format!(
                    "emoji replacement {v:?} must be a lower-case word"
                )));
            }
            map.insert(k, v);
        }
        let mut entries: Vec<_> = map.into_iter().collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self { entries })
    }

    /// `emoji<TAB>word` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(k), Some(v), None) => pairs.push((k.trim().to_string(), v.trim().to_string())),
                _ => return Err(Error::parse(origin, i + 1, "expected `emoji<TAB>word`")),
            }
        }
        Self::from_pairs(pairs).map_err(|e| Error::parse(origin, 0, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn match_at<'a>(&'a self, rest: &str) -> Option<(&'a str, usize)> {
        self.entries
            .iter()
            .find(|(k, _)| rest.starts_with(k.as_str()))
            .map(|(k, v)| (v.as_str(), k.len()))
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Pictographic ranges treated as emoji, plus the joiners and variation
/// selectors that glue emoji sequences together.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2B00..=0x2BFF
        | 0xFE00..=0xFE0F
        | 0x200D
        | 0x20E3
        | 0xE0020..=0xE007F)
}

fn strip_urls(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    loop {
        let next = ["http://", "https://"]
            .iter()
            .filter_map(|scheme| rest.find(scheme))
            .min();
        match next {
            None => {
                out.push_str(rest);
                return out;
            }
            Some(start) => {
                out.push_str(&rest[..start]);
                out.push(' ');
                let tail = &rest[start..];
                let end = tail.find(char::is_whitespace).unwrap_or(tail.len());
                rest = &tail[end..];
            }
        }
    }
}

pub fn preprocess_text(raw: &str, emoji_map: &EmojiMap) -> Vec<String> {
    let text = strip_urls(raw);
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if let Some((word, len)) = emoji_map.match_at(rest) {
            flush(&mut current, &mut tokens);
            tokens.push(word.to_string());
            i += len;
            continue;
        }
        let c = rest.chars().next().expect("non-empty remainder");
        if is_word_char(c) && !is_emoji(c) {
            current.extend(c.to_lowercase().filter(|l| is_word_char(*l) && !is_emoji(*l)));
        } else {
            flush(&mut current, &mut tokens);
        }
        i += c.len_utf8();
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Appends `<PAD>` up to length `n`. Never truncates.
pub fn pad_to(tokens: &[String], n: usize) -> Result<Vec<String>> {
    if tokens.len() > n {
        return Err(Error::TruncationForbidden {
            len: tokens.len(),
            target: n,
        });
    }
    let mut out = tokens.to_vec();
    out.resize(n, PAD.to_string());
    Ok(out)
}
