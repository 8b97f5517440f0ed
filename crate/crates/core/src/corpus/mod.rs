//! Users, posts and corpus splits: preprocessing, JSONL persistence and a
//! seeded synthetic generator.

mod io;
mod preprocess;
pub mod synth;

use std::collections::HashSet;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, load_corpus_with, parse_corpus, save_corpus, write_corpus};
pub use preprocess::{is_emoji, pad_to, preprocess_text, EmojiMap, PAD};
pub use synth::{generate_synthetic, SynthConfig};

/// Length of the image encoder output consumed by the model.
pub const IMAGE_FEATURE_DIM: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m")]
    Male,
    #[serde(rename = "f")]
    Female,
    #[serde(rename = "u")]
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    AtRisk,
    NotAtRisk,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::AtRisk => 1,
            Label::NotAtRisk => 0,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Label::AtRisk),
            0 => Some(Label::NotAtRisk),
            _ => None,
        }
    }

    /// Index of this class in the model's `[positive, negative]` output.
    pub fn output_index(self) -> usize {
        match self {
            Label::AtRisk => 0,
            Label::NotAtRisk => 1,
        }
    }
}

/// One timestamped post after preprocessing. Construction drops posts
/// whose token sequence would be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Post {
    text: String,
    tokens: Vec<String>,
    image_feature: Option<Vec<f64>>,
    timestamp: NaiveDateTime,
}

impl Post {
    /// Returns `Ok(None)` when preprocessing leaves no tokens.
    pub fn new(
        text: impl Into<String>,
        timestamp: NaiveDateTime,
        image_feature: Option<Vec<f64>>,
        emoji_map: &EmojiMap,
    ) -> Result<Option<Self>> {
        let text = text.into();
        if let Some(img) = &image_feature {
            if img.len() != IMAGE_FEATURE_DIM {
                return Err(Error::Invalid(format!(
                    "image feature has {} entries, expected {IMAGE_FEATURE_DIM}",
                    img.len()
                )));
            }
            if img.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("image feature contains non-finite values".into()));
            }
        }
        let tokens = preprocess_text(&text, emoji_map);
        if tokens.is_empty() {
            return Ok(None);
        }
        Ok(Some(Self {
            text,
            tokens,
            image_feature,
            timestamp,
        }))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn image_feature(&self) -> Option<&[f64]> {
        self.image_feature.as_deref()
    }

    pub fn has_image(&self) -> bool {
        self.image_feature.is_some()
    }

    pub fn timestamp(&self) -> NaiveDateTime {
        self.timestamp
    }

    /// Same post with the picture removed.
    pub fn without_image(&self) -> Self {
        Self {
            image_feature: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    pub gender: Gender,
    pub screen_name: String,
    pub follower_count: u64,
    pub following_count: u64,
    posts: Vec<Post>,
    label: Label,
    hidden_posts: Option<Vec<Post>>,
}

impl UserRecord {
    /// Posts (and hidden posts) are stably sorted by timestamp.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        user_id: impl Into<String>,
        gender: Gender,
        screen_name: impl Into<String>,
        follower_count: u64,
        following_count: u64,
        mut posts: Vec<Post>,
        label: Label,
        hidden_posts: Option<Vec<Post>>,
    ) -> Self {
        posts.sort_by_key(Post::timestamp);
        let hidden_posts = hidden_posts.map(|mut h| {
            h.sort_by_key(Post::timestamp);
            h
        });
        Self {
            user_id: user_id.into(),
            gender,
            screen_name: screen_name.into(),
            follower_count,
            following_count,
            posts,
            label,
            hidden_posts,
        }
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn hidden_posts(&self) -> Option<&[Post]> {
        self.hidden_posts.as_deref()
    }

    /// The most recent `max` posts, oldest first.
    pub fn recent_posts(&self, max: usize) -> &[Post] {
        let start = self.posts.len().saturating_sub(max);
        &self.posts[start..]
    }

    /// Copy of this user with every image removed.
    pub fn without_images(&self) -> Self {
        Self {
            posts: self.posts.iter().map(Post::without_image).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<UserRecord>,
    pub validation: Vec<UserRecord>,
    pub test: Vec<UserRecord>,
}

impl CorpusSplit {
    pub fn part(&self, name: SplitName) -> &[UserRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }

    pub fn part_mut(&mut self, name: SplitName) -> &mut Vec<UserRecord> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Validation => &mut self.validation,
            SplitName::Test => &mut self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every user with the split it belongs to, in train/validation/test order.
    pub fn iter(&self) -> impl Iterator<Item = (SplitName, &UserRecord)> {
        [SplitName::Train, SplitName::Validation, SplitName::Test]
            .into_iter()
            .flat_map(move |name| self.part(name).iter().map(move |u| (name, u)))
    }

    /// Fails if a user id appears more than once across the three parts.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (_, user) in self.iter() {
            if !seen.insert(user.user_id.as_str()) {
                return Err(Error::Invalid(format!(
                    "user {} appears more than once in the corpus",
                    user.user_id
                )));
            }
        }
        Ok(())
    }

    /// Longest post (in tokens) across all visible posts.
    pub fn max_post_len(&self) -> usize {
        self.iter()
            .flat_map(|(_, u)| u.posts().iter().map(|p| p.tokens().len()))
            .max()
            .unwrap_or(0)
    }

    pub fn without_images(&self) -> Self {
        let strip = |v: &[UserRecord]| v.iter().map(UserRecord::without_images).collect();
        Self {
            train: strip(&self.train),
            validation: strip(&self.validation),
            test: strip(&self.test),
        }
    }
}
