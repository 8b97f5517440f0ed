//! One user per JSONL line:
//!
//! ```text
//! {"user_id":..,"gender":"m"|"f"|"u","screen_name":..,"followers":N,"following":N,
//!  "label":0|1,"posts":[{"text":..,"ts":"YYYY-MM-DD","img":[512 floats]|null}],
//!  "hidden_posts":[..]|null,"split":"train"|"validation"|"test"}
//! ```
//!
//! `ts` carries a time of day as `YYYY-MM-DDTHH:MM:SS` when it is not
//! midnight. `split` defaults to `train` when absent.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{CorpusSplit, EmojiMap, Gender, Label, Post, SplitName, UserRecord};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostLine {
    text: String,
    ts: String,
    img: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserLine {
    user_id: String,
    gender: Gender,
    screen_name: String,
    followers: u64,
    following: u64,
    label: u8,
    posts: Vec<PostLine>,
    hidden_posts: Option<Vec<PostLine>>,
    #[serde(default = "default_split")]
    split: SplitName,
}

fn default_split() -> SplitName {
    SplitName::Train
}

pub(crate) fn format_timestamp(ts: NaiveDateTime) -> String {
    if ts.time() == chrono::NaiveTime::MIN {
        ts.format("%Y-%m-%d").to_string()
    } else {
        ts.format("%Y-%m-%dT%H:%M:%S").to_string()
    }
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .map(|d| d.and_time(chrono::NaiveTime::MIN))
        })
}

fn post_line(p: &Post) -> PostLine {
    PostLine {
        text: p.text().to_string(),
        ts: format_timestamp(p.timestamp()),
        img: p.image_feature().map(<[f64]>::to_vec),
    }
}

fn user_line(split: SplitName, u: &UserRecord) -> UserLine {
    UserLine {
        user_id: u.user_id.clone(),
        gender: u.gender,
        screen_name: u.screen_name.clone(),
        followers: u.follower_count,
        following: u.following_count,
        label: u.label().as_u8(),
        posts: u.posts().iter().map(post_line).collect(),
        hidden_posts: u.hidden_posts().map(|h| h.iter().map(post_line).collect()),
        split,
    }
}

fn build_posts(
    lines: Vec<PostLine>,
    field: &str,
    emoji_map: &EmojiMap,
) -> std::result::Result<Vec<Post>, String> {
    let mut posts = Vec::with_capacity(lines.len());
    for (i, p) in lines.into_iter().enumerate() {
        let ts = parse_timestamp(&p.ts)
            .ok_or_else(|| format!("{field}[{i}].ts: invalid timestamp {:?}", p.ts))?;
        let post = Post::new(p.text, ts, p.img, emoji_map)
            .map_err(|e| format!("{field}[{i}].img: {e}"))?;
        posts.extend(post);
    }
    Ok(posts)
}

/// Parses JSONL text; `origin` is used in error messages.
pub fn parse_corpus(text: &str, origin: &str, emoji_map: &EmojiMap) -> Result<CorpusSplit> {
    let mut split = CorpusSplit::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UserLine =
            serde_json::from_str(line).map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        let label = Label::from_u8(rec.label).ok_or_else(|| {
            Error::parse(origin, lineno, format!("label: expected 0 or 1, got {}", rec.label))
        })?;
        let posts = build_posts(rec.posts, "posts", emoji_map)
            .map_err(|m| Error::parse(origin, lineno, m))?;
        let hidden = rec
            .hidden_posts
            .map(|h| build_posts(h, "hidden_posts", emoji_map))
            .transpose()
            .map_err(|m| Error::parse(origin, lineno, m))?;
        let user = UserRecord::new(
            rec.user_id,
            rec.gender,
            rec.screen_name,
            rec.followers,
            rec.following,
            posts,
            label,
            hidden,
        );
        split.part_mut(rec.split).push(user);
    }
    split.validate()?;
    Ok(split)
}

pub fn load_corpus_with(path: impl AsRef<Path>, emoji_map: &EmojiMap) -> Result<CorpusSplit> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, &path.display().to_string(), emoji_map)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusSplit> {
    load_corpus_with(path, &EmojiMap::default())
}

pub fn write_corpus<W: Write>(split: &CorpusSplit, mut out: W) -> Result<()> {
    for (name, user) in split.iter() {
        serde_json::to_writer(&mut out, &user_line(name, user))?;
        out.write_all(b"\n").map_err(|e| Error::io("<corpus writer>", e))?;
    }
    Ok(())
}

pub fn save_corpus(split: &CorpusSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus(split, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
