//! Seeded synthetic corpus with a tunable planted signal `s ∈ [0, 1]`.
//!
//! Every label-dependent distribution is an interpolation that collapses
//! to the label-independent one at `s = 0`:
//!
//! * lexicon phrase rate per visible post: `b + s·(r_u − b)` for at-risk
//!   users (`r_u ~ U[0.2, 0.6]` per user) and `b·(1 − s)` otherwise;
//! * image features: `A·z + 0.05·ε` for a fixed `512 × 8` basis `A`, with
//!   latent `z ~ N(±s·u, I)` along a fixed unit direction `u`, so the
//!   latent class means are `2s` apart;
//! * night-time posting share and follower counts shift with `s`.
//!
//! At-risk users also get a hidden stream whose phrase rate is markedly
//! higher than their visible one.
//!
//! Users listed in `planted_rho` are built so that the Pearson correlation
//! between their monthly visible and hidden lexicon-hit counts equals the
//! requested target up to integer rounding.

use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::Lexicon;

use super::{CorpusSplit, EmojiMap, Gender, Label, Post, UserRecord, IMAGE_FEATURE_DIM};

/// Visible phrase rate shared by both classes at `s = 0`.
const BASE_RATE: f64 = 0.1;
const IMAGE_RATE: f64 = 0.4;
/// Image features are a fixed linear image of a low-dimensional latent,
/// plus a little isotropic noise, like real backbone activations.
const IMAGE_RANK: usize = 8;
const IMAGE_NOISE: f64 = 0.05;
/// Latent distance between class means at `s = 1`.
const IMAGE_SEPARATION: f64 = 2.0;
const NIGHT_SHARE: f64 = 0.2;
const NIGHT_SHIFT: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub users_per_class: usize,
    pub posts_per_user: usize,
    pub signal: f64,
    pub vocab_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Train/validation/test fractions, applied per class.
    #[serde(default = "default_fractions")]
    pub split_fractions: [f64; 3],
    /// First month of the 12-month posting window, `YYYY-MM`.
    #[serde(default = "default_window_start")]
    pub window_start: String,
    /// Target visible/hidden monthly correlations; one planted at-risk
    /// user per entry, placed first among the test split's at-risk users.
    #[serde(default)]
    pub planted_rho: Vec<f64>,
    /// Hidden posts per at-risk user; defaults to half of `posts_per_user`.
    #[serde(default)]
    pub hidden_posts_per_user: Option<usize>,
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_window_start() -> String {
    "2018-05".to_string()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users_per_class: 50,
            posts_per_user: 20,
            signal: 1.0,
            vocab_size: 200,
            seed: 0,
            split_fractions: default_fractions(),
            window_start: default_window_start(),
            planted_rho: Vec::new(),
            hidden_posts_per_user: None,
        }
    }
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(Error::Config(format!("signal {} outside [0, 1]", self.signal)));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if self.posts_per_user == 0 {
            return Err(Error::Config("posts_per_user must be positive".into()));
        }
        let total: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|f| *f < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} must be non-negative and sum to 1",
                self.split_fractions
            )));
        }
        if self.planted_rho.iter().any(|r| !(-1.0..=1.0).contains(r)) {
            return Err(Error::Config("planted_rho entries must lie in [-1, 1]".into()));
        }
        let (_, _, test) = self.split_counts();
        if self.planted_rho.len() > test {
            return Err(Error::Config(format!(
                "{} planted users but only {test} at-risk test users",
                self.planted_rho.len()
            )));
        }
        self.window()?;
        Ok(())
    }

    /// Per-class (train, validation, test) user counts.
    pub fn split_counts(&self) -> (usize, usize, usize) {
        let n = self.users_per_class as f64;
        let val = (n * self.split_fractions[1]).round() as usize;
        let test = (n * self.split_fractions[2]).round() as usize;
        let test = test.min(self.users_per_class);
        let val = val.min(self.users_per_class - test);
        (self.users_per_class - val - test, val, test)
    }

    pub fn window(&self) -> Result<MonthWindow> {
        MonthWindow::parse(&self.window_start)
    }
}

/// Twelve consecutive calendar months.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonthWindow {
    pub start_year: i32,
    pub start_month: u32,
}

impl MonthWindow {
    pub fn new(start_year: i32, start_month: u32) -> Result<Self> {
        if !(1..=12).contains(&start_month) {
            return Err(Error::Config(format!("month {start_month} outside 1..=12")));
        }
        Ok(Self {
            start_year,
            start_month,
        })
    }

    /// `YYYY-MM`
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("window start {s:?} is not YYYY-MM"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        Self::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }

    /// Position `0..12` of the month containing `date`, if inside.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let months = (date.year() - self.start_year) * 12 + date.month() as i32 - self.start_month as i32;
        (0..12).contains(&months).then_some(months as usize)
    }

    pub fn month_start(&self, index: usize) -> NaiveDate {
        let m0 = self.start_month as i32 - 1 + index as i32;
        NaiveDate::from_ymd_opt(self.start_year + m0.div_euclid(12), (m0.rem_euclid(12) + 1) as u32, 1)
            .expect("valid month")
    }

    pub fn days_in_month(&self, index: usize) -> i64 {
        (self.month_start(index + 1) - self.month_start(index)).num_days()
    }

    pub fn label(&self, index: usize) -> String {
        self.month_start(index).format("%Y-%m").to_string()
    }

    pub fn total_days(&self) -> i64 {
        (self.month_start(12) - self.month_start(0)).num_days()
    }
}

impl Default for MonthWindow {
    fn default() -> Self {
        Self {
            start_year: 2018,
            start_month: 5,
        }
    }
}

struct Generator<'a> {
    config: &'a SynthConfig,
    lexicon: &'a Lexicon,
    emoji_map: EmojiMap,
    emoji: Vec<String>,
    window: MonthWindow,
    vocab: Vec<String>,
    /// `512 × IMAGE_RANK`, row-major.
    image_basis: Vec<f64>,
    /// Unit vector in latent space separating the class means.
    latent_direction: [f64; IMAGE_RANK],
}

impl<'a> Generator<'a> {
    fn neutral(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
        (0..n)
            .map(|_| self.vocab[rng.gen_range(0..self.vocab.len())].clone())
            .collect()
    }

    fn phrase(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let e = &self.lexicon.entries()[rng.gen_range(0..self.lexicon.len())];
        e.phrase.clone()
    }

    /// Filler words with `phrases` lexicon phrases spliced in at random
    /// positions, plus occasional URL or emoji noise.
    fn sentence(&self, rng: &mut ChaCha8Rng, phrases: usize) -> String {
        let len = rng.gen_range(4..=10);
        let neutral = self.neutral(rng, len);
        // Phrases go into distinct gaps between filler words, so no phrase
        // splits another and no two phrases touch.
        let mut gaps: Vec<usize> = (0..=len).collect();
        gaps.shuffle(rng);
        let mut slots: Vec<Option<Vec<String>>> = vec![None; len + 1];
        for &gap in gaps.iter().take(phrases) {
            slots[gap] = Some(self.phrase(rng));
        }
        let mut words = Vec::with_capacity(len + 3 * phrases);
        for (i, slot) in slots.into_iter().enumerate() {
            words.extend(slot.into_iter().flatten());
            if i < len {
                words.push(neutral[i].clone());
            }
        }
        if rng.gen_bool(0.05) {
            let pos = rng.gen_range(0..=words.len());
            words.insert(pos, format!("http://t.cn/{:06x}", rng.gen_range(0..0xFFFFFF)));
        }
        if !self.emoji.is_empty() && rng.gen_bool(0.1) {
            words.push(self.emoji[rng.gen_range(0..self.emoji.len())].clone());
        }
        words.join(" ")
    }

    fn timestamp(&self, rng: &mut ChaCha8Rng, night_share: f64) -> NaiveDateTime {
        let day = rng.gen_range(0..self.window.total_days());
        self.timestamp_on(rng, self.window.month_start(0) + Duration::days(day), night_share)
    }

    fn timestamp_on(&self, rng: &mut ChaCha8Rng, date: NaiveDate, night_share: f64) -> NaiveDateTime {
        let hour = if rng.gen_bool(night_share) {
            rng.gen_range(0..6)
        } else {
            rng.gen_range(6..24)
        };
        let time = NaiveTime::from_hms_opt(hour, rng.gen_range(0..60), rng.gen_range(0..60))
            .expect("valid time");
        date.and_time(time)
    }

    fn image(&self, rng: &mut ChaCha8Rng, label: Label) -> Option<Vec<f64>> {
        if !rng.gen_bool(IMAGE_RATE) {
            return None;
        }
        let sign = match label {
            Label::AtRisk => 0.5,
            Label::NotAtRisk => -0.5,
        };
        let s = self.config.signal;
        let mut latent = [0.0; IMAGE_RANK];
        for (z, d) in latent.iter_mut().zip(self.latent_direction) {
            let noise: f64 = StandardNormal.sample(rng);
            *z = noise + sign * IMAGE_SEPARATION * s * d;
        }
        Some(
            self.image_basis
                .chunks(IMAGE_RANK)
                .map(|row| {
                    let noise: f64 = StandardNormal.sample(rng);
                    row.iter().zip(&latent).map(|(a, z)| a * z).sum::<f64>() + IMAGE_NOISE * noise
                })
                .collect(),
        )
    }

    fn post(&self, text: String, ts: NaiveDateTime, img: Option<Vec<f64>>) -> Post {
        Post::new(text, ts, img, &self.emoji_map)
            .expect("generated image features are well formed")
            .expect("generated posts are never empty")
    }

    fn profile(&self, rng: &mut ChaCha8Rng, label: Label) -> (Gender, String, u64, u64) {
        let gender = match rng.gen_range(0..20) {
            0..=8 => Gender::Male,
            9..=17 => Gender::Female,
            _ => Gender::Unknown,
        };
        let name_len = rng.gen_range(2..=16);
        let name: String = (0..name_len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        let s = self.config.signal;
        let max_followers = match label {
            Label::AtRisk => 1500.0 - 1000.0 * s,
            Label::NotAtRisk => 1500.0,
        };
        let followers = rng.gen_range(20.0..=max_followers.max(21.0)).round() as u64;
        let following = rng.gen_range(10..=800);
        (gender, name, followers, following)
    }

    fn night_share(&self, label: Label) -> f64 {
        match label {
            Label::AtRisk => NIGHT_SHARE + NIGHT_SHIFT * self.config.signal,
            Label::NotAtRisk => NIGHT_SHARE,
        }
    }

    fn user(&self, rng: &mut ChaCha8Rng, id: String, label: Label) -> UserRecord {
        let (gender, name, followers, following) = self.profile(rng, label);
        let s = self.config.signal;
        let user_rate: f64 = rng.gen_range(0.2..0.6);
        let rate = match label {
            Label::AtRisk => BASE_RATE + s * (user_rate - BASE_RATE),
            Label::NotAtRisk => BASE_RATE * (1.0 - s),
        };
        let night = self.night_share(label);
        let posts = (0..self.config.posts_per_user)
            .map(|_| {
                let phrases = usize::from(rng.gen_bool(rate));
                let text = self.sentence(rng, phrases);
                let ts = self.timestamp(rng, night);
                let img = self.image(rng, label);
                self.post(text, ts, img)
            })
            .collect();
        let hidden = (label == Label::AtRisk).then(|| {
            let hidden_rate = (0.3 + 2.0 * rate).min(1.0);
            let n = self
                .config
                .hidden_posts_per_user
                .unwrap_or(self.config.posts_per_user.div_ceil(2));
            (0..n)
                .map(|_| {
                    let phrases = usize::from(rng.gen_bool(hidden_rate));
                    let text = self.sentence(rng, phrases);
                    let ts = self.timestamp(rng, night);
                    self.post(text, ts, None)
                })
                .collect()
        });
        UserRecord::new(id, gender, name, followers, following, posts, label, hidden)
    }

    /// Month-level hit counts with Pearson correlation `rho` (before
    /// rounding) between the visible and hidden series.
    fn planted_series(&self, rng: &mut ChaCha8Rng, rho: f64) -> ([u32; 12], [u32; 12]) {
        const SCALE: f64 = 20.0;
        let centered_unit = |v: &mut [f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
        };
        let mut h: Vec<f64> = (0..12).map(|_| StandardNormal.sample(rng)).collect();
        centered_unit(&mut h);
        let mut w: Vec<f64> = (0..12).map(|_| StandardNormal.sample(rng)).collect();
        centered_unit(&mut w);
        let proj: f64 = w.iter().zip(&h).map(|(a, b)| a * b).sum();
        w.iter_mut().zip(&h).for_each(|(a, b)| *a -= proj * b);
        centered_unit(&mut w);

        let ortho = (1.0 - rho * rho).max(0.0).sqrt();
        let visible: Vec<f64> = h.iter().zip(&w).map(|(a, b)| rho * a + ortho * b).collect();
        let offset = |v: &[f64]| SCALE * v.iter().fold(0.0f64, |m, x| m.max(-x)) + 1.0;
        let (ov, oh) = (offset(&visible), offset(&h));
        let mut vis = [0u32; 12];
        let mut hid = [0u32; 12];
        for m in 0..12 {
            vis[m] = (ov + SCALE * visible[m]).round() as u32;
            hid[m] = (oh + SCALE * h[m]).round() as u32;
        }
        (vis, hid)
    }

    /// Posts for one month carrying exactly `hits` phrases (up to three per
    /// post), plus one phrase-free post so every month is represented.
    fn month_posts(
        &self,
        rng: &mut ChaCha8Rng,
        month: usize,
        hits: u32,
        label: Label,
        with_images: bool,
    ) -> Vec<Post> {
        let mut counts = Vec::new();
        let mut left = hits;
        while left > 0 {
            let k = left.min(3);
            counts.push(k as usize);
            left -= k;
        }
        counts.push(0);
        let start = self.window.month_start(month);
        let days = self.window.days_in_month(month);
        counts
            .into_iter()
            .map(|k| {
                let date = start + Duration::days(rng.gen_range(0..days));
                let ts = self.timestamp_on(rng, date, self.night_share(label));
                let img = if with_images { self.image(rng, label) } else { None };
                self.post(self.sentence(rng, k), ts, img)
            })
            .collect()
    }

    fn planted_user(&self, rng: &mut ChaCha8Rng, id: String, rho: f64) -> UserRecord {
        let label = Label::AtRisk;
        let (gender, name, followers, following) = self.profile(rng, label);
        let (vis, hid) = self.planted_series(rng, rho);
        let mut posts = Vec::new();
        let mut hidden = Vec::new();
        for m in 0..12 {
            posts.extend(self.month_posts(rng, m, vis[m], label, true));
            hidden.extend(self.month_posts(rng, m, hid[m], label, false));
        }
        UserRecord::new(id, gender, name, followers, following, posts, label, Some(hidden))
    }
}

/// Deterministic in `(config, seed)`; `seed` overrides `config.seed`.
pub fn generate_synthetic(config: &SynthConfig, lexicon: &Lexicon, seed: u64) -> Result<CorpusSplit> {
    config.validate()?;
    if lexicon.is_empty() {
        return Err(Error::Config("lexicon is empty".into()));
    }
    let emoji_map = EmojiMap::default();
    let emoji = emoji_map.iter().map(|(k, _)| k.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (IMAGE_RANK as f64).sqrt().recip();
    let image_basis = (0..IMAGE_FEATURE_DIM * IMAGE_RANK)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    let mut latent_direction = [0.0; IMAGE_RANK];
    for v in &mut latent_direction {
        *v = Distribution::<f64>::sample(&StandardNormal, &mut rng);
    }
    let norm = latent_direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    latent_direction.iter_mut().for_each(|v| *v /= norm);
    let gen = Generator {
        config,
        lexicon,
        emoji_map,
        emoji,
        window: config.window()?,
        vocab: (0..config.vocab_size).map(|i| format!("w{i:04}")).collect(),
        image_basis,
        latent_direction,
    };

    let (n_train, n_val, _) = config.split_counts();
    let mut split = CorpusSplit::default();
    let mut planted_ids = Vec::new();
    let mut next_id = 0usize;
    for label in [Label::AtRisk, Label::NotAtRisk] {
        let mut users = Vec::with_capacity(config.users_per_class);
        for _ in 0..config.users_per_class {
            let id = format!("u{next_id:05}");
            next_id += 1;
            users.push(gen.user(&mut rng, id, label));
        }
        users.shuffle(&mut rng);
        let mut test: Vec<UserRecord> = users.split_off(n_train + n_val);
        let val = users.split_off(n_train);
        if label == Label::AtRisk {
            for (slot, &rho) in test.iter_mut().zip(&config.planted_rho) {
                let id = slot.user_id.clone();
                *slot = gen.planted_user(&mut rng, id.clone(), rho);
                planted_ids.push(id);
            }
        }
        split.train.extend(users);
        split.validation.extend(val);
        split.test.extend(test);
    }
    for part in [&mut split.train, &mut split.validation, &mut split.test] {
        part.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    }
    // Planted users lead the test split, in `planted_rho` order.
    split.test.sort_by_key(|u| {
        planted_ids
            .iter()
            .position(|id| *id == u.user_id)
            .unwrap_or(usize::MAX)
    });
    Ok(split)
}

/// `(user_id, target ρ)` for the planted users of a generated split.
pub fn planted_users(split: &CorpusSplit, config: &SynthConfig) -> Vec<(String, f64)> {
    split
        .test
        .iter()
        .zip(&config.planted_rho)
        .map(|(u, &rho)| (u.user_id.clone(), rho))
        .collect()
}
