use chrono::Timelike;
use serde::{Deserialize, Serialize};

use crate::corpus::{Gender, UserRecord};

pub const FEATURE_DIM: usize = 12;

/// Indices of the count-valued entries (name length through picture count).
const COUNT_RANGE: std::ops::Range<usize> = 3..8;
const PICTURE_INDEX: usize = 7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureScaling {
    #[default]
    Raw,
    Log1p,
}

/// Profile vector: gender one-hot (m, f, unknown), screen-name length,
/// post count, followers, following, posts with a picture, and the share of
/// posts made in each of the hour buckets `[0,6) [6,12) [12,18) [18,24)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserFeatures(pub [f64; FEATURE_DIM]);

impl UserFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn gender(&self) -> &[f64] {
        &self.0[0..3]
    }

    pub fn time_proportions(&self) -> &[f64] {
        &self.0[8..12]
    }

    pub fn scaled(mut self, scaling: FeatureScaling) -> Self {
        if scaling == FeatureScaling::Log1p {
            for v in &mut self.0[COUNT_RANGE] {
                *v = v.ln_1p();
            }
        }
        self
    }

    /// Picture count zeroed; used when the image channel is switched off so
    /// the result matches a corpus with images stripped.
    pub fn without_pictures(mut self) -> Self {
        self.0[PICTURE_INDEX] = 0.0;
        self
    }
}

/// Computed over all of the user's visible posts.
pub fn extract_features(user: &UserRecord) -> UserFeatures {
    let mut f = [0.0; FEATURE_DIM];
    let g = match user.gender {
        Gender::Male => 0,
        Gender::Female => 1,
        Gender::Unknown => 2,
    };
    f[g] = 1.0;
    let posts = user.posts();
    f[3] = user.screen_name.chars().count() as f64;
    f[4] = posts.len() as f64;
    f[5] = user.follower_count as f64;
    f[6] = user.following_count as f64;
    f[7] = posts.iter().filter(|p| p.has_image()).count() as f64;
    if !posts.is_empty() {
        let mut buckets = [0usize; 4];
        for p in posts {
            buckets[p.timestamp().hour() as usize / 6] += 1;
        }
        for (slot, count) in f[8..].iter_mut().zip(buckets) {
            *slot = count as f64 / posts.len() as f64;
        }
    }
    UserFeatures(f)
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::corpus::{EmojiMap, Label, Post, IMAGE_FEATURE_DIM};

    fn post(hour: u32, image: bool) -> Post {
        let ts = NaiveDate::from_ymd_opt(2018, 6, 1).unwrap().and_hms_opt(hour, 0, 0).unwrap();
        let img = image.then(|| vec![0.0; IMAGE_FEATURE_DIM]);
        Post::new("some words", ts, img, &EmojiMap::default()).unwrap().unwrap()
    }

    #[test]
    fn male_four_afternoon_posts() {
        let posts = vec![post(13, true), post(13, false), post(13, false), post(13, false)];
        let u = UserRecord::new("u", Gender::Male, "abc", 10, 5, posts, Label::NotAtRisk, None);
        let f = extract_features(&u);
        assert_eq!(f.0, [1.0, 0.0, 0.0, 3.0, 4.0, 10.0, 5.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn empty_stream() {
        let u = UserRecord::new("u", Gender::Unknown, "名字", 7, 8, vec![], Label::AtRisk, None);
        let f = extract_features(&u);
        assert_eq!(f.0, [0.0, 0.0, 1.0, 2.0, 0.0, 7.0, 8.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn bucket_edges() {
        let posts = vec![post(0, false), post(5, false), post(6, false), post(23, false)];
        let u = UserRecord::new("u", Gender::Female, "", 0, 0, posts, Label::AtRisk, None);
        let f = extract_features(&u);
        assert_eq!(f.time_proportions(), &[0.5, 0.25, 0.0, 0.25]);
        assert_eq!(f.gender(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn log_scaling_touches_counts_only() {
        let posts = vec![post(13, true)];
        let u = UserRecord::new("u", Gender::Male, "ab", 99, 0, posts, Label::AtRisk, None);
        let f = extract_features(&u).scaled(FeatureScaling::Log1p);
        assert_eq!(f.0[0], 1.0);
        assert!((f.0[5] - 100f64.ln()).abs() < 1e-15);
        assert_eq!(f.0[6], 0.0);
        assert_eq!(f.0[10], 1.0);
    }
}
