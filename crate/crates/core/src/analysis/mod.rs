//! Month-by-month comparison of a user's visible posts, hidden posts and
//! the detector's post-level attention.

mod plot;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::MonthWindow;
use crate::corpus::{Post, UserRecord};
use crate::embed_refine::EmbeddingTable;
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::sdm::SdmModel;

pub use plot::series_svg;

pub type MonthlyVector = [f64; 12];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitWeighting {
    /// Every match counts once.
    #[default]
    Count,
    /// Every match counts its lexicon weight.
    Weighted,
}

fn month_of(window: &MonthWindow, post: &Post) -> Option<usize> {
    window.index_of(post.timestamp().date())
}

/// Lexicon matches per month of `window`; posts outside it are ignored.
pub fn monthly_hits(posts: &[Post], lexicon: &Lexicon, window: &MonthWindow, weighting: HitWeighting) -> MonthlyVector {
    let mut v = [0.0; 12];
    for p in posts {
        if let Some(m) = month_of(window, p) {
            v[m] += match weighting {
                HitWeighting::Count => lexicon.count_hits(p.tokens()) as f64,
                HitWeighting::Weighted => lexicon.weighted_hits(p.tokens()) as f64,
            };
        }
    }
    v
}

/// Post-level attention summed per month. `weights` must hold one entry
/// per post the model classified, i.e. the user's most recent
/// `min(posts, max_posts)` posts.
pub fn monthly_attention(
    user: &UserRecord,
    weights: &[f64],
    max_posts: usize,
    window: &MonthWindow,
) -> Result<MonthlyVector> {
    let posts = user.recent_posts(max_posts);
    if posts.len() != weights.len() {
        return Err(Error::shape(
            "monthly_attention",
            format!("{} weights for {} classified posts of {:?}", weights.len(), posts.len(), user.user_id),
        ));
    }
    let mut v = [0.0; 12];
    for (p, w) in posts.iter().zip(weights) {
        if let Some(m) = month_of(window, p) {
            v[m] += w;
        }
    }
    Ok(v)
}

/// Sample Pearson correlation. Constant input has no defined correlation
/// and is reported as [`Error::ZeroVariance`].
pub fn pearson(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("pearson", format!("lengths {} and {}", u.len(), v.len())));
    }
    if u.is_empty() {
        return Err(Error::ZeroVariance("u"));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 {
        return Err(Error::ZeroVariance("u"));
    }
    if svv == 0.0 {
        return Err(Error::ZeroVariance("v"));
    }
    Ok((suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0))
}

fn pearson_or_na(u: &[f64], v: &[f64]) -> Result<Option<f64>> {
    match pearson(u, v) {
        Ok(r) => Ok(Some(r)),
        Err(Error::ZeroVariance(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserCorrelation {
    pub user_id: String,
    /// Visible vs hidden hits; `None` when either series is constant.
    pub rho_nh: Option<f64>,
    /// Attention vs hidden hits.
    pub rho_ah: Option<f64>,
    pub v_n: MonthlyVector,
    pub v_h: MonthlyVector,
    pub v_a: MonthlyVector,
}

impl UserCorrelation {
    /// `month,v_n,v_h,v_a`
    pub fn series_csv(&self, window: &MonthWindow) -> String {
        let mut out = String::from("month,v_n,v_h,v_a\n");
        for m in 0..12 {
            writeln!(
                out,
                "{},{},{},{:.10}",
                window.label(m),
                self.v_n[m],
                self.v_h[m],
                self.v_a[m]
            )
            .expect("String write");
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub users: Vec<UserCorrelation>,
    /// Users without a hidden stream.
    pub skipped: Vec<String>,
}

fn fmt_rho(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

impl CorrelationReport {
    /// `user_id,rho_nh,rho_ah`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("user_id,rho_nh,rho_ah\n");
        for u in &self.users {
            writeln!(out, "{},{},{}", u.user_id, fmt_rho(u.rho_nh), fmt_rho(u.rho_ah)).expect("String write");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:>9} {:>9}\n", "user", "rho_nh", "rho_ah");
        for u in &self.users {
            writeln!(out, "{:<12} {:>9} {:>9}", u.user_id, fmt_rho(u.rho_nh), fmt_rho(u.rho_ah))
                .expect("String write");
        }
        if !self.skipped.is_empty() {
            writeln!(out, "skipped (no hidden posts): {}", self.skipped.len()).expect("String write");
        }
        out
    }
}

/// Per-user series and correlations for every user with hidden posts.
pub fn correlation_report(
    users: &[UserRecord],
    model: &SdmModel,
    table: &EmbeddingTable,
    lexicon: &Lexicon,
    window: &MonthWindow,
    weighting: HitWeighting,
) -> Result<CorrelationReport> {
    let mut report = CorrelationReport::default();
    for user in users {
        let Some(hidden) = user.hidden_posts() else {
            log::info!("skipping {}: no hidden posts", user.user_id);
            report.skipped.push(user.user_id.clone());
            continue;
        };
        let out = model.classify_user(table, user)?;
        let v_n = monthly_hits(user.posts(), lexicon, window, weighting);
        let v_h = monthly_hits(hidden, lexicon, window, weighting);
        let v_a = monthly_attention(user, &out.post_attention, model.config.max_posts, window)?;
        report.users.push(UserCorrelation {
            user_id: user.user_id.clone(),
            rho_nh: pearson_or_na(&v_n, &v_h)?,
            rho_ah: pearson_or_na(&v_a, &v_h)?,
            v_n,
            v_h,
            v_a,
        });
    }
    Ok(report)
}
