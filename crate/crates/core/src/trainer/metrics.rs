use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;

/// Counts with at-risk as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::AtRisk, Label::AtRisk) => self.tp += 1,
            (Label::NotAtRisk, Label::AtRisk) => self.fp += 1,
            (Label::NotAtRisk, Label::NotAtRisk) => self.tn += 1,
            (Label::AtRisk, Label::NotAtRisk) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = Self::default();
        for (t, p) in pairs {
            c.record(t, p);
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR/(P+R)`, or 0 when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub label: u8,
    pub y1: f64,
    pub y0: f64,
    pub predicted: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub user_id: String,
    pub post_attention: Vec<f64>,
    pub word_attention: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub predictions: Vec<Prediction>,
    pub traces: Vec<AttentionTrace>,
}

impl EvalReport {
    pub fn from_outputs(predictions: Vec<Prediction>, traces: Vec<AttentionTrace>) -> Self {
        let confusion = Confusion::from_pairs(predictions.iter().map(|p| {
            (
                Label::from_u8(p.label).expect("stored labels are 0/1"),
                Label::from_u8(p.predicted).expect("stored labels are 0/1"),
            )
        }));
        Self {
            accuracy: confusion.accuracy(),
            f1: confusion.f1(),
            confusion,
            predictions,
            traces,
        }
    }

    pub fn summary_line(&self) -> String {
        let c = &self.confusion;
        format!(
            "accuracy {:.3}  f1 {:.3}  (tp {} fp {} tn {} fn {}, n = {})",
            self.accuracy,
            self.f1,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.total()
        )
    }

    /// `accuracy,f1,tp,fp,tn,fn`
    pub fn metrics_csv(&self) -> String {
        let c = &self.confusion;
        format!(
            "accuracy,f1,tp,fp,tn,fn\n{:.6},{:.6},{},{},{},{}\n",
            self.accuracy, self.f1, c.tp, c.fp, c.tn, c.fn_
        )
    }

    /// `user_id,label,y1,y0,predicted`
    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("user_id,label,y1,y0,predicted\n");
        for p in &self.predictions {
            writeln!(out, "{},{},{:.10},{:.10},{}", p.user_id, p.label, p.y1, p.y0, p.predicted)
                .expect("String write");
        }
        out
    }

    /// `user_id,post_index,att_weight`
    pub fn post_attention_csv(&self) -> String {
        let mut out = String::from("user_id,post_index,att_weight\n");
        for t in &self.traces {
            for (i, w) in t.post_attention.iter().enumerate() {
                writeln!(out, "{},{i},{w:.10}", t.user_id).expect("String write");
            }
        }
        out
    }

    /// `user_id,post_index,token_index,att_weight`
    pub fn word_attention_csv(&self) -> String {
        let mut out = String::from("user_id,post_index,token_index,att_weight\n");
        for t in &self.traces {
            for (i, post) in t.word_attention.iter().enumerate() {
                for (j, w) in post.iter().enumerate() {
                    writeln!(out, "{},{i},{j},{w:.10}", t.user_id).expect("String write");
                }
            }
        }
        out
    }
}
