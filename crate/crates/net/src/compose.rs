//! Turns reconstructed logits into the answer shown to the user. Runs at the
//! user only.

use std::time::Duration;

use privinfer_core::ring::FixedTensor;

use crate::router::chat_completion;
use crate::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub text: String,
    /// `(label, probability)` in rank order, per sample.
    pub ranked: Vec<Vec<(String, f64)>>,
    /// Set when the configured backend failed and the template was used instead.
    pub warning: Option<String>,
}

pub trait Composer {
    fn compose(&self, query: &str, logits: &[Vec<f64>], labels: &[String]) -> Result<Composition, NetError>;
}

/// Softmax probabilities sorted by decreasing score; equal scores keep label order.
pub fn rank(logits: &[f64], labels: &[String]) -> Vec<(String, f64)> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let mut ranked: Vec<(String, f64)> = labels.iter().cloned().zip(exps.iter().map(|e| e / sum)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

#[derive(Debug, Clone)]
pub struct TemplateComposer {
    pub top_k: usize,
}

impl Default for TemplateComposer {
    fn default() -> Self {
        Self { top_k: 3 }
    }
}

fn pct(p: f64) -> String {
    format!("{:.1}%", p * 100.0)
}

impl TemplateComposer {
    fn sentence(&self, ranked: &[(String, f64)]) -> String {
        let k = self.top_k.max(1).min(ranked.len());
        let top = &ranked[..k];
        let best = top[0].1;
        let tied: Vec<&(String, f64)> = ranked.iter().take_while(|(_, p)| *p == best).collect();
        if tied.len() > 1 {
            let names: Vec<&str> = tied.iter().take(k.max(2)).map(|(l, _)| l.as_str()).collect();
            return format!("No single finding stands out: {} are tied at {} each.", names.join(", "), pct(best));
        }
        let mut s = format!("The most likely finding is {} ({}).", top[0].0, pct(best));
        if k > 1 {
            let rest: Vec<String> = top[1..].iter().map(|(l, p)| format!("{l} ({})", pct(*p))).collect();
            s.push_str(&format!(" Next candidates: {}.", rest.join(", ")));
        }
        s
    }
}

impl Composer for TemplateComposer {
    fn compose(&self, _query: &str, logits: &[Vec<f64>], labels: &[String]) -> Result<Composition, NetError> {
        let ranked: Vec<Vec<(String, f64)>> = logits.iter().map(|row| rank(row, labels)).collect();
        let text = if ranked.len() == 1 {
            self.sentence(&ranked[0])
        } else {
            ranked.iter().enumerate().map(|(i, r)| format!("Sample {i}: {}", self.sentence(r))).collect::<Vec<_>>().join("\n")
        };
        Ok(Composition { text, ranked, warning: None })
    }
}

/// Sends the ranked classes to a local chat endpoint for phrasing, falling back
/// to the template when it cannot be reached.
#[derive(Debug, Clone)]
pub struct ChatComposer {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub template: TemplateComposer,
}

impl Composer for ChatComposer {
    fn compose(&self, query: &str, logits: &[Vec<f64>], labels: &[String]) -> Result<Composition, NetError> {
        let base = self.template.compose(query, logits, labels)?;
        let prompt = format!(
            "Answer the user's question from the classifier output.\nQuestion: {query}\nClassifier summary: {}",
            base.text
        );
        match chat_completion(&self.endpoint, &self.model, self.api_key.as_deref(), self.timeout, &prompt) {
            Ok(text) => Ok(Composition { text, ..base }),
            Err(e) => Ok(Composition { warning: Some(format!("chat backend unavailable ({e}); used the template")), ..base }),
        }
    }
}

/// Splits `result` into per-sample logit rows and renders them.
pub fn compose_response(
    query: &str,
    result: &FixedTensor,
    labels: &[String],
    composer: &dyn Composer,
) -> Result<Composition, NetError> {
    let classes = *result.shape().last().unwrap_or(&0);
    if classes == 0 || labels.len() != classes {
        return Err(NetError::Labels { labels: labels.len(), logits: classes });
    }
    let reals = result.to_reals();
    let rows: Vec<Vec<f64>> = reals.chunks(classes).map(<[f64]>::to_vec).collect();
    composer.compose(query, &rows, labels)
}
