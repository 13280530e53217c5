//! Intent routing: maps a free-text query to a capability tag in the registry
//! and picks the servers that will run the inference.

use std::time::Duration;

use serde_json::json;

use crate::registry::{ServerEntry, ServerRegistry};
use crate::NetError;

/// Chooses a capability tag for `query` among `tags`, which are listed in
/// registry order. `Ok(None)` means nothing fits.
pub trait Router {
    fn select(&self, query: &str, tags: &[&str]) -> Result<Option<String>, NetError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutePlan {
    pub task: String,
    pub model_server: ServerEntry,
    pub cloud: ServerEntry,
}

/// Keyword rules. A rule fires when any of its keywords is a word of the query.
#[derive(Debug, Clone)]
pub struct KeywordRouter {
    pub rules: Vec<(String, Vec<String>)>,
}

impl Default for KeywordRouter {
    fn default() -> Self {
        let rule = |tag: &str, words: &[&str]| (tag.to_string(), words.iter().map(|w| w.to_string()).collect());
        Self {
            rules: vec![
                rule("cnn-chest-xray", &["chest", "x-ray", "xray", "lung", "lungs", "radiograph", "thorax"]),
                rule("digit-classifier", &["digit", "digits", "handwritten", "handwriting", "mnist", "number"]),
                rule("image-classifier", &["image", "photo", "picture", "classify", "object"]),
            ],
        }
    }
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

impl Router for KeywordRouter {
    fn select(&self, query: &str, tags: &[&str]) -> Result<Option<String>, NetError> {
        let q = words(query);
        for tag in tags {
            let fires = self
                .rules
                .iter()
                .filter(|(t, _)| t == tag)
                .any(|(_, kws)| kws.iter().any(|k| q.iter().any(|w| w == k)));
            if fires {
                return Ok(Some(tag.to_string()));
            }
        }
        Ok(None)
    }
}

/// Asks an OpenAI-compatible chat completion endpoint to pick a tag.
#[derive(Debug, Clone)]
pub struct ChatRouter {
    /// Base URL, e.g. `http://127.0.0.1:8080/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
}

impl ChatRouter {
    fn ask(&self, prompt: &str) -> Result<String, NetError> {
        chat_completion(&self.endpoint, &self.model, self.api_key.as_deref(), self.timeout, prompt)
            .map_err(NetError::Router)
    }
}

impl Router for ChatRouter {
    fn select(&self, query: &str, tags: &[&str]) -> Result<Option<String>, NetError> {
        let prompt = format!(
            "Pick the capability that serves this request. Answer with exactly one of: {}, or none.\nRequest: {query}",
            tags.join(", ")
        );
        let answer = self.ask(&prompt)?;
        let answer = answer.trim().trim_matches(|c: char| c == '"' || c == '.' || c == '`').to_lowercase();
        // The answer is only accepted if it names a tag that is actually registered.
        Ok(tags.iter().find(|t| t.to_lowercase() == answer).map(|t| t.to_string()))
    }
}

/// Posts one user message and returns the reply text.
pub fn chat_completion(
    endpoint: &str,
    model: &str,
    api_key: Option<&str>,
    timeout: Duration,
    prompt: &str,
) -> Result<String, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
    let url = format!("{}/chat/completions", endpoint.trim_end_matches('/'));
    let body = json!({"model": model, "messages": [{"role": "user", "content": prompt}], "temperature": 0});
    let mut req = agent.post(&url);
    if let Some(k) = api_key {
        req = req.header("Authorization", &format!("Bearer {k}"));
    }
    let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
    let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
    v["choices"][0]["message"]["content"].as_str().map(str::to_string).ok_or_else(|| "reply has no content".into())
}

/// Picks the model server for `query`: the router names a tag, and the first
/// model server in registry order carrying it is chosen together with the
/// first cloud server.
pub fn route_intent(query: &str, reg: &ServerRegistry, router: &dyn Router) -> Result<RoutePlan, NetError> {
    if query.trim().is_empty() {
        return Err(NetError::EmptyQuery);
    }
    let cloud = reg.first_cloud().ok_or_else(|| NetError::NoRoute("registry has no cloud server".into()))?;
    let mut tags: Vec<&str> = Vec::new();
    for s in reg.models() {
        for t in &s.capabilities {
            if !tags.contains(&t.as_str()) {
                tags.push(t);
            }
        }
    }
    if tags.is_empty() {
        return Err(NetError::NoRoute("registry has no model server".into()));
    }
    let task = router.select(query, &tags)?.ok_or_else(|| NetError::NoRoute(format!("no capability matches {query:?}")))?;
    let model_server = reg
        .models()
        .find(|s| s.capabilities.contains(&task))
        .ok_or_else(|| NetError::NoRoute(format!("router chose unregistered capability {task}")))?;
    Ok(RoutePlan { task, model_server: model_server.clone(), cloud: cloud.clone() })
}
