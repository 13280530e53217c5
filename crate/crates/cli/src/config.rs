//! Command-line flags and the JSON run configuration.
//!
//! Every flag can also come from a `PRIVINFER_*` environment variable or from
//! the `--config` file. Flags beat the environment, which beats the file.
//! `HOST`/`PORT` fill in `--listen` and `PEER_KEY_FILE` fills in `--peer-key`
//! when nothing else sets them.

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use privinfer_core::gadgets::TruncMode;
use privinfer_core::ot::OtKind;
use privinfer_core::runtime::SessionOptions;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    ModelServer,
    CloudServer,
    User,
    Bench,
    /// Writes a new static identity key.
    Keygen,
    /// Writes a built-in model and a sample input.
    Fixture,
    /// Signs a registry file.
    SignRegistry,
}

#[derive(Debug, Clone, Default, Parser, Deserialize)]
#[command(name = "privinfer", version, about = "Two-party private inference: servers, user agent and benchmarks")]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[arg(long, env = "PRIVINFER_ROLE", value_enum)]
    pub role: Option<Role>,
    /// JSON file with any of these settings, in snake_case.
    #[arg(long, env = "PRIVINFER_CONFIG")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Model file (model server) or output path (fixture).
    #[arg(long, env = "PRIVINFER_MODEL")]
    pub model: Option<PathBuf>,
    /// Address to listen on; falls back to HOST and PORT.
    #[arg(long, env = "PRIVINFER_LISTEN")]
    pub listen: Option<String>,
    /// Cloud server endpoint, used by the model server.
    #[arg(long, env = "PRIVINFER_PEER")]
    pub peer: Option<String>,
    #[arg(long, env = "PRIVINFER_REGISTRY")]
    pub registry: Option<PathBuf>,
    /// Seeds protocol randomness and the input split; unset uses OS entropy.
    #[arg(long, env = "PRIVINFER_SEED")]
    pub seed: Option<u64>,
    /// `faithful` or `local`.
    #[arg(long, env = "PRIVINFER_TRUNC")]
    pub trunc: Option<String>,
    /// `real` or `dealer`.
    #[arg(long, env = "PRIVINFER_OT")]
    pub ot: Option<String>,
    /// This process's identity key file.
    #[arg(long, env = "PRIVINFER_KEY")]
    pub key: Option<PathBuf>,
    /// The cloud's public key, as a file or 64 hex digits; falls back to PEER_KEY_FILE.
    #[arg(long, env = "PRIVINFER_PEER_KEY")]
    pub peer_key: Option<String>,
    /// Model-server keys the cloud accepts; repeatable. Unset accepts any.
    #[arg(long = "allow-key", env = "PRIVINFER_ALLOW_KEY", value_delimiter = ',')]
    pub allow_keys: Vec<String>,
    /// Ed25519 key the registry signature must verify under.
    #[arg(long, env = "PRIVINFER_REGISTRY_KEY")]
    pub registry_key: Option<String>,
    #[arg(long, env = "PRIVINFER_QUERY")]
    pub query: Option<String>,
    /// Input tensor file.
    #[arg(long, env = "PRIVINFER_INPUT")]
    pub input: Option<PathBuf>,
    /// Output file: logits, key, sample tensor or signed registry by role.
    #[arg(long, env = "PRIVINFER_OUT")]
    pub out: Option<PathBuf>,
    /// Also write the composed response here.
    #[arg(long, env = "PRIVINFER_RESPONSE")]
    pub response: Option<PathBuf>,
    /// Models to benchmark: fixture names or model files, comma separated.
    #[arg(long, env = "PRIVINFER_MODELS", value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long, env = "PRIVINFER_BATCH")]
    pub batch: Option<usize>,
    /// Machine-readable bench report.
    #[arg(long, env = "PRIVINFER_JSON")]
    pub json: Option<PathBuf>,
    /// Connect and handshake timeout in seconds.
    #[arg(long, env = "PRIVINFER_TIMEOUT")]
    pub timeout: Option<u64>,
    /// Longest wait for one inference, in seconds.
    #[arg(long, env = "PRIVINFER_SESSION_TIMEOUT")]
    pub session_timeout: Option<u64>,
    /// OpenAI-compatible endpoint for routing and phrasing; unset uses the keyword router and template.
    #[arg(long, env = "PRIVINFER_CHAT_ENDPOINT")]
    pub chat_endpoint: Option<String>,
    #[arg(long, env = "PRIVINFER_CHAT_MODEL")]
    pub chat_model: Option<String>,
    #[arg(long, env = "PRIVINFER_TOP_K")]
    pub top_k: Option<usize>,
    /// Daemon statistics (on exit) or user statistics, as JSON.
    #[arg(long, env = "PRIVINFER_STATS")]
    pub stats: Option<PathBuf>,
    /// Built-in model name for the fixture role.
    #[arg(long, env = "PRIVINFER_FIXTURE")]
    pub fixture: Option<String>,
    /// Sample input path for the fixture role.
    #[arg(long, env = "PRIVINFER_SAMPLE")]
    pub sample: Option<PathBuf>,
    /// Ed25519 signing key: written by `keygen --signing`, read by `sign-registry`.
    #[arg(long, env = "PRIVINFER_SIGNING_KEY")]
    pub signing_key: Option<PathBuf>,
    /// Generate an Ed25519 registry signing key instead of an identity.
    #[arg(long)]
    #[serde(skip)]
    pub signing: bool,
}

macro_rules! fill {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl RunConfig {
    /// Fills unset fields from the `--config` file and the fallback variables.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
            let file: RunConfig =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
            fill!(self, file; role, model, listen, peer, registry, seed, trunc, ot, key, peer_key, registry_key,
                query, input, out, response, models, batch, json, timeout, session_timeout, chat_endpoint,
                chat_model, top_k, stats, fixture, sample, signing_key);
            if self.allow_keys.is_empty() {
                self.allow_keys = file.allow_keys;
            }
        }
        if self.listen.is_none() {
            let host = std::env::var("HOST").ok();
            let port = std::env::var("PORT").ok();
            if host.is_some() || port.is_some() {
                self.listen = Some(format!(
                    "{}:{}",
                    host.unwrap_or_else(|| "127.0.0.1".into()),
                    port.unwrap_or_else(|| "0".into())
                ));
            }
        }
        if self.peer_key.is_none() {
            self.peer_key = std::env::var("PEER_KEY_FILE").ok();
        }
        Ok(self)
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| match self.role.and_then(|r| r.to_possible_value()) {
            Some(role) => CliError::Usage(format!("--{flag} is required for {}", role.get_name())),
            None => CliError::Usage(format!("--{flag} is required")),
        })
    }

    pub fn session_options(&self) -> Result<SessionOptions, CliError> {
        let mut opts = SessionOptions { seed: self.seed, ..Default::default() };
        if let Some(t) = &self.trunc {
            opts.trunc = t.parse::<TruncMode>().map_err(|_| CliError::Usage(format!("--trunc {t}: expected faithful or local")))?;
        }
        if let Some(o) = &self.ot {
            opts.ot = o.parse::<OtKind>().map_err(|_| CliError::Usage(format!("--ot {o}: expected real or dealer")))?;
        }
        Ok(opts)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout.unwrap_or(30))
    }

    pub fn session_timeout(&self) -> Duration {
        Duration::from_secs(self.session_timeout.unwrap_or(600))
    }

    pub fn listen_addr(&self) -> String {
        self.listen.clone().unwrap_or_else(|| "127.0.0.1:0".into())
    }
}
