//! Language-model gateway: prompt rendering, caching, retries, and a
//! deterministic offline mock.

mod cache;
pub mod parse;
pub mod prompts;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use cometh_core::metrics::parse_judgment;
use cometh_core::Judgment;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use cache::{cache_key, sha256_hex, CompletionRecord, DiskCache};
pub use prompts::{TemplateId, TemplateKind};

use crate::http::{HttpClient, HttpError};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidInput(String),
    #[error("cache error at {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("empty completion for {template}")]
    EmptyCompletion { template: TemplateId },
    #[error("could not parse {template} completion: {detail}")]
    ParseFailure { template: TemplateId, detail: String },
}

impl GatewayError {
    fn cache(path: &Path, e: impl Display) -> Self {
        GatewayError::Cache { path: path.to_path_buf(), message: e.to_string() }
    }
}

impl From<HttpError> for GatewayError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Transport(m) => GatewayError::Transport(m),
            HttpError::RateLimited { attempts } => GatewayError::RateLimited { attempts },
            HttpError::Status { status, body } => GatewayError::Http { status, body },
            HttpError::Malformed(m) => GatewayError::Transport(format!("malformed response: {m}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_model() -> String {
    "mock".into()
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> u64 {
    60
}

fn default_backoff() -> u64 {
    500
}

fn default_in_flight() -> usize {
    4
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            endpoint_url: None,
            model_name: default_model(),
            api_key_env: None,
            temperature: 0.0,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            backoff_ms: default_backoff(),
            cache_dir: None,
            max_in_flight: default_in_flight(),
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be at least 1".into()));
        }
        if self.timeout_secs == 0 {
            return Err(GatewayError::Config("timeout_secs must be positive".into()));
        }
        if self.backend == BackendKind::Remote && self.endpoint_url.is_none() {
            return Err(GatewayError::Config("remote backend needs endpoint_url".into()));
        }
        Ok(())
    }
}

/// Canned judge answers for the mock backend, keyed by scenario text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub judgments: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
enum MockInput<'a> {
    Scenario(&'a str),
    Clusters(&'a [Vec<String>]),
    FeatureEval { scenario: &'a str, feature: &'a str },
}

struct Request<'a> {
    template: TemplateId,
    prompt: String,
    mock: MockInput<'a>,
}

enum Backend {
    Mock(MockScript),
    Remote { client: HttpClient, url: String, api_key: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub raw: String,
    /// `None` when the response is not exactly one judgment word.
    pub judgment: Option<Judgment>,
}

pub struct Gateway {
    config: GatewayConfig,
    backend: Backend,
    cache: Option<DiskCache>,
    pool: rayon::ThreadPool,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self, GatewayError> {
        Self::with_script(config, MockScript::default())
    }

    pub fn with_script(config: GatewayConfig, script: MockScript) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend = match config.backend {
            BackendKind::Mock => Backend::Mock(script),
            BackendKind::Remote => {
                let api_key = match &config.api_key_env {
                    None => None,
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        GatewayError::Config(format!("environment variable {var} is not set"))
                    })?),
                };
                Backend::Remote {
                    client: HttpClient::new(
                        Duration::from_secs(config.timeout_secs),
                        config.max_retries,
                        Duration::from_millis(config.backoff_ms),
                    ),
                    url: config.endpoint_url.clone().unwrap_or_default(),
                    api_key,
                }
            }
        };
        let cache = config.cache_dir.as_deref().map(DiskCache::open).transpose()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_in_flight)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { config, backend, cache, pool, backend_calls: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Completions served by the backend rather than the cache.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    /// Runs `f` over `items` with at most `max_in_flight` concurrent calls.
    /// Results come back in input order.
    pub fn map<T, U, E, F>(&self, items: &[T], f: F) -> Result<Vec<U>, E>
    where
        T: Sync,
        U: Send,
        E: Send,
        F: Fn(&T) -> Result<U, E> + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    fn complete<T: Serialize>(
        &self,
        req: &Request<'_>,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<(String, Result<T, String>), GatewayError> {
        let prompt_hash = sha256_hex(req.prompt.as_bytes());
        let key = cache_key(&self.config.model_name, req.template, &prompt_hash, self.config.temperature);
        if let Some(rec) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            let parsed = parse(&rec.raw_response);
            return Ok((rec.raw_response, parsed));
        }
        let raw = self.call_backend(req)?;
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let parsed = parse(&raw);
        if let Some(cache) = &self.cache {
            let record = CompletionRecord {
                prompt_hash,
                model: self.config.model_name.clone(),
                template: req.template,
                temperature: self.config.temperature,
                raw_response: raw.clone(),
                parsed: parsed.as_ref().ok().and_then(|v| serde_json::to_value(v).ok()),
                timestamp: cache::now_secs(),
            };
            cache.put(&key, &record)?;
        }
        Ok((raw, parsed))
    }

    fn call_backend(&self, req: &Request<'_>) -> Result<String, GatewayError> {
        match &self.backend {
            Backend::Mock(script) => Ok(mock_completion(script, req)),
            Backend::Remote { client, url, api_key } => {
                let body = json!({
                    "model": self.config.model_name,
                    "temperature": self.config.temperature,
                    "messages": [{"role": "user", "content": req.prompt}],
                });
                let reply = client.post_json(url, api_key.as_deref(), &body)?;
                let content = reply
                    .pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                    .unwrap_or_default();
                if content.trim().is_empty() {
                    return Err(GatewayError::EmptyCompletion { template: req.template });
                }
                Ok(content.to_string())
            }
        }
    }

    fn expect_kind(template: TemplateId, kind: TemplateKind) -> Result<(), GatewayError> {
        if template.kind() == kind {
            Ok(())
        } else {
            Err(GatewayError::Config(format!("template {template} cannot be used here")))
        }
    }

    pub fn extract_action(&self, scenario: &str, template: TemplateId) -> Result<String, GatewayError> {
        Self::expect_kind(template, TemplateKind::Extraction)?;
        non_empty(scenario, "scenario")?;
        let req = Request {
            template,
            prompt: prompts::render_scenario(template, scenario),
            mock: MockInput::Scenario(scenario),
        };
        let (_, parsed) = self.complete(&req, |raw| parse::action_phrase(raw).ok_or_else(String::new))?;
        parsed.map_err(|_| GatewayError::EmptyCompletion { template })
    }

    pub fn judge_scenario(&self, scenario: &str, template: TemplateId) -> Result<JudgeOutcome, GatewayError> {
        Self::expect_kind(template, TemplateKind::Judge)?;
        non_empty(scenario, "scenario")?;
        let req = Request {
            template,
            prompt: prompts::render_scenario(template, scenario),
            mock: MockInput::Scenario(scenario),
        };
        let (raw, parsed) = self.complete(&req, |raw| Ok::<_, String>(parse_judgment(raw)))?;
        Ok(JudgeOutcome { raw, judgment: parsed.ok().flatten() })
    }

    /// Exactly five features per cluster. An unparsable, evaluative or
    /// repetitive answer gets one re-ask; repeats that survive it are suffixed.
    pub fn extract_features(
        &self,
        clusters: &[Vec<String>],
        template: TemplateId,
    ) -> Result<Vec<Vec<String>>, GatewayError> {
        Self::expect_kind(template, TemplateKind::FeatureExtraction)?;
        if clusters.is_empty() || clusters.iter().any(Vec::is_empty) {
            return Err(GatewayError::InvalidInput("every cluster needs at least one scenario".into()));
        }
        let n = clusters.len();
        let base = prompts::render_clusters(template, clusters);
        let mut prompt = base.clone();
        for attempt in 0..2 {
            let req = Request { template, prompt: prompt.clone(), mock: MockInput::Clusters(clusters) };
            let (_, parsed) = self.complete(&req, |raw| parse::feature_lists(raw, n))?;
            let problem = match parsed {
                Err(detail) => detail,
                Ok(mut lists) => {
                    let evaluative = lists
                        .iter()
                        .flatten()
                        .find_map(|f| parse::blocklisted(f).map(|w| format!("feature {f:?} uses the word {w:?}")));
                    match evaluative {
                        Some(p) => p,
                        None if attempt == 1 || lists.iter().all(|l| parse::duplicates(l).is_empty()) => {
                            lists.iter_mut().for_each(|l| parse::dedupe_with_suffix(l));
                            return Ok(lists);
                        }
                        None => "features within a cluster must be distinct".to_string(),
                    }
                }
            };
            if attempt == 1 {
                return Err(GatewayError::ParseFailure { template, detail: problem });
            }
            prompt = format!(
                "{base}\n\nYour previous answer could not be used ({problem}). Answer again with exactly 5 distinct, non-evaluative features under each \"Cluster N:\" heading."
            );
        }
        unreachable!("loop returns on its second pass")
    }

    pub fn evaluate_feature(&self, scenario: &str, feature: &str) -> Result<u8, GatewayError> {
        non_empty(scenario, "scenario")?;
        non_empty(feature, "feature")?;
        let template = TemplateId::FeatEval;
        let req = Request {
            template,
            prompt: prompts::render_feature_eval(scenario, feature),
            mock: MockInput::FeatureEval { scenario, feature },
        };
        let (raw, parsed) = self.complete(&req, |raw| parse::yes_no(raw).ok_or_else(String::new))?;
        parsed.map_err(|_| GatewayError::ParseFailure { template, detail: format!("expected Yes or No, got {raw:?}") })
    }
}

fn non_empty(s: &str, what: &str) -> Result<(), GatewayError> {
    if s.trim().is_empty() {
        Err(GatewayError::InvalidInput(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

fn digest(parts: &[&str]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().into()
}

fn mock_completion(script: &MockScript, req: &Request<'_>) -> String {
    let t = req.template.as_str();
    match &req.mock {
        MockInput::Scenario(text) if req.template.kind() == TemplateKind::Judge => {
            if let Some(answer) = script.judgments.get(text.trim()) {
                return answer.clone();
            }
            Judgment::ALL[digest(&[t, text])[0] as usize % 3].as_str().to_string()
        }
        MockInput::Scenario(text) => {
            let d = digest(&[t, text]);
            format!("action {}", hex::encode(&d[..3]))
        }
        MockInput::Clusters(clusters) => {
            let mut out = String::new();
            for (i, texts) in clusters.iter().enumerate() {
                out.push_str(&format!("Cluster {}:\n", i + 1));
                let joined = texts.join("\n");
                for k in 0..parse::FEATURES_PER_CLUSTER {
                    let d = digest(&[t, &joined, &i.to_string(), &k.to_string()]);
                    out.push_str(&format!("- cue {}\n", hex::encode(&d[..3])));
                }
            }
            out
        }
        MockInput::FeatureEval { scenario, feature } => {
            if digest(&[scenario, feature])[31] % 2 == 1 { "Yes" } else { "No" }.to_string()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock() -> Gateway {
        Gateway::new(GatewayConfig::default()).unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = GatewayConfig { temperature: -0.1, ..GatewayConfig::default() };
        assert!(matches!(Gateway::new(bad), Err(GatewayError::Config(_))));
        let remote = GatewayConfig { backend: BackendKind::Remote, ..GatewayConfig::default() };
        assert!(matches!(Gateway::new(remote), Err(GatewayError::Config(_))));
        let missing_key = GatewayConfig {
            backend: BackendKind::Remote,
            endpoint_url: Some("http://127.0.0.1:9/v1/chat/completions".into()),
            api_key_env: Some("COMETH_TEST_UNSET_VARIABLE".into()),
            ..GatewayConfig::default()
        };
        assert!(matches!(Gateway::new(missing_key), Err(GatewayError::Config(_))));
    }

    #[test]
    fn mock_is_deterministic() {
        let (a, b) = (mock(), mock());
        let s = "A nurse administers lethal medication to a terminally ill patient with consent.";
        assert_eq!(a.extract_action(s, TemplateId::CMainAct).unwrap(), b.extract_action(s, TemplateId::CMainAct).unwrap());
        assert_eq!(a.judge_scenario(s, TemplateId::Judge3).unwrap(), b.judge_scenario(s, TemplateId::Judge3).unwrap());
        assert_eq!(a.evaluate_feature(s, "Medical setting").unwrap(), b.evaluate_feature(s, "Medical setting").unwrap());
    }

    #[test]
    fn mock_features_keep_cluster_count() {
        let clusters: Vec<Vec<String>> = (0..5).map(|i| vec![format!("scenario {i}"), "shared".into()]).collect();
        let lists = mock().extract_features(&clusters, TemplateId::FeatExtract2).unwrap();
        assert_eq!(lists.len(), 5);
        assert!(lists.iter().all(|l| l.len() == 5));
    }

    #[test]
    fn scripted_judgments() {
        let mut script = MockScript::default();
        script.judgments.insert("s1".into(), "Support".into());
        script.judgments.insert("s2".into(), "I think Blame".into());
        let g = Gateway::with_script(GatewayConfig::default(), script).unwrap();
        assert_eq!(g.judge_scenario("s1", TemplateId::Judge1).unwrap().judgment, Some(Judgment::Support));
        let verbose = g.judge_scenario("s2", TemplateId::Judge1).unwrap();
        assert_eq!(verbose.judgment, None);
        assert_eq!(verbose.raw, "I think Blame");
    }

    #[test]
    fn wrong_template_kind_is_rejected() {
        assert!(matches!(mock().extract_action("x", TemplateId::Judge1), Err(GatewayError::Config(_))));
        assert!(matches!(mock().judge_scenario(" ", TemplateId::Judge1), Err(GatewayError::InvalidInput(_))));
    }

    #[test]
    fn cache_hits_skip_the_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GatewayConfig { cache_dir: Some(dir.path().to_path_buf()), ..GatewayConfig::default() };
        let texts: Vec<String> = (0..20).map(|i| format!("scenario number {i}")).collect();
        let first = Gateway::new(cfg.clone()).unwrap();
        let a = first.map(&texts, |t| first.evaluate_feature(t, "Night time")).unwrap();
        assert_eq!(first.backend_calls(), 20);
        let second = Gateway::new(cfg).unwrap();
        let b = second.map(&texts, |t| second.evaluate_feature(t, "Night time")).unwrap();
        assert_eq!(a, b);
        assert_eq!(second.backend_calls(), 0);
    }
}
