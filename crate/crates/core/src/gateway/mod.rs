//! Chat-completion backends.
//!
//! Every pipeline stage talks to a [`Backend`] through a [`Gateway`], which
//! pins the model id. Backends: [`HttpBackend`] for real endpoints,
//! [`ScriptedMock`] for deterministic offline runs, and [`RecordReplay`],
//! which wraps another backend with a persistent response store.

mod http;
mod mock;
mod replay;
mod retry;

pub use http::{HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV};
pub use mock::{responders, Pattern, Responder, Rule, ScriptedMock};
pub use replay::{CacheMode, RecordReplay};
pub use retry::RetryPolicy;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// `max_tokens` for code generation and knowledge requests.
pub const GENERATION_MAX_TOKENS: u32 = 1024;
/// `max_tokens` for difficulty scoring requests.
pub const SCORING_MAX_TOKENS: u32 = 64;
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed backend payload: {0}")]
    Malformed(String),
    #[error("giving up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        last: Box<GatewayError>,
    },
    #[error("replay cache miss for request digest {digest}")]
    CacheMiss { digest: String },
    #[error("response store {path}: {message}")]
    Store { path: PathBuf, message: String },
    #[error("scripted backend: {0}")]
    Scripted(String),
}

impl GatewayError {
    /// Transient failures worth another attempt. Authentication failures never are.
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Status { status, .. } => {
                *status == 408 || *status == 429 || *status >= 500
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model: String,
}

impl ChatRequest {
    pub fn new(
        model: impl Into<String>,
        user: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Self {
        Self {
            system: None,
            user: user.into(),
            temperature,
            max_tokens,
            model: model.into(),
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("user text is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub backend: String,
    pub cached: bool,
}

/// SHA-256 digest over every request field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn of(request: &ChatRequest) -> Self {
        // serde_json gives a stable field order and unambiguous string escaping
        let canonical = serde_json::to_vec(request).expect("request serializes");
        Self(hex::encode(Sha256::digest(&canonical)))
    }

    pub fn digest(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }
}

/// Counts every call forwarded to the inner backend.
pub struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: Backend> Counting<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: Backend> Backend for Counting<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// A backend bound to a model id.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    model: String,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, model: impl Into<String>) -> Self {
        Self {
            backend,
            model: model.into(),
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    /// Same model, different backend.
    pub fn with_backend(&self, backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            model: self.model.clone(),
        }
    }

    pub fn request(
        &self,
        user: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> ChatRequest {
        ChatRequest::new(self.model.clone(), user, temperature, max_tokens)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        self.backend.complete(request)
    }
}

/// Maps `f` over `items` with at most `parallelism` concurrent workers.
/// Output order matches input order.
pub fn fan_out<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallelism <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .expect("thread pool builds");
    pool.install(|| items.par_iter().map(&f).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest::new("m", "hello", 0.2, 64).with_system("sys")
    }

    #[test]
    fn cache_key_is_a_pure_function_of_content() {
        assert_eq!(req().cache_key(), req().cache_key());
        assert_eq!(req().cache_key().digest().len(), 64);
    }

    #[test]
    fn any_field_change_changes_the_key() {
        let base = req().cache_key();
        let mut variants = vec![req(); 6];
        variants[0].model = "m2".into();
        variants[1].system = None;
        variants[2].user = "hello!".into();
        variants[3].temperature = 0.4;
        variants[4].max_tokens = 65;
        variants[5].system = Some(String::new());
        for v in &variants {
            assert_ne!(v.cache_key(), base, "{v:?}");
        }
        assert_ne!(variants[1].cache_key(), variants[5].cache_key());
    }

    #[test]
    fn request_validation() {
        assert!(req().validate().is_ok());
        assert!(ChatRequest::new("m", "  ", 0.0, 1).validate().is_err());
        assert!(ChatRequest::new("m", "x", 1.5, 1).validate().is_err());
        assert!(ChatRequest::new("m", "x", 0.5, 0).validate().is_err());
    }

    #[test]
    fn auth_errors_are_not_retryable() {
        assert!(!GatewayError::Auth("401".into()).is_retryable());
        assert!(!GatewayError::Status {
            status: 400,
            body: String::new()
        }
        .is_retryable());
        assert!(GatewayError::Status {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(GatewayError::Status {
            status: 429,
            body: String::new()
        }
        .is_retryable());
        assert!(GatewayError::Transport("refused".into()).is_retryable());
    }

    #[test]
    fn fan_out_preserves_order() {
        let items: Vec<u32> = (0..50).collect();
        let out = fan_out(&items, 4, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
