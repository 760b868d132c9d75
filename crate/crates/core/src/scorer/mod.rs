//! Candidate scoring: typed queries restricted to a relation's candidate objects.
//!
//! A candidate of `l` tokens is scored against the context rendered with `l` mask slots in
//! place of `[Y]`, as the plain mean of the per-slot probabilities of its tokens.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::OBJECT_SLOT;

mod reference;
mod remote;

pub use reference::{ReferenceEntry, ReferenceFixture, ReferenceModel};
pub use remote::{ModelInfo, RemoteConfig, RemoteScorer, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("empty_input: no token probabilities to average")]
    EmptyInput,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("tokenization_failure: candidate {0:?} yields no tokens")]
    TokenizationFailure(String),
    #[error("scorer_unavailable: {0}")]
    Unavailable(String),
    #[error("protocol_error: {0}")]
    Protocol(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Mean of per-slot token probabilities.
pub fn multi_token_score(token_probabilities: &[f64]) -> Result<f64, ScoreError> {
    if token_probabilities.is_empty() {
        return Err(ScoreError::EmptyInput);
    }
    if let Some(p) = token_probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(ScoreError::InvalidRequest(format!("probability {p} outside [0, 1]")));
    }
    let sum: f64 = token_probabilities.iter().sum();
    Ok(sum / token_probabilities.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub candidates: Vec<String>,
}

impl ScoreRequest {
    pub fn new(context: impl Into<String>, candidates: Vec<String>) -> Self {
        ScoreRequest {
            context: context.into(),
            candidates,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let slots = self.context.matches(OBJECT_SLOT).count();
        if slots != 1 {
            return Err(ScoreError::InvalidRequest(format!(
                "context must contain exactly one {OBJECT_SLOT}, found {slots}"
            )));
        }
        if self.candidates.is_empty() {
            return Err(ScoreError::InvalidRequest("no candidates".into()));
        }
        if self.candidates.iter().any(|c| c.is_empty()) {
            return Err(ScoreError::InvalidRequest("empty candidate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    pub token_counts: Vec<u32>,
    /// Candidates the model could not render (more tokens than mask slots allowed).
    /// Their score is reported as 0 and they never win an argmax.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<usize>,
}

impl ScoreResponse {
    pub fn validate(&self, candidates: usize) -> Result<(), ScoreError> {
        if self.scores.len() != candidates || self.token_counts.len() != candidates {
            return Err(ScoreError::Protocol(format!(
                "expected {candidates} scores and token counts, got {} and {}",
                self.scores.len(),
                self.token_counts.len()
            )));
        }
        if let Some(s) = self.scores.iter().find(|s| !s.is_finite() || !(0.0..=1.0).contains(*s)) {
            return Err(ScoreError::Protocol(format!("score {s} outside [0, 1]")));
        }
        if self.token_counts.contains(&0) {
            return Err(ScoreError::Protocol("token count of 0".into()));
        }
        if let Some(i) = self.skipped.iter().find(|&&i| i >= candidates) {
            return Err(ScoreError::Protocol(format!("skipped index {i} out of range")));
        }
        Ok(())
    }
}

/// Scores every candidate of a request. Implementations are stateless and thread-safe.
pub trait Scorer: Send + Sync {
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError>;

    /// Short identifier recorded with predictions.
    fn model_tag(&self) -> String;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        (**self).score_candidates(request)
    }

    fn model_tag(&self) -> String {
        (**self).model_tag()
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        (**self).score_candidates(request)
    }

    fn model_tag(&self) -> String {
        (**self).model_tag()
    }
}

/// Wraps a scorer and counts `score_candidates` calls.
pub struct CountingScorer<S> {
    inner: S,
    calls: AtomicUsize,
}

impl<S: Scorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        CountingScorer {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: Scorer> Scorer for CountingScorer<S> {
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_candidates(request)
    }

    fn model_tag(&self) -> String {
        self.inner.model_tag()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_token_probabilities() {
        assert!((multi_token_score(&[0.5, 0.3]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(multi_token_score(&[0.7]).unwrap(), 0.7);
        assert_eq!(multi_token_score(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(multi_token_score(&[]), Err(ScoreError::EmptyInput));
        assert!(multi_token_score(&[1.2]).is_err());
    }

    #[test]
    fn request_validation() {
        assert!(ScoreRequest::new("a [Y]", vec!["x".into()]).validate().is_ok());
        assert!(ScoreRequest::new("a", vec!["x".into()]).validate().is_err());
        assert!(ScoreRequest::new("[Y] [Y]", vec!["x".into()]).validate().is_err());
        assert!(ScoreRequest::new("a [Y]", vec![]).validate().is_err());
        assert!(ScoreRequest::new("a [Y]", vec!["".into()]).validate().is_err());
    }

    #[test]
    fn response_validation() {
        let ok = ScoreResponse {
            scores: vec![0.2, 1.0],
            token_counts: vec![1, 2],
            skipped: vec![],
        };
        assert!(ok.validate(2).is_ok());
        assert!(matches!(ok.validate(3), Err(ScoreError::Protocol(_))));
        let nan = ScoreResponse {
            scores: vec![f64::NAN],
            token_counts: vec![1],
            skipped: vec![],
        };
        assert!(nan.validate(1).is_err());
        let zero = ScoreResponse {
            scores: vec![0.1],
            token_counts: vec![0],
            skipped: vec![],
        };
        assert!(zero.validate(1).is_err());
    }

    #[test]
    fn wire_format_field_names() {
        let r: ScoreResponse = serde_json::from_str(r#"{"scores":[0.5],"token_counts":[1]}"#).unwrap();
        assert!(r.skipped.is_empty());
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"scores":[0.5],"token_counts":[1]}"#);
        let q = ScoreRequest::new("a [Y]", vec!["b".into()]);
        assert_eq!(serde_json::to_string(&q).unwrap(), r#"{"context":"a [Y]","candidates":["b"]}"#);
    }
}
