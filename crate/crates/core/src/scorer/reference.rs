use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{multi_token_score, ScoreError, ScoreRequest, ScoreResponse, Scorer};
use crate::corpus::OBJECT_SLOT;

fn default_mask() -> String {
    "[MASK]".into()
}

fn default_max_masks() -> usize {
    8
}

/// One stored distribution: probabilities of the tokens at `position` of the masked context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub context: String,
    pub position: usize,
    pub distribution: BTreeMap<String, f64>,
}

/// On-disk form of a [`ReferenceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    pub model_name: String,
    #[serde(default = "default_mask")]
    pub mask_token: String,
    #[serde(default = "default_max_masks")]
    pub max_masks: usize,
    pub vocabulary: Vec<String>,
    #[serde(default)]
    pub entries: Vec<ReferenceEntry>,
}

/// Deterministic table-driven masked LM with a whitespace tokenizer.
///
/// Contexts are keyed by their rendered form, e.g. `"Ada died in [MASK] [MASK]"`. A context or
/// slot with no stored distribution is uniform over the vocabulary.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    name: String,
    mask_token: String,
    max_masks: usize,
    uniform: f64,
    table: HashMap<(String, usize), HashMap<String, f64>>,
}

impl ReferenceModel {
    pub fn from_fixture(fixture: ReferenceFixture) -> Result<Self, ScoreError> {
        if fixture.vocabulary.is_empty() {
            return Err(ScoreError::InvalidModel("empty vocabulary".into()));
        }
        if fixture.max_masks == 0 {
            return Err(ScoreError::InvalidModel("max_masks must be at least 1".into()));
        }
        let vocab: HashSet<&str> = fixture.vocabulary.iter().map(String::as_str).collect();
        let mut table = HashMap::new();
        for e in fixture.entries {
            let sum: f64 = e.distribution.values().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ScoreError::InvalidModel(format!(
                    "distribution for {:?} slot {} sums to {sum}",
                    e.context, e.position
                )));
            }
            if let Some((tok, p)) = e.distribution.iter().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
                return Err(ScoreError::InvalidModel(format!("probability {p} for {tok:?}")));
            }
            if let Some(tok) = e.distribution.keys().find(|t| !vocab.contains(t.as_str())) {
                return Err(ScoreError::InvalidModel(format!("token {tok:?} not in vocabulary")));
            }
            let key = (e.context, e.position);
            if table.contains_key(&key) {
                return Err(ScoreError::InvalidModel(format!("duplicate entry for {:?}", key)));
            }
            table.insert(key, e.distribution.into_iter().collect());
        }
        Ok(ReferenceModel {
            name: fixture.model_name,
            mask_token: fixture.mask_token,
            max_masks: fixture.max_masks,
            uniform: 1.0 / fixture.vocabulary.len() as f64,
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ScoreError::InvalidModel(format!("{}: {e}", path.display())))?;
        let fixture: ReferenceFixture = serde_json::from_str(&raw)
            .map_err(|e| ScoreError::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::from_fixture(fixture)
    }

    pub fn tokenize(text: &str) -> Vec<&str> {
        text.split_whitespace().collect()
    }

    /// Replaces `[Y]` with `masks` space-separated mask tokens.
    pub fn render(&self, context: &str, masks: usize) -> String {
        let slots = vec![self.mask_token.as_str(); masks].join(" ");
        context.replacen(OBJECT_SLOT, &slots, 1)
    }

    pub fn max_masks(&self) -> usize {
        self.max_masks
    }

    /// Probability of `token` at `position` of the rendered context.
    pub fn token_probability(&self, rendered: &str, position: usize, token: &str) -> f64 {
        match self.table.get(&(rendered.to_string(), position)) {
            Some(dist) => dist.get(token).copied().unwrap_or(0.0),
            None => self.uniform,
        }
    }
}

impl Scorer for ReferenceModel {
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        request.validate()?;
        let mut scores = Vec::with_capacity(request.candidates.len());
        let mut token_counts = Vec::with_capacity(request.candidates.len());
        let mut skipped = Vec::new();
        for (i, candidate) in request.candidates.iter().enumerate() {
            let tokens = Self::tokenize(candidate);
            if tokens.is_empty() {
                return Err(ScoreError::TokenizationFailure(candidate.clone()));
            }
            token_counts.push(tokens.len() as u32);
            if tokens.len() > self.max_masks {
                skipped.push(i);
                scores.push(0.0);
                continue;
            }
            let rendered = self.render(&request.context, tokens.len());
            let probs: Vec<f64> = tokens
                .iter()
                .enumerate()
                .map(|(pos, tok)| self.token_probability(&rendered, pos, tok))
                .collect();
            scores.push(multi_token_score(&probs)?);
        }
        Ok(ScoreResponse {
            scores,
            token_counts,
            skipped,
        })
    }

    fn model_tag(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ReferenceModel {
        let vocab: Vec<String> = ["paris", "rome", "new", "york", "berlin", "a", "b", "c", "d", "e"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let entry = |context: &str, position, pairs: &[(&str, f64)]| ReferenceEntry {
            context: context.into(),
            position,
            distribution: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        ReferenceModel::from_fixture(ReferenceFixture {
            model_name: "toy".into(),
            mask_token: "[MASK]".into(),
            max_masks: 2,
            vocabulary: vocab,
            entries: vec![
                entry("Einstein was born in [MASK]", 0, &[("paris", 0.6), ("rome", 0.1), ("berlin", 0.3)]),
                entry("Einstein was born in [MASK] [MASK]", 0, &[("new", 0.5), ("a", 0.5)]),
                entry("Einstein was born in [MASK] [MASK]", 1, &[("york", 0.3), ("b", 0.7)]),
            ],
        })
        .unwrap()
    }

    #[test]
    fn single_slot_lookup() {
        let r = model()
            .score_candidates(&ScoreRequest::new(
                "Einstein was born in [Y]",
                vec!["paris".into(), "rome".into()],
            ))
            .unwrap();
        assert_eq!(r.scores, vec![0.6, 0.1]);
        assert_eq!(r.token_counts, vec![1, 1]);
    }

    #[test]
    fn two_token_candidate_is_the_slot_mean() {
        let r = model()
            .score_candidates(&ScoreRequest::new("Einstein was born in [Y]", vec!["new york".into()]))
            .unwrap();
        // (0.5 + 0.3) / 2
        assert!((r.scores[0] - 0.4).abs() < 1e-15);
        assert_eq!(r.token_counts, vec![2]);
    }

    #[test]
    fn unknown_context_is_uniform() {
        let r = model()
            .score_candidates(&ScoreRequest::new("Curie died in [Y]", vec!["paris".into(), "new york".into()]))
            .unwrap();
        assert_eq!(r.scores, vec![0.1, 0.1]);
    }

    #[test]
    fn too_many_tokens_are_skipped() {
        let r = model()
            .score_candidates(&ScoreRequest::new("x [Y]", vec!["a b c".into(), "a".into()]))
            .unwrap();
        assert_eq!(r.skipped, vec![0]);
        assert_eq!(r.scores[0], 0.0);
        assert!(r.validate(2).is_ok());
    }

    #[test]
    fn whitespace_only_candidate_fails_tokenization() {
        let err = model()
            .score_candidates(&ScoreRequest::new("x [Y]", vec!["  ".into()]))
            .unwrap_err();
        assert_eq!(err, ScoreError::TokenizationFailure("  ".into()));
    }

    #[test]
    fn rejects_bad_distributions() {
        let bad = ReferenceFixture {
            model_name: "bad".into(),
            mask_token: "[MASK]".into(),
            max_masks: 1,
            vocabulary: vec!["a".into(), "b".into()],
            entries: vec![ReferenceEntry {
                context: "[MASK]".into(),
                position: 0,
                distribution: [("a".to_string(), 0.5), ("b".to_string(), 0.4)].into_iter().collect(),
            }],
        };
        assert!(matches!(ReferenceModel::from_fixture(bad), Err(ScoreError::InvalidModel(_))));
    }
}
