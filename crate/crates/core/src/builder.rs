//! Builds language packs from raw translation outputs, entity labels, mLAMA templates and
//! review patches.
//!
//! Raw input layout (all JSON-lines, UTF-8):
//!
//! ```text
//! translations/<lang>/<relation>.jsonl   {"pattern": str, "translator": str}
//! mlama/<lang>/<relation>.jsonl          {"pattern": str}
//! originals/<relation>.jsonl             {"pattern": str}   reference-language templates
//! triples/<relation>.jsonl               {"sub_uri": str, "obj_uri": str}
//! entities/<lang>.jsonl                  {"uri": str, "label": str}
//! reviews/<lang>.jsonl                   {"relation", "template_id", "pattern", "verdict", "replacement"}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::{
    self, dedup_tuples, filter_tuples, normalize, read_jsonl, relation_files, save_language_pack, template_id,
    validate_template, write_atomic, CorpusError, DropRecord, LanguagePack, PackMetadata, Relation, ReviewStatus,
    Template, TemplateError, Tuple, DEFAULT_FINAL_PUNCTUATION, MAX_RELATIONS,
};

pub const MLAMA_SOURCE: &str = "mlama";
pub const ORIGINAL_SOURCE: &str = "original";
pub const SUGGESTION_SOURCE: &str = "review-suggestion";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid build config: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    InvalidInput {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("reference language '{0}' produced no pack")]
    MissingReference(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    pub min_relation_coverage: f64,
    pub min_phrase_coverage: f64,
    pub min_agreement: usize,
    pub trusted_translators: BTreeSet<String>,
    pub punctuation_set: Vec<char>,
    /// Denominator of the relation-coverage ratio.
    pub total_relations: usize,
    pub reference_language: String,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            min_relation_coverage: 0.60,
            min_phrase_coverage: 0.20,
            min_agreement: 2,
            trusted_translators: BTreeSet::from(["microsoft".to_string()]),
            punctuation_set: DEFAULT_FINAL_PUNCTUATION.to_vec(),
            total_relations: MAX_RELATIONS,
            reference_language: "en".into(),
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<(), BuildError> {
        for (name, v) in [
            ("min_relation_coverage", self.min_relation_coverage),
            ("min_phrase_coverage", self.min_phrase_coverage),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(BuildError::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.min_agreement < 1 {
            return Err(BuildError::Config("min_agreement must be at least 1".into()));
        }
        if self.total_relations == 0 {
            return Err(BuildError::Config("total_relations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranslationCandidate {
    pub relation_id: String,
    pub language: String,
    pub text: String,
    pub translator: String,
    pub trusted: bool,
}

impl TranslationCandidate {
    fn bypasses_vote(&self) -> bool {
        self.translator == MLAMA_SOURCE || self.translator == ORIGINAL_SOURCE
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AcceptedTemplate {
    pub relation_id: String,
    pub text: String,
    pub sources: BTreeSet<String>,
    /// Distinct producing translators, counting an mLAMA record as one.
    pub agreement: usize,
}

/// Accepts a normalized text if enough distinct translators produced it, if a trusted
/// translator produced it, or if it came from mLAMA / the reference originals.
/// Output is sorted by `(relation, text)` and does not depend on input order.
pub fn vote_agreement(candidates: &[TranslationCandidate], config: &BuildConfig) -> Vec<AcceptedTemplate> {
    #[derive(Default)]
    struct Tally {
        sources: BTreeSet<String>,
        trusted: bool,
        bypass: bool,
    }
    let mut tallies: BTreeMap<(String, String), Tally> = BTreeMap::new();
    for c in candidates {
        let tally = tallies.entry((c.relation_id.clone(), normalize(&c.text))).or_default();
        tally.sources.insert(c.translator.clone());
        tally.trusted |= c.trusted || config.trusted_translators.contains(&c.translator);
        tally.bypass |= c.bypasses_vote();
    }
    tallies
        .into_iter()
        .filter(|(_, t)| t.bypass || t.trusted || t.sources.len() >= config.min_agreement)
        .map(|((relation_id, text), t)| AcceptedTemplate {
            relation_id,
            text,
            agreement: t.sources.len(),
            sources: t.sources,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Wrong,
    Amended,
    Suggestion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewPatch {
    #[serde(rename = "relation")]
    pub relation_id: String,
    #[serde(default)]
    pub template_id: Option<String>,
    #[serde(default)]
    pub pattern: Option<String>,
    pub verdict: Verdict,
    #[serde(default)]
    pub replacement: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum PatchErrorKind {
    PatchTargetNotFound,
    AmbiguousTarget,
    InvalidReplacement(TemplateError),
    MissingReplacement,
}

impl fmt::Display for PatchErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatchErrorKind::PatchTargetNotFound => f.write_str("patch_target_not_found"),
            PatchErrorKind::AmbiguousTarget => f.write_str("ambiguous_target"),
            PatchErrorKind::InvalidReplacement(e) => write!(f, "invalid_replacement ({e})"),
            PatchErrorKind::MissingReplacement => f.write_str("missing_replacement"),
        }
    }
}

/// A patch that could not be applied; the patch was skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchIssue {
    pub patch: usize,
    pub relation: String,
    pub error: PatchErrorKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatchOutcome {
    pub issues: Vec<PatchIssue>,
    pub drops: Vec<DropRecord>,
}

fn find_target(relation: &Relation, patch: &ReviewPatch) -> Result<usize, PatchErrorKind> {
    let hits: Vec<usize> = match (&patch.template_id, &patch.pattern) {
        (Some(id), _) => relation
            .templates
            .iter()
            .enumerate()
            .filter(|(_, t)| &t.id == id)
            .map(|(i, _)| i)
            .collect(),
        (None, Some(text)) => {
            let text = normalize(text);
            relation
                .templates
                .iter()
                .enumerate()
                .filter(|(_, t)| t.text == text)
                .map(|(i, _)| i)
                .collect()
        }
        (None, None) => Vec::new(),
    };
    match hits.as_slice() {
        [] => Err(PatchErrorKind::PatchTargetNotFound),
        [i] => Ok(*i),
        _ => Err(PatchErrorKind::AmbiguousTarget),
    }
}

fn replacement_text(patch: &ReviewPatch) -> Result<String, PatchErrorKind> {
    let raw = patch.replacement.as_deref().ok_or(PatchErrorKind::MissingReplacement)?;
    let text = normalize(raw);
    validate_template(&text).map_err(PatchErrorKind::InvalidReplacement)?;
    Ok(text)
}

/// Applies review verdicts in order. Failing patches are skipped and reported; relations left
/// with fewer than two templates are dropped.
pub fn apply_review_patches(mut pack: LanguagePack, patches: &[ReviewPatch]) -> (LanguagePack, PatchOutcome) {
    let mut outcome = PatchOutcome::default();
    let language = pack.language.clone();
    for (n, patch) in patches.iter().enumerate() {
        let issue = |error| PatchIssue {
            patch: n,
            relation: patch.relation_id.clone(),
            error,
        };
        let Some(relation) = pack.relations.get_mut(&patch.relation_id) else {
            outcome.issues.push(issue(PatchErrorKind::PatchTargetNotFound));
            continue;
        };
        let result = match patch.verdict {
            Verdict::Suggestion => replacement_text(patch).map(|text| {
                if relation.templates.iter().any(|t| t.text == text) {
                    outcome.drops.push(DropRecord::new(&relation.id, Some(text), "suggestion_duplicate"));
                } else {
                    relation.templates.push(Template {
                        id: template_id(&language, &relation.id, &text),
                        relation_id: relation.id.clone(),
                        language: language.clone(),
                        text,
                        sources: BTreeSet::from([SUGGESTION_SOURCE.to_string()]),
                        review_status: ReviewStatus::Correct,
                        extra: Map::new(),
                    });
                }
            }),
            Verdict::Correct => find_target(relation, patch).map(|i| {
                relation.templates[i].review_status = ReviewStatus::Correct;
            }),
            Verdict::Wrong => find_target(relation, patch).map(|i| {
                let removed = relation.templates.remove(i);
                outcome.drops.push(DropRecord::new(&relation.id, Some(removed.id), "reviewed_wrong"));
            }),
            Verdict::Amended => find_target(relation, patch).and_then(|i| {
                let text = replacement_text(patch)?;
                if relation.templates.iter().enumerate().any(|(j, t)| j != i && t.text == text) {
                    let removed = relation.templates.remove(i);
                    outcome.drops.push(DropRecord::new(&relation.id, Some(removed.id), "amended_duplicate"));
                } else {
                    let t = &mut relation.templates[i];
                    t.text = text;
                    t.review_status = ReviewStatus::Amended;
                }
                Ok(())
            }),
        };
        if let Err(e) = result {
            outcome.issues.push(issue(e));
        }
    }
    let short: Vec<String> = pack
        .relations
        .iter()
        .filter(|(_, r)| r.templates.len() < 2)
        .map(|(id, _)| id.clone())
        .collect();
    for id in short {
        pack.relations.remove(&id);
        outcome.drops.push(DropRecord::new(&id, None, "fewer_than_two_templates"));
    }
    (pack, outcome)
}

/// Per-language coverage trace from [`select_languages`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageDecision {
    pub language: String,
    pub relations_covered: usize,
    pub relation_coverage: f64,
    pub phrase_count: usize,
    pub phrase_coverage: f64,
    pub retained: bool,
    pub reason: String,
}

fn covered_relations(pack: &LanguagePack) -> usize {
    pack.relations
        .values()
        .filter(|r| r.templates.len() >= 2 && !r.tuples.is_empty())
        .count()
}

/// Keeps languages with relation coverage ≥ `min_relation_coverage` (over `total_relations`)
/// and phrase coverage ≥ `min_phrase_coverage` (over the reference pack's phrase count).
/// The reference language is always kept.
pub fn select_languages(
    packs: Vec<LanguagePack>,
    reference: &LanguagePack,
    config: &BuildConfig,
) -> (Vec<LanguagePack>, Vec<LanguageDecision>) {
    let reference_phrases = reference.phrase_count();
    let mut kept = Vec::new();
    let mut decisions = Vec::new();
    for pack in packs {
        let relations_covered = covered_relations(&pack);
        let relation_coverage = relations_covered as f64 / config.total_relations as f64;
        let phrase_count = pack.phrase_count();
        let phrase_coverage = if reference_phrases == 0 {
            0.0
        } else {
            phrase_count as f64 / reference_phrases as f64
        };
        let relations_ok = relation_coverage >= config.min_relation_coverage;
        let phrases_ok = phrase_coverage >= config.min_phrase_coverage;
        let (retained, reason) = if pack.language == reference.language {
            (true, "reference language".to_string())
        } else if relations_ok && phrases_ok {
            (true, "thresholds met".to_string())
        } else {
            let mut why = Vec::new();
            if !relations_ok {
                why.push(format!(
                    "relation coverage {relation_coverage:.4} < {}",
                    config.min_relation_coverage
                ));
            }
            if !phrases_ok {
                why.push(format!("phrase coverage {phrase_coverage:.4} < {}", config.min_phrase_coverage));
            }
            (false, why.join("; "))
        };
        decisions.push(LanguageDecision {
            language: pack.language.clone(),
            relations_covered,
            relation_coverage,
            phrase_count,
            phrase_coverage,
            retained,
            reason,
        });
        if retained {
            kept.push(pack);
        }
    }
    (kept, decisions)
}

/// Character-level edit distance (unit insert/delete/substitute).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean Levenshtein distance over unordered template pairs; `None` with fewer than two.
pub fn relation_string_distance(relation: &Relation) -> Option<f64> {
    let texts: Vec<&str> = relation.templates.iter().map(|t| t.text.as_str()).collect();
    if texts.len() < 2 {
        return None;
    }
    let mut total = 0usize;
    let mut pairs = 0usize;
    for i in 0..texts.len() {
        for j in i + 1..texts.len() {
            total += levenshtein(texts[i], texts[j]);
            pairs += 1;
        }
    }
    Some(total as f64 / pairs as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackStats {
    pub language: String,
    pub relation_count: usize,
    pub total_patterns: usize,
    pub min_patterns: Option<usize>,
    pub max_patterns: Option<usize>,
    pub avg_patterns: Option<f64>,
    pub avg_string_distance: Option<f64>,
    pub phrase_count: usize,
}

pub fn compute_stats(pack: &LanguagePack) -> PackStats {
    let counts: Vec<usize> = pack.relations.values().map(|r| r.templates.len()).collect();
    let total_patterns: usize = counts.iter().sum();
    let distances: Vec<f64> = pack.relations.values().filter_map(relation_string_distance).collect();
    PackStats {
        language: pack.language.clone(),
        relation_count: counts.len(),
        total_patterns,
        min_patterns: counts.iter().copied().min(),
        max_patterns: counts.iter().copied().max(),
        avg_patterns: (!counts.is_empty()).then(|| total_patterns as f64 / counts.len() as f64),
        avg_string_distance: (!distances.is_empty())
            .then(|| distances.iter().sum::<f64>() / distances.len() as f64),
        phrase_count: pack.phrase_count(),
    }
}

#[derive(Deserialize)]
struct TranslationRecord {
    pattern: String,
    translator: String,
}

#[derive(Deserialize)]
struct PatternOnly {
    pattern: String,
}

#[derive(Deserialize)]
struct TripleRecord {
    sub_uri: String,
    obj_uri: String,
}

#[derive(Deserialize)]
struct EntityRecord {
    uri: String,
    label: String,
}

/// Build result for one language before selection.
#[derive(Debug, Clone)]
pub struct LanguageBuild {
    pub pack: LanguagePack,
    pub drops: Vec<DropRecord>,
    pub patch_issues: Vec<PatchIssue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageReport {
    #[serde(flatten)]
    pub decision: LanguageDecision,
    pub relations: usize,
    pub drops: Vec<DropRecord>,
    pub patch_issues: Vec<PatchIssue>,
}

/// Contents of `build_report.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildReport {
    pub config: BuildConfig,
    pub reference_language: String,
    pub reference_phrase_count: usize,
    pub included: Vec<String>,
    pub excluded: Vec<String>,
    pub languages: Vec<LanguageReport>,
}

/// Raw inputs rooted at one directory.
pub struct RawInputs {
    root: PathBuf,
    triples: BTreeMap<String, Vec<(String, String)>>,
}

impl RawInputs {
    pub fn open(root: &Path) -> Result<Self, BuildError> {
        let mut triples = BTreeMap::new();
        for (rel, path) in relation_files(&root.join("triples"))? {
            let pairs = read_jsonl::<TripleRecord>(&path)?
                .into_iter()
                .map(|(_, r)| (r.sub_uri, r.obj_uri))
                .collect();
            triples.insert(rel, pairs);
        }
        Ok(RawInputs {
            root: root.to_path_buf(),
            triples,
        })
    }

    /// Languages with translation or mLAMA inputs, plus the reference language when
    /// originals are present.
    pub fn languages(&self, config: &BuildConfig) -> Result<Vec<String>, BuildError> {
        let mut langs = BTreeSet::new();
        for dir in ["translations", "mlama"] {
            let d = self.root.join(dir);
            if !d.is_dir() {
                continue;
            }
            for entry in std::fs::read_dir(&d).map_err(|e| CorpusError::io(&d, e))? {
                let entry = entry.map_err(|e| CorpusError::io(&d, e))?;
                if entry.path().is_dir() {
                    langs.insert(entry.file_name().to_string_lossy().into_owned());
                }
            }
        }
        if !relation_files(&self.root.join("originals"))?.is_empty() {
            langs.insert(config.reference_language.clone());
        }
        Ok(langs.into_iter().collect())
    }

    fn rel_path(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    fn read_candidates(
        &self,
        language: &str,
        config: &BuildConfig,
        drops: &mut Vec<DropRecord>,
        sources: &mut Vec<String>,
    ) -> Result<Vec<TranslationCandidate>, BuildError> {
        let mut out = Vec::new();
        let mut push = |rel: &str, path: &Path, line: usize, text: String, translator: String| {
            let text = normalize(&text);
            if let Err(e) = validate_template(&text) {
                drops.push(DropRecord::new(
                    rel,
                    Some(format!("{}:{line}", self.rel_path(path))),
                    format!("invalid_template ({e})"),
                ));
                return;
            }
            out.push(TranslationCandidate {
                relation_id: rel.to_string(),
                language: language.to_string(),
                trusted: config.trusted_translators.contains(&translator),
                text,
                translator,
            });
        };
        for (rel, path) in relation_files(&self.root.join("translations").join(language))? {
            sources.push(self.rel_path(&path));
            for (line, r) in read_jsonl::<TranslationRecord>(&path)? {
                if r.translator.trim().is_empty() {
                    return Err(BuildError::InvalidInput {
                        path,
                        line,
                        message: "empty translator tag".into(),
                    });
                }
                push(&rel, &path, line, r.pattern, r.translator);
            }
        }
        for (rel, path) in relation_files(&self.root.join("mlama").join(language))? {
            sources.push(self.rel_path(&path));
            for (line, r) in read_jsonl::<PatternOnly>(&path)? {
                push(&rel, &path, line, r.pattern, MLAMA_SOURCE.to_string());
            }
        }
        if language == config.reference_language {
            for (rel, path) in relation_files(&self.root.join("originals"))? {
                sources.push(self.rel_path(&path));
                for (line, r) in read_jsonl::<PatternOnly>(&path)? {
                    push(&rel, &path, line, r.pattern, ORIGINAL_SOURCE.to_string());
                }
            }
        }
        Ok(out)
    }

    fn read_labels(&self, language: &str, sources: &mut Vec<String>) -> Result<HashMap<String, String>, BuildError> {
        let path = self.root.join("entities").join(format!("{language}.jsonl"));
        let mut labels = HashMap::new();
        if !path.is_file() {
            return Ok(labels);
        }
        sources.push(self.rel_path(&path));
        for (_, r) in read_jsonl::<EntityRecord>(&path)? {
            labels.entry(r.uri).or_insert_with(|| normalize(&r.label));
        }
        Ok(labels)
    }

    fn read_patches(&self, language: &str, sources: &mut Vec<String>) -> Result<Vec<ReviewPatch>, BuildError> {
        let path = self.root.join("reviews").join(format!("{language}.jsonl"));
        if !path.is_file() {
            return Ok(Vec::new());
        }
        sources.push(self.rel_path(&path));
        Ok(read_jsonl::<ReviewPatch>(&path)?.into_iter().map(|(_, p)| p).collect())
    }

    /// Runs vote → tuple join and filtering → review patches for one language.
    pub fn build_language(&self, language: &str, config: &BuildConfig) -> Result<LanguageBuild, BuildError> {
        let mut drops = Vec::new();
        let mut sources = Vec::new();
        let candidates = self.read_candidates(language, config, &mut drops, &mut sources)?;
        let labels = self.read_labels(language, &mut sources)?;
        let patches = self.read_patches(language, &mut sources)?;

        let mut by_relation: BTreeMap<String, Vec<AcceptedTemplate>> = BTreeMap::new();
        for a in vote_agreement(&candidates, config) {
            by_relation.entry(a.relation_id.clone()).or_default().push(a);
        }
        let accepted: BTreeSet<(&str, &str)> = by_relation
            .values()
            .flatten()
            .map(|a| (a.relation_id.as_str(), a.text.as_str()))
            .collect();
        let mut rejected: BTreeSet<(&str, String)> = BTreeSet::new();
        for c in &candidates {
            if !accepted.contains(&(c.relation_id.as_str(), c.text.as_str())) {
                rejected.insert((c.relation_id.as_str(), c.text.clone()));
            }
        }
        for (rel, text) in rejected {
            drops.push(DropRecord::new(rel, Some(text), "insufficient_agreement"));
        }

        let mut pack = LanguagePack::new(language);
        for (rel, accepted) in by_relation {
            let templates = accepted
                .into_iter()
                .map(|a| Template {
                    id: template_id(language, &rel, &a.text),
                    relation_id: rel.clone(),
                    language: language.to_string(),
                    text: a.text,
                    sources: a.sources,
                    review_status: ReviewStatus::Unreviewed,
                    extra: Map::new(),
                })
                .collect();
            let tuples: Vec<Tuple> = self
                .triples
                .get(&rel)
                .map(|pairs| {
                    pairs
                        .iter()
                        .map(|(s, o)| Tuple {
                            sub_label: labels.get(s).cloned().unwrap_or_default(),
                            obj_label: labels.get(o).cloned().unwrap_or_default(),
                            sub_uri: s.clone(),
                            obj_uri: o.clone(),
                            relation_id: rel.clone(),
                            language: language.to_string(),
                            extra: Map::new(),
                        })
                        .collect()
                })
                .unwrap_or_default();
            let (tuples, d) = dedup_tuples(tuples);
            drops.extend(d);
            let (tuples, d) = filter_tuples(tuples);
            drops.extend(d);
            pack.relations.insert(rel.clone(), Relation::new(rel, templates, tuples));
        }

        let (mut pack, outcome) = apply_review_patches(pack, &patches);
        drops.extend(outcome.drops);
        let empty: Vec<String> = pack
            .relations
            .iter()
            .filter(|(_, r)| r.tuples.is_empty())
            .map(|(id, _)| id.clone())
            .collect();
        for id in empty {
            pack.relations.remove(&id);
            drops.push(DropRecord::new(&id, None, "no_tuples"));
        }

        sources.sort();
        pack.metadata = PackMetadata {
            thresholds: BTreeMap::from([
                ("min_agreement".to_string(), Value::from(config.min_agreement)),
                ("min_phrase_coverage".to_string(), Value::from(config.min_phrase_coverage)),
                ("min_relation_coverage".to_string(), Value::from(config.min_relation_coverage)),
                ("total_relations".to_string(), Value::from(config.total_relations)),
            ]),
            source_files: sources,
            created_unix: None,
            punctuation: Some(config.punctuation_set.clone()),
        };
        Ok(LanguageBuild {
            pack,
            drops,
            patch_issues: outcome.issues,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Restrict to these languages (the reference language is always built).
    pub languages: Option<Vec<String>>,
    /// Recorded in pack metadata when set.
    pub created_unix: Option<u64>,
}

/// Builds every language under `input`, writes retained packs and `build_report.json` under
/// `output`.
pub fn build_all(
    input: &Path,
    output: &Path,
    config: &BuildConfig,
    options: &BuildOptions,
) -> Result<BuildReport, BuildError> {
    config.validate()?;
    let raw = RawInputs::open(input)?;
    let mut languages = raw.languages(config)?;
    if let Some(filter) = &options.languages {
        languages.retain(|l| filter.contains(l) || *l == config.reference_language);
    }
    let builds: Vec<LanguageBuild> = languages
        .par_iter()
        .map(|lang| raw.build_language(lang, config))
        .collect::<Result<_, _>>()?;

    let reference = builds
        .iter()
        .find(|b| b.pack.language == config.reference_language)
        .map(|b| b.pack.clone())
        .ok_or_else(|| BuildError::MissingReference(config.reference_language.clone()))?;
    let reference_phrase_count = reference.phrase_count();

    let mut extras: BTreeMap<String, (usize, Vec<DropRecord>, Vec<PatchIssue>)> = BTreeMap::new();
    let mut packs = Vec::new();
    for mut b in builds {
        b.pack.metadata.created_unix = options.created_unix;
        b.pack
            .metadata
            .thresholds
            .insert("reference_phrase_count".into(), Value::from(reference_phrase_count));
        extras.insert(b.pack.language.clone(), (b.pack.relations.len(), b.drops, b.patch_issues));
        packs.push(b.pack);
    }
    let (kept, decisions) = select_languages(packs, &reference, config);

    for pack in &kept {
        debug_assert!(pack.check().is_ok(), "{:?}", pack.check());
        save_language_pack(output, pack)?;
    }

    let mut report = BuildReport {
        config: config.clone(),
        reference_language: config.reference_language.clone(),
        reference_phrase_count,
        included: Vec::new(),
        excluded: Vec::new(),
        languages: Vec::new(),
    };
    for decision in decisions {
        let (relations, mut drops, patch_issues) = extras.remove(&decision.language).unwrap_or_default();
        drops.sort();
        if decision.retained {
            report.included.push(decision.language.clone());
        } else {
            report.excluded.push(decision.language.clone());
        }
        report.languages.push(LanguageReport {
            decision,
            relations,
            drops,
            patch_issues,
        });
    }
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(&output.join("build_report.json"), &bytes)?;
    Ok(report)
}

/// Loads a pack and asserts it came out of the builder unchanged (no drops).
pub fn load_built_pack(root: &Path, language: &str) -> Result<LanguagePack, CorpusError> {
    let load = corpus::load_language_pack(root, language)?;
    for d in &load.drops {
        log::warn!("{language}/{}: dropped {:?}: {}", d.relation, d.item, d.reason);
    }
    Ok(load.pack)
}
