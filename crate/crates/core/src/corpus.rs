//! Language-pack data model, template text handling, and the on-disk JSON-lines layout.
//!
//! A pack on disk looks like:
//!
//! ```text
//! <root>/patterns/<lang>/<relation>.jsonl   one template per line
//! <root>/tuples/<lang>/<relation>.jsonl     one subject/object pair per line
//! <root>/meta/<lang>.json                   builder provenance (optional)
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SUBJECT_SLOT: &str = "[X]";
pub const OBJECT_SLOT: &str = "[Y]";

/// Upper bound on relations in a pack.
pub const MAX_RELATIONS: usize = 38;

/// Default sentence-final marks removed by [`strip_final_punctuation`].
pub const DEFAULT_FINAL_PUNCTUATION: &[char] = &[
    '.', '。', '．', '!', '?', '？', '！', '।', '؟', '።',
];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("language '{0}' has no pack data")]
    LanguageMissing(String),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Why a template string is not a usable cloze pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateError {
    Empty,
    MissingX,
    MissingY,
    DuplicatePlaceholder,
}

impl fmt::Display for TemplateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TemplateError::Empty => "empty",
            TemplateError::MissingX => "missing_x",
            TemplateError::MissingY => "missing_y",
            TemplateError::DuplicatePlaceholder => "duplicate_placeholder",
        };
        f.write_str(s)
    }
}

impl std::error::Error for TemplateError {}

/// Checks the placeholder grammar: non-empty, exactly one `[X]` and one `[Y]`.
pub fn validate_template(text: &str) -> Result<(), TemplateError> {
    let text = normalize(text);
    if text.is_empty() {
        return Err(TemplateError::Empty);
    }
    let xs = text.matches(SUBJECT_SLOT).count();
    let ys = text.matches(OBJECT_SLOT).count();
    if xs == 0 {
        return Err(TemplateError::MissingX);
    }
    if ys == 0 {
        return Err(TemplateError::MissingY);
    }
    if xs > 1 || ys > 1 {
        return Err(TemplateError::DuplicatePlaceholder);
    }
    Ok(())
}

/// Trims the ends and collapses every internal whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Removes trailing sentence-final marks (from `marks`) until none is left.
pub fn strip_final_punctuation(text: &str, marks: &[char]) -> String {
    let mut s = text.trim_end();
    while let Some(last) = s.chars().next_back() {
        if !marks.contains(&last) {
            break;
        }
        s = s[..s.len() - last.len_utf8()].trim_end();
    }
    s.trim_start().to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    #[default]
    Unreviewed,
    Correct,
    Amended,
    Wrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub relation_id: String,
    pub language: String,
    pub text: String,
    pub sources: BTreeSet<String>,
    pub review_status: ReviewStatus,
    /// Keys found on disk that this crate does not interpret.
    pub extra: Map<String, Value>,
}

impl Template {
    pub fn check(&self) -> Result<(), String> {
        validate_template(&self.text).map_err(|e| e.to_string())?;
        if normalize(&self.text) != self.text {
            return Err("text is not normalized".into());
        }
        if self.sources.is_empty() {
            return Err("no sources".into());
        }
        Ok(())
    }
}

/// Stable identifier derived from the template's language, relation and text.
pub fn template_id(language: &str, relation_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(language.as_bytes());
    h.update([0]);
    h.update(relation_id.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    let digest = h.finalize();
    format!("{relation_id}-{}", hex::encode(&digest[..4]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub sub_uri: String,
    pub obj_uri: String,
    pub sub_label: String,
    pub obj_label: String,
    pub relation_id: String,
    pub language: String,
    pub extra: Map<String, Value>,
}

impl Tuple {
    pub fn key(&self) -> (String, String) {
        (self.sub_uri.clone(), self.obj_uri.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub index: usize,
    pub label: String,
    pub uri: String,
}

/// Sorted unique `(obj_label, obj_uri)` pairs, indexed densely from zero.
pub fn candidates_from_tuples(tuples: &[Tuple]) -> Vec<CandidateEntry> {
    let set: BTreeSet<(&str, &str)> = tuples
        .iter()
        .map(|t| (t.obj_label.as_str(), t.obj_uri.as_str()))
        .collect();
    set.into_iter()
        .enumerate()
        .map(|(index, (label, uri))| CandidateEntry {
            index,
            label: label.to_string(),
            uri: uri.to_string(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub templates: Vec<Template>,
    pub tuples: Vec<Tuple>,
    pub candidates: Vec<CandidateEntry>,
}

impl Relation {
    /// Builds a relation and derives its candidate list from the tuples.
    pub fn new(id: impl Into<String>, templates: Vec<Template>, tuples: Vec<Tuple>) -> Self {
        let candidates = candidates_from_tuples(&tuples);
        Relation {
            id: id.into(),
            templates,
            tuples,
            candidates,
        }
    }

    pub fn refresh_candidates(&mut self) {
        self.candidates = candidates_from_tuples(&self.tuples);
    }

    /// Index of the `(label, uri)` candidate, if present.
    pub fn candidate_index(&self, label: &str, uri: &str) -> Option<usize> {
        self.candidates
            .binary_search_by(|c| (c.label.as_str(), c.uri.as_str()).cmp(&(label, uri)))
            .ok()
    }

    pub fn phrase_count(&self) -> usize {
        self.templates.len() * self.tuples.len()
    }

    /// Returns the first violated relation invariant.
    pub fn check(&self) -> Result<(), String> {
        for t in &self.templates {
            t.check().map_err(|e| format!("template {}: {e}", t.id))?;
        }
        let distinct: HashSet<&str> = self.templates.iter().map(|t| t.text.as_str()).collect();
        if distinct.len() < 2 || distinct.len() != self.templates.len() {
            return Err("needs at least two templates with distinct text".into());
        }
        let mut keys = HashSet::new();
        let mut objects: HashMap<&str, &str> = HashMap::new();
        for t in &self.tuples {
            if t.sub_label.is_empty() || t.obj_label.is_empty() {
                return Err(format!("tuple ({}, {}) has an empty label", t.sub_uri, t.obj_uri));
            }
            if !keys.insert((t.sub_uri.as_str(), t.obj_uri.as_str())) {
                return Err(format!("duplicate tuple ({}, {})", t.sub_uri, t.obj_uri));
            }
            if let Some(prev) = objects.insert(&t.sub_uri, &t.obj_uri) {
                if prev != t.obj_uri {
                    return Err(format!("subject {} has several objects", t.sub_uri));
                }
            }
        }
        if self.candidates != candidates_from_tuples(&self.tuples) {
            return Err("candidate list out of sync with tuples".into());
        }
        Ok(())
    }
}

/// Builder provenance stored next to a pack.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PackMetadata {
    #[serde(default)]
    pub thresholds: BTreeMap<String, Value>,
    #[serde(default)]
    pub source_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub punctuation: Option<Vec<char>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguagePack {
    pub language: String,
    pub relations: BTreeMap<String, Relation>,
    pub metadata: PackMetadata,
}

impl LanguagePack {
    pub fn new(language: impl Into<String>) -> Self {
        LanguagePack {
            language: language.into(),
            relations: BTreeMap::new(),
            metadata: PackMetadata::default(),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.relations.len() > MAX_RELATIONS {
            return Err(format!("{} relations exceed the limit of {MAX_RELATIONS}", self.relations.len()));
        }
        for (id, r) in &self.relations {
            if id != &r.id {
                return Err(format!("relation key {id} does not match id {}", r.id));
            }
            r.check().map_err(|e| format!("relation {id}: {e}"))?;
        }
        Ok(())
    }

    pub fn phrase_count(&self) -> usize {
        self.relations.values().map(Relation::phrase_count).sum()
    }

    pub fn punctuation(&self) -> Vec<char> {
        self.metadata
            .punctuation
            .clone()
            .unwrap_or_else(|| DEFAULT_FINAL_PUNCTUATION.to_vec())
    }

    /// Content hash over relation ids, templates and tuples (metadata excluded).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.language.as_bytes());
        for (id, r) in &self.relations {
            h.update([1]);
            h.update(id.as_bytes());
            for t in &r.templates {
                h.update([2]);
                h.update(t.id.as_bytes());
                h.update([0]);
                h.update(t.text.as_bytes());
            }
            for t in &r.tuples {
                h.update([3]);
                for part in [&t.sub_uri, &t.obj_uri, &t.sub_label, &t.obj_label] {
                    h.update(part.as_bytes());
                    h.update([0]);
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// A record dropped while loading or building, with its reason.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DropRecord {
    pub relation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub reason: String,
}

impl DropRecord {
    pub fn new(relation: &str, item: Option<String>, reason: impl Into<String>) -> Self {
        DropRecord {
            relation: relation.to_string(),
            item,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PackLoad {
    pub pack: LanguagePack,
    pub drops: Vec<DropRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PatternRecord {
    id: String,
    pattern: String,
    sources: Vec<String>,
    review_status: ReviewStatus,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TupleRecord {
    sub_uri: String,
    obj_uri: String,
    sub_label: String,
    obj_label: String,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Reads a JSON-lines file; blank lines are skipped, line numbers are 1-based.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

/// Writes JSON-lines through a temp file and rename.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| CorpusError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CorpusError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CorpusError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CorpusError::io(path, e))
}

/// Relation ids found as `<dir>/<relation>.jsonl`.
pub(crate) fn relation_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CorpusError> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))? {
        let path = entry.map_err(|e| CorpusError::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Drops tuples with an empty label, or whose subject maps to two or more distinct objects.
/// Conflicts are detected over the whole input, before the label check. Order is kept.
pub fn filter_tuples(tuples: Vec<Tuple>) -> (Vec<Tuple>, Vec<DropRecord>) {
    let mut objects: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for t in &tuples {
        objects.entry(&t.sub_uri).or_default().insert(&t.obj_uri);
    }
    let conflicted: HashSet<String> = objects
        .into_iter()
        .filter(|(_, objs)| objs.len() > 1)
        .map(|(s, _)| s.to_string())
        .collect();
    let mut kept = Vec::with_capacity(tuples.len());
    let mut drops = Vec::new();
    for t in tuples {
        let item = Some(format!("{} {}", t.sub_uri, t.obj_uri));
        if conflicted.contains(&t.sub_uri) {
            drops.push(DropRecord::new(&t.relation_id, item, "subject_with_several_objects"));
        } else if t.sub_label.is_empty() || t.obj_label.is_empty() {
            drops.push(DropRecord::new(&t.relation_id, item, "missing_label"));
        } else {
            kept.push(t);
        }
    }
    (kept, drops)
}

/// Keeps the first occurrence of each `(sub_uri, obj_uri)`.
pub(crate) fn dedup_tuples(tuples: Vec<Tuple>) -> (Vec<Tuple>, Vec<DropRecord>) {
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(tuples.len());
    let mut drops = Vec::new();
    for t in tuples {
        if seen.insert(t.key()) {
            kept.push(t);
        } else {
            drops.push(DropRecord::new(
                &t.relation_id,
                Some(format!("{} {}", t.sub_uri, t.obj_uri)),
                "duplicate_tuple",
            ));
        }
    }
    (kept, drops)
}

/// Loads one language, enforcing every pack invariant. Offending records and relations are
/// dropped and reported rather than failing the load.
pub fn load_language_pack(root: &Path, language: &str) -> Result<PackLoad, CorpusError> {
    let pattern_files = relation_files(&root.join("patterns").join(language))?;
    let tuple_files = relation_files(&root.join("tuples").join(language))?;
    if pattern_files.is_empty() && tuple_files.is_empty() {
        return Err(CorpusError::LanguageMissing(language.to_string()));
    }

    let mut pack = LanguagePack::new(language);
    let meta_path = root.join("meta").join(format!("{language}.json"));
    if meta_path.is_file() {
        let raw = fs::read_to_string(&meta_path).map_err(|e| CorpusError::io(&meta_path, e))?;
        pack.metadata = serde_json::from_str(&raw).map_err(|e| CorpusError::MalformedRecord {
            path: meta_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
    }

    let mut drops = Vec::new();
    let relation_ids: BTreeSet<&String> = pattern_files.keys().chain(tuple_files.keys()).collect();
    for rel in relation_ids {
        let mut templates: Vec<Template> = Vec::new();
        if let Some(path) = pattern_files.get(rel) {
            for (line, rec) in read_jsonl::<PatternRecord>(path)? {
                let text = normalize(&rec.pattern);
                let item = Some(format!("{}:{line}", rec.id));
                if let Err(e) = validate_template(&text) {
                    drops.push(DropRecord::new(rel, item, e.to_string()));
                    continue;
                }
                if rec.review_status == ReviewStatus::Wrong {
                    drops.push(DropRecord::new(rel, item, "reviewed_wrong"));
                    continue;
                }
                if rec.sources.is_empty() {
                    drops.push(DropRecord::new(rel, item, "no_sources"));
                    continue;
                }
                if templates.iter().any(|t| t.text == text || t.id == rec.id) {
                    log::warn!("{language}/{rel}: duplicate template {} dropped", rec.id);
                    drops.push(DropRecord::new(rel, item, "duplicate_template"));
                    continue;
                }
                templates.push(Template {
                    id: rec.id,
                    relation_id: rel.clone(),
                    language: language.to_string(),
                    text,
                    sources: rec.sources.into_iter().collect(),
                    review_status: rec.review_status,
                    extra: rec.extra,
                });
            }
        }
        if templates.len() < 2 {
            log::warn!("{language}/{rel}: fewer than two templates, relation dropped");
            drops.push(DropRecord::new(rel, None, "fewer_than_two_templates"));
            continue;
        }

        let mut tuples = Vec::new();
        if let Some(path) = tuple_files.get(rel) {
            for (_, rec) in read_jsonl::<TupleRecord>(path)? {
                tuples.push(Tuple {
                    sub_uri: rec.sub_uri,
                    obj_uri: rec.obj_uri,
                    sub_label: rec.sub_label,
                    obj_label: rec.obj_label,
                    relation_id: rel.clone(),
                    language: language.to_string(),
                    extra: rec.extra,
                });
            }
        }
        let (tuples, dup) = dedup_tuples(tuples);
        for d in &dup {
            log::warn!("{language}/{rel}: {} {}", d.reason, d.item.as_deref().unwrap_or(""));
        }
        drops.extend(dup);
        let (tuples, filtered) = filter_tuples(tuples);
        drops.extend(filtered);

        pack.relations.insert(rel.clone(), Relation::new(rel.clone(), templates, tuples));
    }
    Ok(PackLoad { pack, drops })
}

/// Languages that have a `patterns/<lang>` directory under `root`.
pub fn list_languages(root: &Path) -> Result<Vec<String>, CorpusError> {
    let dir = root.join("patterns");
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(&dir).map_err(|e| CorpusError::io(&dir, e))? {
        let entry = entry.map_err(|e| CorpusError::io(&dir, e))?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Writes the pack in the directory layout read by [`load_language_pack`].
pub fn save_language_pack(root: &Path, pack: &LanguagePack) -> Result<(), CorpusError> {
    let lang = &pack.language;
    for dir in ["patterns", "tuples"] {
        let d = root.join(dir).join(lang);
        if d.is_dir() {
            for (_, stale) in relation_files(&d)? {
                fs::remove_file(&stale).map_err(|e| CorpusError::io(&stale, e))?;
            }
        }
    }
    for (rel, relation) in &pack.relations {
        let patterns: Vec<PatternRecord> = relation
            .templates
            .iter()
            .map(|t| PatternRecord {
                id: t.id.clone(),
                pattern: t.text.clone(),
                sources: t.sources.iter().cloned().collect(),
                review_status: t.review_status,
                extra: t.extra.clone(),
            })
            .collect();
        write_jsonl(&root.join("patterns").join(lang).join(format!("{rel}.jsonl")), &patterns)?;
        let tuples: Vec<TupleRecord> = relation
            .tuples
            .iter()
            .map(|t| TupleRecord {
                sub_uri: t.sub_uri.clone(),
                obj_uri: t.obj_uri.clone(),
                sub_label: t.sub_label.clone(),
                obj_label: t.obj_label.clone(),
                extra: t.extra.clone(),
            })
            .collect();
        write_jsonl(&root.join("tuples").join(lang).join(format!("{rel}.jsonl")), &tuples)?;
    }
    let mut meta = serde_json::to_vec_pretty(&pack.metadata).expect("metadata serializes");
    meta.push(b'\n');
    write_atomic(&root.join("meta").join(format!("{lang}.json")), &meta)
}
