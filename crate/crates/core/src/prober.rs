//! Typed cloze queries over a language pack, persisted as a resumable JSON-lines cache.
//!
//! Cache layout: the first line is a header
//! `{"language", "model_tag", "policy", "pack_hash"}`, then one line per finished cell
//! `{"relation", "template_id", "sub_uri", "obj_uri", "pred_idx", "pred_score", "gold_idx"}`.
//! Cells that failed are listed in `<cache>.skipped.jsonl` and retried on the next run.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    normalize, strip_final_punctuation, write_atomic, CorpusError, LanguagePack, Relation, Template, Tuple,
    SUBJECT_SLOT,
};
use crate::scorer::{ScoreError, ScoreRequest, Scorer};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("gold_missing: object ({label}, {uri}) of relation {relation} is not a candidate")]
    GoldMissing {
        relation: String,
        label: String,
        uri: String,
    },
    #[error("relation {0} has no candidates")]
    NoCandidates(String),
    #[error("state mismatch: {0}")]
    StateMismatch(String),
    #[error("{path}:{line}: malformed cache record: {message}")]
    MalformedCache {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl From<CorpusError> for ProbeError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { path, source } => ProbeError::Io { path, source },
            other => ProbeError::Io {
                path: PathBuf::new(),
                source: std::io::Error::other(other.to_string()),
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProbeError + '_ {
    move |source| ProbeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PunctuationPolicy {
    Keep,
    #[default]
    Strip,
}

impl fmt::Display for PunctuationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PunctuationPolicy::Keep => "keep",
            PunctuationPolicy::Strip => "strip",
        })
    }
}

impl FromStr for PunctuationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "keep" => Ok(PunctuationPolicy::Keep),
            "strip" => Ok(PunctuationPolicy::Strip),
            other => Err(format!("unknown punctuation policy {other:?} (expected keep or strip)")),
        }
    }
}

/// Substitutes the subject, keeps `[Y]` as the object slot, and applies the punctuation policy.
/// Punctuation is stripped from the template before substitution so a subject's own trailing
/// period is never touched.
pub fn render_query(template: &str, subject_label: &str, policy: PunctuationPolicy, marks: &[char]) -> String {
    let template = match policy {
        PunctuationPolicy::Keep => template.to_string(),
        PunctuationPolicy::Strip => strip_final_punctuation(template, marks),
    };
    normalize(&template.replacen(SUBJECT_SLOT, subject_label, 1))
}

/// Index of the highest score, ties to the smallest index; skipped indices never win.
pub fn argmax(scores: &[f64], skipped: &[usize]) -> Option<usize> {
    let skipped: HashSet<usize> = skipped.iter().copied().collect();
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if skipped.contains(&i) {
            continue;
        }
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub relation: String,
    pub template_id: String,
    pub sub_uri: String,
    pub obj_uri: String,
}

impl CellKey {
    pub fn new(relation: &str, template_id: &str, sub_uri: &str, obj_uri: &str) -> Self {
        CellKey {
            relation: relation.to_string(),
            template_id: template_id.to_string(),
            sub_uri: sub_uri.to_string(),
            obj_uri: obj_uri.to_string(),
        }
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/({}, {})", self.relation, self.template_id, self.sub_uri, self.obj_uri)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "relation")]
    pub relation_id: String,
    pub template_id: String,
    pub sub_uri: String,
    pub obj_uri: String,
    #[serde(rename = "pred_idx")]
    pub predicted_index: usize,
    #[serde(rename = "pred_score")]
    pub predicted_score: f64,
    #[serde(rename = "gold_idx")]
    pub gold_index: usize,
}

impl Prediction {
    pub fn key(&self) -> CellKey {
        CellKey::new(&self.relation_id, &self.template_id, &self.sub_uri, &self.obj_uri)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub language: String,
    pub model_tag: String,
    pub policy: PunctuationPolicy,
    pub pack_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub relation: String,
    pub template_id: String,
    pub sub_uri: String,
    pub obj_uri: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub header: CacheHeader,
    pub predictions: BTreeMap<CellKey, Prediction>,
    pub skipped: Vec<SkipRecord>,
}

impl PredictionSet {
    /// Pack cells without a prediction, in pack order.
    pub fn missing_cells(&self, pack: &LanguagePack) -> Vec<CellKey> {
        cells(pack)
            .filter(|(r, t, d)| !self.predictions.contains_key(&CellKey::new(&r.id, &t.id, &d.sub_uri, &d.obj_uri)))
            .map(|(r, t, d)| CellKey::new(&r.id, &t.id, &d.sub_uri, &d.obj_uri))
            .collect()
    }
}

/// All `(relation, template, tuple)` cells in pack order.
pub fn cells(pack: &LanguagePack) -> impl Iterator<Item = (&Relation, &Template, &Tuple)> {
    pack.relations
        .values()
        .flat_map(|r| r.templates.iter().flat_map(move |t| r.tuples.iter().map(move |d| (r, t, d))))
}

/// Scores every candidate of the relation for one populated template and takes the argmax.
pub fn predict_cell(
    relation: &Relation,
    template: &Template,
    tuple: &Tuple,
    scorer: &dyn Scorer,
    policy: PunctuationPolicy,
    marks: &[char],
) -> Result<Prediction, ProbeError> {
    if relation.candidates.is_empty() {
        return Err(ProbeError::NoCandidates(relation.id.clone()));
    }
    let gold_index = relation
        .candidate_index(&tuple.obj_label, &tuple.obj_uri)
        .ok_or_else(|| ProbeError::GoldMissing {
            relation: relation.id.clone(),
            label: tuple.obj_label.clone(),
            uri: tuple.obj_uri.clone(),
        })?;
    let context = render_query(&template.text, &tuple.sub_label, policy, marks);
    let request = ScoreRequest::new(context, relation.candidates.iter().map(|c| c.label.clone()).collect());
    let response = scorer.score_candidates(&request)?;
    response.validate(request.candidates.len())?;
    let predicted_index = argmax(&response.scores, &response.skipped)
        .ok_or_else(|| ScoreError::InvalidRequest("every candidate was skipped".into()))?;
    Ok(Prediction {
        relation_id: relation.id.clone(),
        template_id: template.id.clone(),
        sub_uri: tuple.sub_uri.clone(),
        obj_uri: tuple.obj_uri.clone(),
        predicted_index,
        predicted_score: response.scores[predicted_index],
        gold_index,
    })
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub policy: PunctuationPolicy,
    pub jobs: usize,
    /// Continue from an existing cache instead of starting over.
    pub resume: bool,
    /// Stop after this many newly scored cells.
    pub limit: Option<usize>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            policy: PunctuationPolicy::Strip,
            jobs: 1,
            resume: false,
            limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProbeSummary {
    pub total_cells: usize,
    pub cached: usize,
    pub scored: usize,
    pub skipped: usize,
    pub remaining: usize,
}

pub fn skip_ledger_path(cache: &Path) -> PathBuf {
    let mut name = cache.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".skipped.jsonl");
    cache.with_file_name(name)
}

struct CacheContents {
    header: CacheHeader,
    predictions: Vec<Prediction>,
    /// An unterminated last line was found and ignored.
    torn_tail: bool,
}

fn read_cache(path: &Path) -> Result<CacheContents, ProbeError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut lines = Vec::new();
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        lines.push((buf.ends_with('\n'), buf.trim_end_matches(['\n', '\r']).to_string()));
    }
    let malformed = |line: usize, message: String| ProbeError::MalformedCache {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut torn_tail = false;
    if let Some((false, last)) = lines.last() {
        if serde_json::from_str::<serde_json::Value>(last).is_err() {
            lines.pop();
            torn_tail = true;
        }
    }
    let mut iter = lines.into_iter().enumerate();
    let header = match iter.next() {
        Some((_, (_, text))) => serde_json::from_str(&text).map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(malformed(1, "missing header".into())),
    };
    let mut predictions = Vec::new();
    for (i, (_, text)) in iter {
        if text.trim().is_empty() {
            continue;
        }
        predictions.push(serde_json::from_str(&text).map_err(|e| malformed(i + 1, e.to_string()))?);
    }
    Ok(CacheContents {
        header,
        predictions,
        torn_tail,
    })
}

fn encode_lines<T: Serialize>(records: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, &r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

/// Reads a cache and its skip ledger.
pub fn load_prediction_set(path: &Path) -> Result<PredictionSet, ProbeError> {
    let contents = read_cache(path)?;
    let mut predictions = BTreeMap::new();
    for p in contents.predictions {
        predictions.insert(p.key(), p);
    }
    let ledger = skip_ledger_path(path);
    let mut skipped = Vec::new();
    if ledger.is_file() {
        for line in fs::read_to_string(&ledger).map_err(io_err(&ledger))?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            skipped.push(serde_json::from_str(line).map_err(|e| ProbeError::MalformedCache {
                path: ledger.clone(),
                line: 0,
                message: e.to_string(),
            })?);
        }
    }
    Ok(PredictionSet {
        header: contents.header,
        predictions,
        skipped,
    })
}

/// Probes every pack cell, appending each finished prediction to `cache`.
///
/// With `resume`, cells already in the cache are not scored again; the cache header must match
/// the pack hash, model tag and policy.
pub fn run_probe(
    pack: &LanguagePack,
    scorer: &dyn Scorer,
    cache: &Path,
    options: &ProbeOptions,
) -> Result<(PredictionSet, ProbeSummary), ProbeError> {
    let header = CacheHeader {
        language: pack.language.clone(),
        model_tag: scorer.model_tag(),
        policy: options.policy,
        pack_hash: pack.content_hash(),
    };
    let mut done: BTreeMap<CellKey, Prediction> = BTreeMap::new();
    if options.resume && cache.is_file() {
        let existing = read_cache(cache)?;
        if existing.header.pack_hash != header.pack_hash {
            return Err(ProbeError::StateMismatch(format!(
                "cache {} was built for pack {}, current pack is {}",
                cache.display(),
                existing.header.pack_hash,
                header.pack_hash
            )));
        }
        if existing.header != header {
            return Err(ProbeError::StateMismatch(format!(
                "cache header {:?} does not match run {:?}",
                existing.header, header
            )));
        }
        if existing.torn_tail {
            log::warn!("{}: discarding incomplete trailing record", cache.display());
            let mut bytes = encode_lines([&existing.header]);
            bytes.extend(encode_lines(&existing.predictions));
            write_atomic(cache, &bytes)?;
        }
        for p in existing.predictions {
            done.insert(p.key(), p);
        }
    } else {
        write_atomic(cache, &encode_lines([&header]))?;
    }

    let all: Vec<(&Relation, &Template, &Tuple)> = cells(pack).collect();
    let mut pending: Vec<(&Relation, &Template, &Tuple)> = all
        .iter()
        .copied()
        .filter(|(r, t, d)| !done.contains_key(&CellKey::new(&r.id, &t.id, &d.sub_uri, &d.obj_uri)))
        .collect();
    let cached = all.len() - pending.len();
    if let Some(limit) = options.limit {
        pending.truncate(limit);
    }

    let file = OpenOptions::new().append(true).open(cache).map_err(io_err(cache))?;
    let writer = Mutex::new(BufWriter::new(file));
    let fresh = Mutex::new(Vec::new());
    let skips = Mutex::new(Vec::new());
    let write_error: Mutex<Option<ProbeError>> = Mutex::new(None);
    let marks = pack.punctuation();

    let work = |(r, t, d): &(&Relation, &Template, &Tuple)| {
        if write_error.lock().unwrap().is_some() {
            return;
        }
        match predict_cell(r, t, d, scorer, options.policy, &marks) {
            Ok(p) => {
                let mut line = serde_json::to_vec(&p).expect("prediction serializes");
                line.push(b'\n');
                let mut w = writer.lock().unwrap();
                if let Err(e) = w.write_all(&line).and_then(|_| w.flush()) {
                    write_error.lock().unwrap().get_or_insert(io_err(cache)(e));
                    return;
                }
                drop(w);
                fresh.lock().unwrap().push(p);
            }
            Err(e @ ProbeError::Io { .. }) => {
                write_error.lock().unwrap().get_or_insert(e);
            }
            Err(e) => {
                log::warn!("{}/{}: skipped ({}, {}): {e}", r.id, t.id, d.sub_uri, d.obj_uri);
                skips.lock().unwrap().push(SkipRecord {
                    relation: r.id.clone(),
                    template_id: t.id.clone(),
                    sub_uri: d.sub_uri.clone(),
                    obj_uri: d.obj_uri.clone(),
                    reason: e.to_string(),
                });
            }
        }
    };
    if options.jobs <= 1 {
        pending.iter().for_each(work);
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| ProbeError::Io {
                path: cache.to_path_buf(),
                source: std::io::Error::other(e),
            })?;
        pool.install(|| pending.par_iter().for_each(work));
    }
    if let Some(e) = write_error.into_inner().unwrap() {
        return Err(e);
    }
    writer.into_inner().unwrap().flush().map_err(io_err(cache))?;

    let fresh = fresh.into_inner().unwrap();
    let mut skipped = skips.into_inner().unwrap();
    skipped.sort_by(|a, b| {
        (&a.relation, &a.template_id, &a.sub_uri, &a.obj_uri).cmp(&(&b.relation, &b.template_id, &b.sub_uri, &b.obj_uri))
    });
    let ledger = skip_ledger_path(cache);
    if skipped.is_empty() {
        if ledger.is_file() {
            fs::remove_file(&ledger).map_err(io_err(&ledger))?;
        }
    } else {
        write_atomic(&ledger, &encode_lines(&skipped))?;
    }

    let scored = fresh.len();
    for p in fresh {
        done.insert(p.key(), p);
    }
    let summary = ProbeSummary {
        total_cells: all.len(),
        cached,
        scored,
        skipped: skipped.len(),
        remaining: all.len() - done.len(),
    };
    Ok((
        PredictionSet {
            header,
            predictions: done,
            skipped,
        },
        summary,
    ))
}
