//! Consistency, accuracy and consistency-accuracy per relation, macro-averaged over relations.
//!
//! All three are computed from integer counts and a single final division, so the result does
//! not depend on template or tuple order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LanguagePack, Relation};
use crate::prober::{CellKey, PredictionSet, PunctuationPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("incomplete_cells: no prediction for {0}")]
    IncompleteCells(CellKey),
    #[error("relation {0} needs at least two templates")]
    TooFewTemplates(String),
    #[error("relation {0} has no tuples")]
    NoTuples(String),
    #[error("empty_input: nothing to average")]
    EmptyInput,
    #[error("malformed cell grid: {0}")]
    Shape(String),
    #[error("pack_mismatch: predictions were made for pack {expected}, got pack {actual}")]
    PackMismatch { expected: String, actual: String },
}

/// Predictions of one relation laid out as `predicted[tuple][template]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellGrid {
    pub relation_id: String,
    pub predicted: Vec<Vec<usize>>,
    pub gold: Vec<usize>,
}

impl CellGrid {
    pub fn new(relation_id: impl Into<String>, predicted: Vec<Vec<usize>>, gold: Vec<usize>) -> Result<Self, MetricsError> {
        let relation_id = relation_id.into();
        if predicted.len() != gold.len() {
            return Err(MetricsError::Shape(format!(
                "{} tuple rows but {} gold entries",
                predicted.len(),
                gold.len()
            )));
        }
        if let Some(first) = predicted.first() {
            if predicted.iter().any(|row| row.len() != first.len()) {
                return Err(MetricsError::Shape("rows differ in template count".into()));
            }
        }
        Ok(CellGrid {
            relation_id,
            predicted,
            gold,
        })
    }

    /// Gathers a relation's predictions; errors on the first missing cell in pack order.
    pub fn from_predictions(relation: &Relation, set: &PredictionSet) -> Result<Self, MetricsError> {
        let mut predicted = Vec::with_capacity(relation.tuples.len());
        let mut gold = Vec::with_capacity(relation.tuples.len());
        for d in &relation.tuples {
            let mut row = Vec::with_capacity(relation.templates.len());
            let mut gold_idx = relation.candidate_index(&d.obj_label, &d.obj_uri);
            for t in &relation.templates {
                let key = CellKey::new(&relation.id, &t.id, &d.sub_uri, &d.obj_uri);
                let p = set.predictions.get(&key).ok_or(MetricsError::IncompleteCells(key))?;
                gold_idx.get_or_insert(p.gold_index);
                row.push(p.predicted_index);
            }
            predicted.push(row);
            gold.push(gold_idx.unwrap_or(usize::MAX));
        }
        CellGrid::new(relation.id.clone(), predicted, gold)
    }

    pub fn n_tuples(&self) -> usize {
        self.predicted.len()
    }

    pub fn n_templates(&self) -> usize {
        self.predicted.first().map_or(0, Vec::len)
    }

    fn require_pairs(&self) -> Result<(), MetricsError> {
        if self.n_tuples() == 0 {
            return Err(MetricsError::NoTuples(self.relation_id.clone()));
        }
        if self.n_templates() < 2 {
            return Err(MetricsError::TooFewTemplates(self.relation_id.clone()));
        }
        Ok(())
    }

    /// Per tuple: (agreeing template pairs, agreeing pairs that are also correct).
    fn pair_counts(&self) -> (u64, u64) {
        let mut agree = 0u64;
        let mut agree_correct = 0u64;
        let mut row = Vec::new();
        for (preds, &gold) in self.predicted.iter().zip(&self.gold) {
            row.clear();
            row.extend_from_slice(preds);
            row.sort_unstable();
            for group in row.chunk_by(|a, b| a == b) {
                let c = group.len() as u64;
                let pairs = c * (c - 1) / 2;
                agree += pairs;
                if group[0] == gold {
                    agree_correct += pairs;
                }
            }
        }
        (agree, agree_correct)
    }

    fn total_pairs(&self) -> u64 {
        let t = self.n_templates() as u64;
        self.n_tuples() as u64 * (t * (t - 1) / 2)
    }
}

/// Fraction of template pairs that agree, averaged over tuples.
pub fn relation_consistency(grid: &CellGrid) -> Result<f64, MetricsError> {
    grid.require_pairs()?;
    let (agree, _) = grid.pair_counts();
    Ok(agree as f64 / grid.total_pairs() as f64)
}

/// Fraction of cells whose prediction is the gold object.
pub fn relation_accuracy(grid: &CellGrid) -> Result<f64, MetricsError> {
    if grid.n_tuples() == 0 {
        return Err(MetricsError::NoTuples(grid.relation_id.clone()));
    }
    if grid.n_templates() == 0 {
        return Err(MetricsError::TooFewTemplates(grid.relation_id.clone()));
    }
    let correct: usize = grid
        .predicted
        .iter()
        .zip(&grid.gold)
        .map(|(row, gold)| row.iter().filter(|p| *p == gold).count())
        .sum();
    Ok(correct as f64 / (grid.n_tuples() * grid.n_templates()) as f64)
}

/// Like [`relation_consistency`] but a pair only counts when its shared prediction is correct.
pub fn relation_consistency_accuracy(grid: &CellGrid) -> Result<f64, MetricsError> {
    grid.require_pairs()?;
    let (_, agree_correct) = grid.pair_counts();
    Ok(agree_correct as f64 / grid.total_pairs() as f64)
}

/// Unweighted mean, summed in the given order.
pub fn macro_average(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub relation_id: String,
    pub consistency: f64,
    pub accuracy: f64,
    pub consistency_accuracy: f64,
    pub n_templates: usize,
    pub n_tuples: usize,
}

impl RelationMetrics {
    pub fn from_grid(grid: &CellGrid) -> Result<Self, MetricsError> {
        Ok(RelationMetrics {
            relation_id: grid.relation_id.clone(),
            consistency: relation_consistency(grid)?,
            accuracy: relation_accuracy(grid)?,
            consistency_accuracy: relation_consistency_accuracy(grid)?,
            n_templates: grid.n_templates(),
            n_tuples: grid.n_tuples(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub consistency: f64,
    pub accuracy: f64,
    pub consistency_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRelation {
    pub relation_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub language: String,
    pub model_tag: String,
    pub policy: PunctuationPolicy,
    pub pack_hash: String,
    /// Predictions compare candidate indices, so two entities sharing a label differ.
    pub equality: String,
    pub per_relation: Vec<RelationMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<ExcludedRelation>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
}

pub const CSV_HEADER: &str = "language,relation,consistency,accuracy,consistency_accuracy,n_templates,n_tuples";

impl MetricsReport {
    /// Flat per-relation CSV. Floats use the shortest round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.per_relation {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_field(&self.language),
                csv_field(&r.relation_id),
                r.consistency,
                r.accuracy,
                r.consistency_accuracy,
                r.n_templates,
                r.n_tuples
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Computes all metrics for a pack. Relations with missing cells, fewer than two templates,
/// or no tuples are left out of the macro average and listed as excluded.
pub fn evaluate(set: &PredictionSet, pack: &LanguagePack) -> Result<MetricsReport, MetricsError> {
    let actual = pack.content_hash();
    if set.header.pack_hash != actual {
        return Err(MetricsError::PackMismatch {
            expected: set.header.pack_hash.clone(),
            actual,
        });
    }
    let mut per_relation = Vec::new();
    let mut excluded = Vec::new();
    for (id, relation) in &pack.relations {
        match CellGrid::from_predictions(relation, set).and_then(|g| RelationMetrics::from_grid(&g)) {
            Ok(m) => per_relation.push(m),
            Err(e) => excluded.push(ExcludedRelation {
                relation_id: id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    let column = |f: fn(&RelationMetrics) -> f64| per_relation.iter().map(f).collect::<Vec<_>>();
    let macro_avg = MacroMetrics {
        consistency: macro_average(&column(|m| m.consistency))?,
        accuracy: macro_average(&column(|m| m.accuracy))?,
        consistency_accuracy: macro_average(&column(|m| m.consistency_accuracy))?,
    };
    Ok(MetricsReport {
        language: set.header.language.clone(),
        model_tag: set.header.model_tag.clone(),
        policy: set.header.policy,
        pack_hash: set.header.pack_hash.clone(),
        equality: "candidate_index".into(),
        per_relation,
        excluded,
        macro_avg,
    })
}
