//! Text/CSV tables and SVG charts built from stats and metrics reports.
//!
//! Every emitter is a pure function of its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::PackStats;
use crate::corpus::{write_atomic, CorpusError};
use crate::metrics::{csv_field, MetricsReport};
use crate::prober::PunctuationPolicy;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report")]
    EmptyInput,
    #[error("missing_variant: no {policy} report for model {model}, language {language}")]
    MissingVariant {
        model: String,
        language: String,
        policy: PunctuationPolicy,
    },
    #[error("malformed stats csv line {line}: {message}")]
    MalformedCsv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Consistency,
    Accuracy,
    ConsistencyAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Consistency, Metric::Accuracy, Metric::ConsistencyAccuracy];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Consistency => "consistency",
            Metric::Accuracy => "accuracy",
            Metric::ConsistencyAccuracy => "consistency_accuracy",
        }
    }

    pub fn of(self, report: &MetricsReport) -> f64 {
        match self {
            Metric::Consistency => report.macro_avg.consistency,
            Metric::Accuracy => report.macro_avg.accuracy,
            Metric::ConsistencyAccuracy => report.macro_avg.consistency_accuracy,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

pub const STATS_CSV_HEADER: &str =
    "language,relations,total_patterns,min_patterns,max_patterns,avg_patterns,avg_string_distance,phrase_count";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsTable {
    pub text: String,
    pub csv: String,
}

fn dash<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn fixed(v: Option<f64>) -> String {
    dash(v.map(|v| format!("{v:.2}")))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Summary rows named like the dataset statistics table, then one row per language.
pub fn emit_stats_table(stats: &[PackStats]) -> Result<StatsTable, ReportError> {
    if stats.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let summary = [
        ("Average #relations", fixed(mean(stats.iter().map(|s| s.relation_count as f64)))),
        ("Average total #patterns", fixed(mean(stats.iter().map(|s| s.total_patterns as f64)))),
        ("Min. patterns in a relation", dash(stats.iter().filter_map(|s| s.min_patterns).min())),
        ("Max. patterns in a relation", dash(stats.iter().filter_map(|s| s.max_patterns).max())),
        ("Average patterns in a relation", fixed(mean(stats.iter().filter_map(|s| s.avg_patterns)))),
        ("Average string distance", fixed(mean(stats.iter().filter_map(|s| s.avg_string_distance)))),
    ];
    let mut text = String::new();
    for (label, value) in &summary {
        writeln!(text, "{label:<32} {value:>10}").unwrap();
    }
    text.push('\n');
    writeln!(
        text,
        "{:<10} {:>9} {:>9} {:>5} {:>5} {:>9} {:>9} {:>9}",
        "language", "relations", "patterns", "min", "max", "avg", "distance", "phrases"
    )
    .unwrap();
    for s in stats {
        writeln!(
            text,
            "{:<10} {:>9} {:>9} {:>5} {:>5} {:>9} {:>9} {:>9}",
            s.language,
            s.relation_count,
            s.total_patterns,
            dash(s.min_patterns),
            dash(s.max_patterns),
            fixed(s.avg_patterns),
            fixed(s.avg_string_distance),
            s.phrase_count
        )
        .unwrap();
    }
    Ok(StatsTable {
        text,
        csv: stats_csv(stats),
    })
}

/// Lossless CSV: floats in shortest round-trip form, missing values as empty fields.
pub fn stats_csv(stats: &[PackStats]) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut out = String::from(STATS_CSV_HEADER);
    out.push('\n');
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&s.language),
            s.relation_count,
            s.total_patterns,
            opt(s.min_patterns.map(|v| v.to_string())),
            opt(s.max_patterns.map(|v| v.to_string())),
            opt(s.avg_patterns.map(|v| v.to_string())),
            opt(s.avg_string_distance.map(|v| v.to_string())),
            s.phrase_count
        )
        .unwrap();
    }
    out
}

pub fn parse_stats_csv(text: &str) -> Result<Vec<PackStats>, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == STATS_CSV_HEADER => {}
        _ => {
            return Err(ReportError::MalformedCsv {
                line: 1,
                message: "unexpected header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let bad = |message: String| ReportError::MalformedCsv { line: i + 1, message };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields, got {}", fields.len())));
        }
        fn req<T: std::str::FromStr>(s: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("cannot parse {s:?}"))
        }
        fn opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                req(s).map(Some)
            }
        }
        out.push(PackStats {
            language: fields[0].to_string(),
            relation_count: req(fields[1]).map_err(bad)?,
            total_patterns: req(fields[2]).map_err(bad)?,
            min_patterns: opt(fields[3]).map_err(bad)?,
            max_patterns: opt(fields[4]).map_err(bad)?,
            avg_patterns: opt(fields[5]).map_err(bad)?,
            avg_string_distance: opt(fields[6]).map_err(bad)?,
            phrase_count: req(fields[7]).map_err(bad)?,
        });
    }
    Ok(out)
}

/// Languages ordered by the first model's value (descending, ties by code), then languages the
/// first model lacks.
pub fn chart_language_order(reports: &[MetricsReport], metric: Metric) -> Vec<String> {
    let Some(first_model) = reports.first().map(|r| r.model_tag.as_str()) else {
        return Vec::new();
    };
    let mut keyed: Vec<(String, Option<f64>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for r in reports {
        if seen.insert(r.language.clone()) {
            let v = reports
                .iter()
                .find(|x| x.model_tag == first_model && x.language == r.language)
                .map(|x| metric.of(x));
            keyed.push((r.language.clone(), v));
        }
    }
    keyed.sort_by(|(la, va), (lb, vb)| match (va, vb) {
        (Some(a), Some(b)) => b.total_cmp(a).then_with(|| la.cmp(lb)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => la.cmp(lb),
    });
    keyed.into_iter().map(|(l, _)| l).collect()
}

const PALETTE: [&str; 6] = ["#4C72B0", "#DD8452", "#55A868", "#C44E52", "#8172B3", "#937860"];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart: one group per language, one bar per model, y axis fixed to [0, 1].
pub fn render_language_chart(reports: &[MetricsReport], metric: Metric) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !models.contains(&r.model_tag.as_str()) {
            models.push(&r.model_tag);
        }
    }
    let languages = chart_language_order(reports, metric);
    let (left, top, bottom, right) = (50.0, 30.0, 40.0, 20.0);
    let bar = 14.0;
    let gap = 10.0;
    let group = bar * models.len() as f64 + gap;
    let plot_h = 240.0;
    let width = left + right + group * languages.len() as f64;
    let height = top + plot_h + bottom;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(svg, r#"<title>{} by language</title>"#, metric.name()).unwrap();
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = top + plot_h * (1.0 - tick);
        writeln!(
            svg,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{tick:.2}</text>"##,
            width - right,
            left - 4.0,
            y + 3.0
        )
        .unwrap();
    }
    for (gi, lang) in languages.iter().enumerate() {
        let gx = left + gap / 2.0 + group * gi as f64;
        writeln!(svg, r#"<g class="language" data-language="{}">"#, xml_escape(lang)).unwrap();
        for (mi, model) in models.iter().enumerate() {
            let Some(r) = reports.iter().find(|r| r.model_tag == *model && &r.language == lang) else {
                continue;
            };
            let v = metric.of(r).clamp(0.0, 1.0);
            let h = plot_h * v;
            writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{bar:.1}" height="{h:.1}" fill="{}"><title>{} {}: {v:.4}</title></rect>"#,
                gx + bar * mi as f64,
                top + plot_h - h,
                PALETTE[mi % PALETTE.len()],
                xml_escape(model),
                xml_escape(lang)
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text></g>"#,
            gx + bar * models.len() as f64 / 2.0,
            top + plot_h + 14.0,
            xml_escape(lang)
        )
        .unwrap();
    }
    for (mi, model) in models.iter().enumerate() {
        let x = left + 90.0 * mi as f64;
        writeln!(
            svg,
            r#"<rect x="{x:.1}" y="8" width="10" height="10" fill="{}"/><text x="{:.1}" y="17">{}</text>"#,
            PALETTE[mi % PALETTE.len()],
            x + 14.0,
            xml_escape(model)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<line x1="{left:.1}" y1="{top:.1}" x2="{left:.1}" y2="{:.1}" stroke="black"/>"#,
        top + plot_h
    )
    .unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_language_chart(reports: &[MetricsReport], metric: Metric, path: &Path) -> Result<(), ReportError> {
    let svg = render_language_chart(reports, metric)?;
    write_atomic(path, svg.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: Metric,
    /// `keep`, `strip`, or `delta` (strip minus keep).
    pub variant: String,
    pub values: Vec<f64>,
}

/// Metric × punctuation-policy rows over (model, language) columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<(String, String)>,
    pub rows: Vec<ComparisonRow>,
    /// Source file of every value, keyed by (model, language, policy).
    pub provenance: BTreeMap<String, PathBuf>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,policy");
        for (model, lang) in &self.columns {
            out.push(',');
            out.push_str(&csv_field(&format!("{model}/{lang}")));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(row.metric.name());
            out.push(',');
            out.push_str(&row.variant);
            for v in &row.values {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

type ByPolicy<'a> = BTreeMap<PunctuationPolicy, (&'a PathBuf, &'a MetricsReport)>;

/// Pairs keep/strip reports per (model, language).
pub fn emit_comparison(reports: &[(PathBuf, MetricsReport)]) -> Result<ComparisonTable, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut by_key: BTreeMap<(String, String), ByPolicy> = BTreeMap::new();
    for (path, r) in reports {
        by_key
            .entry((r.model_tag.clone(), r.language.clone()))
            .or_default()
            .entry(r.policy)
            .or_insert((path, r));
    }
    let mut provenance = BTreeMap::new();
    for ((model, language), variants) in &by_key {
        for policy in [PunctuationPolicy::Keep, PunctuationPolicy::Strip] {
            let (path, _) = variants.get(&policy).ok_or_else(|| ReportError::MissingVariant {
                model: model.clone(),
                language: language.clone(),
                policy,
            })?;
            provenance.insert(format!("{model}/{language}/{policy}"), (*path).clone());
        }
    }
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        let values = |policy| -> Vec<f64> { by_key.values().map(|v| metric.of(v[&policy].1)).collect() };
        let keep = values(PunctuationPolicy::Keep);
        let strip = values(PunctuationPolicy::Strip);
        let delta = strip.iter().zip(&keep).map(|(s, k)| s - k).collect();
        rows.push(ComparisonRow {
            metric,
            variant: "keep".into(),
            values: keep,
        });
        rows.push(ComparisonRow {
            metric,
            variant: "strip".into(),
            values: strip,
        });
        rows.push(ComparisonRow {
            metric,
            variant: "delta".into(),
            values: delta,
        });
    }
    Ok(ComparisonTable {
        columns: by_key.into_keys().collect(),
        rows,
        provenance,
    })
}
