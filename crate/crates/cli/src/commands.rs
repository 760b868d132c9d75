use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use polyprobe_core::builder::{self, BuildError, BuildOptions};
use polyprobe_core::corpus::{self, write_atomic, CorpusError, LanguagePack};
use polyprobe_core::metrics::{self, MetricsError, MetricsReport};
use polyprobe_core::prober::{self, ProbeError, ProbeOptions};
use polyprobe_core::report::{self, Metric, ReportError};
use polyprobe_core::scorer::{ReferenceModel, RemoteConfig, RemoteScorer, RetryPolicy, ScoreError, Scorer};

use crate::config::{RunConfig, ScorerSpec};
use crate::{CliError, EXIT_INPUT, EXIT_INTERNAL, EXIT_SCORER, EXIT_STATE};

type CliResult<T = ()> = Result<T, CliError>;

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::Io { .. } | CorpusError::MalformedRecord { .. } | CorpusError::LanguageMissing(_) => EXIT_INPUT,
    }
}

fn score_code(e: &ScoreError) -> u8 {
    match e {
        ScoreError::Unavailable(_) | ScoreError::Protocol(_) => EXIT_SCORER,
        ScoreError::InvalidModel(_) | ScoreError::InvalidRequest(_) => EXIT_INPUT,
        ScoreError::EmptyInput | ScoreError::TokenizationFailure(_) => EXIT_SCORER,
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        let code = match &e {
            BuildError::Corpus(c) => corpus_code(c),
            _ => EXIT_INPUT,
        };
        CliError::new(code, e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::new(corpus_code(&e), e)
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::new(score_code(&e), e)
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        let code = match &e {
            ProbeError::StateMismatch(_) => EXIT_STATE,
            ProbeError::Score(s) => score_code(s),
            ProbeError::MalformedCache { .. } => EXIT_INPUT,
            ProbeError::Io { .. } => EXIT_INTERNAL,
            ProbeError::GoldMissing { .. } | ProbeError::NoCandidates(_) => EXIT_INTERNAL,
        };
        CliError::new(code, e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        let code = match &e {
            MetricsError::PackMismatch { .. } => EXIT_STATE,
            _ => EXIT_INPUT,
        };
        CliError::new(code, e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let code = match &e {
            ReportError::Io(c) => corpus_code(c),
            _ => EXIT_INPUT,
        };
        CliError::new(code, e)
    }
}

fn internal(e: impl Into<anyhow::Error>) -> CliError {
    CliError::new(EXIT_INTERNAL, e)
}

/// Only recorded when `SOURCE_DATE_EPOCH` is set, so repeated builds stay byte-identical.
fn build_timestamp() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}

pub fn build(cfg: &RunConfig) -> CliResult {
    let options = BuildOptions {
        languages: cfg.languages.clone(),
        created_unix: build_timestamp(),
    };
    let report = builder::build_all(&cfg.input_dir, &cfg.data_root, &cfg.build, &options)?;
    for lang in &report.languages {
        let d = &lang.decision;
        println!(
            "{}: {} (relations {}/{} = {:.3}, phrases {}/{} = {:.3}, {} drops, {} patch issues)",
            d.language,
            if d.retained { "included" } else { "excluded" },
            d.relations_covered,
            report.config.total_relations,
            d.relation_coverage,
            d.phrase_count,
            report.reference_phrase_count,
            d.phrase_coverage,
            lang.drops.len(),
            lang.patch_issues.len()
        );
    }
    println!("included: {}", report.included.join(" "));
    println!("excluded: {}", report.excluded.join(" "));
    Ok(())
}

fn languages(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let all = corpus::list_languages(&cfg.data_root)?;
    if all.is_empty() {
        return Err(CliError::new(
            EXIT_INPUT,
            anyhow!("no language packs under {}", cfg.data_root.display()),
        ));
    }
    Ok(all.into_iter().filter(|l| cfg.wants(l)).collect())
}

fn load_pack(cfg: &RunConfig, language: &str) -> CliResult<LanguagePack> {
    Ok(builder::load_built_pack(&cfg.data_root, language)?)
}

fn open_scorer(cfg: &RunConfig) -> CliResult<Box<dyn Scorer>> {
    match &cfg.scorer {
        Some(ScorerSpec::Reference(path)) => Ok(Box::new(ReferenceModel::load(path)?)),
        Some(ScorerSpec::Remote(url)) => {
            let config = RemoteConfig {
                batch_size: cfg.batch_size,
                max_in_flight: cfg.max_in_flight,
                retry: RetryPolicy {
                    max_retries: cfg.retries,
                    ..RetryPolicy::default()
                },
                timeout: Duration::from_secs(300),
            };
            Ok(Box::new(RemoteScorer::connect(url, config)?))
        }
        None => Err(CliError::new(EXIT_INPUT, anyhow!("no scorer selected (use --scorer)"))),
    }
}

fn file_safe(tag: &str) -> String {
    tag.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '.' { c } else { '-' })
        .collect()
}

pub fn cache_path(cfg: &RunConfig, model_tag: &str, language: &str) -> PathBuf {
    cfg.cache_dir
        .join(format!("{}_{language}_{}.jsonl", file_safe(model_tag), cfg.punctuation))
}

struct Tagged<'a> {
    inner: &'a dyn Scorer,
    tag: String,
}

impl Scorer for Tagged<'_> {
    fn score_candidates(
        &self,
        request: &polyprobe_core::ScoreRequest,
    ) -> Result<polyprobe_core::ScoreResponse, ScoreError> {
        self.inner.score_candidates(request)
    }

    fn model_tag(&self) -> String {
        self.tag.clone()
    }
}

pub fn probe(cfg: &RunConfig) -> CliResult {
    let langs = languages(cfg)?;
    let base = open_scorer(cfg)?;
    let scorer = Tagged {
        tag: cfg.model_tag.clone().unwrap_or_else(|| base.model_tag()),
        inner: base.as_ref(),
    };
    fs::create_dir_all(&cfg.cache_dir)
        .with_context(|| format!("creating {}", cfg.cache_dir.display()))
        .map_err(internal)?;
    let options = ProbeOptions {
        policy: cfg.punctuation,
        jobs: cfg.jobs,
        resume: cfg.resume,
        limit: cfg.limit,
    };
    let mut skipped = 0;
    for lang in langs {
        let pack = load_pack(cfg, &lang)?;
        let path = cache_path(cfg, &scorer.tag, &lang);
        let (_, s) = prober::run_probe(&pack, &scorer, &path, &options)?;
        println!(
            "{lang}: {} cells, {} cached, {} scored, {} skipped, {} cells remaining -> {}",
            s.total_cells,
            s.cached,
            s.scored,
            s.skipped,
            s.remaining,
            path.display()
        );
        skipped += s.skipped;
    }
    if skipped > 0 {
        return Err(CliError::new(
            EXIT_SCORER,
            anyhow!("{skipped} cells failed to score; rerun with --resume to retry them"),
        ));
    }
    Ok(())
}

fn cache_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(|e| CliError::new(EXIT_INPUT, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::new(EXIT_INPUT, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".jsonl") && !name.ends_with(".skipped.jsonl") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn metrics_stem(report: &MetricsReport) -> String {
    format!(
        "metrics_{}_{}_{}",
        file_safe(&report.model_tag),
        report.language,
        report.policy
    )
}

pub fn evaluate(cfg: &RunConfig) -> CliResult {
    let mut evaluated = 0;
    for path in cache_files(&cfg.cache_dir)? {
        let set = prober::load_prediction_set(&path)?;
        let h = &set.header;
        if !cfg.wants(&h.language)
            || h.policy != cfg.punctuation
            || cfg.model_tag.as_ref().is_some_and(|m| m != &h.model_tag)
        {
            continue;
        }
        let pack = load_pack(cfg, &h.language)?;
        let report = metrics::evaluate(&set, &pack).map_err(|e| {
            let code = if matches!(e, MetricsError::PackMismatch { .. }) { EXIT_STATE } else { EXIT_INPUT };
            CliError::new(code, anyhow!("{}: {e}", path.display()))
        })?;
        let stem = metrics_stem(&report);
        write_atomic(&cfg.output_dir.join(format!("{stem}.json")), report.to_json().as_bytes())?;
        write_atomic(&cfg.output_dir.join(format!("{stem}.csv")), report.to_csv().as_bytes())?;
        let m = &report.macro_avg;
        println!(
            "{} {} {}: consistency {:.4}, accuracy {:.4}, consistency-accuracy {:.4} over {} relations ({} excluded)",
            report.model_tag,
            report.language,
            report.policy,
            m.consistency,
            m.accuracy,
            m.consistency_accuracy,
            report.per_relation.len(),
            report.excluded.len()
        );
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(CliError::new(
            EXIT_INPUT,
            anyhow!("no matching prediction caches in {}", cfg.cache_dir.display()),
        ));
    }
    Ok(())
}

fn load_reports(dir: &Path) -> CliResult<Vec<(PathBuf, MetricsReport)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))
        .map_err(|e| CliError::new(EXIT_INPUT, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("metrics_") && name.ends_with(".json")
        })
        .collect();
    paths.sort();
    for path in paths {
        let raw = fs::read_to_string(&path).map_err(|e| CliError::new(EXIT_INPUT, e))?;
        let report: MetricsReport = serde_json::from_str(&raw)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(|e| CliError::new(EXIT_INPUT, e))?;
        out.push((path, report));
    }
    Ok(out)
}

pub fn report(cfg: &RunConfig, metric: Metric) -> CliResult {
    let reports: Vec<(PathBuf, MetricsReport)> = load_reports(&cfg.output_dir)?
        .into_iter()
        .filter(|(_, r)| cfg.wants(&r.language))
        .collect();
    if reports.is_empty() {
        return Err(CliError::new(
            EXIT_INPUT,
            anyhow!("no metrics reports in {}", cfg.output_dir.display()),
        ));
    }
    match report::emit_comparison(&reports) {
        Ok(table) => {
            write_atomic(&cfg.output_dir.join("comparison.csv"), table.to_csv().as_bytes())?;
            println!("wrote comparison.csv ({} columns)", table.columns.len());
        }
        Err(e @ ReportError::MissingVariant { .. }) => {
            eprintln!("warning: comparison.csv not written: {e}");
        }
        Err(e) => return Err(e.into()),
    }

    let mut chosen: Vec<MetricsReport> = reports
        .into_iter()
        .map(|(_, r)| r)
        .filter(|r| r.policy == cfg.punctuation)
        .collect();
    if let Some(first) = &cfg.model_tag {
        chosen.sort_by_key(|r| r.model_tag != *first);
    }
    if chosen.is_empty() {
        return Err(CliError::new(
            EXIT_INPUT,
            anyhow!("no {} reports to chart", cfg.punctuation),
        ));
    }
    let svg = cfg.output_dir.join(format!("{}_by_language.svg", metric.name()));
    report::emit_language_chart(&chosen, metric, &svg)?;
    let mut csv = String::from("language,model,value\n");
    for lang in report::chart_language_order(&chosen, metric) {
        for r in chosen.iter().filter(|r| r.language == lang) {
            csv.push_str(&format!("{lang},{},{}\n", r.model_tag, metric.of(r)));
        }
    }
    write_atomic(
        &cfg.output_dir.join(format!("{}_by_language.csv", metric.name())),
        csv.as_bytes(),
    )?;
    println!("wrote {}", svg.display());
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> CliResult {
    let mut all = Vec::new();
    for lang in languages(cfg)? {
        let pack = load_pack(cfg, &lang)?;
        let s = builder::compute_stats(&pack);
        write_atomic(
            &cfg.output_dir.join(format!("stats_{lang}.csv")),
            report::stats_csv(std::slice::from_ref(&s)).as_bytes(),
        )?;
        all.push(s);
    }
    let table = report::emit_stats_table(&all)?;
    print!("{}", table.text);
    Ok(())
}
