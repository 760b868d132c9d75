use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use polyprobe_core::{BuildConfig, PunctuationPolicy};
use serde::Deserialize;

use crate::Args;

/// `--config` file contents. Every field is optional; command-line flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input_dir: Option<PathBuf>,
    pub data_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub scorer: Option<String>,
    pub build: Option<BuildConfig>,
    pub punctuation: Option<PunctuationPolicy>,
    pub jobs: Option<usize>,
    pub languages: Option<Vec<String>>,
    pub model_tag: Option<String>,
    pub batch_size: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub retries: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    Reference(PathBuf),
    Remote(String),
}

impl std::str::FromStr for ScorerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(path) = s.strip_prefix("reference:") {
            Ok(ScorerSpec::Reference(PathBuf::from(path)))
        } else if let Some(url) = s.strip_prefix("remote:") {
            Ok(ScorerSpec::Remote(url.to_string()))
        } else {
            Err(format!("scorer must be reference:PATH or remote:URL, got {s:?}"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input_dir: PathBuf,
    pub data_root: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub scorer: Option<ScorerSpec>,
    pub build: BuildConfig,
    pub punctuation: PunctuationPolicy,
    pub jobs: usize,
    pub languages: Option<Vec<String>>,
    pub model_tag: Option<String>,
    pub resume: bool,
    pub limit: Option<usize>,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retries: u32,
}

impl RunConfig {
    pub fn resolve(args: &Args) -> anyhow::Result<Self> {
        let file: FileConfig = match &args.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let base = args.config.as_deref().and_then(Path::parent).unwrap_or(Path::new(""));
        let rebase = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };

        let scorer = match (&args.scorer, &file.scorer) {
            (Some(s), _) => Some(s.clone()),
            (None, Some(s)) => Some(match s.parse().map_err(anyhow::Error::msg)? {
                ScorerSpec::Reference(p) => ScorerSpec::Reference(rebase(p)),
                remote => remote,
            }),
            (None, None) => None,
        };
        let languages = if args.lang.is_empty() {
            file.languages
        } else {
            Some(args.lang.clone())
        };
        let jobs = args.jobs.or(file.jobs).unwrap_or(1);
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        let build = file.build.unwrap_or_default();
        build.validate()?;
        Ok(RunConfig {
            input_dir: args.input.clone().or(file.input_dir.map(rebase)).unwrap_or_else(|| "raw".into()),
            data_root: args.data.clone().or(file.data_root.map(rebase)).unwrap_or_else(|| "data".into()),
            cache_dir: args.cache_dir.clone().or(file.cache_dir.map(rebase)).unwrap_or_else(|| "cache".into()),
            output_dir: args.out.clone().or(file.output_dir.map(rebase)).unwrap_or_else(|| "out".into()),
            scorer,
            build,
            punctuation: args.punctuation.or(file.punctuation).unwrap_or_default(),
            jobs,
            languages,
            model_tag: args.model_tag.clone().or(file.model_tag),
            resume: args.resume,
            limit: args.limit,
            batch_size: args.batch_size.or(file.batch_size).unwrap_or(256),
            max_in_flight: file.max_in_flight.unwrap_or(jobs.max(1)),
            retries: args.retries.or(file.retries).unwrap_or(4),
        })
    }

    pub fn wants(&self, language: &str) -> bool {
        self.languages.as_ref().is_none_or(|l| l.iter().any(|x| x == language))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scorer_spec_parsing() {
        assert_eq!(
            "reference:models/toy.json".parse::<ScorerSpec>(),
            Ok(ScorerSpec::Reference("models/toy.json".into()))
        );
        assert_eq!(
            "remote:http://localhost:8000".parse::<ScorerSpec>(),
            Ok(ScorerSpec::Remote("http://localhost:8000".into()))
        );
        assert!("bert".parse::<ScorerSpec>().is_err());
    }
}
