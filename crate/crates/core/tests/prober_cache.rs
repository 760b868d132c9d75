mod common;

use std::fs;

use common::fixtures;
use polyprobe_core::builder::load_built_pack;
use polyprobe_core::metrics::evaluate;
use polyprobe_core::prober::{load_prediction_set, run_probe, skip_ledger_path, ProbeError, ProbeOptions};
use polyprobe_core::scorer::{CountingScorer, ReferenceModel, ScoreError};
use polyprobe_core::{LanguagePack, PunctuationPolicy, ScoreRequest, ScoreResponse, Scorer};
use proptest::prelude::*;

fn model() -> ReferenceModel {
    ReferenceModel::load(&fixtures().join("reference_model.json")).unwrap()
}

/// English P19 only: two templates, three tuples.
fn small_pack() -> LanguagePack {
    let mut pack = load_built_pack(&fixtures().join("golden_packs"), "en").unwrap();
    pack.relations.retain(|id, _| id == "P19");
    pack
}

fn full_pack() -> LanguagePack {
    load_built_pack(&fixtures().join("golden_packs"), "en").unwrap()
}

#[test]
fn every_cell_gets_one_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.jsonl");
    let scorer = CountingScorer::new(model());
    let (set, summary) = run_probe(&small_pack(), &scorer, &cache, &ProbeOptions::default()).unwrap();
    assert_eq!(set.predictions.len(), 6);
    assert_eq!(scorer.calls(), 6);
    assert_eq!(summary.remaining, 0);
    assert_eq!(fs::read_to_string(&cache).unwrap().lines().count(), 7);
    assert_eq!(load_prediction_set(&cache).unwrap(), set);
}

#[test]
fn resume_over_a_complete_cache_scores_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.jsonl");
    let pack = small_pack();
    let (first, _) = run_probe(&pack, &model(), &cache, &ProbeOptions::default()).unwrap();
    let before = fs::read(&cache).unwrap();
    let scorer = CountingScorer::new(model());
    let resume = ProbeOptions {
        resume: true,
        ..Default::default()
    };
    let (second, summary) = run_probe(&pack, &scorer, &cache, &resume).unwrap();
    assert_eq!(scorer.calls(), 0);
    assert_eq!(summary.cached, 6);
    assert_eq!(second, first);
    assert_eq!(fs::read(&cache).unwrap(), before);
}

#[test]
fn interrupted_run_resumes_where_it_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let pack = small_pack();
    let (reference, _) = run_probe(&pack, &model(), &dir.path().join("full.jsonl"), &ProbeOptions::default()).unwrap();

    let cache = dir.path().join("c.jsonl");
    let partial = ProbeOptions {
        limit: Some(4),
        ..Default::default()
    };
    let (_, summary) = run_probe(&pack, &model(), &cache, &partial).unwrap();
    assert_eq!(summary.remaining, 2);

    let scorer = CountingScorer::new(model());
    let resume = ProbeOptions {
        resume: true,
        ..Default::default()
    };
    let (set, _) = run_probe(&pack, &scorer, &cache, &resume).unwrap();
    assert_eq!(scorer.calls(), 2);
    assert_eq!(set.predictions, reference.predictions);
    assert_eq!(evaluate(&set, &pack).unwrap(), evaluate(&reference, &pack).unwrap());
}

#[test]
fn torn_last_line_is_discarded_and_rescored() {
    let dir = tempfile::tempdir().unwrap();
    let pack = small_pack();
    let cache = dir.path().join("c.jsonl");
    let (reference, _) = run_probe(&pack, &model(), &cache, &ProbeOptions::default()).unwrap();
    let text = fs::read_to_string(&cache).unwrap();
    let keep: Vec<&str> = text.lines().take(5).collect();
    let torn = &text.lines().nth(5).unwrap()[..20];
    fs::write(&cache, format!("{}\n{torn}", keep.join("\n"))).unwrap();

    let scorer = CountingScorer::new(model());
    let resume = ProbeOptions {
        resume: true,
        ..Default::default()
    };
    let (set, summary) = run_probe(&pack, &scorer, &cache, &resume).unwrap();
    assert_eq!(summary.cached, 4);
    assert_eq!(scorer.calls(), 2);
    assert_eq!(set.predictions, reference.predictions);
    assert_eq!(load_prediction_set(&cache).unwrap().predictions, reference.predictions);
}

#[test]
fn resume_against_a_changed_pack_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.jsonl");
    run_probe(&small_pack(), &model(), &cache, &ProbeOptions::default()).unwrap();
    let resume = ProbeOptions {
        resume: true,
        ..Default::default()
    };
    let err = run_probe(&full_pack(), &model(), &cache, &resume).unwrap_err();
    assert!(matches!(err, ProbeError::StateMismatch(_)), "{err}");
    let keep = ProbeOptions {
        resume: true,
        policy: PunctuationPolicy::Keep,
        ..Default::default()
    };
    assert!(matches!(
        run_probe(&small_pack(), &model(), &cache, &keep),
        Err(ProbeError::StateMismatch(_))
    ));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let pack = full_pack();
    let mut sets = Vec::new();
    for jobs in [1, 8] {
        let options = ProbeOptions {
            jobs,
            ..Default::default()
        };
        let (set, _) = run_probe(&pack, &model(), &dir.path().join(format!("{jobs}.jsonl")), &options).unwrap();
        sets.push(set);
    }
    assert_eq!(sets[0], sets[1]);
    assert_eq!(
        evaluate(&sets[0], &pack).unwrap().to_csv(),
        evaluate(&sets[1], &pack).unwrap().to_csv()
    );
}

#[test]
fn predicted_score_is_the_maximum() {
    let dir = tempfile::tempdir().unwrap();
    let pack = full_pack();
    let m = model();
    let (set, _) = run_probe(&pack, &m, &dir.path().join("c.jsonl"), &ProbeOptions::default()).unwrap();
    for p in set.predictions.values() {
        let relation = &pack.relations[&p.relation_id];
        let template = relation.templates.iter().find(|t| t.id == p.template_id).unwrap();
        let tuple = relation.tuples.iter().find(|d| d.sub_uri == p.sub_uri).unwrap();
        let context = polyprobe_core::prober::render_query(
            &template.text,
            &tuple.sub_label,
            PunctuationPolicy::Strip,
            &pack.punctuation(),
        );
        let labels = relation.candidates.iter().map(|c| c.label.clone()).collect();
        let resp = m.score_candidates(&ScoreRequest::new(context, labels)).unwrap();
        let max = resp.scores.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(p.predicted_score, max);
        assert!(resp.scores[..p.predicted_index].iter().all(|s| *s < max));
    }
}

#[test]
fn fixture_relation_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let pack = small_pack();
    let (set, _) = run_probe(&pack, &model(), &dir.path().join("c.jsonl"), &ProbeOptions::default()).unwrap();
    let report = evaluate(&set, &pack).unwrap();
    let p19 = &report.per_relation[0];
    assert_eq!(p19.consistency, 2.0 / 3.0);
    assert_eq!(p19.accuracy, 5.0 / 6.0);
    assert_eq!(p19.consistency_accuracy, 2.0 / 3.0);
}

struct Failing;

impl Scorer for Failing {
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        if request.context.starts_with("Marie Curie") {
            Err(ScoreError::TokenizationFailure("unsupported subject".into()))
        } else {
            Ok(ScoreResponse {
                scores: vec![0.5; request.candidates.len()],
                token_counts: vec![1; request.candidates.len()],
                skipped: vec![],
            })
        }
    }

    fn model_tag(&self) -> String {
        "failing".into()
    }
}

#[test]
fn failed_cells_go_to_the_skip_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.jsonl");
    let (set, summary) = run_probe(&small_pack(), &Failing, &cache, &ProbeOptions::default()).unwrap();
    assert_eq!(summary.skipped, 2);
    assert_eq!(summary.remaining, 2);
    assert_eq!(set.predictions.len(), 4);
    assert!(set.skipped.iter().all(|s| s.sub_uri == "Q2" && s.reason.contains("unsupported subject")));
    assert_eq!(fs::read_to_string(skip_ledger_path(&cache)).unwrap().lines().count(), 2);
}

/// Reverses candidate order before delegating, then maps the scores back.
struct Reversed<S>(S);

impl<S: Scorer> Scorer for Reversed<S> {
    fn score_candidates(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScoreError> {
        let mut rev = request.clone();
        rev.candidates.reverse();
        let mut resp = self.0.score_candidates(&rev)?;
        resp.scores.reverse();
        resp.token_counts.reverse();
        let n = request.candidates.len();
        resp.skipped = resp.skipped.iter().map(|i| n - 1 - i).collect();
        resp.skipped.sort();
        Ok(resp)
    }

    fn model_tag(&self) -> String {
        self.0.model_tag()
    }
}

#[test]
fn scoring_is_order_equivariant_on_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let pack = full_pack();
    let (a, _) = run_probe(&pack, &model(), &dir.path().join("a.jsonl"), &ProbeOptions::default()).unwrap();
    let (b, _) = run_probe(&pack, &Reversed(model()), &dir.path().join("b.jsonl"), &ProbeOptions::default()).unwrap();
    assert_eq!(a.predictions, b.predictions);
}

proptest! {
    #[test]
    fn reference_scores_follow_candidates(
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        context in prop_oneof![
            Just("Albert Einstein was born in [Y]"),
            Just("United States has its capital in [Y]"),
            Just("unknown [Y] context"),
        ],
    ) {
        let labels = ["Ulm", "London", "Washington D.C.", "Rome", "the a the a", "Warsaw"];
        let m = model();
        let base = m
            .score_candidates(&ScoreRequest::new(context, labels.iter().map(|s| s.to_string()).collect()))
            .unwrap();
        let permuted = m
            .score_candidates(&ScoreRequest::new(context, perm.iter().map(|&i| labels[i].to_string()).collect()))
            .unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert_eq!(permuted.scores[j], base.scores[i]);
            prop_assert_eq!(permuted.token_counts[j], base.token_counts[i]);
            prop_assert_eq!(permuted.skipped.contains(&j), base.skipped.contains(&i));
        }
    }
}
