use std::collections::BTreeSet;
use std::hint::black_box;
use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, Criterion};
use polyprobe_core::builder::{compute_stats, levenshtein};
use polyprobe_core::corpus::template_id;
use polyprobe_core::scorer::ReferenceModel;
use polyprobe_core::{LanguagePack, Relation, ReviewStatus, ScoreRequest, Scorer, Template};

fn model() -> ReferenceModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/reference_model.json");
    ReferenceModel::load(&path).unwrap()
}

fn pack() -> LanguagePack {
    let mut pack = LanguagePack::new("de");
    for r in 0..38 {
        let id = format!("P{r}");
        let templates = (0..12)
            .map(|i| {
                let text = format!("[X] ist {} mit [Y] verbunden.", "sehr ".repeat(i));
                Template {
                    id: template_id("de", &id, &text),
                    relation_id: id.clone(),
                    language: "de".into(),
                    text,
                    sources: BTreeSet::from(["google".to_string()]),
                    review_status: ReviewStatus::Unreviewed,
                    extra: Default::default(),
                }
            })
            .collect();
        pack.relations.insert(id.clone(), Relation::new(id, templates, Vec::new()));
    }
    pack
}

fn bench(c: &mut Criterion) {
    let m = model();
    let candidates = ["Ulm", "London", "Warsaw", "Washington D.C.", "Paris", "Rome", "the a the a"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let request = ScoreRequest::new("Albert Einstein was born in [Y]", candidates);
    c.bench_function("reference_score_7_candidates", |b| {
        b.iter(|| m.score_candidates(black_box(&request)))
    });
    c.bench_function("levenshtein_sentence", |b| {
        b.iter(|| levenshtein(black_box("[X] wurde in [Y] geboren."), black_box("[X] ist in [Y] zur Welt gekommen.")))
    });
    let p = pack();
    c.bench_function("compute_stats_38x12", |b| b.iter(|| compute_stats(black_box(&p))));
}

criterion_group!(benches, bench);
criterion_main!(benches);
