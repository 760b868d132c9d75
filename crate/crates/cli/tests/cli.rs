mod common;

use std::fs;

use common::{fixtures, path, polyprobe, stderr, stdout, Workdir};

#[test]
fn full_pipeline_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    let build = w.ok("build", &[]);
    assert!(build.contains("included: de en"), "{build}");
    assert!(build.contains("excluded: xx yy"), "{build}");
    w.ok("probe", &[]);
    let eval = w.ok("evaluate", &[]);
    assert!(eval.contains("toy-mlm en strip"), "{eval}");
    w.ok("probe", &["--punctuation", "keep"]);
    w.ok("evaluate", &["--punctuation", "keep"]);
    w.ok("report", &[]);
    w.ok("report", &["--metric", "accuracy", "--punctuation", "keep"]);
    w.ok("stats", &[]);
    for name in [
        "metrics_toy-mlm_en_strip.csv",
        "metrics_toy-mlm_de_keep.json",
        "comparison.csv",
        "consistency_by_language.svg",
        "consistency_by_language.csv",
        "accuracy_by_language.svg",
        "stats_en.csv",
        "stats_de.csv",
    ] {
        assert!(w.out.join(name).is_file(), "missing {name}");
    }
    let csv = fs::read_to_string(w.out.join("metrics_toy-mlm_en_strip.csv")).unwrap();
    let p19 = csv.lines().find(|l| l.starts_with("en,P19,")).unwrap();
    assert!(p19.contains("0.6666666666666666,0.8333333333333334,0.6666666666666666"), "{csv}");
    let svg = fs::read_to_string(w.out.join("consistency_by_language.svg")).unwrap();
    assert!(svg.contains("data-language=\"de\"") && svg.contains("data-language=\"en\""));
}

#[test]
fn resume_over_a_full_cache_reports_zero_remaining() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    w.ok("build", &[]);
    w.ok("probe", &["--lang", "en"]);
    let again = w.ok("probe", &["--lang", "en", "--resume"]);
    assert!(again.contains(" 0 scored, 0 skipped, 0 cells remaining"), "{again}");
}

#[test]
fn invalid_translation_file_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    copy_tree(&fixtures().join("raw"), &raw);
    let bad = raw.join("translations/de/P36.jsonl");
    let mut text = fs::read_to_string(&bad).unwrap();
    text.push_str("{\"pattern\": \"[X] und [Y]\", \n");
    fs::write(&bad, &text).unwrap();
    let w = Workdir::new(dir.path());
    let o = polyprobe(&[
        "build",
        "--config",
        path(&fixtures().join("run_config.json")),
        "--input",
        path(&raw),
        "--data",
        path(&w.data),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let line = text.lines().count();
    assert!(stderr(&o).contains(&format!("P36.jsonl:{line}")), "{}", stderr(&o));
}

#[test]
fn unreachable_sidecar_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    w.ok("build", &[]);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("remote:http://127.0.0.1:{port}");
    let o = w.run("probe", &["--scorer", &url, "--retries", "0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn evaluating_against_a_changed_pack_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    w.ok("build", &[]);
    w.ok("probe", &["--lang", "en"]);
    let tuples = w.data.join("tuples/en/P36.jsonl");
    let text = fs::read_to_string(&tuples).unwrap();
    fs::write(&tuples, text.replace("Paris", "Lyon")).unwrap();
    let o = w.run("evaluate", &["--lang", "en"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("pack_mismatch"), "{}", stderr(&o));
}

#[test]
fn resuming_against_a_changed_pack_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    w.ok("build", &[]);
    w.ok("probe", &["--lang", "en", "--limit", "3"]);
    let tuples = w.data.join("tuples/en/P36.jsonl");
    let text = fs::read_to_string(&tuples).unwrap();
    fs::write(&tuples, text.replace("Paris", "Lyon")).unwrap();
    let o = w.run("probe", &["--lang", "en", "--resume"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn missing_scorer_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    w.ok("build", &[]);
    let o = polyprobe(&["probe", "--data", path(&w.data), "--cache-dir", path(&w.cache)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn report_without_both_policies_still_writes_charts() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    w.ok("build", &[]);
    w.ok("probe", &[]);
    w.ok("evaluate", &[]);
    let o = w.run("report", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("comparison.csv not written"), "{}", stderr(&o));
    assert!(w.out.join("consistency_by_language.svg").is_file());
    assert!(!w.out.join("comparison.csv").exists());
}

#[test]
fn stats_prints_summary_table() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workdir::new(dir.path());
    w.ok("build", &[]);
    let out = stdout(&w.run("stats", &[]));
    assert!(out.contains("Average string distance"), "{out}");
    assert!(out.contains("Min. patterns in a relation"), "{out}");
}

fn copy_tree(from: &std::path::Path, to: &std::path::Path) {
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.path().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            fs::create_dir_all(to).unwrap();
            fs::copy(entry.path(), dest).unwrap();
        }
    }
}
