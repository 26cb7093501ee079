use std::path::Path;

use deid::cli::run_command;
use deid::corpus_io::{
    corpus_statistics, generate_synthetic_corpus, read_split_manifest, render_statistics, write_corpus_dir,
    SyntheticConfig,
};
use deid::evaluation::parse_delimited_report;
use deid::tokenizer_align::read_token_file;
use deid::{AnnotatedDocument, PhiClass, PhiSpan};

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("deid").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["no-such-command"]), 2);
    assert_eq!(run(&["gen", "--docs", "3"]), 2, "gen without --out");
    assert_eq!(run(&["gen", "--out", s(dir.path()), "--mix", "weird"]), 2);
    let missing = dir.path().join("missing.tsv");
    assert_eq!(run(&["stats", "--tokens", s(&missing)]), 1);
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \"not a number\"\n").unwrap();
    assert_eq!(run(&["--config", s(&bad), "gen", "--out", s(dir.path())]), 2);
}

#[test]
fn align_reports_dropped_documents() {
    let dir = tempfile::tempdir().unwrap();
    let text = "Seen by Dr. Johnson today";
    let good = AnnotatedDocument {
        doc_id: "good".into(),
        text: text.into(),
        spans: vec![PhiSpan {
            id: "T0".into(),
            start: 12,
            end: 19,
            phi_type: PhiClass::Doctor,
            surface: "Johnson".into(),
        }],
    };
    // "John" stops inside the token "Johnson".
    let bad = AnnotatedDocument {
        doc_id: "bad".into(),
        spans: vec![PhiSpan {
            end: 16,
            surface: "John".into(),
            ..good.spans[0].clone()
        }],
        ..good.clone()
    };
    let corpus = dir.path().join("corpus");
    write_corpus_dir(&corpus, &[good, bad]).unwrap();
    let out = dir.path().join("aligned");
    assert_eq!(run(&["align", "--corpus", s(&corpus), "--out", s(&out)]), 0);
    let report = std::fs::read_to_string(out.join("alignment.tsv")).unwrap();
    assert!(report.contains("bad\tdropped\tT0"), "{report}");
    assert!(report.contains("# aligned=1 dropped=1 total=2"), "{report}");
    let seqs = read_token_file(&std::fs::read_to_string(out.join("tokens.tsv")).unwrap()).unwrap();
    assert_eq!(seqs.len(), 1);
    assert_eq!(seqs[0].doc_id, "good");
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let (corpus, aligned, split, model, sweep_dir) = (p("corpus"), p("aligned"), p("split.tsv"), p("model"), p("sweep"));
    let tokens = aligned.join("tokens.tsv");

    assert_eq!(run(&["--seed", "5", "gen", "--docs", "40", "--out", s(&corpus)]), 0);
    assert_eq!(run(&["align", "--corpus", s(&corpus), "--out", s(&aligned)]), 0);
    assert_eq!(run(&["--seed", "5", "split", "--tokens", s(&tokens), "--out", s(&split)]), 0);

    // Stats delegates to the library.
    let stats_out = p("stats.txt");
    assert_eq!(run(&["stats", "--tokens", s(&tokens), "--out", s(&stats_out)]), 0);
    let seqs = read_token_file(&std::fs::read_to_string(&tokens).unwrap()).unwrap();
    let want = render_statistics(&[("all", &corpus_statistics(&seqs))]);
    assert_eq!(std::fs::read_to_string(&stats_out).unwrap(), want);
    let manifest = read_split_manifest(&std::fs::read_to_string(&split).unwrap()).unwrap();
    assert_eq!(manifest.train.len() + manifest.validation.len() + manifest.test.len(), seqs.len());

    let data = ["--tokens", s(&tokens), "--split", s(&split), "--vocab-size", "600"];
    let mut train = vec!["train", "--epochs", "2", "--out", s(&model)];
    train.extend(data);
    assert_eq!(run(&train), 0);
    for f in ["model.ckpt", "vocab.txt", "model.json", "run.json"] {
        assert!(model.join(f).exists(), "{f}");
    }

    let report_path = p("report.tsv");
    let eval = [
        "eval", "--tokens", s(&tokens), "--split", s(&split), "--model-dir", s(&model), "--format", "delimited",
        "--out", s(&report_path),
    ];
    assert_eq!(run(&eval), 0);
    let report = parse_delimited_report(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.split, "test");
    let test_tokens: usize = seqs
        .iter()
        .filter(|q| manifest.test.contains(&q.doc_id))
        .map(|q| q.len())
        .sum();
    assert_eq!(report.total as usize, test_tokens);
    let mut strict = eval.to_vec();
    strict.push("--entities");
    assert_eq!(run(&strict), 0);
    let strict = parse_delimited_report(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(strict.correct, report.correct);

    let redacted = p("redacted");
    let deid = ["deid", "--corpus", s(&corpus), "--model-dir", s(&model), "--mode", "redact", "--out", s(&redacted)];
    assert_eq!(run(&deid), 0);
    assert_eq!(std::fs::read_dir(&redacted).unwrap().count(), 2 * 40);

    // A second sweep over the same grid trains nothing new.
    let mut sweep = vec!["sweep", "--grid-epochs", "1", "--grid-lr", "0.1,0.3", "--grid-decay", "0", "--out", s(&sweep_dir)];
    sweep.extend(data);
    assert_eq!(run(&sweep), 0);
    let ledger = || std::fs::read_to_string(sweep_dir.join("runs.jsonl")).unwrap().lines().count();
    assert_eq!(ledger(), 2);
    assert_eq!(run(&sweep), 0);
    assert_eq!(ledger(), 2);
    assert!(sweep_dir.join("model.ckpt").exists());
}

#[test]
fn synthetic_generation_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    assert_eq!(run(&["--seed", "9", "gen", "--docs", "3", "--out", s(&out)]), 0);
    let direct = dir.path().join("b");
    write_corpus_dir(&direct, &generate_synthetic_corpus(&SyntheticConfig::full_mix(3, 9)).unwrap()).unwrap();
    for doc in generate_synthetic_corpus(&SyntheticConfig::full_mix(3, 9)).unwrap() {
        let name = std::fs::read_dir(&direct)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .find(|n| n.to_string_lossy().contains(&doc.doc_id))
            .unwrap();
        assert_eq!(std::fs::read(out.join(&name)).unwrap(), std::fs::read(direct.join(&name)).unwrap());
    }
}
