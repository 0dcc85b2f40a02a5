use std::fs;
use std::path::Path;
use std::process::Command;

use xlalign::cli::{run, CorrelationFile, ScoreFile, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_VALIDATION};

fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut full = vec!["xlalign"];
    full.extend_from_slice(args);
    let code = run(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SIGMAS: [(&str, f64); 10] = [
    ("deu_Latn", 0.1),
    ("fra_Latn", 0.2),
    ("spa_Latn", 0.25),
    ("ita_Latn", 0.3),
    ("por_Latn", 0.35),
    ("rus_Cyrl", 0.4),
    ("zho_Hans", 0.5),
    ("jpn_Jpan", 0.6),
    ("swh_Latn", 0.8),
    ("yor_Latn", 1.0),
];

fn synth_ten(dir: &Path) {
    let mut args = vec!["synth".to_owned(), "--out-dir".into(), p(dir).into(), "--seed".into(), "11".into()];
    for (l, s) in SIGMAS {
        args.push("--aligned".into());
        args.push(format!("{l}={s}"));
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let (code, _, err) = cli(&refs);
    assert_eq!(code, EXIT_OK, "{err}");
}

fn score(dump_dir: &Path, out: &Path) -> (i32, String) {
    let (code, _, err) = cli(&["score", "--dump-dir", p(dump_dir), "--out", p(out)]);
    (code, err)
}

#[test]
fn synth_then_score_noise_free_language_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let dumps = tmp.path().join("dumps");
    let (code, out, err) = cli(&[
        "synth", "--out-dir", p(&dumps), "--n", "30", "--dim", "8", "--layers", "3", "--aligned", "deu_Latn=0",
        "--unaligned", "xho_Latn",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert_eq!(out.lines().count(), 3);
    let scores = tmp.path().join("scores.json");
    assert_eq!(score(&dumps, &scores).0, EXIT_OK);
    let file = ScoreFile::read(&scores).unwrap();
    let model = &file.models["synthetic-model"];
    let deu = &model.languages[&"deu_Latn".parse().unwrap()];
    assert_eq!(deu.per_layer_scores, vec![1.0; 3]);
    assert_eq!(deu.score, 1.0);
    let xho = &model.languages[&"xho_Latn".parse().unwrap()];
    assert!(xho.score < 0.5);
    assert!(file.diagnostics.is_empty());
}

#[test]
fn pivot_only_directory_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _, _) = cli(&["synth", "--out-dir", p(tmp.path()), "--n", "5", "--dim", "4", "--layers", "1"]);
    assert_eq!(code, EXIT_OK);
    let (code, err) = score(tmp.path(), &tmp.path().join("s.json"));
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("no comparison languages"), "{err}");
}

#[test]
fn missing_pivot_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    cli(&["synth", "--out-dir", p(tmp.path()), "--n", "5", "--dim", "4", "--layers", "1", "--pivot", "deu_Latn"]);
    let (code, err) = score(tmp.path(), &tmp.path().join("s.json"));
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("missing pivot"), "{err}");
}

#[test]
fn corrupt_dumps_give_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    let dumps = tmp.path().join("d");
    cli(&[
        "synth", "--out-dir", p(&dumps), "--n", "10", "--dim", "4", "--layers", "2", "--aligned", "deu_Latn=0.1",
        "--aligned", "fra_Latn=0.1", "--aligned", "ita_Latn=0.1",
    ]);
    let bin = dumps.join("fra_Latn.bin");
    let bytes = fs::read(&bin).unwrap();
    fs::write(&bin, &bytes[..bytes.len() - 5]).unwrap();
    fs::write(dumps.join("broken.json"), "{ not json").unwrap();

    let scores = tmp.path().join("s.json");
    let (code, err) = score(&dumps, &scores);
    assert_eq!(code, EXIT_PARTIAL);
    assert!(err.contains("truncated payload"), "{err}");
    assert!(err.contains("broken.json"), "{err}");
    let file = ScoreFile::read(&scores).unwrap();
    assert_eq!(file.diagnostics.len(), 2);
    let langs: Vec<String> = file.models["synthetic-model"].languages.keys().map(|l| l.to_string()).collect();
    assert_eq!(langs, ["deu_Latn", "ita_Latn"]);
}

#[test]
fn pooling_mismatch_is_diagnosed() {
    let tmp = tempfile::tempdir().unwrap();
    cli(&[
        "synth", "--out-dir", p(tmp.path()), "--n", "5", "--dim", "4", "--layers", "1", "--aligned", "deu_Latn=0",
        "--pooling", "last-token",
    ]);
    let (code, _, err) = cli(&["score", "--dump-dir", p(tmp.path()), "--out", p(&tmp.path().join("s.json"))]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("pooled"), "{err}");
}

#[test]
fn ideal_line_fixture_is_recovered_by_correlate() {
    let tmp = tempfile::tempdir().unwrap();
    let dumps = tmp.path().join("d");
    synth_ten(&dumps);
    let scores = tmp.path().join("scores.json");
    assert_eq!(score(&dumps, &scores).0, EXIT_OK);
    let file = ScoreFile::read(&scores).unwrap();
    let mut tasks = String::from("eng_Latn\t1\n");
    for (l, prof) in &file.models["synthetic-model"].languages {
        tasks.push_str(&format!("{l}\t{}\n", 0.25 + 0.75 * prof.score));
    }
    let task_path = tmp.path().join("tasks.tsv");
    fs::write(&task_path, tasks).unwrap();

    let out = tmp.path().join("corr.json");
    let (code, stdout, err) =
        cli(&["correlate", "--scores", p(&scores), "--tasks", p(&task_path), "--out", p(&out)]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(stdout.starts_with("r = "));
    let c: CorrelationFile = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(c.correlation.sample_size, 10);
    assert!(c.correlation.r > 0.999999, "{}", c.correlation.r);
    assert!((c.fit.slope - 0.75).abs() < 1e-9, "{}", c.fit.slope);
    assert!((c.fit.intercept - 0.25).abs() < 1e-9, "{}", c.fit.intercept);
    assert!((c.ideal.slope - 0.75).abs() < 1e-15 && (c.ideal.intercept - 0.25).abs() < 1e-15);
    assert_eq!(c.english_score, 1.0);

    // with the pivot kept as a point at (1, 1) the line is unchanged
    let (code, _, _) = cli(&[
        "correlate", "--scores", p(&scores), "--tasks", p(&task_path), "--include-pivot", "--out", p(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let c: CorrelationFile = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(c.correlation.sample_size, 11);
    assert!((c.fit.slope - 0.75).abs() < 1e-9);

    // estimate from the fitted line reproduces the task accuracies
    let est = tmp.path().join("est.csv");
    let (code, _, err) = cli(&[
        "estimate", "--scores", p(&scores), "--english-score", "1", "--fit", p(&out), "--out", p(&est),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    let text = fs::read_to_string(&est).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "language,score,adjusted,predicted,clamped");
    assert_eq!(rows.len(), 11);
    for row in &rows[1..] {
        let f: Vec<&str> = row.split(',').collect();
        let score: f64 = f[1].parse().unwrap();
        let predicted: f64 = f[3].parse().unwrap();
        assert!((predicted - (0.25 + 0.75 * score)).abs() < 1e-9, "{row}");
        assert_eq!(f[4], "false");
    }
}

#[test]
fn correlate_needs_three_shared_languages() {
    let tmp = tempfile::tempdir().unwrap();
    let dumps = tmp.path().join("d");
    synth_ten(&dumps);
    let scores = tmp.path().join("scores.json");
    score(&dumps, &scores);
    let task_path = tmp.path().join("tasks.tsv");
    fs::write(&task_path, "eng_Latn\t0.9\ndeu_Latn\t0.8\nfra_Latn\t0.7\nzul_Latn\t0.3\n").unwrap();
    let (code, _, err) = cli(&["correlate", "--scores", p(&scores), "--tasks", p(&task_path), "--out", p(&tmp.path().join("c.json"))]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("2 languages in common, need at least 3"), "{err}");

    fs::write(&task_path, "deu_Latn\t0.8\nfra_Latn\t0.7\nita_Latn\t0.6\n").unwrap();
    let (code, _, err) = cli(&["correlate", "--scores", p(&scores), "--tasks", p(&task_path), "--out", p(&tmp.path().join("c.json"))]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("English"), "{err}");
}

#[test]
fn estimate_defaults_to_ideal_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dumps = tmp.path().join("d");
    cli(&["synth", "--out-dir", p(&dumps), "--n", "8", "--dim", "4", "--layers", "1", "--aligned", "deu_Latn=0"]);
    let scores = tmp.path().join("s.json");
    score(&dumps, &scores);
    let est = tmp.path().join("e.csv");
    let (code, out, _) = cli(&[
        "estimate", "--scores", p(&scores), "--english-score", "0.8", "--choices", "2", "--out", p(&est),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("1 estimate(s), 0 clamped"));
    let text = fs::read_to_string(&est).unwrap();
    assert!(text.contains("# line: ideal:2"));
    // score 1, adjusted 0.8, ideal line 0.5 + 0.5 * 0.8
    assert!(text.contains("deu_Latn,1,0.8,0.9,false"), "{text}");

    let (code, _, _) = cli(&["estimate", "--scores", p(&scores), "--out", p(&est)]);
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn report_writes_tables_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dumps = tmp.path().join("d");
    synth_ten(&dumps);
    let scores = tmp.path().join("scores.json");
    score(&dumps, &scores);
    let run_report = |dir: &Path| {
        let (code, out, err) = cli(&[
            "report", "--scores", p(&scores), "--english-score", "0.9", "--out-dir", p(dir), "--export-layer", "2",
            "--dump-dir", p(&dumps),
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert_eq!(out.lines().count(), 5);
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_report(&a);
    run_report(&b);
    for name in ["leaderboard.csv", "leaderboard.json", "curves.csv", "coverage.csv", "embeddings.csv"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert_eq!(x, y, "{name} differs between runs");
    }
    let curves = fs::read_to_string(a.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().filter(|l| !l.starts_with('#')).count(), 1 + 10 * 4);
    let coverage = fs::read_to_string(a.join("coverage.csv")).unwrap();
    assert!(coverage.contains("# english_score: 0.9"));
    let embeddings = fs::read_to_string(a.join("embeddings.csv")).unwrap();
    assert_eq!(embeddings.lines().filter(|l| !l.starts_with('#')).count(), 1 + 11 * 100);
}

#[test]
fn report_without_english_score_skips_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let dumps = tmp.path().join("d");
    cli(&["synth", "--out-dir", p(&dumps), "--n", "8", "--dim", "4", "--layers", "1", "--aligned", "deu_Latn=0"]);
    let scores = tmp.path().join("s.json");
    score(&dumps, &scores);
    let out = tmp.path().join("r");
    let (code, _, _) = cli(&["report", "--scores", p(&scores), "--out-dir", p(&out)]);
    assert_eq!(code, EXIT_OK);
    assert!(out.join("leaderboard.csv").exists());
    assert!(!out.join("coverage.csv").exists());
}

#[test]
fn report_on_empty_score_file_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let scores = tmp.path().join("s.json");
    fs::write(&scores, r#"{"header":{"tool":"xlalign","version":"0","command":"score","config":{}},"models":{},"diagnostics":[]}"#)
        .unwrap();
    let (code, _, err) = cli(&["report", "--scores", p(&scores), "--out-dir", p(&tmp.path().join("r"))]);
    assert_eq!(code, EXIT_VALIDATION);
    assert!(err.contains("no languages"), "{err}");
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let (code, _, _) = cli(&[
            "synth", "--out-dir", p(dir), "--n", "20", "--dim", "8", "--layers", "2", "--seed", "5", "--aligned",
            "deu_Latn=0.3", "--unaligned", "xho_Latn",
        ]);
        assert_eq!(code, EXIT_OK);
    }
    for name in ["eng_Latn", "deu_Latn", "xho_Latn"] {
        for ext in ["json", "bin"] {
            let f = format!("{name}.{ext}");
            assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
        }
    }
}

#[test]
fn synth_rejects_bad_arguments() {
    let tmp = tempfile::tempdir().unwrap();
    let d = p(tmp.path());
    assert_eq!(cli(&["synth", "--out-dir", d, "--aligned", "deu_Latn=-1"]).0, EXIT_USAGE);
    assert_eq!(cli(&["synth", "--out-dir", d, "--aligned", "german=0.1"]).0, EXIT_USAGE);
    assert_eq!(cli(&["synth", "--out-dir", d, "--n", "0"]).0, EXIT_USAGE);
    assert_eq!(cli(&["synth", "--out-dir", d, "--unaligned", "eng_Latn"]).0, EXIT_USAGE);
}

#[test]
fn binary_reads_dump_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    cli(&["synth", "--out-dir", p(tmp.path()), "--n", "6", "--dim", "4", "--layers", "1", "--aligned", "deu_Latn=0"]);
    let scores = tmp.path().join("s.json");
    let out = Command::new(env!("CARGO_BIN_EXE_xlalign"))
        .args(["score", "--out", p(&scores)])
        .env("XLALIGN_DUMP_DIR", tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ScoreFile::read(&scores).is_ok());

    let out = Command::new(env!("CARGO_BIN_EXE_xlalign")).args(["robustness", "1", "1"]).output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "1");
    let out = Command::new(env!("CARGO_BIN_EXE_xlalign")).args(["bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
