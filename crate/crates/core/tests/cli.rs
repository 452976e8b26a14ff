use std::path::{Path, PathBuf};

use grasp::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn fixture(name: &str) -> String {
    format!("{}/fixtures/worked_example/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn grasp(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("grasp").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

struct Dirs {
    _tmp: tempfile::TempDir,
    index: PathBuf,
    traces: PathBuf,
}

fn dirs() -> Dirs {
    let tmp = tempfile::tempdir().unwrap();
    Dirs { index: tmp.path().join("index"), traces: tmp.path().join("traces"), _tmp: tmp }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn index_worked(d: &Dirs, extra: &[&str]) -> (i32, String, String) {
    let (config, script) = (fixture("run_config.json"), fixture("extraction.txt"));
    let mut args = vec!["--config", &config, "--script", &script, "--index-dir", s(&d.index), "index"];
    args.extend_from_slice(extra);
    grasp(&args)
}

#[test]
fn worked_example_through_the_cli() {
    let d = dirs();
    let config = fixture("run_config.json");
    let (code, out, err) = index_worked(&d, &[]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("indexed 10 passages: 27 propositions, 31 entities"), "{out}");
    assert!(d.index.join("indexing_tokens.json").is_file());

    let (code, out, err) =
        grasp(&["--config", &config, "--index-dir", s(&d.index), "--traces-dir", s(&d.traces), "answer"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("worked-example\t15th century\n"), "{out}");
    assert!(out.contains("13 LLM calls"), "{out}");
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.traces.join("worked-example.json")).unwrap()).unwrap();
    assert_eq!(trace["final_answer"], "15th century");
    assert_eq!(trace["calls"].as_array().unwrap().len(), 13);

    let (code, out, err) = grasp(&["--config", &config, "--traces-dir", s(&d.traces), "eval", "qa"]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("em=1.0000 f1=1.0000"), "{out}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.traces.join("eval/qa_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["em"], 1.0);
    let csv = std::fs::read_to_string(d.traces.join("eval/qa_records.csv")).unwrap();
    assert!(csv.starts_with("question_id,em,f1,judge_lr1,judge_lr2,tokens,r,w\n"), "{csv}");

    let (code, out, _) = grasp(&["--config", &config, "--traces-dir", s(&d.traces), "eval", "plan"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("\n3\t1\t1.0000\t+0.0000"), "{out}");

    let (code, out, err) = grasp(&[
        "--config",
        &config,
        "--backend",
        "mock",
        "--index-dir",
        s(&d.index),
        "--traces-dir",
        s(&d.traces),
        "eval",
        "economy",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("C_w = "), "{out}");

    let out_dir = d.traces.join("retrieval");
    let (code, out, err) = grasp(&[
        "--config",
        &config,
        "--backend",
        "mock",
        "--index-dir",
        s(&d.index),
        "--out-dir",
        s(&out_dir),
        "eval",
        "retrieval",
        "--retrieval-mode",
        "simulated_agentic",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("simulated_agentic: mean recall@5 = 1.0000"), "{out}");
    assert!(out_dir.join("retrieval_simulated_agentic.json").is_file());
}

#[test]
fn existing_index_needs_force() {
    let d = dirs();
    assert_eq!(index_worked(&d, &[]).0, EXIT_OK);
    let (code, _, err) = index_worked(&d, &[]);
    assert_eq!(code, EXIT_DATA);
    assert!(err.contains("index exists"), "{err}");
    assert_eq!(index_worked(&d, &["--force"]).0, EXIT_OK);
}

#[test]
fn exit_codes() {
    let d = dirs();
    let (code, _, err) =
        grasp(&["--index-dir", s(&d.index), "--traces-dir", s(&d.traces), "answer", "--question", "Who?"]);
    assert_eq!(code, EXIT_DATA, "{err}");
    assert!(err.contains("missing manifest"), "{err}");

    let (code, _, _) = grasp(&["--index-dir", s(&d.index), "--traces-dir", s(&d.traces), "answer", "--question", "  "]);
    assert_eq!(code, EXIT_USAGE);
    assert_eq!(grasp(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(grasp(&["index", "--weighting", "loud"]).0, EXIT_USAGE);
    assert_eq!(grasp(&["--m", "0", "index"]).0, EXIT_USAGE);
    assert_eq!(grasp(&["index"]).0, EXIT_USAGE);
    let (code, out, _) = grasp(&["--help"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("eval"), "{out}");
}

#[test]
fn resolved_config_is_printed() {
    let d = dirs();
    let (_, out, _) = index_worked(&d, &["--tau", "0.8"]);
    assert!(out.starts_with("resolved config:\n"), "{out}");
    assert!(out.contains("\"tau\": 0.8"), "{out}");
}

#[test]
fn mock_runs_are_byte_reproducible() {
    let corpus = fixture("corpus.jsonl");
    let run_once = || {
        let d = dirs();
        let common =
            ["--backend", "mock", "--corpus", &corpus, "--index-dir", s(&d.index), "--traces-dir", s(&d.traces)];
        let mut args = common.to_vec();
        args.push("index");
        assert_eq!(grasp(&args).0, EXIT_OK);
        let mut args = common.to_vec();
        args.extend(["answer", "--question", "Where did Martin of Aragon die?", "--question-id", "m1"]);
        let (code, out, err) = grasp(&args);
        assert_eq!(code, EXIT_OK, "{err}");
        let files: Vec<Vec<u8>> = ["manifest.json", "propositions.jsonl", "entities.jsonl", "bm25.json"]
            .iter()
            .map(|f| std::fs::read(d.index.join(f)).unwrap())
            .chain([std::fs::read(d.traces.join("m1.json")).unwrap()])
            .collect();
        (out, files)
    };
    let (a, b) = (run_once(), run_once());
    assert_eq!(a.1, b.1);
    let strip = |o: &str| o.lines().filter(|l| !l.contains("_dir")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&a.0), strip(&b.0));
}
