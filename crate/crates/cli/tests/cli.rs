use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groundqa_cli::QueryResponse;

const KB: &str = r#"{"id":"f1","question":"What causes migraines?","answer":"Migraine triggers vary. Stress is a common trigger. Poor sleep can also trigger attacks. Some foods matter."}
{"id":"f2","question":"How is acne treated?","answer":"Creams help mild acne. Antibiotics are used for severe cases. See a dermatologist."}
{"id":"f3","question":"What are the symptoms of GERD?","answer":"Heartburn is the main symptom. Regurgitation is common too."}
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_groundqa")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// A temp dir holding `kb.json` and `params.txt`.
fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().to_path_buf();
    fs::write(p.join("kb.jsonl"), KB).unwrap();
    let o = run(&p, &["index", "--kb", "kb.jsonl", "--out", "kb.json"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("entries=3 "), "{}", stdout(&o));
    let o = run(&p, &["init-params", "--index", "kb.json", "--out", "params.txt", "--dim", "16", "--seed", "3"]);
    assert!(o.status.success(), "{o:?}");
    (dir, p)
}

#[test]
fn index_rejects_duplicates_with_the_id() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.jsonl"), "{\"id\":\"dup-7\",\"question\":\"a\",\"answer\":\"b\"}\n{\"id\":\"dup-7\",\"question\":\"c\",\"answer\":\"d\"}\n").unwrap();
    let o = run(dir.path(), &["index", "--kb", "d.jsonl", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dup-7"));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn exit_codes() {
    let (_d, p) = setup();
    assert_eq!(run(&p, &["index", "--kb", "missing.jsonl", "--out", "x.json"]).status.code(), Some(2));
    assert_eq!(run(&p, &["query", "--index", "kb.json", "--params", "nope.txt", "--question", "acne"]).status.code(), Some(2));
    assert_eq!(run(&p, &["query", "--index", "kb.json", "--params", "params.txt", "--question", "?!"]).status.code(), Some(1));
    assert_eq!(run(&p, &["query", "--index", "kb.json", "--params", "params.txt", "--question", "acne", "--k", "0"]).status.code(), Some(1));
    fs::write(p.join("bad.txt"), "not an encoder\n").unwrap();
    assert_eq!(run(&p, &["query", "--index", "kb.json", "--params", "bad.txt", "--question", "acne"]).status.code(), Some(1));
}

#[test]
fn verbatim_question_matches_with_score_one() {
    let (_d, p) = setup();
    let o = run(&p, &["query", "--index", "kb.json", "--params", "params.txt", "--question", "How is acne treated?", "--json"]);
    assert!(o.status.success());
    let resp: QueryResponse = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(resp.matched_faq.id, "f2");
    assert!((resp.matched_faq.score - 1.0).abs() < 1e-12);
    assert_eq!(resp.answers.len(), 3);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    for key in ["match", "select", "total"] {
        assert!(v["timing_ms"][key].is_f64());
    }
    for a in v["answers"].as_array().unwrap() {
        assert!(a["index"].is_u64() && a["text"].is_string() && a["score"].is_f64());
    }
}

#[test]
fn batch_preserves_order_and_count() {
    let (_d, p) = setup();
    let topics = ["migraine causes", "acne treatment", "gerd symptoms", "heartburn", "stress"];
    let lines: String = (0..100)
        .map(|i| {
            let field = if i % 2 == 0 { "question" } else { "summary" };
            format!("{{\"id\":\"q{i}\",\"{field}\":\"{}\"}}\n", topics[i % topics.len()])
        })
        .collect();
    fs::write(p.join("batch.jsonl"), lines).unwrap();
    let o = run(&p, &["query", "--index", "kb.json", "--params", "params.txt", "--query-file", "batch.jsonl", "--no-timing"]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let rows: Vec<QueryResponse> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 100);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.id.as_deref(), Some(format!("q{i}").as_str()));
    }
    fs::write(p.join("bad.jsonl"), "{\"question\":\"acne\"}\n{\"text\":\"acne\"}\n").unwrap();
    let o = run(&p, &["query", "--index", "kb.json", "--params", "params.txt", "--query-file", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2:"));
}

#[test]
fn zero_epoch_training_leaves_params_unchanged() {
    let (_d, p) = setup();
    fs::write(p.join("pairs.jsonl"), "{\"chq\":\"my skin\",\"ref_faq\":\"acne treatment\"}\n").unwrap();
    let o = run(&p, &["train", "--index", "kb.json", "--params", "params.txt", "--pairs", "pairs.jsonl", "--out", "p0.txt", "--epochs", "0"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(fs::read(p.join("params.txt")).unwrap(), fs::read(p.join("p0.txt")).unwrap());
    let o = run(&p, &["train", "--index", "kb.json", "--params", "params.txt", "--pairs", "pairs.jsonl", "--out", "p1.txt", "--epochs", "2", "--log", "loss.csv"]);
    assert!(o.status.success(), "{o:?}");
    let log = fs::read_to_string(p.join("loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,mean_total,mean_mat,mean_sim,mean_sel\n1,"));
}

#[test]
fn filter_with_zero_cutoff_keeps_everything() {
    let (_d, p) = setup();
    let pairs: String = (0..30).map(|i| format!("{{\"chq\":\"long question {i}\",\"ref_faq\":\"topic {i} acne\"}}\n")).collect();
    fs::write(p.join("pairs.jsonl"), pairs).unwrap();
    let o = run(&p, &["filter", "--pairs", "pairs.jsonl", "--index", "kb.json", "--cutoff", "0", "--out", "split.jsonl", "--histogram", "h.csv"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "input=30 survivors=30 train=24 dev=3 test=3 rejected=0");
    assert_eq!(fs::read_to_string(p.join("split.jsonl")).unwrap().lines().count(), 30);
    assert_eq!(fs::read_to_string(p.join("h.csv")).unwrap().lines().count(), 21);
    let o = run(&p, &["filter", "--pairs", "pairs.jsonl", "--index", "kb.json", "--cutoff", "-1", "--out", "split.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_rouge_command() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("pred.txt"), "what causes pain\nacne treatment\n").unwrap();
    fs::write(p.join("ref.txt"), "what causes migraine pain\nacne treatment\n").unwrap();
    let o = run(p, &["eval-rouge", "--pred", "pred.txt", "--ref", "ref.txt"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!((v["r1"].as_f64().unwrap() - (6.0 / 7.0 + 1.0) / 2.0).abs() < 1e-9);
    assert_eq!(v["n_examples"], 2);
    fs::write(p.join("short.txt"), "one line\n").unwrap();
    assert_eq!(run(p, &["eval-rouge", "--pred", "short.txt", "--ref", "ref.txt"]).status.code(), Some(1));
}

#[test]
fn gradcheck_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--trials", "100", "--tol", "1e-4"]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("trials=100 "));
    // an impossible tolerance must fail
    let o = run(dir.path(), &["gradcheck", "--trials", "5", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_precedence() {
    let (_d, p) = setup();
    fs::write(p.join("engine.conf"), "# defaults for this test\nindex = kb.json\nparams = params.txt\nn = 1\n").unwrap();
    let o = run(&p, &["query", "--config", "engine.conf", "--question", "acne treatment", "--json"]);
    assert!(o.status.success(), "{o:?}");
    let r: QueryResponse = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r.answers.len(), 1);
    let o = run(&p, &["query", "--config", "engine.conf", "--question", "acne treatment", "--json", "--n", "2"]);
    let r: QueryResponse = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r.answers.len(), 2);
    fs::write(p.join("broken.conf"), "n: 3\n").unwrap();
    let o = run(&p, &["query", "--config", "broken.conf", "--question", "acne"]);
    assert_eq!(o.status.code(), Some(1));
}
