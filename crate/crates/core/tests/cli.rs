use std::path::Path;
use std::process::{Command, Output};

fn treeid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeid")).args(args).env_remove("TREEID_THREADS").output().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn build_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let (x, tree) = (dir.path().join("x.semb"), dir.path().join("t.json"));
    assert!(treeid(&["gen-synth", "--n-items", "300", "--dim", "4", "--out", &s(&x)]).status.success());
    let out = treeid(&["build-tree", "--embeddings", &s(&x), "--k", "4", "--out", &s(&tree)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = treeid(&["verify", "--tree", &s(&tree)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: 300 items, k=4"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(treeid(&["build-tree", "--embeddings", "x", "--k", "1"]).status.code(), Some(1));
    assert_eq!(treeid(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(treeid(&["build-tree", "--embeddings", "x", "--k", "8", "--threshold", "3"]).status.code(), Some(1));
    assert_eq!(treeid(&["build-tree", "--embeddings", "x", "--method", "fast"]).status.code(), Some(1));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_treeid"))
        .args(["verify", "--tree", "t.json"])
        .env("TREEID_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(1));
    assert_eq!(treeid(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.semb");
    std::fs::write(&bad, b"NOPE").unwrap();
    let out = treeid(&["build-tree", "--embeddings", &s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let tree = dir.path().join("t.json");
    std::fs::write(
        &tree,
        r#"{"format":"treeid-v1","k":2,"depth":2,"n_items":3,"pad_token":2,"paths":[[0,0],[0,1],[1,2]]}"#,
    )
    .unwrap();
    assert_eq!(treeid(&["verify", "--tree", &s(&tree)]).status.code(), Some(2));
    assert_eq!(treeid(&["verify", "--tree", &s(&dir.path().join("missing.json"))]).status.code(), Some(2));
}

#[test]
fn eval_uses_default_cutoffs() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, truth, out) = (dir.path().join("r.csv"), dir.path().join("t.csv"), dir.path().join("e.csv"));
    std::fs::write(&runs, "user,rank,item,score\na,1,5,0.1\na,2,7,0.0\n").unwrap();
    std::fs::write(&truth, "user,item\na,7\n").unwrap();
    let o = treeid(&["eval", "--runs", &s(&runs), "--truth", &s(&truth), "--out", &s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        csv,
        "metric,cutoff,value\nrecall,20,1\nrecall,50,1\nhit,20,1\nhit,50,1\nndcg,20,0.63093\nndcg,50,0.63093\n"
    );
}

#[test]
fn eval_reports_bad_truth_line() {
    let dir = tempfile::tempdir().unwrap();
    let (runs, truth) = (dir.path().join("r.csv"), dir.path().join("t.csv"));
    std::fs::write(&runs, "user,rank,item\n").unwrap();
    std::fs::write(&truth, "user,item\nu1,x\n").unwrap();
    let o = treeid(&["eval", "--runs", &s(&runs), "--truth", &s(&truth)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn bench_scaling_writes_rows() {
    let o = treeid(&[
        "bench", "scaling", "--sizes", "500,1000", "--methods", "greedy,hybrid", "--dim", "4", "--warmup", "0",
        "--repeats", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,n_items,dim,k,seed,build_seconds,total_sse");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("greedy,500,4,8,0,"));
}
