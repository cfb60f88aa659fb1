use std::path::Path;
use std::process::{Command, Output};

fn remqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remqa")).args(args).output().expect("binary runs")
}

fn gen(dir: &Path, seed: &str) -> Output {
    let out = dir.to_str().unwrap();
    remqa(&["gen-dataset", "--seed", seed, "--scale", "3", "--configs", "2", "--episodes-per-scene", "8", "--out", out])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(gen(a.path(), "5").status.success());
    assert!(gen(b.path(), "5").status.success());
    assert!(gen(c.path(), "6").status.success());
    let read = |d: &Path| std::fs::read(d.join("dataset.jsonl")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn gen_scenes_writes_configs_and_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let o = remqa(&["gen-scenes", "--scale", "2", "--configs", "2", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(summary["scenes"], 2);
    assert_eq!(summary["scene_files"], 4);
    let scene = dir.path().join("scenes/s000-kitchen");
    for f in ["config_0.json", "config_1.json", "graph_0.json", "graph_1.json"] {
        assert!(scene.join(f).is_file(), "{f}");
    }
}

#[test]
fn run_eval_and_replay_agree() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "1").status.success());
    let dataset = dir.path().join("dataset.jsonl");
    let results = dir.path().join("results.jsonl");
    let run = remqa(&["run-agent", "--dataset", dataset.to_str().unwrap(), "--out", results.to_str().unwrap(), "--json"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let metrics: serde_json::Value = serde_json::from_str(stdout(&run).trim()).unwrap();
    assert_eq!(metrics["overall"]["s_qa"], 1.0);

    let eval = remqa(&["eval", "--results", results.to_str().unwrap(), "--json"]);
    assert!(eval.status.success());
    assert_eq!(stdout(&eval), stdout(&run));

    let text = std::fs::read_to_string(&results).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.first().unwrap()["record"], "header");
    assert_eq!(lines.last().unwrap()["record"], "aggregate");
    let id = lines[1]["episode_id"].as_str().unwrap();

    let replay = remqa(&["replay", "--results", results.to_str().unwrap(), "--episode", id]);
    assert!(replay.status.success(), "{}", String::from_utf8_lossy(&replay.stderr));
    let shown = stdout(&replay);
    assert!(shown.contains(id));
    assert!(shown.contains('S') && shown.contains('T'));
}

#[test]
fn split_filter_keeps_only_that_split() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "2").status.success());
    let dataset = dir.path().join("dataset.jsonl");
    let count = |split: &str| {
        let out = dir.path().join(format!("{split}.jsonl"));
        let o = remqa(&[
            "run-agent",
            "--dataset",
            dataset.to_str().unwrap(),
            "--split",
            split,
            "--out",
            out.to_str().unwrap(),
            "--json",
        ]);
        assert!(o.status.success());
        let m: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
        m["overall"]["n"].as_u64().unwrap()
    };
    let all = std::fs::read_to_string(&dataset).unwrap().lines().count() as u64 - 1;
    assert_eq!(count("train") + count("test"), all);
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = remqa(&["run-agent", "--dataset", "/nonexistent/dataset.jsonl", "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/dataset.jsonl"));
}

#[test]
fn unknown_replay_episode_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "1").status.success());
    let results = dir.path().join("results.jsonl");
    let dataset = dir.path().join("dataset.jsonl");
    assert!(remqa(&["run-agent", "--dataset", dataset.to_str().unwrap(), "--out", results.to_str().unwrap()]).status.success());
    let o = remqa(&["replay", "--results", results.to_str().unwrap(), "--episode", "no-such-episode"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-episode"));
}

#[test]
fn invalid_agent_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "1").status.success());
    let dataset = dir.path().join("dataset.jsonl");
    let o = remqa(&[
        "run-agent",
        "--dataset",
        dataset.to_str().unwrap(),
        "--label-flip",
        "1.5",
        "--out",
        dir.path().join("r.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn truncated_dataset_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "1").status.success());
    let dataset = dir.path().join("dataset.jsonl");
    let text = std::fs::read_to_string(&dataset).unwrap();
    std::fs::write(&dataset, &text[..text.len() / 2]).unwrap();
    let o = remqa(&["run-agent", "--dataset", dataset.to_str().unwrap(), "--out", dir.path().join("r.jsonl").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
