use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cgi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgi"))
        .args(args)
        .env_remove("ACTOR_ENDPOINT")
        .env_remove("CRITIC_ENDPOINT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, depth: &str, count: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    let o = cgi(&[
        "gen-tasks",
        "--depth",
        depth,
        "--count",
        count,
        "--seed",
        seed,
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn success_rate(report: &Value) -> f64 {
    report["aggregate"]["envs"]["craftsim"]["success_rate"]
        .as_f64()
        .unwrap()
}

#[test]
fn gen_tasks_depth_one_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.json", "1", "5", "1");
    let b = gen(dir.path(), "b.json", "1", "5", "1");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let tasks = json(&a)["tasks"].as_array().unwrap().clone();
    assert_eq!(tasks.len(), 5);
    for t in tasks {
        assert_eq!(t["gold_path"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn gen_tasks_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.json");
    assert_eq!(code(&cgi(&["gen-tasks", "--depth", "0", "--out", s(&out)])), 2);
    gen(dir.path(), "t.json", "1", "2", "0");
    assert_eq!(code(&cgi(&["gen-tasks", "--depth", "1", "--out", s(&out)])), 2);
    assert_eq!(
        code(&cgi(&["gen-tasks", "--depth", "1", "--out", s(&out), "--force"])),
        0
    );
    assert_eq!(code(&cgi(&["frobnicate"])), 2);
}

#[test]
fn run_perfect_actor_without_critic() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "2", "8", "3");
    let run = dir.path().join("run");
    let o = cgi(&[
        "run",
        "--tasks",
        s(&tasks),
        "--out",
        s(&run),
        "--critic",
        "off",
        "--fidelity",
        "1.0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(success_rate(&json(&run.join("report.json"))), 1.0);
    assert!(run.join("config.toml").is_file());
    assert!(run.join("figures").join("craftsim_series.csv").is_file());
}

#[test]
fn run_oracle_rescues_useless_actor_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "2", "20", "11");
    let run = dir.path().join("run");
    let args = [
        "run",
        "--tasks",
        s(&tasks),
        "--out",
        s(&run),
        "--critic",
        "oracle",
        "--fidelity",
        "0.0",
    ];
    assert_eq!(code(&cgi(&args)), 0);
    let first = fs::read(run.join("report.json")).unwrap();
    assert_eq!(success_rate(&json(&run.join("report.json"))), 1.0);

    assert_eq!(code(&cgi(&args)), 2, "existing output needs --force");
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&cgi(&forced)), 0);
    assert_eq!(fs::read(run.join("report.json")).unwrap(), first);
}

#[test]
fn run_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let run = dir.path().join("run");
    assert_eq!(code(&cgi(&["run", "--tasks", s(&missing), "--out", s(&run)])), 2);
    let tasks = gen(dir.path(), "t.json", "1", "2", "0");
    assert_eq!(
        code(&cgi(&[
            "run",
            "--tasks",
            s(&tasks),
            "--out",
            s(&run),
            "--candidates",
            "0"
        ])),
        2
    );
    let o = cgi(&["run", "--tasks", s(&tasks), "--out", s(&run), "--actor", "remote"]);
    assert_eq!(code(&o), 2, "remote actor without ACTOR_ENDPOINT");
    assert!(!run.exists());
}

#[test]
fn run_with_unreachable_backend_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "1", "2", "0");
    let run = dir.path().join("run");
    let o = cgi(&[
        "run",
        "--tasks",
        s(&tasks),
        "--out",
        s(&run),
        "--endpoint",
        "tcp://127.0.0.1:1",
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run.join("report.json").is_file());
}

#[test]
fn run_over_stdio_bridge_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "2", "4", "9");
    let local = dir.path().join("local");
    let bridged = dir.path().join("bridged");
    let base = [
        "--tasks",
        s(&tasks),
        "--critic",
        "oracle",
        "--fidelity",
        "0.4",
        "--seed",
        "5",
    ];
    let mut a = vec!["run", "--out", s(&local)];
    a.extend(base);
    assert_eq!(code(&cgi(&a)), 0);
    let endpoint = format!("spawn:{} bridge-serve --tasks {}", env!("CARGO_BIN_EXE_cgi"), s(&tasks));
    let mut b = vec!["run", "--out", s(&bridged), "--endpoint", &endpoint];
    b.extend(base);
    let o = cgi(&b);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let logs = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d.join("round_1").join("trajectories"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        v.sort();
        v.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(logs(&local), logs(&bridged));
}

#[test]
fn iterate_three_rounds_with_noop_hook() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "2", "10", "2");
    let run = dir.path().join("it");
    let o = cgi(&[
        "iterate",
        "--tasks",
        s(&tasks),
        "--out",
        s(&run),
        "--rounds",
        "3",
        "--beta",
        "1.0",
        "--fidelity",
        "0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("success_rate"));
    let mut counts = Vec::new();
    for k in 1..=3 {
        let m = json(&run.join(format!("round_{k}/datasets/manifest_round{k}.json")));
        counts.push(m["counts"].clone());
        for (name, entry) in m["files"].as_object().unwrap() {
            let text = fs::read_to_string(run.join(format!("round_{k}/datasets/{name}"))).unwrap();
            assert_eq!(
                entry["records"].as_u64().unwrap() as usize,
                text.lines().count() - 2,
                "{name}"
            );
        }
    }
    assert!(!run.join("round_4").exists());
    assert!(run.join("report.json").is_file());
    assert!(counts
        .iter()
        .all(|c| c["craftsim"]["expert"] == counts[0]["craftsim"]["expert"]));
}

#[test]
fn iterate_hook_failure_keeps_completed_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "1", "4", "2");
    let run = dir.path().join("it");
    let hook = "test {round} -lt 2 && echo http://127.0.0.1:1/v1";
    let o = cgi(&[
        "iterate",
        "--tasks",
        s(&tasks),
        "--out",
        s(&run),
        "--beta",
        "1.0",
        "--hook",
        hook,
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trainer hook failed in round 2"));
    assert!(run.join("round_1/datasets/manifest_round1.json").is_file());
    assert!(run.join("round_2/datasets/manifest_round2.json").is_file());
    assert!(!run.join("round_3").exists());
}

#[test]
fn iterate_snapshot_reflects_flags() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "1", "2", "2");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[run]\nrounds = 1\nseed = 4\n[dataset]\nbeta = 1.0\n").unwrap();
    let run = dir.path().join("it");
    let o = cgi(&[
        "iterate",
        "--config",
        s(&cfg),
        "--tasks",
        s(&tasks),
        "--out",
        s(&run),
        "--seed",
        "9",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let snap = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snap.contains("seed = 9"));
    assert!(snap.contains("rounds = 1"));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[run]\nrounds = 0\n").unwrap();
    let o = cgi(&[
        "iterate",
        "--config",
        s(&bad),
        "--tasks",
        s(&tasks),
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn collect_critiques_requires_expert_critic() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = gen(dir.path(), "t.json", "2", "5", "6");
    let run = dir.path().join("cc");
    assert_eq!(
        code(&cgi(&[
            "collect-critiques",
            "--tasks",
            s(&tasks),
            "--out",
            s(&run),
            "--critic",
            "off"
        ])),
        2
    );
    let o = cgi(&[
        "collect-critiques",
        "--tasks",
        s(&tasks),
        "--out",
        s(&run),
        "--critic",
        "oracle",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = json(&run.join("round_1/datasets/critique.json"));
    assert!(!records.as_array().unwrap().is_empty());
}

fn write_dataset(path: &Path, n: usize, tag: &str) {
    let records: Vec<Value> = (0..n)
        .map(|i| {
            serde_json::json!({
                "conversations": [
                    {"from": "human", "value": format!("{tag} question {i}")},
                    {"from": "gpt", "value": format!("{tag} answer {i}")}
                ],
                "system": ""
            })
        })
        .collect();
    fs::write(path, serde_json::to_string(&records).unwrap()).unwrap();
}

#[test]
fn mix_counts_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let agentic = dir.path().join("a.json");
    let general = dir.path().join("g.json");
    write_dataset(&agentic, 120, "agentic");
    write_dataset(&general, 50, "general");

    let out = dir.path().join("m");
    let o = cgi(&[
        "mix",
        "--beta",
        "0.8",
        "--agentic",
        s(&agentic),
        "--general",
        s(&general),
        "--n",
        "100",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["mix"]["agentic"], 80);
    assert_eq!(m["mix"]["general"], 20);
    assert_eq!(m["files"]["mixed.json"]["records"], 100);

    let out1 = dir.path().join("m1");
    assert_eq!(
        code(&cgi(&[
            "mix",
            "--beta",
            "1.0",
            "--agentic",
            s(&agentic),
            "--out",
            s(&out1)
        ])),
        0
    );
    assert_eq!(json(&out1.join("manifest.json"))["mix"]["general"], 0);

    let out2 = dir.path().join("m2");
    assert_eq!(
        code(&cgi(&[
            "mix",
            "--beta",
            "0.5",
            "--agentic",
            s(&agentic),
            "--out",
            s(&out2)
        ])),
        1
    );
    let missing = dir.path().join("nope.json");
    assert_eq!(
        code(&cgi(&[
            "mix",
            "--beta",
            "1.0",
            "--agentic",
            s(&missing),
            "--out",
            s(&out2)
        ])),
        2
    );
}

#[test]
fn eval_identity_additivity_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let t1 = gen(dir.path(), "t1.json", "2", "6", "1");
    let t2 = gen(dir.path(), "t2.json", "2", "4", "2");
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    assert_eq!(code(&cgi(&["run", "--tasks", s(&t1), "--out", s(&r1)])), 0);
    assert_eq!(code(&cgi(&["run", "--tasks", s(&t2), "--out", s(&r2)])), 0);

    let e1 = dir.path().join("e1");
    assert_eq!(code(&cgi(&["eval", s(&r1), "--out", s(&e1)])), 0);
    assert_eq!(
        fs::read(e1.join("report.json")).unwrap(),
        fs::read(r1.join("report.json")).unwrap()
    );

    let e2 = dir.path().join("e2");
    assert_eq!(code(&cgi(&["eval", s(&r1), s(&r2), "--out", s(&e2)])), 0);
    let both = json(&e2.join("report.json"));
    assert_eq!(both["aggregate"]["n_episodes"], 10);
    assert_eq!(both["runs"]["r1"]["n_episodes"], 6);
    assert!(e2.join("figures/craftsim_difficulty.csv").is_file());

    let traj = r2.join("round_1/trajectories");
    let victim = fs::read_dir(&traj).unwrap().next().unwrap().unwrap().path();
    let mut text = fs::read_to_string(&victim).unwrap();
    text.insert_str(text.find('\n').unwrap() + 1, "{not json\n");
    fs::write(&victim, text).unwrap();
    let e3 = dir.path().join("e3");
    assert_eq!(code(&cgi(&["eval", s(&r2), "--out", s(&e3)])), 0);
    let rep = json(&e3.join("report.json"));
    assert_eq!(rep["aggregate"]["corrupt"], 1);
    assert_eq!(rep["aggregate"]["n_episodes"], 3);

    let missing = dir.path().join("none");
    assert_eq!(
        code(&cgi(&["eval", s(&missing), "--out", s(&dir.path().join("e4"))])),
        2
    );
}

#[test]
fn bridge_serve_echo_over_stdio() {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_cgi"))
        .args(["bridge-serve", "--fixture", "echo"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    stdin
        .write_all(
            b"{\"type\":\"hello\",\"protocol_version\":1}\n{\"type\":\"reset\",\"task_id\":\"t\"}\n{\"type\":\"step\",\"task_id\":\"t\",\"action\":\"finish\"}\n",
        )
        .unwrap();
    drop(stdin);
    let out = child.wait_with_output().unwrap();
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["type"], "ack");
    assert_eq!(lines[1]["text"], "ready: t");
    assert_eq!(lines[2]["done"], true);
    assert_eq!(lines[2]["score"], 1.0);
}
