use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CURRICULUM: &str = r#"{"sections":[
  {"id":"s","title":"S","concepts":[
    {"id":"a","prerequisites":[],"problems":[
      {"id":"p1","difficulty":2,"prompt":"?","choices":["x","y"],"correct_choice":0},
      {"id":"p2","difficulty":4,"prompt":"?","choices":["x","y"],"correct_choice":1}
    ]},
    {"id":"b","prerequisites":["a"],"problems":[
      {"id":"p3","difficulty":3,"prompt":"?","choices":["x","y"],"correct_choice":0}
    ]}
  ]}
]}"#;

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bandit-tutor"));
    cmd.args(args).env_remove("BANDIT_TUTOR_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn text(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn validate_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, CURRICULUM).unwrap();
    let out = run(&["validate", "--curriculum", good.to_str().unwrap()], &[]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 concepts"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, CURRICULUM.replace(r#""prerequisites":[]"#, r#""prerequisites":["b"]"#)).unwrap();
    let out = run(&["validate", "--curriculum", bad.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let missing = dir.path().join("missing.json");
    let out = run(&["validate", "--curriculum", missing.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_outputs_and_replots() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = run(
        &[
            "simulate",
            "--curriculum",
            "synthetic:2x2x4",
            "--students",
            "6",
            "--seed",
            "3",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["curves.csv", "counts.csv", "mastery.svg", "curriculum.json", "bkt_params.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let logs = fs::read_dir(out_dir.join("logs")).unwrap().count();
    assert_eq!(logs, 18);
    let curves = text(&out_dir.join("curves.csv"));
    assert!(curves.starts_with("group,question_index,mean_mastery,stderr"));
    for g in ["random", "agnostic", "full"] {
        assert!(curves.lines().any(|l| l.starts_with(&format!("{g},0,"))), "{g}");
    }

    let svg = dir.path().join("again.svg");
    let out = run(
        &["plot", "--in", out_dir.to_str().unwrap(), "--out", svg.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success());
    assert_eq!(text(&svg), text(&out_dir.join("mastery.svg")));
}

#[test]
fn seed_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let sim = |name: &str, seed: &str, env: &[(&str, &str)]| {
        let path = dir.path().join(name);
        let out = run(
            &[
                "simulate",
                "--curriculum",
                "synthetic:1x2x3",
                "--students",
                "4",
                "--groups",
                "agnostic",
                "--seed",
                seed,
                "--out",
                path.to_str().unwrap(),
            ],
            env,
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        text(&path.join("curves.csv"))
    };
    let flag = sim("flag", "11", &[]);
    let env = sim("env", "0", &[("BANDIT_TUTOR_SEED", "11")]);
    let other = sim("other", "12", &[]);
    assert_eq!(flag, env);
    assert_ne!(flag, other);

    let out = run(
        &["simulate", "--students", "1", "--out", dir.path().join("x").to_str().unwrap()],
        &[("BANDIT_TUTOR_SEED", "seven")],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn derive_difficulty_from_responses() {
    let dir = tempfile::tempdir().unwrap();
    let responses = dir.path().join("responses.csv");
    fs::write(
        &responses,
        "problem_id,correct\np1,1\np1,1\np2,0\np2,0\np2,1\np2,1\np3,0\n",
    )
    .unwrap();
    let map = dir.path().join("d.json");
    let out = run(
        &["derive-difficulty", "--responses", responses.to_str().unwrap(), "--out", map.to_str().unwrap()],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fitted: serde_json::Value = serde_json::from_str(&text(&map)).unwrap();
    assert_eq!(fitted["p1"], 1.0);
    assert_eq!(fitted["p2"], 3.0);
    assert_eq!(fitted["p3"], 5.0);

    let cur = dir.path().join("c.json");
    fs::write(&cur, CURRICULUM).unwrap();
    let updated = dir.path().join("c2.json");
    let out = run(
        &[
            "derive-difficulty",
            "--responses",
            responses.to_str().unwrap(),
            "--curriculum",
            cur.to_str().unwrap(),
            "--out",
            updated.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c: serde_json::Value = serde_json::from_str(&text(&updated)).unwrap();
    assert_eq!(c["sections"][0]["concepts"][0]["problems"][1]["difficulty"], 3.0);
    assert!(run(&["validate", "--curriculum", updated.to_str().unwrap()], &[]).status.success());
}
