//! End-to-end checks of the binary: spec'd example invocations, exit codes,
//! strict parsing, seed plumbing, and byte-level reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn cltlab(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cltlab"));
    cmd.args(args);
    cmd.env_remove("CLTLAB_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    cltlab(args).output().expect("binary runs")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn conditions_example_emits_csv_and_verdicts() {
    let out = run(&[
        "conditions",
        "--gallery",
        "two_state",
        "--a",
        "0.25",
        "--b",
        "0.25",
        "--f",
        "-1,1",
        "--max-n",
        "64",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let csv = stdout_of(&out);
    assert_eq!(csv.lines().count(), 65, "header plus 64 rows");
    assert!(csv.starts_with("n,beta,beta2s,rho,"));
    let verdicts = stderr_of(&out);
    assert!(
        verdicts.contains("beta_quantile_vanishes: PASS"),
        "{verdicts}"
    );
}

#[test]
fn flip_flop_conditions_flag_failure() {
    let out = run(&[
        "conditions",
        "--gallery",
        "flip_flop",
        "--max-n",
        "32",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    assert!(stderr_of(&out).contains("beta_quantile_vanishes: FAIL"));
}

#[test]
fn simulate_flip_flop_degenerate_branch() {
    let out = run(&[
        "simulate",
        "--gallery",
        "two_state",
        "--a",
        "1",
        "--b",
        "1",
        "--f",
        "-1,1",
        "--n",
        "1024",
        "--reps",
        "200",
        "--centering",
        "endpoint",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    assert!(text.contains("\"type\": \"max_abs\""));
    assert!(text.contains("\"value\": 0.0"));
}

#[test]
fn unknown_config_key_is_named_and_exits_2() {
    let dir = tempdir();
    let cfg = dir.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"gallery":{"gallery":"two_state","a":0.25,"b":0.25,"f":[-1,1]},"params":{"nn":3}}"#,
    )
    .unwrap();
    let out = run(&["moments", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("nn"));
}

#[test]
fn unknown_flag_exits_2() {
    let out = run(&["moments", "--gallery", "flip_flop", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_kernel_exits_2() {
    let dir = tempdir();
    let model = dir.join("model.json");
    std::fs::write(
        &model,
        r#"{"kernel":{"size":2,"rows":[[0.6,0.5],[0.5,0.5]]},"f":[-1,1]}"#,
    )
    .unwrap();
    let out = run(&["validate", "--model", model.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("row 0"));
}

#[test]
fn budget_exceeded_exits_3() {
    let out = run(&[
        "simulate",
        "--gallery",
        "iid_rademacher",
        "--statistic",
        "abs-mean",
        "--mode",
        "exact",
        "--n",
        "67108864",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("budget"));
}

#[test]
fn validate_reports_model_summary() {
    let out = run(&[
        "validate",
        "--gallery",
        "iid_rademacher",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(parsed["size"], 2);
}

#[test]
fn stationary_csv_shape() {
    let out = run(&[
        "stationary",
        "--gallery",
        "truncated_renewal",
        "--N",
        "8",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {\"residual\":"));
    assert_eq!(lines.next().unwrap(), "state,pi");
    assert_eq!(lines.count(), 9);
}

#[test]
fn bridge_marginal_endpoint_is_point_mass() {
    let out = run(&[
        "bridge",
        "--gallery",
        "iid_rademacher",
        "--n",
        "4",
        "--k",
        "0",
        "--x",
        "1",
        "--y",
        "0",
        "--format",
        "json",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(parsed["probs"][1], 1.0);
}

#[test]
fn env_seed_overrides_config_but_not_flag() {
    let args = [
        "simulate",
        "--gallery",
        "iid_rademacher",
        "--n",
        "64",
        "--reps",
        "200",
        "--centering",
        "none",
        "--format",
        "json",
    ];
    let with_env = cltlab(&args).env("CLTLAB_SEED", "777").output().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&stdout_of(&with_env)).unwrap();
    assert_eq!(parsed["master_seed"], 777);

    let mut flag_args = args.to_vec();
    flag_args.extend(["--seed", "42"]);
    let with_flag = cltlab(&flag_args)
        .env("CLTLAB_SEED", "777")
        .output()
        .unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&stdout_of(&with_flag)).unwrap();
    assert_eq!(parsed["master_seed"], 42);
}

#[test]
fn simulate_csv_round_trips_and_raw_dump() {
    let dir = tempdir();
    let raw = dir.join("raw.csv");
    let args = [
        "simulate",
        "--gallery",
        "two_state",
        "--a",
        "0.25",
        "--b",
        "0.25",
        "--f",
        "-1,1",
        "--n",
        "256",
        "--reps",
        "500",
        "--seed",
        "9",
        "--format",
        "csv",
        "--raw-out",
        raw.to_str().unwrap(),
    ];
    let first = run(&args);
    assert!(first.status.success());
    let second = run(&args);
    assert_eq!(
        stdout_of(&first),
        stdout_of(&second),
        "CSV must be byte-stable"
    );
    let raw_text = std::fs::read_to_string(&raw).unwrap();
    assert_eq!(raw_text.lines().count(), 501, "header plus one row per rep");
}

#[test]
fn report_config_echo_reproduces_bytes() {
    let dir = tempdir();
    let first = run(&[
        "report",
        "--gallery",
        "two_state",
        "--a",
        "0.25",
        "--b",
        "0.25",
        "--f",
        "-1,1",
        "--max-n",
        "16",
        "--n",
        "128",
        "--reps",
        "300",
        "--seed",
        "5",
    ]);
    assert!(first.status.success());
    let text = stdout_of(&first);
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    let cfg_path = dir.join("echo.json");
    std::fs::write(&cfg_path, serde_json::to_string(&parsed["config"]).unwrap()).unwrap();

    let second = run(&["report", "--config", cfg_path.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(
        text,
        stdout_of(&second),
        "echoed config must reproduce the dossier"
    );
}

#[test]
fn blocks_emits_per_block_rows() {
    let out = run(&[
        "blocks",
        "--gallery",
        "two_state",
        "--a",
        "0.25",
        "--b",
        "0.25",
        "--m",
        "2",
        "--u",
        "4",
        "--reps",
        "500",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = stdout_of(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# {\""));
    assert_eq!(lines.next().unwrap(), "k,y,d,z");
    assert_eq!(lines.count(), 4);
}

#[test]
fn model_file_is_never_mutated() {
    let dir = tempdir();
    let model = dir.join("model.json");
    let body = r#"{"kernel":{"size":2,"rows":[[0.75,0.25],[0.25,0.75]]},"f":[-1.0,1.0]}"#;
    std::fs::write(&model, body).unwrap();
    let out = run(&[
        "moments",
        "--model",
        model.to_str().unwrap(),
        "--max-n",
        "16",
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&model).unwrap(), body);
}

#[test]
fn nested_gallery_config_builds_mixture() {
    let dir = tempdir();
    let cfg = dir.join("mix.json");
    std::fs::write(
        &cfg,
        r#"{
            "gallery": {
                "gallery": "block_diagonal",
                "components": [
                    {"weight": 0.5, "spec": {"gallery": "two_state", "a": 0.25, "b": 0.25, "f": [-1, 1]}},
                    {"weight": 0.5, "spec": {"gallery": "two_state", "a": 0.5, "b": 0.5, "f": [-1, 1]}}
                ]
            },
            "params": {"n": 256, "reps": 300, "seed": 11, "centering": "endpoint"}
        }"#,
    )
    .unwrap();
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    assert_eq!(
        parsed["reference"]["components"].as_array().unwrap().len(),
        2
    );
}

fn tempdir() -> std::path::PathBuf {
    let base = std::env::temp_dir().join(format!(
        "cltlab-test-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    if !Path::exists(&base) {
        std::fs::create_dir_all(&base).unwrap();
    }
    base
}
