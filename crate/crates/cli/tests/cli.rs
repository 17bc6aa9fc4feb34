use std::process::{Command, Output};

fn peel_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peel-lab"))
        .args(args)
        .env_remove("PEEL_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn thresholds_line() {
    let o = peel_lab(&["thresholds"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "thresholds = 5/9 1/3 3/4");
    let o = peel_lab(&["thresholds", "--model", "2p:4"]);
    assert_eq!(stdout(&o).trim(), "thresholds = 5197/8085 11/21 21/32");
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(peel_lab(&["thresholds", "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(peel_lab(&["thresholds", "--model", "/nonexistent/weights"]).status.code(), Some(2));
    assert_eq!(peel_lab(&["thresholds", "--model", "2p:1"]).status.code(), Some(2));
    assert_eq!(peel_lab(&["simulate", "ball", "--mode", "sideways"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_peel-lab"))
        .args(["thresholds"])
        .env("PEEL_LAB_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn weights_file_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quad.txt");
    std::fs::write(&path, "# quadrangulations\n2 1/12\n").unwrap();
    let o = peel_lab(&["thresholds", "--model", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "thresholds = 5/9 1/3 3/4");
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 3\nl = 600\nformat = json\n").unwrap();
    let o = peel_lab(&["weights", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["config"]["seed"], 3);
    assert_eq!(doc["config"]["l"], 600);
    assert_eq!(doc["summary"]["c"], "8");
    assert!(doc["version"].is_string());
    let o = peel_lab(&["weights", "--config", cfg.to_str().unwrap(), "--seed", "5"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["config"]["seed"], 5);
}

#[test]
fn simulation_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let o = peel_lab(&[
            "simulate", "halfplane", "--replicas", "40", "--seed", seed, "--L", "1000", "--out", p.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(p).unwrap()
    };
    let a = run("a.csv", "7");
    let b = run("b.csv", "7");
    let c = run("c.csv", "8");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# peel-lab "));
    assert!(text.contains("# seed = 7"));
    assert!(text.contains("run,radius,exposure,gulp_left,gulp_right"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 41);
}

#[test]
fn ball_export_is_valid_json() {
    let o = peel_lab(&["simulate", "ball", "--radius", "3", "--replicas", "2", "--L", "1000"]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["balls"].as_array().unwrap().len(), 2);
    assert!(doc["balls"][0]["map"]["edges"].as_array().unwrap().len() > 1);
    let o = peel_lab(&["simulate", "ball", "--mode", "finite:2", "--set", "l=1000"]);
    assert!(o.status.success());
}

#[test]
fn zero_tolerance_fails_and_names_the_residual() {
    let o = peel_lab(&["verify", "--criteria", "3", "--tolerance", "0", "--set", "l=1000"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("verification failed: criterion 3"), "{err}");
}

#[test]
fn verify_exact_identities() {
    let o = peel_lab(&["verify", "--criteria", "1,3,4,5", "--set", "l=2000"]);
    let out = stdout(&o);
    assert!(o.status.success(), "{out}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.lines().any(|l| l == "thresholds = 5/9 1/3 3/4"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn report_as_json() {
    let o = peel_lab(&["report", "--criteria", "4", "--format", "json", "--set", "l=1000"]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r["criterion"] == 4 && r["pass"] == true));
    assert_eq!(doc["summary"]["thresholds"], "5/9 1/3 3/4");
}

#[test]
fn percolate_small() {
    let o = peel_lab(&[
        "percolate", "--replicas", "12", "--radius", "2,3,4", "--kind", "bond", "--grid", "0:1:5", "--L", "1000", "--out",
        "json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["rows"].as_array().unwrap().len(), 5 * 3);
    assert_eq!(doc["summary"]["exact"], "5/9 1/3 3/4");
}

#[test]
fn walks_check_and_series() {
    let o = peel_lab(&["walks", "--check", "--p-max", "20", "--L", "1000"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("pass,true"));
    let o = peel_lab(&["walks", "--check", "--L", "1000", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = peel_lab(&["series", "--simple", "--terms", "3", "--L", "1000"]);
    let text = stdout(&o);
    assert!(text.contains("l,w_scaled,ln_w,ratio,hat_exact"));
    assert!(text.lines().any(|l| l.starts_with("3,") && l.contains(",16/27,")));
}

#[test]
fn thresholds_json_has_fractions() {
    let o = peel_lab(&["thresholds", "--exact", "--out", "json"]);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["summary"]["site"], "5/9");
    assert_eq!(doc["summary"]["bond"], "1/3");
    assert_eq!(doc["summary"]["face"], "3/4");
}
