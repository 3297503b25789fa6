use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lqgame::config::GameConfig;

fn lqgame(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqgame")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("game.json"), GameConfig::reference_example().to_json().unwrap()).unwrap();
    dir
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn forward_writes_gains_and_reports_stability() {
    let ws = workspace();
    let o = lqgame(&["forward", "game.json", "--out", "fw"], ws.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("stable: false"));
    assert!(text.contains("terminal window t in [4.88, 5]"));
    let strategy = fs::read_to_string(ws.path().join("fw/strategy.csv")).unwrap();
    assert_eq!(strategy.lines().count(), 502);
    assert!(strategy.starts_with("t,K_1_1_1,K_1_1_2,K_1_2_1,K_1_2_2,K_2_1_1"));
    assert_eq!(fs::read_to_string(ws.path().join("fw/stability.csv")).unwrap().lines().count(), 502);
}

#[test]
fn forward_exit_codes() {
    let ws = workspace();
    let mut cfg = GameConfig::reference_example();
    cfg.players.as_mut().unwrap()[1].r[1] = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
    fs::write(ws.path().join("bad.json"), cfg.to_json().unwrap()).unwrap();
    let o = lqgame(&["forward", "bad.json"], ws.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("validate: "));
    assert!(stderr(&o).contains("R22 not positive definite"));

    let o = lqgame(&["forward", "missing.json"], ws.path());
    assert_eq!(o.status.code(), Some(5));

    fs::write(ws.path().join("broken.json"), "{ not json").unwrap();
    assert_eq!(lqgame(&["forward", "broken.json"], ws.path()).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let ws = workspace();
    for out in ["a", "b"] {
        let o = lqgame(&["simulate", "game.json", "--out", out, "--demos", "20", "--seed", "42"], ws.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = read_all(&ws.path().join("a"));
    assert_eq!(a.len(), 21);
    assert_eq!(a, read_all(&ws.path().join("b")));
    let demo = String::from_utf8(a[0].1.clone()).unwrap();
    assert_eq!(demo.lines().count(), 502);
    let manifest: serde_json::Value = serde_json::from_slice(&a[20].1).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);

    let o = lqgame(&["simulate", "game.json", "--demos", "0"], ws.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invert_ignores_ground_truth_fields() {
    let ws = workspace();
    assert!(lqgame(&["simulate", "game.json", "--out", "bundle"], ws.path()).status.success());

    let mut decoy = GameConfig::reference_example();
    for p in decoy.players.as_mut().unwrap() {
        p.q = vec![vec![123.0, 0.0], vec![0.0, 456.0]];
    }
    decoy.system.l = Some(vec![vec![9.0, 0.0], vec![0.0, 9.0]]);
    fs::write(ws.path().join("decoy.json"), decoy.to_json().unwrap()).unwrap();
    let system_only = r#"{ "system": { "A": [[1,-1],[1,0]], "B": [[[1,0],[0,1]], [[1,0],[0,1]]] }, "x0": [2, -2] }"#;
    fs::write(ws.path().join("system.json"), system_only).unwrap();

    for (cfg, out) in [("decoy.json", "e1"), ("system.json", "e2")] {
        let o = lqgame(&["invert", "bundle", cfg, "--nodes", "500", "--out", out], ws.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("t_C: "));
    }
    let e1 = fs::read_to_string(ws.path().join("e1/estimate.json")).unwrap();
    assert_eq!(e1, fs::read_to_string(ws.path().join("e2/estimate.json")).unwrap());

    let est = GameConfig::from_json(&e1).unwrap();
    let l = est.noise::<f64>().unwrap().diag();
    assert!((l[0] - 0.1).abs() < 0.005 && (l[1] - 0.2).abs() < 0.01);
    let q2 = &est.players.as_ref().unwrap()[1].q;
    assert!((q2[1][1] - 10.0).abs() < 0.1);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ws.path().join("e1/report.json")).unwrap()).unwrap();
    assert_eq!(report["players"][0]["rank"], 11);
    assert!(report["t_C"].as_f64().unwrap() > 0.0);
    for f in ["excitation.csv", "singular_values_player1.csv", "singular_values_player2.csv"] {
        assert!(ws.path().join("e1").join(f).exists(), "{f}");
    }
}

#[test]
fn invert_exit_codes() {
    let ws = workspace();
    assert!(lqgame(&["simulate", "game.json", "--out", "bundle"], ws.path()).status.success());
    let o = lqgame(&["invert", "bundle", "game.json", "--nodes", "1"], ws.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("ambiguous identification"));

    assert!(lqgame(&["simulate", "game.json", "--out", "single", "--demos", "1"], ws.path()).status.success());
    let o = lqgame(&["invert", "single", "game.json"], ws.path());
    assert!(stderr(&o).contains("under-excited"));
    assert_eq!(o.status.code(), Some(4));

    assert_eq!(lqgame(&["invert", "nowhere", "game.json"], ws.path()).status.code(), Some(5));
}

#[test]
fn study_writes_tables_and_resumes() {
    let ws = workspace();
    let o = lqgame(&["study", "game.json", "--reps", "1", "--nodes", "20,100", "--out", "st"], ws.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs = fs::read_to_string(ws.path().join("st/study_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(runs.starts_with("K,rep,e_mu_x,e_mu_u,e_var_x,e_var_u,t_C,seed"));
    let avg = fs::read_to_string(ws.path().join("st/study_averages.csv")).unwrap();
    assert_eq!(avg.lines().count(), 3);
    assert!(ws.path().join("st/envelopes_K100.csv").exists());

    let o = lqgame(&["study", "game.json", "--reps", "2", "--nodes", "20,100", "--out", "st"], ws.path());
    assert!(stdout(&o).contains("resuming: 2 of 4"));
    let resumed = fs::read_to_string(ws.path().join("st/study_runs.csv")).unwrap();
    let lines: Vec<&str> = resumed.lines().collect();
    assert_eq!(lines.len(), 5);
    let old: Vec<&str> = runs.lines().collect();
    assert_eq!(lines[1], old[1]);
    assert_eq!(lines[3], old[2]);
}

#[test]
fn metrics_of_identical_bundles_are_zero() {
    let ws = workspace();
    assert!(lqgame(&["simulate", "game.json", "--out", "b", "--demos", "5"], ws.path()).status.success());
    let o = lqgame(&["metrics", "game.json", "b", "b"], ws.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.ends_with("0e0")));
}
