use std::fs;
use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"
seed = 11

[synth]
n_users = 800
n_artists = 300
n_playlists = 300
n_share_events = 3000

[embedding]
dim = 16
epochs = 2

[audit]
events = 200

[model]
folds = 3

[model.hyperparams]
n_estimators = 20
max_depth = 12
min_samples_leaf = 10
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tastegraph"));
    c.env("TASTEGRAPH_LOG", "warn");
    c
}

fn run(args: &[&str]) -> i32 {
    bin().args(args).status().expect("binary runs").code().expect("exit code")
}

fn outputs(dir: &Path, command: &str) -> serde_json::Value {
    let text = fs::read_to_string(dir.join("manifests").join(format!("{command}.json"))).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["outputs"].clone()
}

#[test]
fn full_run_emits_every_artifact_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let code = run(&["all", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
    }
    for f in [
        "fig2a", "fig2b", "fig3", "fig3_ks", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "table2",
    ] {
        let p = a.join("figures").join(format!("{f}.csv"));
        assert!(fs::metadata(&p).map(|m| m.len() > 0).unwrap_or(false), "{f}.csv missing");
    }
    for cmd in ["generate", "ingest", "embed", "features", "analyze", "train", "isolate", "report"] {
        let (oa, ob) = (outputs(&a, cmd), outputs(&b, cmd));
        assert!(!oa.as_object().unwrap().is_empty(), "{cmd} has no outputs");
        assert_eq!(oa, ob, "{cmd} outputs differ between runs");
    }
    let table = fs::read_to_string(a.join("figures/table2.csv")).unwrap();
    assert!(table.starts_with("feature_set,roc_auc,roc_auc_se,precision"));
    assert_eq!(table.lines().count(), 9);
}

#[test]
fn seed_override_changes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run(&["generate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]), 0);
    assert_eq!(
        run(&["generate", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "12"]),
        0
    );
    assert_ne!(outputs(&a, "generate"), outputs(&b, "generate"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[model]\nfolds = 1\n").unwrap();
    assert_eq!(run(&["train", "--config", bad.to_str().unwrap()]), 2);
    fs::write(&bad, "no_such_key = true\n").unwrap();
    assert_eq!(run(&["train", "--config", bad.to_str().unwrap()]), 2);
    assert_eq!(run(&["train", "--config", "/nonexistent/run.toml"]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn missing_upstream_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    assert_eq!(run(&["train", "--out", out.to_str().unwrap()]), 3);
}

#[test]
fn changed_upstream_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = tmp.path().join("r");
    let o = out.to_str().unwrap();
    assert_eq!(run(&["generate", "--config", cfg.to_str().unwrap(), "--out", o]), 0);
    assert_eq!(run(&["ingest", "--config", cfg.to_str().unwrap(), "--out", o, "--seed", "99"]), 2);
}

#[test]
fn config_command_echoes_defaults() {
    let o = bin().args(["config", "--seed", "5"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed = 5"));
    assert!(text.contains("[model.hyperparams]"));
}
