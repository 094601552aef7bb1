use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_activectx")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "seed = 9\n[env]\nskin = \"web\"\nnoise_per_step = 8\n\
                     [grpo]\niterations = 4\nbatch_size = 2\nlearning_rate = 0.3\n[eval]\nepisodes = 20\n";

#[test]
fn train_is_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = bin(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["params.json", "train.csv", "trajectories.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let header = std::fs::read_to_string(a.join("train.csv")).unwrap();
    assert!(header.starts_with("iteration,mean_reward,objective,mean_kl,grad_norm,tokens_active,tokens_full_hypothetical"));

    let log = a.join("trajectories.jsonl");
    let o = bin(&["replay", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("--- Turn 1 ---"));
    let mem = text.find("1. Memory Update").unwrap();
    let obs = text.find("2. Latest Observation").unwrap();
    let act = text.find("3. Action").unwrap();
    assert!(mem < obs && obs < act);
    // 4 iterations x 2 groups x 4 trajectories, one reward line each
    assert_eq!(text.matches("Reward: ").count(), 32);

    let o = bin(&["eval", "--config", &cfg, "--params", a.join("params.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["episodes"], 20);
}

#[test]
fn truncated_log_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    assert!(bin(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let text = std::fs::read_to_string(out.join("trajectories.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    // drop the final terminal record
    let cut = dir.path().join("cut.jsonl");
    std::fs::write(&cut, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let o = bin(&["replay", cut.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));
}

#[test]
fn eval_rejects_zero_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = bin(&["eval", "--config", &cfg, "--episodes", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("at least one episode"), "{}", stderr(&o));
}

#[test]
fn eval_rejects_params_version_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let p = dir.path().join("old.json");
    std::fs::write(&p, r#"{"format":"activectx-params","version":7,"params":{"basis":["bias"],"weights":[0.0]}}"#).unwrap();
    let o = bin(&["eval", "--config", &cfg, "--params", p.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("version 7"), "{}", stderr(&o));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[env]\nhorizon = 5\n");
    let o = bin(&["eval", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("skin"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "seed = 1\n[env]\nskin = \"web\"\n[curator]\ncapacity = 0\n");
    let o = bin(&["eval", "--config", &cfg]);
    assert!(stderr(&o).contains("curator.capacity"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "seed = 1\n[env]\nskin = \"web\"\nhorizon = 40\n");
    let o = bin(&["eval", "--config", &cfg]);
    assert!(stderr(&o).contains("env.horizon"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "seed = 1\nlearning_rat = 3\n[env]\nskin = \"web\"\n");
    let o = bin(&["eval", "--config", &cfg]);
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn compare_strategies_reports_all_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let csv = dir.path().join("ctx.csv");
    let o = bin(&["compare-strategies", "--config", &cfg, "--csv", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for s in ["no_memory", "full_context", "active"] {
        assert!(text.contains(s), "{text}");
    }
    let rows = std::fs::read_to_string(csv).unwrap();
    assert!(rows.starts_with("task_id,strategy,turn,C_t,total\n"));
}

#[test]
fn gradcheck_passes() {
    let o = bin(&["gradcheck", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.matches("max relative error").count(), 3);
    assert!(text.contains("passed"));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["web.toml", "search.toml"] {
        activectx::harness::RunConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
