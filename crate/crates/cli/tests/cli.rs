use std::path::Path;
use std::process::Command;

use bevadapt::harness::{read_events, AdapterConfig, Event, RunConfig};
use bevadapt::WorldConfig;

fn tiny_config(dir: &Path, steps: usize) -> std::path::PathBuf {
    let mut world = WorldConfig::standard();
    world.train_scenes = 8;
    world.eval_scenes = 4;
    let mut cfg = RunConfig::new(AdapterConfig::full());
    cfg.world = Some(world);
    cfg.optim.steps = steps;
    cfg.optim.batch_scenes = 2;
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn bevadapt(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_bevadapt")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn train_eval_bench_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 3);
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    bevadapt(&["train", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", run_s]);
    for f in ["config.lock.json", "metrics.jsonl", "checkpoint.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let locked: RunConfig = serde_json::from_str(&std::fs::read_to_string(run.join("config.lock.json")).unwrap()).unwrap();
    assert_eq!(locked.seed, 5);

    bevadapt(&["eval", "--ckpt", run_s]);
    let events = read_events(&run.join("metrics.jsonl")).unwrap();
    assert_eq!(events.iter().filter(|e| matches!(e, Event::Step { .. })).count(), 3);
    assert!(matches!(events.last(), Some(Event::Eval(_))));

    let out = bevadapt(&["bench", "--ckpt", run_s, "--agents", "2,3", "--warmup", "1", "--iterations", "2"]);
    assert_eq!(out.lines().count(), 2);
    let csv = std::fs::read_to_string(run.join("bench/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    bevadapt(&["noise-sweep", "--ckpt", run_s, "--sigma-p", "0,0.4", "--sigma-r", "0"]);
    let csv = std::fs::read_to_string(run.join("noise_sweep/results.csv")).unwrap();
    assert!(csv.starts_with("ap50,"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn ablate_writes_both_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), 1);
    let out = tmp.path().join("abl");
    bevadapt(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows.iter().filter(|r| r.starts_with("components,")).count(), 5);
    assert_eq!(rows.iter().filter(|r| r.starts_with("dads_stacking,")).count(), 6);
}

#[test]
fn bad_config_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, "{\"adapter\": 3}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bevadapt"))
        .args(["train", "--config", path.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("loading config"));
}
