use std::path::Path;
use std::process::{Command, Output};

use alchemy_core::interface::{list_trace_ids, load_dir, EvalManifest};
use alchemy_core::neural::{checkpoint, Epn, EpnDims};

fn alchemy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alchemy")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = alchemy(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn ideal_run_writes_traces_with_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("io");
    ok(&["run", "--policy", "ideal", "--episodes", "10", "--out", p(&out), "--record-belief"]);
    assert_eq!(list_trace_ids(&out).unwrap().len(), 10);
    assert!(load_dir(&out).unwrap().iter().all(|b| b.belief.is_some()));
    let report = ok(&["analyze", "behavior", "--traces", p(&out)]);
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let cols: Vec<&str> = r.split('\t').collect();
        assert_eq!(cols[0], "ideal_observer");
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0, "{r}");
    }
    let json = ok(&["analyze", "behavior", "--traces", p(&out), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["per_episode"].as_array().unwrap().len(), 10);

    let rh = dir.path().join("rh");
    ok(&["run", "--policy", "random", "--episodes", "10", "--out", p(&rh)]);
    let cmp = ok(&["analyze", "compare", "--traces", p(&rh), "--reference", p(&out)]);
    assert_eq!(cmp.lines().count(), 11);
    let edges = ok(&["analyze", "edges", "--traces", p(&rh)]);
    assert!(edges.starts_with("missing_edges\tn\tmean\tsem\n"));
    let actions = ok(&["analyze", "actions", "--traces", p(&rh), "--trial", "0,9"]);
    assert!(actions.lines().skip(1).all(|l| l.starts_with("1\t") || l.starts_with("10\t")));
}

#[test]
fn epn_flags_reach_trace_headers() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("net.bin");
    checkpoint::save(&Epn::new(EpnDims::default().shrunk(8), 1).unwrap(), &ck).unwrap();
    let out = dir.path().join("epn");
    ok(&[
        "run", "--policy", "epn", "--checkpoint", p(&ck), "--episodes", "3", "--out", p(&out), "--no-memory",
        "--no-shaping", "--record-activations",
    ]);
    let b = load_dir(&out).unwrap();
    assert_eq!(b.len(), 3);
    for x in &b {
        assert!(!x.trace.header.agent.memory_enabled);
        assert!(!x.trace.header.env.shaping);
        assert!(x.trace.steps.iter().all(|s| s.shaping_reward == 0.0));
        assert_eq!(x.activations.as_ref().unwrap().len(), x.trace.steps.len());
    }
    let units = ok(&["analyze", "units", "--traces", p(&out)]);
    assert!(units.contains("# pair-selective transformer units:"));
}

#[test]
fn gen_writes_a_deterministic_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["gen", "--seed", "5", "--episodes", "25", "--out", p(&a)]);
    ok(&["gen", "--seed", "5", "--episodes", "25", "--out", p(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let m: EvalManifest = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(m.episodes.len(), 25);
    let out = dir.path().join("noop");
    ok(&["run", "--policy", "noop", "--manifest", p(&a), "--episodes", "4", "--out", p(&out)]);
    let seeds: Vec<u64> = load_dir(&out).unwrap().iter().map(|b| b.trace.header.seed).collect();
    assert_eq!(seeds, m.seeds()[..4]);
}

#[test]
fn train_writes_checkpoints_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    std::fs::write(
        &cfg,
        "[train]\nbatch = 2\nunroll = 5\ntotal_steps = 40\n[train.net]\nlstm = 16\nmlp = 8\nheads = 2\nhead_dim = 4\n[env]\ntrials_per_episode = 1\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    ok(&["train", "--config", p(&cfg), "--out", p(&out)]);
    assert!(out.join("final.bin").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4);
    checkpoint::load(out.join("final.bin")).unwrap();
}

#[test]
fn bad_input_exits_nonzero() {
    assert!(!alchemy(&["run", "--policy", "ideal", "--bogus"]).status.success());
    assert!(!alchemy(&["run", "--policy", "sometimes", "--out", "x"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[env]\nsteps_per_trial = 0\n").unwrap();
    let out = alchemy(&["run", "--policy", "noop", "--config", p(&bad), "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = alchemy(&["run", "--policy", "epn", "--out", p(dir.path())]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
    assert!(!alchemy(&["analyze", "behavior", "--traces", p(&dir.path().join("missing"))]).status.success());
}
