use evforest::formats::load_events;
use evforest::harness::Manifest;
use evforest::learner::load_model;
use evforest::world::World;
use std::path::Path;
use std::process::{Command, Output};

fn evforest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evforest")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = "[trial.camera]\nwidth = 64\nheight = 48\n[net]\ninput_width = 16\ninput_height = 16\nhead_bins = 4\n";

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn gen_world_writes_requested_forest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let o = evforest(&["--seed", "3", "gen-world", "--trees", "25", "--area", "20x30", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let w = World::load(&out).unwrap();
    assert_eq!(w.trees.len(), 25);
    assert_eq!(w.bounds.width(), 20.0);
    assert_eq!(w.bounds.x_max - w.bounds.x_min, 30.0);
    let again = evforest(&["--seed", "3", "gen-world", "--trees", "25", "--area", "20x30"]);
    assert_eq!(stdout(&again), std::fs::read_to_string(&out).unwrap());
}

#[test]
fn exit_codes() {
    assert_eq!(evforest(&["gen-world", "--nope"]).status.code(), Some(1));
    assert_eq!(evforest(&["eval", "--policy", "learned_joint"]).status.code(), Some(1));
    assert_eq!(evforest(&["eval", "--policy", "pilot"]).status.code(), Some(1));
    let missing = evforest(&["train", "--data", "/nonexistent/data", "--out", "/nonexistent/m.mdl"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(evforest(&["--version"]).status.code(), Some(0));
}

#[test]
fn collect_train_eval_and_convert() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let model = dir.path().join("m.mdl");
    let d = data.to_str().unwrap();
    let m = model.to_str().unwrap();

    let o = evforest(&["--config", &cfg, "collect", "--trajectories", "3", "--out", d, "--speed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = Manifest::load(&data).unwrap();
    assert_eq!(manifest.trajectories.len(), 3);
    assert!(manifest.trajectories.iter().all(|t| t.speed == 5.0));

    let o = evforest(&["--config", &cfg, "train", "--data", d, "--out", m, "--epochs", "2", "--mode", "no_depth"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).matches("epoch").count(), 2);
    assert_eq!(load_model(&model).unwrap().config.input_width, 16);

    let csv = dir.path().join("eval.csv");
    let o = evforest(&[
        "--config", &cfg, "eval", "--policy", "learned_no_depth", "--model", m, "--trials", "2", "--length", "5,8",
        "--csv", csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("learned_no_depth") && table.contains("8.0"), "{}", table);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);

    let log = dir.path().join("cmd.csv");
    let o = evforest(&["--config", &cfg, "rollout", "--policy", "expert", "--length", "4", "--out", log.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(std::fs::read_to_string(&log).unwrap().starts_with("t_s,v_y_unit"));

    // The accumulator reproduces the recorded stream; difflog drops sub-threshold carry-over.
    let traj = data.join(&manifest.trajectories[0].dir);
    let frames = traj.join("frames");
    let acc = dir.path().join("acc.evs");
    let dl = dir.path().join("dl.evs");
    for (model, out) in [("accumulator", &acc), ("difflog", &dl)] {
        let o = evforest(&["events-convert", "--frames", frames.to_str().unwrap(), "--model", model, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("events from"));
    }
    assert_eq!(std::fs::read(&acc).unwrap(), std::fs::read(traj.join("events.evs")).unwrap());
    let (a, b) = (load_events(&acc).unwrap(), load_events(&dl).unwrap());
    assert!(!a.events.is_empty());
    assert_ne!(a.events.len(), b.events.len());
}
