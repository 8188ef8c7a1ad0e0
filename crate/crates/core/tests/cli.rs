use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "seeds": [0, 1],
    "scenes_train": 3,
    "scenes_test": 3,
    "trajectories_per_scene": [1, 2],
    "heldout_per_scene": 4,
    "epochs": 3,
    "irl_epochs": 5,
    "refine_trials": 1,
    "causal_thetas_per_scene": 20,
    "causal_bootstrap": 50
}"#;

fn speclearn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclearn"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn full_pipeline_on_a_small_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.json"), SMALL).unwrap();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", "cfg.json"];
        all.extend_from_slice(args);
        speclearn(dir, &all)
    };

    let gen = run(&["generate"]);
    assert_eq!(code(&gen), 0, "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(dir.join("data/manifest.json").exists());
    assert!(dir.join("data/train/scene_002/scene.png").exists());
    assert!(dir.join("data/test/scene_000/scene.json").exists());

    assert_eq!(code(&run(&["train"])), 0);
    for stem in ["full_careful_s0", "classifier_aggressive_s1", "irl_normal_s0"] {
        assert!(dir.join(format!("ckpt/{stem}.spc")).exists(), "{stem}");
    }
    let log = dir.join("ckpt/full_careful_s0_log.csv");
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 4);

    let eval = run(&["eval"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert_eq!(
        first_line(&dir.join("results/accuracy_curve.csv")),
        "user_type,model,k,mean,q1,median,q3,min,max,runs"
    );
    assert!(dir.join("results/accuracy_curve_careful.svg").exists());

    assert_eq!(code(&run(&["refine"])), 0);
    assert_eq!(first_line(&dir.join("results/refine_table.csv")), "user_type,trials,successes,success_rate");
    assert!(dir.join("results/refine/careful_scene000_trial0.json").exists());

    // Three epochs cannot meet the intervention pattern, so the gate trips.
    let causal = run(&["causal"]);
    assert!(matches!(code(&causal), 0 | 3));
    assert_eq!(
        fs::read_to_string(dir.join("results/causal_report.csv")).unwrap().lines().count(),
        1 + 3 * 5
    );
    assert!(dir.join("results/user_type_intervention.csv").exists());

    let report = run(&["report"]);
    assert_eq!(code(&report), 0);
    let md = fs::read_to_string(dir.join("results/report.md")).unwrap();
    assert!(md.contains("accuracy") && md.contains("refine"), "{md}");
}

#[test]
fn resumed_training_keeps_finished_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = r#"{"seeds": [0], "scenes_train": 2, "scenes_test": 2, "trajectories_per_scene": [1],
                  "heldout_per_scene": 2, "epochs": 2, "ablations": ["full"], "user_types": ["normal"],
                  "include_irl": false, "resume": true}"#;
    fs::write(dir.join("cfg.json"), cfg).unwrap();
    assert_eq!(code(&speclearn(dir, &["--config", "cfg.json", "generate"])), 0);
    assert_eq!(code(&speclearn(dir, &["--config", "cfg.json", "train"])), 0);
    let spc = dir.join("ckpt/full_normal_s0.spc");
    let before = fs::read(&spc).unwrap();
    assert_eq!(code(&speclearn(dir, &["--config", "cfg.json", "train"])), 0);
    assert_eq!(fs::read(&spc).unwrap(), before);
}

#[test]
fn exit_codes_distinguish_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&speclearn(dir, &["frobnicate"])), 2);
    assert_eq!(code(&speclearn(dir, &["--seed", "x", "generate"])), 2);

    fs::write(dir.join("bad.json"), r#"{"epochs": 0}"#).unwrap();
    assert_eq!(code(&speclearn(dir, &["--config", "bad.json", "generate"])), 2);
    fs::write(dir.join("unknown.json"), r#"{"epoch": 5}"#).unwrap();
    assert_eq!(code(&speclearn(dir, &["--config", "unknown.json", "generate"])), 2);

    assert_eq!(code(&speclearn(dir, &["--config", "missing.json", "generate"])), 4);
    assert_eq!(code(&speclearn(dir, &["--data", "nowhere", "train"])), 4);
    assert_eq!(code(&speclearn(dir, &["--help"])), 0);
}
