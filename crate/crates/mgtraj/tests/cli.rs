use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mgtraj::checkpoint::{load_goal, load_model};
use mgtraj_core::goal::PretrainStage;

const QUICK: [&str; 4] = ["--set", "goal.pretrain.steps=5", "--set", "train.epochs=2"];

fn mgtraj(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgtraj"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MGTRAJ__TRAIN__EPOCHS")
        .output()
        .expect("spawn mgtraj")
}

fn ok(output: &Output) -> String {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn pretrain_goal_writes_both_stages_and_resume_skips_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&mgtraj(&["pretrain-goal", "--set", "goal.pretrain.steps=5"], &first));
    let stage1 = load_goal(&first.join("goal_stage1.json")).unwrap();
    let stage2 = load_goal(&first.join("goal_stage2.json")).unwrap();
    assert_eq!(stage1.stage, PretrainStage::NextFrame);
    assert_eq!(stage2.stage, PretrainStage::Goal);
    assert!(stage2.predictor.frozen);
    assert_eq!(stage1.stage1_losses.len(), 5);
    assert_eq!(stage2.stage2_losses.len(), 5);

    let resumed = dir.path().join("resumed");
    let resume = first.join("goal_stage1.json");
    ok(&mgtraj(
        &["pretrain-goal", "--set", "goal.pretrain.steps=5", "--resume", resume.to_str().unwrap()],
        &resumed,
    ));
    let again = load_goal(&resumed.join("goal_stage2.json")).unwrap();
    assert_eq!(again.stage1_losses, stage1.stage1_losses);
    assert_eq!(again.predictor, stage2.predictor);
}

#[test]
fn unknown_field_exits_with_config_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = mgtraj(&["train", "--set", "train.warmup_steps=3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("warmup_steps"), "{}", stderr(&out));

    let file = dir.path().join("bad.toml");
    fs::write(&file, "[rrn]\nembed_dims = 16\n").unwrap();
    let out = mgtraj(&["train", "--config", file.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("embed_dims"), "{}", stderr(&out));
}

#[test]
fn non_divisor_granularity_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = mgtraj(&["train", "--set", "rrn.gl=[3,1]"], &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains('3'), "{}", stderr(&out));
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn missing_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = mgtraj(&["eval", "--checkpoint", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.json"), "{}", stderr(&out));
}

#[test]
fn train_eval_and_plot_produce_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train"];
    args.extend(QUICK);
    ok(&mgtraj(&args, &run));
    for file in ["config.toml", "manifest.json", "metrics.csv", "checkpoints/final.json", "goal/goal_stage2.json"] {
        assert!(run.join(file).is_file(), "missing {file}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "step,lr,L_p,L_v,L,ADE,FDE");
    assert_eq!(lines.len(), 3);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["version"].as_str().is_some_and(|v| !v.is_empty()));

    let ckpt = run.join("checkpoints/final.json");
    assert_eq!(load_model(&ckpt).unwrap().state.step, 2);
    let eval = dir.path().join("eval");
    for _ in 0..2 {
        let stdout = ok(&mgtraj(&["eval", "--checkpoint", ckpt.to_str().unwrap()], &eval));
        assert!(stdout.starts_with("ade "), "{stdout}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 32);
    assert_eq!(report["per_stage_ade"].as_array().unwrap().len(), 5);
    assert_eq!(fs::read_to_string(eval.join("reports.csv")).unwrap().lines().count(), 3);

    let plots = dir.path().join("plots");
    let stdout = ok(&mgtraj(&["plot", "--checkpoint", ckpt.to_str().unwrap()], &plots));
    assert_eq!(stdout.lines().count(), 3);
    for i in 0..3 {
        let svg = fs::read_to_string(plots.join(format!("plots/sample_{i:04}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("ground truth"));
    }
}

#[test]
fn environment_layer_sits_between_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.toml");
    fs::write(&file, "[train]\nepochs = 5\n\n[goal.pretrain]\nsteps = 5\n").unwrap();
    let run = |extra: &[&str], env: Option<&str>, name: &str| {
        let out_dir = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mgtraj"));
        cmd.args(["train", "--config", file.to_str().unwrap()]).args(extra).arg("--out").arg(&out_dir);
        match env {
            Some(v) => cmd.env("MGTRAJ__TRAIN__EPOCHS", v),
            None => cmd.env_remove("MGTRAJ__TRAIN__EPOCHS"),
        };
        ok(&cmd.output().unwrap());
        fs::read_to_string(out_dir.join("metrics.csv")).unwrap().lines().count() - 1
    };
    assert_eq!(run(&[], None, "file"), 5);
    assert_eq!(run(&[], Some("3"), "env"), 3);
    assert_eq!(run(&["--set", "train.epochs=1"], Some("3"), "flag"), 1);
}
