use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use weft_cli::{CHECKPOINT_FILE, DATASET_FILE, EXIT_CONFIG, PREDICTIONS_FILE, REPORT_FILE};

fn dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("weft-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn weft(args: &[&str], paths: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_weft"));
    c.env("WEFT_THREADS", "1").args(args);
    for (flag, p) in paths {
        c.arg(flag).arg(p);
    }
    c.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 4] = ["--image-size", "32", "--steps", "4"];

#[test]
fn train_then_eval_round_trip() {
    let d = dir("eval");
    let run = d.join("run");
    let t = weft(&[&["train"][..], &SMALL].concat(), &[("--out", &run)]);
    assert!(t.status.success(), "{}", stderr(&t));
    let csv = std::fs::read_to_string(run.join(REPORT_FILE)).unwrap();
    assert!(csv.starts_with("step,loss,bce,dice,miou,mdice,mae,f_measure"));
    assert_eq!(csv.lines().count(), 2);

    let data = d.join("data");
    let s = weft(&["synth", "--image-size", "32", "--start", "64", "--count", "3"], &[("--out", &data)]);
    assert!(s.status.success(), "{}", stderr(&s));
    assert!(data.join(DATASET_FILE).exists());

    let e = weft(&["eval"], &[("--checkpoint", &run.join(CHECKPOINT_FILE)), ("--data", &data)]);
    assert!(e.status.success(), "{}", stderr(&e));
    let out = String::from_utf8_lossy(&e.stdout);
    assert!(out.contains("miou") && out.contains("beta^2=0.3"), "{out}");
    assert_eq!(weft::wten::load(data.join(PREDICTIONS_FILE)).unwrap().len(), 3);
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn eval_rejects_mismatched_image_size() {
    let d = dir("mismatch");
    let run = d.join("run");
    assert!(weft(&[&["train"][..], &SMALL].concat(), &[("--out", &run)]).status.success());
    let data = d.join("data");
    assert!(weft(&["synth", "--image-size", "64", "--count", "1"], &[("--out", &data)]).status.success());
    let e = weft(&["eval"], &[("--checkpoint", &run.join(CHECKPOINT_FILE)), ("--data", &data)]);
    assert_eq!(e.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&e).contains("64x64"), "{}", stderr(&e));
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn truncated_checkpoint_is_a_clean_error() {
    let d = dir("corrupt");
    let run = d.join("run");
    assert!(weft(&[&["train"][..], &SMALL].concat(), &[("--out", &run)]).status.success());
    let ckpt = run.join(CHECKPOINT_FILE);
    let bytes = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let data = d.join("data");
    assert!(weft(&["synth", "--image-size", "32", "--count", "1"], &[("--out", &data)]).status.success());
    let e = weft(&["eval"], &[("--checkpoint", &ckpt), ("--data", &data)]);
    assert_eq!(e.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&e).starts_with("error:"));
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn seed_and_expert_flags_reach_the_run() {
    let d = dir("flags");
    let a = d.join("a");
    let t = weft(&[&["train", "--seed", "7", "--k-experts", "6", "--subspaces", "8"][..], &SMALL].concat(), &[("--out", &a)]);
    assert!(t.status.success(), "{}", stderr(&t));
    let cfg = std::fs::read_to_string(a.join(weft_cli::CONFIG_FILE)).unwrap();
    let parsed: weft_cli::RunConfig = toml::from_str(&cfg).unwrap();
    assert_eq!((parsed.seed, parsed.model.k_experts, parsed.model.subspaces), (7, 6, 8));

    // the written config reproduces the run
    let b = d.join("b");
    let r = weft(&["train"], &[("--config", &a.join(weft_cli::CONFIG_FILE)), ("--out", &b)]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(std::fs::read(a.join(REPORT_FILE)).unwrap(), std::fs::read(b.join(REPORT_FILE)).unwrap());
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn bad_input_maps_to_config_exit() {
    let d = dir("bad");
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "seed = 1\n[model]\nwidth = 3\n").unwrap();
    let o = weft(&["train"], &[("--config", &cfg), ("--out", &d.join("x"))]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(stderr(&o).contains("width"), "{}", stderr(&o));

    let o = weft(&["train", "--k-experts", "3"], &[("--out", &d.join("y"))]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let o = weft(&["train", "--steps", "0"], &[("--out", &d.join("z"))]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let o = weft(&["train", "--image-size", "36", "--steps", "1"], &[("--out", &d.join("w"))]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG), "{}", stderr(&o));
    std::fs::remove_dir_all(&d).unwrap();
}

#[test]
fn help_exits_cleanly() {
    let o = weft(&["--help"], &[]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("gradcheck"));
}
