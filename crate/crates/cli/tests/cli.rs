use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use regsynth::trainer::{self, Checkpoint, TrainConfig};
use regsynth::volume;

fn regsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regsynth"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(out: &Path, count: usize, seed: u64, amplitude: f32) -> Output {
    regsynth(&[
        "gen-phantoms",
        "--out",
        s(out),
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--dims",
        "32",
        "--amplitude",
        &amplitude.to_string(),
        "--sigma",
        "8",
    ])
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn write_config(dir: &Path, name: &str, data: &Path, edit: impl Fn(&mut TrainConfig)) -> PathBuf {
    let mut cfg = TrainConfig::new(data);
    cfg.channel_scale = 0.25;
    cfg.epochs = 2;
    edit(&mut cfg);
    let path = dir.join(name);
    fs::write(&path, cfg.to_text()).unwrap();
    path
}

#[test]
fn help_succeeds_and_unknown_flags_list_valid_ones() {
    assert!(regsynth(&["--help"]).status.success());
    let out = regsynth(&["gen-phantoms", "--out", "/tmp/x", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for flag in ["--out", "--count", "--seed", "--dims", "--amplitude", "--sigma"] {
        assert!(err.contains(flag), "{flag} missing from:\n{err}");
    }
    assert_eq!(regsynth(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn gen_phantoms_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(gen(&a, 4, 5, 3.0).status.success());
    assert!(gen(&b, 4, 5, 3.0).status.success());
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a).unwrap(), y.strip_prefix(&b).unwrap());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
    }
    for sub in ["source", "target_aligned", "target_misaligned", "mask"] {
        assert_eq!(fs::read_dir(a.join(sub)).unwrap().count(), 4, "{sub}");
    }
    assert_eq!(fs::read_dir(a.join("field")).unwrap().count(), 12);
    let manifest = regsynth::phantom::load_manifest(&a).unwrap();
    assert_eq!(manifest.cases.len(), 4);
}

#[test]
fn zero_amplitude_leaves_pairs_aligned() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    assert!(gen(&d, 3, 1, 0.0).status.success());
    for c in regsynth::phantom::load_manifest(&d).unwrap().cases {
        let case = regsynth::phantom::load_case(&d, &c.id).unwrap();
        assert_eq!(case.target_aligned.voxels(), case.target_misaligned.voxels(), "{}", c.id);
    }
}

#[test]
fn invalid_phantom_dims_are_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = regsynth(&["gen-phantoms", "--out", s(tmp.path()), "--count", "2", "--dims", "8"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_key_exits_1_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TrainConfig::new("data").to_text().replace("lambda_align = 20.0\n", "");
    let path = tmp.path().join("bad.cfg");
    fs::write(&path, text).unwrap();
    let out = regsynth(&["train", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_align"));
}

#[test]
fn diverging_training_exits_2_with_batch_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, 3, 2, 3.0).status.success());
    let cfg = write_config(tmp.path(), "nan.cfg", &data, |c| {
        c.variant = "BASELINE".into();
        c.lr = 1e30;
        c.epochs = 3;
    });
    let out = regsynth(&["train", "--config", s(&cfg)]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{err}");
    assert!(err.contains("batch seed"), "{err}");
}

#[test]
fn train_synthesize_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, 8, 3, 3.0).status.success());

    let started = Instant::now();
    let cfg_a = write_config(tmp.path(), "a.cfg", &data, |_| {});
    let out = regsynth(&["train", "--config", s(&cfg_a)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(started.elapsed() < Duration::from_secs(300));
    assert!(String::from_utf8_lossy(&out.stdout).contains("variant = BOTH+ACDS"));
    let run_a = tmp.path().join("a");
    for f in ["ckpt_final.bin", "losses.csv", "config.snapshot", "validation.csv"] {
        assert!(run_a.join(f).exists(), "{f}");
    }

    let cfg_b = write_config(tmp.path(), "b.cfg", &data, |_| {});
    assert!(regsynth(&["train", "--config", s(&cfg_b)]).status.success());
    assert_eq!(
        fs::read(run_a.join("losses.csv")).unwrap(),
        fs::read(tmp.path().join("b/losses.csv")).unwrap()
    );

    // single file, bitwise equal to the library path
    let ckpt_path = run_a.join("ckpt_final.bin");
    let src_path = data.join("source/case_000.mivol");
    let pred_path = tmp.path().join("pred_000.mivol");
    let out = regsynth(&["synthesize", "--checkpoint", s(&ckpt_path), "--input", s(&src_path), "--output", s(&pred_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred = volume::load_volume(&pred_path).unwrap();
    let src = volume::load_volume(&src_path).unwrap();
    assert_eq!(pred.dims(), src.dims());
    let lib = trainer::infer(&src, &Checkpoint::load(&ckpt_path).unwrap()).unwrap().volume;
    assert_eq!(
        volume::volume_to_bytes(&pred).unwrap(),
        volume::volume_to_bytes(&lib).unwrap()
    );

    // directory mode feeds evaluate
    let pred_dir = tmp.path().join("pred");
    let out = regsynth(&[
        "synthesize",
        "--checkpoint",
        s(&ckpt_path),
        "--input",
        s(&data.join("source")),
        "--output",
        s(&pred_dir),
    ]);
    assert!(out.status.success());
    assert_eq!(fs::read_dir(&pred_dir).unwrap().count(), 8);

    let eval_dir = tmp.path().join("eval");
    let out = regsynth(&[
        "evaluate",
        "--pred",
        s(&pred_dir),
        "--ref",
        s(&data.join("target_aligned")),
        "--mask",
        s(&data.join("mask")),
        "--out",
        s(&eval_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert!(eval_dir.join("summary.json").exists());

    // spot-check case_000 MAE against an elementwise loop
    let reference = volume::load_volume(data.join("target_aligned/case_000.mivol")).unwrap();
    let mask = volume::load_mask(data.join("mask/case_000.mivol")).unwrap();
    assert_eq!(reference.units(), volume::Units::Normalized);
    // normalized [-1, 1] ↔ [-1000, 1000] HU
    let (mut sum, mut n) = (0.0f64, 0usize);
    for i in 0..pred.len() {
        if mask.voxels()[i] != 0 {
            sum += (pred.voxels()[i] as f64 - 1000.0 * reference.voxels()[i] as f64).abs();
            n += 1;
        }
    }
    let row: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(row[0], "case_000");
    let mae: f64 = row[1].parse().unwrap();
    assert!((mae - sum / n as f64).abs() < 1e-6 * (1.0 + mae));
}

#[test]
fn evaluate_identical_dirs_gives_perfect_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, 3, 4, 3.0).status.success());
    let ta = data.join("target_aligned");
    let out_dir = tmp.path().join("eval");
    let out = regsynth(&["evaluate", "--pred", s(&ta), "--ref", s(&ta), "--mask", s(&data.join("mask")), "--out", s(&out_dir)]);
    assert!(out.status.success());
    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r[1], "0");
        assert_eq!(r[2], "inf");
        assert!((r[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn ablate_emits_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(gen(&data, 4, 6, 3.0).status.success());
    let cfg = write_config(tmp.path(), "abl.cfg", &data, |c| {
        c.epochs = 1;
        c.patch = 16;
    });
    let out = regsynth(&["ablate", "--config", s(&cfg), "--variants", "BEF,AFT,BOTH,BOTH+ACDS"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("abl/ablation");
    let csv = fs::read_to_string(run.join("ablation.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["BEF", "AFT", "BOTH", "BOTH+ACDS"]);
    // every variant trained on the same data and seed
    let snaps: Vec<String> = names
        .iter()
        .map(|v| fs::read_to_string(run.join(v).join("config.snapshot")).unwrap())
        .collect();
    for snap in &snaps {
        let strip = |t: &str| t.lines().filter(|l| !l.starts_with("variant")).collect::<Vec<_>>().join("\n");
        assert_eq!(strip(snap), strip(&snaps[0]));
    }
    let bad = regsynth(&["ablate", "--config", s(&cfg), "--variants", "BEF,NOPE"]);
    assert_eq!(bad.status.code(), Some(1));
}
