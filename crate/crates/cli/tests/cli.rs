//! Binary-level tests: flags, outputs, and the documented exit codes
//! (0 success, 1 verification failure, 2 input/config error, 3 checkpoint
//! error, 4 I/O error).

mod common;

use common::*;
use polyth_core::pipeline::{decode_ppm, encode_ppm};
use polyth_core::rng::Rng;
use std::fs;

/// Small model settings used by every training invocation here.
const MODEL_ARGS: &[&str] = &[
    "--set",
    "input_size=16,16",
    "--set",
    "stem_channels=4",
    "--set",
    "block_channels=6",
    "--set",
    "head_widths=8,8",
];

fn train_args<'a>(data: &'a str, out: &'a str, extra: &'a [&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train",
        "--data",
        data,
        "--out",
        out,
        "--seed",
        "3",
        "--restarts",
        "1",
        "--epochs",
        "2",
        "--steps",
        "2",
        "--batch-size",
        "4",
    ];
    args.extend_from_slice(MODEL_ARGS);
    args.extend_from_slice(extra);
    args
}

#[test]
fn train_smoke_writes_artifacts() {
    let tree = TempTree::new("train-smoke");
    let data = tree.path("data");
    build_dataset(&data, 2, 2, 1, 16, 1);
    let out = tree.path("run");
    let result = polyth(train_args(
        data.to_str().unwrap(),
        out.to_str().unwrap(),
        &[],
    ));
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_of(&result));
    assert!(out.join("model.plnt").is_file());
    assert!(out.join("metrics_restart0.csv").is_file());
    assert!(out.join("summary.csv").is_file());
    let csv = fs::read_to_string(out.join("metrics_restart0.csv")).unwrap();
    assert!(csv.starts_with(
        "epoch,lr,train_loss,train_acc,val_loss,val_acc,val_macro_f1,elapsed_s\n"
    ));
}

#[test]
fn train_missing_split_exits_2_naming_it() {
    let tree = TempTree::new("train-missing");
    let data = tree.path("data");
    build_dataset(&data, 1, 1, 1, 16, 1);
    fs::remove_dir_all(data.join("val")).unwrap();
    let out = tree.path("run");
    let result = polyth(train_args(
        data.to_str().unwrap(),
        out.to_str().unwrap(),
        &[],
    ));
    assert_eq!(exit_code(&result), 2);
    assert!(stderr_of(&result).contains("val"), "{}", stderr_of(&result));
}

#[test]
fn train_rejects_unknown_config_key() {
    let tree = TempTree::new("train-badkey");
    let data = tree.path("data");
    build_dataset(&data, 1, 1, 1, 16, 1);
    let cfg = tree.path("cfg.txt");
    fs::write(&cfg, "no_such_key=5\n").unwrap();
    let out = tree.path("run");
    let mut args = train_args(data.to_str().unwrap(), out.to_str().unwrap(), &[]);
    let cfg_str = cfg.to_str().unwrap();
    args.extend_from_slice(&["--config", cfg_str]);
    let result = polyth(&args);
    assert_eq!(exit_code(&result), 2);
    assert!(stderr_of(&result).contains("no_such_key"));
}

#[test]
fn flags_override_config_file() {
    let tree = TempTree::new("train-override");
    let data = tree.path("data");
    build_dataset(&data, 2, 1, 1, 16, 1);
    let cfg = tree.path("cfg.txt");
    // file asks for two restarts; the flag dials it back to one
    fs::write(
        &cfg,
        "restarts=2\ninput_size=16,16\nstem_channels=4\nblock_channels=6\nhead_widths=8,8\nmax_epochs=1\nsteps_per_epoch=1\nbatch_size=4\n",
    )
    .unwrap();
    let out = tree.path("run");
    let result = polyth([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--restarts",
        "1",
        "--seed",
        "1",
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_of(&result));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2); // header + exactly one restart
    assert!(!out.join("metrics_restart1.csv").exists());
}

#[test]
fn eval_writes_report_and_rejects_corrupt_checkpoint() {
    let tree = TempTree::new("eval");
    let data = tree.path("data");
    build_dataset(&data, 2, 2, 2, 16, 2);
    let out = tree.path("run");
    let result = polyth(train_args(
        data.to_str().unwrap(),
        out.to_str().unwrap(),
        &[],
    ));
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_of(&result));

    let report_path = tree.path("report.txt");
    let eval = polyth([
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        out.join("model.plnt").to_str().unwrap(),
        "--split",
        "test",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&eval), 0, "stderr: {}", stderr_of(&eval));
    let text = fs::read_to_string(&report_path).unwrap();
    assert!(text.contains("split: test"));
    assert!(text.contains("accuracy:"));
    assert!(text.contains("confusion"));

    // identical invocation writes identical bytes
    let report2 = tree.path("report2.txt");
    let eval2 = polyth([
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        out.join("model.plnt").to_str().unwrap(),
        "--split",
        "test",
        "--out",
        report2.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&eval2), 0);
    assert_eq!(fs::read(&report_path).unwrap(), fs::read(&report2).unwrap());

    // corrupt a byte in the middle: checksum failure, exit 3
    let ckpt = out.join("model.plnt");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    let bad = tree.path("bad.plnt");
    fs::write(&bad, bytes).unwrap();
    let eval3 = polyth([
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&eval3), 3);
    assert!(stderr_of(&eval3).contains("checksum"), "{}", stderr_of(&eval3));
}

#[test]
fn classify_threshold_and_argmax_rules() {
    let tree = TempTree::new("classify");
    let data = tree.path("data");
    build_dataset(&data, 2, 1, 1, 16, 3);
    let out = tree.path("run");
    let result = polyth(train_args(
        data.to_str().unwrap(),
        out.to_str().unwrap(),
        &[],
    ));
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_of(&result));
    let ckpt = out.join("model.plnt");
    let image = data.join("test/0_nonplastic/img_000.ppm");

    // threshold 0 forces the polythene class
    let forced = polyth([
        "classify",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--threshold",
        "0",
    ]);
    assert_eq!(exit_code(&forced), 0);
    assert!(stdout_of(&forced).contains("label=2"), "{}", stdout_of(&forced));

    // without a threshold the label is the argmax of the printed probabilities,
    // and those probabilities sum to 1
    let plain = polyth([
        "classify",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&plain), 0);
    let text = stdout_of(&plain);
    let mut probs = Vec::new();
    let mut label = None;
    for line in text.lines() {
        if let Some((key, value)) = line.split_once('=') {
            if key.starts_with('p') {
                probs.push(value.parse::<f64>().unwrap());
            } else if key == "label" {
                label = Some(value.parse::<usize>().unwrap());
            }
        }
    }
    assert_eq!(probs.len(), 3);
    let sum: f64 = probs.iter().sum();
    assert!((sum - 1.0).abs() < 1e-6, "printed probabilities sum to {sum}");
    let argmax = (0..3).max_by(|&a, &b| probs[a].partial_cmp(&probs[b]).unwrap()).unwrap();
    assert_eq!(label.unwrap(), argmax);

    // invalid threshold rejected
    let bad = polyth([
        "classify",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--threshold",
        "1.5",
    ]);
    assert_eq!(exit_code(&bad), 2);

    // undecodable image rejected with exit 2
    let junk = tree.path("junk.ppm");
    fs::write(&junk, b"definitely not a ppm").unwrap();
    let undec = polyth([
        "classify",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--image",
        junk.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&undec), 2);
}

#[test]
fn augment_counts_dims_and_determinism() {
    let tree = TempTree::new("augment");
    let mut rng = Rng::new(4);
    let img = class_image(2, 20, &mut rng);
    let src = tree.path("src.ppm");
    fs::write(&src, encode_ppm(&img)).unwrap();

    let out1 = tree.path("a");
    let result = polyth([
        "augment",
        "--image",
        src.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
        "--count",
        "3",
        "--seed",
        "9",
    ]);
    assert_eq!(exit_code(&result), 0, "stderr: {}", stderr_of(&result));
    let mut names: Vec<String> = fs::read_dir(&out1)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, vec!["aug_0000.ppm", "aug_0001.ppm", "aug_0002.ppm"]);

    for name in &names {
        let decoded = decode_ppm(&fs::read(out1.join(name)).unwrap()).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (20, 20));
    }

    let out2 = tree.path("b");
    let again = polyth([
        "augment",
        "--image",
        src.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--count",
        "3",
        "--seed",
        "9",
    ]);
    assert_eq!(exit_code(&again), 0);
    for name in &names {
        assert_eq!(
            fs::read(out1.join(name)).unwrap(),
            fs::read(out2.join(name)).unwrap(),
            "{name} differs across identical seeds"
        );
    }
}

#[test]
fn verify_passes_clean_and_fails_perturbed() {
    let clean = polyth(["verify"]);
    assert_eq!(exit_code(&clean), 0, "stderr: {}", stderr_of(&clean));
    let text = stdout_of(&clean);
    assert!(text.contains("[PASS] dense"));
    assert!(text.contains("[PASS] model"));
    assert!(!text.contains("[FAIL]"));

    let poisoned = polyth(["verify", "--perturb", "depthwise_conv"]);
    assert_eq!(exit_code(&poisoned), 1);
    assert!(stdout_of(&poisoned).contains("[FAIL] depthwise_conv"));
    assert!(stderr_of(&poisoned).contains("depthwise_conv"));

    let unknown = polyth(["verify", "--perturb", "nonsense"]);
    assert_eq!(exit_code(&unknown), 2);
}

#[test]
fn unknown_command_and_flags_exit_2() {
    assert_eq!(exit_code(&polyth(["frobnicate"])), 2);
    assert_eq!(exit_code(&polyth(["train", "--bogus", "1"])), 2);
    assert_eq!(exit_code(&polyth::<_, &str>([])), 2);
    assert_eq!(exit_code(&polyth(["--help"])), 0);
}
