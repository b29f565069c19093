//! The five subcommands. Every command is deterministic given its flags,
//! config, seed, and input bytes.

use polyth_core::loss::decide;
use polyth_core::model::{load_checkpoint, ModelConfig, ModelError};
use polyth_core::ops::softmax;
use polyth_core::pipeline::{
    decode_ppm, encode_ppm, load_dataset_index, normalize_image, resize_bilinear, AugmentParams,
    CLASS_DIRS,
};
use polyth_core::train::{evaluate_split, run_training, TrainConfig, TrainError};
use polyth_core::verify::{check_names, run_verification};
use polyth_core::Rng;
use std::fs;
use std::path::{Path, PathBuf};

const EXIT_OK: i32 = 0;
const EXIT_VERIFY: i32 = 1;
const EXIT_INPUT: i32 = 2;
const EXIT_CHECKPOINT: i32 = 3;
const EXIT_IO: i32 = 4;

/// Tiny flag cursor: every option is `--name value` except listed booleans.
struct Flags<'a> {
    args: &'a [String],
    pos: usize,
}

impl<'a> Flags<'a> {
    fn new(args: &'a [String]) -> Flags<'a> {
        Flags { args, pos: 0 }
    }

    fn next_flag(&mut self) -> Option<&'a str> {
        let arg = self.args.get(self.pos)?;
        self.pos += 1;
        Some(arg.as_str())
    }

    fn value(&mut self, flag: &str) -> Result<&'a str, String> {
        let v = self
            .args
            .get(self.pos)
            .ok_or_else(|| format!("{flag} needs a value"))?;
        self.pos += 1;
        Ok(v.as_str())
    }
}

fn parse_num<T: std::str::FromStr>(flag: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("bad value {value:?} for {flag}"))
}

fn fail_input(message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message}");
    EXIT_INPUT
}

fn train_error_code(e: &TrainError) -> i32 {
    match e {
        TrainError::Io { .. } => EXIT_IO,
        TrainError::Model(ModelError::Checkpoint(_)) => EXIT_CHECKPOINT,
        _ => EXIT_INPUT,
    }
}

/// Apply one key=value pair against whichever config owns the key.
fn apply_setting(
    train: &mut TrainConfig,
    model: &mut ModelConfig,
    key: &str,
    value: &str,
) -> Result<(), String> {
    match train.apply_kv(key, value) {
        Ok(()) => Ok(()),
        Err(train_err) => match model.apply_kv(key, value) {
            Ok(()) => Ok(()),
            Err(_) if train_err.starts_with("bad value") => Err(train_err),
            Err(model_err) => {
                if model_err.starts_with("bad value") {
                    Err(model_err)
                } else {
                    Err(format!("unknown config key {key:?}"))
                }
            }
        },
    }
}

fn apply_config_file(
    path: &Path,
    train: &mut TrainConfig,
    model: &mut ModelConfig,
) -> Result<(), String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
        apply_setting(train, model, key.trim(), value.trim())
            .map_err(|e| format!("{}:{}: {e}", path.display(), lineno + 1))?;
    }
    Ok(())
}

pub fn cmd_train(args: &[String]) -> i32 {
    let mut data: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;
    let mut config_file: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        let mut push = |key: &str, value: Result<&str, String>| -> Result<(), String> {
            overrides.push((key.to_string(), value?.to_string()));
            Ok(())
        };
        let step = match flag {
            "--data" => flags.value(flag).map(|v| data = Some(PathBuf::from(v))),
            "--out" => flags.value(flag).map(|v| out = Some(PathBuf::from(v))),
            "--config" => flags
                .value(flag)
                .map(|v| config_file = Some(PathBuf::from(v))),
            "--seed" => push("seed", flags.value(flag)),
            "--restarts" => push("restarts", flags.value(flag)),
            "--lambda" => push("lambda", flags.value(flag)),
            "--epochs" => push("max_epochs", flags.value(flag)),
            "--batch-size" => push("batch_size", flags.value(flag)),
            "--steps" => push("steps_per_epoch", flags.value(flag)),
            "--lr" => push("lr0", flags.value(flag)),
            "--lr-decay" => push("lr_decay_factor", flags.value(flag)),
            "--patience" => push("patience", flags.value(flag)),
            "--no-augment" => {
                overrides.push(("augment".into(), "false".into()));
                Ok(())
            }
            "--set" => flags.value(flag).and_then(|pair| {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| format!("--set wants KEY=VALUE, got {pair:?}"))?;
                overrides.push((k.trim().to_string(), v.trim().to_string()));
                Ok(())
            }),
            other => Err(format!("unknown flag {other:?}")),
        };
        if let Err(e) = step {
            return fail_input(e);
        }
    }

    let data = match data {
        Some(d) => d,
        None => return fail_input("--data is required"),
    };
    let out = match out {
        Some(o) => o,
        None => return fail_input("--out is required"),
    };

    let mut train_cfg = TrainConfig::default();
    let mut model_cfg = ModelConfig::default();
    if let Some(path) = &config_file {
        if let Err(e) = apply_config_file(path, &mut train_cfg, &mut model_cfg) {
            return fail_input(e);
        }
    }
    for (key, value) in &overrides {
        if let Err(e) = apply_setting(&mut train_cfg, &mut model_cfg, key, value) {
            return fail_input(e);
        }
    }

    let index = match load_dataset_index(&data) {
        Ok(i) => i,
        Err(e) => return fail_input(e),
    };
    for w in &index.warnings {
        eprintln!("warning: {w}");
    }

    let mut log = |line: &str| println!("{line}");
    match run_training(&train_cfg, &model_cfg, &index, &out, &mut log) {
        Ok(summary) => {
            println!(
                "done: {} restart(s), selected {}, checkpoint {}",
                summary.restarts.len(),
                summary.selected,
                summary.checkpoint_path.display()
            );
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            train_error_code(&e)
        }
    }
}

pub fn cmd_eval(args: &[String]) -> i32 {
    let mut data: Option<PathBuf> = None;
    let mut checkpoint: Option<PathBuf> = None;
    let mut split = String::from("test");
    let mut lambda = 1.25f64;
    let mut batch_size = 32usize;
    let mut out_file: Option<PathBuf> = None;

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        let step = (|| -> Result<(), String> {
            match flag {
                "--data" => data = Some(PathBuf::from(flags.value(flag)?)),
                "--checkpoint" => checkpoint = Some(PathBuf::from(flags.value(flag)?)),
                "--split" => split = flags.value(flag)?.to_string(),
                "--lambda" => lambda = parse_num(flag, flags.value(flag)?)?,
                "--batch-size" => batch_size = parse_num(flag, flags.value(flag)?)?,
                "--out" => out_file = Some(PathBuf::from(flags.value(flag)?)),
                other => return Err(format!("unknown flag {other:?}")),
            }
            Ok(())
        })();
        if let Err(e) = step {
            return fail_input(e);
        }
    }

    let data = match data {
        Some(d) => d,
        None => return fail_input("--data is required"),
    };
    let checkpoint = match checkpoint {
        Some(c) => c,
        None => return fail_input("--checkpoint is required"),
    };
    if !["train", "val", "test"].contains(&split.as_str()) {
        return fail_input(format!("unknown split {split:?}"));
    }

    let (params, model_cfg) = match load_checkpoint(&checkpoint) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: checkpoint: {e}");
            return EXIT_CHECKPOINT;
        }
    };
    let index = match load_dataset_index(&data) {
        Ok(i) => i,
        Err(e) => return fail_input(e),
    };
    for w in &index.warnings {
        eprintln!("warning: {w}");
    }

    match evaluate_split(&params, &model_cfg, &index, &split, lambda, batch_size) {
        Ok(report) => {
            let text = report.render(&split);
            print!("{text}");
            let out_file =
                out_file.unwrap_or_else(|| PathBuf::from(format!("metrics_{split}.txt")));
            if let Err(e) = fs::write(&out_file, &text) {
                eprintln!("error: cannot write {}: {e}", out_file.display());
                return EXIT_IO;
            }
            println!("report written to {}", out_file.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            train_error_code(&e)
        }
    }
}

pub fn cmd_classify(args: &[String]) -> i32 {
    let mut checkpoint: Option<PathBuf> = None;
    let mut image: Option<PathBuf> = None;
    let mut threshold: Option<f64> = None;

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        let step = (|| -> Result<(), String> {
            match flag {
                "--checkpoint" => checkpoint = Some(PathBuf::from(flags.value(flag)?)),
                "--image" => image = Some(PathBuf::from(flags.value(flag)?)),
                "--threshold" => threshold = Some(parse_num(flag, flags.value(flag)?)?),
                other => return Err(format!("unknown flag {other:?}")),
            }
            Ok(())
        })();
        if let Err(e) = step {
            return fail_input(e);
        }
    }

    let checkpoint = match checkpoint {
        Some(c) => c,
        None => return fail_input("--checkpoint is required"),
    };
    let image_path = match image {
        Some(i) => i,
        None => return fail_input("--image is required"),
    };

    let (params, model_cfg) = match load_checkpoint(&checkpoint) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: checkpoint: {e}");
            return EXIT_CHECKPOINT;
        }
    };

    let bytes = match fs::read(&image_path) {
        Ok(b) => b,
        Err(e) => return fail_input(format!("{}: {e}", image_path.display())),
    };
    let img = match decode_ppm(&bytes) {
        Ok(i) => i,
        Err(e) => return fail_input(format!("{}: {e}", image_path.display())),
    };
    let (h, w) = model_cfg.input_size;
    let resized = match resize_bilinear(&img, w, h) {
        Ok(r) => r,
        Err(e) => return fail_input(e),
    };
    let x = normalize_image(&resized);

    let (logits, _) =
        match polyth_core::model::forward(&params, &model_cfg, &x, false, &mut Rng::new(0)) {
            Ok(r) => r,
            Err(e) => return fail_input(e),
        };
    let probs = match softmax(&logits) {
        Ok(p) => p,
        Err(e) => return fail_input(e),
    };
    let row = &probs.data()[0..3];
    let label = match decide(row, threshold) {
        Ok(l) => l,
        Err(e) => return fail_input(e),
    };

    for (i, name) in CLASS_DIRS.iter().enumerate() {
        println!("p{i}_{}={:.6}", name.split_once('_').map(|x| x.1).unwrap_or(name), row[i]);
    }
    println!("label={label}");
    EXIT_OK
}

pub fn cmd_augment(args: &[String]) -> i32 {
    let mut image: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;
    let mut count: usize = 0;
    let mut seed: u64 = 0;

    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        let step = (|| -> Result<(), String> {
            match flag {
                "--image" => image = Some(PathBuf::from(flags.value(flag)?)),
                "--out" => out = Some(PathBuf::from(flags.value(flag)?)),
                "--count" => count = parse_num(flag, flags.value(flag)?)?,
                "--seed" => seed = parse_num(flag, flags.value(flag)?)?,
                other => return Err(format!("unknown flag {other:?}")),
            }
            Ok(())
        })();
        if let Err(e) = step {
            return fail_input(e);
        }
    }

    let image_path = match image {
        Some(i) => i,
        None => return fail_input("--image is required"),
    };
    let out = match out {
        Some(o) => o,
        None => return fail_input("--out is required"),
    };
    if count == 0 {
        return fail_input("--count must be positive");
    }

    let bytes = match fs::read(&image_path) {
        Ok(b) => b,
        Err(e) => return fail_input(format!("{}: {e}", image_path.display())),
    };
    let img = match decode_ppm(&bytes) {
        Ok(i) => i,
        Err(e) => return fail_input(format!("{}: {e}", image_path.display())),
    };

    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_IO;
    }
    let params = AugmentParams::default();
    let mut rng = Rng::new(seed);
    for i in 0..count {
        let augmented = polyth_core::pipeline::augment(&img, &params, &mut rng);
        let path = out.join(format!("aug_{i:04}.ppm"));
        if let Err(e) = fs::write(&path, encode_ppm(&augmented)) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_IO;
        }
    }
    println!("wrote {count} augmented images to {}", out.display());
    EXIT_OK
}

pub fn cmd_verify(args: &[String]) -> i32 {
    let mut perturb: Option<String> = None;
    let mut flags = Flags::new(args);
    while let Some(flag) = flags.next_flag() {
        let step = (|| -> Result<(), String> {
            match flag {
                "--perturb" => perturb = Some(flags.value(flag)?.to_string()),
                other => return Err(format!("unknown flag {other:?}")),
            }
            Ok(())
        })();
        if let Err(e) = step {
            return fail_input(e);
        }
    }
    if let Some(name) = &perturb {
        if !check_names().contains(&name.as_str()) {
            return fail_input(format!(
                "unknown check {name:?}; valid: {}",
                check_names().join(", ")
            ));
        }
        eprintln!("warning: deliberately perturbing check {name:?}");
    }

    let report = run_verification(perturb.as_deref());
    let mut passed = 0;
    for check in &report.checks {
        let tag = if check.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", check.name, check.detail);
        if check.passed {
            passed += 1;
        }
    }
    println!("verification: {passed}/{} checks passed", report.checks.len());
    if report.all_passed() {
        EXIT_OK
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        eprintln!("error: failing checks: {}", failed.join(", "));
        EXIT_VERIFY
    }
}
