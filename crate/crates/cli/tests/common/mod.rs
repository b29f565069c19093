//! Shared helpers for the binary-level tests: temp trees, synthetic
//! color-separable datasets, and a small wrapper around the polyth binary.
//!
//! Compiled once per test target, so not every helper is used everywhere.
#![allow(dead_code)]

use polyth_core::pipeline::{encode_ppm, RawImage, CLASS_DIRS};
use polyth_core::rng::Rng;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub struct TempTree {
    pub root: PathBuf,
}

impl TempTree {
    pub fn new(tag: &str) -> TempTree {
        let root =
            std::env::temp_dir().join(format!("polyth-cli-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&root);
        fs::create_dir_all(&root).unwrap();
        TempTree { root }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

impl Drop for TempTree {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.root);
    }
}

/// One image whose dominant channel encodes its class.
pub fn class_image(label: usize, size: usize, rng: &mut Rng) -> RawImage {
    let mut img = RawImage::filled(size, size, [0, 0, 0]);
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let base = if c == label { 190.0 } else { 35.0 };
                let v = (base + rng.uniform(-30.0, 30.0)).clamp(0.0, 255.0) as u8;
                img.set(x, y, c, v);
            }
        }
    }
    img
}

/// Build root/{train,val,test}/{class dirs}/img_*.ppm with the given counts.
pub fn build_dataset(
    root: &Path,
    train_per_class: usize,
    val_per_class: usize,
    test_per_class: usize,
    size: usize,
    seed: u64,
) {
    let mut rng = Rng::new(seed);
    for (split, per_class) in [
        ("train", train_per_class),
        ("val", val_per_class),
        ("test", test_per_class),
    ] {
        for (label, class_dir) in CLASS_DIRS.iter().enumerate() {
            let dir = root.join(split).join(class_dir);
            fs::create_dir_all(&dir).unwrap();
            for i in 0..per_class {
                let img = class_image(label, size, &mut rng);
                fs::write(dir.join(format!("img_{i:03}.ppm")), encode_ppm(&img)).unwrap();
            }
        }
    }
}

/// Run the polyth binary with the given arguments.
pub fn polyth<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_polyth"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}
