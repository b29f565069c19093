//! End-to-end trainer behavior on small synthetic datasets.

use polyth_core::loss::{one_hot, softmax_loss_grad, LossWeighting};
use polyth_core::model::{forward, init_params, ModelConfig};
use polyth_core::pipeline::{
    encode_ppm, load_dataset_index, BatchOptions, CyclingBatches, RawImage, CLASS_DIRS, SPLITS,
};
use polyth_core::rng::Rng;
use polyth_core::tensor::Tensor;
use polyth_core::train::{
    evaluate_split, run_training, train_epoch, AdamState, TrainConfig, TrainError,
};
use std::fs;
use std::path::{Path, PathBuf};

struct TempTree {
    root: PathBuf,
}

impl TempTree {
    fn new(tag: &str) -> TempTree {
        let root = std::env::temp_dir().join(format!("polyth-train-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&root);
        fs::create_dir_all(&root).unwrap();
        TempTree { root }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

impl Drop for TempTree {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.root);
    }
}

/// Color-separable classes: each class gets a dominant channel plus noise.
fn write_class_image(path: &Path, label: usize, size: usize, rng: &mut Rng) {
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
    fs::write(path, encode_ppm(&img)).unwrap();
}

fn build_dataset(root: &Path, train_per_class: usize, val_per_class: usize, size: usize) {
    let mut rng = Rng::new(90210);
    for (split, per_class) in [
        ("train", train_per_class),
        ("val", val_per_class),
        ("test", val_per_class),
    ] {
        for (label, class_dir) in CLASS_DIRS.iter().enumerate() {
            let dir = root.join(split).join(class_dir);
            fs::create_dir_all(&dir).unwrap();
            for i in 0..per_class {
                write_class_image(&dir.join(format!("img_{i:03}.ppm")), label, size, &mut rng);
            }
        }
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        input_size: (16, 16),
        num_classes: 3,
        stem_channels: 4,
        block_channels: vec![6],
        use_residual: true,
        head_widths: (8, 8),
        drop_prob: 0.25,
    }
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        steps_per_epoch: 3,
        max_epochs: 3,
        lr0: 0.001,
        lr_decay_factor: 1.0,
        lambda: 1.25,
        patience: 10,
        restarts: 1,
        seed,
        augment: false,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_descent_lowers_training_loss() {
    let tree = TempTree::new("descent");
    // 4-sample linearly separable set: 2 of class 0, 1 each of classes 1, 2
    let data = tree.path("data");
    let mut rng = Rng::new(1);
    for split in SPLITS {
        for (label, class_dir) in CLASS_DIRS.iter().enumerate() {
            let dir = data.join(split).join(class_dir);
            fs::create_dir_all(&dir).unwrap();
            let n = if split == "train" && label == 0 { 2 } else { 1 };
            for i in 0..n {
                write_class_image(&dir.join(format!("s{i}.ppm")), label, 16, &mut rng);
            }
        }
    }
    let index = load_dataset_index(&data).unwrap();
    let model_cfg = small_model();
    let mut cfg = small_train(77);
    cfg.batch_size = 4;
    cfg.steps_per_epoch = 1;

    let mut master = Rng::new(cfg.seed);
    let param_seed = master.next_u64();
    let stream_rng = master.fork();
    let mut dropout_rng = master.fork();
    let mut params = init_params(&model_cfg, param_seed).unwrap();
    let mut state = AdamState::new(&params);
    let opts = BatchOptions {
        batch_size: cfg.batch_size,
        target_size: model_cfg.input_size,
        augment: false,
        shuffle: true,
        ..BatchOptions::default()
    };
    let mut stream = CyclingBatches::new(&index, "train", &opts, stream_rng).unwrap();

    let mut first = None;
    let mut last = 0.0;
    for epoch in 1..=50 {
        let stats = train_epoch(
            &mut params,
            &model_cfg,
            &mut state,
            &mut stream,
            &cfg,
            epoch,
            &mut dropout_rng,
        )
        .unwrap();
        if first.is_none() {
            first = Some(stats.train_loss);
        }
        last = stats.train_loss;
    }
    assert!(
        last < first.unwrap(),
        "loss did not descend: first {} last {last}",
        first.unwrap()
    );
}

#[test]
fn zero_learning_rate_freezes_everything() {
    let tree = TempTree::new("zerolr");
    let data = tree.path("data");
    build_dataset(&data, 2, 2, 16);
    let index = load_dataset_index(&data).unwrap();
    let model_cfg = small_model();
    let mut cfg = small_train(5);
    cfg.lr0 = 0.0;
    cfg.max_epochs = 3;

    // a single zero-lr epoch records a loss but leaves parameters untouched
    let mut epoch_cfg = cfg.clone();
    epoch_cfg.steps_per_epoch = 1;
    let mut params = init_params(&model_cfg, 123).unwrap();
    let before: Vec<f64> = params
        .iter()
        .flat_map(|(_, p)| p.value.data().to_vec())
        .collect();
    let mut state = AdamState::new(&params);
    let opts = BatchOptions {
        batch_size: epoch_cfg.batch_size,
        target_size: model_cfg.input_size,
        augment: false,
        shuffle: true,
        ..BatchOptions::default()
    };
    let mut stream = CyclingBatches::new(&index, "train", &opts, Rng::new(9)).unwrap();
    let stats = train_epoch(
        &mut params,
        &model_cfg,
        &mut state,
        &mut stream,
        &epoch_cfg,
        1,
        &mut Rng::new(10),
    )
    .unwrap();
    assert!(stats.train_loss.is_finite() && stats.train_loss > 0.0);
    let after: Vec<f64> = params
        .iter()
        .flat_map(|(_, p)| p.value.data().to_vec())
        .collect();
    assert_eq!(before, after);

    let out = tree.path("run");
    let mut log = |_: &str| {};
    let summary = run_training(&cfg, &model_cfg, &index, &out, &mut log).unwrap();
    let records = &summary.restarts[0].records;
    assert_eq!(records.len(), 3);
    for r in records {
        assert_eq!(r.val_loss, records[0].val_loss);
        assert_eq!(r.val_accuracy, records[0].val_accuracy);
        assert_eq!(r.val_macro_f1, records[0].val_macro_f1);
    }
}

#[test]
fn train_epoch_is_deterministic_for_a_seed() {
    let tree = TempTree::new("epoch-det");
    let data = tree.path("data");
    build_dataset(&data, 3, 2, 16);
    let index = load_dataset_index(&data).unwrap();
    let model_cfg = small_model();
    let cfg = small_train(11);

    let run = || {
        let mut master = Rng::new(cfg.seed);
        let param_seed = master.next_u64();
        let stream_rng = master.fork();
        let mut dropout_rng = master.fork();
        let mut params = init_params(&model_cfg, param_seed).unwrap();
        let mut state = AdamState::new(&params);
        let opts = BatchOptions {
            batch_size: cfg.batch_size,
            target_size: model_cfg.input_size,
            augment: true,
            shuffle: true,
            ..BatchOptions::default()
        };
        let mut stream = CyclingBatches::new(&index, "train", &opts, stream_rng).unwrap();
        let stats = train_epoch(
            &mut params,
            &model_cfg,
            &mut state,
            &mut stream,
            &cfg,
            1,
            &mut dropout_rng,
        )
        .unwrap();
        let snapshot: Vec<f64> = params
            .iter()
            .flat_map(|(_, p)| p.value.data().to_vec())
            .collect();
        (stats, snapshot)
    };
    let (s1, p1) = run();
    let (s2, p2) = run();
    assert_eq!(s1, s2);
    assert_eq!(p1, p2);
}

#[test]
fn polythene_only_batch_gradient_scales_exactly_by_lambda() {
    let model_cfg = small_model();
    let params = init_params(&model_cfg, 3).unwrap();
    let mut rng = Rng::new(8);
    // batch size 4 (a power of two) so the batch-mean division is exact
    let batch = Tensor::from_fn(vec![4, 3, 16, 16], || rng.uniform(-1.0, 1.0));
    let labels = vec![2usize, 2, 2, 2];
    let y = one_hot(&labels, 3).unwrap();
    let (logits, _) = forward(&params, &model_cfg, &batch, false, &mut Rng::new(0)).unwrap();

    let (_, g1) = softmax_loss_grad(&y, &logits, &LossWeighting::new(1.0).unwrap()).unwrap();
    let (_, g125) = softmax_loss_grad(&y, &logits, &LossWeighting::new(1.25).unwrap()).unwrap();
    let mean1 = g1.scale(1.0 / 4.0);
    let mean125 = g125.scale(1.0 / 4.0);
    for (a, b) in mean125.data().iter().zip(mean1.data()) {
        assert_eq!(*a, 1.25 * *b);
    }
}

#[test]
fn evaluate_split_is_deterministic_and_consistent() {
    let tree = TempTree::new("eval");
    let data = tree.path("data");
    build_dataset(&data, 2, 3, 16);
    let index = load_dataset_index(&data).unwrap();
    let model_cfg = small_model();
    let params = init_params(&model_cfg, 2).unwrap();

    let a = evaluate_split(&params, &model_cfg, &index, "val", 1.25, 4).unwrap();
    let b = evaluate_split(&params, &model_cfg, &index, "val", 1.25, 4).unwrap();
    assert_eq!(a, b);
    let trace: usize = (0..3).map(|c| a.confusion[c][c]).sum();
    assert_eq!(a.accuracy, trace as f64 / a.samples as f64);
}

#[test]
fn run_training_selection_and_determinism() {
    let tree = TempTree::new("select");
    let data = tree.path("data");
    build_dataset(&data, 3, 2, 16);
    let index = load_dataset_index(&data).unwrap();
    let model_cfg = small_model();
    let mut cfg = small_train(21);
    cfg.restarts = 3;
    cfg.max_epochs = 2;

    let out1 = tree.path("run1");
    let out2 = tree.path("run2");
    let mut log = |_: &str| {};
    let s1 = run_training(&cfg, &model_cfg, &index, &out1, &mut log).unwrap();
    let s2 = run_training(&cfg, &model_cfg, &index, &out2, &mut log).unwrap();

    // the selected run's best val loss is the minimum over restarts
    let min = s1
        .restarts
        .iter()
        .map(|r| r.best_val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(s1.restarts[s1.selected].best_val_loss, min);
    assert_eq!(s1.selected, s2.selected);

    // artifacts byte-identical across runs
    for name in [
        "model.plnt",
        "summary.csv",
        "metrics_restart0.csv",
        "metrics_restart1.csv",
        "metrics_restart2.csv",
    ] {
        let a = fs::read(out1.join(name)).unwrap();
        let b = fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }

    // restarts=1 degenerates to a single run with the same artifacts
    let mut single = cfg.clone();
    single.restarts = 1;
    let out3 = tree.path("run3");
    let s3 = run_training(&single, &model_cfg, &index, &out3, &mut log).unwrap();
    assert_eq!(s3.selected, 0);
    assert_eq!(s3.restarts.len(), 1);
    assert_eq!(
        s3.restarts[0].records.len(),
        s1.restarts[0].records.len()
    );
    assert_eq!(
        fs::read(out1.join("metrics_restart0.csv")).unwrap(),
        fs::read(out3.join("metrics_restart0.csv")).unwrap()
    );
}

#[test]
fn empty_split_is_rejected_up_front() {
    let tree = TempTree::new("empty");
    let data = tree.path("data");
    build_dataset(&data, 2, 2, 16);
    // drain the train split
    for class_dir in CLASS_DIRS {
        let dir = data.join("train").join(class_dir);
        for entry in fs::read_dir(&dir).unwrap() {
            fs::remove_file(entry.unwrap().path()).unwrap();
        }
    }
    let index = load_dataset_index(&data).unwrap();
    let cfg = small_train(1);
    let mut log = |_: &str| {};
    match run_training(&cfg, &small_model(), &index, &tree.path("out"), &mut log) {
        Err(TrainError::Pipeline(e)) => {
            assert!(e.to_string().contains("train"));
        }
        other => panic!("expected empty-split rejection, got {other:?}"),
    }
}
