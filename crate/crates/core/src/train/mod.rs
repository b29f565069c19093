//! The training recipe: Adam updates over shuffled augmented batches, a
//! per-epoch learning-rate decay, early stopping on validation loss, and
//! several independent restarts with the best run kept.

mod adam;

pub use adam::{adam_step, AdamState};

use crate::loss::{one_hot, softmax_loss_grad, LossError, LossWeighting};
use crate::metrics::MetricsReport;
use crate::model::{
    backward, forward, init_params, param_count, save_checkpoint, ModelConfig, ModelError,
    ParamStore,
};
use crate::pipeline::{batch_iter, BatchOptions, CyclingBatches, DatasetIndex, PipelineError};
use crate::rng::Rng;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug)]
pub enum TrainError {
    InvalidConfig { message: String },
    Pipeline(PipelineError),
    Model(ModelError),
    Loss(LossError),
    Io { path: PathBuf, source: std::io::Error },
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::InvalidConfig { message } => write!(f, "invalid config: {message}"),
            TrainError::Pipeline(e) => write!(f, "{e}"),
            TrainError::Model(e) => write!(f, "{e}"),
            TrainError::Loss(e) => write!(f, "{e}"),
            TrainError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<PipelineError> for TrainError {
    fn from(e: PipelineError) -> Self {
        TrainError::Pipeline(e)
    }
}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

/// Training hyperparameters. The defaults follow the recipe this crate
/// implements: batch 32, 25 steps per epoch, Adam(0.9, 0.999, 1e-8), initial
/// learning rate 0.001 divided by 10 after every epoch, loss weight 1.25,
/// early stopping with patience 5, five restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Augment training batches (evaluation never augments).
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            steps_per_epoch: 25,
            max_epochs: 15,
            lr0: 0.001,
            lr_decay_factor: 10.0,
            lambda: 1.25,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 5,
            min_delta: 1e-4,
            restarts: 5,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |message: String| Err(TrainError::InvalidConfig { message });
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.max_epochs == 0 {
            return bad("batch_size, steps_per_epoch, and max_epochs must be positive".into());
        }
        // lr0 == 0 is allowed: it freezes parameters, which the degenerate
        // cases in the tests rely on
        if !(self.lr0 >= 0.0) {
            return bad(format!("lr0 must be nonnegative, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad(format!(
                "lr_decay_factor must be positive, got {}",
                self.lr_decay_factor
            ));
        }
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must be in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!(
                "min_delta must be nonnegative, got {}",
                self.min_delta
            ));
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        Ok(())
    }

    /// Apply one key=value assignment. Keys are the field names.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value {value:?} for {key}"))
        }
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "min_delta" => self.min_delta = parse(key, value)?,
            "restarts" => self.restarts = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            _ => return Err(format!("unknown training config key {key:?}")),
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: lr0 / decay^(epoch - 1).
pub fn lr_for_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    cfg.lr0 / cfg.lr_decay_factor.powi(epoch as i32 - 1)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub elapsed_seconds: f64,
}

/// Validation-loss early stopping: improvement means dropping below
/// best - min_delta; after `patience` consecutive non-improvements the run
/// stops. The strictly lowest loss seen is tracked separately by the
/// training loop so the best epoch's parameters are the ones retained.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    reference: f64,
    bad_epochs: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            reference: f64::INFINITY,
            bad_epochs: 0,
        }
    }
}

impl EarlyStopping {
    pub fn new() -> EarlyStopping {
        EarlyStopping::default()
    }

    /// Returns (stop, best reference loss so far).
    pub fn update(&mut self, val_loss: f64, cfg: &TrainConfig) -> (bool, f64) {
        if val_loss < self.reference - cfg.min_delta {
            self.reference = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        (self.bad_epochs >= cfg.patience, self.reference)
    }
}

/// Functional form of [`EarlyStopping::update`] over explicit state.
pub fn early_stop_update(
    state: &mut EarlyStopping,
    current_val_loss: f64,
    cfg: &TrainConfig,
) -> (bool, f64) {
    state.update(current_val_loss, cfg)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEpochStats {
    pub train_loss: f64,
    pub train_accuracy: f64,
}

/// Run exactly `steps_per_epoch` optimizer steps: forward in training mode,
/// fused weighted softmax loss, batch-mean gradient, backward, Adam update.
/// Reported loss and accuracy are means over every sample the epoch saw.
pub fn train_epoch(
    params: &mut ParamStore,
    model_cfg: &ModelConfig,
    state: &mut AdamState,
    stream: &mut CyclingBatches,
    cfg: &TrainConfig,
    epoch: usize,
    dropout_rng: &mut Rng,
) -> Result<TrainEpochStats, TrainError> {
    let lr = lr_for_epoch(cfg, epoch);
    let weighting = LossWeighting::new(cfg.lambda)?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut samples = 0usize;

    for _ in 0..cfg.steps_per_epoch {
        let batch = stream.next_batch()?;
        let (logits, cache) = forward(params, model_cfg, &batch.x, true, dropout_rng)?;
        let y = one_hot(&batch.labels, model_cfg.num_classes)?;
        let (loss, mut dlogits) = softmax_loss_grad(&y, &logits, &weighting)?;

        // batch-summed loss becomes a batch mean before the step so the
        // learning rate's meaning does not depend on batch size
        let b = batch.labels.len() as f64;
        for g in dlogits.data_mut() {
            *g /= b;
        }

        params.zero_grads();
        backward(params, model_cfg, &cache, &dlogits)?;
        adam_step(params, state, lr, cfg)?;

        loss_sum += loss;
        for (i, &label) in batch.labels.iter().enumerate() {
            let row =
                &logits.data()[i * model_cfg.num_classes..(i + 1) * model_cfg.num_classes];
            if argmax(row) == label {
                correct += 1;
            }
        }
        samples += batch.labels.len();
    }

    Ok(TrainEpochStats {
        train_loss: loss_sum / samples as f64,
        train_accuracy: correct as f64 / samples as f64,
    })
}

/// Evaluate a split in inference mode, without augmentation, in file order.
pub fn evaluate_split(
    params: &ParamStore,
    model_cfg: &ModelConfig,
    index: &DatasetIndex,
    split: &str,
    lambda: f64,
    batch_size: usize,
) -> Result<MetricsReport, TrainError> {
    let weighting = LossWeighting::new(lambda)?;
    let opts = BatchOptions {
        batch_size,
        target_size: model_cfg.input_size,
        augment: false,
        shuffle: false,
        ..BatchOptions::default()
    };
    let mut rng = Rng::new(0); // unused: no shuffle, no augmentation, no dropout
    let mut loss_sum = 0.0;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for item in batch_iter(index, split, &opts, rng.fork())? {
        let batch = item?;
        let (logits, _) = forward(params, model_cfg, &batch.x, false, &mut rng)?;
        let y = one_hot(&batch.labels, model_cfg.num_classes)?;
        let (loss, _) = softmax_loss_grad(&y, &logits, &weighting)?;
        loss_sum += loss;
        for (i, &label) in batch.labels.iter().enumerate() {
            let row =
                &logits.data()[i * model_cfg.num_classes..(i + 1) * model_cfg.num_classes];
            preds.push(argmax(row));
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(TrainError::Pipeline(PipelineError::EmptySplit {
            split: split.to_string(),
        }));
    }
    Ok(MetricsReport::compute(&preds, &labels, loss_sum)?)
}

/// Everything one restart produced.
#[derive(Debug, Clone)]
pub struct RestartResult {
    pub restart: usize,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Outcome of [`run_training`].
#[derive(Debug)]
pub struct TrainingSummary {
    pub restarts: Vec<RestartResult>,
    pub selected: usize,
    pub checkpoint_path: PathBuf,
    pub parameter_count: usize,
}

fn float_cell(v: f64) -> String {
    format!("{v}")
}

/// Metrics CSV rows are fully reproducible, so the elapsed_s column is a
/// fixed 0.000 placeholder; wall-clock timings live in the in-memory records
/// and the console output instead.
fn write_metrics_csv(path: &Path, records: &[EpochRecord]) -> Result<(), TrainError> {
    let mut text =
        String::from("epoch,lr,train_loss,train_acc,val_loss,val_acc,val_macro_f1,elapsed_s\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},0.000\n",
            r.epoch,
            float_cell(r.lr),
            float_cell(r.train_loss),
            float_cell(r.train_accuracy),
            float_cell(r.val_loss),
            float_cell(r.val_accuracy),
            float_cell(r.val_macro_f1),
        ));
    }
    fs::write(path, text).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_summary_csv(
    path: &Path,
    restarts: &[RestartResult],
    selected: usize,
) -> Result<(), TrainError> {
    let mut text = String::from("restart,best_epoch,best_val_loss,selected\n");
    for r in restarts {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.restart,
            r.best_epoch,
            float_cell(r.best_val_loss),
            if r.restart == selected { 1 } else { 0 }
        ));
    }
    fs::write(path, text).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct RestartOutcome {
    result: RestartResult,
    best_params: ParamStore,
}

fn run_one_restart(
    restart: usize,
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    index: &DatasetIndex,
    log: &mut dyn FnMut(&str),
) -> Result<RestartOutcome, TrainError> {
    let seed = cfg.seed.wrapping_add(restart as u64);
    let mut master = Rng::new(seed);
    let param_seed = master.next_u64();
    let stream_rng = master.fork();
    let mut dropout_rng = master.fork();

    let mut params = init_params(model_cfg, param_seed)?;
    let mut state = AdamState::new(&params);
    let opts = BatchOptions {
        batch_size: cfg.batch_size,
        target_size: model_cfg.input_size,
        augment: cfg.augment,
        shuffle: true,
        ..BatchOptions::default()
    };
    let mut stream = CyclingBatches::new(index, "train", &opts, stream_rng)?;

    let mut stopper = EarlyStopping::new();
    let mut records = Vec::new();
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let stats = train_epoch(
            &mut params,
            model_cfg,
            &mut state,
            &mut stream,
            cfg,
            epoch,
            &mut dropout_rng,
        )?;
        let val = evaluate_split(&params, model_cfg, index, "val", cfg.lambda, cfg.batch_size)?;
        let elapsed = started.elapsed().as_secs_f64();
        let record = EpochRecord {
            epoch,
            lr: lr_for_epoch(cfg, epoch),
            train_loss: stats.train_loss,
            train_accuracy: stats.train_accuracy,
            val_loss: val.mean_loss,
            val_accuracy: val.accuracy,
            val_macro_f1: val.macro_f1,
            elapsed_seconds: elapsed,
        };
        log(&format!(
            "restart {restart} epoch {epoch}: lr {:.2e} train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3} f1 {:.3} ({elapsed:.1}s)",
            record.lr,
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy,
            record.val_macro_f1,
        ));
        records.push(record);

        // retain the strictly best epoch's parameters
        if val.mean_loss < best_val_loss {
            best_val_loss = val.mean_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        let (stop, _) = stopper.update(val.mean_loss, cfg);
        if stop {
            log(&format!(
                "restart {restart}: early stop after epoch {epoch} (best epoch {best_epoch})"
            ));
            break;
        }
    }

    Ok(RestartOutcome {
        result: RestartResult {
            restart,
            seed,
            records,
            best_epoch,
            best_val_loss,
        },
        best_params,
    })
}

/// The full recipe: `restarts` independent runs seeded seed+0..seed+r-1,
/// keeping the run with the lowest best validation loss (ties go to the
/// lower restart index). Writes `metrics_restart<r>.csv` per restart,
/// `summary.csv`, and the selected `model.plnt` checkpoint into `out_dir`.
pub fn run_training(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    index: &DatasetIndex,
    out_dir: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<TrainingSummary, TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    for split in ["train", "val"] {
        let s = index.split(split).expect("known split");
        if s.total() == 0 {
            return Err(TrainError::Pipeline(PipelineError::EmptySplit {
                split: split.to_string(),
            }));
        }
    }
    if LossWeighting::new(cfg.lambda)?.is_extreme() {
        log(&format!(
            "warning: lambda {} is very large; the other classes will be drowned out",
            cfg.lambda
        ));
    }
    fs::create_dir_all(out_dir).map_err(|source| TrainError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut outcomes = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let outcome = run_one_restart(restart, cfg, model_cfg, index, log)?;
        write_metrics_csv(
            &out_dir.join(format!("metrics_restart{restart}.csv")),
            &outcome.result.records,
        )?;
        outcomes.push(outcome);
    }

    // a NaN loss (diverged run) orders as worst and is never selected
    let selected = outcomes
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.result
                .best_val_loss
                .partial_cmp(&b.result.best_val_loss)
                .unwrap_or_else(|| {
                    if a.result.best_val_loss.is_nan() {
                        std::cmp::Ordering::Greater
                    } else {
                        std::cmp::Ordering::Less
                    }
                })
        })
        .map(|(i, _)| i)
        .expect("at least one restart");

    let results: Vec<RestartResult> = outcomes.iter().map(|o| o.result.clone()).collect();
    write_summary_csv(&out_dir.join("summary.csv"), &results, selected)?;

    let mut best = outcomes
        .into_iter()
        .nth(selected)
        .expect("index valid")
        .best_params;
    best.quantize_f32();
    let checkpoint_path = out_dir.join("model.plnt");
    save_checkpoint(&best, model_cfg, &checkpoint_path).map_err(ModelError::from)?;

    let parameter_count = param_count(&best);
    log(&format!(
        "selected restart {selected} (best val loss {}); checkpoint at {} ({parameter_count} parameters)",
        results[selected].best_val_loss,
        checkpoint_path.display()
    ));

    Ok(TrainingSummary {
        restarts: results,
        selected,
        checkpoint_path,
        parameter_count,
    })
}
