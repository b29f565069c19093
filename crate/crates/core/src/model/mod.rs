//! The classifier network: a small Xception-style backbone (stem convolution,
//! depthwise-separable blocks with residual projections, global average
//! pooling) followed by two fully connected layers with dropout and a final
//! 3-way logit layer. Softmax is applied by the loss or by inference callers,
//! not here.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CHECKPOINT_VERSION};

use crate::ops::{
    self, conv2d, conv2d_backward, dense, dense_backward, depthwise_conv,
    depthwise_conv_backward, dropout_forward, global_avg_pool, global_avg_pool_backward,
    maxpool2, maxpool2_backward, pointwise_conv, pointwise_conv_backward, relu, relu_backward,
    DropoutMask, OpError,
};
use crate::rng::Rng;
use crate::tensor::{ParamTensor, Tensor};
use std::collections::HashMap;
use std::fmt;

/// Spatial extent of the stem convolution kernel. Stride 2 with pad 1 halves
/// even inputs exactly.
const STEM_KERNEL: usize = 4;
const STEM_STRIDE: usize = 2;
const STEM_PAD: usize = 1;

/// Spatial extent of every depthwise kernel (stride 1, pad 1).
const DW_KERNEL: usize = 3;

#[derive(Debug)]
pub enum ModelError {
    InvalidConfig { message: String },
    Layer { layer: String, source: OpError },
    MismatchedCache { message: String },
    UnknownParam { name: String },
    Checkpoint(CheckpointError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig { message } => write!(f, "invalid config: {message}"),
            ModelError::Layer { layer, source } => write!(f, "{layer}: {source}"),
            ModelError::MismatchedCache { message } => write!(f, "mismatched cache: {message}"),
            ModelError::UnknownParam { name } => write!(f, "unknown parameter {name}"),
            ModelError::Checkpoint(e) => write!(f, "checkpoint: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<CheckpointError> for ModelError {
    fn from(e: CheckpointError) -> Self {
        ModelError::Checkpoint(e)
    }
}

fn at_layer(layer: &str) -> impl Fn(OpError) -> ModelError + '_ {
    move |source| ModelError::Layer {
        layer: layer.to_string(),
        source,
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input (height, width). Must be divisible by 2^(1 + number of blocks).
    pub input_size: (usize, usize),
    pub num_classes: usize,
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    pub use_residual: bool,
    pub head_widths: (usize, usize),
    pub drop_prob: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: (224, 224),
            num_classes: crate::loss::NUM_CLASSES,
            stem_channels: 32,
            block_channels: vec![32, 64, 128],
            use_residual: true,
            head_widths: (256, 128),
            drop_prob: 0.25,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |message: String| Err(ModelError::InvalidConfig { message });
        if self.num_classes != crate::loss::NUM_CLASSES {
            return bad(format!(
                "num_classes must be {}, got {}",
                crate::loss::NUM_CLASSES,
                self.num_classes
            ));
        }
        let div = 1usize << (1 + self.block_channels.len());
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return bad(format!(
                "input size {h}x{w} must be divisible by {div} (one stem halving plus {} block poolings)",
                self.block_channels.len()
            ));
        }
        if self.stem_channels == 0 {
            return bad("stem_channels must be positive".into());
        }
        if self.block_channels.contains(&0) {
            return bad("block_channels must all be positive".into());
        }
        if self.head_widths.0 == 0 || self.head_widths.1 == 0 {
            return bad("head widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return bad(format!("drop_prob must be in [0, 1), got {}", self.drop_prob));
        }
        Ok(())
    }

    /// Render as the key=value lines stored in checkpoints and accepted by
    /// config files. Keys are the field names.
    pub fn to_kv_text(&self) -> String {
        let blocks = self
            .block_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "input_size={},{}\nnum_classes={}\nstem_channels={}\nblock_channels={}\nuse_residual={}\nhead_widths={},{}\ndrop_prob={}\n",
            self.input_size.0,
            self.input_size.1,
            self.num_classes,
            self.stem_channels,
            blocks,
            self.use_residual,
            self.head_widths.0,
            self.head_widths.1,
            self.drop_prob
        )
    }

    /// Apply one key=value assignment. Unknown keys are rejected.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value {value:?} for {key}"))
        }
        fn parse_pair(key: &str, value: &str) -> Result<(usize, usize), String> {
            let parts: Vec<&str> = value.split(',').collect();
            if parts.len() != 2 {
                return Err(format!(
                    "{key} wants two comma-separated values, got {value:?}"
                ));
            }
            Ok((parse(key, parts[0].trim())?, parse(key, parts[1].trim())?))
        }
        match key {
            "input_size" => self.input_size = parse_pair(key, value)?,
            "num_classes" => self.num_classes = parse(key, value)?,
            "stem_channels" => self.stem_channels = parse(key, value)?,
            "block_channels" => {
                self.block_channels = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<Vec<usize>, String>>()?;
            }
            "use_residual" => self.use_residual = parse(key, value)?,
            "head_widths" => self.head_widths = parse_pair(key, value)?,
            "drop_prob" => self.drop_prob = parse(key, value)?,
            _ => return Err(format!("unknown model config key {key:?}")),
        }
        Ok(())
    }

    /// Parse a full key=value text blob (the checkpoint config section).
    pub fn from_kv_text(text: &str) -> Result<ModelConfig, String> {
        let mut cfg = ModelConfig::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {line:?}"))?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Channel count entering the head (last block, or the stem if no blocks).
    fn backbone_channels(&self) -> usize {
        *self.block_channels.last().unwrap_or(&self.stem_channels)
    }
}

/// Ordered, named parameter tensors. Iteration order is insertion order and
/// is identical across save/load.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, ParamTensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries
            .push((name.to_string(), ParamTensor::new(value)));
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    fn value(&self, name: &str) -> Result<&Tensor, ModelError> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| ModelError::UnknownParam { name: name.into() })
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<(), ModelError> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| ModelError::UnknownParam { name: name.into() })?;
        p.grad
            .add_assign(grad)
            .map_err(|e| ModelError::MismatchedCache {
                message: format!("gradient for {name}: {e}"),
            })
    }

    pub fn zero_grads(&mut self) {
        for (_, p) in &mut self.entries {
            p.zero_grad();
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamTensor)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Round every value through f32 and back, matching checkpoint precision.
    pub fn quantize_f32(&mut self) {
        for (_, p) in &mut self.entries {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Total number of scalar parameters.
pub fn param_count(params: &ParamStore) -> usize {
    params.iter().map(|(_, p)| p.value.len()).sum()
}

fn xavier_uniform(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, || rng.uniform(-a, a))
}

/// Create and initialize every parameter: weights from the Glorot uniform
/// law (bound sqrt(6/(fan_in+fan_out))), biases zero. Deterministic for a
/// given seed.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore, ModelError> {
    config.validate()?;
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();

    let stem = config.stem_channels;
    let k2 = STEM_KERNEL * STEM_KERNEL;
    store.insert(
        "stem.conv.weight",
        xavier_uniform(
            vec![stem, 3, STEM_KERNEL, STEM_KERNEL],
            3 * k2,
            stem * k2,
            &mut rng,
        ),
    );
    store.insert("stem.conv.bias", Tensor::zeros(vec![stem]));

    let mut cin = stem;
    for (i, &cout) in config.block_channels.iter().enumerate() {
        let d2 = DW_KERNEL * DW_KERNEL;
        store.insert(
            &format!("block{i}.sep1.dw.weight"),
            xavier_uniform(vec![cin, DW_KERNEL, DW_KERNEL], d2, d2, &mut rng),
        );
        store.insert(
            &format!("block{i}.sep1.pw.weight"),
            xavier_uniform(vec![cout, cin], cin, cout, &mut rng),
        );
        store.insert(&format!("block{i}.sep1.pw.bias"), Tensor::zeros(vec![cout]));
        store.insert(
            &format!("block{i}.sep2.dw.weight"),
            xavier_uniform(vec![cout, DW_KERNEL, DW_KERNEL], d2, d2, &mut rng),
        );
        store.insert(
            &format!("block{i}.sep2.pw.weight"),
            xavier_uniform(vec![cout, cout], cout, cout, &mut rng),
        );
        store.insert(&format!("block{i}.sep2.pw.bias"), Tensor::zeros(vec![cout]));
        if config.use_residual {
            store.insert(
                &format!("block{i}.proj.weight"),
                xavier_uniform(vec![cout, cin], cin, cout, &mut rng),
            );
            store.insert(&format!("block{i}.proj.bias"), Tensor::zeros(vec![cout]));
        }
        cin = cout;
    }

    let (h1, h2) = config.head_widths;
    let c = config.backbone_channels();
    store.insert("head.fc1.weight", xavier_uniform(vec![c, h1], c, h1, &mut rng));
    store.insert("head.fc1.bias", Tensor::zeros(vec![h1]));
    store.insert("head.fc2.weight", xavier_uniform(vec![h1, h2], h1, h2, &mut rng));
    store.insert("head.fc2.bias", Tensor::zeros(vec![h2]));
    store.insert(
        "head.out.weight",
        xavier_uniform(
            vec![h2, config.num_classes],
            h2,
            config.num_classes,
            &mut rng,
        ),
    );
    store.insert("head.out.bias", Tensor::zeros(vec![config.num_classes]));

    Ok(store)
}

#[derive(Debug)]
struct BlockCache {
    input: Tensor,
    dw1_mid: Tensor,
    sep1_out: Tensor,
    sep1_act: Tensor,
    dw2_mid: Tensor,
    sep2_out: Tensor,
    prepool: Tensor,
}

/// Every intermediate the backward pass needs, produced by [`forward`].
#[derive(Debug)]
pub struct ForwardCache {
    batch: Tensor,
    blocks: Vec<BlockCache>,
    backbone_out: Tensor,
    gap_out: Tensor,
    h1_pre: Tensor,
    h1_mask: Option<DropoutMask>,
    h1_out: Tensor,
    h2_pre: Tensor,
    h2_mask: Option<DropoutMask>,
    h2_out: Tensor,
    logits_shape: Vec<usize>,
}

/// Run the network over a batch (N x 3 x H x W), returning logits (N x 3)
/// and the cache for [`backward`]. Inference mode (`training == false`) is
/// deterministic and leaves `rng` untouched.
pub fn forward(
    params: &ParamStore,
    config: &ModelConfig,
    batch: &Tensor,
    training: bool,
    rng: &mut Rng,
) -> Result<(Tensor, ForwardCache), ModelError> {
    if batch.rank() != 4
        || batch.shape()[1] != 3
        || batch.shape()[2] != config.input_size.0
        || batch.shape()[3] != config.input_size.1
    {
        return Err(ModelError::Layer {
            layer: "input".into(),
            source: OpError::ShapeMismatch {
                op: "forward",
                message: format!(
                    "batch shape {:?} != expected [N, 3, {}, {}]",
                    batch.shape(),
                    config.input_size.0,
                    config.input_size.1
                ),
            },
        });
    }

    let mut x = conv2d(
        batch,
        params.value("stem.conv.weight")?,
        params.value("stem.conv.bias")?,
        STEM_STRIDE,
        STEM_PAD,
    )
    .map_err(at_layer("stem.conv"))?;

    let mut blocks = Vec::with_capacity(config.block_channels.len());
    for i in 0..config.block_channels.len() {
        let layer = format!("block{i}");
        let input = x;

        let dw1_mid = depthwise_conv(
            &input,
            params.value(&format!("block{i}.sep1.dw.weight"))?,
            1,
            1,
        )
        .map_err(at_layer(&layer))?;
        let sep1_out = pointwise_conv(
            &dw1_mid,
            params.value(&format!("block{i}.sep1.pw.weight"))?,
            params.value(&format!("block{i}.sep1.pw.bias"))?,
        )
        .map_err(at_layer(&layer))?;
        let sep1_act = relu(&sep1_out);

        let dw2_mid = depthwise_conv(
            &sep1_act,
            params.value(&format!("block{i}.sep2.dw.weight"))?,
            1,
            1,
        )
        .map_err(at_layer(&layer))?;
        let sep2_out = pointwise_conv(
            &dw2_mid,
            params.value(&format!("block{i}.sep2.pw.weight"))?,
            params.value(&format!("block{i}.sep2.pw.bias"))?,
        )
        .map_err(at_layer(&layer))?;
        let sep2_act = relu(&sep2_out);

        // residual join happens at stride 1, then the shared pool halves both paths
        let prepool = if config.use_residual {
            let proj = pointwise_conv(
                &input,
                params.value(&format!("block{i}.proj.weight"))?,
                params.value(&format!("block{i}.proj.bias"))?,
            )
            .map_err(at_layer(&layer))?;
            sep2_act.add(&proj).map_err(|e| ModelError::Layer {
                layer: layer.clone(),
                source: OpError::ShapeMismatch {
                    op: "residual_add",
                    message: e.to_string(),
                },
            })?
        } else {
            sep2_act
        };

        x = maxpool2(&prepool).map_err(at_layer(&layer))?;
        blocks.push(BlockCache {
            input,
            dw1_mid,
            sep1_out,
            sep1_act,
            dw2_mid,
            sep2_out,
            prepool,
        });
    }

    let backbone_out = x;
    let gap_out = global_avg_pool(&backbone_out).map_err(at_layer("global_avg_pool"))?;

    let h1_pre = dense(
        &gap_out,
        params.value("head.fc1.weight")?,
        params.value("head.fc1.bias")?,
    )
    .map_err(at_layer("head.fc1"))?;
    let h1_act = relu(&h1_pre);
    let (h1_out, h1_mask) = dropout_forward(&h1_act, config.drop_prob, training, rng)
        .map_err(at_layer("head.dropout1"))?;

    let h2_pre = dense(
        &h1_out,
        params.value("head.fc2.weight")?,
        params.value("head.fc2.bias")?,
    )
    .map_err(at_layer("head.fc2"))?;
    let h2_act = relu(&h2_pre);
    let (h2_out, h2_mask) = dropout_forward(&h2_act, config.drop_prob, training, rng)
        .map_err(at_layer("head.dropout2"))?;

    let logits = dense(
        &h2_out,
        params.value("head.out.weight")?,
        params.value("head.out.bias")?,
    )
    .map_err(at_layer("head.out"))?;

    let cache = ForwardCache {
        batch: batch.clone(),
        blocks,
        backbone_out,
        gap_out,
        h1_pre,
        h1_mask,
        h1_out,
        h2_pre,
        h2_mask,
        h2_out,
        logits_shape: logits.shape().to_vec(),
    };
    Ok((logits, cache))
}

/// Backpropagate `dlogits` through the cached forward pass, accumulating
/// into every parameter's `grad`. The input-batch gradient is not exposed.
pub fn backward(
    params: &mut ParamStore,
    config: &ModelConfig,
    cache: &ForwardCache,
    dlogits: &Tensor,
) -> Result<(), ModelError> {
    if dlogits.shape() != cache.logits_shape.as_slice() {
        return Err(ModelError::MismatchedCache {
            message: format!(
                "dlogits shape {:?} != cached logits shape {:?}",
                dlogits.shape(),
                cache.logits_shape
            ),
        });
    }
    if cache.blocks.len() != config.block_channels.len() {
        return Err(ModelError::MismatchedCache {
            message: format!(
                "cache has {} blocks, config wants {}",
                cache.blocks.len(),
                config.block_channels.len()
            ),
        });
    }

    // gradients are collected first, then accumulated, so reads of parameter
    // values never alias writes of their grads
    let mut pending: Vec<(String, Tensor)> = Vec::new();

    let out_grads = dense_backward(&cache.h2_out, params.value("head.out.weight")?, dlogits)
        .map_err(at_layer("head.out"))?;
    pending.push(("head.out.weight".into(), out_grads.dweights));
    pending.push(("head.out.bias".into(), out_grads.dbias));

    let dh2_drop = ops::dropout_backward(&out_grads.dinput, cache.h2_mask.as_ref())
        .map_err(at_layer("head.dropout2"))?;
    let dh2_pre = relu_backward(&cache.h2_pre, &dh2_drop).map_err(at_layer("head.fc2"))?;
    let fc2_grads = dense_backward(&cache.h1_out, params.value("head.fc2.weight")?, &dh2_pre)
        .map_err(at_layer("head.fc2"))?;
    pending.push(("head.fc2.weight".into(), fc2_grads.dweights));
    pending.push(("head.fc2.bias".into(), fc2_grads.dbias));

    let dh1_drop = ops::dropout_backward(&fc2_grads.dinput, cache.h1_mask.as_ref())
        .map_err(at_layer("head.dropout1"))?;
    let dh1_pre = relu_backward(&cache.h1_pre, &dh1_drop).map_err(at_layer("head.fc1"))?;
    let fc1_grads = dense_backward(&cache.gap_out, params.value("head.fc1.weight")?, &dh1_pre)
        .map_err(at_layer("head.fc1"))?;
    pending.push(("head.fc1.weight".into(), fc1_grads.dweights));
    pending.push(("head.fc1.bias".into(), fc1_grads.dbias));

    let mut dx = global_avg_pool_backward(cache.backbone_out.shape(), &fc1_grads.dinput)
        .map_err(at_layer("global_avg_pool"))?;

    for (i, block) in cache.blocks.iter().enumerate().rev() {
        let layer = format!("block{i}");
        let dprepool = maxpool2_backward(&block.prepool, &dx).map_err(at_layer(&layer))?;

        let mut dinput_total: Option<Tensor> = None;
        if config.use_residual {
            let proj = pointwise_conv_backward(
                &block.input,
                params.value(&format!("block{i}.proj.weight"))?,
                &dprepool,
            )
            .map_err(at_layer(&layer))?;
            pending.push((format!("block{i}.proj.weight"), proj.dweights));
            pending.push((format!("block{i}.proj.bias"), proj.dbias));
            dinput_total = Some(proj.dinput);
        }

        let dsep2_out = relu_backward(&block.sep2_out, &dprepool).map_err(at_layer(&layer))?;
        let pw2 = pointwise_conv_backward(
            &block.dw2_mid,
            params.value(&format!("block{i}.sep2.pw.weight"))?,
            &dsep2_out,
        )
        .map_err(at_layer(&layer))?;
        pending.push((format!("block{i}.sep2.pw.weight"), pw2.dweights));
        pending.push((format!("block{i}.sep2.pw.bias"), pw2.dbias));
        let (dsep1_act, ddw2) = depthwise_conv_backward(
            &block.sep1_act,
            params.value(&format!("block{i}.sep2.dw.weight"))?,
            1,
            1,
            &pw2.dinput,
        )
        .map_err(at_layer(&layer))?;
        pending.push((format!("block{i}.sep2.dw.weight"), ddw2));

        let dsep1_out = relu_backward(&block.sep1_out, &dsep1_act).map_err(at_layer(&layer))?;
        let pw1 = pointwise_conv_backward(
            &block.dw1_mid,
            params.value(&format!("block{i}.sep1.pw.weight"))?,
            &dsep1_out,
        )
        .map_err(at_layer(&layer))?;
        pending.push((format!("block{i}.sep1.pw.weight"), pw1.dweights));
        pending.push((format!("block{i}.sep1.pw.bias"), pw1.dbias));
        let (dinput_main, ddw1) = depthwise_conv_backward(
            &block.input,
            params.value(&format!("block{i}.sep1.dw.weight"))?,
            1,
            1,
            &pw1.dinput,
        )
        .map_err(at_layer(&layer))?;
        pending.push((format!("block{i}.sep1.dw.weight"), ddw1));

        dx = match dinput_total {
            Some(mut total) => {
                total
                    .add_assign(&dinput_main)
                    .map_err(|e| ModelError::MismatchedCache {
                        message: e.to_string(),
                    })?;
                total
            }
            None => dinput_main,
        };
    }

    let stem = conv2d_backward(
        &cache.batch,
        params.value("stem.conv.weight")?,
        STEM_STRIDE,
        STEM_PAD,
        &dx,
    )
    .map_err(at_layer("stem.conv"))?;
    pending.push(("stem.conv.weight".into(), stem.dkernels));
    pending.push(("stem.conv.bias".into(), stem.dbias));

    for (name, grad) in pending {
        params.accumulate_grad(&name, &grad)?;
    }
    Ok(())
}
