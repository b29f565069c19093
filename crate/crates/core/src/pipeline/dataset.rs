//! Dataset directory indexing, per-channel normalization, and batch assembly.
//!
//! Expected layout: `root/{train,val,test}/{0_nonplastic,1_plastic_other,
//! 2_polythene}/*.ppm`. Listings are sorted so every scan of the same tree
//! yields the same order.

use super::{augment, decode_ppm, resize_bilinear, AugmentParams, LabeledImage, PipelineError,
    RawImage};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::fs;
use std::path::{Path, PathBuf};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const CLASS_DIRS: [&str; 3] = ["0_nonplastic", "1_plastic_other", "2_polythene"];

/// Community-standard ImageNet channel statistics.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Per-class sorted file lists for one split.
#[derive(Debug, Clone, Default)]
pub struct SplitIndex {
    pub files: [Vec<PathBuf>; 3],
}

impl SplitIndex {
    pub fn counts(&self) -> [usize; 3] {
        [self.files[0].len(), self.files[1].len(), self.files[2].len()]
    }

    pub fn total(&self) -> usize {
        self.files.iter().map(|f| f.len()).sum()
    }

    /// Flattened (path, label) pairs, class-major, each class sorted.
    pub fn samples(&self) -> Vec<(PathBuf, usize)> {
        let mut out = Vec::with_capacity(self.total());
        for (label, files) in self.files.iter().enumerate() {
            for f in files {
                out.push((f.clone(), label));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub train: SplitIndex,
    pub val: SplitIndex,
    pub test: SplitIndex,
    /// Non-fatal oddities found while scanning (empty class dirs and such).
    pub warnings: Vec<String>,
}

impl DatasetIndex {
    pub fn split(&self, name: &str) -> Option<&SplitIndex> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

fn scan_split(
    root: &Path,
    split: &str,
    warnings: &mut Vec<String>,
) -> Result<SplitIndex, PipelineError> {
    let split_dir = root.join(split);
    if !split_dir.is_dir() {
        return Err(PipelineError::MissingSplit { path: split_dir });
    }
    let mut index = SplitIndex::default();
    for (label, class_dir) in CLASS_DIRS.iter().enumerate() {
        let dir = split_dir.join(class_dir);
        if !dir.is_dir() {
            warnings.push(format!("{split}/{class_dir}: directory missing"));
            continue;
        }
        let mut files = Vec::new();
        let entries = fs::read_dir(&dir).map_err(|source| PipelineError::Io {
            path: dir.clone(),
            source,
        })?;
        for entry in entries {
            let entry = entry.map_err(|source| PipelineError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
                files.push(path);
            }
        }
        files.sort();
        if files.is_empty() {
            warnings.push(format!("{split}/{class_dir}: no ppm files"));
        }
        index.files[label] = files;
    }
    Ok(index)
}

/// Scan the dataset tree. Missing split directories are fatal; empty class
/// directories only produce warnings.
pub fn load_dataset_index(root: &Path) -> Result<DatasetIndex, PipelineError> {
    let mut warnings = Vec::new();
    let train = scan_split(root, "train", &mut warnings)?;
    let val = scan_split(root, "val", &mut warnings)?;
    let test = scan_split(root, "test", &mut warnings)?;
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        train,
        val,
        test,
        warnings,
    })
}

/// Decode one dataset file with its label.
pub fn load_labeled(path: &Path, label: usize) -> Result<LabeledImage, PipelineError> {
    if label > 2 {
        return Err(PipelineError::LabelOutOfRange { label });
    }
    let bytes = fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let image = decode_ppm(&bytes).map_err(|source| PipelineError::Undecodable {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(LabeledImage {
        image,
        label,
        source_path: path.display().to_string(),
    })
}

/// Scale bytes to [0, 1] and normalize per channel with the ImageNet
/// statistics, producing a 1 x 3 x H x W tensor (channel-major).
pub fn normalize_image(img: &RawImage) -> Tensor {
    let (w, h) = (img.width(), img.height());
    let mut out = Tensor::zeros(vec![1, 3, h, w]);
    let data = out.data_mut();
    for c in 0..3 {
        let inv_std = 1.0 / IMAGENET_STD[c];
        let mean = IMAGENET_MEAN[c];
        for y in 0..h {
            for x in 0..w {
                let v = img.get(x, y, c) as f64 / 255.0;
                data[(c * h + y) * w + x] = (v - mean) * inv_std;
            }
        }
    }
    out
}

/// [`normalize_image`] restricted to the model's native 224 x 224 input.
/// Resizing beforehand is the caller's job.
pub fn normalize_to_input(img: &RawImage) -> Result<Tensor, PipelineError> {
    if (img.width(), img.height()) != (224, 224) {
        return Err(PipelineError::WrongDimensions {
            expected: (224, 224),
            got: (img.width(), img.height()),
        });
    }
    Ok(normalize_image(img))
}

/// One batch: inputs B x 3 x H x W plus the class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// How batches are assembled.
#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub batch_size: usize,
    /// Resize target (height, width); the model input size.
    pub target_size: (usize, usize),
    pub augment: bool,
    pub aug_params: AugmentParams,
    /// Seeded shuffle of the split before batching. Evaluation turns this
    /// off to keep file order.
    pub shuffle: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            batch_size: 32,
            target_size: (224, 224),
            augment: false,
            aug_params: AugmentParams::default(),
            shuffle: true,
        }
    }
}

/// One pass over a split: a seeded shuffle, then batches of `batch_size`
/// with the final short batch emitted as-is.
pub struct BatchIter {
    samples: Vec<(PathBuf, usize)>,
    pos: usize,
    opts: BatchOptions,
    rng: Rng,
}

pub fn batch_iter(
    index: &DatasetIndex,
    split: &str,
    opts: &BatchOptions,
    mut rng: Rng,
) -> Result<BatchIter, PipelineError> {
    let split_index = index
        .split(split)
        .ok_or_else(|| PipelineError::InvalidArgument {
            message: format!("unknown split {split:?} (expected train, val, or test)"),
        })?;
    if opts.batch_size == 0 {
        return Err(PipelineError::InvalidArgument {
            message: "batch_size must be positive".into(),
        });
    }
    opts.aug_params.validate()?;
    let mut samples = split_index.samples();
    if opts.shuffle {
        rng.shuffle(&mut samples);
    }
    Ok(BatchIter {
        samples,
        pos: 0,
        opts: opts.clone(),
        rng,
    })
}

impl BatchIter {
    fn load_one(&mut self, path: &Path, label: usize) -> Result<(Tensor, usize), PipelineError> {
        let labeled = load_labeled(path, label)?;
        let (th, tw) = self.opts.target_size;
        let resized = resize_bilinear(&labeled.image, tw, th)?;
        let finished = if self.opts.augment {
            augment(&resized, &self.opts.aug_params, &mut self.rng)
        } else {
            resized
        };
        Ok((normalize_image(&finished), label))
    }
}

impl Iterator for BatchIter {
    type Item = Result<Batch, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.samples.len() {
            return None;
        }
        let end = (self.pos + self.opts.batch_size).min(self.samples.len());
        let todo: Vec<(PathBuf, usize)> = self.samples[self.pos..end].to_vec();
        self.pos = end;

        let (th, tw) = self.opts.target_size;
        let b = todo.len();
        let mut x = Tensor::zeros(vec![b, 3, th, tw]);
        let sample_len = 3 * th * tw;
        let mut labels = Vec::with_capacity(b);
        for (i, (path, label)) in todo.iter().enumerate() {
            match self.load_one(path, *label) {
                Ok((t, label)) => {
                    x.data_mut()[i * sample_len..(i + 1) * sample_len]
                        .copy_from_slice(t.data());
                    labels.push(label);
                }
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(Batch { x, labels }))
    }
}

/// Endless batch source for training: each exhausted pass starts a fresh
/// seeded shuffle derived from the same generator, so the whole stream is a
/// pure function of the initial seed.
pub struct CyclingBatches<'a> {
    index: &'a DatasetIndex,
    split: String,
    opts: BatchOptions,
    rng: Rng,
    current: BatchIter,
}

impl<'a> CyclingBatches<'a> {
    pub fn new(
        index: &'a DatasetIndex,
        split: &str,
        opts: &BatchOptions,
        mut rng: Rng,
    ) -> Result<CyclingBatches<'a>, PipelineError> {
        let split_index = index
            .split(split)
            .ok_or_else(|| PipelineError::InvalidArgument {
                message: format!("unknown split {split:?}"),
            })?;
        if split_index.total() == 0 {
            return Err(PipelineError::EmptySplit {
                split: split.to_string(),
            });
        }
        let pass_rng = rng.fork();
        let current = batch_iter(index, split, opts, pass_rng)?;
        Ok(CyclingBatches {
            index,
            split: split.to_string(),
            opts: opts.clone(),
            rng,
            current,
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch, PipelineError> {
        loop {
            if let Some(item) = self.current.next() {
                return item;
            }
            let pass_rng = self.rng.fork();
            self.current = batch_iter(self.index, &self.split, &self.opts, pass_rng)?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::encode_ppm;

    struct TempTree {
        root: PathBuf,
    }

    impl TempTree {
        fn new(tag: &str) -> TempTree {
            let root = std::env::temp_dir().join(format!(
                "polyth-dataset-{tag}-{}",
                std::process::id()
            ));
            let _ = fs::remove_dir_all(&root);
            fs::create_dir_all(&root).unwrap();
            TempTree { root }
        }
    }

    impl Drop for TempTree {
        fn drop(&mut self) {
            let _ = fs::remove_dir_all(&self.root);
        }
    }

    fn write_image(path: &Path, w: usize, h: usize, rgb: [u8; 3]) {
        let img = RawImage::filled(w, h, rgb);
        fs::write(path, encode_ppm(&img)).unwrap();
    }

    fn build_tree(root: &Path, per_class: usize, size: usize) {
        for split in SPLITS {
            for (label, class_dir) in CLASS_DIRS.iter().enumerate() {
                let dir = root.join(split).join(class_dir);
                fs::create_dir_all(&dir).unwrap();
                for i in 0..per_class {
                    let mut rgb = [10u8, 10, 10];
                    rgb[label] = 200;
                    write_image(&dir.join(format!("img_{i:03}.ppm")), size, size, rgb);
                }
            }
        }
    }

    #[test]
    fn normalize_hand_values() {
        let img = RawImage::filled(2, 2, [255, 0, 0]);
        let t = normalize_image(&img);
        // channel 0, byte 255 -> (1 - 0.485) / 0.229
        assert!((t.data()[0] - 2.2489083).abs() < 1e-6);
        // channel 2, byte 0 -> (0 - 0.406) / 0.225
        let c2 = t.data()[2 * 4];
        assert!((c2 - (-1.8044444)).abs() < 1e-6);
    }

    #[test]
    fn normalize_mean_bytes_center_near_zero() {
        let rgb = [
            (255.0 * IMAGENET_MEAN[0]).round() as u8,
            (255.0 * IMAGENET_MEAN[1]).round() as u8,
            (255.0 * IMAGENET_MEAN[2]).round() as u8,
        ];
        let img = RawImage::filled(4, 4, rgb);
        let t = normalize_image(&img);
        for c in 0..3 {
            let bound = 0.5 / (255.0 * IMAGENET_STD[c]);
            for y in 0..4 {
                for x in 0..4 {
                    let v = t.data()[(c * 4 + y) * 4 + x];
                    assert!(v.abs() <= bound, "channel {c}: {v} vs bound {bound}");
                }
            }
        }
    }

    #[test]
    fn normalize_to_input_rejects_wrong_size() {
        let img = RawImage::filled(10, 10, [0, 0, 0]);
        assert!(matches!(
            normalize_to_input(&img),
            Err(PipelineError::WrongDimensions { .. })
        ));
        let ok = RawImage::filled(224, 224, [0, 0, 0]);
        let t = normalize_to_input(&ok).unwrap();
        assert_eq!(t.shape(), &[1, 3, 224, 224]);
    }

    #[test]
    fn index_counts_and_determinism() {
        let tree = TempTree::new("index");
        build_tree(&tree.root, 2, 8);
        let a = load_dataset_index(&tree.root).unwrap();
        let b = load_dataset_index(&tree.root).unwrap();
        for split in SPLITS {
            assert_eq!(a.split(split).unwrap().counts(), [2, 2, 2]);
            assert_eq!(
                a.split(split).unwrap().samples(),
                b.split(split).unwrap().samples()
            );
        }
        assert!(a.warnings.is_empty());
    }

    #[test]
    fn missing_split_is_fatal() {
        let tree = TempTree::new("missing");
        build_tree(&tree.root, 1, 8);
        fs::remove_dir_all(tree.root.join("val")).unwrap();
        match load_dataset_index(&tree.root) {
            Err(PipelineError::MissingSplit { path }) => {
                assert!(path.ends_with("val"));
            }
            other => panic!("expected missing split, got {other:?}"),
        }
    }

    #[test]
    fn empty_class_dir_is_a_warning() {
        let tree = TempTree::new("warn");
        build_tree(&tree.root, 1, 8);
        let poly = tree.root.join("test").join("2_polythene");
        for entry in fs::read_dir(&poly).unwrap() {
            fs::remove_file(entry.unwrap().path()).unwrap();
        }
        let index = load_dataset_index(&tree.root).unwrap();
        assert_eq!(index.test.counts(), [1, 1, 0]);
        assert!(index
            .warnings
            .iter()
            .any(|w| w.contains("test/2_polythene")));
    }

    #[test]
    fn batch_sizes_with_short_tail() {
        let tree = TempTree::new("batches");
        build_tree(&tree.root, 5, 8); // 15 per split
        let index = load_dataset_index(&tree.root).unwrap();
        let opts = BatchOptions {
            batch_size: 4,
            target_size: (8, 8),
            ..BatchOptions::default()
        };
        let sizes: Vec<usize> = batch_iter(&index, "train", &opts, Rng::new(1))
            .unwrap()
            .map(|b| b.unwrap().labels.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 4, 3]);
    }

    #[test]
    fn same_seed_same_batches() {
        let tree = TempTree::new("seeded");
        build_tree(&tree.root, 4, 8);
        let index = load_dataset_index(&tree.root).unwrap();
        let opts = BatchOptions {
            batch_size: 5,
            target_size: (8, 8),
            augment: true,
            ..BatchOptions::default()
        };
        let a: Vec<Batch> = batch_iter(&index, "train", &opts, Rng::new(9))
            .unwrap()
            .map(|b| b.unwrap())
            .collect();
        let b: Vec<Batch> = batch_iter(&index, "train", &opts, Rng::new(9))
            .unwrap()
            .map(|b| b.unwrap())
            .collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.labels, y.labels);
            assert_eq!(x.x.data(), y.x.data());
        }
    }

    #[test]
    fn unaugmented_batches_are_pure() {
        let tree = TempTree::new("pure");
        build_tree(&tree.root, 3, 8);
        let index = load_dataset_index(&tree.root).unwrap();
        let opts = BatchOptions {
            batch_size: 9,
            target_size: (8, 8),
            augment: false,
            shuffle: false,
            ..BatchOptions::default()
        };
        let a = batch_iter(&index, "val", &opts, Rng::new(1))
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        let b = batch_iter(&index, "val", &opts, Rng::new(2))
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn undecodable_file_is_named() {
        let tree = TempTree::new("undec");
        build_tree(&tree.root, 1, 8);
        let bad = tree.root.join("train").join("0_nonplastic").join("bad.ppm");
        fs::write(&bad, b"not a ppm").unwrap();
        let index = load_dataset_index(&tree.root).unwrap();
        let opts = BatchOptions {
            batch_size: 10,
            target_size: (8, 8),
            ..BatchOptions::default()
        };
        let result: Result<Vec<Batch>, PipelineError> =
            batch_iter(&index, "train", &opts, Rng::new(1)).unwrap().collect();
        match result {
            Err(PipelineError::Undecodable { path, .. }) => {
                assert!(path.ends_with("bad.ppm"));
            }
            other => panic!("expected undecodable error, got {other:?}"),
        }
    }

    #[test]
    fn cycling_batches_reshuffle_each_pass() {
        let tree = TempTree::new("cycle");
        build_tree(&tree.root, 2, 8); // 6 train samples
        let index = load_dataset_index(&tree.root).unwrap();
        let opts = BatchOptions {
            batch_size: 4,
            target_size: (8, 8),
            ..BatchOptions::default()
        };
        let mut stream = CyclingBatches::new(&index, "train", &opts, Rng::new(5)).unwrap();
        let mut seen = 0;
        for _ in 0..6 {
            let b = stream.next_batch().unwrap();
            seen += b.labels.len();
        }
        // 6 batches of (4,2,4,2,...) alternating pass tails
        assert_eq!(seen, 18);
        // empty split is rejected up front
        let empty = TempTree::new("cycle-empty");
        for split in SPLITS {
            for class_dir in CLASS_DIRS {
                fs::create_dir_all(empty.root.join(split).join(class_dir)).unwrap();
            }
        }
        let empty_index = load_dataset_index(&empty.root).unwrap();
        assert!(matches!(
            CyclingBatches::new(&empty_index, "train", &opts, Rng::new(1)),
            Err(PipelineError::EmptySplit { .. })
        ));
    }
}
